//! Exhaustive check that two conflicting cross-shard transactions cannot
//! both reach strong visibility across `q` shards of `u` members with at
//! most `f` Byzantine members each.

use crate::error::{Error, Result};

/// Largest number of schedules [`view_split_check`] will enumerate.
pub const SCHEDULE_LIMIT: u64 = 1_000_000;

/// Smallest visibility set that counts as strong (`2qf + q + 1`) and the
/// implied lower bound on the overlap of two such sets in `qu` members.
pub fn view_split_bounds(q: usize, u: usize, f: usize) -> (usize, i64) {
    let min_visible = 2 * q * f + q + 1;
    (min_visible, 2 * min_visible as i64 - (q * u) as i64)
}

/// Visibility threshold `2qf + q`. It equals two thirds of all members
/// only at `u = 3f + 1`; larger shards make it comparatively weaker.
pub fn view_split_check(q: usize, u: usize, f: usize) -> Result<bool> {
    view_split_check_with_threshold(q, u, f, 2 * q * f + q)
}

/// Same enumeration with visibility meaning `|U| > threshold`.
///
/// Each honest member receives the two transactions in some order (or only
/// one, or neither) and votes YES only on the first it receives. Each
/// Byzantine member picks any subset of the two to vote YES on.
pub fn view_split_check_with_threshold(q: usize, u: usize, f: usize, threshold: usize) -> Result<bool> {
    if q == 0 {
        return Err(Error::Domain("need at least one shard".into()));
    }
    if u < 3 * f + 1 {
        return Err(Error::Domain(format!("u = {u} < 3f + 1 = {}", 3 * f + 1)));
    }
    let honest = q * (u - f);
    let byzantine = q * f;
    let space = 5u64
        .checked_pow(honest as u32)
        .and_then(|h| 4u64.checked_pow(byzantine as u32).and_then(|b| h.checked_mul(b)))
        .filter(|s| *s <= SCHEDULE_LIMIT)
        .ok_or_else(|| Error::TooLarge(format!("5^{honest} * 4^{byzantine} schedules exceed {SCHEDULE_LIMIT}")))?;

    // YES votes (tx1, tx2) an honest member casts under each delivery.
    const HONEST: [(usize, usize); 5] = [(1, 0), (0, 1), (1, 0), (0, 1), (0, 0)];
    const BYZ: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

    for mut code in 0..space {
        let (mut u1, mut u2) = (0, 0);
        for _ in 0..honest {
            let (a, b) = HONEST[(code % 5) as usize];
            code /= 5;
            u1 += a;
            u2 += b;
        }
        for _ in 0..byzantine {
            let (a, b) = BYZ[(code % 4) as usize];
            code /= 4;
            u1 += a;
            u2 += b;
        }
        if u1 > threshold && u2 > threshold {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_for_two_shards() {
        let (min_visible, overlap) = view_split_bounds(2, 4, 1);
        assert_eq!(min_visible, 7);
        assert!(overlap >= 2 * (1 + 1));
    }

    #[test]
    fn safe_cases() {
        assert!(view_split_check(2, 4, 1).unwrap());
        assert!(view_split_check(1, 4, 1).unwrap());
        // The threshold is tight at u = 3f + 1; for f = 0 that is one member.
        assert!(view_split_check(2, 1, 0).unwrap());
        assert!(view_split_check(3, 1, 0).unwrap());
        assert!(view_split_check(1, 7, 2).unwrap());
    }

    #[test]
    fn weak_threshold_is_caught() {
        // Needing only a simple majority lets both sides win.
        assert!(!view_split_check_with_threshold(2, 4, 1, 4).unwrap());
    }

    #[test]
    fn preconditions() {
        assert!(matches!(view_split_check(2, 3, 1), Err(Error::Domain(_))));
        assert!(matches!(view_split_check(2, 10, 3), Err(Error::TooLarge(_))));
    }
}
