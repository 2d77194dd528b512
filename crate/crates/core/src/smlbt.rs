//! Link latencies and per-shard minimum-max-latency broadcast trees.
//!
//! Latency between two RSUs is transmission time plus propagation time.
//! A shard's tree is grown greedily from every candidate root and the root
//! whose finished tree has the smallest worst-case depth latency wins.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{euclidean_distance, CrossLinkTarget, NodeId, Position, ShardId};

/// Members beyond which [`brute_force_tree`] refuses.
pub const BRUTE_FORCE_TREE_LIMIT: usize = 6;

/// Transmission plus propagation latency in seconds. `bits` is converted to
/// megabits to match `rate_mbps`.
pub fn link_latency(bits: f64, rate_mbps: f64, dist_m: f64, v: f64) -> Result<f64> {
    if !(rate_mbps > 0.0) {
        return Err(Error::Domain(format!("link rate {rate_mbps} Mb/s must be > 0")));
    }
    if !(v > 0.0) {
        return Err(Error::Domain(format!("propagation speed {v} must be > 0")));
    }
    if !(dist_m >= 0.0) || !(bits >= 0.0) {
        return Err(Error::Domain("distance and size must be >= 0".into()));
    }
    Ok(bits / 1e6 / rate_mbps + dist_m / v)
}

/// Dense symmetric latency matrix over global node ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyGraph {
    n: usize,
    latency: Vec<f64>,
}

impl LatencyGraph {
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut latency = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Domain(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, v) in row.into_iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Domain(format!("latency[{i}][{j}] = {v}")));
                }
                latency.push(if i == j { 0.0 } else { v });
            }
        }
        Ok(Self { n, latency })
    }

    /// Pairwise latencies for a packet of `bits`; the link rate between two
    /// RSUs is the smaller of their bandwidths.
    pub fn from_positions(positions: &[Position], bandwidth_mbps: &[f64], bits: f64, v: f64) -> Result<Self> {
        let n = positions.len();
        if bandwidth_mbps.len() != n {
            return Err(Error::Domain("one bandwidth per position required".into()));
        }
        let mut latency = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let rate = bandwidth_mbps[a].min(bandwidth_mbps[b]);
                let l = link_latency(bits, rate, euclidean_distance(positions[a], positions[b]), v)?;
                latency[a * n + b] = l;
                latency[b * n + a] = l;
            }
        }
        Ok(Self { n, latency })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn latency(&self, a: NodeId, b: NodeId) -> f64 {
        self.latency[a * self.n + b]
    }

    /// Copy with `c` added to every off-diagonal entry.
    pub fn inflated(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in 0..self.n {
            for b in 0..self.n {
                if a != b {
                    out.latency[a * self.n + b] += c;
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossLink {
    pub from: NodeId,
    pub to: NodeId,
    pub to_shard: ShardId,
    pub latency_s: f64,
}

/// Rooted spanning tree over one shard's members.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastTree {
    members: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    edge_latency: Vec<f64>,
    depth: Vec<f64>,
    cross_links: Vec<CrossLink>,
}

impl BroadcastTree {
    fn empty(members: &[NodeId], root: NodeId) -> Self {
        let index: BTreeMap<NodeId, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let n = members.len();
        Self {
            root: index[&root],
            members: members.to_vec(),
            index,
            parent: vec![None; n],
            children: vec![Vec::new(); n],
            edge_latency: vec![0.0; n],
            depth: vec![0.0; n],
            cross_links: Vec::new(),
        }
    }

    fn attach(&mut self, child: usize, parent: usize, g: &LatencyGraph) {
        let l = g.latency(self.members[parent], self.members[child]);
        self.parent[child] = Some(parent);
        self.children[parent].push(child);
        self.edge_latency[child] = l;
        self.depth[child] = self.depth[parent] + l;
    }

    /// Tree from an explicit parent map (root maps to `None`).
    pub fn from_parents(members: &[NodeId], parents: &BTreeMap<NodeId, Option<NodeId>>, g: &LatencyGraph) -> Result<Self> {
        let roots: Vec<NodeId> = members.iter().copied().filter(|m| parents.get(m) == Some(&None)).collect();
        if roots.len() != 1 {
            return Err(Error::Domain(format!("expected one root, found {}", roots.len())));
        }
        let mut t = Self::empty(members, roots[0]);
        let n = members.len();
        // Attach in BFS order so depths are final when children read them.
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, m) in members.iter().enumerate() {
            match parents.get(m) {
                Some(Some(p)) => {
                    let pi = *t.index.get(p).ok_or(Error::UnknownNode(*p))?;
                    kids[pi].push(i);
                }
                Some(None) => {}
                None => return Err(Error::UnknownNode(*m)),
            }
        }
        let mut queue = std::collections::VecDeque::from([t.root]);
        let mut seen = 1;
        while let Some(x) = queue.pop_front() {
            for &c in &kids[x] {
                t.attach(c, x, g);
                seen += 1;
                queue.push_back(c);
            }
        }
        if seen != n {
            return Err(Error::Domain("parent map is not a spanning tree".into()));
        }
        Ok(t)
    }

    pub fn root(&self) -> NodeId {
        self.members[self.root]
    }

    /// Members in ascending id order.
    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index.contains_key(&node)
    }

    fn local(&self, node: NodeId) -> Result<usize> {
        self.index.get(&node).copied().ok_or(Error::UnknownNode(node))
    }

    pub fn parent(&self, node: NodeId) -> Result<Option<NodeId>> {
        Ok(self.parent[self.local(node)?].map(|p| self.members[p]))
    }

    pub fn children(&self, node: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.children[self.local(node)?].iter().map(|&c| self.members[c]).collect())
    }

    /// Cumulative latency from the root.
    pub fn depth(&self, node: NodeId) -> Result<f64> {
        Ok(self.depth[self.local(node)?])
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.iter().copied().fold(0.0, f64::max)
    }

    /// (parent, child, latency) for every tree edge.
    pub fn edges(&self) -> Vec<(NodeId, NodeId, f64)> {
        (0..self.len())
            .filter_map(|c| self.parent[c].map(|p| (self.members[p], self.members[c], self.edge_latency[c])))
            .collect()
    }

    /// Tree neighbours (parent and children) with edge latencies.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<(NodeId, f64)>> {
        let i = self.local(node)?;
        let mut out = Vec::with_capacity(self.children[i].len() + 1);
        if let Some(p) = self.parent[i] {
            out.push((self.members[p], self.edge_latency[i]));
        }
        for &c in &self.children[i] {
            out.push((self.members[c], self.edge_latency[c]));
        }
        Ok(out)
    }

    pub fn cross_links(&self) -> &[CrossLink] {
        &self.cross_links
    }

    /// Checks spanning, fan-out and depth consistency.
    pub fn validate(&self, g: &LatencyGraph, fanout: usize) -> Result<()> {
        let n = self.len();
        let edges = self.parent.iter().filter(|p| p.is_some()).count();
        if edges + 1 != n || self.parent[self.root].is_some() {
            return Err(Error::Domain(format!("{edges} parent edges for {n} members")));
        }
        for x in 0..n {
            if self.children[x].len() > fanout {
                return Err(Error::Domain(format!("node {} has {} children", self.members[x], self.children[x].len())));
            }
            // Walk to the root; more than n steps means a cycle.
            let mut cur = x;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::Domain("cycle in parent map".into()));
                }
            }
            if cur != self.root {
                return Err(Error::Domain("disconnected member".into()));
            }
            if let Some(p) = self.parent[x] {
                let expect = self.depth[p] + g.latency(self.members[p], self.members[x]);
                if (self.depth[x] - expect).abs() > 1e-12 {
                    return Err(Error::Domain(format!("depth of {} inconsistent", self.members[x])));
                }
            }
        }
        if self.cross_links.len() > fanout {
            return Err(Error::Domain("too many cross-shard links".into()));
        }
        Ok(())
    }
}

/// Greedy growth from one root: repeatedly attach the outside member whose
/// cheapest feasible attachment gives the smallest depth.
fn grow(members: &[NodeId], root: NodeId, g: &LatencyGraph, fanout: usize) -> BroadcastTree {
    let mut t = BroadcastTree::empty(members, root);
    let n = members.len();
    let mut in_tree = vec![false; n];
    in_tree[t.root] = true;
    let mut attached = vec![t.root];
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for m in 0..n {
            if in_tree[m] {
                continue;
            }
            for &p in &attached {
                if t.children[p].len() >= fanout {
                    continue;
                }
                let d = t.depth[p] + g.latency(members[p], members[m]);
                let better = match best {
                    None => true,
                    Some((bd, bm, bp)) => {
                        d < bd || (d == bd && (members[m], members[p]) < (members[bm], members[bp]))
                    }
                };
                if better {
                    best = Some((d, m, p));
                }
            }
        }
        let (_, m, p) = best.expect("a freshly attached leaf always has spare fan-out");
        t.attach(m, p, g);
        in_tree[m] = true;
        attached.push(m);
    }
    t
}

fn sorted_members(members: &[NodeId]) -> Result<Vec<NodeId>> {
    if members.is_empty() {
        return Err(Error::Domain("tree needs at least one member".into()));
    }
    let mut m = members.to_vec();
    m.sort_unstable();
    m.dedup();
    Ok(m)
}

/// Try-all-roots greedy heuristic. Ties on worst depth go to the more
/// stable root, then the lower id. `stability` is indexed by node id.
pub fn build_tree(members: &[NodeId], g: &LatencyGraph, fanout: usize, stability: &[f64]) -> Result<BroadcastTree> {
    let members = sorted_members(members)?;
    if fanout == 0 && members.len() > 1 {
        return Err(Error::Domain("fan-out 0 cannot span two members".into()));
    }
    let mut best: Option<BroadcastTree> = None;
    for &r in &members {
        let t = grow(&members, r, g, fanout);
        let better = match &best {
            None => true,
            Some(b) => {
                let (td, bd) = (t.max_depth(), b.max_depth());
                td < bd || (td == bd && stability[r] > stability[b.root()])
            }
        };
        if better {
            best = Some(t);
        }
    }
    Ok(best.expect("members nonempty"))
}

/// Uniformly random attachment order and parent choice, honoring fan-out.
/// Used as the unoptimized comparison point.
pub fn random_tree<R: Rng + ?Sized>(members: &[NodeId], g: &LatencyGraph, fanout: usize, rng: &mut R) -> Result<BroadcastTree> {
    let members = sorted_members(members)?;
    let n = members.len();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let mut t = BroadcastTree::empty(&members, members[order[0]]);
    let mut attached = vec![order[0]];
    for &m in &order[1..] {
        let open: Vec<usize> = attached.iter().copied().filter(|&p| t.children[p].len() < fanout).collect();
        let &p = open.choose(rng).ok_or_else(|| Error::Domain("fan-out exhausted".into()))?;
        t.attach(m, p, g);
        attached.push(m);
    }
    Ok(t)
}

fn prufer_edges(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).expect("Prufer decoding always has a leaf");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Exact minimum of the worst root-to-member latency over every labelled
/// spanning tree and root, by Prufer enumeration.
pub fn brute_force_tree(members: &[NodeId], g: &LatencyGraph, fanout: usize) -> Result<(BroadcastTree, f64)> {
    let members = sorted_members(members)?;
    let n = members.len();
    if n > BRUTE_FORCE_TREE_LIMIT {
        return Err(Error::TooLarge(format!("{n} members > {BRUTE_FORCE_TREE_LIMIT}")));
    }
    if n == 1 {
        return Ok((BroadcastTree::empty(&members, members[0]), 0.0));
    }
    let trees: Vec<Vec<(usize, usize)>> = if n == 2 {
        vec![vec![(0, 1)]]
    } else {
        let len = n - 2;
        let total = n.pow(len as u32);
        (0..total)
            .map(|mut code| {
                let mut seq = vec![0; len];
                for s in seq.iter_mut().rev() {
                    *s = code % n;
                    code /= n;
                }
                prufer_edges(&seq, n)
            })
            .collect()
    };

    let mut best: Option<(f64, usize, Vec<Option<usize>>)> = None;
    for edges in &trees {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for root in 0..n {
            // Children count is degree minus the parent edge.
            let fits = (0..n).all(|x| adj[x].len() - usize::from(x != root) <= fanout);
            if !fits {
                continue;
            }
            let mut depth = vec![0.0; n];
            let mut parent = vec![None; n];
            let mut stack = vec![root];
            let mut seen = vec![false; n];
            seen[root] = true;
            while let Some(x) = stack.pop() {
                for &y in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        parent[y] = Some(x);
                        depth[y] = depth[x] + g.latency(members[x], members[y]);
                        stack.push(y);
                    }
                }
            }
            let worst = depth.iter().copied().fold(0.0, f64::max);
            if best.as_ref().map_or(true, |(b, _, _)| worst < *b) {
                best = Some((worst, root, parent));
            }
        }
    }
    let (worst, _, parent) = best.ok_or_else(|| Error::Infeasible(format!("no spanning tree with fan-out {fanout}")))?;
    let map: BTreeMap<NodeId, Option<NodeId>> =
        (0..n).map(|i| (members[i], parent[i].map(|p| members[p]))).collect();
    Ok((BroadcastTree::from_parents(&members, &map, g)?, worst))
}

/// Worst tree-path latency from `initiator` to any member. Dissemination
/// runs along tree edges in both directions.
pub fn broadcast_latency(tree: &BroadcastTree, initiator: NodeId) -> Result<f64> {
    let start = tree.local(initiator)?;
    let n = tree.len();
    let mut dist = vec![f64::NAN; n];
    dist[start] = 0.0;
    let mut stack = vec![start];
    while let Some(x) = stack.pop() {
        let mut next: Vec<(usize, f64)> = tree.children[x].iter().map(|&c| (c, tree.edge_latency[c])).collect();
        if let Some(p) = tree.parent[x] {
            next.push((p, tree.edge_latency[x]));
        }
        for (y, l) in next {
            if dist[y].is_nan() {
                dist[y] = dist[x] + l;
                stack.push(y);
            }
        }
    }
    Ok(dist.iter().copied().fold(0.0, f64::max))
}

/// Worst root-to-member latency across all shards.
pub fn network_broadcast_bound(trees: &[BroadcastTree]) -> f64 {
    trees.iter().map(BroadcastTree::max_depth).fold(0.0, f64::max)
}

/// Give each shard root links to up to `fanout` other shards, nearest root
/// first (lower shard index on ties). With `RandomMember` the target inside
/// the chosen shard is drawn uniformly instead of being its root.
pub fn cross_shard_links<R: Rng + ?Sized>(
    trees: &mut [BroadcastTree],
    g: &LatencyGraph,
    fanout: usize,
    target: CrossLinkTarget,
    rng: &mut R,
) {
    let roots: Vec<NodeId> = trees.iter().map(BroadcastTree::root).collect();
    for i in 0..trees.len() {
        let r = roots[i];
        let mut others: Vec<usize> = (0..trees.len()).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| g.latency(r, roots[a]).total_cmp(&g.latency(r, roots[b])).then(a.cmp(&b)));
        others.truncate(fanout);
        let links = others
            .into_iter()
            .map(|j| {
                let to = match target {
                    CrossLinkTarget::Root => roots[j],
                    CrossLinkTarget::RandomMember => *trees[j].members.choose(rng).expect("trees are nonempty"),
                };
                CrossLink {
                    from: r,
                    to,
                    to_shard: j,
                    latency_s: g.latency(r, to),
                }
            })
            .collect();
        trees[i].cross_links = links;
    }
}

/// Drop `node` and reattach its orphaned descendants greedily. Removing the
/// root rebuilds the tree over the remaining members.
pub fn remove_node(
    tree: &BroadcastTree,
    node: NodeId,
    g: &LatencyGraph,
    fanout: usize,
    stability: &[f64],
) -> Result<Option<BroadcastTree>> {
    let x = tree.local(node)?;
    let remaining: Vec<NodeId> = tree.members.iter().copied().filter(|&m| m != node).collect();
    if remaining.is_empty() {
        return Ok(None);
    }
    if x == tree.root {
        let mut t = build_tree(&remaining, g, fanout, stability)?;
        t.cross_links = tree.cross_links.iter().map(|l| CrossLink { from: t.root(), ..*l }).collect();
        return Ok(Some(t));
    }
    // Descendants of x lose their place; everything else keeps its parent.
    let mut orphan = vec![false; tree.len()];
    let mut stack = vec![x];
    while let Some(y) = stack.pop() {
        orphan[y] = true;
        stack.extend(tree.children[y].iter().copied());
    }
    let mut t = BroadcastTree::empty(&remaining, tree.root());
    t.cross_links = tree.cross_links.clone();
    let mut in_tree = vec![false; remaining.len()];
    let mut queue = std::collections::VecDeque::from([tree.root]);
    in_tree[t.root] = true;
    while let Some(y) = queue.pop_front() {
        for &c in &tree.children[y] {
            if !orphan[c] {
                let (pi, ci) = (t.index[&tree.members[y]], t.index[&tree.members[c]]);
                t.attach(ci, pi, g);
                in_tree[ci] = true;
                queue.push_back(c);
            }
        }
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for m in (0..remaining.len()).filter(|&m| !in_tree[m]) {
            for p in (0..remaining.len()).filter(|&p| in_tree[p] && t.children[p].len() < fanout) {
                let d = t.depth[p] + g.latency(remaining[p], remaining[m]);
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, m, p));
                }
            }
        }
        match best {
            Some((_, m, p)) => {
                t.attach(m, p, g);
                in_tree[m] = true;
            }
            None if in_tree.iter().all(|&b| b) => break,
            None => return Err(Error::Infeasible("fan-out leaves no slot for orphans".into())),
        }
    }
    Ok(Some(t))
}

/// One row of the optional per-epoch tree dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEdgeRow {
    pub epoch: usize,
    pub shard: ShardId,
    pub parent: NodeId,
    pub child: NodeId,
    pub edge_latency_s: f64,
    pub is_cross_shard: bool,
}

pub fn tree_edge_rows(epoch: usize, shard: ShardId, tree: &BroadcastTree) -> Vec<TreeEdgeRow> {
    let mut rows: Vec<TreeEdgeRow> = tree
        .edges()
        .into_iter()
        .map(|(parent, child, l)| TreeEdgeRow {
            epoch,
            shard,
            parent,
            child,
            edge_latency_s: l,
            is_cross_shard: false,
        })
        .collect();
    rows.extend(tree.cross_links.iter().map(|l| TreeEdgeRow {
        epoch,
        shard,
        parent: l.from,
        child: l.to,
        edge_latency_s: l.latency_s,
        is_cross_shard: true,
    }));
    rows
}
