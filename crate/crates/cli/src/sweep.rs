use std::fs;
use std::path::Path;

use drdst_core::sim::{run, MetricsRecord};
use drdst_core::SimConfig;
use log::{info, warn};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    /// Partial config; missing fields take their defaults.
    #[serde(default)]
    base: Map<String, Value>,
    #[serde(default)]
    axes: Vec<Axis>,
    /// Defaults to the base config's own seed.
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default = "default_max_runs")]
    max_runs: usize,
}

fn default_max_runs() -> usize {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Axis {
    /// Dotted config path such as `shard_count` or `gsa.generations`.
    path: String,
    values: Vec<Value>,
}

struct Point {
    seed: u64,
    values: Vec<Value>,
}

fn set_path(root: &mut Map<String, Value>, path: &str, value: Value) -> Result<(), String> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| format!("empty axis path `{path}`"))?;
    let mut obj = root;
    for k in keys {
        let slot = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
        obj = slot.as_object_mut().ok_or_else(|| format!("`{k}` in `{path}` is not a section"))?;
    }
    obj.insert(last.to_string(), value);
    Ok(())
}

fn build(spec: &SweepSpec, point: &Point) -> Result<SimConfig, Failure> {
    let mut doc = spec.base.clone();
    for (axis, v) in spec.axes.iter().zip(&point.values) {
        set_path(&mut doc, &axis.path, v.clone()).map_err(Failure::Config)?;
    }
    let mut cfg: SimConfig =
        serde_json::from_value(Value::Object(doc)).map_err(|e| Failure::Config(e.to_string()))?;
    cfg.rng_seed = point.seed;
    Ok(cfg)
}

/// Grid points in axis definition order (first axis slowest), seeds fastest.
fn grid(spec: &SweepSpec, seeds: &[u64]) -> Vec<Point> {
    let mut combos: Vec<Vec<Value>> = vec![Vec::new()];
    for axis in &spec.axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push(v.clone());
                    next
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .flat_map(|values| seeds.iter().map(move |&seed| Point { seed, values: values.clone() }))
        .collect()
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Returns `Ok(false)` when some grid points failed; their rows are kept
/// and marked.
pub fn cmd_sweep(spec_path: &Path, out_dir: &Path, jobs: Option<usize>) -> Result<bool, Failure> {
    let text = fs::read_to_string(spec_path).map_err(|e| Failure::Config(format!("{}: {e}", spec_path.display())))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("sweep spec: {e}")))?;
    for axis in &spec.axes {
        if axis.values.is_empty() {
            return Err(Failure::Config(format!("axis `{}` has no values", axis.path)));
        }
    }
    let seeds = if spec.seeds.is_empty() {
        vec![build(&spec, &Point { seed: 0, values: Vec::new() })?.rng_seed]
    } else {
        spec.seeds.clone()
    };
    let runs = spec.axes.iter().map(|a| a.values.len()).product::<usize>() * seeds.len();
    if runs > spec.max_runs {
        return Err(Failure::Config(format!("{runs} runs exceed max_runs {}", spec.max_runs)));
    }
    let points = grid(&spec, &seeds);
    // A misspelled path or a mistyped value is a spec error, not a failed run.
    for axis_index in 0..spec.axes.len() {
        for v in &spec.axes[axis_index].values {
            let mut values: Vec<Value> = points[0].values.clone();
            values[axis_index] = v.clone();
            build(&spec, &Point { seed: 0, values })?;
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    info!("sweep: {runs} runs on {} workers", pool.current_num_threads());
    let results: Vec<Result<MetricsRecord, String>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let cfg = build(&spec, p).map_err(|f| format!("{f:?}"))?;
                run(&cfg).map(|o| o.metrics).map_err(|e| e.to_string())
            })
            .collect()
    });

    fs::create_dir_all(out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join("sweep.csv");
    let fail = |e: csv::Error| Failure::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(fail)?;
    let mut header = vec!["run_id".to_string(), "seed".to_string()];
    header.extend(spec.axes.iter().map(|a| a.path.clone()));
    header.extend(MetricsRecord::csv_header().into_iter().map(String::from));
    header.extend(["status".to_string(), "error".to_string()]);
    w.write_record(&header).map_err(fail)?;
    let mut failed = 0;
    for (run_id, (p, r)) in points.iter().zip(&results).enumerate() {
        let mut row = vec![run_id.to_string(), p.seed.to_string()];
        row.extend(p.values.iter().map(cell));
        match r {
            Ok(m) => {
                row.extend(m.csv_values());
                row.extend(["ok".to_string(), String::new()]);
            }
            Err(e) => {
                warn!("run {run_id} failed: {e}");
                failed += 1;
                row.extend(MetricsRecord::csv_header().iter().map(|_| String::new()));
                row.extend(["failed".to_string(), e.clone()]);
            }
        }
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
    if failed > 0 {
        eprintln!("drdst: {failed} of {runs} runs failed, see the status column");
    }
    Ok(failed == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> SweepSpec {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn grid_is_axis_major_then_seed() {
        let s = spec(r#"{"axes":[{"path":"shard_count","values":[4,6]},{"path":"ablation","values":["none","no_dag"]}]}"#);
        let g = grid(&s, &[1, 2]);
        let keys: Vec<(String, String, u64)> = g.iter().map(|p| (cell(&p.values[0]), cell(&p.values[1]), p.seed)).collect();
        assert_eq!(keys.len(), 8);
        assert_eq!(keys[0], ("4".into(), "none".into(), 1));
        assert_eq!(keys[1], ("4".into(), "none".into(), 2));
        assert_eq!(keys[2], ("4".into(), "no_dag".into(), 1));
        assert_eq!(keys[7], ("6".into(), "no_dag".into(), 2));
    }

    #[test]
    fn no_axes_is_one_point_per_seed() {
        assert_eq!(grid(&spec("{}"), &[9]).len(), 1);
    }

    #[test]
    fn nested_paths_reach_sections() {
        let s = spec(r#"{"base":{"gsa":{"generations":5}},"axes":[{"path":"gsa.population_size","values":[12]}]}"#);
        let cfg = build(&s, &grid(&s, &[3])[0]).unwrap();
        assert_eq!((cfg.gsa.generations, cfg.gsa.population_size, cfg.rng_seed), (5, 12, 3));
    }

    #[test]
    fn unknown_path_is_a_config_error() {
        let s = spec(r#"{"axes":[{"path":"shards","values":[4]}]}"#);
        assert!(matches!(build(&s, &grid(&s, &[1])[0]), Err(Failure::Config(_))));
    }
}
