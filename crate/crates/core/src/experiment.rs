//! Multi-seed runs, parameter sweeps and their CSV/JSONL output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{apply_override, ExperimentConfig, GraphSource};
use crate::diagnostics::RoundDiagnostics;
use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::federation::{run_training, TrainingResult};
use crate::graph::{build_groups, load_graph, synth_graph, AttributedGraph, GroupAssignment};
use crate::metrics::EvalReport;
use crate::partition::{assemble_clients, client_partition, louvain, Partition};

pub const METRICS_SCHEMA: &str = "boostfgl-metrics-v1";
pub const SWEEP_SCHEMA: &str = "boostfgl-sweep-v1";
pub const DIAGNOSTICS_SCHEMA: &str = "boostfgl-diagnostics-v1";

/// The graph and its evaluation groups; shared by every seed.
pub struct Prepared {
    pub graph: AttributedGraph,
    pub groups: GroupAssignment,
}

pub fn load_source(source: &GraphSource) -> Result<AttributedGraph> {
    match source {
        GraphSource::Path(dir) => load_graph(dir),
        GraphSource::Synth(s) => synth_graph(s),
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let graph = load_source(&config.graph)?;
    let groups = build_groups(&graph, config.q, config.tau_h)?;
    Ok(Prepared { graph, groups })
}

/// Client partition for one seed: Louvain communities merged or split into
/// `clients` parts.
pub fn partition_for_seed(
    config: &ExperimentConfig,
    graph: &AttributedGraph,
    seed: u64,
) -> Result<Partition> {
    let communities = louvain(graph, seed);
    let clients = assemble_clients(graph, &communities, config.clients, seed)?;
    Ok(client_partition(graph.num_nodes(), &clients))
}

pub struct SeedRun {
    pub seed: u64,
    pub partition: Partition,
    pub result: TrainingResult,
}

pub fn run_seed(config: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<SeedRun> {
    let communities = louvain(&prepared.graph, seed);
    let clients = assemble_clients(&prepared.graph, &communities, config.clients, seed)?;
    let partition = client_partition(prepared.graph.num_nodes(), &clients);
    let result = run_training(
        &prepared.graph,
        &prepared.groups,
        clients,
        &config.train_config(seed),
    )?;
    Ok(SeedRun {
        seed,
        partition,
        result,
    })
}

/// Runs every configured seed (concurrently under parallel scheduling).
pub fn run_all(config: &ExperimentConfig, prepared: &Prepared) -> Result<Vec<SeedRun>> {
    map_range(config.scheduling, config.seeds.len(), |i| {
        run_seed(config, prepared, config.seeds[i])
    })
    .into_iter()
    .collect()
}

fn csv_value(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v}"),
        None => "null".to_string(),
    }
}

const METRIC_COLUMNS: &str = "accuracy,overall_f1,hete_f1,hete_min_f1";

fn metric_values(r: &EvalReport) -> [Option<f64>; 4] {
    [r.accuracy, r.overall_f1, r.hete_f1, r.hete_min_f1]
}

/// Mean and sample standard deviation; `None` if any value is undefined.
pub fn mean_std(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let xs: Option<Vec<f64>> = values.iter().copied().collect();
    let xs = xs?;
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// `metrics.csv` body: a schema comment, a header, one row per seed and
/// round, and a final `mean±std` row over the seeds' last rounds.
pub fn metrics_csv(runs: &[SeedRun]) -> String {
    let mut out = format!("# schema: {METRICS_SCHEMA}\nseed,round,{METRIC_COLUMNS}\n");
    for run in runs {
        out.push_str(&seed_metrics_rows(run.seed, &run.result));
    }
    if let Some(last_round) = runs
        .first()
        .and_then(|r| r.result.history.last())
        .map(|h| h.round)
    {
        let finals: Vec<[Option<f64>; 4]> = runs
            .iter()
            .filter_map(|r| r.result.history.last().map(|h| metric_values(&h.report)))
            .collect();
        let _ = write!(out, "mean±std,{last_round}");
        for m in 0..4 {
            let column: Vec<Option<f64>> = finals.iter().map(|f| f[m]).collect();
            match mean_std(&column) {
                Some((mean, std)) => {
                    let _ = write!(out, ",{mean:.6}±{std:.6}");
                }
                None => out.push_str(",null"),
            }
        }
        out.push('\n');
    }
    out
}

fn seed_metrics_rows(seed: u64, result: &TrainingResult) -> String {
    let mut out = String::new();
    for rec in &result.history {
        let _ = write!(out, "{seed},{}", rec.round);
        for v in metric_values(&rec.report) {
            let _ = write!(out, ",{}", csv_value(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct DiagnosticsLine<'a> {
    schema: &'static str,
    seed: u64,
    #[serde(flatten)]
    diagnostics: &'a RoundDiagnostics,
}

/// One JSON object per seed and round.
pub fn diagnostics_jsonl(runs: &[SeedRun]) -> String {
    runs.iter()
        .map(|r| seed_diagnostics_lines(r.seed, &r.result))
        .collect()
}

fn seed_diagnostics_lines(seed: u64, result: &TrainingResult) -> String {
    let mut out = String::new();
    for d in &result.diagnostics {
        let line = DiagnosticsLine {
            schema: DIAGNOSTICS_SCHEMA,
            seed,
            diagnostics: d,
        };
        out.push_str(&serde_json::to_string(&line).expect("diagnostics serialize"));
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the resolved config, pooled outputs and per-seed files.
pub fn write_outputs(config: &ExperimentConfig, runs: &[SeedRun], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let resolved = serde_json::to_string_pretty(&config.to_value()).expect("config serializes");
    write(&dir.join("config.resolved.json"), resolved + "\n")?;
    write(&dir.join("metrics.csv"), metrics_csv(runs))?;
    write(&dir.join("diagnostics.jsonl"), diagnostics_jsonl(runs))?;
    for run in runs {
        let sub = dir.join(format!("seed_{}", run.seed));
        create_dir(&sub)?;
        let header = format!("# schema: {METRICS_SCHEMA}\nseed,round,{METRIC_COLUMNS}\n");
        write(
            &sub.join("metrics.csv"),
            header + &seed_metrics_rows(run.seed, &run.result),
        )?;
        write(
            &sub.join("diagnostics.jsonl"),
            seed_diagnostics_lines(run.seed, &run.result),
        )?;
        write(
            &sub.join("final.ckpt"),
            run.result.params.to_checkpoint_bytes(),
        )?;
        run.partition.save_tsv(&sub.join("partition.tsv"))?;
    }
    Ok(())
}

/// Runs the experiment and writes everything to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    let prepared = prepare(config)?;
    let runs = run_all(config, &prepared)?;
    write_outputs(config, &runs, &config.output_dir)?;
    Ok(runs)
}

/// Parameter grid: dotted config paths and the values each takes.
#[derive(Clone, Debug, Default, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: Vec<SweepAxis>,
    /// Largest number of grid cells accepted.
    pub cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<Value>,
}

pub const DEFAULT_SWEEP_CAP: usize = 256;

impl SweepSpec {
    pub fn num_cells(&self) -> usize {
        self.grid.iter().map(|a| a.values.len()).product()
    }

    /// Override lists for every cell, last axis varying fastest.
    pub fn cells(&self) -> Vec<Vec<(String, Value)>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.grid {
            let mut next = Vec::with_capacity(cells.len() * axis.values.len());
            for cell in &cells {
                for v in &axis.values {
                    let mut c: Vec<(String, Value)> = cell.clone();
                    c.push((axis.key.clone(), v.clone()));
                    next.push(c);
                }
            }
            cells = next;
        }
        cells
    }
}

/// Runs every grid cell for every seed and returns the `sweep.csv` body.
pub fn run_sweep(config: &ExperimentConfig, spec: &SweepSpec) -> Result<String> {
    let cap = spec.cap.unwrap_or(DEFAULT_SWEEP_CAP);
    let cells = spec.num_cells();
    if cells > cap {
        return Err(Error::Config(format!(
            "sweep grid has {cells} cells, more than the cap of {cap}"
        )));
    }
    let mut out = format!("# schema: {SWEEP_SCHEMA}\ncell");
    for axis in &spec.grid {
        let _ = write!(out, ",{}", axis.key);
    }
    let _ = writeln!(out, ",seed,round,{METRIC_COLUMNS}");
    let base = config.to_value();
    let mut cache: Option<(GraphSource, f64, f64, Prepared)> = None;
    for (index, cell) in spec.cells().into_iter().enumerate() {
        let mut value = base.clone();
        for (key, v) in &cell {
            apply_override(&mut value, &format!("{key}={v}"))?;
        }
        let cell_config = ExperimentConfig::from_value(value)?;
        let reuse = matches!(&cache, Some((g, q, t, _)) if *g == cell_config.graph && *q == cell_config.q && *t == cell_config.tau_h);
        if !reuse {
            let prepared = prepare(&cell_config)?;
            cache = Some((
                cell_config.graph.clone(),
                cell_config.q,
                cell_config.tau_h,
                prepared,
            ));
        }
        let prepared = &cache.as_ref().expect("prepared above").3;
        for run in run_all(&cell_config, prepared)? {
            let last = run.result.history.last().expect("at least one round");
            let _ = write!(out, "{index}");
            for (_, v) in &cell {
                let _ = write!(out, ",{v}");
            }
            let _ = write!(out, ",{},{}", run.seed, last.round);
            for v in metric_values(&last.report) {
                let _ = write!(out, ",{}", csv_value(v));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[Some(1.0), Some(3.0)]), Some((2.0, 2f64.sqrt())));
        assert_eq!(mean_std(&[Some(1.0)]), Some((1.0, 0.0)));
        assert_eq!(mean_std(&[Some(1.0), None]), None);
    }

    #[test]
    fn sweep_cells_are_cartesian() {
        let spec = SweepSpec {
            grid: vec![
                SweepAxis {
                    key: "a".into(),
                    values: vec![0.into(), 1.into()],
                },
                SweepAxis {
                    key: "b".into(),
                    values: vec!["x".into(), "y".into(), "z".into()],
                },
            ],
            cap: None,
        };
        assert_eq!(spec.num_cells(), 6);
        let cells = spec.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(
            cells[1],
            vec![("a".into(), Value::from(0)), ("b".into(), Value::from("y"))]
        );
    }
}
