//! Experiment orchestration: run directories, summaries and learning curves.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::env::dataset::{synth_dataset, DatasetError, TimeSeriesDataset};
use crate::env::Env;
use crate::grid::{GridError, NetworkModel};
use crate::learner::Algorithm;
use crate::metrics::MetricsRecord;
use crate::train::{
    eval_starts, evaluate_reference, reward_mode, train, write_eval_rows, EvalRow, ReferencePolicy, RunSpec,
    TrainError,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("no completed runs under {}", .0.display())]
    NoRunsFound(PathBuf),
    #[error("{}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },
    #[error("{}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |e| RunnerError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Loads the network and dataset a config refers to.
pub fn load_inputs(cfg: &RunConfig) -> Result<(Arc<NetworkModel>, Arc<TimeSeriesDataset>), RunnerError> {
    if !cfg.network.is_file() {
        return Err(RunnerError::MissingFile(cfg.network.clone()));
    }
    let net = NetworkModel::load(&cfg.network)?;
    let data = match (&cfg.dataset, &cfg.synthetic) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(RunnerError::MissingFile(path.clone()));
            }
            TimeSeriesDataset::load_csv(path, &net)?
        }
        (None, Some(src)) => synth_dataset(&net, &src.shape, src.seed)?,
        (None, None) => unreachable!("validated config names a data source"),
    };
    Ok((Arc::new(net), Arc::new(data)))
}

/// One (algorithm, seed) cell of a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub run_id: String,
}

pub fn plan(cfg: &RunConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &seed in &cfg.seeds {
            cells.push(Cell {
                algorithm,
                seed,
                run_id: cfg.run_id(algorithm, seed),
            });
        }
    }
    cells
}

/// Contents of `run.toml` in every run directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub dir: PathBuf,
    pub result: Result<(), String>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, RunnerError> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Trains one cell and writes its artifacts under `out_dir/<run-id>/`.
pub fn run_cell(
    cfg: &RunConfig,
    cell: &Cell,
    net: &Arc<NetworkModel>,
    data: &Arc<TimeSeriesDataset>,
    out_dir: &Path,
) -> Result<PathBuf, RunnerError> {
    let dir = out_dir.join(&cell.run_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let record = RunRecord {
        algorithm: cell.algorithm,
        seed: cell.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
    };
    let toml = toml::to_string(&record).expect("run record serializes");
    let path = dir.join("run.toml");
    fs::write(&path, toml).map_err(io_err(&path))?;
    for stale in ["error.txt", "metrics.csv", "traces.csv", "reference.csv", "checkpoint.bin"] {
        let _ = fs::remove_file(dir.join(stale));
    }

    let spec = RunSpec {
        algorithm: cell.algorithm,
        ablation: cfg.ablation,
        env: &cfg.env,
        train: &cfg.train,
        network: net.clone(),
        dataset: data.clone(),
        seed: cell.seed,
    };
    let artifacts = match train(&spec) {
        Ok(a) => a,
        Err(e) => {
            let path = dir.join("error.txt");
            fs::write(&path, format!("{e}\n")).map_err(io_err(&path))?;
            return Err(e.into());
        }
    };
    let path = dir.join("metrics.csv");
    artifacts.write_metrics_csv(create(&path)?).map_err(io_err(&path))?;
    let path = dir.join("traces.csv");
    artifacts.write_traces_csv(create(&path)?).map_err(io_err(&path))?;
    let path = dir.join("checkpoint.bin");
    artifacts.checkpoint.save(&path).map_err(|e| RunnerError::Io {
        path: path.clone(),
        msg: e.to_string(),
    })?;

    // Reference policies on the final round's evaluation days.
    let last_round = artifacts.metrics.iter().map(|r| r.eval_round).max().unwrap_or(0);
    let mode = reward_mode(cell.algorithm, cfg.train.beta);
    let mut env = Env::new(net.clone(), data.clone(), cfg.env.clone(), mode).map_err(TrainError::from)?;
    let starts = eval_starts(&env, cell.seed, last_round, cfg.train.eval_episodes).map_err(TrainError::from)?;
    let path = dir.join("reference.csv");
    let mut w = create(&path)?;
    writeln!(w, "policy,eval_episode,start_row,{}", MetricsRecord::COLUMNS.join(",")).map_err(io_err(&path))?;
    for policy in [ReferencePolicy::Zero, ReferencePolicy::Random] {
        let recs = evaluate_reference(&mut env, policy, &starts, cell.seed)?;
        for (k, (s, m)) in starts.iter().zip(recs).enumerate() {
            let vals: Vec<String> = m.values().iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{k},{s},{}", policy.name(), vals.join(",")).map_err(io_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(dir)
}

/// Runs every cell, at most `parallel` at a time, then writes the summary.
/// A failing cell is reported in its outcome and does not stop the others.
pub fn run_all(cfg: &RunConfig, out_dir: &Path, parallel: usize) -> Result<Vec<CellOutcome>, RunnerError> {
    let (net, data) = load_inputs(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let cells = plan(cfg);
    let mut outcomes = Vec::with_capacity(cells.len());
    for chunk in cells.chunks(parallel.max(1)) {
        let results: Vec<Result<PathBuf, RunnerError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|cell| s.spawn(|| run_cell(cfg, cell, &net, &data, out_dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        });
        for (cell, res) in chunk.iter().zip(results) {
            let dir = out_dir.join(&cell.run_id);
            if let Err(e) = &res {
                log::error!("run {} failed: {e}", cell.run_id);
            }
            outcomes.push(CellOutcome {
                cell: cell.clone(),
                dir,
                result: res.map(|_| ()).map_err(|e| e.to_string()),
            });
        }
    }
    if outcomes.iter().any(|o| o.result.is_ok()) {
        report(out_dir)?;
    }
    Ok(outcomes)
}

/// A completed run read back from disk.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub metrics: Vec<EvalRow>,
    /// `(policy, eval rows)` from `reference.csv`, when present.
    pub reference: Vec<(String, MetricsRecord)>,
}

fn read_metric_values(rec: &csv::StringRecord, headers: &csv::StringRecord, path: &Path) -> Result<MetricsRecord, RunnerError> {
    let mut vals = [0.0; 6];
    for (slot, name) in vals.iter_mut().zip(MetricsRecord::COLUMNS) {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| RunnerError::Malformed {
            path: path.to_path_buf(),
            msg: format!("missing column `{name}`"),
        })?;
        *slot = rec.get(idx).unwrap_or("").parse().map_err(|_| RunnerError::Malformed {
            path: path.to_path_buf(),
            msg: format!("bad value in column `{name}`"),
        })?;
    }
    Ok(MetricsRecord::from_values(vals))
}

fn read_csv_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), RunnerError> {
    let malformed = |e: csv::Error| RunnerError::Malformed {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut rd = csv::Reader::from_path(path).map_err(malformed)?;
    let headers = rd.headers().map_err(malformed)?.clone();
    let rows = rd.records().collect::<Result<Vec<_>, _>>().map_err(malformed)?;
    Ok((headers, rows))
}

fn read_metrics_csv(path: &Path) -> Result<Vec<EvalRow>, RunnerError> {
    let (headers, rows) = read_csv_rows(path)?;
    let int = |rec: &csv::StringRecord, i: usize| -> Result<usize, RunnerError> {
        rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| RunnerError::Malformed {
            path: path.to_path_buf(),
            msg: "bad index column".into(),
        })
    };
    rows.iter()
        .map(|rec| {
            Ok(EvalRow {
                eval_round: int(rec, 0)?,
                train_episodes: int(rec, 1)?,
                eval_episode: int(rec, 2)?,
                start_row: int(rec, 3)?,
                metrics: read_metric_values(rec, &headers, path)?,
            })
        })
        .collect()
}

/// Loads every completed run directory directly under `out_dir`.
pub fn load_runs(out_dir: &Path) -> Result<Vec<StoredRun>, RunnerError> {
    let entries = match fs::read_dir(out_dir) {
        Ok(e) => e,
        Err(_) => return Err(RunnerError::NoRunsFound(out_dir.to_path_buf())),
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("run.toml").is_file() && p.join("metrics.csv").is_file())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    for dir in dirs {
        let path = dir.join("run.toml");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let record: RunRecord = toml::from_str(&text).map_err(|e| RunnerError::Malformed {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        let metrics = read_metrics_csv(&dir.join("metrics.csv"))?;
        let ref_path = dir.join("reference.csv");
        let reference = if ref_path.is_file() {
            let (headers, rows) = read_csv_rows(&ref_path)?;
            rows.iter()
                .map(|r| Ok((r.get(0).unwrap_or("").to_string(), read_metric_values(r, &headers, &ref_path)?)))
                .collect::<Result<Vec<_>, RunnerError>>()?
        } else {
            Vec::new()
        };
        runs.push(StoredRun {
            dir,
            record,
            metrics,
            reference,
        });
    }
    if runs.is_empty() {
        return Err(RunnerError::NoRunsFound(out_dir.to_path_buf()));
    }
    Ok(runs)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-run mean over the evaluation episodes of one round.
fn round_mean(run: &StoredRun, round: usize) -> Option<(usize, MetricsRecord)> {
    let rows: Vec<&EvalRow> = run.metrics.iter().filter(|r| r.eval_round == round).collect();
    let recs: Vec<MetricsRecord> = rows.iter().map(|r| r.metrics).collect();
    MetricsRecord::mean(&recs).map(|m| (rows[0].train_episodes, m))
}

/// Writes `summary.csv` and `learning_curves.csv` from the runs in
/// `out_dir` and returns the summary rows.
pub fn report(out_dir: &Path) -> Result<Vec<SummaryRow>, RunnerError> {
    let runs = load_runs(out_dir)?;

    // Final-round per-run means, grouped by algorithm; reference policies are
    // grouped by seed first so that identical evaluations are counted once.
    let mut finals: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    let mut refs: BTreeMap<(String, u64), MetricsRecord> = BTreeMap::new();
    let mut curves: BTreeMap<(String, usize), (usize, Vec<MetricsRecord>)> = BTreeMap::new();
    for run in &runs {
        let name = run.record.algorithm.name().to_string();
        let last = run.metrics.iter().map(|r| r.eval_round).max();
        if let Some((_, m)) = last.and_then(|l| round_mean(run, l)) {
            finals.entry(name.clone()).or_default().push(m);
        }
        let rounds: std::collections::BTreeSet<usize> = run.metrics.iter().map(|r| r.eval_round).collect();
        for round in rounds {
            if let Some((episodes, m)) = round_mean(run, round) {
                let e = curves.entry((name.clone(), round)).or_insert((episodes, Vec::new()));
                e.1.push(m);
            }
        }
        let mut by_policy: BTreeMap<&str, Vec<MetricsRecord>> = BTreeMap::new();
        for (p, m) in &run.reference {
            by_policy.entry(p.as_str()).or_default().push(*m);
        }
        for (p, ms) in by_policy {
            if let Some(m) = MetricsRecord::mean(&ms) {
                refs.entry((format!("{p}_policy"), run.record.seed)).or_insert(m);
            }
        }
    }
    for ((name, _), m) in refs {
        finals.entry(name).or_default().push(m);
    }

    let mut summary = Vec::new();
    let path = out_dir.join("summary.csv");
    let mut w = create(&path)?;
    writeln!(w, "algorithm,metric,median,std,runs").map_err(io_err(&path))?;
    for (name, recs) in &finals {
        for (k, metric) in MetricsRecord::COLUMNS.iter().enumerate() {
            let xs: Vec<f64> = recs.iter().map(|r| r.values()[k]).collect();
            let row = SummaryRow {
                algorithm: name.clone(),
                metric: metric.to_string(),
                median: median(&xs),
                std: std_dev(&xs),
                runs: xs.len(),
            };
            writeln!(w, "{},{},{},{},{}", row.algorithm, row.metric, row.median, row.std, row.runs)
                .map_err(io_err(&path))?;
            summary.push(row);
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = out_dir.join("learning_curves.csv");
    let mut w = create(&path)?;
    writeln!(w, "algorithm,eval_round,train_episodes,metric,median,std,runs").map_err(io_err(&path))?;
    for ((name, round), (episodes, recs)) in &curves {
        for (k, metric) in MetricsRecord::COLUMNS.iter().enumerate() {
            let xs: Vec<f64> = recs.iter().map(|r| r.values()[k]).collect();
            writeln!(
                w,
                "{name},{round},{episodes},{metric},{},{},{}",
                median(&xs),
                std_dev(&xs),
                xs.len()
            )
            .map_err(io_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub metric: String,
    pub median: f64,
    pub std: f64,
    pub runs: usize,
}

/// Writes evaluation rows in the `metrics.csv` layout; used by tests and
/// tools that fabricate run directories.
pub fn write_metrics_file(path: &Path, rows: &[EvalRow]) -> Result<(), RunnerError> {
    write_eval_rows(create(path)?, rows).map_err(io_err(path))
}
