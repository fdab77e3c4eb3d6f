//! Exogenous load and PV time series.
//!
//! CSV layout: a `timestamp` column, then `<load>_p,<load>_q` for every load
//! and `<pv>_p` for every PV, where `<load>`/`<pv>` are the column names
//! declared in the network file. Extra columns are ignored. Values are p.u.
//! and rows are consecutive 3-minute steps; the first row is taken to be the
//! start of a day.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::cost::V_MAX;
use crate::grid::NetworkModel;
use crate::powerflow::{self, InjectionProfile, SolverOptions};

pub const STEP_MINUTES: u32 = 3;
pub const STEPS_PER_DAY: usize = (24 * 60 / STEP_MINUTES) as usize;
pub const TRAIN_HORIZON: usize = 240;
pub const EVAL_HORIZON: usize = 480;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is missing column `{0}`")]
    MissingColumn(String),
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteValue { row: usize, column: String },
    #[error("negative power in column `{column}` at row {row}")]
    NegativePower { row: usize, column: String },
    #[error("dataset has {rows} rows, at least {needed} required")]
    DatasetTooShort { rows: usize, needed: usize },
    #[error("synthetic scenario never exceeds {V_MAX} p.u. under zero control")]
    NoOvervoltage,
    #[error("power flow failed while checking the synthetic scenario: {0}")]
    PowerFlow(#[from] powerflow::PowerFlowError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Per-row load and PV data, aligned to a network's load and PV order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub step_minutes: u32,
    pub timestamps: Vec<String>,
    /// `[row][load]`
    pub load_p: Vec<Vec<f64>>,
    pub load_q: Vec<Vec<f64>>,
    /// `[row][pv]`
    pub pv_p: Vec<Vec<f64>>,
}

impl TimeSeriesDataset {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    /// `(day, slot within day)` of a row.
    pub fn calendar(&self, row: usize) -> (usize, usize) {
        let per_day = (24 * 60 / self.step_minutes) as usize;
        (row / per_day, row % per_day)
    }

    pub fn steps_per_day(&self) -> usize {
        (24 * 60 / self.step_minutes) as usize
    }

    /// Largest PV output per PV over the whole series.
    pub fn pv_peak(&self) -> Vec<f64> {
        let n = self.pv_p.first().map_or(0, Vec::len);
        (0..n)
            .map(|k| self.pv_p.iter().map(|r| r[k]).fold(0.0, f64::max))
            .collect()
    }

    /// Largest absolute load power per load, `(p, q)`.
    pub fn load_peak(&self) -> Vec<(f64, f64)> {
        let n = self.load_p.first().map_or(0, Vec::len);
        (0..n)
            .map(|k| {
                let p = self.load_p.iter().map(|r| r[k].abs()).fold(0.0, f64::max);
                let q = self.load_q.iter().map(|r| r[k].abs()).fold(0.0, f64::max);
                (p, q)
            })
            .collect()
    }

    /// Net injection at one row with the given PV reactive outputs.
    pub fn injections(&self, net: &NetworkModel, row: usize, pv_q: &[f64]) -> InjectionProfile {
        let mut inj = InjectionProfile::zeros(net.n_bus());
        for (k, load) in net.loads().iter().enumerate() {
            inj.add(load.bus, -self.load_p[row][k], -self.load_q[row][k]);
        }
        for (k, pv) in net.pvs().iter().enumerate() {
            inj.add(pv.bus, self.pv_p[row][k], pv_q[k]);
        }
        inj
    }

    pub fn load_csv(path: impl AsRef<Path>, net: &NetworkModel) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(file, net)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, net: &NetworkModel) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
        };
        let ts_col = col("timestamp")?;
        let mut load_cols = Vec::new();
        for l in net.loads() {
            load_cols.push((col(&format!("{}_p", l.column))?, col(&format!("{}_q", l.column))?));
        }
        let pv_cols = net
            .pvs()
            .iter()
            .map(|p| col(&format!("{}_p", p.column)))
            .collect::<Result<Vec<_>, _>>()?;

        let mut data = TimeSeriesDataset {
            step_minutes: STEP_MINUTES,
            timestamps: Vec::new(),
            load_p: Vec::new(),
            load_q: Vec::new(),
            pv_p: Vec::new(),
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let value = |c: usize| -> Result<f64, DatasetError> {
                let name = headers.get(c).unwrap_or_default().to_string();
                let x: f64 = rec
                    .get(c)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| DatasetError::NonFiniteValue {
                        row,
                        column: name.clone(),
                    })?;
                if !x.is_finite() {
                    return Err(DatasetError::NonFiniteValue { row, column: name });
                }
                Ok(x)
            };
            let nonneg = |c: usize, x: f64| -> Result<f64, DatasetError> {
                if x < 0.0 {
                    Err(DatasetError::NegativePower {
                        row,
                        column: headers.get(c).unwrap_or_default().to_string(),
                    })
                } else {
                    Ok(x)
                }
            };
            data.timestamps.push(rec.get(ts_col).unwrap_or_default().to_string());
            let mut lp = Vec::with_capacity(load_cols.len());
            let mut lq = Vec::with_capacity(load_cols.len());
            for &(cp, cq) in &load_cols {
                lp.push(nonneg(cp, value(cp)?)?);
                lq.push(value(cq)?);
            }
            let pp = pv_cols
                .iter()
                .map(|&c| value(c).and_then(|x| nonneg(c, x)))
                .collect::<Result<Vec<_>, _>>()?;
            data.load_p.push(lp);
            data.load_q.push(lq);
            data.pv_p.push(pp);
        }
        if data.rows() < EVAL_HORIZON {
            return Err(DatasetError::DatasetTooShort {
                rows: data.rows(),
                needed: EVAL_HORIZON,
            });
        }
        Ok(data)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W, net: &NetworkModel) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        for l in net.loads() {
            header.push(format!("{}_p", l.column));
            header.push(format!("{}_q", l.column));
        }
        for p in net.pvs() {
            header.push(format!("{}_p", p.column));
        }
        wtr.write_record(&header)?;
        for row in 0..self.rows() {
            let mut rec = vec![self.timestamps[row].clone()];
            for k in 0..net.loads().len() {
                rec.push(format!("{:?}", self.load_p[row][k]));
                rec.push(format!("{:?}", self.load_q[row][k]));
            }
            for k in 0..net.pvs().len() {
                rec.push(format!("{:?}", self.pv_p[row][k]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|source| DatasetError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, net: &NetworkModel) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file), net)
    }
}

/// Parameters of the synthetic load/PV generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub days: usize,
    /// Clear-sky PV peak per PV, p.u.
    pub pv_peak: f64,
    /// Daily load maximum per load, p.u.
    pub load_peak: f64,
    /// Night-time base as a fraction of the load maximum.
    pub load_base: f64,
    /// Reactive-to-active ratio of loads.
    pub load_q_ratio: f64,
    /// Std of the per-step multiplicative noise on loads and PV.
    pub noise: f64,
    /// Lowest day-level PV factor (cloudiness), drawn uniformly up to 1.
    pub min_sun: f64,
    /// Check at generation time that zero control produces an overvoltage.
    pub require_overvoltage: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 20,
            pv_peak: 0.5,
            load_peak: 0.12,
            load_base: 0.35,
            load_q_ratio: 0.3,
            noise: 0.05,
            min_sun: 0.75,
            require_overvoltage: true,
        }
    }
}

/// Clear-sky PV shape: zero before 6:00 and after 18:00, peak at noon.
pub fn pv_shape(hour: f64) -> f64 {
    if !(6.0..=18.0).contains(&hour) {
        0.0
    } else {
        (PI * (hour - 6.0) / 12.0).sin().powi(2)
    }
}

/// Two-peak load shape in `[base, ~1]`: morning around 8:00, evening around 19:30.
pub fn load_shape(hour: f64, base: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(hour - c).powi(2) / (2.0 * w * w)).exp();
    let morning = 0.55 * bump(8.0, 1.5);
    let evening = bump(19.5, 2.0);
    base + (1.0 - base) * (morning + evening).min(1.0)
}

/// Generates a deterministic synthetic dataset for `net`.
pub fn synth_dataset(net: &NetworkModel, cfg: &SynthConfig, seed: u64) -> Result<TimeSeriesDataset, DatasetError> {
    let rows = cfg.days * STEPS_PER_DAY;
    if rows < EVAL_HORIZON {
        return Err(DatasetError::DatasetTooShort {
            rows,
            needed: EVAL_HORIZON,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite std");
    let n_load = net.loads().len();
    let n_pv = net.pvs().len();
    let mut data = TimeSeriesDataset {
        step_minutes: STEP_MINUTES,
        timestamps: Vec::with_capacity(rows),
        load_p: Vec::with_capacity(rows),
        load_q: Vec::with_capacity(rows),
        pv_p: Vec::with_capacity(rows),
    };
    for day in 0..cfg.days {
        let sun: f64 = rng.random_range(cfg.min_sun.min(1.0)..=1.0);
        let demand: Vec<f64> = (0..n_load).map(|_| rng.random_range(0.85..=1.15)).collect();
        for slot in 0..STEPS_PER_DAY {
            let minutes = slot as u32 * STEP_MINUTES;
            let hour = minutes as f64 / 60.0;
            data.timestamps
                .push(format!("d{day:04}T{:02}:{:02}", minutes / 60, minutes % 60));
            let shape = load_shape(hour, cfg.load_base);
            let mut lp = Vec::with_capacity(n_load);
            let mut lq = Vec::with_capacity(n_load);
            for d in &demand {
                let p = (cfg.load_peak * shape * d * (1.0 + noise.sample(&mut rng))).max(0.0);
                lp.push(p);
                lq.push(p * cfg.load_q_ratio);
            }
            let clear = pv_shape(hour);
            let pp = (0..n_pv)
                .map(|_| {
                    if clear == 0.0 {
                        0.0
                    } else {
                        (cfg.pv_peak * sun * clear * (1.0 + noise.sample(&mut rng))).max(0.0)
                    }
                })
                .collect();
            data.load_p.push(lp);
            data.load_q.push(lq);
            data.pv_p.push(pp);
        }
    }
    if cfg.require_overvoltage && !has_zero_control_overvoltage(net, &data)? {
        return Err(DatasetError::NoOvervoltage);
    }
    Ok(data)
}

/// Whether any row drives a bus above the upper limit with all PV reactive
/// outputs at zero.
pub fn has_zero_control_overvoltage(net: &NetworkModel, data: &TimeSeriesDataset) -> Result<bool, DatasetError> {
    let opts = SolverOptions::default();
    let zeros = vec![0.0; net.pvs().len()];
    let mut prev = None;
    for row in 0..data.rows() {
        let inj = data.injections(net, row, &zeros);
        let sol = match &prev {
            Some(p) => powerflow::solve_warm(net, &inj, &opts, p)?,
            None => powerflow::solve(net, &inj, &opts)?,
        };
        if sol.v.iter().skip(1).any(|&v| v > V_MAX) {
            return Ok(true);
        }
        prev = Some(sol);
    }
    Ok(false)
}
