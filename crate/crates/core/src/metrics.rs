//! Per-episode evaluation metrics.
//!
//! All voltage-based metrics run over monitored (non-slack) buses only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::cost::{count_out_of_range, q_loss, V_MAX, V_MIN};
use crate::env::Transition;
use crate::grid::NetworkModel;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("episode trace has no steps")]
    EmptyTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Monitored bus voltages.
    pub v: Vec<f64>,
    /// Reactive output per agent.
    pub q_pv: Vec<f64>,
    /// `|I|^2` per branch.
    pub branch_current_sq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn push(&mut self, step: StepRecord) {
        self.steps.push(step);
    }

    pub fn push_transition(&mut self, tr: &Transition) {
        self.steps.push(StepRecord {
            v: tr.next_grid.monitored_v().to_vec(),
            q_pv: tr.pv_q.clone(),
            branch_current_sq: tr.branch_current_sq.clone(),
        });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn mean_over_steps(&self, f: impl Fn(&StepRecord) -> f64) -> Result<f64, MetricsError> {
        if self.steps.is_empty() {
            return Err(MetricsError::EmptyTrace);
        }
        Ok(self.steps.iter().map(f).sum::<f64>() / self.steps.len() as f64)
    }
}

/// One CSV row: `cr,pvooc,vdd,vrd,ql,pl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cr: f64,
    pub pvooc: f64,
    pub vdd: f64,
    pub vrd: f64,
    pub ql: f64,
    pub pl: f64,
}

impl MetricsRecord {
    pub const COLUMNS: [&'static str; 6] = ["cr", "pvooc", "vdd", "vrd", "ql", "pl"];

    pub fn values(&self) -> [f64; 6] {
        [self.cr, self.pvooc, self.vdd, self.vrd, self.ql, self.pl]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        MetricsRecord {
            cr: v[0],
            pvooc: v[1],
            vdd: v[2],
            vrd: v[3],
            ql: v[4],
            pl: v[5],
        }
    }

    /// Element-wise mean of several records.
    pub fn mean(records: &[MetricsRecord]) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let mut acc = [0.0; 6];
        for r in records {
            for (a, x) in acc.iter_mut().zip(r.values()) {
                *a += x;
            }
        }
        Some(Self::from_values(acc.map(|a| a / records.len() as f64)))
    }
}

/// Share of steps with every monitored bus inside the limits.
pub fn controllable_ratio(trace: &EpisodeTrace) -> Result<f64, MetricsError> {
    trace.mean_over_steps(|s| if count_out_of_range(&s.v) == 0 { 1.0 } else { 0.0 })
}

/// Mean share of out-of-range buses per step.
pub fn pvooc(trace: &EpisodeTrace) -> Result<f64, MetricsError> {
    trace.mean_over_steps(|s| {
        if s.v.is_empty() {
            0.0
        } else {
            count_out_of_range(&s.v) as f64 / s.v.len() as f64
        }
    })
}

/// Mean over steps of the worst under-voltage depth below 0.95.
pub fn vdd(trace: &EpisodeTrace) -> Result<f64, MetricsError> {
    trace.mean_over_steps(|s| s.v.iter().map(|&v| if v < V_MIN { V_MIN - v } else { 0.0 }).fold(0.0, f64::max))
}

/// Mean over steps of the worst over-voltage height above 1.05.
pub fn vrd(trace: &EpisodeTrace) -> Result<f64, MetricsError> {
    trace.mean_over_steps(|s| s.v.iter().map(|&v| if v > V_MAX { v - V_MAX } else { 0.0 }).fold(0.0, f64::max))
}

/// Mean per-step, per-agent absolute reactive output.
pub fn q_loss_metric(trace: &EpisodeTrace) -> Result<f64, MetricsError> {
    trace.mean_over_steps(|s| q_loss(&s.q_pv))
}

/// Mean per-step total line loss `sum r |I|^2`.
pub fn power_loss(trace: &EpisodeTrace, net: &NetworkModel) -> Result<f64, MetricsError> {
    trace.mean_over_steps(|s| {
        net.branches()
            .iter()
            .zip(&s.branch_current_sq)
            .map(|(b, l)| b.r * l)
            .sum()
    })
}

pub fn evaluate(trace: &EpisodeTrace, net: &NetworkModel) -> Result<MetricsRecord, MetricsError> {
    Ok(MetricsRecord {
        cr: controllable_ratio(trace)?,
        pvooc: pvooc(trace)?,
        vdd: vdd(trace)?,
        vrd: vrd(trace)?,
        ql: q_loss_metric(trace)?,
        pl: power_loss(trace, net)?,
    })
}
