//! The voltage-control game: one agent per PV inverter.
//!
//! Each step reads the next dataset row, turns the joint action into PV
//! reactive setpoints, solves the power flow and scores the result.
//!
//! Observation layout for an agent in zone `z` (buses ascending within
//! each group):
//!
//! 1. `p_load, q_load` for every load bus in `z`
//! 2. `p_pv, q_pv` for every PV bus in `z`
//! 3. `v, theta` for every bus in `z`
//!
//! Global state layout: `v[1..n]`, `theta[1..n]`, then `p_load, q_load` per
//! load and `p_pv, q_pv` per PV, in network order.

pub mod cost;
pub mod dataset;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{NetworkModel, ZoneId};
use crate::powerflow::{self, PowerFlowError, PowerFlowSolution, SolverOptions};

pub use cost::CostFunction;
pub use dataset::{SynthConfig, TimeSeriesDataset};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("dataset has {rows} rows, an episode of {horizon} steps needs more")]
    DatasetTooShort { rows: usize, horizon: usize },
    #[error("PV {pv} has no rating and the dataset has no output to derive one")]
    NoRating { pv: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("step called outside an episode")]
    NotRunning,
    #[error("initial power flow failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeKind {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardMode {
    /// `-mean |q_pv|`
    QLoss,
    /// `-mean |v - 1| - beta * mean |q_pv|`
    Barrier { beta: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub cost_function: CostFunction,
    /// Limit on the normalized cost.
    pub cost_limit: f64,
    pub gamma: f64,
    /// Raw v-loss mapped to the top of the normalized range.
    pub vloss_cap: f64,
    pub train_horizon: usize,
    pub eval_horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            cost_function: CostFunction::Step,
            cost_limit: -0.5,
            gamma: 0.99,
            vloss_cap: 0.2,
            train_horizon: dataset::TRAIN_HORIZON,
            eval_horizon: dataset::EVAL_HORIZON,
        }
    }
}

impl EnvConfig {
    pub fn raw_cost_max(&self) -> f64 {
        self.cost_function.raw_max(self.vloss_cap)
    }
}

/// Physical state at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Dataset row.
    pub t: usize,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub pv_p: Vec<f64>,
    pub pv_q: Vec<f64>,
}

impl GridState {
    /// Flattened global state vector (see module docs for the layout).
    pub fn to_vector(&self) -> Vec<f64> {
        let mut s = Vec::new();
        s.extend_from_slice(&self.v[1..]);
        s.extend_from_slice(&self.theta[1..]);
        for (p, q) in self.load_p.iter().zip(&self.load_q) {
            s.push(*p);
            s.push(*q);
        }
        for (p, q) in self.pv_p.iter().zip(&self.pv_q) {
            s.push(*p);
            s.push(*q);
        }
        s
    }

    /// Voltages of the monitored (non-slack) buses.
    pub fn monitored_v(&self) -> &[f64] {
        &self.v[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub iterations: usize,
    pub c_percent: f64,
    pub solver_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost_raw: f64,
    pub cost_norm: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    /// Episode over (horizon reached or solver failure).
    pub done: bool,
    /// Absorbing end: bootstrapping must stop. Only set on solver failure.
    pub terminal: bool,
    pub info: StepInfo,
    pub next_grid: GridState,
    pub pv_q: Vec<f64>,
    pub branch_current_sq: Vec<f64>,
}

/// Center and scale of one input feature; models see `(x - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale {
    pub center: f64,
    pub scale: f64,
}

impl FeatureScale {
    pub fn apply(self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }
}

pub fn apply_scales(x: &[f64], scales: &[FeatureScale]) -> Vec<f64> {
    x.iter().zip(scales).map(|(&v, s)| s.apply(v)).collect()
}

const V_SCALE: FeatureScale = FeatureScale {
    center: 1.0,
    scale: 0.05,
};
const THETA_SCALE: FeatureScale = FeatureScale {
    center: 0.0,
    scale: 0.05,
};

fn power_scale(peak: f64) -> FeatureScale {
    FeatureScale {
        center: 0.0,
        scale: if peak > 0.0 { peak } else { 1.0 },
    }
}

struct Episode {
    start: usize,
    steps: usize,
    horizon: usize,
    state: GridState,
    solution: PowerFlowSolution,
}

pub struct Env {
    net: Arc<NetworkModel>,
    data: Arc<TimeSeriesDataset>,
    cfg: EnvConfig,
    reward_mode: RewardMode,
    solver: SolverOptions,
    s_rating: Vec<f64>,
    agent_zone: Vec<ZoneId>,
    zone_loads: Vec<Vec<usize>>,
    zone_pvs: Vec<Vec<usize>>,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(
        net: Arc<NetworkModel>,
        data: Arc<TimeSeriesDataset>,
        cfg: EnvConfig,
        reward_mode: RewardMode,
    ) -> Result<Self, EnvError> {
        let peaks = data.pv_peak();
        let s_rating = net
            .pvs()
            .iter()
            .enumerate()
            .map(|(k, pv)| match pv.s_rating {
                Some(s) => Ok(s),
                None if peaks.get(k).copied().unwrap_or(0.0) > 0.0 => Ok(1.2 * peaks[k]),
                None => Err(EnvError::NoRating { pv: k }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let agent_zone = net
            .pvs()
            .iter()
            .map(|pv| net.zone_of(pv.bus).expect("validated: non-slack buses have zones"))
            .collect();
        let zone_loads = (0..net.zones().len())
            .map(|z| {
                net.zones()[z]
                    .buses
                    .iter()
                    .filter_map(|&b| net.load_at(b))
                    .collect()
            })
            .collect();
        let zone_pvs = (0..net.zones().len())
            .map(|z| {
                net.zones()[z]
                    .buses
                    .iter()
                    .filter_map(|&b| net.pv_at(b))
                    .collect()
            })
            .collect();
        Ok(Env {
            net,
            data,
            cfg,
            reward_mode,
            solver: SolverOptions::default(),
            s_rating,
            agent_zone,
            zone_loads,
            zone_pvs,
            episode: None,
        })
    }

    pub fn network(&self) -> &NetworkModel {
        &self.net
    }

    pub fn dataset(&self) -> &TimeSeriesDataset {
        &self.data
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    pub fn n_agents(&self) -> usize {
        self.s_rating.len()
    }

    pub fn s_rating(&self) -> &[f64] {
        &self.s_rating
    }

    pub fn agent_zone(&self, agent: usize) -> ZoneId {
        self.agent_zone[agent]
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.net.n_bus() - 1) + 2 * self.net.loads().len() + 2 * self.net.pvs().len()
    }

    pub fn obs_dim(&self, agent: usize) -> usize {
        let z = self.agent_zone[agent];
        2 * self.zone_loads[z].len() + 2 * self.zone_pvs[z].len() + 2 * self.net.zones()[z].buses.len()
    }

    pub fn max_obs_dim(&self) -> usize {
        (0..self.n_agents()).map(|a| self.obs_dim(a)).max().unwrap_or(0)
    }

    fn load_scales(&self) -> Vec<(FeatureScale, FeatureScale)> {
        self.data
            .load_peak()
            .into_iter()
            .map(|(p, q)| (power_scale(p), power_scale(q)))
            .collect()
    }

    pub fn state_scales(&self) -> Vec<FeatureScale> {
        let m = self.net.n_bus() - 1;
        let mut s = vec![V_SCALE; m];
        s.extend(std::iter::repeat_n(THETA_SCALE, m));
        for (p, q) in self.load_scales() {
            s.push(p);
            s.push(q);
        }
        for &r in &self.s_rating {
            s.push(power_scale(r));
            s.push(power_scale(r));
        }
        s
    }

    pub fn obs_scales(&self, agent: usize) -> Vec<FeatureScale> {
        let z = self.agent_zone[agent];
        let loads = self.load_scales();
        let mut s = Vec::new();
        for &l in &self.zone_loads[z] {
            s.push(loads[l].0);
            s.push(loads[l].1);
        }
        for &p in &self.zone_pvs[z] {
            s.push(power_scale(self.s_rating[p]));
            s.push(power_scale(self.s_rating[p]));
        }
        for _ in &self.net.zones()[z].buses {
            s.push(V_SCALE);
            s.push(THETA_SCALE);
        }
        s
    }

    /// Local observation of one agent.
    pub fn observe(&self, state: &GridState, agent: usize) -> Vec<f64> {
        let z = self.agent_zone[agent];
        let mut o = Vec::with_capacity(self.obs_dim(agent));
        for &l in &self.zone_loads[z] {
            o.push(state.load_p[l]);
            o.push(state.load_q[l]);
        }
        for &p in &self.zone_pvs[z] {
            o.push(state.pv_p[p]);
            o.push(state.pv_q[p]);
        }
        for &b in &self.net.zones()[z].buses {
            o.push(state.v[b]);
            o.push(state.theta[b]);
        }
        o
    }

    pub fn observe_all(&self, state: &GridState) -> Vec<Vec<f64>> {
        (0..self.n_agents()).map(|a| self.observe(state, a)).collect()
    }

    pub fn horizon(&self, kind: EpisodeKind) -> usize {
        match kind {
            EpisodeKind::Train => self.cfg.train_horizon,
            EpisodeKind::Eval => self.cfg.eval_horizon,
        }
    }

    /// First rows eligible as an episode start.
    pub fn start_candidates(&self, kind: EpisodeKind) -> Result<Vec<usize>, EnvError> {
        let horizon = self.horizon(kind);
        let rows = self.data.rows();
        if rows <= horizon {
            return Err(EnvError::DatasetTooShort { rows, horizon });
        }
        let last = rows - horizon - 1;
        let starts: Vec<usize> = match kind {
            EpisodeKind::Train => (0..=last).collect(),
            EpisodeKind::Eval => (0..=last).step_by(self.data.steps_per_day()).collect(),
        };
        Ok(starts)
    }

    /// Starts an episode at a random row (train) or a random start of day (eval).
    pub fn reset<R: Rng + ?Sized>(&mut self, kind: EpisodeKind, rng: &mut R) -> Result<Vec<Vec<f64>>, EnvError> {
        let starts = self.start_candidates(kind)?;
        let start = starts[rng.random_range(0..starts.len())];
        self.reset_at(start, self.horizon(kind))
    }

    /// Starts an episode at a given row with zero PV reactive output.
    pub fn reset_at(&mut self, start: usize, horizon: usize) -> Result<Vec<Vec<f64>>, EnvError> {
        let rows = self.data.rows();
        if start + horizon >= rows {
            return Err(EnvError::DatasetTooShort { rows, horizon });
        }
        let pv_q = vec![0.0; self.n_agents()];
        let inj = self.data.injections(&self.net, start, &pv_q);
        let solution = powerflow::solve(&self.net, &inj, &self.solver)?;
        let state = self.grid_state(start, &solution, pv_q);
        let obs = self.observe_all(&state);
        self.episode = Some(Episode {
            start,
            steps: 0,
            horizon,
            state,
            solution,
        });
        Ok(obs)
    }

    fn grid_state(&self, row: usize, sol: &PowerFlowSolution, pv_q: Vec<f64>) -> GridState {
        GridState {
            t: row,
            v: sol.v.clone(),
            theta: sol.theta.clone(),
            load_p: self.data.load_p[row].clone(),
            load_q: self.data.load_q[row].clone(),
            pv_p: self.data.pv_p[row].clone(),
            pv_q,
        }
    }

    pub fn state(&self) -> Option<&GridState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    pub fn episode_start(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.start)
    }

    pub fn steps_taken(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    fn reward_of(&self, v: &[f64], q: &[f64]) -> f64 {
        match self.reward_mode {
            RewardMode::QLoss => cost::reward(q),
            RewardMode::Barrier { beta } => cost::barrier_reward(v, q, beta),
        }
    }

    /// Applies a joint action and advances one dataset row.
    pub fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        let n = self.n_agents();
        if action.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: action.len(),
            });
        }
        let ep = self.episode.take().ok_or(EnvError::NotRunning)?;
        let action: Vec<f64> = action
            .iter()
            .map(|&a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) })
            .collect();
        let row = ep.state.t + 1;
        let pv_q: Vec<f64> = (0..n)
            .map(|k| cost::action_to_reactive(action[k], self.data.pv_p[row][k], self.s_rating[k]))
            .collect();
        let inj = self.data.injections(&self.net, row, &pv_q);
        let state_vec = ep.state.to_vector();
        let obs = self.observe_all(&ep.state);
        let raw_max = self.cfg.raw_cost_max();
        let steps = ep.steps + 1;

        match powerflow::solve_warm(&self.net, &inj, &self.solver, &ep.solution) {
            Ok(sol) => {
                let next = self.grid_state(row, &sol, pv_q.clone());
                let v = next.monitored_v();
                let cost_raw = self.cfg.cost_function.raw(v);
                let reward = self.reward_of(v, &pv_q);
                let info = StepInfo {
                    iterations: sol.iterations,
                    c_percent: cost::c_percent(v),
                    solver_failed: false,
                };
                let done = steps >= ep.horizon;
                let tr = Transition {
                    state: state_vec,
                    obs,
                    action,
                    reward,
                    cost_raw,
                    cost_norm: cost::normalize_cost(cost_raw, raw_max),
                    next_state: next.to_vector(),
                    next_obs: self.observe_all(&next),
                    done,
                    terminal: false,
                    info,
                    pv_q,
                    branch_current_sq: sol.branch_current_sq(),
                    next_grid: next.clone(),
                };
                if !done {
                    self.episode = Some(Episode {
                        steps,
                        state: next,
                        solution: sol,
                        ..ep
                    });
                }
                Ok(tr)
            }
            Err(err) => {
                log::warn!("power flow failed at row {row}: {err}; ending episode");
                let mut next = ep.state.clone();
                next.t = row;
                next.pv_q = pv_q.clone();
                let reward = self.reward_of(next.monitored_v(), &pv_q);
                Ok(Transition {
                    state: state_vec,
                    obs: obs.clone(),
                    action,
                    reward,
                    cost_raw: raw_max,
                    cost_norm: cost::normalize_cost(raw_max, raw_max),
                    next_state: next.to_vector(),
                    next_obs: obs,
                    done: true,
                    terminal: true,
                    info: StepInfo {
                        iterations: 0,
                        c_percent: 0.0,
                        solver_failed: true,
                    },
                    pv_q,
                    branch_current_sq: ep.solution.branch_current_sq(),
                    next_grid: next,
                })
            }
        }
    }
}
