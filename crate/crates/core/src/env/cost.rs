//! Reward, cost and action mapping for the voltage-control game.
//!
//! Voltage arguments are the magnitudes of the monitored (non-slack) buses.

use serde::{Deserialize, Serialize};

pub const V_MIN: f64 = 0.95;
pub const V_MAX: f64 = 1.05;
pub const V_NOMINAL: f64 = 1.0;

/// Shrink factor keeping normalized costs strictly inside `(-1, 1)`.
pub const NORM_SHRINK: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostFunction {
    Boolean,
    #[default]
    Step,
    #[serde(rename = "vloss")]
    VLoss,
}

impl CostFunction {
    /// Raw (unnormalized) cost of a voltage profile.
    pub fn raw(self, v: &[f64]) -> f64 {
        match self {
            CostFunction::Boolean => cost_boolean(v),
            CostFunction::Step => cost_step(v),
            CostFunction::VLoss => cost_vloss(v),
        }
    }

    /// Upper end of the raw range; v-loss uses the configured cap.
    pub fn raw_max(self, vloss_cap: f64) -> f64 {
        match self {
            CostFunction::Boolean | CostFunction::Step => 1.0,
            CostFunction::VLoss => vloss_cap,
        }
    }
}

pub fn out_of_range(v: f64) -> bool {
    !(V_MIN..=V_MAX).contains(&v)
}

pub fn count_out_of_range(v: &[f64]) -> usize {
    v.iter().filter(|&&x| out_of_range(x)).count()
}

/// Fraction of monitored buses inside `[0.95, 1.05]`.
pub fn c_percent(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    1.0 - count_out_of_range(v) as f64 / v.len() as f64
}

/// 0 when every monitored bus is in range, 1 otherwise.
pub fn cost_boolean(v: &[f64]) -> f64 {
    if count_out_of_range(v) == 0 {
        0.0
    } else {
        1.0
    }
}

/// Piecewise cost on the in-range share: 0 at 100%, 0.5 down to 90%, 1 below.
pub fn cost_step(v: &[f64]) -> f64 {
    let out = count_out_of_range(v);
    // C_percent >= 0.9  <=>  10 * out <= n, evaluated in integers.
    if out == 0 {
        0.0
    } else if 10 * out <= v.len() {
        0.5
    } else {
        1.0
    }
}

/// Step cost as a function of an already computed in-range share.
pub fn step_cost_of_percent(c_percent: f64) -> f64 {
    if c_percent >= 1.0 {
        0.0
    } else if c_percent >= 0.9 {
        0.5
    } else {
        1.0
    }
}

/// Mean absolute deviation from 1.0 p.u.
pub fn cost_vloss(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|x| (x - V_NOMINAL).abs()).sum::<f64>() / v.len() as f64
}

/// Affine map of `[0, raw_max]` onto `(-1, 1)`; raw values are clipped first.
pub fn normalize_cost(raw: f64, raw_max: f64) -> f64 {
    let r = raw.clamp(0.0, raw_max);
    NORM_SHRINK * (2.0 * r / raw_max - 1.0)
}

/// Mean absolute reactive output over agents.
pub fn q_loss(q_pv: &[f64]) -> f64 {
    if q_pv.is_empty() {
        return 0.0;
    }
    q_pv.iter().map(|q| q.abs()).sum::<f64>() / q_pv.len() as f64
}

/// Reward for the constrained learner: `-mean |q|`.
pub fn reward(q_pv: &[f64]) -> f64 {
    -q_loss(q_pv)
}

/// Reward for unconstrained baselines: L1 voltage barrier plus weighted q-loss.
pub fn barrier_reward(v: &[f64], q_pv: &[f64], beta: f64) -> f64 {
    -cost_vloss(v) - beta * q_loss(q_pv)
}

/// Reactive setpoint for an action ratio, bounded by the inverter capacity
/// circle `q_max = sqrt(s^2 - p^2)`. Out-of-range actions are clipped.
pub fn action_to_reactive(a: f64, p_pv: f64, s_rating: f64) -> f64 {
    let a = if a.is_nan() { 0.0 } else { a };
    if !(-1.0..=1.0).contains(&a) {
        log::debug!("clipping action {a} to [-1, 1]");
    }
    let q_max = (s_rating * s_rating - p_pv * p_pv).max(0.0).sqrt();
    a.clamp(-1.0, 1.0) * q_max
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        assert_eq!(reward(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(reward(&[0.2, -0.2]), -0.2);
        assert!((reward(&[0.1, 0.3, 0.5]) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn action_mapping() {
        assert_eq!(action_to_reactive(0.0, 0.3, 0.5), 0.0);
        assert_eq!(action_to_reactive(1.0, 0.0, 0.5), 0.5);
        assert!((action_to_reactive(-0.5, 0.4, 0.5) + 0.15).abs() < 1e-12);
        assert_eq!(action_to_reactive(3.0, 0.0, 0.5), 0.5);
        assert_eq!(action_to_reactive(1.0, 0.7, 0.5), 0.0);
    }

    #[test]
    fn boolean_boundaries() {
        assert_eq!(cost_boolean(&[1.0, 1.0]), 0.0);
        assert_eq!(cost_boolean(&[1.0, 1.06]), 1.0);
        assert_eq!(cost_boolean(&[0.95, 1.05]), 0.0);
    }

    #[test]
    fn step_thresholds() {
        assert_eq!(step_cost_of_percent(1.0), 0.0);
        assert_eq!(step_cost_of_percent(0.95), 0.5);
        assert_eq!(step_cost_of_percent(0.9), 0.5);
        assert_eq!(step_cost_of_percent(0.89), 1.0);
        let mut v = vec![1.0; 10];
        v[0] = 1.2;
        assert_eq!(cost_step(&v), 0.5);
        v[1] = 0.9;
        assert_eq!(cost_step(&v), 1.0);
    }

    #[test]
    fn vloss_examples() {
        assert_eq!(cost_vloss(&[1.0, 1.0]), 0.0);
        assert!((cost_vloss(&[1.02, 0.98]) - 0.02).abs() < 1e-15);
        assert!((cost_vloss(&[1.10]) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_cost(0.0, 1.0), -1.0 + 1e-6);
        assert_eq!(normalize_cost(1.0, 1.0), 1.0 - 1e-6);
        assert_eq!(normalize_cost(0.5, 1.0), 0.0);
        // v-loss above the cap saturates
        assert_eq!(normalize_cost(0.5, 0.2), normalize_cost(0.2, 0.2));
    }

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier_reward(&[1.0, 1.0], &[0.0], 0.1), 0.0);
        let r = barrier_reward(&[1.03, 0.97], &[0.1, -0.1], 0.1);
        assert!((r + 0.04).abs() < 1e-15);
        assert_eq!(barrier_reward(&[1.03], &[0.5], 0.0), -cost_vloss(&[1.03]));
    }
}
