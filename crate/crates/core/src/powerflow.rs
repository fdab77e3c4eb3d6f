//! AC power flow by Newton-Raphson in polar coordinates.
//!
//! All non-slack buses are PQ buses. The unknowns are `(theta_i, v_i)` for
//! every non-slack bus; the slack bus is held at `v0 ∠ 0`. Injections are
//! net generation minus consumption, so a load shows up as a negative `p`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{BusId, NetworkModel, SLACK};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (last mismatch {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        /// Max-mismatch after each iterate, starting with the initial point.
        trace: Vec<f64>,
    },
    #[error("voltage collapse at bus {bus} (|v| = {v:.4}) in iteration {iteration}")]
    CollapseDetected {
        bus: BusId,
        v: f64,
        iteration: usize,
    },
    #[error("singular Jacobian in iteration {0}")]
    SingularJacobian(usize),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("non-finite injection at bus {0}")]
    NonFinite(BusId),
}

/// Net active/reactive injection per bus, in p.u. The slack entry is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionProfile {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl InjectionProfile {
    pub fn zeros(n_bus: usize) -> Self {
        InjectionProfile {
            p: vec![0.0; n_bus],
            q: vec![0.0; n_bus],
        }
    }

    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self, PowerFlowError> {
        if p.len() != q.len() {
            return Err(PowerFlowError::UnknownBus(p.len().min(q.len())));
        }
        let mut inj = InjectionProfile { p, q };
        inj.p[SLACK] = 0.0;
        inj.q[SLACK] = 0.0;
        Ok(inj)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Adds `(dp, dq)` to the injection at `bus`.
    pub fn add(&mut self, bus: BusId, dp: f64, dq: f64) {
        if bus != SLACK {
            self.p[bus] += dp;
            self.q[bus] += dq;
        }
    }

    fn check(&self, net: &NetworkModel) -> Result<(), PowerFlowError> {
        if self.p.len() != net.n_bus() {
            return Err(PowerFlowError::UnknownBus(self.p.len().min(net.n_bus())));
        }
        for bus in net.non_slack() {
            if !(self.p[bus].is_finite() && self.q[bus].is_finite()) {
                return Err(PowerFlowError::NonFinite(bus));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Max absolute P/Q mismatch accepted as converged, p.u.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Any iterate with a bus magnitude below this is rejected as collapse.
    pub v_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iter: 50,
            v_floor: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    /// Phase angle in radians, within `[-pi, pi]`.
    pub theta: Vec<f64>,
    /// Complex current on each branch, oriented `from -> to`.
    pub i_branch: Vec<Complex64>,
    pub p_loss: f64,
    pub iterations: usize,
    pub residual_norm: f64,
}

impl PowerFlowSolution {
    pub fn phasor(&self, bus: BusId) -> Complex64 {
        Complex64::from_polar(self.v[bus], self.theta[bus])
    }

    /// Squared current magnitude per branch.
    pub fn branch_current_sq(&self) -> Vec<f64> {
        self.i_branch.iter().map(|i| i.norm_sqr()).collect()
    }
}

fn phasors(v: &[f64], theta: &[f64]) -> Vec<Complex64> {
    v.iter()
        .zip(theta)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect()
}

/// Complex power `s_i = V_i conj(I_i)` drawn out of each bus into the network.
pub fn bus_injections(net: &NetworkModel, v: &[f64], theta: &[f64]) -> Vec<Complex64> {
    let vc = phasors(v, theta);
    let mut current = vec![Complex64::new(0.0, 0.0); net.n_bus()];
    for b in net.branches() {
        let i = b.y * (vc[b.from] - vc[b.to]);
        current[b.from] += i;
        current[b.to] -= i;
    }
    vc.iter().zip(&current).map(|(v, i)| v * i.conj()).collect()
}

/// Branch currents by Ohm's law, `I_ij = y_ij (V_i - V_j)`.
pub fn branch_currents(net: &NetworkModel, v: &[f64], theta: &[f64]) -> Vec<Complex64> {
    let vc = phasors(v, theta);
    net.branches()
        .iter()
        .map(|b| b.y * (vc[b.from] - vc[b.to]))
        .collect()
}

/// Per-bus mismatch `(p_spec - p(v, theta), q_spec - q(v, theta))` for every
/// non-slack bus.
pub fn residuals(
    net: &NetworkModel,
    inj: &InjectionProfile,
    v: &[f64],
    theta: &[f64],
) -> Result<BTreeMap<BusId, (f64, f64)>, PowerFlowError> {
    let n = net.n_bus();
    if v.len() < n || theta.len() < n {
        return Err(PowerFlowError::UnknownBus(v.len().min(theta.len())));
    }
    if inj.len() < n {
        return Err(PowerFlowError::UnknownBus(inj.len()));
    }
    let s = bus_injections(net, &v[..n], &theta[..n]);
    Ok(net
        .non_slack()
        .map(|i| (i, (inj.p[i] - s[i].re, inj.q[i] - s[i].im)))
        .collect())
}

/// Sum of `r |I|^2` over all branches.
pub fn line_loss(net: &NetworkModel, sol: &PowerFlowSolution) -> f64 {
    net.branches()
        .iter()
        .zip(&sol.i_branch)
        .map(|(b, i)| b.r * i.norm_sqr())
        .sum()
}

fn mismatch_vec(net: &NetworkModel, inj: &InjectionProfile, v: &[f64], theta: &[f64]) -> (Vec<f64>, f64) {
    let m = net.n_bus() - 1;
    let s = bus_injections(net, v, theta);
    let mut f = vec![0.0; 2 * m];
    let mut worst = 0.0_f64;
    for k in 0..m {
        let i = k + 1;
        f[k] = inj.p[i] - s[i].re;
        f[m + k] = inj.q[i] - s[i].im;
        worst = worst.max(f[k].abs()).max(f[m + k].abs());
    }
    (f, worst)
}

/// Jacobian of the computed injections `(P, Q)` with respect to `(theta, v)`
/// over non-slack buses; row/column `k` is bus `k + 1`.
fn jacobian(net: &NetworkModel, v: &[f64], theta: &[f64], s: &[Complex64]) -> DMatrix<f64> {
    let n = net.n_bus();
    let m = n - 1;
    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    for b in net.branches() {
        diag[b.from] += b.y;
        diag[b.to] += b.y;
    }
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for i in 1..n {
        let r = i - 1;
        let (p_i, q_i) = (s[i].re, s[i].im);
        let (g_ii, b_ii) = (diag[i].re, diag[i].im);
        let vi = v[i];
        jac[(r, r)] = -q_i - b_ii * vi * vi;
        jac[(r, m + r)] = p_i / vi + g_ii * vi;
        jac[(m + r, r)] = p_i - g_ii * vi * vi;
        jac[(m + r, m + r)] = q_i / vi - b_ii * vi;
        for &(k, br) in net.incident(i).expect("bus in range") {
            if k == SLACK {
                continue;
            }
            let c = k - 1;
            // Off-diagonal bus admittance is -y.
            let y = -net.branches()[br].y;
            let (g, b) = (y.re, y.im);
            let t = theta[i] - theta[k];
            let (sin, cos) = t.sin_cos();
            let vk = v[k];
            jac[(r, c)] = vi * vk * (g * sin - b * cos);
            jac[(r, m + c)] = vi * (g * cos + b * sin);
            jac[(m + r, c)] = -vi * vk * (g * cos + b * sin);
            jac[(m + r, m + c)] = vi * (g * sin - b * cos);
        }
    }
    jac
}

fn wrap_angle(a: f64) -> f64 {
    if (-PI..=PI).contains(&a) {
        a
    } else {
        a.sin().atan2(a.cos())
    }
}

/// Solves from a flat start (`v = v0`, `theta = 0`).
pub fn solve(
    net: &NetworkModel,
    inj: &InjectionProfile,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = net.n_bus();
    solve_from(net, inj, opts, vec![net.v0(); n], vec![0.0; n])
}

/// Solves starting from a previous solution on the same network.
pub fn solve_warm(
    net: &NetworkModel,
    inj: &InjectionProfile,
    opts: &SolverOptions,
    prev: &PowerFlowSolution,
) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_from(net, inj, opts, prev.v.clone(), prev.theta.clone())
}

fn solve_from(
    net: &NetworkModel,
    inj: &InjectionProfile,
    opts: &SolverOptions,
    mut v: Vec<f64>,
    mut theta: Vec<f64>,
) -> Result<PowerFlowSolution, PowerFlowError> {
    inj.check(net)?;
    let n = net.n_bus();
    if v.len() != n || theta.len() != n {
        return Err(PowerFlowError::UnknownBus(v.len().min(theta.len())));
    }
    v[SLACK] = net.v0();
    theta[SLACK] = 0.0;
    let m = n - 1;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (f, worst) = mismatch_vec(net, inj, &v, &theta);
        trace.push(worst);
        if !worst.is_finite() {
            break;
        }
        if worst <= opts.tolerance {
            for a in theta.iter_mut() {
                *a = wrap_angle(*a);
            }
            let i_branch = branch_currents(net, &v, &theta);
            let mut sol = PowerFlowSolution {
                v,
                theta,
                i_branch,
                p_loss: 0.0,
                iterations,
                residual_norm: worst,
            };
            sol.p_loss = line_loss(net, &sol);
            return Ok(sol);
        }
        if iterations >= opts.max_iter {
            break;
        }
        let s = bus_injections(net, &v, &theta);
        let jac = jacobian(net, &v, &theta, &s);
        let rhs = DVector::from_vec(f);
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or(PowerFlowError::SingularJacobian(iterations))?;
        iterations += 1;
        for k in 0..m {
            theta[k + 1] += dx[k];
            v[k + 1] += dx[m + k];
        }
        if let Some(bus) = (1..n).find(|&b| v[b].is_nan() || v[b] < opts.v_floor) {
            return Err(PowerFlowError::CollapseDetected {
                bus,
                v: v[bus],
                iteration: iterations,
            });
        }
    }
    Err(PowerFlowError::NonConvergence {
        iterations,
        last: *trace.last().unwrap_or(&f64::NAN),
        trace,
    })
}
