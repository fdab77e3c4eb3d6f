//! Shared helpers for integration tests: an independent Gauss-Seidel power
//! flow, random radial networks and finite differences.
#![allow(dead_code)]

pub mod gradcheck;

use std::path::PathBuf;

use num_complex::Complex64;
use rand::Rng;
use safevolt_core::grid::{build_network, Bases, BranchSpec, LoadSpec, NetworkModel, NetworkSpec, PvSpec, SlackSpec, ZoneSpec};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn net2() -> NetworkModel {
    NetworkModel::load(fixture("net2.toml")).unwrap()
}

pub fn net6() -> NetworkModel {
    NetworkModel::load(fixture("net6.toml")).unwrap()
}

/// Fixed-point power flow on the bus admittance matrix. Written
/// independently of the Newton solver: complex arithmetic only, no
/// Jacobian. Iterates until the largest voltage update is below `tol`.
pub fn gauss_seidel(net: &NetworkModel, p: &[f64], q: &[f64], tol: f64, max_sweeps: usize) -> Option<Vec<Complex64>> {
    let n = net.n_bus();
    let zero = Complex64::new(0.0, 0.0);
    let mut y = vec![vec![zero; n]; n];
    for b in net.branches() {
        let yb = Complex64::new(1.0, 0.0) / Complex64::new(b.r, b.x);
        y[b.from][b.from] += yb;
        y[b.to][b.to] += yb;
        y[b.from][b.to] -= yb;
        y[b.to][b.from] -= yb;
    }
    let mut v = vec![Complex64::new(net.v0(), 0.0); n];
    for _ in 0..max_sweeps {
        let mut delta: f64 = 0.0;
        for i in 1..n {
            let s = Complex64::new(p[i], q[i]);
            let mut acc = (s / v[i]).conj();
            for j in 0..n {
                if j != i {
                    acc -= y[i][j] * v[j];
                }
            }
            let next = acc / y[i][i];
            delta = delta.max((next - v[i]).norm());
            v[i] = next;
        }
        if delta < tol {
            return Some(v);
        }
    }
    None
}

/// Uniform random labelled tree on `n` buses: each bus `k > 0` attaches to a
/// random earlier bus after a random relabelling.
pub fn random_tree_edges<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (1..n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order.insert(0, 0);
    (1..n)
        .map(|k| {
            let parent = order[rng.random_range(0..k)];
            let child = order[k];
            if rng.random_bool(0.5) {
                (parent, child)
            } else {
                (child, parent)
            }
        })
        .collect()
}

/// A valid network spec on a random tree with a load and a PV on every
/// non-slack bus and a single zone.
pub fn random_spec<R: Rng>(n: usize, rng: &mut R) -> NetworkSpec {
    let branches = random_tree_edges(n, rng)
        .into_iter()
        .map(|(from, to)| BranchSpec {
            from,
            to,
            r_pu: rng.random_range(0.005..0.05),
            x_pu: rng.random_range(0.005..0.05),
        })
        .collect();
    NetworkSpec {
        buses: (0..n).collect(),
        bases: Bases::default(),
        slack: SlackSpec { bus: 0, v0_pu: 1.0 },
        branches,
        loads: (1..n)
            .map(|b| LoadSpec {
                bus: b,
                column: format!("l{b}"),
            })
            .collect(),
        pvs: (1..n)
            .map(|b| PvSpec {
                bus: b,
                column: format!("pv{b}"),
                s_rating_pu: Some(rng.random_range(0.1..1.0)),
            })
            .collect(),
        zones: vec![ZoneSpec {
            name: "all".into(),
            buses: (1..n).collect(),
        }],
    }
}

pub fn random_network<R: Rng>(n: usize, rng: &mut R) -> NetworkModel {
    build_network(&random_spec(n, rng)).unwrap()
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
