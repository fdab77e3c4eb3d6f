//! Static radial distribution-network model.
//!
//! A network is a tree of buses rooted at the slack bus (bus 0). Every
//! branch carries a series impedance `z = r + jx` in per-unit; the derived
//! admittance `y = 1/z = g - jb` is computed once at build time. Non-slack
//! buses are grouped into zones, which define what each agent observes.
//!
//! Networks are read from a TOML document, see [`NetworkSpec`].

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = usize;
pub type BranchId = usize;
pub type ZoneId = usize;
pub type LoadId = usize;
pub type PvId = usize;

/// Index of the slack bus. Fixed by convention.
pub const SLACK: BusId = 0;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("branch set contains a cycle (closing branch {from}-{to})")]
    Cycle { from: BusId, to: BusId },
    #[error("bus {0} is not reachable from the slack bus")]
    Disconnected(BusId),
    #[error("branch {from}-{to} has zero impedance")]
    ZeroImpedance { from: BusId, to: BusId },
    #[error("branch {from}-{to} has a negative resistance or reactance")]
    NegativeImpedance { from: BusId, to: BusId },
    #[error("zone error: {0}")]
    Zone(String),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("invalid bus set: {0}")]
    BusSet(String),
    #[error("invalid device: {0}")]
    Device(String),
    #[error("invalid slack: {0}")]
    Slack(String),
    #[error("failed to read network file {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("failed to parse network file: {0}")]
    Parse(String),
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

/// On-disk description of a network. Unknown fields are rejected.
///
/// ```toml
/// buses = [0, 1, 2]
///
/// [bases]
/// base_mva = 1.0
/// base_kv = 12.66
///
/// [slack]
/// bus = 0
/// v0_pu = 1.0
///
/// [[branches]]
/// from = 0
/// to = 1
/// r_pu = 0.01
/// x_pu = 0.02
///
/// [[loads]]
/// bus = 1
/// column = "load1"
///
/// [[pvs]]
/// bus = 2
/// column = "pv2"
/// s_rating_pu = 0.6     # optional
///
/// [[zones]]
/// name = "Z1"
/// buses = [1, 2]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub buses: Vec<BusId>,
    pub bases: Bases,
    pub slack: SlackSpec,
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub pvs: Vec<PvSpec>,
    pub zones: Vec<ZoneSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    pub base_mva: f64,
    pub base_kv: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            base_mva: 1.0,
            base_kv: 12.66,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackSpec {
    pub bus: BusId,
    #[serde(default = "default_v0")]
    pub v0_pu: f64,
}

fn default_v0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub from: BusId,
    pub to: BusId,
    pub r_pu: f64,
    pub x_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: BusId,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvSpec {
    pub bus: BusId,
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_rating_pu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub name: String,
    pub buses: Vec<BusId>,
}

impl NetworkSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, GridError> {
        toml::from_str(text).map_err(|e| GridError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("network spec is always representable as TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GridError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }
}

// ---------------------------------------------------------------------------
// Validated model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Series admittance `1 / (r + jx)`.
    pub y: Complex64,
}

impl Branch {
    /// Conductance `g` in `y = g - jb`.
    pub fn g(&self) -> f64 {
        self.y.re
    }

    /// Susceptance `b` in `y = g - jb`.
    pub fn b(&self) -> f64 {
        -self.y.im
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: BusId,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pv {
    pub bus: BusId,
    pub column: String,
    /// Inverter apparent-power capacity. `None` means "derive from data".
    pub s_rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub name: String,
    pub buses: Vec<BusId>,
}

/// Validated radial network. Immutable after [`build_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    n_bus: usize,
    v0: f64,
    bases: Bases,
    branches: Vec<Branch>,
    loads: Vec<Load>,
    pvs: Vec<Pv>,
    zones: Vec<Zone>,
    zone_of: Vec<Option<ZoneId>>,
    load_at: Vec<Option<LoadId>>,
    pv_at: Vec<Option<PvId>>,
    adjacency: Vec<Vec<(BusId, BranchId)>>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Validates a parsed spec and precomputes branch admittances.
pub fn build_network(spec: &NetworkSpec) -> Result<NetworkModel, GridError> {
    let n = spec.buses.len();
    if n == 0 {
        return Err(GridError::BusSet("network has no buses".into()));
    }
    let mut ids = spec.buses.clone();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(k, &id)| k != id) {
        return Err(GridError::BusSet(format!(
            "bus ids must be exactly 0..{n} without duplicates"
        )));
    }
    if spec.slack.bus != SLACK {
        return Err(GridError::Slack(format!(
            "slack must be bus 0, got {}",
            spec.slack.bus
        )));
    }
    if !(spec.slack.v0_pu.is_finite() && spec.slack.v0_pu > 0.0) {
        return Err(GridError::Slack(format!(
            "v0 must be positive, got {}",
            spec.slack.v0_pu
        )));
    }

    let mut branches = Vec::with_capacity(spec.branches.len());
    for b in &spec.branches {
        for bus in [b.from, b.to] {
            if bus >= n {
                return Err(GridError::UnknownBus(bus));
            }
        }
        if !(b.r_pu.is_finite() && b.x_pu.is_finite()) || b.r_pu < 0.0 || b.x_pu < 0.0 {
            return Err(GridError::NegativeImpedance {
                from: b.from,
                to: b.to,
            });
        }
        if b.r_pu == 0.0 && b.x_pu == 0.0 {
            return Err(GridError::ZeroImpedance {
                from: b.from,
                to: b.to,
            });
        }
        let z = Complex64::new(b.r_pu, b.x_pu);
        branches.push(Branch {
            from: b.from,
            to: b.to,
            r: b.r_pu,
            x: b.x_pu,
            y: z.inv(),
        });
    }

    let mut parent: Vec<usize> = (0..n).collect();
    for b in &branches {
        let (ra, rb) = (find(&mut parent, b.from), find(&mut parent, b.to));
        if ra == rb {
            return Err(GridError::Cycle {
                from: b.from,
                to: b.to,
            });
        }
        parent[ra] = rb;
    }
    let root = find(&mut parent, SLACK);
    for bus in 0..n {
        if find(&mut parent, bus) != root {
            return Err(GridError::Disconnected(bus));
        }
    }

    let mut zone_of = vec![None; n];
    let mut zones = Vec::with_capacity(spec.zones.len());
    for (zid, z) in spec.zones.iter().enumerate() {
        if z.buses.is_empty() {
            return Err(GridError::Zone(format!("zone {} is empty", z.name)));
        }
        for &bus in &z.buses {
            if bus >= n {
                return Err(GridError::UnknownBus(bus));
            }
            if bus == SLACK {
                return Err(GridError::Zone(format!(
                    "slack bus must not belong to a zone (zone {})",
                    z.name
                )));
            }
            if zone_of[bus].is_some() {
                return Err(GridError::Zone(format!("bus {bus} is in more than one zone")));
            }
            zone_of[bus] = Some(zid);
        }
        let mut buses = z.buses.clone();
        buses.sort_unstable();
        zones.push(Zone {
            name: z.name.clone(),
            buses,
        });
    }
    if let Some(bus) = (1..n).find(|&b| zone_of[b].is_none()) {
        return Err(GridError::Zone(format!("bus {bus} has no zone")));
    }

    let mut load_at = vec![None; n];
    let mut loads = Vec::with_capacity(spec.loads.len());
    for (id, l) in spec.loads.iter().enumerate() {
        if l.bus >= n {
            return Err(GridError::UnknownBus(l.bus));
        }
        if l.bus == SLACK || load_at[l.bus].is_some() {
            return Err(GridError::Device(format!(
                "load on bus {} is on the slack bus or duplicated",
                l.bus
            )));
        }
        load_at[l.bus] = Some(id);
        loads.push(Load {
            bus: l.bus,
            column: l.column.clone(),
        });
    }
    let mut pv_at = vec![None; n];
    let mut pvs = Vec::with_capacity(spec.pvs.len());
    for (id, p) in spec.pvs.iter().enumerate() {
        if p.bus >= n {
            return Err(GridError::UnknownBus(p.bus));
        }
        if p.bus == SLACK || pv_at[p.bus].is_some() {
            return Err(GridError::Device(format!(
                "PV on bus {} is on the slack bus or duplicated",
                p.bus
            )));
        }
        if let Some(s) = p.s_rating_pu {
            if !(s.is_finite() && s > 0.0) {
                return Err(GridError::Device(format!(
                    "PV on bus {} has non-positive rating {s}",
                    p.bus
                )));
            }
        }
        pv_at[p.bus] = Some(id);
        pvs.push(Pv {
            bus: p.bus,
            column: p.column.clone(),
            s_rating: p.s_rating_pu,
        });
    }

    let mut adjacency = vec![Vec::new(); n];
    for (k, b) in branches.iter().enumerate() {
        adjacency[b.from].push((b.to, k));
        adjacency[b.to].push((b.from, k));
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }

    Ok(NetworkModel {
        n_bus: n,
        v0: spec.slack.v0_pu,
        bases: spec.bases,
        branches,
        loads,
        pvs,
        zones,
        zone_of,
        load_at,
        pv_at,
        adjacency,
    })
}

impl NetworkModel {
    pub fn from_toml_str(text: &str) -> Result<Self, GridError> {
        build_network(&NetworkSpec::from_toml_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        build_network(&NetworkSpec::load(path)?)
    }

    pub fn n_bus(&self) -> usize {
        self.n_bus
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn bases(&self) -> Bases {
        self.bases
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn pvs(&self) -> &[Pv] {
        &self.pvs
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone_of(&self, bus: BusId) -> Option<ZoneId> {
        self.zone_of.get(bus).copied().flatten()
    }

    pub fn load_at(&self, bus: BusId) -> Option<LoadId> {
        self.load_at.get(bus).copied().flatten()
    }

    pub fn pv_at(&self, bus: BusId) -> Option<PvId> {
        self.pv_at.get(bus).copied().flatten()
    }

    /// Buses adjacent to `bus` with the connecting branch index, sorted by bus.
    pub fn incident(&self, bus: BusId) -> Result<&[(BusId, BranchId)], GridError> {
        self.adjacency
            .get(bus)
            .map(Vec::as_slice)
            .ok_or(GridError::UnknownBus(bus))
    }

    /// The set of buses sharing a branch with `bus`, in ascending order.
    pub fn neighbors(&self, bus: BusId) -> Result<Vec<BusId>, GridError> {
        Ok(self.incident(bus)?.iter().map(|&(j, _)| j).collect())
    }

    /// Buses other than the slack, in ascending order.
    pub fn non_slack(&self) -> impl Iterator<Item = BusId> {
        1..self.n_bus
    }

    /// Rebuilds the file-level description. `build_network(&m.to_spec()) == m`.
    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            buses: (0..self.n_bus).collect(),
            bases: self.bases,
            slack: SlackSpec {
                bus: SLACK,
                v0_pu: self.v0,
            },
            branches: self
                .branches
                .iter()
                .map(|b| BranchSpec {
                    from: b.from,
                    to: b.to,
                    r_pu: b.r,
                    x_pu: b.x,
                })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|l| LoadSpec {
                    bus: l.bus,
                    column: l.column.clone(),
                })
                .collect(),
            pvs: self
                .pvs
                .iter()
                .map(|p| PvSpec {
                    bus: p.bus,
                    column: p.column.clone(),
                    s_rating_pu: p.s_rating,
                })
                .collect(),
            zones: self
                .zones
                .iter()
                .map(|z| ZoneSpec {
                    name: z.name.clone(),
                    buses: z.buses.clone(),
                })
                .collect(),
        }
    }

    /// Returns a copy with every branch resistance multiplied by `factor`.
    pub fn with_scaled_resistance(&self, factor: f64) -> Result<Self, GridError> {
        let mut spec = self.to_spec();
        for b in &mut spec.branches {
            b.r_pu *= factor;
        }
        build_network(&spec)
    }
}
