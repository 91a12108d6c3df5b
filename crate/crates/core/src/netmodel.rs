//! Network description, validation and the constant matrices of the compact
//! dynamics `x' = A x - B F(C x)`.
//!
//! State layout: `x = [generator angles (m), generator velocities (m), load angles (n - m)]`,
//! all measured as deviations from the equilibrium.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};

/// Largest admissible |sum of injections| for a lossless network without an infinite bus.
pub const POWER_BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: i64,
    pub kind: BusKind,
    pub voltage: f64,
    /// Zero for loads and infinite buses.
    pub inertia: f64,
    /// Zero for infinite buses.
    pub damping: f64,
    /// Net injection after the fault clears.
    pub power: f64,
    /// Net injection before the fault, when it differs from `power`.
    pub pre_fault_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: i64,
    pub to: i64,
    pub susceptance: f64,
    pub conductance: f64,
}

/// A line with a fixed orientation: `delta_e = theta[tail] - theta[head]`.
/// Indices refer to `NetworkModel::buses`; infinite buses have angle 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub line: Line,
}

/// Voltage set-point fluctuation band `V in [(1 - rho) V0, (1 + rho) V0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluctuation {
    pub rho: f64,
    pub v0: f64,
}

impl Default for Fluctuation {
    fn default() -> Self {
        Self { rho: 0.1, v0: 1.0 }
    }
}

/// Per-edge nonlinearity `phi(delta) = c * sin(delta + alpha)` scaled by `s`.
/// The physical flow leaving the tail is `s * c * sin(delta + alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParams {
    pub s: f64,
    pub c: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParseOptions {
    pub fluctuation: Option<Fluctuation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    /// Generators, then loads, then infinite buses; ascending id within each kind.
    pub buses: Vec<Bus>,
    /// Sorted by (lower id, higher id).
    pub edges: Vec<Edge>,
    pub params: Vec<EdgeParams>,
    /// Number of generators.
    pub m: usize,
    /// Number of buses carrying state (generators and loads).
    pub n: usize,
    pub fluctuation: Option<Fluctuation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: i64,
    kind: BusKind,
    voltage: f64,
    #[serde(default)]
    inertia: Option<f64>,
    #[serde(default)]
    damping: Option<f64>,
    #[serde(default)]
    power: Option<f64>,
    #[serde(default)]
    pre_fault_power: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineDoc {
    from: i64,
    to: i64,
    susceptance: f64,
    #[serde(default)]
    conductance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    buses: Vec<BusDoc>,
    lines: Vec<LineDoc>,
}

pub fn parse_network(text: &str) -> Result<NetworkModel> {
    parse_network_with(text, ParseOptions::default())
}

pub fn parse_network_with(text: &str, opts: ParseOptions) -> Result<NetworkModel> {
    let doc: NetworkDoc =
        serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    NetworkModel::from_parts(
        doc.buses
            .into_iter()
            .map(bus_from_doc)
            .collect::<Result<Vec<_>>>()?,
        doc.lines
            .into_iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                susceptance: l.susceptance,
                conductance: l.conductance.unwrap_or(0.0),
            })
            .collect(),
        opts,
    )
}

fn bus_from_doc(b: BusDoc) -> Result<Bus> {
    let bad = |msg: &str| Error::InvalidNetwork(format!("bus {}: {msg}", b.id));
    if !(b.voltage.is_finite() && b.voltage > 0.0) {
        return Err(bad("voltage must be positive"));
    }
    let (inertia, damping, power) = match b.kind {
        BusKind::Generator => {
            let inertia = b.inertia.ok_or_else(|| bad("generator needs inertia"))?;
            let damping = b.damping.ok_or_else(|| bad("generator needs damping"))?;
            if !(inertia.is_finite() && inertia > 0.0) {
                return Err(bad("inertia must be positive"));
            }
            if !(damping.is_finite() && damping > 0.0) {
                return Err(bad("damping must be positive"));
            }
            (inertia, damping, b.power.ok_or_else(|| bad("missing power"))?)
        }
        BusKind::Load => {
            if b.inertia.is_some() {
                return Err(bad("inertia is only allowed on generators"));
            }
            let damping = b.damping.ok_or_else(|| bad("load needs damping"))?;
            if !(damping.is_finite() && damping > 0.0) {
                return Err(bad("damping must be positive"));
            }
            (0.0, damping, b.power.ok_or_else(|| bad("missing power"))?)
        }
        BusKind::Infinite => {
            if b.inertia.is_some() || b.damping.is_some() || b.pre_fault_power.is_some() {
                return Err(bad("infinite bus carries no dynamics"));
            }
            (0.0, 0.0, b.power.unwrap_or(0.0))
        }
    };
    if !power.is_finite() || b.pre_fault_power.is_some_and(|p| !p.is_finite()) {
        return Err(bad("power must be finite"));
    }
    Ok(Bus {
        id: b.id,
        kind: b.kind,
        voltage: b.voltage,
        inertia,
        damping,
        power,
        pre_fault_power: b.pre_fault_power,
    })
}

impl NetworkModel {
    pub fn from_parts(mut buses: Vec<Bus>, lines: Vec<Line>, opts: ParseOptions) -> Result<Self> {
        let rank = |k: BusKind| match k {
            BusKind::Generator => 0,
            BusKind::Load => 1,
            BusKind::Infinite => 2,
        };
        buses.sort_by_key(|b| (rank(b.kind), b.id));
        let mut index = BTreeMap::new();
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate bus id {}", b.id)));
            }
        }
        let m = buses.iter().filter(|b| b.kind == BusKind::Generator).count();
        let n = m + buses.iter().filter(|b| b.kind == BusKind::Load).count();
        if n == 0 {
            return Err(Error::InvalidNetwork("no generator or load buses".into()));
        }

        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(lines.len());
        for line in lines {
            let (lo, hi) = (line.from.min(line.to), line.from.max(line.to));
            if lo == hi {
                return Err(Error::InvalidNetwork(format!("line {lo}-{hi} is a self-loop")));
            }
            if !seen.insert((lo, hi)) {
                return Err(Error::DuplicateLine(lo, hi));
            }
            let (&il, &ih) = match (index.get(&lo), index.get(&hi)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "line {lo}-{hi} references an unknown bus"
                    )))
                }
            };
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "line {lo}-{hi}: susceptance must be positive"
                )));
            }
            if !(line.conductance.is_finite() && line.conductance >= 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "line {lo}-{hi}: conductance must be non-negative"
                )));
            }
            let (tail, head) = match (il >= n, ih >= n) {
                (true, true) => {
                    return Err(Error::InvalidNetwork(format!(
                        "line {lo}-{hi} joins two infinite buses"
                    )))
                }
                (false, true) => (il, ih),
                (true, false) => (ih, il),
                (false, false) => (il, ih),
            };
            if line.conductance > 0.0 && head < n {
                return Err(Error::InvalidNetwork(format!(
                    "line {lo}-{hi}: lossy lines must connect a stateful bus to an infinite bus"
                )));
            }
            edges.push(Edge { tail, head, line });
        }
        edges.sort_by_key(|e| {
            let (a, b) = (e.line.from, e.line.to);
            (a.min(b), a.max(b))
        });

        let lossy = edges.iter().any(|e| e.line.conductance > 0.0);
        if let Some(f) = opts.fluctuation {
            if !(f.rho > 0.0 && f.rho < 1.0 && f.v0 > 0.0) {
                return Err(Error::InvalidNetwork("fluctuation ratio must lie in (0, 1)".into()));
            }
            if lossy {
                return Err(Error::InvalidNetwork(
                    "voltage-fluctuation mode applies to lossless networks only".into(),
                ));
            }
            let (lo, hi) = ((1.0 - f.rho) * f.v0, (1.0 + f.rho) * f.v0);
            if let Some(b) = buses.iter().find(|b| b.voltage < lo || b.voltage > hi) {
                return Err(Error::InvalidNetwork(format!(
                    "bus {} voltage {} outside the fluctuation band [{lo}, {hi}]",
                    b.id, b.voltage
                )));
            }
        }

        let params = edges
            .iter()
            .map(|e| {
                let vv = buses[e.tail].voltage * buses[e.head].voltage;
                let (b, g) = (e.line.susceptance, e.line.conductance);
                match opts.fluctuation {
                    Some(f) => {
                        let top = (1.0 + f.rho).powi(2) * f.v0 * f.v0;
                        EdgeParams { s: top * b, c: vv / top, alpha: 0.0 }
                    }
                    None => EdgeParams { s: vv * b.hypot(g), c: 1.0, alpha: (g / b).atan() },
                }
            })
            .collect();

        let model = Self { buses, edges, params, m, n, fluctuation: opts.fluctuation };
        model.check_connectivity()?;
        if !model.has_infinite() && !lossy {
            let total: f64 = model.buses[..n].iter().map(|b| b.power).sum();
            if total.abs() > POWER_BALANCE_TOL {
                return Err(Error::PowerImbalance(total));
            }
            let pre: f64 = model.buses[..n].iter().map(|b| b.pre_fault_power.unwrap_or(b.power)).sum();
            if pre.abs() > POWER_BALANCE_TOL {
                return Err(Error::PowerImbalance(pre));
            }
        }
        Ok(model)
    }

    /// Every stateful bus must reach an infinite bus, or, without infinite
    /// buses, all stateful buses must form one component.
    fn check_connectivity(&self) -> Result<()> {
        let total = self.buses.len();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.tail), find(&mut parent, e.head));
            parent[a] = b;
        }
        if self.has_infinite() {
            let anchored: BTreeSet<usize> =
                (self.n..total).map(|i| find(&mut parent, i)).collect();
            if let Some(k) = (0..self.n).find(|&k| !anchored.contains(&find(&mut parent, k))) {
                return Err(Error::Disconnected(format!(
                    "bus {} has no path to an infinite bus",
                    self.buses[k].id
                )));
            }
        } else {
            let root = find(&mut parent, 0);
            if let Some(k) = (1..self.n).find(|&k| find(&mut parent, k) != root) {
                return Err(Error::Disconnected(format!(
                    "bus {} is not connected to bus {}",
                    self.buses[k].id, self.buses[0].id
                )));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n + self.m
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_infinite(&self) -> bool {
        self.buses.len() > self.n
    }

    pub fn is_lossy(&self) -> bool {
        self.params.iter().any(|p| p.alpha != 0.0)
    }

    /// Position of the angle of stateful bus `k` inside the state vector.
    pub fn angle_index(&self, k: usize) -> usize {
        if k < self.m {
            k
        } else {
            k + self.m
        }
    }

    pub fn edge_index(&self, u: i64, v: i64) -> Result<usize> {
        let key = (u.min(v), u.max(v));
        self.edges
            .iter()
            .position(|e| (e.line.from.min(e.line.to), e.line.from.max(e.line.to)) == key)
            .ok_or(Error::UnknownLine(key.0, key.1))
    }

    /// Endpoint ids of edge `e`, lower id first.
    pub fn edge_ids(&self, e: usize) -> (i64, i64) {
        let l = &self.edges[e].line;
        (l.from.min(l.to), l.from.max(l.to))
    }

    pub fn edge_label(&self, e: usize) -> String {
        let (a, b) = self.edge_ids(e);
        format!("{a}-{b}")
    }

    /// Signed incidence restricted to stateful buses, |E| x n.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n_edges(), self.n);
        for (i, edge) in self.edges.iter().enumerate() {
            if edge.tail < self.n {
                e[(i, edge.tail)] = 1.0;
            }
            if edge.head < self.n {
                e[(i, edge.head)] = -1.0;
            }
        }
        e
    }

    /// Post-fault injections of the stateful buses.
    pub fn injections(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, self.buses[..self.n].iter().map(|b| b.power))
    }

    /// Copy of the model whose injections are the pre-fault ones.
    pub fn with_pre_fault_injections(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.buses {
            if let Some(p) = b.pre_fault_power.take() {
                b.power = p;
            }
        }
        out
    }

    /// Edge angles `delta_e` for absolute stateful angles `theta`.
    pub fn edge_angles(&self, theta: &DVector<f64>) -> DVector<f64> {
        let at = |i: usize| if i < self.n { theta[i] } else { 0.0 };
        DVector::from_iterator(
            self.n_edges(),
            self.edges.iter().map(|e| at(e.tail) - at(e.head)),
        )
    }

    /// Net power leaving every stateful bus through the lines, skipping edge `removed`.
    pub fn line_outflow(&self, theta: &DVector<f64>, removed: Option<usize>) -> DVector<f64> {
        let delta = self.edge_angles(theta);
        let mut out = DVector::zeros(self.n);
        for (i, (edge, p)) in self.edges.iter().zip(&self.params).enumerate() {
            if Some(i) == removed {
                continue;
            }
            let f = p.s * p.c * (delta[i] + p.alpha).sin();
            if edge.tail < self.n {
                out[edge.tail] += f;
            }
            if edge.head < self.n {
                out[edge.head] -= f;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub m: usize,
    pub n: usize,
    /// Incidence over stateful buses, |E| x n.
    pub e: DMatrix<f64>,
    /// Maps the state to edge-angle deviations, |E| x (n + m).
    pub c: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Diagonal of S.
    pub s: DVector<f64>,
    /// Generator rows selector, m x n.
    pub s1: DMatrix<f64>,
    /// Load rows selector, (n - m) x n.
    pub s2: DMatrix<f64>,
    /// Generator inertias (diagonal of M1).
    pub m1: DVector<f64>,
    /// Generator dampings (diagonal of D1).
    pub d1: DVector<f64>,
    /// Generator inertias followed by load dampings (diagonal of D).
    pub d: DVector<f64>,
    pub coupling: DVector<f64>,
    pub phase: DVector<f64>,
    /// Equilibrium edge angles.
    pub edge_eq: DVector<f64>,
    pub has_infinite: bool,
}

pub fn build_system_matrices(model: &NetworkModel, eq: &Equilibrium) -> Result<SystemMatrices> {
    let (m, n) = (model.m, model.n);
    if eq.angles.len() != n {
        return Err(Error::Dimension(format!(
            "equilibrium has {} angles, network has {n} stateful buses",
            eq.angles.len()
        )));
    }
    let ne = model.n_edges();
    let big_n = n + m;
    let e = model.incidence();

    let mut c = DMatrix::zeros(ne, big_n);
    for k in 0..n {
        c.set_column(model.angle_index(k), &e.column(k));
    }

    let m1 = DVector::from_iterator(m, model.buses[..m].iter().map(|b| b.inertia));
    let d1 = DVector::from_iterator(m, model.buses[..m].iter().map(|b| b.damping));
    let d = DVector::from_iterator(
        n,
        model.buses[..n]
            .iter()
            .map(|b| if b.kind == BusKind::Generator { b.inertia } else { b.damping }),
    );

    let mut a = DMatrix::zeros(big_n, big_n);
    for k in 0..m {
        a[(k, m + k)] = 1.0;
        a[(m + k, m + k)] = -d1[k] / m1[k];
    }

    let s = DVector::from_iterator(ne, model.params.iter().map(|p| p.s));
    // D^-1 E^T S, one row per stateful bus.
    let mut flows = e.transpose();
    for k in 0..n {
        let mut row = flows.row_mut(k);
        row /= d[k];
    }
    for j in 0..ne {
        let mut col = flows.column_mut(j);
        col *= s[j];
    }
    let mut b = DMatrix::zeros(big_n, ne);
    for k in 0..m {
        b.set_row(m + k, &flows.row(k));
    }
    for k in m..n {
        b.set_row(m + k, &flows.row(k));
    }

    let mut s1 = DMatrix::zeros(m, n);
    for k in 0..m {
        s1[(k, k)] = 1.0;
    }
    let mut s2 = DMatrix::zeros(n - m, n);
    for k in m..n {
        s2[(k - m, k)] = 1.0;
    }

    Ok(SystemMatrices {
        m,
        n,
        e,
        c,
        a,
        b,
        s,
        s1,
        s2,
        m1,
        d1,
        d,
        coupling: DVector::from_iterator(ne, model.params.iter().map(|p| p.c)),
        phase: DVector::from_iterator(ne, model.params.iter().map(|p| p.alpha)),
        edge_eq: model.edge_angles(&eq.angles),
        has_infinite: model.has_infinite(),
    })
}

impl SystemMatrices {
    pub fn n_states(&self) -> usize {
        self.n + self.m
    }

    pub fn n_edges(&self) -> usize {
        self.s.len()
    }

    pub fn angle_index(&self, k: usize) -> usize {
        if k < self.m {
            k
        } else {
            k + self.m
        }
    }

    /// Absolute edge angles `C x + delta*_E`.
    pub fn edge_angles(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.edge_eq
    }

    /// `F(y) = c (sin(y + delta* + alpha) - sin(delta* + alpha))` per edge.
    pub fn flow_deviation(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_edges(), |e, _| {
            let (c, a, s0) = (self.coupling[e], self.phase[e], self.edge_eq[e]);
            c * ((y[e] + s0 + a).sin() - (s0 + a).sin())
        })
    }

    /// Right-hand side of the compact form.
    pub fn compact_rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b * self.flow_deviation(&(&self.c * x))
    }

    /// Orthonormal basis of the states that are not a rigid rotation of all
    /// angles. The identity when an infinite bus fixes the reference.
    pub fn reduction(&self) -> DMatrix<f64> {
        let big_n = self.n_states();
        if self.has_infinite {
            return DMatrix::identity(big_n, big_n);
        }
        let n = self.n;
        // Helmert basis of the complement of the all-ones vector in R^n.
        let mut angles = DMatrix::zeros(n, n - 1);
        for j in 0..n - 1 {
            let norm = (((j + 1) * (j + 2)) as f64).sqrt();
            for i in 0..=j {
                angles[(i, j)] = 1.0 / norm;
            }
            angles[(j + 1, j)] = -((j + 1) as f64) / norm;
        }
        let mut p = DMatrix::zeros(big_n, big_n - 1);
        for k in 0..n {
            let row = self.angle_index(k);
            for j in 0..n - 1 {
                p[(row, j)] = angles[(k, j)];
            }
        }
        for k in 0..self.m {
            p[(self.m + k, n - 1 + k)] = 1.0;
        }
        p
    }
}

/// Selector of the faulted line(s): the columns of `columns()` are unit
/// vectors of the selected edges and `matrix()` is their diagonal sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineSelector {
    pub edges: Vec<usize>,
    pub n_edges: usize,
}

impl LineSelector {
    pub fn is_robust(&self) -> bool {
        self.edges.len() > 1
    }

    /// Sum of the selected unit vectors; the unit vector itself for one line.
    pub fn vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_edges);
        for &e in &self.edges {
            v[e] = 1.0;
        }
        v
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.vector())
    }

    pub fn columns(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_edges, self.edges.len());
        for (j, &e) in self.edges.iter().enumerate() {
            d[(e, j)] = 1.0;
        }
        d
    }
}

pub fn line_selector(model: &NetworkModel, line: (i64, i64)) -> Result<LineSelector> {
    Ok(LineSelector { edges: vec![model.edge_index(line.0, line.1)?], n_edges: model.n_edges() })
}

pub fn robust_selector(model: &NetworkModel, lines: &[(i64, i64)]) -> Result<LineSelector> {
    if lines.is_empty() {
        return Err(Error::EmptyLineSet);
    }
    let edges: BTreeSet<usize> =
        lines.iter().map(|&(u, v)| model.edge_index(u, v)).collect::<Result<_>>()?;
    Ok(LineSelector { edges: edges.into_iter().collect(), n_edges: model.n_edges() })
}

/// Largest |edge angle| allowed inside the polytope Q.
pub const POLYTOPE_HALF_WIDTH: f64 = FRAC_PI_2;
