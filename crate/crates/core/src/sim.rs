//! Time-domain oracle: fixed-step RK4 on the full nonlinear swing and load
//! dynamics, stability classification and clearing-time bisection.
//!
//! States are deviations from the post-fault equilibrium in the usual layout.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::netmodel::{BusKind, NetworkModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    /// Post-fault duration.
    pub horizon: f64,
    /// Stability tolerance on the final deviation.
    pub tol: f64,
    /// Escape bound on |edge angle|.
    pub escape: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 20.0, tol: 1e-3, escape: PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    FaultOn,
    PostFault,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub phases: Vec<Phase>,
    /// Kinetic energy of the generators at every sample.
    pub kinetic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictKind {
    Stable,
    Unstable,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub kind: VerdictKind,
    pub final_deviation: f64,
    pub escaped: bool,
}

fn field(model: &NetworkModel, eq: &Equilibrium, removed: Option<usize>, x: &DVector<f64>) -> DVector<f64> {
    let (m, n) = (model.m, model.n);
    let mut theta = eq.angles.clone();
    for k in 0..n {
        theta[k] += x[model.angle_index(k)];
    }
    let out = model.line_outflow(&theta, removed);
    let mut dx = DVector::zeros(model.n_states());
    for (k, bus) in model.buses[..n].iter().enumerate() {
        let net = bus.power - out[k];
        if bus.kind == BusKind::Generator {
            let w = x[m + k];
            dx[k] = w;
            dx[m + k] = (net - bus.damping * w) / bus.inertia;
        } else {
            dx[k + m] = net / bus.damping;
        }
    }
    dx
}

/// Nonlinear post-fault dynamics around `eq`.
pub fn rhs_postfault(model: &NetworkModel, eq: &Equilibrium, x: &DVector<f64>) -> DVector<f64> {
    field(model, eq, None, x)
}

/// Dynamics with edge `edge` open; injections stay at their post-fault values.
pub fn rhs_faulton(model: &NetworkModel, eq: &Equilibrium, edge: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    if edge >= model.n_edges() {
        return Err(Error::InvalidArgument(format!("edge index {edge} out of range")));
    }
    Ok(field(model, eq, Some(edge), x))
}

fn rk4_step(rhs: &impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = rhs(x);
    let k2 = rhs(&(x + &k1 * (h / 2.0)));
    let k3 = rhs(&(x + &k2 * (h / 2.0)));
    let k4 = rhs(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

impl Trajectory {
    fn push(&mut self, t: f64, x: DVector<f64>, phase: Phase, kinetic: f64) {
        self.times.push(t);
        self.states.push(x);
        self.phases.push(phase);
        self.kinetic.push(kinetic);
    }

    /// Advances by `duration` with step `dt` (last step shortened to land on the end).
    /// Returns false when `stop` fired.
    fn extend(
        &mut self,
        rhs: impl Fn(&DVector<f64>) -> DVector<f64>,
        duration: f64,
        dt: f64,
        phase: Phase,
        kinetic: &impl Fn(&DVector<f64>) -> f64,
        stop: &impl Fn(&DVector<f64>) -> bool,
    ) -> Result<bool> {
        let full = (duration / dt + 1e-9).floor() as usize;
        let rest = duration - full as f64 * dt;
        let t0 = *self.times.last().expect("trajectory has an initial sample");
        let mut x = self.states.last().expect("trajectory has an initial sample").clone();
        let steps = full + usize::from(rest > 1e-12 * dt.max(1.0));
        for i in 0..steps {
            let h = if i < full { dt } else { rest };
            x = rk4_step(&rhs, &x, h);
            let t = if i < full { t0 + (i + 1) as f64 * dt } else { t0 + duration };
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(t));
            }
            let e = kinetic(&x);
            self.push(t, x.clone(), phase, e);
            if stop(&x) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// CSV with absolute angles and generator velocities.
    pub fn to_csv(&self, model: &NetworkModel, eq: &Equilibrium) -> String {
        let mut out = String::from("t");
        for k in 1..=model.n {
            out.push_str(&format!(",delta_{k}"));
        }
        for k in 1..=model.m {
            out.push_str(&format!(",omega_{k}"));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t:.16e}"));
            for k in 0..model.n {
                out.push_str(&format!(",{:.16e}", eq.angles[k] + x[model.angle_index(k)]));
            }
            for k in 0..model.m {
                out.push_str(&format!(",{:.16e}", x[model.m + k]));
            }
            out.push('\n');
        }
        out
    }
}

/// Fixed-step RK4 of an autonomous field from `x0` over `[0, horizon]`.
pub fn integrate(
    rhs: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && horizon >= dt) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and horizon >= dt, got {dt}, {horizon}")));
    }
    let mut traj = Trajectory::default();
    traj.push(0.0, x0.clone(), Phase::PostFault, 0.0);
    traj.extend(rhs, horizon, dt, Phase::PostFault, &|_| 0.0, &|_| false)?;
    Ok(traj)
}

fn kinetic_energy(model: &NetworkModel, x: &DVector<f64>) -> f64 {
    (0..model.m).map(|k| 0.5 * model.buses[k].inertia * x[model.m + k].powi(2)).sum()
}

fn edge_angles(model: &NetworkModel, eq: &Equilibrium, x: &DVector<f64>) -> DVector<f64> {
    let mut theta = eq.angles.clone();
    for k in 0..model.n {
        theta[k] += x[model.angle_index(k)];
    }
    model.edge_angles(&theta)
}

/// Fault-on dynamics for `clearing` seconds from `x0`, then the post-fault
/// dynamics for `params.horizon`. With `stop_on_escape`, integration ends as
/// soon as an edge angle leaves the escape bound.
pub fn simulate_clearing(
    model: &NetworkModel,
    eq_post: &Equilibrium,
    edge: usize,
    x0: &DVector<f64>,
    clearing: f64,
    params: &SimParams,
    stop_on_escape: bool,
) -> Result<Trajectory> {
    if edge >= model.n_edges() {
        return Err(Error::InvalidArgument(format!("edge index {edge} out of range")));
    }
    if !(clearing >= 0.0 && params.dt > 0.0 && params.horizon >= params.dt) {
        return Err(Error::InvalidArgument("invalid clearing time or step".into()));
    }
    let kinetic = |x: &DVector<f64>| kinetic_energy(model, x);
    let escaped = |x: &DVector<f64>| stop_on_escape && edge_angles(model, eq_post, x).amax() > params.escape;
    let mut traj = Trajectory::default();
    traj.push(0.0, x0.clone(), Phase::FaultOn, kinetic(x0));
    if clearing > 0.0
        && !traj.extend(
            |x| field(model, eq_post, Some(edge), x),
            clearing,
            params.dt,
            Phase::FaultOn,
            &kinetic,
            &escaped,
        )?
    {
        return Ok(traj);
    }
    traj.extend(|x| field(model, eq_post, None, x), params.horizon, params.dt, Phase::PostFault, &kinetic, &escaped)?;
    Ok(traj)
}

/// Rotation-free distance from the equilibrium: edge-angle and velocity deviations.
fn deviation(model: &NetworkModel, x: &DVector<f64>) -> f64 {
    let mut theta = DVector::zeros(model.n);
    for k in 0..model.n {
        theta[k] = x[model.angle_index(k)];
    }
    let mut dev = model.incidence() * theta;
    dev.iter_mut().for_each(|v| *v = v.abs());
    let vel = (0..model.m).map(|k| x[model.m + k].abs()).fold(0.0, f64::max);
    dev.iter().copied().fold(vel, f64::max)
}

/// Stable when the last 10% of the run stays within `tol`; unstable on escape
/// or when the deviation in the last 10% exceeds the one just before it.
pub fn classify(
    traj: &Trajectory,
    model: &NetworkModel,
    eq_post: &Equilibrium,
    tol: f64,
    escape: f64,
) -> StabilityVerdict {
    let escaped = traj.states.iter().any(|x| edge_angles(model, eq_post, x).amax() > escape);
    let final_deviation = traj.states.last().map_or(0.0, |x| deviation(model, x));
    if escaped {
        return StabilityVerdict { kind: VerdictKind::Unstable, final_deviation, escaped };
    }
    let (t0, t1) = match (traj.times.first(), traj.times.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return StabilityVerdict { kind: VerdictKind::Undetermined, final_deviation, escaped },
    };
    let span = t1 - t0;
    let window_max = |from: f64, to: f64| {
        traj.times
            .iter()
            .zip(&traj.states)
            .filter(|(t, _)| **t >= from && **t <= to)
            .map(|(_, x)| deviation(model, x))
            .fold(0.0, f64::max)
    };
    let last = window_max(t1 - 0.1 * span, t1);
    let before = window_max(t1 - 0.2 * span, t1 - 0.1 * span);
    let kind = if last <= tol {
        VerdictKind::Stable
    } else if last > before {
        VerdictKind::Unstable
    } else {
        VerdictKind::Undetermined
    };
    StabilityVerdict { kind, final_deviation, escaped }
}

/// Verdict of clearing the fault on `edge` after `clearing` seconds.
pub fn probe(
    model: &NetworkModel,
    eq_post: &Equilibrium,
    edge: usize,
    x0: &DVector<f64>,
    clearing: f64,
    params: &SimParams,
) -> Result<StabilityVerdict> {
    let traj = simulate_clearing(model, eq_post, edge, x0, clearing, params, true)?;
    let post = Trajectory {
        times: traj.times.iter().zip(&traj.phases).filter(|(_, p)| **p == Phase::PostFault).map(|(t, _)| *t).collect(),
        states: traj.states.iter().zip(&traj.phases).filter(|(_, p)| **p == Phase::PostFault).map(|(x, _)| x.clone()).collect(),
        phases: Vec::new(),
        kinetic: Vec::new(),
    };
    let mut verdict = classify(&post, model, eq_post, params.tol, params.escape);
    if traj.states.iter().any(|x| edge_angles(model, eq_post, x).amax() > params.escape) {
        verdict.kind = VerdictKind::Unstable;
        verdict.escaped = true;
    }
    Ok(verdict)
}

/// Like [`probe`], but an undetermined verdict is retried with the horizon
/// doubled until it resolves or the horizon would exceed `max_horizon`.
pub fn probe_settled(
    model: &NetworkModel,
    eq_post: &Equilibrium,
    edge: usize,
    x0: &DVector<f64>,
    clearing: f64,
    params: &SimParams,
    max_horizon: f64,
) -> Result<StabilityVerdict> {
    let mut p = *params;
    loop {
        let verdict = probe(model, eq_post, edge, x0, clearing, &p)?;
        if verdict.kind != VerdictKind::Undetermined || 2.0 * p.horizon > max_horizon {
            return Ok(verdict);
        }
        p.horizon *= 2.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueCctConfig {
    /// Clearing time known (or claimed) to be stable; usually a certified bound.
    pub start: f64,
    /// Largest clearing time tried while growing the bracket.
    pub cap: f64,
    pub tol: f64,
    pub sim: SimParams,
    /// Longest horizon used when a probe has not settled within `sim.horizon`.
    pub max_horizon: f64,
}

impl Default for TrueCctConfig {
    fn default() -> Self {
        Self { start: 0.0, cap: 10.0, tol: 1e-3, sim: SimParams::default(), max_horizon: 160.0 }
    }
}

/// Bisection on the clearing time. Probes still undetermined at `max_horizon`
/// count as unstable.
pub fn true_cct(
    model: &NetworkModel,
    eq_post: &Equilibrium,
    edge: usize,
    x0: &DVector<f64>,
    cfg: &TrueCctConfig,
) -> Result<f64> {
    let stable = |tau: f64| -> Result<bool> {
        Ok(probe_settled(model, eq_post, edge, x0, tau, &cfg.sim, cfg.max_horizon)?.kind == VerdictKind::Stable)
    };
    let mut lo = cfg.start.max(0.0);
    if !stable(lo)? {
        return Err(Error::BracketUnstable(lo));
    }
    let mut hi = if lo > 0.0 { 2.0 * lo } else { 0.05 };
    loop {
        if hi >= cfg.cap {
            hi = cfg.cap;
            if stable(hi)? {
                return Err(Error::CctAboveCap(cfg.cap));
            }
            break;
        }
        if !stable(hi)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beyond = (1.5 * hi).min(cfg.cap.max(hi));
    if beyond > hi && stable(beyond)? {
        return Err(Error::NonMonotone(format!(
            "unstable at {hi:.6} s but stable at {beyond:.6} s"
        )));
    }
    Ok(0.5 * (lo + hi))
}
