//! Clearing-time lower bounds `2 gamma (V_min - V(x_pre))` from solved
//! certificates, the two search procedures over gamma, and contingency screening.

use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::equilibrium::{
    angle_gap, compute_beta, pre_fault_offset, round_gap, solve_pre_fault, solve_sep_default, Equilibrium,
    SectorBound,
};
use crate::error::{Error, Result};
use crate::lmi::{
    max_gamma, solve_certificate_from, verify, Certificate, CertificateProblem, GammaMax, LmiSolveConfig,
    SolveOutcome,
};
use crate::lyapunov::{compute_vmin, in_polytope, in_region, LyapunovFunction, RegionEstimate};
use crate::netmodel::{
    build_system_matrices, line_selector, robust_selector, LineSelector, NetworkModel, SystemMatrices,
};
use crate::sdp::{LinearConstraint, PathOptions};

/// Everything derived from a network before any certificate is solved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: NetworkModel,
    pub eq_pre: Equilibrium,
    pub eq_post: Equilibrium,
    pub sector: SectorBound,
    pub mats: SystemMatrices,
    pub x_pre: DVector<f64>,
}

impl Scenario {
    /// `lambda` overrides the equilibrium gap (it must not be smaller).
    pub fn new(model: NetworkModel, lambda: Option<f64>) -> Result<Self> {
        let eq_post = solve_sep_default(&model)?;
        let eq_pre = solve_pre_fault(&model)?;
        let gap = angle_gap(&eq_post, &model).max(angle_gap(&eq_pre, &model));
        let lambda = match lambda {
            Some(l) => round_gap(gap, l)?,
            None => gap,
        };
        let sector = compute_beta(&model, lambda)?;
        let mats = build_system_matrices(&model, &eq_post)?;
        let x_pre = pre_fault_offset(&model, &eq_pre, &eq_post)?;
        Ok(Self { model, eq_pre, eq_post, sector, mats, x_pre })
    }

    pub fn beta(&self) -> f64 {
        self.sector.beta
    }

    pub fn selector(&self, lines: &[(i64, i64)]) -> Result<LineSelector> {
        match lines {
            [] => Err(Error::EmptyLineSet),
            [one] => line_selector(&self.model, *one),
            many => robust_selector(&self.model, many),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    Robust,
}

#[derive(Debug, Clone)]
pub struct CctEstimate {
    pub lines: Vec<(i64, i64)>,
    pub gamma: f64,
    pub vmin: f64,
    pub v_pre: f64,
    /// `vmin - v_pre`.
    pub vgap: f64,
    /// `2 gamma vgap`, clamped at zero.
    pub bound: f64,
    pub certificate: Certificate,
    pub procedure: Procedure,
}

/// `(vgap, bound)` for a certificate whose region minimum is `vmin`.
pub fn cct_bound(l: &LyapunovFunction, vmin: f64, x_pre: &DVector<f64>) -> Result<(f64, f64, f64)> {
    if !in_polytope(l.mats, x_pre) {
        return Err(Error::StateOutsidePolytope("pre-fault state".into()));
    }
    let v_pre = l.value(x_pre);
    let vgap = vmin - v_pre;
    let bound = 2.0 * l.cert.gamma * vgap;
    Ok((v_pre, vgap, bound.max(0.0)))
}

fn estimate(
    sc: &Scenario,
    lines: &[(i64, i64)],
    cert: Certificate,
    region: &RegionEstimate,
    procedure: Procedure,
) -> Result<CctEstimate> {
    let l = LyapunovFunction::new(&cert, &sc.mats);
    let (v_pre, vgap, bound) = cct_bound(&l, region.vmin, &sc.x_pre)?;
    Ok(CctEstimate {
        lines: lines.to_vec(),
        gamma: cert.gamma,
        vmin: region.vmin,
        v_pre,
        vgap,
        bound,
        certificate: cert,
        procedure,
    })
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite() && count >= 1) {
        return Err(Error::InvalidArgument(format!("bad gamma grid {lo}:{hi}:{count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| match i {
            0 => lo,
            i if i == count - 1 => hi,
            i => (a + (b - a) * i as f64 / (count - 1) as f64).exp(),
        })
        .collect())
}

/// 20 points per decade over `[1e-8, 1e2]` times the trace cap.
pub fn default_grid(mats: &SystemMatrices, cfg: &LmiSolveConfig) -> Vec<f64> {
    let kappa = cfg.trace_cap(mats);
    log_grid(1e-8 * kappa, 1e2 * kappa, 201).expect("valid default grid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GammaStatus {
    Feasible { bound: f64, vgap: f64 },
    Infeasible { lower_bound: f64 },
    /// Skipped because a smaller gamma was already infeasible.
    Dominated,
    Failed { message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaRecord {
    pub gamma: f64,
    #[serde(flatten)]
    pub status: GammaStatus,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Option<CctEstimate>,
    pub records: Vec<GammaRecord>,
}

fn better(candidate: &CctEstimate, best: &Option<CctEstimate>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.bound > b.bound + 1e-12
                || ((candidate.bound - b.bound).abs() <= 1e-12 && candidate.gamma < b.gamma)
        }
    }
}

/// Solves the certificate at every gamma of the grid and keeps the largest bound.
pub fn procedure1(
    sc: &Scenario,
    lines: &[(i64, i64)],
    grid: &[f64],
    cfg: &LmiSolveConfig,
) -> Result<SearchResult> {
    if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidArgument("gamma grid must be nonempty and positive".into()));
    }
    let sel = sc.selector(lines)?;
    let procedure = if sel.is_robust() { Procedure::Robust } else { Procedure::One };
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, b| grid[*a].total_cmp(&grid[*b]));

    let mut statuses: Vec<Option<GammaStatus>> = vec![None; grid.len()];
    let mut best: Option<CctEstimate> = None;
    let mut warm: Option<Certificate> = None;
    let mut infeasible_from: Option<f64> = None;
    for &i in &order {
        let gamma = grid[i];
        if infeasible_from.is_some_and(|g| gamma >= g) {
            statuses[i] = Some(GammaStatus::Dominated);
            continue;
        }
        let attempt = solve_certificate_from(&sc.mats, sc.beta(), gamma, &sel, cfg, warm.as_ref())
            .and_then(|outcome| match outcome {
                SolveOutcome::Infeasible { lower_bound } => Ok(Err(lower_bound)),
                SolveOutcome::Feasible(cert) => {
                    let region = compute_vmin(&LyapunovFunction::new(&cert, &sc.mats))?;
                    Ok(Ok(estimate(sc, lines, cert, &region, procedure)?))
                }
            });
        statuses[i] = Some(match attempt {
            Ok(Ok(est)) => {
                let status = GammaStatus::Feasible { bound: est.bound, vgap: est.vgap };
                warm = Some(est.certificate.clone());
                if better(&est, &best) {
                    best = Some(est);
                }
                status
            }
            Ok(Err(lower_bound)) => {
                infeasible_from = Some(gamma);
                GammaStatus::Infeasible { lower_bound }
            }
            Err(e) => GammaStatus::Failed { message: e.to_string() },
        });
    }
    let records = grid
        .iter()
        .zip(statuses)
        .map(|(g, s)| GammaRecord { gamma: *g, status: s.expect("every gamma visited") })
        .collect();
    Ok(SearchResult { best, records })
}

/// Distance in angle space from the post-fault equilibrium to the nearest face
/// `|delta_e| = pi/2`.
pub fn sphere_radius(sc: &Scenario) -> f64 {
    let e = sc.model.incidence();
    (0..e.nrows())
        .map(|i| (std::f64::consts::FRAC_PI_2 - sc.mats.edge_eq[i].abs()) / e.row(i).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Points on the angle sphere of radius `r` with zero velocities.
pub fn sphere_samples(sc: &Scenario, r: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let (n, big_n) = (sc.model.n, sc.model.n_states());
    (0..k)
        .map(|_| {
            let mut z: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
            let norm = z.norm();
            if norm > 0.0 {
                z /= norm;
            }
            let mut x = DVector::zeros(big_n);
            for j in 0..n {
                x[sc.model.angle_index(j)] = r * z[j];
            }
            x
        })
        .collect()
}

const CUT_ROUNDS: usize = 8;

/// Certificate at fixed gamma pushing `V_min - V(target)` up by Kelley cutting
/// planes: `V` is linear in `(Q, K)`, so each face minimizer gives a linear cut.
pub fn adapt_certificate(
    sc: &Scenario,
    sel: &LineSelector,
    start: &Certificate,
    target: &DVector<f64>,
    cfg: &LmiSolveConfig,
) -> Result<(Certificate, RegionEstimate)> {
    let problem = CertificateProblem::new(&sc.mats, sc.beta(), start.gamma, sel, cfg)?;
    let mut y = problem.encode(start);
    if !problem.barrier.is_strictly_feasible(&y) {
        match problem.solve(cfg.trace_cap(&sc.mats), Some(start), cfg)? {
            SolveOutcome::Feasible(c) => y = problem.encode(&c),
            SolveOutcome::Infeasible { .. } => {
                return Err(Error::SolverNonConvergence("starting certificate is not feasible".into()))
            }
        }
    }
    let psi = |x: &DVector<f64>| LyapunovFunction::new(start, &sc.mats).edge_terms(x);
    let row_of = |x: &DVector<f64>| problem.value_row(x, &psi(x));
    let target_row = row_of(target);

    let mut cert = problem.certificate(&y);
    let mut region = compute_vmin(&LyapunovFunction::new(&cert, &sc.mats))?;
    let margin = |c: &Certificate, r: &RegionEstimate| r.vmin - LyapunovFunction::new(c, &sc.mats).value(target);
    let mut best_val = margin(&cert, &region);
    let mut best = (cert.clone(), region.clone());
    let mut cuts: Vec<DVector<f64>> = region.faces.iter().map(|f| row_of(&f.state) - &target_row).collect();

    let dim = problem.dim();
    for _ in 0..CUT_ROUNDS {
        let mut aug = problem.barrier.with_extra_variable();
        for cut in &cuts {
            let a = cut.clone().insert_row(dim, -1.0);
            aug.linear.push(LinearConstraint { a, b: 0.0 });
        }
        let lowest = cuts.iter().map(|c| c.dot(&y)).fold(f64::INFINITY, f64::min);
        let tau0 = lowest - 1e-3 * lowest.abs().max(1e-9);
        let start_point = y.clone().insert_row(dim, tau0);
        if !aug.is_strictly_feasible(&start_point) {
            break;
        }
        let mut c = DVector::zeros(dim + 1);
        c[dim] = -1.0;
        let opts = PathOptions { gap_tol: 0.0, ..cfg.path };
        let point = aug.minimize(&c, &start_point, opts, |pt| pt.gap <= 1e-4 * pt.objective.abs().max(1e-12))?;
        y = point.y.rows(0, dim).into_owned();
        let upper = -point.objective;

        cert = problem.certificate(&y);
        region = compute_vmin(&LyapunovFunction::new(&cert, &sc.mats))?;
        let val = margin(&cert, &region);
        if val > best_val {
            best_val = val;
            best = (cert.clone(), region.clone());
        }
        if upper - best_val <= 1e-3 * best_val.abs() {
            break;
        }
        cuts.extend(region.faces.iter().map(|f| row_of(&f.state) - &target_row));
    }
    Ok(best)
}

/// Per-contingency RNG stream, independent of scheduling.
pub fn contingency_rng(seed: u64, sel: &LineSelector) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = sel.edges.iter().fold(0u64, |acc, e| acc.wrapping_mul(1_000_003).wrapping_add(*e as u64 + 1));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub angles_norm: f64,
    pub covered: bool,
    pub gamma: Option<f64>,
    pub bound: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Procedure2Result {
    pub best: Option<CctEstimate>,
    pub radius: f64,
    /// Gamma at which the certificates were adapted (procedure 1's best).
    pub adapt_gamma: Option<f64>,
    pub samples: Vec<SampleRecord>,
}

/// Sphere sampling around the post-fault equilibrium. Each sample's
/// certificate is adapted at procedure 1's best gamma, kept only if it covers
/// the sample, and then re-maximized over gamma.
pub fn procedure2(
    sc: &Scenario,
    lines: &[(i64, i64)],
    k: usize,
    grid: &[f64],
    seed: u64,
    cfg: &LmiSolveConfig,
) -> Result<Procedure2Result> {
    if k == 0 {
        return Err(Error::InvalidArgument("procedure 2 needs at least one sample".into()));
    }
    let sel = sc.selector(lines)?;
    let radius = sphere_radius(sc);
    let first = procedure1(sc, lines, grid, cfg)?;
    let Some(seed_est) = first.best else {
        return Ok(Procedure2Result { best: None, radius, adapt_gamma: None, samples: Vec::new() });
    };
    let mut rng = contingency_rng(seed, &sel);
    let mut best: Option<CctEstimate> = None;
    let mut samples = Vec::with_capacity(k);
    for x in sphere_samples(sc, radius, k, &mut rng) {
        let angles_norm = x.norm();
        let mut record = SampleRecord { angles_norm, covered: false, gamma: None, bound: None, message: None };
        let outcome = (|| -> Result<Option<CctEstimate>> {
            let (cert, region) = adapt_certificate(sc, &sel, &seed_est.certificate, &x, cfg)?;
            if !in_region(&LyapunovFunction::new(&cert, &sc.mats), &region, &x) {
                return Ok(None);
            }
            let gmax = match max_gamma(&sc.mats, sc.beta(), &sel, &cert.q, &cert.k, &cert.h, cfg)? {
                GammaMax::Finite(g) => g,
                GammaMax::Unbounded => return Err(Error::Internal("fault columns vanish".into())),
            };
            let cert = cert.with_gamma(gmax.max(cert.gamma));
            verify(&sc.mats, &cert, &sel, cfg.slack_tol)?;
            Ok(Some(estimate(sc, lines, cert, &region, Procedure::Two)?))
        })();
        match outcome {
            Ok(Some(est)) => {
                record.covered = true;
                record.gamma = Some(est.gamma);
                record.bound = Some(est.bound);
                if better(&est, &best) {
                    best = Some(est);
                }
            }
            Ok(None) => {}
            Err(e) => record.message = Some(e.to_string()),
        }
        samples.push(record);
    }
    Ok(Procedure2Result { best, radius, adapt_gamma: Some(seed_est.gamma), samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedStable,
    Inconclusive,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::CertifiedStable => "certified-stable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreeningRecord {
    pub line: String,
    pub verdict: Verdict,
    pub gamma: Option<f64>,
    pub vmin: Option<f64>,
    pub v_pre: Option<f64>,
    pub bound: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreeningConfig {
    pub clearing_time: f64,
    pub procedure: Procedure,
    pub grid: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
    pub eps_q: f64,
    pub eps_h: f64,
    pub trace_cap: f64,
    pub slack_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreeningReport {
    pub network_sha256: String,
    pub timestamp: u64,
    pub config: ScreeningConfig,
    pub records: Vec<ScreeningRecord>,
}

fn opt17(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

impl ScreeningReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("line,verdict,gamma,vmin,v_pre,bound,status\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.line,
                r.verdict.label(),
                opt17(r.gamma),
                opt17(r.vmin),
                opt17(r.v_pre),
                opt17(r.bound),
                r.status.replace([',', '\n'], ";")
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn any_inconclusive(&self) -> bool {
        self.records.iter().any(|r| r.verdict == Verdict::Inconclusive)
    }
}

pub fn network_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Strict comparison: certified only when the clearing time is below the bound.
fn record_from(
    line: String,
    clearing_time: f64,
    est: Option<(&CctEstimate, &Scenario, &LineSelector)>,
    cfg: &LmiSolveConfig,
    status: String,
) -> ScreeningRecord {
    let Some((est, sc, sel)) = est else {
        return ScreeningRecord {
            line,
            verdict: Verdict::Inconclusive,
            gamma: None,
            vmin: None,
            v_pre: None,
            bound: None,
            status,
        };
    };
    let reverified = verify(&sc.mats, &est.certificate, sel, cfg.slack_tol).is_ok();
    let verdict = if clearing_time < est.bound && reverified {
        Verdict::CertifiedStable
    } else {
        Verdict::Inconclusive
    };
    let status = if reverified { status } else { format!("{status}; re-verification failed") };
    ScreeningRecord {
        line,
        verdict,
        gamma: Some(est.gamma),
        vmin: Some(est.vmin),
        v_pre: Some(est.v_pre),
        bound: Some(est.bound),
        status,
    }
}

#[derive(Debug, Clone)]
pub struct ScreenOptions {
    pub clearing_time: f64,
    pub procedure: Procedure,
    /// `None` uses the default grid.
    pub grid: Option<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
    pub jobs: usize,
    pub lmi: LmiSolveConfig,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            clearing_time: 0.0,
            procedure: Procedure::One,
            grid: None,
            samples: 8,
            seed: 0,
            jobs: 1,
            lmi: LmiSolveConfig::default(),
        }
    }
}

fn config_of(sc: &Scenario, opts: &ScreenOptions, grid: &[f64]) -> ScreeningConfig {
    ScreeningConfig {
        clearing_time: opts.clearing_time,
        procedure: opts.procedure,
        grid: grid.to_vec(),
        samples: opts.samples,
        seed: opts.seed,
        lambda: sc.sector.lambda,
        beta: sc.sector.beta,
        eps_q: opts.lmi.eps_q,
        eps_h: opts.lmi.eps_h,
        trace_cap: opts.lmi.trace_cap(&sc.mats),
        slack_tol: opts.lmi.slack_tol,
    }
}

fn screen_one(sc: &Scenario, line: (i64, i64), grid: &[f64], opts: &ScreenOptions) -> ScreeningRecord {
    let label = format!("{}-{}", line.0, line.1);
    let sel = match sc.selector(&[line]) {
        Ok(s) => s,
        Err(e) => return record_from(label, opts.clearing_time, None, &opts.lmi, format!("error: {e}")),
    };
    let (best, status) = match opts.procedure {
        Procedure::Two => match procedure2(sc, &[line], opts.samples, grid, opts.seed, &opts.lmi) {
            Ok(r) => {
                let covered = r.samples.iter().filter(|s| s.covered).count();
                let status = match &r.best {
                    Some(_) => format!("ok (surrogate adaptation; {covered}/{} samples covered)", r.samples.len()),
                    None if r.adapt_gamma.is_none() => "infeasible on every gamma".to_string(),
                    None => "no sample covered".to_string(),
                };
                (r.best, status)
            }
            Err(e) => (None, format!("error: {e}")),
        },
        _ => match procedure1(sc, &[line], grid, &opts.lmi) {
            Ok(r) => {
                let status = if r.best.is_some() { "ok".to_string() } else { "infeasible on every gamma".to_string() };
                (r.best, status)
            }
            Err(e) => (None, format!("error: {e}")),
        },
    };
    record_from(label, opts.clearing_time, best.as_ref().map(|b| (b, sc, &sel)), &opts.lmi, status)
}

fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Screens every contingency on its own; records follow the input order.
pub fn screen(
    sc: &Scenario,
    network_text: &str,
    contingencies: &[(i64, i64)],
    opts: &ScreenOptions,
) -> Result<ScreeningReport> {
    if !(opts.clearing_time >= 0.0 && opts.clearing_time.is_finite()) {
        return Err(Error::InvalidArgument("clearing time must be finite and non-negative".into()));
    }
    let grid = opts.grid.clone().unwrap_or_else(|| default_grid(&sc.mats, &opts.lmi));
    let records = run_pool(opts.jobs, || {
        contingencies.par_iter().map(|line| screen_one(sc, *line, &grid, opts)).collect::<Vec<_>>()
    })?;
    Ok(ScreeningReport {
        network_sha256: network_hash(network_text),
        timestamp: unix_now(),
        config: config_of(sc, opts, &grid),
        records,
    })
}

/// One certificate covering every line of `lines`.
pub fn robust_screen(
    sc: &Scenario,
    network_text: &str,
    lines: &[(i64, i64)],
    opts: &ScreenOptions,
) -> Result<ScreeningReport> {
    if lines.is_empty() {
        return Err(Error::EmptyLineSet);
    }
    let grid = opts.grid.clone().unwrap_or_else(|| default_grid(&sc.mats, &opts.lmi));
    let sel = sc.selector(lines)?;
    let (best, status) = match procedure1(sc, lines, &grid, &opts.lmi) {
        Ok(r) if r.best.is_some() => (r.best, "ok (shared certificate)".to_string()),
        Ok(_) => (None, "infeasible on every gamma".to_string()),
        Err(e) => (None, format!("error: {e}")),
    };
    let records = lines
        .iter()
        .map(|l| {
            let est = best.as_ref().map(|b| (b, sc, &sel));
            record_from(format!("{}-{}", l.0, l.1), opts.clearing_time, est, &opts.lmi, status.clone())
        })
        .collect();
    let mut config = config_of(sc, opts, &grid);
    config.procedure = Procedure::Robust;
    Ok(ScreeningReport { network_sha256: network_hash(network_text), timestamp: unix_now(), config, records })
}
