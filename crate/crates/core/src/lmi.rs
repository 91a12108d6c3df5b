//! Matrix inequalities certifying decay of the Lyapunov family and bounding its
//! growth during a fault, and the solvers producing `(Q, K, H)`.
//!
//! Block order of every assembly is `x | F | fault columns`. With
//! `At = A'Q + QA - 2 beta C'HC` and `R = QB - (1 + beta) C'H - (KCA)'` the
//! stability matrix is `[[At, R], [R', -2H - (KCB + B'C'K)]]`. The fault term is
//! `U = [Q B D; -K C B D]`; the `KCB` entries vanish when `C B = 0`, i.e. for
//! networks without load buses.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::netmodel::{LineSelector, SystemMatrices};
use crate::sdp::{BarrierProblem, LinearConstraint, LmiBlock, NewtonOptions, PathOptions, Phase1};

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub q: DMatrix<f64>,
    /// Diagonal of K.
    pub k: DVector<f64>,
    /// Diagonal of H.
    pub h: DVector<f64>,
    pub gamma: f64,
    pub beta: f64,
}

impl Certificate {
    pub fn scaled(&self, c: f64) -> Self {
        Self { q: &self.q * c, k: &self.k * c, h: &self.h * c, gamma: self.gamma / c, beta: self.beta }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmiSolveConfig {
    /// Floor on the eigenvalues of Q (in the rotation-free coordinates).
    pub eps_q: f64,
    /// Floor on every diagonal entry of H.
    pub eps_h: f64,
    /// Cap on trace(Q); `None` uses the state dimension n + m.
    pub trace_norm: Option<f64>,
    /// Relative NSD tolerance: lambda_max <= slack_tol * max|entry|.
    pub slack_tol: f64,
    /// Relative width at which the gamma bisection stops.
    pub bisect_tol: f64,
    /// Radius of the ball bounding the search space.
    pub radius: f64,
    pub path: PathOptions,
}

impl Default for LmiSolveConfig {
    fn default() -> Self {
        Self {
            eps_q: 1e-6,
            eps_h: 1e-8,
            trace_norm: None,
            slack_tol: 1e-8,
            bisect_tol: 1e-12,
            radius: 1e6,
            path: PathOptions::default(),
        }
    }
}

impl LmiSolveConfig {
    pub fn trace_cap(&self, mats: &SystemMatrices) -> f64 {
        self.trace_norm.unwrap_or(mats.n_states() as f64)
    }
}

fn check_dims(mats: &SystemMatrices, q: &DMatrix<f64>, k: &DVector<f64>, h: &DVector<f64>) -> Result<()> {
    let (nn, ne) = (mats.n_states(), mats.n_edges());
    if q.shape() != (nn, nn) || k.len() != ne || h.len() != ne {
        return Err(Error::Dimension(format!(
            "certificate shapes Q {:?}, K {}, H {} do not fit {nn} states and {ne} edges",
            q.shape(),
            k.len(),
            h.len()
        )));
    }
    Ok(())
}

fn diag_left(d: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, v) in d.iter().enumerate() {
        let mut row = out.row_mut(i);
        row *= *v;
    }
    out
}

pub fn assemble_stability_lmi(
    mats: &SystemMatrices,
    beta: f64,
    q: &DMatrix<f64>,
    k: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_dims(mats, q, k, h)?;
    let (nn, ne) = (mats.n_states(), mats.n_edges());
    let ct = mats.c.transpose();
    let hc = diag_left(h, &mats.c);
    let atil = mats.a.transpose() * q + q * &mats.a - (&ct * &hc) * (2.0 * beta);
    let kca = diag_left(k, &(&mats.c * &mats.a));
    let r = q * &mats.b - diag_left(h, &mats.c).transpose() * (1.0 + beta) - kca.transpose();
    let kcb = diag_left(k, &(&mats.c * &mats.b));
    let ff = -DMatrix::from_diagonal(h) * 2.0 - (&kcb + kcb.transpose());
    let mut m = DMatrix::zeros(nn + ne, nn + ne);
    m.view_mut((0, 0), (nn, nn)).copy_from(&atil);
    m.view_mut((0, nn), (nn, ne)).copy_from(&r);
    m.view_mut((nn, 0), (ne, nn)).copy_from(&r.transpose());
    m.view_mut((nn, nn), (ne, ne)).copy_from(&ff);
    Ok(symmetrize(m))
}

/// `U = [Q B D; -K C B D]`, one column per selected line.
pub fn fault_columns(
    mats: &SystemMatrices,
    sel: &LineSelector,
    q: &DMatrix<f64>,
    k: &DVector<f64>,
) -> DMatrix<f64> {
    let (nn, ne) = (mats.n_states(), mats.n_edges());
    let bd = &mats.b * sel.columns();
    let top = q * &bd;
    let bottom = -diag_left(k, &(&mats.c * &bd));
    let mut u = DMatrix::zeros(nn + ne, sel.edges.len());
    u.view_mut((0, 0), (nn, sel.edges.len())).copy_from(&top);
    u.view_mut((nn, 0), (ne, sel.edges.len())).copy_from(&bottom);
    u
}

/// Stability matrix plus `gamma U U'`.
pub fn assemble_bounding_lmi(
    mats: &SystemMatrices,
    beta: f64,
    gamma: f64,
    sel: &LineSelector,
    q: &DMatrix<f64>,
    k: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be non-negative")));
    }
    let m = assemble_stability_lmi(mats, beta, q, k, h)?;
    let u = fault_columns(mats, sel, q, k);
    Ok(symmetrize(m + (&u * u.transpose()) * gamma))
}

/// `[[M, sqrt(gamma) U], [sqrt(gamma) U', -I]]`; NSD exactly when the bounding
/// matrix is.
pub fn assemble_schur_lmi(
    mats: &SystemMatrices,
    beta: f64,
    gamma: f64,
    sel: &LineSelector,
    q: &DMatrix<f64>,
    k: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be non-negative")));
    }
    let m = assemble_stability_lmi(mats, beta, q, k, h)?;
    let u = fault_columns(mats, sel, q, k) * gamma.sqrt();
    let (s, f) = (m.nrows(), u.ncols());
    let mut out = DMatrix::zeros(s + f, s + f);
    out.view_mut((0, 0), (s, s)).copy_from(&m);
    out.view_mut((0, s), (s, f)).copy_from(&u);
    out.view_mut((s, 0), (f, s)).copy_from(&u.transpose());
    out.view_mut((s, s), (f, f)).fill_with_identity();
    out.view_mut((s, s), (f, f)).neg_mut();
    Ok(out)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix.
pub fn psd_slack(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension("matrix is not square".into()));
    }
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * (1.0 + m.amax()) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(symmetrize(m.clone()).symmetric_eigenvalues().max())
}

/// NSD test relative to the magnitude of `m`.
pub fn is_nsd(m: &DMatrix<f64>, rel_tol: f64) -> Result<bool> {
    Ok(psd_slack(m)? <= rel_tol * m.amax())
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Feasible(Certificate),
    Infeasible { lower_bound: f64 },
}

/// Layout of the decision vector: upper triangle of the reduced Q, then K, then H.
struct Layout {
    d: usize,
    ne: usize,
    pairs: Vec<(usize, usize)>,
}

impl Layout {
    fn new(d: usize, ne: usize) -> Self {
        let pairs = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
        Self { d, ne, pairs }
    }

    fn dim(&self) -> usize {
        self.pairs.len() + 2 * self.ne
    }

    fn k_offset(&self) -> usize {
        self.pairs.len()
    }

    fn h_offset(&self) -> usize {
        self.pairs.len() + self.ne
    }

    fn q_basis(&self, idx: usize) -> DMatrix<f64> {
        let (i, j) = self.pairs[idx];
        let mut e = DMatrix::zeros(self.d, self.d);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }

    fn split(&self, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut q = DMatrix::zeros(self.d, self.d);
        for (idx, &(i, j)) in self.pairs.iter().enumerate() {
            q[(i, j)] = y[idx];
            q[(j, i)] = y[idx];
        }
        (q, y.rows(self.k_offset(), self.ne).into_owned(), y.rows(self.h_offset(), self.ne).into_owned())
    }

    fn join(&self, q: &DMatrix<f64>, k: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        for (idx, &(i, j)) in self.pairs.iter().enumerate() {
            y[idx] = 0.5 * (q[(i, j)] + q[(j, i)]);
        }
        y.rows_mut(self.k_offset(), self.ne).copy_from(k);
        y.rows_mut(self.h_offset(), self.ne).copy_from(h);
        y
    }
}

/// The constraint set of the certificate problem in rotation-free coordinates.
pub struct CertificateProblem {
    pub barrier: BarrierProblem,
    layout: Layout,
    p: DMatrix<f64>,
    gamma: f64,
    beta: f64,
}

impl CertificateProblem {
    pub fn new(
        mats: &SystemMatrices,
        beta: f64,
        gamma: f64,
        sel: &LineSelector,
        cfg: &LmiSolveConfig,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} must be positive")));
        }
        let (nn, ne) = (mats.n_states(), mats.n_edges());
        let p = mats.reduction();
        let d = p.ncols();
        let layout = Layout::new(d, ne);
        let dim = layout.dim();
        let nf = sel.edges.len();
        let size = d + ne + nf;

        let mut t = DMatrix::zeros(nn + ne + nf, size);
        t.view_mut((0, 0), (nn, d)).copy_from(&p);
        t.view_mut((nn, d), (ne + nf, ne + nf)).fill_with_identity();
        let tt = t.transpose();
        let reduced = |q: &DMatrix<f64>, k: &DVector<f64>, h: &DVector<f64>| -> Result<DMatrix<f64>> {
            let full = assemble_schur_lmi(mats, beta, gamma, sel, q, k, h)?;
            Ok(&tt * full * &t)
        };
        let zq = DMatrix::zeros(nn, nn);
        let ze = DVector::zeros(ne);
        let base = reduced(&zq, &ze, &ze)?;
        let mut coeffs = Vec::with_capacity(dim);
        for idx in 0..layout.pairs.len() {
            let q = &p * layout.q_basis(idx) * p.transpose();
            coeffs.push(-(reduced(&q, &ze, &ze)? - &base));
        }
        for e in 0..ne {
            let mut k = ze.clone();
            k[e] = 1.0;
            coeffs.push(-(reduced(&zq, &k, &ze)? - &base));
        }
        for e in 0..ne {
            let mut h = ze.clone();
            h[e] = 1.0;
            coeffs.push(-(reduced(&zq, &ze, &h)? - &base));
        }
        let mut barrier = BarrierProblem::new(dim, cfg.radius);
        barrier.blocks.push(LmiBlock { constant: -base, coeffs });

        let mut qcoeffs: Vec<DMatrix<f64>> = (0..layout.pairs.len()).map(|i| layout.q_basis(i)).collect();
        qcoeffs.resize(dim, DMatrix::zeros(d, d));
        barrier
            .blocks
            .push(LmiBlock { constant: -DMatrix::identity(d, d) * cfg.eps_q, coeffs: qcoeffs });

        for e in 0..ne {
            let mut a = DVector::zeros(dim);
            a[layout.k_offset() + e] = 1.0;
            barrier.linear.push(LinearConstraint { a, b: 0.0 });
        }
        for e in 0..ne {
            let mut a = DVector::zeros(dim);
            a[layout.h_offset() + e] = 1.0;
            barrier.linear.push(LinearConstraint { a, b: -cfg.eps_h });
        }
        let mut a = DVector::zeros(dim);
        for (idx, &(i, j)) in layout.pairs.iter().enumerate() {
            if i == j {
                a[idx] = -1.0;
            }
        }
        barrier.linear.push(LinearConstraint { a, b: cfg.trace_cap(mats) });

        Ok(Self { barrier, layout, p, gamma, beta })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn certificate(&self, y: &DVector<f64>) -> Certificate {
        let (qr, k, h) = self.layout.split(y);
        Certificate { q: &self.p * qr * self.p.transpose(), k, h, gamma: self.gamma, beta: self.beta }
    }

    pub fn encode(&self, cert: &Certificate) -> DVector<f64> {
        let qr = self.p.transpose() * &cert.q * &self.p;
        self.layout.join(&qr, &cert.k, &cert.h)
    }

    /// Coefficients of `y` in `x' Q x / 2 - sum_e K_e w_e`, where `w_e` are given
    /// per-edge weights; used to express the Lyapunov function linearly in `y`.
    pub fn value_row(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let z = self.p.transpose() * x;
        let mut row = DVector::zeros(self.dim());
        for (idx, &(i, j)) in self.layout.pairs.iter().enumerate() {
            row[idx] = if i == j { 0.5 * z[i] * z[i] } else { z[i] * z[j] };
        }
        for e in 0..self.layout.ne {
            row[self.layout.k_offset() + e] = -w[e];
        }
        row
    }

    fn default_start(&self, cap: f64) -> DVector<f64> {
        let d = self.layout.d;
        let qr = DMatrix::identity(d, d) * (0.5 * cap / d as f64);
        let k = DVector::from_element(self.layout.ne, 0.01);
        self.layout.join(&qr, &k, &k)
    }

    /// Analytic center of the constraint set, or a proof that it is empty.
    pub fn solve(&self, cap: f64, warm: Option<&Certificate>, cfg: &LmiSolveConfig) -> Result<SolveOutcome> {
        // M is linear and U U' quadratic in (Q, K, H), so a certificate valid at
        // gamma_w stays valid at gamma once scaled by gamma_w / gamma.
        let start = warm.and_then(|c| {
            let scaled = (c.gamma > 0.0).then(|| self.encode(&c.scaled(c.gamma / self.gamma)));
            scaled
                .into_iter()
                .chain(std::iter::once(self.encode(c)))
                .find(|y| self.barrier.is_strictly_feasible(y))
        });
        let start = start.unwrap_or_else(|| self.default_start(cap));
        let y0 = match self.barrier.phase1(&start, cfg.path)? {
            Phase1::Feasible(y) => y,
            Phase1::Infeasible { lower_bound } => return Ok(SolveOutcome::Infeasible { lower_bound }),
        };
        let y = self.barrier.analytic_center(&y0, NewtonOptions { decrement_tol: 1e-12, max_iter: 500 })?;
        Ok(SolveOutcome::Feasible(self.certificate(&y)))
    }
}

/// Most central `(Q, K, H)` satisfying the Schur-form inequality at `gamma`
/// together with `Q >= eps_q I`, `H >= eps_h`, `K > 0` and `trace Q <= cap`.
pub fn solve_certificate(
    mats: &SystemMatrices,
    beta: f64,
    gamma: f64,
    sel: &LineSelector,
    cfg: &LmiSolveConfig,
) -> Result<SolveOutcome> {
    solve_certificate_from(mats, beta, gamma, sel, cfg, None)
}

pub fn solve_certificate_from(
    mats: &SystemMatrices,
    beta: f64,
    gamma: f64,
    sel: &LineSelector,
    cfg: &LmiSolveConfig,
    warm: Option<&Certificate>,
) -> Result<SolveOutcome> {
    let problem = CertificateProblem::new(mats, beta, gamma, sel, cfg)?;
    let outcome = problem.solve(cfg.trace_cap(mats), warm, cfg)?;
    if let SolveOutcome::Feasible(cert) = &outcome {
        verify(mats, cert, sel, cfg.slack_tol)?;
    }
    Ok(outcome)
}

/// Independent re-check of a certificate: the bounding matrix must be NSD.
pub fn verify(mats: &SystemMatrices, cert: &Certificate, sel: &LineSelector, rel_tol: f64) -> Result<f64> {
    let m = assemble_bounding_lmi(mats, cert.beta, cert.gamma, sel, &cert.q, &cert.k, &cert.h)?;
    let top = psd_slack(&m)?;
    if top > rel_tol * m.amax() {
        return Err(Error::Internal(format!(
            "certificate fails re-verification: lambda_max = {top:.3e}"
        )));
    }
    Ok(top)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMax {
    Finite(f64),
    Unbounded,
}

impl GammaMax {
    pub fn value(self) -> f64 {
        match self {
            GammaMax::Finite(g) => g,
            GammaMax::Unbounded => f64::INFINITY,
        }
    }
}

/// Largest gamma keeping the bounding matrix NSD for fixed `(Q, K, H)`.
pub fn max_gamma(
    mats: &SystemMatrices,
    beta: f64,
    sel: &LineSelector,
    q: &DMatrix<f64>,
    k: &DVector<f64>,
    h: &DVector<f64>,
    cfg: &LmiSolveConfig,
) -> Result<GammaMax> {
    let m0 = assemble_stability_lmi(mats, beta, q, k, h)?;
    let scale = m0.amax().max(f64::MIN_POSITIVE);
    let tol = cfg.slack_tol * scale;
    let top0 = psd_slack(&m0)?;
    if top0 > tol {
        return Err(Error::InfeasibleAtZero(top0));
    }
    let u = fault_columns(mats, sel, q, k);
    let uu = &u * u.transpose();
    if uu.amax() <= 1e-15 * scale {
        return Ok(GammaMax::Unbounded);
    }
    let ok = |g: f64| -> Result<bool> { Ok(psd_slack(&symmetrize(&m0 + &uu * g))? <= tol) };
    let (mut lo, mut hi);
    if ok(1.0)? {
        lo = 1.0;
        hi = 2.0;
        while ok(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > 2f64.powi(60) {
                return Ok(GammaMax::Unbounded);
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        while !ok(lo)? {
            hi = lo;
            lo *= 0.5;
            if lo < f64::MIN_POSITIVE {
                return Ok(GammaMax::Finite(0.0));
            }
        }
    }
    while hi / lo - 1.0 > cfg.bisect_tol {
        let mid = (lo * hi).sqrt();
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(GammaMax::Finite(lo))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(v: impl Iterator<Item = f64>) -> String {
    format!("[{}]", v.map(fmt17).collect::<Vec<_>>().join(", "))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateDoc {
    gamma: f64,
    beta: f64,
    q: Vec<Vec<f64>>,
    k: Vec<f64>,
    h: Vec<f64>,
}

impl Certificate {
    /// JSON document with row-major matrices at 17 significant digits.
    pub fn to_document(&self) -> String {
        let rows: Vec<String> = self
            .q
            .row_iter()
            .map(|r| format!("    {}", fmt_vec(r.iter().copied())))
            .collect();
        format!(
            "{{\n  \"gamma\": {},\n  \"beta\": {},\n  \"q\": [\n{}\n  ],\n  \"k\": {},\n  \"h\": {}\n}}\n",
            fmt17(self.gamma),
            fmt17(self.beta),
            rows.join(",\n"),
            fmt_vec(self.k.iter().copied()),
            fmt_vec(self.h.iter().copied()),
        )
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let doc: CertificateDoc = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        let n = doc.q.len();
        if doc.q.iter().any(|r| r.len() != n) {
            return Err(Error::Malformed("q is not square".into()));
        }
        Ok(Self {
            q: DMatrix::from_fn(n, n, |i, j| doc.q[i][j]),
            k: DVector::from_vec(doc.k),
            h: DVector::from_vec(doc.h),
            gamma: doc.gamma,
            beta: doc.beta,
        })
    }
}
