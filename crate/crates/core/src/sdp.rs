//! Dense log-barrier interior-point machinery for small linear matrix
//! inequalities.
//!
//! The feasible set is `{y : G_b(y) > 0 for every block, a_j . y + b_j > 0, |y| < R}`
//! with `G_b(y) = G_b0 + sum_i y_i G_bi`. The barrier is
//! `-sum log det G_b(y) - sum log(a_j . y + b_j) - log(R^2 - |y|^2)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn value(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.constant.clone();
        for (yi, gi) in y.iter().zip(&self.coeffs) {
            if *yi != 0.0 {
                g += gi * *yi;
            }
        }
        g
    }
}

/// `a . y + b > 0`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub a: DVector<f64>,
    pub b: f64,
}

impl LinearConstraint {
    pub fn slack(&self, y: &DVector<f64>) -> f64 {
        self.a.dot(y) + self.b
    }
}

#[derive(Debug, Clone)]
pub struct BarrierProblem {
    pub dim: usize,
    pub blocks: Vec<LmiBlock>,
    pub linear: Vec<LinearConstraint>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stop once half the squared Newton decrement falls below this.
    pub decrement_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { decrement_tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PathOptions {
    pub newton: NewtonOptions,
    pub t0: f64,
    pub growth: f64,
    /// Stop when the duality gap bound `nu / t` is below this.
    pub gap_tol: f64,
    pub max_outer: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            t0: 1.0,
            growth: 10.0,
            gap_tol: 1e-9,
            max_outer: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub y: DVector<f64>,
    pub objective: f64,
    /// Upper bound on `objective - optimum` at exact centering.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub enum Phase1 {
    Feasible(DVector<f64>),
    /// The smallest uniform relaxation that makes the set nonempty is at least `lower_bound`.
    Infeasible { lower_bound: f64 },
}

struct Derivatives {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl BarrierProblem {
    pub fn new(dim: usize, radius: f64) -> Self {
        Self { dim, blocks: Vec::new(), linear: Vec::new(), radius }
    }

    /// Barrier parameter: total order of all barrier terms.
    pub fn nu(&self) -> f64 {
        (self.blocks.iter().map(LmiBlock::size).sum::<usize>() + self.linear.len() + 1) as f64
    }

    pub fn is_strictly_feasible(&self, y: &DVector<f64>) -> bool {
        self.barrier(y).is_some()
    }

    pub fn barrier(&self, y: &DVector<f64>) -> Option<f64> {
        let ball = self.radius * self.radius - y.norm_squared();
        if !(ball > 0.0) {
            return None;
        }
        let mut value = -ball.ln();
        for lc in &self.linear {
            let s = lc.slack(y);
            if !(s > 0.0) {
                return None;
            }
            value -= s.ln();
        }
        for block in &self.blocks {
            let chol = Cholesky::new(block.value(y))?;
            value -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        value.is_finite().then_some(value)
    }

    fn derivatives(&self, y: &DVector<f64>) -> Option<Derivatives> {
        let p = self.dim;
        let ball = self.radius * self.radius - y.norm_squared();
        if !(ball > 0.0) {
            return None;
        }
        let mut value = -ball.ln();
        let mut grad = y * (2.0 / ball);
        let mut hess = DMatrix::identity(p, p) * (2.0 / ball) + (y * y.transpose()) * (4.0 / (ball * ball));
        for lc in &self.linear {
            let s = lc.slack(y);
            if !(s > 0.0) {
                return None;
            }
            value -= s.ln();
            grad.axpy(-1.0 / s, &lc.a, 1.0);
            hess.ger(1.0 / (s * s), &lc.a, &lc.a, 1.0);
        }
        for block in &self.blocks {
            let chol = Cholesky::new(block.value(y))?;
            value -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let w = chol.inverse();
            let mut xs = Vec::with_capacity(p);
            let mut xts = Vec::with_capacity(p);
            for (i, gi) in block.coeffs.iter().enumerate() {
                if gi.iter().all(|v| *v == 0.0) {
                    xs.push(None);
                    xts.push(None);
                    continue;
                }
                let x = &w * gi;
                grad[i] -= x.trace();
                xts.push(Some(gi * &w));
                xs.push(Some(x));
            }
            for i in 0..p {
                let Some(xi) = &xs[i] else { continue };
                for k in i..p {
                    let Some(xk) = &xts[k] else { continue };
                    let v = xi.dot(xk);
                    hess[(i, k)] += v;
                    if k != i {
                        hess[(k, i)] += v;
                    }
                }
            }
        }
        if !value.is_finite() {
            return None;
        }
        Some(Derivatives { value, grad, hess })
    }

    /// Minimizes `t c.y + barrier(y)` from a strictly feasible `y`.
    pub fn center(
        &self,
        c: Option<&DVector<f64>>,
        t: f64,
        y0: &DVector<f64>,
        opts: NewtonOptions,
    ) -> Result<DVector<f64>> {
        let mut y = y0.clone();
        let objective = |y: &DVector<f64>, b: f64| b + c.map_or(0.0, |c| t * c.dot(y));
        for _ in 0..opts.max_iter {
            let Some(mut d) = self.derivatives(&y) else {
                return Err(Error::Internal("centering left the feasible set".into()));
            };
            if let Some(c) = c {
                d.grad.axpy(t, c, 1.0);
            }
            let f0 = objective(&y, d.value);
            let step = newton_step(&d.hess, &d.grad)?;
            let slope = d.grad.dot(&step);
            if -slope / 2.0 <= opts.decrement_tol {
                return Ok(y);
            }
            let dec = (-slope).sqrt();
            let mut s = if dec > 1.0 { 1.0 / (1.0 + dec) } else { 1.0 };
            loop {
                let cand = &y + &step * s;
                if let Some(b) = self.barrier(&cand) {
                    if objective(&cand, b) <= f0 + 0.25 * s * slope {
                        y = cand;
                        break;
                    }
                }
                s *= 0.5;
                if s < 1e-14 {
                    return Ok(y);
                }
            }
        }
        Ok(y)
    }

    pub fn analytic_center(&self, y0: &DVector<f64>, opts: NewtonOptions) -> Result<DVector<f64>> {
        if !self.is_strictly_feasible(y0) {
            return Err(Error::Internal("analytic center needs a strictly feasible start".into()));
        }
        self.center(None, 0.0, y0, opts)
    }

    /// Barrier path following for `min c.y`. `stop` sees every centered point and
    /// may end the run early.
    pub fn minimize(
        &self,
        c: &DVector<f64>,
        y0: &DVector<f64>,
        opts: PathOptions,
        mut stop: impl FnMut(&PathPoint) -> bool,
    ) -> Result<PathPoint> {
        if !self.is_strictly_feasible(y0) {
            return Err(Error::Internal("path following needs a strictly feasible start".into()));
        }
        let nu = self.nu();
        let mut t = opts.t0;
        let mut y = y0.clone();
        for _ in 0..opts.max_outer {
            y = self.center(Some(c), t, &y, opts.newton)?;
            let point = PathPoint { objective: c.dot(&y), gap: nu / t, y: y.clone() };
            if stop(&point) || point.gap <= opts.gap_tol {
                return Ok(point);
            }
            t *= opts.growth;
        }
        Err(Error::SolverNonConvergence(format!(
            "path following stopped at gap {:.3e}",
            nu / t
        )))
    }

    /// Same problem with one more variable that no constraint involves yet.
    pub fn with_extra_variable(&self) -> Self {
        let mut out = self.clone();
        out.dim += 1;
        for b in &mut out.blocks {
            let k = b.size();
            b.coeffs.push(DMatrix::zeros(k, k));
        }
        for lc in &mut out.linear {
            lc.a = lc.a.clone().insert_row(self.dim, 0.0);
        }
        out
    }

    /// Finds a strictly feasible point, or proves within the ball that none exists,
    /// by minimizing the uniform relaxation `s` of every constraint.
    pub fn phase1(&self, y0: &DVector<f64>, opts: PathOptions) -> Result<Phase1> {
        if self.is_strictly_feasible(y0) {
            return Ok(Phase1::Feasible(y0.clone()));
        }
        let mut aug = self.with_extra_variable();
        let p = self.dim;
        for b in &mut aug.blocks {
            let k = b.size();
            b.coeffs[p] = DMatrix::identity(k, k);
        }
        for lc in &mut aug.linear {
            lc.a[p] = 1.0;
        }
        let violation = |y: &DVector<f64>| {
            let mut worst: f64 = 0.0;
            for b in &self.blocks {
                worst = worst.max(-b.value(y).symmetric_eigenvalues().min());
            }
            for lc in &self.linear {
                worst = worst.max(-lc.slack(y));
            }
            worst
        };
        // Shrinking the start toward the origin often cuts the violation by
        // orders of magnitude when the constraints are nearly homogeneous.
        let (y0, worst) = (0..=12)
            .map(|j| {
                let y = y0 * 10f64.powi(-j);
                let w = violation(&y);
                (y, w)
            })
            .fold(None, |acc: Option<(DVector<f64>, f64)>, (y, w)| match acc {
                Some((_, bw)) if bw <= w => acc,
                _ => Some((y, w)),
            })
            .expect("nonempty candidate list");
        if self.is_strictly_feasible(&y0) {
            return Ok(Phase1::Feasible(y0));
        }
        let s0 = worst + 1.0 + 0.1 * worst;
        let start = y0.clone().insert_row(p, s0);
        if start.norm() >= aug.radius {
            return Err(Error::Internal("phase-1 start lies outside the ball".into()));
        }
        let mut c = DVector::zeros(p + 1);
        c[p] = 1.0;
        let mut outcome = None;
        let result = aug.minimize(&c, &start, opts, |pt| {
            let s = pt.y[p];
            let y = pt.y.rows(0, p).into_owned();
            if s < 0.0 && self.is_strictly_feasible(&y) {
                outcome = Some(Phase1::Feasible(y));
                return true;
            }
            if s - pt.gap > 0.0 {
                outcome = Some(Phase1::Infeasible { lower_bound: s - pt.gap });
                return true;
            }
            false
        });
        match (outcome, result) {
            (Some(o), _) => Ok(o),
            (None, Ok(pt)) => Ok(Phase1::Infeasible { lower_bound: pt.y[p] - pt.gap }),
            (None, Err(e)) => Err(e),
        }
    }
}

/// Solves `H d = -g` for a positive definite `H`, regularizing if needed.
fn newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut hr = h.clone();
        if ridge > 0.0 {
            for i in 0..hr.nrows() {
                hr[(i, i)] += ridge;
            }
        }
        if let Some(ch) = Cholesky::new(hr) {
            let d = -ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Ok(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    Err(Error::SolverNonConvergence("newton system is not positive definite".into()))
}
