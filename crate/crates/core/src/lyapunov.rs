//! The Lyapunov family `V(x) = x'Qx/2 - sum_e K_e psi_e(delta_e)` with
//! `psi_e(d) = c_e (cos(d + alpha_e) + d sin(delta*_e + alpha_e))`, its time
//! derivatives along the post-fault and fault-on dynamics, and the minimum of
//! V over the faces of the polytope `|delta_e| <= pi/2`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lmi::Certificate;
use crate::netmodel::SystemMatrices;

#[derive(Debug, Clone, Copy)]
pub struct LyapunovFunction<'a> {
    pub cert: &'a Certificate,
    pub mats: &'a SystemMatrices,
}

#[derive(Debug, Clone)]
pub struct FaceMinimum {
    pub edge: usize,
    /// +1 for `delta_e = pi/2`, -1 for `delta_e = -pi/2`.
    pub sign: f64,
    /// Certified lower bound on the minimum over this face.
    pub lower: f64,
    /// Value at the returned minimizer.
    pub value: f64,
    pub state: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct RegionEstimate {
    pub vmin: f64,
    /// Always pi/2: the half-width of the polytope the region lives in.
    pub half_width: f64,
    pub faces: Vec<FaceMinimum>,
}

impl<'a> LyapunovFunction<'a> {
    pub fn new(cert: &'a Certificate, mats: &'a SystemMatrices) -> Self {
        Self { cert, mats }
    }

    fn psi(&self, e: usize, delta: f64) -> f64 {
        let (c, a, s) = (self.mats.coupling[e], self.mats.phase[e], self.mats.edge_eq[e]);
        c * ((delta + a).cos() + delta * (s + a).sin())
    }

    /// `psi_e` at the edge angles of `x`.
    pub fn edge_terms(&self, x: &DVector<f64>) -> DVector<f64> {
        let delta = self.mats.edge_angles(x);
        DVector::from_fn(delta.len(), |e, _| self.psi(e, delta[e]))
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.cert.q * x)) - self.cert.k.dot(&self.edge_terms(x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let f = self.mats.flow_deviation(&(&self.mats.c * x));
        &self.cert.q * x + self.mats.c.transpose() * self.cert.k.component_mul(&f)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let delta = self.mats.edge_angles(x);
        let w = DVector::from_fn(delta.len(), |e, _| {
            self.cert.k[e] * self.mats.coupling[e] * (delta[e] + self.mats.phase[e]).cos()
        });
        &self.cert.q + self.mats.c.transpose() * DMatrix::from_diagonal(&w) * &self.mats.c
    }

    pub fn vdot_postfault(&self, x: &DVector<f64>) -> f64 {
        self.gradient(x).dot(&self.mats.compact_rhs(x))
    }

    /// Derivative while edge `edge` is open: the post-fault field plus the
    /// restored flow `B e_uv c sin(delta_uv + alpha)`.
    pub fn vdot_faulton(&self, x: &DVector<f64>, edge: usize) -> f64 {
        let delta = self.mats.edge_angles(x);
        let flow = self.mats.coupling[edge] * (delta[edge] + self.mats.phase[edge]).sin();
        let rhs = self.mats.compact_rhs(x) + self.mats.b.column(edge) * flow;
        self.gradient(x).dot(&rhs)
    }
}

pub fn eval_v(l: &LyapunovFunction, x: &DVector<f64>) -> f64 {
    l.value(x)
}

pub fn eval_vdot_postfault(l: &LyapunovFunction, x: &DVector<f64>) -> f64 {
    l.vdot_postfault(x)
}

pub fn eval_vdot_faulton(l: &LyapunovFunction, x: &DVector<f64>, edge: usize) -> f64 {
    l.vdot_faulton(x, edge)
}

/// `|delta_e| <= pi/2` for every edge.
pub fn in_polytope(mats: &SystemMatrices, x: &DVector<f64>) -> bool {
    mats.edge_angles(x).iter().all(|d| d.abs() <= FRAC_PI_2)
}

pub fn in_region(l: &LyapunovFunction, region: &RegionEstimate, x: &DVector<f64>) -> bool {
    in_polytope(l.mats, x) && l.value(x) < region.vmin
}

/// V restricted to angle deviations `a` (stateful bus order) after minimizing
/// out the velocities in closed form.
struct AngleProblem<'a> {
    l: &'a LyapunovFunction<'a>,
    /// Schur complement of the velocity block of Q.
    sq: DMatrix<f64>,
    /// Maps angles to the optimal velocities.
    vel: DMatrix<f64>,
    e: DMatrix<f64>,
}

impl<'a> AngleProblem<'a> {
    fn new(l: &'a LyapunovFunction<'a>) -> Result<Self> {
        let mats = l.mats;
        let (n, m) = (mats.n, mats.m);
        let ia: Vec<usize> = (0..n).map(|k| mats.angle_index(k)).collect();
        let q = &l.cert.q;
        let qaa = DMatrix::from_fn(n, n, |i, j| q[(ia[i], ia[j])]);
        if m == 0 {
            return Ok(Self { l, sq: qaa, vel: DMatrix::zeros(0, n), e: mats.e.clone() });
        }
        let qav = DMatrix::from_fn(n, m, |i, j| q[(ia[i], m + j)]);
        let qvv = DMatrix::from_fn(m, m, |i, j| q[(m + i, m + j)]);
        let chol = Cholesky::new(qvv).ok_or_else(|| {
            Error::Internal("velocity block of Q is not positive definite; V is unbounded below".into())
        })?;
        let vel = -chol.solve(&qav.transpose());
        let sq = &qaa + &qav * &vel;
        Ok(Self { l, sq: (&sq + sq.transpose()) * 0.5, vel, e: mats.e.clone() })
    }

    fn state(&self, a: &DVector<f64>) -> DVector<f64> {
        let mats = self.l.mats;
        let mut x = DVector::zeros(mats.n_states());
        for k in 0..mats.n {
            x[mats.angle_index(k)] = a[k];
        }
        let v = &self.vel * a;
        for j in 0..mats.m {
            x[mats.m + j] = v[j];
        }
        x
    }

    fn edge_angles(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.e * a + &self.l.mats.edge_eq
    }

    fn value(&self, a: &DVector<f64>) -> f64 {
        let delta = self.edge_angles(a);
        let psi: f64 = (0..delta.len()).map(|e| self.l.cert.k[e] * self.l.psi(e, delta[e])).sum();
        0.5 * a.dot(&(&self.sq * a)) - psi
    }

    fn grad_hess(&self, a: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mats = self.l.mats;
        let k = &self.l.cert.k;
        let delta = self.edge_angles(a);
        let f = DVector::from_fn(delta.len(), |e, _| {
            let (c, al, s) = (mats.coupling[e], mats.phase[e], mats.edge_eq[e]);
            k[e] * c * ((delta[e] + al).sin() - (s + al).sin())
        });
        let w = DVector::from_fn(delta.len(), |e, _| k[e] * mats.coupling[e] * (delta[e] + mats.phase[e]).cos());
        let et = self.e.transpose();
        (&self.sq * a + &et * f, &self.sq + &et * DMatrix::from_diagonal(&w) * &self.e)
    }

    /// Rigid rotations leave V unchanged when there is no infinite bus and the
    /// quadratic part ignores them.
    fn rotation_invariant(&self) -> bool {
        if self.l.mats.has_infinite {
            return false;
        }
        let ones = DVector::from_element(self.l.mats.n, 1.0);
        (&self.sq * &ones).amax() <= 1e-9 * self.sq.amax().max(f64::MIN_POSITIVE)
    }

    fn minimize_face(&self, edge: usize, sign: f64) -> Result<FaceMinimum> {
        let n = self.l.mats.n;
        let ne = self.e.nrows();
        let mut rows = vec![self.e.row(edge).into_owned()];
        let mut rhs = vec![sign * FRAC_PI_2 - self.l.mats.edge_eq[edge]];
        if self.rotation_invariant() {
            rows.push(DMatrix::from_element(1, n, 1.0).row(0).into_owned());
            rhs.push(0.0);
        }
        let aeq = DMatrix::from_rows(&rows);
        let beq = DVector::from_vec(rhs);
        let others: Vec<usize> = (0..ne).filter(|&e| e != edge).collect();

        let slacks = |a: &DVector<f64>| -> Option<Vec<f64>> {
            let d = self.edge_angles(a);
            let mut s = Vec::with_capacity(2 * others.len());
            for &e in &others {
                let (lo, hi) = (FRAC_PI_2 + d[e], FRAC_PI_2 - d[e]);
                if !(lo > 0.0 && hi > 0.0) {
                    return None;
                }
                s.push(lo);
                s.push(hi);
            }
            Some(s)
        };

        // Start from the harmonic extension of the face constraint: minimize the
        // squared edge angles of all other edges subject to the equalities.
        let mut a = {
            let eo = DMatrix::from_fn(others.len(), n, |i, j| self.e[(others[i], j)]);
            let so = DVector::from_fn(others.len(), |i, _| self.l.mats.edge_eq[others[i]]);
            let mut h = eo.transpose() * &eo;
            for i in 0..n {
                h[(i, i)] += 1e-12;
            }
            solve_kkt(&h, &(-(eo.transpose() * so)), &aeq, &beq)?
        };
        if slacks(&a).is_none() {
            return Err(Error::Internal(format!(
                "face {edge}{} has no interior starting point",
                if sign > 0.0 { "+" } else { "-" }
            )));
        }

        let nu = 2.0 * others.len() as f64;
        let merit = |a: &DVector<f64>, t: f64| -> Option<f64> {
            let s = slacks(a)?;
            Some(t * self.value(a) - s.iter().map(|v| v.ln()).sum::<f64>())
        };
        let zero_rhs = DVector::zeros(beq.len());
        let mut t = if nu == 0.0 { 1.0 } else { 1.0 / self.sq.amax().max(1e-3) };
        loop {
            for _ in 0..200 {
                let (g0, h0) = self.grad_hess(&a);
                let mut g = g0 * t;
                let mut h = h0 * t;
                let d = self.edge_angles(&a);
                for &e in &others {
                    let row = self.e.row(e).transpose();
                    let (lo, hi) = (FRAC_PI_2 + d[e], FRAC_PI_2 - d[e]);
                    g += &row * (1.0 / hi - 1.0 / lo);
                    h += &row * row.transpose() * (1.0 / (lo * lo) + 1.0 / (hi * hi));
                }
                // Only fails once the reduced gradient is at rounding level.
                let Ok(step) = descent_step(&h, &g, &aeq, &zero_rhs) else { break };
                let slope = g.dot(&step);
                if -slope / 2.0 <= 1e-14 * (1.0 + t) {
                    break;
                }
                let f0 = merit(&a, t).expect("iterate is interior");
                let mut s = 1.0;
                let mut moved = false;
                while s > 1e-16 {
                    let cand = &a + &step * s;
                    if let Some(f) = merit(&cand, t) {
                        if f <= f0 + 0.25 * s * slope {
                            a = cand;
                            moved = true;
                            break;
                        }
                    }
                    s *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            let value = self.value(&a);
            if nu == 0.0 || nu / t <= 1e-12 * (1.0 + value.abs()) {
                return Ok(FaceMinimum { edge, sign, lower: value - nu / t, value, state: self.state(&a) });
            }
            t *= 10.0;
            if t > 1e20 {
                return Err(Error::SolverNonConvergence("face minimization stalled".into()));
            }
        }
    }
}

/// Minimizes `x'Hx/2 + g'x` subject to `A x = b`.
fn solve_kkt(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = (h.nrows(), a.nrows());
    let mut kkt = DMatrix::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    kkt.view_mut((n, 0), (p, n)).copy_from(a);
    kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-g));
    rhs.rows_mut(n, p).copy_from(b);
    let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::Internal("singular KKT system".into()))?;
    Ok(sol.rows(0, n).into_owned())
}

/// Equality-constrained Newton direction, regularized until it descends.
fn descent_step(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += ridge;
        }
        if let Ok(step) = solve_kkt(&hr, g, a, b) {
            if step.iter().all(|v| v.is_finite()) && g.dot(&step) <= 0.0 {
                return Ok(step);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
    }
    Err(Error::SolverNonConvergence("no descent direction on a face".into()))
}

/// Minimum of V over all faces `delta_e = +-pi/2`, `|delta_p| <= pi/2`.
pub fn compute_vmin(l: &LyapunovFunction) -> Result<RegionEstimate> {
    let problem = AngleProblem::new(l)?;
    let mut faces = Vec::with_capacity(2 * l.mats.n_edges());
    for edge in 0..l.mats.n_edges() {
        for sign in [1.0, -1.0] {
            faces.push(problem.minimize_face(edge, sign)?);
        }
    }
    let vmin = faces.iter().map(|f| f.lower).fold(f64::INFINITY, f64::min);
    Ok(RegionEstimate { vmin, half_width: FRAC_PI_2, faces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_sep_default;
    use crate::netmodel::{build_system_matrices, parse_network};

    const CASE2: &str = include_str!("../data/case2.json");
    const CASE3: &str = include_str!("../data/case3.json");

    fn two_bus_lossless() -> SystemMatrices {
        let text = CASE2.replace("\"conductance\": 0.009995833854135668", "\"conductance\": 0.0");
        let text = text.replace("0.19975005207899327", "0.2");
        let model = parse_network(&text).unwrap();
        let eq = solve_sep_default(&model).unwrap();
        build_system_matrices(&model, &eq).unwrap()
    }

    fn witness2() -> Certificate {
        Certificate {
            q: DMatrix::from_row_slice(2, 2, &[0.0443, 0.0127, 0.0127, 0.0879]),
            k: DVector::from_element(1, 0.0968),
            h: DVector::from_element(1, 0.2412),
            gamma: 7.0,
            beta: 0.5114,
        }
    }

    #[test]
    fn value_at_origin() {
        let mats = two_bus_lossless();
        assert!((mats.edge_eq[0] - 0.3f64.asin()).abs() < 1e-12);
        let mut cert = witness2();
        let l = LyapunovFunction::new(&cert, &mats);
        let d: f64 = 0.3f64.asin();
        let expected = -0.0968 * (d.cos() + d * d.sin());
        assert!((l.value(&DVector::zeros(2)) - expected).abs() < 1e-15);
        cert.k[0] = 0.0;
        let l = LyapunovFunction::new(&cert, &mats);
        assert_eq!(l.value(&DVector::zeros(2)), 0.0);
    }

    #[test]
    fn closed_form_vmin() {
        // K = 0, Q = I on a single edge at delta* = 0: min of |x|^2/2 with x_0 = pi/2.
        let text = r#"{"buses":[
            {"id":1,"kind":"generator","voltage":1,"inertia":1,"damping":1,"power":0},
            {"id":2,"kind":"infinite","voltage":1}],
            "lines":[{"from":1,"to":2,"susceptance":1}]}"#;
        let model = parse_network(text).unwrap();
        let eq = solve_sep_default(&model).unwrap();
        let mats = build_system_matrices(&model, &eq).unwrap();
        let cert = Certificate {
            q: DMatrix::identity(2, 2),
            k: DVector::zeros(1),
            h: DVector::zeros(1),
            gamma: 1.0,
            beta: 0.5,
        };
        let r = compute_vmin(&LyapunovFunction::new(&cert, &mats)).unwrap();
        assert!((r.vmin - FRAC_PI_2.powi(2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn region_membership() {
        let model = parse_network(CASE3).unwrap();
        let eq = solve_sep_default(&model).unwrap();
        let mats = build_system_matrices(&model, &eq).unwrap();
        let p = mats.reduction();
        let cert = Certificate {
            q: &p * p.transpose(),
            k: DVector::from_element(3, 0.3),
            h: DVector::zeros(3),
            gamma: 1.0,
            beta: 0.5,
        };
        let l = LyapunovFunction::new(&cert, &mats);
        let r = compute_vmin(&l).unwrap();
        let origin = DVector::zeros(6);
        assert!(r.vmin > l.value(&origin));
        assert!(in_region(&l, &r, &origin));
        let mut far = DVector::zeros(6);
        far[0] = 0.6 * std::f64::consts::PI - mats.edge_eq[0];
        assert!(!in_polytope(&mats, &far));
        assert!(!in_region(&l, &r, &far));
        let face = r.faces.iter().min_by(|a, b| a.value.total_cmp(&b.value)).unwrap();
        let on_face = RegionEstimate { vmin: l.value(&face.state), ..r.clone() };
        assert!(!in_region(&l, &on_face, &face.state));
    }

    #[test]
    fn gradient_vanishes_at_equilibrium() {
        let mats = two_bus_lossless();
        let cert = witness2();
        let l = LyapunovFunction::new(&cert, &mats);
        assert!(l.gradient(&DVector::zeros(2)).amax() < 1e-12);
        assert_eq!(l.vdot_postfault(&DVector::zeros(2)), 0.0);
    }
}
