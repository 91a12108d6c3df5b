//! Stable operating point of the network and the sector slope of the line
//! nonlinearity around it.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netmodel::{EdgeParams, NetworkModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// Angles of the stateful buses. The infinite bus sits at 0; without one,
    /// the last stateful bus is the reference.
    pub angles: DVector<f64>,
    /// Largest |edge angle| at the equilibrium.
    pub gap: f64,
    /// Max-norm of the power-flow mismatch.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SectorMode {
    Lossless,
    Lossy,
    VoltageFluctuation { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorBound {
    pub beta: f64,
    pub lambda: f64,
    pub mode: SectorMode,
}

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;

/// Power-flow mismatch `P - E^T (s c sin(E theta + alpha))`.
pub fn mismatch(model: &NetworkModel, theta: &DVector<f64>) -> DVector<f64> {
    model.injections() - model.line_outflow(theta, None)
}

/// Newton solve from `guess`; the reference angle (if any) is held at its guess value
/// and then shifted to 0.
pub fn solve_sep(
    model: &NetworkModel,
    guess: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Equilibrium> {
    let n = model.n;
    if guess.len() != n {
        return Err(Error::Dimension(format!("guess has {} angles, expected {n}", guess.len())));
    }
    let free = if model.has_infinite() { n } else { n - 1 };
    let e = model.incidence();
    let mut theta = guess.clone();
    if !model.has_infinite() {
        let r = theta[n - 1];
        theta.add_scalar_mut(-r);
    }

    let newton_step = |theta: &DVector<f64>, r: &DVector<f64>| -> Result<DVector<f64>> {
        let delta = model.edge_angles(theta);
        let w = DVector::from_fn(model.n_edges(), |i, _| {
            let p = &model.params[i];
            p.s * p.c * (delta[i] + p.alpha).cos()
        });
        // d(outflow)/d(theta) = E^T diag(w) E; the mismatch derivative is its negative.
        let mut ew = e.transpose();
        for j in 0..ew.ncols() {
            let mut col = ew.column_mut(j);
            col *= w[j];
        }
        let jac: DMatrix<f64> = (ew * &e).view((0, 0), (free, free)).into_owned();
        let step = jac.lu().solve(&r.rows(0, free).into_owned()).ok_or(Error::SingularJacobian)?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        Ok(step)
    };

    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let r = mismatch(model, &theta);
        residual = r.rows(0, free).amax();
        if residual <= tol {
            break;
        }
        let step = newton_step(&theta, &r)?;
        for i in 0..free {
            theta[i] += step[i];
        }
    }
    if residual > tol || !residual.is_finite() {
        return Err(Error::NewtonDivergence { iterations: max_iter, residual });
    }
    // One more step is nearly free and takes the angles to rounding level.
    if residual > 0.0 {
        let r = mismatch(model, &theta);
        if let Ok(step) = newton_step(&theta, &r) {
            let mut polished = theta.clone();
            for i in 0..free {
                polished[i] += step[i];
            }
            if mismatch(model, &polished).rows(0, free).amax() <= residual {
                theta = polished;
            }
        }
    }
    let gap = model.edge_angles(&theta).amax();
    if gap >= FRAC_PI_2 {
        return Err(Error::OutsidePolytope(gap));
    }
    let full = mismatch(model, &theta);
    let residual = if model.has_infinite() { full.amax() } else { full.rows(0, free).amax() };
    Ok(Equilibrium { angles: theta, gap, residual })
}

/// Flat start with the default tolerance and iteration cap.
pub fn solve_sep_default(model: &NetworkModel) -> Result<Equilibrium> {
    solve_sep(model, &DVector::zeros(model.n), NEWTON_TOL, NEWTON_MAX_ITER)
}

/// Equilibrium of the pre-fault injections.
pub fn solve_pre_fault(model: &NetworkModel) -> Result<Equilibrium> {
    solve_sep_default(&model.with_pre_fault_injections())
}

pub fn angle_gap(eq: &Equilibrium, model: &NetworkModel) -> f64 {
    model.edge_angles(&eq.angles).amax()
}

/// Replaces the computed gap by a larger nominal value.
pub fn round_gap(lambda: f64, nominal: f64) -> Result<f64> {
    if nominal + 1e-12 < lambda {
        return Err(Error::InvalidGap(format!(
            "nominal {nominal} is below the equilibrium gap {lambda}"
        )));
    }
    Ok(nominal)
}

pub fn sector_mode(model: &NetworkModel) -> SectorMode {
    match model.fluctuation {
        Some(f) => SectorMode::VoltageFluctuation { rho: f.rho },
        None if model.is_lossy() => SectorMode::Lossy,
        None => SectorMode::Lossless,
    }
}

/// Slope of the lower linear envelope of every edge nonlinearity on |delta| <= pi/2
/// for equilibria with |delta*| <= lambda.
pub fn compute_beta(model: &NetworkModel, lambda: f64) -> Result<SectorBound> {
    if !(0.0..FRAC_PI_2).contains(&lambda) {
        return Err(Error::InvalidGap(format!("lambda = {lambda} must lie in [0, pi/2)")));
    }
    let mode = sector_mode(model);
    let width = FRAC_PI_2 - lambda;
    let mut beta = model
        .params
        .iter()
        .map(|p| (p.alpha.cos() - (lambda + p.alpha).sin()) / width)
        .fold(f64::INFINITY, f64::min);
    if model.params.is_empty() {
        beta = (1.0 - lambda.sin()) / width;
    }
    if let SectorMode::VoltageFluctuation { rho } = mode {
        beta *= ((1.0 - rho) / (1.0 + rho)).powi(2);
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidGap(format!("sector slope {beta} is not positive")));
    }
    Ok(SectorBound { beta, lambda, mode })
}

/// `(f - y)(f - beta y)` with `y = delta - delta*` and `f` the edge nonlinearity
/// deviation; non-positive wherever the sector bound holds.
pub fn sector_gap(p: &EdgeParams, delta_star: f64, beta: f64, delta: f64) -> f64 {
    let y = delta - delta_star;
    let f = p.c * ((delta + p.alpha).sin() - (delta_star + p.alpha).sin());
    (f - y) * (f - beta * y)
}

/// State offset `delta*_pre - delta*_post` in the state layout, velocities zero.
pub fn pre_fault_offset(
    model: &NetworkModel,
    eq_pre: &Equilibrium,
    eq_post: &Equilibrium,
) -> Result<DVector<f64>> {
    if eq_pre.angles.len() != model.n || eq_post.angles.len() != model.n {
        return Err(Error::Dimension("equilibria do not match the network".into()));
    }
    let mut x = DVector::zeros(model.n_states());
    for k in 0..model.n {
        x[model.angle_index(k)] = eq_pre.angles[k] - eq_post.angles[k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{parse_network, parse_network_with, Fluctuation, ParseOptions};
    use std::f64::consts::PI;

    const CASE2: &str = include_str!("../data/case2.json");
    const CASE3: &str = include_str!("../data/case3.json");
    const CASE9: &str = include_str!("../data/case9.json");

    #[test]
    fn two_bus_equilibria() {
        let model = parse_network(CASE2).unwrap();
        let post = solve_sep_default(&model).unwrap();
        let pre = solve_pre_fault(&model).unwrap();
        assert!((pre.angles[0] - (0.25f64.asin() - 0.05)).abs() < 1e-12);
        assert!((post.angles[0] - (0.3f64.asin() - 0.05)).abs() < 1e-12);
        assert!((pre.angles[0] - 0.2027).abs() < 1e-4);
        let x = pre_fault_offset(&model, &pre, &post).unwrap();
        assert!((x[0] - (0.2027 - 0.2547)).abs() < 2e-4);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn zero_injection_gives_zero_angles() {
        let mut model = parse_network(CASE9).unwrap();
        for b in &mut model.buses {
            b.power = 0.0;
        }
        let eq = solve_sep_default(&model).unwrap();
        assert_eq!(eq.angles.amax(), 0.0);
        assert_eq!(angle_gap(&eq, &model), 0.0);
    }

    #[test]
    fn residual_and_reference() {
        for text in [CASE3, CASE9] {
            let model = parse_network(text).unwrap();
            let eq = solve_sep_default(&model).unwrap();
            assert!(eq.residual <= NEWTON_TOL);
            assert_eq!(eq.angles[model.n - 1], 0.0);
            assert!(eq.gap < FRAC_PI_2);
            assert!(mismatch(&model, &eq.angles).amax() < 1e-9);
        }
    }

    #[test]
    fn betas() {
        let m9 = parse_network(CASE9).unwrap();
        let eq9 = solve_sep_default(&m9).unwrap();
        let lam = round_gap(angle_gap(&eq9, &m9), PI / 8.0).unwrap();
        assert_eq!(lam, PI / 8.0);
        assert!((compute_beta(&m9, lam).unwrap().beta - 0.5240).abs() < 1e-4);

        let m2 = parse_network(CASE2).unwrap();
        let eq2 = solve_sep_default(&m2).unwrap();
        let lam = round_gap(angle_gap(&eq2, &m2), PI / 10.0).unwrap();
        let sb = compute_beta(&m2, lam).unwrap();
        assert_eq!(sb.mode, SectorMode::Lossy);
        assert!((sb.beta - 0.5114).abs() < 1e-4);

        let lossless = compute_beta(&m9, 0.0).unwrap().beta;
        assert!((lossless - 2.0 / PI).abs() < 1e-15);
        assert!(compute_beta(&m9, FRAC_PI_2).is_err());
        assert!(round_gap(0.5, 0.1).is_err());
    }

    #[test]
    fn lossy_beta_is_tighter() {
        let m2 = parse_network(CASE2).unwrap();
        let eq = solve_sep_default(&m2).unwrap();
        let lam = angle_gap(&eq, &m2);
        let lossy = compute_beta(&m2, lam).unwrap().beta;
        assert!(lossy <= (1.0 - lam.sin()) / (FRAC_PI_2 - lam));
    }

    #[test]
    fn fluctuation_beta() {
        let opts = ParseOptions { fluctuation: Some(Fluctuation::default()) };
        let model = parse_network_with(CASE9, opts).unwrap();
        let sb = compute_beta(&model, PI / 8.0).unwrap();
        assert!((sb.beta - 0.5240 * 0.81 / 1.21).abs() < 1e-4);
    }

    #[test]
    fn sector_gap_properties() {
        let p = EdgeParams { s: 1.0, c: 1.0, alpha: 0.0 };
        assert_eq!(sector_gap(&p, 0.3, 0.5, 0.3), 0.0);
        let lam: f64 = 0.4;
        let beta = (1.0 - lam.sin()) / (FRAC_PI_2 - lam);
        assert!(sector_gap(&p, lam, beta, FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn sector_gap_on_two_bus_grid() {
        let model = parse_network(CASE2).unwrap();
        let eq = solve_sep_default(&model).unwrap();
        let lam = angle_gap(&eq, &model);
        let beta = compute_beta(&model, lam).unwrap().beta;
        for i in 0..1000 {
            let d = -FRAC_PI_2 + PI * i as f64 / 999.0;
            assert!(sector_gap(&model.params[0], eq.angles[0], beta, d) <= 1e-12);
        }
    }

    #[test]
    fn offset_of_identical_equilibria_is_zero() {
        let model = parse_network(CASE9).unwrap();
        let eq = solve_sep_default(&model).unwrap();
        let x = pre_fault_offset(&model, &eq, &eq).unwrap();
        assert_eq!(x, DVector::zeros(12));
    }

    #[test]
    fn divergence_reported() {
        let text = r#"{"buses":[
            {"id":1,"kind":"generator","voltage":1,"inertia":1,"damping":1,"power":2.0},
            {"id":2,"kind":"infinite","voltage":1}],
            "lines":[{"from":1,"to":2,"susceptance":1}]}"#;
        let model = parse_network(text).unwrap();
        assert!(solve_sep_default(&model).is_err());
    }
}
