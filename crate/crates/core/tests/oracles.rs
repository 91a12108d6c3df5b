//! Independent checks of region estimates, bounds and screening verdicts.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use cct_screen::cct::{
    cct_bound, log_grid, procedure1, procedure2, robust_screen, screen, CctEstimate, GammaStatus, Procedure,
    Scenario, ScreenOptions, Verdict,
};
use cct_screen::lmi::{max_gamma, solve_certificate, Certificate, GammaMax, LmiSolveConfig, SolveOutcome};
use cct_screen::lyapunov::{compute_vmin, in_polytope, LyapunovFunction};
use cct_screen::netmodel::{line_selector, parse_network};
use cct_screen::sim::{probe, probe_settled, true_cct, SimParams, TrueCctConfig, VerdictKind};
use common::*;
use nalgebra::DVector;

fn solve(sc: &Scenario, line: (i64, i64), gamma: f64) -> Certificate {
    let sel = line_selector(&sc.model, line).unwrap();
    match solve_certificate(&sc.mats, sc.beta(), gamma, &sel, &LmiSolveConfig::default()).unwrap() {
        SolveOutcome::Feasible(c) => c,
        SolveOutcome::Infeasible { .. } => panic!("infeasible at gamma {gamma}"),
    }
}

/// Pushes `x` outward along its own ray until the first edge reaches pi/2.
fn to_boundary(sc: &Scenario, x: &DVector<f64>) -> DVector<f64> {
    let (mut lo, mut hi) = (0.0, 1.0);
    while in_polytope(&sc.mats, &(x * hi)) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if in_polytope(&sc.mats, &(x * mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x * lo
}

fn grid_vmin_2bus(sc: &Scenario, cert: &Certificate) -> f64 {
    let l = LyapunovFunction::new(cert, &sc.mats);
    let mut best = f64::INFINITY;
    for face in [FRAC_PI_2, -FRAC_PI_2] {
        let a = face - sc.mats.edge_eq[0];
        for i in 0..1_000_000 {
            let w = -5.0 + 10.0 * i as f64 / 999_999.0;
            best = best.min(l.value(&DVector::from_vec(vec![a, w])));
        }
    }
    best
}

#[test]
fn vmin_matches_face_grid_on_two_bus() {
    let sc = two_bus();
    for cert in [witness2(sc.beta()), solve(&sc, (1, 2), 7.0)] {
        let vmin = compute_vmin(&LyapunovFunction::new(&cert, &sc.mats)).unwrap().vmin;
        let grid = grid_vmin_2bus(&sc, &cert);
        assert!((vmin - grid).abs() <= 1e-3, "{vmin} vs {grid}");
        assert!(vmin <= grid + 1e-12);
    }
}

#[test]
fn no_boundary_sample_below_vmin() {
    for (sc, line, gamma) in [(three_gen(), (1, 2), 3.0), (nine_bus(), (6, 4), 1.0)] {
        let cert = solve(&sc, line, gamma);
        let l = LyapunovFunction::new(&cert, &sc.mats);
        let region = compute_vmin(&l).unwrap();
        assert!(region.vmin >= l.value(&DVector::zeros(sc.mats.n_states())));
        for f in &region.faces {
            assert!(f.lower <= f.value + 1e-12);
            assert!((sc.mats.edge_angles(&f.state)[f.edge] - f.sign * FRAC_PI_2).abs() < 1e-9);
        }
        for x in states_in_polytope(&sc, 3000, 3.0, 99) {
            let b = to_boundary(&sc, &x);
            assert!(l.value(&b) >= region.vmin - 1e-9, "boundary value {} below {}", l.value(&b), region.vmin);
        }
    }
}

#[test]
fn bound_is_formula_of_stored_fields() {
    let sc = two_bus();
    let grid = log_grid(0.5, 20.0, 12).unwrap();
    let result = procedure1(&sc, &[(1, 2)], &grid, &LmiSolveConfig::default()).unwrap();
    let best = result.best.unwrap();
    assert_eq!(best.vgap, best.vmin - best.v_pre);
    assert_eq!(best.bound, (2.0 * best.gamma * best.vgap).max(0.0));
    for r in &result.records {
        if let GammaStatus::Feasible { bound, .. } = r.status {
            assert!(bound <= best.bound);
        }
    }
}

#[test]
fn zero_pre_fault_offset_gives_nonnegative_bound() {
    let sc = three_gen();
    let cert = solve(&sc, (1, 3), 2.0);
    let l = LyapunovFunction::new(&cert, &sc.mats);
    let vmin = compute_vmin(&l).unwrap().vmin;
    let (_, vgap, bound) = cct_bound(&l, vmin, &DVector::zeros(sc.mats.n_states())).unwrap();
    assert!(vgap >= 0.0 && bound >= 0.0);
    assert_eq!(bound, 2.0 * cert.gamma * vgap);
}

#[test]
fn infeasibility_dominates_larger_gamma() {
    let sc = two_bus();
    let grid = [1.0, 1e14, 1e15, 3.0];
    let result = procedure1(&sc, &[(1, 2)], &grid, &LmiSolveConfig::default()).unwrap();
    assert!(matches!(result.records[0].status, GammaStatus::Feasible { .. }));
    assert!(matches!(result.records[1].status, GammaStatus::Infeasible { .. }));
    assert!(matches!(result.records[2].status, GammaStatus::Dominated));
    assert_eq!(result.best.unwrap().gamma, 3.0);
}

fn bound_at_max_gamma(sc: &Scenario, line: (i64, i64), cert: &Certificate) -> (f64, f64) {
    let sel = line_selector(&sc.model, line).unwrap();
    let cfg = LmiSolveConfig::default();
    let gmax = match max_gamma(&sc.mats, cert.beta, &sel, &cert.q, &cert.k, &cert.h, &cfg).unwrap() {
        GammaMax::Finite(g) => g,
        GammaMax::Unbounded => panic!("unbounded gamma"),
    };
    let c = cert.with_gamma(gmax);
    let l = LyapunovFunction::new(&c, &sc.mats);
    let vmin = compute_vmin(&l).unwrap().vmin;
    (gmax, cct_bound(&l, vmin, &sc.x_pre).unwrap().2)
}

#[test]
fn rescaled_certificate_keeps_its_bound() {
    let sc = three_gen();
    let cert = solve(&sc, (1, 2), 3.0);
    let (g0, b0) = bound_at_max_gamma(&sc, (1, 2), &cert);
    for c in [0.1, 2.5, 40.0] {
        let (g, b) = bound_at_max_gamma(&sc, (1, 2), &cert.scaled(c));
        assert!((g * c / g0 - 1.0).abs() < 1e-6, "gamma {g} vs {}", g0 / c);
        assert!((b - b0).abs() <= 1e-6 * b0, "bound {b} vs {b0}");
    }
}

#[test]
fn robust_bound_is_dominated_by_each_line() {
    let sc = three_gen();
    let lines = [(1, 2), (1, 3)];
    let grid = log_grid(0.05, 20.0, 10).unwrap();
    let robust: CctEstimate =
        procedure1(&sc, &lines, &grid, &LmiSolveConfig::default()).unwrap().best.expect("robust certificate");
    assert_eq!(robust.procedure, Procedure::Robust);
    for line in lines {
        let (gmax, bound) = bound_at_max_gamma(&sc, line, &robust.certificate);
        assert!(gmax >= robust.gamma * (1.0 - 1e-9));
        assert!(robust.bound <= bound + 1e-9, "robust {} vs line {line:?} {bound}", robust.bound);
    }
}

#[test]
fn robust_screen_shares_one_certificate() {
    let sc = three_gen();
    let opts = ScreenOptions { clearing_time: 0.01, grid: Some(log_grid(0.05, 20.0, 6).unwrap()), ..Default::default() };
    let report = robust_screen(&sc, CASE3, &[(1, 2), (2, 3)], &opts).unwrap();
    assert_eq!(report.records.len(), 2);
    assert_eq!(report.records[0].bound, report.records[1].bound);
    assert_eq!(report.records[0].gamma, report.records[1].gamma);
    assert_eq!(report.records[0].verdict, report.records[1].verdict);
}

#[test]
fn screening_is_monotone_in_clearing_time() {
    let sc = three_gen();
    let lines = [(1, 2), (1, 3), (2, 3)];
    let mut previous: Option<Vec<Verdict>> = None;
    for tau in [0.0, 0.05, 0.5, 2.0, 20.0] {
        let opts = ScreenOptions { clearing_time: tau, grid: Some(log_grid(0.05, 20.0, 6).unwrap()), ..Default::default() };
        let verdicts: Vec<Verdict> = screen(&sc, CASE3, &lines, &opts).unwrap().records.iter().map(|r| r.verdict).collect();
        if let Some(prev) = &previous {
            for (p, v) in prev.iter().zip(&verdicts) {
                assert!(!(*p == Verdict::Inconclusive && *v == Verdict::CertifiedStable));
            }
        }
        previous = Some(verdicts);
    }
    assert!(previous.unwrap().iter().all(|v| *v == Verdict::Inconclusive));
}

#[test]
fn procedure2_bounds_survive_simulation() {
    let sc = three_gen();
    let grid = log_grid(0.05, 20.0, 6).unwrap();
    let cfg = LmiSolveConfig::default();
    let params = SimParams::default();
    for line in [(1, 2), (2, 3)] {
        for k in [1, 4] {
            let result = procedure2(&sc, &[line], k, &grid, 7, &cfg).unwrap();
            assert_eq!(result.samples.len(), k);
            let Some(best) = result.best else { continue };
            assert_eq!(best.procedure, Procedure::Two);
            let edge = sc.model.edge_index(line.0, line.1).unwrap();
            let v = probe_settled(&sc.model, &sc.eq_post, edge, &sc.x_pre, 0.99 * best.bound, &params, 160.0).unwrap();
            assert_eq!(v.kind, VerdictKind::Stable, "line {line:?} k {k} bound {}", best.bound);
        }
    }
}

#[test]
fn nine_bus_screen_at_fifty_milliseconds() {
    let sc = nine_bus();
    let lines: Vec<(i64, i64)> = (0..sc.model.n_edges()).map(|e| sc.model.edge_ids(e)).collect();
    let opts = ScreenOptions { clearing_time: 0.05, grid: Some(log_grid(1e-3, 1e2, 11).unwrap()), ..Default::default() };
    let report = screen(&sc, CASE9, &lines, &opts).unwrap();
    assert_eq!(report.records.len(), 9);
    let params = SimParams::default();
    for (r, line) in report.records.iter().zip(&lines) {
        assert_eq!(r.line, format!("{}-{}", line.0, line.1));
        if r.verdict == Verdict::CertifiedStable {
            assert!(r.bound.unwrap() > 0.05);
            let edge = sc.model.edge_index(line.0, line.1).unwrap();
            let v = probe(&sc.model, &sc.eq_post, edge, &sc.x_pre, 0.05, &params).unwrap();
            assert_eq!(v.kind, VerdictKind::Stable, "line {}", r.line);
        }
    }
}

#[test]
fn instability_persists_beyond_true_cct() {
    let sc = two_bus();
    let edge = sc.model.edge_index(1, 2).unwrap();
    let cct = true_cct(&sc.model, &sc.eq_post, edge, &sc.x_pre, &TrueCctConfig::default()).unwrap();
    let params = SimParams::default();
    for tau in [1.01 * cct, 1.2 * cct, 1.5 * cct] {
        let v = probe(&sc.model, &sc.eq_post, edge, &sc.x_pre, tau, &params).unwrap();
        assert_eq!(v.kind, VerdictKind::Unstable, "clearing at {tau}");
    }
    let v = probe(&sc.model, &sc.eq_post, edge, &sc.x_pre, 0.99 * cct, &params).unwrap();
    assert_eq!(v.kind, VerdictKind::Stable);
}

/// One machine against an infinite bus: the undamped equal-area clearing time
/// is a lower bound that light damping only slightly exceeds.
#[test]
fn light_damping_stays_near_equal_area_cct() {
    let text = r#"{"buses": [
        {"id": 1, "kind": "generator", "voltage": 1.0, "inertia": 0.1, "damping": 0.02, "power": 0.5},
        {"id": 2, "kind": "infinite", "voltage": 1.0}
    ], "lines": [{"from": 1, "to": 2, "susceptance": 1.0}]}"#;
    let sc = Scenario::new(parse_network(text).unwrap(), None).unwrap();
    let edge = sc.model.edge_index(1, 2).unwrap();
    let cct = true_cct(&sc.model, &sc.eq_post, edge, &sc.x_pre, &TrueCctConfig::default()).unwrap();
    let (p, m) = (0.5, 0.1);
    let d0 = sc.eq_post.angles[0];
    let dmax = PI - d0;
    let dc = (p * (dmax - d0) + dmax.cos()).acos();
    // Open line: the machine accelerates freely, delta = d0 + p t^2 / (2 m).
    let equal_area = (2.0 * m * (dc - d0) / p).sqrt();
    assert!(cct >= equal_area && cct <= 1.1 * equal_area, "{cct} vs {equal_area}");
}
