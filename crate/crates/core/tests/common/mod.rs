#![allow(dead_code)]

use std::f64::consts::PI;

use cct_screen::cct::Scenario;
use cct_screen::lmi::Certificate;
use cct_screen::netmodel::parse_network;
use nalgebra::{DMatrix, DVector};

pub const CASE2: &str = include_str!("../../data/case2.json");
pub const CASE3: &str = include_str!("../../data/case3.json");
pub const CASE9: &str = include_str!("../../data/case9.json");

pub fn data_path(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn two_bus() -> Scenario {
    Scenario::new(parse_network(CASE2).unwrap(), Some(PI / 10.0)).unwrap()
}

pub fn three_gen() -> Scenario {
    Scenario::new(parse_network(CASE3).unwrap(), Some(PI / 10.0)).unwrap()
}

pub fn nine_bus() -> Scenario {
    Scenario::new(parse_network(CASE9).unwrap(), Some(PI / 8.0)).unwrap()
}

/// Reference 2-bus certificate at gamma = 7.
pub fn witness2(beta: f64) -> Certificate {
    Certificate {
        q: DMatrix::from_row_slice(2, 2, &[0.0443, 0.0127, 0.0127, 0.0879]),
        k: DVector::from_element(1, 0.0968),
        h: DVector::from_element(1, 0.2412),
        gamma: 7.0,
        beta,
    }
}

/// Reference three-generator certificate at gamma = 3 for line 1-2. K and H
/// are listed in line order 1-2, 1-3, 2-3, which is also the edge order here.
pub fn witness3(beta: f64) -> Certificate {
    #[rustfmt::skip]
    let q = DMatrix::from_row_slice(6, 6, &[
        3.8376, 3.8012, 3.5779, 7.5549, 7.4619, 7.4166,
        3.8012, 3.8457, 3.5698, 7.4776, 7.5530, 7.4029,
        3.5779, 3.5698, 4.0690, 7.4010, 7.4185, 7.6140,
        7.5549, 7.4776, 7.4010, 38.9402, 38.2449, 38.0704,
        7.4619, 7.5530, 7.4185, 38.2449, 38.9534, 38.0571,
        7.4166, 7.4029, 7.6140, 38.0704, 38.0571, 39.1280,
    ]);
    Certificate {
        q,
        k: DVector::from_vec(vec![0.2554, 0.3638, 0.4386]),
        h: DVector::from_vec(vec![0.0943, 0.2533, 0.2960]),
        gamma: 3.0,
        beta,
    }
}

/// Small deterministic generator for sampling states in test code.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

/// States with every edge angle within pi/2 (rejection sampling on angle
/// deviations) and velocities in `[-vmax, vmax]`.
pub fn states_in_polytope(sc: &Scenario, count: usize, vmax: f64, seed: u64) -> Vec<DVector<f64>> {
    let mats = &sc.mats;
    let mut rng = Lcg::new(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x = DVector::zeros(mats.n_states());
        for k in 0..mats.n {
            x[mats.angle_index(k)] = rng.range(-PI / 2.0, PI / 2.0);
        }
        for j in 0..mats.m {
            x[mats.m + j] = rng.range(-vmax, vmax);
        }
        if mats.edge_angles(&x).iter().all(|d| d.abs() <= PI / 2.0) {
            out.push(x);
        }
    }
    out
}
