//! Randomized property checks of the Stiefel kernels, shared by the test
//! suite and the `stiefel-check` command.

use nalgebra::{Matrix2, Matrix3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::stiefel::{
    dexp_map, exp_map, matrix_exp, orthonormality_defect, sym_bracket, tangent_project, Mat32, StiefelPoint,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Admissible range of that quantity.
    pub range: (f64, f64),
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst >= self.range.0 && self.worst <= self.range.1
    }
}

pub fn random_matrix(rng: &mut impl Rng, scale: f64) -> Mat32 {
    Mat32::from_fn(|_, _| scale * rng.gen_range(-1.0..1.0))
}

/// Orthonormal columns of a random matrix.
pub fn random_point(rng: &mut impl Rng) -> StiefelPoint {
    loop {
        let q = random_matrix(rng, 1.0).qr().q();
        if let Ok(p) = StiefelPoint::new(q) {
            return p;
        }
    }
}

/// A random tangent vector at `u` with Frobenius norm `norm`.
pub fn random_tangent(rng: &mut impl Rng, u: &StiefelPoint, norm: f64) -> Mat32 {
    loop {
        let w = tangent_project(u, &random_matrix(rng, 1.0));
        let n = w.norm();
        if n > 1e-3 {
            return w * (norm / n);
        }
    }
}

fn orthonormal_exp(rng: &mut StdRng, n: usize) -> CheckResult {
    let worst = (0..n)
        .map(|_| {
            let u = random_point(rng);
            let norm = rng.gen_range(0.0..2.0);
            let w = random_tangent(rng, &u, norm);
            let tau = rng.gen_range(0.0..10.0);
            orthonormality_defect(&exp_map(&u, &w, tau))
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "exp_map of tangent input stays orthonormal",
        samples: n,
        worst,
        range: (0.0, 1e-12),
    }
}

fn projection(rng: &mut StdRng, n: usize) -> CheckResult {
    let worst = (0..n)
        .map(|_| {
            let u = random_point(rng);
            let r = tangent_project(&u, &random_matrix(rng, 2.0));
            let tangency = sym_bracket(u.matrix(), &r).norm();
            let idempotence = (tangent_project(&u, &r) - r).norm();
            tangency.max(idempotence)
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "projection is tangent and idempotent",
        samples: n,
        worst,
        range: (0.0, 1e-13),
    }
}

/// Ratio of the second-order Taylor defects at `tau` and `tau / 2`.
pub fn taylor_ratio(u: &StiefelPoint, w: &Mat32, tau: f64) -> f64 {
    let defect = |t: f64| {
        let um = u.matrix();
        let taylor = um + w * t - um * (w.transpose() * w) * (0.5 * t * t);
        (exp_map(u, w, t) - taylor).norm()
    };
    defect(tau) / defect(0.5 * tau)
}

fn taylor_order(rng: &mut StdRng, n: usize) -> CheckResult {
    // report the sample furthest from the ideal ratio 8
    let worst = (0..n)
        .map(|_| {
            let u = random_point(rng);
            let w = random_tangent(rng, &u, 1.0);
            taylor_ratio(&u, &w, 1e-2)
        })
        .fold(8.0, |a: f64, b: f64| if (b - 8.0).abs() > (a - 8.0).abs() { b } else { a });
    CheckResult {
        name: "Taylor defect ratio under halving tau",
        samples: n,
        worst,
        range: (6.5, 9.5),
    }
}

fn dexp_against_differences(rng: &mut StdRng, n: usize) -> CheckResult {
    let h = 1e-5;
    let worst = (0..n)
        .map(|_| {
            let u = random_point(rng);
            let w = random_matrix(rng, 1.0);
            let w = w * (rng.gen_range(0.0..2.0) / w.norm());
            let g = random_matrix(rng, 1.0);
            let g = g * (rng.gen_range(0.1..2.0) / g.norm());
            let tau = rng.gen_range(0.0..2.0);
            let fd = (exp_map(&u, &(w + g * h), tau) - exp_map(&u, &(w - g * h), tau)) / (2.0 * h);
            let exact = dexp_map(&u, &w, tau, &g);
            (fd - exact).norm() / exact.norm().max(1e-300)
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "dexp_map matches central differences",
        samples: n,
        worst,
        range: (0.0, 1e-6),
    }
}

fn dexp_at_zero(rng: &mut StdRng, n: usize) -> CheckResult {
    let worst = (0..n)
        .map(|_| {
            let u = random_point(rng);
            let norm = rng.gen_range(0.1..2.0);
            let g = random_tangent(rng, &u, norm);
            let tau = rng.gen_range(0.0..2.0);
            (dexp_map(&u, &Mat32::zeros(), tau, &g) - g * tau).norm()
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "dexp_map at zero is tau times the identity on tangents",
        samples: n,
        worst,
        range: (0.0, 1e-13),
    }
}

fn skew_exponential(rng: &mut StdRng, n: usize) -> CheckResult {
    let worst = (0..n)
        .map(|_| {
            let s = rng.gen_range(0.0..10.0);
            let a = Matrix3::from_fn(|_, _| s * rng.gen_range(-1.0..1.0));
            let q3 = matrix_exp(&(a - a.transpose()));
            let b = Matrix2::from_fn(|_, _| s * rng.gen_range(-1.0..1.0));
            let q2 = matrix_exp(&(b - b.transpose()));
            let d3 = (q3.transpose() * q3 - Matrix3::identity()).norm().max((q3.determinant() - 1.0).abs());
            let d2 = (q2.transpose() * q2 - Matrix2::identity()).norm().max((q2.determinant() - 1.0).abs());
            d3.max(d2)
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "exponential of skew input is a rotation",
        samples: n,
        worst,
        range: (0.0, 1e-13),
    }
}

/// Runs every check with a reproducible stream of samples.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = StdRng::seed_from_u64(seed);
    vec![
        orthonormal_exp(&mut rng, 1000),
        projection(&mut rng, 1000),
        taylor_order(&mut rng, 100),
        dexp_against_differences(&mut rng, 100),
        dexp_at_zero(&mut rng, 1000),
        skew_exponential(&mut rng, 1000),
    ]
}
