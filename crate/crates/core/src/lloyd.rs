//! Lloyd-Max scalar quantizer for the standard Gaussian source.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

/// Standard normal CDF via `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability of `(a, b)`; uses the upper tail when both ends are positive.
fn cell_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// `x * pdf(x)`, zero at infinity.
fn xpdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * pdf(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydQuantizer {
    pub levels: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Expected squared error under N(0, 1).
    pub distortion: f64,
    pub iterations: usize,
}

impl LloydQuantizer {
    pub fn quantize(&self, x: f64) -> f64 {
        let cell = self.thresholds.partition_point(|&t| t < x);
        self.levels[cell]
    }
}

fn midpoints(levels: &[f64]) -> Vec<f64> {
    levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn cell_bounds(thresholds: &[f64], i: usize) -> (f64, f64) {
    let a = if i == 0 { f64::NEG_INFINITY } else { thresholds[i - 1] };
    let b = thresholds.get(i).copied().unwrap_or(f64::INFINITY);
    (a, b)
}

/// `E[X | a < X < b]` for `X ~ N(0, 1)`.
pub fn conditional_mean(a: f64, b: f64) -> f64 {
    (pdf(a) - pdf(b)) / cell_mass(a, b)
}

/// Closed-form `E[(X - q(X))^2]` for a threshold quantizer.
pub fn closed_form_distortion(levels: &[f64], thresholds: &[f64]) -> f64 {
    assert_eq!(levels.len(), thresholds.len() + 1);
    levels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (a, b) = cell_bounds(thresholds, i);
            let mass = cell_mass(a, b);
            let first = pdf(a) - pdf(b);
            let second = mass + xpdf(a) - xpdf(b);
            second - 2.0 * c * first + c * c * mass
        })
        .sum()
}

/// One Lloyd update: midpoint thresholds, then conditional-mean levels.
pub fn lloyd_step(levels: &[f64]) -> Vec<f64> {
    let t = midpoints(levels);
    (0..levels.len())
        .map(|i| {
            let (a, b) = cell_bounds(&t, i);
            conditional_mean(a, b)
        })
        .collect()
}

/// Initial levels: evenly spaced over `[-3, 3]`, the canonical level set
/// rescaled for even counts.
pub fn initial_levels(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -3.0 + 6.0 * i as f64 / (count - 1) as f64)
        .collect()
}

pub fn design(count: usize, tol: f64, max_iter: usize) -> Result<LloydQuantizer> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one level".into()));
    }
    let mut levels = initial_levels(count);
    let finish = |levels: Vec<f64>, iterations| {
        let thresholds = midpoints(&levels);
        let distortion = closed_form_distortion(&levels, &thresholds);
        LloydQuantizer {
            levels,
            thresholds,
            distortion,
            iterations,
        }
    };
    for it in 1..=max_iter {
        let next = lloyd_step(&levels);
        let moved = next
            .iter()
            .zip(&levels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        levels = next;
        if moved < tol {
            return Ok(finish(levels, it));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last: Box::new(finish(levels, max_iter)),
    })
}

/// Monte-Carlo `E[(X - q(X))^2]` over `samples` standard normal draws.
pub fn expected_distortion<R: Rng + ?Sized>(
    q: impl Fn(f64) -> f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    assert!(samples > 0);
    let total: f64 = (0..samples)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let e = x - q(x);
            e * e
        })
        .sum();
    total / samples as f64
}
