//! Central finite-difference gradient checking.
//!
//! The numeric estimate `(f(x + e) - f(x - e)) / 2e` is computed by calling
//! the function under test directly, independently of any backward pass.

use rand::seq::index::sample;

use crate::rng::rng_for;
use crate::scalar::Scalar;

/// Magnitude below which gradients are compared on an absolute scale.
pub const DEFAULT_FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Index (into the checked vector) with the largest relative error.
    pub worst: Option<usize>,
    pub worst_pair: Option<(f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_err > self.max_rel_err) {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
            self.worst_pair = other.worst_pair;
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference<T: Scalar>(f: &mut impl FnMut(&[T]) -> T, x: &mut [T], i: usize, eps: f64) -> f64 {
    let orig = x[i];
    let e = T::from_f64_lossy(eps);
    x[i] = orig + e;
    let plus = f(x).to_f64_lossy();
    x[i] = orig - e;
    let minus = f(x).to_f64_lossy();
    x[i] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Compares `analytic[i]` with the central difference at each of `indices`.
pub fn check<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    x: &[T],
    analytic: &[T],
    indices: &[usize],
    eps: f64,
    floor: f64,
) -> GradCheckReport {
    let mut work = x.to_vec();
    let mut report = GradCheckReport::default();
    for &i in indices {
        let numeric = central_difference(&mut f, &mut work, i, eps);
        let a = analytic[i].to_f64_lossy();
        let rel = relative_error(a, numeric, floor);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if report.worst.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(i);
            report.worst_pair = Some((a, numeric));
        }
    }
    report
}

/// Up to `count` distinct indices in `0..len`, seeded and sorted.
pub fn sample_indices(len: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    let mut rng = rng_for(seed, len as u64);
    let mut idx = sample(&mut rng, len, count).into_vec();
    idx.sort_unstable();
    idx
}
