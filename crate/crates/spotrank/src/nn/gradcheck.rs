//! Central finite-difference gradient checking.
//!
//! The encoders and losses ship hand-derived gradients; this checker is the
//! permanent safety net validating them, both in tests and behind the
//! `gradcheck` CLI subcommand.

use rand::seq::SliceRandom;
use rand::Rng;

use super::params::{Gradients, ModelParams, ParamId};

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is (numerically) zero do not divide by finite-difference noise.
pub const DEFAULT_ATOL: f64 = 1e-6;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<WorstCoordinate>,
}

/// The coordinate with the largest relative error.
#[derive(Debug, Clone)]
pub struct WorstCoordinate {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares `analytic` against central differences of `f` over the given
/// coordinates, perturbing `params` in place (and restoring them).
///
/// The relative error of a coordinate is `|analytic - numeric| /
/// max(|numeric|, atol)`.
pub fn finite_difference_check<F>(
    f: &mut F,
    params: &mut ModelParams,
    analytic: &Gradients,
    h: f64,
    coords: &[(ParamId, usize)],
    atol: f64,
) -> CheckReport
where
    F: FnMut(&ModelParams) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    let mut report = CheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for &(id, index) in coords {
        let original = params.get(id).data()[index];
        params.get_mut(id).data_mut()[index] = original + h;
        let plus = f(params);
        params.get_mut(id).data_mut()[index] = original - h;
        let minus = f(params);
        params.get_mut(id).data_mut()[index] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.tensor(id).data()[index];
        let rel = (a - numeric).abs() / numeric.abs().max(atol);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(WorstCoordinate {
                name: params.name(id).to_string(),
                index,
                analytic: a,
                numeric,
            });
        }
    }
    report
}

/// Every coordinate of every tensor.
pub fn all_coordinates(params: &ModelParams) -> Vec<(ParamId, usize)> {
    params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |k| (id, k)))
        .collect()
}

/// Up to `per_tensor` randomly chosen coordinates from each tensor.
pub fn sample_coordinates<R: Rng>(
    params: &ModelParams,
    per_tensor: usize,
    rng: &mut R,
) -> Vec<(ParamId, usize)> {
    let mut coords = Vec::new();
    for id in params.ids() {
        let len = params.get(id).len();
        if len <= per_tensor {
            coords.extend((0..len).map(|k| (id, k)));
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            all.shuffle(rng);
            coords.extend(all[..per_tensor].iter().map(|&k| (id, k)));
        }
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn quadratic_setup() -> (ModelParams, Gradients) {
        let mut params = ModelParams::new();
        let data = vec![0.3, -1.2, 2.0, 0.7, -0.1, 0.9];
        params.insert("w", Tensor::from_vec(2, 3, data.clone()));
        let mut grads = params.new_gradients();
        let id = params.id("w").unwrap();
        for (g, x) in grads.tensor_mut(id).data_mut().iter_mut().zip(&data) {
            *g = 2.0 * x;
        }
        (params, grads)
    }

    fn quadratic(params: &ModelParams) -> f64 {
        let id = params.id("w").unwrap();
        params.get(id).data().iter().map(|x| x * x).sum()
    }

    #[test]
    fn quadratic_with_exact_gradient() {
        let (mut params, grads) = quadratic_setup();
        let coords = all_coordinates(&params);
        let report =
            finite_difference_check(&mut quadratic, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL);
        assert!(
            report.max_rel_error <= 1e-8,
            "error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let (mut params, mut grads) = quadratic_setup();
        grads.scale(2.0);
        let coords = all_coordinates(&params);
        let report =
            finite_difference_check(&mut quadratic, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL);
        assert!(
            (report.max_rel_error - 1.0).abs() < 1e-6,
            "error {}",
            report.max_rel_error
        );
        assert!(!report.passes(1e-3));
    }

    #[test]
    fn parameters_are_restored_after_check() {
        let (mut params, grads) = quadratic_setup();
        let before = params.get(params.id("w").unwrap()).clone();
        let coords = all_coordinates(&params);
        finite_difference_check(&mut quadratic, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL);
        assert_eq!(params.get(params.id("w").unwrap()), &before);
    }

    #[test]
    fn sampling_caps_per_tensor() {
        use rand::SeedableRng;
        let mut params = ModelParams::new();
        params.insert("a", Tensor::zeros(10, 10));
        params.insert("b", Tensor::zeros(1, 3));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let coords = sample_coordinates(&params, 7, &mut rng);
        let a = params.id("a").unwrap();
        let b = params.id("b").unwrap();
        assert_eq!(coords.iter().filter(|(id, _)| *id == a).count(), 7);
        assert_eq!(coords.iter().filter(|(id, _)| *id == b).count(), 3);
    }
}
