use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamSet;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are compared in absolute terms.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4, samples_per_tensor: 16, abs_floor: 1e-5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor name, coordinate, analytic value, numeric value of the worst case.
    pub worst: Option<(String, usize, f64, f64)>,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` on a random
/// subsample of coordinates of `params`. Relative error is
/// `|a − n| / max(|a|, |n|, abs_floor)`.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut loss: F, config: &GradCheckConfig) -> GradCheckReport
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut work = params.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None, passed: true };
    for (ti, (name, len)) in names.iter().enumerate() {
        if *len == 0 {
            continue;
        }
        let coords = if *len <= config.samples_per_tensor {
            (0..*len).collect::<Vec<_>>()
        } else {
            sample(&mut rng, *len, config.samples_per_tensor).into_vec()
        };
        for k in coords {
            let orig = work.tensors()[ti].1.data()[k];
            work.tensors_mut()[ti].data_mut()[k] = orig + config.step;
            let up = loss(&work);
            work.tensors_mut()[ti].data_mut()[k] = orig - config.step;
            let down = loss(&work);
            work.tensors_mut()[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            let a = grads[ti][k];
            let denom = a.abs().max(numeric.abs()).max(config.abs_floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k, a, numeric));
            }
        }
    }
    report.passed = report.max_rel_error < config.tolerance;
    report
}
