//! Central finite-difference gradient checking.
//!
//! The checker re-evaluates a caller-supplied forward closure with perturbed
//! inputs, so it is independent of the backward implementation it verifies.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
}

/// Default step for central differences in double precision.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so near-zero gradient pairs do not
/// blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Probe random coordinates of each input and compare central finite
/// differences of `eval` against the supplied analytic gradients.
pub fn check_gradients(
    eval: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    analytic: &[Tensor],
    probes_per_input: usize,
    step: f64,
    seed: u64,
) -> GradCheckReport {
    assert_eq!(inputs.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut probes = 0;
    for pi in 0..inputs.len() {
        let n = inputs[pi].numel();
        if n == 0 {
            continue;
        }
        let count = probes_per_input.min(n);
        for _ in 0..count {
            let coord = rng.random_range(0..n);
            let orig = work[pi].data()[coord];
            work[pi].data_mut()[coord] = orig + step;
            let f_plus = eval(&work);
            work[pi].data_mut()[coord] = orig - step;
            let f_minus = eval(&work);
            work[pi].data_mut()[coord] = orig;
            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = analytic[pi].data()[coord];
            max_rel = max_rel.max(rel_err(fd, an));
            probes += 1;
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        probes,
    }
}
