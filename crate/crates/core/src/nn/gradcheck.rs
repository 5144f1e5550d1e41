//! Central finite-difference checks for the hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ActorCritic, Array4, GradientSet, Mode, NnError, OutputGrads, PolicyOutput, TensorKind};

/// Floor on the denominator of [`relative_error`], so that two near-zero
/// gradients compare by absolute difference.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst coordinate.
    pub worst: Option<String>,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a ReLU and so sit on a kink.
    pub skipped: usize,
}

/// Compares [`ActorCritic::backward`] against central differences of `loss`.
pub fn grad_check<L>(
    net: &ActorCritic,
    input: &Array4,
    mode: Mode,
    loss: L,
    options: GradCheckOptions,
) -> Result<GradCheckReport, NnError>
where
    L: Fn(&PolicyOutput) -> (f64, OutputGrads),
{
    let (out, cache) = net.forward(input, mode)?;
    let (_, grads) = loss(&out);
    let analytic = net.backward(&cache, &grads)?;
    grad_check_against(net, input, mode, loss, &analytic, options)
}

/// Like [`grad_check`] with caller-supplied analytic gradients.
pub fn grad_check_against<L>(
    net: &ActorCritic,
    input: &Array4,
    mode: Mode,
    loss: L,
    analytic: &GradientSet,
    options: GradCheckOptions,
) -> Result<GradCheckReport, NnError>
where
    L: Fn(&PolicyOutput) -> (f64, OutputGrads),
{
    if !analytic.matches(net) {
        return Err(NnError::Shape("gradient set does not match network parameters".into()));
    }
    let (_, base_cache) = net.forward(input, mode)?;
    let base_signature = base_cache.relu_signature();
    let mut probe = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let h = options.step;

    let evaluate = |probe: &ActorCritic| -> Result<Option<f64>, NnError> {
        let (out, cache) = probe.forward(input, mode)?;
        if cache.relu_signature() != base_signature {
            return Ok(None);
        }
        Ok(Some(loss(&out).0))
    };

    for (t, grad) in analytic.buffers.iter().enumerate() {
        let coords: Vec<usize> = match options.max_per_tensor {
            Some(k) if k < grad.len() => {
                let mut v = sample(&mut rng, grad.len(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..grad.len()).collect(),
        };
        for i in coords {
            let original = param_slot(&mut probe, t)[i];
            param_slot(&mut probe, t)[i] = original + h;
            let plus = evaluate(&probe)?;
            param_slot(&mut probe, t)[i] = original - h;
            let minus = evaluate(&probe)?;
            param_slot(&mut probe, t)[i] = original;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                report.skipped += 1;
                continue;
            };
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(format!("{}[{i}]", analytic.names[t]));
            }
        }
    }
    Ok(report)
}

fn param_slot(net: &mut ActorCritic, index: usize) -> &mut [f64] {
    net.tensors_mut()
        .into_iter()
        .filter(|t| t.kind == TensorKind::Param)
        .nth(index)
        .expect("parameter index in range")
        .data
}
