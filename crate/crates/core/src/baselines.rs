//! Comparison methods: absolute-target conditioning, scalar rejection
//! sampling, and weight-space interpolation of single-objective policies.

use alloc::format;
use alloc::vec::Vec;

use crate::alignment::{run_dpa, AlignmentConfig, DpaInputs, DpaRun};
use crate::env::{AnnotatedExample, Prompt, Response, SynthEnv};
use crate::exec::Executor;
use crate::policy::{FitConfig, PolicyParams, SequenceExample};
use crate::preference::{DirectionalPreference, PreferenceDistribution};
use crate::reward_model::RewardVector;
use crate::{Error, Result};

/// An absolute reward target `r̄ ∈ [0, 100]^k`; the policy sees `r̄ / 100`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardConditioning {
    pub target: RewardVector,
}

impl RewardConditioning {
    pub fn new(target: RewardVector) -> Self {
        Self { target }
    }

    pub fn conditioning(&self) -> Vec<f64> {
        self.target.values().iter().map(|t| t / 100.0).collect()
    }
}

/// Training examples conditioned on each response's own reward vector.
pub fn steerlm_examples(data: &[AnnotatedExample]) -> Vec<SequenceExample> {
    data.iter()
        .map(|ex| SequenceExample {
            prompt: ex.prompt.clone(),
            conditioning: RewardConditioning::new(ex.rewards.clone()).conditioning(),
            response: ex.response.clone(),
        })
        .collect()
}

/// Fits `init` to map `(x, r(y) / 100)` to `y` on the annotated data.
pub fn train_steerlm(
    data: &[AnnotatedExample],
    init: &PolicyParams,
    config: &FitConfig,
    exec: &Executor,
) -> Result<PolicyParams> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no annotated data".into()));
    }
    Ok(init.fit(&steerlm_examples(data), config, exec)?.0)
}

/// Mean over responses of the mean per-objective absolute gap between the
/// true rewards and `target`.
pub fn control_error(
    env: &SynthEnv,
    x: &Prompt,
    responses: &[Response],
    target: &RewardVector,
) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::InvalidArgument("no responses".into()));
    }
    let k = target.dim();
    let mut total = 0.0;
    for y in responses {
        let r = env.true_rewards(x, y);
        if r.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: r.dim(),
            });
        }
        total += r
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| libm::fabs(a - b))
            .sum::<f64>()
            / k as f64;
    }
    Ok(total / responses.len() as f64)
}

/// The DPA loop with the preference pinned to the first objective.
pub fn train_scalar_rsf(
    config: &AlignmentConfig,
    inputs: &DpaInputs<'_>,
    seed: u64,
    exec: &Executor,
) -> Result<DpaRun> {
    let k = inputs.sft.arch.cond_dim;
    let mut e1 = alloc::vec![0.0; k];
    e1[0] = 1.0;
    let config = AlignmentConfig {
        preferences: PreferenceDistribution::Fixed {
            v: DirectionalPreference::new(e1)?,
        },
        ..config.clone()
    };
    run_dpa(&config, inputs, seed, exec)
}

/// `Σ_i w_i θ_i` over policies of identical shape; weights must be
/// nonnegative and sum to one.
pub fn soup_interpolate(params: &[PolicyParams], weights: &[f64]) -> Result<PolicyParams> {
    if params.is_empty() || params.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} policies but {} weights",
            params.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
        || libm::fabs(weights.iter().sum::<f64>() - 1.0) > 1e-9
    {
        return Err(Error::InvalidArgument(
            "soup weights must be nonnegative and sum to 1".into(),
        ));
    }
    let first = &params[0];
    if let Some(p) = params
        .iter()
        .find(|p| p.arch != first.arch || p.weights.len() != first.weights.len())
    {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            first.arch, p.arch
        )));
    }
    let mut weights_out = alloc::vec![0.0; first.weights.len()];
    for (p, &w) in params.iter().zip(weights) {
        weights_out
            .iter_mut()
            .zip(&p.weights)
            .for_each(|(o, x)| *o += w * x);
    }
    Ok(PolicyParams {
        arch: first.arch.clone(),
        weights: weights_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_policy, PolicyArch};

    fn arch(hidden: usize) -> PolicyArch {
        PolicyArch {
            vocab_size: 4,
            cond_dim: 2,
            hidden,
            max_len: 3,
            max_difficulty: 2,
        }
    }

    #[test]
    fn soup_endpoints_and_errors() {
        let a = init_policy(&arch(4), 0.5, 1).unwrap();
        let b = init_policy(&arch(4), 0.5, 2).unwrap();
        let pair = [a.clone(), b.clone()];
        assert_eq!(soup_interpolate(&pair, &[1.0, 0.0]).unwrap(), a);
        assert_eq!(soup_interpolate(&pair, &[0.0, 1.0]).unwrap(), b);
        assert!(soup_interpolate(&pair, &[0.6, 0.6]).is_err());
        assert!(soup_interpolate(&pair, &[1.0]).is_err());
        let c = init_policy(&arch(5), 0.5, 3).unwrap();
        assert!(matches!(
            soup_interpolate(&[a, c], &[0.5, 0.5]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn conditioning_is_scaled_target() {
        let c = RewardConditioning::new(RewardVector::new(alloc::vec![100.0, 25.0]).unwrap());
        assert_eq!(c.conditioning(), [1.0, 0.25]);
    }
}
