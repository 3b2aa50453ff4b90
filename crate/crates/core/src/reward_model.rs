//! Multi-objective reward regression.
//!
//! The learned scorer is a linear head over a small hand-built feature map of
//! a (prompt, response) pair, fit by minimizing mean squared vector error.
//! Closed-form normal equations are tried first; a singular or
//! ill-conditioned system falls back to full-batch gradient descent with a
//! step size inside the stability bound.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{AnnotatedExample, Prompt, Response, SynthEnv};
use crate::linalg::{cholesky, cholesky_solve};
use crate::rng::{rng_from_seed, standard_normal};
use crate::{Error, Result};

/// Per-attribute ratings for a (prompt, response) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for RewardVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RewardVector> for Vec<f64> {
    fn from(r: RewardVector) -> Self {
        r.values
    }
}

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty reward vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reward vector {values:?}")));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_array(values: [f64; 2]) -> Self {
        Self {
            values: values.to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// First two coordinates.
    pub fn as_pair(&self) -> [f64; 2] {
        [self.values[0], self.values.get(1).copied().unwrap_or(0.0)]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }
}

/// Affine map of `raw` from `[lo, hi]` onto `[0, 100]`, clamped.
pub fn rescale(raw: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "degenerate rescale range [{lo}, {hi}]"
        )));
    }
    Ok((100.0 * (raw - lo) / (hi - lo)).clamp(0.0, 100.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Fraction of relevant tokens covered.
    Coverage,
    /// Length over `max_len`.
    Length,
    /// Coverage times length.
    CoverageLength,
    /// `|relevant|` over `max_difficulty`.
    Difficulty,
    /// Squared normalized length.
    LengthSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub features: Vec<Feature>,
    pub max_len: usize,
    pub max_difficulty: usize,
}

impl FeatureSpec {
    pub fn for_env(env: &SynthEnv) -> Self {
        Self {
            features: vec![
                Feature::Coverage,
                Feature::Length,
                Feature::CoverageLength,
                Feature::Difficulty,
                Feature::LengthSquared,
            ],
            max_len: env.max_len(),
            max_difficulty: env.config().max_difficulty,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self, x: &Prompt, y: &Response) -> Vec<f64> {
        let cover = x.coverage(&y.tokens) as f64 / x.difficulty() as f64;
        let len = y.len() as f64 / self.max_len as f64;
        self.features
            .iter()
            .map(|f| match f {
                Feature::Coverage => cover,
                Feature::Length => len,
                Feature::CoverageLength => cover * len,
                Feature::Difficulty => x.difficulty() as f64 / self.max_difficulty as f64,
                Feature::LengthSquared => len * len,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Closed form, falling back to gradient descent.
    #[default]
    Auto,
    GradientDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardModelConfig {
    pub solver: Solver,
    /// L2 penalty on head weights (not the bias).
    pub l2: f64,
    pub epochs: usize,
    /// Gradient-descent step; `None` picks one inside the stability bound.
    pub learning_rate: Option<f64>,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            solver: Solver::Auto,
            l2: 0.0,
            epochs: 5000,
            learning_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub solver: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModelParams {
    pub feature_spec: FeatureSpec,
    /// `k × feature_dim`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub train_meta: TrainMeta,
}

impl RewardModelParams {
    pub fn zeros(feature_spec: FeatureSpec, k: usize) -> Self {
        let f = feature_spec.dim();
        Self {
            feature_spec,
            weights: vec![vec![0.0; f]; k],
            bias: vec![0.0; k],
            train_meta: TrainMeta {
                solver: "none".into(),
                epochs: 0,
                final_loss: f64::NAN,
                examples: 0,
            },
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_spec.dim();
        if self.weights.len() != self.bias.len() || self.weights.iter().any(|w| w.len() != f) {
            return Err(Error::ShapeMismatch(format!(
                "reward head must be {} x {f}",
                self.bias.len()
            )));
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .any(|w| !w.is_finite())
        {
            return Err(Error::NonFinite("reward model parameters".into()));
        }
        Ok(())
    }

    pub fn predict_features(&self, phi: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(phi).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    /// Parameters in the `[W row-major, b]` layout used by [`RegressionProblem`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        let f = self.feature_spec.dim();
        for (j, row) in self.weights.iter_mut().enumerate() {
            row.copy_from_slice(&theta[j * f..(j + 1) * f]);
        }
        let k = self.bias.len();
        self.bias.copy_from_slice(&theta[k * f..]);
    }
}

/// Unclamped `r̃(x, y)`.
pub fn predict(params: &RewardModelParams, x: &Prompt, y: &Response) -> RewardVector {
    let phi = params.feature_spec.features(x, y);
    RewardVector {
        values: params.predict_features(&phi),
    }
}

/// Features and targets of a regression run.
///
/// Loss is `mean_i ||W φ_i + b - r_i||² + l2 ||W||²`, and parameters are
/// flattened as `[W row-major, b]`.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub l2: f64,
}

impl RegressionProblem {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, l2: f64) -> Result<Self> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows vs {} targets",
                features.len(),
                targets.len()
            )));
        }
        let f = features[0].len();
        let k = targets[0].len();
        if features.iter().any(|r| r.len() != f) || targets.iter().any(|t| t.len() != k) {
            return Err(Error::ShapeMismatch("ragged regression data".into()));
        }
        Ok(Self {
            features,
            targets,
            l2,
        })
    }

    pub fn from_examples(spec: &FeatureSpec, data: &[AnnotatedExample], l2: f64) -> Result<Self> {
        Self::new(
            data.iter()
                .map(|e| spec.features(&e.prompt, &e.response))
                .collect(),
            data.iter().map(|e| e.rewards.values().to_vec()).collect(),
            l2,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn k(&self) -> usize {
        self.targets[0].len()
    }

    pub fn param_len(&self) -> usize {
        self.k() * (self.feature_dim() + 1)
    }

    fn residuals<'a>(&'a self, theta: &'a [f64]) -> impl Iterator<Item = (usize, Vec<f64>)> + 'a {
        let (f, k) = (self.feature_dim(), self.k());
        self.features.iter().enumerate().map(move |(i, phi)| {
            let res = (0..k)
                .map(|j| {
                    let w = &theta[j * f..(j + 1) * f];
                    theta[k * f + j] + w.iter().zip(phi).map(|(a, x)| a * x).sum::<f64>()
                        - self.targets[i][j]
                })
                .collect();
            (i, res)
        })
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.features.len() as f64;
        let (f, k) = (self.feature_dim(), self.k());
        let sse: f64 = self
            .residuals(theta)
            .map(|(_, r)| r.iter().map(|e| e * e).sum::<f64>())
            .sum();
        let reg: f64 = theta[..k * f].iter().map(|w| w * w).sum();
        sse / n + self.l2 * reg
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.features.len() as f64;
        let (f, k) = (self.feature_dim(), self.k());
        let mut g = vec![0.0; self.param_len()];
        for (i, res) in self.residuals(theta) {
            let phi = &self.features[i];
            for (j, e) in res.iter().enumerate() {
                let s = 2.0 * e / n;
                for (p, x) in phi.iter().enumerate() {
                    g[j * f + p] += s * x;
                }
                g[k * f + j] += s;
            }
        }
        for (gw, w) in g[..k * f].iter_mut().zip(&theta[..k * f]) {
            *gw += 2.0 * self.l2 * w;
        }
        g
    }

    /// Gram matrix of `[φ, 1]` over `n`, row-major `(f+1)²`.
    fn gram(&self) -> Vec<f64> {
        let f = self.feature_dim();
        let m = f + 1;
        let n = self.features.len() as f64;
        let mut g = vec![0.0; m * m];
        for phi in &self.features {
            for a in 0..m {
                let xa = if a < f { phi[a] } else { 1.0 };
                for b in 0..m {
                    let xb = if b < f { phi[b] } else { 1.0 };
                    g[a * m + b] += xa * xb / n;
                }
            }
        }
        g
    }

    /// Largest step with guaranteed monotone descent, from the trace bound
    /// on the Hessian's top eigenvalue.
    pub fn stable_step(&self) -> f64 {
        let m = self.feature_dim() + 1;
        let g = self.gram();
        let trace: f64 = (0..m).map(|i| g[i * m + i]).sum();
        1.0 / (2.0 * (trace + self.l2))
    }

    /// Normal-equation solution, or `None` if the system is singular.
    pub fn solve_closed_form(&self) -> Option<Vec<f64>> {
        let (f, k) = (self.feature_dim(), self.k());
        let m = f + 1;
        let n = self.features.len() as f64;
        let mut a = self.gram();
        for p in 0..f {
            a[p * m + p] += self.l2;
        }
        let l = cholesky(&a, m)?;
        let mut theta = vec![0.0; self.param_len()];
        for j in 0..k {
            let mut rhs = vec![0.0; m];
            for (phi, t) in self.features.iter().zip(&self.targets) {
                for p in 0..f {
                    rhs[p] += phi[p] * t[j] / n;
                }
                rhs[f] += t[j] / n;
            }
            cholesky_solve(&l, m, &mut rhs);
            theta[j * f..(j + 1) * f].copy_from_slice(&rhs[..f]);
            theta[k * f + j] = rhs[f];
        }
        theta.iter().all(|t| t.is_finite()).then_some(theta)
    }

    /// Full-batch gradient descent from `theta`; returns the loss before
    /// every epoch followed by the final loss.
    pub fn gradient_descent(&self, theta: &mut [f64], epochs: usize, step: f64) -> Vec<f64> {
        let mut history = Vec::with_capacity(epochs + 1);
        for _ in 0..epochs {
            history.push(self.loss(theta));
            let g = self.gradient(theta);
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= step * gi;
            }
        }
        history.push(self.loss(theta));
        history
    }
}

/// Fits the reward head on `data`.
pub fn train_reward_model(
    data: &[AnnotatedExample],
    spec: &FeatureSpec,
    config: &RewardModelConfig,
    seed: u64,
) -> Result<RewardModelParams> {
    let problem = RegressionProblem::from_examples(spec, data, config.l2)?;
    fit_problem(&problem, spec.clone(), config, seed)
}

pub(crate) fn fit_problem(
    problem: &RegressionProblem,
    spec: FeatureSpec,
    config: &RewardModelConfig,
    seed: u64,
) -> Result<RewardModelParams> {
    let f = spec.dim();
    if problem.feature_dim() != f {
        return Err(Error::DimensionMismatch {
            expected: f,
            got: problem.feature_dim(),
        });
    }
    if problem.features.len() < f {
        return Err(Error::InvalidArgument(format!(
            "need at least {f} examples, got {}",
            problem.features.len()
        )));
    }
    let mut params = RewardModelParams::zeros(spec, problem.k());
    let closed = match config.solver {
        Solver::Auto => problem.solve_closed_form(),
        Solver::GradientDescent => None,
    };
    let (theta, solver, epochs) = match closed {
        Some(theta) => (theta, "closed_form", 0),
        None => {
            let mut rng = rng_from_seed(seed);
            let mut theta: Vec<f64> = (0..problem.param_len())
                .map(|_| 0.01 * standard_normal(&mut rng))
                .collect();
            let step = config
                .learning_rate
                .unwrap_or_else(|| problem.stable_step());
            problem.gradient_descent(&mut theta, config.epochs, step);
            (theta, "gradient_descent", config.epochs)
        }
    };
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("reward regression diverged".into()));
    }
    params.set_flat(&theta);
    params.train_meta = TrainMeta {
        solver: solver.into(),
        epochs,
        final_loss: problem.loss(&theta),
        examples: problem.features.len(),
    };
    Ok(params)
}

/// Per-dimension coefficient of determination of `params` on `data`.
pub fn r_squared(params: &RewardModelParams, data: &[AnnotatedExample]) -> Vec<f64> {
    let k = params.k();
    let n = data.len() as f64;
    (0..k)
        .map(|j| {
            let mean = data.iter().map(|e| e.rewards.values()[j]).sum::<f64>() / n;
            let (mut ss_res, mut ss_tot) = (0.0, 0.0);
            for e in data {
                let y = e.rewards.values()[j];
                let p = predict(params, &e.prompt, &e.response).values()[j];
                ss_res += (y - p) * (y - p);
                ss_tot += (y - mean) * (y - mean);
            }
            1.0 - ss_res / ss_tot
        })
        .collect()
}

/// Source of multi-objective scores for rejection sampling.
pub trait Scorer: Sync {
    fn score(&self, x: &Prompt, y: &Response) -> Result<RewardVector>;
}

/// Ground-truth rewards straight from the environment.
#[derive(Clone, Copy, Debug)]
pub struct OracleScorer<'a> {
    pub env: &'a SynthEnv,
}

impl Scorer for OracleScorer<'_> {
    fn score(&self, x: &Prompt, y: &Response) -> Result<RewardVector> {
        Ok(self.env.true_rewards(x, y))
    }
}

/// Learned reward head, optionally clamped to `[0, 100]` at scoring time.
#[derive(Clone, Copy, Debug)]
pub struct LearnedScorer<'a> {
    pub params: &'a RewardModelParams,
    pub clamp: bool,
}

impl Scorer for LearnedScorer<'_> {
    fn score(&self, x: &Prompt, y: &Response) -> Result<RewardVector> {
        let r = predict(self.params, x, y);
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scorer(
                "reward model produced a non-finite score".into(),
            ));
        }
        Ok(if self.clamp { r.clamped(0.0, 100.0) } else { r })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Learned,
    #[default]
    Oracle,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale(2.0, 2.0, 6.0).unwrap(), 0.0);
        assert_eq!(rescale(6.0, 2.0, 6.0).unwrap(), 100.0);
        assert_eq!(rescale(4.0, 2.0, 6.0).unwrap(), 50.0);
        assert_eq!(rescale(9.0, 2.0, 6.0).unwrap(), 100.0);
        assert_eq!(rescale(-9.0, 2.0, 6.0).unwrap(), 0.0);
        assert!(rescale(1.0, 3.0, 3.0).is_err());
        assert!(rescale(1.0, 4.0, 3.0).is_err());
    }

    #[test]
    fn zero_weights_predict_bias() {
        let env = SynthEnv::new(Default::default()).unwrap();
        let mut params = RewardModelParams::zeros(FeatureSpec::for_env(&env), 2);
        params.bias = vec![12.5, -3.0];
        let x = Prompt::new(0, vec![1, 2], 16).unwrap();
        for toks in [vec![], vec![1, 2, 3], vec![7; 12]] {
            let y = Response::from_tokens(toks, 12);
            assert_eq!(predict(&params, &x, &y).values(), &[12.5, -3.0]);
        }
    }

    #[test]
    fn rejects_too_few_examples() {
        let problem = RegressionProblem::new(vec![vec![1.0, 2.0]], vec![vec![3.0]], 0.0).unwrap();
        let spec = FeatureSpec {
            features: vec![Feature::Coverage, Feature::Length],
            max_len: 12,
            max_difficulty: 8,
        };
        assert!(fit_problem(&problem, spec, &RewardModelConfig::default(), 0).is_err());
    }

    #[test]
    fn reward_vector_rejects_non_finite() {
        assert!(RewardVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(RewardVector::new(vec![]).is_err());
    }
}
