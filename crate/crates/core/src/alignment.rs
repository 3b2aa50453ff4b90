//! Iterative preference-conditioned rejection-sampling fine-tuning.
//!
//! Each iteration `t = 1..T`:
//!
//! 1. for every prompt of the iteration's split, draw preferences, sample
//!    candidates, score them, and keep the candidate with the highest
//!    scalarized reward `v · r̃`;
//! 2. mix in replay records from the original annotated responses;
//! 3. fine-tune (from the SFT checkpoint by default) on the result.
//!
//! Iteration 1 samples from the absolute-target bootstrap model; later
//! iterations sample from the previous iteration's policy. Odd iterations use
//! the first prompt split and even iterations the second, so a policy never
//! samples on prompts it was trained on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{AnnotatedExample, Prompt, Response, SynthEnv};
use crate::evaluation::{sweep, EvalConfig, SweepReport};
use crate::exec::Executor;
use crate::policy::{FitConfig, PolicyParams, SequenceExample};
use crate::preference::{scalarize_slice, DirectionalPreference, PreferenceDistribution};
use crate::reward_model::{
    LearnedScorer, OracleScorer, RewardModelParams, RewardVector, Scorer, ScorerKind,
};
use crate::rng::{derive_rng, derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleSource {
    RejectionSampled,
    Replay,
}

/// `(x, v, y*)` plus the bookkeeping needed to audit the selection.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceTriple {
    pub prompt: Prompt,
    pub preference: DirectionalPreference,
    pub response: Response,
    pub winning_reward: f64,
    pub source: TripleSource,
    /// Scalarized scores of every candidate, in sampling order (empty for
    /// replay records).
    pub candidate_scores: Vec<f64>,
}

impl PreferenceTriple {
    pub fn to_example(&self) -> SequenceExample {
        SequenceExample {
            prompt: self.prompt.clone(),
            conditioning: self.preference.components().to_vec(),
            response: self.response.clone(),
        }
    }
}

/// Preference attached to replay records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayPreference {
    /// A fresh draw from the training distribution.
    #[default]
    Fresh,
    /// The distribution's midpoint direction.
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub iterations: usize,
    pub prefs_per_prompt: usize,
    pub samples_per_pref: usize,
    pub t1_samples_per_prompt: usize,
    /// Share of replay records in the final iteration dataset.
    pub replay_fraction: f64,
    pub replay_preference: ReplayPreference,
    pub preferences: PreferenceDistribution,
    pub scorer: ScorerKind,
    pub reinit_from_sft: bool,
    pub sampling_temperature: f64,
    pub finetune: FitConfig,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            prefs_per_prompt: 5,
            samples_per_pref: 16,
            t1_samples_per_prompt: 80,
            replay_fraction: 0.15,
            replay_preference: ReplayPreference::Fresh,
            preferences: PreferenceDistribution::default(),
            scorer: ScorerKind::Oracle,
            reinit_from_sft: true,
            sampling_temperature: 1.0,
            finetune: FitConfig::default(),
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.prefs_per_prompt == 0 {
            return fail("prefs_per_prompt must be at least 1".into());
        }
        if self.samples_per_pref < 2 {
            return fail("samples_per_pref must be at least 2".into());
        }
        if self.t1_samples_per_prompt < 2 {
            return fail("t1_samples_per_prompt must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.replay_fraction) {
            return fail(format!(
                "replay_fraction must be in [0, 1), got {}",
                self.replay_fraction
            ));
        }
        if !(self.sampling_temperature > 0.0 && self.sampling_temperature.is_finite()) {
            return fail("sampling_temperature must be positive".into());
        }
        self.finetune.validate()?;
        self.preferences.validate()
    }

    fn neutral_preference(&self) -> Result<DirectionalPreference> {
        match &self.preferences {
            PreferenceDistribution::Arc { arc } => Ok(arc.point_at(0.5)),
            PreferenceDistribution::Fixed { v } => Ok(v.clone()),
            PreferenceDistribution::Orthant { signs } => {
                DirectionalPreference::normalized(signs.iter().map(|&s| f64::from(s)).collect())
            }
        }
    }
}

/// Number of replay records so that they make up `fraction` of a dataset
/// with `sampled` rejection-sampled records, rounded to nearest.
pub fn replay_count(sampled: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    libm::round(fraction * sampled as f64 / (1.0 - fraction)) as usize
}

/// Index of the highest score; ties go to the first occurrence.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn select_best(
    x: &Prompt,
    v: &DirectionalPreference,
    candidates: &[Response],
    scores: &[RewardVector],
) -> Result<PreferenceTriple> {
    let scalarized: Vec<f64> = scores
        .iter()
        .map(|r| scalarize_slice(v.components(), r.values()))
        .collect::<Result<_>>()?;
    if let Some(s) = scalarized.iter().find(|s| !s.is_finite()) {
        return Err(Error::Scorer(format!("non-finite scalarized score {s}")));
    }
    let best = argmax_first(&scalarized)
        .ok_or_else(|| Error::InvalidArgument("no candidates to select from".into()))?;
    Ok(PreferenceTriple {
        prompt: x.clone(),
        preference: v.clone(),
        response: candidates[best].clone(),
        winning_reward: scalarized[best],
        source: TripleSource::RejectionSampled,
        candidate_scores: scalarized,
    })
}

fn score_all(
    scorer: &dyn Scorer,
    x: &Prompt,
    candidates: &[Response],
) -> Result<Vec<RewardVector>> {
    candidates.iter().map(|y| scorer.score(x, y)).collect()
}

/// Best-of-`n` under `v · r̃` among samples from `π(· | x, v)`.
pub fn rejection_sample(
    policy: &PolicyParams,
    scorer: &dyn Scorer,
    x: &Prompt,
    v: &DirectionalPreference,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<PreferenceTriple> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "n must be at least 2, got {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let candidates: Vec<Response> = (0..n)
        .map(|_| policy.sample(x, v.components(), temperature, &mut rng))
        .collect::<Result<_>>()?;
    let scores = score_all(scorer, x, &candidates)?;
    select_best(x, v, &candidates, &scores)
}

/// Where rejection-sampling candidates come from.
#[derive(Clone, Copy, Debug)]
pub enum CandidateSampler<'a> {
    /// The previous iteration's preference-conditioned policy.
    Directional(&'a PolicyParams),
    /// An absolute-target model sampled at `candidates` uniformly drawn
    /// targets per prompt; all of a prompt's preferences select from the
    /// same pool.
    Bootstrap {
        policy: &'a PolicyParams,
        candidates: usize,
    },
}

fn prompt_triples(
    config: &AlignmentConfig,
    sampler: CandidateSampler<'_>,
    scorer: &dyn Scorer,
    x: &Prompt,
    seed: u64,
) -> Result<Vec<PreferenceTriple>> {
    let mut pref_rng = derive_rng(seed, "preference", &[x.id()]);
    let prefs: Vec<DirectionalPreference> = (0..config.prefs_per_prompt)
        .map(|_| config.preferences.sample(&mut pref_rng))
        .collect();
    match sampler {
        CandidateSampler::Directional(policy) => prefs
            .iter()
            .enumerate()
            .map(|(j, v)| {
                rejection_sample(
                    policy,
                    scorer,
                    x,
                    v,
                    config.samples_per_pref,
                    config.sampling_temperature,
                    derive_seed(seed, "rejection", &[x.id(), j as u64]),
                )
            })
            .collect(),
        CandidateSampler::Bootstrap { policy, candidates } => {
            if candidates < 2 {
                return Err(Error::InvalidArgument(
                    "bootstrap needs at least 2 candidates".into(),
                ));
            }
            let mut rng = derive_rng(seed, "bootstrap", &[x.id()]);
            let k = policy.arch.cond_dim;
            let pool: Vec<Response> = (0..candidates)
                .map(|_| {
                    let target: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
                    policy.sample(x, &target, config.sampling_temperature, &mut rng)
                })
                .collect::<Result<_>>()?;
            let scores = score_all(scorer, x, &pool)?;
            prefs
                .iter()
                .map(|v| select_best(x, v, &pool, &scores))
                .collect()
        }
    }
}

/// Rejection-sampled triples for every prompt of `prompts`, followed by
/// replay records drawn from `sft_pool`.
pub fn build_iteration_dataset(
    config: &AlignmentConfig,
    sampler: CandidateSampler<'_>,
    scorer: &dyn Scorer,
    prompts: &[Prompt],
    sft_pool: &[AnnotatedExample],
    seed: u64,
    exec: &Executor,
) -> Result<Vec<PreferenceTriple>> {
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("prompt split is empty".into()));
    }
    if config.replay_fraction > 0.0 && sft_pool.is_empty() {
        return Err(Error::EmptyReplayPool(config.replay_fraction));
    }
    let per_prompt = exec.map(prompts, |x| {
        prompt_triples(config, sampler, scorer, x, seed)
    });
    let mut dataset = Vec::new();
    for triples in per_prompt {
        dataset.extend(triples?);
    }

    let m = replay_count(dataset.len(), config.replay_fraction);
    if m > 0 {
        let mut rng = derive_rng(seed, "replay", &[]);
        let picks: Vec<&AnnotatedExample> = if m <= sft_pool.len() {
            sft_pool.choose_multiple(&mut rng, m).collect()
        } else {
            (0..m)
                .map(|_| &sft_pool[rng.gen_range(0..sft_pool.len())])
                .collect()
        };
        let neutral = config.neutral_preference()?;
        for (i, ex) in picks.into_iter().enumerate() {
            let v = match config.replay_preference {
                ReplayPreference::Fresh => config.preferences.sample(&mut derive_rng(
                    seed,
                    "replay-preference",
                    &[i as u64],
                )),
                ReplayPreference::Neutral => neutral.clone(),
            };
            let winning_reward = scalarize_slice(v.components(), ex.rewards.values())?;
            dataset.push(PreferenceTriple {
                prompt: ex.prompt.clone(),
                preference: v,
                response: ex.response.clone(),
                winning_reward,
                source: TripleSource::Replay,
                candidate_scores: Vec::new(),
            });
        }
    }
    Ok(dataset)
}

/// Everything the loop consumes besides its configuration.
#[derive(Clone, Copy, Debug)]
pub struct DpaInputs<'a> {
    pub env: &'a SynthEnv,
    /// Disjoint prompt splits; odd iterations use the first.
    pub splits: [&'a [Prompt]; 2],
    /// Annotated responses for each split, used for replay.
    pub annotated: [&'a [AnnotatedExample]; 2],
    pub sft: &'a PolicyParams,
    /// Absolute-target model that samples candidates at iteration 1.
    pub bootstrap: &'a PolicyParams,
    pub reward_model: Option<&'a RewardModelParams>,
    pub validation: &'a [Prompt],
    pub eval: &'a EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// 1 or 2.
    pub split: usize,
    pub dataset_size: usize,
    pub rejection_sampled: usize,
    pub replay: usize,
    pub mean_winning_reward: f64,
    pub finetune_initial_nll: f64,
    pub finetune_final_nll: f64,
    pub mean_scalarized_validation: f64,
    pub hypervolume: f64,
    pub sweep: SweepReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sft_sweep: SweepReport,
    pub iterations: Vec<IterationMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpaRun {
    /// Policy after each iteration.
    pub checkpoints: Vec<PolicyParams>,
    pub datasets: Vec<Vec<PreferenceTriple>>,
    pub report: RunReport,
}

/// Split used at iteration `t` (1-based): 1 for odd `t`, 2 for even.
pub fn split_for_iteration(t: usize) -> usize {
    1 + (t + 1) % 2
}

fn disjoint(a: &[Prompt], b: &[Prompt]) -> bool {
    let ids: alloc::collections::BTreeSet<u64> = a.iter().map(Prompt::id).collect();
    b.iter().all(|p| !ids.contains(&p.id()))
}

/// Runs `config.iterations` rounds of rejection sampling and fine-tuning.
pub fn run_dpa(
    config: &AlignmentConfig,
    inputs: &DpaInputs<'_>,
    seed: u64,
    exec: &Executor,
) -> Result<DpaRun> {
    config.validate()?;
    if !disjoint(inputs.splits[0], inputs.splits[1]) {
        return Err(Error::InvalidArgument(
            "prompt splits must be disjoint".into(),
        ));
    }
    let oracle = OracleScorer { env: inputs.env };
    let learned;
    let scorer: &dyn Scorer = match config.scorer {
        ScorerKind::Oracle => &oracle,
        ScorerKind::Learned => {
            let params = inputs.reward_model.ok_or_else(|| {
                Error::InvalidArgument("learned scorer selected but no reward model given".into())
            })?;
            learned = LearnedScorer {
                params,
                clamp: false,
            };
            &learned
        }
    };
    let eval_seed = derive_seed(seed, "eval", &[]);
    let sft_sweep = sweep(
        inputs.sft,
        inputs.env,
        inputs.validation,
        inputs.eval,
        "sft",
        0,
        eval_seed,
        exec,
    )?;

    let mut checkpoints: Vec<PolicyParams> = Vec::with_capacity(config.iterations);
    let mut datasets = Vec::with_capacity(config.iterations);
    let mut iterations = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let split = split_for_iteration(t);
        let prompts = inputs.splits[split - 1];
        let sampler = match checkpoints.last() {
            None => CandidateSampler::Bootstrap {
                policy: inputs.bootstrap,
                candidates: config.t1_samples_per_prompt,
            },
            Some(prev) => CandidateSampler::Directional(prev),
        };
        let dataset = build_iteration_dataset(
            config,
            sampler,
            scorer,
            prompts,
            inputs.annotated[split - 1],
            derive_seed(seed, "iteration", &[t as u64]),
            exec,
        )?;
        let sampled: Vec<&PreferenceTriple> = dataset
            .iter()
            .filter(|d| d.source == TripleSource::RejectionSampled)
            .collect();
        let mean_winning_reward =
            sampled.iter().map(|d| d.winning_reward).sum::<f64>() / sampled.len().max(1) as f64;
        if !mean_winning_reward.is_finite() {
            return Err(Error::NonFinite(format!(
                "mean scalarized reward at iteration {t}"
            )));
        }

        let init = match (config.reinit_from_sft, checkpoints.last()) {
            (false, Some(prev)) => prev,
            _ => inputs.sft,
        };
        let examples: Vec<SequenceExample> = dataset.iter().map(|d| d.to_example()).collect();
        let (policy, history) = init.fit(&examples, &config.finetune, exec)?;
        let final_nll = policy.mean_nll(&examples)?;

        let report = sweep(
            &policy,
            inputs.env,
            inputs.validation,
            inputs.eval,
            "dpa",
            t,
            eval_seed,
            exec,
        )?;
        let mean_scalarized_validation = report.mean_scalarized();
        if !mean_scalarized_validation.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation reward at iteration {t}"
            )));
        }
        iterations.push(IterationMetrics {
            iteration: t,
            split,
            dataset_size: dataset.len(),
            rejection_sampled: sampled.len(),
            replay: dataset.len() - sampled.len(),
            mean_winning_reward,
            finetune_initial_nll: history.first().copied().unwrap_or(final_nll),
            finetune_final_nll: final_nll,
            mean_scalarized_validation,
            hypervolume: report.hypervolume,
            sweep: report,
        });
        checkpoints.push(policy);
        datasets.push(dataset);
    }
    Ok(DpaRun {
        checkpoints,
        datasets,
        report: RunReport {
            sft_sweep,
            iterations,
        },
    })
}

/// Supervised examples from annotated data, each paired with a preference
/// drawn from `preferences` (the responses do not depend on it).
pub fn sft_examples(
    data: &[AnnotatedExample],
    preferences: &PreferenceDistribution,
    seed: u64,
) -> Vec<SequenceExample> {
    let mut rng = derive_rng(seed, "sft-preference", &[]);
    data.iter()
        .map(|ex| SequenceExample {
            prompt: ex.prompt.clone(),
            conditioning: preferences.sample(&mut rng).components().to_vec(),
            response: ex.response.clone(),
        })
        .collect()
}
