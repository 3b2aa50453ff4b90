//! In-memory experiment stages. Every stage is a pure function of the
//! config, its inputs and a seed derived from the root seed by label.

use dpa_core::alignment::sft_examples;
use dpa_core::rng::{derive_rng, derive_seed};
use dpa_core::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

/// Id of the first validation prompt; training ids start at zero.
pub const VALIDATION_ID_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Data {
    pub d1: Vec<Prompt>,
    pub d2: Vec<Prompt>,
    pub validation: Vec<Prompt>,
    pub a1: Vec<AnnotatedExample>,
    pub a2: Vec<AnnotatedExample>,
}

impl Data {
    pub fn annotated(&self) -> Vec<AnnotatedExample> {
        self.a1.iter().chain(&self.a2).cloned().collect()
    }
}

pub struct Lab {
    pub config: ExperimentConfig,
    pub env: SynthEnv,
    pub exec: Executor,
}

/// Control error of absolute-target conditioning against feasible and
/// infeasible targets, and of directional conditioning at the matching ends
/// of the arc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub prompts: usize,
    pub samples_per_prompt: usize,
    pub infeasible_target: Vec<f64>,
    pub steerlm_feasible_error: f64,
    pub steerlm_infeasible_error: f64,
    pub steerlm_ratio: f64,
    pub dpa: Option<DirectionalControl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalControl {
    /// Arc end standing in for the feasible target (most helpful).
    pub feasible_angle: f64,
    /// Arc end standing in for the infeasible target (most concise).
    pub infeasible_angle: f64,
    pub feasible_error: f64,
    pub infeasible_error: f64,
    pub ratio: f64,
}

impl Lab {
    pub fn new(config: ExperimentConfig, workers: usize) -> Result<Self> {
        config.validate()?;
        let env = SynthEnv::new(config.env.clone()).map_err(|e| LabError::Config(e.to_string()))?;
        Ok(Self {
            config,
            env,
            exec: Executor::with_workers(workers),
        })
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label, &[])
    }

    pub fn arch(&self) -> PolicyArch {
        PolicyArch {
            vocab_size: self.env.vocab_size(),
            cond_dim: self.env.k(),
            hidden: self.config.policy.hidden,
            max_len: self.env.max_len(),
            max_difficulty: self.config.env.max_difficulty,
        }
    }

    pub fn generate_data(&self) -> Result<Data> {
        let c = &self.config.data;
        let n1 = c.train_prompts / 2;
        let prompt_seed = self.seed("prompts");
        let d1 = self.env.generate_prompts(0, n1, prompt_seed)?;
        let d2 = self
            .env
            .generate_prompts(n1 as u64, c.train_prompts - n1, prompt_seed)?;
        let validation =
            self.env
                .generate_prompts(VALIDATION_ID_BASE, c.validation_prompts, prompt_seed)?;
        let annotated_seed = self.seed("annotated");
        let per = c.annotated_per_prompt;
        let a1 = self
            .env
            .make_annotated_dataset(&d1, per, annotated_seed, &self.exec)?;
        let a2 = self
            .env
            .make_annotated_dataset(&d2, per, annotated_seed, &self.exec)?;
        Ok(Data {
            d1,
            d2,
            validation,
            a1,
            a2,
        })
    }

    pub fn train_reward_model(&self, data: &Data) -> Result<RewardModelParams> {
        Ok(train_reward_model(
            &data.annotated(),
            &FeatureSpec::for_env(&self.env),
            &self.config.reward_model,
            self.seed("reward-model"),
        )?)
    }

    /// Annotated responses on the validation prompts, for held-out checks.
    pub fn held_out_annotations(&self, data: &Data) -> Result<Vec<AnnotatedExample>> {
        Ok(self.env.make_annotated_dataset(
            &data.validation,
            self.config.data.annotated_per_prompt,
            self.seed("held-out"),
            &self.exec,
        )?)
    }

    pub fn train_sft(&self, data: &Data) -> Result<PolicyParams> {
        let init = init_policy(
            &self.arch(),
            self.config.policy.init_scale,
            self.seed("init"),
        )?;
        let examples = sft_examples(
            &data.annotated(),
            &self.config.alignment.preferences,
            self.seed("sft"),
        );
        Ok(init.fit(&examples, &self.config.policy.sft, &self.exec)?.0)
    }

    /// Absolute-target model on the second split, sampled at iteration 1.
    pub fn train_bootstrap(&self, data: &Data, sft: &PolicyParams) -> Result<PolicyParams> {
        Ok(train_steerlm(
            &data.a2,
            sft,
            &self.config.policy.steerlm,
            &self.exec,
        )?)
    }

    /// Absolute-target baseline on all annotated data.
    pub fn train_steerlm(&self, data: &Data, sft: &PolicyParams) -> Result<PolicyParams> {
        Ok(train_steerlm(
            &data.annotated(),
            sft,
            &self.config.policy.steerlm,
            &self.exec,
        )?)
    }

    fn inputs<'a>(
        &'a self,
        data: &'a Data,
        sft: &'a PolicyParams,
        bootstrap: &'a PolicyParams,
        reward_model: Option<&'a RewardModelParams>,
    ) -> DpaInputs<'a> {
        DpaInputs {
            env: &self.env,
            splits: [&data.d1, &data.d2],
            annotated: [&data.a1, &data.a2],
            sft,
            bootstrap,
            reward_model,
            validation: &data.validation,
            eval: &self.config.eval,
        }
    }

    pub fn align(
        &self,
        data: &Data,
        sft: &PolicyParams,
        bootstrap: &PolicyParams,
        reward_model: Option<&RewardModelParams>,
    ) -> Result<DpaRun> {
        let inputs = self.inputs(data, sft, bootstrap, reward_model);
        Ok(run_dpa(
            &self.config.alignment,
            &inputs,
            self.seed("align"),
            &self.exec,
        )?)
    }

    /// The loop pinned to `<1, 0>`. Shares the alignment seed, so it equals
    /// `align` with a point distribution at that direction.
    pub fn scalar_rsf(
        &self,
        data: &Data,
        sft: &PolicyParams,
        bootstrap: &PolicyParams,
        reward_model: Option<&RewardModelParams>,
    ) -> Result<DpaRun> {
        let inputs = self.inputs(data, sft, bootstrap, reward_model);
        Ok(train_scalar_rsf(
            &self.config.alignment,
            &inputs,
            self.seed("align"),
            &self.exec,
        )?)
    }

    /// The loop pinned to an arbitrary direction.
    pub fn fixed_direction(
        &self,
        v: DirectionalPreference,
        data: &Data,
        sft: &PolicyParams,
        bootstrap: &PolicyParams,
        reward_model: Option<&RewardModelParams>,
    ) -> Result<DpaRun> {
        let config = AlignmentConfig {
            preferences: PreferenceDistribution::Fixed { v },
            ..self.config.alignment.clone()
        };
        let inputs = self.inputs(data, sft, bootstrap, reward_model);
        Ok(run_dpa(&config, &inputs, self.seed("align"), &self.exec)?)
    }

    pub fn sweep(&self, policy: &PolicyParams, data: &Data, model_id: &str) -> Result<SweepReport> {
        Ok(sweep(
            policy,
            &self.env,
            &data.validation,
            &self.config.eval,
            model_id,
            0,
            derive_seed(self.config.seed, "eval", &[]),
            &self.exec,
        )?)
    }

    /// Mean oracle rewards and length of `responses_per` samples per prompt
    /// under conditioning `cond`.
    pub fn mean_rewards(
        &self,
        policy: &PolicyParams,
        prompts: &[Prompt],
        cond: &[f64],
        label: &str,
    ) -> Result<([f64; 2], f64)> {
        let per = self.config.eval.responses_per;
        let temperature = self.config.eval.temperature;
        let sums = self.exec.map(prompts, |x| {
            let mut rng = derive_rng(self.config.seed, label, &[x.id()]);
            let mut s = [0.0f64; 3];
            for _ in 0..per {
                let y = policy.sample(x, cond, temperature, &mut rng)?;
                let [r1, r2] = self.env.true_rewards(x, &y).as_pair();
                s[0] += r1;
                s[1] += r2;
                s[2] += y.len() as f64;
            }
            Ok::<_, dpa_core::Error>(s)
        });
        let mut total = [0.0f64; 3];
        for s in sums {
            total.iter_mut().zip(s?).for_each(|(a, b)| *a += b);
        }
        let n = (prompts.len() * per) as f64;
        Ok(([total[0] / n, total[1] / n], total[2] / n))
    }

    /// Sweeps the weight-space interpolation between a helpfulness and a
    /// verbosity specialist. Weight `w` on the first is conditioned on the
    /// direction of `(w, 1 - w)`.
    pub fn soup_sweep(
        &self,
        helpful: &PolicyParams,
        verbose: &PolicyParams,
        data: &Data,
    ) -> Result<SweepReport> {
        let n = self.config.baselines.soup_points;
        let pair = [helpful.clone(), verbose.clone()];
        let mut points = Vec::with_capacity(n);
        // Descending w gives ascending angle.
        for i in 0..n {
            let w = 1.0 - i as f64 / (n - 1) as f64;
            let policy = soup_interpolate(&pair, &[w, 1.0 - w])?;
            let v = DirectionalPreference::normalized(vec![w, 1.0 - w])?;
            let label = format!("soup-{i}");
            let (r, mean_len) =
                self.mean_rewards(&policy, &data.validation, v.components(), &label)?;
            points.push(SweepPoint {
                angle: v.angle()?,
                preference: v,
                mean_rewards: RewardVector::new(r.to_vec())?,
                responses: data.validation.len() * self.config.eval.responses_per,
                mean_len,
            });
        }
        let mut report = SweepReport {
            model_id: "soup".into(),
            iteration: 0,
            points,
            hypervolume: 0.0,
        };
        report.hypervolume = hypervolume(&report, &[0.0, 0.0])?;
        Ok(report)
    }

    fn control_error_at(
        &self,
        policy: &PolicyParams,
        x: &Prompt,
        cond: &[f64],
        target: &RewardVector,
        label: &str,
    ) -> Result<f64> {
        let mut rng = derive_rng(self.config.seed, label, &[x.id()]);
        let responses = (0..self.config.baselines.control_samples)
            .map(|_| policy.sample(x, cond, self.config.eval.temperature, &mut rng))
            .collect::<dpa_core::Result<Vec<_>>>()?;
        Ok(control_error(&self.env, x, &responses, target)?)
    }

    /// Control error on validation prompts with at least
    /// `baselines.min_difficulty` relevant tokens. The feasible target of a
    /// prompt is the reward vector of its most helpful response. A directional
    /// policy is scored against the optimum for the direction it was given.
    pub fn feasibility(
        &self,
        data: &Data,
        steerlm: &PolicyParams,
        dpa: Option<&PolicyParams>,
    ) -> Result<FeasibilityReport> {
        let b = &self.config.baselines;
        let hard: Vec<&Prompt> = data
            .validation
            .iter()
            .filter(|x| x.difficulty() >= b.min_difficulty)
            .collect();
        if hard.is_empty() {
            return Err(LabError::Invariant(format!(
                "no validation prompt has difficulty >= {}",
                b.min_difficulty
            )));
        }
        let infeasible = RewardConditioning::new(RewardVector::new(b.infeasible_target.clone())?);
        let arc = match &self.config.alignment.preferences {
            PreferenceDistribution::Arc { arc } => Some(*arc),
            _ => None,
        };
        let (hi, lo) = match arc {
            Some(arc) => (arc.point_at(1.0), arc.point_at(0.0)),
            None => (
                self.config.eval.arc.point_at(1.0),
                self.config.eval.arc.point_at(0.0),
            ),
        };
        let per_prompt = self.exec.map(&hard, |x| {
            let (_, feasible, _) = self.env.optimal_scalarized(x, &[1.0, 0.0])?;
            let feasible = RewardConditioning::new(feasible);
            let s_feasible = self.control_error_at(
                steerlm,
                x,
                &feasible.conditioning(),
                &feasible.target,
                "control-feasible",
            )?;
            let s_infeasible = self.control_error_at(
                steerlm,
                x,
                &infeasible.conditioning(),
                &infeasible.target,
                "control-infeasible",
            )?;
            let mut d = [0.0; 2];
            if let Some(policy) = dpa {
                for (slot, (v, label)) in d
                    .iter_mut()
                    .zip([(&hi, "control-dpa-high"), (&lo, "control-dpa-low")])
                {
                    let (_, best, _) = self.env.optimal_scalarized(x, v.components())?;
                    *slot = self.control_error_at(policy, x, v.components(), &best, label)?;
                }
            }
            Ok::<_, LabError>([s_feasible, s_infeasible, d[0], d[1]])
        });
        let mut sums = [0.0f64; 4];
        for p in per_prompt {
            sums.iter_mut().zip(p?).for_each(|(a, b)| *a += b);
        }
        let n = hard.len() as f64;
        let mean = sums.map(|s| s / n);
        Ok(FeasibilityReport {
            prompts: hard.len(),
            samples_per_prompt: b.control_samples,
            infeasible_target: b.infeasible_target.clone(),
            steerlm_feasible_error: mean[0],
            steerlm_infeasible_error: mean[1],
            steerlm_ratio: mean[1] / mean[0],
            dpa: dpa.map(|_| DirectionalControl {
                feasible_angle: hi.angle().unwrap_or(0.0),
                infeasible_angle: lo.angle().unwrap_or(0.0),
                feasible_error: mean[2],
                infeasible_error: mean[3],
                ratio: mean[3] / mean[2],
            }),
        })
    }
}
