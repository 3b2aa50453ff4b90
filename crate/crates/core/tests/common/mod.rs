#![allow(dead_code)]

use dpa_core::alignment::sft_examples;
use dpa_core::*;

/// A miniature end-to-end setup that trains in well under a second.
pub struct Mini {
    pub env: SynthEnv,
    pub d1: Vec<Prompt>,
    pub d2: Vec<Prompt>,
    pub a1: Vec<AnnotatedExample>,
    pub a2: Vec<AnnotatedExample>,
    pub validation: Vec<Prompt>,
    pub sft: PolicyParams,
    pub bootstrap: PolicyParams,
    pub eval: EvalConfig,
    pub config: AlignmentConfig,
}

impl Mini {
    pub fn new(seed: u64) -> Self {
        let exec = Executor::serial();
        let env = SynthEnv::new(EnvConfig::budgeted()).unwrap();
        let d1 = env.generate_prompts(0, 12, seed).unwrap();
        let d2 = env.generate_prompts(12, 12, seed).unwrap();
        let validation = env.generate_prompts(1000, 10, seed).unwrap();
        let a1 = env.make_annotated_dataset(&d1, 4, seed + 1, &exec).unwrap();
        let a2 = env.make_annotated_dataset(&d2, 4, seed + 1, &exec).unwrap();
        let arch = PolicyArch {
            vocab_size: 16,
            cond_dim: 2,
            hidden: 8,
            max_len: 12,
            max_difficulty: 8,
        };
        let fit = FitConfig {
            steps: 15,
            ..FitConfig::default()
        };
        let init = init_policy(&arch, 0.1, seed).unwrap();
        let all: Vec<AnnotatedExample> = a1.iter().chain(&a2).cloned().collect();
        let sft = init
            .fit(
                &sft_examples(&all, &PreferenceDistribution::default(), seed),
                &fit,
                &exec,
            )
            .unwrap()
            .0;
        let bootstrap = train_steerlm(&a2, &sft, &fit, &exec).unwrap();
        let config = AlignmentConfig {
            iterations: 2,
            samples_per_pref: 4,
            t1_samples_per_prompt: 12,
            finetune: fit,
            ..AlignmentConfig::default()
        };
        let eval = EvalConfig {
            n_directions: 4,
            ..EvalConfig::default()
        };
        Self {
            env,
            d1,
            d2,
            a1,
            a2,
            validation,
            sft,
            bootstrap,
            eval,
            config,
        }
    }

    pub fn inputs(&self) -> DpaInputs<'_> {
        DpaInputs {
            env: &self.env,
            splits: [&self.d1, &self.d2],
            annotated: [&self.a1, &self.a2],
            sft: &self.sft,
            bootstrap: &self.bootstrap,
            reward_model: None,
            validation: &self.validation,
            eval: &self.eval,
        }
    }
}
