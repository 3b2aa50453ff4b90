//! Experiment configuration: a TOML file merged over built-in defaults, with
//! `key=value` overrides applied on top.

use std::path::Path;

use dpa_core::{AlignmentConfig, EnvConfig, EvalConfig, FitConfig, RewardModelConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub policy: PolicyConfig,
    pub reward_model: RewardModelConfig,
    pub alignment: AlignmentConfig,
    pub eval: EvalConfig,
    pub baselines: BaselineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Split evenly into the two alternating training splits.
    pub train_prompts: usize,
    pub annotated_per_prompt: usize,
    pub validation_prompts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub init_scale: f64,
    /// Supervised pretraining on the annotated responses.
    pub sft: FitConfig,
    /// Absolute-target models: the iteration-1 bootstrap and the baseline.
    pub steerlm: FitConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Absolute target that short responses cannot reach on hard prompts.
    pub infeasible_target: Vec<f64>,
    /// Smallest relevant-set size counted as hard.
    pub min_difficulty: usize,
    /// Responses sampled per prompt when measuring control error.
    pub control_samples: usize,
    /// Interpolation weights evaluated for the reward soup.
    pub soup_points: usize,
}

impl ExperimentConfig {
    /// Defaults for everything but the seed.
    pub fn with_seed(seed: u64) -> Self {
        let fit = FitConfig {
            learning_rate: 0.03,
            ..FitConfig::default()
        };
        Self {
            seed,
            env: EnvConfig::budgeted(),
            data: DataConfig {
                train_prompts: 200,
                annotated_per_prompt: 8,
                validation_prompts: 200,
            },
            policy: PolicyConfig {
                hidden: 64,
                init_scale: 0.1,
                sft: fit,
                steerlm: fit,
            },
            reward_model: RewardModelConfig::default(),
            alignment: AlignmentConfig {
                finetune: fit,
                ..AlignmentConfig::default()
            },
            eval: EvalConfig::default(),
            baselines: BaselineConfig {
                infeasible_target: vec![100.0, 8.0],
                min_difficulty: 3,
                control_samples: 8,
                soup_points: 10,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let core = |e: dpa_core::Error| LabError::Config(e.to_string());
        self.env.validate().map_err(core)?;
        self.alignment.validate().map_err(core)?;
        self.eval.validate().map_err(core)?;
        self.policy.sft.validate().map_err(core)?;
        self.policy.steerlm.validate().map_err(core)?;
        let d = &self.data;
        if d.train_prompts < 2 || d.annotated_per_prompt == 0 || d.validation_prompts == 0 {
            return Err(LabError::Config(
                "data needs at least 2 train prompts, 1 validation prompt and 1 annotated response per prompt".into(),
            ));
        }
        if self.policy.hidden == 0 || !(self.policy.init_scale >= 0.0) {
            return Err(LabError::Config(
                "policy.hidden must be positive and policy.init_scale nonnegative".into(),
            ));
        }
        if self.alignment.preferences.dim() != 2 {
            return Err(LabError::Config(
                "the synthetic environment has two objectives; preferences must be 2-D".into(),
            ));
        }
        let b = &self.baselines;
        if b.infeasible_target.len() != 2 || b.infeasible_target.iter().any(|t| !t.is_finite()) {
            return Err(LabError::Config(
                "baselines.infeasible_target must be two finite numbers".into(),
            ));
        }
        if b.min_difficulty == 0 || b.min_difficulty > self.env.max_difficulty {
            return Err(LabError::Config(format!(
                "baselines.min_difficulty must be in [1, {}]",
                self.env.max_difficulty
            )));
        }
        if b.control_samples == 0 || b.soup_points < 2 {
            return Err(LabError::Config(
                "baselines.control_samples must be positive and soup_points at least 2".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the resolved config's JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads `path`, applies `overrides` (`dotted.key=value`), fills in defaults
/// and validates the result.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    resolve(&text, overrides).map_err(|e| match e {
        LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn resolve(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    let mut merged = defaults_table();
    merge(&mut merged, user);
    let config: ExperimentConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| LabError::Config(e.to_string().trim_end().to_string()))?;
    config.validate()?;
    Ok(config)
}

fn defaults_table() -> Table {
    let Ok(Value::Table(mut t)) = Value::try_from(ExperimentConfig::with_seed(0)) else {
        unreachable!("defaults serialize to a table");
    };
    t.remove("seed");
    t
}

/// Recursive table merge. A table carrying a different `kind` tag replaces
/// the default wholesale, since its fields belong to another variant.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o))
                if b.get("kind") == o.get("kind") || !o.contains_key("kind") =>
            {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(LabError::Config(format!("bad override key {key:?}")));
    }
    // Anything that is not a TOML literal is taken as a bare string.
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(LabError::Config(format!(
                    "override {key:?}: {p} is not a table"
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_materializes_defaults() {
        let c = resolve("seed = 5", &[]).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.alignment.iterations, 4);
        assert_eq!(c.alignment.prefs_per_prompt, 5);
        assert_eq!(c.alignment.samples_per_pref, 16);
        assert_eq!(c.alignment.replay_fraction, 0.15);
        assert_eq!(c.alignment.sampling_temperature, 1.0);
        assert_eq!(c.eval.temperature, 0.7);
        assert_eq!(c, ExperimentConfig::with_seed(5));
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(resolve("", &[]), Err(LabError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "seed = 1\ncolour = 3",
            "seed = 1\n[alignment]\niteratons = 3",
            "seed = 1\n[alignment.finetune.optimizer]\nkind = \"adam\"\nmomentum = 0.5",
        ] {
            let err = resolve(text, &[]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn replay_fraction_one_is_invalid() {
        let err = resolve("seed = 1\n[alignment]\nreplay_fraction = 1.0", &[]).unwrap_err();
        assert!(err.to_string().contains("replay_fraction"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn partial_tables_keep_sibling_defaults() {
        let c = resolve("seed = 1\n[env]\nbudget = 9", &[]).unwrap();
        assert_eq!(c.env.budget, 9);
        assert_eq!(c.env.variant, dpa_core::Variant::Budgeted);
        assert_eq!(c.policy.sft.learning_rate, 0.03);
    }

    #[test]
    fn overrides() {
        let c = resolve(
            "seed = 1",
            &[
                "alignment.iterations=2".into(),
                "seed=9".into(),
                "env.variant=plain".into(),
                "alignment.finetune.optimizer={kind=\"momentum\", momentum=0.5}".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.alignment.iterations, 2);
        assert_eq!(c.seed, 9);
        assert_eq!(c.env.variant, dpa_core::Variant::Plain);
        assert_eq!(
            c.alignment.finetune.optimizer,
            dpa_core::Optimizer::Momentum { momentum: 0.5 }
        );
        assert!(resolve("seed = 1", &["novalue".into()]).is_err());
        assert!(resolve("seed = 1", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::with_seed(1);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.alignment.iterations = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
