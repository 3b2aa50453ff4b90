//! On-disk formats and the append-only output directory.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use dpa_core::{
    AnnotatedExample, PolicyArch, PolicyParams, PreferenceTriple, Prompt, Response, RewardVector,
    SweepReport, Token, TripleSource,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{LabError, Result};

pub const VERSION: &str = concat!("dpa-lab v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub prompt_id: u64,
    pub relevant: Vec<Token>,
}

impl PromptRecord {
    pub fn from_prompt(x: &Prompt) -> Self {
        Self {
            prompt_id: x.id(),
            relevant: x.relevant().to_vec(),
        }
    }

    pub fn to_prompt(&self, vocab_size: usize) -> dpa_core::Result<Prompt> {
        Prompt::new(self.prompt_id, self.relevant.clone(), vocab_size)
    }
}

/// One annotated response. Responses shorter than `max_len` ended with the
/// end marker, so `terminated` is not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedRecord {
    pub prompt_id: u64,
    pub relevant: Vec<Token>,
    pub tokens: Vec<Token>,
    pub rewards: RewardVector,
}

impl AnnotatedRecord {
    pub fn from_example(ex: &AnnotatedExample) -> Self {
        Self {
            prompt_id: ex.prompt.id(),
            relevant: ex.prompt.relevant().to_vec(),
            tokens: ex.response.tokens.clone(),
            rewards: ex.rewards.clone(),
        }
    }

    pub fn to_example(
        &self,
        vocab_size: usize,
        max_len: usize,
    ) -> dpa_core::Result<AnnotatedExample> {
        let response = Response::from_tokens(self.tokens.clone(), max_len);
        response.validate(vocab_size, max_len)?;
        Ok(AnnotatedExample {
            prompt: Prompt::new(self.prompt_id, self.relevant.clone(), vocab_size)?,
            response,
            rewards: self.rewards.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripleRecord {
    pub prompt_id: u64,
    pub v: Vec<f64>,
    pub angle: f64,
    pub tokens: Vec<Token>,
    pub winning_reward: f64,
    pub source: TripleSource,
    pub candidate_scores: Vec<f64>,
}

impl TripleRecord {
    pub fn from_triple(t: &PreferenceTriple) -> Result<Self> {
        Ok(Self {
            prompt_id: t.prompt.id(),
            v: t.preference.components().to_vec(),
            angle: t.preference.angle()?,
            tokens: t.response.tokens.clone(),
            winning_reward: t.winning_reward,
            source: t.source,
            candidate_scores: t.candidate_scores.clone(),
        })
    }
}

/// Policy checkpoint tagged with the method that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub arch: PolicyArch,
    pub weights: Vec<f64>,
    pub iteration: usize,
    pub method: String,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, iteration: usize, method: &str) -> Self {
        Self {
            arch: params.arch.clone(),
            weights: params.weights.clone(),
            iteration,
            method: method.into(),
        }
    }

    pub fn params(&self) -> dpa_core::Result<PolicyParams> {
        let p = PolicyParams {
            arch: self.arch.clone(),
            weights: self.weights.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    angle: f64,
    v1: f64,
    v2: f64,
    mean_r1: f64,
    mean_r2: f64,
    mean_len: f64,
}

pub fn sweep_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &report.points {
        let v = p.preference.components();
        let [r1, r2] = p.mean_rewards.as_pair();
        w.serialize(SweepRow {
            angle: p.angle,
            v1: v[0],
            v2: v[1],
            mean_r1: r1,
            mean_r2: r2,
            mean_len: p.mean_len,
        })
        .map_err(|e| LabError::Invariant(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| LabError::Invariant(format!("csv: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub config: Option<ExperimentConfig>,
    /// Upstream artifacts read from disk, with their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LabError::Missing(path.to_path_buf()),
        _ => LabError::io(path, e),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::malformed(path, e))
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| LabError::malformed(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| LabError::malformed(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| LabError::Invariant(format!("serialization: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut bytes, r)
            .map_err(|e| LabError::Invariant(format!("serialization: {e}")))?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

/// Output directory that never overwrites a file. Every write is recorded
/// with its hash for the manifest.
pub struct OutDir {
    root: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl OutDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| LabError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    /// Reads an upstream artifact and records its hash as an input.
    pub fn read(&mut self, rel: &str) -> Result<Vec<u8>> {
        let bytes = read_bytes(&self.path(rel))?;
        self.inputs.insert(rel.into(), sha256(&bytes));
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&mut self, rel: &str) -> Result<T> {
        let bytes = self.read(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| LabError::malformed(self.path(rel), e))
    }

    pub fn read_jsonl<T: DeserializeOwned>(&mut self, rel: &str) -> Result<Vec<T>> {
        let bytes = self.read(rel)?;
        parse_jsonl(&self.path(rel), &bytes)
    }

    /// Fails if any of `rels` already exists, before anything is written.
    pub fn ensure_fresh(&self, rels: &[String]) -> Result<()> {
        match rels.iter().find(|r| self.exists(r)) {
            Some(r) => Err(LabError::Exists(self.path(r))),
            None => Ok(()),
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        }
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => LabError::Exists(path.clone()),
                _ => LabError::io(&path, e),
            })?;
        f.write_all(bytes).map_err(|e| LabError::io(&path, e))?;
        self.outputs.insert(rel.into(), sha256(bytes));
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        self.write(rel, &to_json(value)?)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        self.write(rel, &to_jsonl(rows)?)
    }

    pub fn write_sweep(&mut self, stem: &str, report: &SweepReport) -> Result<()> {
        self.write(&format!("{stem}.csv"), &sweep_csv(report)?)?;
        self.write_json(&format!("{stem}.json"), report)
    }

    /// Writes `manifests/<name>.json` describing everything read and written
    /// so far.
    pub fn finish(mut self, name: &str, config: Option<&ExperimentConfig>) -> Result<Manifest> {
        let manifest = Manifest {
            tool: "dpa-lab".into(),
            version: VERSION.into(),
            subcommand: name.into(),
            seed: config.map(|c| c.seed),
            config_sha256: config.map(ExperimentConfig::hash),
            config: config.cloned(),
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
        };
        self.write_json(&manifest_path(name), &manifest)?;
        Ok(manifest)
    }
}

pub fn manifest_path(name: &str) -> String {
    format!("manifests/{name}.json")
}
