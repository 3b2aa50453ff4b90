//! Subcommands. Each one reads upstream artifacts from the output directory
//! when a matching manifest is present and otherwise recomputes them from
//! the config, which yields the same values. Nothing is ever overwritten.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dpa_core::reward_model::r_squared;
use dpa_core::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    manifest_path, read_bytes, read_json, AnnotatedRecord, Checkpoint, Manifest, OutDir,
    PromptRecord, TripleRecord,
};
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::pipeline::{Data, Lab};
use crate::plot::render_fronts;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    /// Rejection sampling on helpfulness alone.
    Rsf,
    /// Absolute-target conditioning, with its control-error report.
    Steerlm,
    /// Interpolation between helpfulness and verbosity specialists.
    Soup,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rsf => "rsf",
            Self::Steerlm => "steerlm",
            Self::Soup => "soup",
        }
    }
}

const PROMPT_FILES: [&str; 3] = [
    "data/prompts_d1.jsonl",
    "data/prompts_d2.jsonl",
    "data/prompts_validation.jsonl",
];
const ANNOTATED_FILES: [&str; 2] = ["data/annotated_d1.jsonl", "data/annotated_d2.jsonl"];
const SFT: &str = "checkpoints/sft.json";
const BOOTSTRAP: &str = "checkpoints/bootstrap.json";
const REWARD_MODEL: &str = "reward_model.json";

/// Verifies that `name`'s manifest in `out` came from the same config.
fn upstream(out: &mut OutDir, name: &str, config: &ExperimentConfig) -> Result<bool> {
    let rel = manifest_path(name);
    if !out.exists(&rel) {
        return Ok(false);
    }
    let m: Manifest = out.read_json(&rel)?;
    if m.config_sha256.as_deref() != Some(config.hash().as_str()) {
        return Err(LabError::Config(format!(
            "{} was produced with a different config; use a fresh output directory",
            out.path(&rel).display()
        )));
    }
    Ok(true)
}

fn load_data(lab: &Lab, out: &mut OutDir) -> Result<Data> {
    if !upstream(out, "gen-data", &lab.config)? {
        return lab.generate_data();
    }
    let vocab = lab.env.vocab_size();
    let max_len = lab.env.max_len();
    let mut prompts = Vec::new();
    for rel in PROMPT_FILES {
        let rows: Vec<PromptRecord> = out.read_jsonl(rel)?;
        let ps = rows
            .iter()
            .map(|r| r.to_prompt(vocab))
            .collect::<dpa_core::Result<Vec<_>>>()
            .map_err(|e| LabError::malformed(out.path(rel), e))?;
        prompts.push(ps);
    }
    let mut annotated = Vec::new();
    for rel in ANNOTATED_FILES {
        let rows: Vec<AnnotatedRecord> = out.read_jsonl(rel)?;
        let exs = rows
            .iter()
            .map(|r| r.to_example(vocab, max_len))
            .collect::<dpa_core::Result<Vec<_>>>()
            .map_err(|e| LabError::malformed(out.path(rel), e))?;
        annotated.push(exs);
    }
    let [d1, d2, validation]: [Vec<Prompt>; 3] = prompts.try_into().expect("three prompt files");
    let [a1, a2]: [Vec<AnnotatedExample>; 2] = annotated.try_into().expect("two annotated files");
    Ok(Data {
        d1,
        d2,
        validation,
        a1,
        a2,
    })
}

fn load_checkpoint(out: &mut OutDir, rel: &str) -> Result<PolicyParams> {
    let ck: Checkpoint = out.read_json(rel)?;
    ck.params()
        .map_err(|e| LabError::malformed(out.path(rel), e))
}

fn load_models(lab: &Lab, out: &mut OutDir, data: &Data) -> Result<(PolicyParams, PolicyParams)> {
    if upstream(out, "bootstrap", &lab.config)? {
        return Ok((load_checkpoint(out, SFT)?, load_checkpoint(out, BOOTSTRAP)?));
    }
    let sft = lab.train_sft(data)?;
    let bootstrap = lab.train_bootstrap(data, &sft)?;
    Ok((sft, bootstrap))
}

fn load_reward_model(
    lab: &Lab,
    out: &mut OutDir,
    data: &Data,
) -> Result<Option<RewardModelParams>> {
    if lab.config.alignment.scorer != ScorerKind::Learned {
        return Ok(None);
    }
    if upstream(out, "train-reward", &lab.config)? {
        let rm: RewardModelParams = out.read_json(REWARD_MODEL)?;
        rm.validate()
            .map_err(|e| LabError::malformed(out.path(REWARD_MODEL), e))?;
        return Ok(Some(rm));
    }
    Ok(Some(lab.train_reward_model(data)?))
}

fn run_files(prefix: &str, iterations: usize) -> Vec<String> {
    (1..=iterations)
        .flat_map(|t| {
            [
                format!("datasets/{prefix}_iter_{t}.jsonl"),
                format!("checkpoints/{prefix}_iter_{t}.json"),
                format!("sweeps/{prefix}_iter_{t}.csv"),
                format!("sweeps/{prefix}_iter_{t}.json"),
            ]
        })
        .chain([format!("reports/{prefix}.json")])
        .collect()
}

fn write_run(out: &mut OutDir, prefix: &str, run: &DpaRun) -> Result<()> {
    for (i, (policy, data)) in run.checkpoints.iter().zip(&run.datasets).enumerate() {
        let t = i + 1;
        let rows = data
            .iter()
            .map(TripleRecord::from_triple)
            .collect::<Result<Vec<_>>>()?;
        out.write_jsonl(&format!("datasets/{prefix}_iter_{t}.jsonl"), &rows)?;
        out.write_json(
            &format!("checkpoints/{prefix}_iter_{t}.json"),
            &Checkpoint::new(policy, t, prefix),
        )?;
        out.write_sweep(
            &format!("sweeps/{prefix}_iter_{t}"),
            &run.report.iterations[i].sweep,
        )?;
    }
    out.write_json(&format!("reports/{prefix}.json"), &run.report)
}

fn summarize_run(run: &DpaRun) -> String {
    let mut s = String::new();
    let sft = &run.report.sft_sweep;
    let _ = writeln!(
        s,
        "iter  split  dataset  scalarized  hypervolume  dominates_sft"
    );
    let _ = writeln!(
        s,
        "{:>4}  {:>5}  {:>7}  {:>10.3}  {:>11.1}  {:>13}",
        0,
        "-",
        "-",
        sft.mean_scalarized(),
        sft.hypervolume,
        "-"
    );
    for m in &run.report.iterations {
        let _ = writeln!(
            s,
            "{:>4}  {:>5}  {:>7}  {:>10.3}  {:>11.1}  {:>13}",
            m.iteration,
            m.split,
            m.dataset_size,
            m.mean_scalarized_validation,
            m.hypervolume,
            pareto_dominates(&m.sweep, sft)
        );
    }
    s
}

pub fn gen_data(lab: &Lab, out: &mut OutDir) -> Result<String> {
    let files: Vec<String> = PROMPT_FILES
        .iter()
        .chain(&ANNOTATED_FILES)
        .map(|s| s.to_string())
        .collect();
    out.ensure_fresh(&files)?;
    let data = lab.generate_data()?;
    for (rel, prompts) in PROMPT_FILES
        .iter()
        .zip([&data.d1, &data.d2, &data.validation])
    {
        let rows: Vec<PromptRecord> = prompts.iter().map(PromptRecord::from_prompt).collect();
        out.write_jsonl(rel, &rows)?;
    }
    for (rel, examples) in ANNOTATED_FILES.iter().zip([&data.a1, &data.a2]) {
        let rows: Vec<AnnotatedRecord> =
            examples.iter().map(AnnotatedRecord::from_example).collect();
        out.write_jsonl(rel, &rows)?;
    }
    Ok(format!(
        "prompts: {} + {} train, {} validation; annotated: {} + {}\n",
        data.d1.len(),
        data.d2.len(),
        data.validation.len(),
        data.a1.len(),
        data.a2.len()
    ))
}

#[derive(Serialize, Deserialize)]
struct RewardModelReport {
    train_r_squared: Vec<f64>,
    held_out_r_squared: Vec<f64>,
    final_loss: f64,
    solver: String,
}

pub fn train_reward(lab: &Lab, out: &mut OutDir) -> Result<String> {
    let report_rel = "reports/reward_model.json";
    out.ensure_fresh(&[REWARD_MODEL.into(), report_rel.into()])?;
    let data = load_data(lab, out)?;
    let rm = lab.train_reward_model(&data)?;
    let report = RewardModelReport {
        train_r_squared: r_squared(&rm, &data.annotated()),
        held_out_r_squared: r_squared(&rm, &lab.held_out_annotations(&data)?),
        final_loss: rm.train_meta.final_loss,
        solver: rm.train_meta.solver.clone(),
    };
    out.write_json(REWARD_MODEL, &rm)?;
    out.write_json(report_rel, &report)?;
    Ok(format!(
        "reward model ({}): held-out R² {:?}\n",
        report.solver, report.held_out_r_squared
    ))
}

pub fn bootstrap(lab: &Lab, out: &mut OutDir) -> Result<String> {
    out.ensure_fresh(&[SFT.into(), BOOTSTRAP.into()])?;
    let data = load_data(lab, out)?;
    let sft = lab.train_sft(&data)?;
    let bootstrap = lab.train_bootstrap(&data, &sft)?;
    out.write_json(SFT, &Checkpoint::new(&sft, 0, "sft"))?;
    out.write_json(
        BOOTSTRAP,
        &Checkpoint::new(&bootstrap, 0, "steerlm_bootstrap"),
    )?;
    Ok(format!(
        "sft and bootstrap checkpoints ({} parameters each)\n",
        sft.weights.len()
    ))
}

pub fn align(lab: &Lab, out: &mut OutDir) -> Result<String> {
    let mut files = run_files("dpa", lab.config.alignment.iterations);
    files.extend(["sweeps/sft.csv".into(), "sweeps/sft.json".into()]);
    out.ensure_fresh(&files)?;
    let data = load_data(lab, out)?;
    let (sft, bootstrap) = load_models(lab, out, &data)?;
    let rm = load_reward_model(lab, out, &data)?;
    let run = lab.align(&data, &sft, &bootstrap, rm.as_ref())?;
    out.write_sweep("sweeps/sft", &run.report.sft_sweep)?;
    write_run(out, "dpa", &run)?;
    Ok(summarize_run(&run))
}

pub fn baseline(lab: &Lab, out: &mut OutDir, method: BaselineMethod) -> Result<String> {
    let t_final = lab.config.alignment.iterations;
    match method {
        BaselineMethod::Rsf => out.ensure_fresh(&run_files("rsf", t_final))?,
        BaselineMethod::Steerlm => out.ensure_fresh(&[
            "checkpoints/steerlm.json".into(),
            "reports/steerlm.json".into(),
        ])?,
        BaselineMethod::Soup => out.ensure_fresh(&[
            "checkpoints/verbosity_rsf.json".into(),
            "sweeps/soup.csv".into(),
            "sweeps/soup.json".into(),
        ])?,
    }
    let data = load_data(lab, out)?;
    let (sft, bootstrap) = load_models(lab, out, &data)?;
    let rm = load_reward_model(lab, out, &data)?;
    match method {
        BaselineMethod::Rsf => {
            let run = lab.scalar_rsf(&data, &sft, &bootstrap, rm.as_ref())?;
            write_run(out, "rsf", &run)?;
            Ok(summarize_run(&run))
        }
        BaselineMethod::Steerlm => {
            let steerlm = lab.train_steerlm(&data, &sft)?;
            let dpa = if upstream(out, "align", &lab.config)? {
                Some(load_checkpoint(
                    out,
                    &format!("checkpoints/dpa_iter_{t_final}.json"),
                )?)
            } else {
                None
            };
            let report = lab.feasibility(&data, &steerlm, dpa.as_ref())?;
            out.write_json(
                "checkpoints/steerlm.json",
                &Checkpoint::new(&steerlm, 0, "steerlm"),
            )?;
            out.write_json("reports/steerlm.json", &report)?;
            let mut s = format!(
                "steerlm control error: feasible {:.2}, infeasible {:.2} (ratio {:.2})\n",
                report.steerlm_feasible_error,
                report.steerlm_infeasible_error,
                report.steerlm_ratio
            );
            match &report.dpa {
                Some(d) => {
                    let _ = writeln!(
                        s,
                        "dpa control error: angle {:.3} {:.2}, angle {:.3} {:.2} (ratio {:.2})",
                        d.feasible_angle,
                        d.feasible_error,
                        d.infeasible_angle,
                        d.infeasible_error,
                        d.ratio
                    );
                }
                None => s.push_str("no align run in this directory; dpa comparison skipped\n"),
            }
            Ok(s)
        }
        BaselineMethod::Soup => {
            let helpful = if upstream(out, "baseline-rsf", &lab.config)? {
                load_checkpoint(out, &format!("checkpoints/rsf_iter_{t_final}.json"))?
            } else {
                final_checkpoint(lab.scalar_rsf(&data, &sft, &bootstrap, rm.as_ref())?)?
            };
            let up = DirectionalPreference::new(vec![0.0, 1.0])?;
            let verbose =
                final_checkpoint(lab.fixed_direction(up, &data, &sft, &bootstrap, rm.as_ref())?)?;
            let report = lab.soup_sweep(&helpful, &verbose, &data)?;
            out.write_json(
                "checkpoints/verbosity_rsf.json",
                &Checkpoint::new(&verbose, t_final, "verbosity_rsf"),
            )?;
            out.write_sweep("sweeps/soup", &report)?;
            let mut s = String::from("weight_on_helpful  mean_r1  mean_r2\n");
            for p in &report.points {
                let [r1, r2] = p.mean_rewards.as_pair();
                let _ = writeln!(
                    s,
                    "{:>17.3}  {r1:>7.2}  {r2:>7.2}",
                    p.preference.components()[0] / p.preference.components().iter().sum::<f64>()
                );
            }
            Ok(s)
        }
    }
}

fn final_checkpoint(run: DpaRun) -> Result<PolicyParams> {
    run.checkpoints
        .into_iter()
        .last()
        .ok_or_else(|| LabError::Invariant("run produced no checkpoints".into()))
}

pub fn sweep_checkpoint(
    lab: &Lab,
    out: &mut OutDir,
    checkpoint: &Path,
    name: &str,
) -> Result<String> {
    out.ensure_fresh(&[format!("sweeps/{name}.csv"), format!("sweeps/{name}.json")])?;
    let ck: Checkpoint = read_json(checkpoint)?;
    let policy = ck
        .params()
        .map_err(|e| LabError::malformed(checkpoint, e))?;
    if policy.arch.vocab_size != lab.env.vocab_size() || policy.arch.max_len != lab.env.max_len() {
        return Err(LabError::Config(format!(
            "checkpoint {} does not match the configured environment",
            checkpoint.display()
        )));
    }
    let data = load_data(lab, out)?;
    let mut report = lab.sweep(&policy, &data, &ck.method)?;
    report.iteration = ck.iteration;
    out.write_sweep(&format!("sweeps/{name}"), &report)?;
    Ok(format!(
        "{name}: hypervolume {:.1}, mean scalarized {:.3}\n",
        report.hypervolume,
        report.mean_scalarized()
    ))
}

/// Dominance verdict and hypervolumes of two sweep reports.
pub fn compare(a: &Path, b: &Path) -> Result<String> {
    let ra: SweepReport = read_json(a)?;
    let rb: SweepReport = read_json(b)?;
    let verdict = match (pareto_dominates(&ra, &rb), pareto_dominates(&rb, &ra)) {
        (true, _) => "a dominates b",
        (_, true) => "b dominates a",
        _ => "neither dominates",
    };
    let hv = |r: &SweepReport| hypervolume(r, &[0.0, 0.0]);
    Ok(format!(
        "a: {} (hypervolume {:.3})\nb: {} (hypervolume {:.3})\nverdict: {verdict}\n",
        a.display(),
        hv(&ra)?,
        b.display(),
        hv(&rb)?
    ))
}

pub fn plot(out: &mut OutDir, reports: &[PathBuf], name: &str) -> Result<String> {
    let rel = format!("plots/{name}.svg");
    out.ensure_fresh(std::slice::from_ref(&rel))?;
    let mut loaded = Vec::with_capacity(reports.len());
    for p in reports {
        let bytes = read_bytes(p)?;
        let r: SweepReport =
            serde_json::from_slice(&bytes).map_err(|e| LabError::malformed(p, e))?;
        loaded.push(r);
    }
    if loaded.is_empty() {
        return Err(LabError::Config(
            "plot needs at least one sweep report".into(),
        ));
    }
    out.write(&rel, render_fronts(&loaded).as_bytes())?;
    Ok(format!("wrote {}\n", out.path(&rel).display()))
}
