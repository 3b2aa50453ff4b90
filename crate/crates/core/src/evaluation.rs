//! Preference sweeps, empirical fronts, dominance and hypervolume.
//!
//! Sweeps always score with ground-truth environment rewards, never with the
//! learned reward model.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{dominates2, Prompt, SynthEnv};
use crate::exec::Executor;
use crate::policy::PolicyParams;
use crate::preference::{DirectionalPreference, PreferenceArc};
use crate::reward_model::RewardVector;
use crate::rng::derive_rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_directions: usize,
    pub responses_per: usize,
    pub temperature: f64,
    pub arc: PreferenceArc,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_directions: 10,
            responses_per: 2,
            temperature: 0.7,
            arc: PreferenceArc::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_directions < 2 {
            return Err(Error::InvalidArgument(
                "n_directions must be at least 2".into(),
            ));
        }
        if self.responses_per < 2 {
            return Err(Error::InvalidArgument(
                "responses_per must be at least 2".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub angle: f64,
    pub preference: DirectionalPreference,
    pub mean_rewards: RewardVector,
    pub responses: usize,
    pub mean_len: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub model_id: String,
    pub iteration: usize,
    /// Sorted by angle.
    pub points: Vec<SweepPoint>,
    /// Relative to the origin.
    pub hypervolume: f64,
}

impl SweepReport {
    pub fn reward_pairs(&self) -> Vec<[f64; 2]> {
        self.points
            .iter()
            .map(|p| p.mean_rewards.as_pair())
            .collect()
    }

    /// Mean over sweep points of `v · mean reward`.
    pub fn mean_scalarized(&self) -> f64 {
        let n = self.points.len() as f64;
        self.points
            .iter()
            .map(|p| {
                p.preference
                    .components()
                    .iter()
                    .zip(p.mean_rewards.values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }
}

/// Evaluates `policy` at `n_directions` equally spaced directions on the arc,
/// averaging oracle rewards over `responses_per` samples per prompt.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    policy: &PolicyParams,
    env: &SynthEnv,
    prompts: &[Prompt],
    config: &EvalConfig,
    model_id: &str,
    iteration: usize,
    seed: u64,
    exec: &Executor,
) -> Result<SweepReport> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one prompt".into(),
        ));
    }
    let angles = config.arc.equally_spaced(config.n_directions);
    let n_prompts = prompts.len();
    let cells = exec.map_range(angles.len() * n_prompts, |cell| {
        let (d, p) = (cell / n_prompts, cell % n_prompts);
        let v = DirectionalPreference::from_angle(angles[d]);
        let x = &prompts[p];
        let mut sums = [0.0f64; 3];
        for r in 0..config.responses_per {
            let mut rng = derive_rng(seed, "sweep", &[d as u64, x.id(), r as u64]);
            let y = policy.sample(x, v.components(), config.temperature, &mut rng)?;
            let [r1, r2] = env.true_rewards(x, &y).as_pair();
            sums[0] += r1;
            sums[1] += r2;
            sums[2] += y.len() as f64;
        }
        Ok::<_, Error>(sums)
    });
    let mut totals = alloc::vec![[0.0f64; 3]; angles.len()];
    for (cell, sums) in cells.into_iter().enumerate() {
        let sums = sums?;
        let t = &mut totals[cell / n_prompts];
        t.iter_mut().zip(sums).for_each(|(a, b)| *a += b);
    }
    let count = n_prompts * config.responses_per;
    let points: Vec<SweepPoint> = angles
        .iter()
        .zip(totals)
        .map(|(&angle, t)| {
            let n = count as f64;
            Ok(SweepPoint {
                angle,
                preference: DirectionalPreference::from_angle(angle),
                mean_rewards: RewardVector::new(alloc::vec![t[0] / n, t[1] / n])?,
                responses: count,
                mean_len: t[2] / n,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = SweepReport {
        model_id: model_id.into(),
        iteration,
        points,
        hypervolume: 0.0,
    };
    report.hypervolume = hypervolume(&report, &[0.0, 0.0])?;
    Ok(report)
}

/// Mutually nondominated subset (first copy of duplicates kept).
pub fn nondominated(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    points
        .iter()
        .enumerate()
        .filter(|(i, p)| !points.iter().any(|o| dominates2(o, p)) && !points[..*i].contains(p))
        .map(|(_, p)| *p)
        .collect()
}

/// Whether front `a` Pareto-dominates front `b`: every point of `b`'s front is
/// weakly dominated by a point of `a`'s front and at least one strictly.
pub fn front_dominates(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let fa = nondominated(a);
    let fb = nondominated(b);
    if fa.is_empty() || fb.is_empty() {
        return false;
    }
    let weak = |p: &[f64; 2], q: &[f64; 2]| p[0] >= q[0] && p[1] >= q[1];
    let all_covered = fb.iter().all(|q| fa.iter().any(|p| weak(p, q)));
    let some_strict = fb.iter().any(|q| fa.iter().any(|p| dominates2(p, q)));
    all_covered && some_strict
}

pub fn pareto_dominates(a: &SweepReport, b: &SweepReport) -> bool {
    front_dominates(&a.reward_pairs(), &b.reward_pairs())
}

/// Area dominated by `points` and bounded below by `reference`.
pub fn hypervolume_2d(points: &[[f64; 2]], reference: &[f64; 2]) -> Result<f64> {
    if let Some(p) = points
        .iter()
        .find(|p| p[0] < reference[0] || p[1] < reference[1])
    {
        return Err(Error::BelowReference { x: p[0], y: p[1] });
    }
    let mut front = nondominated(points);
    // Descending in the first objective means ascending in the second.
    front.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let mut area = 0.0;
    let mut prev_y = reference[1];
    for p in front {
        area += (p[0] - reference[0]) * (p[1] - prev_y);
        prev_y = p[1];
    }
    Ok(area)
}

pub fn hypervolume(report: &SweepReport, reference: &[f64]) -> Result<f64> {
    if reference.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: reference.len(),
        });
    }
    hypervolume_2d(&report.reward_pairs(), &[reference[0], reference[1]])
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}
