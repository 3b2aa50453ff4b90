mod common;

use std::collections::BTreeSet;

use common::Mini;
use dpa_core::alignment::{replay_count, split_for_iteration};
use dpa_core::*;

fn ids(prompts: &[Prompt]) -> BTreeSet<u64> {
    prompts.iter().map(Prompt::id).collect()
}

#[test]
fn replay_share_for_five_hundred() {
    let m = Mini::new(1);
    let env = &m.env;
    let prompts = env.generate_prompts(5000, 100, 3).unwrap();
    let config = AlignmentConfig {
        samples_per_pref: 2,
        ..m.config.clone()
    };
    let data = build_iteration_dataset(
        &config,
        CandidateSampler::Directional(&m.sft),
        &OracleScorer { env },
        &prompts,
        &m.a1,
        4,
        &Executor::serial(),
    )
    .unwrap();
    let replay = data
        .iter()
        .filter(|d| d.source == TripleSource::Replay)
        .count();
    assert_eq!(data.len() - replay, 500);
    // m / (500 + m) closest to 0.15 over integers.
    let best = (0..200usize)
        .min_by(|&a, &b| {
            let ea = (a as f64 / (500 + a) as f64 - 0.15).abs();
            let eb = (b as f64 / (500 + b) as f64 - 0.15).abs();
            ea.total_cmp(&eb)
        })
        .unwrap();
    assert_eq!(replay, best);
    assert_eq!(replay, replay_count(500, 0.15));
    let sampled_prompts: BTreeSet<u64> = data
        .iter()
        .filter(|d| d.source == TripleSource::RejectionSampled)
        .map(|d| d.prompt.id())
        .collect();
    assert_eq!(sampled_prompts, ids(&prompts));
}

#[test]
fn dataset_invariants() {
    let m = Mini::new(2);
    let scorer = OracleScorer { env: &m.env };
    for sampler in [
        CandidateSampler::Directional(&m.sft),
        CandidateSampler::Bootstrap {
            policy: &m.bootstrap,
            candidates: 12,
        },
    ] {
        let data = build_iteration_dataset(
            &m.config,
            sampler,
            &scorer,
            &m.d1,
            &m.a1,
            5,
            &Executor::serial(),
        )
        .unwrap();
        let split = ids(&m.d1);
        for d in &data {
            assert!(m.config.preferences.contains(&d.preference));
            match d.source {
                TripleSource::RejectionSampled => {
                    assert!(split.contains(&d.prompt.id()));
                    let own = scalarize(
                        &d.preference,
                        &scorer.score(&d.prompt, &d.response).unwrap(),
                    )
                    .unwrap();
                    assert!((own - d.winning_reward).abs() < 1e-9);
                    assert!(d.candidate_scores.iter().all(|&s| s <= d.winning_reward));
                    assert!(d.candidate_scores.contains(&d.winning_reward));
                }
                TripleSource::Replay => {
                    assert!(m
                        .a1
                        .iter()
                        .any(|a| a.prompt == d.prompt && a.response == d.response));
                    assert!(d.candidate_scores.is_empty());
                }
            }
        }
    }
}

#[test]
fn no_replay_means_only_sampled() {
    let m = Mini::new(3);
    let config = AlignmentConfig {
        replay_fraction: 0.0,
        ..m.config.clone()
    };
    let data = build_iteration_dataset(
        &config,
        CandidateSampler::Directional(&m.sft),
        &OracleScorer { env: &m.env },
        &m.d2,
        &[],
        5,
        &Executor::serial(),
    )
    .unwrap();
    assert_eq!(data.len(), 5 * m.d2.len());
    assert!(data
        .iter()
        .all(|d| d.source == TripleSource::RejectionSampled));
}

#[test]
fn empty_replay_pool_is_an_error() {
    let m = Mini::new(3);
    let r = build_iteration_dataset(
        &m.config,
        CandidateSampler::Directional(&m.sft),
        &OracleScorer { env: &m.env },
        &m.d2,
        &[],
        5,
        &Executor::serial(),
    );
    assert!(matches!(r, Err(Error::EmptyReplayPool(_))));
}

#[test]
fn neutral_replay_preference() {
    let m = Mini::new(4);
    let config = AlignmentConfig {
        replay_preference: ReplayPreference::Neutral,
        ..m.config.clone()
    };
    let data = build_iteration_dataset(
        &config,
        CandidateSampler::Directional(&m.sft),
        &OracleScorer { env: &m.env },
        &m.d1,
        &m.a1,
        5,
        &Executor::serial(),
    )
    .unwrap();
    let replay: Vec<&PreferenceTriple> = data
        .iter()
        .filter(|d| d.source == TripleSource::Replay)
        .collect();
    assert!(!replay.is_empty());
    let mid = -std::f64::consts::FRAC_PI_8;
    for d in replay {
        assert!((d.preference.angle().unwrap() - mid).abs() < 1e-12);
    }
}

#[test]
fn run_contract() {
    let m = Mini::new(5);
    let exec = Executor::serial();
    let run = run_dpa(&m.config, &m.inputs(), 11, &exec).unwrap();
    assert_eq!(run.checkpoints.len(), 2);
    assert_eq!(run.datasets.len(), 2);
    assert_eq!(run.report.iterations.len(), 2);
    assert_eq!(run.report.sft_sweep.iteration, 0);
    for (t, (metrics, data)) in run.report.iterations.iter().zip(&run.datasets).enumerate() {
        let t = t + 1;
        assert_eq!(metrics.iteration, t);
        assert_eq!(metrics.split, split_for_iteration(t));
        assert_eq!(metrics.sweep.iteration, t);
        assert_eq!(metrics.dataset_size, data.len());
        let split = ids(if metrics.split == 1 { &m.d1 } else { &m.d2 });
        assert!(data.iter().all(|d| split.contains(&d.prompt.id())));
        assert_eq!(metrics.sweep.points.len(), m.eval.n_directions);
    }
    let first = ids(&run.datasets[0]
        .iter()
        .map(|d| d.prompt.clone())
        .collect::<Vec<_>>());
    let second = ids(&run.datasets[1]
        .iter()
        .map(|d| d.prompt.clone())
        .collect::<Vec<_>>());
    assert!(first.is_disjoint(&second));

    let again = run_dpa(&m.config, &m.inputs(), 11, &exec).unwrap();
    assert_eq!(run.checkpoints, again.checkpoints);
    assert_eq!(run.datasets, again.datasets);

    let one = AlignmentConfig {
        iterations: 1,
        ..m.config.clone()
    };
    let short = run_dpa(&one, &m.inputs(), 11, &exec).unwrap();
    assert_eq!(short.checkpoints.len(), 1);
    assert_eq!(short.report.iterations.len(), 1);
    // The first iteration does not depend on how many follow it.
    assert_eq!(short.checkpoints[0], run.checkpoints[0]);
}

#[test]
fn worker_count_does_not_change_results() {
    let m = Mini::new(6);
    let a = run_dpa(&m.config, &m.inputs(), 2, &Executor::serial()).unwrap();
    let b = run_dpa(&m.config, &m.inputs(), 2, &Executor::with_workers(4)).unwrap();
    assert_eq!(a.checkpoints, b.checkpoints);
    assert_eq!(a.datasets, b.datasets);
    assert_eq!(a.report, b.report);
}

#[test]
fn rejects_bad_inputs() {
    let m = Mini::new(7);
    let exec = Executor::serial();
    let mut inputs = m.inputs();
    inputs.splits = [&m.d1, &m.d1];
    assert!(run_dpa(&m.config, &inputs, 0, &exec).is_err());

    let learned = AlignmentConfig {
        scorer: ScorerKind::Learned,
        ..m.config.clone()
    };
    assert!(run_dpa(&learned, &m.inputs(), 0, &exec).is_err());

    for bad in [
        AlignmentConfig {
            replay_fraction: 1.0,
            ..m.config.clone()
        },
        AlignmentConfig {
            samples_per_pref: 1,
            ..m.config.clone()
        },
        AlignmentConfig {
            prefs_per_prompt: 0,
            ..m.config.clone()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn learned_scorer_run() {
    let m = Mini::new(8);
    let all: Vec<AnnotatedExample> = m.a1.iter().chain(&m.a2).cloned().collect();
    let rm = train_reward_model(
        &all,
        &FeatureSpec::for_env(&m.env),
        &RewardModelConfig::default(),
        0,
    )
    .unwrap();
    let config = AlignmentConfig {
        scorer: ScorerKind::Learned,
        iterations: 1,
        ..m.config.clone()
    };
    let mut inputs = m.inputs();
    inputs.reward_model = Some(&rm);
    let run = run_dpa(&config, &inputs, 3, &Executor::serial()).unwrap();
    let scorer = LearnedScorer {
        params: &rm,
        clamp: false,
    };
    for d in run.datasets[0]
        .iter()
        .filter(|d| d.source == TripleSource::RejectionSampled)
    {
        let own = scalarize(
            &d.preference,
            &scorer.score(&d.prompt, &d.response).unwrap(),
        )
        .unwrap();
        assert!((own - d.winning_reward).abs() < 1e-9);
    }
}

#[test]
fn conditioning_is_not_ignored_after_training() {
    let m = Mini::new(9);
    let run = run_dpa(&m.config, &m.inputs(), 4, &Executor::serial()).unwrap();
    let policy = run.checkpoints.last().unwrap();
    let x = &m.validation[0];
    let dist = |theta: f64| {
        policy
            .next_token_distribution(
                x,
                DirectionalPreference::from_angle(theta).components(),
                &[],
                1.0,
            )
            .unwrap()
    };
    assert_ne!(dist(0.0), dist(-std::f64::consts::FRAC_PI_4));
}
