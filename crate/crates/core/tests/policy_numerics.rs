use dpa_core::rng::rng_from_seed;
use dpa_core::*;
use rand::Rng;

fn tiny_arch() -> PolicyArch {
    PolicyArch {
        vocab_size: 4,
        cond_dim: 2,
        hidden: 5,
        max_len: 3,
        max_difficulty: 3,
    }
}

fn prompt(id: u64, relevant: &[Token]) -> Prompt {
    Prompt::new(id, relevant.to_vec(), 4).unwrap()
}

/// Every response over `vocab` of length `0..=max_len`; those shorter than
/// `max_len` must end with END, those at `max_len` stop without it.
fn all_responses(vocab: usize, max_len: usize) -> Vec<Response> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<Token>> = vec![vec![]];
    for len in 0..=max_len {
        for tokens in &frontier {
            out.push(Response::from_tokens(tokens.clone(), max_len));
        }
        if len < max_len {
            frontier = frontier
                .iter()
                .flat_map(|p| {
                    (0..vocab as Token).map(move |t| {
                        let mut q = p.clone();
                        q.push(t);
                        q
                    })
                })
                .collect();
        }
    }
    out
}

fn trained_policy(seed: u64) -> PolicyParams {
    // Large init scale so the distribution is far from uniform.
    init_policy(&tiny_arch(), 0.8, seed).unwrap()
}

#[test]
fn total_probability_over_terminated_sequences_is_one() {
    let x = prompt(0, &[1, 3]);
    for seed in 0..5 {
        let p = trained_policy(seed);
        let responses = all_responses(4, 3);
        assert_eq!(responses.len(), 1 + 4 + 16 + 64);
        let total: f64 = responses
            .iter()
            .map(|y| p.log_likelihood(&x, &[0.8, -0.6], y).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "total probability {total}");
    }
}

#[test]
fn next_token_distributions_are_normalized() {
    let x = prompt(1, &[0, 2]);
    let p = trained_policy(11);
    for prefix in [&[][..], &[0], &[0, 2], &[3, 3]] {
        let dist = p
            .next_token_distribution(&x, &[1.0, 0.0], prefix, 1.0)
            .unwrap();
        assert_eq!(dist.len(), 5);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn log_likelihood_is_nonpositive_and_uniform_case_exact() {
    let x = prompt(0, &[1]);
    let mut zero = init_policy(&tiny_arch(), 0.0, 0).unwrap();
    zero.weights.iter_mut().for_each(|w| *w = 0.0);
    let y = Response::from_tokens(vec![2], 3);
    // token step and END step, each over an alphabet of 5
    let ll = zero.log_likelihood(&x, &[1.0, 0.0], &y).unwrap();
    assert!((ll - 2.0 * (1.0f64 / 5.0).ln()).abs() < 1e-12);
    let p = trained_policy(3);
    for y in all_responses(4, 3) {
        assert!(p.log_likelihood(&x, &[1.0, 0.0], &y).unwrap() <= 0.0);
    }
}

fn random_batch(seed: u64) -> Vec<SequenceExample> {
    let mut rng = rng_from_seed(seed);
    (0..6)
        .map(|i| {
            let d = rng.gen_range(1..=3);
            let mut rel: Vec<Token> = (0..4).collect();
            rel.truncate(d);
            let len = rng.gen_range(0..=3);
            let tokens: Vec<Token> = (0..len).map(|_| rng.gen_range(0..4)).collect();
            let theta: f64 = rng.gen_range(-0.78..0.0);
            SequenceExample {
                prompt: prompt(i, &rel),
                conditioning: vec![theta.cos(), theta.sin()],
                response: Response::from_tokens(tokens, 3),
            }
        })
        .collect()
}

#[test]
fn nll_gradient_matches_central_differences() {
    let exec = Executor::serial();
    for point in 0..10u64 {
        let p = init_policy(&tiny_arch(), 0.5, 100 + point).unwrap();
        let batch = random_batch(point);
        let (_, grad) = p.nll_and_gradient(&batch, &exec).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..grad.len())
            .map(|i| {
                let mut plus = p.clone();
                plus.weights[i] += h;
                let mut minus = p.clone();
                minus.weights[i] -= h;
                (plus.mean_nll(&batch).unwrap() - minus.mean_nll(&batch).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(
            diff / scale < 1e-4,
            "point {point}: relative error {}",
            diff / scale
        );
    }
}

#[test]
fn greedy_is_the_low_temperature_limit() {
    let x = prompt(2, &[0, 1, 3]);
    for seed in 0..5 {
        let p = trained_policy(seed);
        let greedy = p.greedy(&x, &[0.9, -0.4]).unwrap();
        let mut rng = rng_from_seed(seed);
        let cold = p.sample(&x, &[0.9, -0.4], 1e-4, &mut rng).unwrap();
        assert_eq!(greedy, cold);
    }
}

#[test]
fn length_one_frequency_matches_analytic_probability() {
    let x = prompt(0, &[1, 2]);
    let p = trained_policy(7);
    let cond = [0.8, -0.6];
    let analytic: f64 = (0..4)
        .map(|t| {
            p.log_likelihood(&x, &cond, &Response::new(vec![t], true))
                .unwrap()
                .exp()
        })
        .sum();
    let mut rng = rng_from_seed(99);
    let n = 50_000;
    let hits = (0..n)
        .filter(|_| {
            let y = p.sample(&x, &cond, 1.0, &mut rng).unwrap();
            y.len() == 1 && y.terminated
        })
        .count();
    let freq = hits as f64 / n as f64;
    assert!((freq - analytic).abs() < 0.02, "freq {freq} vs {analytic}");
}

#[test]
fn sampled_response_probability_is_consistent_with_enumeration() {
    let x = prompt(3, &[0, 3]);
    let p = trained_policy(5);
    let cond = [1.0, 0.0];
    let responses = all_responses(4, 3);
    let probs: Vec<f64> = responses
        .iter()
        .map(|y| p.log_likelihood(&x, &cond, y).unwrap().exp())
        .collect();
    let mut rng = rng_from_seed(1);
    for _ in 0..50 {
        let y = p.sample(&x, &cond, 1.0, &mut rng).unwrap();
        let i = responses.iter().position(|r| *r == y).unwrap();
        let ll = p.log_likelihood(&x, &cond, &y).unwrap();
        assert!(ll.is_finite());
        assert!((ll.exp() - probs[i]).abs() < 1e-12);
    }
}

#[test]
fn sft_step_drives_single_example_nll_down() {
    let exec = Executor::serial();
    let arch = PolicyArch {
        vocab_size: 16,
        cond_dim: 2,
        hidden: 32,
        max_len: 12,
        max_difficulty: 8,
    };
    let ex = SequenceExample {
        prompt: Prompt::new(0, vec![2, 7, 9], 16).unwrap(),
        conditioning: vec![0.8, -0.6],
        response: Response::from_tokens(vec![7, 2, 9, 4], 12),
    };
    let batch = [ex];
    let mut p = init_policy(&arch, 0.1, 0).unwrap();
    let mut nll = f64::INFINITY;
    for _ in 0..500 {
        let (next, _) = p.sft_step(&batch, 0.1, &exec).unwrap();
        p = next;
        nll = p.mean_nll(&batch).unwrap();
        if nll < 0.01 {
            break;
        }
    }
    assert!(nll < 0.01, "NLL after 500 steps: {nll}");
}

#[test]
fn sft_step_small_lr_increases_likelihood_and_zero_lr_is_identity() {
    let exec = Executor::serial();
    let p = init_policy(&tiny_arch(), 0.5, 4).unwrap();
    let batch = random_batch(8);
    let (same, nll0) = p.sft_step(&batch, 0.0, &exec).unwrap();
    assert_eq!(same, p);
    let (next, _) = p.sft_step(&batch, 1e-3, &exec).unwrap();
    assert!(next.mean_nll(&batch).unwrap() < nll0);
}

#[test]
fn fresh_policy_is_near_uniform() {
    let arch = PolicyArch {
        vocab_size: 16,
        cond_dim: 2,
        hidden: 32,
        max_len: 12,
        max_difficulty: 8,
    };
    let x = Prompt::new(0, vec![0, 5, 6, 11], 16).unwrap();
    for seed in 0..10 {
        let p = init_policy(&arch, 0.1, seed).unwrap();
        for prefix in [&[][..], &[5, 1]] {
            let dist = p
                .next_token_distribution(&x, &[0.8, -0.6], prefix, 1.0)
                .unwrap();
            let max = dist.iter().copied().fold(0.0, f64::max);
            assert!(max <= 2.0 / 17.0, "max prob {max}");
        }
    }
}

#[test]
fn plain_fit_replays_sft_steps() {
    let exec = Executor::serial();
    let p = init_policy(&tiny_arch(), 0.5, 6).unwrap();
    let batch = random_batch(2);
    let config = FitConfig {
        steps: 5,
        learning_rate: 0.05,
        optimizer: Optimizer::Momentum { momentum: 0.0 },
        clip_norm: None,
    };
    let (fitted, history) = p.fit(&batch, &config, &exec).unwrap();
    let mut q = p.clone();
    for h in &history {
        let (next, nll) = q.sft_step(&batch, 0.05, &exec).unwrap();
        assert_eq!(nll, *h);
        q = next;
    }
    assert_eq!(fitted, q);
    assert_eq!(
        p.fit(&batch, &FitConfig::default(), &exec).unwrap(),
        p.fit(&batch, &FitConfig::default(), &exec).unwrap()
    );
}

#[test]
fn sft_pretraining_beats_random_init_on_held_out_data() {
    let exec = Executor::serial();
    let env = SynthEnv::new(EnvConfig::default()).unwrap();
    let train = env
        .make_annotated_dataset(&env.generate_prompts(0, 150, 3).unwrap(), 4, 1, &exec)
        .unwrap();
    let test = env
        .make_annotated_dataset(&env.generate_prompts(150, 50, 3).unwrap(), 4, 1, &exec)
        .unwrap();
    let prefs = PreferenceDistribution::default();
    let train = dpa_core::alignment::sft_examples(&train, &prefs, 0);
    let test = dpa_core::alignment::sft_examples(&test, &prefs, 1);
    let arch = PolicyArch {
        vocab_size: 16,
        cond_dim: 2,
        hidden: 16,
        max_len: 12,
        max_difficulty: 8,
    };
    let init = init_policy(&arch, 0.1, 2).unwrap();
    let fit = FitConfig {
        steps: 50,
        ..FitConfig::default()
    };
    let sft = init.fit(&train, &fit, &exec).unwrap().0;
    let ll = |p: &PolicyParams| -p.mean_nll(&test).unwrap();
    assert!(ll(&sft) > ll(&init), "{} vs {}", ll(&sft), ll(&init));
}

#[test]
fn fit_config_validation() {
    assert!(FitConfig::default().validate().is_ok());
    let bad = [
        FitConfig {
            learning_rate: -1.0,
            ..FitConfig::default()
        },
        FitConfig {
            clip_norm: Some(0.0),
            ..FitConfig::default()
        },
        FitConfig {
            optimizer: Optimizer::Momentum { momentum: 1.0 },
            ..FitConfig::default()
        },
        FitConfig {
            optimizer: Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 0.0,
            },
            ..FitConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}
