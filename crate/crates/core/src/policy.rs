//! Preference-conditioned autoregressive policy `π(y | x, c)`.
//!
//! `c` is a small real conditioning vector: a directional preference for the
//! aligned policy, or a target reward vector for the absolute-target
//! baseline. The network is one tanh layer over two input groups:
//!
//! * context (fixed per sequence): normalized difficulty and `c`;
//! * step state: previous token one-hot (with a begin slot), whether that
//!   token was relevant, coverage so far, relevant tokens remaining, an
//!   all-covered flag, length so far, and length times `c`.
//!
//! followed by a linear head over `vocab ∪ {END}`. The head also has a direct
//! linear path from both input groups, and per-token features (relevant, not
//! yet emitted, already emitted) whose weights are shared across tokens and
//! gated by the hidden layer. Because the step state summarizes the history,
//! likelihoods and gradients are exact and cheap.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Prompt, Response, Token};
use crate::exec::Executor;
use crate::rng::{rng_from_seed, standard_normal, Rng};
use crate::{Error, Result};

/// Sequences per gradient chunk. Chunks are summed in order, so the result
/// does not depend on how chunks are scheduled.
const GRAD_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArch {
    pub vocab_size: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub max_difficulty: usize,
}

impl PolicyArch {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.vocab_size > crate::env::MAX_VOCAB {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {} out of range",
                self.vocab_size
            )));
        }
        if self.cond_dim == 0 || self.hidden == 0 || self.max_len == 0 || self.max_difficulty == 0 {
            return Err(Error::InvalidArgument(
                "policy dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Index of the end marker in the output distribution.
    pub fn end(&self) -> usize {
        self.vocab_size
    }

    pub fn n_out(&self) -> usize {
        self.vocab_size + 1
    }

    fn ctx_dim(&self) -> usize {
        1 + self.cond_dim
    }

    fn step_dim(&self) -> usize {
        self.vocab_size + 1 + STEP_SUMMARIES + self.cond_dim + self.max_len
    }

    fn layout(&self) -> Layout {
        let h = self.hidden;
        let w_ctx = 0;
        let w_step = w_ctx + self.ctx_dim() * h;
        let b_h = w_step + self.step_dim() * h;
        let w_out = b_h + h;
        let b_out = w_out + self.n_out() * h;
        let w_skip = b_out + self.n_out();
        let w_gate = w_skip + (self.ctx_dim() + self.step_dim()) * self.n_out();
        Layout {
            w_ctx,
            w_step,
            b_h,
            w_out,
            b_out,
            w_skip,
            w_gate,
            total: w_gate + TOKEN_FEATURES * (h + 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy)]
struct Layout {
    w_ctx: usize,
    w_step: usize,
    b_h: usize,
    w_out: usize,
    b_out: usize,
    /// Direct input-to-logit weights, `[ctx_dim + step_dim] × n_out`; step
    /// inputs follow the context inputs.
    w_skip: usize,
    /// Per token feature `f`: hidden weights `u_f` then offset `c_f`.
    w_gate: usize,
    total: usize,
}

/// Shared per-token features: relevant, relevant and not yet emitted,
/// already emitted.
const TOKEN_FEATURES: usize = 3;

/// Step inputs after the previous-token one-hot: previous token relevant,
/// coverage fraction, remaining relevant count, all covered, length fraction.
/// They are followed by the length fraction times each conditioning
/// component and a one-hot of the current length.
const STEP_SUMMARIES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: PolicyArch,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

/// One supervised sequence `(x, c, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceExample {
    pub prompt: Prompt,
    pub conditioning: Vec<f64>,
    pub response: Response,
}

/// Update rule used by [`PolicyParams::fit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    /// Heavy-ball descent; `momentum = 0` is plain gradient descent.
    Momentum { momentum: f64 },
    /// Adam with bias correction.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Full-batch steps.
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Gradients with a larger Euclidean norm are rescaled to this norm.
    pub clip_norm: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            learning_rate: 0.01,
            optimizer: Optimizer::default(),
            clip_norm: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let optimizer_ok = match self.optimizer {
            Optimizer::Momentum { momentum } => (0.0..1.0).contains(&momentum),
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0,
        };
        let ok = optimizer_ok
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.clip_norm.is_none_or(|c| c > 0.0 && c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid fit config {self:?}"
            )))
        }
    }
}

/// Small Gaussian weights (std `init_scale`) on the hidden path; biases,
/// direct paths and token-feature gates start at zero.
pub fn init_policy(arch: &PolicyArch, init_scale: f64, seed: u64) -> Result<PolicyParams> {
    arch.validate()?;
    let lay = arch.layout();
    let mut rng = rng_from_seed(seed);
    let mut weights = vec![0.0; lay.total];
    for (i, w) in weights.iter_mut().enumerate() {
        let hidden_path = i < lay.b_h || (lay.w_out..lay.b_out).contains(&i);
        if hidden_path {
            *w = init_scale * standard_normal(&mut rng);
        }
    }
    Ok(PolicyParams {
        arch: arch.clone(),
        weights,
    })
}

/// Decoding state summarizing a prefix.
#[derive(Clone, Copy, Debug)]
struct StepState {
    prev: usize,
    relevant: u64,
    remaining: u64,
    emitted: u64,
    covered: usize,
    len: usize,
}

impl StepState {
    fn start(arch: &PolicyArch, x: &Prompt) -> Self {
        Self {
            prev: arch.vocab_size,
            relevant: x.relevant_mask(),
            remaining: x.relevant_mask(),
            emitted: 0,
            covered: 0,
            len: 0,
        }
    }

    fn advance(&mut self, t: Token) {
        let bit = 1u64 << t;
        if self.remaining & bit != 0 {
            self.remaining &= !bit;
            self.covered += 1;
        }
        self.emitted |= bit;
        self.prev = usize::from(t);
        self.len += 1;
    }

    fn token_feature(&self, t: usize, f: usize) -> f64 {
        let mask = [self.relevant, self.remaining, self.emitted][f];
        if mask >> t & 1 == 1 {
            1.0
        } else {
            0.0
        }
    }
}

/// Scratch buffers for one forward pass.
struct Scratch {
    pre: Vec<f64>,
    skip_pre: Vec<f64>,
    gates: [f64; TOKEN_FEATURES],
    h: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Scratch {
    fn new(arch: &PolicyArch) -> Self {
        Self {
            pre: vec![0.0; arch.hidden],
            skip_pre: vec![0.0; arch.n_out()],
            gates: [0.0; TOKEN_FEATURES],
            h: vec![0.0; arch.hidden],
            logits: vec![0.0; arch.n_out()],
            probs: vec![0.0; arch.n_out()],
        }
    }
}

fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = libm::exp((l - max) / temperature);
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.weights.len() != self.arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weights, got {}",
                self.arch.param_count(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("policy weights".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, x: &Prompt, cond: &[f64]) -> Result<()> {
        if cond.len() != self.arch.cond_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.cond_dim,
                got: cond.len(),
            });
        }
        if x.relevant()
            .iter()
            .any(|&t| usize::from(t) >= self.arch.vocab_size)
        {
            return Err(Error::InvalidArgument(format!(
                "prompt {} uses tokens outside the policy vocabulary",
                x.id()
            )));
        }
        Ok(())
    }

    /// Non-zero context inputs as `(index, value)`.
    fn context(&self, x: &Prompt, cond: &[f64]) -> Vec<(usize, f64)> {
        let mut ctx = Vec::with_capacity(1 + cond.len());
        ctx.push((0, x.difficulty() as f64 / self.arch.max_difficulty as f64));
        ctx.extend(cond.iter().enumerate().map(|(i, &c)| (1 + i, c)));
        ctx
    }

    /// Context contributions to the hidden pre-activation and the logits.
    fn context_pre(&self, ctx: &[(usize, f64)], sc: &mut Scratch) {
        let h = self.arch.hidden;
        let n = self.arch.n_out();
        let lay = self.arch.layout();
        sc.pre.copy_from_slice(&self.weights[lay.b_h..lay.b_h + h]);
        sc.skip_pre
            .copy_from_slice(&self.weights[lay.b_out..lay.b_out + n]);
        for &(i, val) in ctx {
            let col = &self.weights[lay.w_ctx + i * h..lay.w_ctx + (i + 1) * h];
            sc.pre.iter_mut().zip(col).for_each(|(o, w)| *o += val * w);
            let row = &self.weights[lay.w_skip + i * n..lay.w_skip + (i + 1) * n];
            sc.skip_pre
                .iter_mut()
                .zip(row)
                .for_each(|(o, w)| *o += val * w);
        }
    }

    /// Non-zero step inputs as `(index, value)`.
    fn step_inputs(
        &self,
        s: &StepState,
        difficulty: usize,
        cond: &[f64],
        buf: &mut Vec<(usize, f64)>,
    ) {
        let at = self.arch.vocab_size + 1;
        let d = difficulty as f64;
        buf.clear();
        buf.push((s.prev, 1.0));
        if s.prev < self.arch.vocab_size && s.relevant >> s.prev & 1 == 1 {
            buf.push((at, 1.0));
        }
        buf.push((at + 1, s.covered as f64 / d));
        buf.push((
            at + 2,
            (difficulty - s.covered) as f64 / self.arch.max_difficulty as f64,
        ));
        if s.covered == difficulty {
            buf.push((at + 3, 1.0));
        }
        let len = s.len as f64 / self.arch.max_len as f64;
        buf.push((at + 4, len));
        buf.extend(cond.iter().enumerate().map(|(i, c)| (at + 5 + i, len * c)));
        buf.push((at + 5 + cond.len() + s.len, 1.0));
    }

    /// Hidden activations and output probabilities for one step.
    fn forward_step(
        &self,
        sc: &mut Scratch,
        inputs: &[(usize, f64)],
        state: &StepState,
        temperature: f64,
    ) {
        let hdim = self.arch.hidden;
        let lay = self.arch.layout();
        sc.h.copy_from_slice(&sc.pre);
        for &(i, val) in inputs {
            let col = &self.weights[lay.w_step + i * hdim..lay.w_step + (i + 1) * hdim];
            sc.h.iter_mut().zip(col).for_each(|(o, w)| *o += val * w);
        }
        sc.h.iter_mut().for_each(|z| *z = libm::tanh(*z));
        let n = self.arch.n_out();
        sc.logits.copy_from_slice(&sc.skip_pre);
        let ctx_dim = self.arch.ctx_dim();
        for &(i, val) in inputs {
            let at = lay.w_skip + (ctx_dim + i) * n;
            let row = &self.weights[at..at + n];
            sc.logits
                .iter_mut()
                .zip(row)
                .for_each(|(o, w)| *o += val * w);
        }
        for (o, logit) in sc.logits.iter_mut().enumerate() {
            let row = &self.weights[lay.w_out + o * hdim..lay.w_out + (o + 1) * hdim];
            *logit += row.iter().zip(&sc.h).map(|(w, h)| w * h).sum::<f64>();
        }
        for f in 0..TOKEN_FEATURES {
            let at = lay.w_gate + f * (hdim + 1);
            let u = &self.weights[at..at + hdim];
            sc.gates[f] =
                self.weights[at + hdim] + u.iter().zip(&sc.h).map(|(w, h)| w * h).sum::<f64>();
        }
        for (t, logit) in sc.logits[..self.arch.vocab_size].iter_mut().enumerate() {
            for f in 0..TOKEN_FEATURES {
                *logit += sc.gates[f] * state.token_feature(t, f);
            }
        }
        softmax_into(&sc.logits, temperature, &mut sc.probs);
    }

    /// Distribution over `vocab ∪ {END}` after `prefix`.
    pub fn next_token_distribution(
        &self,
        x: &Prompt,
        cond: &[f64],
        prefix: &[Token],
        temperature: f64,
    ) -> Result<Vec<f64>> {
        self.check_inputs(x, cond)?;
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        let mut sc = Scratch::new(&self.arch);
        self.context_pre(&self.context(x, cond), &mut sc);
        let mut state = StepState::start(&self.arch, x);
        for &t in prefix {
            state.advance(t);
        }
        let mut buf = Vec::new();
        self.step_inputs(&state, x.difficulty(), cond, &mut buf);
        self.forward_step(&mut sc, &buf, &state, temperature);
        Ok(sc.probs)
    }

    /// `log π(y | x, c)`, including the end marker for terminated responses.
    pub fn log_likelihood(&self, x: &Prompt, cond: &[f64], y: &Response) -> Result<f64> {
        self.check_inputs(x, cond)?;
        y.validate(self.arch.vocab_size, self.arch.max_len)?;
        let mut sc = Scratch::new(&self.arch);
        self.context_pre(&self.context(x, cond), &mut sc);
        let mut state = StepState::start(&self.arch, x);
        let mut buf = Vec::new();
        let mut ll = 0.0;
        let targets = y.tokens.iter().map(|&t| usize::from(t));
        let end = y.terminated.then_some(self.arch.end());
        for target in targets.chain(end) {
            self.step_inputs(&state, x.difficulty(), cond, &mut buf);
            self.forward_step(&mut sc, &buf, &state, 1.0);
            ll += libm::log(sc.probs[target]);
            if target < self.arch.vocab_size {
                state.advance(target as Token);
            }
        }
        Ok(ll)
    }

    fn generate(
        &self,
        x: &Prompt,
        cond: &[f64],
        max_len: usize,
        mut pick: impl FnMut(&[f64]) -> usize,
        temperature: f64,
    ) -> Result<Response> {
        self.check_inputs(x, cond)?;
        let max_len = max_len.min(self.arch.max_len);
        let mut sc = Scratch::new(&self.arch);
        self.context_pre(&self.context(x, cond), &mut sc);
        let mut state = StepState::start(&self.arch, x);
        let mut buf = Vec::new();
        let mut tokens = Vec::with_capacity(max_len);
        while tokens.len() < max_len {
            self.step_inputs(&state, x.difficulty(), cond, &mut buf);
            self.forward_step(&mut sc, &buf, &state, temperature);
            let next = pick(&sc.probs);
            if next == self.arch.end() {
                return Ok(Response::new(tokens, true));
            }
            let t = next as Token;
            tokens.push(t);
            state.advance(t);
        }
        Ok(Response::new(tokens, false))
    }

    /// Ancestral sample at `temperature`, stopping at END or `max_len`.
    pub fn sample(
        &self,
        x: &Prompt,
        cond: &[f64],
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<Response> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        self.generate(
            x,
            cond,
            self.arch.max_len,
            |p| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return i;
                    }
                }
                p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
            },
            temperature,
        )
    }

    pub fn sample_with(
        &self,
        x: &Prompt,
        cond: &[f64],
        gen: &GenerationConfig,
    ) -> Result<Response> {
        if !(gen.temperature > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        let mut rng = rng_from_seed(gen.seed);
        let max_len = gen.max_len;
        self.generate(
            x,
            cond,
            max_len,
            |p| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return i;
                    }
                }
                p.len() - 1
            },
            gen.temperature,
        )
    }

    /// Argmax decoding (the zero-temperature limit of [`Self::sample`]).
    pub fn greedy(&self, x: &Prompt, cond: &[f64]) -> Result<Response> {
        self.generate(
            x,
            cond,
            self.arch.max_len,
            |p| {
                let mut best = 0;
                for (i, &pi) in p.iter().enumerate() {
                    if pi > p[best] {
                        best = i;
                    }
                }
                best
            },
            1.0,
        )
    }

    /// Adds `∇ -log π(y | x, c)` to `grad`; returns the NLL.
    fn accumulate_nll_gradient(&self, ex: &SequenceExample, grad: &mut [f64]) -> Result<f64> {
        let arch = &self.arch;
        let hdim = arch.hidden;
        let lay = arch.layout();
        self.check_inputs(&ex.prompt, &ex.conditioning)?;
        ex.response.validate(arch.vocab_size, arch.max_len)?;

        let ctx = self.context(&ex.prompt, &ex.conditioning);
        let mut sc = Scratch::new(arch);
        self.context_pre(&ctx, &mut sc);
        let mut state = StepState::start(arch, &ex.prompt);
        let mut buf = Vec::new();
        let mut dz = vec![0.0; hdim];
        let mut dz_total = vec![0.0; hdim];
        let mut dl_total = vec![0.0; arch.n_out()];
        let n_out = arch.n_out();
        let ctx_dim = arch.ctx_dim();
        let mut nll = 0.0;
        let end = ex.response.terminated.then_some(arch.end());
        let targets = ex.response.tokens.iter().map(|&t| usize::from(t));
        for target in targets.chain(end) {
            self.step_inputs(&state, ex.prompt.difficulty(), &ex.conditioning, &mut buf);
            self.forward_step(&mut sc, &buf, &state, 1.0);
            nll -= libm::log(sc.probs[target]);

            dz.iter_mut().for_each(|d| *d = 0.0);
            for f in 0..TOKEN_FEATURES {
                let dgate: f64 = (0..arch.vocab_size)
                    .map(|t| {
                        (sc.probs[t] - if t == target { 1.0 } else { 0.0 })
                            * state.token_feature(t, f)
                    })
                    .sum();
                let at = lay.w_gate + f * (hdim + 1);
                for j in 0..hdim {
                    grad[at + j] += dgate * sc.h[j];
                    dz[j] += dgate * self.weights[at + j];
                }
                grad[at + hdim] += dgate;
            }
            for o in 0..arch.n_out() {
                let dl = sc.probs[o] - if o == target { 1.0 } else { 0.0 };
                dl_total[o] += dl;
                for &(i, val) in &buf {
                    grad[lay.w_skip + (ctx_dim + i) * n_out + o] += val * dl;
                }
                let row = lay.w_out + o * hdim;
                for j in 0..hdim {
                    grad[row + j] += dl * sc.h[j];
                    dz[j] += dl * self.weights[row + j];
                }
            }
            for (d, h) in dz.iter_mut().zip(&sc.h) {
                *d *= 1.0 - h * h;
            }
            for &(i, val) in &buf {
                let col = lay.w_step + i * hdim;
                for j in 0..hdim {
                    grad[col + j] += val * dz[j];
                }
            }
            dz_total.iter_mut().zip(&dz).for_each(|(t, d)| *t += d);
            if target < arch.vocab_size {
                state.advance(target as Token);
            }
        }
        for j in 0..hdim {
            grad[lay.b_h + j] += dz_total[j];
        }
        for o in 0..n_out {
            grad[lay.b_out + o] += dl_total[o];
        }
        for &(i, val) in &ctx {
            let col = lay.w_ctx + i * hdim;
            for j in 0..hdim {
                grad[col + j] += val * dz_total[j];
            }
            let row = lay.w_skip + i * n_out;
            for o in 0..n_out {
                grad[row + o] += val * dl_total[o];
            }
        }
        Ok(nll)
    }

    /// Mean NLL over `batch` and its gradient with respect to the weights.
    pub fn nll_and_gradient(
        &self,
        batch: &[SequenceExample],
        exec: &Executor,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let p = self.weights.len();
        let chunks = batch.len().div_ceil(GRAD_CHUNK);
        let parts = exec.map_range(chunks, |c| {
            let lo = c * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(batch.len());
            let mut g = vec![0.0; p];
            let mut nll = 0.0;
            for ex in &batch[lo..hi] {
                nll += self.accumulate_nll_gradient(ex, &mut g)?;
            }
            Ok::<_, Error>((nll, g))
        });
        let n = batch.len() as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; p];
        for part in parts {
            let (nll, g) = part?;
            total += nll;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    /// Mean NLL over `batch`.
    pub fn mean_nll(&self, batch: &[SequenceExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = 0.0;
        for ex in batch {
            total -= self.log_likelihood(&ex.prompt, &ex.conditioning, &ex.response)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// One full-batch ascent step on mean log-likelihood. Returns the updated
    /// parameters and the mean NLL before the step.
    pub fn sft_step(
        &self,
        batch: &[SequenceExample],
        learning_rate: f64,
        exec: &Executor,
    ) -> Result<(PolicyParams, f64)> {
        let (nll, grad) = self.nll_and_gradient(batch, exec)?;
        check_finite(&grad, nll)?;
        let mut next = self.clone();
        next.weights
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, g)| *w -= learning_rate * g);
        Ok((next, nll))
    }

    /// Full-batch optimization of mean NLL; returns the trained parameters
    /// and the pre-step NLL of every step. With zero momentum and no
    /// clipping each step is [`Self::sft_step`].
    pub fn fit(
        &self,
        batch: &[SequenceExample],
        config: &FitConfig,
        exec: &Executor,
    ) -> Result<(PolicyParams, Vec<f64>)> {
        config.validate()?;
        let mut params = self.clone();
        let n = params.weights.len();
        let (mut m, mut s) = (vec![0.0; n], vec![0.0; n]);
        let mut history = Vec::with_capacity(config.steps);
        let lr = config.learning_rate;
        for step in 1..=config.steps {
            let (nll, mut grad) = params.nll_and_gradient(batch, exec)?;
            check_finite(&grad, nll)?;
            if let Some(c) = config.clip_norm {
                let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
                if norm > c {
                    grad.iter_mut().for_each(|g| *g *= c / norm);
                }
            }
            match config.optimizer {
                Optimizer::Momentum { momentum } => {
                    for ((w, v), g) in params.weights.iter_mut().zip(&mut m).zip(&grad) {
                        *v = momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let c1 = 1.0 - libm::pow(beta1, step as f64);
                    let c2 = 1.0 - libm::pow(beta2, step as f64);
                    for (((w, m), s), g) in
                        params.weights.iter_mut().zip(&mut m).zip(&mut s).zip(&grad)
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *s = beta2 * *s + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / (libm::sqrt(*s / c2) + epsilon);
                    }
                }
            }
            history.push(nll);
        }
        Ok((params, history))
    }
}

fn check_finite(grad: &[f64], nll: f64) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFiniteGradient(format!(
            "component {i} of {} (mean NLL {nll})",
            grad.len()
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> PolicyArch {
        PolicyArch {
            vocab_size: 6,
            cond_dim: 2,
            hidden: 8,
            max_len: 4,
            max_difficulty: 3,
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_policy(&arch(), 0.1, 9).unwrap();
        assert_eq!(a, init_policy(&arch(), 0.1, 9).unwrap());
        assert_ne!(a, init_policy(&arch(), 0.1, 10).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn zero_weights_give_uniform_steps() {
        let arch = arch();
        let params = PolicyParams {
            weights: vec![0.0; arch.param_count()],
            arch: arch.clone(),
        };
        let x = Prompt::new(0, vec![1, 2], 6).unwrap();
        let y = Response::new(vec![3], true);
        let ll = params.log_likelihood(&x, &[1.0, 0.0], &y).unwrap();
        let a = arch.n_out() as f64;
        assert!((ll - 2.0 * libm::log(1.0 / a)).abs() < 1e-12);
    }

    #[test]
    fn learning_rate_zero_is_identity() {
        let params = init_policy(&arch(), 0.1, 1).unwrap();
        let x = Prompt::new(0, vec![1, 2], 6).unwrap();
        let batch = vec![SequenceExample {
            prompt: x,
            conditioning: vec![1.0, 0.0],
            response: Response::new(vec![1, 2], true),
        }];
        let (next, _) = params.sft_step(&batch, 0.0, &Executor::serial()).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = init_policy(&arch(), 0.1, 1).unwrap();
        let x = Prompt::new(0, vec![1], 6).unwrap();
        assert!(params
            .log_likelihood(&x, &[1.0], &Response::new(vec![], true))
            .is_err());
        assert!(params
            .log_likelihood(&x, &[1.0, 0.0], &Response::new(vec![9], true))
            .is_err());
        assert!(params
            .log_likelihood(&x, &[1.0, 0.0], &Response::new(vec![1], false))
            .is_err());
        assert!(params.sft_step(&[], 0.1, &Executor::serial()).is_err());
        let big = Prompt::new(0, vec![12], 16).unwrap();
        assert!(params.greedy(&big, &[1.0, 0.0]).is_err());
    }
}
