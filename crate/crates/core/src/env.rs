//! Synthetic generation environment with ground-truth rewards.
//!
//! A prompt hides a set of "relevant" tokens. Helpfulness rewards covering
//! them, verbosity is the normalized length. Rewards depend on a response only
//! through `(distinct relevant tokens covered, length)`, which keeps the set of
//! achievable reward vectors small enough to enumerate exactly.
//!
//! Two variants exist. In [`Variant::Plain`] helpfulness is pure coverage, so
//! both objectives are maximized together by covering everything and padding
//! to full length. [`Variant::Budgeted`] blends coverage with an elaboration
//! term that grows with diminishing returns up to a length budget and is
//! penalized beyond it, which curves the front inside the quadrant where
//! verbosity is discouraged.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::reward_model::RewardVector;
use crate::rng::derive_rng;
use crate::{Error, Result};

pub type Token = u16;

/// Largest supported vocabulary; token sets are `u64` bitmasks.
pub const MAX_VOCAB: usize = 64;

/// Cap on `(coverage, length)` classes visited by [`SynthEnv::enumerate_front`].
pub const ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Plain,
    Budgeted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    /// Upper bound on `|relevant_tokens|`.
    pub max_difficulty: usize,
    pub variant: Variant,
    /// Length at which elaboration saturates (budgeted variant).
    pub budget: usize,
    /// Share of helpfulness coming from elaboration (budgeted variant).
    pub elaboration_weight: f64,
    /// Blend between a linear (0) and a saturating quadratic (1) elaboration
    /// curve below the budget.
    pub elaboration_curvature: f64,
    /// Elaboration lost when running from the budget to `max_len`.
    pub overrun_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            max_len: 12,
            max_difficulty: 8,
            variant: Variant::Plain,
            budget: 10,
            elaboration_weight: 0.4,
            elaboration_curvature: 1.0,
            overrun_penalty: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn budgeted() -> Self {
        Self {
            variant: Variant::Budgeted,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 || self.vocab_size > MAX_VOCAB {
            return Err(Error::InvalidArgument(format!(
                "vocab_size must be in [4, {MAX_VOCAB}], got {}",
                self.vocab_size
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be positive".into()));
        }
        if self.max_difficulty == 0 || self.max_difficulty > self.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "max_difficulty must be in [1, vocab_size], got {}",
                self.max_difficulty
            )));
        }
        if self.variant == Variant::Budgeted {
            if self.budget == 0 || self.budget > self.max_len {
                return Err(Error::InvalidArgument(format!(
                    "budget must be in [1, max_len], got {}",
                    self.budget
                )));
            }
            if !(0.0..=1.0).contains(&self.elaboration_weight) {
                return Err(Error::InvalidArgument(
                    "elaboration_weight must be in [0, 1]".into(),
                ));
            }
            if !(0.0..=1.0).contains(&self.elaboration_curvature) {
                return Err(Error::InvalidArgument(
                    "elaboration_curvature must be in [0, 1]".into(),
                ));
            }
            if !(self.overrun_penalty >= 0.0 && self.overrun_penalty.is_finite()) {
                return Err(Error::InvalidArgument(
                    "overrun_penalty must be a nonnegative number".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A prompt: an id and the hidden set of relevant tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Prompt {
    id: u64,
    relevant: Vec<Token>,
    mask: u64,
}

impl Prompt {
    pub fn new(id: u64, mut relevant: Vec<Token>, vocab_size: usize) -> Result<Self> {
        if vocab_size > MAX_VOCAB {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {vocab_size} exceeds {MAX_VOCAB}"
            )));
        }
        relevant.sort_unstable();
        relevant.dedup();
        if relevant.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "prompt {id} has no relevant tokens"
            )));
        }
        if let Some(&t) = relevant.iter().find(|&&t| usize::from(t) >= vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "prompt {id}: token {t} outside vocabulary of {vocab_size}"
            )));
        }
        let mask = relevant.iter().fold(0u64, |m, &t| m | (1u64 << t));
        Ok(Self { id, relevant, mask })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Sorted, distinct relevant tokens.
    pub fn relevant(&self) -> &[Token] {
        &self.relevant
    }

    pub fn relevant_mask(&self) -> u64 {
        self.mask
    }

    pub fn difficulty(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_relevant(&self, t: Token) -> bool {
        usize::from(t) < MAX_VOCAB && self.mask & (1u64 << t) != 0
    }

    /// Number of distinct relevant tokens in `tokens`.
    pub fn coverage(&self, tokens: &[Token]) -> usize {
        let seen = tokens
            .iter()
            .filter(|&&t| usize::from(t) < MAX_VOCAB)
            .fold(0u64, |m, &t| m | (1u64 << t));
        (seen & self.mask).count_ones() as usize
    }
}

/// A finite token sequence. `terminated` is set when generation emitted the
/// end marker (which is not stored in `tokens`); capped responses are not
/// terminated.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<Token>,
    pub terminated: bool,
}

impl Response {
    pub fn new(tokens: Vec<Token>, terminated: bool) -> Self {
        Self { tokens, terminated }
    }

    /// Response of `tokens` as the environment would produce it: terminated
    /// unless it reached `max_len`.
    pub fn from_tokens(tokens: Vec<Token>, max_len: usize) -> Self {
        let terminated = tokens.len() < max_len;
        Self { tokens, terminated }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        if self.tokens.len() > max_len {
            return Err(Error::InvalidArgument(format!(
                "response length {} exceeds max_len {max_len}",
                self.tokens.len()
            )));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| usize::from(t) >= vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token {t} outside vocabulary of {vocab_size}"
            )));
        }
        if !self.terminated && self.tokens.len() < max_len {
            return Err(Error::InvalidArgument(
                "unterminated response shorter than max_len".into(),
            ));
        }
        Ok(())
    }
}

/// A prompt, a response and its reward annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedExample {
    pub prompt: Prompt,
    pub response: Response,
    pub rewards: RewardVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthEnv {
    config: EnvConfig,
}

impl SynthEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    /// Number of reward objectives.
    pub fn k(&self) -> usize {
        2
    }

    /// `count` prompts with ids `first_id..first_id + count`.
    pub fn generate_prompts(&self, first_id: u64, count: usize, seed: u64) -> Result<Vec<Prompt>> {
        generate_prompts_with(
            first_id,
            count,
            self.config.vocab_size,
            self.config.max_difficulty,
            seed,
        )
    }

    /// Rewards as a function of distinct coverage `c` and length `len`.
    pub fn rewards_for_counts(&self, difficulty: usize, c: usize, len: usize) -> [f64; 2] {
        let cfg = &self.config;
        let l_max = cfg.max_len as f64;
        let cover = c.min(difficulty) as f64 / difficulty as f64;
        let helpful = match cfg.variant {
            Variant::Plain => 100.0 * cover,
            Variant::Budgeted => {
                let budget = cfg.budget as f64;
                let l = len as f64;
                let elaboration = if len <= cfg.budget {
                    let u = l / budget;
                    let a = cfg.elaboration_curvature;
                    (1.0 - a) * u + a * (1.0 - (1.0 - u) * (1.0 - u))
                } else {
                    let span = (l_max - budget).max(1.0);
                    1.0 - cfg.overrun_penalty * (l - budget) / span
                };
                let w = cfg.elaboration_weight;
                100.0 * ((1.0 - w) * cover + w * elaboration)
            }
        };
        [
            helpful.clamp(0.0, 100.0),
            (100.0 * len as f64 / l_max).clamp(0.0, 100.0),
        ]
    }

    /// Ground-truth `<helpfulness, verbosity>` in `[0, 100]²`.
    pub fn true_rewards(&self, x: &Prompt, y: &Response) -> RewardVector {
        let [r1, r2] = self.rewards_for_counts(x.difficulty(), x.coverage(&y.tokens), y.len());
        RewardVector::from_array([r1, r2])
    }

    /// Every achievable `(rewards, coverage, length)` class for `x`.
    fn achievable(&self, x: &Prompt) -> Result<Vec<([f64; 2], usize, usize)>> {
        let d = x.difficulty();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "prompt must have at least one relevant token".into(),
            ));
        }
        let l_max = self.config.max_len;
        let classes: u64 = (0..=l_max).map(|l| l.min(d) as u64 + 1).sum();
        if classes > ENUMERATION_CAP {
            return Err(Error::EnumerationCap {
                classes,
                cap: ENUMERATION_CAP,
            });
        }
        let has_filler = (0..self.config.vocab_size as Token).any(|t| !x.is_relevant(t));
        let mut out = Vec::new();
        for len in 0..=l_max {
            for c in 0..=len.min(d) {
                // Padding needs a non-relevant token or something already covered.
                if c < len && c == 0 && !has_filler {
                    continue;
                }
                out.push((self.rewards_for_counts(d, c, len), c, len));
            }
        }
        Ok(out)
    }

    fn witness(&self, x: &Prompt, c: usize, len: usize) -> Response {
        let mut tokens: Vec<Token> = x.relevant()[..c].to_vec();
        let pad = (0..self.config.vocab_size as Token)
            .find(|&t| !x.is_relevant(t))
            .unwrap_or(x.relevant()[0]);
        tokens.resize(len, pad);
        Response::from_tokens(tokens, self.config.max_len)
    }

    /// Exact Pareto front of achievable reward vectors for `x`, each with a
    /// witness response, ordered by decreasing helpfulness.
    pub fn enumerate_front(&self, x: &Prompt) -> Result<Vec<(RewardVector, Response)>> {
        let candidates = self.achievable(x)?;
        let mut front: Vec<([f64; 2], usize, usize)> = Vec::new();
        for (i, &(r, c, len)) in candidates.iter().enumerate() {
            let dominated = candidates.iter().any(|(o, _, _)| dominates2(o, &r));
            let duplicate = candidates[..i].iter().any(|(o, _, _)| *o == r);
            if !dominated && !duplicate {
                front.push((r, c, len));
            }
        }
        front.sort_by(|a, b| b.0[0].total_cmp(&a.0[0]).then(a.0[1].total_cmp(&b.0[1])));
        Ok(front
            .into_iter()
            .map(|(r, c, len)| (RewardVector::from_array(r), self.witness(x, c, len)))
            .collect())
    }

    /// Best achievable scalarized reward `max_y v·r(x, y)` with a witness.
    /// Unlike the front, this searches every achievable class, since a
    /// negative component rewards points the front discards.
    pub fn optimal_scalarized(
        &self,
        x: &Prompt,
        v: &[f64],
    ) -> Result<(f64, RewardVector, Response)> {
        let mut best: Option<(f64, [f64; 2], usize, usize)> = None;
        for (r, c, len) in self.achievable(x)? {
            let s = crate::preference::scalarize_slice(v, &r)?;
            if best.is_none_or(|(b, ..)| s > b) {
                best = Some((s, r, c, len));
            }
        }
        let (s, r, c, len) =
            best.ok_or_else(|| Error::InvalidArgument("nothing achievable".into()))?;
        Ok((s, RewardVector::from_array(r), self.witness(x, c, len)))
    }

    /// Heuristic response mixture standing in for human-written data:
    /// uniform length in `1..=max_len`, and each token relevant with a
    /// per-response probability drawn from a small menu.
    pub fn sample_heuristic_response<R: rand::Rng + ?Sized>(
        &self,
        x: &Prompt,
        rng: &mut R,
    ) -> Response {
        const RELEVANCE: [f64; 4] = [0.15, 0.4, 0.65, 0.9];
        let vocab = self.config.vocab_size as Token;
        let irrelevant: Vec<Token> = (0..vocab).filter(|&t| !x.is_relevant(t)).collect();
        let len = rng.gen_range(1..=self.config.max_len);
        let p = RELEVANCE[rng.gen_range(0..RELEVANCE.len())];
        let tokens = (0..len)
            .map(|_| {
                if irrelevant.is_empty() || rng.gen::<f64>() < p {
                    *x.relevant().choose(rng).expect("nonempty relevant set")
                } else {
                    *irrelevant.choose(rng).expect("nonempty")
                }
            })
            .collect();
        Response::from_tokens(tokens, self.config.max_len)
    }

    /// `responses_per_prompt` heuristic responses per prompt, labelled with
    /// [`Self::true_rewards`].
    pub fn make_annotated_dataset(
        &self,
        prompts: &[Prompt],
        responses_per_prompt: usize,
        seed: u64,
        exec: &Executor,
    ) -> Result<Vec<AnnotatedExample>> {
        if responses_per_prompt == 0 {
            return Err(Error::InvalidArgument(
                "responses_per_prompt must be at least 1".into(),
            ));
        }
        let per_prompt = exec.map(prompts, |x| {
            let mut rng = derive_rng(seed, "annotated", &[x.id()]);
            (0..responses_per_prompt)
                .map(|_| {
                    let response = self.sample_heuristic_response(x, &mut rng);
                    let rewards = self.true_rewards(x, &response);
                    AnnotatedExample {
                        prompt: x.clone(),
                        response,
                        rewards,
                    }
                })
                .collect::<Vec<_>>()
        });
        Ok(per_prompt.into_iter().flatten().collect())
    }
}

/// Prompts with relevant sets drawn without replacement and difficulty
/// uniform on `1..=min(max_difficulty, vocab_size)`.
pub fn generate_prompts_with(
    first_id: u64,
    count: usize,
    vocab_size: usize,
    max_difficulty: usize,
    seed: u64,
) -> Result<Vec<Prompt>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if !(4..=MAX_VOCAB).contains(&vocab_size) {
        return Err(Error::InvalidArgument(format!(
            "vocab_size must be in [4, {MAX_VOCAB}], got {vocab_size}"
        )));
    }
    let max_d = max_difficulty.min(vocab_size).max(1);
    let vocab: Vec<Token> = (0..vocab_size as Token).collect();
    (0..count as u64)
        .map(|i| {
            let id = first_id + i;
            let mut rng = derive_rng(seed, "prompt", &[id]);
            let d = rng.gen_range(1..=max_d);
            let relevant: Vec<Token> = vocab.choose_multiple(&mut rng, d).copied().collect();
            Prompt::new(id, relevant, vocab_size)
        })
        .collect()
}

/// `generate_prompts(count, vocab_size, seed)` with ids `0..count` and the
/// default difficulty range.
pub fn generate_prompts(count: usize, vocab_size: usize, seed: u64) -> Result<Vec<Prompt>> {
    generate_prompts_with(
        0,
        count,
        vocab_size,
        EnvConfig::default().max_difficulty,
        seed,
    )
}

pub(crate) fn dominates2(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] >= b[0] && a[1] >= b[1] && (a[0] > b[0] || a[1] > b[1])
}
