//! Synthetic math-task environment.
//!
//! Questions carry a difficulty on the `[3, 9]` scale and map to a bucket.
//! Each bucket offers a ladder of response templates whose lengths are
//! geometrically spaced around the bucket's optimal solution length. Templates
//! longer than the plateau buy no accuracy and accumulate repetition and
//! irrelevant steps. A rubric scorer stands in for a learned conciseness model,
//! and the correlation knob `correlation` moves accuracy toward (or away from)
//! the concise templates, which sets the sign of `Cov(R°, c)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{GroupRollout, Sample};
use crate::policy::{sample_categorical, PolicyParams};
use crate::reward::ConcisenessScore;
use crate::rng::{stream, Purpose, Stream};

pub const MIN_DIFFICULTY: f64 = 3.0;
pub const MAX_DIFFICULTY: f64 = 9.0;
/// Anchor difficulty for the optimal-length line.
pub const ANCHOR_DIFFICULTY: f64 = 4.25;

/// Rubric coefficients. Each unit of repetition or irrelevance, and each
/// `length_band` of excess length past `length_grace`, costs one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RubricConfig {
    pub repetition_penalty: f64,
    pub irrelevant_penalty: f64,
    pub length_grace: f64,
    pub length_band: f64,
    pub length_band_penalty: f64,
}

impl Default for RubricConfig {
    fn default() -> Self {
        Self {
            repetition_penalty: 0.1,
            irrelevant_penalty: 0.1,
            length_grace: 0.05,
            length_band: 0.25,
            length_band_penalty: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_buckets: usize,
    /// Genuine templates per bucket (excludes the short-wrong template).
    pub templates_per_bucket: usize,
    /// Optimal solution length at the anchor difficulty, in tokens.
    pub base_length: f64,
    /// Relative growth of the optimal length per difficulty point.
    pub difficulty_length_slope: f64,
    /// Sign and strength of the accuracy/conciseness coupling, in `[-1, 1]`.
    pub correlation: f64,
    /// Scale applied to `correlation` when adjusting template accuracy.
    pub correlation_gain: f64,
    pub length_noise_sd: f64,
    /// Adds a near-empty, always-wrong response (a bare guessed answer).
    pub short_wrong_template: bool,
    pub short_wrong_length: u32,
    /// Hard cap on realized lengths.
    pub max_length_tokens: u32,
    /// Plateau accuracy at the easiest and hardest difficulty.
    pub accuracy_easy: f64,
    pub accuracy_hard: f64,
    /// Accuracy lost by the shortest genuine template relative to the plateau;
    /// interpolated linearly up to the plateau.
    pub underthinking_drop: f64,
    /// Answer-check repetitions every genuine derivation carries.
    pub verification_units: u32,
    /// Initial policy's logit slope toward longer templates.
    pub initial_verbosity: f64,
    pub rubric: RubricConfig,
    pub seed_salt: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_buckets: 4,
            templates_per_bucket: 8,
            base_length: 100.0,
            difficulty_length_slope: 0.06,
            correlation: 0.5,
            correlation_gain: 0.3,
            length_noise_sd: 6.0,
            short_wrong_template: false,
            short_wrong_length: 5,
            max_length_tokens: 512,
            accuracy_easy: 0.85,
            accuracy_hard: 0.35,
            underthinking_drop: 0.0,
            verification_units: 0,
            initial_verbosity: 0.0,
            rubric: RubricConfig::default(),
            seed_salt: 0,
        }
    }
}

impl EnvConfig {
    pub fn with_correlation(mut self, rho: f64) -> Self {
        self.correlation = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid_config(m));
        if self.num_buckets == 0 {
            return bad("env.num_buckets must be >= 1".into());
        }
        if self.templates_per_bucket < 3 {
            return bad("env.templates_per_bucket must be >= 3".into());
        }
        if !(self.base_length.is_finite() && self.base_length > 0.0) {
            return bad(format!("env.base_length must be > 0, got {}", self.base_length));
        }
        // Optimal length must stay positive over the whole difficulty range.
        let lo = 1.0 + self.difficulty_length_slope * (MIN_DIFFICULTY - ANCHOR_DIFFICULTY);
        let hi = 1.0 + self.difficulty_length_slope * (MAX_DIFFICULTY - ANCHOR_DIFFICULTY);
        if !(self.difficulty_length_slope.is_finite() && lo > 0.0 && hi > 0.0) {
            return bad(format!(
                "env.difficulty_length_slope {} makes the optimal length non-positive",
                self.difficulty_length_slope
            ));
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return bad(format!("env.correlation must be in [-1, 1], got {}", self.correlation));
        }
        if !(self.correlation_gain.is_finite() && self.correlation_gain >= 0.0) {
            return bad("env.correlation_gain must be >= 0".into());
        }
        if !(self.length_noise_sd.is_finite() && self.length_noise_sd >= 0.0) {
            return bad("env.length_noise_sd must be >= 0".into());
        }
        for (name, v) in [
            ("accuracy_easy", self.accuracy_easy),
            ("accuracy_hard", self.accuracy_hard),
            ("underthinking_drop", self.underthinking_drop),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("env.{name} must be in [0, 1], got {v}"));
            }
        }
        if self.short_wrong_length == 0 || self.max_length_tokens == 0 {
            return bad("env lengths must be >= 1".into());
        }
        if !self.initial_verbosity.is_finite() {
            return bad("env.initial_verbosity must be finite".into());
        }
        let r = &self.rubric;
        if !(r.length_band > 0.0 && r.length_grace >= 0.0) {
            return bad("env.rubric.length_band must be > 0 and length_grace >= 0".into());
        }
        Ok(())
    }

    pub fn bucket_width(&self) -> f64 {
        (MAX_DIFFICULTY - MIN_DIFFICULTY) / self.num_buckets as f64
    }

    pub fn bucket_of(&self, difficulty: f64) -> usize {
        let b = ((difficulty - MIN_DIFFICULTY) / self.bucket_width()).floor() as usize;
        b.min(self.num_buckets - 1)
    }

    pub fn bucket_center(&self, bucket: usize) -> f64 {
        MIN_DIFFICULTY + (bucket as f64 + 0.5) * self.bucket_width()
    }
}

/// Optimal solution length `L0 · (1 + slope · (d − 4.25))`.
pub fn optimal_length(difficulty: f64, config: &EnvConfig) -> Result<f64> {
    if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&difficulty) {
        return Err(Error::invalid_input(format!(
            "difficulty must be in [3, 9], got {difficulty}"
        )));
    }
    Ok(config.base_length
        * (1.0 + config.difficulty_length_slope * (difficulty - ANCHOR_DIFFICULTY)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub difficulty: f64,
    pub bucket: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcisenessFeatures {
    pub repetition_units: u32,
    pub irrelevant_steps: u32,
    pub length_tokens: u32,
    pub optimal_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub index: usize,
    pub length_tokens: u32,
    /// Accuracy before the correlation adjustment.
    pub base_p_correct: f64,
    /// Accuracy actually used when sampling.
    pub p_correct: f64,
    pub repetition_units: u32,
    pub irrelevant_steps: u32,
    /// At or below the plateau.
    pub concise: bool,
    pub short_wrong: bool,
}

/// Rubric scorer standing in for the conciseness reward model.
pub fn conciseness_score(features: &ConcisenessFeatures) -> ConcisenessScore {
    conciseness_score_with(features, &RubricConfig::default())
}

pub fn conciseness_score_with(
    features: &ConcisenessFeatures,
    rubric: &RubricConfig,
) -> ConcisenessScore {
    let ratio = f64::from(features.length_tokens) / features.optimal_length;
    // Tiny slack so ratios that land exactly on a band edge are not floored below it.
    let excess = (ratio - 1.0 - rubric.length_grace).max(0.0);
    let bands = (excess / rubric.length_band + 1e-9).floor();
    let raw = 1.0
        - rubric.repetition_penalty * f64::from(features.repetition_units)
        - rubric.irrelevant_penalty * f64::from(features.irrelevant_steps)
        - rubric.length_band_penalty * bands;
    ConcisenessScore::snap(raw.clamp(0.1, 1.0)).unwrap_or(ConcisenessScore::MIN)
}

/// Materialized environment: template ladders for every bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    config: EnvConfig,
    templates: Vec<Vec<ResponseTemplate>>,
    plateau: usize,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let k = config.templates_per_bucket;
        let offset = usize::from(config.short_wrong_template);
        let ratio = |i: usize| 0.25 * 16f64.powf(i as f64 / (k - 1) as f64);
        // Template closest to the optimal length (absolute distance, ties to the shorter).
        let plateau = (0..k)
            .min_by(|&a, &b| {
                (ratio(a) - 1.0)
                    .abs()
                    .partial_cmp(&(ratio(b) - 1.0).abs())
                    .unwrap()
            })
            .unwrap_or(0);
        let adj = config.correlation * config.correlation_gain;

        let mut templates = Vec::with_capacity(config.num_buckets);
        for b in 0..config.num_buckets {
            let center = config.bucket_center(b);
            let l_star = optimal_length(center, &config)?;
            let frac = (center - MIN_DIFFICULTY) / (MAX_DIFFICULTY - MIN_DIFFICULTY);
            let plateau_p =
                config.accuracy_easy + (config.accuracy_hard - config.accuracy_easy) * frac;

            let mut row = Vec::with_capacity(k + offset);
            if config.short_wrong_template {
                row.push(ResponseTemplate {
                    index: 0,
                    length_tokens: config.short_wrong_length.min(config.max_length_tokens),
                    base_p_correct: 0.0,
                    p_correct: 0.0,
                    repetition_units: 0,
                    irrelevant_steps: 0,
                    concise: true,
                    short_wrong: true,
                });
            }
            let mut prev_len = row.last().map_or(0, |t: &ResponseTemplate| t.length_tokens);
            for i in 0..k {
                let mut len = (l_star * ratio(i)).round().max(1.0) as u32;
                if len <= prev_len {
                    len = prev_len + 1;
                }
                prev_len = len;
                let concise = i <= plateau;
                let ramp = if i < plateau && plateau > 0 {
                    1.0 - config.underthinking_drop * (plateau - i) as f64 / plateau as f64
                } else {
                    1.0
                };
                let base_p = plateau_p * ramp;
                let scale = if concise { 1.0 + adj } else { 1.0 - adj };
                let extra = i.saturating_sub(plateau) as u32;
                row.push(ResponseTemplate {
                    index: i + offset,
                    length_tokens: len,
                    base_p_correct: base_p,
                    p_correct: (base_p * scale).clamp(0.0, 1.0),
                    repetition_units: config.verification_units + extra,
                    irrelevant_steps: extra / 2,
                    concise,
                    short_wrong: false,
                });
            }
            templates.push(row);
        }
        Ok(Self {
            config,
            templates,
            plateau: plateau + offset,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_buckets(&self) -> usize {
        self.config.num_buckets
    }

    pub fn num_templates(&self) -> usize {
        self.templates[0].len()
    }

    /// Index of the plateau template (counting the short-wrong template when present).
    pub fn plateau_index(&self) -> usize {
        self.plateau
    }

    pub fn templates(&self, bucket: usize) -> &[ResponseTemplate] {
        &self.templates[bucket]
    }

    pub fn uniform_policy(&self) -> PolicyParams {
        PolicyParams::uniform(self.num_buckets(), self.num_templates())
    }

    /// Starting policy: uniform when `initial_verbosity` is zero, otherwise
    /// tilted toward longer genuine templates. The tilt is centred on zero, so
    /// the short-wrong template keeps the logit of a mid-ladder template.
    pub fn initial_policy(&self) -> PolicyParams {
        let mut p = self.uniform_policy();
        let v = self.config.initial_verbosity;
        if v != 0.0 {
            let k = self.config.templates_per_bucket;
            let offset = self.num_templates() - k;
            for b in 0..self.num_buckets() {
                for i in 0..k {
                    *p.logits.get_mut(b, i + offset) = v * (i as f64 / (k - 1) as f64 - 0.5);
                }
            }
        }
        p
    }

    fn check_policy(&self, policy: &PolicyParams) -> Result<()> {
        if policy.num_buckets() != self.num_buckets() || policy.num_templates() != self.num_templates()
        {
            return Err(Error::invalid_input(format!(
                "policy shape {}x{} does not match environment {}x{}",
                policy.num_buckets(),
                policy.num_templates(),
                self.num_buckets(),
                self.num_templates()
            )));
        }
        Ok(())
    }

    pub fn sample_question<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> Question {
        let difficulty = rng.gen_range(MIN_DIFFICULTY..=MAX_DIFFICULTY);
        Question {
            id,
            difficulty,
            bucket: self.config.bucket_of(difficulty),
        }
    }

    /// Draws `group_size` responses to `question` from `policy`.
    pub fn rollout_group<R: Rng + ?Sized>(
        &self,
        policy: &PolicyParams,
        question: &Question,
        group_size: usize,
        rng: &mut R,
    ) -> Result<GroupRollout> {
        self.check_policy(policy)?;
        let probs = policy.probs(question.bucket);
        self.rollout_with_probs(&probs, question, group_size, rng)
    }

    /// Same as [`Environment::rollout_group`] with the bucket's probabilities precomputed.
    pub fn rollout_with_probs<R: Rng + ?Sized>(
        &self,
        probs: &[f64],
        question: &Question,
        group_size: usize,
        rng: &mut R,
    ) -> Result<GroupRollout> {
        if group_size < 2 {
            return Err(Error::invalid_input(format!(
                "group size must be >= 2, got {group_size}"
            )));
        }
        let row = self.templates.get(question.bucket).ok_or_else(|| {
            Error::Internal(format!("bucket {} out of range", question.bucket))
        })?;
        let l_star = optimal_length(question.difficulty, &self.config)?;
        let noise = Normal::new(0.0, self.config.length_noise_sd)
            .map_err(|e| Error::Internal(e.to_string()))?;
        let samples = (0..group_size)
            .map(|_| {
                let idx = sample_categorical(probs, rng);
                let t = &row[idx];
                let correct = rng.gen::<f64>() < t.p_correct;
                let jitter = if self.config.length_noise_sd > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
                let length = (f64::from(t.length_tokens) + jitter)
                    .round()
                    .clamp(1.0, f64::from(self.config.max_length_tokens))
                    as u32;
                let features = ConcisenessFeatures {
                    repetition_units: t.repetition_units,
                    irrelevant_steps: t.irrelevant_steps,
                    length_tokens: length,
                    optimal_length: l_star,
                };
                Sample {
                    template_index: idx,
                    old_prob: probs[idx],
                    correct,
                    length,
                    features,
                    score: conciseness_score_with(&features, &self.config.rubric),
                }
            })
            .collect();
        Ok(GroupRollout {
            question_id: question.id,
            bucket: question.bucket,
            samples,
        })
    }

    /// Expected single-sample accuracy of `policy` under uniform difficulty.
    pub fn expected_accuracy(&self, policy: &PolicyParams) -> f64 {
        let per_bucket: f64 = (0..self.num_buckets())
            .map(|b| {
                policy
                    .probs(b)
                    .iter()
                    .zip(&self.templates[b])
                    .map(|(p, t)| p * t.p_correct)
                    .sum::<f64>()
            })
            .sum();
        per_bucket / self.num_buckets() as f64
    }

    /// Monte-Carlo estimate of `Cov(R°, c)` over single responses from `policy`.
    pub fn covariance(
        &self,
        policy: &PolicyParams,
        n_samples: usize,
        seed: u64,
    ) -> Result<CovarianceEstimate> {
        self.check_policy(policy)?;
        if n_samples < 2 {
            return Err(Error::invalid_input("covariance needs at least 2 samples"));
        }
        let probs = policy.prob_table();
        let seed = crate::rng::mix(seed, &[self.config.seed_salt]);
        let mut rng: Stream = stream(seed, Purpose::Covariance, 0, 0);
        let mut xs = Vec::with_capacity(n_samples);
        let mut ys = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let q = self.sample_question(i as u64, &mut rng);
            let g = self.rollout_with_probs(probs.row(q.bucket), &q, 2, &mut rng)?;
            let s = &g.samples[0];
            xs.push(if s.correct { 1.0 } else { 0.0 });
            ys.push(s.score.value());
        }
        Ok(CovarianceEstimate::from_pairs(&xs, &ys))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub cov: f64,
    pub std_error: f64,
    pub n: usize,
}

impl CovarianceEstimate {
    pub fn from_pairs(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
        let cov = prods.iter().sum::<f64>() / n;
        let var = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            cov,
            std_error: (var / n).sqrt(),
            n: xs.len(),
        }
    }

    /// One-sided z statistic against zero.
    pub fn z(&self) -> f64 {
        if self.std_error > 0.0 {
            self.cov / self.std_error
        } else {
            0.0
        }
    }
}

/// Convenience wrapper: Monte-Carlo `Cov(R°, c)` for a config and policy.
pub fn env_covariance(
    config: &EnvConfig,
    policy: &PolicyParams,
    n_samples: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    if n_samples < 1000 {
        return Err(Error::invalid_input(format!(
            "covariance estimate needs n_samples >= 1000, got {n_samples}"
        )));
    }
    Environment::new(*config)?.covariance(policy, n_samples, seed)
}
