//! Noise contrastive estimation for the NN-grams network.
//!
//! Each data word `w` with history `h` is scored against `f` noise words
//! drawn from `P_noise(. | h)`. The classifier logit of a sample is
//! `NN(w, h) - ln f - ln P_noise(w | h)` and the per-example loss is
//! `-ln sigma(l_data) - sum_j ln(1 - sigma(l_noise_j))`.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenizedSentence, WordId};
use crate::error::{Error, Result};
use crate::model::{context_len, relu, FeatureVector, ForwardCache, InputMode, ModelConfig, ModelParams};
use crate::ngram::NGramStore;
use crate::noise::{NoiseProvider, NoiseRequest};

/// `p_data / (p_data + f * p_noise)`.
pub fn nce_posterior(p_data: f64, p_noise: f64, f: f64) -> Result<f64> {
    if !(p_data > 0.0 && p_noise > 0.0 && f > 0.0) {
        return Err(Error::Validation(format!(
            "NCE posterior needs positive inputs, got p_data={p_data} p_noise={p_noise} f={f}"
        )));
    }
    Ok(p_data / (p_data + f * p_noise))
}

/// `score - ln f - log_noise_prob`.
pub fn nce_logit(score: f64, f: f64, log_noise_prob: f64) -> f64 {
    score - f.ln() - log_noise_prob
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln sigma(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// A noise word's features and its noise log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFeatures {
    pub features: FeatureVector,
    pub log_noise_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub target: FeatureVector,
    /// `ln P_noise(w | h)` of the data word.
    pub target_log_noise_prob: f64,
    pub noise: Vec<NoiseFeatures>,
}

impl TrainingExample {
    pub fn validate(&self) -> Result<()> {
        if self.noise.is_empty() {
            return Err(Error::Validation("training example has no noise samples".into()));
        }
        let finite = self.target_log_noise_prob.is_finite()
            && self.noise.iter().all(|n| n.log_noise_prob.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite noise log-probability".into()));
        }
        let history = &self.target.word_ids[1..];
        if self.noise.iter().any(|n| &n.features.word_ids[1..] != history) {
            return Err(Error::Validation("noise samples must share the data history".into()));
        }
        Ok(())
    }

    fn noise_count(&self) -> f64 {
        self.noise.len() as f64
    }

    /// Loss and `dLoss/dscore` for the data sample and each noise sample,
    /// given their network scores.
    fn loss_terms(&self, target_score: f64, noise_scores: &[f64]) -> (f64, f64, Vec<f64>) {
        let f = self.noise_count();
        let l_data = nce_logit(target_score, f, self.target_log_noise_prob);
        let mut loss = softplus(-l_data);
        let d_data = sigmoid(l_data) - 1.0;
        let mut d_noise = Vec::with_capacity(noise_scores.len());
        for (n, &s) in self.noise.iter().zip(noise_scores) {
            let l = nce_logit(s, f, n.log_noise_prob);
            loss += softplus(l);
            d_noise.push(sigmoid(l));
        }
        (loss, d_data, d_noise)
    }
}

/// Mean NCE loss of `batch` under `params`, without gradients.
pub fn nce_loss(params: &ModelParams, batch: &[TrainingExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let target = params.score(&ex.target)?;
        let noise = ex
            .noise
            .iter()
            .map(|n| params.score(&n.features))
            .collect::<Result<Vec<_>>>()?;
        total += ex.loss_terms(target, &noise).0;
    }
    Ok(total / batch.len() as f64)
}

/// Mean NCE loss over `batch` and its exact gradient.
pub fn nce_loss_and_grad(params: &ModelParams, batch: &[TrainingExample]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let total = accumulate(params, batch, &mut grads)?;
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Like [`nce_loss_and_grad`], splitting the batch into `threads`
/// contiguous chunks. Chunk results are summed in chunk order, so the
/// output is reproducible for a fixed thread count.
pub fn nce_loss_and_grad_parallel(
    params: &ModelParams,
    batch: &[TrainingExample],
    threads: usize,
) -> Result<(f64, ModelParams)> {
    if threads <= 1 || batch.len() < 2 {
        return nce_loss_and_grad(params, batch);
    }
    let chunk = batch.len().div_ceil(threads);
    let partials: Vec<Result<(f64, ModelParams)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut g = params.zeros_like();
                    accumulate(params, part, &mut g).map(|loss| (loss, g))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for part in partials {
        let (loss, g) = part?;
        total += loss;
        grads.add_scaled(&g, 1.0)?;
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Sums per-example losses and gradients into `grads`.
fn accumulate(params: &ModelParams, batch: &[TrainingExample], grads: &mut ModelParams) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        let target = params.forward(&ex.target)?;
        let noise = ex
            .noise
            .iter()
            .map(|n| params.forward(&n.features))
            .collect::<Result<Vec<_>>>()?;
        let noise_scores: Vec<f64> = noise.iter().map(|c| c.score).collect();
        let (loss, d_target, d_noise) = ex.loss_terms(target.score, &noise_scores);
        total += loss;
        backward(params, &ex.target, &target, d_target, grads);
        for ((n, cache), d) in ex.noise.iter().zip(&noise).zip(d_noise) {
            backward(params, &n.features, cache, d, grads);
        }
    }
    Ok(total)
}

/// Adds `d_score * dscore/dtheta` for one forward pass to `grads`.
pub fn backward(params: &ModelParams, feat: &FeatureVector, cache: &ForwardCache, d_score: f64, grads: &mut ModelParams) {
    if d_score == 0.0 {
        return;
    }
    let out_w = params.output.weights.as_slice();
    grads.output.bias[0] += d_score;
    let g_out = grads.output.weights.as_mut_slice();
    for (g, &a) in g_out.iter_mut().zip(&cache.c_act) {
        *g += d_score * a;
    }

    let d_c: Vec<f64> = cache
        .c_pre
        .iter()
        .zip(out_w)
        .map(|(&pre, &w)| if pre > 0.0 { d_score * w } else { 0.0 })
        .collect();
    let d_merged = affine_backward(&params.relu_c, &mut grads.relu_c, &cache.merged, &d_c);

    let mut offset = 0;
    if let (Some(a), Some(ga)) = (&params.relu_a, &mut grads.relu_a) {
        let width = a.outputs();
        let d_a = relu_backward(&cache.a_pre, &d_merged[offset..offset + width]);
        offset += width;
        let d_embedded = affine_backward(a, ga, &cache.embedded, &d_a);
        if let Some(ge) = &mut grads.embeddings {
            let d = ge.cols();
            for (slot, &id) in feat.word_ids.iter().enumerate() {
                for (g, &v) in ge.row_mut(id as usize).iter_mut().zip(&d_embedded[slot * d..(slot + 1) * d]) {
                    *g += v;
                }
            }
        }
    }
    if let (Some(b), Some(gb)) = (&params.relu_b, &mut grads.relu_b) {
        let width = b.outputs();
        let d_b = relu_backward(&cache.b_pre, &d_merged[offset..offset + width]);
        affine_backward(b, gb, &feat.counts_rescaled, &d_b);
    }
}

fn relu_backward(pre: &[f64], upstream: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(upstream)
        .map(|(&p, &u)| if p > 0.0 { u } else { 0.0 })
        .collect()
}

/// Accumulates weight and bias gradients of `out = b + x W` and returns
/// the gradient with respect to `x`.
fn affine_backward(
    layer: &crate::model::Affine,
    grad: &mut crate::model::Affine,
    input: &[f64],
    d_out: &[f64],
) -> Vec<f64> {
    for (g, &d) in grad.bias.iter_mut().zip(d_out) {
        *g += d;
    }
    let mut d_in = vec![0.0; input.len()];
    for (i, &x) in input.iter().enumerate() {
        let w_row = layer.weights.row(i);
        let g_row = grad.weights.row_mut(i);
        let mut acc = 0.0;
        for ((g, &w), &d) in g_row.iter_mut().zip(w_row).zip(d_out) {
            *g += x * d;
            acc += w * d;
        }
        d_in[i] = acc;
    }
    d_in
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Per-parameter AdaGrad.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    accumulators: ModelParams,
    pub lr: f64,
    pub eps: f64,
}

impl AdaGrad {
    pub fn new(params: &ModelParams, lr: f64, eps: f64) -> Self {
        AdaGrad {
            accumulators: params.zeros_like(),
            lr,
            eps,
        }
    }

    pub fn accumulators(&self) -> &ModelParams {
        &self.accumulators
    }

    /// `acc += g^2; theta -= lr * g / (sqrt(acc) + eps)`. A non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if params.config() != grads.config() || params.config() != self.accumulators.config() {
            return Err(Error::Shape("AdaGrad parameter shapes differ".into()));
        }
        for (name, g) in grads.tensors() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        let lr = self.lr;
        let eps = self.eps;
        for (((_, theta), (_, acc)), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.accumulators.tensors_mut())
            .zip(grads.tensors())
        {
            for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
                if g == 0.0 {
                    continue;
                }
                *a += g * g;
                *t -= lr * g / (a.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Stop when the mean loss of the latest logging interval improved on the
/// one `window` intervals earlier by less than `min_improvement`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            window: 10,
            min_improvement: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Noise samples per data word.
    pub noise_samples: usize,
    pub max_steps: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub eps: f64,
    /// Steps between loss reports (and plateau checks).
    pub log_every: usize,
    pub clip_norm: Option<f64>,
    pub plateau: Option<Plateau>,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            batch_size: 200,
            noise_samples: 1,
            max_steps: 10_000,
            max_epochs: 1,
            seed: 0,
            eps: 1e-8,
            log_every: 100,
            clip_norm: Some(5.0),
            plateau: Some(Plateau::default()),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Validation("lr and eps must be positive".into()));
        }
        if self.batch_size == 0 || self.noise_samples == 0 || self.log_every == 0 || self.max_epochs == 0 {
            return Err(Error::Validation(
                "batch_size, noise_samples, log_every and max_epochs must be positive".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::Validation("threads must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Validation("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    /// Mean training loss over the interval ending at `step`.
    pub loss: f64,
    /// Data words processed so far.
    pub examples: usize,
    pub wall_ms: u128,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} loss={} examples={} wall_ms={}",
            self.step, self.loss, self.examples, self.wall_ms
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub steps: usize,
    pub skipped_tokens: usize,
    pub converged: bool,
}

/// Builds the training example for the word at `position` of `sentence`,
/// or `None` when the noise source has nothing for it.
pub fn build_example(
    sentence: &TokenizedSentence,
    sentence_index: usize,
    position: usize,
    store: &NGramStore,
    config: &ModelConfig,
    noise: &mut dyn NoiseProvider,
    f: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<TrainingExample>> {
    let ctx = sentence.context_at(position, context_len(config));
    let target = FeatureVector::from_context(store, &ctx, config)?;
    let request = NoiseRequest {
        sentence: sentence_index,
        position,
        target: ctx[0],
        history: &ctx[1..],
    };
    let Some(draw) = noise.draw(&request, f, rng)? else {
        return Ok(None);
    };
    let noise = draw
        .samples
        .iter()
        .map(|s| {
            Ok(NoiseFeatures {
                features: target.with_current_word(s.word, store, &ctx, config)?,
                log_noise_prob: s.log_prob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(TrainingExample {
        target,
        target_log_noise_prob: draw.target_log_prob,
        noise,
    }))
}

/// Trains a fresh model with NCE and AdaGrad.
///
/// Runs until `max_steps`, `max_epochs` or the plateau rule, whichever
/// comes first. Initialization, data order and noise draws all derive from
/// `config.seed`.
pub fn train(
    config: &TrainConfig,
    model_config: ModelConfig,
    sentences: &[TokenizedSentence],
    store: &NGramStore,
    noise: &mut dyn NoiseProvider,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    model_config.validate()?;
    if model_config.count_order > store.max_order() {
        return Err(Error::Validation(format!(
            "count order {} exceeds the store's order {}",
            model_config.count_order,
            store.max_order()
        )));
    }
    let mut positions: Vec<(usize, usize)> = sentences
        .iter()
        .enumerate()
        .flat_map(|(s, sent)| (1..sent.len()).map(move |p| (s, p)))
        .collect();
    if positions.is_empty() {
        return Err(Error::Validation("no training data".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed: u64 = rng.gen();
    let mut params = ModelParams::init(model_config, init_seed)?;
    let mut optimizer = AdaGrad::new(&params, config.lr, config.eps);
    let mut log = TrainLog::default();
    if config.max_steps == 0 {
        return Ok((params, log));
    }

    let started = Instant::now();
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;
    let mut examples_seen = 0usize;
    let mut eval_losses: Vec<f64> = Vec::new();

    'epochs: for _ in 0..config.max_epochs {
        positions.shuffle(&mut rng);
        for chunk in positions.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &(s, p) in chunk {
                match build_example(
                    &sentences[s],
                    s,
                    p,
                    store,
                    &model_config,
                    noise,
                    config.noise_samples,
                    &mut rng,
                )? {
                    Some(ex) => batch.push(ex),
                    None => log.skipped_tokens += 1,
                }
            }
            if batch.is_empty() {
                continue;
            }
            let (loss, mut grads) = nce_loss_and_grad_parallel(&params, &batch, config.threads)?;
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            optimizer.step(&mut params, &grads)?;
            log.steps += 1;
            examples_seen += batch.len();
            interval_loss += loss;
            interval_steps += 1;

            if log.steps % config.log_every == 0 {
                let entry = LogEntry {
                    step: log.steps,
                    loss: interval_loss / interval_steps as f64,
                    examples: examples_seen,
                    wall_ms: started.elapsed().as_millis(),
                };
                on_log(&entry);
                eval_losses.push(entry.loss);
                log.entries.push(entry);
                interval_loss = 0.0;
                interval_steps = 0;
                if let Some(rule) = config.plateau {
                    let n = eval_losses.len();
                    if n > rule.window && eval_losses[n - 1 - rule.window] - eval_losses[n - 1] < rule.min_improvement {
                        log.converged = true;
                        break 'epochs;
                    }
                }
            }
            if log.steps >= config.max_steps {
                break 'epochs;
            }
        }
    }
    if interval_steps > 0 {
        let entry = LogEntry {
            step: log.steps,
            loss: interval_loss / interval_steps as f64,
            examples: examples_seen,
            wall_ms: started.elapsed().as_millis(),
        };
        on_log(&entry);
        log.entries.push(entry);
    }
    Ok((params, log))
}

/// A small model configuration for gradient checking.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 6,
        embed_dim: 3,
        history: 2,
        count_order: 2,
        hidden_a: 5,
        hidden_b: 4,
        hidden_c: 4,
        input_mode: InputMode::Full,
    }
}

/// A random small configuration, reproducible from `seed`.
pub fn random_tiny_config(seed: u64) -> ModelConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let input_mode = match rng.gen_range(0..4) {
        0 => InputMode::EmbeddingsOnly,
        1 => InputMode::CountsOnly,
        _ => InputMode::Full,
    };
    ModelConfig {
        vocab_size: rng.gen_range(3..=8),
        embed_dim: rng.gen_range(1..=4),
        history: rng.gen_range(1..=3),
        count_order: rng.gen_range(1..=3),
        hidden_a: rng.gen_range(1..=6),
        hidden_b: rng.gen_range(1..=6),
        hidden_c: rng.gen_range(1..=6),
        input_mode,
    }
}

/// A random batch for `config`: random words, counts and noise log-probs.
pub fn random_batch(config: &ModelConfig, examples: usize, noise: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
    let v = config.vocab_size as WordId;
    let feat = |rng: &mut ChaCha8Rng, history: &[WordId]| {
        let mut ids = vec![rng.gen_range(0..v)];
        ids.extend_from_slice(history);
        let counts = (0..config.count_input())
            .map(|_| if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..200) })
            .collect();
        FeatureVector::new(ids, counts)
    };
    (0..examples)
        .map(|_| {
            let history: Vec<WordId> = (0..config.history).map(|_| rng.gen_range(0..v)).collect();
            let target = feat(rng, &history);
            let noise = (0..noise)
                .map(|_| NoiseFeatures {
                    features: feat(rng, &history),
                    log_noise_prob: rng.gen_range(-6.0..-0.05),
                })
                .collect();
            TrainingExample {
                target,
                target_log_noise_prob: rng.gen_range(-6.0..-0.05),
                noise,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU.
    pub skipped: usize,
}

/// Compares analytic gradients with central differences on a random model
/// and batch. Relative error is `|a - n| / max(|a|, |n|)`, or the absolute
/// error when `|a| < 1e-8`.
pub fn gradient_check(config: &ModelConfig, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(*config, rng.gen())?;
    for (name, t) in params.tensors_mut() {
        if name.ends_with("bias") {
            for v in t.iter_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
    let batch = random_batch(config, 3, 2, &mut rng);
    let (_, analytic) = nce_loss_and_grad(&params, &batch)?;
    let base_pattern = activation_pattern(&params, &batch)?;

    let analytic_flat: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (ti, grads) in analytic_flat.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = params.tensors()[ti].1[i];
            let mut eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
                params.tensors_mut()[ti].1[i] = original + delta;
                let loss = nce_loss(&params, &batch)?;
                let pattern = activation_pattern(&params, &batch)?;
                Ok((loss, pattern))
            };
            let (plus, p_plus) = eval(epsilon)?;
            let (minus, p_minus) = eval(-epsilon)?;
            params.tensors_mut()[ti].1[i] = original;
            if p_plus != base_pattern || p_minus != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = if a.abs() < 1e-8 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Sign pattern of every ReLU pre-activation over a batch.
fn activation_pattern(params: &ModelParams, batch: &[TrainingExample]) -> Result<Vec<bool>> {
    let mut bits = Vec::new();
    for ex in batch {
        for feat in std::iter::once(&ex.target).chain(ex.noise.iter().map(|n| &n.features)) {
            let c = params.forward(feat)?;
            bits.extend(c.a_pre.iter().chain(&c.b_pre).chain(&c.c_pre).map(|&v| relu(v) > 0.0));
        }
    }
    Ok(bits)
}
