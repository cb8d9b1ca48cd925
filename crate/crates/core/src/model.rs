//! The NN-grams network.
//!
//! ```text
//!   E[w_i], E[w_i-1], ..., E[w_i-K]  --concat-->  ReLU-A  --+
//!                                                           +--concat--> ReLU-C --> affine --> score
//!   rescaled (K+1) x N count matrix  --flatten-> ReLU-B  --+
//! ```
//!
//! The score is an unnormalized log probability of the current word given
//! its history and counts; there is no softmax.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::ngram::NGramStore;

/// Multiplier applied to the log of a positive count.
pub const RESCALE_FACTOR: f64 = 0.1;
/// Rescaled value of a zero count.
pub const RESCALE_ZERO: f64 = -1.0;
/// Base of the logarithm used by [`rescale_count`].
pub const RESCALE_LOG_BASE: f64 = std::f64::consts::E;

/// `0.1 * ln(c)` for positive counts, `-1` for zero.
pub fn rescale_count(count: u64) -> f64 {
    if count == 0 {
        RESCALE_ZERO
    } else {
        RESCALE_FACTOR * (count as f64).ln() / RESCALE_LOG_BASE.ln()
    }
}

/// Which input branches feed ReLU-C.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Full,
    EmbeddingsOnly,
    CountsOnly,
}

impl InputMode {
    pub fn uses_embeddings(self) -> bool {
        !matches!(self, InputMode::CountsOnly)
    }

    pub fn uses_counts(self) -> bool {
        !matches!(self, InputMode::EmbeddingsOnly)
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Full => "full",
            InputMode::EmbeddingsOnly => "embeddings_only",
            InputMode::CountsOnly => "counts_only",
        })
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InputMode::Full),
            "embeddings_only" => Ok(InputMode::EmbeddingsOnly),
            "counts_only" => Ok(InputMode::CountsOnly),
            other => Err(Error::Validation(format!("unknown input mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Number of history words K.
    pub history: usize,
    /// Count order N.
    pub count_order: usize,
    pub hidden_a: usize,
    pub hidden_b: usize,
    pub hidden_c: usize,
    pub input_mode: InputMode,
}

impl ModelConfig {
    /// The large-vocabulary configuration: 2M words, 256-dim embeddings,
    /// K=9, N=6, ReLU widths 1024/256/1024.
    pub fn large() -> Self {
        ModelConfig {
            vocab_size: 2_000_000,
            embed_dim: 256,
            history: 9,
            count_order: 6,
            hidden_a: 1024,
            hidden_b: 256,
            hidden_c: 1024,
            input_mode: InputMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("history", self.history),
            ("count_order", self.count_order),
            ("hidden_a", self.hidden_a),
            ("hidden_b", self.hidden_b),
            ("hidden_c", self.hidden_c),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Validation(format!("model dimension {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of word slots, current word included.
    pub fn slots(&self) -> usize {
        self.history + 1
    }

    pub fn embedding_input(&self) -> usize {
        self.slots() * self.embed_dim
    }

    pub fn count_input(&self) -> usize {
        self.slots() * self.count_order
    }

    /// Input width of ReLU-C for the configured mode.
    pub fn merged_input(&self) -> usize {
        let mut n = 0;
        if self.input_mode.uses_embeddings() {
            n += self.hidden_a;
        }
        if self.input_mode.uses_counts() {
            n += self.hidden_b;
        }
        n
    }
}

/// Exact number of weights and biases for `config`.
pub fn parameter_count(config: &ModelConfig) -> u64 {
    let affine = |inp: usize, out: usize| (inp * out + out) as u64;
    let mut total = 0u64;
    if config.input_mode.uses_embeddings() {
        total += (config.vocab_size * config.embed_dim) as u64;
        total += affine(config.embedding_input(), config.hidden_a);
    }
    if config.input_mode.uses_counts() {
        total += affine(config.count_input(), config.hidden_b);
    }
    total += affine(config.merged_input(), config.hidden_c);
    total += affine(config.hidden_c, 1);
    total
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// An affine map stored input-major: `weights` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Affine {
            weights: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Affine {
            weights: glorot_matrix(inputs, outputs, rng),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    /// `out = bias + x * W`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

fn glorot_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix { rows, cols, data }
}

/// Glorot bound `sqrt(6 / (fan_in + fan_out))` of a matrix.
pub fn init_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    /// `V x d`; absent in counts-only mode.
    pub embeddings: Option<Matrix>,
    pub relu_a: Option<Affine>,
    pub relu_b: Option<Affine>,
    pub relu_c: Affine,
    pub output: Affine,
}

impl ModelParams {
    /// Glorot-uniform weights and embeddings, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (embeddings, relu_a) = if config.input_mode.uses_embeddings() {
            (
                Some(glorot_matrix(config.vocab_size, config.embed_dim, &mut rng)),
                Some(Affine::glorot(config.embedding_input(), config.hidden_a, &mut rng)),
            )
        } else {
            (None, None)
        };
        let relu_b = config
            .input_mode
            .uses_counts()
            .then(|| Affine::glorot(config.count_input(), config.hidden_b, &mut rng));
        let relu_c = Affine::glorot(config.merged_input(), config.hidden_c, &mut rng);
        let output = Affine::glorot(config.hidden_c, 1, &mut rng);
        Ok(ModelParams {
            config,
            embeddings,
            relu_a,
            relu_b,
            relu_c,
            output,
        })
    }

    /// All-zero parameters; also used as a gradient accumulator.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let emb = config.input_mode.uses_embeddings();
        Ok(ModelParams {
            config,
            embeddings: emb.then(|| Matrix::zeros(config.vocab_size, config.embed_dim)),
            relu_a: emb.then(|| Affine::zeros(config.embedding_input(), config.hidden_a)),
            relu_b: config
                .input_mode
                .uses_counts()
                .then(|| Affine::zeros(config.count_input(), config.hidden_b)),
            relu_c: Affine::zeros(config.merged_input(), config.hidden_c),
            output: Affine::zeros(config.hidden_c, 1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.config).expect("config was validated at construction")
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every parameter tensor with a stable name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::new();
        if let Some(e) = &self.embeddings {
            out.push(("embeddings", e.as_slice()));
        }
        if let Some(a) = &self.relu_a {
            out.push(("relu_a.weights", a.weights.as_slice()));
            out.push(("relu_a.bias", &a.bias));
        }
        if let Some(b) = &self.relu_b {
            out.push(("relu_b.weights", b.weights.as_slice()));
            out.push(("relu_b.bias", &b.bias));
        }
        out.push(("relu_c.weights", self.relu_c.weights.as_slice()));
        out.push(("relu_c.bias", &self.relu_c.bias));
        out.push(("output.weights", self.output.weights.as_slice()));
        out.push(("output.bias", &self.output.bias));
        out
    }

    /// Mutable view of every tensor, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        if let Some(e) = &mut self.embeddings {
            out.push(("embeddings", e.as_mut_slice()));
        }
        if let Some(a) = &mut self.relu_a {
            out.push(("relu_a.weights", a.weights.as_mut_slice()));
            out.push(("relu_a.bias", &mut a.bias));
        }
        if let Some(b) = &mut self.relu_b {
            out.push(("relu_b.weights", b.weights.as_mut_slice()));
            out.push(("relu_b.bias", &mut b.bias));
        }
        out.push(("relu_c.weights", self.relu_c.weights.as_mut_slice()));
        out.push(("relu_c.bias", &mut self.relu_c.bias));
        out.push(("output.weights", self.output.weights.as_mut_slice()));
        out.push(("output.bias", &mut self.output.bias));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Shape("parameter sets have different configs".into()));
        }
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Scores one feature vector.
    pub fn score(&self, feat: &FeatureVector) -> Result<f64> {
        Ok(self.forward(feat)?.score)
    }

    /// Forward pass keeping every intermediate needed for backprop.
    pub fn forward(&self, feat: &FeatureVector) -> Result<ForwardCache> {
        self.check_features(feat)?;
        let cfg = &self.config;

        let (embedded, a_pre) = match (&self.embeddings, &self.relu_a) {
            (Some(emb), Some(a)) => {
                let mut x = Vec::with_capacity(cfg.embedding_input());
                for &id in &feat.word_ids {
                    x.extend_from_slice(emb.row(id as usize));
                }
                let pre = a.apply(&x);
                (x, pre)
            }
            _ => (Vec::new(), Vec::new()),
        };
        let b_pre = match &self.relu_b {
            Some(b) => b.apply(&feat.counts_rescaled),
            None => Vec::new(),
        };

        let mut merged: Vec<f64> = Vec::with_capacity(cfg.merged_input());
        merged.extend(a_pre.iter().map(|&v| relu(v)));
        merged.extend(b_pre.iter().map(|&v| relu(v)));
        let c_pre = self.relu_c.apply(&merged);
        let c_act: Vec<f64> = c_pre.iter().map(|&v| relu(v)).collect();
        let score = self.output.apply(&c_act)[0];

        Ok(ForwardCache {
            embedded,
            a_pre,
            b_pre,
            merged,
            c_pre,
            c_act,
            score,
        })
    }

    fn check_features(&self, feat: &FeatureVector) -> Result<()> {
        let cfg = &self.config;
        if feat.word_ids.len() != cfg.slots() {
            return Err(Error::Shape(format!(
                "{} word ids for K+1 = {}",
                feat.word_ids.len(),
                cfg.slots()
            )));
        }
        if feat.counts_rescaled.len() != cfg.count_input() {
            return Err(Error::Shape(format!(
                "{} count features for (K+1)N = {}",
                feat.counts_rescaled.len(),
                cfg.count_input()
            )));
        }
        if let Some(&id) = feat.word_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                size: cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// The `k` nearest embedding rows to `word` by Euclidean distance,
    /// ascending, ties broken by id, excluding `word` itself.
    pub fn nearest_neighbors(&self, word: WordId, k: usize) -> Result<Vec<(WordId, f64)>> {
        let emb = self
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::Validation("model has no embedding table".into()))?;
        if word as usize >= emb.rows() {
            return Err(Error::IdOutOfRange {
                id: word,
                size: emb.rows(),
            });
        }
        if k >= emb.rows() {
            return Err(Error::Validation(format!(
                "k = {k} must be below the vocabulary size {}",
                emb.rows()
            )));
        }
        let query = emb.row(word as usize);
        let mut dists: Vec<(WordId, f64)> = (0..emb.rows())
            .filter(|&r| r != word as usize)
            .map(|r| {
                let d: f64 = emb
                    .row(r)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (r as WordId, d.sqrt())
            })
            .collect();
        dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        dists.truncate(k);
        Ok(dists)
    }

    /// Writes the binary checkpoint.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io(Path::new("<checkpoint>"), e);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(self.header_text().as_bytes()).map_err(io)?;
        for (rows, cols, data) in self.shaped_tensors() {
            w.write_all(&(rows as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(cols as u64).to_le_bytes()).map_err(io)?;
            for v in data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io(Path::new("<checkpoint>"), e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| Error::Parse("not an NN-grams checkpoint (bad magic)".into()))?;
        let end_marker = b"end\n";
        let header_len = rest
            .windows(end_marker.len())
            .position(|w| w == end_marker)
            .ok_or_else(|| Error::Parse("checkpoint header not terminated".into()))?
            + end_marker.len();
        let header = std::str::from_utf8(&rest[..header_len])
            .map_err(|_| Error::Parse("checkpoint header is not UTF-8".into()))?;
        let config = parse_header(header)?;
        let mut params = ModelParams::zeros(config)?;

        let mut cursor = &rest[header_len..];
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::Parse("checkpoint truncated".into()));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        let shapes: Vec<(usize, usize)> = params
            .shaped_tensors()
            .map(|(r, c, _)| (r, c))
            .collect();
        for ((rows, cols), (name, dst)) in shapes.into_iter().zip(params.tensors_mut()) {
            let r = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let c = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            if (r, c) != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name}: checkpoint has {r}x{c}, header implies {rows}x{cols}"
                )));
            }
            for v in dst.iter_mut() {
                *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
            }
        }
        if !cursor.is_empty() {
            return Err(Error::Parse("trailing bytes after checkpoint tensors".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    fn header_text(&self) -> String {
        let c = &self.config;
        format!(
            "vocab_size={}\nembed_dim={}\nhistory={}\ncount_order={}\nhidden_a={}\nhidden_b={}\nhidden_c={}\ninput_mode={}\nrescale_log_base={}\nend\n",
            c.vocab_size,
            c.embed_dim,
            c.history,
            c.count_order,
            c.hidden_a,
            c.hidden_b,
            c.hidden_c,
            c.input_mode,
            RESCALE_LOG_BASE
        )
    }

    fn shaped_tensors(&self) -> impl Iterator<Item = (usize, usize, &[f64])> {
        let mut out: Vec<(usize, usize, &[f64])> = Vec::new();
        if let Some(e) = &self.embeddings {
            out.push((e.rows(), e.cols(), e.as_slice()));
        }
        for aff in [self.relu_a.as_ref(), self.relu_b.as_ref(), Some(&self.relu_c), Some(&self.output)]
            .into_iter()
            .flatten()
        {
            out.push((aff.inputs(), aff.outputs(), aff.weights.as_slice()));
            out.push((1, aff.outputs(), &aff.bias));
        }
        out.into_iter()
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"NNGRAMS1\n";

fn parse_header(header: &str) -> Result<ModelConfig> {
    let mut fields = std::collections::HashMap::new();
    for line in header.lines() {
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad checkpoint header line '{line}'")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Parse(format!("checkpoint header missing '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Parse(format!("checkpoint header field '{k}' is not an integer")))
    };
    let base: f64 = get("rescale_log_base")?
        .parse()
        .map_err(|_| Error::Parse("bad rescale_log_base".into()))?;
    if base != RESCALE_LOG_BASE {
        return Err(Error::Parse(format!(
            "checkpoint uses rescale log base {base}, this build uses {RESCALE_LOG_BASE}"
        )));
    }
    let config = ModelConfig {
        vocab_size: num("vocab_size")?,
        embed_dim: num("embed_dim")?,
        history: num("history")?,
        count_order: num("count_order")?,
        hidden_a: num("hidden_a")?,
        hidden_b: num("hidden_b")?,
        hidden_c: num("hidden_c")?,
        input_mode: get("input_mode")?.parse()?,
    };
    config.validate()?;
    Ok(config)
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Concatenated embeddings, current word first.
    pub embedded: Vec<f64>,
    pub a_pre: Vec<f64>,
    pub b_pre: Vec<f64>,
    /// Input of ReLU-C: `[relu(a_pre), relu(b_pre)]`.
    pub merged: Vec<f64>,
    pub c_pre: Vec<f64>,
    pub c_act: Vec<f64>,
    pub score: f64,
}

/// Inputs of one prediction: the current word and its K history words,
/// plus the `(K+1) x N` count matrix in raw and rescaled form.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub word_ids: Vec<WordId>,
    pub counts_raw: Vec<u64>,
    pub counts_rescaled: Vec<f64>,
}

impl FeatureVector {
    pub fn new(word_ids: Vec<WordId>, counts_raw: Vec<u64>) -> Self {
        let counts_rescaled = counts_raw.iter().map(|&c| rescale_count(c)).collect();
        FeatureVector {
            word_ids,
            counts_raw,
            counts_rescaled,
        }
    }

    /// Builds features from a nearest-first `context` (current word at
    /// index 0). Ids past the end of `context` read as `<s>`.
    pub fn from_context(store: &NGramStore, context: &[WordId], config: &ModelConfig) -> Result<Self> {
        let slots = config.slots();
        let word_ids = (0..slots)
            .map(|j| context.get(j).copied().unwrap_or(crate::corpus::BOS_ID))
            .collect();
        let counts = store.count_matrix(context, slots, config.count_order)?;
        Ok(FeatureVector::new(word_ids, counts))
    }

    /// The same history with a different current word. Only row 0 of the
    /// count matrix depends on the current word, so it alone is recomputed.
    pub fn with_current_word(
        &self,
        word: WordId,
        store: &NGramStore,
        context: &[WordId],
        config: &ModelConfig,
    ) -> Result<Self> {
        let mut word_ids = self.word_ids.clone();
        word_ids[0] = word;
        let mut ctx = context.to_vec();
        if ctx.is_empty() {
            ctx.push(word);
        } else {
            ctx[0] = word;
        }
        let n = config.count_order;
        let row0 = store.count_matrix(&ctx, 1, n)?;
        let mut counts_raw = self.counts_raw.clone();
        let mut counts_rescaled = self.counts_rescaled.clone();
        for (j, c) in row0.into_iter().enumerate() {
            counts_raw[j] = c;
            counts_rescaled[j] = rescale_count(c);
        }
        Ok(FeatureVector {
            word_ids,
            counts_raw,
            counts_rescaled,
        })
    }
}

/// Feature context length needed for K and N: the current word, K history
/// words and the N-1 words before the oldest history word.
pub fn context_len(config: &ModelConfig) -> usize {
    config.slots() + config.count_order - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 3,
            embed_dim: 1,
            history: 1,
            count_order: 1,
            hidden_a: 1,
            hidden_b: 1,
            hidden_c: 1,
            input_mode: InputMode::Full,
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_count(0), -1.0);
        assert_eq!(rescale_count(1), 0.0);
        assert!((rescale_count(22026) - 0.1 * 22026f64.ln()).abs() < 1e-15);
        assert!((rescale_count(22026) - 0.99999786).abs() < 1e-7);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(&ModelConfig::large()), 515_950_849);
        let small = ModelConfig {
            vocab_size: 10,
            embed_dim: 2,
            history: 3,
            count_order: 2,
            hidden_a: 4,
            hidden_b: 3,
            hidden_c: 5,
            input_mode: InputMode::Full,
        };
        assert_eq!(parameter_count(&small), 129);
        let counts_only = ModelConfig {
            input_mode: InputMode::CountsOnly,
            ..small
        };
        // B: 8*3+3, C: 3*5+5, out: 5+1
        assert_eq!(parameter_count(&counts_only), 27 + 20 + 6);
        let params = ModelParams::init(counts_only, 0).unwrap();
        assert_eq!(params.num_parameters() as u64, parameter_count(&counts_only));
        assert!(params.embeddings.is_none());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig {
            vocab_size: 20,
            embed_dim: 4,
            history: 2,
            count_order: 2,
            hidden_a: 6,
            hidden_b: 5,
            hidden_c: 7,
            input_mode: InputMode::Full,
        };
        let a = ModelParams::init(cfg, 11).unwrap();
        let b = ModelParams::init(cfg, 11).unwrap();
        let c = ModelParams::init(cfg, 12).unwrap();
        assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
        assert_ne!(a, c);
        let emb = a.embeddings.as_ref().unwrap();
        let bound = init_bound(20, 4);
        assert!(emb.as_slice().iter().all(|v| v.abs() <= bound));
        let ra = a.relu_a.as_ref().unwrap();
        assert!(ra.weights.as_slice().iter().all(|v| v.abs() <= init_bound(12, 6)));
        assert!(ra.bias.iter().all(|&v| v == 0.0));
        assert!(a.all_finite());
    }

    #[test]
    fn zero_network_scores_its_output_bias() {
        let cfg = tiny_config();
        let mut p = ModelParams::zeros(cfg).unwrap();
        p.output.bias[0] = -2.5;
        let feat = FeatureVector::new(vec![1, 2], vec![5, 0]);
        assert_eq!(p.score(&feat).unwrap(), -2.5);
    }

    #[test]
    fn hand_computed_forward() {
        // E = [[0.5], [-1.0], [2.0]]; words (current=2, history=1);
        // A: w=[1.0, -0.5], b=0.1  -> pre = 2.0 + 0.5 + 0.1 = 2.6
        // counts raw [1, 0] -> rescaled [0, -1]; B: w=[0.3, -2.0], b=0.2
        //   -> pre = 0 + 2.0 + 0.2 = 2.2
        // C: w=[0.5, 1.0], b=-1.0 -> pre = 1.3 + 2.2 - 1.0 = 2.5
        // out: w=[3.0], b=0.25 -> 7.75
        let mut p = ModelParams::zeros(tiny_config()).unwrap();
        p.embeddings = Some(Matrix::from_vec(3, 1, vec![0.5, -1.0, 2.0]).unwrap());
        let a = p.relu_a.as_mut().unwrap();
        a.weights = Matrix::from_vec(2, 1, vec![1.0, -0.5]).unwrap();
        a.bias = vec![0.1];
        let b = p.relu_b.as_mut().unwrap();
        b.weights = Matrix::from_vec(2, 1, vec![0.3, -2.0]).unwrap();
        b.bias = vec![0.2];
        p.relu_c.weights = Matrix::from_vec(2, 1, vec![0.5, 1.0]).unwrap();
        p.relu_c.bias = vec![-1.0];
        p.output.weights = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        p.output.bias = vec![0.25];
        let feat = FeatureVector::new(vec![2, 1], vec![1, 0]);
        let cache = p.forward(&feat).unwrap();
        assert!((cache.score - 7.75).abs() < 1e-12);
        assert!((cache.a_pre[0] - 2.6).abs() < 1e-12);
        assert!((cache.b_pre[0] - 2.2).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = ModelParams::zeros(tiny_config()).unwrap();
        assert!(matches!(
            p.score(&FeatureVector::new(vec![3, 0], vec![0, 0])),
            Err(Error::IdOutOfRange { id: 3, .. })
        ));
        assert!(p.score(&FeatureVector::new(vec![0], vec![0, 0])).is_err());
        assert!(p.score(&FeatureVector::new(vec![0, 0], vec![0])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let cfg = ModelConfig {
            vocab_size: 7,
            embed_dim: 3,
            history: 2,
            count_order: 2,
            hidden_a: 4,
            hidden_b: 3,
            hidden_c: 5,
            input_mode: InputMode::EmbeddingsOnly,
        };
        let p = ModelParams::init(cfg, 3).unwrap();
        let bytes = p.to_checkpoint_bytes();
        assert!(bytes.starts_with(b"NNGRAMS1\n"));
        assert_eq!(ModelParams::from_checkpoint_bytes(&bytes).unwrap(), p);
        assert!(ModelParams::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ModelParams::from_checkpoint_bytes(b"NOTMAGIC").is_err());
        let key = b"embed_dim=3";
        let pos = bytes.windows(key.len()).position(|w| w == key).unwrap();
        let mut tampered = bytes.clone();
        tampered[pos + key.len() - 1] = b'2';
        assert!(matches!(
            ModelParams::from_checkpoint_bytes(&tampered),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn neighbors_small_table() {
        let mut p = ModelParams::zeros(ModelConfig {
            vocab_size: 4,
            embed_dim: 2,
            ..tiny_config()
        })
        .unwrap();
        p.embeddings = Some(
            Matrix::from_vec(4, 2, vec![0.0, 0.0, 3.0, 4.0, 1.0, 0.0, 0.0, 0.0]).unwrap(),
        );
        let nn = p.nearest_neighbors(0, 3).unwrap();
        assert_eq!(nn, vec![(3, 0.0), (2, 1.0), (1, 5.0)]);
        assert_eq!(p.nearest_neighbors(1, 1).unwrap(), vec![(2, 20f64.sqrt())]);
        assert!(p.nearest_neighbors(4, 1).is_err());
        assert!(p.nearest_neighbors(0, 4).is_err());
    }

    #[test]
    fn feature_row_replacement_matches_full_rebuild() {
        use crate::corpus::Vocabulary;
        use crate::ngram::count_ngrams;
        let v = Vocabulary::from_lines(["a b c a b", "c a"], 10, 1).unwrap();
        let sents: Vec<_> = ["a b c a b", "c a"].iter().map(|l| v.tokenize(l)).collect();
        let store = count_ngrams(&sents, 3).unwrap();
        let cfg = ModelConfig {
            vocab_size: v.len(),
            embed_dim: 2,
            history: 2,
            count_order: 3,
            hidden_a: 2,
            hidden_b: 2,
            hidden_c: 2,
            input_mode: InputMode::Full,
        };
        let ctx = sents[0].context_at(4, context_len(&cfg));
        let feat = FeatureVector::from_context(&store, &ctx, &cfg).unwrap();
        let c = v.id("c").unwrap();
        let swapped = feat.with_current_word(c, &store, &ctx, &cfg).unwrap();
        let mut ctx2 = ctx.clone();
        ctx2[0] = c;
        assert_eq!(swapped, FeatureVector::from_context(&store, &ctx2, &cfg).unwrap());
    }
}
