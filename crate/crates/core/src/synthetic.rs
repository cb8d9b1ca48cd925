//! Synthetic data with known ground truth: bigram generators, random
//! lattices and corrupted n-best test sets.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenizedSentence, Vocabulary, WordId, BOS_ID, EOS_ID};
use crate::error::Result;
use crate::lattice::Lattice;
use crate::model::{context_len, FeatureVector, InputMode, ModelConfig, ModelParams};
use crate::ngram::{count_ngrams, KatzLM, DEFAULT_GT_CUTOFF};
use crate::noise::TextNoise;
use crate::rescore::{Hypothesis, Utterance};
use crate::training::{train, LogEntry, TrainConfig, TrainLog};

/// A first-order Markov source over `w0 .. w{n-1}` framed by `<s>`/`</s>`.
#[derive(Debug, Clone)]
pub struct BigramGenerator {
    vocab: Vocabulary,
    /// Row per history (`<s>` then the words), column per outcome
    /// (the words then `</s>`).
    probs: Vec<Vec<f64>>,
    samplers: Vec<WeightedIndex<f64>>,
    max_len: usize,
}

impl BigramGenerator {
    /// Random transition rows with log-weights uniform in `[-spread, spread]`.
    pub fn random(num_words: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..num_words).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_words(names.iter().map(String::as_str));
        let probs: Vec<Vec<f64>> = (0..=num_words)
            .map(|_| {
                let w: Vec<f64> = (0..=num_words)
                    .map(|_| (rng.gen_range(-spread..=spread)).exp())
                    .collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|x| x / z).collect()
            })
            .collect();
        Self::from_rows(vocab, probs)
    }

    /// Like [`random`](Self::random) but each word has one dominant
    /// successor carrying `peak` of the non-final mass.
    pub fn peaked(num_words: usize, peak: f64, stop: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..num_words).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_words(names.iter().map(String::as_str));
        let mut successors: Vec<usize> = (0..num_words).collect();
        successors.shuffle(&mut rng);
        let probs = (0..=num_words)
            .map(|h| {
                let mut row = vec![(1.0 - stop) * (1.0 - peak) / (num_words - 1) as f64; num_words + 1];
                row[successors[h % num_words]] = (1.0 - stop) * peak;
                row[num_words] = stop;
                row
            })
            .collect();
        Self::from_rows(vocab, probs)
    }

    fn from_rows(vocab: Vocabulary, probs: Vec<Vec<f64>>) -> Self {
        let samplers = probs
            .iter()
            .map(|row| WeightedIndex::new(row).expect("positive transition row"))
            .collect();
        BigramGenerator {
            vocab,
            probs,
            samplers,
            max_len: 200,
        }
    }

    /// The fixed five-word source used for distribution recovery.
    pub fn five_word() -> Self {
        Self::random(5, 1.5, 11)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_words(&self) -> usize {
        self.probs.len() - 1
    }

    fn word_id(&self, index: usize) -> WordId {
        self.vocab.id(&format!("w{index}")).expect("generator word")
    }

    fn index_of(&self, id: WordId) -> Option<usize> {
        let w = self.vocab.word(id)?;
        w.strip_prefix('w')?.parse().ok().filter(|&i| i < self.num_words())
    }

    /// Every `(history, word)` pair: histories `<s>` and the words,
    /// outcomes the words and `</s>`.
    pub fn pairs(&self) -> Vec<(WordId, WordId)> {
        let n = self.num_words();
        let histories = std::iter::once(BOS_ID).chain((0..n).map(|i| self.word_id(i)));
        histories
            .flat_map(|h| {
                (0..n)
                    .map(|i| self.word_id(i))
                    .chain(std::iter::once(EOS_ID))
                    .map(move |w| (h, w))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// `ln P(word | history)`; `-inf` for impossible events.
    pub fn log_prob(&self, word: WordId, history: WordId) -> f64 {
        let row = if history == BOS_ID {
            Some(0)
        } else {
            self.index_of(history).map(|i| i + 1)
        };
        let col = if word == EOS_ID {
            Some(self.num_words())
        } else {
            self.index_of(word)
        };
        match (row, col) {
            (Some(r), Some(c)) => self.probs[r][c].ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Content ids of one sentence, truncated at the length cap.
    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<WordId> {
        let n = self.num_words();
        let mut out = Vec::new();
        let mut row = 0;
        while out.len() < self.max_len {
            let c = self.samplers[row].sample(rng);
            if c == n {
                break;
            }
            out.push(self.word_id(c));
            row = c + 1;
        }
        out
    }

    pub fn sample_corpus<R: Rng + ?Sized>(&self, sentences: usize, rng: &mut R) -> Vec<TokenizedSentence> {
        (0..sentences)
            .map(|_| TokenizedSentence::from_content(&self.sample_sentence(rng)).expect("no boundary ids"))
            .collect()
    }
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    pearson(&ranks(x), &ranks(y))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Settings of one distribution-recovery run.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub sentences: usize,
    pub input_mode: InputMode,
    pub embed_dim: usize,
    pub hidden: usize,
    pub count_order: usize,
    pub train: TrainConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            sentences: 200_000,
            input_mode: InputMode::Full,
            embed_dim: 8,
            hidden: 16,
            count_order: 2,
            train: TrainConfig {
                lr: 0.05,
                noise_samples: 25,
                max_steps: 2_000,
                plateau: None,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// `(history, word, true log-conditional, model score)`.
    pub pairs: Vec<(WordId, WordId, f64, f64)>,
    pub spearman: f64,
    pub log: TrainLog,
}

/// Trains a one-word-history model with Katz text noise on a corpus drawn
/// from `generator` and correlates its scores with the true conditionals.
pub fn nce_recovery(
    generator: &BigramGenerator,
    config: &RecoveryConfig,
    on_log: impl FnMut(&LogEntry),
) -> Result<RecoveryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let corpus = generator.sample_corpus(config.sentences, &mut rng);
    let order = config.count_order.max(2);
    let store = count_ngrams(&corpus, order)?;
    let vocab = generator.vocab();
    let lm = KatzLM::estimate(&store, vocab.len(), 2, DEFAULT_GT_CUTOFF)?;
    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: config.embed_dim,
        history: 1,
        count_order: config.count_order,
        hidden_a: config.hidden,
        hidden_b: config.hidden,
        hidden_c: config.hidden,
        input_mode: config.input_mode,
    };
    let mut noise = TextNoise::new(&lm);
    let (params, log) = train(&config.train, model_config, &corpus, &store, &mut noise, on_log)?;
    let pairs = score_pairs(generator, &params, &store)?;
    let (truth, model): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.2, p.3)).unzip();
    Ok(RecoveryReport {
        spearman: spearman(&truth, &model),
        pairs,
        log,
    })
}

fn score_pairs(
    generator: &BigramGenerator,
    params: &ModelParams,
    store: &crate::ngram::NGramStore,
) -> Result<Vec<(WordId, WordId, f64, f64)>> {
    let config = params.config();
    let len = context_len(config);
    generator
        .pairs()
        .into_iter()
        .map(|(h, w)| {
            let mut ctx = vec![BOS_ID; len];
            ctx[0] = w;
            ctx[1] = h;
            let score = params.score(&FeatureVector::from_context(store, &ctx, config)?)?;
            Ok((h, w, generator.log_prob(w, h), score))
        })
        .collect()
}

/// A random lattice over a small alphabet with at most `max_paths`
/// START to FINAL paths. Every node lies on a chain from START to FINAL.
pub fn random_lattice<R: Rng + ?Sized>(rng: &mut R, max_paths: u128) -> Lattice {
    const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
    loop {
        let nodes: u64 = rng.gen_range(2..=7);
        let mut edges = Vec::new();
        for v in 0..nodes - 1 {
            edges.push((v, v + 1, WORDS[rng.gen_range(0..WORDS.len())].to_string(), -rng.gen_range(0.0..3.0)));
        }
        let extra = rng.gen_range(0..=2 * nodes);
        for _ in 0..extra {
            let from = rng.gen_range(0..nodes - 1);
            let to = rng.gen_range(from + 1..nodes);
            edges.push((from, to, WORDS[rng.gen_range(0..WORDS.len())].to_string(), -rng.gen_range(0.0..3.0)));
        }
        let lattice = Lattice::new(0, nodes - 1, edges).expect("generated lattice is valid");
        if lattice.num_paths().is_ok_and(|n| n <= max_paths) {
            return lattice;
        }
    }
}

/// The confusion lattice of the worked pinching example: the 1-best path
/// is "Hello how are you", "Hello" competes with the two-word "well o" and
/// "how" with "now" and "cow".
pub const EXAMPLE_LATTICE: &str = "\
LATTICE v1
START 0
FINAL 5
E 0 2 Hello -0.35667494393873245
E 0 1 well -1.2039728043259361
E 1 2 o 0
E 2 3 how -0.5108256237659907
E 2 3 now -1.2039728043259361
E 2 3 cow -2.3025850929940455
E 3 4 are 0
E 4 5 you 0
";

pub fn example_lattice() -> Lattice {
    Lattice::parse(EXAMPLE_LATTICE).expect("example lattice parses")
}

/// Test utterances whose n-best lists mix the reference with corrupted
/// copies. First-pass scores are noisy and favor the reference only weakly.
pub fn corrupted_testset<R: Rng + ?Sized>(
    generator: &BigramGenerator,
    utterances: usize,
    nbest: usize,
    corruption: f64,
    rng: &mut R,
) -> Vec<Utterance> {
    let words: Vec<String> = (0..generator.num_words()).map(|i| format!("w{i}")).collect();
    (0..utterances)
        .map(|u| {
            let reference: Vec<String> = loop {
                let s = generator.sample_sentence(rng);
                if s.len() >= 3 {
                    break s
                        .iter()
                        .map(|&id| generator.vocab().word(id).expect("generator id").to_string())
                        .collect();
                }
            };
            let mut list: Vec<Vec<String>> = vec![reference.clone()];
            let mut attempts = 0;
            while list.len() < nbest && attempts < 100 * nbest {
                attempts += 1;
                let c = corrupt(&reference, &words, corruption, rng);
                if !list.contains(&c) {
                    list.push(c);
                }
            }
            let mut hyps: Vec<Hypothesis> = list
                .into_iter()
                .enumerate()
                .map(|(i, w)| {
                    let bonus = if i == 0 { 0.5 } else { 0.0 };
                    Hypothesis::new(w, bonus - rng.gen_range(0.0..2.0))
                })
                .collect();
            hyps.sort_by(|a, b| b.base_score.total_cmp(&a.base_score));
            Utterance {
                id: format!("utt{u:04}"),
                reference,
                nbest: Some(hyps),
            }
        })
        .collect()
}

fn corrupt<R: Rng + ?Sized>(reference: &[String], words: &[String], rate: f64, rng: &mut R) -> Vec<String> {
    loop {
        let mut out = Vec::with_capacity(reference.len() + 1);
        for w in reference {
            let r: f64 = rng.gen();
            if r < rate / 3.0 {
                // deletion
            } else if r < 2.0 * rate / 3.0 {
                out.push(w.clone());
                out.push(words.choose(rng).expect("words").clone());
            } else if r < rate {
                out.push(words.choose(rng).expect("words").clone());
            } else {
                out.push(w.clone());
            }
        }
        if out != reference {
            return out;
        }
    }
}
