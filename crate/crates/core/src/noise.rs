//! Noise samplers for NCE training.
//!
//! Text noise draws from the Katz conditional of the data word's history.
//! Speech noise draws from the confusions a recognizer produced for a 1-best
//! word, recovered by pinching its lattice.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::RngCore;

use crate::corpus::{read_text, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::ngram::{ConditionalSampler, KatzLM};

/// Default minimum 1-best confidence for a lattice to contribute noise.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;
/// Floor for the data word's noise probability under speech noise.
pub const SPEECH_TARGET_FLOOR: f64 = 1e-6;
/// Redraws allowed when a speech confusion maps onto the data word.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSample {
    pub word: WordId,
    /// `ln P_noise(word | history)`.
    pub log_prob: f64,
}

/// Everything a noise source may need about one data word.
#[derive(Debug, Clone, Copy)]
pub struct NoiseRequest<'a> {
    /// Index of the sentence in the training set.
    pub sentence: usize,
    /// Index of the data word inside the framed sentence (1 = first word).
    pub position: usize,
    pub target: WordId,
    /// Nearest-first history.
    pub history: &'a [WordId],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    /// `ln P_noise(target | history)`.
    pub target_log_prob: f64,
    pub samples: Vec<NoiseSample>,
}

/// A source of NCE noise samples. `Ok(None)` means the token has no usable
/// noise and is skipped.
pub trait NoiseProvider {
    fn draw(&mut self, request: &NoiseRequest<'_>, f: usize, rng: &mut dyn RngCore) -> Result<Option<NoiseDraw>>;
}

/// `f` independent draws from `P(. | history)` with their exact log-probs.
pub fn text_noise<R: RngCore + ?Sized>(lm: &KatzLM, history: &[WordId], f: usize, rng: &mut R) -> Vec<NoiseSample> {
    let sampler = ConditionalSampler::new(lm, history);
    draw_text(&sampler, f, rng)
}

fn draw_text<R: RngCore + ?Sized>(sampler: &ConditionalSampler, f: usize, rng: &mut R) -> Vec<NoiseSample> {
    (0..f)
        .map(|_| {
            let word = sampler.sample(rng);
            NoiseSample {
                word,
                log_prob: sampler.prob(word).ln(),
            }
        })
        .collect()
}

/// Text noise with a per-history sampler cache.
pub struct TextNoise<'a> {
    lm: &'a KatzLM,
    cache: HashMap<Vec<WordId>, ConditionalSampler>,
    max_cached: usize,
}

impl<'a> TextNoise<'a> {
    pub fn new(lm: &'a KatzLM) -> Self {
        TextNoise {
            lm,
            cache: HashMap::new(),
            max_cached: 100_000,
        }
    }
}

impl NoiseProvider for TextNoise<'_> {
    fn draw(&mut self, request: &NoiseRequest<'_>, f: usize, rng: &mut dyn RngCore) -> Result<Option<NoiseDraw>> {
        let len = (self.lm.order() - 1).min(request.history.len());
        let key = request.history[..len].to_vec();
        if !self.cache.contains_key(&key) && self.cache.len() >= self.max_cached {
            self.cache.clear();
        }
        let sampler = self
            .cache
            .entry(key)
            .or_insert_with_key(|k| ConditionalSampler::new(self.lm, k));
        let target_prob = sampler.prob(request.target);
        if !(target_prob > 0.0) {
            return Err(Error::Validation(format!(
                "data word {} has zero noise probability",
                request.target
            )));
        }
        Ok(Some(NoiseDraw {
            target_log_prob: target_prob.ln(),
            samples: draw_text(sampler, f, rng),
        }))
    }
}

/// Confusions for one included 1-best word.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechNoiseEntry {
    pub best_word: String,
    /// Segment posterior of the 1-best word.
    pub best_posterior: f64,
    /// Alternatives with posteriors renormalized over the alternatives.
    pub alternatives: Vec<(String, f64)>,
}

/// Speech-noise confusions keyed by (utterance id, 1-best word index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeechNoiseTable {
    pub entries: BTreeMap<(String, usize), SpeechNoiseEntry>,
    /// Lattices dropped for falling below the confidence threshold.
    pub skipped_lattices: usize,
}

impl SpeechNoiseTable {
    pub fn get(&self, utterance: &str, position: usize) -> Option<&SpeechNoiseEntry> {
        self.entries.get(&(utterance.to_string(), position))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `<utt_id> <position> <1best_word>:<posterior> <alt>:<posterior> ...`
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((utt, pos), entry) in &self.entries {
            let _ = write!(out, "{utt} {pos} {}:{}", entry.best_word, entry.best_posterior);
            for (w, p) in &entry.alternatives {
                let _ = write!(out, " {w}:{p}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut table = SpeechNoiseTable::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("speech-noise line {}: '{line}'", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(bad());
            }
            let position: usize = fields[1].parse().map_err(|_| bad())?;
            let split = |f: &str| -> Result<(String, f64)> {
                let (w, p) = f.rsplit_once(':').ok_or_else(bad)?;
                let p: f64 = p.parse().map_err(|_| bad())?;
                if w.is_empty() || !(p > 0.0 && p <= 1.0) {
                    return Err(bad());
                }
                Ok((w.to_string(), p))
            };
            // The 1-best field may omit its posterior.
            let (best_word, best_posterior) = match split(fields[2]) {
                Ok(v) => v,
                Err(_) => (fields[2].to_string(), SPEECH_TARGET_FLOOR),
            };
            let alternatives = fields[3..].iter().map(|f| split(f)).collect::<Result<Vec<_>>>()?;
            table.entries.insert(
                (fields[0].to_string(), position),
                SpeechNoiseEntry {
                    best_word,
                    best_posterior,
                    alternatives,
                },
            );
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?)
    }
}

/// Pinches each lattice whose 1-best confidence reaches `threshold` and
/// keeps the positions that survive both exclusion rules.
pub fn build_speech_noise(lattices: &[(String, Lattice)], threshold: f64) -> Result<SpeechNoiseTable> {
    let mut table = SpeechNoiseTable::default();
    for (utt, lattice) in lattices {
        let best = match lattice.one_best() {
            Ok(b) => b,
            Err(_) => {
                table.skipped_lattices += 1;
                continue;
            }
        };
        if lattice.path_confidence(&best) < threshold {
            table.skipped_lattices += 1;
            continue;
        }
        let pinched = lattice.pinch(&best)?;
        for (pos, p) in pinched.positions.iter().enumerate() {
            let usable = p.usable();
            if usable.is_empty() {
                continue;
            }
            let alt_mass: f64 = usable.iter().map(|(_, q)| q).sum();
            let alternatives = usable
                .iter()
                .map(|&(w, q)| (w.to_string(), q / alt_mass))
                .collect();
            table.entries.insert(
                (utt.clone(), pos),
                SpeechNoiseEntry {
                    best_word: p.word.clone(),
                    best_posterior: p.best_posterior,
                    alternatives,
                },
            );
        }
    }
    Ok(table)
}

/// `f` draws from the alternatives of one table entry, mapped to vocabulary
/// ids. Draws that map onto `target` are redrawn; `None` when no valid draw
/// is found within [`MAX_REDRAWS`] attempts.
pub fn speech_noise<R: RngCore + ?Sized>(
    entry: &SpeechNoiseEntry,
    vocab: &Vocabulary,
    target: WordId,
    f: usize,
    rng: &mut R,
) -> Option<Vec<NoiseSample>> {
    let weights: Vec<f64> = entry.alternatives.iter().map(|(_, p)| *p).collect();
    let index = WeightedIndex::new(&weights).ok()?;
    let mut out = Vec::with_capacity(f);
    for _ in 0..f {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let i = index.sample(rng);
            let (word, p) = &entry.alternatives[i];
            let id = vocab.id_or_unk(word);
            if id != target {
                drawn = Some(NoiseSample { word: id, log_prob: p.ln() });
                break;
            }
        }
        out.push(drawn?);
    }
    Some(out)
}

/// Speech noise for a training set whose sentence `i` is the 1-best of
/// utterance `utterances[i]`.
pub struct SpeechNoise<'a> {
    table: &'a SpeechNoiseTable,
    vocab: &'a Vocabulary,
    utterances: Vec<String>,
}

impl<'a> SpeechNoise<'a> {
    pub fn new(table: &'a SpeechNoiseTable, vocab: &'a Vocabulary, utterances: Vec<String>) -> Self {
        SpeechNoise {
            table,
            vocab,
            utterances,
        }
    }
}

impl NoiseProvider for SpeechNoise<'_> {
    fn draw(&mut self, request: &NoiseRequest<'_>, f: usize, rng: &mut dyn RngCore) -> Result<Option<NoiseDraw>> {
        let Some(utt) = self.utterances.get(request.sentence) else {
            return Ok(None);
        };
        // Framed position 1 is 1-best word 0; `</s>` has no entry.
        let Some(entry) = request
            .position
            .checked_sub(1)
            .and_then(|p| self.table.get(utt, p))
        else {
            return Ok(None);
        };
        let Some(samples) = speech_noise(entry, self.vocab, request.target, f, rng) else {
            return Ok(None);
        };
        Ok(Some(NoiseDraw {
            target_log_prob: entry.best_posterior.max(SPEECH_TARGET_FLOOR).ln(),
            samples,
        }))
    }
}
