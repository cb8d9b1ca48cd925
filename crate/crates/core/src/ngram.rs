//! N-gram counting and the Katz backoff language model.
//!
//! Count keys are stored in text order (`[w(i-n+1), ..., w(i)]`); query
//! helpers that take histories expect them nearest-first like the rest of
//! the crate and reverse internally.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::corpus::{read_text, TokenizedSentence, Vocabulary, WordId, BOS, BOS_ID};
use crate::error::{Error, Result};

/// Good-Turing cutoff used when none is given.
pub const DEFAULT_GT_CUTOFF: u64 = 5;
/// Absolute discount used for orders whose count-of-counts break Good-Turing.
pub const FALLBACK_ABSOLUTE_DISCOUNT: f64 = 0.5;
/// ARPA log10 probability standing for zero.
pub const ARPA_LOG_ZERO: f64 = -99.0;

/// Counts of every n-gram of order `1..=max_order` in a framed corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramStore {
    max_order: usize,
    counts: HashMap<Vec<WordId>, u64>,
    total_tokens: u64,
}

impl NGramStore {
    pub fn new(max_order: usize) -> Result<Self> {
        if max_order == 0 {
            return Err(Error::Validation("n-gram order must be >= 1".into()));
        }
        Ok(NGramStore {
            max_order,
            counts: HashMap::new(),
            total_tokens: 0,
        })
    }

    /// Adds every n-gram of `sentence`. `<s>` is counted once as a unigram
    /// and as context of higher orders; nothing ever follows `</s>`.
    pub fn add_sentence(&mut self, sentence: &TokenizedSentence) {
        let ids = sentence.ids();
        for end in 0..ids.len() {
            for order in 1..=self.max_order.min(end + 1) {
                let gram = &ids[end + 1 - order..=end];
                *self.counts.entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
        self.total_tokens += ids.len() as u64;
    }

    /// Adds the counts of another shard. Orders must agree.
    pub fn merge(&mut self, other: &NGramStore) -> Result<()> {
        if other.max_order != self.max_order {
            return Err(Error::Validation(format!(
                "cannot merge stores of order {} and {}",
                self.max_order, other.max_order
            )));
        }
        for (gram, &c) in &other.counts {
            *self.counts.entry(gram.clone()).or_insert(0) += c;
        }
        self.total_tokens += other.total_tokens;
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Count of a text-order gram, 0 when absent.
    pub fn lookup(&self, gram: &[WordId]) -> Result<u64> {
        if gram.is_empty() || gram.len() > self.max_order {
            return Err(Error::Validation(format!(
                "gram length {} outside 1..={}",
                gram.len(),
                self.max_order
            )));
        }
        Ok(self.count(gram))
    }

    fn count(&self, gram: &[WordId]) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// All stored grams with their counts, in no particular order.
    pub fn iter(&self) -> impl Iterator<Item = (&[WordId], u64)> {
        self.counts.iter().map(|(g, &c)| (g.as_slice(), c))
    }

    /// The raw count matrix for one prediction window.
    ///
    /// `context` is nearest-first with the current word at index 0. Row `j`
    /// describes the word `context[j]` and holds the counts of the 1..=n
    /// grams ending at it; positions past the end of `context` read as
    /// `<s>`. The result is flattened row-major, `rows * n` long.
    pub fn count_matrix(&self, context: &[WordId], rows: usize, n: usize) -> Result<Vec<u64>> {
        if n == 0 || n > self.max_order {
            return Err(Error::Validation(format!(
                "count order {n} outside 1..={}",
                self.max_order
            )));
        }
        let at = |x: usize| context.get(x).copied().unwrap_or(BOS_ID);
        let mut out = Vec::with_capacity(rows * n);
        let mut gram = Vec::with_capacity(n);
        for row in 0..rows {
            for len in 1..=n {
                gram.clear();
                gram.extend((0..len).rev().map(|back| at(row + back)));
                out.push(self.count(&gram));
            }
        }
        Ok(out)
    }

    /// Text serialization: a header line then `<count> <id> ...` per gram,
    /// sorted by order then ids.
    pub fn to_text(&self) -> String {
        let mut grams: Vec<(&Vec<WordId>, &u64)> = self.counts.iter().collect();
        grams.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(b.0)));
        let mut out = format!("NGRAMSTORE v1 {} {}\n", self.max_order, self.total_tokens);
        for (gram, count) in grams {
            let _ = write!(out, "{count}");
            for id in gram {
                let _ = write!(out, " {id}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty n-gram store file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "NGRAMSTORE" || fields[1] != "v1" {
            return Err(Error::Parse(format!("bad n-gram store header '{header}'")));
        }
        let max_order: usize = parse_field(fields[2], "max order")?;
        let total_tokens: u64 = parse_field(fields[3], "total tokens")?;
        let mut store = NGramStore::new(max_order)?;
        store.total_tokens = total_tokens;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let count: u64 = parse_field(it.next().unwrap_or(""), "count")?;
            let gram = it
                .map(|t| parse_field::<WordId>(t, "word id"))
                .collect::<Result<Vec<_>>>()?;
            if gram.is_empty() || gram.len() > max_order {
                return Err(Error::Parse(format!(
                    "line {}: gram length {} outside 1..={max_order}",
                    lineno + 2,
                    gram.len()
                )));
            }
            store.counts.insert(gram, count);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("invalid {what} '{s}'")))
}

/// Counts every n-gram of order `1..=max_order` over `corpus`.
pub fn count_ngrams<'a, I>(corpus: I, max_order: usize) -> Result<NGramStore>
where
    I: IntoIterator<Item = &'a TokenizedSentence>,
{
    let mut store = NGramStore::new(max_order)?;
    for sentence in corpus {
        store.add_sentence(sentence);
    }
    Ok(store)
}

/// How the seen n-grams of one order were discounted.
#[derive(Debug, Clone, PartialEq)]
pub enum Discounting {
    /// Unigrams: relative frequency with a floor for unseen words.
    FlooredUnigram,
    /// Katz Good-Turing ratios `d_r` for `r = 1..=cutoff` (index `r - 1`).
    GoodTuring { ratios: Vec<f64> },
    /// Subtract a constant from every seen count.
    Absolute { discount: f64 },
}

impl Discounting {
    fn discounted(&self, r: u64) -> f64 {
        match self {
            Discounting::FlooredUnigram => r as f64,
            Discounting::GoodTuring { ratios } => match ratios.get(r as usize - 1) {
                Some(d) => d * r as f64,
                None => r as f64,
            },
            Discounting::Absolute { discount } => r as f64 - discount,
        }
    }
}

/// Katz ratios for one order, or `None` when its count-of-counts are
/// degenerate (a ratio outside (0, 1), or a history left with no discounted
/// mass to hand to the lower order).
fn good_turing_ratios(by_history: &HashMap<&[WordId], Vec<(WordId, u64)>>, cutoff: u64) -> Option<Vec<f64>> {
    let k = cutoff as usize;
    let mut n = vec![0u64; k + 2];
    for conts in by_history.values() {
        for &(_, r) in conts {
            if (r as usize) <= k + 1 {
                n[r as usize] += 1;
            }
        }
    }
    if n[1] == 0 {
        return None;
    }
    let a = (k as f64 + 1.0) * n[k + 1] as f64 / n[1] as f64;
    if 1.0 - a <= 0.0 {
        return None;
    }
    let mut ratios = vec![1.0; k];
    for r in 1..=k {
        if n[r] == 0 {
            continue;
        }
        let r_star = (r as f64 + 1.0) * n[r + 1] as f64 / n[r] as f64;
        let d = (r_star / r as f64 - a) / (1.0 - a);
        if !(d > 0.0 && d < 1.0) {
            return None;
        }
        ratios[r - 1] = d;
    }
    let every_history_discounted = by_history
        .values()
        .all(|conts| conts.iter().any(|&(_, r)| r <= cutoff));
    every_history_discounted.then_some(ratios)
}

/// A Katz backoff model over a fixed vocabulary.
///
/// `<s>` is never predicted and has probability 0; every other word has a
/// strictly positive conditional probability under every history.
#[derive(Debug, Clone)]
pub struct KatzLM {
    order: usize,
    vocab_size: usize,
    unigram: Vec<f64>,
    prob: HashMap<Vec<WordId>, f64>,
    backoff: HashMap<Vec<WordId>, f64>,
    discounting: Vec<Discounting>,
}

impl KatzLM {
    /// Estimates a Katz model of `order` from `store`.
    pub fn estimate(store: &NGramStore, vocab_size: usize, order: usize, gt_cutoff: u64) -> Result<Self> {
        if order == 0 || order > store.max_order() {
            return Err(Error::Validation(format!(
                "Katz order {order} outside 1..={}",
                store.max_order()
            )));
        }
        if gt_cutoff == 0 {
            return Err(Error::Validation("Good-Turing cutoff must be >= 1".into()));
        }
        if vocab_size <= BOS_ID as usize + 1 {
            return Err(Error::Validation("vocabulary too small".into()));
        }
        if let Some((gram, _)) = store.iter().find(|(g, _)| g.iter().any(|&id| id as usize >= vocab_size)) {
            return Err(Error::Validation(format!(
                "store gram {gram:?} references ids outside the vocabulary of size {vocab_size}"
            )));
        }

        let mut lm = KatzLM {
            order,
            vocab_size,
            unigram: floored_unigram(store, vocab_size),
            prob: HashMap::new(),
            backoff: HashMap::new(),
            discounting: vec![Discounting::FlooredUnigram],
        };
        let predictable = vocab_size - 1;

        for m in 2..=order {
            let mut by_history: HashMap<&[WordId], Vec<(WordId, u64)>> = HashMap::new();
            for (gram, c) in store.iter() {
                if gram.len() == m && c > 0 {
                    by_history
                        .entry(&gram[..m - 1])
                        .or_default()
                        .push((gram[m - 1], c));
                }
            }
            let discounting = match good_turing_ratios(&by_history, gt_cutoff) {
                Some(ratios) => Discounting::GoodTuring { ratios },
                None => Discounting::Absolute {
                    discount: FALLBACK_ABSOLUTE_DISCOUNT,
                },
            };

            let mut histories: Vec<_> = by_history.into_iter().collect();
            histories.sort_by(|a, b| a.0.cmp(b.0));
            for (history, mut conts) in histories {
                conts.sort_unstable();
                let total: u64 = conts.iter().map(|&(_, c)| c).sum();
                let probs: Vec<f64> = conts
                    .iter()
                    .map(|&(_, r)| discounting.discounted(r) / total as f64)
                    .collect();
                let seen_mass: f64 = probs.iter().sum();
                let lower_mass: f64 = conts
                    .iter()
                    .map(|&(w, _)| lm.text_prob(w, &history[1..]))
                    .sum();

                let (scale, alpha) = if conts.len() >= predictable {
                    (1.0 / seen_mass, 1.0)
                } else {
                    (1.0, (1.0 - seen_mass) / (1.0 - lower_mass))
                };
                for (&(w, _), p) in conts.iter().zip(&probs) {
                    let mut key = history.to_vec();
                    key.push(w);
                    lm.prob.insert(key, p * scale);
                }
                lm.backoff.insert(history.to_vec(), alpha);
            }
            lm.discounting.push(discounting);
        }
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Per-order discounting actually used (index 0 = unigrams).
    pub fn discounting(&self) -> &[Discounting] {
        &self.discounting
    }

    /// `P(word | history)` with `history` nearest-first. Histories shorter
    /// than `order - 1` are padded with `<s>`, longer ones truncated.
    pub fn cond_prob(&self, word: WordId, history: &[WordId]) -> f64 {
        let hist = self.text_history(history);
        self.text_prob(word, &hist)
    }

    /// Backoff weight of a text-order history; 1 for unseen histories.
    pub fn backoff_weight(&self, history_text_order: &[WordId]) -> f64 {
        self.backoff.get(history_text_order).copied().unwrap_or(1.0)
    }

    fn text_history(&self, history: &[WordId]) -> Vec<WordId> {
        let len = self.order - 1;
        (0..len)
            .rev()
            .map(|back| history.get(back).copied().unwrap_or(BOS_ID))
            .collect()
    }

    fn text_prob(&self, word: WordId, hist: &[WordId]) -> f64 {
        let mut weight = 1.0;
        let mut hist = hist;
        let mut key = Vec::with_capacity(hist.len() + 1);
        while !hist.is_empty() {
            key.clear();
            key.extend_from_slice(hist);
            key.push(word);
            if let Some(&p) = self.prob.get(&key) {
                return weight * p;
            }
            weight *= self.backoff_weight(hist);
            hist = &hist[1..];
        }
        weight * self.unigram.get(word as usize).copied().unwrap_or(0.0)
    }

    /// The full conditional distribution over the vocabulary, indexed by id.
    pub fn distribution(&self, history: &[WordId]) -> Vec<f64> {
        let hist = self.text_history(history);
        (0..self.vocab_size as WordId)
            .map(|w| self.text_prob(w, &hist))
            .collect()
    }

    /// Draws one word from `P(. | history)`.
    pub fn sample<R: Rng + ?Sized>(&self, history: &[WordId], rng: &mut R) -> WordId {
        ConditionalSampler::new(self, history).sample(rng)
    }

    /// ARPA text export with log10 probabilities and backoff weights.
    pub fn to_arpa(&self, vocab: &Vocabulary) -> Result<String> {
        if vocab.len() != self.vocab_size {
            return Err(Error::Validation(format!(
                "vocabulary size {} does not match model size {}",
                vocab.len(),
                self.vocab_size
            )));
        }
        let mut by_order: Vec<Vec<(&Vec<WordId>, f64)>> = vec![Vec::new(); self.order + 1];
        for (gram, &p) in &self.prob {
            by_order[gram.len()].push((gram, p));
        }
        for grams in by_order.iter_mut() {
            grams.sort_by(|a, b| a.0.cmp(b.0));
        }
        let word = |id: WordId| vocab.word(id).unwrap_or("<unk>");

        let mut out = String::from("\\data\\\n");
        let _ = writeln!(out, "ngram 1={}", self.vocab_size);
        for (m, grams) in by_order.iter().enumerate().skip(2) {
            let _ = writeln!(out, "ngram {m}={}", grams.len());
        }

        out.push_str("\n\\1-grams:\n");
        for id in 0..self.vocab_size as WordId {
            let p = self.unigram[id as usize];
            let logp = if p > 0.0 { p.log10() } else { ARPA_LOG_ZERO };
            let _ = write!(out, "{logp}\t{}", word(id));
            if self.order > 1 {
                if let Some(a) = self.backoff.get(&vec![id]) {
                    let _ = write!(out, "\t{}", a.log10());
                }
            }
            out.push('\n');
        }
        for (m, grams) in by_order.iter().enumerate().skip(2) {
            let _ = write!(out, "\n\\{m}-grams:\n");
            for (gram, p) in grams {
                let words: Vec<&str> = gram.iter().map(|&id| word(id)).collect();
                let _ = write!(out, "{}\t{}", p.log10(), words.join(" "));
                if m < self.order {
                    if let Some(a) = self.backoff.get(*gram) {
                        let _ = write!(out, "\t{}", a.log10());
                    }
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        Ok(out)
    }

    /// Reads an ARPA model over `vocab`. Every ARPA word must be in `vocab`;
    /// vocabulary words absent from the unigram section get probability 0.
    pub fn from_arpa(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let arpa = ArpaModel::parse(text)?;
        let mut lm = KatzLM {
            order: arpa.order,
            vocab_size: vocab.len(),
            unigram: vec![0.0; vocab.len()],
            prob: HashMap::new(),
            backoff: HashMap::new(),
            discounting: Vec::new(),
        };
        for (gram, entry) in &arpa.entries {
            let ids = gram
                .iter()
                .map(|w| {
                    vocab
                        .id(w)
                        .ok_or_else(|| Error::Parse(format!("ARPA word '{w}' not in vocabulary")))
                })
                .collect::<Result<Vec<_>>>()?;
            let p = if entry.log10_prob <= ARPA_LOG_ZERO {
                0.0
            } else {
                10f64.powf(entry.log10_prob)
            };
            if ids.len() == 1 {
                lm.unigram[ids[0] as usize] = p;
            } else {
                lm.prob.insert(ids.clone(), p);
            }
            if let Some(bo) = entry.log10_backoff {
                lm.backoff.insert(ids, 10f64.powf(bo));
            }
        }
        Ok(lm)
    }
}

/// Unigram distribution over every word but `<s>`: relative frequency for
/// seen words, `1 / (|V| * total_tokens + |V|)` for unseen ones, renormalized.
fn floored_unigram(store: &NGramStore, vocab_size: usize) -> Vec<f64> {
    let counts: Vec<u64> = (0..vocab_size as WordId)
        .map(|w| if w == BOS_ID { 0 } else { store.count(&[w]) })
        .collect();
    let seen_total: u64 = counts.iter().sum();
    let v = vocab_size as f64;
    let floor = 1.0 / (v * store.total_tokens() as f64 + v);
    let mut mass: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(w, &c)| {
            if w == BOS_ID as usize {
                0.0
            } else if c > 0 {
                c as f64 / seen_total as f64
            } else {
                floor
            }
        })
        .collect();
    let z: f64 = mass.iter().sum();
    for m in mass.iter_mut() {
        *m /= z;
    }
    mass
}

/// Repeated draws from one fixed conditional.
pub struct ConditionalSampler {
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl ConditionalSampler {
    pub fn new(lm: &KatzLM, history: &[WordId]) -> Self {
        let probs = lm.distribution(history);
        let index = WeightedIndex::new(&probs).expect("Katz conditionals have positive mass");
        ConditionalSampler { probs, index }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WordId {
        self.index.sample(rng) as WordId
    }

    pub fn prob(&self, word: WordId) -> f64 {
        self.probs.get(word as usize).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Draws one word from the Katz conditional `P(. | history)`.
pub fn sample_conditional<R: Rng + ?Sized>(lm: &KatzLM, history: &[WordId], rng: &mut R) -> WordId {
    lm.sample(history, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArpaEntry {
    pub log10_prob: f64,
    pub log10_backoff: Option<f64>,
}

/// A word-level ARPA model, independent of any vocabulary.
#[derive(Debug, Clone)]
pub struct ArpaModel {
    pub order: usize,
    pub entries: HashMap<Vec<String>, ArpaEntry>,
}

impl ArpaModel {
    pub fn parse(text: &str) -> Result<Self> {
        let mut declared: Vec<usize> = Vec::new();
        let mut entries = HashMap::new();
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse(format!("ARPA line {}: {msg}", lineno + 1));
            if line == "\\data\\" {
                seen_data = true;
                continue;
            }
            if line == "\\end\\" {
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let (m, n) = rest.split_once('=').ok_or_else(|| err("bad ngram count"))?;
                let m: usize = m.trim().parse().map_err(|_| err("bad order"))?;
                let n: usize = n.trim().parse().map_err(|_| err("bad count"))?;
                if declared.len() < m {
                    declared.resize(m, 0);
                }
                declared[m - 1] = n;
                continue;
            }
            if let Some(m) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
                section = Some(m.parse().map_err(|_| err("bad section header"))?);
                continue;
            }
            let m = section.ok_or_else(|| err("entry outside an n-gram section"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != m + 1 && fields.len() != m + 2 {
                return Err(err("wrong number of fields"));
            }
            let log10_prob: f64 = fields[0].parse().map_err(|_| err("bad probability"))?;
            let log10_backoff = match fields.get(m + 1) {
                Some(b) => Some(b.parse().map_err(|_| err("bad backoff"))?),
                None => None,
            };
            let gram: Vec<String> = fields[1..=m].iter().map(|s| s.to_string()).collect();
            entries.insert(
                gram,
                ArpaEntry {
                    log10_prob,
                    log10_backoff,
                },
            );
        }
        if !seen_data || declared.is_empty() {
            return Err(Error::Parse("missing \\data\\ section".into()));
        }
        for (m, &n) in declared.iter().enumerate() {
            let found = entries.keys().filter(|g| g.len() == m + 1).count();
            if found != n {
                return Err(Error::Parse(format!(
                    "ARPA declares {n} {}-grams but lists {found}",
                    m + 1
                )));
            }
        }
        Ok(ArpaModel {
            order: declared.len(),
            entries,
        })
    }

    /// Standard backoff query, natural-scale probability; `history`
    /// nearest-first and padded with `<s>`. A log10 probability of -99 or
    /// below reads as zero.
    pub fn cond_prob(&self, word: &str, history: &[&str]) -> f64 {
        let len = self.order - 1;
        let hist: Vec<String> = (0..len)
            .rev()
            .map(|back| history.get(back).copied().unwrap_or(BOS).to_string())
            .collect();
        let mut log10 = 0.0;
        for start in 0..=hist.len() {
            let mut key: Vec<String> = hist[start..].to_vec();
            key.push(word.to_string());
            if let Some(e) = self.entries.get(&key) {
                if e.log10_prob <= ARPA_LOG_ZERO {
                    return 0.0;
                }
                return 10f64.powf(log10 + e.log10_prob);
            }
            if start < hist.len() {
                if let Some(e) = self.entries.get(&hist[start..]) {
                    log10 += e.log10_backoff.unwrap_or(0.0);
                }
            }
        }
        0.0
    }
}
