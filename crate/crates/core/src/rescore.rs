//! N-best rescoring and word error rate.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{read_text, TokenizedSentence, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::lattice::{self, nbest_from_text};
use crate::model::{context_len, FeatureVector, ModelParams};
use crate::ngram::{KatzLM, NGramStore};

pub const DEFAULT_WEIGHT: f64 = 0.5;
pub const DEFAULT_NBEST: usize = 150;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// Total first-pass path score.
    pub base_score: f64,
    /// Log score under the rescoring model.
    pub rescore_lm: f64,
    pub combined: f64,
}

impl Hypothesis {
    pub fn new(words: Vec<String>, base_score: f64) -> Self {
        Hypothesis {
            words,
            base_score,
            rescore_lm: 0.0,
            combined: base_score,
        }
    }
}

impl From<lattice::Hypothesis> for Hypothesis {
    fn from(h: lattice::Hypothesis) -> Self {
        Hypothesis::new(h.words, h.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescoreModel {
    Katz,
    NnGrams,
}

impl fmt::Display for RescoreModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RescoreModel::Katz => "katz",
            RescoreModel::NnGrams => "nngrams",
        })
    }
}

impl FromStr for RescoreModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "katz" | "katz6" => Ok(RescoreModel::Katz),
            "nngrams" => Ok(RescoreModel::NnGrams),
            _ => Err(Error::Validation(format!("unknown rescoring model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoreConfig {
    /// Interpolation weight of the rescoring model.
    pub weight: f64,
    pub model: RescoreModel,
    /// Hypotheses kept per utterance.
    pub n: usize,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig {
            weight: DEFAULT_WEIGHT,
            model: RescoreModel::NnGrams,
            n: DEFAULT_NBEST,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::Validation(format!("weight must lie in [0, 1], got {}", self.weight)));
        }
        if self.n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        Ok(())
    }
}

/// A language model that scores whole word sequences.
pub trait LmScorer {
    fn score_words(&self, words: &[String]) -> Result<f64>;
}

fn frame(vocab: &Vocabulary, words: &[String]) -> Result<TokenizedSentence> {
    let ids: Vec<WordId> = words.iter().map(|w| vocab.id_or_unk(w)).collect();
    TokenizedSentence::from_content(&ids)
}

/// Sum of network scores over every predicted position, `</s>` included.
pub fn score_hypothesis_nngrams(
    params: &ModelParams,
    store: &NGramStore,
    vocab: &Vocabulary,
    words: &[String],
) -> Result<f64> {
    let config = params.config();
    if config.vocab_size != vocab.len() {
        return Err(Error::Shape(format!(
            "model vocabulary {} differs from vocabulary {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    let sentence = frame(vocab, words)?;
    let len = context_len(config);
    let mut total = 0.0;
    for pos in 1..sentence.len() {
        let ctx = sentence.context_at(pos, len);
        total += params.score(&FeatureVector::from_context(store, &ctx, config)?)?;
    }
    Ok(total)
}

/// Sum of `ln P(w | h)` over every predicted position, `</s>` included.
pub fn score_hypothesis_katz(lm: &KatzLM, vocab: &Vocabulary, words: &[String]) -> f64 {
    let ids: Vec<WordId> = words.iter().map(|w| vocab.id_or_unk(w)).collect();
    let Ok(sentence) = TokenizedSentence::from_content(&ids) else {
        return f64::NEG_INFINITY;
    };
    (1..sentence.len())
        .map(|pos| {
            let ctx = sentence.context_at(pos, lm.order());
            lm.cond_prob(ctx[0], &ctx[1..]).ln()
        })
        .sum()
}

pub struct NnGramsScorer<'a> {
    pub params: &'a ModelParams,
    pub store: &'a NGramStore,
    pub vocab: &'a Vocabulary,
}

impl LmScorer for NnGramsScorer<'_> {
    fn score_words(&self, words: &[String]) -> Result<f64> {
        score_hypothesis_nngrams(self.params, self.store, self.vocab, words)
    }
}

pub struct KatzScorer<'a> {
    pub lm: &'a KatzLM,
    pub vocab: &'a Vocabulary,
}

impl LmScorer for KatzScorer<'_> {
    fn score_words(&self, words: &[String]) -> Result<f64> {
        Ok(score_hypothesis_katz(self.lm, self.vocab, words))
    }
}

/// Sets `combined` from the attached scores and sorts best first. Equal
/// combined scores keep their incoming order.
pub fn rescore(mut hyps: Vec<Hypothesis>, weight: f64) -> Vec<Hypothesis> {
    for h in &mut hyps {
        h.combined = if weight == 0.0 {
            h.base_score
        } else if weight == 1.0 {
            h.rescore_lm
        } else {
            (1.0 - weight) * h.base_score + weight * h.rescore_lm
        };
    }
    hyps.sort_by(|a, b| descending(a.combined, b.combined));
    hyps
}

fn descending(a: f64, b: f64) -> Ordering {
    match b.partial_cmp(&a) {
        Some(o) => o,
        // NaN sinks to the bottom.
        None => a.is_nan().cmp(&b.is_nan()),
    }
}

/// Attaches `scorer` scores to every hypothesis, then reranks.
pub fn rescore_with(hyps: Vec<Hypothesis>, weight: f64, scorer: &dyn LmScorer) -> Result<Vec<Hypothesis>> {
    let mut hyps = hyps;
    if weight > 0.0 {
        for h in &mut hyps {
            h.rescore_lm = scorer.score_words(&h.words)?;
        }
    }
    Ok(rescore(hyps, weight))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length.
    pub reference: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Percentage error rate; `None` for an empty reference with errors.
    pub fn rate(&self) -> Option<f64> {
        if self.reference == 0 {
            return (self.errors() == 0).then_some(0.0);
        }
        Some(100.0 * self.errors() as f64 / self.reference as f64)
    }

    pub fn add(&mut self, other: &WerCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference += other.reference;
    }

    /// `WER=<rate> S=<n> D=<n> I=<n> N=<n>`.
    pub fn summary_line(&self) -> String {
        let rate = match self.rate() {
            Some(r) => format!("{:?}", (r * 1e4).round() / 1e4),
            None => "undefined".to_string(),
        };
        format!(
            "WER={rate} S={} D={} I={} N={}",
            self.substitutions, self.deletions, self.insertions, self.reference
        )
    }
}

/// Minimum edit distance alignment with unit costs. Among equal-cost
/// alignments, substitutions win over deletion and insertion pairs.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> WerCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = d[i - 1][j - 1] + usize::from(!same);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut counts = WerCounts {
        reference: n,
        ..WerCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// One test utterance: its reference and first-pass n-best list, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub reference: Vec<String>,
    pub nbest: Option<Vec<Hypothesis>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceResult {
    pub id: String,
    pub best: Vec<String>,
    pub counts: WerCounts,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceResult>,
    pub total: WerCounts,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        for u in &self.utterances {
            out.push_str(&format!(
                "{}\tS={} D={} I={} N={}\t{}\n",
                u.id,
                u.counts.substitutions,
                u.counts.deletions,
                u.counts.insertions,
                u.counts.reference,
                u.best.join(" ")
            ));
        }
        out.push_str(&self.total.summary_line());
        out.push('\n');
        out
    }
}

/// Corpus-level WER of the top rescored hypothesis of each utterance.
/// An utterance without an n-best list counts as all deletions.
pub fn evaluate(testset: &[Utterance], config: &RescoreConfig, scorer: &dyn LmScorer) -> Result<EvalReport> {
    config.validate()?;
    let mut report = EvalReport::default();
    for utt in testset {
        let best = match &utt.nbest {
            Some(list) if !list.is_empty() => {
                let list: Vec<Hypothesis> = list.iter().take(config.n).cloned().collect();
                rescore_with(list, config.weight, scorer)?.swap_remove(0).words
            }
            _ => {
                report.warnings.push(format!("no n-best list for utterance {}", utt.id));
                Vec::new()
            }
        };
        let counts = wer(&utt.reference, &best);
        report.total.add(&counts);
        report.utterances.push(UtteranceResult {
            id: utt.id.clone(),
            best,
            counts,
        });
    }
    Ok(report)
}

/// Parses `<utt_id>\t<reference sentence>` lines.
pub fn parse_testset(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, reference) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("test set line {}: missing tab", lineno + 1)))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::Parse(format!("test set line {}: empty utterance id", lineno + 1)));
        }
        out.push((id.to_string(), reference.split_whitespace().map(String::from).collect()));
    }
    Ok(out)
}

/// Reads a test set and the n-best file `<nbest_dir>/<utt_id>.nbest` of
/// each utterance. Missing n-best files leave `nbest` empty.
pub fn load_testset(testset: &Path, nbest_dir: &Path) -> Result<Vec<Utterance>> {
    parse_testset(&read_text(testset)?)?
        .into_iter()
        .map(|(id, reference)| {
            let path = nbest_dir.join(format!("{id}.nbest"));
            let nbest = if path.exists() {
                Some(nbest_from_text(&read_text(&path)?)?.into_iter().map(Hypothesis::from).collect())
            } else {
                None
            };
            Ok(Utterance { id, reference, nbest })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputMode, ModelConfig};
    use crate::ngram::count_ngrams;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    struct Fixed(Vec<(Vec<String>, f64)>);

    impl LmScorer for Fixed {
        fn score_words(&self, w: &[String]) -> Result<f64> {
            Ok(self.0.iter().find(|(k, _)| k == w).map_or(-100.0, |(_, s)| *s))
        }
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&words("a b c"), &words("a b c")).rate(), Some(0.0));
        let c = wer(&words("a b c"), &words("a x c"));
        assert_eq!(c.substitutions, 1);
        assert!((c.rate().unwrap() - 100.0 / 3.0).abs() < 1e-9);
        let c = wer(&words("a b"), &words("a x y b"));
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 0, 2));
        assert_eq!(c.rate(), Some(100.0));
    }

    #[test]
    fn substitution_preferred_over_insert_delete() {
        let c = wer(&words("a b"), &words("c d"));
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 0, 0));
    }

    #[test]
    fn empty_reference() {
        let empty: Vec<String> = Vec::new();
        assert_eq!(wer(&empty, &empty).rate(), Some(0.0));
        let c = wer(&empty, &words("a"));
        assert_eq!(c.insertions, 1);
        assert_eq!(c.rate(), None);
        assert!(c.summary_line().starts_with("WER=undefined"));
    }

    #[test]
    fn summary_line_format() {
        let c = wer(&words("a b c"), &words("a b c"));
        assert_eq!(c.summary_line(), "WER=0.0 S=0 D=0 I=0 N=3");
        let c = wer(&words("a b c"), &words("a x c"));
        assert_eq!(c.summary_line(), "WER=33.3333 S=1 D=0 I=0 N=3");
    }

    #[test]
    fn rescore_examples() {
        let mut a = Hypothesis::new(words("a"), -1.0);
        a.rescore_lm = -5.0;
        let mut b = Hypothesis::new(words("b"), -2.0);
        b.rescore_lm = -1.0;
        let out = rescore(vec![a.clone(), b.clone()], 0.5);
        assert_eq!(out[0].words, words("b"));
        assert_eq!(out[0].combined, -1.5);
        assert_eq!(out[1].combined, -3.0);
        let out = rescore(vec![a.clone(), b.clone()], 0.0);
        assert_eq!(out[0].words, words("a"));
        let out = rescore(vec![a, b], 1.0);
        assert_eq!(out[0].words, words("b"));
    }

    #[test]
    fn rescore_ties_are_stable() {
        let hyps: Vec<_> = ["x", "y", "z"].iter().map(|w| Hypothesis::new(words(w), -1.0)).collect();
        let out = rescore(hyps.clone(), 0.5);
        assert_eq!(out.iter().map(|h| &h.words).collect::<Vec<_>>(), hyps.iter().map(|h| &h.words).collect::<Vec<_>>());
    }

    #[test]
    fn zero_network_scores_constant_per_token() {
        let vocab = Vocabulary::from_words(["a", "b"]);
        let config = ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 2,
            history: 1,
            count_order: 2,
            hidden_a: 2,
            hidden_b: 2,
            hidden_c: 2,
            input_mode: InputMode::Full,
        };
        let mut params = ModelParams::zeros(config).unwrap();
        params.output.bias[0] = 0.25;
        let sents = vec![vocab.tokenize("a b")];
        let store = count_ngrams(&sents, 2).unwrap();
        let s = score_hypothesis_nngrams(&params, &store, &vocab, &words("a b a")).unwrap();
        assert!((s - 4.0 * 0.25).abs() < 1e-12);
        let bigger = Vocabulary::from_words(["a", "b", "c"]);
        assert!(matches!(
            score_hypothesis_nngrams(&params, &store, &bigger, &words("a")),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn katz_score_sums_conditionals() {
        let vocab = Vocabulary::from_words(["a", "b"]);
        let sents = vec![vocab.tokenize("a b"), vocab.tokenize("b a")];
        let store = count_ngrams(&sents, 2).unwrap();
        let lm = KatzLM::estimate(&store, vocab.len(), 2, 5).unwrap();
        let (a, b) = (vocab.id("a").unwrap(), vocab.id("b").unwrap());
        let want = lm.cond_prob(a, &[crate::corpus::BOS_ID]).ln()
            + lm.cond_prob(b, &[a]).ln()
            + lm.cond_prob(crate::corpus::EOS_ID, &[b]).ln();
        assert!((score_hypothesis_katz(&lm, &vocab, &words("a b")) - want).abs() < 1e-12);
        assert!(score_hypothesis_katz(&lm, &vocab, &words("zzz")).is_finite());
    }

    #[test]
    fn evaluate_hand_built_set() {
        let utts = vec![
            Utterance {
                id: "u1".into(),
                reference: words("a b c"),
                nbest: Some(vec![Hypothesis::new(words("a x c"), -1.0), Hypothesis::new(words("a b c"), -2.0)]),
            },
            Utterance {
                id: "u2".into(),
                reference: words("d e"),
                nbest: Some(vec![Hypothesis::new(words("d e f"), -1.0)]),
            },
            Utterance {
                id: "u3".into(),
                reference: words("g h"),
                nbest: None,
            },
        ];
        let oracle = Fixed(vec![(words("a b c"), f64::INFINITY)]);
        let base = RescoreConfig {
            weight: 0.0,
            ..RescoreConfig::default()
        };
        let r = evaluate(&utts, &base, &oracle).unwrap();
        // u1: one substitution, u2: one insertion, u3: two deletions.
        assert_eq!((r.total.substitutions, r.total.insertions, r.total.deletions, r.total.reference), (1, 1, 2, 7));
        assert_eq!(r.warnings.len(), 1);
        let r = evaluate(&utts, &RescoreConfig::default(), &oracle).unwrap();
        assert_eq!(r.total.errors(), 3);
        assert!(r.to_text().ends_with("WER=42.8571 S=0 D=2 I=1 N=7\n"));
    }

    #[test]
    fn testset_parsing() {
        let t = parse_testset("u1\thello there\nu2\t\n").unwrap();
        assert_eq!(t[0], ("u1".to_string(), words("hello there")));
        assert!(t[1].1.is_empty());
        assert!(parse_testset("nope").is_err());
    }
}
