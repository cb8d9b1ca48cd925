//! Vocabulary construction, sentence framing and history windows.
//!
//! Histories are always stored nearest-previous-word first: for the word at
//! position `i` the history is `[w(i-1), w(i-2), ..., w(i-K)]`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Integer id of a vocabulary entry.
pub type WordId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: WordId = 0;
pub const EOS_ID: WordId = 1;
pub const UNK_ID: WordId = 2;

const NUM_SPECIALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, WordId>,
    id_to_word: Vec<String>,
}

impl Vocabulary {
    /// A vocabulary holding only `<s>`, `</s>` and `<unk>`.
    pub fn specials_only() -> Self {
        let mut vocab = Vocabulary {
            word_to_id: HashMap::new(),
            id_to_word: Vec::new(),
        };
        for w in [BOS, EOS, UNK] {
            vocab.push(w);
        }
        vocab
    }

    fn push(&mut self, word: &str) -> WordId {
        let id = self.id_to_word.len() as WordId;
        self.id_to_word.push(word.to_string());
        self.word_to_id.insert(word.to_string(), id);
        id
    }

    /// Builds a vocabulary from word frequencies.
    ///
    /// Content words are ordered by descending frequency, ties broken by
    /// ascending word, and truncated so the total size (specials included)
    /// does not exceed `max_size`.
    pub fn from_frequencies(
        freqs: &HashMap<String, u64>,
        max_size: usize,
        min_count: u64,
    ) -> Result<Self> {
        if max_size < NUM_SPECIALS {
            return Err(Error::Validation(format!(
                "max vocabulary size {max_size} cannot hold the {NUM_SPECIALS} special tokens"
            )));
        }
        let mut words: Vec<(&String, u64)> = freqs
            .iter()
            .filter(|(w, &c)| c >= min_count.max(1) && !is_special(w))
            .map(|(w, &c)| (w, c))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        words.truncate(max_size - NUM_SPECIALS);

        let mut vocab = Self::specials_only();
        for (w, _) in words {
            vocab.push(w);
        }
        Ok(vocab)
    }

    /// Builds a vocabulary from in-memory sentences.
    pub fn from_lines<'a, I>(lines: I, max_size: usize, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut freqs = HashMap::new();
        for line in lines {
            count_words(line, &mut freqs);
        }
        Self::from_frequencies(&freqs, max_size, min_count)
    }

    /// Builds a vocabulary from a one-sentence-per-line corpus file.
    pub fn build(corpus_path: &Path, max_size: usize, min_count: u64) -> Result<Self> {
        if max_size < NUM_SPECIALS {
            return Err(Error::Validation(format!(
                "max vocabulary size {max_size} cannot hold the {NUM_SPECIALS} special tokens"
            )));
        }
        let text = read_text(corpus_path)?;
        Self::from_lines(text.lines(), max_size, min_count)
    }

    /// Builds a vocabulary from explicit words in id order (after the specials).
    pub fn from_words<'a, I>(words: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self::specials_only();
        for w in words {
            if !vocab.word_to_id.contains_key(w) {
                vocab.push(w);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.word_to_id.get(word).copied()
    }

    /// Id of `word`, or `<unk>` when it is out of vocabulary.
    pub fn id_or_unk(&self, word: &str) -> WordId {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    /// Serializes as one word per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.id_to_word {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.lines().collect();
        if words.len() < NUM_SPECIALS || words[0] != BOS || words[1] != EOS || words[2] != UNK {
            return Err(Error::Parse(
                "vocabulary file must start with <s>, </s>, <unk> on lines 0-2".into(),
            ));
        }
        let mut vocab = Self::specials_only();
        for (line, w) in words.iter().enumerate().skip(NUM_SPECIALS) {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Parse(format!("invalid vocabulary entry on line {line}")));
            }
            if vocab.word_to_id.contains_key(*w) {
                return Err(Error::Parse(format!("duplicate vocabulary entry '{w}'")));
            }
            vocab.push(w);
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?)
    }

    /// Maps a sentence onto ids framed by `<s>` and `</s>`.
    pub fn tokenize(&self, line: &str) -> TokenizedSentence {
        let mut ids = vec![BOS_ID];
        ids.extend(line.split_whitespace().map(|w| self.id_or_unk(w)));
        ids.push(EOS_ID);
        TokenizedSentence { ids }
    }

    /// Inverse of [`Vocabulary::tokenize`] for in-vocabulary text.
    pub fn detokenize(&self, sentence: &TokenizedSentence) -> String {
        sentence
            .content()
            .iter()
            .map(|&id| self.word(id).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn is_special(word: &str) -> bool {
    matches!(word, BOS | EOS | UNK)
}

fn count_words(line: &str, freqs: &mut HashMap<String, u64>) {
    for w in line.split_whitespace() {
        *freqs.entry(w.to_string()).or_insert(0) += 1;
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Word ids of one sentence, framed by exactly one leading `<s>` and one
/// trailing `</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    ids: Vec<WordId>,
}

impl TokenizedSentence {
    /// Frames raw content ids with boundary tokens.
    pub fn from_content(content: &[WordId]) -> Result<Self> {
        if content.iter().any(|&id| id == BOS_ID || id == EOS_ID) {
            return Err(Error::Validation(
                "sentence content may not contain boundary tokens".into(),
            ));
        }
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS_ID);
        ids.extend_from_slice(content);
        ids.push(EOS_ID);
        Ok(TokenizedSentence { ids })
    }

    pub fn ids(&self) -> &[WordId] {
        &self.ids
    }

    /// The ids between the boundary tokens.
    pub fn content(&self) -> &[WordId] {
        &self.ids[1..self.ids.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The nearest-first context at `pos`: `[ids[pos], ids[pos-1], ...]`,
    /// `len` ids long, padded with `<s>` past the sentence start.
    pub fn context_at(&self, pos: usize, len: usize) -> Vec<WordId> {
        (0..len)
            .map(|back| {
                if back <= pos {
                    self.ids[pos - back]
                } else {
                    BOS_ID
                }
            })
            .collect()
    }

    /// Windows of (current word, K-word history), see [`Window`].
    pub fn windows(&self, k: usize) -> Windows<'_> {
        Windows {
            sentence: self,
            k,
            pos: 1,
        }
    }
}

/// One prediction event: the current word and its K preceding words,
/// nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    /// Index of the current word inside the framed sentence.
    pub position: usize,
    pub current: WordId,
    pub history: Vec<WordId>,
}

pub struct Windows<'a> {
    sentence: &'a TokenizedSentence,
    k: usize,
    pos: usize,
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        let ids = self.sentence.ids();
        if self.pos >= ids.len() {
            return None;
        }
        let pos = self.pos;
        self.pos += 1;
        let ctx = self.sentence.context_at(pos, self.k + 1);
        Some(Window {
            position: pos,
            current: ctx[0],
            history: ctx[1..].to_vec(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.sentence.len().saturating_sub(self.pos);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Windows<'_> {}

/// Streams windows over `sentence`; `k` must be at least 1.
pub fn iter_windows(sentence: &TokenizedSentence, k: usize) -> Result<Windows<'_>> {
    if k == 0 {
        return Err(Error::Validation("history length K must be >= 1".into()));
    }
    Ok(sentence.windows(k))
}

/// Reads a corpus file and tokenizes each line.
pub fn read_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<TokenizedSentence>> {
    let text = read_text(path)?;
    Ok(text.lines().map(|l| vocab.tokenize(l)).collect())
}
