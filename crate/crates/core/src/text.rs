//! Documents, tokens, sentences and chunk alignment.
//!
//! All offsets are Unicode scalar-value indices into the document text,
//! half-open (`begin` inclusive, `end` exclusive).

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }

    /// Length of the text in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub begin: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub token_begin: usize,
    /// Inclusive.
    pub token_end: usize,
    pub begin: usize,
    pub end: usize,
}

impl Sentence {
    pub fn contains_token(&self, token: usize) -> bool {
        self.token_begin <= token && token <= self.token_end
    }
}

/// A target entity span. Token indices are filled by [`align_chunk`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub text: String,
    pub begin: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_begin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_end: Option<usize>,
}

impl Chunk {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, begin: usize, end: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            begin,
            end,
            token_begin: None,
            token_end: None,
        }
    }

    pub fn token_span(&self) -> Option<(usize, usize)> {
        Some((self.token_begin?, self.token_end?))
    }

    pub fn overlaps(&self, other: &Chunk) -> bool {
        self.doc_id == other.doc_id && self.begin < other.end && other.begin < self.end
    }

    pub fn same_span(&self, other: &Chunk) -> bool {
        self.doc_id == other.doc_id && self.begin == other.begin && self.end == other.end
    }

    /// Number of characters shared with `other` (0 across documents).
    pub fn intersection(&self, other: &Chunk) -> usize {
        if self.doc_id != other.doc_id {
            return 0;
        }
        self.end.min(other.end).saturating_sub(self.begin.max(other.begin))
    }
}

/// Assertion status of a chunk. `Raw` carries labels from external
/// annotators that have not been mapped onto the canonical six yet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum AssertionLabel {
    Present,
    Absent,
    Possible,
    Conditional,
    Hypothetical,
    AssociatedWithSomeoneElse,
    Raw(String),
}

impl AssertionLabel {
    pub const CANONICAL: [AssertionLabel; 6] = [
        AssertionLabel::Present,
        AssertionLabel::Absent,
        AssertionLabel::Possible,
        AssertionLabel::Conditional,
        AssertionLabel::Hypothetical,
        AssertionLabel::AssociatedWithSomeoneElse,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            AssertionLabel::Present => "present",
            AssertionLabel::Absent => "absent",
            AssertionLabel::Possible => "possible",
            AssertionLabel::Conditional => "conditional",
            AssertionLabel::Hypothetical => "hypothetical",
            AssertionLabel::AssociatedWithSomeoneElse => "associated_with_someone_else",
            AssertionLabel::Raw(s) => s,
        }
    }

    pub fn is_canonical(&self) -> bool {
        !matches!(self, AssertionLabel::Raw(_))
    }

    /// Parses a canonical label, accepting any case and space/hyphen
    /// separators ("Associated with someone else").
    pub fn canonical(s: &str) -> Option<AssertionLabel> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| {
                if c == ' ' || c == '-' {
                    '_'
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect();
        Self::CANONICAL.into_iter().find(|l| l.as_str() == key)
    }
}

impl From<String> for AssertionLabel {
    fn from(s: String) -> Self {
        AssertionLabel::canonical(&s).unwrap_or(AssertionLabel::Raw(s))
    }
}

impl From<&str> for AssertionLabel {
    fn from(s: &str) -> Self {
        AssertionLabel::from(s.to_string())
    }
}

impl From<AssertionLabel> for String {
    fn from(l: AssertionLabel) -> Self {
        l.as_str().to_string()
    }
}

impl fmt::Display for AssertionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled chunk produced by an annotator (or read from gold data).
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub chunk: Chunk,
    pub label: AssertionLabel,
    pub confidence: f64,
    pub source: String,
}

impl Annotation {
    pub fn new(chunk: Chunk, label: AssertionLabel, confidence: f64, source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Config(format!("confidence {confidence} outside [0, 1]")));
        }
        if source.is_empty() {
            return Err(Error::Config("annotation source must be nonempty".into()));
        }
        Ok(Self {
            chunk,
            label,
            confidence,
            source,
        })
    }
}

/// Tokenizer and sentence splitter sharing one abbreviation exception list.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::from_list(BUNDLED_ABBREVIATIONS)
    }
}

/// Process-wide segmenter built from the bundled abbreviation list.
pub fn default_segmenter() -> &'static Segmenter {
    static SEGMENTER: OnceLock<Segmenter> = OnceLock::new();
    SEGMENTER.get_or_init(Segmenter::default)
}

fn is_split_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn is_sentence_final(surface: &str) -> bool {
    matches!(surface, "." | "?" | "!")
}

impl Segmenter {
    /// Builds a segmenter from newline-separated entries; `#` starts a comment line.
    pub fn from_list(list: &str) -> Self {
        let abbreviations = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { abbreviations }
    }

    pub fn is_abbreviation(&self, s: &str) -> bool {
        self.abbreviations.contains(&s.to_lowercase())
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut push = |begin: usize, end: usize| {
            let index = tokens.len();
            tokens.push(Token {
                index,
                begin,
                end,
                surface: chars[begin..end].iter().collect(),
            });
        };

        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let piece_begin = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let (mut s, piece_end) = (piece_begin, i);
            // Longest abbreviation starting at `from` that leaves only
            // punctuation after it.
            let abbrev_end = |from: usize| {
                let mut e = piece_end;
                while e > from {
                    let candidate: String = chars[from..e].iter().collect();
                    if self.is_abbreviation(&candidate) {
                        return Some(e);
                    }
                    if !is_split_punct(chars[e - 1]) {
                        break;
                    }
                    e -= 1;
                }
                None
            };

            let e = loop {
                if let Some(e) = abbrev_end(s) {
                    break e;
                }
                if s < piece_end && is_split_punct(chars[s]) {
                    push(s, s + 1);
                    s += 1;
                    continue;
                }
                let mut e = piece_end;
                while e > s && is_split_punct(chars[e - 1]) {
                    e -= 1;
                }
                break e;
            };
            if s < e {
                push(s, e);
            }
            for p in e.max(s)..piece_end {
                push(p, p + 1);
            }
        }
        tokens
    }

    /// Groups tokens into sentences. A sentence ends at a `.`, `?` or `!`
    /// token that is followed by whitespace and a token starting with an
    /// uppercase letter. Abbreviations are single tokens, so they never end
    /// a sentence.
    pub fn sentences_from_tokens(&self, tokens: &[Token]) -> Vec<Sentence> {
        let mut sentences = Vec::new();
        let mut start = 0;
        for (i, tok) in tokens.iter().enumerate() {
            let is_last = i + 1 == tokens.len();
            let boundary = is_last || {
                let next = &tokens[i + 1];
                is_sentence_final(&tok.surface)
                    && next.begin > tok.end
                    && next.surface.chars().next().is_some_and(char::is_uppercase)
            };
            if boundary {
                sentences.push(Sentence {
                    index: sentences.len(),
                    token_begin: start,
                    token_end: i,
                    begin: tokens[start].begin,
                    end: tok.end,
                });
                start = i + 1;
            }
        }
        sentences
    }

    pub fn split_sentences(&self, doc: &Document) -> Vec<Sentence> {
        self.sentences_from_tokens(&self.tokenize(&doc.text))
    }

    pub fn analyze(&self, doc: &Document) -> Analysis {
        let tokens = self.tokenize(&doc.text);
        let sentences = self.sentences_from_tokens(&tokens);
        Analysis { tokens, sentences }
    }
}

pub fn tokenize(doc: &Document) -> Vec<Token> {
    default_segmenter().tokenize(&doc.text)
}

pub fn split_sentences(doc: &Document) -> Vec<Sentence> {
    default_segmenter().split_sentences(doc)
}

/// Tokens and sentences of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    pub tokens: Vec<Token>,
    pub sentences: Vec<Sentence>,
}

impl Analysis {
    /// Sentence containing `token`, by binary search.
    pub fn sentence_of(&self, token: usize) -> Option<&Sentence> {
        sentence_of(&self.sentences, token)
    }
}

pub fn sentence_of(sentences: &[Sentence], token: usize) -> Option<&Sentence> {
    let idx = sentences.partition_point(|s| s.token_end < token);
    sentences.get(idx).filter(|s| s.contains_token(token))
}

/// Byte offset of every char in `text`, plus a final entry for `text.len()`.
pub fn char_byte_offsets(text: &str) -> Vec<usize> {
    text.char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .collect()
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fills `token_begin`/`token_end` of `chunk`: the first token ending after
/// `chunk.begin` and the last token starting before `chunk.end`.
pub fn align_chunk(doc: &Document, tokens: &[Token], chunk: &Chunk) -> Result<Chunk> {
    let fail = |reason: &str| Error::Alignment {
        doc_id: chunk.doc_id.clone(),
        begin: chunk.begin,
        end: chunk.end,
        reason: reason.to_string(),
    };
    if chunk.begin >= chunk.end {
        return Err(fail("empty span"));
    }
    let offsets = char_byte_offsets(&doc.text);
    let len = offsets.len() - 1;
    if chunk.end > len {
        return Err(fail(&format!("span exceeds document length {len}")));
    }

    let first = tokens.partition_point(|t| t.end <= chunk.begin);
    let last = tokens.partition_point(|t| t.begin < chunk.end);
    if first >= tokens.len() || last == 0 || first > last - 1 {
        return Err(fail("span covers no token"));
    }
    let last = last - 1;

    let covered = &doc.text[offsets[tokens[first].begin]..offsets[tokens[last].end]];
    if normalize_ws(covered) != normalize_ws(&chunk.text) {
        return Err(fail(&format!(
            "chunk text {:?} disagrees with covered tokens {:?}",
            chunk.text, covered
        )));
    }

    Ok(Chunk {
        token_begin: Some(tokens[first].index),
        token_end: Some(tokens[last].index),
        ..chunk.clone()
    })
}
