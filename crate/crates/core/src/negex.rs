//! NegEx negation detection.
//!
//! Cues are literal token phrases of four kinds. Matching scans each
//! sentence left to right and takes the longest cue at every position,
//! so a pseudo-negation such as "no increase" consumes the "no" it
//! contains. A pre-negation cue negates a chunk whose first token lies
//! within `max_scope` tokens after the cue; a post-negation cue negates a
//! chunk whose last token lies within `max_scope` tokens before it. Scopes
//! stop at termination cues and, by default, at sentence boundaries.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_jsonl, read_to_string};
use crate::phrase::{phrase_tokens, PhraseTrie};
use crate::text::{sentence_of, Annotation, AssertionLabel, Chunk, Document, Sentence, Token};

pub const SOURCE: &str = "negex";
pub const DEFAULT_MAX_SCOPE: usize = 5;

pub const BUNDLED_CUES: &str = include_str!("../data/negex_cues.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CueKind {
    PreNeg,
    PostNeg,
    PseudoNeg,
    Termination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegexCue {
    pub phrase: String,
    pub kind: CueKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegexConfig {
    pub cues: Vec<NegexCue>,
    pub max_scope: usize,
    pub sentence_bounded: bool,
}

impl NegexConfig {
    pub fn new(cues: Vec<NegexCue>, max_scope: usize, sentence_bounded: bool) -> Result<Self> {
        if max_scope == 0 {
            return Err(Error::Config("max_scope must be at least 1".into()));
        }
        Ok(Self {
            cues,
            max_scope,
            sentence_bounded,
        })
    }

    /// Parses a cue file. Phrases are case-folded; a phrase appearing twice
    /// (under any kind) is rejected.
    pub fn from_jsonl(content: &str, origin: &str) -> Result<Self> {
        let raw: Vec<NegexCue> = parse_jsonl(content, origin)?;
        let mut seen = HashSet::new();
        let mut cues = Vec::with_capacity(raw.len());
        let lines = content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, _)| i + 1);
        for (cue, line) in raw.into_iter().zip(lines) {
            let key = phrase_tokens(&cue.phrase, true).join(" ");
            if key.is_empty() {
                return Err(Error::parse(origin, line, "empty cue phrase"));
            }
            if !seen.insert(key.clone()) {
                return Err(Error::parse(origin, line, format!("duplicate cue phrase `{key}`")));
            }
            cues.push(NegexCue {
                phrase: key,
                kind: cue.kind,
            });
        }
        Self::new(cues, DEFAULT_MAX_SCOPE, true)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&read_to_string(path)?, &path.display().to_string())
    }

    /// The cue inventory shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_jsonl(BUNDLED_CUES, "negex_cues.jsonl").expect("bundled cue file is valid")
    }

    pub fn count(&self, kind: CueKind) -> usize {
        self.cues.iter().filter(|c| c.kind == kind).count()
    }
}

pub fn load_negex_cues(path: &Path) -> Result<NegexConfig> {
    NegexConfig::load(path)
}

/// A cue occurrence over token indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CueMatch {
    pub kind: CueKind,
    pub start: usize,
    pub end: usize,
}

/// Compiled NegEx annotator.
#[derive(Debug, Clone)]
pub struct Negex {
    trie: PhraseTrie<CueKind>,
    max_scope: usize,
    sentence_bounded: bool,
}

impl Negex {
    pub fn new(config: &NegexConfig) -> Result<Self> {
        if config.cues.is_empty() {
            return Err(Error::Config("NegEx cue list is empty".into()));
        }
        if config.max_scope == 0 {
            return Err(Error::Config("max_scope must be at least 1".into()));
        }
        let mut trie = PhraseTrie::new();
        for cue in &config.cues {
            trie.insert(&phrase_tokens(&cue.phrase, true), cue.kind);
        }
        Ok(Self {
            trie,
            max_scope: config.max_scope,
            sentence_bounded: config.sentence_bounded,
        })
    }

    /// Longest-match cue scan over `folded[range]`.
    pub fn find_cues(&self, folded: &[String], from: usize, to: usize) -> Vec<CueMatch> {
        let window = &folded[..to];
        let mut out = Vec::new();
        let mut i = from;
        while i < to {
            match self.trie.longest_at(window, i) {
                Some((end, kinds)) => {
                    out.push(CueMatch {
                        kind: kinds[0],
                        start: i,
                        end,
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }

    fn negated(&self, cues: &[CueMatch], first: usize, last: usize) -> bool {
        let terminated_between = |lo: usize, hi: usize| {
            cues.iter()
                .any(|t| t.kind == CueKind::Termination && t.start >= lo && t.start < hi)
        };
        cues.iter().any(|c| match c.kind {
            CueKind::PreNeg => {
                c.end <= first && first - (c.end - 1) <= self.max_scope && !terminated_between(c.end, first)
            }
            CueKind::PostNeg => {
                c.start > last && c.start - last <= self.max_scope && !terminated_between(last + 1, c.start)
            }
            CueKind::PseudoNeg | CueKind::Termination => false,
        })
    }

    /// Labels every chunk `absent` or `present`.
    pub fn annotate(
        &self,
        doc: &Document,
        sentences: &[Sentence],
        tokens: &[Token],
        chunks: &[Chunk],
    ) -> Result<Vec<Annotation>> {
        let folded: Vec<String> = tokens.iter().map(|t| t.surface.to_lowercase()).collect();
        let segments: Vec<(usize, usize)> = if self.sentence_bounded {
            sentences.iter().map(|s| (s.token_begin, s.token_end + 1)).collect()
        } else if tokens.is_empty() {
            Vec::new()
        } else {
            vec![(0, tokens.len())]
        };
        let cues: Vec<Vec<CueMatch>> = segments
            .iter()
            .map(|&(from, to)| self.find_cues(&folded, from, to))
            .collect();
        let segment_of = |tok: usize| -> Option<usize> {
            if self.sentence_bounded {
                sentence_of(sentences, tok).map(|s| s.index)
            } else {
                Some(0)
            }
        };

        chunks
            .iter()
            .map(|chunk| {
                let (first, last) = chunk.token_span().ok_or_else(|| unaligned(doc, chunk))?;
                if last >= tokens.len() {
                    return Err(unaligned(doc, chunk));
                }
                let seg_first = segment_of(first).ok_or_else(|| unaligned(doc, chunk))?;
                let seg_last = segment_of(last).ok_or_else(|| unaligned(doc, chunk))?;
                let absent = self.negated(&cues[seg_first], first, last)
                    || (seg_last != seg_first && self.negated(&cues[seg_last], first, last));
                let label = if absent {
                    AssertionLabel::Absent
                } else {
                    AssertionLabel::Present
                };
                Annotation::new(chunk.clone(), label, 1.0, SOURCE)
            })
            .collect()
    }
}

fn unaligned(doc: &Document, chunk: &Chunk) -> Error {
    Error::Alignment {
        doc_id: doc.doc_id.clone(),
        begin: chunk.begin,
        end: chunk.end,
        reason: "chunk is not aligned to this document's tokens".into(),
    }
}

pub fn negex_annotate(
    doc: &Document,
    sentences: &[Sentence],
    tokens: &[Token],
    chunks: &[Chunk],
    config: &NegexConfig,
) -> Result<Vec<Annotation>> {
    Negex::new(config)?.annotate(doc, sentences, tokens, chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{align_chunk, default_segmenter};

    fn cue(phrase: &str, kind: CueKind) -> NegexCue {
        NegexCue {
            phrase: phrase.into(),
            kind,
        }
    }

    fn run(text: &str, targets: &[&str], config: &NegexConfig) -> Vec<AssertionLabel> {
        let doc = Document::new("d", text);
        let a = default_segmenter().analyze(&doc);
        let chunks: Vec<Chunk> = targets
            .iter()
            .map(|t| {
                let b = text.find(t).unwrap();
                let begin = text[..b].chars().count();
                let c = Chunk::new("d", *t, begin, begin + t.chars().count());
                align_chunk(&doc, &a.tokens, &c).unwrap()
            })
            .collect();
        negex_annotate(&doc, &a.sentences, &a.tokens, &chunks, config)
            .unwrap()
            .into_iter()
            .map(|x| x.label)
            .collect()
    }

    #[test]
    fn absent_and_present_examples() {
        let cfg = NegexConfig::bundled();
        assert_eq!(
            run(
                "There was no evidence of diarrhea during medical Lawrence Memorial Hospital stay.",
                &["diarrhea"],
                &cfg
            ),
            [AssertionLabel::Absent]
        );
        assert_eq!(
            run(
                "Overnight, the patient became hypoxic, dropping to the 80 's.",
                &["hypoxic"],
                &cfg
            ),
            [AssertionLabel::Present]
        );
    }

    #[test]
    fn pseudo_negation_suppresses() {
        let cfg = NegexConfig::new(
            vec![cue("no", CueKind::PreNeg), cue("no increase", CueKind::PseudoNeg)],
            5,
            true,
        )
        .unwrap();
        assert_eq!(run("no increase in pain", &["pain"], &cfg), [AssertionLabel::Present]);
        assert_eq!(run("no change in pain", &["pain"], &cfg), [AssertionLabel::Absent]);
    }

    #[test]
    fn termination_clips_scope() {
        let cfg = NegexConfig::new(
            vec![cue("denies", CueKind::PreNeg), cue("but", CueKind::Termination)],
            5,
            true,
        )
        .unwrap();
        assert_eq!(
            run("denies cough but reports fever", &["cough", "fever"], &cfg),
            [AssertionLabel::Absent, AssertionLabel::Present]
        );
    }

    #[test]
    fn scope_limit_and_post_negation() {
        let cfg = NegexConfig::new(
            vec![cue("no", CueKind::PreNeg), cue("was ruled out", CueKind::PostNeg)],
            3,
            true,
        )
        .unwrap();
        assert_eq!(run("no a b fever", &["fever"], &cfg), [AssertionLabel::Absent]);
        assert_eq!(run("no a b c fever", &["fever"], &cfg), [AssertionLabel::Present]);
        assert_eq!(
            run("embolism a b was ruled out", &["embolism"], &cfg),
            [AssertionLabel::Absent]
        );
        assert_eq!(
            run("embolism a b c was ruled out", &["embolism"], &cfg),
            [AssertionLabel::Present]
        );
    }

    #[test]
    fn sentence_boundary_blocks_scope() {
        let cues = vec![cue("no", CueKind::PreNeg)];
        let bounded = NegexConfig::new(cues.clone(), 5, true).unwrap();
        let open = NegexConfig::new(cues, 5, false).unwrap();
        assert_eq!(
            run("Pain no. Fever today", &["Fever"], &bounded),
            [AssertionLabel::Present]
        );
        assert_eq!(run("Pain no. Fever today", &["Fever"], &open), [AssertionLabel::Absent]);
    }

    #[test]
    fn case_insensitive() {
        let cfg = NegexConfig::new(vec![cue("DENIES", CueKind::PreNeg)], 5, true).unwrap();
        assert_eq!(
            run("Patient Denies chills", &["chills"], &cfg),
            [AssertionLabel::Absent]
        );
    }

    #[test]
    fn empty_cue_list_is_config_error() {
        let cfg = NegexConfig::new(vec![], 5, true).unwrap();
        let doc = Document::new("d", "x");
        assert!(matches!(
            negex_annotate(&doc, &[], &[], &[], &cfg),
            Err(Error::Config(_))
        ));
        assert!(NegexConfig::new(vec![], 0, true).is_err());
    }

    #[test]
    fn unaligned_chunk_is_error() {
        let cfg = NegexConfig::bundled();
        let doc = Document::new("d", "no pain");
        let a = default_segmenter().analyze(&doc);
        let chunk = Chunk::new("d", "pain", 3, 7);
        assert!(negex_annotate(&doc, &a.sentences, &a.tokens, &[chunk], &cfg).is_err());
    }

    #[test]
    fn cue_file_parsing() {
        let one = NegexConfig::from_jsonl("{\"phrase\":\"no\",\"kind\":\"PRE_NEG\"}\n", "f").unwrap();
        assert_eq!(one.cues.len(), 1);
        let dup = "{\"phrase\":\"no\",\"kind\":\"PRE_NEG\"}\n\n{\"phrase\":\"No\",\"kind\":\"PSEUDO_NEG\"}\n";
        assert!(matches!(
            NegexConfig::from_jsonl(dup, "f"),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad = "{\"phrase\":\"no\",\"kind\":\"MAYBE\"}\n";
        assert!(matches!(
            NegexConfig::from_jsonl(bad, "f"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn bundled_inventory_counts() {
        // Independent count of the raw data file, line by line.
        let count = |kind: &str| {
            BUNDLED_CUES
                .lines()
                .filter(|l| l.contains(&format!("\"kind\": \"{kind}\"")) || l.contains(&format!("\"kind\":\"{kind}\"")))
                .count()
        };
        let cfg = NegexConfig::bundled();
        assert_eq!((count("PRE_NEG"), cfg.count(CueKind::PreNeg)), (40, 40));
        assert_eq!((count("POST_NEG"), cfg.count(CueKind::PostNeg)), (12, 12));
        assert_eq!((count("PSEUDO_NEG"), cfg.count(CueKind::PseudoNeg)), (22, 22));
        assert_eq!((count("TERMINATION"), cfg.count(CueKind::Termination)), (16, 16));
        assert_eq!(cfg.max_scope, DEFAULT_MAX_SCOPE);
    }
}
