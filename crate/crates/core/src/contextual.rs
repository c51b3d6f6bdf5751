//! Contextual assertion rules.
//!
//! Each rule targets one label and fires on a chunk when one of its
//! triggers is close enough:
//!
//! - a prefix cue whose last token is within `scope_before` tokens left of
//!   the chunk,
//! - a suffix cue whose first token is within `scope_after` tokens right of
//!   the chunk,
//! - a regex match over the sentence text within `scope_after` characters
//!   of the chunk, on the side given by the pattern's anchor.
//!
//! Triggers only count inside the chunk's sentence, and a trigger is
//! discarded when an exception cue overlaps it. Rules are tried in
//! descending priority and the first one that fires labels the chunk.
//! When nothing fires the chunk gets no annotation.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_jsonl, read_to_string};
use crate::phrase::{phrase_tokens, PhraseTrie};
use crate::text::{char_byte_offsets, sentence_of, Annotation, AssertionLabel, Chunk, Document, Sentence, Token};

pub const SOURCE: &str = "contextual";
pub const DEFAULT_SCOPE_BEFORE: usize = 9;
pub const DEFAULT_SCOPE_AFTER: usize = 15;
pub const DEFAULT_CONFIDENCE: f64 = 0.9;

/// Rule files shipped with the crate, as `(file name, content)`.
pub const BUNDLED_RULES: [(&str, &str); 5] = [
    (
        "associated_with_someone_else.jsonl",
        include_str!("../data/rules/associated_with_someone_else.jsonl"),
    ),
    ("absent.jsonl", include_str!("../data/rules/absent.jsonl")),
    ("possible.jsonl", include_str!("../data/rules/possible.jsonl")),
    ("conditional.jsonl", include_str!("../data/rules/conditional.jsonl")),
    ("hypothetical.jsonl", include_str!("../data/rules/hypothetical.jsonl")),
];

/// Which side of the chunk a regex match must lie on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// Match starts before the chunk.
    Pre,
    /// Match ends after the chunk.
    Post,
    #[default]
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternSpec {
    Plain(String),
    Anchored {
        pattern: String,
        #[serde(default)]
        anchor: Anchor,
    },
}

impl PatternSpec {
    fn parts(&self) -> (&str, Anchor) {
        match self {
            PatternSpec::Plain(p) => (p, Anchor::Any),
            PatternSpec::Anchored { pattern, anchor } => (pattern, *anchor),
        }
    }
}

/// One line of a rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextualRule {
    pub label: AssertionLabel,
    #[serde(default)]
    pub prefix_cues: Vec<String>,
    #[serde(default)]
    pub suffix_cues: Vec<String>,
    #[serde(default)]
    pub regex_patterns: Vec<PatternSpec>,
    #[serde(default)]
    pub exception_cues: Vec<String>,
    #[serde(default)]
    pub scope_before: Option<usize>,
    #[serde(default)]
    pub scope_after: Option<usize>,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default)]
    pub priority: i64,
    #[serde(default)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    regex: Regex,
    anchor: Anchor,
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub label: AssertionLabel,
    pub scope_before: usize,
    pub scope_after: usize,
    pub case_sensitive: bool,
    pub priority: i64,
    pub confidence: f64,
    prefix: PhraseTrie<()>,
    suffix: PhraseTrie<()>,
    exceptions: PhraseTrie<()>,
    patterns: Vec<CompiledPattern>,
}

fn compile_phrases(phrases: &[String], fold: bool, origin: &str, line: usize) -> Result<PhraseTrie<()>> {
    let mut trie = PhraseTrie::new();
    for p in phrases {
        let toks = phrase_tokens(p, fold);
        if toks.is_empty() {
            return Err(Error::parse(origin, line, "empty cue phrase"));
        }
        trie.insert(&toks, ());
    }
    Ok(trie)
}

impl CompiledRule {
    /// Validates and compiles one rule. `line` is only used in error messages.
    pub fn compile(rule: &ContextualRule, origin: &str, line: usize) -> Result<Self> {
        if !rule.label.is_canonical() {
            return Err(Error::parse(origin, line, format!("unknown label `{}`", rule.label)));
        }
        if rule.prefix_cues.is_empty() && rule.suffix_cues.is_empty() && rule.regex_patterns.is_empty() {
            return Err(Error::parse(
                origin,
                line,
                "rule has no prefix cue, suffix cue or pattern",
            ));
        }
        let confidence = rule.confidence.unwrap_or(DEFAULT_CONFIDENCE);
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::parse(
                origin,
                line,
                format!("confidence {confidence} outside (0, 1]"),
            ));
        }
        let fold = !rule.case_sensitive;
        let patterns = rule
            .regex_patterns
            .iter()
            .map(|spec| {
                let (pattern, anchor) = spec.parts();
                RegexBuilder::new(pattern)
                    .case_insensitive(fold)
                    .build()
                    .map(|regex| CompiledPattern { regex, anchor })
                    .map_err(|e| Error::Pattern {
                        pattern: pattern.to_string(),
                        message: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: rule.label.clone(),
            scope_before: rule.scope_before.unwrap_or(DEFAULT_SCOPE_BEFORE),
            scope_after: rule.scope_after.unwrap_or(DEFAULT_SCOPE_AFTER),
            case_sensitive: rule.case_sensitive,
            priority: rule.priority,
            confidence,
            prefix: compile_phrases(&rule.prefix_cues, fold, origin, line)?,
            suffix: compile_phrases(&rule.suffix_cues, fold, origin, line)?,
            exceptions: compile_phrases(&rule.exception_cues, fold, origin, line)?,
            patterns,
        })
    }
}

/// Compiled, immutable rule set. Rules are kept in evaluation order:
/// descending priority, declaration order among equal priorities.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    /// Builds a rule set from compiled rules. Priorities must be unique
    /// within a label.
    pub fn new(rules: Vec<CompiledRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert((r.label.clone(), r.priority)) {
                return Err(Error::Config(format!(
                    "duplicate priority {} for label `{}`",
                    r.priority, r.label
                )));
            }
        }
        let mut rules = rules;
        rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
        Ok(Self { rules })
    }

    /// Parses and compiles one or more rule files given as `(content, origin)`.
    pub fn from_sources<'a>(sources: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut compiled = Vec::new();
        let mut seen: HashMap<(AssertionLabel, i64), (String, usize)> = HashMap::new();
        for (content, origin) in sources {
            let lines = content
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, _)| i + 1);
            let rules: Vec<ContextualRule> = parse_jsonl(content, origin)?;
            for (rule, line) in rules.iter().zip(lines) {
                let rule = CompiledRule::compile(rule, origin, line)?;
                if let Some((o, l)) = seen.insert((rule.label.clone(), rule.priority), (origin.to_string(), line)) {
                    return Err(Error::parse(
                        origin,
                        line,
                        format!(
                            "priority {} for label `{}` already used at {o}:{l}",
                            rule.priority, rule.label
                        ),
                    ));
                }
                compiled.push(rule);
            }
        }
        if compiled.is_empty() {
            return Err(Error::parse("rules", 0, "no rules"));
        }
        Self::new(compiled)
    }

    /// The bundled starter rules.
    pub fn bundled() -> Self {
        Self::from_sources(BUNDLED_RULES.iter().map(|(name, content)| (*content, *name)))
            .expect("bundled rules compile")
    }

    pub fn rules(&self) -> &[CompiledRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Compiles a rule file, or every `*.jsonl` file of a directory in name order.
pub fn compile_rules(path: &Path) -> Result<RuleSet> {
    let files = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let contents = files
        .iter()
        .map(|p| Ok((read_to_string(p)?, p.display().to_string())))
        .collect::<Result<Vec<_>>>()?;
    RuleSet::from_sources(contents.iter().map(|(c, o)| (c.as_str(), o.as_str())))
}

/// Char span `[begin, end)` of a trigger or exception occurrence.
type Span = (usize, usize);

#[derive(Debug, Default)]
struct SentenceHits {
    prefix: Vec<(usize, usize)>,
    suffix: Vec<(usize, usize)>,
    exceptions: Vec<Span>,
    patterns: Vec<(Span, Anchor)>,
}

fn overlaps(a: Span, b: Span) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn occurrences<S: AsRef<str>>(trie: &PhraseTrie<()>, tokens: &[S], from: usize, to: usize) -> Vec<(usize, usize)> {
    let window = &tokens[..to];
    let mut out = Vec::new();
    for start in from..to {
        for (end, _) in trie.matches_at(window, start) {
            out.push((start, end));
        }
    }
    out
}

/// Per-document matching state shared by all chunks of the document.
struct DocContext<'a> {
    doc: &'a Document,
    sentences: &'a [Sentence],
    tokens: &'a [Token],
    exact: Vec<&'a str>,
    folded: Vec<String>,
    offsets: Vec<usize>,
    cache: RefCell<HashMap<(usize, usize), std::rc::Rc<SentenceHits>>>,
}

impl<'a> DocContext<'a> {
    fn new(doc: &'a Document, sentences: &'a [Sentence], tokens: &'a [Token]) -> Self {
        Self {
            doc,
            sentences,
            tokens,
            exact: tokens.iter().map(|t| t.surface.as_str()).collect(),
            folded: tokens.iter().map(|t| t.surface.to_lowercase()).collect(),
            offsets: char_byte_offsets(&doc.text),
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn char_span(&self, first: usize, end: usize) -> Span {
        (self.tokens[first].begin, self.tokens[end - 1].end)
    }

    fn hits(&self, rule_idx: usize, rule: &CompiledRule, sentence: &Sentence) -> std::rc::Rc<SentenceHits> {
        let key = (rule_idx, sentence.index);
        if let Some(h) = self.cache.borrow().get(&key) {
            return h.clone();
        }
        let (from, to) = (sentence.token_begin, sentence.token_end + 1);
        let mut hits = SentenceHits::default();
        if rule.case_sensitive {
            hits.prefix = occurrences(&rule.prefix, &self.exact, from, to);
            hits.suffix = occurrences(&rule.suffix, &self.exact, from, to);
            hits.exceptions = occurrences(&rule.exceptions, &self.exact, from, to)
                .into_iter()
                .map(|(s, e)| self.char_span(s, e))
                .collect();
        } else {
            hits.prefix = occurrences(&rule.prefix, &self.folded, from, to);
            hits.suffix = occurrences(&rule.suffix, &self.folded, from, to);
            hits.exceptions = occurrences(&rule.exceptions, &self.folded, from, to)
                .into_iter()
                .map(|(s, e)| self.char_span(s, e))
                .collect();
        }
        if !rule.patterns.is_empty() {
            let base = self.offsets[sentence.begin];
            let text = &self.doc.text[base..self.offsets[sentence.end]];
            let to_char = |byte: usize| self.offsets.partition_point(|&b| b < base + byte);
            for p in &rule.patterns {
                for m in p.regex.find_iter(text).filter(|m| !m.is_empty()) {
                    hits.patterns.push(((to_char(m.start()), to_char(m.end())), p.anchor));
                }
            }
        }
        let hits = std::rc::Rc::new(hits);
        self.cache.borrow_mut().insert(key, hits.clone());
        hits
    }

    /// Whether `rule` fires for the chunk spanning tokens `first..=last`.
    fn fires(&self, rule_idx: usize, rule: &CompiledRule, first: usize, last: usize, chunk: Span) -> bool {
        let (Some(s_first), Some(s_last)) = (sentence_of(self.sentences, first), sentence_of(self.sentences, last))
        else {
            return false;
        };
        let before = self.hits(rule_idx, rule, s_first);
        let suppressed = |hits: &SentenceHits, span: Span| hits.exceptions.iter().any(|&x| overlaps(x, span));

        let prefix_fires = before.prefix.iter().any(|&(s, e)| {
            e <= first && first - (e - 1) <= rule.scope_before && !suppressed(&before, self.char_span(s, e))
        });
        if prefix_fires {
            return true;
        }

        let pattern_fires = before.patterns.iter().any(|&((mb, me), anchor)| {
            let gap = chunk.0.checked_sub(me).or(mb.checked_sub(chunk.1)).unwrap_or(0);
            let side = match anchor {
                Anchor::Pre => mb < chunk.0,
                Anchor::Post => me > chunk.1,
                Anchor::Any => true,
            };
            side && gap <= rule.scope_after && !suppressed(&before, (mb, me))
        });
        if pattern_fires {
            return true;
        }

        let after = if s_last.index == s_first.index {
            before
        } else {
            self.hits(rule_idx, rule, s_last)
        };
        after
            .suffix
            .iter()
            .any(|&(s, e)| s > last && s - last <= rule.scope_after && !suppressed(&after, self.char_span(s, e)))
    }
}

/// Compiled contextual annotator.
#[derive(Debug, Clone)]
pub struct ContextualEngine {
    rules: RuleSet,
}

impl ContextualEngine {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Annotates the chunks for which some rule fires, in chunk order.
    pub fn annotate(
        &self,
        doc: &Document,
        sentences: &[Sentence],
        tokens: &[Token],
        chunks: &[Chunk],
    ) -> Result<Vec<Annotation>> {
        let ctx = DocContext::new(doc, sentences, tokens);
        let mut out = Vec::new();
        for chunk in chunks {
            let (first, last) =
                chunk
                    .token_span()
                    .filter(|&(_, l)| l < tokens.len())
                    .ok_or_else(|| Error::Alignment {
                        doc_id: doc.doc_id.clone(),
                        begin: chunk.begin,
                        end: chunk.end,
                        reason: "chunk is not aligned to this document's tokens".into(),
                    })?;
            let span = (chunk.begin, chunk.end);
            if let Some((_, rule)) = self
                .rules
                .rules
                .iter()
                .enumerate()
                .find(|(i, r)| ctx.fires(*i, r, first, last, span))
            {
                out.push(Annotation::new(
                    chunk.clone(),
                    rule.label.clone(),
                    rule.confidence,
                    SOURCE,
                )?);
            }
        }
        Ok(out)
    }
}

pub fn contextual_annotate(
    doc: &Document,
    sentences: &[Sentence],
    tokens: &[Token],
    chunks: &[Chunk],
    rules: &RuleSet,
) -> Result<Vec<Annotation>> {
    ContextualEngine::new(rules.clone()).annotate(doc, sentences, tokens, chunks)
}

/// Gives every chunk without an annotation the `fallback` label.
/// `annotations` must be a subsequence of `chunks` in the same order, as
/// produced by [`ContextualEngine::annotate`].
pub fn fill_abstentions(
    chunks: &[Chunk],
    annotations: Vec<Annotation>,
    fallback: &AssertionLabel,
    confidence: f64,
    source: &str,
) -> Result<Vec<Annotation>> {
    let mut given = annotations.into_iter().peekable();
    chunks
        .iter()
        .map(|c| match given.next_if(|a| a.chunk.same_span(c)) {
            Some(a) => Ok(a),
            None => Annotation::new(c.clone(), fallback.clone(), confidence, source),
        })
        .collect()
}
