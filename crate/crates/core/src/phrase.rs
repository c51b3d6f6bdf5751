//! Token-phrase trie used by the cue matchers.

use std::collections::HashMap;

use crate::text::default_segmenter;

#[derive(Debug, Clone)]
struct Node<V> {
    children: HashMap<String, usize>,
    values: Vec<V>,
}

impl<V> Default for Node<V> {
    fn default() -> Self {
        Self {
            children: HashMap::new(),
            values: Vec::new(),
        }
    }
}

/// Maps token sequences to values. Several values may share one phrase.
#[derive(Debug, Clone)]
pub struct PhraseTrie<V> {
    nodes: Vec<Node<V>>,
}

impl<V> Default for PhraseTrie<V> {
    fn default() -> Self {
        Self {
            nodes: vec![Node::default()],
        }
    }
}

/// Splits a cue phrase with the document tokenizer, so phrases and
/// document text agree on token boundaries.
pub fn phrase_tokens(phrase: &str, fold: bool) -> Vec<String> {
    default_segmenter()
        .tokenize(phrase)
        .into_iter()
        .map(|t| if fold { t.surface.to_lowercase() } else { t.surface })
        .collect()
}

impl<V> PhraseTrie<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<S: AsRef<str>>(&mut self, tokens: &[S], value: V) {
        let mut node = 0;
        for tok in tokens {
            node = match self.nodes[node].children.get(tok.as_ref()) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(tok.as_ref().to_string(), next);
                    next
                }
            };
        }
        self.nodes[node].values.push(value);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1 && self.nodes[0].values.is_empty()
    }

    /// Every phrase starting at `start`, as `(exclusive end, values)`,
    /// shortest first.
    pub fn matches_at<'a, S: AsRef<str>>(&'a self, tokens: &[S], start: usize) -> Vec<(usize, &'a [V])> {
        let mut out = Vec::new();
        let mut node = 0;
        for (i, tok) in tokens.iter().enumerate().skip(start) {
            match self.nodes[node].children.get(tok.as_ref()) {
                Some(&next) => node = next,
                None => break,
            }
            if !self.nodes[node].values.is_empty() {
                out.push((i + 1, self.nodes[node].values.as_slice()));
            }
        }
        out
    }

    /// Longest phrase starting at `start`.
    pub fn longest_at<'a, S: AsRef<str>>(&'a self, tokens: &[S], start: usize) -> Option<(usize, &'a [V])> {
        self.matches_at(tokens, start).pop()
    }
}
