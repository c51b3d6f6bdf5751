//! Seeded synthetic clinical notes with gold assertion labels.
//!
//! Sentences come from small per-label templates; `{}` marks the entity
//! slot. Every template is written so the bundled contextual rules (with a
//! `present` fallback) recover its label, which makes the corpus usable
//! both for throughput runs and for end-to-end sanity checks.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{write_jsonl, ChunkRecord};
use crate::text::{AssertionLabel, Document};

pub const SOURCE: &str = "synth";
/// Seed of the 500-chunk corpus shipped under `data/fixtures/synth500`.
pub const BUNDLED_SEED: u64 = 500;
pub const BUNDLED_CHUNKS: usize = 500;
pub const MAX_PER_DOC: usize = 8;

const TEMPLATES: &[(&str, &[&str])] = &[
    (
        "present",
        &[
            "Overnight, the patient became {}, dropping to the 80 's.",
            "The patient reports {} since yesterday.",
            "Exam is notable for {} on the left.",
            "She was admitted with {} and started on fluids.",
        ],
    ),
    (
        "absent",
        &[
            "There was no evidence of {} during the hospital stay.",
            "Patient denies {} at this time.",
            "The workup was negative for {} today.",
            "He has no history of {} per family.",
        ],
    ),
    (
        "possible",
        &[
            "Small stroke, nearly recovered, likely {}.",
            "Imaging is suspicious for {} in the right lobe.",
            "Differential includes {} at this point.",
            "Findings could be {} versus artifact.",
        ],
    ),
    (
        "conditional",
        &[
            "He gets {} with one flight of stairs.",
            "She reports {} on exertion.",
            "The patient notes {} when walking uphill.",
        ],
    ),
    (
        "hypothetical",
        &[
            "Hydrocodone 5 mg with Tylenol , one to two tablets every four hours p.r.n. {}.",
            "Return if {} develops over the weekend.",
            "Call for {} or other new symptoms.",
        ],
    ),
    (
        "associated_with_someone_else",
        &[
            "Mother suffer {} in her 50 's, died at age 59.",
            "Family history of {} noted on intake.",
            "Her brother was treated for {} last year.",
        ],
    ),
];

const ENTITIES: &[&str] = &[
    "chest pain",
    "shortness of breath",
    "short of breath",
    "fever",
    "cough",
    "nausea",
    "headache",
    "hypoxic",
    "diarrhea",
    "abdominal pain",
    "pneumonia",
    "edema",
    "rash",
    "dizziness",
    "palpitations",
    "MI",
    "embolic disease",
    "back pain",
    "wheezing",
    "chills",
];

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    /// Chunk records carrying the gold label.
    pub gold: Vec<ChunkRecord>,
}

impl SynthCorpus {
    /// Same records with labels and sources stripped, as annotate input.
    pub fn chunks(&self) -> Vec<ChunkRecord> {
        self.gold
            .iter()
            .map(|r| ChunkRecord {
                label: None,
                confidence: None,
                source: None,
                ..r.clone()
            })
            .collect()
    }

    /// Writes `docs.jsonl`, `chunks.jsonl` and `gold.jsonl` into `dir`,
    /// returning the three paths.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = ["docs.jsonl", "chunks.jsonl", "gold.jsonl"].map(|n| dir.join(n));
        write_jsonl(&paths[0], &self.documents)?;
        write_jsonl(&paths[1], &self.chunks())?;
        write_jsonl(&paths[2], &self.gold)?;
        Ok(paths)
    }
}

pub fn bundled() -> SynthCorpus {
    generate(BUNDLED_SEED, BUNDLED_CHUNKS, MAX_PER_DOC)
}

/// Generates `n_chunks` labeled chunks, one per sentence, grouped into
/// documents of 1 to `max_per_doc` sentences.
pub fn generate(seed: u64, n_chunks: usize, max_per_doc: usize) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_per_doc = max_per_doc.max(1);
    let mut documents = Vec::new();
    let mut gold = Vec::with_capacity(n_chunks);
    let mut made = 0;
    while made < n_chunks {
        let n = rng.gen_range(1..=max_per_doc).min(n_chunks - made);
        let doc_id = format!("synth-{:05}", documents.len());
        let mut text = String::new();
        for _ in 0..n {
            let (label, templates) = TEMPLATES.choose(&mut rng).expect("templates");
            let template = templates.choose(&mut rng).expect("template");
            let entity = ENTITIES.choose(&mut rng).expect("entity");
            if !text.is_empty() {
                text.push(' ');
            }
            let (head, tail) = template.split_once("{}").expect("slot");
            text.push_str(head);
            let begin = text.chars().count();
            text.push_str(entity);
            let end = text.chars().count();
            text.push_str(tail);
            gold.push(ChunkRecord {
                doc_id: doc_id.clone(),
                text: entity.to_string(),
                begin,
                end,
                token_begin: None,
                token_end: None,
                label: Some(AssertionLabel::canonical(label).expect("canonical")),
                confidence: Some(1.0),
                source: Some(SOURCE.to_string()),
            });
        }
        documents.push(Document::new(doc_id, text));
        made += n;
    }
    SynthCorpus { documents, gold }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contextual::{ContextualEngine, RuleSet};
    use crate::runner::{annotate_corpus, Engine};

    #[test]
    fn seeded_and_sized() {
        let a = generate(7, 120, 6);
        let b = generate(7, 120, 6);
        assert_eq!(a.gold.len(), 120);
        assert_eq!(
            serde_json::to_string(&a.gold).unwrap(),
            serde_json::to_string(&b.gold).unwrap()
        );
        assert_ne!(
            serde_json::to_string(&generate(8, 120, 6).gold).unwrap(),
            serde_json::to_string(&a.gold).unwrap()
        );
    }

    #[test]
    fn stored_corpus_matches_generator() {
        let dir = tempfile::tempdir().unwrap();
        let written = bundled().write(dir.path()).unwrap();
        let stored = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/synth500");
        for p in written {
            let name = p.file_name().unwrap();
            assert_eq!(
                std::fs::read_to_string(&p).unwrap(),
                std::fs::read_to_string(stored.join(name)).unwrap(),
                "{name:?}"
            );
        }
    }

    #[test]
    fn bundled_rules_recover_gold() {
        let corpus = generate(11, 600, 8);
        let engine = Engine::Contextual {
            engine: ContextualEngine::new(RuleSet::bundled()),
            fallback: Some(AssertionLabel::Present),
        };
        let out = annotate_corpus(&engine, &corpus.documents, &corpus.chunks(), "synth", false).unwrap();
        assert_eq!(out.len(), corpus.gold.len());
        for (a, g) in out.iter().zip(&corpus.gold) {
            let doc = corpus.documents.iter().find(|d| d.doc_id == g.doc_id).unwrap();
            assert_eq!(Some(&a.label), g.label.as_ref(), "{} in {:?}", g.text, doc.text);
        }
    }
}
