//! Corpus-level annotation: align chunks per document, run an engine and
//! return annotations in input order.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::contextual::{fill_abstentions, ContextualEngine};
use crate::error::{Error, Result};
use crate::io::ChunkRecord;
use crate::negex::Negex;
use crate::text::{align_chunk, default_segmenter, Annotation, AssertionLabel, Chunk, Document};

#[derive(Debug, Clone)]
pub enum Engine {
    Negex(Negex),
    Contextual {
        engine: ContextualEngine,
        /// Label given to chunks no rule fired on; `None` abstains.
        fallback: Option<AssertionLabel>,
    },
}

impl Engine {
    pub fn annotate_document(&self, doc: &Document, chunks: &[Chunk]) -> Result<Vec<Annotation>> {
        let analysis = default_segmenter().analyze(doc);
        match self {
            Engine::Negex(n) => n.annotate(doc, &analysis.sentences, &analysis.tokens, chunks),
            Engine::Contextual { engine, fallback } => {
                let found = engine.annotate(doc, &analysis.sentences, &analysis.tokens, chunks)?;
                match fallback {
                    Some(label) => fill_abstentions(chunks, found, label, 1.0, crate::contextual::SOURCE),
                    None => Ok(found),
                }
            }
        }
    }
}

/// Annotates every chunk record against its document.
///
/// Errors name `origin` and the 1-based record line. Output keeps the
/// order of `records`; abstaining engines simply skip chunks.
pub fn annotate_corpus(
    engine: &Engine,
    docs: &[Document],
    records: &[ChunkRecord],
    origin: &str,
    parallel: bool,
) -> Result<Vec<Annotation>> {
    let doc_index: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i)).collect();
    let mut per_doc: Vec<Vec<usize>> = vec![Vec::new(); docs.len()];
    for (i, r) in records.iter().enumerate() {
        let d = doc_index
            .get(r.doc_id.as_str())
            .ok_or_else(|| Error::parse(origin, i + 1, format!("unknown doc_id `{}`", r.doc_id)))?;
        per_doc[*d].push(i);
    }

    let work = |(d, idxs): (usize, &Vec<usize>)| -> Result<Vec<(usize, Annotation)>> {
        if idxs.is_empty() {
            return Ok(Vec::new());
        }
        let doc = &docs[d];
        let tokens = default_segmenter().tokenize(&doc.text);
        let chunks = idxs
            .iter()
            .map(|&i| {
                align_chunk(doc, &tokens, &records[i].chunk()).map_err(|e| Error::parse(origin, i + 1, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let anns = engine.annotate_document(doc, &chunks)?;
        // Annotations follow chunk order, possibly with gaps.
        let mut out = Vec::with_capacity(anns.len());
        let mut k = 0;
        for a in anns {
            while !chunks[k].same_span(&a.chunk) {
                k += 1;
            }
            out.push((idxs[k], a));
            k += 1;
        }
        Ok(out)
    };

    let results: Vec<Result<Vec<(usize, Annotation)>>> = if parallel {
        per_doc.par_iter().enumerate().map(work).collect()
    } else {
        per_doc.iter().enumerate().map(work).collect()
    };
    let mut all = Vec::with_capacity(records.len());
    for r in results {
        all.extend(r?);
    }
    all.sort_by_key(|(i, _)| *i);
    Ok(all.into_iter().map(|(_, a)| a).collect())
}
