//! JSON-lines readers and writers for documents, chunks and annotations.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{Annotation, AssertionLabel, Chunk, Document};

/// One line of a chunk, gold or annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub doc_id: String,
    pub text: String,
    pub begin: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_begin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<AssertionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl ChunkRecord {
    pub fn chunk(&self) -> Chunk {
        Chunk {
            doc_id: self.doc_id.clone(),
            text: self.text.clone(),
            begin: self.begin,
            end: self.end,
            token_begin: self.token_begin,
            token_end: self.token_end,
        }
    }
}

impl From<&Annotation> for ChunkRecord {
    fn from(a: &Annotation) -> Self {
        ChunkRecord {
            doc_id: a.chunk.doc_id.clone(),
            text: a.chunk.text.clone(),
            begin: a.chunk.begin,
            end: a.chunk.end,
            token_begin: a.chunk.token_begin,
            token_end: a.chunk.token_end,
            label: Some(a.label.clone()),
            confidence: Some(a.confidence),
            source: Some(a.source.clone()),
        }
    }
}

/// Parses JSON-lines text. Blank lines are skipped; errors carry the
/// 1-based line number and `origin` (usually the file path).
pub fn parse_jsonl<T: DeserializeOwned>(content: &str, origin: &str) -> Result<Vec<T>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(origin, i + 1, e.to_string())))
        .collect()
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_to_string(path)?, &path.display().to_string())
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for (i, d) in docs.iter().enumerate() {
        if d.doc_id.is_empty() {
            return Err(Error::parse(path.display().to_string(), i + 1, "empty doc_id"));
        }
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::parse(
                path.display().to_string(),
                i + 1,
                format!("duplicate doc_id `{}`", d.doc_id),
            ));
        }
    }
    Ok(docs)
}

pub fn read_chunks(path: &Path) -> Result<Vec<ChunkRecord>> {
    read_jsonl(path)
}

/// Converts labeled records into annotations. Missing confidence defaults
/// to 1.0 and missing source to `default_source`.
pub fn records_to_annotations(records: &[ChunkRecord], origin: &str, default_source: &str) -> Result<Vec<Annotation>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let label = r
                .label
                .clone()
                .ok_or_else(|| Error::parse(origin, i + 1, "missing label"))?;
            let source = r.source.clone().unwrap_or_else(|| default_source.to_string());
            Annotation::new(r.chunk(), label, r.confidence.unwrap_or(1.0), source)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))
        })
        .collect()
}

pub fn read_annotations(path: &Path, default_source: &str) -> Result<Vec<Annotation>> {
    records_to_annotations(&read_chunks(path)?, &path.display().to_string(), default_source)
}

pub fn annotations_to_jsonl(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        out.push_str(&serde_json::to_string(&ChunkRecord::from(a)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_string(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    write_string(path, &annotations_to_jsonl(annotations))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    write_string(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_has_line_number() {
        let content = "{\"doc_id\":\"a\",\"text\":\"x\"}\n\n{\"doc_id\":1}\n";
        let err = parse_jsonl::<Document>(content, "docs.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn annotation_round_trip() {
        let mut chunk = Chunk::new("d1", "chest pain", 10, 20);
        chunk.token_begin = Some(2);
        chunk.token_end = Some(3);
        let a = Annotation::new(chunk, AssertionLabel::Absent, 0.9, "negex").unwrap();
        let text = annotations_to_jsonl(std::slice::from_ref(&a));
        assert_eq!(
            text,
            "{\"doc_id\":\"d1\",\"text\":\"chest pain\",\"begin\":10,\"end\":20,\"token_begin\":2,\"token_end\":3,\"label\":\"absent\",\"confidence\":0.9,\"source\":\"negex\"}\n"
        );
        let records: Vec<ChunkRecord> = parse_jsonl(&text, "mem").unwrap();
        let back = records_to_annotations(&records, "mem", "x").unwrap();
        assert_eq!(back, vec![a]);
    }

    #[test]
    fn defaults_for_external_streams() {
        let records: Vec<ChunkRecord> = parse_jsonl(
            "{\"doc_id\":\"d\",\"text\":\"t\",\"begin\":0,\"end\":1,\"label\":\"NEGATION\"}",
            "m",
        )
        .unwrap();
        let a = records_to_annotations(&records, "m", "aws").unwrap();
        assert_eq!(a[0].confidence, 1.0);
        assert_eq!(a[0].source, "aws");
        assert_eq!(a[0].label, AssertionLabel::Raw("NEGATION".into()));
    }

    #[test]
    fn missing_label_is_parse_error() {
        let records: Vec<ChunkRecord> =
            parse_jsonl("{\"doc_id\":\"d\",\"text\":\"t\",\"begin\":0,\"end\":1}", "m").unwrap();
        assert!(matches!(
            records_to_annotations(&records, "m", "s"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
