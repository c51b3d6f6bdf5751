//! Converter for the i2b2 2010 assertion release (`.txt` notes plus `.ast`
//! assertion files) into the document and chunk JSON-lines schema.
//!
//! An `.ast` line looks like
//! `c="chest pain" 12:3 12:4||t="problem"||a="absent"`, where offsets are
//! 1-based line numbers and 0-based whitespace-token indices, both ends
//! inclusive.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::io::{read_to_string, ChunkRecord};
use crate::text::{AssertionLabel, Document};

pub const SOURCE: &str = "i2b2";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstEntry {
    pub concept: String,
    pub start: (usize, usize),
    pub end: (usize, usize),
    pub kind: String,
    pub assertion: String,
}

fn ast_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^c="(.*)" (\d+):(\d+) (\d+):(\d+)\|\|t="([^"]*)"\|\|a="([^"]*)"\s*$"#).expect("valid")
    })
}

pub fn parse_ast_line(line: &str) -> Option<AstEntry> {
    let c = ast_pattern().captures(line)?;
    let n = |i: usize| c[i].parse::<usize>().ok();
    Some(AstEntry {
        concept: c[1].to_string(),
        start: (n(2)?, n(3)?),
        end: (n(4)?, n(5)?),
        kind: c[6].to_string(),
        assertion: c[7].to_string(),
    })
}

/// Char offsets `(begin, end)` of every whitespace token, per line.
fn line_tokens(text: &str) -> Vec<Vec<(usize, usize)>> {
    let mut lines = Vec::new();
    let mut current = Vec::new();
    let mut start: Option<usize> = None;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                current.push((s, pos));
            }
            if ch == '\n' {
                lines.push(std::mem::take(&mut current));
            }
        } else if start.is_none() {
            start = Some(pos);
        }
        pos += 1;
    }
    if let Some(s) = start {
        current.push((s, pos));
    }
    lines.push(current);
    lines
}

/// Converts one note. `origin` names the `.ast` file in error messages.
pub fn convert(doc_id: &str, txt: &str, ast: &str, origin: &str) -> Result<(Document, Vec<ChunkRecord>)> {
    let doc = Document::new(doc_id, txt);
    let lines = line_tokens(txt);
    let chars: Vec<char> = txt.chars().collect();
    let locate = |(l, t): (usize, usize), n: usize| -> Result<(usize, usize)> {
        l.checked_sub(1)
            .and_then(|l| lines.get(l))
            .and_then(|toks| toks.get(t))
            .copied()
            .ok_or_else(|| Error::parse(origin, n, format!("offset {l}:{t} is outside the note")))
    };
    let mut chunks = Vec::new();
    for (i, line) in ast.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_ast_line(line).ok_or_else(|| Error::parse(origin, i + 1, "malformed assertion line"))?;
        if entry.kind != "problem" {
            continue;
        }
        let label = AssertionLabel::canonical(&entry.assertion)
            .ok_or_else(|| Error::parse(origin, i + 1, format!("unknown assertion `{}`", entry.assertion)))?;
        let (begin, _) = locate(entry.start, i + 1)?;
        let (_, end) = locate(entry.end, i + 1)?;
        if end <= begin {
            return Err(Error::parse(origin, i + 1, "empty or reversed span"));
        }
        let covered: String = chars[begin..end].iter().collect();
        chunks.push(ChunkRecord {
            doc_id: doc_id.to_string(),
            text: covered.split_whitespace().collect::<Vec<_>>().join(" "),
            begin,
            end,
            token_begin: None,
            token_end: None,
            label: Some(label),
            confidence: Some(1.0),
            source: Some(SOURCE.to_string()),
        });
    }
    chunks.sort_by_key(|c| (c.begin, c.end));
    Ok((doc, chunks))
}

/// Converts every `<name>.txt` in `txt_dir` that has a matching
/// `<name>.ast` in `ast_dir`, in file-name order.
pub fn convert_dirs(txt_dir: &Path, ast_dir: &Path) -> Result<(Vec<Document>, Vec<ChunkRecord>)> {
    let mut names: Vec<_> = std::fs::read_dir(txt_dir)
        .map_err(|e| Error::io(txt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    names.sort();
    let mut docs = Vec::new();
    let mut chunks = Vec::new();
    for txt_path in names {
        let stem = txt_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let ast_path = ast_dir.join(format!("{stem}.ast"));
        if !ast_path.is_file() {
            continue;
        }
        let (doc, mut c) = convert(
            &stem,
            &read_to_string(&txt_path)?,
            &read_to_string(&ast_path)?,
            &ast_path.display().to_string(),
        )?;
        docs.push(doc);
        chunks.append(&mut c);
    }
    if docs.is_empty() {
        return Err(Error::Config(format!(
            "no .txt/.ast pairs found in {} and {}",
            txt_dir.display(),
            ast_dir.display()
        )));
    }
    Ok((docs, chunks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{align_chunk, default_segmenter};

    const NOTE: &str = "Admission Date :\nThere was no evidence of diarrhea during stay .\nMother suffer MI in her 50 's , died at age 59 .\n";

    #[test]
    fn parses_line() {
        let e = parse_ast_line(r#"c="diarrhea" 2:5 2:5||t="problem"||a="absent""#).unwrap();
        assert_eq!(e.start, (2, 5));
        assert_eq!(e.assertion, "absent");
        assert!(parse_ast_line("c=x 1:2").is_none());
    }

    #[test]
    fn converts_to_aligned_chunks() {
        let ast = "c=\"mi\" 3:2 3:2||t=\"problem\"||a=\"associated_with_someone_else\"\n\
                   c=\"diarrhea\" 2:5 2:5||t=\"problem\"||a=\"absent\"\n\
                   c=\"her 50 's\" 3:4 3:6||t=\"test\"||a=\"present\"\n";
        let (doc, chunks) = convert("n1", NOTE, ast, "n1.ast").unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "diarrhea");
        assert_eq!(chunks[0].label, Some(AssertionLabel::Absent));
        assert_eq!(chunks[1].text, "MI");
        let tokens = default_segmenter().tokenize(&doc.text);
        for c in &chunks {
            align_chunk(&doc, &tokens, &c.chunk()).unwrap();
        }
    }

    #[test]
    fn reports_bad_lines() {
        let err = convert("n1", NOTE, "\nc=\"x\" 9:0 9:0||t=\"problem\"||a=\"absent\"", "n1.ast").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = convert("n1", NOTE, "garbage", "n1.ast").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
