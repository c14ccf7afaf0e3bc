//! Newline-delimited corpus documents, one [`AnnotatedImage`] per line. The
//! same record shape is used for detector sidecars and `detect` output.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::domain::AnnotatedImage;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed corpus record {index} (line {line}): {message}")]
    Record {
        index: usize,
        line: usize,
        message: String,
    },
    #[error("duplicate image_id `{0}` in corpus")]
    DuplicateImageId(String),
}

/// Parses a JSONL corpus. Blank lines are skipped; `index` in errors counts
/// records from zero.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<AnnotatedImage>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<stream>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let image: AnnotatedImage =
            serde_json::from_str(&line).map_err(|e| CorpusError::Record {
                index: out.len(),
                line: line_no + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(image.image_id.clone()) {
            return Err(CorpusError::DuplicateImageId(image.image_id));
        }
        out.push(image);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(std::io::BufReader::new(file))
}

pub fn write_corpus(mut out: impl Write, corpus: &[AnnotatedImage]) -> std::io::Result<()> {
    for image in corpus {
        serde_json::to_writer(&mut out, image)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
