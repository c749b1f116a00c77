//! Labeled text datasets: line-delimited `{"text", "label"}` records.
//!
//! Ingestion validates rather than repairs: missing fields, empty texts,
//! and non-ASCII content are errors naming the offending line. Duplicate
//! texts are reported but kept. The canonical emit format is exactly the
//! compact serde form, so ingest → re-emit is byte-identical for files
//! written by this crate.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Sorted unique labels.
    pub label_space: Vec<String>,
    /// Pairs (earlier, later) of records sharing the same text.
    pub duplicates: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

pub fn parse_dataset(content: &str) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut duplicates = Vec::new();
    let mut labels: Vec<String> = Vec::new();

    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Dataset(format!("line {line_no}: invalid record: {e}")))?;
        let field = |name: &str| -> Result<String> {
            value
                .get(name)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| Error::Dataset(format!("line {line_no}: missing field {name:?}")))
        };
        let text = field("text")?;
        let label = field("label")?;
        if text.is_empty() {
            return Err(Error::Dataset(format!("line {line_no}: empty text")));
        }
        if label.is_empty() {
            return Err(Error::Dataset(format!("line {line_no}: empty label")));
        }
        for (what, s) in [("text", &text), ("label", &label)] {
            if !s.is_ascii() {
                return Err(Error::Dataset(format!(
                    "line {line_no}: non-ASCII {what} outside the supported domain"
                )));
            }
        }
        examples.push(Example { text, label });
    }

    for (idx, ex) in examples.iter().enumerate() {
        if let Some(&earlier) = seen.get(ex.text.as_str()) {
            duplicates.push((earlier, idx));
        } else {
            seen.insert(&ex.text, idx);
        }
        if !labels.contains(&ex.label) {
            labels.push(ex.label.clone());
        }
    }
    labels.sort();

    Ok(Dataset {
        examples,
        label_space: labels,
        duplicates,
    })
}

pub fn ingest_dataset(path: &Path) -> Result<Dataset> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content)
}

/// Canonical line-delimited form.
pub fn render_dataset(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    std::fs::write(path, render_dataset(examples)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_valid_lines_sorted_label_space() {
        let d = parse_dataset(
            "{\"text\":\"good\",\"label\":\"pos\"}\n{\"text\":\"bad\",\"label\":\"neg\"}\n",
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.label_space, vec!["neg", "pos"]);
    }

    #[test]
    fn missing_label_names_the_line() {
        let err = parse_dataset("{\"text\":\"good\",\"label\":\"pos\"}\n{\"text\":\"oops\"}\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("label"), "{err}");
    }

    #[test]
    fn empty_text_rejected() {
        let err = parse_dataset("{\"text\":\"\",\"label\":\"pos\"}\n").unwrap_err();
        assert!(err.to_string().contains("empty text"), "{err}");
    }

    #[test]
    fn non_ascii_rejected() {
        let err = parse_dataset("{\"text\":\"héllo\",\"label\":\"pos\"}\n").unwrap_err();
        assert!(err.to_string().contains("non-ASCII"), "{err}");
    }

    #[test]
    fn duplicates_reported_not_fatal() {
        let d = parse_dataset(
            "{\"text\":\"same\",\"label\":\"a\"}\n{\"text\":\"same\",\"label\":\"b\"}\n",
        )
        .unwrap();
        assert_eq!(d.duplicates, vec![(0, 1)]);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn ingest_reemit_round_trip() {
        let examples = vec![
            Example { text: "alpha beta".into(), label: "x".into() },
            Example { text: "gamma".into(), label: "y".into() },
        ];
        let rendered = render_dataset(&examples);
        let parsed = parse_dataset(&rendered).unwrap();
        assert_eq!(render_dataset(&parsed.examples), rendered);
    }
}
