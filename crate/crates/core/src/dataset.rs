//! Labeled-example records and their on-disk forms: JSON Lines datasets
//! and tab-separated synonym lexicons.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Gold,
    Pseudo,
    Augmented,
}

/// A text with a scalar label in [0,1], optional per-example sigma, and the
/// provenance tag. Pseudo examples always reference their retrieval anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<String>,
}

impl LabeledExample {
    pub fn gold(text: impl Into<String>, label: f64) -> Self {
        Self { text: text.into(), label, sigma: None, origin: Origin::Gold, anchor_id: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.label) {
            return Err(Error::Data(format!("label {} outside [0,1]", self.label)));
        }
        if let Some(s) = self.sigma {
            if s < 0.0 {
                return Err(Error::Data(format!("sigma {} must be nonnegative", s)));
            }
        }
        if self.origin == Origin::Pseudo && self.anchor_id.is_none() {
            return Err(Error::Data("pseudo example lacks an anchor_id".into()));
        }
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledExample>> {
    let f = std::io::BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let mut out = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        ex.validate()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        writeln!(f, "{}", serde_json::to_string(ex)?)?;
    }
    Ok(())
}

/// Lexicon file: one "token<TAB>synonym[,synonym...]" per line.
pub fn read_lexicon(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let f = std::io::BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let mut out = BTreeMap::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (token, synonyms) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: lexicon line lacks a tab", path.display(), lineno + 1)))?;
        let syns: Vec<String> = synonyms
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if syns.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: token {token:?} has no synonyms",
                path.display(),
                lineno + 1
            )));
        }
        out.insert(token.to_string(), syns);
    }
    Ok(out)
}

pub fn write_lexicon(path: &Path, lexicon: &BTreeMap<String, Vec<String>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (token, syns) in lexicon {
        writeln!(f, "{token}\t{}", syns.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let examples = vec![
            LabeledExample::gold("the cat sat", 1.0),
            LabeledExample {
                text: "windowed span".into(),
                label: 0.25,
                sigma: Some(0.1),
                origin: Origin::Pseudo,
                anchor_id: Some("gold:0".into()),
            },
        ];
        write_jsonl(&path, &examples).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, examples);
    }

    #[test]
    fn invalid_records_rejected() {
        let bad = LabeledExample { label: 1.5, ..LabeledExample::gold("x", 0.0) };
        assert!(bad.validate().is_err());
        let orphan = LabeledExample {
            origin: Origin::Pseudo,
            anchor_id: None,
            ..LabeledExample::gold("y", 0.5)
        };
        assert!(orphan.validate().is_err());
    }

    #[test]
    fn lexicon_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        let mut lex = BTreeMap::new();
        lex.insert("cat".to_string(), vec!["feline".to_string(), "kitty".to_string()]);
        lex.insert("sat".to_string(), vec!["rested".to_string()]);
        write_lexicon(&path, &lex).unwrap();
        assert_eq!(read_lexicon(&path).unwrap(), lex);
    }
}
