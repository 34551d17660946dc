//! Text normalization, vocabulary construction, id encoding with padding,
//! and snippet windowing for external corpora.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercase, split on Unicode whitespace, strip leading/trailing
/// non-alphanumeric characters from each token, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Token-to-id mapping with reserved PAD=0 and UNK=1. Ids for real tokens
/// start at 2, assigned in descending frequency, ties broken lexicographically.
#[derive(Clone, Debug)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build from an iterator of already-tokenized documents.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Vocab {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for tok in doc {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { token_to_id, id_to_token }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() <= 2
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn encode_tokens(&self, tokens: &[String], max_len: usize) -> TokenSeq {
        let mut ids: Vec<u32> = tokens.iter().take(max_len).map(|t| self.id_of(t)).collect();
        let true_len = ids.iter().filter(|&&id| id != PAD_ID).count();
        ids.resize(max_len, PAD_ID);
        TokenSeq { ids, true_len, max_len }
    }

    pub fn encode_text(&self, text: &str, max_len: usize) -> TokenSeq {
        self.encode_tokens(&tokenize(text), max_len)
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter_map(|&id| self.token_of(id).map(str::to_string))
            .collect()
    }

    /// One "token<TAB>id" per line, sorted by id; byte-identical for the
    /// same corpus.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, tok) in self.id_to_token.iter().enumerate() {
            writeln!(f, "{tok}\t{i}")?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Vocab> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut id_to_token = Vec::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Data(format!("vocab line {} lacks a tab", lineno + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Data(format!("vocab line {} has bad id {id:?}", lineno + 1)))?;
            if id != id_to_token.len() {
                return Err(Error::Data(format!(
                    "vocab ids must be dense and sorted; expected {} got {}",
                    id_to_token.len(),
                    id
                )));
            }
            id_to_token.push(tok.to_string());
        }
        if id_to_token.len() < 2 || id_to_token[0] != PAD_TOKEN || id_to_token[1] != UNK_TOKEN {
            return Err(Error::Data("vocab must reserve <pad>=0 and <unk>=1".into()));
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab { token_to_id, id_to_token })
    }
}

/// An encoded, padded token sequence of fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub true_len: usize,
    pub max_len: usize,
}

impl TokenSeq {
    /// Per-position validity: true for real tokens, false for padding.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.max_len).map(|i| i < self.true_len).collect()
    }
}

/// Snippet length per the mean-training-length rule: round-half-up of the
/// mean token count, minimum 1.
pub fn avg_snippet_length(token_counts: &[usize]) -> Result<usize> {
    if token_counts.is_empty() {
        return Err(Error::Config("cannot derive snippet length from an empty dataset".into()));
    }
    let mean = token_counts.iter().sum::<usize>() as f64 / token_counts.len() as f64;
    Ok((mean.round() as usize).max(1))
}

/// A windowed span of external-corpus tokens plus provenance and, once
/// computed, its embedding.
#[derive(Clone, Debug)]
pub struct Snippet {
    pub id: usize,
    pub doc_id: String,
    pub start: usize,
    /// Exactly L tokens; the final window of a document is right-padded
    /// with the PAD token.
    pub tokens: Vec<String>,
    pub embedding: Option<Vec<f64>>,
}

impl Snippet {
    /// Window text without padding, rejoined with single spaces.
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .filter(|t| t.as_str() != PAD_TOKEN)
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Non-overlapping windows of exactly `len` tokens, stride `len`; the final
/// short window is padded with PAD. Snippet ids continue from `next_id`.
pub fn snippet_windows(doc_id: &str, doc_tokens: &[String], len: usize, next_id: usize) -> Vec<Snippet> {
    assert!(len >= 1, "snippet length must be at least 1");
    let mut out = Vec::new();
    let mut start = 0;
    while start < doc_tokens.len() {
        let end = (start + len).min(doc_tokens.len());
        let mut tokens: Vec<String> = doc_tokens[start..end].to_vec();
        tokens.resize(len, PAD_TOKEN.to_string());
        out.push(Snippet {
            id: next_id + out.len(),
            doc_id: doc_id.to_string(),
            start,
            tokens,
            embedding: None,
        });
        start += len;
    }
    out
}
