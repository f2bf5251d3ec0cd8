//! Masked-language-model abstraction: per-position token distributions and
//! masked-token losses behind a two-query contract, plus a deterministic
//! table-driven mock backend.
//!
//! Tokenization is character-level for Chinese: every CJK codepoint is one
//! token, and each maximal run of non-CJK characters forms a single token, so
//! the concatenation of tokens always reproduces the input text.
//!
//! Real-model adapters implement [`MlmBackend`]; nothing downstream depends
//! on which backend is installed. Precomputed model distributions can also be
//! dumped into the mock table format and served by [`MockBackend`].

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// The mask sentinel token.
pub const MASK: &str = "[MASK]";

#[derive(Debug, Error)]
pub enum MlmError {
    #[error("token sequence must be non-empty")]
    EmptySequence,
    #[error("pair boundary {boundary} out of range for {len} tokens")]
    BadBoundary { boundary: usize, len: usize },
    #[error("position {position} out of range for {len} tokens")]
    OutOfRange { position: usize, len: usize },
    #[error("position {position} is not masked")]
    NotMasked { position: usize },
    #[error("top_n must be at least 1")]
    InvalidTopN,
    #[error("distribution row {0}: {1}")]
    BadDistribution(String, String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// True for codepoints tokenized one-per-character: CJK ideographs plus CJK
/// punctuation and fullwidth forms.
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3000}'..='\u{303F}'
        | '\u{3400}'..='\u{4DBF}'
        | '\u{4E00}'..='\u{9FFF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{FF00}'..='\u{FFEF}'
        | '\u{20000}'..='\u{2A6DF}')
}

/// Split text into character-level tokens. CJK characters become single
/// tokens; maximal runs of other characters become one token each. The
/// concatenation of the result equals the input.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            tokens.push(c.to_string());
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

// ---------------------------------------------------------------------------
// TokenSequence
// ---------------------------------------------------------------------------

/// A tokenized model input: one segment, or two segments joined at
/// `pair_boundary`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    pair_boundary: Option<usize>,
}

impl TokenSequence {
    pub fn single(tokens: Vec<String>) -> Result<Self, MlmError> {
        if tokens.is_empty() {
            return Err(MlmError::EmptySequence);
        }
        Ok(TokenSequence {
            tokens,
            pair_boundary: None,
        })
    }

    pub fn pair(first: Vec<String>, second: Vec<String>) -> Result<Self, MlmError> {
        let boundary = first.len();
        let mut tokens = first;
        tokens.extend(second);
        if tokens.is_empty() {
            return Err(MlmError::EmptySequence);
        }
        if boundary == 0 || boundary >= tokens.len() {
            return Err(MlmError::BadBoundary {
                boundary,
                len: tokens.len(),
            });
        }
        Ok(TokenSequence {
            tokens,
            pair_boundary: Some(boundary),
        })
    }

    pub fn from_text(text: &str) -> Result<Self, MlmError> {
        Self::single(tokenize(text))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pair_boundary(&self) -> Option<usize> {
        self.pair_boundary
    }

    /// Copy of this sequence with one token replaced.
    pub fn with_token(&self, position: usize, token: impl Into<String>) -> Self {
        let mut copy = self.clone();
        copy.tokens[position] = token.into();
        copy
    }

    /// The lookup key used by table-driven backends: all tokens joined, a `|`
    /// at the pair boundary, and `@position` marking the queried slot.
    pub fn context_key(&self, position: usize) -> String {
        let mut key = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            if Some(i) == self.pair_boundary {
                key.push('|');
            }
            key.push_str(tok);
        }
        key.push('@');
        key.push_str(&position.to_string());
        key
    }
}

// ---------------------------------------------------------------------------
// MaskDistribution
// ---------------------------------------------------------------------------

/// Token probabilities for one masked position, sorted by descending
/// probability with codepoint order breaking ties.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDistribution {
    entries: Vec<(String, f64)>,
}

impl MaskDistribution {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probability(&self, token: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(t, _)| t == token)
            .map(|(_, p)| *p)
    }
}

/// Validate and canonicalize distribution rows: probabilities in (0, 1],
/// total at most 1 + 1e-6, no duplicate tokens, sorted (prob desc, token asc).
fn canonicalize_rows(mut rows: Vec<(String, f64)>) -> Result<Vec<(String, f64)>, MlmError> {
    let mut seen = BTreeSet::new();
    let mut total = 0.0;
    for (token, p) in &rows {
        if !(*p > 0.0 && *p <= 1.0) {
            return Err(MlmError::BadDistribution(
                token.clone(),
                format!("probability {p} outside (0, 1]"),
            ));
        }
        if !seen.insert(token.clone()) {
            return Err(MlmError::BadDistribution(
                token.clone(),
                "duplicate token".into(),
            ));
        }
        total += p;
    }
    if total > 1.0 + 1e-6 {
        return Err(MlmError::BadDistribution(
            String::new(),
            format!("probabilities sum to {total}"),
        ));
    }
    rows.sort_by(|(ta, pa), (tb, pb)| {
        pb.partial_cmp(pa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ta.cmp(tb))
    });
    Ok(rows)
}

// ---------------------------------------------------------------------------
// MlmBackend
// ---------------------------------------------------------------------------

/// The two-query masked-language-model contract.
///
/// Implementations must be deterministic: identical queries return identical
/// results within one process configuration. Queries may be issued from
/// multiple threads.
pub trait MlmBackend: Send + Sync {
    /// Top `top_n` tokens for the masked position, given full bidirectional
    /// context. The position must hold the mask sentinel.
    fn predict_masked(
        &self,
        seq: &TokenSequence,
        position: usize,
        top_n: usize,
    ) -> Result<MaskDistribution, MlmError>;

    /// Cross-entropy loss −ln p(true_token) at the masked position. Tokens
    /// with zero or unknown probability cost the backend's ceiling loss.
    fn token_loss(
        &self,
        seq: &TokenSequence,
        position: usize,
        true_token: &str,
    ) -> Result<f64, MlmError>;

    /// Number of distinct tokens the backend can predict.
    fn vocab_size(&self) -> usize;
}

// ---------------------------------------------------------------------------
// MockBackend
// ---------------------------------------------------------------------------

/// Default loss for tokens the backend assigns no probability.
pub const DEFAULT_CEILING_LOSS: f64 = 20.0;

/// A deterministic table-driven backend for model-free runs.
///
/// Distributions are keyed by [`TokenSequence::context_key`]; a key of `*`
/// supplies a fallback unigram distribution for unkeyed contexts. Output is a
/// pure function of the table and the query.
#[derive(Debug, Clone)]
pub struct MockBackend {
    table: HashMap<String, Vec<(String, f64)>>,
    fallback: Option<Vec<(String, f64)>>,
    ceiling_loss: f64,
    vocab: BTreeSet<String>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend {
            table: HashMap::new(),
            fallback: None,
            ceiling_loss: DEFAULT_CEILING_LOSS,
            vocab: BTreeSet::new(),
        }
    }

    pub fn with_ceiling_loss(mut self, loss: f64) -> Self {
        self.ceiling_loss = loss;
        self
    }

    pub fn ceiling_loss(&self) -> f64 {
        self.ceiling_loss
    }

    /// Register the distribution for one context key.
    pub fn insert(
        &mut self,
        key: impl Into<String>,
        rows: Vec<(String, f64)>,
    ) -> Result<(), MlmError> {
        let rows = canonicalize_rows(rows)?;
        for (token, _) in &rows {
            self.vocab.insert(token.clone());
        }
        self.table.insert(key.into(), rows);
        Ok(())
    }

    /// Register the fallback distribution used when no key matches.
    pub fn set_fallback(&mut self, rows: Vec<(String, f64)>) -> Result<(), MlmError> {
        let rows = canonicalize_rows(rows)?;
        for (token, _) in &rows {
            self.vocab.insert(token.clone());
        }
        self.fallback = Some(rows);
        Ok(())
    }

    /// Load a table file: `context_key<TAB>token:prob,token:prob,...` per
    /// line, with `*` as the fallback key. Blank lines and `#` comments are
    /// skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlmError> {
        let path = path.as_ref();
        let reader = File::open(path)
            .map(BufReader::new)
            .map_err(|source| MlmError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut backend = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| MlmError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, spec) = line.split_once('\t').ok_or_else(|| MlmError::Format {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "expected context_key<TAB>rows".into(),
            })?;
            let mut rows = Vec::new();
            for part in spec.split(',').filter(|p| !p.is_empty()) {
                let (token, prob) = part.rsplit_once(':').ok_or_else(|| MlmError::Format {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: format!("row {part:?} is not token:prob"),
                })?;
                let prob: f64 = prob.parse().map_err(|_| MlmError::Format {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: format!("bad probability {prob:?}"),
                })?;
                rows.push((token.to_string(), prob));
            }
            let result = if key == "*" {
                backend.set_fallback(rows)
            } else {
                backend.insert(key, rows)
            };
            result.map_err(|e| MlmError::Format {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(backend)
    }

    fn rows_for(&self, seq: &TokenSequence, position: usize) -> &[(String, f64)] {
        let key = seq.context_key(position);
        match self.table.get(&key) {
            Some(rows) => rows,
            None => self.fallback.as_deref().unwrap_or(&[]),
        }
    }

    fn check_masked(&self, seq: &TokenSequence, position: usize) -> Result<(), MlmError> {
        if position >= seq.len() {
            return Err(MlmError::OutOfRange {
                position,
                len: seq.len(),
            });
        }
        if seq.tokens()[position] != MASK {
            return Err(MlmError::NotMasked { position });
        }
        Ok(())
    }
}

impl MlmBackend for MockBackend {
    fn predict_masked(
        &self,
        seq: &TokenSequence,
        position: usize,
        top_n: usize,
    ) -> Result<MaskDistribution, MlmError> {
        if top_n == 0 {
            return Err(MlmError::InvalidTopN);
        }
        self.check_masked(seq, position)?;
        let rows = self.rows_for(seq, position);
        Ok(MaskDistribution {
            entries: rows.iter().take(top_n).cloned().collect(),
        })
    }

    fn token_loss(
        &self,
        seq: &TokenSequence,
        position: usize,
        true_token: &str,
    ) -> Result<f64, MlmError> {
        self.check_masked(seq, position)?;
        let rows = self.rows_for(seq, position);
        match rows.iter().find(|(t, _)| t == true_token) {
            Some((_, p)) => Ok(-p.ln()),
            None => Ok(self.ceiling_loss),
        }
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}
