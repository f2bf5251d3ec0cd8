//! The five lexical resources consumed by generation and ranking: a synonym
//! thesaurus, a word-frequency table, a valid-word list, a sememe knowledge
//! base, and a word-embedding table.
//!
//! Every type is immutable after load and safe to share across threads. File
//! formats are plain text so fixtures can be authored by hand; see each
//! loader for the exact line format.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::Word;

#[derive(Debug, Error)]
pub enum LexiconError {
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

fn open(path: &Path) -> Result<BufReader<File>, LexiconError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn format_err(path: &Path, line: usize, reason: impl Into<String>) -> LexiconError {
    LexiconError::Format {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// SynonymThesaurus
// ---------------------------------------------------------------------------

/// Words organized into synonym groups; one word may appear in several groups.
#[derive(Debug, Clone, Default)]
pub struct SynonymThesaurus {
    groups: HashMap<Word, Vec<usize>>,
    members: Vec<BTreeSet<Word>>,
}

impl SynonymThesaurus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one synonym group. Single-word groups are kept; they make the word
    /// known to the thesaurus without contributing substitutes.
    pub fn add_group(&mut self, words: impl IntoIterator<Item = Word>) {
        let set: BTreeSet<Word> = words.into_iter().collect();
        if set.is_empty() {
            return;
        }
        let gid = self.members.len();
        for word in &set {
            self.groups.entry(word.clone()).or_default().push(gid);
        }
        self.members.push(set);
    }

    /// Load from text: one group per line, words separated by single spaces.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let mut thesaurus = Self::new();
        for (idx, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut words = Vec::new();
            for token in line.split(' ').filter(|t| !t.is_empty()) {
                let word = Word::new(token)
                    .map_err(|e| format_err(path, idx + 1, e.to_string()))?;
                words.push(word);
            }
            thesaurus.add_group(words);
        }
        Ok(thesaurus)
    }

    pub fn contains(&self, word: &Word) -> bool {
        self.groups.contains_key(word)
    }

    /// Union of the word's groups, minus the word itself. Unknown words yield
    /// the empty set.
    pub fn lookup_synonyms(&self, word: &Word) -> BTreeSet<Word> {
        let mut out = BTreeSet::new();
        if let Some(gids) = self.groups.get(word) {
            for &gid in gids {
                for member in &self.members[gid] {
                    if member != word {
                        out.insert(member.clone());
                    }
                }
            }
        }
        out
    }

    pub fn word_count(&self) -> usize {
        self.groups.len()
    }
}

// ---------------------------------------------------------------------------
// FrequencyTable
// ---------------------------------------------------------------------------

/// Corpus word counts. Lookup is total: any word absent from the table has
/// frequency 0, making unknown words maximally rare.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<Word, u64>,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: Word, count: u64) {
        self.counts.insert(word, count);
    }

    /// Load from text: `word<TAB>count` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let mut table = Self::new();
        for (idx, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| format_err(path, idx + 1, "expected word<TAB>count"))?;
            let word =
                Word::new(word).map_err(|e| format_err(path, idx + 1, e.to_string()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| format_err(path, idx + 1, format!("bad count {count:?}")))?;
            table.insert(word, count);
        }
        Ok(table)
    }

    pub fn frequency(&self, word: &Word) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// ValidWordList
// ---------------------------------------------------------------------------

/// The word list used to filter generated substitutes. Membership is exact
/// surface match.
#[derive(Debug, Clone, Default)]
pub struct ValidWordList {
    words: HashSet<Word>,
}

impl ValidWordList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: Word) {
        self.words.insert(word);
    }

    pub fn from_words(words: impl IntoIterator<Item = Word>) -> Self {
        ValidWordList {
            words: words.into_iter().collect(),
        }
    }

    /// Load from text: one word per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let mut list = Self::new();
        for (idx, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let word =
                Word::new(trimmed).map_err(|e| format_err(path, idx + 1, e.to_string()))?;
            list.insert(word);
        }
        Ok(list)
    }

    pub fn contains(&self, word: &Word) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

// ---------------------------------------------------------------------------
// SememeKB
// ---------------------------------------------------------------------------

/// Words annotated with one sememe set per sense.
///
/// Two words are substitution candidates for each other exactly when some
/// sense of one has the *same* sememe set as some sense of the other; subset
/// or overlap matches do not count.
#[derive(Debug, Clone, Default)]
pub struct SememeKB {
    senses: HashMap<Word, Vec<BTreeSet<String>>>,
    // sense set -> words having that exact sense, for candidate lookup
    by_sense: HashMap<BTreeSet<String>, BTreeSet<Word>>,
}

impl SememeKB {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sense(&mut self, word: Word, sememes: impl IntoIterator<Item = String>) {
        let set: BTreeSet<String> = sememes.into_iter().collect();
        if set.is_empty() {
            return;
        }
        self.by_sense
            .entry(set.clone())
            .or_default()
            .insert(word.clone());
        self.senses.entry(word).or_default().push(set);
    }

    /// Load from text: `word<TAB>sememe1|sememe2|...` per line; repeated
    /// lines for one word define multiple senses.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let mut kb = Self::new();
        for (idx, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let (word, sememes) = line
                .split_once('\t')
                .ok_or_else(|| format_err(path, idx + 1, "expected word<TAB>sememes"))?;
            let word =
                Word::new(word).map_err(|e| format_err(path, idx + 1, e.to_string()))?;
            let labels: Vec<String> = sememes
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if labels.is_empty() {
                return Err(format_err(path, idx + 1, "sense has no sememes"));
            }
            kb.add_sense(word, labels);
        }
        Ok(kb)
    }

    pub fn contains(&self, word: &Word) -> bool {
        self.senses.contains_key(word)
    }

    pub fn senses(&self, word: &Word) -> &[BTreeSet<String>] {
        self.senses.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Words sharing an exactly-equal sense set with `word`, excluding the
    /// word itself. Unknown words yield the empty set.
    pub fn sememe_candidates(&self, word: &Word) -> BTreeSet<Word> {
        let mut out = BTreeSet::new();
        for sense in self.senses(word) {
            if let Some(words) = self.by_sense.get(sense) {
                for candidate in words {
                    if candidate != word {
                        out.insert(candidate.clone());
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// EmbeddingTable
// ---------------------------------------------------------------------------

/// Dense word vectors of one fixed dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vectors: HashMap<Word, Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            vectors: HashMap::new(),
            dim,
        }
    }

    /// Insert a vector. Dimension mismatches and zero-norm vectors are
    /// rejected, never repaired.
    pub fn insert(&mut self, word: Word, vector: Vec<f64>) -> Result<(), String> {
        if vector.len() != self.dim {
            return Err(format!(
                "vector for {:?} has dimension {}, expected {}",
                word.as_str(),
                vector.len(),
                self.dim
            ));
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(format!("vector for {:?} has zero norm", word.as_str()));
        }
        self.vectors.insert(word, vector);
        Ok(())
    }

    /// Load the standard text vector format: first line `vocab_size dim`,
    /// then `word v1 v2 ... vdim` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let mut lines = open(path)?.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| format_err(path, 1, "missing header line"))?;
        let header = header.map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut parts = header.split_whitespace();
        let declared: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, 1, "header must be `vocab_size dim`"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, 1, "header must be `vocab_size dim`"))?;
        let mut table = Self::new(dim);
        for (idx, line) in lines {
            let line = line.map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| format_err(path, idx + 1, "empty vector line"))?;
            let word =
                Word::new(word).map_err(|e| format_err(path, idx + 1, e.to_string()))?;
            let vector: Vec<f64> = parts
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| format_err(path, idx + 1, format!("bad component {v:?}")))
                })
                .collect::<Result<_, _>>()?;
            table
                .insert(word, vector)
                .map_err(|reason| format_err(path, idx + 1, reason))?;
        }
        if table.vectors.len() != declared {
            return Err(format_err(
                path,
                1,
                format!(
                    "header declares {declared} vectors, file has {}",
                    table.vectors.len()
                ),
            ));
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, word: &Word) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn vector(&self, word: &Word) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Cosine similarity, or `None` when either word has no vector.
    pub fn cosine(&self, a: &Word, b: &Word) -> Option<f64> {
        let va = self.vector(a)?;
        let vb = self.vector(b)?;
        Some(cosine_of(va, vb))
    }

    /// The `k` words most similar to `w` by cosine, excluding `w` itself.
    /// Ties break by descending frequency, then ascending codepoint order.
    /// An out-of-vocabulary query yields an empty list.
    pub fn nearest(&self, word: &Word, k: usize, freq: &FrequencyTable) -> Vec<(Word, f64)> {
        if k == 0 || !self.contains(word) {
            return Vec::new();
        }
        let mut scored: Vec<(Word, f64)> = self
            .vectors
            .keys()
            .filter(|other| *other != word)
            .map(|other| (other.clone(), self.cosine(word, other).unwrap()))
            .collect();
        scored.sort_by(|(wa, sa), (wb, sb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| freq.frequency(wb).cmp(&freq.frequency(wa)))
                .then_with(|| wa.cmp(wb))
        });
        scored.truncate(k);
        scored
    }
}

fn cosine_of(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

// ---------------------------------------------------------------------------
// LexiconBundle
// ---------------------------------------------------------------------------

/// Paths to the five resource files.
#[derive(Debug, Clone)]
pub struct LexiconPaths {
    pub synonyms: PathBuf,
    pub frequencies: PathBuf,
    pub valid_words: PathBuf,
    pub sememes: PathBuf,
    pub embeddings: PathBuf,
}

/// All five resources, loaded and validated together.
#[derive(Debug, Clone)]
pub struct LexiconBundle {
    pub synonyms: SynonymThesaurus,
    pub freq: FrequencyTable,
    pub valid: ValidWordList,
    pub sememes: SememeKB,
    pub embeddings: EmbeddingTable,
}

impl LexiconBundle {
    pub fn load(paths: &LexiconPaths) -> Result<Self, LexiconError> {
        Ok(LexiconBundle {
            synonyms: SynonymThesaurus::load(&paths.synonyms)?,
            freq: FrequencyTable::load(&paths.frequencies)?,
            valid: ValidWordList::load(&paths.valid_words)?,
            sememes: SememeKB::load(&paths.sememes)?,
            embeddings: EmbeddingTable::load(&paths.embeddings)?,
        })
    }
}
