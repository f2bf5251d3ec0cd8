//! Domain types and JSON-lines ingestion for simplification instance datasets.
//!
//! An instance pairs a sentence with one target complex word (located by a
//! 0-based character offset) and a ranked list of gold substitutes. Files are
//! UTF-8 JSON lines, one instance per line; see [`parse_dataset`].
//!
//! All offset arithmetic is in unicode codepoints, never bytes.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use num_rational::Rational64;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors produced while validating or parsing instance data.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid word {0:?}: must be non-empty and contain no whitespace")]
    InvalidWord(String),
    #[error("invalid rank literal {0:?}")]
    InvalidRank(String),
    #[error("line {line}: malformed instance: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line} (instance {instance}): {reason}")]
    Invalid {
        line: usize,
        instance: String,
        reason: String,
    },
    #[error("instance validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Word
// ---------------------------------------------------------------------------

/// A word surface form: a non-empty string without whitespace.
///
/// Characters are unicode codepoints; `char_len` counts codepoints, not bytes.
/// Ordering is lexicographic by codepoint (UTF-8 byte order coincides).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Word(String);

impl Word {
    pub fn new(surface: impl Into<String>) -> Result<Self, DatasetError> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(DatasetError::InvalidWord(surface));
        }
        Ok(Word(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Number of unicode codepoints in the surface form.
    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Word {
    type Error = DatasetError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Word::new(value)
    }
}

impl From<Word> for String {
    fn from(value: Word) -> Self {
        value.0
    }
}

// ---------------------------------------------------------------------------
// Rank
// ---------------------------------------------------------------------------

/// An average annotator rank, kept as an exact rational.
///
/// Ranks enter and leave the wire format as JSON decimal numbers. Parsing goes
/// through the decimal literal, so `2.2` becomes exactly 11/5 with no binary
/// float rounding. Serialization emits the shortest exact decimal; rationals
/// whose reduced denominator is not of the form 2^a·5^b cannot be written as a
/// finite decimal and fall back to the nearest f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rank(Rational64);

impl Rank {
    pub fn new(numer: i64, denom: i64) -> Result<Self, DatasetError> {
        if denom <= 0 {
            return Err(DatasetError::InvalidRank(format!("{numer}/{denom}")));
        }
        Ok(Rank(Rational64::new(numer, denom)))
    }

    pub fn from_integer(n: i64) -> Self {
        Rank(Rational64::from_integer(n))
    }

    /// Parse a decimal literal (optionally signed, optional exponent) exactly.
    pub fn from_decimal_str(s: &str) -> Result<Self, DatasetError> {
        parse_decimal(s)
            .map(Rank)
            .ok_or_else(|| DatasetError::InvalidRank(s.to_string()))
    }

    pub fn as_ratio(&self) -> Rational64 {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Exact decimal string when the denominator divides a power of ten.
    fn decimal_string(&self) -> Option<String> {
        let numer = *self.0.numer();
        let mut denom = *self.0.denom();
        let mut twos = 0u32;
        let mut fives = 0u32;
        while denom % 2 == 0 {
            denom /= 2;
            twos += 1;
        }
        while denom % 5 == 0 {
            denom /= 5;
            fives += 1;
        }
        if denom != 1 {
            return None;
        }
        let scale = twos.max(fives);
        // numer * 10^scale / original_denom is an integer once 2s and 5s match.
        let mut scaled = numer.checked_abs()? as i128;
        scaled = scaled.checked_mul(10i128.checked_pow(scale)?)? / *self.0.denom() as i128;
        let digits = scaled.to_string();
        let sign = if numer < 0 { "-" } else { "" };
        if scale == 0 {
            return Some(format!("{sign}{digits}"));
        }
        let pad = (scale as usize).saturating_sub(digits.len());
        let padded = format!("{}{}", "0".repeat(pad), digits);
        let split = padded.len() - scale as usize;
        let (int_part, frac_part) = padded.split_at(split);
        let int_part = if int_part.is_empty() { "0" } else { int_part };
        Some(format!("{sign}{int_part}.{frac_part}"))
    }

    fn to_json_number(self) -> serde_json::Number {
        if self.0.is_integer() {
            return serde_json::Number::from(*self.0.numer());
        }
        let value = match self.decimal_string() {
            Some(s) => s.parse::<f64>().unwrap_or_else(|_| self.to_f64()),
            None => self.to_f64(),
        };
        serde_json::Number::from_f64(value).unwrap_or_else(|| serde_json::Number::from(0))
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decimal_string() {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}", self.0),
        }
    }
}

impl Serialize for Rank {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json_number().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let number = serde_json::Number::deserialize(deserializer)?;
        Rank::from_decimal_str(&number.to_string())
            .map_err(|_| D::Error::custom(format!("rank {number} is not a finite decimal")))
    }
}

/// Exact decimal-literal parsing into a reduced rational.
fn parse_decimal(s: &str) -> Option<Rational64> {
    let s = s.trim();
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (-1i128, rest),
        None => (1i128, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let mut numer: i128 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        numer = numer.checked_mul(10)?.checked_add((c as u8 - b'0') as i128)?;
    }
    numer *= sign;
    let scale = frac_part.len() as i32 - exponent;
    let mut denom: i128 = 1;
    if scale >= 0 {
        denom = 10i128.checked_pow(u32::try_from(scale).ok()?)?;
    } else {
        numer = numer.checked_mul(10i128.checked_pow(u32::try_from(-scale).ok()?)?)?;
    }
    let ratio = reduce(numer, denom)?;
    Some(ratio)
}

fn reduce(numer: i128, denom: i128) -> Option<Rational64> {
    let g = gcd(numer.unsigned_abs(), denom.unsigned_abs()).max(1);
    let numer = i64::try_from(numer / g as i128).ok()?;
    let denom = i64::try_from(denom / g as i128).ok()?;
    Some(Rational64::new(numer, denom))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

// ---------------------------------------------------------------------------
// Instance / Dataset
// ---------------------------------------------------------------------------

/// One gold substitute with its average annotator rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSubstitute {
    pub word: Word,
    pub rank: Rank,
}

/// One evaluation unit: a sentence, the target complex word located by
/// character offset, and the ranked gold substitutes.
///
/// Construction validates every invariant; instances are immutable afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    sentence: String,
    target: Word,
    offset: usize,
    gold: Vec<GoldSubstitute>,
    pos: Option<String>,
    id: Option<String>,
}

impl Instance {
    pub fn new(
        sentence: impl Into<String>,
        target: Word,
        offset: usize,
        gold: Vec<GoldSubstitute>,
    ) -> Result<Self, DatasetError> {
        Self::with_metadata(sentence, target, offset, gold, None, None)
    }

    pub fn with_metadata(
        sentence: impl Into<String>,
        target: Word,
        offset: usize,
        gold: Vec<GoldSubstitute>,
        pos: Option<String>,
        id: Option<String>,
    ) -> Result<Self, DatasetError> {
        let sentence = sentence.into();
        let span: String = sentence
            .chars()
            .skip(offset)
            .take(target.char_len())
            .collect();
        if span != target.as_str() {
            return Err(DatasetError::Validation(format!(
                "offset {offset} selects {span:?}, not target {:?}",
                target.as_str()
            )));
        }
        if gold.is_empty() {
            return Err(DatasetError::Validation("gold list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        let mut prev: Option<Rank> = None;
        for g in &gold {
            if !seen.insert(g.word.clone()) {
                return Err(DatasetError::Validation(format!(
                    "duplicate gold word {:?}",
                    g.word.as_str()
                )));
            }
            if let Some(p) = prev {
                if g.rank < p {
                    return Err(DatasetError::Validation(format!(
                        "gold ranks decrease at {:?} ({} after {})",
                        g.word.as_str(),
                        g.rank,
                        p
                    )));
                }
            }
            prev = Some(g.rank);
        }
        Ok(Instance {
            sentence,
            target,
            offset,
            gold,
            pos,
            id,
        })
    }

    pub fn sentence(&self) -> &str {
        &self.sentence
    }

    pub fn target(&self) -> &Word {
        &self.target
    }

    /// 0-based character index of the target's first character.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn gold(&self) -> &[GoldSubstitute] {
        &self.gold
    }

    /// Gold surfaces as a set, for membership checks.
    pub fn gold_words(&self) -> BTreeSet<&Word> {
        self.gold.iter().map(|g| &g.word).collect()
    }

    pub fn pos(&self) -> Option<&str> {
        self.pos.as_deref()
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    /// The instance id used in traces and reports: the explicit `id` field
    /// when present, otherwise the 0-based position in the dataset.
    pub fn effective_id(&self, index: usize) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => index.to_string(),
        }
    }
}

/// An ordered collection of validated instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, instances: Vec<Instance>) -> Self {
        Dataset {
            name: name.into(),
            instances,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Effective ids for all instances, in order.
    pub fn effective_ids(&self) -> Vec<String> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, inst)| inst.effective_id(i))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct InstanceWire {
    sentence: String,
    target: Word,
    offset: usize,
    gold: Vec<GoldSubstitute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

impl From<&Instance> for InstanceWire {
    fn from(inst: &Instance) -> Self {
        InstanceWire {
            sentence: inst.sentence.clone(),
            target: inst.target.clone(),
            offset: inst.offset,
            gold: inst.gold.clone(),
            pos: inst.pos.clone(),
            id: inst.id.clone(),
        }
    }
}

/// Parse a JSON-lines instance file. Blank lines are ignored; any malformed
/// or invariant-violating line aborts the load with its 1-based line number.
pub fn parse_dataset(reader: impl BufRead, name: &str) -> Result<Dataset, DatasetError> {
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let wire: InstanceWire =
            serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
                line: lineno,
                source,
            })?;
        let label = wire
            .id
            .clone()
            .unwrap_or_else(|| instances.len().to_string());
        let instance = Instance::with_metadata(
            wire.sentence,
            wire.target,
            wire.offset,
            wire.gold,
            wire.pos,
            wire.id,
        )
        .map_err(|e| DatasetError::Invalid {
            line: lineno,
            instance: label,
            reason: e.to_string(),
        })?;
        instances.push(instance);
    }
    Ok(Dataset::new(name, instances))
}

pub fn parse_dataset_str(text: &str, name: &str) -> Result<Dataset, DatasetError> {
    parse_dataset(text.as_bytes(), name)
}

/// Serialize a dataset back to JSON lines. `parse_dataset` of the output
/// reproduces the dataset field-for-field.
pub fn serialize_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    for inst in &dataset.instances {
        let wire = InstanceWire::from(inst);
        out.push_str(&serde_json::to_string(&wire).expect("instance serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        Word::new(s).unwrap()
    }

    fn gold(pairs: &[(&str, i64, i64)]) -> Vec<GoldSubstitute> {
        pairs
            .iter()
            .map(|&(s, n, d)| GoldSubstitute {
                word: w(s),
                rank: Rank::new(n, d).unwrap(),
            })
            .collect()
    }

    #[test]
    fn word_rejects_empty_and_whitespace() {
        assert!(Word::new("").is_err());
        assert!(Word::new("有 空").is_err());
        assert!(Word::new("房子").is_ok());
    }

    #[test]
    fn rank_parses_decimal_literals_exactly() {
        assert_eq!(
            Rank::from_decimal_str("2.2").unwrap().as_ratio(),
            Rational64::new(11, 5)
        );
        assert_eq!(
            Rank::from_decimal_str("3").unwrap().as_ratio(),
            Rational64::from_integer(3)
        );
        assert_eq!(
            Rank::from_decimal_str("1.25e1").unwrap().as_ratio(),
            Rational64::new(25, 2)
        );
        assert!(Rank::from_decimal_str("x").is_err());
    }

    #[test]
    fn rank_displays_shortest_decimal() {
        assert_eq!(Rank::new(11, 5).unwrap().to_string(), "2.2");
        assert_eq!(Rank::new(7, 1).unwrap().to_string(), "7");
        assert_eq!(Rank::new(3, 8).unwrap().to_string(), "0.375");
        assert_eq!(Rank::new(-11, 5).unwrap().to_string(), "-2.2");
    }

    #[test]
    fn one_valid_line_round_trips() {
        let line = r#"{"sentence":"他居住在郊外的寓所。","target":"寓所","offset":7,"gold":[{"word":"住所","rank":1},{"word":"房子","rank":2.2}]}"#;
        let ds = parse_dataset_str(line, "t").unwrap();
        assert_eq!(ds.len(), 1);
        let inst = &ds.instances[0];
        assert_eq!(inst.target().as_str(), "寓所");
        assert_eq!(inst.gold()[1].rank.as_ratio(), Rational64::new(11, 5));
        let back = parse_dataset_str(&serialize_dataset(&ds), "t").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn wrong_offset_is_a_validation_error() {
        let line = r#"{"sentence":"他居住在郊外的寓所。","target":"寓所","offset":3,"gold":[{"word":"住所","rank":1}]}"#;
        let err = parse_dataset_str(line, "t").unwrap_err();
        match err {
            DatasetError::Invalid { line, .. } => assert_eq!(line, 1),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_names_the_line() {
        let text = "{\"sentence\":\"好\",\"target\":\"好\",\"offset\":0,\"gold\":[{\"word\":\"行\",\"rank\":1}]}\nnot json\n";
        let err = parse_dataset_str(text, "t").unwrap_err();
        match err {
            DatasetError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_gold_ranks_rejected() {
        let r = Instance::new(
            "风景优美。",
            w("优美"),
            2,
            gold(&[("美丽", 2, 1), ("漂亮", 1, 1)]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn duplicate_gold_words_rejected() {
        let r = Instance::new(
            "风景优美。",
            w("优美"),
            2,
            gold(&[("美丽", 1, 1), ("美丽", 2, 1)]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn tied_gold_ranks_keep_file_order() {
        let inst = Instance::new(
            "风景优美。",
            w("优美"),
            2,
            gold(&[("漂亮", 1, 1), ("美丽", 1, 1)]),
        )
        .unwrap();
        assert_eq!(inst.gold()[0].word.as_str(), "漂亮");
        assert_eq!(inst.gold()[1].word.as_str(), "美丽");
    }

    #[test]
    fn offsets_count_codepoints_not_bytes() {
        // Target begins at char 2; byte offset would be 6.
        let inst = Instance::new("他说英语。", w("英语"), 2, gold(&[("外语", 1, 1)])).unwrap();
        assert_eq!(inst.offset(), 2);
    }

    #[test]
    fn empty_dataset_serializes_to_empty_text() {
        let ds = Dataset::new("empty", Vec::new());
        assert_eq!(serialize_dataset(&ds), "");
    }

    #[test]
    fn large_synthetic_file_parses_with_expected_average() {
        // 524 instances whose gold sizes average to 8.51 after rounding.
        let mut text = String::new();
        let total = 524usize;
        for i in 0..total {
            let n_gold = if i < 267 { 9 } else { 8 }; // 267*9 + 257*8 = 4459
            let mut golds = Vec::new();
            for g in 0..n_gold {
                golds.push(format!(
                    "{{\"word\":\"词{i}n{g}\",\"rank\":{}}}",
                    g + 1
                ));
            }
            text.push_str(&format!(
                "{{\"sentence\":\"目标{i}前后文\",\"target\":\"目标{i}\",\"offset\":0,\"gold\":[{}]}}\n",
                golds.join(",")
            ));
        }
        let ds = parse_dataset_str(&text, "synthetic").unwrap();
        assert_eq!(ds.len(), 524);
        let total_gold: usize = ds.instances.iter().map(|i| i.gold().len()).sum();
        let avg = total_gold as f64 / ds.len() as f64;
        assert_eq!(format!("{avg:.2}"), "8.51");
    }
}
