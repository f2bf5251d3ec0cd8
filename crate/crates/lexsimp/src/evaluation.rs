//! Automatic evaluation over pipeline traces: substitution-generation
//! metrics (potential, precision, recall, F1), system metrics (PRE, ACC,
//! changed, auto), and a five-type error categorization.
//!
//! Metrics are computed in exact rational arithmetic and exposed both as
//! rationals and as floats. Candidate sets are evaluated with the
//! pipeline-injected original word removed, since generation quality is
//! judged before ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Word};
use crate::lexicons::FrequencyTable;
use crate::pipeline::SimplificationTrace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("traces do not match dataset: missing ids {missing:?}, unexpected ids {unexpected:?}")]
    Misaligned {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("duplicate trace id {0:?}")]
    DuplicateTrace(String),
}

fn ratio(numer: u64, denom: u64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(0.0)
}

/// Pair every dataset instance with its trace, by effective id. Trace order
/// in the file does not matter; missing, unexpected, or duplicate ids are
/// errors.
pub fn align<'a>(
    traces: &'a [SimplificationTrace],
    dataset: &Dataset,
) -> Result<Vec<&'a SimplificationTrace>, EvalError> {
    let mut by_id: HashMap<&str, &SimplificationTrace> = HashMap::new();
    for trace in traces {
        if by_id.insert(&trace.instance_id, trace).is_some() {
            return Err(EvalError::DuplicateTrace(trace.instance_id.clone()));
        }
    }
    let ids = dataset.effective_ids();
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    let id_set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let unexpected: Vec<String> = traces
        .iter()
        .map(|t| t.instance_id.clone())
        .filter(|id| !id_set.contains(id.as_str()))
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(EvalError::Misaligned {
            missing,
            unexpected,
        });
    }
    Ok(ids.iter().map(|id| by_id[id.as_str()]).collect())
}

/// Candidates as evaluated for generation quality: the final set minus the
/// injected original target.
fn generated_candidates<'a>(trace: &'a SimplificationTrace, target: &Word) -> BTreeSet<&'a Word> {
    trace
        .candidates_final
        .iter()
        .filter(|w| *w != target)
        .collect()
}

// ---------------------------------------------------------------------------
// Substitution-generation metrics
// ---------------------------------------------------------------------------

/// Per-instance generation counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgRow {
    pub id: String,
    pub candidates: usize,
    pub gold: usize,
    pub overlap: usize,
}

/// Corpus-level generation quality.
#[derive(Debug, Clone, PartialEq)]
pub struct SgReport {
    pub potential: BigRational,
    pub precision: BigRational,
    pub recall: BigRational,
    pub f1: BigRational,
    pub macro_average: bool,
    pub rows: Vec<SgRow>,
}

fn f1_of(precision: &BigRational, recall: &BigRational) -> BigRational {
    let denom = precision + recall;
    if denom.is_zero() {
        return BigRational::zero();
    }
    let two = BigRational::from_integer(BigInt::from(2));
    two * precision * recall / denom
}

/// Potential, precision, recall, and F1 of the generated candidate sets.
///
/// Micro averaging (the default) sums overlaps and set sizes over the corpus;
/// macro averaging means per-instance precision and recall first (empty
/// candidate sets count as zero precision), with F1 taken over the macro
/// averages.
pub fn sg_metrics(
    traces: &[SimplificationTrace],
    dataset: &Dataset,
    macro_average: bool,
) -> Result<SgReport, EvalError> {
    let aligned = align(traces, dataset)?;
    let n = dataset.len() as u64;

    let mut rows = Vec::with_capacity(aligned.len());
    let mut hits = 0u64;
    let mut overlap_sum = 0u64;
    let mut cand_sum = 0u64;
    let mut gold_sum = 0u64;
    let mut macro_precision = BigRational::zero();
    let mut macro_recall = BigRational::zero();

    for (inst, trace) in dataset.instances.iter().zip(&aligned) {
        let candidates = generated_candidates(trace, inst.target());
        let gold = inst.gold_words();
        let overlap = candidates.iter().filter(|w| gold.contains(**w)).count() as u64;
        let n_cand = candidates.len() as u64;
        let n_gold = gold.len() as u64;

        if overlap > 0 {
            hits += 1;
        }
        overlap_sum += overlap;
        cand_sum += n_cand;
        gold_sum += n_gold;
        if n_cand > 0 {
            macro_precision += ratio(overlap, n_cand);
        }
        macro_recall += ratio(overlap, n_gold);

        rows.push(SgRow {
            id: trace.instance_id.clone(),
            candidates: n_cand as usize,
            gold: n_gold as usize,
            overlap: overlap as usize,
        });
    }

    let zero = BigRational::zero();
    let (potential, precision, recall) = if n == 0 {
        (zero.clone(), zero.clone(), zero.clone())
    } else if macro_average {
        let n_big = BigRational::from_integer(BigInt::from(n));
        (ratio(hits, n), macro_precision / &n_big, macro_recall / &n_big)
    } else {
        let precision = if cand_sum == 0 {
            zero.clone()
        } else {
            ratio(overlap_sum, cand_sum)
        };
        (ratio(hits, n), precision, ratio(overlap_sum, gold_sum))
    };
    let f1 = f1_of(&precision, &recall);
    Ok(SgReport {
        potential,
        precision,
        recall,
        f1,
        macro_average,
        rows,
    })
}

// ---------------------------------------------------------------------------
// System metrics
// ---------------------------------------------------------------------------

/// Per-instance end-to-end outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemRow {
    pub id: String,
    /// The system's final word: the replacement, or the target if unchanged.
    pub final_word: Word,
    pub changed: bool,
    pub in_gold: bool,
}

/// End-to-end pipeline quality.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemReport {
    /// Final word is the original or in the gold set.
    pub pre_score: BigRational,
    /// Final word differs from the original and is in the gold set.
    pub acc_score: BigRational,
    /// Instances where the target was changed.
    pub changed: u64,
    /// Of the changed instances, the fraction replaced with a gold word.
    pub auto: BigRational,
    pub rows: Vec<SystemRow>,
}

pub fn system_metrics(
    traces: &[SimplificationTrace],
    dataset: &Dataset,
) -> Result<SystemReport, EvalError> {
    let aligned = align(traces, dataset)?;
    let n = dataset.len() as u64;

    let mut rows = Vec::with_capacity(aligned.len());
    let mut pre_count = 0u64;
    let mut acc_count = 0u64;
    let mut changed = 0u64;
    for (inst, trace) in dataset.instances.iter().zip(&aligned) {
        let final_word = trace.replacement.as_ref().unwrap_or(inst.target()).clone();
        let is_changed = final_word != *inst.target();
        let in_gold = inst.gold_words().contains(&final_word);
        if !is_changed || in_gold {
            pre_count += 1;
        }
        if is_changed && in_gold {
            acc_count += 1;
        }
        if is_changed {
            changed += 1;
        }
        rows.push(SystemRow {
            id: trace.instance_id.clone(),
            final_word,
            changed: is_changed,
            in_gold,
        });
    }

    let zero = BigRational::zero();
    Ok(SystemReport {
        pre_score: if n == 0 { zero.clone() } else { ratio(pre_count, n) },
        acc_score: if n == 0 { zero.clone() } else { ratio(acc_count, n) },
        changed,
        auto: if changed == 0 {
            zero
        } else {
            ratio(acc_count, changed)
        },
        rows,
    })
}

// ---------------------------------------------------------------------------
// Error categorization
// ---------------------------------------------------------------------------

/// The five outcome categories. Categories 2 and 3 describe the generation
/// stage and 4 and 5 the ranking stage, so one instance can fall into one of
/// each; category 1 (no error) excludes all others. "Simpler" means strictly
/// higher corpus frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    /// 1: changed to a gold word that is simpler than the target.
    NoError,
    /// 2: no candidate substitutions were produced.
    NoCandidates,
    /// 3: candidates exist but none is simpler than the target.
    NoSimplerCandidates,
    /// 4: the replacement is not in the gold set.
    ReplacementNotInGold,
    /// 5: a replacement in gold that does not simplify, or no replacement
    /// despite a simpler candidate.
    NotSimplified,
}

impl ErrorCategory {
    pub fn code(&self) -> u8 {
        match self {
            ErrorCategory::NoError => 1,
            ErrorCategory::NoCandidates => 2,
            ErrorCategory::NoSimplerCandidates => 3,
            ErrorCategory::ReplacementNotInGold => 4,
            ErrorCategory::NotSimplified => 5,
        }
    }
}

/// Categories assigned to every instance of the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorReport {
    pub n: usize,
    /// category code -> instance count. Counts can sum to more than `n`
    /// because generation-stage and ranking-stage categories overlap.
    pub counts: BTreeMap<u8, usize>,
    pub per_instance: Vec<(String, Vec<ErrorCategory>)>,
}

impl ErrorReport {
    pub fn count(&self, code: u8) -> usize {
        self.counts.get(&code).copied().unwrap_or(0)
    }

    pub fn proportion(&self, code: u8) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.count(code) as f64 / self.n as f64
        }
    }
}

/// Categorize the outcome of every instance.
pub fn categorize_errors(
    traces: &[SimplificationTrace],
    dataset: &Dataset,
    freq: &FrequencyTable,
) -> Result<ErrorReport, EvalError> {
    let aligned = align(traces, dataset)?;
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    let mut per_instance = Vec::with_capacity(aligned.len());

    for (inst, trace) in dataset.instances.iter().zip(&aligned) {
        let target = inst.target();
        let target_freq = freq.frequency(target);
        let gold = inst.gold_words();
        let others = generated_candidates(trace, target);
        let simpler_exists = others.iter().any(|c| freq.frequency(c) > target_freq);

        let mut categories = Vec::new();
        match &trace.replacement {
            Some(replacement) => {
                let in_gold = gold.contains(replacement);
                let simpler = freq.frequency(replacement) > target_freq;
                if in_gold && simpler {
                    categories.push(ErrorCategory::NoError);
                } else {
                    if !in_gold {
                        categories.push(ErrorCategory::ReplacementNotInGold);
                    } else {
                        categories.push(ErrorCategory::NotSimplified);
                    }
                    // Generation-stage categories are reported independently.
                    if !simpler_exists {
                        categories.push(ErrorCategory::NoSimplerCandidates);
                    }
                }
            }
            None => {
                if others.is_empty() {
                    categories.push(ErrorCategory::NoCandidates);
                } else if !simpler_exists {
                    categories.push(ErrorCategory::NoSimplerCandidates);
                } else {
                    categories.push(ErrorCategory::NotSimplified);
                }
            }
        }
        categories.sort();
        categories.dedup();
        for category in &categories {
            *counts.entry(category.code()).or_insert(0) += 1;
        }
        per_instance.push((trace.instance_id.clone(), categories));
    }
    Ok(ErrorReport {
        n: dataset.len(),
        counts,
        per_instance,
    })
}

// ---------------------------------------------------------------------------
// Combined JSON report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgSummary {
    pub potential: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSummary {
    pub pre: f64,
    pub acc: f64,
    pub changed: u64,
    pub auto: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub id: String,
    pub candidates: usize,
    pub gold: usize,
    pub overlap: usize,
    pub final_word: Word,
    pub changed: bool,
    pub in_gold: bool,
    pub categories: Vec<u8>,
}

/// The full evaluation report emitted by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub instances: usize,
    pub macro_average: bool,
    pub sg: SgSummary,
    pub system: SystemSummary,
    pub errors: BTreeMap<String, ErrorSummary>,
    pub per_instance: Vec<InstanceRow>,
}

/// Compute every metric and assemble the JSON-ready report.
pub fn full_report(
    traces: &[SimplificationTrace],
    dataset: &Dataset,
    freq: &FrequencyTable,
    macro_average: bool,
) -> Result<EvalReport, EvalError> {
    let sg = sg_metrics(traces, dataset, macro_average)?;
    let system = system_metrics(traces, dataset)?;
    let errors = categorize_errors(traces, dataset, freq)?;

    let mut error_map = BTreeMap::new();
    for code in 1..=5u8 {
        error_map.insert(
            code.to_string(),
            ErrorSummary {
                count: errors.count(code),
                proportion: errors.proportion(code),
            },
        );
    }
    let per_instance = sg
        .rows
        .iter()
        .zip(&system.rows)
        .zip(&errors.per_instance)
        .map(|((sg_row, sys_row), (_, categories))| InstanceRow {
            id: sg_row.id.clone(),
            candidates: sg_row.candidates,
            gold: sg_row.gold,
            overlap: sg_row.overlap,
            final_word: sys_row.final_word.clone(),
            changed: sys_row.changed,
            in_gold: sys_row.in_gold,
            categories: categories.iter().map(ErrorCategory::code).collect(),
        })
        .collect();

    Ok(EvalReport {
        dataset: dataset.name.clone(),
        instances: dataset.len(),
        macro_average,
        sg: SgSummary {
            potential: to_f64(&sg.potential),
            precision: to_f64(&sg.precision),
            recall: to_f64(&sg.recall),
            f1: to_f64(&sg.f1),
        },
        system: SystemSummary {
            pre: to_f64(&system.pre_score),
            acc: to_f64(&system.acc_score),
            changed: system.changed,
            auto: to_f64(&system.auto),
        },
        errors: error_map,
        per_instance,
    })
}
