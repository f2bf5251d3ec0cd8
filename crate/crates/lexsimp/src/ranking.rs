//! Candidate ranking: four per-candidate features, fractional per-feature
//! ranks, average-rank aggregation, and the top-two replacement decision.
//!
//! Each feature yields a real score per candidate (or an undefined marker);
//! within a feature, candidates get a fractional ranking of 1..n where tied
//! values share the mean of their positions and undefined values rank after
//! every defined one. A candidate's aggregate score is the arithmetic mean of
//! its per-feature ranks; the final order breaks ties by corpus frequency,
//! then codepoint order.

use std::collections::BTreeMap;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Word;
use crate::lexicons::{FrequencyTable, LexiconBundle};
use crate::mlm::{tokenize, MlmBackend, MlmError, TokenSequence, MASK};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("cannot rank an empty candidate list")]
    EmptyCandidates,
    #[error("at least one ranking feature must be enabled")]
    NoFeatures,
    #[error(transparent)]
    Mlm(#[from] MlmError),
}

/// Whether smaller or larger scores are better for a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// The four ranking features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    /// Mean masked cross-entropy over a window around the substitution;
    /// lower is more fluent.
    LmFluency,
    /// Cosine similarity between target and candidate embeddings.
    EmbSimilarity,
    /// Corpus frequency of the candidate.
    Frequency,
    /// Best Jaccard overlap between target and candidate sememe senses.
    SememeSimilarity,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::LmFluency,
        Feature::EmbSimilarity,
        Feature::Frequency,
        Feature::SememeSimilarity,
    ];

    pub fn direction(&self) -> Direction {
        match self {
            Feature::LmFluency => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    /// Name used in configuration files and reports.
    pub fn config_name(&self) -> &'static str {
        match self {
            Feature::LmFluency => "language",
            Feature::EmbSimilarity => "similarity",
            Feature::Frequency => "frequency",
            Feature::SememeSimilarity => "hownet",
        }
    }

    pub fn from_config_name(name: &str) -> Result<Feature, String> {
        match name {
            "language" => Ok(Feature::LmFluency),
            "similarity" => Ok(Feature::EmbSimilarity),
            "frequency" => Ok(Feature::Frequency),
            "hownet" => Ok(Feature::SememeSimilarity),
            other => Err(format!(
                "unknown feature {other:?}; expected language|similarity|frequency|hownet"
            )),
        }
    }
}

/// Scores for one feature across a candidate set. `None` marks an undefined
/// value (for example a cosine involving an out-of-vocabulary word).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScores {
    pub feature: Feature,
    pub values: BTreeMap<Word, Option<f64>>,
}

impl FeatureScores {
    pub fn new(feature: Feature) -> Self {
        FeatureScores {
            feature,
            values: BTreeMap::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Feature scoring
// ---------------------------------------------------------------------------

/// Fluency of `candidate` substituted into the sentence: the mean masked
/// cross-entropy over the candidate's characters plus up to `window`
/// characters on each side, each position masked in turn. The window is
/// clamped at the sentence bounds.
pub fn lm_fluency(
    backend: &dyn MlmBackend,
    sentence: &str,
    target_offset: usize,
    target_char_len: usize,
    candidate: &Word,
    window: usize,
) -> Result<f64, MlmError> {
    let prefix: String = sentence.chars().take(target_offset).collect();
    let suffix: String = sentence
        .chars()
        .skip(target_offset + target_char_len)
        .collect();
    let modified = format!("{prefix}{}{suffix}", candidate.as_str());

    let cand_start = tokenize(&prefix).len();
    let cand_len = tokenize(candidate.as_str()).len();
    let tokens = tokenize(&modified);
    let seq = TokenSequence::single(tokens.clone())?;

    let start = cand_start.saturating_sub(window);
    let end = (cand_start + cand_len + window).min(tokens.len());
    let mut total = 0.0;
    for position in start..end {
        let masked = seq.with_token(position, MASK);
        total += backend.token_loss(&masked, position, &tokens[position])?;
    }
    Ok(total / (end - start) as f64)
}

/// Embedding similarity between target and candidate. The target itself
/// scores 1.0; otherwise any out-of-vocabulary side makes the value
/// undefined, ranking it after all defined scores.
pub fn emb_similarity(bundle: &LexiconBundle, target: &Word, candidate: &Word) -> Option<f64> {
    if candidate == target {
        return Some(1.0);
    }
    bundle.embeddings.cosine(target, candidate)
}

/// Sememe similarity: the best Jaccard overlap between any sense of the
/// target and any sense of the candidate; 0 when either word is unknown.
pub fn sememe_similarity(bundle: &LexiconBundle, target: &Word, candidate: &Word) -> f64 {
    let target_senses = bundle.sememes.senses(target);
    let candidate_senses = bundle.sememes.senses(candidate);
    if target_senses.is_empty() || candidate_senses.is_empty() {
        return 0.0;
    }
    let mut best = 0.0f64;
    for s in target_senses {
        for c in candidate_senses {
            let inter = s.intersection(c).count();
            let union = s.union(c).count();
            let jaccard = inter as f64 / union as f64;
            best = best.max(jaccard);
        }
    }
    best
}

/// Compute the enabled features for every candidate.
pub fn score_features(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    sentence: &str,
    target_offset: usize,
    target: &Word,
    candidates: &[Word],
    enabled: &[Feature],
    lm_window: usize,
) -> Result<Vec<FeatureScores>, RankingError> {
    if enabled.is_empty() {
        return Err(RankingError::NoFeatures);
    }
    let mut out = Vec::with_capacity(enabled.len());
    for &feature in enabled {
        let mut scores = FeatureScores::new(feature);
        for candidate in candidates {
            let value = match feature {
                Feature::LmFluency => Some(lm_fluency(
                    backend,
                    sentence,
                    target_offset,
                    target.char_len(),
                    candidate,
                    lm_window,
                )?),
                Feature::EmbSimilarity => emb_similarity(bundle, target, candidate),
                Feature::Frequency => Some(bundle.freq.frequency(candidate) as f64),
                Feature::SememeSimilarity => Some(sememe_similarity(bundle, target, candidate)),
            };
            scores.values.insert(candidate.clone(), value);
        }
        out.push(scores);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fractional ranking and aggregation
// ---------------------------------------------------------------------------

/// Fractional ranks (best = 1) for the candidates under one feature. Tied
/// scores share the mean of the positions they span; undefined scores rank
/// strictly after all defined ones and tie among themselves.
pub fn rank_numbers(scores: &FeatureScores, candidates: &[Word]) -> BTreeMap<Word, Rational64> {
    let direction = scores.feature.direction();
    let mut entries: Vec<(&Word, Option<f64>)> = candidates
        .iter()
        .map(|w| (w, scores.values.get(w).copied().flatten()))
        .collect();
    entries.sort_by(|(_, a), (_, b)| compare_scores(*a, *b, direction));

    let mut ranks = BTreeMap::new();
    let mut i = 0;
    while i < entries.len() {
        let mut j = i + 1;
        while j < entries.len()
            && compare_scores(entries[i].1, entries[j].1, direction) == std::cmp::Ordering::Equal
        {
            j += 1;
        }
        // positions i+1 ..= j share the mean rank (i+1 + j) / 2
        let rank = Rational64::new((i + 1 + j) as i64, 2);
        for (word, _) in &entries[i..j] {
            ranks.insert((*word).clone(), rank);
        }
        i = j;
    }
    ranks
}

fn compare_scores(a: Option<f64>, b: Option<f64>, direction: Direction) -> std::cmp::Ordering {
    match (a, b) {
        (Some(a), Some(b)) => {
            let ord = a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal);
            match direction {
                Direction::LowerBetter => ord,
                Direction::HigherBetter => ord.reverse(),
            }
        }
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    }
}

/// Candidates with per-feature ranks, average rank, and the final order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidates {
    pub per_feature_ranks: Vec<(Feature, BTreeMap<Word, Rational64>)>,
    pub avg_rank: BTreeMap<Word, Rational64>,
    /// Ascending by average rank; ties broken by descending frequency, then
    /// codepoint order.
    pub order: Vec<Word>,
}

/// Rank every feature, average the ranks, and order the candidates.
pub fn aggregate(
    features: &[FeatureScores],
    candidates: &[Word],
    freq: &FrequencyTable,
) -> Result<RankedCandidates, RankingError> {
    if candidates.is_empty() {
        return Err(RankingError::EmptyCandidates);
    }
    if features.is_empty() {
        return Err(RankingError::NoFeatures);
    }
    let per_feature_ranks: Vec<(Feature, BTreeMap<Word, Rational64>)> = features
        .iter()
        .map(|fs| (fs.feature, rank_numbers(fs, candidates)))
        .collect();

    let n_features = Rational64::from_integer(per_feature_ranks.len() as i64);
    let mut avg_rank = BTreeMap::new();
    for word in candidates {
        let sum: Rational64 = per_feature_ranks
            .iter()
            .map(|(_, ranks)| ranks[word])
            .sum();
        avg_rank.insert(word.clone(), sum / n_features);
    }

    let mut order: Vec<Word> = candidates.to_vec();
    order.sort_by(|a, b| {
        avg_rank[a]
            .cmp(&avg_rank[b])
            .then_with(|| freq.frequency(b).cmp(&freq.frequency(a)))
            .then_with(|| a.cmp(b))
    });
    Ok(RankedCandidates {
        per_feature_ranks,
        avg_rank,
        order,
    })
}

/// The replacement decision over the top two ranked candidates: take the
/// first if it is not the target itself; otherwise take the second only when
/// it is strictly more frequent than the target. Never returns the target.
pub fn select_replacement(
    ranked: &RankedCandidates,
    target: &Word,
    freq: &FrequencyTable,
) -> Option<Word> {
    let first = ranked.order.first()?;
    if first != target {
        return Some(first.clone());
    }
    let second = ranked.order.get(1)?;
    if freq.frequency(second) > freq.frequency(target) {
        return Some(second.clone());
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Word;
    use crate::lexicons::{
        EmbeddingTable, FrequencyTable, SememeKB, SynonymThesaurus, ValidWordList,
    };
    use crate::mlm::MockBackend;

    fn w(s: &str) -> Word {
        Word::new(s).unwrap()
    }

    fn words(list: &[&str]) -> Vec<Word> {
        list.iter().map(|s| w(s)).collect()
    }

    fn ratio(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn empty_bundle() -> LexiconBundle {
        LexiconBundle {
            synonyms: SynonymThesaurus::new(),
            freq: FrequencyTable::new(),
            valid: ValidWordList::new(),
            sememes: SememeKB::new(),
            embeddings: EmbeddingTable::new(2),
        }
    }

    fn scores_of(feature: Feature, pairs: &[(&str, Option<f64>)]) -> FeatureScores {
        let mut fs = FeatureScores::new(feature);
        for (word, value) in pairs {
            fs.values.insert(w(word), *value);
        }
        fs
    }

    #[test]
    fn fractional_ranking_with_ties() {
        let candidates = words(&["甲", "乙", "丙", "丁"]);
        let fs = scores_of(
            Feature::LmFluency,
            &[
                ("甲", Some(0.2)),
                ("乙", Some(0.5)),
                ("丙", Some(0.5)),
                ("丁", Some(0.9)),
            ],
        );
        let ranks = rank_numbers(&fs, &candidates);
        assert_eq!(ranks[&w("甲")], ratio(1, 1));
        assert_eq!(ranks[&w("乙")], ratio(5, 2));
        assert_eq!(ranks[&w("丙")], ratio(5, 2));
        assert_eq!(ranks[&w("丁")], ratio(4, 1));
    }

    #[test]
    fn all_equal_scores_share_mean_rank() {
        let candidates = words(&["甲", "乙", "丙"]);
        let fs = scores_of(
            Feature::Frequency,
            &[("甲", Some(7.0)), ("乙", Some(7.0)), ("丙", Some(7.0))],
        );
        let ranks = rank_numbers(&fs, &candidates);
        for word in &candidates {
            assert_eq!(ranks[word], ratio(2, 1)); // (n+1)/2 with n=3
        }
    }

    #[test]
    fn undefined_scores_rank_last_and_tie() {
        let candidates = words(&["甲", "乙", "丙"]);
        let fs = scores_of(
            Feature::EmbSimilarity,
            &[("甲", Some(0.4)), ("乙", None), ("丙", None)],
        );
        let ranks = rank_numbers(&fs, &candidates);
        assert_eq!(ranks[&w("甲")], ratio(1, 1));
        assert_eq!(ranks[&w("乙")], ratio(5, 2));
        assert_eq!(ranks[&w("丙")], ratio(5, 2));
    }

    #[test]
    fn rank_sum_is_conserved() {
        let candidates = words(&["甲", "乙", "丙", "丁", "戊"]);
        let fs = scores_of(
            Feature::Frequency,
            &[
                ("甲", Some(3.0)),
                ("乙", Some(3.0)),
                ("丙", None),
                ("丁", Some(9.0)),
                ("戊", None),
            ],
        );
        let ranks = rank_numbers(&fs, &candidates);
        let sum: Rational64 = candidates.iter().map(|w| ranks[w]).sum();
        assert_eq!(sum, ratio(15, 1)); // n(n+1)/2 = 15
    }

    /// Backend that assigns probability `p` to the true character at every
    /// masked position of `modified`.
    fn per_position_backend(modified: &str, p_of: impl Fn(&str) -> f64) -> MockBackend {
        let toks = crate::mlm::tokenize(modified);
        let seq = TokenSequence::single(toks.clone()).unwrap();
        let mut backend = MockBackend::new();
        for (i, tok) in toks.iter().enumerate() {
            let masked = seq.with_token(i, MASK);
            backend
                .insert(masked.context_key(i), vec![(tok.clone(), p_of(tok))])
                .unwrap();
        }
        backend
    }

    #[test]
    fn lm_fluency_zero_when_model_is_certain() {
        let backend = per_position_backend("他跑得很快啊", |_| 1.0);
        let loss = lm_fluency(&backend, "他跑得很快啊", 4, 1, &w("快"), 5).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn lm_fluency_half_probability_gives_ln_two() {
        // Every masked character has probability 0.5 and |W| = 7, so the
        // mean is ln 2.
        let backend = per_position_backend("一二三换五六七", |_| 0.5);
        let loss = lm_fluency(&backend, "一二三四五六七", 3, 1, &w("换"), 5).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn lm_fluency_matches_hand_enumerated_mean() {
        // 12-character sentence, window 5 around a 1-character candidate at
        // offset 5: positions 0..=10 are masked in turn (11 positions).
        let sentence = "一二三四五目六七八九十整";
        let candidate = w("换");
        let probs: &[(&str, f64)] = &[
            ("一", 0.9),
            ("二", 0.8),
            ("三", 0.7),
            ("四", 0.6),
            ("五", 0.5),
            ("换", 0.35),
            ("六", 0.45),
            ("七", 0.55),
            ("八", 0.65),
            ("九", 0.75),
            ("十", 0.85),
            ("整", 0.95),
        ];
        let lookup = |tok: &str| probs.iter().find(|(c, _)| *c == tok).unwrap().1;
        let backend = per_position_backend("一二三四五换六七八九十整", lookup);
        let got = lm_fluency(&backend, sentence, 5, 1, &candidate, 5).unwrap();
        // Hand enumeration of the 11 masked positions 一..十 (整 lies outside
        // the window).
        let expected = (-(0.9f64).ln()
            - (0.8f64).ln()
            - (0.7f64).ln()
            - (0.6f64).ln()
            - (0.5f64).ln()
            - (0.35f64).ln()
            - (0.45f64).ln()
            - (0.55f64).ln()
            - (0.65f64).ln()
            - (0.75f64).ln()
            - (0.85f64).ln())
            / 11.0;
        assert!((got - expected).abs() < 1e-12);
        let _ = backend;
    }

    #[test]
    fn emb_similarity_rules() {
        let mut bundle = empty_bundle();
        bundle
            .embeddings
            .insert(w("目标"), vec![1.0, 0.0])
            .unwrap();
        bundle.embeddings.insert(w("候选"), vec![1.0, 1.0]).unwrap();
        assert_eq!(emb_similarity(&bundle, &w("目标"), &w("目标")), Some(1.0));
        assert_eq!(emb_similarity(&bundle, &w("目标"), &w("未知")), None);
        let expected = bundle.embeddings.cosine(&w("目标"), &w("候选")).unwrap();
        assert_eq!(
            emb_similarity(&bundle, &w("目标"), &w("候选")),
            Some(expected)
        );
    }

    #[test]
    fn sememe_similarity_closed_forms() {
        let mut bundle = empty_bundle();
        bundle.sememes.add_sense(w("目标"), ["A".into(), "B".into(), "C".into()]);
        bundle.sememes.add_sense(w("一致"), ["A".into(), "B".into(), "C".into()]);
        bundle.sememes.add_sense(w("不同"), ["X".into()]);
        bundle.sememes.add_sense(w("部分"), ["A".into(), "B".into(), "D".into()]);
        assert_eq!(sememe_similarity(&bundle, &w("目标"), &w("一致")), 1.0);
        assert_eq!(sememe_similarity(&bundle, &w("目标"), &w("不同")), 0.0);
        assert_eq!(sememe_similarity(&bundle, &w("目标"), &w("部分")), 0.5);
        assert_eq!(sememe_similarity(&bundle, &w("目标"), &w("未知")), 0.0);
        assert_eq!(sememe_similarity(&bundle, &w("目标"), &w("目标")), 1.0);
    }

    #[test]
    fn aggregate_single_candidate_is_rank_one() {
        let candidates = words(&["甲"]);
        let fs = scores_of(Feature::Frequency, &[("甲", Some(3.0))]);
        let ranked = aggregate(&[fs], &candidates, &FrequencyTable::new()).unwrap();
        assert_eq!(ranked.avg_rank[&w("甲")], ratio(1, 1));
        assert_eq!(ranked.order, candidates);
    }

    #[test]
    fn aggregate_matches_hand_computed_means() {
        // Feature 1 (freq, higher better): 甲=9 → 1, 乙=5 → 2, 丙=1 → 3.
        // Feature 2 (fluency, lower better): 甲=0.8 → 3, 乙=0.1 → 1, 丙=0.5 → 2.
        // Means: 甲 = 2, 乙 = 3/2, 丙 = 5/2.
        let candidates = words(&["甲", "乙", "丙"]);
        let f1 = scores_of(
            Feature::Frequency,
            &[("甲", Some(9.0)), ("乙", Some(5.0)), ("丙", Some(1.0))],
        );
        let f2 = scores_of(
            Feature::LmFluency,
            &[("甲", Some(0.8)), ("乙", Some(0.1)), ("丙", Some(0.5))],
        );
        let ranked = aggregate(&[f1.clone(), f2.clone()], &candidates, &FrequencyTable::new())
            .unwrap();
        assert_eq!(ranked.avg_rank[&w("甲")], ratio(2, 1));
        assert_eq!(ranked.avg_rank[&w("乙")], ratio(3, 2));
        assert_eq!(ranked.avg_rank[&w("丙")], ratio(5, 2));
        assert_eq!(ranked.order, words(&["乙", "甲", "丙"]));

        // Disabling one of two features leaves exactly the other's ranks.
        let only_f2 = aggregate(&[f2.clone()], &candidates, &FrequencyTable::new()).unwrap();
        let f2_ranks = rank_numbers(&f2, &candidates);
        for word in &candidates {
            assert_eq!(only_f2.avg_rank[word], f2_ranks[word]);
        }
    }

    #[test]
    fn aggregate_rejects_empty_inputs() {
        let fs = scores_of(Feature::Frequency, &[]);
        assert!(matches!(
            aggregate(&[fs], &[], &FrequencyTable::new()),
            Err(RankingError::EmptyCandidates)
        ));
        assert!(matches!(
            aggregate(&[], &words(&["甲"]), &FrequencyTable::new()),
            Err(RankingError::NoFeatures)
        ));
    }

    #[test]
    fn select_replacement_top_two_rule() {
        let mut freq = FrequencyTable::new();
        freq.insert(w("目标"), 10);
        freq.insert(w("常用"), 100);
        freq.insert(w("罕见"), 2);

        let ranked = |order: &[&str]| RankedCandidates {
            per_feature_ranks: Vec::new(),
            avg_rank: BTreeMap::new(),
            order: words(order),
        };

        // First candidate differs from the target: replace.
        assert_eq!(
            select_replacement(&ranked(&["常用", "目标"]), &w("目标"), &freq),
            Some(w("常用"))
        );
        // Target first, second more frequent: replace with second.
        assert_eq!(
            select_replacement(&ranked(&["目标", "常用"]), &w("目标"), &freq),
            Some(w("常用"))
        );
        // Target first, second not more frequent: no replacement.
        assert_eq!(
            select_replacement(&ranked(&["目标", "罕见"]), &w("目标"), &freq),
            None
        );
        // Only the target itself: no replacement.
        assert_eq!(select_replacement(&ranked(&["目标"]), &w("目标"), &freq), None);
    }
}
