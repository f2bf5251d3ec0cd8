//! The end-to-end simplification pipeline: generate candidates, score and
//! rank them, decide the replacement, and splice it into the sentence,
//! emitting a full per-instance trace.
//!
//! Instance-driven mode (the target word is given) needs no segmenter and is
//! how datasets are evaluated. Whole-sentence mode walks a sentence's content
//! words left to right behind a pluggable [`Segmenter`] and additionally
//! discards replacements that are not more frequent than the original word.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Instance, Word};
use crate::generation::{generate, CandidateSet, GenerationMethod, GeneratorConfig, TargetContext};
use crate::lexicons::{LexiconBundle, LexiconError};
use crate::mlm::{MlmBackend, MlmError};
use crate::ranking::{aggregate, score_features, select_replacement, Feature, RankingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mlm(#[from] MlmError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error("trace line {line}: {source}")]
    TraceParse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Full pipeline configuration: generator choice and parameters, enabled
/// ranking features, and the fluency window.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub generator: GeneratorConfig,
    pub features: Vec<Feature>,
    pub lm_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            generator: GeneratorConfig::default(),
            features: Feature::ALL.to_vec(),
            lm_window: 5,
        }
    }
}

/// Record of every pipeline stage for one instance. Serialized as one JSON
/// line per instance; all collections are sorted so output is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplificationTrace {
    pub instance_id: String,
    pub method: GenerationMethod,
    pub candidates_raw: Vec<Word>,
    pub candidates_final: Vec<Word>,
    /// feature name -> candidate -> score (`null` marks an undefined value).
    pub per_feature_scores: BTreeMap<String, BTreeMap<Word, Option<f64>>>,
    pub ranked_order: Vec<Word>,
    pub replacement: Option<Word>,
    pub output_sentence: String,
}

/// Splice `replacement` over the `len`-character span at `offset`.
fn splice(sentence: &str, offset: usize, len: usize, replacement: &str) -> String {
    let prefix: String = sentence.chars().take(offset).collect();
    let suffix: String = sentence.chars().skip(offset + len).collect();
    format!("{prefix}{replacement}{suffix}")
}

fn run_target(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    cfg: &PipelineConfig,
    ctx: TargetContext<'_>,
    instance_id: &str,
    require_simpler: bool,
) -> Result<SimplificationTrace, PipelineError> {
    let cand_set: CandidateSet = generate(backend, bundle, ctx, instance_id, &cfg.generator)?;
    let candidates: Vec<Word> = cand_set.candidates.iter().cloned().collect();

    let scores = score_features(
        backend,
        bundle,
        ctx.sentence,
        ctx.offset,
        ctx.target,
        &candidates,
        &cfg.features,
        cfg.lm_window,
    )?;
    let ranked = aggregate(&scores, &candidates, &bundle.freq)?;

    let mut replacement = select_replacement(&ranked, ctx.target, &bundle.freq);
    if require_simpler {
        if let Some(word) = &replacement {
            if bundle.freq.frequency(word) <= bundle.freq.frequency(ctx.target) {
                replacement = None;
            }
        }
    }
    let output_sentence = match &replacement {
        Some(word) => splice(ctx.sentence, ctx.offset, ctx.target.char_len(), word.as_str()),
        None => ctx.sentence.to_string(),
    };

    let per_feature_scores = scores
        .into_iter()
        .map(|fs| (fs.feature.config_name().to_string(), fs.values))
        .collect();

    Ok(SimplificationTrace {
        instance_id: instance_id.to_string(),
        method: cand_set.method,
        candidates_raw: cand_set.raw.into_iter().collect(),
        candidates_final: cand_set.candidates.into_iter().collect(),
        per_feature_scores,
        ranked_order: ranked.order,
        replacement,
        output_sentence,
    })
}

/// Simplify one dataset instance.
pub fn simplify_instance(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    cfg: &PipelineConfig,
    inst: &Instance,
    instance_id: &str,
) -> Result<SimplificationTrace, PipelineError> {
    run_target(backend, bundle, cfg, inst.into(), instance_id, false)
}

/// Simplify every instance of a dataset, optionally fanning out across
/// `workers` threads. Traces come back in dataset order regardless of
/// scheduling.
pub fn simplify_dataset(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    cfg: &PipelineConfig,
    dataset: &Dataset,
    workers: usize,
) -> Result<Vec<SimplificationTrace>, PipelineError> {
    let ids = dataset.effective_ids();
    if workers <= 1 {
        return dataset
            .instances
            .iter()
            .zip(&ids)
            .map(|(inst, id)| simplify_instance(backend, bundle, cfg, inst, id))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        dataset
            .instances
            .par_iter()
            .zip(ids.par_iter())
            .map(|(inst, id)| simplify_instance(backend, bundle, cfg, inst, id))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Whole-sentence mode
// ---------------------------------------------------------------------------

/// A content word found by a segmenter, at its character offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentWord {
    pub word: Word,
    pub offset: usize,
}

/// Segmentation-plus-tagging capability: yield the content words (nouns,
/// verbs, adjectives, adverbs) of a sentence, left to right.
pub trait Segmenter: Send + Sync {
    fn content_words(&self, sentence: &str) -> Vec<ContentWord>;
}

/// Simplify every content word of a raw sentence, left to right. Each word
/// is processed against the already-modified sentence, and a replacement is
/// kept only when it is strictly more frequent than the word it replaces.
pub fn simplify_sentence(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    cfg: &PipelineConfig,
    segmenter: &dyn Segmenter,
    sentence: &str,
) -> Result<(String, Vec<SimplificationTrace>), PipelineError> {
    let mut words = segmenter.content_words(sentence);
    words.sort_by_key(|cw| cw.offset);

    let mut current = sentence.to_string();
    let mut delta = 0isize;
    let mut traces = Vec::with_capacity(words.len());
    for cw in words {
        let offset = (cw.offset as isize + delta) as usize;
        let id = format!("{}@{}", cw.word, cw.offset);
        let ctx = TargetContext {
            sentence: &current,
            target: &cw.word,
            offset,
        };
        let trace = run_target(backend, bundle, cfg, ctx, &id, true)?;
        if let Some(replacement) = &trace.replacement {
            delta += replacement.char_len() as isize - cw.word.char_len() as isize;
        }
        current = trace.output_sentence.clone();
        traces.push(trace);
    }
    Ok((current, traces))
}

/// Greedy longest-match segmenter over a `word<TAB>pos` lexicon. Content
/// part-of-speech tags are `n`, `v`, `adj`, `adv`; anything else is skipped.
#[derive(Debug, Clone, Default)]
pub struct DictSegmenter {
    entries: HashMap<String, String>,
    max_chars: usize,
}

impl DictSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, pos: impl Into<String>) {
        let word = word.into();
        self.max_chars = self.max_chars.max(word.chars().count());
        self.entries.insert(word, pos.into());
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let reader = File::open(path)
            .map(BufReader::new)
            .map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut seg = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| LexiconError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let (word, pos) = line.split_once('\t').ok_or(LexiconError::Format {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "expected word<TAB>pos".into(),
            })?;
            seg.insert(word.trim(), pos.trim());
        }
        Ok(seg)
    }

    fn is_content_pos(pos: &str) -> bool {
        matches!(pos, "n" | "v" | "adj" | "adv")
    }
}

impl Segmenter for DictSegmenter {
    fn content_words(&self, sentence: &str) -> Vec<ContentWord> {
        let chars: Vec<char> = sentence.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = 0;
            for len in (1..=self.max_chars.min(chars.len() - i)).rev() {
                let span: String = chars[i..i + len].iter().collect();
                if let Some(pos) = self.entries.get(&span) {
                    if Self::is_content_pos(pos) {
                        out.push(ContentWord {
                            word: Word::new(span).expect("lexicon words are valid"),
                            offset: i,
                        });
                    }
                    matched = len;
                    break;
                }
            }
            i += matched.max(1);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

/// Serialize traces as JSON lines.
pub fn serialize_traces(traces: &[SimplificationTrace]) -> String {
    let mut out = String::new();
    for trace in traces {
        out.push_str(&serde_json::to_string(trace).expect("trace serializes"));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines trace file.
pub fn parse_traces(reader: impl BufRead) -> Result<Vec<SimplificationTrace>, PipelineError> {
    let mut traces = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: SimplificationTrace =
            serde_json::from_str(&line).map_err(|source| PipelineError::TraceParse {
                line: idx + 1,
                source,
            })?;
        traces.push(trace);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GoldSubstitute, Rank};
    use crate::lexicons::{
        EmbeddingTable, FrequencyTable, SememeKB, SynonymThesaurus, ValidWordList,
    };
    use crate::mlm::{tokenize, MockBackend, TokenSequence, MASK};

    fn w(s: &str) -> Word {
        Word::new(s).unwrap()
    }

    fn instance(sentence: &str, target: &str, offset: usize) -> Instance {
        Instance::new(
            sentence,
            w(target),
            offset,
            vec![GoldSubstitute {
                word: w("占位"),
                rank: Rank::from_integer(1),
            }],
        )
        .unwrap()
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

    /// Mock with per-position rows assigning each character of the given
    /// sentences a fixed probability. Sentences differing only at the masked
    /// position share a context key, so their rows are merged.
    fn fluency_backend(sentences: &[&str], p_of: &dyn Fn(&str) -> f64) -> MockBackend {
        let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for sentence in sentences {
            let toks = tokenize(sentence);
            let seq = TokenSequence::single(toks.clone()).unwrap();
            for (i, tok) in toks.iter().enumerate() {
                let masked = seq.with_token(i, MASK);
                rows.entry(masked.context_key(i))
                    .or_default()
                    .insert(tok.clone(), p_of(tok));
            }
        }
        let mut backend = MockBackend::new();
        for (key, dist) in rows {
            backend.insert(key, dist.into_iter().collect()).unwrap();
        }
        backend
    }

    #[test]
    fn lone_target_means_no_replacement() {
        let bundle = empty_bundle();
        let backend = MockBackend::new();
        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                method: GenerationMethod::Synonym,
                ..GeneratorConfig::default()
            },
            ..PipelineConfig::default()
        };
        let inst = instance("他的寓所很大。", "寓所", 2);
        let trace = simplify_instance(&backend, &bundle, &cfg, &inst, "0").unwrap();
        assert_eq!(trace.candidates_final, vec![w("寓所")]);
        assert_eq!(trace.replacement, None);
        assert_eq!(trace.output_sentence, "他的寓所很大。");
    }

    #[test]
    fn all_feature_winner_is_spliced_in() {
        // 住所 beats 住处 on every feature, so it must replace 寓所; the
        // output sentence is checked against direct string surgery.
        let mut bundle = empty_bundle();
        bundle.synonyms.add_group(["寓所", "住所", "住处"].map(w));
        bundle.valid = ValidWordList::from_words(["住所", "住处"].map(w));
        bundle.freq.insert(w("住所"), 900);
        bundle.freq.insert(w("住处"), 300);
        bundle.freq.insert(w("寓所"), 10);
        bundle.embeddings = EmbeddingTable::new(2);
        bundle.embeddings.insert(w("寓所"), vec![1.0, 0.0]).unwrap();
        bundle.embeddings.insert(w("住所"), vec![1.0, 0.05]).unwrap();
        bundle.embeddings.insert(w("住处"), vec![0.5, 0.8]).unwrap();
        bundle.sememes.add_sense(w("寓所"), ["居", "所"].map(String::from));
        bundle.sememes.add_sense(w("住所"), ["居", "所"].map(String::from));
        bundle.sememes.add_sense(w("住处"), ["居"].map(String::from));

        let sentence = "他的寓所很大。";
        let backend = fluency_backend(
            &[sentence, "他的住所很大。", "他的住处很大。"],
            &|tok| match tok {
                "住" => 0.9,
                "所" => 0.8,
                "处" => 0.1,
                "寓" => 0.05,
                _ => 0.5,
            },
        );
        let inst = instance(sentence, "寓所", 2);
        let trace =
            simplify_instance(&backend, &bundle, &PipelineConfig::default(), &inst, "0").unwrap();
        assert_eq!(trace.replacement, Some(w("住所")));
        let expected: String = {
            let chars: Vec<char> = sentence.chars().collect();
            let mut s: String = chars[..2].iter().collect();
            s.push_str("住所");
            s.extend(&chars[4..]);
            s
        };
        assert_eq!(trace.output_sentence, expected);
        assert_eq!(trace.output_sentence, "他的住所很大。");
    }

    #[test]
    fn runner_up_with_higher_frequency_replaces() {
        // The target wins three features; the runner-up wins frequency and is
        // more frequent than the target, so Algorithm-1's second rule fires.
        let mut bundle = empty_bundle();
        bundle.synonyms.add_group(["本词", "常词"].map(w));
        bundle.valid = ValidWordList::from_words(["常词"].map(w));
        bundle.freq.insert(w("本词"), 50);
        bundle.freq.insert(w("常词"), 500);
        bundle.embeddings = EmbeddingTable::new(2);
        bundle.embeddings.insert(w("本词"), vec![1.0, 0.0]).unwrap();
        bundle.embeddings.insert(w("常词"), vec![0.2, 0.9]).unwrap();
        bundle.sememes.add_sense(w("本词"), ["甲"].map(String::from));
        bundle.sememes.add_sense(w("常词"), ["乙"].map(String::from));

        let sentence = "这个本词很好。";
        let backend = fluency_backend(&[sentence, "这个常词很好。"], &|tok| match tok {
            "本" => 0.9,
            "常" => 0.1,
            _ => 0.5,
        });
        let inst = instance(sentence, "本词", 2);
        let trace =
            simplify_instance(&backend, &bundle, &PipelineConfig::default(), &inst, "0").unwrap();
        assert_eq!(trace.ranked_order[0], w("本词"));
        assert_eq!(trace.replacement, Some(w("常词")));
        assert_eq!(trace.output_sentence, "这个常词很好。");
    }

    struct FixedSegmenter(Vec<ContentWord>);
    impl Segmenter for FixedSegmenter {
        fn content_words(&self, _sentence: &str) -> Vec<ContentWord> {
            self.0.clone()
        }
    }

    #[test]
    fn sentence_without_content_words_is_unchanged() {
        let bundle = empty_bundle();
        let backend = MockBackend::new();
        let seg = FixedSegmenter(Vec::new());
        let (out, traces) = simplify_sentence(
            &backend,
            &bundle,
            &PipelineConfig::default(),
            &seg,
            "的了吗。",
        )
        .unwrap();
        assert_eq!(out, "的了吗。");
        assert!(traces.is_empty());
    }

    #[test]
    fn sentence_mode_discards_less_frequent_winner() {
        // 劣词 wins the fluency ranking but is rarer than the original, so
        // the implicit complex-word-identification rule drops it.
        let mut bundle = empty_bundle();
        bundle.synonyms.add_group(["普通", "劣词"].map(w));
        bundle.valid = ValidWordList::from_words(["劣词"].map(w));
        bundle.freq.insert(w("普通"), 100);
        bundle.freq.insert(w("劣词"), 5);

        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                method: GenerationMethod::Synonym,
                ..GeneratorConfig::default()
            },
            features: vec![Feature::LmFluency],
            lm_window: 5,
        };
        let backend = fluency_backend(&["这是普通话。", "这是劣词话。"], &|tok| match tok {
            "劣" | "词" => 0.9,
            "普" | "通" => 0.1,
            _ => 0.5,
        });
        let seg = FixedSegmenter(vec![ContentWord {
            word: w("普通"),
            offset: 2,
        }]);
        let (out, traces) =
            simplify_sentence(&backend, &bundle, &cfg, &seg, "这是普通话。").unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].ranked_order[0], w("劣词"));
        assert_eq!(traces[0].replacement, None, "rarer winner is discarded");
        assert_eq!(out, "这是普通话。");
    }

    #[test]
    fn sentence_mode_composes_left_to_right() {
        // Two content words; the final string must equal manually composing
        // the two single-word simplifications in order.
        let mut bundle = empty_bundle();
        bundle.synonyms.add_group(["迅疾", "迅速"].map(w));
        bundle.synonyms.add_group(["欣喜", "高兴"].map(w));
        bundle.valid = ValidWordList::from_words(["迅速", "高兴"].map(w));
        bundle.freq.insert(w("迅疾"), 5);
        bundle.freq.insert(w("迅速"), 800);
        bundle.freq.insert(w("欣喜"), 7);
        bundle.freq.insert(w("高兴"), 900);

        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                method: GenerationMethod::Synonym,
                ..GeneratorConfig::default()
            },
            features: vec![Feature::Frequency],
            lm_window: 5,
        };
        let backend = MockBackend::new();
        let sentence = "他迅疾地变得欣喜。";
        let seg = FixedSegmenter(vec![
            ContentWord {
                word: w("迅疾"),
                offset: 1,
            },
            ContentWord {
                word: w("欣喜"),
                offset: 6,
            },
        ]);
        let (out, traces) =
            simplify_sentence(&backend, &bundle, &cfg, &seg, sentence).unwrap();
        assert_eq!(traces.len(), 2);

        // Manual composition.
        let step1 = simplify_instance(
            &backend,
            &bundle,
            &cfg,
            &instance(sentence, "迅疾", 1),
            "a",
        )
        .unwrap();
        let step2 = simplify_instance(
            &backend,
            &bundle,
            &cfg,
            &instance(&step1.output_sentence, "欣喜", 6),
            "b",
        )
        .unwrap();
        assert_eq!(out, step2.output_sentence);
        assert_eq!(out, "他迅速地变得高兴。");
    }

    #[test]
    fn dict_segmenter_greedy_longest_match() {
        let mut seg = DictSegmenter::new();
        seg.insert("高兴", "adj");
        seg.insert("高", "adj");
        seg.insert("他", "pron");
        seg.insert("很", "adv");
        let words = seg.content_words("他很高兴。");
        assert_eq!(
            words,
            vec![
                ContentWord {
                    word: w("很"),
                    offset: 1
                },
                ContentWord {
                    word: w("高兴"),
                    offset: 2
                },
            ]
        );
    }

    #[test]
    fn traces_round_trip_and_are_deterministic() {
        let mut bundle = empty_bundle();
        bundle.synonyms.add_group(["寓所", "住所"].map(w));
        bundle.valid = ValidWordList::from_words(["住所"].map(w));
        bundle.freq.insert(w("住所"), 100);
        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                method: GenerationMethod::Synonym,
                ..GeneratorConfig::default()
            },
            features: vec![Feature::Frequency, Feature::SememeSimilarity],
            lm_window: 5,
        };
        let backend = MockBackend::new();
        let dataset = Dataset::new(
            "t",
            vec![
                instance("他的寓所很大。", "寓所", 2),
                instance("寓所在山上。", "寓所", 0),
            ],
        );
        let a = simplify_dataset(&backend, &bundle, &cfg, &dataset, 1).unwrap();
        let b = simplify_dataset(&backend, &bundle, &cfg, &dataset, 3).unwrap();
        assert_eq!(a, b, "parallel run must match serial run");
        let text = serialize_traces(&a);
        let parsed = parse_traces(text.as_bytes()).unwrap();
        assert_eq!(parsed, a);
        assert_eq!(serialize_traces(&parsed), text);
    }

    #[test]
    fn frequency_maximal_replacement_is_idempotent() {
        // 常用 is the most frequent in its group, so simplifying its own
        // output at the same position changes nothing further.
        let mut bundle = empty_bundle();
        bundle.synonyms.add_group(["难词", "常用", "次常"].map(w));
        bundle.valid = ValidWordList::from_words(["常用", "次常", "难词"].map(w));
        bundle.freq.insert(w("难词"), 1);
        bundle.freq.insert(w("常用"), 1000);
        bundle.freq.insert(w("次常"), 500);
        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                method: GenerationMethod::Synonym,
                ..GeneratorConfig::default()
            },
            features: vec![Feature::Frequency],
            lm_window: 5,
        };
        let backend = MockBackend::new();
        let first = simplify_instance(
            &backend,
            &bundle,
            &cfg,
            &instance("这个难词不好。", "难词", 2),
            "0",
        )
        .unwrap();
        assert_eq!(first.replacement, Some(w("常用")));
        let second = simplify_instance(
            &backend,
            &bundle,
            &cfg,
            &instance(&first.output_sentence, "常用", 2),
            "1",
        )
        .unwrap();
        assert_eq!(second.replacement, None);
        assert_eq!(second.output_sentence, first.output_sentence);
    }
}
