//! Substitution generation: five strategies behind one interface, plus the
//! shared valid-word post-filter.
//!
//! Every candidate set keeps both the raw generator output and the filtered
//! result, and always contains the target word itself so that ranking can
//! compare substitutes against it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Instance, Word};
use crate::lexicons::{LexiconBundle, ValidWordList};
use crate::mlm::{tokenize, MlmBackend, MlmError, TokenSequence, MASK};

/// Which strategy produced a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMethod {
    Synonym,
    Embedding,
    Mlm,
    Sememe,
    Hybrid,
}

impl GenerationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GenerationMethod::Synonym => "synonym",
            GenerationMethod::Embedding => "embedding",
            GenerationMethod::Mlm => "mlm",
            GenerationMethod::Sememe => "sememe",
            GenerationMethod::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for GenerationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GenerationMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synonym" => Ok(GenerationMethod::Synonym),
            "embedding" => Ok(GenerationMethod::Embedding),
            "mlm" => Ok(GenerationMethod::Mlm),
            "sememe" => Ok(GenerationMethod::Sememe),
            "hybrid" => Ok(GenerationMethod::Hybrid),
            other => Err(format!(
                "unknown generator {other:?}; expected synonym|embedding|mlm|sememe|hybrid"
            )),
        }
    }
}

/// Generator parameters. `mlm_top_n` is the per-position beam width,
/// `mlm_max_mask_len` caps the number of mask slots, `embedding_k` is the
/// nearest-neighbor count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub method: GenerationMethod,
    pub mlm_top_n: usize,
    pub mlm_max_mask_len: usize,
    pub embedding_k: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            method: GenerationMethod::Hybrid,
            mlm_top_n: 10,
            mlm_max_mask_len: 4,
            embedding_k: 10,
        }
    }
}

/// Substitute candidates for one instance, with provenance.
///
/// `candidates` is the finalized set: raw output intersected with the valid
/// word list, plus the target itself (which bypasses the filter).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub instance_id: String,
    pub method: GenerationMethod,
    pub raw: BTreeSet<Word>,
    pub candidates: BTreeSet<Word>,
}

/// The slice of an instance that generators actually consume: the sentence,
/// the target word, and its character offset. Raw-text simplification builds
/// these without gold annotations.
#[derive(Debug, Clone, Copy)]
pub struct TargetContext<'a> {
    pub sentence: &'a str,
    pub target: &'a Word,
    pub offset: usize,
}

impl<'a> From<&'a Instance> for TargetContext<'a> {
    fn from(inst: &'a Instance) -> Self {
        TargetContext {
            sentence: inst.sentence(),
            target: inst.target(),
            offset: inst.offset(),
        }
    }
}

/// Apply the valid-word post-filter and inject the target.
pub fn finalize(raw: &BTreeSet<Word>, valid: &ValidWordList, target: &Word) -> BTreeSet<Word> {
    let mut out: BTreeSet<Word> = raw.iter().filter(|w| valid.contains(w)).cloned().collect();
    out.insert(target.clone());
    out
}

fn build(
    instance_id: &str,
    method: GenerationMethod,
    raw: BTreeSet<Word>,
    valid: &ValidWordList,
    target: &Word,
) -> CandidateSet {
    let candidates = finalize(&raw, valid, target);
    CandidateSet {
        instance_id: instance_id.to_string(),
        method,
        raw,
        candidates,
    }
}

/// Synonym-thesaurus strategy: the union of the target's synonym groups.
pub fn generate_synonym<'a>(
    bundle: &LexiconBundle,
    target: impl Into<TargetContext<'a>>,
    instance_id: &str,
) -> CandidateSet {
    let ctx = target.into();
    let raw = bundle.synonyms.lookup_synonyms(ctx.target);
    build(instance_id, GenerationMethod::Synonym, raw, &bundle.valid, ctx.target)
}

/// Embedding strategy: the `k` nearest words by cosine similarity, filtered
/// afterwards. An out-of-vocabulary target yields only the target.
pub fn generate_embedding<'a>(
    bundle: &LexiconBundle,
    target: impl Into<TargetContext<'a>>,
    instance_id: &str,
    k: usize,
) -> CandidateSet {
    let ctx = target.into();
    let raw: BTreeSet<Word> = bundle
        .embeddings
        .nearest(ctx.target, k, &bundle.freq)
        .into_iter()
        .map(|(w, _)| w)
        .collect();
    build(instance_id, GenerationMethod::Embedding, raw, &bundle.valid, ctx.target)
}

/// Sememe strategy: words sharing an exactly-equal sense with the target.
pub fn generate_sememe<'a>(
    bundle: &LexiconBundle,
    target: impl Into<TargetContext<'a>>,
    instance_id: &str,
) -> CandidateSet {
    let ctx = target.into();
    let raw = bundle.sememes.sememe_candidates(ctx.target);
    build(instance_id, GenerationMethod::Sememe, raw, &bundle.valid, ctx.target)
}

/// Token span `[start, start+len)` the target occupies in the tokenized
/// sentence.
fn target_token_span(ctx: &TargetContext<'_>) -> (usize, usize) {
    let prefix: String = ctx.sentence.chars().take(ctx.offset).collect();
    let start = tokenize(&prefix).len();
    let len = tokenize(ctx.target.as_str()).len();
    (start, len)
}

/// Candidate strings of exactly `mask_len` characters, produced by replacing
/// the target with that many mask slots and filling them left to right.
///
/// The sentence pair (original, masked) is fed as one sequence. Each mask is
/// filled from the backend's top `top_n` tokens given the fills so far; the
/// beam keeps the `top_n` best partial fills by probability product between
/// positions and returns the `top_n` best complete strings, scored by the
/// product of per-position probabilities. Ties break toward codepoint order.
pub fn mlm_length_candidates<'a>(
    backend: &dyn MlmBackend,
    target: impl Into<TargetContext<'a>>,
    mask_len: usize,
    top_n: usize,
) -> Result<Vec<(String, f64)>, MlmError> {
    let ctx = target.into();
    let sentence_tokens = tokenize(ctx.sentence);
    let (target_start, target_len) = target_token_span(&ctx);
    let mut masked = sentence_tokens.clone();
    masked.splice(
        target_start..target_start + target_len,
        std::iter::repeat(MASK.to_string()).take(mask_len),
    );
    let first_mask = sentence_tokens.len() + target_start;
    let seq = TokenSequence::pair(sentence_tokens, masked)?;

    let mut beam: Vec<(String, f64, TokenSequence)> = vec![(String::new(), 1.0, seq)];
    for slot in 0..mask_len {
        let position = first_mask + slot;
        let mut extended: Vec<(String, f64, TokenSequence)> = Vec::new();
        for (prefix, prob, seq) in &beam {
            let dist = backend.predict_masked(seq, position, top_n)?;
            for (token, p) in dist.entries() {
                let mut filled = prefix.clone();
                filled.push_str(token);
                extended.push((filled, prob * p, seq.with_token(position, token.clone())));
            }
        }
        extended.sort_by(|(sa, pa, _), (sb, pb, _)| {
            pb.partial_cmp(pa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| sa.cmp(sb))
        });
        extended.truncate(top_n);
        beam = extended;
    }
    Ok(beam.into_iter().map(|(s, p, _)| (s, p)).collect())
}

/// Masked-language-model strategy: fill 1..=min(target length, max_mask_len)
/// mask slots, union the per-length candidates, then filter.
pub fn generate_mlm<'a>(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    target: impl Into<TargetContext<'a>>,
    instance_id: &str,
    top_n: usize,
    max_mask_len: usize,
) -> Result<CandidateSet, MlmError> {
    let ctx = target.into();
    let mut raw = BTreeSet::new();
    let longest = ctx.target.char_len().min(max_mask_len).max(1);
    for mask_len in 1..=longest {
        for (text, _) in mlm_length_candidates(backend, ctx, mask_len, top_n)? {
            if let Ok(word) = Word::new(text) {
                raw.insert(word);
            }
        }
    }
    Ok(build(instance_id, GenerationMethod::Mlm, raw, &bundle.valid, ctx.target))
}

/// Hybrid strategy: the synonym route when the target is in the thesaurus,
/// the masked-language-model route otherwise.
pub fn generate_hybrid<'a>(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    target: impl Into<TargetContext<'a>>,
    instance_id: &str,
    top_n: usize,
    max_mask_len: usize,
) -> Result<CandidateSet, MlmError> {
    let ctx = target.into();
    let mut set = if bundle.synonyms.contains(ctx.target) {
        generate_synonym(bundle, ctx, instance_id)
    } else {
        generate_mlm(backend, bundle, ctx, instance_id, top_n, max_mask_len)?
    };
    set.method = GenerationMethod::Hybrid;
    Ok(set)
}

/// Run the configured generator.
pub fn generate<'a>(
    backend: &dyn MlmBackend,
    bundle: &LexiconBundle,
    target: impl Into<TargetContext<'a>>,
    instance_id: &str,
    cfg: &GeneratorConfig,
) -> Result<CandidateSet, MlmError> {
    let ctx = target.into();
    match cfg.method {
        GenerationMethod::Synonym => Ok(generate_synonym(bundle, ctx, instance_id)),
        GenerationMethod::Embedding => {
            Ok(generate_embedding(bundle, ctx, instance_id, cfg.embedding_k))
        }
        GenerationMethod::Mlm => generate_mlm(
            backend,
            bundle,
            ctx,
            instance_id,
            cfg.mlm_top_n,
            cfg.mlm_max_mask_len,
        ),
        GenerationMethod::Sememe => Ok(generate_sememe(bundle, ctx, instance_id)),
        GenerationMethod::Hybrid => generate_hybrid(
            backend,
            bundle,
            ctx,
            instance_id,
            cfg.mlm_top_n,
            cfg.mlm_max_mask_len,
        ),
    }
}
