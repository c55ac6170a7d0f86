//! Token weighting, weighted merging of claim hidden states and patched
//! inference.
//!
//! For every layer `l`, the claim's hidden states are merged into one vector
//! `h̄ˡ = Σᵢ wᵢ hᵢˡ` (ascending token order, unnormalized by default). That
//! vector replaces the input embedding of the placeholder token `x` in the
//! target prompt, always at layer 0, and the model then decodes greedily.

mod io;
mod pos;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::trace::{ActivationTrace, LanguageModel, TokenSequence, TraceError};

pub use io::{load_plan, read_outputs, save_plan, write_outputs, OutputRecord};
pub use pos::{compute_pos_weights, words_from_tokens, LexiconTagger, PosTag};

pub const PLACEHOLDER: &str = "x";

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("claim has no noun or verb to weight (use uniform fallback to patch anyway)")]
    DegenerateWeights,
    #[error("{0}")]
    Argument(String),
    #[error("invalid patch plan: {0}")]
    Plan(String),
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: TraceError,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Weights over the claim tokens, aligned with the trace's input span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeightVector {
    pub weights: Vec<f32>,
}

impl TokenWeightVector {
    pub fn uniform(len: usize) -> Self {
        Self {
            weights: vec![1.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOptions {
    /// Divide by the weight total. Off by default to keep the plain sum.
    pub normalize: bool,
}

/// `Σᵢ wᵢ hᵢ` over the rows of `rows`, accumulated in ascending row order.
pub fn merge_activations<T: Scalar>(
    rows: &Matrix<T>,
    weights: &[T],
    options: MergeOptions,
) -> Result<Vec<T>, PatchError> {
    if rows.rows() != weights.len() {
        return Err(PatchError::Argument(format!(
            "{} hidden-state rows but {} weights",
            rows.rows(),
            weights.len()
        )));
    }
    let mut merged = vec![T::zero(); rows.cols()];
    for (row, &w) in rows.iter_rows().zip(weights) {
        for (acc, &h) in merged.iter_mut().zip(row) {
            *acc += w * h;
        }
    }
    if options.normalize {
        let total = crate::scalar::ordered_sum(weights);
        if total != T::zero() {
            for v in &mut merged {
                *v /= total;
            }
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedVector {
    pub layer_index: usize,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    pub model_name: String,
    pub target: TokenSequence,
    pub placeholder_position: usize,
    /// Ascending by layer.
    pub merged: Vec<MergedVector>,
}

impl PatchPlan {
    pub fn hidden_dim(&self) -> Option<usize> {
        self.merged.first().map(|m| m.vector.len())
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.merged.iter().map(|m| m.layer_index)
    }

    pub fn vector(&self, layer: usize) -> Option<&[f32]> {
        self.merged
            .iter()
            .find(|m| m.layer_index == layer)
            .map(|m| m.vector.as_slice())
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        let k = find_placeholder(&self.target)?;
        if k != self.placeholder_position {
            return Err(PatchError::Plan(format!(
                "placeholder is token {k}, plan says {}",
                self.placeholder_position
            )));
        }
        let d = self.hidden_dim().unwrap_or(0);
        if self.merged.iter().any(|m| m.vector.len() != d) {
            return Err(PatchError::Plan("merged vectors differ in dimension".into()));
        }
        if !self.merged.windows(2).all(|w| w[0].layer_index < w[1].layer_index) {
            return Err(PatchError::Plan("layers are not strictly ascending".into()));
        }
        Ok(())
    }
}

/// Position of the single placeholder token in `target`.
pub fn find_placeholder(target: &TokenSequence) -> Result<usize, PatchError> {
    let mut hits = target
        .token_texts
        .iter()
        .enumerate()
        .filter(|(_, t)| t.trim_start_matches(['▁', 'Ġ']).trim() == PLACEHOLDER)
        .map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(k), None) => Ok(k),
        (None, _) => Err(PatchError::Plan("target prompt has no placeholder token".into())),
        (Some(_), Some(_)) => Err(PatchError::Plan("target prompt has more than one placeholder token".into())),
    }
}

/// Merged vector for every layer `1..=L` (and layer 0 when requested) from
/// the trace's claim tokens.
pub fn build_patch_plan(
    trace: &ActivationTrace,
    weights: &TokenWeightVector,
    target: &TokenSequence,
    include_layer0: bool,
    options: MergeOptions,
) -> Result<PatchPlan, PatchError> {
    let placeholder_position = find_placeholder(target)?;
    if weights.len() != trace.input_span.len() {
        return Err(PatchError::Argument(format!(
            "{} weights for an input span of {} tokens",
            weights.len(),
            trace.input_span.len()
        )));
    }
    let first = if include_layer0 { 0 } else { 1 };
    let merged = (first..=trace.layer_count())
        .map(|l| {
            let rows = trace.input_rows(l).expect("trace holds L+1 layers");
            merge_activations(&rows, &weights.weights, options).map(|vector| MergedVector { layer_index: l, vector })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PatchPlan {
        model_name: trace.model_name.clone(),
        target: target.clone(),
        placeholder_position,
        merged,
    })
}

fn check_dimension<M: LanguageModel + ?Sized>(model: &M, plan: &PatchPlan) -> Result<(), PatchError> {
    let d = model.config().hidden_dim;
    match plan.hidden_dim() {
        Some(pd) if pd != d => Err(PatchError::Plan(format!(
            "plan vectors have dimension {pd}, model has {d}"
        ))),
        _ => Ok(()),
    }
}

/// Generation `oˡ` with the placeholder's input embedding replaced by `h̄ˡ`.
pub fn run_patched<M: LanguageModel + ?Sized>(model: &M, plan: &PatchPlan, layer: usize) -> Result<String, PatchError> {
    check_dimension(model, plan)?;
    let vector = plan.vector(layer).ok_or_else(|| {
        PatchError::Argument(format!(
            "layer {layer} not in plan (layers {:?})",
            plan.layers().collect::<Vec<_>>()
        ))
    })?;
    model
        .generate_substituted(&plan.target, plan.placeholder_position, vector)
        .map_err(|source| PatchError::Layer { layer, source })
}

/// Decoded output per patched layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOutputs {
    pub outputs: BTreeMap<usize, String>,
}

/// Runs every layer of the plan; layers execute in parallel.
pub fn sweep_layers<M: LanguageModel + ?Sized>(model: &M, plan: &PatchPlan) -> Result<LayerOutputs, PatchError> {
    check_dimension(model, plan)?;
    let vectors: Vec<Vec<f32>> = plan.merged.iter().map(|m| m.vector.clone()).collect();
    let results = model.generate_substituted_many(&plan.target, plan.placeholder_position, &vectors);
    let mut outputs = BTreeMap::new();
    for (m, result) in plan.merged.iter().zip(results) {
        let text = result.map_err(|source| PatchError::Layer {
            layer: m.layer_index,
            source,
        })?;
        outputs.insert(m.layer_index, text);
    }
    Ok(LayerOutputs { outputs })
}

/// One independent [`run_patched`] per layer, in layer order.
pub fn sweep_layers_sequential<M: LanguageModel + ?Sized>(
    model: &M,
    plan: &PatchPlan,
) -> Result<LayerOutputs, PatchError> {
    let outputs = plan
        .layers()
        .map(|l| run_patched(model, plan, l).map(|t| (l, t)))
        .collect::<Result<_, _>>()?;
    Ok(LayerOutputs { outputs })
}

/// Like [`sweep_layers`] but each layer is a full independent run, spread
/// over the rayon pool.
pub fn sweep_layers_independent<M: LanguageModel + ?Sized>(
    model: &M,
    plan: &PatchPlan,
) -> Result<LayerOutputs, PatchError> {
    let layers: Vec<usize> = plan.layers().collect();
    let outputs = layers
        .par_iter()
        .map(|&l| run_patched(model, plan, l).map(|t| (l, t)))
        .collect::<Result<_, _>>()?;
    Ok(LayerOutputs { outputs })
}

/// Claim weights for a trace: the producer's weights when present, else the
/// dictionary tagger over the trace's claim tokens. With `fallback_uniform`,
/// a claim without nouns or verbs gets weight 1 on every token.
pub fn claim_weights(trace: &ActivationTrace, fallback_uniform: bool) -> Result<TokenWeightVector, PatchError> {
    if let Some(w) = &trace.weights {
        let weights = TokenWeightVector { weights: w.clone() };
        if weights.weights.iter().any(|&v| v != 0.0) {
            return Ok(weights);
        }
    } else {
        let words = words_from_tokens(&trace.tokens.token_texts, trace.input_span.clone());
        let tagged = LexiconTagger.tag_words(&words);
        let ranges: Vec<_> = words.into_iter().map(|(_, r)| r).collect();
        match compute_pos_weights(&tagged, &ranges, trace.input_span.clone()) {
            Err(PatchError::DegenerateWeights) => {}
            other => return other,
        }
    }
    if fallback_uniform {
        Ok(TokenWeightVector::uniform(trace.input_span.len()))
    } else {
        Err(PatchError::DegenerateWeights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f32; 3]]) -> Matrix<f32> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn one_hot_returns_row() {
        let h = m(&[[1.5, -2.0, 0.25], [3.0, 4.0, 5.0], [7.0, 8.0, 9.0]]);
        let v = merge_activations(&h, &[0.0, 1.0, 0.0], MergeOptions::default()).unwrap();
        assert_eq!(v, h.row(1));
    }

    #[test]
    fn binary_sum_of_rows() {
        let h = m(&[[1.0, 2.0, 3.0], [10.0, 20.0, 30.0], [100.0, 200.0, 300.0]]);
        let v = merge_activations(&h, &[1.0, 1.0, 0.0], MergeOptions::default()).unwrap();
        assert_eq!(v, vec![11.0, 22.0, 33.0]);
    }

    #[test]
    fn normalize_flag_divides_by_total() {
        let h = m(&[[2.0, 4.0, 6.0], [4.0, 8.0, 12.0]]);
        let v = merge_activations(&h, &[1.0, 1.0], MergeOptions { normalize: true }).unwrap();
        assert_eq!(v, vec![3.0, 6.0, 9.0]);
    }

    #[test]
    fn length_mismatch_is_error() {
        let h = m(&[[1.0, 2.0, 3.0]]);
        assert!(merge_activations(&h, &[1.0, 1.0], MergeOptions::default()).is_err());
    }

    #[test]
    fn placeholder_count() {
        let seq = |ts: &[&str]| TokenSequence::new(vec![0; ts.len()], ts.iter().map(|s| s.to_string()).collect()).unwrap();
        assert_eq!(find_placeholder(&seq(&["a", " x", " b"])).unwrap(), 1);
        assert!(matches!(find_placeholder(&seq(&["a", "b"])), Err(PatchError::Plan(_))));
        assert!(matches!(find_placeholder(&seq(&[" x", "▁x"])), Err(PatchError::Plan(_))));
    }
}
