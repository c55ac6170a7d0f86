//! Model abstraction, the deterministic toy transformer, and the activation
//! trace container shared with external exporters.

mod model;
mod splitmix;
pub mod vocab;

use std::ops::Range;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::FormatError;
use crate::matrix::Matrix;

pub use model::{Decoding, ToyModel, MAX_PARAMETERS};
pub use splitmix::SplitMix64;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("capacity exceeded: {what} needs {needed} parameters, cap is {cap}")]
    Capacity { what: &'static str, needed: u128, cap: u128 },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_count: 8,
            hidden_dim: 32,
            vocab_size: 512,
            max_new_tokens: 48,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.layer_count == 0 || self.hidden_dim == 0 || self.max_new_tokens == 0 {
            return Err(TraceError::Config(
                "layer_count, hidden_dim and max_new_tokens must be positive".into(),
            ));
        }
        if self.vocab_size < 2 {
            return Err(TraceError::Config("vocab_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Prompt tokens with their surface text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub token_texts: Vec<String>,
}

impl TokenSequence {
    pub fn new(token_ids: Vec<u32>, token_texts: Vec<String>) -> Result<Self, TraceError> {
        if token_ids.len() != token_texts.len() {
            return Err(TraceError::Argument(format!(
                "{} token ids but {} token texts",
                token_ids.len(),
                token_texts.len()
            )));
        }
        Ok(Self {
            token_ids,
            token_texts,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<(), TraceError> {
        match self.token_ids.iter().position(|&id| id as usize >= vocab_size) {
            Some(i) => Err(TraceError::Argument(format!(
                "token {i} has id {} outside vocabulary of size {vocab_size}",
                self.token_ids[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Hidden states of one layer, one row per prompt token. Layer 0 holds the
/// input embeddings; layer `l >= 1` the output of block `l` after its
/// residual add.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub layer_index: usize,
    pub matrix: Matrix<f32>,
}

/// Stored but never analyzed.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlob {
    pub layer: usize,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub model_name: String,
    pub config: ModelConfig,
    pub tokens: TokenSequence,
    /// Claim tokens inside the prompt.
    pub input_span: Range<usize>,
    pub layers: Vec<LayerActivations>,
    pub generated_text: String,
    /// Per-token weights over `input_span`, when the producer supplied them.
    pub weights: Option<Vec<f32>>,
    pub attention: Vec<AttentionBlob>,
}

impl ActivationTrace {
    pub fn validate(&self) -> Result<(), TraceError> {
        let n = self.tokens.len();
        if self.tokens.token_texts.len() != n {
            return Err(FormatError::new("token_texts", "length differs from token_ids").into());
        }
        if !(self.input_span.start < self.input_span.end && self.input_span.end <= n) {
            return Err(FormatError::new(
                "input_span",
                format!("[{}, {}) invalid for {n} tokens", self.input_span.start, self.input_span.end),
            )
            .into());
        }
        if self.layers.len() != self.config.layer_count + 1 {
            return Err(FormatError::new(
                "blobs",
                format!("expected {} layers, found {}", self.config.layer_count + 1, self.layers.len()),
            )
            .into());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.layer_index != l {
                return Err(FormatError::new("blobs", format!("layer {l} out of order")).into());
            }
            if layer.matrix.shape() != [n, self.config.hidden_dim] {
                return Err(FormatError::new(
                    format!("layer_{l}"),
                    format!("shape {:?}, expected [{n}, {}]", layer.matrix.shape(), self.config.hidden_dim),
                )
                .into());
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.input_span.len() {
                return Err(FormatError::new(
                    "weights",
                    format!("{} weights for a span of {} tokens", w.len(), self.input_span.len()),
                )
                .into());
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.config.layer_count
    }

    pub fn layer(&self, l: usize) -> Option<&Matrix<f32>> {
        self.layers.get(l).map(|a| &a.matrix)
    }

    /// Rows of layer `l` restricted to the claim tokens.
    pub fn input_rows(&self, l: usize) -> Option<Matrix<f32>> {
        self.layer(l)
            .map(|m| m.slice_rows(self.input_span.start, self.input_span.end))
    }

    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<(), TraceError> {
        crate::container::save_trace(self, dir.as_ref())
    }

    pub fn load(dir: impl AsRef<std::path::Path>) -> Result<Self, TraceError> {
        crate::container::load_trace(dir.as_ref())
    }
}

/// Hidden states for layers `0..=L` plus the greedy continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub layers: Vec<Matrix<f32>>,
    pub generated_text: String,
}

/// A decoder model whose input embeddings can be inspected and replaced.
pub trait LanguageModel: Send + Sync {
    fn name(&self) -> &str;

    fn config(&self) -> &ModelConfig;

    /// Input-embedding rows for `tokens` (layer 0).
    fn input_embeddings(&self, tokens: &TokenSequence) -> Result<Matrix<f32>, TraceError>;

    /// Full forward pass over `embeddings` followed by greedy decoding.
    fn run_embeddings(&self, embeddings: &Matrix<f32>) -> Result<ForwardResult, TraceError>;

    /// Greedy continuation of `tokens` after replacing the input embedding at
    /// `position` with `vector`.
    fn generate_substituted(
        &self,
        tokens: &TokenSequence,
        position: usize,
        vector: &[f32],
    ) -> Result<String, TraceError> {
        let embeddings = substituted_embeddings(self, tokens, position, vector)?;
        Ok(self.run_embeddings(&embeddings)?.generated_text)
    }

    /// [`generate_substituted`](Self::generate_substituted) for several
    /// vectors; results are in input order.
    fn generate_substituted_many(
        &self,
        tokens: &TokenSequence,
        position: usize,
        vectors: &[Vec<f32>],
    ) -> Vec<Result<String, TraceError>> {
        vectors
            .par_iter()
            .map(|v| self.generate_substituted(tokens, position, v))
            .collect()
    }
}

/// Input embeddings of `tokens` with row `position` replaced by `vector`.
pub fn substituted_embeddings<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &TokenSequence,
    position: usize,
    vector: &[f32],
) -> Result<Matrix<f32>, TraceError> {
    let d = model.config().hidden_dim;
    if vector.len() != d {
        return Err(TraceError::Argument(format!(
            "patch vector has dimension {}, model expects {d}",
            vector.len()
        )));
    }
    if position >= tokens.len() {
        return Err(TraceError::Argument(format!(
            "patch position {position} outside prompt of {} tokens",
            tokens.len()
        )));
    }
    let mut embeddings = model.input_embeddings(tokens)?;
    embeddings.row_mut(position).copy_from_slice(vector);
    Ok(embeddings)
}

/// Runs `model` on `prompt`, capturing hidden states of every layer over the
/// prompt tokens.
pub fn run_with_trace<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &TokenSequence,
    input_span: Range<usize>,
) -> Result<ActivationTrace, TraceError> {
    if prompt.is_empty() {
        return Err(TraceError::Argument("empty prompt".into()));
    }
    prompt.check_vocab(model.config().vocab_size)?;
    let embeddings = model.input_embeddings(prompt)?;
    let forward = model.run_embeddings(&embeddings)?;
    let trace = ActivationTrace {
        model_name: model.name().to_string(),
        config: *model.config(),
        tokens: prompt.clone(),
        input_span,
        layers: forward
            .layers
            .into_iter()
            .enumerate()
            .map(|(layer_index, matrix)| LayerActivations { layer_index, matrix })
            .collect(),
        generated_text: forward.generated_text,
        weights: None,
        attention: Vec::new(),
    };
    trace.validate()?;
    Ok(trace)
}
