use rayon::prelude::*;

use super::splitmix::SplitMix64;
use super::vocab::{fnv1a, GrammarState, ToyVocab, EOS, UNK};
use super::{ForwardResult, LanguageModel, ModelConfig, TokenSequence, TraceError};
use crate::matrix::Matrix;
use crate::scalar::dot;

/// Upper bound on the toy model's parameter count.
pub const MAX_PARAMETERS: u128 = 1 << 28;
const WEIGHT_HALF_WIDTH: f32 = 0.05;
const LN_EPS: f32 = 1e-5;
const FFN_MULT: usize = 4;

/// How the toy model picks the next token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    /// Argmax over the whole vocabulary (except `<unk>`).
    Free,
    /// Argmax restricted to tokens the structured-output grammar allows.
    /// Output is a complete object, or empty when the token budget is
    /// too small for one.
    Structured,
}

#[derive(Debug, Clone)]
struct Block {
    wq: Matrix<f32>,
    wk: Matrix<f32>,
    wv: Matrix<f32>,
    wo: Matrix<f32>,
    w_in: Matrix<f32>,
    w_out: Matrix<f32>,
}

/// Pre-norm decoder: single-head causal attention, GELU feed-forward and an
/// output projection tied to the embedding table. No positional encoding;
/// the causal mask alone makes states position dependent.
#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ModelConfig,
    vocab: ToyVocab,
    decoding: Decoding,
    embedding: Matrix<f32>,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct KvState {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    last_hidden: Vec<f32>,
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self, TraceError> {
        config.validate()?;
        let d = config.hidden_dim as u128;
        let embedding_params = d * config.vocab_size as u128;
        if embedding_params > MAX_PARAMETERS {
            return Err(TraceError::Capacity {
                what: "embedding table",
                needed: embedding_params,
                cap: MAX_PARAMETERS,
            });
        }
        let block_params = (4 + 2 * FFN_MULT as u128) * d * d;
        let total = embedding_params + block_params * config.layer_count as u128;
        if total > MAX_PARAMETERS {
            return Err(TraceError::Capacity {
                what: "model",
                needed: total,
                cap: MAX_PARAMETERS,
            });
        }

        let mut rng = SplitMix64::new(config.seed);
        let mut draw = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| rng.next_symmetric_f32(WEIGHT_HALF_WIDTH))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("sized by construction")
        };
        let d = config.hidden_dim;
        let embedding = draw(config.vocab_size, d);
        let blocks = (0..config.layer_count)
            .map(|_| Block {
                wq: draw(d, d),
                wk: draw(d, d),
                wv: draw(d, d),
                wo: draw(d, d),
                w_in: draw(FFN_MULT * d, d),
                w_out: draw(d, FFN_MULT * d),
            })
            .collect();
        let vocab = ToyVocab::new(config.vocab_size);
        let decoding = if vocab.has_lexicon() {
            Decoding::Structured
        } else {
            Decoding::Free
        };
        Ok(Self {
            config,
            vocab,
            decoding,
            embedding,
            blocks,
        })
    }

    /// Overrides the decoding mode. Structured decoding needs a vocabulary
    /// large enough to hold the lexicon and falls back to free decoding
    /// otherwise.
    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = if self.vocab.has_lexicon() {
            decoding
        } else {
            Decoding::Free
        };
        self
    }

    pub fn decoding(&self) -> Decoding {
        self.decoding
    }

    pub fn vocab(&self) -> &ToyVocab {
        &self.vocab
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.vocab.encode(text)
    }

    /// Number of activation layers, embeddings included.
    pub fn activation_layers(&self) -> usize {
        self.config.layer_count + 1
    }

    pub fn embedding_row(&self, id: u32) -> &[f32] {
        self.embedding.row(id as usize)
    }

    /// FNV-1a over the little-endian bytes of every weight, in generation order.
    pub fn weights_checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        push_bytes(&mut bytes, &self.embedding);
        for b in &self.blocks {
            for m in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w_in, &b.w_out] {
                push_bytes(&mut bytes, m);
            }
        }
        fnv1a(&bytes)
    }

    /// Checksum of block `index` (0-based) alone.
    pub fn block_checksum(&self, index: usize) -> Option<u64> {
        let b = self.blocks.get(index)?;
        let mut bytes = Vec::new();
        for m in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w_in, &b.w_out] {
            push_bytes(&mut bytes, m);
        }
        Some(fnv1a(&bytes))
    }

    fn empty_state(&self) -> KvState {
        KvState {
            keys: vec![Vec::new(); self.blocks.len()],
            values: vec![Vec::new(); self.blocks.len()],
            last_hidden: Vec::new(),
        }
    }

    /// Processes one input row, appending to the cache. Returns the output of
    /// every block when `record` is set.
    fn step(&self, state: &mut KvState, input: &[f32], record: bool) -> Vec<Vec<f32>> {
        let d = self.config.hidden_dim;
        let scale = 1.0 / (d as f32).sqrt();
        let mut h = input.to_vec();
        let mut outputs = Vec::with_capacity(if record { self.blocks.len() } else { 0 });
        for (l, block) in self.blocks.iter().enumerate() {
            let a = layer_norm(&h);
            let q = block.wq.matvec(&a);
            state.keys[l].extend(block.wk.matvec(&a));
            state.values[l].extend(block.wv.matvec(&a));

            let keys = &state.keys[l];
            let values = &state.values[l];
            let len = keys.len() / d;
            let scores: Vec<f32> = (0..len)
                .map(|j| dot(&q, &keys[j * d..(j + 1) * d]) * scale)
                .collect();
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
            let mut total = 0.0f32;
            for e in &exps {
                total += e;
            }
            let mut context = vec![0.0f32; d];
            for (j, e) in exps.iter().enumerate() {
                let p = e / total;
                for (c, v) in context.iter_mut().zip(&values[j * d..(j + 1) * d]) {
                    *c += p * v;
                }
            }
            for (hv, o) in h.iter_mut().zip(block.wo.matvec(&context)) {
                *hv += o;
            }

            let b = layer_norm(&h);
            let inner: Vec<f32> = block.w_in.matvec(&b).into_iter().map(gelu).collect();
            for (hv, o) in h.iter_mut().zip(block.w_out.matvec(&inner)) {
                *hv += o;
            }
            if record {
                outputs.push(h.clone());
            }
        }
        state.last_hidden = h;
        outputs
    }

    fn logits(&self, hidden: &[f32]) -> Vec<f32> {
        self.embedding.matvec(&layer_norm(hidden))
    }

    fn generate_from(&self, mut state: KvState) -> String {
        let max_new = self.config.max_new_tokens;
        let mut grammar = GrammarState::Start;
        let mut out = Vec::new();
        for step in 0..max_new {
            let remaining = max_new - step;
            let logits = self.logits(&state.last_hidden);
            let mut best: Option<(u32, f32, GrammarState)> = None;
            for (id, &score) in logits.iter().enumerate() {
                let id = id as u32;
                if id == UNK {
                    continue;
                }
                let next = match self.decoding {
                    Decoding::Free => grammar,
                    Decoding::Structured => match grammar.advance(&self.vocab, id) {
                        Some(next) if 1 + next.min_to_close() <= remaining => next,
                        _ => continue,
                    },
                };
                if best.map_or(true, |(_, s, _)| score > s) {
                    best = Some((id, score, next));
                }
            }
            let Some((id, _, next)) = best else { break };
            out.push(id);
            grammar = next;
            if id == EOS || grammar == GrammarState::Done {
                break;
            }
            let row = self.embedding.row(id as usize).to_vec();
            self.step(&mut state, &row, false);
        }
        self.vocab.decode(&out)
    }

    fn prefill(&self, state: &mut KvState, rows: &Matrix<f32>, range: std::ops::Range<usize>) {
        for i in range {
            self.step(state, rows.row(i), false);
        }
    }
}

impl LanguageModel for ToyModel {
    fn name(&self) -> &str {
        "toy"
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn input_embeddings(&self, tokens: &TokenSequence) -> Result<Matrix<f32>, TraceError> {
        tokens.check_vocab(self.config.vocab_size)?;
        let rows: Vec<&[f32]> = tokens
            .token_ids
            .iter()
            .map(|&id| self.embedding.row(id as usize))
            .collect();
        Ok(Matrix::from_rows(&rows).unwrap_or_else(|| Matrix::zeros(0, self.config.hidden_dim)))
    }

    fn run_embeddings(&self, embeddings: &Matrix<f32>) -> Result<ForwardResult, TraceError> {
        let d = self.config.hidden_dim;
        if embeddings.rows() == 0 {
            return Err(TraceError::Argument("empty prompt".into()));
        }
        if embeddings.cols() != d {
            return Err(TraceError::Argument(format!(
                "embeddings have {} columns, model expects {d}",
                embeddings.cols()
            )));
        }
        let n = embeddings.rows();
        let mut layers: Vec<Vec<f32>> = vec![Vec::with_capacity(n * d); self.blocks.len()];
        let mut state = self.empty_state();
        for row in embeddings.iter_rows() {
            for (l, h) in self.step(&mut state, row, true).into_iter().enumerate() {
                layers[l].extend(h);
            }
        }
        let mut all = vec![embeddings.clone()];
        all.extend(
            layers
                .into_iter()
                .map(|data| Matrix::from_vec(n, d, data).expect("n rows of width d")),
        );
        Ok(ForwardResult {
            layers: all,
            generated_text: self.generate_from(state),
        })
    }

    /// Shares the cached prefix before `position` across all vectors; results
    /// are bit-identical to independent full runs.
    fn generate_substituted_many(
        &self,
        tokens: &TokenSequence,
        position: usize,
        vectors: &[Vec<f32>],
    ) -> Vec<Result<String, TraceError>> {
        let d = self.config.hidden_dim;
        let embeddings = match self.input_embeddings(tokens) {
            Ok(e) if position < e.rows() => e,
            Ok(_) => {
                let msg = format!("patch position {position} outside prompt of {} tokens", tokens.len());
                return vectors.iter().map(|_| Err(TraceError::Argument(msg.clone()))).collect();
            }
            Err(e) => {
                let msg = e.to_string();
                return vectors.iter().map(|_| Err(TraceError::Argument(msg.clone()))).collect();
            }
        };
        let mut prefix = self.empty_state();
        self.prefill(&mut prefix, &embeddings, 0..position);
        vectors
            .par_iter()
            .map(|v| {
                if v.len() != d {
                    return Err(TraceError::Argument(format!(
                        "patch vector has dimension {}, model expects {d}",
                        v.len()
                    )));
                }
                let mut state = prefix.clone();
                self.step(&mut state, v, false);
                self.prefill(&mut state, &embeddings, position + 1..embeddings.rows());
                Ok(self.generate_from(state))
            })
            .collect()
    }

    fn generate_substituted(
        &self,
        tokens: &TokenSequence,
        position: usize,
        vector: &[f32],
    ) -> Result<String, TraceError> {
        self.generate_substituted_many(tokens, position, &[vector.to_vec()])
            .pop()
            .expect("one result per vector")
    }
}

fn push_bytes(out: &mut Vec<u8>, m: &Matrix<f32>) {
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn layer_norm(x: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mut mean = 0.0f32;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0f32;
    for v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}
