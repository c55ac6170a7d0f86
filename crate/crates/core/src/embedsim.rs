//! Node attributes, multi-scale attributed node embeddings and graph
//! similarity.
//!
//! The default embedder is a deterministic diffusion: with `A` the symmetrized
//! adjacency plus self-loops and `D` its degree diagonal,
//! `Z = [X | PX | P²X | … | Pᴿ X]` for `P = D⁻¹A`. Attributes `X` are hashed
//! character trigrams of the node labels. An [`ExternalEmbedder`] takes
//! precomputed embeddings instead.
//!
//! Similarity of `G` to `G'` matches each node of `G` to its most similar
//! node of `G'` and averages: `(1/n_G) Σᵢ maxⱼ cos(Zᵢ, Z'ⱼ)`. It is not
//! symmetric.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgraph::{LayerGraph, TemporalKG};
use crate::layer::LayerTag;
use crate::matrix::Matrix;
use crate::scalar::{cosine, Scalar};
use crate::trace::vocab::fnv1a;

pub const DEFAULT_ATTRIBUTE_DIM: usize = 64;
pub const DEFAULT_SCALES: usize = 3;
pub const MIN_ATTRIBUTE_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("graph for layer {0} has no nodes")]
    EmptyGraph(LayerTag),
    #[error("similarity is undefined for an empty embedding")]
    Undefined,
    #[error("need at least two non-empty layer graphs, found {0}")]
    TooFewGraphs(usize),
    #[error("{0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMatrix<T> {
    /// One row per node, in graph order.
    pub matrix: Matrix<T>,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddingMatrix<T> {
    pub matrix: Matrix<T>,
}

impl<T: Scalar> NodeEmbeddingMatrix<T> {
    pub fn node_count(&self) -> usize {
        self.matrix.rows()
    }
}

/// Hashed character-trigram counts of `label` (lowercased, space padded),
/// L2-normalized.
pub fn label_attributes<T: Scalar>(label: &str, dim: usize) -> Vec<T> {
    let padded: Vec<char> = format!(" {} ", label.to_lowercase()).chars().collect();
    let mut counts = vec![0u32; dim];
    for w in padded.windows(3) {
        let gram: String = w.iter().collect();
        counts[(fnv1a(gram.as_bytes()) % dim as u64) as usize] += 1;
    }
    let norm = (counts.iter().map(|&c| u64::from(c) * u64::from(c)).sum::<u64>() as f64).sqrt();
    counts.iter().map(|&c| T::of(f64::from(c) / norm)).collect()
}

pub fn default_attributes<T: Scalar>(graph: &LayerGraph, dim: usize) -> Result<AttributeMatrix<T>, EmbedError> {
    if dim < MIN_ATTRIBUTE_DIM {
        return Err(EmbedError::Argument(format!(
            "attribute dimension {dim} is below {MIN_ATTRIBUTE_DIM}"
        )));
    }
    let rows: Vec<Vec<T>> = graph.labels().map(|l| label_attributes(l, dim)).collect();
    let mut data = Vec::with_capacity(rows.len() * dim);
    rows.into_iter().for_each(|r| data.extend(r));
    Ok(AttributeMatrix {
        matrix: Matrix::from_vec(graph.node_count(), dim, data).expect("rows have dim columns"),
        provider_id: format!("trigram-fnv1a-{dim}"),
    })
}

/// `[X | PX | … | Pᴿ X]` with `P` the row-normalized symmetric adjacency
/// with self-loops.
pub fn multi_scale_embed<T: Scalar>(
    graph: &LayerGraph,
    attrs: &AttributeMatrix<T>,
    scales: usize,
) -> Result<NodeEmbeddingMatrix<T>, EmbedError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(EmbedError::EmptyGraph(graph.layer));
    }
    if attrs.matrix.rows() != n {
        return Err(EmbedError::Argument(format!(
            "{} attribute rows for {n} nodes",
            attrs.matrix.rows()
        )));
    }
    let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for (s, o) in graph.edge_indices() {
        neighbours[s].push(o);
        neighbours[o].push(s);
    }
    for nb in &mut neighbours {
        nb.sort_unstable();
        nb.dedup();
    }
    let mut blocks = vec![attrs.matrix.clone()];
    for _ in 0..scales {
        let prev = blocks.last().expect("scale 0 present");
        let mut next = Matrix::zeros(n, prev.cols());
        for (i, nb) in neighbours.iter().enumerate() {
            let inv = T::one() / T::of(nb.len() as f64);
            let row = next.row_mut(i);
            for &j in nb {
                for (acc, &x) in row.iter_mut().zip(prev.row(j)) {
                    *acc += x;
                }
            }
            row.iter_mut().for_each(|v| *v *= inv);
        }
        blocks.push(next);
    }
    Ok(NodeEmbeddingMatrix {
        matrix: Matrix::hconcat(&blocks).expect("blocks share row count"),
    })
}

/// `(1/n_G) Σᵢ maxⱼ cos(Zᵢ(G), Zⱼ(G'))`.
pub fn graph_similarity<T: Scalar>(z: &NodeEmbeddingMatrix<T>, z_other: &NodeEmbeddingMatrix<T>) -> Result<T, EmbedError> {
    if z.node_count() == 0 || z_other.node_count() == 0 {
        return Err(EmbedError::Undefined);
    }
    if z.matrix.cols() != z_other.matrix.cols() {
        return Err(EmbedError::Argument(format!(
            "embedding widths differ: {} and {}",
            z.matrix.cols(),
            z_other.matrix.cols()
        )));
    }
    let mut best: Vec<T> = z
        .matrix
        .iter_rows()
        .map(|zi| {
            z_other
                .matrix
                .iter_rows()
                .map(|zj| cosine(zi, zj))
                .fold(T::neg_infinity(), T::max)
        })
        .collect();
    // Sorted so the sum does not depend on node order.
    best.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let total = best.into_iter().fold(T::zero(), |acc, v| acc + v);
    Ok(total / T::of(z.node_count() as f64))
}

pub trait NodeEmbedder<T: Scalar>: Sync {
    fn embed(&self, graph: &LayerGraph) -> Result<NodeEmbeddingMatrix<T>, EmbedError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionEmbedder {
    pub attribute_dim: usize,
    pub scales: usize,
}

impl Default for DiffusionEmbedder {
    fn default() -> Self {
        Self {
            attribute_dim: DEFAULT_ATTRIBUTE_DIM,
            scales: DEFAULT_SCALES,
        }
    }
}

impl<T: Scalar> NodeEmbedder<T> for DiffusionEmbedder {
    fn embed(&self, graph: &LayerGraph) -> Result<NodeEmbeddingMatrix<T>, EmbedError> {
        if graph.is_empty() {
            return Err(EmbedError::EmptyGraph(graph.layer));
        }
        let attrs = default_attributes(graph, self.attribute_dim)?;
        multi_scale_embed(graph, &attrs, self.scales)
    }
}

/// Precomputed embeddings, one matrix per layer graph, rows in graph order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalEmbedder<T> {
    pub by_layer: BTreeMap<LayerTag, Matrix<T>>,
}

impl<T: Scalar> NodeEmbedder<T> for ExternalEmbedder<T> {
    fn embed(&self, graph: &LayerGraph) -> Result<NodeEmbeddingMatrix<T>, EmbedError> {
        let m = self
            .by_layer
            .get(&graph.layer)
            .ok_or_else(|| EmbedError::Argument(format!("no external embedding for layer {}", graph.layer)))?;
        if m.rows() != graph.node_count() {
            return Err(EmbedError::Argument(format!(
                "external embedding for layer {} has {} rows, graph has {} nodes",
                graph.layer,
                m.rows(),
                graph.node_count()
            )));
        }
        if m.rows() == 0 {
            return Err(EmbedError::EmptyGraph(graph.layer));
        }
        Ok(NodeEmbeddingMatrix { matrix: m.clone() })
    }
}

/// `sim(G_l, G_{l−1})` for every `l` where both graphs exist and are
/// non-empty. Other layers are absent, not imputed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerSimilaritySeries<T> {
    pub claim_id: String,
    pub values: BTreeMap<u32, T>,
}

fn embed_layers<T: Scalar, E: NodeEmbedder<T> + ?Sized>(
    tkg: &TemporalKG,
    embedder: &E,
) -> Result<BTreeMap<u32, NodeEmbeddingMatrix<T>>, EmbedError> {
    tkg.per_layer
        .iter()
        .filter(|g| !g.is_empty())
        .filter_map(|g| g.layer.layer().map(|l| (l, g)))
        .map(|(l, g)| embedder.embed(g).map(|z| (l, z)))
        .collect()
}

pub fn consecutive_series<T: Scalar, E: NodeEmbedder<T> + ?Sized>(
    tkg: &TemporalKG,
    embedder: &E,
) -> Result<LayerSimilaritySeries<T>, EmbedError> {
    let z = embed_layers(tkg, embedder)?;
    if z.len() < 2 {
        return Err(EmbedError::TooFewGraphs(z.len()));
    }
    let mut values = BTreeMap::new();
    for (&l, zl) in &z {
        if let Some(prev) = l.checked_sub(1).and_then(|p| z.get(&p)) {
            values.insert(l, graph_similarity(zl, prev)?);
        }
    }
    Ok(LayerSimilaritySeries {
        claim_id: tkg.claim_id.clone(),
        values,
    })
}

/// Square matrix over layers; entry `(i, j)` is `sim(G_i, G_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix<T> {
    pub layers: Vec<u32>,
    pub values: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn get(&self, from: u32, to: u32) -> Option<T> {
        let i = self.layers.iter().position(|&l| l == from)?;
        let j = self.layers.iter().position(|&l| l == to)?;
        self.values[i][j]
    }

    /// Header row of layer numbers; missing entries are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for l in &self.layers {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.layers.iter().zip(&self.values) {
            let _ = write!(out, "{l}");
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{}", v.as_f64());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Covers every layer that was patched, including gaps, whose rows and
/// columns stay empty.
pub fn pairwise_matrix<T: Scalar, E: NodeEmbedder<T> + ?Sized>(
    tkg: &TemporalKG,
    embedder: &E,
) -> Result<SimilarityMatrix<T>, EmbedError> {
    let z = embed_layers(tkg, embedder)?;
    let mut layers: Vec<u32> = tkg.layers().into_iter().chain(tkg.gaps.iter().copied()).collect();
    layers.sort_unstable();
    let values = layers
        .par_iter()
        .map(|a| {
            layers
                .iter()
                .map(|b| match (z.get(a), z.get(b)) {
                    (Some(za), Some(zb)) => graph_similarity(za, zb).map(Some),
                    _ => Ok(None),
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimilarityMatrix { layers, values })
}

/// Long format: `claim_id,layer,value`.
pub fn series_csv<T: Scalar>(series: &[LayerSimilaritySeries<T>]) -> String {
    let mut out = String::from("claim_id,layer,value\n");
    for s in series {
        for (l, v) in &s.values {
            let _ = writeln!(out, "{},{l},{}", csv_field(&s.claim_id), v.as_f64());
        }
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
