//! Per-layer knowledge graphs and their concatenation into a temporal
//! knowledge graph.
//!
//! Nodes are keyed by [`entity_key`], so the same entity keeps its identity
//! from layer to layer. Exact duplicate edges collapse; edges that differ
//! only in relation or polarity are kept.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layer::LayerTag;
use crate::literalparse::{entity_key, ParseOutcome, Polarity, SpoTriple};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("no valid output for claim {0}; temporal graph would be empty")]
    EmptyTemporal(String),
    #[error("layer {layer} has no graph (layers present: {present:?})")]
    UnknownLayer { layer: u32, present: Vec<u32> },
    #[error("graph json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GraphEdge {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub polarity: Polarity,
    #[serde(default)]
    pub copular: bool,
}

impl GraphEdge {
    pub fn rendered_relation(&self) -> String {
        match (self.polarity, self.copular) {
            (Polarity::Asserted, _) => self.relation.clone(),
            (Polarity::Negated, true) => format!("{} not", self.relation),
            (Polarity::Negated, false) => format!("not {}", self.relation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub layer: LayerTag,
    /// Normalization key to the first display label seen for it.
    pub nodes: BTreeMap<String, String>,
    pub edges: BTreeSet<GraphEdge>,
}

impl LayerGraph {
    pub fn empty(layer: LayerTag) -> Self {
        Self {
            layer,
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
        }
    }

    /// `n_G`.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node keys in graph order (sorted).
    pub fn node_keys(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.nodes.values().map(String::as_str)
    }

    pub fn node_index(&self, key: &str) -> Option<usize> {
        self.nodes.keys().position(|k| k == key)
    }

    /// Edge endpoints as node indices, one pair per edge.
    pub fn edge_indices(&self) -> Vec<(usize, usize)> {
        let index: BTreeMap<&str, usize> = self.node_keys().enumerate().map(|(i, k)| (k, i)).collect();
        self.edges
            .iter()
            .map(|e| (index[e.subject.as_str()], index[e.object.as_str()]))
            .collect()
    }

    fn add_node(&mut self, label: &str) -> String {
        let key = entity_key(label);
        self.nodes.entry(key.clone()).or_insert_with(|| label.trim().to_string());
        key
    }

    pub fn add_triple(&mut self, t: &SpoTriple) {
        let subject = self.add_node(&t.subject);
        let object = self.add_node(&t.object);
        self.edges.insert(GraphEdge {
            subject,
            relation: t.relation.clone(),
            object,
            polarity: t.polarity,
            copular: t.copular,
        });
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph G {\n");
        write_graph_body(&mut out, self, "  ", "n", None);
        out.push_str("}\n");
        out
    }
}

pub fn graph_from_triples(triples: &[SpoTriple], layer: LayerTag) -> LayerGraph {
    let mut g = LayerGraph::empty(layer);
    for t in triples {
        g.add_triple(t);
    }
    g
}

/// Per-layer graphs of one claim plus the graph of the unpatched inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalKG {
    pub claim_id: String,
    /// Ascending by layer; invalid layers are absent.
    pub per_layer: Vec<LayerGraph>,
    /// Empty when the inference output was invalid.
    pub inference_graph: LayerGraph,
    pub inference_valid: bool,
    /// Layers whose output was invalid.
    pub gaps: Vec<u32>,
}

impl TemporalKG {
    pub fn layers(&self) -> Vec<u32> {
        self.per_layer.iter().filter_map(|g| g.layer.layer()).collect()
    }

    pub fn graph(&self, layer: u32) -> Option<&LayerGraph> {
        self.per_layer.iter().find(|g| g.layer == LayerTag::Layer(layer))
    }

    pub fn to_json(&self) -> Result<String, KgError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, KgError> {
        Ok(serde_json::from_str(s)?)
    }

    /// All snapshots as clusters of one digraph. Layer graphs are shaded by
    /// depth on a 9-step gradient; the inference graph is white.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", quote(&self.claim_id));
        out.push_str("  node [style=filled, colorscheme=blues9];\n");
        let n = self.per_layer.len();
        for (i, g) in self.per_layer.iter().enumerate() {
            let shade = 1 + (i * 8) / n.saturating_sub(1).max(1);
            let _ = writeln!(out, "  subgraph cluster_l{} {{", g.layer);
            let _ = writeln!(out, "    label={};", quote(&format!("layer {}", g.layer)));
            write_graph_body(&mut out, g, "    ", &format!("l{}_", g.layer), Some(shade.to_string()));
            out.push_str("  }\n");
        }
        if self.inference_valid {
            out.push_str("  subgraph cluster_inference {\n");
            out.push_str("    label=\"inference\";\n");
            write_graph_body(&mut out, &self.inference_graph, "    ", "inf_", Some("white".into()));
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn write_graph_body(out: &mut String, g: &LayerGraph, indent: &str, prefix: &str, color: Option<String>) {
    let fill = color.map(|c| format!(", fillcolor={}", quote(&c))).unwrap_or_default();
    for (i, label) in g.labels().enumerate() {
        let _ = writeln!(out, "{indent}{prefix}{i} [label={}{fill}];", quote(label));
    }
    for ((s, o), e) in g.edge_indices().into_iter().zip(&g.edges) {
        let style = if e.polarity == Polarity::Negated { ", style=dashed" } else { "" };
        let _ = writeln!(
            out,
            "{indent}{prefix}{s} -> {prefix}{o} [label={}{style}];",
            quote(&e.rendered_relation())
        );
    }
}

/// Graph per valid layer output, gap per invalid one. Fails only when no
/// output at all is valid.
pub fn concat_temporal(
    claim_id: &str,
    outcomes: &BTreeMap<u32, ParseOutcome>,
    inference: &ParseOutcome,
) -> Result<TemporalKG, KgError> {
    let mut per_layer = Vec::new();
    let mut gaps = Vec::new();
    for (&l, outcome) in outcomes {
        let tag = LayerTag::Layer(l);
        match outcome.output() {
            Some(o) => per_layer.push(graph_from_triples(&o.triples(tag), tag)),
            None => gaps.push(l),
        }
    }
    let inference_graph = match inference.output() {
        Some(o) => graph_from_triples(&o.triples(LayerTag::Inference), LayerTag::Inference),
        None => LayerGraph::empty(LayerTag::Inference),
    };
    if per_layer.is_empty() && !inference.is_valid() {
        return Err(KgError::EmptyTemporal(claim_id.to_string()));
    }
    Ok(TemporalKG {
        claim_id: claim_id.to_string(),
        per_layer,
        inference_graph,
        inference_valid: inference.is_valid(),
        gaps,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDiff {
    pub nodes_added: BTreeSet<String>,
    pub nodes_retained: BTreeSet<String>,
    pub nodes_removed: BTreeSet<String>,
    pub edges_added: BTreeSet<GraphEdge>,
    pub edges_retained: BTreeSet<GraphEdge>,
    pub edges_removed: BTreeSet<GraphEdge>,
}

impl LayerDiff {
    pub fn between(before: &LayerGraph, after: &LayerGraph) -> Self {
        let bn: BTreeSet<&String> = before.nodes.keys().collect();
        let an: BTreeSet<&String> = after.nodes.keys().collect();
        Self {
            nodes_added: an.difference(&bn).map(|s| (*s).clone()).collect(),
            nodes_retained: an.intersection(&bn).map(|s| (*s).clone()).collect(),
            nodes_removed: bn.difference(&an).map(|s| (*s).clone()).collect(),
            edges_added: after.edges.difference(&before.edges).cloned().collect(),
            edges_retained: after.edges.intersection(&before.edges).cloned().collect(),
            edges_removed: before.edges.difference(&after.edges).cloned().collect(),
        }
    }
}

/// Changes from layer `l − 1` to `l`. A missing `l − 1` counts as empty.
pub fn diff_layers(tkg: &TemporalKG, layer: u32) -> Result<LayerDiff, KgError> {
    let after = tkg.graph(layer).ok_or_else(|| KgError::UnknownLayer {
        layer,
        present: tkg.layers(),
    })?;
    let empty = LayerGraph::empty(LayerTag::Layer(layer.saturating_sub(1)));
    let before = layer.checked_sub(1).and_then(|p| tkg.graph(p)).unwrap_or(&empty);
    Ok(LayerDiff::between(before, after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::literalparse::parse_structured;

    fn triple(s: &str, r: &str, o: &str) -> SpoTriple {
        SpoTriple {
            subject: s.into(),
            relation: r.into(),
            object: o.into(),
            polarity: Polarity::Asserted,
            copular: false,
            layer: None,
        }
    }

    #[test]
    fn berlin_graph() {
        let g = graph_from_triples(
            &[triple("Berlin", "is", "city"), triple("Berlin", "country of", "Germany")],
            LayerTag::Layer(3),
        );
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn duplicates_collapse_but_relations_do_not() {
        let t = triple("A", "r", "B");
        let g = graph_from_triples(&[t.clone(), t.clone(), triple("A", "s", "B")], LayerTag::Layer(1));
        assert_eq!(g.edges.len(), 2);
        assert!(graph_from_triples(&[], LayerTag::Inference).is_empty());
    }

    #[test]
    fn node_keys_normalize() {
        let g = graph_from_triples(&[triple("The  Beatles", "r", " the beatles ")], LayerTag::Layer(1));
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.labels().next(), Some("The  Beatles"));
    }

    fn outcomes(valid: &[u32], invalid: &[u32]) -> BTreeMap<u32, ParseOutcome> {
        let ok = parse_structured(r#"{"label": true, "facts": ["IsCity(Berlin)"]}"#);
        let bad = parse_structured("no");
        valid
            .iter()
            .map(|&l| (l, ok.clone()))
            .chain(invalid.iter().map(|&l| (l, bad.clone())))
            .collect()
    }

    #[test]
    fn gaps_and_ordering() {
        let inf = parse_structured("prose");
        let tkg = concat_temporal("c", &outcomes(&[5, 1, 3], &[2, 4]), &inf).unwrap();
        assert_eq!(tkg.layers(), vec![1, 3, 5]);
        assert_eq!(tkg.gaps, vec![2, 4]);
        assert!(!tkg.inference_valid);
        let err = concat_temporal("c", &outcomes(&[], &[1, 2]), &inf).unwrap_err();
        assert!(matches!(err, KgError::EmptyTemporal(_)));
    }

    #[test]
    fn diffs() {
        let inf = parse_structured("prose");
        let tkg = concat_temporal("c", &outcomes(&[1, 2], &[]), &inf).unwrap();
        let d = diff_layers(&tkg, 2).unwrap();
        assert!(d.nodes_added.is_empty() && d.edges_added.is_empty() && d.nodes_removed.is_empty());
        assert_eq!(d.nodes_retained.len(), 2);
        let d = diff_layers(&tkg, 1).unwrap();
        assert_eq!(d.nodes_added.len(), 2);
        assert!(matches!(diff_layers(&tkg, 7), Err(KgError::UnknownLayer { .. })));
    }

    #[test]
    fn json_round_trip_and_stable_dot() {
        let inf = parse_structured(r#"{"label": false, "facts": ["¬AuthorOf(Hamlet, Poe)"]}"#);
        let tkg = concat_temporal("c1", &outcomes(&[1, 2, 3], &[4]), &inf).unwrap();
        let json = tkg.to_json().unwrap();
        assert_eq!(TemporalKG::from_json(&json).unwrap(), tkg);
        let dot = tkg.to_dot();
        assert_eq!(dot, tkg.clone().to_dot());
        assert!(dot.contains("label=\"not author of\", style=dashed"));
        assert!(dot.contains("fillcolor=\"white\""));
    }
}
