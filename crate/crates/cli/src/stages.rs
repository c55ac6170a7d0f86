//! Pipeline stages. Each reads the documented files of earlier stages and
//! writes only below its own directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use latentkg::cluster::{build_feature_table, cluster_csv, cluster_layers, MeanShiftParams};
use latentkg::corpus::{
    build_prompts, class_counts, filter_claims, load_claims, sample_claims, write_claims, GoldLabel, PromptBundle,
    TARGET_TEMPLATE,
};
use latentkg::embedsim::{consecutive_series, pairwise_matrix, series_csv, DiffusionEmbedder, LayerSimilaritySeries};
use latentkg::kgraph::{concat_temporal, diff_layers, GraphEdge, LayerGraph, TemporalKG};
use latentkg::literalparse::{parse_structured, ParseOutcome};
use latentkg::metrics::{
    compute_report, majority_label, report_csv, self_consistency, self_consistency_summary, table_text, EvalReport,
    LabeledPrediction, Predicted,
};
use latentkg::patching::{
    build_patch_plan, claim_weights, load_plan, read_outputs, save_plan, sweep_layers, write_outputs, MergeOptions,
    OutputRecord,
};
use latentkg::trace::{run_with_trace, ActivationTrace, LanguageModel, TokenSequence, ToyModel};
use latentkg::LayerTag;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ModelChoice, RunConfig};
use crate::error::{CliError, CliResult};
use crate::workspace::{Input, StageOutcome, Workspace};

pub const STAGES: &[&str] = &[
    "ingest",
    "prompts",
    "trace",
    "plan",
    "patch-sweep",
    "decode",
    "graph",
    "similarity",
    "cluster",
    "metrics",
    "report",
];

const CLAIMS: &str = "ingest/claims.jsonl";
const PROMPTS: &str = "prompts/prompts.jsonl";
const TARGET: &str = "target.json";
const SERIES: &str = "similarity/series.json";
const REPORTS: &str = "metrics/reports.json";

pub fn run_named(stage: &str, cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    match stage {
        "ingest" => ingest(cfg, ws),
        "prompts" => prompts(ws),
        "trace" => trace(cfg, ws),
        "plan" => plan(cfg, ws),
        "patch-sweep" => patch_sweep(cfg, ws),
        "decode" => decode(ws),
        "graph" => graph(ws),
        "similarity" => similarity(cfg, ws),
        "cluster" => cluster(cfg, ws),
        "metrics" => metrics(ws),
        "report" => report(ws),
        other => Err(CliError::Usage(format!("unknown stage {other:?}"))),
    }
}

pub fn run_all(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    for stage in STAGES {
        run_named(stage, cfg, ws)?;
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Claim ids become file names, so they are restricted to a portable set.
fn check_claim_id(id: &str) -> CliResult<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::data(format!(
            "claim id {id:?} is not usable as a file name (letters, digits, '-', '_', '.')"
        )))
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Per-claim results in input order; degenerate claims become skip rows,
/// anything else aborts.
fn partition<T>(results: Vec<(String, CliResult<T>)>) -> CliResult<(Vec<(String, T)>, Vec<(String, String)>)> {
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => kept.push((id, v)),
            Err(CliError::Degenerate(reason)) => {
                log::warn!("claim {id} skipped: {reason}");
                skipped.push((id, reason));
            }
            Err(e) => return Err(e.context(format!("claim {id}"))),
        }
    }
    Ok((kept, skipped))
}

fn write_skipped(dir: &Path, skipped: &[(String, String)]) -> CliResult<()> {
    let mut out = String::from("claim_id,reason\n");
    for (id, reason) in skipped {
        let _ = writeln!(out, "{},{}", csv_field(id), csv_field(reason));
    }
    write_text(&dir.join("skipped.csv"), &out)
}

fn none_left(stage_dir: &Path, what: &str) -> CliError {
    CliError::Degenerate(format!(
        "no claim {what}; see {}",
        stage_dir.join("skipped.csv").display()
    ))
}

/// Stems of `*.<ext>` files in `dir`, sorted.
fn stems(dir: &Path, ext: &str) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            if let Some(s) = p.file_stem() {
                out.push(s.to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn ingest(cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    let dataset = cfg.dataset_path()?.to_path_buf();
    let settings = json!({"sample": cfg.sample, "seed": cfg.seed});
    ws.run_stage("ingest", &[Input::External(dataset.clone())], settings, |dir| {
        let records = load_claims(&dataset)?;
        let mut seen = BTreeSet::new();
        for r in &records {
            check_claim_id(&r.id)?;
            if !seen.insert(r.id.as_str()) {
                return Err(CliError::data(format!("duplicate claim id {:?}", r.id)));
            }
        }
        let filtered = filter_claims(&records);
        let mut selected = match cfg.sample {
            Some(n) => sample_claims(&filtered, n, cfg.seed)?,
            None => filtered.clone(),
        };
        if selected.is_empty() {
            return Err(CliError::Degenerate("no claims left after filtering".into()));
        }
        selected.sort_by(|a, b| a.id.cmp(&b.id));
        write_text(&dir.join("claims.jsonl"), &write_claims(&selected))?;
        let counts = class_counts(&selected);
        let count = |g| counts.get(&g).copied().unwrap_or(0);
        write_json(
            &dir.join("summary.json"),
            &json!({
                "loaded": records.len(),
                "after_filter": filtered.len(),
                "selected": selected.len(),
                "supported": count(GoldLabel::Supported),
                "refuted": count(GoldLabel::Refuted),
            }),
        )
    })
}

pub fn read_prompts(ws: &Workspace) -> CliResult<Vec<PromptBundle>> {
    let path = ws.require(PROMPTS, "prompts")?;
    fs::read_to_string(&path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn prompts(ws: &Workspace) -> CliResult<StageOutcome> {
    ws.run_stage("prompts", &[Input::artifact(CLAIMS, "ingest")], json!({}), |dir| {
        let claims = load_claims(&ws.path(CLAIMS))?;
        let mut out = String::new();
        for c in &claims {
            out.push_str(&serde_json::to_string(&build_prompts(c)?)?);
            out.push('\n');
        }
        write_text(&dir.join("prompts.jsonl"), &out)
    })
}

fn toy_model(cfg: &RunConfig) -> CliResult<ToyModel> {
    Ok(ToyModel::new(cfg.model_config())?)
}

pub fn trace(cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    let mut inputs = vec![Input::artifact(PROMPTS, "prompts")];
    let settings = match cfg.model {
        ModelChoice::Toy => json!({"model": "toy", "toy": cfg.model_config()}),
        ModelChoice::ExternalTrace => {
            let td = cfg.trace_dir_path()?.to_path_buf();
            inputs.push(Input::External(td));
            json!({"model": "external-trace"})
        }
    };
    ws.run_stage("trace", &inputs, settings, |dir| {
        let bundles = read_prompts(ws)?;
        match cfg.model {
            ModelChoice::Toy => {
                let model = toy_model(cfg)?;
                write_json(&dir.join(TARGET), &model.tokenize(TARGET_TEMPLATE))?;
                bundles
                    .par_iter()
                    .map(|b| -> CliResult<()> {
                        let (seq, span) = model.vocab().encode_with_span(&b.source_text, b.input_span_hint.clone());
                        if span.is_empty() {
                            return Err(CliError::data(format!("claim {} has no tokens", b.claim_id)));
                        }
                        run_with_trace(&model, &seq, span)?.save(dir.join(&b.claim_id))?;
                        Ok(())
                    })
                    .collect::<CliResult<Vec<()>>>()?;
            }
            ModelChoice::ExternalTrace => {
                let td = cfg.trace_dir_path()?;
                let target: TokenSequence = read_json(&td.join(TARGET))
                    .map_err(|e| e.context("target prompt tokens (token_ids, token_texts)"))?;
                write_json(&dir.join(TARGET), &target)?;
                for b in &bundles {
                    let t = ActivationTrace::load(td.join(&b.claim_id)).map_err(|e| CliError::from(e).context(format!("trace for claim {}", b.claim_id)))?;
                    if t.input_span.is_empty() {
                        return Err(CliError::data(format!("trace for claim {} has an empty input span", b.claim_id)));
                    }
                    t.save(dir.join(&b.claim_id))?;
                }
            }
        }
        Ok(())
    })
}

fn load_trace(ws: &Workspace, id: &str) -> CliResult<ActivationTrace> {
    let dir = ws.require(&format!("trace/{id}"), "trace")?;
    Ok(ActivationTrace::load(dir)?)
}

pub fn plan(cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    let settings = json!({
        "fallback_uniform": cfg.fallback_uniform,
        "include_layer_0": cfg.include_layer_0,
        "normalize_merge": cfg.normalize_merge,
    });
    let inputs = [Input::artifact(PROMPTS, "prompts"), Input::artifact("trace", "trace")];
    ws.run_stage("plan", &inputs, settings, |dir| {
        let bundles = read_prompts(ws)?;
        let target: TokenSequence = read_json(&ws.require(&format!("trace/{TARGET}"), "trace")?)?;
        let options = MergeOptions {
            normalize: cfg.normalize_merge,
        };
        let results: Vec<(String, CliResult<String>)> = bundles
            .par_iter()
            .map(|b| {
                let run = || -> CliResult<String> {
                    let trace = load_trace(ws, &b.claim_id)?;
                    let weights = claim_weights(&trace, cfg.fallback_uniform)?;
                    let plan = build_patch_plan(&trace, &weights, &target, cfg.include_layer_0, options)?;
                    save_plan(&plan, &dir.join(&b.claim_id))?;
                    let mut rows = String::new();
                    for (i, w) in trace.input_span.clone().zip(&weights.weights) {
                        let _ = writeln!(rows, "{},{i},{},{w}", csv_field(&b.claim_id), csv_field(&trace.tokens.token_texts[i]));
                    }
                    Ok(rows)
                };
                (b.claim_id.clone(), run())
            })
            .collect();
        let (kept, skipped) = partition(results)?;
        write_skipped(dir, &skipped)?;
        let mut weights = String::from("claim_id,token_index,token_text,weight\n");
        kept.iter().for_each(|(_, rows)| weights.push_str(rows));
        write_text(&dir.join("weights.csv"), &weights)?;
        if kept.is_empty() {
            return Err(none_left(dir, "has usable weights"));
        }
        Ok(())
    })
}

/// Claims that got a plan, in prompt order.
fn planned(ws: &Workspace) -> CliResult<Vec<String>> {
    let plan_dir = ws.require("plan", "plan")?;
    Ok(read_prompts(ws)?
        .into_iter()
        .map(|b| b.claim_id)
        .filter(|id| plan_dir.join(id).is_dir())
        .collect())
}

fn with_inference(mut records: Vec<OutputRecord>, trace: &ActivationTrace) -> Vec<OutputRecord> {
    if !records.iter().any(|r| r.layer == LayerTag::Inference) {
        records.push(OutputRecord {
            layer: LayerTag::Inference,
            text: trace.generated_text.clone(),
            valid: None,
        });
    }
    records.sort_by_key(|r| r.layer);
    records
}

pub fn patch_sweep(cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    let mut inputs = vec![
        Input::artifact(PROMPTS, "prompts"),
        Input::artifact("trace", "trace"),
        Input::artifact("plan", "plan"),
    ];
    let settings = match cfg.model {
        ModelChoice::Toy => json!({"model": "toy", "toy": cfg.model_config()}),
        ModelChoice::ExternalTrace => {
            inputs.push(Input::External(cfg.trace_dir_path()?.join("outputs")));
            json!({"model": "external-trace"})
        }
    };
    ws.run_stage("patch-sweep", &inputs, settings, |dir| {
        let ids = planned(ws)?;
        match cfg.model {
            ModelChoice::Toy => {
                let model = toy_model(cfg)?;
                ids.par_iter()
                    .map(|id| -> CliResult<()> {
                        let trace = load_trace(ws, id)?;
                        if trace.config != *model.config() || trace.model_name != model.name() {
                            return Err(CliError::data(format!(
                                "trace for claim {id} comes from a different model; rerun `latentkg trace`"
                            )));
                        }
                        let plan = load_plan(&ws.path(&format!("plan/{id}")))?;
                        let outputs = sweep_layers(&model, &plan)?;
                        let records = outputs
                            .outputs
                            .into_iter()
                            .map(|(l, text)| OutputRecord {
                                layer: LayerTag::Layer(l as u32),
                                text,
                                valid: None,
                            })
                            .collect();
                        write_outputs(&dir.join(format!("{id}.jsonl")), &with_inference(records, &trace))?;
                        Ok(())
                    })
                    .collect::<CliResult<Vec<()>>>()?;
            }
            ModelChoice::ExternalTrace => {
                let td = cfg.trace_dir_path()?;
                for id in &ids {
                    let path = td.join("outputs").join(format!("{id}.jsonl"));
                    if !path.is_file() {
                        return Err(CliError::data(format!(
                            "missing {}; execute {} with the exporter and place its outputs there",
                            path.display(),
                            ws.path(&format!("plan/{id}")).display()
                        )));
                    }
                    let plan = load_plan(&ws.path(&format!("plan/{id}")))?;
                    let records: Vec<OutputRecord> = read_outputs(&path)?
                        .into_iter()
                        .map(|r| OutputRecord { valid: None, ..r })
                        .collect();
                    let have: BTreeSet<LayerTag> = records.iter().map(|r| r.layer).collect();
                    if let Some(l) = plan.layers().find(|&l| !have.contains(&LayerTag::Layer(l as u32))) {
                        return Err(CliError::data(format!("{} has no output for layer {l}", path.display())));
                    }
                    let trace = load_trace(ws, id)?;
                    write_outputs(&dir.join(format!("{id}.jsonl")), &with_inference(records, &trace))?;
                }
            }
        }
        Ok(())
    })
}

const LABELS_HEADER: &str = "claim_id,layer,valid,label,facts,literals,reason";

fn label_rows(id: &str, records: &[OutputRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let parsed = parse_structured(&r.text);
        let (label, facts, literals, reason) = match &parsed {
            ParseOutcome::Valid(o) => (o.label.to_string(), o.facts.len().to_string(), o.literal_count().to_string(), String::new()),
            ParseOutcome::Invalid { reason, .. } => (String::new(), String::new(), String::new(), reason.code().to_string()),
        };
        let _ = writeln!(out, "{},{},{},{label},{facts},{literals},{reason}", csv_field(id), r.layer, parsed.is_valid());
    }
    out
}

/// Label table for a single outputs file, for inspection outside a run.
pub fn decode_file(path: &Path) -> CliResult<String> {
    let records = read_outputs(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(format!("{LABELS_HEADER}\n{}", label_rows(&id, &records)))
}

pub fn decode(ws: &Workspace) -> CliResult<StageOutcome> {
    ws.run_stage("decode", &[Input::artifact("patch-sweep", "patch-sweep")], json!({}), |dir| {
        let src = ws.path("patch-sweep");
        let mut labels = format!("{LABELS_HEADER}\n");
        for id in stems(&src, "jsonl")? {
            let mut records = read_outputs(&src.join(format!("{id}.jsonl")))?;
            records.sort_by_key(|r| r.layer);
            for r in &mut records {
                r.valid = Some(parse_structured(&r.text).is_valid());
            }
            write_outputs(&dir.join(format!("{id}.jsonl")), &records)?;
            labels.push_str(&label_rows(&id, &records));
        }
        write_text(&dir.join("labels.csv"), &labels)
    })
}

/// Parsed per-layer outcomes and the inference outcome of one claim.
fn decoded_outcomes(ws: &Workspace, id: &str) -> CliResult<(BTreeMap<u32, ParseOutcome>, ParseOutcome)> {
    let path = ws.path(&format!("decode/{id}.jsonl"));
    let mut layers = BTreeMap::new();
    let mut inference = None;
    for r in read_outputs(&path)? {
        let parsed = parse_structured(&r.text);
        match r.layer {
            LayerTag::Layer(l) => {
                layers.insert(l, parsed);
            }
            LayerTag::Inference => inference = Some(parsed),
        }
    }
    let inference =
        inference.ok_or_else(|| CliError::data(format!("{} has no inference record", path.display())))?;
    Ok((layers, inference))
}

fn edge_text(g: &LayerGraph, e: &GraphEdge) -> String {
    let label = |k: &str| g.nodes.get(k).cloned().unwrap_or_else(|| k.to_string());
    format!("{} -[{}]-> {}", label(&e.subject), e.rendered_relation(), label(&e.object))
}

fn diff_rows(tkg: &TemporalKG) -> CliResult<String> {
    let mut out = String::new();
    let id = csv_field(&tkg.claim_id);
    for l in tkg.layers() {
        let d = diff_layers(tkg, l)?;
        let g = tkg.graph(l).expect("layer listed");
        let prev_owned;
        let prev = match l.checked_sub(1).and_then(|p| tkg.graph(p)) {
            Some(p) => p,
            None => {
                prev_owned = LayerGraph::empty(LayerTag::Layer(l.saturating_sub(1)));
                &prev_owned
            }
        };
        let node_label = |graph: &LayerGraph, k: &str| graph.nodes.get(k).cloned().unwrap_or_else(|| k.to_string());
        for (change, set, graph) in [("added", &d.nodes_added, g), ("retained", &d.nodes_retained, g), ("removed", &d.nodes_removed, prev)] {
            for k in set {
                let _ = writeln!(out, "{id},{l},{change},node,{}", csv_field(&node_label(graph, k)));
            }
        }
        for (change, set, graph) in [("added", &d.edges_added, g), ("retained", &d.edges_retained, g), ("removed", &d.edges_removed, prev)] {
            for e in set {
                let _ = writeln!(out, "{id},{l},{change},edge,{}", csv_field(&edge_text(graph, e)));
            }
        }
    }
    Ok(out)
}

pub fn graph(ws: &Workspace) -> CliResult<StageOutcome> {
    ws.run_stage("graph", &[Input::artifact("decode", "decode")], json!({}), |dir| {
        let ids = stems(&ws.path("decode"), "jsonl")?;
        let results: Vec<(String, CliResult<TemporalKG>)> = ids
            .par_iter()
            .map(|id| {
                let run = || -> CliResult<TemporalKG> {
                    let (layers, inference) = decoded_outcomes(ws, id)?;
                    Ok(concat_temporal(id, &layers, &inference)?)
                };
                (id.clone(), run())
            })
            .collect();
        let (kept, skipped) = partition(results)?;
        write_skipped(dir, &skipped)?;
        let mut sizes = String::from("claim_id,layer,nodes,edges\n");
        let mut diffs = String::from("claim_id,layer,change,kind,item\n");
        for (id, tkg) in &kept {
            write_text(&dir.join(format!("{id}.json")), &tkg.to_json()?)?;
            write_text(&dir.join(format!("{id}.dot")), &tkg.to_dot())?;
            for g in tkg.per_layer.iter().chain(std::iter::once(&tkg.inference_graph)) {
                let _ = writeln!(sizes, "{},{},{},{}", csv_field(id), g.layer, g.node_count(), g.edges.len());
            }
            diffs.push_str(&diff_rows(tkg)?);
        }
        write_text(&dir.join("sizes.csv"), &sizes)?;
        write_text(&dir.join("diffs.csv"), &diffs)?;
        if kept.is_empty() {
            return Err(none_left(dir, "has a valid output"));
        }
        Ok(())
    })
}

pub fn similarity(cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    let settings = json!({"scales": cfg.scales, "attribute_dim": cfg.attribute_dim});
    ws.run_stage("similarity", &[Input::artifact("graph", "graph")], settings, |dir| {
        let embedder = DiffusionEmbedder {
            attribute_dim: cfg.attribute_dim,
            scales: cfg.scales,
        };
        let ids = stems(&ws.path("graph"), "json")?;
        let results: Vec<(String, CliResult<(LayerSimilaritySeries<f64>, String)>)> = ids
            .par_iter()
            .map(|id| {
                let run = || {
                    let text = fs::read_to_string(ws.path(&format!("graph/{id}.json")))?;
                    let tkg = TemporalKG::from_json(&text)?;
                    let series = consecutive_series::<f64, _>(&tkg, &embedder)?;
                    let matrix = pairwise_matrix::<f64, _>(&tkg, &embedder)?;
                    Ok((series, matrix.to_csv()))
                };
                (id.clone(), run())
            })
            .collect();
        let (kept, skipped) = partition(results)?;
        write_skipped(dir, &skipped)?;
        for (id, (_, csv)) in &kept {
            write_text(&dir.join("pairwise").join(format!("{id}.csv")), csv)?;
        }
        let series: Vec<LayerSimilaritySeries<f64>> = kept.into_iter().map(|(_, (s, _))| s).collect();
        write_text(&dir.join("series.csv"), &series_csv(&series))?;
        write_json(&dir.join("series.json"), &series)?;
        if series.is_empty() {
            return Err(none_left(dir, "has two or more non-empty layer graphs"));
        }
        Ok(())
    })
}

pub fn cluster(cfg: &RunConfig, ws: &Workspace) -> CliResult<StageOutcome> {
    let settings = json!({"quantile": cfg.quantile, "feature": cfg.feature});
    ws.run_stage("cluster", &[Input::artifact(SERIES, "similarity")], settings, |dir| {
        let series: Vec<LayerSimilaritySeries<f64>> = read_json(&ws.path(SERIES))?;
        let table = build_feature_table(&series)?;
        let assignment = cluster_layers(&table, cfg.feature, cfg.quantile, MeanShiftParams::default())?;
        write_text(&dir.join("clusters.csv"), &cluster_csv(&table, &assignment))?;
        write_json(&dir.join("assignment.json"), &assignment)?;
        let mut features = String::from("layer");
        for c in &table.claim_ids {
            let _ = write!(features, ",{}", csv_field(c));
        }
        features.push('\n');
        for (l, row) in table.layers.iter().zip(&table.observed) {
            let _ = write!(features, "{l}");
            for v in row {
                features.push(',');
                if let Some(v) = v {
                    let _ = write!(features, "{v}");
                }
            }
            features.push('\n');
        }
        write_text(&dir.join("features.csv"), &features)
    })
}

pub fn metrics(ws: &Workspace) -> CliResult<StageOutcome> {
    let inputs = [Input::artifact(CLAIMS, "ingest"), Input::artifact("decode", "decode")];
    ws.run_stage("metrics", &inputs, json!({}), |dir| {
        let gold: BTreeMap<String, bool> = load_claims(&ws.path(CLAIMS))?
            .into_iter()
            .filter_map(|c| c.gold.as_bool().map(|g| (c.id, g)))
            .collect();
        let mut inference_preds = Vec::new();
        let mut latent_preds = Vec::new();
        let mut per_claim = Vec::new();
        let mut rows = String::from("claim_id,gold,inference,latent,self_consistency,valid_layers,layers\n");
        for id in stems(&ws.path("decode"), "jsonl")? {
            let g = *gold
                .get(&id)
                .ok_or_else(|| CliError::data(format!("claim {id} has no true/false gold label in {CLAIMS}")))?;
            let (layers, inference) = decoded_outcomes(ws, &id)?;
            let labels: BTreeMap<u32, Predicted> = layers.iter().map(|(&l, o)| (l, Predicted::from(o.label()))).collect();
            let inf = Predicted::from(inference.label());
            let latent = majority_label(&labels);
            let sc = match inf.as_bool() {
                Some(b) if !labels.is_empty() => self_consistency(&labels, b)?.to_string(),
                _ => String::new(),
            };
            let valid = labels.values().filter(|p| **p != Predicted::Invalid).count();
            let _ = writeln!(rows, "{},{g},{inf},{latent},{sc},{valid},{}", csv_field(&id), labels.len());
            inference_preds.push(LabeledPrediction {
                claim_id: id.clone(),
                gold: g,
                predicted: inf,
                score: None,
            });
            latent_preds.push(LabeledPrediction {
                claim_id: id.clone(),
                gold: g,
                predicted: latent,
                score: None,
            });
            per_claim.push((inf, labels));
        }
        if inference_preds.is_empty() {
            return Err(CliError::Degenerate("no decoded claims to evaluate".into()));
        }
        let mut inference_report = compute_report(&inference_preds)?;
        inference_report.self_consistency = Some(self_consistency_summary(per_claim.iter().map(|(p, l)| (*p, l))));
        let reports: Vec<(String, EvalReport)> = vec![
            ("inference".into(), inference_report),
            ("latent".into(), compute_report(&latent_preds)?),
        ];
        write_text(&dir.join("predictions.csv"), &rows)?;
        write_json(&dir.join("reports.json"), &reports)
    })
}

pub fn read_reports(ws: &Workspace) -> CliResult<Vec<(String, EvalReport)>> {
    read_json(&ws.require(REPORTS, "metrics")?)
}

pub fn report(ws: &Workspace) -> CliResult<StageOutcome> {
    ws.run_stage("report", &[Input::artifact(REPORTS, "metrics")], json!({}), |dir| {
        let reports = read_reports(ws)?;
        write_text(&dir.join("table.csv"), &report_csv(&reports))?;
        write_text(&dir.join("table.txt"), &table_text(&reports))?;
        let mut confusion = String::from("name,gold,predicted_true,predicted_false,predicted_invalid\n");
        for (name, r) in &reports {
            for (gold, row) in ["true", "false"].iter().zip(&r.confusion) {
                let _ = writeln!(confusion, "{},{gold},{},{},{}", csv_field(name), row[0], row[1], row[2]);
            }
        }
        write_text(&dir.join("confusion.csv"), &confusion)
    })
}

