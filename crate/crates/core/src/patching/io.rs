//! Patch-plan container and the line-delimited outputs file.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MergedVector, PatchPlan};
use crate::container::{io_err, read_blob, read_manifest, write_blob, write_manifest, BlobEntry, FormatError, FORMAT_VERSION};
use crate::layer::LayerTag;
use crate::trace::{TokenSequence, TraceError};

const PLAN_KIND: &str = "patch_plan";
const MERGED_BLOB: &str = "merged";

#[derive(Debug, Serialize, Deserialize)]
struct PlanManifest {
    version: u32,
    kind: String,
    model_name: String,
    d: usize,
    placeholder_position: usize,
    token_ids: Vec<u32>,
    token_texts: Vec<String>,
    layers: Vec<usize>,
    blobs: Vec<BlobEntry>,
}

pub fn save_plan(plan: &PatchPlan, dir: &Path) -> Result<(), TraceError> {
    let d = plan.hidden_dim().unwrap_or(0);
    let entry = BlobEntry::f32le(MERGED_BLOB, vec![plan.merged.len(), d]);
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let data: Vec<f32> = plan.merged.iter().flat_map(|m| m.vector.iter().copied()).collect();
    write_blob(dir, &entry, &data)?;
    write_manifest(
        dir,
        &PlanManifest {
            version: FORMAT_VERSION,
            kind: PLAN_KIND.into(),
            model_name: plan.model_name.clone(),
            d,
            placeholder_position: plan.placeholder_position,
            token_ids: plan.target.token_ids.clone(),
            token_texts: plan.target.token_texts.clone(),
            layers: plan.layers().collect(),
            blobs: vec![entry],
        },
    )
}

pub fn load_plan(dir: &Path) -> Result<PatchPlan, TraceError> {
    let m: PlanManifest = read_manifest(dir)?;
    if m.kind != PLAN_KIND {
        return Err(FormatError::new("kind", format!("expected {PLAN_KIND:?}, found {:?}", m.kind)).into());
    }
    let entry = m
        .blobs
        .iter()
        .find(|b| b.name == MERGED_BLOB)
        .ok_or_else(|| FormatError::new("blobs", "missing blob merged"))?;
    if entry.shape != [m.layers.len(), m.d] {
        return Err(FormatError::new(
            "blobs.merged.shape",
            format!("{:?} does not match [{}, {}]", entry.shape, m.layers.len(), m.d),
        )
        .into());
    }
    let data = read_blob(dir, entry)?;
    let target = TokenSequence::new(m.token_ids, m.token_texts)
        .map_err(|e| FormatError::new("token_texts", e.to_string()))?;
    let merged = m
        .layers
        .iter()
        .enumerate()
        .map(|(i, &layer_index)| MergedVector {
            layer_index,
            vector: data[i * m.d..(i + 1) * m.d].to_vec(),
        })
        .collect();
    let plan = PatchPlan {
        model_name: m.model_name,
        target,
        placeholder_position: m.placeholder_position,
        merged,
    };
    plan.validate()
        .map_err(|e| FormatError::new("placeholder_position", e.to_string()))?;
    Ok(plan)
}

/// One generated text. `valid` is unset until the output has been decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub layer: LayerTag,
    pub text: String,
    pub valid: Option<bool>,
}

pub fn write_outputs(path: &Path, records: &[OutputRecord]) -> Result<(), TraceError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| FormatError::new("outputs", e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

pub fn read_outputs(path: &Path) -> Result<Vec<OutputRecord>, TraceError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| FormatError::new(format!("line {}", i + 1), e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}
