//! Directory container: `manifest.json` plus one raw row-major little-endian
//! `f32` blob per tensor. Shared by activation traces and patch plans.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::trace::{ActivationTrace, AttentionBlob, LayerActivations, ModelConfig, TokenSequence, TraceError};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";
pub const MANIFEST: &str = "manifest.json";

/// Malformed container content, naming the offending manifest field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("format error in `{field}`: {message}")]
pub struct FormatError {
    pub field: String,
    pub message: String,
}

impl FormatError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
}

impl BlobEntry {
    pub fn f32le(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let name = name.into();
        Self {
            file: format!("{name}.{DTYPE_F32LE}"),
            name,
            dtype: DTYPE_F32LE.to_string(),
            shape,
        }
    }

    pub fn element_count(&self) -> Option<usize> {
        self.shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s))
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_f32le(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn write_blob(dir: &Path, entry: &BlobEntry, values: &[f32]) -> Result<(), TraceError> {
    let path = dir.join(&entry.file);
    fs::write(&path, encode_f32le(values)).map_err(io_err(&path))
}

/// Reads a blob and checks its length against the declared shape.
pub fn read_blob(dir: &Path, entry: &BlobEntry) -> Result<Vec<f32>, TraceError> {
    let field = format!("blobs.{}", entry.name);
    if entry.dtype != DTYPE_F32LE {
        return Err(FormatError::new(format!("{field}.dtype"), format!("unsupported dtype {:?}", entry.dtype)).into());
    }
    if entry.file.contains("..") || Path::new(&entry.file).is_absolute() {
        return Err(FormatError::new(format!("{field}.file"), "blob path escapes the container").into());
    }
    let count = entry
        .element_count()
        .ok_or_else(|| FormatError::new(format!("{field}.shape"), "shape overflows"))?;
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if bytes.len() != count * 4 {
        return Err(FormatError::new(
            format!("{field}.shape"),
            format!(
                "shape {:?} needs {} floats but {} holds {} bytes",
                entry.shape,
                count,
                entry.file,
                bytes.len()
            ),
        )
        .into());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_manifest<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T, TraceError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| FormatError::new("manifest", e.to_string()))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(FormatError::new("version", format!("unsupported version {v}, expected {FORMAT_VERSION}")).into())
        }
        None => return Err(FormatError::new("version", "missing or not an integer").into()),
    }
    serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        // serde names the field in messages like "missing field `d`"
        let field = msg
            .split('`')
            .nth(1)
            .unwrap_or("manifest")
            .to_string();
        FormatError::new(field, msg).into()
    })
}

pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<(), TraceError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| FormatError::new("manifest", e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceManifest {
    version: u32,
    model_name: String,
    #[serde(rename = "L")]
    layer_count: usize,
    d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_new_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    token_ids: Vec<u32>,
    token_texts: Vec<String>,
    input_span: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f32>>,
    generated_text: String,
    blobs: Vec<BlobEntry>,
}

pub(crate) fn save_trace(trace: &ActivationTrace, dir: &Path) -> Result<(), TraceError> {
    trace.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blobs = Vec::new();
    for layer in &trace.layers {
        let entry = BlobEntry::f32le(format!("layer_{}", layer.layer_index), layer.matrix.shape().to_vec());
        write_blob(dir, &entry, layer.matrix.as_slice())?;
        blobs.push(entry);
    }
    for attn in &trace.attention {
        let entry = BlobEntry::f32le(format!("attn_l{}", attn.layer), attn.shape.clone());
        if entry.element_count() != Some(attn.data.len()) {
            return Err(FormatError::new(entry.name, "attention data does not match its shape").into());
        }
        write_blob(dir, &entry, &attn.data)?;
        blobs.push(entry);
    }
    let manifest = TraceManifest {
        version: FORMAT_VERSION,
        model_name: trace.model_name.clone(),
        layer_count: trace.config.layer_count,
        d: trace.config.hidden_dim,
        vocab_size: Some(trace.config.vocab_size),
        max_new_tokens: Some(trace.config.max_new_tokens),
        seed: Some(trace.config.seed),
        token_ids: trace.tokens.token_ids.clone(),
        token_texts: trace.tokens.token_texts.clone(),
        input_span: [trace.input_span.start, trace.input_span.end],
        weights: trace.weights.clone(),
        generated_text: trace.generated_text.clone(),
        blobs,
    };
    write_manifest(dir, &manifest)
}

pub(crate) fn load_trace(dir: &Path) -> Result<ActivationTrace, TraceError> {
    let m: TraceManifest = read_manifest(dir)?;
    if m.token_ids.len() != m.token_texts.len() {
        return Err(FormatError::new("token_texts", "length differs from token_ids").into());
    }
    let n = m.token_ids.len();
    let fallback_vocab = m.token_ids.iter().max().map_or(2, |&id| (id as usize + 1).max(2));
    let config = ModelConfig {
        layer_count: m.layer_count,
        hidden_dim: m.d,
        vocab_size: m.vocab_size.unwrap_or(fallback_vocab),
        max_new_tokens: m.max_new_tokens.unwrap_or(1),
        seed: m.seed.unwrap_or(0),
    };
    config
        .validate()
        .map_err(|e| FormatError::new("L", e.to_string()))?;

    let mut layers = Vec::with_capacity(m.layer_count + 1);
    let mut attention = Vec::new();
    for l in 0..=m.layer_count {
        let name = format!("layer_{l}");
        let entry = m
            .blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| FormatError::new("blobs", format!("missing blob {name}")))?;
        if entry.shape != [n, m.d] {
            return Err(FormatError::new(
                format!("blobs.{name}.shape"),
                format!("{:?} does not match [{n}, {}]", entry.shape, m.d),
            )
            .into());
        }
        let data = read_blob(dir, entry)?;
        let matrix = Matrix::from_vec(n, m.d, data).expect("length checked against shape");
        layers.push(LayerActivations { layer_index: l, matrix });
    }
    for entry in &m.blobs {
        if let Some(rest) = entry.name.strip_prefix("attn_l") {
            let layer = rest
                .parse()
                .map_err(|_| FormatError::new(format!("blobs.{}", entry.name), "bad attention layer index"))?;
            attention.push(AttentionBlob {
                layer,
                shape: entry.shape.clone(),
                data: read_blob(dir, entry)?,
            });
        } else {
            let known = entry
                .name
                .strip_prefix("layer_")
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i <= m.layer_count);
            if !known {
                return Err(FormatError::new(format!("blobs.{}", entry.name), "unexpected blob").into());
            }
        }
    }
    let trace = ActivationTrace {
        model_name: m.model_name,
        config,
        tokens: TokenSequence {
            token_ids: m.token_ids,
            token_texts: m.token_texts,
        },
        input_span: m.input_span[0]..m.input_span[1],
        layers,
        generated_text: m.generated_text,
        weights: m.weights,
        attention,
    };
    trace.validate()?;
    Ok(trace)
}
