//! Output directory layout and per-stage manifests.
//!
//! Each stage owns one directory under the output root and records the
//! sha256 of every input and output file in `manifests/<stage>.json`. A stage
//! whose inputs and settings match its manifest, and whose outputs are
//! intact, is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub config: Value,
    /// Path to sha256, inputs under the output root relative to it.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Something a stage reads.
#[derive(Debug, Clone)]
pub enum Input {
    /// File or directory under the output root made by another subcommand.
    Artifact { rel: String, producer: &'static str },
    /// File or directory outside the output root.
    External(PathBuf),
}

impl Input {
    pub fn artifact(rel: impl Into<String>, producer: &'static str) -> Self {
        Input::Artifact {
            rel: rel.into(),
            producer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    force: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Files below `dir`, sorted, as paths relative to `dir` with `/` separators.
pub fn list_files(dir: &Path) -> CliResult<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
        let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("cannot list {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("walk stays below base");
                out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn hash_tree(path: &Path, key: &str, into: &mut BTreeMap<String, String>) -> CliResult<()> {
    if path.is_dir() {
        for f in list_files(path)? {
            into.insert(format!("{key}/{f}"), hash_file(&path.join(&f))?);
        }
    } else {
        into.insert(key.to_string(), hash_file(path)?);
    }
    Ok(())
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, force: bool) -> Self {
        Self {
            root: root.into(),
            force,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Fails with the producing subcommand when `rel` is missing.
    pub fn require(&self, rel: &str, producer: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::data(format!(
                "missing {}; run `latentkg {producer}` first",
                p.display()
            )))
        }
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.root.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }

    pub fn read_manifest(&self, stage: &str) -> Option<StageManifest> {
        let text = fs::read_to_string(self.manifest_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn hash_inputs(&self, inputs: &[Input]) -> CliResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for input in inputs {
            match input {
                Input::Artifact { rel, producer } => {
                    let p = self.require(rel, producer)?;
                    hash_tree(&p, rel, &mut out)?;
                }
                Input::External(p) => {
                    if !p.exists() {
                        return Err(CliError::data(format!("missing {}", p.display())));
                    }
                    hash_tree(p, &p.display().to_string(), &mut out)?;
                }
            }
        }
        Ok(out)
    }

    fn outputs_intact(&self, m: &StageManifest) -> bool {
        m.outputs
            .iter()
            .all(|(rel, h)| hash_file(&self.path(rel)).map_or(false, |got| &got == h))
            && list_files(&self.path(&m.stage)).map_or(false, |files| files.len() == m.outputs.len())
    }

    /// Runs `body` with a fresh `<root>/<stage>` directory unless the stage
    /// is up to date.
    pub fn run_stage(
        &self,
        stage: &str,
        inputs: &[Input],
        config: Value,
        body: impl FnOnce(&Path) -> CliResult<()>,
    ) -> CliResult<StageOutcome> {
        let input_hashes = self.hash_inputs(inputs)?;
        if !self.force {
            if let Some(m) = self.read_manifest(stage) {
                if m.config == config && m.inputs == input_hashes && self.outputs_intact(&m) {
                    log::info!("{stage}: up to date");
                    return Ok(StageOutcome::UpToDate);
                }
            }
        }
        let manifest_path = self.manifest_path(stage);
        if manifest_path.exists() {
            fs::remove_file(&manifest_path)?;
        }
        let dir = self.path(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        log::info!("{stage}: running");
        body(&dir).map_err(|e| e.context(stage))?;

        let mut outputs = BTreeMap::new();
        hash_tree(&dir, stage, &mut outputs)?;
        let manifest = StageManifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: input_hashes,
            outputs,
        };
        fs::create_dir_all(self.root.join(MANIFEST_DIR))?;
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(StageOutcome::Ran)
    }
}
