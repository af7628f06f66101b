//! Run bookkeeping and shared file helpers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use flowgraph::corpus::{load_document, read_manifest, split_dataset, DatasetSplit, Document};
use flowgraph::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const RUNS_FILE: &str = "runs.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";

/// One line of `runs.jsonl`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub args: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub started_at: u64,
    pub duration_secs: f64,
}

pub struct Run {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    started_at: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &'static str, out: &Path) -> Self {
        Run {
            command,
            out: out.to_path_buf(),
            started: Instant::now(),
            started_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes `bytes` to `path` and records it as an output.
    pub fn write(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, path: &Path, value: &S) -> Result<()> {
        self.write(path, serde_json::to_string_pretty(value)? + "\n")
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Appends the manifest line for this run.
    pub fn finish<C: Serialize, A: Serialize>(self, config: &C, args: &A, seed: u64) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: serde_json::to_value(config)?,
            args: serde_json::to_value(args)?,
            inputs: self.inputs,
            seed,
            outputs: self.outputs,
            started_at: self.started_at,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        create_dir(&self.out)?;
        let path = self.out.join(RUNS_FILE);
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(&manifest)? + "\n";
        file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Document ids become file names, so they must not escape the directory.
pub fn check_id(id: &str) -> Result<()> {
    let bad = id.is_empty()
        || id == "."
        || id == ".."
        || id.chars().any(|c| matches!(c, '/' | '\\' | '\0'));
    if bad {
        return Err(Error::validation(format!("document id '{id}' is not usable as a file name")));
    }
    Ok(())
}

/// A corpus is either a manifest file or a directory holding `manifest.json`.
pub fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join(MANIFEST_FILE)
    } else {
        corpus.to_path_buf()
    }
}

/// Loads every document of a corpus in manifest order.
pub fn load_corpus(corpus: &Path) -> Result<Vec<Document>> {
    let manifest = manifest_path(corpus);
    let entries = read_manifest(&manifest)?;
    if entries.is_empty() {
        return Err(Error::Empty("corpus manifest"));
    }
    entries
        .par_iter()
        .map(|e| load_document(&e.id, &e.path))
        .collect()
}

/// The split stored next to the corpus manifest, or a fresh seeded split.
pub fn corpus_split(corpus: &Path, docs: &[Document], seed: u64) -> Result<DatasetSplit> {
    let stored = manifest_path(corpus).with_file_name(SPLIT_FILE);
    if stored.is_file() {
        let text = fs::read_to_string(&stored).map_err(|e| Error::io(&stored, e))?;
        let split: DatasetSplit = serde_json::from_str(&text)?;
        let known: std::collections::BTreeSet<&str> = docs.iter().map(|d| d.id()).collect();
        for id in split.train.iter().chain(&split.validation).chain(&split.test) {
            if !known.contains(id.as_str()) {
                return Err(Error::validation(format!(
                    "{} names unknown document '{id}'",
                    stored.display()
                )));
            }
        }
        return Ok(split);
    }
    let ids: Vec<String> = docs.iter().map(|d| d.id().to_string()).collect();
    split_dataset(&ids, seed)
}

/// Documents whose ids appear in `ids`, in that order.
pub fn select<'a>(docs: &'a [Document], ids: &[String]) -> Result<Vec<&'a Document>> {
    let by_id: std::collections::HashMap<&str, &Document> = docs.iter().map(|d| (d.id(), d)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::validation(format!("split names unknown document '{id}'")))
        })
        .collect()
}
