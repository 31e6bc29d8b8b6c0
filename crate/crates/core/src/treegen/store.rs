//! Ensemble directories: one linkage file per tree plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LinkageTree;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LINKAGE_EXTENSION: &str = "linkage";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tag: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub tag: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub trees: Vec<ManifestEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedEntry>,
    /// Whatever produced the trees, echoed for reproduction.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn write_ensemble_dir(
    dir: &Path,
    trees: &[(String, LinkageTree)],
    skipped: &[(String, String)],
    config: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(trees.len());
    for (tag, tree) in trees {
        let file = format!("{tag}.{LINKAGE_EXTENSION}");
        let path = dir.join(&file);
        fs::write(&path, tree.to_text()).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry { tag: tag.clone(), file });
    }
    let manifest = Manifest {
        trees: entries,
        skipped: skipped.iter().map(|(tag, reason)| SkippedEntry { tag: tag.clone(), reason: reason.clone() }).collect(),
        config,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_linkage(path: &Path) -> Result<LinkageTree> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LinkageTree::parse(&text, path)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn read_dir_trees(dir: &Path) -> Result<Vec<(String, LinkageTree)>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        return manifest.trees.iter().map(|e| Ok((e.tag.clone(), read_linkage(&dir.join(&e.file))?))).collect();
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == LINKAGE_EXTENSION))
        .collect();
    files.sort();
    files.iter().map(|p| Ok((stem(p), read_linkage(p)?))).collect()
}

/// Reads trees from a single ensemble directory or from individual linkage
/// files. A directory with a manifest is read in manifest order; without one,
/// every `*.linkage` file is read in name order.
pub fn read_trees(paths: &[PathBuf]) -> Result<Vec<(String, LinkageTree)>> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            out.extend(read_dir_trees(path)?);
        } else if path.exists() {
            out.push((stem(path), read_linkage(path)?));
        } else {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no trees found".into()));
    }
    Ok(out)
}
