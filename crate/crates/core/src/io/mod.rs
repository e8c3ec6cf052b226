//! Passage files, corpora, external vectors, checkpoints and importers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conversion::TreeConversion;
use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId, Passage, Terminal, UccaGraph};

mod checkpoint;
mod conllu;
mod import;
mod vectors;

pub use checkpoint::{checkpoint_bytes, config_hash, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta};
pub use conllu::{apply_conllu, parse_conllu, ConlluSentence, ConlluToken};
pub use import::{import_external, import_mrp, import_ucca_xml, ExternalFormat, Imported};
pub use vectors::{load_vectors, save_vectors, Vectors};

/// Version written into every passage file.
pub const PASSAGE_FORMAT: u32 = 1;

/// On-disk form of a passage. The graph fields are present together or not
/// at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageFile {
    pub format: u32,
    pub id: String,
    pub language: String,
    pub tokens: Vec<Terminal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Edge>,
}

impl From<&Passage> for PassageFile {
    fn from(p: &Passage) -> Self {
        let (root, nodes, edges) = match &p.graph {
            Some(g) => (Some(g.root.clone()), g.nodes.clone(), g.edges.clone()),
            None => (None, Vec::new(), Vec::new()),
        };
        PassageFile {
            format: PASSAGE_FORMAT,
            id: p.id.clone(),
            language: p.language.to_string(),
            tokens: p.terminals.clone(),
            root,
            nodes,
            edges,
        }
    }
}

impl PassageFile {
    pub fn into_passage(self) -> std::result::Result<Passage, String> {
        if self.format != PASSAGE_FORMAT {
            return Err(format!("unsupported passage format {}", self.format));
        }
        let graph = match self.root {
            Some(root) => Some(UccaGraph::new(self.nodes, self.edges, root)),
            None if self.nodes.is_empty() && self.edges.is_empty() => None,
            None => return Err("nodes or edges given without a root".into()),
        };
        Ok(Passage {
            id: self.id,
            language: self.language.as_str().into(),
            terminals: self.tokens,
            graph,
        })
    }
}

/// How invalid passages are treated when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Any invalid passage fails the whole load.
    #[default]
    Strict,
    /// Invalid passages are skipped with a warning.
    Lenient,
}

pub fn passage_to_json(p: &Passage) -> String {
    serde_json::to_string_pretty(&PassageFile::from(p)).expect("passage files serialize")
}

pub fn passage_from_json(text: &str) -> std::result::Result<Passage, String> {
    let file: PassageFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    file.into_passage()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a file holding one passage object or an array of them.
pub fn read_passage_file(path: &Path) -> Result<Vec<Passage>> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let files: Vec<PassageFile> = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|f| vec![f])
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    files
        .into_iter()
        .map(|f| f.into_passage().map_err(|m| Error::format(path, m)))
        .collect()
}

pub fn save_passage(path: &Path, p: &Passage) -> Result<()> {
    write(path, &(passage_to_json(p) + "\n"))
}

/// Every `*.json` file below `dir`, in sorted path order.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "json") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Result of loading a corpus.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub passages: Vec<Passage>,
    /// Passages skipped in lenient mode, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Loads a passage file or a directory of them (recursively) and validates
/// every passage. `language` keeps only passages of that language.
pub fn load_corpus_with(path: &Path, mode: LoadMode, language: Option<&str>) -> Result<Loaded> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    let files = if path.is_dir() { json_files(path)? } else { vec![path.to_path_buf()] };
    if files.is_empty() {
        log::warn!("{}: no passage files, corpus is empty", path.display());
    }
    let mut out = Loaded::default();
    let mut diagnostics = Vec::new();
    for file in &files {
        let passages = match read_passage_file(file) {
            Ok(p) => p,
            Err(e @ Error::Format { .. }) if mode == LoadMode::Lenient => {
                log::warn!("skipping {}", e);
                out.skipped.push((file.display().to_string(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        for p in passages {
            if language.is_some_and(|l| p.language.as_str() != l) {
                continue;
            }
            let report = p.validate();
            if report.is_valid() {
                out.passages.push(p);
            } else if mode == LoadMode::Lenient {
                log::warn!("{}: skipping passage {}: {}", file.display(), p.id, report);
                out.skipped.push((p.id.clone(), report.to_string()));
            } else {
                diagnostics.push(format!("passage {}: {}", p.id, report));
            }
        }
    }
    if !diagnostics.is_empty() {
        return Err(Error::format(path, diagnostics.join("\n")));
    }
    log::info!(
        "{}: loaded {} passages, skipped {}",
        path.display(),
        out.passages.len(),
        out.skipped.len()
    );
    Ok(out)
}

pub fn load_corpus(path: &Path, mode: LoadMode) -> Result<Vec<Passage>> {
    Ok(load_corpus_with(path, mode, None)?.passages)
}

/// File name for a passage id, with path separators replaced.
pub fn passage_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c == '/' || c == '\\' || c == '\0' { '_' } else { c })
        .collect();
    format!("{}.json", safe)
}

/// Writes one file per passage into `dir`.
pub fn save_corpus(dir: &Path, passages: &[Passage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = std::collections::BTreeSet::new();
    for p in passages {
        let name = passage_file_name(&p.id);
        if !names.insert(name.clone()) {
            return Err(Error::format(dir, format!("two passages map to file {}", name)));
        }
        save_passage(&dir.join(name), p)?;
    }
    Ok(())
}

/// On-disk form of a converted tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub format: u32,
    pub id: String,
    pub language: String,
    pub tokens: Vec<Terminal>,
    #[serde(flatten)]
    pub conversion: TreeConversion,
}

pub fn save_tree(path: &Path, tree: &TreeFile) -> Result<()> {
    let text = serde_json::to_string_pretty(tree).expect("tree files serialize");
    write(path, &(text + "\n"))
}

pub fn load_trees(path: &Path) -> Result<Vec<TreeFile>> {
    let files = if path.is_dir() { json_files(path)? } else { vec![path.to_path_buf()] };
    let mut out = Vec::new();
    for f in files {
        let t: TreeFile = serde_json::from_str(&read(&f)?).map_err(|e| Error::format(&f, e.to_string()))?;
        if t.format != PASSAGE_FORMAT {
            return Err(Error::format(&f, format!("unsupported tree format {}", t.format)));
        }
        out.push(t);
    }
    Ok(out)
}

/// Named corpus split, recognised from directory names.
pub fn split_of(name: &str) -> Option<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "train" | "training" => Some("train"),
        "dev" | "validation" | "valid" | "val" => Some("validation"),
        "test" => Some("test"),
        _ => None,
    }
}

/// Counts of one split and language.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub passages: usize,
    pub tokens: usize,
    pub primary_edges: usize,
    pub remote_edges: usize,
    pub with_remotes: usize,
}

impl SplitStats {
    fn add(&mut self, p: &Passage) {
        self.passages += 1;
        self.tokens += p.len();
        if let Some(g) = &p.graph {
            let r = g.remote_edges().count();
            self.primary_edges += g.primary_edges().count();
            self.remote_edges += r;
            self.with_remotes += usize::from(r > 0);
        }
    }
}

/// Counts keyed by split (`train`, `validation`, `test` or `all`) and then
/// language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub splits: BTreeMap<String, BTreeMap<String, SplitStats>>,
}

impl CorpusStats {
    pub fn get(&self, split: &str, language: &str) -> SplitStats {
        self.splits
            .get(split)
            .and_then(|m| m.get(language))
            .copied()
            .unwrap_or_default()
    }
}

/// Statistics of a corpus. A passage's split is the nearest enclosing
/// directory with a split name; passages outside any count as `all`.
pub fn corpus_stats(path: &Path, mode: LoadMode) -> Result<CorpusStats> {
    let mut stats = CorpusStats::default();
    let files = if path.is_dir() { json_files(path)? } else { vec![path.to_path_buf()] };
    let mut diagnostics = Vec::new();
    for f in files {
        let split = f
            .strip_prefix(path)
            .unwrap_or(&f)
            .parent()
            .into_iter()
            .flat_map(|d| d.components().rev())
            .find_map(|c| split_of(&c.as_os_str().to_string_lossy()))
            .unwrap_or("all");
        for p in read_passage_file(&f)? {
            let report = p.validate();
            if !report.is_valid() {
                match mode {
                    LoadMode::Strict => diagnostics.push(format!("passage {}: {}", p.id, report)),
                    LoadMode::Lenient => log::warn!("{}: skipping passage {}: {}", f.display(), p.id, report),
                }
                continue;
            }
            stats
                .splits
                .entry(split.to_owned())
                .or_default()
                .entry(p.language.to_string())
                .or_default()
                .add(&p);
        }
    }
    if !diagnostics.is_empty() {
        return Err(Error::format(path, diagnostics.join("\n")));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{figure_one, toy_corpus};

    #[test]
    fn passage_round_trip() {
        for p in toy_corpus().into_iter().chain([figure_one()]) {
            let text = passage_to_json(&p);
            assert!(text.contains("\"format\": 1"));
            let back = passage_from_json(&text).unwrap();
            assert_eq!(back, p);
            assert_eq!(passage_to_json(&back), text);
        }
    }

    #[test]
    fn graphless_passage() {
        let mut p = figure_one();
        p.graph = None;
        let text = passage_to_json(&p);
        assert!(!text.contains("\"root\""));
        assert_eq!(passage_from_json(&text).unwrap(), p);
    }

    #[test]
    fn rejects_other_formats_and_unknown_categories() {
        let text = passage_to_json(&figure_one()).replacen("\"format\": 1", "\"format\": 2", 1);
        assert!(passage_from_json(&text).is_err());
        let text = passage_to_json(&figure_one()).replacen("\"category\": \"A\"", "\"category\": \"Q\"", 1);
        assert!(passage_from_json(&text).unwrap_err().contains("Q"));
    }

    #[test]
    fn strict_rejects_lenient_skips() {
        let dir = tempfile::tempdir().unwrap();
        let mut passages = toy_corpus();
        passages[1].graph.as_mut().unwrap().edges[0].child = NodeId::new("missing");
        save_corpus(dir.path(), &passages).unwrap();
        let err = load_corpus(dir.path(), LoadMode::Strict).unwrap_err();
        assert!(err.to_string().contains(&passages[1].id));
        let loaded = load_corpus_with(dir.path(), LoadMode::Lenient, None).unwrap();
        assert_eq!(loaded.passages.len(), passages.len() - 1);
        assert_eq!(loaded.skipped.len(), 1);
    }

    #[test]
    fn empty_directory_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path(), LoadMode::Strict).unwrap().is_empty());
        assert!(load_corpus(&dir.path().join("missing"), LoadMode::Strict).is_err());
    }

    #[test]
    fn array_files_and_language_filter() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = figure_one();
        a.language = "fr".into();
        let b = figure_one();
        let files: Vec<PassageFile> = [&a, &b].into_iter().map(PassageFile::from).collect();
        let path = dir.path().join("both.json");
        fs::write(&path, serde_json::to_string(&files).unwrap()).unwrap();
        assert_eq!(load_corpus(&path, LoadMode::Strict).unwrap().len(), 2);
        let fr = load_corpus_with(&path, LoadMode::Strict, Some("fr")).unwrap();
        assert_eq!(fr.passages, vec![a]);
    }

    #[test]
    fn stats_by_split() {
        let dir = tempfile::tempdir().unwrap();
        let toy = toy_corpus();
        save_corpus(&dir.path().join("en/train"), &toy[..6]).unwrap();
        save_corpus(&dir.path().join("en/dev"), &toy[6..8]).unwrap();
        save_corpus(&dir.path().join("en/test"), &toy[8..]).unwrap();
        let s = corpus_stats(dir.path(), LoadMode::Strict).unwrap();
        let lang = toy[0].language.to_string();
        assert_eq!(s.get("train", &lang).passages, 6);
        assert_eq!(s.get("validation", &lang).passages, 2);
        assert_eq!(s.get("test", &lang).passages, 2);
        let tokens: usize = toy[..6].iter().map(|p| p.len()).sum();
        assert_eq!(s.get("train", &lang).tokens, tokens);
    }
}
