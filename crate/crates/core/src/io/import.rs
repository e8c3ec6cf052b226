//! Importers for UCCA XML and MRP JSON.
//!
//! Both formats keep words apart from the units that contain them. A unit
//! whose only content is a single word collapses into that terminal; a unit
//! spanning several words keeps its node and gets one `C` edge per word.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{Category, Edge, Language, NodeId, Passage, Terminal, UccaGraph};

use super::LoadMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalFormat {
    UccaXml,
    MrpJson,
}

impl std::str::FromStr for ExternalFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucca-xml" => Ok(ExternalFormat::UccaXml),
            "mrp-json" => Ok(ExternalFormat::MrpJson),
            _ => Err(Error::Config(format!("unknown format `{}` (ucca-xml or mrp-json)", s))),
        }
    }
}

/// Imported passages and the warnings raised on the way.
#[derive(Debug, Clone, Default)]
pub struct Imported {
    pub passages: Vec<Passage>,
    pub warnings: Vec<String>,
}

/// Format-neutral unit graph before terminals are collapsed.
#[derive(Default)]
struct Draft {
    id: String,
    words: Vec<String>,
    root: String,
    /// unit id → word indices (0-based) it contains directly.
    word_children: BTreeMap<String, Vec<usize>>,
    /// (parent, child, category, remote) between units.
    edges: Vec<(String, String, Category, bool)>,
    units: BTreeSet<String>,
    implicit: BTreeSet<String>,
}

impl Draft {
    fn build(mut self, language: &str, warnings: &mut Vec<String>) -> Result<Passage> {
        let bad = |m: String| Error::InvalidGraph(format!("passage {}: {}", self.id, m));
        if !self.units.contains(&self.root) {
            return Err(bad(format!("root `{}` is not a unit", self.root)));
        }
        if !self.implicit.is_empty() {
            warnings.push(format!(
                "passage {}: dropped {} implicit unit(s)",
                self.id,
                self.implicit.len()
            ));
            let implicit = std::mem::take(&mut self.implicit);
            self.edges.retain(|(p, c, _, _)| !implicit.contains(p) && !implicit.contains(c));
            self.units.retain(|u| !implicit.contains(u));
        }
        let has_unit_children: BTreeSet<&String> =
            self.edges.iter().filter(|e| !e.3).map(|e| &e.0).collect();
        let mut collapse: HashMap<&String, NodeId> = HashMap::new();
        for (unit, words) in &self.word_children {
            if words.len() == 1 && !has_unit_children.contains(unit) && *unit != self.root {
                collapse.insert(unit, NodeId::terminal(words[0] + 1));
            }
        }
        let node_of = |u: &String| -> NodeId {
            collapse
                .get(u)
                .cloned()
                .unwrap_or_else(|| NodeId::new(format!("u{}", u)))
        };
        let mut nodes: Vec<NodeId> = (1..=self.words.len()).map(NodeId::terminal).collect();
        nodes.extend(
            self.units
                .iter()
                .filter(|u| !collapse.contains_key(u))
                .map(node_of),
        );
        let mut edges = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (p, c, cat, remote) in &self.edges {
            if !self.units.contains(p) || !self.units.contains(c) {
                return Err(bad(format!("edge {} → {} references an unknown unit", p, c)));
            }
            let e = Edge {
                parent: node_of(p),
                child: node_of(c),
                category: *cat,
                remote: *remote,
            };
            if seen.insert(e.clone()) {
                edges.push(e);
            }
        }
        for (unit, words) in &self.word_children {
            if collapse.contains_key(unit) || !self.units.contains(unit) {
                continue;
            }
            for &w in words {
                edges.push(Edge {
                    parent: node_of(unit),
                    child: NodeId::terminal(w + 1),
                    category: Category::C,
                    remote: false,
                });
            }
        }
        let terminals = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| Terminal::new(i + 1, w.clone()))
            .collect();
        Ok(Passage {
            id: self.id.clone(),
            language: Language::new(language),
            terminals,
            graph: Some(UccaGraph::new(nodes, edges, node_of(&self.root))),
        })
    }
}

fn category(code: &str, context: &str, warnings: &mut Vec<String>) -> Option<Category> {
    match code.parse() {
        Ok(c) => Some(c),
        Err(_) => {
            warnings.push(format!("{}: ignoring edge with non-foundational label `{}`", context, code));
            None
        }
    }
}

fn truthy(v: Option<&str>) -> bool {
    matches!(v.map(str::to_ascii_lowercase).as_deref(), Some("true" | "1" | "yes"))
}

fn schema(path: &Path, msg: impl Into<String>) -> Error {
    Error::format(path, msg)
}

/// Sort key of ids like `0.12`.
fn id_key(id: &str) -> (Vec<u64>, String) {
    (id.split('.').filter_map(|p| p.parse().ok()).collect(), id.to_owned())
}

fn xml_draft(path: &Path, text: &str, warnings: &mut Vec<String>) -> Result<Draft> {
    let doc = roxmltree::Document::parse(text).map_err(|e| schema(path, e.to_string()))?;
    let root = doc.root_element();
    let id = root
        .attribute("passageID")
        .ok_or_else(|| schema(path, "root element lacks passageID"))?
        .to_owned();
    let layer = |lid: &str| {
        root.children()
            .find(|n| n.has_tag_name("layer") && n.attribute("layerID") == Some(lid))
    };
    let l0 = layer("0").ok_or_else(|| schema(path, "missing layer 0"))?;
    let l1 = layer("1").ok_or_else(|| schema(path, "missing layer 1"))?;
    let attrs = |n: roxmltree::Node<'_, '_>, key: &str| -> Option<String> {
        n.children()
            .find(|c| c.has_tag_name("attributes"))
            .and_then(|a| a.attribute(key))
            .map(str::to_owned)
    };

    let mut words: Vec<(String, String)> = l0
        .children()
        .filter(|n| n.has_tag_name("node"))
        .map(|n| {
            let wid = n.attribute("ID").ok_or_else(|| schema(path, "layer-0 node without ID"))?;
            let text = attrs(n, "text").ok_or_else(|| schema(path, format!("word {} has no text", wid)))?;
            Ok((wid.to_owned(), text))
        })
        .collect::<Result<_>>()?;
    words.sort_by_key(|(w, _)| id_key(w));
    let word_index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, (w, _))| (w.as_str(), i)).collect();

    let mut d = Draft {
        id: id.clone(),
        words: words.iter().map(|(_, t)| t.clone()).collect(),
        ..Draft::default()
    };
    let context = format!("{}: passage {}", path.display(), id);
    let mut root_unit = None;
    for n in l1.children().filter(|n| n.has_tag_name("node")) {
        let uid = n.attribute("ID").ok_or_else(|| schema(path, "layer-1 node without ID"))?;
        match n.attribute("type") {
            Some("LKG") => {
                warnings.push(format!("{}: ignoring linkage node {}", context, uid));
                continue;
            }
            _ => {}
        }
        d.units.insert(uid.to_owned());
        if root_unit.is_none() {
            root_unit = Some(uid.to_owned());
        }
        if truthy(attrs(n, "implicit").as_deref()) {
            d.implicit.insert(uid.to_owned());
        }
        for e in n.children().filter(|c| c.has_tag_name("edge")) {
            let to = e.attribute("toID").ok_or_else(|| schema(path, format!("edge of {} without toID", uid)))?;
            let ty = e.attribute("type").unwrap_or("");
            if ty == "Terminal" {
                let w = *word_index
                    .get(to)
                    .ok_or_else(|| schema(path, format!("{} points to unknown word {}", uid, to)))?;
                d.word_children.entry(uid.to_owned()).or_default().push(w);
                continue;
            }
            let remote = truthy(attrs(e, "remote").as_deref()) || truthy(e.attribute("remote"));
            if let Some(cat) = category(ty, &context, warnings) {
                d.edges.push((uid.to_owned(), to.to_owned(), cat, remote));
            }
        }
    }
    d.root = root_unit.ok_or_else(|| schema(path, "layer 1 has no units"))?;
    for ws in d.word_children.values_mut() {
        ws.sort_unstable();
    }
    let known = d.units.clone();
    d.edges.retain(|(_, c, _, _)| {
        let ok = known.contains(c);
        if !ok {
            warnings.push(format!("{}: ignoring edge to non-unit {}", context, c));
        }
        ok
    });
    Ok(d)
}

/// Reads UCCA XML (one `<root>` passage per file).
pub fn import_ucca_xml(path: &Path, language: &str) -> Result<Imported> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Imported::default();
    let draft = xml_draft(path, &text, &mut out.warnings)?;
    out.passages.push(draft.build(language, &mut out.warnings)?);
    Ok(out)
}

#[derive(Deserialize)]
struct MrpAnchor {
    from: usize,
    to: usize,
}

#[derive(Deserialize)]
struct MrpNode {
    id: u64,
    #[serde(default)]
    anchors: Vec<MrpAnchor>,
    #[serde(default)]
    properties: Vec<String>,
    #[serde(default)]
    values: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct MrpEdge {
    source: u64,
    target: u64,
    label: String,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default)]
    values: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct MrpGraph {
    id: String,
    #[serde(default)]
    framework: Option<String>,
    input: String,
    #[serde(default)]
    tops: Vec<u64>,
    #[serde(default)]
    nodes: Vec<MrpNode>,
    #[serde(default)]
    edges: Vec<MrpEdge>,
}

fn flag(keys: &[String], values: &[serde_json::Value], name: &str) -> bool {
    keys.iter().zip(values).any(|(k, v)| {
        k == name && (v.as_bool() == Some(true) || v.as_str().is_some_and(|s| truthy(Some(s))))
    })
}

fn mrp_draft(path: &Path, g: MrpGraph, warnings: &mut Vec<String>) -> Result<Draft> {
    let context = format!("{}: passage {}", path.display(), g.id);
    if let Some(f) = g.framework.as_deref().filter(|f| *f != "ucca") {
        return Err(schema(path, format!("passage {} is framework `{}`, not ucca", g.id, f)));
    }
    let mut anchors: BTreeSet<(usize, usize)> = BTreeSet::new();
    for n in &g.nodes {
        for a in &n.anchors {
            if a.from >= a.to || g.input.get(a.from..a.to).is_none() {
                return Err(schema(path, format!("passage {}: bad anchor {}:{}", g.id, a.from, a.to)));
            }
            anchors.insert((a.from, a.to));
        }
    }
    let tokens: Vec<(usize, usize)> = anchors.into_iter().collect();
    if tokens.windows(2).any(|w| w[0].1 > w[1].0) {
        return Err(schema(path, format!("passage {}: overlapping anchors", g.id)));
    }
    let index: HashMap<(usize, usize), usize> = tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let root = match g.tops.as_slice() {
        [t] => t.to_string(),
        _ => return Err(schema(path, format!("passage {}: expected exactly one top node", g.id))),
    };
    let mut d = Draft {
        id: g.id.clone(),
        words: tokens.iter().map(|&(a, b)| g.input[a..b].to_owned()).collect(),
        root,
        ..Draft::default()
    };
    let has_children: BTreeSet<u64> = g.edges.iter().map(|e| e.source).collect();
    for n in &g.nodes {
        let uid = n.id.to_string();
        d.units.insert(uid.clone());
        if n.anchors.is_empty() && !has_children.contains(&n.id) && uid != d.root
            || flag(&n.properties, &n.values, "implicit")
        {
            d.implicit.insert(uid.clone());
        }
        if !n.anchors.is_empty() {
            let mut ws: Vec<usize> = n.anchors.iter().map(|a| index[&(a.from, a.to)]).collect();
            ws.sort_unstable();
            ws.dedup();
            d.word_children.insert(uid, ws);
        }
    }
    for e in &g.edges {
        let remote = flag(&e.attributes, &e.values, "remote");
        if let Some(cat) = category(&e.label, &context, warnings) {
            d.edges.push((e.source.to_string(), e.target.to_string(), cat, remote));
        }
    }
    Ok(d)
}

/// Reads MRP JSON lines (one UCCA graph per line).
pub fn import_mrp(path: &Path, language: &str) -> Result<Imported> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Imported::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let g: MrpGraph =
            serde_json::from_str(line).map_err(|e| schema(path, format!("line {}: {}", i + 1, e)))?;
        let draft = mrp_draft(path, g, &mut out.warnings)?;
        out.passages.push(draft.build(language, &mut out.warnings)?);
    }
    Ok(out)
}

/// Imports a file or every matching file of a directory, then validates the
/// passages under `mode`.
pub fn import_external(path: &Path, format: ExternalFormat, language: &str, mode: LoadMode) -> Result<Imported> {
    let ext = match format {
        ExternalFormat::UccaXml => "xml",
        ExternalFormat::MrpJson => "mrp",
    };
    let files = if path.is_dir() {
        let mut v: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == ext || x == "json" && ext == "mrp"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Imported::default();
    for f in files {
        let one = match format {
            ExternalFormat::UccaXml => import_ucca_xml(&f, language)?,
            ExternalFormat::MrpJson => import_mrp(&f, language)?,
        };
        out.warnings.extend(one.warnings);
        for p in one.passages {
            let report = p.validate();
            if report.is_valid() {
                out.passages.push(p);
            } else if mode == LoadMode::Lenient {
                out.warnings.push(format!("{}: skipping passage {}: {}", f.display(), p.id, report));
            } else {
                return Err(Error::format(&f, format!("passage {}: {}", p.id, report)));
            }
        }
    }
    for w in &out.warnings {
        log::warn!("{}", w);
    }
    Ok(out)
}
