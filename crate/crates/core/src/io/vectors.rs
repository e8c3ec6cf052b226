//! External per-token vectors: a header line with the dimension, then one
//! `passage-id position v1 ... vd` row per token, whitespace separated.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Passage;

#[derive(Debug, Clone, PartialEq)]
pub struct Vectors {
    pub dim: usize,
    rows: HashMap<String, BTreeMap<usize, Vec<f64>>>,
}

impl Vectors {
    pub fn new(dim: usize) -> Self {
        Vectors {
            dim,
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, passage: &str, position: usize, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector for {}:{} has {} values, expected {}",
                passage,
                position,
                v.len(),
                self.dim
            )));
        }
        self.rows.entry(passage.to_owned()).or_default().insert(position, v);
        Ok(())
    }

    pub fn contains(&self, passage: &str) -> bool {
        self.rows.contains_key(passage)
    }

    /// The `n × dim` matrix of a passage; every token needs a row.
    pub fn for_passage(&self, p: &Passage) -> Result<Array2<f64>> {
        let rows = self
            .rows
            .get(&p.id)
            .ok_or_else(|| Error::Dimension(format!("no external vectors for passage {}", p.id)))?;
        let mut out = Array2::zeros((p.len(), self.dim));
        for t in &p.terminals {
            let v = rows.get(&t.position).ok_or_else(|| {
                Error::Dimension(format!("no external vector for token {} of passage {}", t.position, p.id))
            })?;
            for (k, &x) in v.iter().enumerate() {
                out[(t.position - 1, k)] = x;
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.dim);
        let mut ids: Vec<&String> = self.rows.keys().collect();
        ids.sort();
        for id in ids {
            for (pos, v) in &self.rows[id] {
                write!(out, "{} {}", id, pos).unwrap();
                for x in v {
                    write!(out, " {:?}", x).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or("missing dimension header")?;
        let dim: usize = header
            .trim()
            .parse()
            .map_err(|_| format!("header `{}` is not a dimension", header.trim()))?;
        let mut out = Vectors::new(dim);
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let id = fields.next().unwrap();
            let pos: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .filter(|&p| p > 0)
                .ok_or_else(|| format!("line {}: missing or bad token position", i + 1))?;
            let v = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format!("line {}: {}", i + 1, e))?;
            out.insert(id, pos, v).map_err(|e| format!("line {}: {}", i + 1, e))?;
        }
        Ok(out)
    }
}

pub fn load_vectors(path: &Path) -> Result<Vectors> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vectors::from_text(&text).map_err(|m| Error::format(path, m))
}

pub fn save_vectors(path: &Path, v: &Vectors) -> Result<()> {
    std::fs::write(path, v.to_text()).map_err(|e| Error::io(path, e))
}
