//! Mutual-edge evaluation: precision, recall and F1 over yield-based edge
//! signatures, for primary edges, remote edges and both pooled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Category, Edge, NodeId, UccaGraph};

/// Yield-based identity of an edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeSignature {
    pub parent_yield: Vec<usize>,
    pub child_yield: Vec<usize>,
    /// `None` in unlabeled mode.
    pub category: Option<Category>,
    pub remote: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Primary,
    Remote,
    All,
}

pub fn edge_signature(g: &UccaGraph, edge: &Edge, mode: Mode) -> Result<EdgeSignature> {
    let yields = g.yields();
    let get = |id: &NodeId| {
        yields
            .get(id)
            .map(|y: &BTreeSet<usize>| y.iter().copied().collect())
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    };
    Ok(EdgeSignature {
        parent_yield: get(&edge.parent)?,
        child_yield: get(&edge.child)?,
        category: (mode == Mode::Labeled).then_some(edge.category),
        remote: edge.remote,
    })
}

/// Matched, predicted and gold edge counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.matched += o.matched;
        self.predicted += o.predicted;
        self.gold += o.gold;
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(mut self, o: Counts) -> Counts {
        self += o;
        self
    }
}

/// Precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl Counts {
    /// Both sides empty counts as a perfect match; an empty side otherwise
    /// scores 0.
    pub fn scores(&self) -> Scores {
        if self.predicted == 0 && self.gold == 0 {
            return Scores {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.matched, self.predicted);
        let recall = ratio(self.matched, self.gold);
        Scores {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// Counts for one graph pair, per population and mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub labeled_primary: Counts,
    pub labeled_remote: Counts,
    pub unlabeled_primary: Counts,
    pub unlabeled_remote: Counts,
}

impl PairCounts {
    pub fn get(&self, population: Population, mode: Mode) -> Counts {
        let (p, r) = match mode {
            Mode::Labeled => (self.labeled_primary, self.labeled_remote),
            Mode::Unlabeled => (self.unlabeled_primary, self.unlabeled_remote),
        };
        match population {
            Population::Primary => p,
            Population::Remote => r,
            Population::All => p + r,
        }
    }
}

impl std::ops::AddAssign for PairCounts {
    fn add_assign(&mut self, o: PairCounts) {
        self.labeled_primary += o.labeled_primary;
        self.labeled_remote += o.labeled_remote;
        self.unlabeled_primary += o.unlabeled_primary;
        self.unlabeled_remote += o.unlabeled_remote;
    }
}

fn multiset(g: &UccaGraph, mode: Mode, remote: bool) -> Result<BTreeMap<EdgeSignature, usize>> {
    let mut out = BTreeMap::new();
    for e in g.edges.iter().filter(|e| e.remote == remote) {
        *out.entry(edge_signature(g, e, mode)?).or_default() += 1;
    }
    Ok(out)
}

fn count(pred: &UccaGraph, gold: &UccaGraph, mode: Mode, remote: bool) -> Result<Counts> {
    let p = multiset(pred, mode, remote)?;
    let g = multiset(gold, mode, remote)?;
    let matched = p
        .iter()
        .map(|(sig, &k)| k.min(g.get(sig).copied().unwrap_or(0)))
        .sum();
    Ok(Counts {
        matched,
        predicted: p.values().sum(),
        gold: g.values().sum(),
    })
}

/// Mutual edges of a predicted and a gold graph over the same tokens.
pub fn score_pair(pred: &UccaGraph, gold: &UccaGraph) -> Result<PairCounts> {
    let (np, ng) = (pred.n_terminals(), gold.n_terminals());
    if np != ng {
        return Err(Error::TokenMismatch { pred: np, gold: ng });
    }
    Ok(PairCounts {
        labeled_primary: count(pred, gold, Mode::Labeled, false)?,
        labeled_remote: count(pred, gold, Mode::Labeled, true)?,
        unlabeled_primary: count(pred, gold, Mode::Unlabeled, false)?,
        unlabeled_remote: count(pred, gold, Mode::Unlabeled, true)?,
    })
}

/// Per-category labeled counts over primary edges.
pub fn category_counts(pred: &UccaGraph, gold: &UccaGraph) -> Result<BTreeMap<Category, Counts>> {
    let p = multiset(pred, Mode::Labeled, false)?;
    let g = multiset(gold, Mode::Labeled, false)?;
    let mut out: BTreeMap<Category, Counts> = BTreeMap::new();
    for (sig, &k) in &p {
        let c = out.entry(sig.category.unwrap()).or_default();
        c.predicted += k;
        c.matched += k.min(g.get(sig).copied().unwrap_or(0));
    }
    for (sig, &k) in &g {
        out.entry(sig.category.unwrap()).or_default().gold += k;
    }
    Ok(out)
}

/// Cumulative length thresholds: a passage of length `n` falls in every
/// bucket `≥ t` with `t ≤ n`.
pub const LENGTH_BUCKETS: [usize; 5] = [10, 20, 30, 40, 50];

/// Scores of one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub labeled: Scores,
    pub unlabeled: Scores,
    pub labeled_counts: Counts,
    pub unlabeled_counts: Counts,
}

impl Cell {
    fn new(c: &PairCounts, population: Population) -> Self {
        let lc = c.get(population, Mode::Labeled);
        let uc = c.get(population, Mode::Unlabeled);
        Cell {
            labeled: lc.scores(),
            unlabeled: uc.scores(),
            labeled_counts: lc,
            unlabeled_counts: uc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub min_length: usize,
    pub passages: usize,
    pub primary: Cell,
    pub remote: Cell,
    pub all: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: Category,
    pub counts: Counts,
    pub f1: f64,
}

/// Corpus-level micro-averaged report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub passages: usize,
    pub primary: Cell,
    pub remote: Cell,
    /// Primary and remote counts pooled; `all.labeled.f1` is the average F1.
    pub all: Cell,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub by_length: Vec<LengthBucket>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub by_category: Vec<CategoryScore>,
}

/// Counts gathered pair by pair; merging is order-independent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    pub passages: usize,
    pub totals: PairCounts,
    pub buckets: BTreeMap<usize, (usize, PairCounts)>,
    pub categories: BTreeMap<Category, Counts>,
}

impl Accumulator {
    pub fn add(&mut self, pred: &UccaGraph, gold: &UccaGraph) -> Result<PairCounts> {
        let c = score_pair(pred, gold)?;
        let n = gold.n_terminals();
        self.passages += 1;
        self.totals += c;
        for t in LENGTH_BUCKETS {
            if n >= t {
                let b = self.buckets.entry(t).or_default();
                b.0 += 1;
                b.1 += c;
            }
        }
        for (cat, k) in category_counts(pred, gold)? {
            *self.categories.entry(cat).or_default() += k;
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.passages += other.passages;
        self.totals += other.totals;
        for (t, (n, c)) in &other.buckets {
            let b = self.buckets.entry(*t).or_default();
            b.0 += n;
            b.1 += *c;
        }
        for (cat, k) in &other.categories {
            *self.categories.entry(*cat).or_default() += *k;
        }
    }

    pub fn report(&self) -> EvalReport {
        let c = &self.totals;
        EvalReport {
            passages: self.passages,
            primary: Cell::new(c, Population::Primary),
            remote: Cell::new(c, Population::Remote),
            all: Cell::new(c, Population::All),
            by_length: LENGTH_BUCKETS
                .iter()
                .map(|&t| {
                    let (n, bc) = self.buckets.get(&t).copied().unwrap_or_default();
                    LengthBucket {
                        min_length: t,
                        passages: n,
                        primary: Cell::new(&bc, Population::Primary),
                        remote: Cell::new(&bc, Population::Remote),
                        all: Cell::new(&bc, Population::All),
                    }
                })
                .collect(),
            by_category: self
                .categories
                .iter()
                .map(|(&category, &counts)| CategoryScore {
                    category,
                    counts,
                    f1: counts.scores().f1,
                })
                .collect(),
        }
    }
}

/// Scores aligned (predicted, gold) graph pairs.
pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (&'a UccaGraph, &'a UccaGraph)>) -> Result<EvalReport> {
    let mut acc = Accumulator::default();
    for (p, g) in pairs {
        acc.add(p, g)?;
    }
    Ok(acc.report())
}

impl EvalReport {
    /// Drops the optional breakdowns not asked for.
    pub fn with_breakdowns(mut self, length: bool, category: bool) -> Self {
        if !length {
            self.by_length.clear();
        }
        if !category {
            self.by_category.clear();
        }
        self
    }
}

fn write_row(f: &mut fmt::Formatter, name: &str, c: &Cell) -> fmt::Result {
    writeln!(
        f,
        "{:<10} {:>7.4} {:>7.4} {:>7.4}   {:>7.4} {:>7.4} {:>7.4}   {:>6}/{:>6}/{:>6}",
        name,
        c.labeled.precision,
        c.labeled.recall,
        c.labeled.f1,
        c.unlabeled.precision,
        c.unlabeled.recall,
        c.unlabeled.f1,
        c.labeled_counts.matched,
        c.labeled_counts.predicted,
        c.labeled_counts.gold,
    )
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        writeln!(f, "passages: {}", self.passages)?;
        writeln!(
            f,
            "{:<10} {:>7} {:>7} {:>7}   {:>7} {:>7} {:>7}   {:>20}",
            "", "LP", "LR", "LF", "UP", "UR", "UF", "matched/pred/gold"
        )?;
        write_row(f, "primary", &self.primary)?;
        write_row(f, "remote", &self.remote)?;
        write_row(f, "all", &self.all)?;
        if !self.by_length.is_empty() {
            writeln!(f, "\nby length (labeled F1)")?;
            for b in &self.by_length {
                if b.passages == 0 {
                    writeln!(f, ">={:<3} passages {:>5}", b.min_length, 0)?;
                    continue;
                }
                writeln!(
                    f,
                    ">={:<3} passages {:>5}  primary {:.4}  remote {:.4}  all {:.4}",
                    b.min_length, b.passages, b.primary.labeled.f1, b.remote.labeled.f1, b.all.labeled.f1
                )?;
            }
        }
        if !self.by_category.is_empty() {
            writeln!(f, "\nprimary edges by category (labeled)")?;
            for c in &self.by_category {
                writeln!(
                    f,
                    "{:<3} F1 {:.4}  {:>6}/{:>6}/{:>6}",
                    c.category.code(),
                    c.f1,
                    c.counts.matched,
                    c.counts.predicted,
                    c.counts.gold
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{figure_one, parse_bracketed};

    #[test]
    fn terminal_edge_signature() {
        let g = parse_bracketed("(A 1)", 1).unwrap();
        let sig = edge_signature(&g, &g.edges[0], Mode::Labeled).unwrap();
        assert_eq!(sig.parent_yield, vec![1]);
        assert_eq!(sig.child_yield, vec![1]);
        assert_eq!(sig.category, Some(Category::A));
        assert!(!sig.remote);
    }

    #[test]
    fn figure_one_remote_signature() {
        let p = figure_one();
        let g = p.graph.unwrap();
        let e = g.remote_edges().next().unwrap().clone();
        let sig = edge_signature(&g, &e, Mode::Unlabeled).unwrap();
        assert_eq!(sig.child_yield, vec![1]);
        assert_eq!(sig.parent_yield, vec![10, 11]);
        assert!(sig.remote);
        assert_eq!(sig.category, None);
    }

    #[test]
    fn missing_remote_prediction_scores_zero() {
        let gold = figure_one().graph.unwrap();
        let mut pred = gold.clone();
        pred.edges.retain(|e| !e.remote);
        let c = score_pair(&pred, &gold).unwrap();
        let s = c.get(Population::Remote, Mode::Labeled).scores();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let both_empty = score_pair(&pred, &pred).unwrap();
        assert_eq!(both_empty.get(Population::Remote, Mode::Labeled).scores().f1, 1.0);
    }

    #[test]
    fn token_mismatch_is_an_error() {
        let a = parse_bracketed("(A 1)", 1).unwrap();
        let b = parse_bracketed("(A 1) (P 2)", 2).unwrap();
        assert!(matches!(score_pair(&a, &b), Err(Error::TokenMismatch { .. })));
    }

    #[test]
    fn length_buckets_are_cumulative() {
        let short = parse_bracketed("(A 1)", 1).unwrap();
        let long_text: String = (1..=25).map(|i| format!("(A {}) ", i)).collect();
        let long = parse_bracketed(&long_text, 25).unwrap();
        let r = evaluate([(&short, &short), (&long, &long)]).unwrap();
        let counts: Vec<usize> = r.by_length.iter().map(|b| b.passages).collect();
        assert_eq!(counts, vec![1, 1, 0, 0, 0]);
        assert_eq!(r.by_category.len(), 1);
        assert!(r.to_string().contains("primary"));
    }

    #[test]
    fn multi_category_edges_count_separately() {
        let gold = parse_bracketed("(A|D 1) (P 2)", 2).unwrap();
        let pred = parse_bracketed("(A 1) (P 2)", 2).unwrap();
        let c = score_pair(&pred, &gold).unwrap();
        assert_eq!(c.labeled_primary, Counts { matched: 2, predicted: 2, gold: 3 });
        assert_eq!(c.unlabeled_primary.matched, 2);
    }
}
