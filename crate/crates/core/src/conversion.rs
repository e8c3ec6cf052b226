//! Reversible conversion between UCCA graphs and constituency trees.
//!
//! Remote edges are stripped into [`RemoteRecord`]s. Discontinuous units are
//! repaired bottom-up: a unit whose children do not form one contiguous run
//! keeps its leftmost run and hands the other children to its parent, which
//! may hand them further up until they fit. A lifted node carries a tag
//! naming the categories of the unit it came from plus its rank in a fixed
//! candidate search order, so the tree alone determines the inverse.

use std::collections::{BTreeSet, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{post_order, Category, Edge, NodeId, PrimaryTree, UccaGraph};
use crate::label::{Label, LabelPart, LiftTag};
use crate::tree::{ConstituencyTree, LabeledSpan, Span};

/// How reconstruction treats inputs that match nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    Strict,
    #[default]
    Lenient,
}

/// A remote edge keyed by the yields of its endpoints. The ranks pick a node
/// within a unary chain of equal yields (0 = topmost).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RemoteRecord {
    pub parent_yield: BTreeSet<usize>,
    pub child_yield: BTreeSet<usize>,
    pub category: Category,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub parent_rank: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub child_rank: usize,
}

fn is_zero(x: &usize) -> bool {
    *x == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscontinuityRecord {
    pub moved_child_yield: BTreeSet<usize>,
    pub original_parent_yield: BTreeSet<usize>,
    pub augmentation_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConversion {
    pub tree: ConstituencyTree,
    pub remotes: Vec<RemoteRecord>,
    pub discontinuities: Vec<DiscontinuityRecord>,
}

/// Working tree shared by both directions.
#[derive(Debug, Clone)]
struct Forest {
    nodes: Vec<FNode>,
    root: usize,
}

#[derive(Debug, Clone, Default)]
struct FNode {
    categories: Vec<Category>,
    terminal: Option<usize>,
    parent: Option<usize>,
    children: Vec<usize>,
    lift: Option<LiftTag>,
    /// Span of the node in the converted tree, when it came from one.
    tree_span: Option<Span>,
}

impl Forest {
    fn add(&mut self, node: FNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn attach(&mut self, parent: usize, child: usize) {
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
    }

    fn detach(&mut self, child: usize) {
        if let Some(p) = self.nodes[child].parent.take() {
            self.nodes[p].children.retain(|&c| c != child);
        }
    }

    fn children_lists(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.children.clone()).collect()
    }

    /// Smallest and largest covered position of every node.
    fn ranges(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(usize::MAX, 0); self.nodes.len()];
        for n in post_order(self.root, &self.children_lists()) {
            let node = &self.nodes[n];
            out[n] = match node.terminal {
                Some(p) => (p, p),
                None => node.children.iter().fold((usize::MAX, 0), |(lo, hi), &c| {
                    (lo.min(out[c].0), hi.max(out[c].1))
                }),
            };
        }
        out
    }

    /// Pre-order with children visited left to right.
    fn preorder(&self) -> Vec<usize> {
        let ranges = self.ranges();
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            let mut cs = self.nodes[n].children.clone();
            cs.sort_by_key(|&c| (ranges[c].0, std::cmp::Reverse(ranges[c].1)));
            stack.extend(cs.into_iter().rev());
        }
        out
    }

    fn depth(&self, mut n: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[n].parent {
            d += 1;
            n = p;
        }
        d
    }

    fn distance(&self, a: usize, b: usize) -> usize {
        let (mut x, mut y) = (a, b);
        let (mut dx, mut dy) = (self.depth(x), self.depth(y));
        let mut dist = 0;
        while dx > dy {
            x = self.nodes[x].parent.unwrap();
            dx -= 1;
            dist += 1;
        }
        while dy > dx {
            y = self.nodes[y].parent.unwrap();
            dy -= 1;
            dist += 1;
        }
        while x != y {
            x = self.nodes[x].parent.unwrap();
            y = self.nodes[y].parent.unwrap();
            dist += 2;
        }
        dist
    }

    fn in_subtree(&self, root: usize, mut n: usize) -> bool {
        loop {
            if n == root {
                return true;
            }
            match self.nodes[n].parent {
                Some(p) => n = p,
                None => return false,
            }
        }
    }

    /// Units a lifted node may be returned to, nearest first.
    fn lift_candidates(&self, lifted: usize, categories: &[Category], order: &[usize]) -> Vec<usize> {
        let at = self.nodes[lifted].parent.expect("lifted node has a parent");
        let mut found: Vec<(usize, usize, usize)> = (0..self.nodes.len())
            .filter(|&n| {
                n != at
                    && self.nodes[n].terminal.is_none()
                    && self.nodes[n].categories == categories
                    && !self.in_subtree(lifted, n)
            })
            .map(|n| (self.distance(at, n), order[n], n))
            .collect();
        found.sort_unstable();
        found.into_iter().map(|(_, _, n)| n).collect()
    }

    /// Undoes every lift in pre-order. `choose` maps a lifted node, its
    /// candidate list and whether it is its current parent's only child to
    /// the chosen unit (or `None` to leave it in place).
    fn restore_lifts(
        &mut self,
        mut choose: impl FnMut(usize, &[usize], bool) -> Result<Option<usize>>,
    ) -> Result<Vec<(usize, usize)>> {
        let pre = self.preorder();
        let mut order = vec![usize::MAX; self.nodes.len()];
        for (i, &n) in pre.iter().enumerate() {
            order[n] = i;
        }
        let mut moves = Vec::new();
        for &y in &pre {
            let cats = match &self.nodes[y].lift {
                Some(tag) => tag.parent_categories.clone(),
                None => continue,
            };
            let candidates = self.lift_candidates(y, &cats, &order);
            let at = self.nodes[y].parent.expect("lifted node has a parent");
            let sole = self.nodes[at].children.len() == 1;
            if let Some(x) = choose(y, &candidates, sole)? {
                self.detach(y);
                self.attach(x, y);
                moves.push((y, x));
            }
        }
        Ok(moves)
    }
}

/// Converts a valid graph into a projective tree plus the records needed to
/// invert the conversion.
pub fn graph_to_tree(g: &UccaGraph) -> Result<TreeConversion> {
    let n = g.n_terminals();
    let pt = PrimaryTree::build(g, n)?;

    let mut forest = Forest {
        nodes: (0..pt.ids.len())
            .map(|i| FNode {
                categories: pt.categories[i].clone(),
                terminal: pt.ids[i].terminal_position(),
                parent: pt.parent[i],
                children: pt.children[i].clone(),
                ..FNode::default()
            })
            .collect(),
        root: pt.root,
    };

    // Bottom-up repair of discontinuous units.
    let mut origin: Vec<Option<usize>> = vec![None; forest.nodes.len()];
    let mut range: Vec<(usize, usize)> = vec![(0, 0); forest.nodes.len()];
    for x in post_order(pt.root, &pt.children) {
        if let Some(p) = forest.nodes[x].terminal {
            range[x] = (p, p);
            continue;
        }
        let mut kids = forest.nodes[x].children.clone();
        kids.sort_by_key(|&c| range[c].0);
        let mut keep = 1;
        while keep < kids.len() && range[kids[keep]].0 == range[kids[keep - 1]].1 + 1 {
            keep += 1;
        }
        range[x] = (range[kids[0]].0, range[kids[keep - 1]].1);
        if keep == kids.len() {
            continue;
        }
        let up = forest.nodes[x]
            .parent
            .ok_or_else(|| Error::Conversion("root yield is not contiguous".into()))?;
        for &c in &kids[keep..] {
            forest.detach(c);
            forest.attach(up, c);
            origin[c].get_or_insert(x);
        }
    }

    // Rank every lift by simulating the inverse on a copy.
    let mut sim = forest.clone();
    for (y, x) in origin.iter().enumerate() {
        if let Some(x) = x {
            sim.nodes[y].lift = Some(LiftTag {
                parent_categories: forest.nodes[*x].categories.clone(),
                rank: 0,
            });
        }
    }
    let mut ranks = HashMap::new();
    sim.restore_lifts(|y, candidates, _| {
        let x = origin[y].unwrap();
        let rank = candidates
            .iter()
            .position(|&c| c == x)
            .ok_or_else(|| Error::Conversion("original unit unreachable from lifted node".into()))?;
        ranks.insert(y, rank);
        Ok(Some(x))
    })?;
    for (y, rank) in ranks {
        forest.nodes[y].lift = Some(LiftTag {
            parent_categories: forest.nodes[origin[y].unwrap()].categories.clone(),
            rank,
        });
    }

    // Collapse same-span chains into labels.
    let spans: Vec<Span> = range.iter().map(|&(lo, hi)| Span::new(lo - 1, hi)).collect();
    let mut labeled = Vec::new();
    for top in 0..forest.nodes.len() {
        if let Some(p) = forest.nodes[top].parent {
            if spans[p] == spans[top] {
                continue;
            }
        }
        let mut parts = Vec::new();
        let mut cur = top;
        loop {
            parts.push(part_of(&forest, cur));
            match forest.nodes[cur].children.as_slice() {
                [only] if spans[*only] == spans[cur] => cur = *only,
                _ => break,
            }
        }
        labeled.push(LabeledSpan {
            span: spans[top],
            label: Label(parts),
        });
    }
    let tree = ConstituencyTree::new(n, labeled)?;

    let yield_set = |i: usize| pt.yields[i].iter().copied().collect::<BTreeSet<_>>();
    let remotes = g
        .remote_edges()
        .map(|e| {
            let (p, c) = (pt.index[&e.parent], pt.index[&e.child]);
            RemoteRecord {
                parent_yield: yield_set(p),
                child_yield: yield_set(c),
                category: e.category,
                parent_rank: pt.chain_rank(p),
                child_rank: pt.chain_rank(c),
            }
        })
        .collect();
    let mut discontinuities: Vec<DiscontinuityRecord> = origin
        .iter()
        .enumerate()
        .filter_map(|(y, x)| {
            x.map(|x| DiscontinuityRecord {
                moved_child_yield: yield_set(y),
                original_parent_yield: yield_set(x),
                augmentation_tag: part_of(&forest, y).to_string(),
            })
        })
        .collect();
    discontinuities.sort_by(|a, b| a.moved_child_yield.cmp(&b.moved_child_yield));

    Ok(TreeConversion {
        tree,
        remotes,
        discontinuities,
    })
}

fn part_of(forest: &Forest, n: usize) -> LabelPart {
    if n == forest.root {
        LabelPart::Root
    } else {
        LabelPart::Unit {
            categories: forest.nodes[n].categories.clone(),
            lift: forest.nodes[n].lift.clone(),
        }
    }
}

/// The primary graph read off a tree, with the tree span of every node.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub graph: UccaGraph,
    /// Tree span each graph node was read from (absent for fallback terminals).
    pub node_spans: HashMap<NodeId, Span>,
    /// Graph nodes of each tree span, top of the chain first.
    pub span_nodes: HashMap<Span, Vec<NodeId>>,
    /// Nodes returned to their original unit, with the tag text that moved them.
    pub restored: Vec<(NodeId, String)>,
    pub warnings: Vec<String>,
}

/// Reads the primary graph off a tree, undoing lifts. Lenient mode repairs
/// what it can (uncovered tokens become `U` terminals, misplaced root
/// markers and unresolvable tags are dropped); strict mode fails instead.
pub fn reconstruct(t: &ConstituencyTree, strictness: Strictness) -> Result<Reconstruction> {
    let strict = strictness == Strictness::Strict;
    let mut warnings = Vec::new();
    let mut forest = Forest {
        nodes: Vec::new(),
        root: 0,
    };
    let mut bottom_of: Vec<usize> = Vec::with_capacity(t.spans().len());
    let mut terminal_of: HashMap<usize, usize> = HashMap::new();
    let parents = t.parents();

    for (i, ls) in t.spans().iter().enumerate() {
        let mut parts = ls.label.parts().iter().peekable();
        let mut above = match parents[i] {
            None => {
                // Whatever the decoder put first on the root span denotes the root.
                parts.next();
                forest.root = forest.add(FNode {
                    tree_span: Some(ls.span),
                    ..FNode::default()
                });
                Some(forest.root)
            }
            Some(p) => Some(bottom_of[p]),
        };
        while let Some(part) = parts.next() {
            let LabelPart::Unit { categories, lift } = part else {
                if strict {
                    return Err(Error::Conversion(format!("root marker inside span {}", ls.span)));
                }
                warnings.push(format!("dropped root marker inside span {}", ls.span));
                continue;
            };
            let is_terminal = ls.span.width() == 1 && parts.peek().is_none();
            let node = forest.add(FNode {
                categories: categories.clone(),
                terminal: is_terminal.then_some(ls.span.end),
                lift: lift.clone(),
                tree_span: Some(ls.span),
                ..FNode::default()
            });
            if is_terminal {
                terminal_of.insert(ls.span.end, node);
            }
            forest.attach(above.unwrap(), node);
            above = Some(node);
        }
        bottom_of.push(above.unwrap());
    }

    // Tokens without a width-one span attach to the deepest covering span.
    for pos in 1..=t.n() {
        if terminal_of.contains_key(&pos) {
            continue;
        }
        if strict {
            return Err(Error::Conversion(format!("token {} has no terminal span", pos)));
        }
        let deepest = t
            .spans()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.span.start < pos && pos <= s.span.end)
            .map(|(i, _)| i)
            .next_back()
            .expect("root covers every token");
        let node = forest.add(FNode {
            categories: vec![Category::U],
            terminal: Some(pos),
            ..FNode::default()
        });
        forest.attach(bottom_of[deepest], node);
        terminal_of.insert(pos, node);
        warnings.push(format!("token {} attached as U", pos));
    }

    let ranks: Vec<Option<usize>> = forest
        .nodes
        .iter()
        .map(|n| n.lift.as_ref().map(|l| l.rank))
        .collect();
    let tree_spans: Vec<Option<Span>> = forest.nodes.iter().map(|n| n.tree_span).collect();
    let mut unresolved = Vec::new();
    let moves = forest.restore_lifts(|y, candidates, sole| {
        let rank = ranks[y].expect("only tagged nodes are restored");
        // Moving a sole child would leave an empty unit behind.
        match candidates.get(rank).filter(|_| !sole) {
            Some(&x) => Ok(Some(x)),
            None if strict => Err(Error::Conversion(format!(
                "lift tag on span {} matches no unit",
                tree_spans[y].map(|s| s.to_string()).unwrap_or_default()
            ))),
            None => {
                unresolved.push(y);
                Ok(None)
            }
        }
    })?;
    for y in unresolved {
        warnings.push(format!(
            "dropped unresolvable lift tag {}",
            part_of(&forest, y)
        ));
        forest.nodes[y].lift = None;
    }

    // Ids: terminals keep their reserved form, units are numbered in pre-order.
    let pre = forest.preorder();
    let mut ids = vec![NodeId::new(""); forest.nodes.len()];
    let mut units = 0;
    for &n in &pre {
        ids[n] = match forest.nodes[n].terminal {
            Some(p) => NodeId::terminal(p),
            None => {
                units += 1;
                NodeId::new(format!("u{}", units - 1))
            }
        };
    }
    let mut edges = Vec::new();
    for &n in &pre {
        if let Some(p) = forest.nodes[n].parent {
            for &c in &forest.nodes[n].categories {
                edges.push(Edge {
                    parent: ids[p].clone(),
                    child: ids[n].clone(),
                    category: c,
                    remote: false,
                });
            }
        }
    }
    let graph = UccaGraph::new(
        pre.iter().map(|&n| ids[n].clone()).collect(),
        edges,
        ids[forest.root].clone(),
    );

    let mut node_spans = HashMap::new();
    let mut span_nodes: HashMap<Span, Vec<NodeId>> = HashMap::new();
    // Creation order lists chain members top-down.
    for (n, node) in forest.nodes.iter().enumerate() {
        if let Some(s) = node.tree_span {
            node_spans.insert(ids[n].clone(), s);
            span_nodes.entry(s).or_default().push(ids[n].clone());
        }
    }
    let restored = moves
        .into_iter()
        .map(|(y, _)| (ids[y].clone(), part_of(&forest, y).to_string()))
        .collect();

    Ok(Reconstruction {
        graph,
        node_spans,
        span_nodes,
        restored,
        warnings,
    })
}

/// Inverse of [`graph_to_tree`]: rebuilds the primary graph from the tree,
/// checks the discontinuity records against the restored lifts and adds the
/// remote edges by matching yields.
pub fn tree_to_graph(
    t: &ConstituencyTree,
    remotes: &[RemoteRecord],
    discontinuities: &[DiscontinuityRecord],
    strictness: Strictness,
) -> Result<Restored> {
    let strict = strictness == Strictness::Strict;
    let mut rec = reconstruct(t, strictness)?;
    let mut dropped = std::mem::take(&mut rec.warnings);
    let pt = PrimaryTree::build(&rec.graph, t.n())?;

    let as_vec = |s: &BTreeSet<usize>| s.iter().copied().collect::<Vec<_>>();

    let restored: HashMap<usize, &str> = rec
        .restored
        .iter()
        .map(|(id, tag)| (pt.index[id], tag.as_str()))
        .collect();
    for d in discontinuities {
        let moved = as_vec(&d.moved_child_yield);
        let matched = (0..pt.ids.len())
            .filter(|&n| pt.yields[n] == moved)
            .any(|y| {
                restored.get(&y) == Some(&d.augmentation_tag.as_str())
                    && pt.parent[y].is_some_and(|x| pt.yields[x] == as_vec(&d.original_parent_yield))
            });
        if !matched {
            let msg = format!(
                "discontinuity record {} for yield {:?} matches no restored node",
                d.augmentation_tag, d.moved_child_yield
            );
            if strict {
                return Err(Error::Conversion(msg));
            }
            warn!("{}", msg);
            dropped.push(msg);
        }
    }

    let mut graph = rec.graph;
    let mut out_edges: Vec<Vec<usize>> = pt.children.clone();
    let mut seen = HashSet::new();
    for r in remotes {
        let parent = pt.find(&as_vec(&r.parent_yield), r.parent_rank);
        let child = pt.find(&as_vec(&r.child_yield), r.child_rank);
        let problem = match (parent, child) {
            (None, _) | (_, None) => Some("matches no node"),
            (Some(p), Some(c)) => {
                if c == pt.root {
                    Some("targets the root")
                } else if pt.ids[p].terminal_position().is_some() {
                    Some("starts at a terminal")
                } else if pt.parent[c] == Some(p) {
                    Some("duplicates a primary edge")
                } else if reaches(&out_edges, c, p) {
                    Some("would create a cycle")
                } else if !seen.insert((p, c, r.category)) {
                    Some("is a duplicate")
                } else {
                    None
                }
            }
        };
        match problem {
            None => {
                let (p, c) = (parent.unwrap(), child.unwrap());
                out_edges[p].push(c);
                graph.edges.push(Edge {
                    parent: pt.ids[p].clone(),
                    child: pt.ids[c].clone(),
                    category: r.category,
                    remote: true,
                });
            }
            Some(why) => {
                let msg = format!(
                    "remote {} edge {:?} -> {:?} {}",
                    r.category, r.parent_yield, r.child_yield, why
                );
                if strict {
                    return Err(Error::Conversion(msg));
                }
                warn!("{}", msg);
                dropped.push(msg);
            }
        }
    }
    Ok(Restored { graph, dropped })
}

pub(crate) fn reaches(out_edges: &[Vec<usize>], from: usize, to: usize) -> bool {
    let mut stack = vec![from];
    let mut seen = vec![false; out_edges.len()];
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if std::mem::replace(&mut seen[n], true) {
            continue;
        }
        stack.extend(out_edges[n].iter().copied());
    }
    false
}

#[derive(Debug, Clone)]
pub struct Restored {
    pub graph: UccaGraph,
    /// Lenient-mode repairs and dropped records, one message each.
    pub dropped: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{figure_one, has_discontinuity, parse_bracketed, random_graph, GraphShape};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn roundtrip(g: &UccaGraph) -> UccaGraph {
        let conv = graph_to_tree(g).unwrap();
        tree_to_graph(&conv.tree, &conv.remotes, &conv.discontinuities, Strictness::Strict)
            .unwrap()
            .graph
    }

    fn tree(n: usize, spans: &[(usize, usize, &str)]) -> ConstituencyTree {
        ConstituencyTree::new(
            n,
            spans
                .iter()
                .map(|&(i, j, l)| LabeledSpan {
                    span: Span::new(i, j),
                    label: l.parse().unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn projective_graph_reads_off_directly() {
        let g = parse_bracketed("(H (A 1) (P 2))", 2).unwrap();
        let conv = graph_to_tree(&g).unwrap();
        assert_eq!(conv.tree, tree(2, &[(0, 2, "ROOT+H"), (0, 1, "A"), (1, 2, "P")]));
        assert!(conv.remotes.is_empty());
        assert!(conv.discontinuities.is_empty());
        assert_eq!(roundtrip(&g).canonical_form(), g.canonical_form());
    }

    #[test]
    fn root_span_label_denotes_the_root() {
        let t = tree(2, &[(0, 1, "A"), (1, 2, "P"), (0, 2, "H")]);
        let g = tree_to_graph(&t, &[], &[], Strictness::Strict).unwrap().graph;
        let expected = parse_bracketed("(A 1) (P 2)", 2).unwrap();
        assert_eq!(g.canonical_form(), expected.canonical_form());
    }

    #[test]
    fn figure_one_strips_one_remote() {
        let p = figure_one();
        let g = p.graph.as_ref().unwrap();
        let conv = graph_to_tree(g).unwrap();
        assert_eq!(conv.remotes.len(), 1);
        let r = &conv.remotes[0];
        assert_eq!(r.parent_yield, BTreeSet::from([10, 11]));
        assert_eq!(r.child_yield, BTreeSet::from([1]));
        assert_eq!(r.category, Category::A);
        assert!(conv.discontinuities.is_empty());
        assert_eq!(roundtrip(g).canonical_form(), g.canonical_form());
    }

    #[test]
    fn discontinuous_unit_is_lifted_and_restored() {
        let g = parse_bracketed("(H (P (C 1) (F 3)) (A 2) (D 4))", 4).unwrap();
        assert!(has_discontinuity(&g));
        let conv = graph_to_tree(&g).unwrap();
        assert_eq!(conv.discontinuities.len(), 1);
        let d = &conv.discontinuities[0];
        assert_eq!(d.moved_child_yield, BTreeSet::from([3]));
        assert_eq!(d.original_parent_yield, BTreeSet::from([1, 3]));
        assert_eq!(d.augmentation_tag, "F↑P");
        assert_eq!(conv.tree.label_of(Span::new(2, 3)).unwrap().to_string(), "F↑P");
        assert_eq!(roundtrip(&g).canonical_form(), g.canonical_form());
    }

    #[test]
    fn unmatched_remote_strict_fails_lenient_drops() {
        let g = parse_bracketed("(H (A 1) (P 2))", 2).unwrap();
        let conv = graph_to_tree(&g).unwrap();
        let bogus = RemoteRecord {
            parent_yield: BTreeSet::from([1, 2, 3]),
            child_yield: BTreeSet::from([1]),
            category: Category::A,
            parent_rank: 0,
            child_rank: 0,
        };
        let remotes = vec![bogus];
        assert!(tree_to_graph(&conv.tree, &remotes, &[], Strictness::Strict).is_err());
        let r = tree_to_graph(&conv.tree, &remotes, &[], Strictness::Lenient).unwrap();
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(r.graph.canonical_form(), g.canonical_form());
    }

    #[test]
    fn lenient_mode_repairs_uncovered_tokens_and_tags() {
        let t = tree(3, &[(0, 3, "ROOT"), (0, 1, "A"), (1, 2, "P↑D#3")]);
        assert!(reconstruct(&t, Strictness::Strict).is_err());
        let rec = reconstruct(&t, Strictness::Lenient).unwrap();
        assert_eq!(rec.warnings.len(), 2);
        let report = crate::graph::validate_graph(&rec.graph, 3);
        assert!(report.is_valid(), "{}", report);
    }

    #[test]
    fn unary_chain_remotes_keep_their_rank() {
        // Two units share the yield {1,2}; the remote targets the inner one.
        let g = parse_bracketed("(H (A#outer (C#inner (E 1) (C 2))) (P 3) (D (C 4) (A* inner)))", 4).unwrap();
        let conv = graph_to_tree(&g).unwrap();
        assert_eq!(conv.remotes[0].child_rank, 1);
        assert_eq!(roundtrip(&g).canonical_form(), g.canonical_form());
    }

    #[test]
    fn random_roundtrip_and_span_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let g = random_graph(&mut rng, GraphShape::default());
            let conv = graph_to_tree(&g).unwrap();
            assert!(conv.tree.spans().len() <= g.nodes.len());
            assert_eq!(roundtrip(&g).canonical_form(), g.canonical_form(), "{:?}", g);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn converted_labels_parse_back(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, GraphShape { discontinuity_rate: 1.0, ..GraphShape::default() });
            let conv = graph_to_tree(&g).unwrap();
            for s in conv.tree.spans() {
                let text = s.label.to_string();
                prop_assert_eq!(text.parse::<Label>().unwrap(), s.label.clone());
            }
            prop_assert_eq!(roundtrip(&g).canonical_form(), g.canonical_form());
        }
    }
}
