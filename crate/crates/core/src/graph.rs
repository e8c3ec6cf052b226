//! UCCA passages, foundational-layer graphs and structural validation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Foundational-layer edge category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Process
    P,
    /// State
    S,
    /// Participant
    A,
    /// Adverbial
    D,
    /// Center
    C,
    /// Elaborator
    E,
    /// Connector
    N,
    /// Relator
    R,
    /// Function
    F,
    /// Linker
    L,
    /// Parallel Scene
    H,
    /// Ground
    G,
    /// Punctuation
    U,
}

impl Category {
    pub const ALL: [Category; 13] = [
        Category::P,
        Category::S,
        Category::A,
        Category::D,
        Category::C,
        Category::E,
        Category::N,
        Category::R,
        Category::F,
        Category::L,
        Category::H,
        Category::G,
        Category::U,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Category::P => "P",
            Category::S => "S",
            Category::A => "A",
            Category::D => "D",
            Category::C => "C",
            Category::E => "E",
            Category::N => "N",
            Category::R => "R",
            Category::F => "F",
            Category::L => "L",
            Category::H => "H",
            Category::G => "G",
            Category::U => "U",
        }
    }

    /// Position in [`Category::ALL`].
    pub fn index(self) -> usize {
        Category::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_owned()))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(deserializer)?;
        code.parse().map_err(serde::de::Error::custom)
    }
}

/// Opaque node identifier. Terminals use the reserved form `t<position>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn terminal(position: usize) -> Self {
        NodeId(format!("t{}", position))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The token position if this id has the reserved terminal form.
    pub fn terminal_position(&self) -> Option<usize> {
        let digits = self.0.strip_prefix('t')?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Entity IOB tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Iob {
    B,
    I,
    #[default]
    O,
}

impl Iob {
    pub fn code(self) -> &'static str {
        match self {
            Iob::B => "B",
            Iob::I => "I",
            Iob::O => "O",
        }
    }
}

impl FromStr for Iob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" => Ok(Iob::B),
            "I" => Ok(Iob::I),
            "O" | "" => Ok(Iob::O),
            _ => Err(Error::InvalidGraph(format!("unknown IOB tag `{}`", s))),
        }
    }
}

/// A token together with its companion features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub position: usize,
    pub surface: String,
    #[serde(rename = "pos")]
    pub pos_tag: String,
    #[serde(rename = "dep")]
    pub dep_label: String,
    #[serde(rename = "entity", default)]
    pub entity_type: String,
    #[serde(rename = "iob", default)]
    pub entity_iob: Iob,
}

impl Terminal {
    pub fn new(position: usize, surface: impl Into<String>) -> Self {
        Terminal {
            position,
            surface: surface.into(),
            pos_tag: String::new(),
            dep_label: String::new(),
            entity_type: String::new(),
            entity_iob: Iob::O,
        }
    }

    pub fn with_features(mut self, pos: &str, dep: &str, entity: &str, iob: Iob) -> Self {
        self.pos_tag = pos.to_owned();
        self.dep_label = dep.to_owned();
        self.entity_type = entity.to_owned();
        self.entity_iob = iob;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub parent: NodeId,
    pub child: NodeId,
    pub category: Category,
    #[serde(default)]
    pub remote: bool,
}

impl Edge {
    pub fn primary(parent: impl Into<String>, child: impl Into<String>, category: Category) -> Self {
        Edge {
            parent: NodeId::new(parent),
            child: NodeId::new(child),
            category,
            remote: false,
        }
    }

    pub fn remote(parent: impl Into<String>, child: impl Into<String>, category: Category) -> Self {
        Edge {
            remote: true,
            ..Edge::primary(parent, child, category)
        }
    }
}

/// A foundational-layer UCCA graph: primary edges form a tree, remote edges
/// add reentrancies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UccaGraph {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
    pub root: NodeId,
}

/// Canonical identity of a node independent of its id: its terminal yield and
/// its rank among the (unary-chained) nodes sharing that yield, counted from
/// the top.
pub type NodeKey = (Vec<usize>, usize);

impl UccaGraph {
    pub fn new(nodes: Vec<NodeId>, edges: Vec<Edge>, root: NodeId) -> Self {
        UccaGraph { nodes, edges, root }
    }

    /// Number of terminal nodes.
    pub fn n_terminals(&self) -> usize {
        self.nodes.iter().filter(|n| n.terminal_position().is_some()).count()
    }

    pub fn primary_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| !e.remote)
    }

    pub fn remote_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.remote)
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    /// Primary-edge yields of every node, keyed by id. Cycles are tolerated.
    pub fn yields(&self) -> HashMap<&NodeId, BTreeSet<usize>> {
        let children = self.primary_children();
        let mut memo: HashMap<&NodeId, BTreeSet<usize>> = HashMap::new();
        for node in &self.nodes {
            let y = collect_yield(node, &children);
            memo.insert(node, y);
        }
        memo
    }

    fn primary_children(&self) -> HashMap<&NodeId, Vec<&NodeId>> {
        let mut children: HashMap<&NodeId, Vec<&NodeId>> = HashMap::new();
        for e in self.primary_edges() {
            children.entry(&e.parent).or_default().push(&e.child);
        }
        children
    }

    /// Canonical key of every node of a valid graph.
    pub fn node_keys(&self) -> HashMap<&NodeId, NodeKey> {
        let yields = self.yields();
        let mut parent: HashMap<&NodeId, &NodeId> = HashMap::new();
        for e in self.primary_edges() {
            parent.insert(&e.child, &e.parent);
        }
        let mut keys = HashMap::new();
        for node in &self.nodes {
            let y = &yields[node];
            let mut rank = 0;
            let mut cur = node;
            let mut seen = HashSet::new();
            while let Some(p) = parent.get(cur) {
                if !seen.insert(*p) || yields[p] != *y {
                    break;
                }
                rank += 1;
                cur = p;
            }
            keys.insert(node, (y.iter().copied().collect(), rank));
        }
        keys
    }

    /// Id-free description of the graph: every labeled edge over node keys.
    /// Two valid graphs are structurally equal iff their canonical forms are.
    pub fn canonical_form(&self) -> CanonicalGraph {
        let keys = self.node_keys();
        let nodes = self.nodes.iter().map(|n| keys[n].clone()).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                (
                    keys[&e.parent].clone(),
                    keys[&e.child].clone(),
                    e.category,
                    e.remote,
                )
            })
            .collect();
        CanonicalGraph {
            root: keys[&self.root].clone(),
            nodes,
            edges,
        }
    }
}

fn collect_yield(node: &NodeId, children: &HashMap<&NodeId, Vec<&NodeId>>) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut stack = vec![node];
    let mut seen = HashSet::new();
    while let Some(cur) = stack.pop() {
        if !seen.insert(cur) {
            continue;
        }
        if let Some(pos) = cur.terminal_position() {
            out.insert(pos);
        }
        if let Some(cs) = children.get(cur) {
            stack.extend(cs.iter().copied());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalGraph {
    pub root: NodeKey,
    pub nodes: BTreeSet<NodeKey>,
    pub edges: BTreeSet<(NodeKey, NodeKey, Category, bool)>,
}

/// Passage language code (`en`, `de`, `fr`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Language(String);

impl Language {
    pub fn new(code: impl Into<String>) -> Self {
        Language(code.into().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Language {
    fn from(s: &str) -> Self {
        Language::new(s)
    }
}

/// Tokens with companion features plus an optional gold graph over them.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub id: String,
    pub language: Language,
    pub terminals: Vec<Terminal>,
    pub graph: Option<UccaGraph>,
}

impl Passage {
    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }

    /// Validates token numbering and, when present, the graph.
    pub fn validate(&self) -> ValidationReport {
        let mut report = match &self.graph {
            Some(g) => validate_graph(g, self.terminals.len()),
            None => ValidationReport::default(),
        };
        for (i, t) in self.terminals.iter().enumerate() {
            if t.position != i + 1 {
                report.violations.push(Violation::TokenNumbering {
                    index: i,
                    position: t.position,
                });
            }
        }
        report
    }
}

/// One violated graph invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateNode(NodeId),
    UnknownEndpoint { edge: usize, node: NodeId },
    MissingRoot(NodeId),
    RootHasPrimaryParent(NodeId),
    TerminalRoot(NodeId),
    MultiplePrimaryParents { node: NodeId, parents: Vec<NodeId> },
    Unattached(NodeId),
    Cycle(Vec<NodeId>),
    MissingTerminal(usize),
    ExtraTerminal(NodeId),
    TerminalWithChildren(NodeId),
    EmptyUnit(NodeId),
    SelfLoop(NodeId),
    DuplicateEdge(usize),
    RemoteToRoot { edge: usize },
    RemoteDuplicatesPrimary { edge: usize },
    TokenNumbering { index: usize, position: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Violation::DuplicateNode(n) => write!(f, "node `{}` declared more than once", n),
            Violation::UnknownEndpoint { edge, node } => {
                write!(f, "edge {} references undeclared node `{}`", edge, node)
            }
            Violation::MissingRoot(n) => write!(f, "root `{}` is not a declared node", n),
            Violation::RootHasPrimaryParent(n) => write!(f, "root `{}` has a primary parent", n),
            Violation::TerminalRoot(n) => write!(f, "root `{}` is a terminal", n),
            Violation::MultiplePrimaryParents { node, parents } => {
                let ps: Vec<_> = parents.iter().map(NodeId::as_str).collect();
                write!(f, "node `{}` has several primary parents: {}", node, ps.join(", "))
            }
            Violation::Unattached(n) => write!(f, "node `{}` has no primary parent", n),
            Violation::Cycle(ns) => {
                let ns: Vec<_> = ns.iter().map(NodeId::as_str).collect();
                write!(f, "edges form a cycle through {}", ns.join(", "))
            }
            Violation::MissingTerminal(p) => write!(f, "no terminal node for token {}", p),
            Violation::ExtraTerminal(n) => write!(f, "terminal `{}` anchors no token", n),
            Violation::TerminalWithChildren(n) => write!(f, "terminal `{}` has outgoing edges", n),
            Violation::EmptyUnit(n) => write!(f, "unit `{}` covers no terminal", n),
            Violation::SelfLoop(n) => write!(f, "self loop on `{}`", n),
            Violation::DuplicateEdge(e) => write!(f, "edge {} duplicates an earlier edge", e),
            Violation::RemoteToRoot { edge } => write!(f, "remote edge {} targets the root", edge),
            Violation::RemoteDuplicatesPrimary { edge } => {
                write!(f, "remote edge {} duplicates a primary parent-child pair", edge)
            }
            Violation::TokenNumbering { index, position } => {
                write!(f, "token {} carries position {}", index + 1, position)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}", v)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of `g` against a passage of `n_tokens`
/// tokens. Never fails; an empty report means the graph is valid.
pub fn validate_graph(g: &UccaGraph, n_tokens: usize) -> ValidationReport {
    let mut violations = Vec::new();

    let mut declared = HashSet::new();
    for n in &g.nodes {
        if !declared.insert(n) {
            violations.push(Violation::DuplicateNode(n.clone()));
        }
    }

    if !declared.contains(&g.root) {
        violations.push(Violation::MissingRoot(g.root.clone()));
    } else if g.root.terminal_position().is_some() {
        violations.push(Violation::TerminalRoot(g.root.clone()));
    }

    let mut terminals = BTreeSet::new();
    for n in &g.nodes {
        if let Some(p) = n.terminal_position() {
            if p == 0 || p > n_tokens {
                violations.push(Violation::ExtraTerminal(n.clone()));
            } else {
                terminals.insert(p);
            }
        }
    }
    for p in 1..=n_tokens {
        if !terminals.contains(&p) {
            violations.push(Violation::MissingTerminal(p));
        }
    }

    let mut seen_edges = HashSet::new();
    let mut primary_parents: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    let mut primary_pairs = HashSet::new();
    let mut has_children = HashSet::new();
    for (i, e) in g.edges.iter().enumerate() {
        let mut known = true;
        for end in [&e.parent, &e.child] {
            if !declared.contains(end) {
                violations.push(Violation::UnknownEndpoint {
                    edge: i,
                    node: end.clone(),
                });
                known = false;
            }
        }
        if e.parent == e.child {
            violations.push(Violation::SelfLoop(e.parent.clone()));
        }
        if !seen_edges.insert(e) {
            violations.push(Violation::DuplicateEdge(i));
        }
        if !known {
            continue;
        }
        has_children.insert(&e.parent);
        if !e.remote {
            let ps = primary_parents.entry(&e.child).or_default();
            if !ps.contains(&&e.parent) {
                ps.push(&e.parent);
            }
            primary_pairs.insert((&e.parent, &e.child));
        }
    }

    for (i, e) in g.edges.iter().enumerate().filter(|(_, e)| e.remote) {
        if e.child == g.root {
            violations.push(Violation::RemoteToRoot { edge: i });
        }
        if primary_pairs.contains(&(&e.parent, &e.child)) {
            violations.push(Violation::RemoteDuplicatesPrimary { edge: i });
        }
    }

    let mut reported = HashSet::new();
    for n in &g.nodes {
        if !reported.insert(n) {
            continue;
        }
        let parents = primary_parents.get(n).map(Vec::as_slice).unwrap_or(&[]);
        if *n == g.root {
            if !parents.is_empty() {
                violations.push(Violation::RootHasPrimaryParent(n.clone()));
            }
        } else if parents.is_empty() {
            violations.push(Violation::Unattached(n.clone()));
        } else if parents.len() > 1 {
            violations.push(Violation::MultiplePrimaryParents {
                node: n.clone(),
                parents: parents.iter().map(|p| (*p).clone()).collect(),
            });
        }
        if n.terminal_position().is_some() {
            if has_children.contains(n) {
                violations.push(Violation::TerminalWithChildren(n.clone()));
            }
        } else if !g.edges.iter().any(|e| !e.remote && e.parent == *n) {
            violations.push(Violation::EmptyUnit(n.clone()));
        }
    }

    if let Some(cycle) = find_cycle(g, &declared) {
        violations.push(Violation::Cycle(cycle));
    }

    ValidationReport { violations }
}

/// Returns the nodes left over by Kahn's algorithm, i.e. those on or behind a
/// directed cycle over all (primary and remote) edges.
fn find_cycle(g: &UccaGraph, declared: &HashSet<&NodeId>) -> Option<Vec<NodeId>> {
    let mut indegree: HashMap<&NodeId, usize> = declared.iter().map(|n| (*n, 0)).collect();
    let mut out: HashMap<&NodeId, Vec<&NodeId>> = HashMap::new();
    for e in &g.edges {
        if declared.contains(&e.parent) && declared.contains(&e.child) {
            *indegree.get_mut(&e.child).unwrap() += 1;
            out.entry(&e.parent).or_default().push(&e.child);
        }
    }
    let mut queue: Vec<&NodeId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut removed = 0;
    while let Some(n) = queue.pop() {
        removed += 1;
        for c in out.get(n).into_iter().flatten() {
            let d = indegree.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push(c);
            }
        }
    }
    if removed == indegree.len() {
        return None;
    }
    let mut rest: Vec<NodeId> = indegree
        .into_iter()
        .filter(|(_, d)| *d > 0)
        .map(|(n, _)| n.clone())
        .collect();
    rest.sort();
    Some(rest)
}

/// Token positions reachable from `node` over primary edges.
pub fn terminal_yield(g: &UccaGraph, node: &NodeId) -> Result<BTreeSet<usize>> {
    if !g.contains(node) {
        return Err(Error::UnknownNode(node.to_string()));
    }
    Ok(collect_yield(node, &g.primary_children()))
}

/// Index over a graph whose primary edges form a tree.
#[derive(Debug, Clone)]
pub(crate) struct PrimaryTree {
    pub ids: Vec<NodeId>,
    pub index: HashMap<NodeId, usize>,
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Categories on the primary edge(s) into each node, sorted.
    pub categories: Vec<Vec<Category>>,
    /// Primary children, ordered by the first position of their yields.
    pub children: Vec<Vec<usize>>,
    /// Sorted yields.
    pub yields: Vec<Vec<usize>>,
}

impl PrimaryTree {
    pub fn build(g: &UccaGraph, n_tokens: usize) -> Result<Self> {
        let report = validate_graph(g, n_tokens);
        if !report.is_valid() {
            return Err(Error::InvalidGraph(report.to_string()));
        }
        let ids = g.nodes.clone();
        let index: HashMap<NodeId, usize> =
            ids.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut parent = vec![None; ids.len()];
        let mut categories = vec![Vec::new(); ids.len()];
        let mut children = vec![Vec::new(); ids.len()];
        for e in g.primary_edges() {
            let (p, c) = (index[&e.parent], index[&e.child]);
            if parent[c].is_none() {
                parent[c] = Some(p);
                children[p].push(c);
            }
            categories[c].push(e.category);
        }
        for cats in &mut categories {
            cats.sort();
            cats.dedup();
        }
        let root = index[&g.root];
        let mut yields = vec![Vec::new(); ids.len()];
        for &n in post_order(root, &children).iter() {
            let mut y: Vec<usize> = match ids[n].terminal_position() {
                Some(p) => vec![p],
                None => children[n].iter().flat_map(|&c| yields[c].iter().copied()).collect(),
            };
            y.sort_unstable();
            yields[n] = y;
        }
        for cs in &mut children {
            cs.sort_by_key(|&c| yields[c][0]);
        }
        Ok(PrimaryTree {
            ids,
            index,
            root,
            parent,
            categories,
            children,
            yields,
        })
    }

    /// Rank of `node` among the same-yield chain it belongs to, from the top.
    pub fn chain_rank(&self, node: usize) -> usize {
        let mut rank = 0;
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            if self.yields[p] != self.yields[node] {
                break;
            }
            rank += 1;
            cur = p;
        }
        rank
    }

    /// Finds the node with the given yield and chain rank.
    pub fn find(&self, yield_: &[usize], rank: usize) -> Option<usize> {
        (0..self.ids.len()).find(|&n| self.yields[n] == yield_ && self.chain_rank(n) == rank)
    }

    pub fn is_ancestor(&self, ancestor: usize, mut node: usize) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.parent[node] {
                Some(p) => node = p,
                None => return false,
            }
        }
    }
}

pub(crate) fn post_order(root: usize, children: &[Vec<usize>]) -> Vec<usize> {
    let mut out = Vec::with_capacity(children.len());
    let mut stack = vec![(root, false)];
    while let Some((n, expanded)) = stack.pop() {
        if expanded {
            out.push(n);
        } else {
            stack.push((n, true));
            for &c in children[n].iter().rev() {
                stack.push((c, false));
            }
        }
    }
    out
}
