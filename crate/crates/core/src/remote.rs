//! Remote-edge recovery on top of a primary tree.
//!
//! Every non-root node of the tree is a potential remote child. A gate MLP
//! decides whether it has a remote parent; an attach MLP then scores every
//! (candidate parent, category) pair jointly. Node vectors are the same
//! fencepost span vectors the span scorer reads.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::conversion::{reconstruct, reaches, RemoteRecord, Strictness};
use crate::error::{Error, Result};
use crate::graph::{Category, NodeId, PrimaryTree};
use crate::nn::{impl_params, relu, relu_backward, sigmoid, Linear, Param};
use crate::tree::{ConstituencyTree, Span};
use crate::encoder::{span_representations, span_representations_backward};

pub const N_CATEGORIES: usize = Category::ALL.len();

/// Gate and attach MLPs.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteHeads {
    pub gate_hidden: Linear,
    pub gate_out: Linear,
    pub attach_source: Linear,
    pub attach_parent: Param,
    pub attach_out: Linear,
}

impl_params!(RemoteHeads {
    gate_hidden,
    gate_out,
    attach_source,
    attach_parent,
    attach_out
});

/// One gold remote edge in problem coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldRemote {
    /// Index into [`RemoteProblem::sources`].
    pub source: usize,
    /// Index into that source's candidate list.
    pub candidate: usize,
    pub category: Category,
}

/// Nodes of one tree with the remote candidates of each.
#[derive(Debug, Clone)]
pub struct RemoteProblem {
    /// Tree span of every node (the top of its unary chain).
    pub spans: Vec<Span>,
    pub ids: Vec<NodeId>,
    /// Nodes that may take a remote parent: all but the root.
    pub sources: Vec<usize>,
    /// Candidate parents of each source.
    pub candidates: Vec<Vec<usize>>,
    pub gold: Vec<GoldRemote>,
    /// Whether each source has a gold remote parent.
    pub gold_gate: Vec<bool>,
    pt: PrimaryTree,
    pt_index: Vec<usize>,
    by_span: HashMap<Span, usize>,
    node_spans: HashMap<NodeId, Span>,
}

impl RemoteProblem {
    pub fn new(tree: &ConstituencyTree) -> Result<Self> {
        let rec = reconstruct(tree, Strictness::Lenient)?;
        let pt = PrimaryTree::build(&rec.graph, tree.n())?;
        let mut spans = Vec::new();
        let mut ids = Vec::new();
        let mut by_span = HashMap::new();
        for ls in tree.spans() {
            // A span can lose all its nodes to dropped root markers.
            let Some(top) = rec.span_nodes.get(&ls.span).and_then(|v| v.first()) else {
                continue;
            };
            by_span.insert(ls.span, spans.len());
            spans.push(ls.span);
            ids.push(top.clone());
        }
        let pt_index: Vec<usize> = ids.iter().map(|id| pt.index[id]).collect();
        let sources: Vec<usize> = (0..ids.len()).filter(|&i| pt_index[i] != pt.root).collect();
        let candidates = sources
            .iter()
            .map(|&c| {
                let pc = pt_index[c];
                (0..ids.len())
                    .filter(|&p| {
                        let pp = pt_index[p];
                        p != c
                            && pt.ids[pp].terminal_position().is_none()
                            && pt.parent[pc] != Some(pp)
                            && !pt.is_ancestor(pc, pp)
                    })
                    .collect()
            })
            .collect();
        let n_sources = sources.len();
        Ok(RemoteProblem {
            spans,
            ids,
            sources,
            candidates,
            gold: Vec::new(),
            gold_gate: vec![false; n_sources],
            pt,
            pt_index,
            by_span,
            node_spans: rec.node_spans,
        })
    }

    /// Aligns gold remote records with the nodes of this tree. Records whose
    /// endpoints are not nodes here are skipped; a record whose parent is not
    /// an admissible candidate still marks its child for the gate.
    pub fn with_gold(mut self, remotes: &[RemoteRecord]) -> Self {
        for r in remotes {
            let node = |yield_: &std::collections::BTreeSet<usize>, rank: usize| {
                let y: Vec<usize> = yield_.iter().copied().collect();
                let at = self.pt.find(&y, rank)?;
                let span = self.node_spans.get(&self.pt.ids[at])?;
                self.by_span.get(span).copied()
            };
            let (Some(c), Some(p)) = (node(&r.child_yield, r.child_rank), node(&r.parent_yield, r.parent_rank))
            else {
                continue;
            };
            let Some(source) = self.sources.iter().position(|&s| s == c) else {
                continue;
            };
            self.gold_gate[source] = true;
            if let Some(candidate) = self.candidates[source].iter().position(|&x| x == p) {
                let g = GoldRemote {
                    source,
                    candidate,
                    category: r.category,
                };
                if !self.gold.contains(&g) {
                    self.gold.push(g);
                }
            }
        }
        self
    }

    /// Source indices that need attach scores during training.
    pub fn gold_sources(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.gold.iter().map(|g| g.source).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn record(&self, parent: usize, child: usize, category: Category) -> RemoteRecord {
        let (p, c) = (self.pt_index[parent], self.pt_index[child]);
        RemoteRecord {
            parent_yield: self.pt.yields[p].iter().copied().collect(),
            child_yield: self.pt.yields[c].iter().copied().collect(),
            category,
            parent_rank: self.pt.chain_rank(p),
            child_rank: self.pt.chain_rank(c),
        }
    }
}

/// Raw head outputs.
#[derive(Debug, Clone, Default)]
pub struct RemoteScores {
    /// One gate logit per source.
    pub gate_logits: Vec<f64>,
    /// Attach logits `(candidates, categories)` of selected sources.
    pub attach_logits: BTreeMap<usize, Array2<f64>>,
}

/// What [`RemoteHeads::backward`] needs.
#[derive(Debug, Clone)]
pub struct RemoteForward {
    reps: Array2<f64>,
    source_reps: Array2<f64>,
    gate_hidden: Array2<f64>,
    src_pre: Array2<f64>,
    par_pre: Array2<f64>,
    attach_hidden: BTreeMap<usize, Array2<f64>>,
    pub scores: RemoteScores,
}

impl RemoteForward {
    pub(crate) fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.gate_hidden
            .iter()
            .chain(self.attach_hidden.values().flat_map(|h| h.iter()))
            .map(|&v| v > 0.0)
    }
}

impl RemoteHeads {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        RemoteHeads {
            gate_hidden: Linear::new(rng, input, hidden),
            gate_out: Linear::new(rng, hidden, 1),
            attach_source: Linear::new(rng, input, hidden),
            attach_parent: Param::glorot(rng, input, hidden),
            attach_out: Linear::new(rng, hidden, N_CATEGORIES),
        }
    }

    /// Gate logits for every source and attach logits for `attach_sources`.
    pub fn forward(&self, fenceposts: &Array2<f64>, problem: &RemoteProblem, attach_sources: &[usize]) -> RemoteForward {
        let reps = span_representations(fenceposts, &problem.spans);
        let source_reps = reps.select(Axis(0), &problem.sources);
        let gate_hidden = relu(&self.gate_hidden.forward(source_reps.view()));
        let gate_logits = self.gate_out.forward(gate_hidden.view()).column(0).to_vec();
        let src_pre = self.attach_source.forward(reps.view());
        let par_pre = reps.dot(&self.attach_parent.value);
        let mut attach_hidden = BTreeMap::new();
        let mut attach_logits = BTreeMap::new();
        for &s in attach_sources {
            let cands = &problem.candidates[s];
            let node = problem.sources[s];
            let mut pre = par_pre.select(Axis(0), cands);
            pre += &src_pre.row(node);
            let h = relu(&pre);
            attach_logits.insert(s, self.attach_out.forward(h.view()));
            attach_hidden.insert(s, h);
        }
        RemoteForward {
            reps,
            source_reps,
            gate_hidden,
            src_pre,
            par_pre,
            attach_hidden,
            scores: RemoteScores {
                gate_logits,
                attach_logits,
            },
        }
    }

    /// Backpropagates logit gradients; returns the fencepost gradient.
    pub fn backward(
        &mut self,
        problem: &RemoteProblem,
        fwd: &RemoteForward,
        dgate: &[f64],
        dattach: &BTreeMap<usize, Array2<f64>>,
        dfenceposts: &mut Array2<f64>,
    ) {
        let dz = Array2::from_shape_vec((dgate.len(), 1), dgate.to_vec()).expect("one logit per source");
        let dh = self.gate_out.backward(fwd.gate_hidden.view(), dz.view());
        let dsrc_reps = self
            .gate_hidden
            .backward(fwd.source_reps.view(), relu_backward(&fwd.gate_hidden, &dh).view());
        let mut dreps = Array2::zeros(fwd.reps.raw_dim());
        for (k, &node) in problem.sources.iter().enumerate() {
            let mut row = dreps.row_mut(node);
            row += &dsrc_reps.row(k);
        }

        let mut dsrc_pre = Array2::zeros(fwd.src_pre.raw_dim());
        let mut dpar_pre = Array2::zeros(fwd.par_pre.raw_dim());
        for (&s, dlogits) in dattach {
            let h = &fwd.attach_hidden[&s];
            let dh = self.attach_out.backward(h.view(), dlogits.view());
            let dpre = relu_backward(h, &dh);
            let mut row = dsrc_pre.row_mut(problem.sources[s]);
            row += &dpre.sum_axis(Axis(0));
            for (k, &p) in problem.candidates[s].iter().enumerate() {
                let mut row = dpar_pre.row_mut(p);
                row += &dpre.row(k);
            }
        }
        dreps += &self.attach_source.backward(fwd.reps.view(), dsrc_pre.view());
        self.attach_parent.grad += &fwd.reps.t().dot(&dpar_pre);
        dreps += &dpar_pre.dot(&self.attach_parent.value.t());
        span_representations_backward(dfenceposts, &problem.spans, &dreps);
    }
}

/// Representation of `span` in `tree`: the fencepost construction shared
/// with the span scorer.
pub fn node_representation(tree: &ConstituencyTree, fenceposts: &Array2<f64>, span: Span) -> Result<Vec<f64>> {
    if !tree.contains_span(span) {
        return Err(Error::InvalidTree(format!("span {} is not in the tree", span)));
    }
    let mut v = fenceposts.row(span.start).to_vec();
    v.extend(fenceposts.row(span.end).iter());
    Ok(v)
}

/// Predicts remote edges for `tree`. Sources are visited by decreasing gate
/// probability; each takes its best (parent, category) pair that neither
/// repeats an edge nor closes a cycle.
pub fn recover_remotes(
    tree: &ConstituencyTree,
    fenceposts: &Array2<f64>,
    heads: &RemoteHeads,
    threshold: f64,
) -> Result<Vec<RemoteRecord>> {
    let problem = RemoteProblem::new(tree)?;
    let gate = heads.forward(fenceposts, &problem, &[]).scores.gate_logits;
    let mut chosen: Vec<(usize, f64)> = gate
        .iter()
        .enumerate()
        .map(|(s, &z)| (s, sigmoid(z)))
        .filter(|&(_, p)| p >= threshold)
        .collect();
    if chosen.is_empty() {
        return Ok(Vec::new());
    }
    chosen.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let sources: Vec<usize> = chosen.iter().map(|&(s, _)| s).collect();
    let fwd = heads.forward(fenceposts, &problem, &sources);

    let pt = &problem.pt;
    let mut out_edges = pt.children.clone();
    let mut records = Vec::new();
    for &s in &sources {
        let logits = &fwd.scores.attach_logits[&s];
        let child = problem.sources[s];
        let mut pairs: Vec<(f64, usize, usize)> = logits
            .indexed_iter()
            .map(|((k, c), &v)| (v, k, c))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for (_, k, c) in pairs {
            let parent = problem.candidates[s][k];
            let (pp, pc) = (problem.pt_index[parent], problem.pt_index[child]);
            if out_edges[pp].contains(&pc) || reaches(&out_edges, pc, pp) {
                continue;
            }
            out_edges[pp].push(pc);
            records.push(problem.record(parent, child, Category::ALL[c]));
            break;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversion::graph_to_tree;
    use crate::encoder::fenceposts;
    use crate::synthetic::figure_one;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn figure_problem() -> (ConstituencyTree, Vec<RemoteRecord>) {
        let conv = graph_to_tree(figure_one().graph.as_ref().unwrap()).unwrap();
        (conv.tree, conv.remotes)
    }

    #[test]
    fn gold_remote_aligns_with_tree_nodes() {
        let (tree, remotes) = figure_problem();
        let p = RemoteProblem::new(&tree).unwrap().with_gold(&remotes);
        assert_eq!(p.gold.len(), 1);
        let g = p.gold[0];
        assert_eq!(p.spans[p.sources[g.source]], Span::new(0, 1));
        assert_eq!(p.spans[p.candidates[g.source][g.candidate]], Span::new(9, 11));
        assert_eq!(g.category, Category::A);
        assert_eq!(p.gold_gate.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn candidates_exclude_self_parent_descendants_and_terminals() {
        let (tree, _) = figure_problem();
        let p = RemoteProblem::new(&tree).unwrap();
        for (k, &c) in p.sources.iter().enumerate() {
            let cands = &p.candidates[k];
            assert!(!cands.contains(&c));
            assert!(cands.len() < p.spans.len());
            for &x in cands {
                assert!(p.spans[x].width() > 1 || p.ids[x].terminal_position().is_none());
                assert!(!p.spans[c].contains(p.spans[x]) || p.spans[c] == p.spans[x]);
            }
        }
    }

    #[test]
    fn threshold_above_one_predicts_nothing() {
        let (tree, _) = figure_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut heads = RemoteHeads::new(&mut rng, 8, 5);
        heads.gate_out.b.value.fill(50.0);
        let ys = Array2::from_shape_simple_fn((12, 4), || rng.random_range(-1.0..1.0));
        let f = fenceposts(&ys);
        assert!(recover_remotes(&tree, &f, &heads, 1.0 + 1e-12).unwrap().is_empty());
        heads.gate_out.b.value.fill(-50.0);
        assert!(recover_remotes(&tree, &f, &heads, 0.5).unwrap().is_empty());
    }

    #[test]
    fn predicted_remotes_keep_graph_valid() {
        let (tree, _) = figure_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut heads = RemoteHeads::new(&mut rng, 8, 5);
        heads.gate_out.b.value.fill(50.0);
        let ys = Array2::from_shape_simple_fn((12, 4), || rng.random_range(-1.0..1.0));
        let remotes = recover_remotes(&tree, &fenceposts(&ys), &heads, 0.5).unwrap();
        assert!(!remotes.is_empty());
        let g = crate::conversion::tree_to_graph(&tree, &remotes, &[], Strictness::Strict)
            .unwrap()
            .graph;
        let report = crate::graph::validate_graph(&g, 12);
        assert!(report.is_valid(), "{}", report);
    }

    #[test]
    fn node_representation_is_local() {
        let (tree, _) = figure_problem();
        let ys = Array2::from_shape_fn((12, 4), |(r, c)| (r * 4 + c) as f64);
        let f = fenceposts(&ys);
        let v = node_representation(&tree, &f, Span::new(2, 3)).unwrap();
        assert_eq!(v, vec![4.0, 5.0, 10.0, 11.0, 8.0, 9.0, 14.0, 15.0]);
        assert!(node_representation(&tree, &f, Span::new(1, 3)).is_err());
        assert!(node_representation(&tree, &f, Span::new(0, 12)).unwrap().iter().all(|v| v.is_finite()));
    }
}
