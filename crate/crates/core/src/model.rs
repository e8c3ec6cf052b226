//! The full parser: embeddings, encoder, span scorer and remote heads, with
//! the training loss and the parse pipeline.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conversion::{graph_to_tree, tree_to_graph, RemoteRecord, Strictness};
use crate::decoder::{all_spans, cyk_decode, SpanChart};
use crate::encoder::{
    fenceposts, fenceposts_backward, span_representations, span_representations_backward, EmbeddingDims,
    EmbeddingTables, Encoder, EncoderCache, EncoderLayer, SpanScorer, TokenIds, Vocabularies,
};
use crate::error::{Error, Result};
use crate::graph::{Category, Passage};
use crate::label::{Label, LabelInventory, LabelPart};
use crate::nn::{impl_params, log_sum_exp, sigmoid, softplus, Linear, Params};
use crate::remote::{recover_remotes, RemoteForward, RemoteHeads, RemoteProblem, RemoteScores};
use crate::tree::{ConstituencyTree, Span};

/// The encoder always has this many layers.
pub const N_LAYERS: usize = 8;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embeddings: EmbeddingDims,
    /// Width of external per-token vectors; 0 when none are used.
    pub external_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub positional_encoding: bool,
    pub span_hidden: usize,
    pub remote_hidden: usize,
    /// `α` in the word-dropout probability `α / (1 + count)`.
    pub word_dropout: f64,
    /// When false, punctuation spans are not predicted and punctuation
    /// tokens are attached as `U` terminals after decoding.
    pub predict_punctuation: bool,
    pub remote_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embeddings: EmbeddingDims::default(),
            external_dim: 0,
            d_model: 256,
            heads: 8,
            d_ff: 1024,
            layers: N_LAYERS,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
            positional_encoding: true,
            span_hidden: 250,
            remote_hidden: 250,
            word_dropout: 0.25,
            predict_punctuation: true,
            remote_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers != N_LAYERS {
            return bad(format!("the encoder has exactly {} layers, not {}", N_LAYERS, self.layers));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even to split fenceposts".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if [self.d_ff, self.span_hidden, self.remote_hidden].contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    /// Input width of the encoder.
    pub fn input_dim(&self) -> usize {
        self.embeddings.total() + self.external_dim
    }

    /// Label used as a training target for a gold span label.
    pub fn target_label(&self, label: &Label) -> Label {
        let punct = Label(vec![LabelPart::unit(Category::U)]);
        if !self.predict_punctuation && *label == punct {
            Label::empty()
        } else {
            label.clone()
        }
    }
}

/// Everything with trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub labels: LabelInventory,
    pub embeddings: EmbeddingTables,
    pub encoder: Encoder,
    pub spans: SpanScorer,
    pub remote: RemoteHeads,
}

impl_params!(Model {
    embeddings,
    encoder,
    spans,
    remote
});

/// A gold passage prepared for training.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub language: String,
    pub ids: TokenIds,
    pub external: Option<Array2<f64>>,
    /// Gold label id of every span in [`all_spans`] order; 0 off the tree.
    pub targets: Vec<usize>,
    pub problem: RemoteProblem,
}

impl Example {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Loss terms of one passage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub non_terminal: f64,
    pub remote: f64,
    pub gate: f64,
    pub attach: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: LossParts) {
        self.total += o.total;
        self.non_terminal += o.non_terminal;
        self.remote += o.remote;
        self.gate += o.gate;
        self.attach += o.attach;
    }
}

/// Gradients of the loss with respect to the raw scores.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub span_logits: Array2<f64>,
    pub gate_logits: Vec<f64>,
    pub attach_logits: BTreeMap<usize, Array2<f64>>,
}

/// Cross-entropy of every chart span against its gold label, plus gate
/// binary cross-entropy and attach cross-entropy over gold remote sources.
pub fn compute_loss(
    targets: &[usize],
    chart: &SpanChart,
    problem: &RemoteProblem,
    remote: &RemoteScores,
) -> Result<LossParts> {
    Ok(loss_and_grads(targets, chart, problem, remote)?.0)
}

pub(crate) fn loss_and_grads(
    targets: &[usize],
    chart: &SpanChart,
    problem: &RemoteProblem,
    remote: &RemoteScores,
) -> Result<(LossParts, LossGrads)> {
    let spans = all_spans(chart.n());
    if targets.len() != spans.len() {
        return Err(Error::Dimension(format!(
            "{} gold span labels for a chart over {} spans",
            targets.len(),
            spans.len()
        )));
    }
    let l = chart.n_labels();
    let mut non_terminal = 0.0;
    let mut dspans = Array2::zeros((spans.len(), l));
    for (r, (&s, &gold)) in spans.iter().zip(targets).enumerate() {
        let row = chart.row(s);
        let lse = log_sum_exp(row);
        non_terminal += lse - row[gold];
        for (k, &v) in row.iter().enumerate() {
            dspans[(r, k)] = (v - lse).exp();
        }
        dspans[(r, gold)] -= 1.0;
    }

    if remote.gate_logits.len() != problem.sources.len() {
        return Err(Error::Dimension("one gate logit per remote source expected".into()));
    }
    let mut gate = 0.0;
    let mut dgate = Vec::with_capacity(problem.sources.len());
    for (&z, &y) in remote.gate_logits.iter().zip(&problem.gold_gate) {
        let y = f64::from(u8::from(y));
        gate += softplus(z) - y * z;
        dgate.push(sigmoid(z) - y);
    }
    let mut attach = 0.0;
    let mut dattach: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
    for g in &problem.gold {
        let logits = remote
            .attach_logits
            .get(&g.source)
            .ok_or_else(|| Error::Dimension("missing attach scores for a gold remote".into()))?;
        let flat: Vec<f64> = logits.iter().copied().collect();
        let lse = log_sum_exp(&flat);
        attach += lse - logits[(g.candidate, g.category.index())];
        let d = dattach
            .entry(g.source)
            .or_insert_with(|| Array2::zeros(logits.raw_dim()));
        *d += &logits.mapv(|v| (v - lse).exp());
        d[(g.candidate, g.category.index())] -= 1.0;
    }
    let remote_loss = gate + attach;
    Ok((
        LossParts {
            total: non_terminal + remote_loss,
            non_terminal,
            remote: remote_loss,
            gate,
            attach,
        },
        LossGrads {
            span_logits: dspans,
            gate_logits: dgate,
            attach_logits: dattach,
        },
    ))
}

/// Intermediate values of a training forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    ids: TokenIds,
    encoder: EncoderCache,
    fenceposts: Array2<f64>,
    reps: Array2<f64>,
    span_hidden: Array2<f64>,
    pub chart: SpanChart,
    pub remote: RemoteForward,
}

impl Forward {
    /// On/off state of every ReLU, for detecting kinks in numeric checks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut v: Vec<bool> = self
            .encoder
            .layers
            .iter()
            .flat_map(|l| l.relu_pattern())
            .collect();
        v.extend(self.span_hidden.iter().map(|&x| x > 0.0));
        v.extend(self.remote.relu_pattern());
        v
    }
}

/// Options of [`Model::parse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    pub remotes: bool,
    pub threshold: f64,
}

/// A parsed passage.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub tree: ConstituencyTree,
    pub remotes: Vec<RemoteRecord>,
    /// The input passage with the predicted graph.
    pub passage: Passage,
    pub warnings: Vec<String>,
}

impl Model {
    pub fn new(config: ModelConfig, vocabs: Vocabularies, labels: LabelInventory, seed: u64) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("label inventory has no labels besides ∅".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let embeddings = EmbeddingTables::new(&mut rng, &vocabs, config.embeddings);
        let beta = (8.0 * config.layers as f64).powf(-0.25);
        let encoder = Encoder {
            input: Linear::new(&mut rng, config.input_dim(), d),
            layers: (0..config.layers)
                .map(|_| {
                    let mut l = EncoderLayer::new(&mut rng, d, config.heads, config.d_ff, config.layer_norm_eps);
                    l.scale_branches(beta);
                    l
                })
                .collect(),
            positional: config.positional_encoding,
            dropout: config.dropout,
        };
        let spans = SpanScorer::new(&mut rng, 2 * d, config.span_hidden, labels.len());
        let remote = RemoteHeads::new(&mut rng, 2 * d, config.remote_hidden);
        Ok(Model {
            config,
            vocabs,
            labels,
            embeddings,
            encoder,
            spans,
            remote,
        })
    }

    /// Inventory over the target labels of `trees`.
    pub fn label_inventory<'a>(config: &ModelConfig, trees: impl IntoIterator<Item = &'a ConstituencyTree>) -> LabelInventory {
        let labels: Vec<Label> = trees
            .into_iter()
            .flat_map(|t| t.spans().iter().map(|s| config.target_label(&s.label)))
            .collect();
        LabelInventory::from_labels(&labels)
    }

    fn check_external(&self, n: usize, external: Option<&Array2<f64>>) -> Result<()> {
        match (self.config.external_dim, external) {
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::Dimension("model was built without external vectors".into())),
            (k, None) => Err(Error::Dimension(format!("model expects {}-dimensional external vectors", k))),
            (k, Some(e)) if e.ncols() != k || e.nrows() != n => Err(Error::Dimension(format!(
                "external vectors are {}x{}, expected {}x{}",
                e.nrows(),
                e.ncols(),
                n,
                k
            ))),
            _ => Ok(()),
        }
    }

    /// Prepares a gold passage for training.
    pub fn example(&self, passage: &Passage, external: Option<Array2<f64>>) -> Result<Example> {
        let graph = passage
            .graph
            .as_ref()
            .ok_or_else(|| Error::InvalidGraph(format!("passage {} has no graph", passage.id)))?;
        self.check_external(passage.len(), external.as_ref())?;
        let conv = graph_to_tree(graph)?;
        let n = passage.len();
        let mut targets = vec![0; n * (n + 1) / 2];
        let index: BTreeMap<Span, usize> = all_spans(n).into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        for ls in conv.tree.spans() {
            let label = self.config.target_label(&ls.label);
            targets[index[&ls.span]] = self
                .labels
                .id(&label)
                .ok_or_else(|| Error::InvalidLabel(format!("{} (passage {})", label, passage.id)))?;
        }
        let problem = RemoteProblem::new(&conv.tree)?.with_gold(&conv.remotes);
        Ok(Example {
            id: passage.id.clone(),
            language: passage.language.to_string(),
            ids: self.vocabs.ids(&passage.terminals),
            external,
            targets,
            problem,
        })
    }

    /// Forward pass over a gold example. `rng` enables dropout.
    pub fn forward(&self, ex: &Example, ids: TokenIds, rng: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        let x = self.embeddings.embed(&ids, ex.external.as_ref())?;
        let (ys, encoder) = self.encoder.forward(&x, rng)?;
        let f = fenceposts(&ys);
        let spans = all_spans(ys.nrows());
        let reps = span_representations(&f, &spans);
        let (logits, span_hidden) = self.spans.forward(&reps);
        let chart = SpanChart::from_rows(ys.nrows(), self.labels.len(), logits.into_raw_vec_and_offset().0)?;
        let remote = self.remote.forward(&f, &ex.problem, &ex.problem.gold_sources());
        Ok(Forward {
            ids,
            encoder,
            fenceposts: f,
            reps,
            span_hidden,
            chart,
            remote,
        })
    }

    /// Loss of an example with dropout off.
    pub fn loss(&self, ex: &Example) -> Result<LossParts> {
        let fwd = self.forward(ex, ex.ids.clone(), None)?;
        compute_loss(&ex.targets, &fwd.chart, &ex.problem, &fwd.remote.scores)
    }

    /// Adds this example's gradients to the parameters' `grad` fields.
    /// With `rng`, word dropout and dropout are active.
    pub fn accumulate_gradients(&mut self, ex: &Example, mut rng: Option<&mut ChaCha8Rng>) -> Result<LossParts> {
        let mut ids = ex.ids.clone();
        if let Some(r) = rng.as_deref_mut() {
            ids.word_dropout(&self.vocabs.word, self.config.word_dropout, r);
        }
        let fwd = self.forward(ex, ids, rng)?;
        let (parts, grads) = loss_and_grads(&ex.targets, &fwd.chart, &ex.problem, &fwd.remote.scores)?;
        self.backward(ex, &fwd, &grads);
        Ok(parts)
    }

    fn backward(&mut self, ex: &Example, fwd: &Forward, grads: &LossGrads) {
        let dreps = self.spans.backward(&fwd.reps, &fwd.span_hidden, &grads.span_logits);
        let mut df = Array2::zeros(fwd.fenceposts.raw_dim());
        span_representations_backward(&mut df, &all_spans(ex.len()), &dreps);
        self.remote
            .backward(&ex.problem, &fwd.remote, &grads.gate_logits, &grads.attach_logits, &mut df);
        let dys = fenceposts_backward(&df);
        let dx = self.encoder.backward(&fwd.encoder, &dys);
        self.embeddings.backward(&fwd.ids, &dx);
    }

    /// Context vectors and the span chart of a passage (inference mode).
    pub fn encode(&self, passage: &Passage, external: Option<&Array2<f64>>) -> Result<(Array2<f64>, SpanChart)> {
        if passage.is_empty() {
            return Err(Error::EmptyChart);
        }
        self.check_external(passage.len(), external)?;
        let ids = self.vocabs.ids(&passage.terminals);
        let x = self.embeddings.embed(&ids, external)?;
        let (ys, _) = self.encoder.forward(&x, None)?;
        let chart = self.spans.chart(&ys);
        Ok((ys, chart))
    }

    /// Decodes a tree, optionally recovers remote edges, and rebuilds the graph.
    pub fn parse(&self, passage: &Passage, external: Option<&Array2<f64>>, options: ParseOptions) -> Result<Parsed> {
        let (ys, chart) = self.encode(passage, external)?;
        let tree = cyk_decode(&chart.relative_to_empty())?.tree(&self.labels)?;
        let remotes = if options.remotes {
            recover_remotes(&tree, &fenceposts(&ys), &self.remote, options.threshold)?
        } else {
            Vec::new()
        };
        let restored = tree_to_graph(&tree, &remotes, &[], Strictness::Lenient)?;
        let mut out = passage.clone();
        out.graph = Some(restored.graph);
        Ok(Parsed {
            tree,
            remotes,
            passage: out,
            warnings: restored.dropped,
        })
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            remotes: true,
            threshold: self.config.remote_threshold,
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.size()
    }
}
