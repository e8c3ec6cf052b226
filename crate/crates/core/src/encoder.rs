//! Token embeddings, the self-attention encoder and the span scorer.

use std::collections::{BTreeMap, HashMap};

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{all_spans, SpanChart};
use crate::error::{Error, Result};
use crate::graph::Terminal;
use crate::nn::{
    apply_mask, dropout_mask, impl_params, relu, relu_backward, softmax_rows, softmax_rows_backward,
    LayerNorm, LayerNormCache, Linear, Param,
};
use crate::tree::Span;

/// Symbol table with the unknown symbol at id 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    items: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    items: Vec<String>,
    counts: Vec<usize>,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        let index = f.items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocabulary {
            items: f.items,
            counts: f.counts,
            index,
        }
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            items: v.items,
            counts: v.counts,
        }
    }
}

pub const UNKNOWN: &str = "<unk>";

impl Vocabulary {
    /// Symbols sorted by text after the unknown entry, with their counts.
    pub fn from_counts(counts: &BTreeMap<String, usize>) -> Self {
        let mut items = vec![UNKNOWN.to_owned()];
        let mut cs = vec![0];
        for (s, &c) in counts {
            if s != UNKNOWN {
                items.push(s.clone());
                cs.push(c);
            }
        }
        VocabularyFile { items, counts: cs }.into()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.len() <= 1
    }

    /// Id of `symbol`, or 0 if unseen.
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(0)
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }
}

/// One vocabulary per token feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub word: Vocabulary,
    pub pos: Vocabulary,
    pub dep: Vocabulary,
    pub entity: Vocabulary,
    pub iob: Vocabulary,
}

impl Vocabularies {
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a Terminal>) -> Self {
        let mut maps: [BTreeMap<String, usize>; 5] = Default::default();
        for t in tokens {
            for (m, v) in maps.iter_mut().zip(features(t)) {
                *m.entry(v.to_owned()).or_default() += 1;
            }
        }
        let [word, pos, dep, entity, iob] = maps.map(|m| Vocabulary::from_counts(&m));
        Vocabularies {
            word,
            pos,
            dep,
            entity,
            iob,
        }
    }

    pub fn ids(&self, tokens: &[Terminal]) -> TokenIds {
        let mut ids = TokenIds::default();
        for t in tokens {
            let [w, p, d, e, i] = features(t);
            ids.word.push(self.word.id(w));
            ids.pos.push(self.pos.id(p));
            ids.dep.push(self.dep.id(d));
            ids.entity.push(self.entity.id(e));
            ids.iob.push(self.iob.id(i));
        }
        ids
    }
}

fn features(t: &Terminal) -> [&str; 5] {
    [&t.surface, &t.pos_tag, &t.dep_label, &t.entity_type, t.entity_iob.code()]
}

/// Per-token vocabulary ids of the five features.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenIds {
    pub word: Vec<usize>,
    pub pos: Vec<usize>,
    pub dep: Vec<usize>,
    pub entity: Vec<usize>,
    pub iob: Vec<usize>,
}

impl TokenIds {
    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    /// Replaces words by the unknown id with probability `alpha / (1 + count)`.
    pub fn word_dropout(&mut self, vocab: &Vocabulary, alpha: f64, rng: &mut impl Rng) {
        if alpha <= 0.0 {
            return;
        }
        for w in &mut self.word {
            if *w != 0 {
                let p = (alpha / (1.0 + vocab.count(*w) as f64)).min(1.0);
                if rng.random_bool(p) {
                    *w = 0;
                }
            }
        }
    }
}

/// Embedding widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub word: usize,
    pub pos: usize,
    pub dep: usize,
    pub entity: usize,
    pub iob: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        EmbeddingDims {
            word: 100,
            pos: 50,
            dep: 50,
            entity: 25,
            iob: 25,
        }
    }
}

impl EmbeddingDims {
    pub fn total(&self) -> usize {
        self.word + self.pos + self.dep + self.entity + self.iob
    }
}

/// One table per feature; row 0 is the unknown row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub word: Param,
    pub pos: Param,
    pub dep: Param,
    pub entity: Param,
    pub iob: Param,
}

impl_params!(EmbeddingTables {
    word,
    pos,
    dep,
    entity,
    iob
});

impl EmbeddingTables {
    /// Rows start with unit variance.
    pub fn new(rng: &mut impl Rng, vocabs: &Vocabularies, dims: EmbeddingDims) -> Self {
        let mut table = |v: &Vocabulary, d: usize| Param::uniform(rng, v.len(), d, 3f64.sqrt());
        EmbeddingTables {
            word: table(&vocabs.word, dims.word),
            pos: table(&vocabs.pos, dims.pos),
            dep: table(&vocabs.dep, dims.dep),
            entity: table(&vocabs.entity, dims.entity),
            iob: table(&vocabs.iob, dims.iob),
        }
    }

    fn tables(&self) -> [&Param; 5] {
        [&self.word, &self.pos, &self.dep, &self.entity, &self.iob]
    }

    pub fn dim(&self) -> usize {
        self.tables().iter().map(|t| t.value.ncols()).sum()
    }

    /// `x_t = word ⊕ pos ⊕ dep ⊕ entity ⊕ iob (⊕ external row)`.
    pub fn embed(&self, ids: &TokenIds, external: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        let n = ids.len();
        if let Some(ext) = external {
            if ext.nrows() != n {
                return Err(Error::Dimension(format!(
                    "{} external vectors for {} tokens",
                    ext.nrows(),
                    n
                )));
            }
        }
        let width = self.dim() + external.map_or(0, |e| e.ncols());
        let mut x = Array2::zeros((n, width));
        let cols = [&ids.word, &ids.pos, &ids.dep, &ids.entity, &ids.iob];
        for t in 0..n {
            let mut off = 0;
            for (table, col) in self.tables().iter().zip(cols) {
                let d = table.value.ncols();
                x.slice_mut(s![t, off..off + d]).assign(&table.value.row(col[t]));
                off += d;
            }
            if let Some(ext) = external {
                x.slice_mut(s![t, off..]).assign(&ext.row(t));
            }
        }
        Ok(x)
    }

    /// Scatters `dx` back into the rows that were looked up.
    pub fn backward(&mut self, ids: &TokenIds, dx: &Array2<f64>) {
        let cols = [&ids.word, &ids.pos, &ids.dep, &ids.entity, &ids.iob];
        let tables = [&mut self.word, &mut self.pos, &mut self.dep, &mut self.entity, &mut self.iob];
        let mut off = 0;
        for (table, col) in tables.into_iter().zip(cols) {
            let d = table.value.ncols();
            for (t, &id) in col.iter().enumerate() {
                let mut row = table.grad.row_mut(id);
                row += &dx.slice(s![t, off..off + d]);
            }
            off += d;
        }
    }
}

/// Sinusoidal position table of shape `(n, d)`.
pub fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl_params!(MultiHeadAttention { wq, wk, wv, wo });

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities, one `(n, n)` matrix per head.
    pub probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut impl Rng, d: usize, heads: usize) -> Self {
        MultiHeadAttention {
            wq: Linear::new(rng, d, d),
            wk: Linear::new(rng, d, d),
            wv: Linear::new(rng, d, d),
            wo: Linear::new(rng, d, d),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.wq.output_dim() / self.heads
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let (q, k, v) = (
            self.wq.forward(x.view()),
            self.wk.forward(x.view()),
            self.wv.forward(x.view()),
        );
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut concat = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let p = softmax_rows(&scores);
            concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.wo.forward(concat.view());
        (
            out,
            AttentionCache {
                q,
                k,
                v,
                probs,
                concat,
            },
        )
    }

    pub fn backward(&mut self, x: &Array2<f64>, cache: &AttentionCache, dy: &Array2<f64>) -> Array2<f64> {
        let dconcat = self.wo.backward(cache.concat.view(), dy.view());
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dkm = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let p = &cache.probs[h];
            let dout = dconcat.slice(cols);
            let dp = dout.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let dscores = softmax_rows_backward(p, &dp) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
            dkm.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
        }
        self.wq.backward(x.view(), dq.view())
            + self.wk.backward(x.view(), dkm.view())
            + self.wv.backward(x.view(), dv.view())
    }
}

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl_params!(FeedForward { l1, l2 });

impl FeedForward {
    pub fn new(rng: &mut impl Rng, d: usize, hidden: usize) -> Self {
        FeedForward {
            l1: Linear::new(rng, d, hidden),
            l2: Linear::new(rng, hidden, d),
        }
    }

    /// Returns the output and the post-ReLU hidden layer.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = relu(&self.l1.forward(x.view()));
        (self.l2.forward(h.view()), h)
    }

    pub fn backward(&mut self, x: &Array2<f64>, h: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let dh = self.l2.backward(h.view(), dy.view());
        self.l1.backward(x.view(), relu_backward(h, &dh).view())
    }
}

/// Post-norm transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl_params!(EncoderLayer { attn, ln1, ff, ln2 });

#[derive(Debug, Clone)]
pub struct LayerCache {
    x: Array2<f64>,
    pub attn: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    ln1: LayerNormCache,
    h: Array2<f64>,
    ff_hidden: Array2<f64>,
    ff_mask: Option<Array2<f64>>,
    ln2: LayerNormCache,
}

impl LayerCache {
    pub(crate) fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.ff_hidden.iter().map(|&v| v > 0.0)
    }
}

impl EncoderLayer {
    pub fn new(rng: &mut impl Rng, d: usize, heads: usize, ff: usize, eps: f64) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(rng, d, heads),
            ln1: LayerNorm::new(d, eps),
            ff: FeedForward::new(rng, d, ff),
            ln2: LayerNorm::new(d, eps),
        }
    }

    /// Multiplies the value, output and feed-forward weights by `beta`, so
    /// a deep post-norm stack keeps tokens distinguishable at initialization.
    pub fn scale_branches(&mut self, beta: f64) {
        for l in [&mut self.attn.wv, &mut self.attn.wo, &mut self.ff.l1, &mut self.ff.l2] {
            l.w.value *= beta;
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
        dropout: f64,
    ) -> (Array2<f64>, LayerCache) {
        let (n, d) = x.dim();
        let (a, attn) = self.attn.forward(x);
        let attn_mask = dropout_mask(rng.as_deref_mut(), n, d, dropout);
        let (h, ln1) = self.ln1.forward(&(x + &apply_mask(a, &attn_mask)));
        let (f, ff_hidden) = self.ff.forward(&h);
        let ff_mask = dropout_mask(rng, n, d, dropout);
        let (y, ln2) = self.ln2.forward(&(&h + &apply_mask(f, &ff_mask)));
        (
            y,
            LayerCache {
                x: x.clone(),
                attn,
                attn_mask,
                ln1,
                h,
                ff_hidden,
                ff_mask,
                ln2,
            },
        )
    }

    pub fn backward(&mut self, c: &LayerCache, dy: &Array2<f64>) -> Array2<f64> {
        let dsum2 = self.ln2.backward(&c.ln2, dy);
        let df = apply_mask(dsum2.clone(), &c.ff_mask);
        let dh = dsum2 + self.ff.backward(&c.h, &c.ff_hidden, &df);
        let dsum1 = self.ln1.backward(&c.ln1, &dh);
        let da = apply_mask(dsum1.clone(), &c.attn_mask);
        dsum1 + self.attn.backward(&c.x, &c.attn, &da)
    }
}

/// Input projection, positional encoding and the layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub positional: bool,
    pub dropout: f64,
}

impl_params!(Encoder { input, layers });

#[derive(Debug, Clone)]
pub struct EncoderCache {
    x: Array2<f64>,
    input_mask: Option<Array2<f64>>,
    pub layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Attention probabilities of every layer and head.
    pub fn attention(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| l.attn.probs.iter())
    }
}

impl Encoder {
    /// Context vectors `y_t` for every token. `rng` turns dropout on.
    pub fn forward(&self, x: &Array2<f64>, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Array2<f64>, EncoderCache)> {
        if x.nrows() == 0 {
            return Err(Error::EmptyChart);
        }
        if x.ncols() != self.input.input_dim() {
            return Err(Error::Dimension(format!(
                "encoder expects {}-dimensional inputs, got {}",
                self.input.input_dim(),
                x.ncols()
            )));
        }
        let mut h = self.input.forward(x.view());
        if self.positional {
            h += &positional_encoding(h.nrows(), h.ncols());
        }
        let input_mask = dropout_mask(rng.as_deref_mut(), h.nrows(), h.ncols(), self.dropout);
        let mut h = apply_mask(h, &input_mask);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h, rng.as_deref_mut(), self.dropout);
            layers.push(c);
            h = y;
        }
        Ok((
            h,
            EncoderCache {
                x: x.clone(),
                input_mask,
                layers,
            },
        ))
    }

    /// Returns `dL/dx` for the embedding inputs.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut d = dy.clone();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d = layer.backward(c, &d);
        }
        let d = apply_mask(d, &cache.input_mask);
        self.input.backward(cache.x.view(), d.view())
    }
}

/// Fencepost vectors `f_0..f_n`: the forward half of `y_t` joined with the
/// backward half of `y_{t+1}`, zero where the token does not exist.
pub fn fenceposts(ys: &Array2<f64>) -> Array2<f64> {
    let (n, d) = ys.dim();
    let half = d / 2;
    let mut f = Array2::zeros((n + 1, d));
    f.slice_mut(s![1.., ..half]).assign(&ys.slice(s![.., ..half]));
    f.slice_mut(s![..n, half..]).assign(&ys.slice(s![.., half..]));
    f
}

pub fn fenceposts_backward(df: &Array2<f64>) -> Array2<f64> {
    let (m, d) = df.dim();
    let half = d / 2;
    let mut dy = Array2::zeros((m - 1, d));
    dy.slice_mut(s![.., ..half]).assign(&df.slice(s![1.., ..half]));
    dy.slice_mut(s![.., half..]).assign(&df.slice(s![..m - 1, half..]));
    dy
}

/// Span vectors `f_i ⊕ f_j`.
pub fn span_representations(f: &Array2<f64>, spans: &[Span]) -> Array2<f64> {
    let d = f.ncols();
    let mut out = Array2::zeros((spans.len(), 2 * d));
    for (r, s) in spans.iter().enumerate() {
        out.slice_mut(s![r, ..d]).assign(&f.row(s.start));
        out.slice_mut(s![r, d..]).assign(&f.row(s.end));
    }
    out
}

pub fn span_representations_backward(df: &mut Array2<f64>, spans: &[Span], dreps: &Array2<f64>) {
    let d = df.ncols();
    for (r, s) in spans.iter().enumerate() {
        let mut a = df.row_mut(s.start);
        a += &dreps.slice(s![r, ..d]);
        let mut b = df.row_mut(s.end);
        b += &dreps.slice(s![r, d..]);
    }
}

/// Two-layer MLP giving a score per label for each span.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScorer {
    pub hidden: Linear,
    pub out: Linear,
}

impl_params!(SpanScorer { hidden, out });

impl SpanScorer {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize, labels: usize) -> Self {
        SpanScorer {
            hidden: Linear::new(rng, input, hidden),
            out: Linear::new(rng, hidden, labels),
        }
    }

    /// Logits of every span plus the hidden activations.
    pub fn forward(&self, reps: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = relu(&self.hidden.forward(reps.view()));
        (self.out.forward(h.view()), h)
    }

    pub fn backward(&mut self, reps: &Array2<f64>, h: &Array2<f64>, dlogits: &Array2<f64>) -> Array2<f64> {
        let dh = self.out.backward(h.view(), dlogits.view());
        self.hidden.backward(reps.view(), relu_backward(h, &dh).view())
    }

    /// Chart over every span of a sentence encoded as `ys`.
    pub fn chart(&self, ys: &Array2<f64>) -> SpanChart {
        let n = ys.nrows();
        let spans = all_spans(n);
        let reps = span_representations(&fenceposts(ys), &spans);
        let (logits, _) = self.forward(&reps);
        let l = logits.ncols();
        SpanChart::from_rows(n, l, logits.into_raw_vec_and_offset().0).expect("one row per span")
    }
}

/// Stacks token embeddings with optional external vectors.
pub fn with_external(x: Array2<f64>, ext: Option<&Array2<f64>>) -> Array2<f64> {
    match ext {
        Some(e) => concatenate(Axis(1), &[x.view(), e.view()]).expect("row counts agree"),
        None => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(rng: &mut ChaCha8Rng, input: usize, positional: bool) -> Encoder {
        Encoder {
            input: Linear::new(rng, input, 16),
            layers: (0..8).map(|_| EncoderLayer::new(rng, 16, 8, 32, 1e-5)).collect(),
            positional,
            dropout: 0.1,
        }
    }

    fn tokens(n: usize) -> Vec<Terminal> {
        (1..=n)
            .map(|i| {
                Terminal::new(i, format!("w{}", i)).with_features("NOUN", "obj", "", crate::graph::Iob::O)
            })
            .collect()
    }

    #[test]
    fn embedding_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let toks = tokens(1);
        let vocabs = Vocabularies::build(&toks);
        let tables = EmbeddingTables::new(&mut rng, &vocabs, EmbeddingDims::default());
        let ids = vocabs.ids(&toks);
        assert_eq!(tables.embed(&ids, None).unwrap().dim(), (1, 250));
        let ext = Array2::ones((1, 768));
        assert_eq!(tables.embed(&ids, Some(&ext)).unwrap().dim(), (1, 1018));
        assert!(tables.embed(&ids, Some(&Array2::ones((2, 3)))).is_err());
        let oov = vocabs.ids(&[Terminal::new(1, "zzz")]);
        assert_eq!(oov.word, vec![0]);
        let x = tables.embed(&oov, None).unwrap();
        assert_eq!(x.dim(), (1, 250));
        assert_eq!(x.slice(s![0, ..100]), tables.word.value.row(0));
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = encoder(&mut rng, 6, true);
        let x = Array2::from_shape_simple_fn((1, 6), || rng.random_range(-1.0..1.0));
        let (ys, cache) = enc.forward(&x, None).unwrap();
        assert_eq!(ys.dim(), (1, 16));
        assert_eq!(cache.attention().count(), 64);
        for p in cache.attention() {
            assert_eq!(p, &Array2::<f64>::ones((1, 1)));
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = encoder(&mut rng, 6, true);
        let x = Array2::from_shape_simple_fn((7, 6), || rng.random_range(-1.0..1.0));
        let (_, cache) = enc.forward(&x, None).unwrap();
        for p in cache.attention() {
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_projections_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = encoder(&mut rng, 6, true);
        for l in &mut enc.layers {
            l.attn.wq.w.value.fill(0.0);
            l.attn.wk.w.value.fill(0.0);
        }
        let x = Array2::from_shape_simple_fn((4, 6), || rng.random_range(-1.0..1.0));
        let (_, cache) = enc.forward(&x, None).unwrap();
        for p in cache.attention() {
            assert_abs_diff_eq!(*p, Array2::from_elem((4, 4), 0.25), epsilon = 1e-12);
        }
    }

    #[test]
    fn equivariant_without_positions_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
        let perm = [3, 0, 4, 1, 2];
        let px = x.select(Axis(0), &perm);
        let mut enc = encoder(&mut rng, 6, false);
        let (y, _) = enc.forward(&x, None).unwrap();
        let (py, _) = enc.forward(&px, None).unwrap();
        assert_abs_diff_eq!(y.select(Axis(0), &perm), py, epsilon = 1e-10);
        enc.positional = true;
        let (y, _) = enc.forward(&x, None).unwrap();
        let (py, _) = enc.forward(&px, None).unwrap();
        let gap = (&y.select(Axis(0), &perm) - &py).mapv(f64::abs).sum();
        assert!(gap > 1e-3, "positions had no effect: {}", gap);
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = encoder(&mut rng, 6, true);
        let x = Array2::from_shape_simple_fn((3, 6), || rng.random_range(-1.0..1.0));
        let a = enc.forward(&x, None).unwrap().0;
        let b = enc.forward(&x, None).unwrap().0;
        assert_eq!(a, b);
        let mut drng = ChaCha8Rng::seed_from_u64(9);
        let c = enc.forward(&x, Some(&mut drng)).unwrap().0;
        assert_ne!(a, c);
    }

    #[test]
    fn chart_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scorer = SpanScorer::new(&mut rng, 32, 10, 4);
        let ys = Array2::from_shape_simple_fn((2, 16), || rng.random_range(-1.0..1.0));
        let chart = scorer.chart(&ys);
        assert_eq!((chart.n(), chart.n_labels()), (2, 4));
        assert_eq!(all_spans(2).len() * chart.n_labels(), 12);
        assert_eq!(chart, scorer.chart(&ys));
    }

    #[test]
    fn fenceposts_have_zero_boundaries() {
        let ys = Array2::from_shape_fn((2, 4), |(r, c)| (10 * (r + 1) + c) as f64);
        let f = fenceposts(&ys);
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 12.0, 13.0]);
        assert_eq!(f.row(1).to_vec(), vec![10.0, 11.0, 22.0, 23.0]);
        assert_eq!(f.row(2).to_vec(), vec![20.0, 21.0, 0.0, 0.0]);
        let back = fenceposts_backward(&Array2::ones((3, 4)));
        assert_eq!(back, Array2::<f64>::ones((2, 4)));
    }
}
