//! Exact CYK decoding over span-label score charts.
//!
//! Because a span's label does not interact with how the span is split, the
//! best tree maximises the sum over its spans of the best label score, and
//! CYK only has to search over split points. Ties prefer the lower split
//! point, then the lower label id. The root span may not take the dummy
//! label (id 0); every other span may.

use crate::error::{Error, Result};
use crate::label::LabelInventory;
use crate::tree::{ConstituencyTree, LabeledSpan, Span};

/// Position of span `(i, j)` in the row-major enumeration of all spans of a
/// sentence of length `n` ordered by `(i, j)`.
pub fn span_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j <= n);
    i * n - i * i.saturating_sub(1) / 2 + (j - i - 1)
}

/// Number of spans of a sentence of length `n`.
pub fn n_spans(n: usize) -> usize {
    n * (n + 1) / 2
}

/// All spans in [`span_index`] order.
pub fn all_spans(n: usize) -> Vec<Span> {
    (0..n)
        .flat_map(|i| (i + 1..=n).map(move |j| Span::new(i, j)))
        .collect()
}

/// Dense span × label score table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanChart {
    n: usize,
    n_labels: usize,
    scores: Vec<f64>,
}

impl SpanChart {
    pub fn zeros(n: usize, n_labels: usize) -> Self {
        SpanChart {
            n,
            n_labels,
            scores: vec![0.0; n_spans(n) * n_labels],
        }
    }

    /// Builds a chart from a row per span in [`span_index`] order.
    pub fn from_rows(n: usize, n_labels: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != n_spans(n) * n_labels {
            return Err(Error::Dimension(format!(
                "chart for n = {} with {} labels needs {} scores, got {}",
                n,
                n_labels,
                n_spans(n) * n_labels,
                scores.len()
            )));
        }
        Ok(SpanChart { n, n_labels, scores })
    }

    pub fn from_fn(n: usize, n_labels: usize, mut f: impl FnMut(Span, usize) -> f64) -> Self {
        let mut scores = Vec::with_capacity(n_spans(n) * n_labels);
        for s in all_spans(n) {
            for l in 0..n_labels {
                scores.push(f(s, l));
            }
        }
        SpanChart { n, n_labels, scores }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn row(&self, span: Span) -> &[f64] {
        let k = span_index(self.n, span.start, span.end) * self.n_labels;
        &self.scores[k..k + self.n_labels]
    }

    pub fn get(&self, span: Span, label: usize) -> f64 {
        self.row(span)[label]
    }

    pub fn set(&mut self, span: Span, label: usize, value: f64) {
        let k = span_index(self.n, span.start, span.end) * self.n_labels;
        self.scores[k + label] = value;
    }

    /// Every score minus the `∅` score of its span, so `∅` scores 0 and other
    /// labels score their log-odds against `∅`.
    pub fn relative_to_empty(&self) -> SpanChart {
        let mut scores = self.scores.clone();
        for row in scores.chunks_exact_mut(self.n_labels) {
            let empty = row[0];
            for v in row {
                *v -= empty;
            }
        }
        SpanChart {
            n: self.n,
            n_labels: self.n_labels,
            scores,
        }
    }

    /// Highest-scoring label of `span` (lowest id on ties), skipping the
    /// dummy label when `allow_empty` is false.
    pub fn best_label(&self, span: Span, allow_empty: bool) -> (usize, f64) {
        let row = self.row(span);
        let first = usize::from(!allow_empty);
        let mut best = (first, row[first]);
        for (l, &s) in row.iter().enumerate().skip(first + 1) {
            if s > best.1 {
                best = (l, s);
            }
        }
        best
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::EmptyChart);
        }
        if self.n_labels < 2 {
            return Err(Error::Dimension("chart needs at least one non-dummy label".into()));
        }
        Ok(())
    }
}

/// Output of a decoder: a binary tree of labeled spans.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTree {
    pub n: usize,
    /// Spans with label ids, parents first.
    pub spans: Vec<(Span, usize)>,
    /// Canonical score of the tree, see [`tree_score`].
    pub score: f64,
}

impl DecodedTree {
    /// The binarized tree with `∅` spans still present.
    pub fn binarized(&self, inventory: &LabelInventory) -> Result<ConstituencyTree> {
        ConstituencyTree::new(
            self.n,
            self.spans
                .iter()
                .map(|&(span, l)| LabeledSpan {
                    span,
                    label: inventory.label(l).clone(),
                })
                .collect(),
        )
    }

    /// The n-ary tree after dropping `∅` spans.
    pub fn tree(&self, inventory: &LabelInventory) -> Result<ConstituencyTree> {
        Ok(self.binarized(inventory)?.debinarize())
    }
}

/// Sum of the chart scores of `spans`, added in `(start, end)` order so that
/// equal trees always get bit-identical scores.
pub fn tree_score(chart: &SpanChart, spans: &[(Span, usize)]) -> f64 {
    let mut sorted: Vec<(Span, usize)> = spans.to_vec();
    sorted.sort();
    sorted.iter().map(|&(s, l)| chart.get(s, l)).sum()
}

/// CYK over split points: `O(n³ + n²·|L|)`.
pub fn cyk_decode(chart: &SpanChart) -> Result<DecodedTree> {
    chart.check()?;
    let n = chart.n;
    let mut best = vec![0.0; n_spans(n)];
    let mut split = vec![0usize; n_spans(n)];
    let mut label = vec![0usize; n_spans(n)];
    for width in 1..=n {
        for i in 0..=n - width {
            let j = i + width;
            let s = Span::new(i, j);
            let (l, ls) = chart.best_label(s, width < n);
            let idx = span_index(n, i, j);
            label[idx] = l;
            if width == 1 {
                best[idx] = ls;
                continue;
            }
            let mut bk = i + 1;
            let mut bv = f64::NEG_INFINITY;
            for k in i + 1..j {
                let v = best[span_index(n, i, k)] + best[span_index(n, k, j)];
                if v > bv {
                    bv = v;
                    bk = k;
                }
            }
            best[idx] = ls + bv;
            split[idx] = bk;
        }
    }
    let mut spans = Vec::with_capacity(2 * n - 1);
    let mut stack = vec![(0, n)];
    while let Some((i, j)) = stack.pop() {
        let idx = span_index(n, i, j);
        spans.push((Span::new(i, j), label[idx]));
        if j - i > 1 {
            let k = split[idx];
            stack.push((k, j));
            stack.push((i, k));
        }
    }
    let score = tree_score(chart, &spans);
    Ok(DecodedTree { n, spans, score })
}

/// Longest sentence [`brute_force_decode`] accepts.
pub const BRUTE_FORCE_MAX: usize = 10;

/// Reference decoder: scores every binary bracketing. Among exactly tied
/// maxima it returns the one whose pre-order split sequence is smallest,
/// which is the tree CYK's tie-breaking selects.
pub fn brute_force_decode(chart: &SpanChart) -> Result<DecodedTree> {
    chart.check()?;
    let n = chart.n;
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLong(n, BRUTE_FORCE_MAX));
    }
    let mut best: Option<(f64, Vec<usize>, Vec<(Span, usize)>)> = None;
    for splits in bracketings(0, n) {
        let spans = spans_of(chart, n, &splits);
        let score = tree_score(chart, &spans);
        let better = match &best {
            None => true,
            Some((bs, bsplits, _)) => score > *bs || (score == *bs && splits < *bsplits),
        };
        if better {
            best = Some((score, splits, spans));
        }
    }
    let (score, _, spans) = best.expect("at least one bracketing");
    Ok(DecodedTree { n, spans, score })
}

/// Every binary bracketing of `[i, j)` as its pre-order sequence of split points.
pub fn bracketings(i: usize, j: usize) -> Vec<Vec<usize>> {
    if j - i == 1 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for k in i + 1..j {
        let left = bracketings(i, k);
        let right = bracketings(k, j);
        for l in &left {
            for r in &right {
                let mut seq = Vec::with_capacity(j - i - 1);
                seq.push(k);
                seq.extend_from_slice(l);
                seq.extend_from_slice(r);
                out.push(seq);
            }
        }
    }
    out
}

/// Spans of a bracketing, each with its best label.
fn spans_of(chart: &SpanChart, n: usize, splits: &[usize]) -> Vec<(Span, usize)> {
    let mut spans = Vec::with_capacity(2 * n - 1);
    let mut it = splits.iter();
    let mut stack = vec![(0, n)];
    while let Some((i, j)) = stack.pop() {
        let s = Span::new(i, j);
        spans.push((s, chart.best_label(s, j - i < n).0));
        if j - i > 1 {
            let k = *it.next().expect("one split per internal span");
            stack.push((k, j));
            stack.push((i, k));
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn span_index_enumerates_in_order() {
        for n in 1..9 {
            let spans = all_spans(n);
            assert_eq!(spans.len(), n_spans(n));
            for (k, s) in spans.iter().enumerate() {
                assert_eq!(span_index(n, s.start, s.end), k);
            }
        }
    }

    #[test]
    fn catalan_many_bracketings() {
        let counts: Vec<usize> = (1..=8).map(|n| bracketings(0, n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 14, 42, 132, 429]);
    }

    #[test]
    fn single_token_takes_best_non_dummy_label() {
        let chart = SpanChart::from_rows(1, 3, vec![5.0, 1.0, 2.0]).unwrap();
        let d = cyk_decode(&chart).unwrap();
        assert_eq!(d.spans, vec![(Span::new(0, 1), 2)]);
        assert_eq!(d.score, 2.0);
    }

    #[test]
    fn rejects_degenerate_charts() {
        assert!(cyk_decode(&SpanChart::zeros(0, 3)).is_err());
        assert!(cyk_decode(&SpanChart::zeros(3, 1)).is_err());
        assert!(brute_force_decode(&SpanChart::zeros(11, 2)).is_err());
    }

    #[test]
    fn prefers_lower_split_on_ties() {
        let chart = SpanChart::zeros(3, 2);
        let d = cyk_decode(&chart).unwrap();
        assert!(d.spans.contains(&(Span::new(0, 1), 0)));
        assert!(d.spans.contains(&(Span::new(1, 3), 0)));
        assert_eq!(d.spans[0], (Span::new(0, 3), 1));
    }

    /// Exhaustive over bracketings and over every label of every span.
    fn exhaustive_max(chart: &SpanChart) -> f64 {
        let n = chart.n();
        let mut best = f64::NEG_INFINITY;
        for splits in bracketings(0, n) {
            let shape: Vec<Span> = spans_of(chart, n, &splits).into_iter().map(|(s, _)| s).collect();
            let l = chart.n_labels();
            let total = l.pow(shape.len() as u32);
            for code in 0..total {
                let mut c = code;
                let mut spans = Vec::new();
                let mut ok = true;
                for &s in &shape {
                    let lab = c % l;
                    c /= l;
                    if s.width() == n && lab == 0 {
                        ok = false;
                    }
                    spans.push((s, lab));
                }
                if ok {
                    best = best.max(tree_score(chart, &spans));
                }
            }
        }
        best
    }

    #[test]
    fn cyk_matches_exhaustive_label_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=4 {
            for _ in 0..30 {
                let chart = SpanChart::from_fn(n, 3, |_, _| rng.random_range(-4..=4) as f64);
                assert_eq!(cyk_decode(&chart).unwrap().score, exhaustive_max(&chart));
            }
        }
    }

    #[test]
    fn decoded_tree_debinarizes() {
        let inv = crate::label::LabelInventory::from_labels(&["ROOT".parse().unwrap(), "A".parse().unwrap()]);
        let mut chart = SpanChart::zeros(3, inv.len());
        let root = inv.id(&"ROOT".parse().unwrap()).unwrap();
        let a = inv.id(&"A".parse().unwrap()).unwrap();
        chart.set(Span::new(0, 3), root, 1.0);
        for i in 0..3 {
            chart.set(Span::new(i, i + 1), a, 1.0);
        }
        let t = cyk_decode(&chart).unwrap().tree(&inv).unwrap();
        assert_eq!(t.spans().len(), 4);
        assert_eq!(t.to_string(), "(ROOT (0,3) (A (0,1)) (A (1,2)) (A (2,3)))");
    }
}
