//! Labeled span trees over fenceposts `0..=n`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// Fencepost span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn width(self) -> usize {
        self.end - self.start
    }

    pub fn contains(self, other: Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(self, other: Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Token positions (1-based) covered by this span.
    pub fn positions(self) -> std::ops::RangeInclusive<usize> {
        self.start + 1..=self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// Orders spans parents-first: by start, then by decreasing end.
pub(crate) fn preorder_key(s: Span) -> (usize, std::cmp::Reverse<usize>) {
    (s.start, std::cmp::Reverse(s.end))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, Label)", into = "(usize, usize, Label)")]
pub struct LabeledSpan {
    pub span: Span,
    pub label: Label,
}

impl From<(usize, usize, Label)> for LabeledSpan {
    fn from((start, end, label): (usize, usize, Label)) -> Self {
        LabeledSpan {
            span: Span::new(start, end),
            label,
        }
    }
}

impl From<LabeledSpan> for (usize, usize, Label) {
    fn from(s: LabeledSpan) -> Self {
        (s.span.start, s.span.end, s.label)
    }
}

/// An n-ary tree given as a properly nested set of labeled spans with at most
/// one label per span; unary chains live inside the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct ConstituencyTree {
    n: usize,
    spans: Vec<LabeledSpan>,
}

#[derive(Serialize, Deserialize)]
struct RawTree {
    n: usize,
    spans: Vec<LabeledSpan>,
}

impl TryFrom<RawTree> for ConstituencyTree {
    type Error = Error;

    fn try_from(raw: RawTree) -> Result<Self> {
        ConstituencyTree::new(raw.n, raw.spans)
    }
}

impl From<ConstituencyTree> for RawTree {
    fn from(t: ConstituencyTree) -> Self {
        RawTree {
            n: t.n,
            spans: t.spans,
        }
    }
}

impl ConstituencyTree {
    /// Checks nesting, bounds and root presence; spans are stored in
    /// parents-first order.
    pub fn new(n: usize, mut spans: Vec<LabeledSpan>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTree("empty sentence".into()));
        }
        spans.sort_by_key(|s| preorder_key(s.span));
        for s in &spans {
            if s.span.start >= s.span.end || s.span.end > n {
                return Err(Error::InvalidTree(format!("span {} out of bounds for n = {}", s.span, n)));
            }
        }
        for w in spans.windows(2) {
            if w[0].span == w[1].span {
                return Err(Error::InvalidTree(format!("span {} labeled twice", w[0].span)));
            }
        }
        // Parents-first order lets a stack check nesting in one pass.
        let mut stack: Vec<Span> = Vec::new();
        for s in &spans {
            while let Some(&top) = stack.last() {
                if top.contains(s.span) {
                    break;
                }
                if top.overlaps(s.span) {
                    return Err(Error::InvalidTree(format!("spans {} and {} cross", top, s.span)));
                }
                stack.pop();
            }
            stack.push(s.span);
        }
        match spans.first() {
            Some(root) if root.span == Span::new(0, n) => {
                if root.label.is_empty() {
                    return Err(Error::InvalidTree("root span carries the dummy label".into()));
                }
            }
            _ => return Err(Error::InvalidTree(format!("missing root span (0,{})", n))),
        }
        Ok(ConstituencyTree { n, spans })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Spans in parents-first order; the root comes first.
    pub fn spans(&self) -> &[LabeledSpan] {
        &self.spans
    }

    pub fn root(&self) -> &LabeledSpan {
        &self.spans[0]
    }

    pub fn label_of(&self, span: Span) -> Option<&Label> {
        self.spans
            .binary_search_by_key(&preorder_key(span), |s| preorder_key(s.span))
            .ok()
            .map(|i| &self.spans[i].label)
    }

    pub fn contains_span(&self, span: Span) -> bool {
        self.label_of(span).is_some()
    }

    /// Index of each span's parent in [`ConstituencyTree::spans`].
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.spans.len());
        let mut stack: Vec<usize> = Vec::new();
        for s in &self.spans {
            while let Some(&top) = stack.last() {
                if self.spans[top].span.contains(s.span) {
                    break;
                }
                stack.pop();
            }
            out.push(stack.last().copied());
            stack.push(out.len() - 1);
        }
        out
    }

    /// Children indices of each span, left to right.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.spans.len()];
        for (i, p) in self.parents().into_iter().enumerate() {
            if let Some(p) = p {
                out[p].push(i);
            }
        }
        out
    }

    /// Adds `∅` spans until every span of width > 1 has exactly two children
    /// and every token has a width-one span. Right-branching.
    pub fn binarize(&self) -> ConstituencyTree {
        let children = self.children();
        let mut spans = self.spans.clone();
        for (i, s) in self.spans.iter().enumerate() {
            if s.span.width() == 1 {
                continue;
            }
            let mut items: Vec<Span> = children[i].iter().map(|&c| self.spans[c].span).collect();
            let mut covered = vec![false; s.span.width()];
            for c in &items {
                for p in c.start..c.end {
                    covered[p - s.span.start] = true;
                }
            }
            for (k, &cov) in covered.iter().enumerate() {
                if !cov {
                    let start = s.span.start + k;
                    items.push(Span::new(start, start + 1));
                    spans.push(LabeledSpan {
                        span: Span::new(start, start + 1),
                        label: Label::empty(),
                    });
                }
            }
            items.sort();
            for item in items.iter().skip(1).take(items.len().saturating_sub(2)) {
                spans.push(LabeledSpan {
                    span: Span::new(item.start, s.span.end),
                    label: Label::empty(),
                });
            }
        }
        ConstituencyTree::new(self.n, spans).expect("binarization preserves nesting")
    }

    /// Removes every `∅` span.
    pub fn debinarize(&self) -> ConstituencyTree {
        let spans = self
            .spans
            .iter()
            .filter(|s| !s.label.is_empty())
            .cloned()
            .collect();
        ConstituencyTree::new(self.n, spans).expect("root is never the dummy label")
    }

    pub fn is_binary(&self) -> bool {
        let children = self.children();
        let mut leaves = 0;
        for (i, s) in self.spans.iter().enumerate() {
            match (s.span.width(), children[i].len()) {
                (1, 0) => leaves += 1,
                (w, 2) if w > 1 => {}
                _ => return false,
            }
        }
        leaves == self.n
    }
}

impl fmt::Display for ConstituencyTree {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let children = self.children();
        fn go(
            t: &ConstituencyTree,
            children: &[Vec<usize>],
            i: usize,
            f: &mut fmt::Formatter,
        ) -> fmt::Result {
            let s = &t.spans[i];
            write!(f, "({} {}", s.label, s.span)?;
            for &c in &children[i] {
                f.write_str(" ")?;
                go(t, children, c, f)?;
            }
            f.write_str(")")
        }
        go(self, &children, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls(i: usize, j: usize, l: &str) -> LabeledSpan {
        LabeledSpan {
            span: Span::new(i, j),
            label: l.parse().unwrap(),
        }
    }

    #[test]
    fn rejects_crossing_and_missing_root() {
        assert!(ConstituencyTree::new(3, vec![ls(0, 3, "H"), ls(0, 2, "A"), ls(1, 3, "P")]).is_err());
        assert!(ConstituencyTree::new(3, vec![ls(0, 2, "A")]).is_err());
        assert!(ConstituencyTree::new(2, vec![ls(0, 2, "∅")]).is_err());
        assert!(ConstituencyTree::new(2, vec![ls(0, 2, "H"), ls(1, 1, "A")]).is_err());
        assert!(ConstituencyTree::new(2, vec![ls(0, 2, "H"), ls(0, 2, "A")]).is_err());
    }

    #[test]
    fn binary_tree_unchanged() {
        let t = ConstituencyTree::new(2, vec![ls(0, 2, "H"), ls(0, 1, "A"), ls(1, 2, "P")]).unwrap();
        assert!(t.is_binary());
        assert_eq!(t.binarize(), t);
        assert_eq!(t.binarize().debinarize(), t);
    }

    #[test]
    fn ternary_node_gets_one_dummy_span() {
        let t = ConstituencyTree::new(
            3,
            vec![ls(0, 3, "H"), ls(0, 1, "A"), ls(1, 2, "P"), ls(2, 3, "A")],
        )
        .unwrap();
        let b = t.binarize();
        assert_eq!(b.spans().len(), 5);
        assert_eq!(b.label_of(Span::new(1, 3)), Some(&Label::empty()));
        assert!(b.is_binary());
        assert_eq!(b.debinarize(), t);
    }

    #[test]
    fn uncovered_tokens_get_dummy_leaves() {
        let t = ConstituencyTree::new(3, vec![ls(0, 3, "H"), ls(1, 2, "P")]).unwrap();
        let b = t.binarize();
        assert!(b.is_binary());
        assert_eq!(b.debinarize(), t);
    }

    /// Random properly nested trees: recursively split a span into parts.
    pub(crate) fn arb_tree(max_n: usize) -> impl Strategy<Value = ConstituencyTree> {
        (1..=max_n, any::<u64>()).prop_map(|(n, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels = ["A", "P", "H", "C+E", "D↑A"];
            let mut spans = vec![ls(0, n, "ROOT")];
            let mut todo = vec![Span::new(0, n)];
            while let Some(s) = todo.pop() {
                if s.width() == 1 {
                    continue;
                }
                let mut cuts: Vec<usize> = (s.start + 1..s.end).filter(|_| rng.random_bool(0.5)).collect();
                if cuts.is_empty() {
                    cuts.push(rng.random_range(s.start + 1..s.end));
                }
                let mut bounds = vec![s.start];
                bounds.extend(cuts);
                bounds.push(s.end);
                for w in bounds.windows(2) {
                    let c = Span::new(w[0], w[1]);
                    // Occasionally leave a part unlabeled to exercise gaps.
                    if rng.random_bool(0.85) {
                        spans.push(LabeledSpan {
                            span: c,
                            label: labels[rng.random_range(0..labels.len())].parse().unwrap(),
                        });
                    }
                    todo.push(c);
                }
            }
            ConstituencyTree::new(n, spans).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn binarization_roundtrips(t in arb_tree(12)) {
            let b = t.binarize();
            prop_assert!(b.is_binary());
            for s in b.spans() {
                if t.label_of(s.span).is_none() {
                    prop_assert!(s.label.is_empty());
                }
            }
            prop_assert_eq!(b.debinarize(), t);
        }
    }
}
