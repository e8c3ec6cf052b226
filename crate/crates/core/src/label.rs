//! Span labels of converted trees and the label inventory used by the chart.
//!
//! A span label is a top-down chain of parts, one per node sharing the span:
//! `ROOT+H`, `A`, `A+C`, `E|F` (one node, two parallel categories),
//! `C↑E` (node lifted out of an `E` unit), `C↑E#2` (same, the third candidate
//! in search order). The empty chain is the dummy label `∅`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::Category;

pub const EMPTY_LABEL: &str = "∅";
pub const ROOT_PART: &str = "ROOT";
const CHAIN_SEP: char = '+';
const CATEGORY_SEP: char = '|';
const LIFT_MARK: char = '↑';
const RANK_MARK: char = '#';

/// Reattachment information carried by a lifted node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LiftTag {
    /// Categories of the unit the node was originally attached to.
    pub parent_categories: Vec<Category>,
    /// Index of that unit in the candidate search order.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelPart {
    Root,
    Unit {
        categories: Vec<Category>,
        lift: Option<LiftTag>,
    },
}

impl LabelPart {
    pub fn unit(category: Category) -> Self {
        LabelPart::Unit {
            categories: vec![category],
            lift: None,
        }
    }

    pub fn categories(&self) -> &[Category] {
        match self {
            LabelPart::Root => &[],
            LabelPart::Unit { categories, .. } => categories,
        }
    }

    pub fn lift(&self) -> Option<&LiftTag> {
        match self {
            LabelPart::Root => None,
            LabelPart::Unit { lift, .. } => lift.as_ref(),
        }
    }
}

/// A chain of label parts. Empty means `∅`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Label(pub Vec<LabelPart>);

impl Label {
    pub fn empty() -> Self {
        Label(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parts(&self) -> &[LabelPart] {
        &self.0
    }

    /// True if any part carries category `c`.
    pub fn mentions(&self, c: Category) -> bool {
        self.0.iter().any(|p| {
            p.categories().contains(&c)
                || p.lift().is_some_and(|l| l.parent_categories.contains(&c))
        })
    }
}

fn write_categories(f: &mut fmt::Formatter, cats: &[Category]) -> fmt::Result {
    for (i, c) in cats.iter().enumerate() {
        if i > 0 {
            write!(f, "{}", CATEGORY_SEP)?;
        }
        f.write_str(c.code())?;
    }
    Ok(())
}

impl fmt::Display for LabelPart {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            LabelPart::Root => f.write_str(ROOT_PART),
            LabelPart::Unit { categories, lift } => {
                write_categories(f, categories)?;
                if let Some(tag) = lift {
                    write!(f, "{}", LIFT_MARK)?;
                    write_categories(f, &tag.parent_categories)?;
                    if tag.rank > 0 {
                        write!(f, "{}{}", RANK_MARK, tag.rank)?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(EMPTY_LABEL);
        }
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "{}", CHAIN_SEP)?;
            }
            write!(f, "{}", p)?;
        }
        Ok(())
    }
}

fn parse_categories(s: &str, whole: &str) -> Result<Vec<Category>> {
    let mut cats = s
        .split(CATEGORY_SEP)
        .map(|c| c.parse::<Category>())
        .collect::<Result<Vec<_>>>()
        .map_err(|_| Error::InvalidLabel(whole.to_owned()))?;
    let n = cats.len();
    cats.sort();
    cats.dedup();
    if cats.len() != n {
        return Err(Error::InvalidLabel(whole.to_owned()));
    }
    Ok(cats)
}

impl FromStr for LabelPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == ROOT_PART {
            return Ok(LabelPart::Root);
        }
        let (cats, lift) = match s.split_once(LIFT_MARK) {
            None => (s, None),
            Some((cats, tag)) => {
                let (pcats, rank) = match tag.split_once(RANK_MARK) {
                    None => (tag, 0),
                    Some((pcats, rank)) => {
                        let rank: usize = rank.parse().map_err(|_| Error::InvalidLabel(s.to_owned()))?;
                        if rank == 0 {
                            return Err(Error::InvalidLabel(s.to_owned()));
                        }
                        (pcats, rank)
                    }
                };
                let tag = LiftTag {
                    parent_categories: parse_categories(pcats, s)?,
                    rank,
                };
                (cats, Some(tag))
            }
        };
        Ok(LabelPart::Unit {
            categories: parse_categories(cats, s)?,
            lift,
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == EMPTY_LABEL {
            return Ok(Label::empty());
        }
        s.split(CHAIN_SEP)
            .map(str::parse)
            .collect::<Result<Vec<_>>>()
            .map(Label)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Label inventory of the span classifier. Id 0 is always `∅`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    labels: Vec<Label>,
}

impl LabelInventory {
    /// Builds an inventory from every non-empty label in `labels`, ordered by
    /// their textual form so ids are stable across runs.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Self {
        let mut set: BTreeSet<String> = BTreeSet::new();
        for l in labels {
            if !l.is_empty() {
                set.insert(l.to_string());
            }
        }
        let mut out = vec![Label::empty()];
        out.extend(set.iter().map(|s| s.parse().expect("label text round-trips")));
        LabelInventory { labels: out }
    }

    /// Number of labels including `∅`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.len() <= 1
    }

    pub fn id(&self, label: &Label) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> &Label {
        &self.labels[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_text_forms() {
        for text in ["∅", "ROOT", "ROOT+H", "A", "A+C", "E|F", "C↑E", "C↑E#2", "A|D↑P|H#1+C"] {
            let l: Label = text.parse().unwrap();
            assert_eq!(l.to_string(), text);
        }
        for bad in ["", "Q", "A↑", "A↑E#0", "A|A", "A+", "C↑E#x"] {
            assert!(bad.parse::<Label>().is_err(), "{}", bad);
        }
    }

    #[test]
    fn inventory_reserves_empty_label() {
        let labels: Vec<Label> = ["H", "A", "∅", "A"].iter().map(|s| s.parse().unwrap()).collect();
        let inv = LabelInventory::from_labels(&labels);
        assert_eq!(inv.len(), 3);
        assert!(inv.label(0).is_empty());
        assert_eq!(inv.id(&"A".parse().unwrap()), Some(1));
        assert_eq!(inv.id(&"P".parse().unwrap()), None);
    }

    fn arb_categories() -> impl Strategy<Value = Vec<Category>> {
        proptest::sample::subsequence(Category::ALL.to_vec(), 1..3)
    }

    fn arb_part() -> impl Strategy<Value = LabelPart> {
        prop_oneof![
            Just(LabelPart::Root),
            (arb_categories(), proptest::option::of((arb_categories(), 0usize..4))).prop_map(
                |(categories, lift)| LabelPart::Unit {
                    categories,
                    lift: lift.map(|(parent_categories, rank)| LiftTag {
                        parent_categories,
                        rank
                    }),
                }
            ),
        ]
    }

    proptest! {
        #[test]
        fn labels_roundtrip_through_text(parts in proptest::collection::vec(arb_part(), 0..4)) {
            let label = Label(parts);
            let back: Label = label.to_string().parse().unwrap();
            prop_assert_eq!(back, label);
        }
    }
}
