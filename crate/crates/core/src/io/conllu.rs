//! Companion features from CoNLL-U dependency files.
//!
//! Sentences are matched to passages by `# sent_id`, falling back to file
//! order. UPOS fills the POS tag and DEPREL the dependency label. Entity
//! tags are read from a `NER=` or `Entity=` MISC field in `B-TYPE` form.

use crate::error::{Error, Result};
use crate::graph::{Iob, Passage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConlluToken {
    pub form: String,
    pub upos: String,
    pub deprel: String,
    pub entity: String,
    pub iob: Iob,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConlluSentence {
    pub id: Option<String>,
    pub tokens: Vec<ConlluToken>,
}

fn entity_of(misc: &str) -> (String, Iob) {
    for field in misc.split('|') {
        let Some((key, value)) = field.split_once('=') else { continue };
        if key != "NER" && key != "Entity" {
            continue;
        }
        if let Some((tag, ty)) = value.split_once('-') {
            if let Ok(iob) = tag.parse::<Iob>() {
                return (ty.to_owned(), iob);
            }
        }
    }
    (String::new(), Iob::O)
}

pub fn parse_conllu(text: &str) -> std::result::Result<Vec<ConlluSentence>, String> {
    let mut out = Vec::new();
    let mut cur = ConlluSentence {
        id: None,
        tokens: Vec::new(),
    };
    let flush = |cur: &mut ConlluSentence, out: &mut Vec<ConlluSentence>| {
        if !cur.tokens.is_empty() || cur.id.is_some() {
            out.push(std::mem::replace(
                cur,
                ConlluSentence {
                    id: None,
                    tokens: Vec::new(),
                },
            ));
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            flush(&mut cur, &mut out);
        } else if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "sent_id" {
                    cur.id = Some(v.trim().to_owned());
                }
            }
        } else {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 10 {
                return Err(format!("line {}: expected 10 tab-separated columns, found {}", i + 1, cols.len()));
            }
            if cols[0].contains('-') || cols[0].contains('.') {
                continue;
            }
            let (entity, iob) = entity_of(cols[9]);
            cur.tokens.push(ConlluToken {
                form: cols[1].to_owned(),
                upos: cols[3].to_owned(),
                deprel: cols[7].to_owned(),
                entity,
                iob,
            });
        }
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

/// Fills POS, dependency and entity features of `passages` from CoNLL-U text.
/// Returns the number of passages updated.
pub fn apply_conllu(passages: &mut [Passage], text: &str) -> Result<usize> {
    let sentences = parse_conllu(text).map_err(|m| Error::format("<conllu>", m))?;
    let by_id = sentences.iter().all(|s| s.id.is_some());
    let mut updated = 0;
    for (k, p) in passages.iter_mut().enumerate() {
        let s = if by_id {
            sentences.iter().find(|s| s.id.as_deref() == Some(p.id.as_str()))
        } else {
            sentences.get(k)
        };
        let Some(s) = s else { continue };
        if s.tokens.len() != p.len() {
            return Err(Error::format(
                "<conllu>",
                format!("passage {} has {} tokens, its sentence has {}", p.id, p.len(), s.tokens.len()),
            ));
        }
        for (t, c) in p.terminals.iter_mut().zip(&s.tokens) {
            if t.surface != c.form {
                log::warn!("passage {}: token {} is `{}` but CoNLL-U has `{}`", p.id, t.position, t.surface, c.form);
            }
            t.pos_tag = c.upos.clone();
            t.dep_label = c.deprel.clone();
            t.entity_type = c.entity.clone();
            t.entity_iob = c.iob;
        }
        updated += 1;
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::passage;

    const TEXT: &str = "# sent_id = p1\n\
1\tJohn\tJohn\tPROPN\tNNP\t_\t2\tnsubj\t_\tNER=B-PER\n\
2-3\tdidn't\t_\t_\t_\t_\t_\t_\t_\t_\n\
2\tsleeps\tsleep\tVERB\tVBZ\t_\t0\troot\t_\t_\n\
\n";

    #[test]
    fn fills_features() {
        let mut ps = vec![passage("p1", "en", "John sleeps", "(A 1) (P 2)").unwrap()];
        assert_eq!(apply_conllu(&mut ps, TEXT).unwrap(), 1);
        let t = &ps[0].terminals;
        assert_eq!((t[0].pos_tag.as_str(), t[0].dep_label.as_str()), ("PROPN", "nsubj"));
        assert_eq!((t[0].entity_type.as_str(), t[0].entity_iob), ("PER", Iob::B));
        assert_eq!((t[1].pos_tag.as_str(), t[1].entity_iob), ("VERB", Iob::O));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut ps = vec![passage("p1", "en", "John", "(A 1)").unwrap()];
        assert!(apply_conllu(&mut ps, TEXT).is_err());
        assert!(parse_conllu("1\tx\n").is_err());
    }
}
