//! Hand-written and randomly generated passages: the bundled toy corpus, a
//! small three-language suite for transfer experiments, and a generator of
//! valid graphs for property tests.
//!
//! Graphs are written in a bracket notation over token positions:
//!
//! ```text
//! (H (A#he 1) (P 2)) (L 3) (H (P 4) (A* he))
//! ```
//!
//! Top-level groups are children of the root. `(C 4)` attaches terminal 4
//! with category `C`; `(C (E 3) (C 4))` is a unit; `#name` names a node and
//! `(A* name)` adds a remote `A` edge from the enclosing unit to it.
//! Categories may be joined with `|` for parallel edges.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Category, Edge, Iob, Language, NodeId, Passage, Terminal, UccaGraph};

/// Builds a passage from `surface/POS/dep[/ENTITY]` tokens and a bracketed graph.
pub fn passage(id: &str, language: &str, tokens: &str, graph: &str) -> Result<Passage> {
    let mut terminals = Vec::new();
    let mut prev_entity = String::new();
    for (i, tok) in tokens.split_whitespace().enumerate() {
        let fields: Vec<&str> = tok.split('/').collect();
        let get = |k: usize| fields.get(k).copied().unwrap_or("");
        let entity = get(3);
        let iob = if entity.is_empty() {
            Iob::O
        } else if entity == prev_entity {
            Iob::I
        } else {
            Iob::B
        };
        prev_entity = entity.to_owned();
        terminals.push(Terminal::new(i + 1, get(0)).with_features(get(1), get(2), entity, iob));
    }
    let graph = parse_bracketed(graph, terminals.len())?;
    Ok(Passage {
        id: id.to_owned(),
        language: Language::new(language),
        terminals,
        graph: Some(graph),
    })
}

/// Parses the bracket notation described in the module docs.
pub fn parse_bracketed(text: &str, n_tokens: usize) -> Result<UccaGraph> {
    let bad = |msg: &str| Error::InvalidGraph(format!("bracketed graph: {}", msg));
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    let toks: Vec<&str> = spaced.split_whitespace().collect();

    let root = NodeId::new("root");
    let mut nodes = vec![root.clone()];
    nodes.extend((1..=n_tokens).map(NodeId::terminal));
    let mut edges = Vec::new();
    let mut names: HashMap<String, NodeId> = HashMap::new();
    let mut pending_remotes: Vec<(NodeId, String, Vec<Category>)> = Vec::new();
    let mut stack: Vec<NodeId> = vec![root.clone()];
    let mut units = 0;

    let mut i = 0;
    while i < toks.len() {
        match toks[i] {
            "(" => {
                let head = toks.get(i + 1).ok_or_else(|| bad("dangling `(`"))?;
                let (cats, name) = match head.split_once('#') {
                    Some((c, n)) => (c, Some(n)),
                    None => (*head, None),
                };
                let remote = cats.ends_with('*');
                let cats: Vec<Category> = cats
                    .trim_end_matches('*')
                    .split('|')
                    .map(str::parse)
                    .collect::<Result<_>>()?;
                let parent = stack.last().unwrap().clone();
                let next = toks.get(i + 2).ok_or_else(|| bad("unterminated group"))?;
                if remote {
                    pending_remotes.push((parent, next.to_string(), cats));
                    if toks.get(i + 3) != Some(&")") {
                        return Err(bad("remote groups take exactly one name"));
                    }
                    i += 4;
                    continue;
                }
                if let Ok(pos) = next.parse::<usize>() {
                    if toks.get(i + 3) != Some(&")") {
                        return Err(bad("terminal groups take exactly one position"));
                    }
                    if pos == 0 || pos > n_tokens {
                        return Err(bad(&format!("position {} out of range", pos)));
                    }
                    let t = NodeId::terminal(pos);
                    for c in cats {
                        edges.push(Edge {
                            parent: parent.clone(),
                            child: t.clone(),
                            category: c,
                            remote: false,
                        });
                    }
                    if let Some(name) = name {
                        names.insert(name.to_owned(), t);
                    }
                    i += 4;
                    continue;
                }
                units += 1;
                let u = NodeId::new(format!("n{}", units));
                nodes.push(u.clone());
                for c in cats {
                    edges.push(Edge {
                        parent: parent.clone(),
                        child: u.clone(),
                        category: c,
                        remote: false,
                    });
                }
                if let Some(name) = name {
                    names.insert(name.to_owned(), u.clone());
                }
                stack.push(u);
                i += 2;
            }
            ")" => {
                if stack.len() <= 1 {
                    return Err(bad("unbalanced `)`"));
                }
                stack.pop();
                i += 1;
            }
            other => return Err(bad(&format!("unexpected token `{}`", other))),
        }
    }
    if stack.len() != 1 {
        return Err(bad("unbalanced `(`"));
    }
    for (parent, name, cats) in pending_remotes {
        let child = names
            .get(&name)
            .ok_or_else(|| bad(&format!("unknown name `{}`", name)))?;
        for c in cats {
            edges.push(Edge {
                parent: parent.clone(),
                child: child.clone(),
                category: c,
                remote: true,
            });
        }
    }
    Ok(UccaGraph::new(nodes, edges, root))
}

/// The two-scene example with one remote participant: "He" is a primary
/// participant of the first scene and a remote participant of the second.
pub fn figure_one() -> Passage {
    let tokens = "He/PRON/nsubj has/AUX/aux tied/VERB/ROOT a/DET/det sheet/NOUN/dobj \
                  around/ADP/prep a/DET/det beam/NOUN/pobj and/CCONJ/cc hanged/VERB/conj \
                  himself/PRON/dobj ./PUNCT/punct";
    let mut p = passage(
        "figure-1",
        "en",
        tokens,
        "(H#s1 (A#he 1) (F 2) (P 3) (A (E 4) (C 5)) (A (R 6) (E 7) (C 8))) \
         (L 9) (H#s2 (P 10) (A 11) (A* he)) (U 12)",
    )
    .expect("fixture parses");
    // Stable ids for the two scenes.
    let g = p.graph.as_mut().unwrap();
    let rename = |id: &NodeId| match id.as_str() {
        "n1" => NodeId::new("h1"),
        "n4" => NodeId::new("h2"),
        _ => id.clone(),
    };
    g.nodes = g.nodes.iter().map(rename).collect();
    for e in &mut g.edges {
        e.parent = rename(&e.parent);
        e.child = rename(&e.child);
    }
    p
}

const TOY: &[(&str, &str)] = &[
    (
        "John/PROPN/nsubj/PERSON ate/VERB/ROOT an/DET/det apple/NOUN/dobj ./PUNCT/punct",
        "(H (A 1) (P 2) (A (E 3) (C 4))) (U 5)",
    ),
    (
        "Mary/PROPN/nsubj/PERSON wanted/VERB/ROOT to/PART/aux leave/VERB/xcomp ./PUNCT/punct",
        "(H (A#m 1) (P 2) (A (F 3) (P 4) (A* m))) (U 5)",
    ),
    (
        "He/PRON/nsubj tied/VERB/ROOT a/DET/det sheet/NOUN/dobj and/CCONJ/cc hanged/VERB/conj \
         himself/PRON/dobj ./PUNCT/punct",
        "(H (A#he 1) (P 2) (A (E 3) (C 4))) (L 5) (H (P 6) (A 7) (A* he)) (U 8)",
    ),
    (
        "She/PRON/nsubj gave/VERB/ROOT the/DET/det plan/NOUN/dobj up/ADP/prt ./PUNCT/punct",
        "(H (A 1) (P (C 2) (F 5)) (A (E 3) (C 4))) (U 6)",
    ),
    (
        "Take/VERB/ROOT the/DET/det book/NOUN/dobj back/ADV/prt ./PUNCT/punct",
        "(H (P (C 1) (F 4)) (A (E 2) (C 3))) (U 5)",
    ),
    (
        "The/DET/det old/ADJ/amod man/NOUN/nsubj walked/VERB/ROOT slowly/ADV/advmod ./PUNCT/punct",
        "(H (A (E 1) (E 2) (C 3)) (P 4) (D 5)) (U 6)",
    ),
    (
        "Anna/PROPN/nsubj/PERSON and/CCONJ/cc Bob/PROPN/conj/PERSON met/VERB/ROOT in/ADP/prep \
         Paris/PROPN/pobj/GPE ./PUNCT/punct",
        "(H (A (C 1) (N 2) (C 3)) (P 4) (A (R 5) (C 6))) (U 7)",
    ),
    (
        "Tom/PROPN/nsubj/PERSON promised/VERB/ROOT to/PART/aux call/VERB/xcomp Sue/PROPN/dobj/PERSON \
         ./PUNCT/punct",
        "(H (A#t 1) (P 2) (A (F 3) (P 4) (A 5) (A* t))) (U 6)",
    ),
    (
        "The/DET/det cat/NOUN/nsubj slept/VERB/ROOT because/SCONJ/mark it/PRON/nsubj was/AUX/cop \
         tired/ADJ/advcl ./PUNCT/punct",
        "(H (A (E 1) (C 2)) (P 3)) (L 4) (H (A 5) (F 6) (S 7)) (U 8)",
    ),
    (
        "Dogs/NOUN/nsubj bark/VERB/ROOT loudly/ADV/advmod at/ADP/prep night/NOUN/pobj ./PUNCT/punct",
        "(H (A 1) (P 2) (D 3) (D (R 4) (C 5))) (U 6)",
    ),
];

/// Ten short annotated English passages; three carry a remote edge and two a
/// discontinuous unit.
pub fn toy_corpus() -> Vec<Passage> {
    TOY.iter()
        .enumerate()
        .map(|(i, (tokens, graph))| {
            passage(&format!("toy-{:02}", i + 1), "en", tokens, graph).expect("toy passage parses")
        })
        .collect()
}

/// Lexicon of one synthetic language.
struct Lexicon {
    code: &'static str,
    nouns: &'static [&'static str],
    names: &'static [&'static str],
    dets: &'static [&'static str],
    adjs: &'static [&'static str],
    verbs: &'static [&'static str],
    /// Verbs that denote states in this language.
    states: &'static [&'static str],
    conj: &'static str,
    to: &'static str,
    /// Object before verb.
    verb_final: bool,
    /// Adjective after noun.
    adj_after: bool,
}

const LEXICA: [Lexicon; 3] = [
    Lexicon {
        code: "xa",
        nouns: &["dog", "cat", "book", "house", "tree", "river"],
        names: &["Ada", "Bo", "Cy"],
        dets: &["the", "a"],
        adjs: &["big", "old", "red"],
        verbs: &["sees", "takes", "finds", "likes"],
        states: &["owns", "knows"],
        conj: "and",
        to: "to",
        verb_final: false,
        adj_after: false,
    },
    Lexicon {
        code: "xb",
        nouns: &["hund", "katze", "buch", "haus", "baum", "fluss"],
        names: &["Ana", "Ben", "Cem"],
        dets: &["der", "ein"],
        adjs: &["gross", "alt", "rot"],
        verbs: &["sieht", "nimmt", "findet", "mag"],
        states: &["besitzt", "kennt"],
        conj: "und",
        to: "zu",
        verb_final: false,
        adj_after: false,
    },
    Lexicon {
        code: "xc",
        nouns: &["chien", "chat", "livre", "maison", "arbre", "fleuve"],
        names: &["Ami", "Bea", "Coco"],
        dets: &["le", "un"],
        adjs: &["grand", "vieux", "rouge"],
        verbs: &["voit", "prend", "trouve", "aime"],
        states: &["possede", "connait"],
        conj: "et",
        to: "de",
        verb_final: true,
        adj_after: true,
    },
];

/// Language codes of the synthetic suite.
pub fn suite_languages() -> [&'static str; 3] {
    [LEXICA[0].code, LEXICA[1].code, LEXICA[2].code]
}

/// `count` generated passages of synthetic language `code` (one of
/// [`suite_languages`]). Sentence shapes are shared across languages; word
/// order, lexicon and which verbs are states differ.
pub fn suite_passages(code: &str, split: &str, count: usize, seed: u64) -> Vec<Passage> {
    let lex = LEXICA
        .iter()
        .find(|l| l.code == code)
        .unwrap_or_else(|| panic!("unknown synthetic language {}", code));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (tokens, graph) = suite_sentence(lex, &mut rng);
            passage(&format!("{}-{}-{:03}", code, split, i), code, &tokens, &graph)
                .expect("generated passage parses")
        })
        .collect()
}

struct Builder {
    tokens: Vec<String>,
}

impl Builder {
    fn push(&mut self, surface: &str, pos: &str, dep: &str) -> usize {
        self.tokens.push(format!("{}/{}/{}", surface, pos, dep));
        self.tokens.len()
    }
}

fn suite_sentence(lex: &Lexicon, rng: &mut ChaCha8Rng) -> (String, String) {
    let mut b = Builder { tokens: Vec::new() };
    let shape = rng.random_range(0..4);

    // A noun phrase; returns its bracketed form.
    let np = |b: &mut Builder, rng: &mut ChaCha8Rng, dep: &str| -> String {
        if rng.random_bool(0.3) {
            let p = b.push(lex.names.choose(rng).unwrap(), "PROPN", dep);
            return format!("(A#x{} {})", p, p);
        }
        let d = b.push(lex.dets.choose(rng).unwrap(), "DET", "det");
        let with_adj = rng.random_bool(0.4);
        let mut parts = vec![format!("(E {})", d)];
        if with_adj && !lex.adj_after {
            let a = b.push(lex.adjs.choose(rng).unwrap(), "ADJ", "amod");
            parts.push(format!("(E {})", a));
        }
        let n = b.push(lex.nouns.choose(rng).unwrap(), "NOUN", dep);
        parts.push(format!("(C {})", n));
        if with_adj && lex.adj_after {
            let a = b.push(lex.adjs.choose(rng).unwrap(), "ADJ", "amod");
            parts.push(format!("(E {})", a));
        }
        format!("(A#x{} {})", n, parts.join(" "))
    };

    let clause = |b: &mut Builder, rng: &mut ChaCha8Rng| -> String {
        let subj = np(b, rng, "nsubj");
        let stative = rng.random_bool(0.35);
        let verb = if stative {
            *lex.states.choose(rng).unwrap()
        } else {
            *lex.verbs.choose(rng).unwrap()
        };
        let rel = if stative { "S" } else { "P" };
        if lex.verb_final {
            let obj = np(b, rng, "obj");
            let v = b.push(verb, "VERB", "ROOT");
            format!("{} {} ({} {})", subj, obj, rel, v)
        } else {
            let v = b.push(verb, "VERB", "ROOT");
            let obj = np(b, rng, "obj");
            format!("{} ({} {}) {}", subj, rel, v, obj)
        }
    };

    let body = match shape {
        0 | 1 => format!("(H {})", clause(&mut b, rng)),
        2 => {
            let first = clause(&mut b, rng);
            let c = b.push(lex.conj, "CCONJ", "cc");
            let second = clause(&mut b, rng);
            format!("(H {}) (L {}) (H {})", first, c, second)
        }
        _ => {
            // Control verb with a remote participant shared by both scenes.
            let subj = np(&mut b, rng, "nsubj");
            let name = subj
                .split_whitespace()
                .next()
                .and_then(|h| h.split_once('#'))
                .map(|(_, n)| n.to_owned())
                .unwrap();
            let v = b.push(lex.verbs.choose(rng).unwrap(), "VERB", "ROOT");
            let to = b.push(lex.to, "PART", "mark");
            let v2 = b.push(lex.verbs.choose(rng).unwrap(), "VERB", "xcomp");
            let obj = np(&mut b, rng, "obj");
            format!(
                "(H {} (P {}) (A (F {}) (P {}) {} (A* {})))",
                subj, v, to, v2, obj, name
            )
        }
    };
    let dot = b.push(".", "PUNCT", "punct");
    (b.tokens.join(" "), format!("{} (U {})", body, dot))
}

/// Knobs of [`random_graph`].
#[derive(Debug, Clone, Copy)]
pub struct GraphShape {
    pub max_tokens: usize,
    pub max_remotes: usize,
    /// Probability of scrambling the tree into discontinuous units.
    pub discontinuity_rate: f64,
    /// Probability that a node gets a second, parallel category.
    pub multi_category_rate: f64,
}

impl Default for GraphShape {
    fn default() -> Self {
        GraphShape {
            max_tokens: 15,
            max_remotes: 2,
            discontinuity_rate: 0.5,
            multi_category_rate: 0.05,
        }
    }
}

/// A random valid passage graph. Node ids are shuffled so that nothing
/// downstream can rely on them.
pub fn random_graph(rng: &mut impl Rng, shape: GraphShape) -> UccaGraph {
    let n = rng.random_range(1..=shape.max_tokens);
    // parent[i] over nodes 0 = root, 1..=n terminals, then units.
    let mut parent: Vec<Option<usize>> = vec![None; n + 1];
    let mut is_unit = vec![true];
    is_unit.extend(std::iter::repeat_n(false, n));

    // Recursive random bracketing with occasional unary chains.
    let mut todo = vec![(0usize, 1usize, n)];
    while let Some((node, lo, hi)) = todo.pop() {
        let mut bounds = vec![lo];
        for p in lo + 1..=hi {
            if rng.random_bool(0.45) {
                bounds.push(p);
            }
        }
        bounds.push(hi + 1);
        let single = bounds.len() == 2;
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1] - 1);
            if a == b && (!single || rng.random_bool(0.5)) && node != 0 {
                parent[a] = Some(node);
                continue;
            }
            if a == b && rng.random_bool(0.6) {
                parent[a] = Some(node);
                continue;
            }
            parent.push(Some(node));
            is_unit.push(true);
            let u = parent.len() - 1;
            if a == b {
                parent[a] = Some(u);
            } else if single && rng.random_bool(0.5) {
                // Unary chain over the same span.
                todo.push((u, a, b));
            } else {
                todo.push((u, a, b));
            }
        }
    }

    let children_of = |parent: &[Option<usize>], x: usize| -> Vec<usize> {
        (0..parent.len()).filter(|&c| parent[c] == Some(x)).collect()
    };
    let is_ancestor = |parent: &[Option<usize>], a: usize, mut x: usize| loop {
        if x == a {
            return true;
        }
        match parent[x] {
            Some(p) => x = p,
            None => return false,
        }
    };

    if rng.random_bool(shape.discontinuity_rate) {
        let moves = rng.random_range(1..=2);
        for _ in 0..moves {
            let units: Vec<usize> = (1..parent.len()).filter(|&u| is_unit[u]).collect();
            let Some(&x) = units.choose(rng) else { break };
            let movable: Vec<usize> = (1..parent.len())
                .filter(|&y| !is_ancestor(&parent, y, x) && parent[y] != Some(x))
                .filter(|&y| children_of(&parent, parent[y].unwrap()).len() > 1)
                .collect();
            if let Some(&y) = movable.choose(rng) {
                parent[y] = Some(x);
            }
        }
    }

    // Drop units that ended up covering nothing.
    loop {
        let empty: Vec<usize> = (1..parent.len())
            .filter(|&u| is_unit[u] && parent[u].is_some() && children_of(&parent, u).is_empty())
            .collect();
        if empty.is_empty() {
            break;
        }
        for u in empty {
            parent[u] = None;
        }
    }
    let alive: Vec<usize> = (0..parent.len())
        .filter(|&i| i == 0 || parent[i].is_some())
        .collect();

    let mut names: Vec<String> = (0..alive.len()).map(|i| format!("v{}", i)).collect();
    names.shuffle(rng);
    let id = |i: usize| -> NodeId {
        if (1..=n).contains(&i) {
            NodeId::terminal(i)
        } else {
            NodeId::new(names[alive.iter().position(|&a| a == i).unwrap()].clone())
        }
    };

    let mut edges = Vec::new();
    for &c in alive.iter().skip(1) {
        let first = *Category::ALL.choose(rng).unwrap();
        edges.push(Edge {
            parent: id(parent[c].unwrap()),
            child: id(c),
            category: first,
            remote: false,
        });
        if rng.random_bool(shape.multi_category_rate) {
            let second = *Category::ALL.choose(rng).unwrap();
            if second != first {
                edges.push(Edge {
                    parent: id(parent[c].unwrap()),
                    child: id(c),
                    category: second,
                    remote: false,
                });
            }
        }
    }

    // Yields for the remote constraints.
    let yield_of = |x: usize| -> BTreeSet<usize> {
        (1..=n).filter(|&t| is_ancestor(&parent, x, t)).collect()
    };
    let mut remote_pairs: Vec<(usize, usize)> = Vec::new();
    let n_remotes = rng.random_range(0..=shape.max_remotes);
    for _ in 0..n_remotes * 4 {
        if remote_pairs.len() == n_remotes {
            break;
        }
        let c = alive[rng.random_range(1..alive.len().max(2).min(alive.len()))];
        let p = *alive.choose(rng).unwrap();
        if c == 0 || !is_unit[p] || p == c || parent[c] == Some(p) || yield_of(p) == yield_of(c) {
            continue;
        }
        // Reject cycles through primary or earlier remote edges.
        let reaches = |from: usize, to: usize| {
            let mut stack = vec![from];
            let mut seen = BTreeSet::new();
            while let Some(x) = stack.pop() {
                if x == to {
                    return true;
                }
                if !seen.insert(x) {
                    continue;
                }
                stack.extend(alive.iter().copied().filter(|&k| parent[k] == Some(x)));
                stack.extend(remote_pairs.iter().filter(|(rp, _)| *rp == x).map(|(_, rc)| *rc));
            }
            false
        };
        if reaches(c, p) || remote_pairs.contains(&(p, c)) {
            continue;
        }
        remote_pairs.push((p, c));
        edges.push(Edge {
            parent: id(p),
            child: id(c),
            category: *Category::ALL.choose(rng).unwrap(),
            remote: true,
        });
    }

    let mut nodes: Vec<NodeId> = alive.iter().map(|&i| id(i)).collect();
    nodes.shuffle(rng);
    edges.shuffle(rng);
    UccaGraph::new(nodes, edges, id(0))
}

/// A random passage whose graph comes from [`random_graph`].
pub fn random_passage(rng: &mut impl Rng, shape: GraphShape, id: &str) -> Passage {
    let graph = random_graph(rng, shape);
    let n = graph.n_terminals();
    Passage {
        id: id.to_owned(),
        language: Language::new("en"),
        terminals: (1..=n)
            .map(|i| Terminal::new(i, format!("w{}", i)).with_features("X", "dep", "", Iob::O))
            .collect(),
        graph: Some(graph),
    }
}

/// True if some unit's yield is not a contiguous range of positions.
pub fn has_discontinuity(g: &UccaGraph) -> bool {
    g.yields().values().any(|y| match (y.first(), y.last()) {
        (Some(a), Some(b)) => b - a + 1 != y.len(),
        _ => false,
    })
}
