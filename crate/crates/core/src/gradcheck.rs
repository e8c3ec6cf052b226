//! Central finite-difference checks of the analytic gradients.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Example, Model};
use crate::nn::Params;

/// Parameter groups probed separately, by name.
pub const GROUPS: [&str; 6] = [
    "embeddings",
    "attention",
    "feed-forward",
    "layer-norm",
    "span-mlp",
    "remote-heads",
];

/// Group of a parameter name, if it belongs to one of [`GROUPS`].
pub fn group_of(name: &str) -> Option<&'static str> {
    if name.starts_with("embeddings.") {
        Some("embeddings")
    } else if name.contains(".attn.") {
        Some("attention")
    } else if name.contains(".ff.") {
        Some("feed-forward")
    } else if name.contains(".ln1.") || name.contains(".ln2.") {
        Some("layer-norm")
    } else if name.starts_with("spans.") {
        Some("span-mlp")
    } else if name.starts_with("remote.") {
        Some("remote-heads")
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub group: &'static str,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

fn set(model: &mut Model, param: &str, index: usize, value: f64) -> f64 {
    let mut old = f64::NAN;
    model.visit_mut("", &mut |name, p| {
        if name == param {
            let slot = p.value.iter_mut().nth(index).expect("index within parameter");
            old = *slot;
            *slot = value;
        }
    });
    old
}

/// Probes `per_group` random entries of every group whose analytic gradient
/// is at least `min_grad` in magnitude, skipping entries where a step of `h`
/// flips a ReLU (the loss is not differentiable across the kink).
pub fn check_gradients(
    model: &mut Model,
    ex: &Example,
    per_group: usize,
    h: f64,
    min_grad: f64,
    seed: u64,
) -> Result<Vec<Probe>> {
    model.zero_grad();
    model.accumulate_gradients(ex, None)?;
    let mut pool: Vec<(&'static str, String, usize, f64)> = Vec::new();
    model.visit("", &mut |name, p| {
        if let Some(g) = group_of(&name) {
            for (i, &d) in p.grad.iter().enumerate() {
                if d.abs() >= min_grad {
                    pool.push((g, name.clone(), i, d));
                }
            }
        }
    });
    model.zero_grad();

    let base_pattern = model.forward(ex, ex.ids.clone(), None)?.relu_pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    for group in GROUPS {
        let members: Vec<&(&str, String, usize, f64)> = pool.iter().filter(|e| e.0 == group).collect();
        let mut order: Vec<usize> = (0..members.len()).collect();
        let mut picked = 0;
        while picked < per_group {
            let Some(&k) = order.choose(&mut rng) else {
                return Err(Error::Dimension(format!(
                    "only {} usable probes in group {}",
                    picked, group
                )));
            };
            order.retain(|&x| x != k);
            let (_, name, index, analytic) = members[k];
            let orig = set(model, name, *index, f64::NAN);
            let mut eval = |v: f64| -> Result<(f64, Vec<bool>)> {
                set(model, name, *index, v);
                let fwd = model.forward(ex, ex.ids.clone(), None)?;
                let loss = model.loss(ex)?.total;
                Ok((loss, fwd.relu_pattern()))
            };
            let (plus, p_pat) = eval(orig + h)?;
            let (minus, m_pat) = eval(orig - h)?;
            set(model, name, *index, orig);
            if p_pat != base_pattern || m_pat != base_pattern {
                continue;
            }
            probes.push(Probe {
                group,
                param: name.clone(),
                index: *index,
                analytic: *analytic,
                numeric: (plus - minus) / (2.0 * h),
            });
            picked += 1;
        }
    }
    Ok(probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversion::graph_to_tree;
    use crate::encoder::{EmbeddingDims, Vocabularies};
    use crate::model::ModelConfig;
    use crate::synthetic::figure_one;

    #[test]
    fn every_group_is_named() {
        assert_eq!(group_of("embeddings.word"), Some("embeddings"));
        assert_eq!(group_of("encoder.layers.3.attn.wq.w"), Some("attention"));
        assert_eq!(group_of("encoder.layers.0.ff.l2.b"), Some("feed-forward"));
        assert_eq!(group_of("encoder.layers.7.ln2.gamma"), Some("layer-norm"));
        assert_eq!(group_of("spans.out.w"), Some("span-mlp"));
        assert_eq!(group_of("remote.attach_parent"), Some("remote-heads"));
        assert_eq!(group_of("encoder.input.w"), None);
    }

    #[test]
    fn small_model_gradients_match() {
        let p = figure_one();
        let config = ModelConfig {
            embeddings: EmbeddingDims {
                word: 4,
                pos: 3,
                dep: 3,
                entity: 2,
                iob: 2,
            },
            d_model: 16,
            d_ff: 20,
            span_hidden: 10,
            remote_hidden: 8,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let tree = graph_to_tree(p.graph.as_ref().unwrap()).unwrap().tree;
        let labels = Model::label_inventory(&config, [&tree]);
        let vocabs = Vocabularies::build(&p.terminals);
        let mut model = Model::new(config, vocabs, labels, 3).unwrap();
        let ex = model.example(&p, None).unwrap();
        let probes = check_gradients(&mut model, &ex, 5, 1e-5, 1e-5, 1).unwrap();
        assert_eq!(probes.len(), 30);
        for pr in &probes {
            assert!(pr.relative_error() < 1e-4, "{:?}", pr);
        }
    }
}
