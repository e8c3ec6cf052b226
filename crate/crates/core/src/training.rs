//! Training: corpus regimes, Adam with global-norm clipping, per-epoch
//! validation and early stopping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conversion::graph_to_tree;
use crate::encoder::Vocabularies;
use crate::error::{Error, Result};
use crate::evaluation::Accumulator;
use crate::graph::Passage;
use crate::io::{self, Vectors};
use crate::model::{LossParts, Model, ModelConfig};
use crate::nn::Params;
use crate::tree::ConstituencyTree;

pub use crate::model::compute_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
}

/// One corpus on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub language: String,
    pub path: PathBuf,
    pub role: Role,
    /// Optional file of external per-token vectors for this corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
}

/// Which training corpora are used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    /// All training corpora share one language.
    Single,
    /// Training corpora of every language, merged.
    Cross,
    /// Every training corpus except those of `target`.
    ZeroShot { target: String },
    /// Every training corpus, `target` included.
    FewShot { target: String },
}

impl Regime {
    pub fn target(&self) -> Option<&str> {
        match self {
            Regime::ZeroShot { target } | Regime::FewShot { target } => Some(target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps of linear learning-rate warmup from 0; 0 disables it.
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            warmup_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub corpora: Vec<CorpusSpec>,
    pub regime: Regime,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Maximum global gradient norm; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Reject invalid passages instead of skipping them.
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_batch_size() -> usize {
    16
}

fn default_patience() -> usize {
    10
}

fn default_max_epochs() -> usize {
    100
}

fn default_clip() -> f64 {
    5.0
}

fn default_strict() -> bool {
    true
}

impl TrainConfig {
    /// A config over in-memory corpora; paths are left empty.
    pub fn new(regime: Regime) -> Self {
        TrainConfig {
            corpora: Vec::new(),
            regime,
            optimizer: AdamConfig::default(),
            batch_size: default_batch_size(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            seed: 0,
            clip_norm: default_clip(),
            strict: default_strict(),
            model: ModelConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative corpus paths resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for c in &mut config.corpora {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
            if let Some(v) = &mut c.vectors {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be non-negative");
        }
        let o = &self.optimizer;
        if o.learning_rate <= 0.0 || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("Adam needs a positive learning rate and betas in [0, 1)");
        }
        self.model.validate()
    }
}

/// Passages of one corpus, already loaded.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub language: String,
    pub role: Role,
    pub passages: Vec<Passage>,
    pub vectors: Option<Vectors>,
}

impl Corpus {
    pub fn new(language: impl Into<String>, role: Role, passages: Vec<Passage>) -> Self {
        Corpus {
            language: language.into(),
            role,
            passages,
            vectors: None,
        }
    }

    fn external(&self, passage: &Passage) -> Result<Option<Array2<f64>>> {
        match &self.vectors {
            None => Ok(None),
            Some(v) => v.for_passage(passage).map(Some),
        }
    }
}

/// Loads every corpus of a config.
pub fn load_corpora(config: &TrainConfig) -> Result<Vec<Corpus>> {
    let mode = if config.strict {
        io::LoadMode::Strict
    } else {
        io::LoadMode::Lenient
    };
    config
        .corpora
        .iter()
        .map(|spec| {
            let mut passages = io::load_corpus(&spec.path, mode)?;
            for p in &mut passages {
                p.language = spec.language.as_str().into();
            }
            let vectors = spec.vectors.as_deref().map(io::load_vectors).transpose()?;
            Ok(Corpus {
                language: spec.language.clone(),
                role: spec.role,
                passages,
                vectors,
            })
        })
        .collect()
}

/// Indices `(corpus, passage)` of the training and validation passages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
}

/// Applies a regime to the loaded corpora.
pub fn select(regime: &Regime, corpora: &[Corpus]) -> Result<Selection> {
    let train_langs: std::collections::BTreeSet<&str> = corpora
        .iter()
        .filter(|c| c.role == Role::Train)
        .map(|c| c.language.as_str())
        .collect();
    if let Regime::Single = regime {
        if train_langs.len() > 1 {
            return Err(Error::Config(format!(
                "single regime with training corpora in {} languages",
                train_langs.len()
            )));
        }
    }
    if let Some(t) = regime.target() {
        if !corpora.iter().any(|c| c.language == t) {
            return Err(Error::Config(format!("no corpus for target language {}", t)));
        }
    }
    let mut sel = Selection {
        train: Vec::new(),
        validation: Vec::new(),
    };
    for (ci, c) in corpora.iter().enumerate() {
        let keep = match (c.role, regime) {
            (Role::Validation, _) => {
                sel.validation.extend((0..c.passages.len()).map(|pi| (ci, pi)));
                continue;
            }
            (Role::Train, Regime::ZeroShot { target }) => c.language != *target,
            (Role::Train, _) => true,
        };
        if keep {
            sel.train.extend((0..c.passages.len()).map(|pi| (ci, pi)));
        }
    }
    if sel.train.is_empty() {
        return Err(Error::Config(match regime {
            Regime::ZeroShot { target } => format!("zero_shot({}) leaves no training passages", target),
            _ => "no training passages".into(),
        }));
    }
    if sel.validation.is_empty() {
        return Err(Error::Config("at least one validation corpus is required".into()));
    }
    Ok(sel)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &impl Params) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, p| m.push(Array2::zeros(p.value.raw_dim())));
        Adam {
            config,
            steps: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, params: &mut impl Params) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let lr = if c.warmup_steps > 0 {
            c.learning_rate * (self.steps as f64 / c.warmup_steps as f64).min(1.0)
        } else {
            c.learning_rate
        };
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let (m, v) = (&mut ms[k], &mut vs[k]);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                });
            k += 1;
        });
    }
}

/// Euclidean norm of all gradients together.
pub fn grad_norm(params: &impl Params) -> f64 {
    let mut s = 0.0;
    params.visit("", &mut |_, p| s += p.grad.iter().map(|g| g * g).sum::<f64>());
    s.sqrt()
}

/// Rescales gradients to norm at most `max_norm`; returns the norm before.
pub fn clip_gradients(params: &mut impl Params, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        params.visit_mut("", &mut |_, p| p.grad *= scale);
    }
    norm
}

fn scale_gradients(params: &mut impl Params, scale: f64) {
    params.visit_mut("", &mut |_, p| p.grad *= scale);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedPassage {
    pub id: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per training passage.
    pub loss: LossParts,
    /// Training passages processed this epoch, by language.
    pub seen: BTreeMap<String, usize>,
    /// Labeled F1 over primary and remote edges pooled, all validation corpora.
    pub validation_f1: f64,
    pub validation_f1_by_language: BTreeMap<String, f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub regime: Regime,
    pub seed: u64,
    pub training_set: Vec<TrainedPassage>,
    pub validation_languages: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: f64,
    /// Ended before `max_epochs`, by patience or a perfect validation score.
    pub stopped_early: bool,
}

impl TrainingLog {
    /// Training-set size by language.
    pub fn languages(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in &self.training_set {
            *out.entry(p.language.clone()).or_default() += 1;
        }
        out
    }
}

/// Loads the corpora of `config` and trains.
pub fn train(config: &TrainConfig) -> Result<(Model, TrainingLog)> {
    config.validate()?;
    let corpora = load_corpora(config)?;
    train_on(config, &corpora)
}

/// Trains on already loaded corpora; `config.corpora` is ignored.
pub fn train_on(config: &TrainConfig, corpora: &[Corpus]) -> Result<(Model, TrainingLog)> {
    train_with(config, corpora, |_, _| {})
}

/// As [`train_on`], calling `progress` after every epoch.
pub fn train_with(
    config: &TrainConfig,
    corpora: &[Corpus],
    mut progress: impl FnMut(&EpochRecord, &Model),
) -> Result<(Model, TrainingLog)> {
    config.validate()?;
    let sel = select(&config.regime, corpora)?;
    let passage = |&(c, p): &(usize, usize)| &corpora[c].passages[p];

    let mut trees: Vec<ConstituencyTree> = Vec::with_capacity(sel.train.len());
    for k in &sel.train {
        let p = passage(k);
        let g = p
            .graph
            .as_ref()
            .ok_or_else(|| Error::InvalidGraph(format!("training passage {} has no graph", p.id)))?;
        trees.push(graph_to_tree(g)?.tree);
    }
    for k in &sel.validation {
        if passage(k).graph.is_none() {
            return Err(Error::InvalidGraph(format!("validation passage {} has no graph", passage(k).id)));
        }
    }
    let labels = Model::label_inventory(&config.model, &trees);
    let vocabs = Vocabularies::build(sel.train.iter().flat_map(|k| &passage(k).terminals));
    let mut model = Model::new(config.model.clone(), vocabs, labels, config.seed)?;
    let examples = sel
        .train
        .iter()
        .map(|k| model.example(passage(k), corpora[k.0].external(passage(k))?))
        .collect::<Result<Vec<_>>>()?;
    let validation: Vec<(&Passage, Option<Array2<f64>>)> = sel
        .validation
        .iter()
        .map(|k| Ok((passage(k), corpora[k.0].external(passage(k))?)))
        .collect::<Result<_>>()?;
    let mut validation_languages: Vec<String> =
        sel.validation.iter().map(|k| corpora[k.0].language.clone()).collect();
    validation_languages.dedup();

    let mut log = TrainingLog {
        regime: config.regime.clone(),
        seed: config.seed,
        training_set: sel
            .train
            .iter()
            .map(|k| TrainedPassage {
                id: passage(k).id.clone(),
                language: corpora[k.0].language.clone(),
            })
            .collect(),
        validation_languages,
        epochs: Vec::new(),
        best_epoch: 0,
        best_f1: f64::NEG_INFINITY,
        stopped_early: false,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let mut adam = Adam::new(config.optimizer, &model);
    let mut best = model.clone();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss = LossParts::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            for &i in batch {
                loss += model.accumulate_gradients(&examples[i], Some(&mut rng))?;
                *seen.entry(examples[i].language.clone()).or_default() += 1;
            }
            scale_gradients(&mut model, 1.0 / batch.len() as f64);
            clip_gradients(&mut model, config.clip_norm);
            adam.step(&mut model);
        }
        let m = examples.len() as f64;
        loss = LossParts {
            total: loss.total / m,
            non_terminal: loss.non_terminal / m,
            remote: loss.remote / m,
            gate: loss.gate / m,
            attach: loss.attach / m,
        };

        let (f1, by_language) = validate(&model, &validation)?;
        let improved = f1 > log.best_f1;
        if improved {
            log.best_f1 = f1;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            loss,
            seen,
            validation_f1: f1,
            validation_f1_by_language: by_language,
            improved,
        };
        log::info!(
            "epoch {} loss {:.4} (nt {:.4}, remote {:.4}) validation F1 {:.4}{}",
            epoch,
            record.loss.total,
            record.loss.non_terminal,
            record.loss.remote,
            f1,
            if improved { " *" } else { "" }
        );
        progress(&record, &model);
        log.epochs.push(record);
        if since_best >= config.patience || log.best_f1 >= 1.0 {
            log.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    Ok((best, log))
}

/// Labeled pooled F1 over all validation passages and per language.
pub fn validate(model: &Model, passages: &[(&Passage, Option<Array2<f64>>)]) -> Result<(f64, BTreeMap<String, f64>)> {
    let opts = model.parse_options();
    let mut pooled = Accumulator::default();
    let mut by_language: BTreeMap<String, Accumulator> = BTreeMap::new();
    for (p, ext) in passages {
        let parsed = model.parse(p, ext.as_ref(), opts)?;
        let pred = parsed.passage.graph.as_ref().expect("parse sets a graph");
        let gold = p.graph.as_ref().expect("validation passages have graphs");
        let mut one = Accumulator::default();
        one.add(pred, gold)?;
        pooled.merge(&one);
        by_language.entry(p.language.to_string()).or_default().merge(&one);
    }
    let f = |a: &Accumulator| a.report().all.labeled.f1;
    Ok((f(&pooled), by_language.iter().map(|(k, a)| (k.clone(), f(a))).collect()))
}
