use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use ucca_core::conversion::{graph_to_tree, tree_to_graph, Strictness, TreeConversion};
use ucca_core::evaluation::{Accumulator, EvalReport};
use ucca_core::graph::Passage;
use ucca_core::io::{self, ExternalFormat, LoadMode, TreeFile};
use ucca_core::training::{self, TrainConfig};

#[derive(Parser)]
#[command(name = "ucca", version, about = "Parse, convert, train on and score UCCA graphs")]
struct Cli {
    /// Seed for training; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parse and evaluate.
    #[arg(long, global = true, env = "UCCA_THREADS")]
    threads: Option<usize>,

    /// Skip invalid passages with a warning instead of failing.
    #[arg(long, global = true)]
    lenient: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    #[value(name = "graph2tree")]
    GraphToTree,
    #[value(name = "tree2graph")]
    TreeToGraph,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Breakdown {
    Length,
    Category,
}

#[derive(Subcommand)]
enum Command {
    /// Checks every passage of a corpus and lists the violations.
    Validate { corpus: PathBuf },

    /// Converts passages to constituency trees or back.
    Convert {
        corpus: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },

    /// Trains a model from a TOML config and writes a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to the checkpoint path with `.log.json`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },

    /// Parses a corpus with a trained checkpoint.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave out remote edges.
        #[arg(long)]
        no_remotes: bool,
        /// Probability above which a remote edge is predicted.
        #[arg(long)]
        threshold: Option<f64>,
        /// External per-token vectors for the input.
        #[arg(long)]
        vectors: Option<PathBuf>,
    },

    /// Scores predicted graphs against gold graphs.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',')]
        breakdown: Vec<Breakdown>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Counts passages, tokens and edges per split and language.
    Stats {
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },

    /// Converts UCCA XML or MRP files into passage files.
    Import {
        input: PathBuf,
        #[arg(long)]
        format: ExternalFormat,
        #[arg(long)]
        language: String,
        #[arg(long)]
        out: PathBuf,
        /// CoNLL-U file supplying POS, dependency and entity features.
        #[arg(long)]
        conllu: Option<PathBuf>,
    },

    /// Fills token features of a corpus from a CoNLL-U file.
    Annotate {
        corpus: PathBuf,
        #[arg(long)]
        conllu: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure that is not an error of the library.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(kind: &'static str, message: impl Into<String>) -> anyhow::Error {
    Failure {
        kind,
        message: message.into(),
    }
    .into()
}

fn kind_of(e: &anyhow::Error) -> &'static str {
    use ucca_core::Error as E;
    if let Some(f) = e.downcast_ref::<Failure>() {
        return f.kind;
    }
    match e.downcast_ref::<E>() {
        Some(E::Io { .. }) => "io",
        Some(E::Format { .. }) => "format",
        Some(E::Config(_)) => "config",
        Some(E::Checkpoint(_)) => "checkpoint",
        Some(E::TokenMismatch { .. }) => "token_mismatch",
        Some(E::InvalidGraph(_)) | Some(E::UnknownNode(_)) => "invalid_graph",
        Some(E::InvalidTree(_)) | Some(E::InvalidLabel(_)) => "invalid_tree",
        Some(E::UnknownCategory(_)) => "unknown_category",
        Some(E::Conversion(_)) => "conversion",
        Some(E::TooLong(..)) => "too_long",
        Some(_) => "model",
        None => "error",
    }
}

/// The context chain, skipping causes already quoted by their wrapper.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let error = serde_json::json!({
                "error": {
                    "kind": kind_of(&e),
                    "message": message(&e),
                }
            });
            eprintln!("{}", error);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(fail("usage", "--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting the thread pool")?;
    }
    let mode = if cli.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    match cli.command {
        Command::Validate { corpus } => validate(&corpus),
        Command::Convert { corpus, direction, out } => convert(&corpus, direction, &out, mode),
        Command::Train {
            config,
            out,
            log,
            max_epochs,
            batch_size,
            patience,
            learning_rate,
        } => {
            let mut c = TrainConfig::from_path(&config)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            if let Some(v) = max_epochs {
                c.max_epochs = v;
            }
            if let Some(v) = batch_size {
                c.batch_size = v;
            }
            if let Some(v) = patience {
                c.patience = v;
            }
            if let Some(v) = learning_rate {
                c.optimizer.learning_rate = v;
            }
            if cli.lenient {
                c.strict = false;
            }
            c.validate()?;
            let log = log.unwrap_or_else(|| with_suffix(&out, ".log.json"));
            train(&c, &out, &log)
        }
        Command::Parse {
            checkpoint,
            input,
            out,
            no_remotes,
            threshold,
            vectors,
        } => parse(&checkpoint, &input, &out, !no_remotes, threshold, vectors.as_deref(), mode),
        Command::Evaluate {
            pred,
            gold,
            breakdown,
            json,
            out,
        } => evaluate(&pred, &gold, &breakdown, json, out.as_deref(), mode),
        Command::Stats { corpus, json } => {
            let stats = io::corpus_stats(&corpus, mode)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!(
                    "{:<12} {:<8} {:>9} {:>9} {:>9} {:>9} {:>13}",
                    "split", "language", "passages", "tokens", "primary", "remote", "with remotes"
                );
                for (split, langs) in &stats.splits {
                    for (lang, s) in langs {
                        println!(
                            "{:<12} {:<8} {:>9} {:>9} {:>9} {:>9} {:>13}",
                            split, lang, s.passages, s.tokens, s.primary_edges, s.remote_edges, s.with_remotes
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Import {
            input,
            format,
            language,
            out,
            conllu,
        } => {
            let mut imported = io::import_external(&input, format, &language, mode)?;
            for w in &imported.warnings {
                log::warn!("{}", w);
            }
            if let Some(c) = conllu {
                annotate_with(&mut imported.passages, &c)?;
            }
            io::save_corpus(&out, &imported.passages)?;
            println!(
                "imported {} passages ({} warnings) into {}",
                imported.passages.len(),
                imported.warnings.len(),
                out.display()
            );
            Ok(())
        }
        Command::Annotate { corpus, conllu, out } => {
            let mut passages = io::load_corpus(&corpus, mode)?;
            let n = annotate_with(&mut passages, &conllu)?;
            io::save_corpus(&out, &passages)?;
            println!("annotated {} of {} passages into {}", n, passages.len(), out.display());
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn annotate_with(passages: &mut [Passage], conllu: &Path) -> Result<usize> {
    let text = fs::read_to_string(conllu).with_context(|| format!("reading {}", conllu.display()))?;
    Ok(io::apply_conllu(passages, &text).with_context(|| format!("applying {}", conllu.display()))?)
}

fn validate(corpus: &Path) -> Result<()> {
    let loaded = io::load_corpus_with(corpus, LoadMode::Lenient, None)?;
    for (id, reason) in &loaded.skipped {
        println!("{}: {}", id, reason);
    }
    let total = loaded.passages.len() + loaded.skipped.len();
    println!("{} passages checked, {} invalid", total, loaded.skipped.len());
    if loaded.skipped.is_empty() {
        Ok(())
    } else {
        Err(fail(
            "invalid_corpus",
            format!("{} of {} passages are invalid", loaded.skipped.len(), total),
        ))
    }
}

fn convert(corpus: &Path, direction: Direction, out: &Path, mode: LoadMode) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match direction {
        Direction::GraphToTree => {
            let passages = io::load_corpus(corpus, mode)?;
            let mut written = 0;
            for p in &passages {
                let Some(g) = &p.graph else {
                    log::warn!("passage {} has no graph, skipped", p.id);
                    continue;
                };
                let conversion = graph_to_tree(g).with_context(|| format!("passage {}", p.id))?;
                let file = TreeFile {
                    format: 1,
                    id: p.id.clone(),
                    language: p.language.to_string(),
                    tokens: p.terminals.clone(),
                    conversion,
                };
                io::save_tree(&out.join(io::passage_file_name(&p.id)), &file)?;
                written += 1;
            }
            println!("wrote {} trees to {}", written, out.display());
        }
        Direction::TreeToGraph => {
            let strictness = match mode {
                LoadMode::Strict => Strictness::Strict,
                LoadMode::Lenient => Strictness::Lenient,
            };
            let mut passages = Vec::new();
            for t in io::load_trees(corpus)? {
                let TreeConversion {
                    tree,
                    remotes,
                    discontinuities,
                } = &t.conversion;
                let restored =
                    tree_to_graph(tree, remotes, discontinuities, strictness).with_context(|| format!("tree {}", t.id))?;
                for d in &restored.dropped {
                    log::warn!("tree {}: {}", t.id, d);
                }
                let p = Passage {
                    id: t.id,
                    language: t.language.as_str().into(),
                    terminals: t.tokens,
                    graph: Some(restored.graph),
                };
                let report = p.validate();
                if !report.is_valid() {
                    bail!("passage {}: {}", p.id, report);
                }
                passages.push(p);
            }
            io::save_corpus(out, &passages)?;
            println!("wrote {} passages to {}", passages.len(), out.display());
        }
    }
    Ok(())
}

fn train(config: &TrainConfig, out: &Path, log_path: &Path) -> Result<()> {
    let corpora = training::load_corpora(config)?;
    let (model, log) = training::train_on(config, &corpora)?;
    io::save_checkpoint(out, &model)?;
    let text = serde_json::to_string_pretty(&log)? + "\n";
    fs::write(log_path, text).with_context(|| format!("writing {}", log_path.display()))?;
    println!(
        "trained {} epochs on {} passages; best validation F1 {:.4} at epoch {}",
        log.epochs.len(),
        log.training_set.len(),
        log.best_f1,
        log.best_epoch
    );
    println!("checkpoint: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn parse(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    remotes: bool,
    threshold: Option<f64>,
    vectors: Option<&Path>,
    mode: LoadMode,
) -> Result<()> {
    let model = io::load_checkpoint(checkpoint)?;
    let passages = io::load_corpus(input, mode)?;
    let vectors = vectors.map(io::load_vectors).transpose()?;
    let mut options = model.parse_options();
    options.remotes = remotes;
    if let Some(t) = threshold {
        options.threshold = t;
    }
    let parsed = passages
        .par_iter()
        .map(|p| -> Result<Passage> {
            let external = vectors.as_ref().map(|v| v.for_passage(p)).transpose()?;
            let out = model
                .parse(p, external.as_ref(), options)
                .with_context(|| format!("passage {}", p.id))?;
            for w in &out.warnings {
                log::warn!("passage {}: {}", p.id, w);
            }
            Ok(out.passage)
        })
        .collect::<Result<Vec<_>>>()?;
    io::save_corpus(out, &parsed)?;
    println!("parsed {} passages into {}", parsed.len(), out.display());
    Ok(())
}

fn evaluate(
    pred: &Path,
    gold: &Path,
    breakdown: &[Breakdown],
    json: bool,
    out: Option<&Path>,
    mode: LoadMode,
) -> Result<()> {
    let pred = io::load_corpus(pred, mode)?;
    let gold = io::load_corpus(gold, mode)?;
    let mut by_id: HashMap<&str, &Passage> = HashMap::new();
    for p in &pred {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(fail("format", format!("passage {} is predicted twice", p.id)));
        }
    }
    let mut pairs = Vec::with_capacity(gold.len());
    for g in &gold {
        let gg = g
            .graph
            .as_ref()
            .ok_or_else(|| fail("format", format!("gold passage {} has no graph", g.id)))?;
        let p = by_id
            .remove(g.id.as_str())
            .ok_or_else(|| fail("format", format!("no prediction for gold passage {}", g.id)))?;
        let pg = p
            .graph
            .as_ref()
            .ok_or_else(|| fail("format", format!("predicted passage {} has no graph", p.id)))?;
        pairs.push((g.id.as_str(), pg, gg));
    }
    let mut extra: Vec<_> = by_id.into_keys().collect();
    extra.sort_unstable();
    for id in extra {
        log::warn!("predicted passage {} has no gold counterpart, ignored", id);
    }
    let scored = pairs
        .par_iter()
        .map(|(id, p, g)| {
            let mut acc = Accumulator::default();
            acc.add(p, g).map_err(|e| anyhow!(e).context(format!("passage {}", id)))?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Accumulator::default();
    for a in &scored {
        total.merge(a);
    }
    let report: EvalReport = total.report().with_breakdowns(
        breakdown.contains(&Breakdown::Length),
        breakdown.contains(&Breakdown::Category),
    );
    let text = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(path) = out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if json {
        print!("{}", text);
    } else {
        print!("{}", report);
    }
    Ok(())
}
