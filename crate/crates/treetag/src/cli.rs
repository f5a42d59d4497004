//! Command-line front end: `train`, `tag`, `eval`, and `inspect`.
//!
//! Every training run writes its fully resolved configuration next to the
//! checkpoint, so any run is reproducible from that file plus the seed.
//! Settings resolve in order: built-in defaults, then `--config`, then
//! `--profile`, then individual flags.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, build_inventory, build_subset, check_coverage, gold_ids, parse_conll,
    parse_predictions, write_conll, write_predictions, EmbeddingTable, EvalResult, RawSentence,
};
use crate::error::{Error, Result};
use crate::learner::{self, DecodeConfig, Decoder, TrainConfig, TrainError};
use crate::mdp::{Sentence, TagId, TagInventory};
use crate::neural::{checkpoint, InitScale, TensorView};

#[derive(Debug, Parser)]
#[command(name = "treetag", version, about = "Sequence tagger with tree-search decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a labeled corpus and write a checkpoint.
    Train(Box<TrainArgs>),
    /// Tag a corpus with a trained checkpoint.
    Tag(TagArgs),
    /// Score a predictions file against gold tags.
    Eval(EvalArgs),
    /// Print a checkpoint summary.
    Inspect(InspectArgs),
}

/// Named hyperparameter bundles.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Profile {
    /// Full-scale reference settings: K = 4000, h = 200.
    Paper,
    /// Tractable settings for local runs: K = 64, h = 32.
    Desk,
}

impl Profile {
    fn k(self) -> usize {
        match self {
            Profile::Paper => 4000,
            Profile::Desk => 64,
        }
    }

    fn hidden(self) -> usize {
        match self {
            Profile::Paper => 200,
            Profile::Desk => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitScaleArg {
    /// Uniform on [-1, 1].
    Unit,
    /// Uniform on [-1/sqrt(h), 1/sqrt(h)].
    InvSqrtHidden,
}

impl From<InitScaleArg> for InitScale {
    fn from(v: InitScaleArg) -> Self {
        match v {
            InitScaleArg::Unit => InitScale::Unit,
            InitScaleArg::InvSqrtHidden => InitScale::InvSqrtHidden,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DecoderArg {
    Mcts,
    Greedy,
}

impl From<DecoderArg> for Decoder {
    fn from(v: DecoderArg) -> Self {
        match v {
            DecoderArg::Mcts => Decoder::Mcts,
            DecoderArg::Greedy => Decoder::Greedy,
        }
    }
}

/// Subset construction settings for large corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetConfig {
    /// Drop sentences longer than this many tokens.
    pub max_len: usize,
    /// Sample size after filtering.
    pub size: usize,
    /// How many sampled sentences go to training; the rest are held out.
    pub train_size: usize,
    /// Where to write the held-out split, if anywhere.
    pub emit_test: Option<PathBuf>,
}

/// The resolved, reproducible description of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_file: PathBuf,
    pub embeddings: PathBuf,
    pub embed_dim: usize,
    pub checkpoint: PathBuf,
    /// Epoch log (one JSON record per line). Defaults to
    /// `<checkpoint>.report.jsonl`.
    pub report: Option<PathBuf>,
    pub train: TrainConfig,
    pub subset: Option<SubsetConfig>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration to start from; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled training corpus in three-column format.
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    /// Word-embedding text file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Embedding vector length.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Output checkpoint path.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Epoch report path (JSON lines).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Search iterations per position.
    #[arg(long)]
    pub k: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Exploration tradeoff.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// LSTM hidden units.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict action sets to BIO-consistent tags.
    #[arg(long)]
    pub bio_constraint: bool,
    /// Clip gradients to this global L2 norm.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub init_scale: Option<InitScaleArg>,
    /// Early-stop patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Minimum mean-reward improvement that resets the patience counter.
    #[arg(long)]
    pub min_delta: Option<f64>,
    /// Enable subset construction: sample this many length-filtered
    /// sentences before splitting.
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// Length filter used with --subset-size.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Training share of the subset (rest is held out).
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Write the held-out split here.
    #[arg(long)]
    pub emit_test: Option<PathBuf>,
}

fn require<T: Clone>(flag: &Option<T>, base: Option<T>, name: &str) -> Result<T> {
    flag.clone()
        .or(base)
        .ok_or_else(|| Error::Config(format!("`--{name}` is required (flag or config file)")))
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let base: Option<RunConfig> = match &self.config {
            Some(path) => Some(
                serde_json::from_reader(BufReader::new(File::open(path)?))
                    .map_err(|e| Error::Config(format!("config file: {e}")))?,
            ),
            None => None,
        };
        let defaults = TrainConfig::default();
        let base_train = base.as_ref().map(|b| b.train.clone()).unwrap_or(defaults);

        let train = TrainConfig {
            k: self.k.or(self.profile.map(Profile::k)).unwrap_or(base_train.k),
            eta: self.eta.unwrap_or(base_train.eta),
            lambda: self.lambda.unwrap_or(base_train.lambda),
            hidden: self
                .hidden
                .or(self.profile.map(Profile::hidden))
                .unwrap_or(base_train.hidden),
            epochs: self.epochs.unwrap_or(base_train.epochs),
            seed: self.seed.unwrap_or(base_train.seed),
            bio_constraint: self.bio_constraint || base_train.bio_constraint,
            clip_norm: self.clip_norm.or(base_train.clip_norm),
            init: self.init_scale.map(Into::into).unwrap_or(base_train.init),
            patience: self.patience.unwrap_or(base_train.patience),
            min_delta: self.min_delta.unwrap_or(base_train.min_delta),
        };

        let base_subset = base.as_ref().and_then(|b| b.subset.clone());
        let subset = match (self.subset_size, base_subset) {
            (Some(size), _) => Some(SubsetConfig {
                max_len: self.max_len.unwrap_or(13),
                size,
                train_size: self.train_size.unwrap_or(size * 9 / 10),
                emit_test: self.emit_test.clone(),
            }),
            (None, Some(mut s)) => {
                if let Some(max_len) = self.max_len {
                    s.max_len = max_len;
                }
                if let Some(train_size) = self.train_size {
                    s.train_size = train_size;
                }
                if self.emit_test.is_some() {
                    s.emit_test = self.emit_test.clone();
                }
                Some(s)
            }
            (None, None) => None,
        };

        Ok(RunConfig {
            train_file: require(&self.train_file, base.as_ref().map(|b| b.train_file.clone()), "train-file")?,
            embeddings: require(&self.embeddings, base.as_ref().map(|b| b.embeddings.clone()), "embeddings")?,
            embed_dim: self.embed_dim.or(base.as_ref().map(|b| b.embed_dim)).unwrap_or(100),
            checkpoint: require(&self.checkpoint, base.as_ref().map(|b| b.checkpoint.clone()), "checkpoint")?,
            report: self.report.clone().or(base.as_ref().and_then(|b| b.report.clone())),
            train,
            subset,
        })
    }
}

#[derive(Debug, Args)]
pub struct TagArgs {
    /// Corpus to tag, three-column format (the chunk column is carried
    /// through to the output, never read by the decoder).
    #[arg(long)]
    pub test_file: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output predictions (four-column); standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mcts")]
    pub decoder: DecoderArg,
    /// Search iterations per position.
    #[arg(long, default_value_t = 4000)]
    pub k: usize,
    #[arg(long, default_value_t = 0.25)]
    pub lambda: f64,
    #[arg(long)]
    pub bio_constraint: bool,
    /// Worker threads for sentence-parallel decoding.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions in four-column format (last column scored).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold corpus in three-column format; when omitted the predictions
    /// file's own third column is the reference.
    #[arg(long)]
    pub test_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args.resolve()?),
        Command::Tag(args) => cmd_tag(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Inspect(args) => cmd_inspect(&args),
    }
}

/// Trains per the resolved configuration, writing the best-by-training-reward
/// checkpoint (refreshed every improving epoch), the epoch report, and the
/// resolved config itself.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let all = parse_conll(BufReader::new(File::open(&cfg.train_file)?))?;
    let (train_raw, test_raw) = match &cfg.subset {
        Some(s) => {
            let (train, test) = build_subset(all, s.max_len, s.size, s.train_size, cfg.train.seed)?;
            if let Some(path) = &s.emit_test {
                let mut w = BufWriter::new(File::create(path)?);
                write_conll(&mut w, &test)?;
                w.flush()?;
            }
            (train, test)
        }
        None => (all, Vec::new()),
    };
    if train_raw.is_empty() {
        return Err(Error::Input(format!("no sentences in {}", cfg.train_file.display())));
    }

    let table = EmbeddingTable::load(BufReader::new(File::open(&cfg.embeddings)?), cfg.embed_dim)?;
    let inventory = build_inventory(&train_raw)?;
    check_coverage(&inventory, &test_raw)?;

    let dataset: Vec<(Arc<Sentence>, Vec<TagId>)> = train_raw
        .iter()
        .map(|s| Ok((table.embed_sentence(s)?, gold_ids(&inventory, s)?)))
        .collect::<Result<_>>()?;

    log::info!(
        "training on {} sentences, {} tags, embed dim {}",
        dataset.len(),
        inventory.len(),
        cfg.embed_dim
    );

    let report_path = cfg
        .report
        .clone()
        .unwrap_or_else(|| cfg.checkpoint.with_extension("report.jsonl"));
    let mut report_file = BufWriter::new(File::create(&report_path)?);

    let seed = cfg.train.seed;
    let ckpt_path = cfg.checkpoint.clone();
    let tags: Vec<String> = inventory.tags().to_vec();
    let mut epoch_io: Result<()> = Ok(());
    let outcome = learner::train(&dataset, &inventory, &cfg.train, |record, params, is_best| {
        if epoch_io.is_ok() {
            epoch_io = (|| {
                serde_json::to_writer(&mut report_file, record)
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
                report_file.write_all(b"\n")?;
                report_file.flush()?;
                if is_best {
                    checkpoint::save(&ckpt_path, params, seed, &tags)?;
                }
                Ok(())
            })();
        }
    });
    epoch_io?;

    let (best_params, report) = match outcome {
        Ok(ok) => ok,
        Err(TrainError::Setup(e)) => return Err(e),
        Err(TrainError::Aborted { epoch, sentence, source, params }) => {
            let diag = cfg.checkpoint.with_extension("diagnostic.ckpt");
            checkpoint::save(&diag, &params, seed, &tags)?;
            log::error!("diagnostic checkpoint written to {}", diag.display());
            return Err(Error::Numeric(format!(
                "training aborted at epoch {epoch}, sentence {sentence}: {source}"
            )));
        }
    };

    checkpoint::save(&cfg.checkpoint, &best_params, seed, &tags)?;
    let config_path = cfg.checkpoint.with_extension("config.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&config_path)?), cfg)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;

    log::info!(
        "done: best epoch {:?} (mean reward {:.4}); checkpoint {}",
        report.best_epoch,
        report.best_reward,
        cfg.checkpoint.display()
    );
    Ok(())
}

fn decode_all(
    sentences: &[Arc<Sentence>],
    params: &crate::neural::ModelParams,
    inventory: &TagInventory,
    decode: &DecodeConfig,
    jobs: Option<usize>,
) -> Result<Vec<Vec<TagId>>> {
    #[cfg(feature = "parallel")]
    if let Some(threads) = jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return pool.install(|| learner::tag_corpus(sentences, params, inventory, decode));
    }
    #[cfg(not(feature = "parallel"))]
    if jobs.is_some() {
        log::warn!("built without the `parallel` feature; --jobs is ignored");
    }
    learner::tag_corpus(sentences, params, inventory, decode)
}

pub fn cmd_tag(args: &TagArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let inventory = TagInventory::from_tags(ckpt.tags.clone())?;
    let raw = parse_conll(BufReader::new(File::open(&args.test_file)?))?;

    let predictions: Vec<Vec<String>> = if raw.is_empty() {
        Vec::new()
    } else {
        let table = EmbeddingTable::load(
            BufReader::new(File::open(&args.embeddings)?),
            ckpt.params.dims.embed,
        )?;
        let sentences: Vec<Arc<Sentence>> =
            raw.iter().map(|s| table.embed_sentence(s)).collect::<Result<_>>()?;
        let decode = DecodeConfig {
            k: args.k,
            lambda: args.lambda,
            bio_constraint: args.bio_constraint,
            decoder: args.decoder.into(),
        };
        let ids = decode_all(&sentences, &ckpt.params, &inventory, &decode, args.jobs)?;
        ids.iter()
            .map(|tags| tags.iter().map(|&t| inventory.tag(t).to_string()).collect())
            .collect()
    };

    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_predictions(&mut w, &raw, &predictions)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write_predictions(&mut w, &raw, &predictions)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn check_alignment(gold: &[RawSentence], pred: &[Vec<(corpus::RawToken, String)>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Input(format!("sentence {i}: token counts differ")));
        }
        for (gt, (pt, _)) in g.iter().zip(p) {
            if gt.surface != pt.surface {
                return Err(Error::Input(format!(
                    "sentence {i}: token `{}` vs `{}`; files are not aligned",
                    gt.surface, pt.surface
                )));
            }
        }
    }
    Ok(())
}

fn percent(x: f64) -> f64 {
    x * 100.0
}

fn print_eval(result: &EvalResult, sentences: usize, tokens: usize) {
    println!("processed {sentences} sentences, {tokens} tokens");
    println!("{:>9} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1", "accuracy");
    println!(
        "{:>9} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
        "overall",
        percent(result.precision),
        percent(result.recall),
        percent(result.f1),
        percent(result.accuracy)
    );
    for (ty, c) in &result.per_type {
        let p = if c.predicted == 0 { 0.0 } else { c.correct as f64 / c.predicted as f64 };
        let r = if c.gold == 0 { 0.0 } else { c.correct as f64 / c.gold as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        println!(
            "{:>9} {:>10.2} {:>10.2} {:>10.2} {:>10}",
            ty,
            percent(p),
            percent(r),
            percent(f),
            ""
        );
    }
    // Machine-readable record, percentages with two decimals.
    println!(
        "{{\"precision\":{:.2},\"recall\":{:.2},\"f1\":{:.2},\"accuracy\":{:.2}}}",
        percent(result.precision),
        percent(result.recall),
        percent(result.f1),
        percent(result.accuracy)
    );
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred_file = parse_predictions(BufReader::new(File::open(&args.predictions)?))?;
    let predicted: Vec<Vec<String>> = pred_file
        .iter()
        .map(|s| s.iter().map(|(_, tag)| tag.clone()).collect())
        .collect();
    let gold: Vec<Vec<String>> = match &args.test_file {
        Some(path) => {
            let gold_file = parse_conll(BufReader::new(File::open(path)?))?;
            check_alignment(&gold_file, &pred_file)?;
            gold_file
                .iter()
                .map(|s| s.iter().map(|t| t.chunk.clone()).collect())
                .collect()
        }
        None => pred_file
            .iter()
            .map(|s| s.iter().map(|(t, _)| t.chunk.clone()).collect())
            .collect(),
    };

    let result = corpus::evaluate(&gold, &predicted)?;
    let tokens = gold.iter().map(Vec::len).sum();
    print_eval(&result, gold.len(), tokens);
    Ok(())
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let dims = ckpt.params.dims;
    println!("checkpoint: {}", args.checkpoint.display());
    println!("dims: embed={} hidden={} tags={}", dims.embed, dims.hidden, dims.tags);
    println!("seed: {}", ckpt.seed);
    println!("tags: {}", ckpt.tags.join(" "));
    println!("{:<18} {:>12} {:>14}", "tensor", "shape", "l2 norm");
    for (name, view) in ckpt.params.tensor_entries() {
        let (shape, norm) = match view {
            TensorView::Mat(m) => {
                (format!("{}x{}", m.nrows(), m.ncols()), m.iter().map(|v| v * v).sum::<f64>())
            }
            TensorView::Vec(v) => (format!("{}", v.len()), v.iter().map(|v| v * v).sum::<f64>()),
            TensorView::Scalar(s) => ("scalar".to_string(), s * s),
        };
        println!("{name:<18} {shape:>12} {:>14.6}", norm.sqrt());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_overrides_defaults_but_not_flags() {
        let args = TrainArgs {
            config: None,
            train_file: Some("t.conll".into()),
            embeddings: Some("e.vec".into()),
            embed_dim: Some(8),
            checkpoint: Some("out.ckpt".into()),
            report: None,
            profile: Some(Profile::Desk),
            k: Some(128),
            eta: None,
            lambda: None,
            hidden: None,
            epochs: Some(5),
            seed: Some(7),
            bio_constraint: false,
            clip_norm: None,
            init_scale: None,
            patience: None,
            min_delta: None,
            subset_size: None,
            max_len: None,
            train_size: None,
            emit_test: None,
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.train.k, 128); // explicit flag beats the profile
        assert_eq!(cfg.train.hidden, 32); // profile beats the default
        assert_eq!(cfg.train.eta, 0.001);
        assert_eq!(cfg.train.lambda, 0.25);
        assert!(cfg.subset.is_none());
    }

    #[test]
    fn missing_required_path_is_a_config_error() {
        let args = TrainArgs {
            config: None,
            train_file: None,
            embeddings: Some("e.vec".into()),
            embed_dim: None,
            checkpoint: Some("out.ckpt".into()),
            report: None,
            profile: None,
            k: None,
            eta: None,
            lambda: None,
            hidden: None,
            epochs: None,
            seed: None,
            bio_constraint: false,
            clip_norm: None,
            init_scale: None,
            patience: None,
            min_delta: None,
            subset_size: None,
            max_len: None,
            train_size: None,
            emit_test: None,
        };
        assert!(matches!(args.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn subset_defaults_to_nine_tenths_training() {
        let args = TrainArgs {
            config: None,
            train_file: Some("t.conll".into()),
            embeddings: Some("e.vec".into()),
            embed_dim: Some(8),
            checkpoint: Some("out.ckpt".into()),
            report: None,
            profile: None,
            k: None,
            eta: None,
            lambda: None,
            hidden: None,
            epochs: None,
            seed: None,
            bio_constraint: false,
            clip_norm: None,
            init_scale: None,
            patience: None,
            min_delta: None,
            subset_size: Some(1000),
            max_len: None,
            train_size: None,
            emit_test: None,
        };
        let cfg = args.resolve().unwrap();
        let subset = cfg.subset.unwrap();
        assert_eq!(subset.max_len, 13);
        assert_eq!(subset.size, 1000);
        assert_eq!(subset.train_size, 900);
    }

    #[test]
    fn run_config_round_trips_through_json() {
        let cfg = RunConfig {
            train_file: "a.conll".into(),
            embeddings: "b.vec".into(),
            embed_dim: 50,
            checkpoint: "c.ckpt".into(),
            report: Some("r.jsonl".into()),
            train: TrainConfig { k: 16, hidden: 8, ..TrainConfig::default() },
            subset: Some(SubsetConfig {
                max_len: 13,
                size: 100,
                train_size: 90,
                emit_test: None,
            }),
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.train.k, 16);
        assert_eq!(back.subset.as_ref().unwrap().train_size, 90);
        assert_eq!(back.embed_dim, 50);
    }
}
