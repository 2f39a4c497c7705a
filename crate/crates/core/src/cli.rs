//! The `ivr` command line.
//!
//! Settings come from an optional flat JSON file (`--config`) holding any
//! subset of the training and generator fields; flags given on the command
//! line override the file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{generate_synthetic, read_dataset, write_dataset, Partition, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, retrieve_topk};
use crate::invariance::GimMetric;
use crate::model::{load_checkpoint, load_word_vectors};
use crate::training::{init_params, train_from, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ivr",
    version,
    about = "Invariant visual representations for compositional zero-shot learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with spurious pair-level correlations.
    GenSynth(GenSynthArgs),
    /// Train a model and write checkpoints plus a per-epoch log.
    Train(TrainArgs),
    /// Score a partition and write report.json and curve.csv.
    Eval(EvalArgs),
    /// Print the test samples that best match an attribute-object query.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of attributes [default: 4]
    #[arg(long)]
    pub attrs: Option<usize>,
    /// Number of objects [default: 4]
    #[arg(long)]
    pub objs: Option<usize>,
    /// Width of the attribute block [default: 8]
    #[arg(long)]
    pub d_attr: Option<usize>,
    /// Width of the object block [default: 8]
    #[arg(long)]
    pub d_obj: Option<usize>,
    /// Width of the spurious block [default: 8]
    #[arg(long)]
    pub d_spur: Option<usize>,
    /// Samples drawn per pair [default: 200]
    #[arg(long)]
    pub samples_per_pair: Option<usize>,
    /// Share of pairs held out as unseen [default: 0.25]
    #[arg(long)]
    pub unseen_fraction: Option<f64>,
    /// Noise standard deviation [default: 0.1]
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for final.ckpt, best.ckpt and train_log.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with training fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam weight decay [default: 5e-5]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Weight of the representation term [default: 1]
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight of the gradient term [default: 10]
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Fraction of channels masked [default: 0.1667]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Distance between paired gradients: euclidean or cosine [default: euclidean]
    #[arg(long)]
    pub gim_metric: Option<GimMetric>,
    /// Number of epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Triplets per step [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Softmax temperature for pair scores [default: 0.05]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Hidden width of the image embedder [default: 64]
    #[arg(long)]
    pub emb_hidden: Option<usize>,
    /// Joint embedding width [default: 64]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Concept vector width [default: 64]
    #[arg(long)]
    pub word_dim: Option<usize>,
    /// Disentangled representation width [default: 64]
    #[arg(long)]
    pub disent_dim: Option<usize>,
    /// Drop the composition term [default: off]
    #[arg(long)]
    pub no_comp: bool,
    /// Drop the classification term [default: off]
    #[arg(long)]
    pub no_cls: bool,
    /// Drop the representation term [default: off]
    #[arg(long)]
    pub no_rep: bool,
    /// Drop the gradient term [default: off]
    #[arg(long)]
    pub no_grad: bool,
    /// Skip per-epoch validation [default: off]
    #[arg(long)]
    pub no_validate: bool,
    /// Text file of `word v1 v2 ...` lines used to initialize concept vectors.
    #[arg(long)]
    pub word_vectors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for report.json and curve.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Partition to score: val or test [default: test]
    #[arg(long, default_value = "test", hide_default_value = true)]
    pub partition: Partition,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query as "attribute object".
    #[arg(long)]
    pub query: String,
    /// Number of samples to print [default: 5]
    #[arg(long, default_value_t = 5, hide_default_value = true)]
    pub topk: usize,
}

#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    #[serde(flatten)]
    train: TrainConfig,
    #[serde(flatten)]
    synth: SynthConfig,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl GenSynthArgs {
    pub fn resolve(&self) -> Result<(SynthConfig, u64)> {
        let file = read_config(self.config.as_deref())?;
        let mut c = file.synth;
        let mut seed = file.train.seed;
        set(&mut seed, self.seed);
        set(&mut c.n_attrs, self.attrs);
        set(&mut c.n_objs, self.objs);
        set(&mut c.d_attr, self.d_attr);
        set(&mut c.d_obj, self.d_obj);
        set(&mut c.d_spur, self.d_spur);
        set(&mut c.samples_per_pair, self.samples_per_pair);
        set(&mut c.unseen_fraction, self.unseen_fraction);
        set(&mut c.sigma, self.sigma);
        c.validate()?;
        Ok((c, seed))
    }
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = read_config(self.config.as_deref())?.train;
        set(&mut c.seed, self.seed);
        set(&mut c.lr, self.lr);
        set(&mut c.weight_decay, self.weight_decay);
        set(&mut c.lambda1, self.lambda1);
        set(&mut c.lambda2, self.lambda2);
        set(&mut c.alpha, self.alpha);
        set(&mut c.gim_metric, self.gim_metric);
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.tau, self.tau);
        set(&mut c.emb_hidden, self.emb_hidden);
        set(&mut c.embed_dim, self.embed_dim);
        set(&mut c.word_dim, self.word_dim);
        set(&mut c.disent_dim, self.disent_dim);
        c.use_comp &= !self.no_comp;
        c.use_cls &= !self.no_cls;
        c.use_rep &= !self.no_rep;
        c.use_grad &= !self.no_grad;
        c.validate &= !self.no_validate;
        c.validate()?;
        Ok(c)
    }
}

fn parse_query(q: &str) -> Result<(&str, &str)> {
    let parts: Vec<&str> = q.split_whitespace().collect();
    match parts[..] {
        [a, o] => Ok((a, o)),
        _ => Err(Error::Config(format!(
            "query must be \"attribute object\", got '{q}'"
        ))),
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    match &cli.command {
        Command::GenSynth(a) => {
            let (cfg, seed) = a.resolve()?;
            let ds = generate_synthetic(&cfg, seed)?;
            write_dataset(&ds, &a.out)?;
            writeln!(
                out,
                "wrote {}: N={} D={} seen={} unseen={}",
                a.out.display(),
                ds.len(),
                ds.dim(),
                ds.split().seen.len(),
                ds.split().unseen.len()
            )
            .map_err(w)?;
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let ds = read_dataset(&a.data)?;
            let mut params = init_params(&ds, &cfg)?;
            if let Some(path) = &a.word_vectors {
                params.apply_word_vectors(ds.vocab(), &load_word_vectors(path)?)?;
            }
            let outcome = train_from(&ds, &cfg, params)?;
            outcome.write(&ds, &cfg, &a.out)?;
            let last = outcome.log.last();
            writeln!(
                out,
                "trained {} epochs; best epoch {}; final total loss {:.6}",
                cfg.epochs,
                outcome.best_epoch,
                last.map_or(f64::NAN, |e| e.losses.total)
            )
            .map_err(w)?;
        }
        Command::Eval(a) => {
            let ds = read_dataset(&a.data)?;
            let ck = load_checkpoint(&a.checkpoint)?;
            ck.check_compatible(ds.vocab(), ds.dim())?;
            let report = evaluate(&ck.params, &ds, a.partition)?;
            report.write(&a.out)?;
            writeln!(
                out,
                "{}: seen {:.2} unseen {:.2} hm {:.2} auc {:.2}",
                a.partition, report.best_seen, report.best_unseen, report.best_hm, report.auc
            )
            .map_err(w)?;
        }
        Command::Retrieve(a) => {
            let query = parse_query(&a.query)?;
            let ds = read_dataset(&a.data)?;
            let ck = load_checkpoint(&a.checkpoint)?;
            ck.check_compatible(ds.vocab(), ds.dim())?;
            let hits = retrieve_topk(&ck.params, &ds, query, a.topk)?;
            writeln!(out, "index\tpair\tscore").map_err(w)?;
            for h in hits {
                writeln!(
                    out,
                    "{}\t{}\t{:.6}",
                    h.index,
                    ds.vocab().pair_name(h.pair),
                    h.score
                )
                .map_err(w)?;
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
