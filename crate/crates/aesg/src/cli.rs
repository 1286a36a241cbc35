//! Command-line surface. Flags win over `--config` values, which win over
//! built-in defaults.

use std::path::PathBuf;

use aesg_core::{Architecture, IrtConfig, TrainConfig, TransformMode};
use clap::{Args, Parser, Subcommand};

use crate::config::{Alignment, AuxSource, RunConfig};
use crate::corpus_io::ColumnMapping;
use crate::error::{Error, Result};
use crate::pipeline::{
    self, DataOptions, DimOverrides, EvaluateOptions, ExtractNfOptions, ExtractPfOptions,
    FitIrtOptions, ReportOptions, TrainOptions, TransformOptions,
};

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    Architecture::parse(s)
        .ok_or_else(|| format!("expected one of baseline, cat, net, multi, dual; got '{s}'"))
}

fn parse_mode(s: &str) -> std::result::Result<TransformMode, String> {
    TransformMode::parse(s).ok_or_else(|| {
        format!("expected one of identity, multiply_b, prob, multiply_prob, add_prob; got '{s}'")
    })
}

#[derive(Debug, Parser)]
#[command(name = "aesg", version, about = "Grammar-aware essay scoring pipeline")]
pub struct Cli {
    /// JSON run configuration supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count catalog items per essay and write the binary usage table.
    ExtractPf(ExtractPfArgs),
    /// Turn M2 error annotations into per-100-word error rates.
    ExtractNf(ExtractNfArgs),
    /// Calibrate the 2PL model on a usage table; estimate abilities.
    FitIrt(FitIrtArgs),
    /// Weight a usage table with item parameters and abilities.
    Transform(TransformArgs),
    /// Train one model on one fold.
    Train(TrainArgs),
    /// Cross-validate over folds, seeds and batch sizes.
    Evaluate(EvaluateArgs),
    /// Aggregate evaluation reports into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Keep only essays of this prompt.
    #[arg(long)]
    pub prompt: Option<u32>,
    #[arg(long)]
    pub id_column: Option<String>,
    #[arg(long)]
    pub prompt_column: Option<String>,
    #[arg(long)]
    pub text_column: Option<String>,
    #[arg(long)]
    pub score_column: Option<String>,
    #[arg(long)]
    pub grammar_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExtractPfArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write raw match counts.
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractNfArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub m2: Option<PathBuf>,
    /// JSON array of tags; the 54-tag vocabulary by default.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Use the 24 error types without operation prefixes.
    #[arg(long)]
    pub types_24: bool,
    /// Count out-of-vocabulary tags in an OTHER column.
    #[arg(long)]
    pub other: bool,
    #[arg(long, value_enum)]
    pub align: Option<Alignment>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitIrtArgs {
    #[arg(long)]
    pub pf: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub abilities: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub pf: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub abilities: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TransformMode>,
    /// Mixing weight for add_prob (default 0.5).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scaling factor; defaults to the calibration value.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub scales: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Feature tables, concatenated column-wise (repeatable).
    #[arg(long)]
    pub features: Vec<PathBuf>,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Architecture>,
    #[arg(long, value_enum)]
    pub aux: Option<AuxSource>,
    #[arg(long)]
    pub abilities: Option<PathBuf>,
    #[arg(long)]
    pub grammar_scales: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// Seed of the fallback 5-fold split when no fold file is given.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Main-task loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub top_width: Option<usize>,
    #[arg(long)]
    pub top_depth: Option<usize>,
    #[arg(long)]
    pub grammar_width: Option<usize>,
    #[arg(long)]
    pub grammar_depth: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Candidate batch sizes (default 4,8,16,32).
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    /// Seeds (default 0,1,2).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Parallel training jobs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summed test confusion matrix as a TSV grid.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also check recorded input hashes against the files on disk.
    #[arg(long)]
    pub verify: bool,
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::usage(format!("missing --{flag}")))
}

fn columns(args: &CorpusArgs, cfg: &RunConfig) -> ColumnMapping {
    let base = cfg.columns.clone().unwrap_or_default();
    ColumnMapping {
        id: args.id_column.clone().unwrap_or(base.id),
        prompt: args.prompt_column.clone().unwrap_or(base.prompt),
        text: args.text_column.clone().unwrap_or(base.text),
        score: args.score_column.clone().unwrap_or(base.score),
        grammar_score: args.grammar_column.clone().or(base.grammar_score),
    }
}

fn data_options(m: &ModelArgs, cfg: &RunConfig) -> Result<DataOptions> {
    Ok(DataOptions {
        corpus: required(m.corpus.corpus.clone().or(cfg.corpus.clone()), "corpus")?,
        columns: columns(&m.corpus, cfg),
        prompt: m.corpus.prompt.or(cfg.prompt),
        scales: required(m.scales.clone().or(cfg.scales.clone()), "scales")?,
        embeddings: required(
            m.embeddings.clone().or(cfg.embeddings.clone()),
            "embeddings",
        )?,
        features: if m.features.is_empty() {
            cfg.features.clone().unwrap_or_default()
        } else {
            m.features.clone()
        },
        aux: m.aux.or(cfg.aux).unwrap_or(AuxSource::None),
        abilities: m.abilities.clone().or(cfg.abilities.clone()),
        grammar_scales: m.grammar_scales.clone().or(cfg.grammar_scales.clone()),
        folds: m.folds.clone().or(cfg.folds.clone()),
        split_seed: m.split_seed.or(cfg.split_seed).unwrap_or(0),
    })
}

fn dims(m: &ModelArgs, cfg: &RunConfig) -> DimOverrides {
    DimOverrides {
        top_width: m.top_width.or(cfg.top_width),
        top_depth: m.top_depth.or(cfg.top_depth),
        grammar_width: m.grammar_width.or(cfg.grammar_width),
        grammar_depth: m.grammar_depth.or(cfg.grammar_depth),
        dropout: m.dropout.or(cfg.dropout),
    }
}

fn train_config(m: &ModelArgs, cfg: &RunConfig) -> TrainConfig {
    let base = cfg.train.clone().unwrap_or_default();
    TrainConfig {
        learning_rate: m.lr.unwrap_or(base.learning_rate),
        epochs: m.epochs.unwrap_or(base.epochs),
        main_loss_weight: m.lambda.unwrap_or(base.main_loss_weight),
        ..base
    }
}

fn arch(m: &ModelArgs, cfg: &RunConfig) -> Result<Architecture> {
    required(m.arch.or(cfg.architecture), "arch")
}

/// Runs a parsed command and returns its summary line.
pub fn run(cli: Cli) -> Result<String> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::ExtractPf(a) => pipeline::extract_pf(&ExtractPfOptions {
            corpus: required(a.corpus.corpus.clone().or(cfg.corpus.clone()), "corpus")?,
            columns: columns(&a.corpus, &cfg),
            prompt: a.corpus.prompt.or(cfg.prompt),
            catalog: required(a.catalog.or(cfg.catalog.clone()), "catalog")?,
            lexicon: a.lexicon.or(cfg.lexicon.clone()),
            out: required(cfg.output(a.out, "pf.tsv"), "out")?,
            counts: a.counts,
        }),
        Command::ExtractNf(a) => pipeline::extract_nf_stage(&ExtractNfOptions {
            corpus: required(a.corpus.corpus.clone().or(cfg.corpus.clone()), "corpus")?,
            columns: columns(&a.corpus, &cfg),
            prompt: a.corpus.prompt.or(cfg.prompt),
            m2: required(a.m2.or(cfg.m2.clone()), "m2")?,
            vocab: a.vocab.or(cfg.vocab.clone()),
            types_24: a.types_24,
            other: a.other,
            align: a.align.or(cfg.align).unwrap_or(Alignment::Auto),
            out: required(cfg.output(a.out, "nf.tsv"), "out")?,
        }),
        Command::FitIrt(a) => {
            let base = cfg.irt.clone().unwrap_or_default();
            pipeline::fit_irt(&FitIrtOptions {
                pf: required(a.pf.or(cfg.pf.clone()), "pf")?,
                out: required(cfg.output(a.out, "items.json"), "out")?,
                abilities: cfg.output(a.abilities, "abilities.tsv"),
                trace: a.trace,
                irt: IrtConfig {
                    d: a.d.unwrap_or(base.d),
                    max_iterations: a.max_iterations.unwrap_or(base.max_iterations),
                    tolerance: a.tolerance.unwrap_or(base.tolerance),
                    ..base
                },
            })
        }
        Command::Transform(a) => pipeline::transform(&TransformOptions {
            pf: required(a.pf.or(cfg.pf.clone()), "pf")?,
            items: required(a.items.or(cfg.items.clone()), "items")?,
            abilities: a.abilities.or(cfg.abilities.clone()),
            mode: required(a.mode.or(cfg.mode), "mode")?,
            alpha: a.alpha.or(cfg.alpha).unwrap_or(0.5),
            d: a.d.or(cfg.d),
            out: required(cfg.output(a.out, "features.tsv"), "out")?,
        }),
        Command::Train(a) => {
            let base = train_config(&a.model, &cfg);
            pipeline::train(&TrainOptions {
                data: data_options(&a.model, &cfg)?,
                architecture: arch(&a.model, &cfg)?,
                dims: dims(&a.model, &cfg),
                train: TrainConfig {
                    batch_size: a.batch_size.unwrap_or(base.batch_size),
                    seed: a.seed.unwrap_or(base.seed),
                    ..base
                },
                fold: a.fold,
                out: required(cfg.output(a.out, "model.bin"), "out")?,
                history: a.history,
            })
        }
        Command::Evaluate(a) => pipeline::evaluate(&EvaluateOptions {
            data: data_options(&a.model, &cfg)?,
            architecture: arch(&a.model, &cfg)?,
            dims: dims(&a.model, &cfg),
            train: train_config(&a.model, &cfg),
            batch_sizes: a
                .batch_sizes
                .or(cfg.batch_sizes.clone())
                .unwrap_or_else(|| vec![4, 8, 16, 32]),
            seeds: a
                .seeds
                .or(cfg.seeds.clone())
                .unwrap_or_else(|| vec![0, 1, 2]),
            jobs: a.jobs.or(cfg.jobs).unwrap_or(1),
            out: required(cfg.output(a.out, "report.json"), "out")?,
            confusion: a.confusion,
        }),
        Command::Report(a) => pipeline::report(&ReportOptions {
            reports: a.reports,
            out: required(cfg.output(a.out, "summary.tsv"), "out")?,
            verify: a.verify,
        }),
    }
}
