//! `--config run.json`: defaults for any command-line flag.

use std::path::{Path, PathBuf};

use aesg_core::{Architecture, IrtConfig, TrainConfig, TransformMode};
use serde::{Deserialize, Serialize};

use crate::artifacts::read_json;
use crate::corpus_io::ColumnMapping;
use crate::error::Result;

/// Where auxiliary-task labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AuxSource {
    /// Single-task training.
    None,
    /// Human grammar scores from the corpus.
    Human,
    /// IRT abilities, standardized, clipped to [-3, 3] and divided by 3.
    Irt,
}

/// How M2 blocks are matched to essays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// By `# id=` comments when present, otherwise by position.
    Auto,
    Id,
    /// Block `i` belongs to essay `i`.
    Position,
}

/// Every field is optional; flags given on the command line win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub columns: Option<ColumnMapping>,
    pub prompt: Option<u32>,
    pub folds: Option<PathBuf>,
    pub split_seed: Option<u64>,
    pub scales: Option<PathBuf>,
    pub grammar_scales: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub m2: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub align: Option<Alignment>,
    pub pf: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub abilities: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub features: Option<Vec<PathBuf>>,
    pub output_dir: Option<PathBuf>,
    pub architecture: Option<Architecture>,
    pub mode: Option<TransformMode>,
    pub alpha: Option<f64>,
    pub d: Option<f64>,
    pub aux: Option<AuxSource>,
    pub irt: Option<IrtConfig>,
    pub train: Option<TrainConfig>,
    pub batch_sizes: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub top_width: Option<usize>,
    pub top_depth: Option<usize>,
    pub grammar_width: Option<usize>,
    pub grammar_depth: Option<usize>,
    pub dropout: Option<f64>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// `flag`, else `output_dir/name`.
    pub fn output(&self, flag: Option<PathBuf>, name: &str) -> Option<PathBuf> {
        flag.or_else(|| self.output_dir.as_ref().map(|d| d.join(name)))
    }
}
