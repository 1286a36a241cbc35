//! Pipeline stages. Each stage reads its declared inputs, writes its
//! declared outputs with embedded input hashes, and returns a one-line
//! summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aesg_core::errors::{group_by_essay, Edit};
use aesg_core::eval::{assemble_report, jobs, run_job, CvData, CvPlan, FoldSplit};
use aesg_core::irt::{estimate_abilities, fit_2pl};
use aesg_core::scorer::{train as train_model, Dataset};
use aesg_core::{
    apply_transform, binarize, extract_nf, normalize_score, parse_m2, AbilityEstimate,
    Architecture, ConfusionMatrix, ErrorTagVocabulary, Essay, EvaluationReport, IrtConfig,
    ModelDims, PfVector, ResponseMatrix, ScoreScale, ScoringModel, TrainConfig, TransformMode,
    TransformSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    load_catalog, load_vocabulary, model_to_bytes, read_json, to_json, write_file, ItemsFile,
    TraceFile,
};
use crate::config::{Alignment, AuxSource};
use crate::corpus_io::{
    folds_for, load_corpus, load_scales, scale_for, single_prompt, ColumnMapping,
};
use crate::embeddings::EmbeddingFile;
use crate::error::{Error, Result};
use crate::provenance::{conflicts, hash_file, Provenance};
use crate::tables::{AbilityTable, FeatureTable};

#[derive(Debug, Clone, Serialize)]
pub struct ExtractPfOptions {
    pub corpus: PathBuf,
    pub columns: ColumnMapping,
    pub prompt: Option<u32>,
    pub catalog: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
    /// Optional raw match counts alongside the binary table.
    pub counts: Option<PathBuf>,
}

pub fn extract_pf(opts: &ExtractPfOptions) -> Result<String> {
    let essays = load_corpus(&opts.corpus, &opts.columns, opts.prompt)?;
    let catalog = load_catalog(&opts.catalog, opts.lexicon.as_deref())?;
    let mut prov = Provenance::new("extract-pf").with_config(opts);
    prov.add_input("corpus", &opts.corpus)?
        .add_input("catalog", &opts.catalog)?;
    if let Some(lex) = &opts.lexicon {
        prov.add_input("lexicon", lex)?;
    }
    let counts: Vec<Vec<u32>> = essays
        .par_iter()
        .map(|e| catalog.count_items(&e.tokens))
        .collect();
    let columns: Vec<String> = catalog.labels().iter().map(|s| s.to_string()).collect();
    let mut meta = BTreeMap::new();
    meta.insert("kind".to_string(), "pf".to_string());
    meta.insert(
        "catalog_sha256".to_string(),
        prov.inputs["catalog"].sha256.clone(),
    );

    let mut binary = FeatureTable::new(columns.clone());
    binary.meta = meta.clone();
    binary.provenance = Some(prov.clone());
    let mut raw = FeatureTable::new(columns);
    raw.meta = meta;
    raw.meta.insert("kind".to_string(), "pf_counts".to_string());
    raw.provenance = Some(prov);
    for (essay, c) in essays.iter().zip(&counts) {
        binary.push_row(&essay.essay_id, &binarize(c).values);
        raw.push_row(
            &essay.essay_id,
            &c.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
        );
    }
    write_file(&opts.out, binary.to_tsv())?;
    if let Some(path) = &opts.counts {
        write_file(path, raw.to_tsv())?;
    }
    let used = binary.values.iter().filter(|&&v| v == 1.0).count();
    Ok(format!(
        "extract-pf: {} essays x {} items ({} item uses) -> {}",
        essays.len(),
        binary.width(),
        used,
        opts.out.display()
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractNfOptions {
    pub corpus: PathBuf,
    pub columns: ColumnMapping,
    pub prompt: Option<u32>,
    pub m2: PathBuf,
    /// JSON tag list; the 54-tag default when absent.
    pub vocab: Option<PathBuf>,
    pub types_24: bool,
    pub other: bool,
    pub align: Alignment,
    pub out: PathBuf,
}

fn align_edits(
    essays: &[Essay],
    blocks: &[aesg_core::errors::M2Block],
    align: Alignment,
    m2: &Path,
) -> Result<(Vec<Vec<Edit>>, usize, usize)> {
    let groups = group_by_essay(blocks);
    let has_ids = groups.iter().any(|(id, _)| id.is_some());
    let by_id = match align {
        Alignment::Id if !has_ids => {
            return Err(Error::format(m2, "no '# id=' comments for id alignment"))
        }
        Alignment::Id => true,
        Alignment::Position => false,
        Alignment::Auto => has_ids,
    };
    if !by_id {
        let groups: Vec<Vec<Edit>> = if has_ids {
            blocks.iter().map(|b| b.edits.clone()).collect()
        } else {
            groups.into_iter().map(|(_, e)| e).collect()
        };
        if groups.len() != essays.len() {
            return Err(Error::format(
                m2,
                format!(
                    "{} blocks for {} essays under positional alignment",
                    groups.len(),
                    essays.len()
                ),
            ));
        }
        return Ok((groups, 0, 0));
    }
    let mut map: BTreeMap<String, Vec<Edit>> = BTreeMap::new();
    for (id, edits) in groups {
        if let Some(id) = id {
            map.entry(id).or_default().extend(edits);
        } else {
            return Err(Error::format(m2, "blocks before the first '# id=' comment"));
        }
    }
    let mut missing = 0;
    let out = essays
        .iter()
        .map(|e| {
            map.remove(&e.essay_id).unwrap_or_else(|| {
                missing += 1;
                Vec::new()
            })
        })
        .collect();
    Ok((out, missing, map.len()))
}

pub fn extract_nf_stage(opts: &ExtractNfOptions) -> Result<String> {
    let essays = load_corpus(&opts.corpus, &opts.columns, opts.prompt)?;
    let vocab = match (&opts.vocab, opts.types_24) {
        (Some(_), true) => return Err(Error::usage("--vocab and --types-24 are exclusive")),
        (Some(p), false) => load_vocabulary(p, opts.other)?,
        (None, true) => ErrorTagVocabulary::types_24().with_other(opts.other),
        (None, false) => ErrorTagVocabulary::default_54().with_other(opts.other),
    };
    let text = std::fs::read_to_string(&opts.m2).map_err(|e| Error::io(&opts.m2, e))?;
    let blocks = parse_m2(&text).map_err(|e| Error::format(&opts.m2, e.to_string()))?;
    let (edits, missing, unmatched) = align_edits(&essays, &blocks, opts.align, &opts.m2)?;

    let mut prov = Provenance::new("extract-nf").with_config(opts);
    prov.add_input("corpus", &opts.corpus)?
        .add_input("m2", &opts.m2)?;
    if let Some(v) = &opts.vocab {
        prov.add_input("vocab", v)?;
    }
    let mut table = FeatureTable::new(vocab.column_names());
    table.meta.insert("kind".into(), "nf".into());
    table
        .meta
        .insert("units".into(), "errors_per_100_words".into());
    table.provenance = Some(prov);
    let mut dropped = 0;
    let mut total = 0;
    for (essay, e) in essays.iter().zip(&edits) {
        let nf = extract_nf(e, essay.word_count, &vocab)
            .map_err(|err| Error::data(format!("essay {}: {err}", essay.essay_id)))?;
        dropped += nf.dropped;
        total += e.len();
        table.push_row(&essay.essay_id, &nf.values);
    }
    write_file(&opts.out, table.to_tsv())?;
    Ok(format!(
        "extract-nf: {} essays, {} edits ({} outside vocabulary, {} essays without annotations, {} annotated ids not in corpus) -> {}",
        essays.len(),
        total,
        dropped,
        missing,
        unmatched,
        opts.out.display()
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct FitIrtOptions {
    pub pf: PathBuf,
    pub out: PathBuf,
    pub abilities: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub irt: IrtConfig,
}

fn response_matrix(table: &FeatureTable, path: &Path) -> Result<ResponseMatrix> {
    if !table.is_binary() {
        return Err(Error::format(path, "response table must be binary (0/1)"));
    }
    let data = table.values.iter().map(|&v| v as u8).collect();
    ResponseMatrix::new(table.len(), table.width(), data)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn fit_irt(opts: &FitIrtOptions) -> Result<String> {
    opts.irt
        .validate()
        .map_err(|e| Error::usage(e.to_string()))?;
    let table = FeatureTable::read(&opts.pf)?;
    let matrix = response_matrix(&table, &opts.pf)?;
    let fit = fit_2pl(&matrix, &opts.irt)
        .map_err(|e| Error::data(format!("{}: {e}", opts.pf.display())))?;
    let mut prov = Provenance::new("fit-irt").with_config(opts);
    prov.add_input("pf", &opts.pf)?;
    write_file(
        &opts.out,
        to_json(&ItemsFile::from_fit(&fit, opts.irt.d, prov.clone())),
    )?;
    if let Some(path) = &opts.abilities {
        let estimates = estimate_abilities(&matrix, &fit.items, &opts.irt)
            .map_err(|e| Error::data(e.to_string()))?;
        let t = AbilityTable {
            provenance: Some(prov.clone()),
            ids: table.ids.clone(),
            estimates,
        };
        write_file(path, t.to_tsv())?;
    }
    if let Some(path) = &opts.trace {
        write_file(
            path,
            to_json(&TraceFile {
                log_likelihood: fit.trace.clone(),
                provenance: prov,
            }),
        )?;
    }
    let calibrated = fit.items.iter().filter(|i| i.is_calibrated()).count();
    Ok(format!(
        "fit-irt: {} writers x {} items, {} calibrated, {} iterations, converged={}, log-likelihood {:.6} -> {}",
        matrix.writers(),
        matrix.items(),
        calibrated,
        fit.iterations,
        fit.converged,
        fit.trace.last().copied().unwrap_or(f64::NAN),
        opts.out.display()
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformOptions {
    pub pf: PathBuf,
    pub items: PathBuf,
    pub abilities: Option<PathBuf>,
    pub mode: TransformMode,
    pub alpha: f64,
    /// Scaling factor; the calibration value when absent.
    pub d: Option<f64>,
    pub out: PathBuf,
}

pub fn transform(opts: &TransformOptions) -> Result<String> {
    let table = FeatureTable::read(&opts.pf)?;
    let items = ItemsFile::read(&opts.items)?;
    if items.items.len() != table.width() {
        return Err(Error::data(format!(
            "{} has {} items but {} has {} columns",
            opts.items.display(),
            items.items.len(),
            opts.pf.display(),
            table.width()
        )));
    }
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::usage(format!(
            "--alpha must lie in [0, 1], got {}",
            opts.alpha
        )));
    }
    let spec = TransformSpec {
        mode: opts.mode,
        alpha: opts.alpha,
        d: opts.d.unwrap_or(items.d),
    };
    let abilities = match (&opts.abilities, opts.mode.needs_ability()) {
        (Some(p), _) => Some(AbilityTable::read(p)?),
        (None, true) => {
            return Err(Error::usage(format!(
                "--mode {} needs --abilities",
                opts.mode.name()
            )))
        }
        (None, false) => None,
    };
    let index = abilities.as_ref().map(AbilityTable::index);
    let mut prov = Provenance::new("transform").with_config(opts);
    prov.add_input("pf", &opts.pf)?
        .add_input("items", &opts.items)?;
    if let Some(p) = &opts.abilities {
        prov.add_input("abilities", p)?;
    }
    let mut out = FeatureTable::new(table.columns.clone());
    out.meta.insert("kind".into(), "pf_transformed".into());
    out.meta.insert("mode".into(), opts.mode.name().into());
    out.meta.insert("alpha".into(), spec.alpha.to_string());
    out.meta.insert("D".into(), spec.d.to_string());
    if let Some(h) = table.meta.get("catalog_sha256") {
        out.meta.insert("catalog_sha256".into(), h.clone());
    }
    out.provenance = Some(prov);
    for (i, id) in table.ids.iter().enumerate() {
        let theta: Option<&AbilityEstimate> = match &index {
            Some(ix) => Some(
                ix.get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::data(format!("no ability for essay '{id}'")))?,
            ),
            None => None,
        };
        let g = PfVector {
            values: table.row(i).to_vec(),
            binary: true,
        };
        let row = apply_transform(&g, &items.items, theta, &spec)
            .map_err(|e| Error::data(format!("essay {id}: {e}")))?;
        out.push_row(id, &row);
    }
    write_file(&opts.out, out.to_tsv())?;
    Ok(format!(
        "transform: {} essays x {} items, mode {} (alpha {}, D {}) -> {}",
        out.len(),
        out.width(),
        opts.mode.name(),
        spec.alpha,
        spec.d,
        opts.out.display()
    ))
}

/// Data inputs shared by `train` and `evaluate`.
#[derive(Debug, Clone, Serialize)]
pub struct DataOptions {
    pub corpus: PathBuf,
    pub columns: ColumnMapping,
    pub prompt: Option<u32>,
    pub scales: PathBuf,
    pub embeddings: PathBuf,
    pub features: Vec<PathBuf>,
    pub aux: AuxSource,
    pub abilities: Option<PathBuf>,
    pub grammar_scales: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub split_seed: u64,
}

/// Network shape overrides on top of the standard sizes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DimOverrides {
    pub top_width: Option<usize>,
    pub top_depth: Option<usize>,
    pub grammar_width: Option<usize>,
    pub grammar_depth: Option<usize>,
    pub dropout: Option<f64>,
}

impl DimOverrides {
    pub fn apply(&self, arch: Architecture, embed_dim: usize, feature_dim: usize) -> ModelDims {
        let base = ModelDims::new(arch, embed_dim, feature_dim);
        ModelDims {
            top_width: self.top_width.unwrap_or(base.top_width),
            top_depth: self.top_depth.unwrap_or(base.top_depth),
            grammar_width: self.grammar_width.unwrap_or(base.grammar_width),
            grammar_depth: self.grammar_depth.unwrap_or(base.grammar_depth),
            dropout: self.dropout.unwrap_or(base.dropout),
            ..base
        }
    }
}

pub struct LoadedData {
    pub essays: Vec<Essay>,
    pub prompt: u32,
    pub dataset: Dataset,
    pub scale: ScoreScale,
    pub aux_scale: Option<ScoreScale>,
    pub folds: Vec<FoldSplit>,
    pub feature_columns: Vec<String>,
    pub encoder_id: String,
    pub provenance: Provenance,
}

/// Standardizes over the whole ability table, clips to [-3, 3] and divides
/// by 3 so the targets share the main task's range.
pub fn irt_aux_targets(table: &AbilityTable, ids: &[&str], path: &Path) -> Result<Vec<f64>> {
    let n = table.estimates.len() as f64;
    if n < 2.0 {
        return Err(Error::format(
            path,
            "need at least two abilities to standardize",
        ));
    }
    let mean = table.estimates.iter().map(|e| e.theta).sum::<f64>() / n;
    let var = table
        .estimates
        .iter()
        .map(|e| (e.theta - mean).powi(2))
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::format(path, "abilities have zero variance"));
    }
    let index = table.index();
    ids.iter()
        .map(|id| {
            let e = index
                .get(id)
                .ok_or_else(|| Error::format(path, format!("no ability for essay '{id}'")))?;
            Ok(((e.theta - mean) / sd).clamp(-3.0, 3.0) / 3.0)
        })
        .collect()
}

pub fn load_data(
    opts: &DataOptions,
    arch: Architecture,
    needs_aux: bool,
    command: &str,
) -> Result<LoadedData> {
    let essays = load_corpus(&opts.corpus, &opts.columns, opts.prompt)?;
    let prompt = single_prompt(&essays)?;
    let scales = load_scales(&opts.scales)?;
    let scale = scale_for(&scales, prompt, &opts.scales)?;
    let ids: Vec<&str> = essays.iter().map(|e| e.essay_id.as_str()).collect();
    let mut prov = Provenance::new(command);
    prov.add_input("corpus", &opts.corpus)?
        .add_input("scales", &opts.scales)?
        .add_input("embeddings", &opts.embeddings)?;

    let mut targets = Vec::with_capacity(essays.len());
    for e in &essays {
        targets.push(
            normalize_score(e.raw_score, &scale)
                .map_err(|err| Error::data(format!("essay {}: {err}", e.essay_id)))?,
        );
    }
    let scores: Vec<i64> = essays.iter().map(|e| e.raw_score).collect();

    let emb = EmbeddingFile::read(&opts.embeddings)?;
    let embeddings = emb.select(&ids, &opts.embeddings)?;

    let (features, feature_columns) = if arch.uses_features() {
        if opts.features.is_empty() {
            return Err(Error::usage(format!(
                "architecture {} needs --features",
                arch.name()
            )));
        }
        let mut tables = Vec::new();
        for (i, p) in opts.features.iter().enumerate() {
            tables.push((FeatureTable::read(p)?, p.as_path()));
            prov.add_input(&format!("features.{i}"), p)?;
        }
        let joined = FeatureTable::concat(&tables)?;
        (joined.select(&ids, &opts.features[0])?, joined.columns)
    } else {
        (Vec::new(), Vec::new())
    };
    let feature_dim = feature_columns.len();
    let mut dataset = Dataset::new(
        emb.header.d,
        feature_dim,
        embeddings,
        features,
        targets,
        scores,
    )
    .map_err(|e| Error::data(e.to_string()))?;

    let mut aux_scale = None;
    match (opts.aux, needs_aux) {
        (AuxSource::None, true) => {
            return Err(Error::usage(format!(
                "architecture {} needs --aux human or --aux irt",
                arch.name()
            )))
        }
        (_, false) => {}
        (AuxSource::Human, true) => {
            let path = opts
                .grammar_scales
                .as_ref()
                .ok_or_else(|| Error::usage("--aux human needs --grammar-scales"))?;
            let gs = scale_for(&load_scales(path)?, prompt, path)?;
            prov.add_input("grammar_scales", path)?;
            let mut t = Vec::new();
            let mut s = Vec::new();
            for e in &essays {
                let g = e.grammar_score.ok_or_else(|| {
                    Error::data(format!("essay {} has no grammar score", e.essay_id))
                })?;
                t.push(normalize_score(g, &gs).map_err(|err| {
                    Error::data(format!("essay {} grammar score: {err}", e.essay_id))
                })?);
                s.push(g);
            }
            dataset = dataset
                .with_aux(t, Some(s))
                .map_err(|e| Error::data(e.to_string()))?;
            aux_scale = Some(gs);
        }
        (AuxSource::Irt, true) => {
            let path = opts
                .abilities
                .as_ref()
                .ok_or_else(|| Error::usage("--aux irt needs --abilities"))?;
            let table = AbilityTable::read(path)?;
            prov.add_input("abilities", path)?;
            let t = irt_aux_targets(&table, &ids, path)?;
            dataset = dataset
                .with_aux(t, None)
                .map_err(|e| Error::data(e.to_string()))?;
        }
    }

    let assignments = folds_for(&essays, opts.folds.as_deref(), opts.split_seed)?;
    if let Some(p) = &opts.folds {
        prov.add_input("folds", p)?;
    }
    let row: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let rows = |v: &[String]| v.iter().map(|id| row[id.as_str()]).collect::<Vec<_>>();
    let folds = assignments
        .iter()
        .map(|f| FoldSplit {
            train: rows(&f.train),
            dev: rows(&f.dev),
            test: rows(&f.test),
        })
        .collect();
    Ok(LoadedData {
        prompt,
        dataset,
        scale,
        aux_scale,
        folds,
        feature_columns,
        encoder_id: emb.header.encoder_id.clone(),
        provenance: prov,
        essays,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOptions {
    pub data: DataOptions,
    pub architecture: Architecture,
    pub dims: DimOverrides,
    pub train: TrainConfig,
    pub fold: usize,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFile {
    pub history: Vec<aesg_core::scorer::EpochRecord>,
    pub provenance: Provenance,
}

pub fn train(opts: &TrainOptions) -> Result<String> {
    opts.train
        .validate()
        .map_err(|e| Error::usage(e.to_string()))?;
    let arch = opts.architecture;
    let needs_aux = arch.has_aux_head() && opts.train.main_loss_weight < 1.0;
    let data = load_data(&opts.data, arch, needs_aux, "train")?;
    let split = data.folds.get(opts.fold).ok_or_else(|| {
        Error::usage(format!(
            "--fold {} but only {} folds",
            opts.fold,
            data.folds.len()
        ))
    })?;
    let dims = opts
        .dims
        .apply(arch, data.dataset.embed_dim, data.dataset.feature_dim);
    let mut model =
        ScoringModel::new(arch, dims, opts.train.seed).map_err(|e| Error::usage(e.to_string()))?;
    let train_set = data.dataset.subset(&split.train);
    let dev_set = data.dataset.subset(&split.dev);
    let history = train_model(
        &mut model,
        &train_set,
        Some(&dev_set),
        &data.scale,
        &opts.train,
    )
    .map_err(|e| Error::data(e.to_string()))?;
    let mut prov = data.provenance.clone().with_config(opts);
    prov.command = "train".into();
    write_file(&opts.out, model_to_bytes(&model, &opts.train, prov.clone()))?;
    if let Some(path) = &opts.history {
        write_file(
            path,
            to_json(&HistoryFile {
                history: history.clone(),
                provenance: prov,
            }),
        )?;
    }
    let last = history.last();
    Ok(format!(
        "train: {} prompt {} fold {} ({} train / {} dev), final loss {:.6}, dev QWK {:.4} -> {}",
        arch.name(),
        data.prompt,
        opts.fold,
        train_set.len(),
        dev_set.len(),
        last.map_or(f64::NAN, |h| h.train_loss),
        last.and_then(|h| h.dev_qwk).unwrap_or(f64::NAN),
        opts.out.display()
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateOptions {
    pub data: DataOptions,
    pub architecture: Architecture,
    pub dims: DimOverrides,
    pub train: TrainConfig,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Parallel jobs; does not affect results.
    #[serde(skip)]
    pub jobs: usize,
    pub out: PathBuf,
    pub confusion: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub prompt: u32,
    pub essays: usize,
    pub encoder_id: String,
    pub feature_columns: usize,
    pub report: EvaluationReport,
    pub provenance: Provenance,
}

pub fn confusion_tsv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("reference\\prediction");
    for h in cm.min..=cm.max {
        let _ = write!(out, "\t{h}");
    }
    out.push('\n');
    for r in cm.min..=cm.max {
        let _ = write!(out, "{r}");
        for h in cm.min..=cm.max {
            let _ = write!(out, "\t{}", cm.get(r, h));
        }
        out.push('\n');
    }
    out
}

/// Runs the cross-validation plan on a pool of `jobs` threads.
pub fn run_plan(input: &CvData<'_>, plan: &CvPlan, jobs_n: usize) -> Result<EvaluationReport> {
    let all = jobs(plan);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs_n.max(1))
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        all.par_iter()
            .map(|&job| run_job(input, plan, job))
            .collect()
    });
    Ok(assemble_report(plan, &input.scale, outcomes))
}

pub fn evaluate(opts: &EvaluateOptions) -> Result<String> {
    opts.train
        .validate()
        .map_err(|e| Error::usage(e.to_string()))?;
    if opts.batch_sizes.is_empty() || opts.batch_sizes.contains(&0) {
        return Err(Error::usage("--batch-sizes must list positive sizes"));
    }
    if opts.seeds.is_empty() {
        return Err(Error::usage("--seeds must not be empty"));
    }
    let arch = opts.architecture;
    let needs_aux = arch.has_aux_head() && opts.train.main_loss_weight < 1.0;
    let data = load_data(&opts.data, arch, needs_aux, "evaluate")?;
    let dims = opts
        .dims
        .apply(arch, data.dataset.embed_dim, data.dataset.feature_dim);
    ScoringModel::new(arch, dims.clone(), 0).map_err(|e| Error::usage(e.to_string()))?;
    let plan = CvPlan {
        architecture: arch,
        dims,
        train: opts.train.clone(),
        batch_sizes: opts.batch_sizes.clone(),
        seeds: opts.seeds.clone(),
        folds: data.folds.clone(),
    };
    let input = CvData {
        data: &data.dataset,
        scale: data.scale,
        aux_scale: data.aux_scale,
    };
    let mut report = run_plan(&input, &plan, opts.jobs)?;
    report.notes = report_notes(opts, &data);
    let mut prov = data.provenance.clone().with_config(opts);
    prov.command = "evaluate".into();
    let file = ReportFile {
        prompt: data.prompt,
        essays: data.essays.len(),
        encoder_id: data.encoder_id.clone(),
        feature_columns: data.feature_columns.len(),
        report,
        provenance: prov,
    };
    write_file(&opts.out, to_json(&file))?;
    if let Some(path) = &opts.confusion {
        write_file(path, confusion_tsv(&file.report.confusion_total))?;
    }
    let r = &file.report;
    Ok(format!(
        "evaluate: {} prompt {}, {} cells ({} failed), mean dev QWK {}, mean test QWK {}, majority batch size {} -> {}",
        arch.name(),
        data.prompt,
        r.cells.len(),
        r.failed_cells,
        fmt_opt(r.mean_dev_qwk),
        fmt_opt(r.mean_test_qwk),
        r.majority_batch_size.map_or("-".to_string(), |b| b.to_string()),
        opts.out.display()
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn report_notes(opts: &EvaluateOptions, data: &LoadedData) -> Vec<String> {
    let mut notes = vec![
        format!(
            "embeddings are frozen inputs from encoder '{}'; the encoder is not fine-tuned",
            data.encoder_id
        ),
        "final model = parameters after the last epoch; per-epoch dev QWK is in dev_qwk_history"
            .to_string(),
        "batch size selected per (fold, seed) by dev QWK, ties to the smallest".to_string(),
        "IRT parameters, when used, were calibrated on the full prompt".to_string(),
    ];
    match opts.data.aux {
        AuxSource::Human if data.aux_scale.is_some() => notes.push(
            "auxiliary targets: human grammar scores normalized with their own score scale".to_string(),
        ),
        AuxSource::Irt if data.dataset.aux_targets.is_some() => notes.push(
            "auxiliary targets: IRT abilities standardized over the ability file, clipped to [-3, 3], divided by 3".to_string(),
        ),
        _ => {}
    }
    notes
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportOptions {
    pub reports: Vec<PathBuf>,
    pub out: PathBuf,
    /// Also require recorded input hashes to match the files on disk.
    pub verify: bool,
}

pub fn report(opts: &ReportOptions) -> Result<String> {
    if opts.reports.is_empty() {
        return Err(Error::usage("no reports given"));
    }
    let mut files = Vec::new();
    for p in &opts.reports {
        files.push((p.display().to_string(), read_json::<ReportFile>(p)?));
    }
    let mut problems = conflicts(files.iter().map(|(p, f)| (p.as_str(), &f.provenance)));
    if opts.verify {
        for (name, f) in &files {
            for (role, input) in &f.provenance.inputs {
                let path = Path::new(&input.path);
                match hash_file(path) {
                    Ok(h) if h == input.sha256 => {}
                    Ok(h) => problems.push(format!(
                        "{name}: {role} {} now hashes to {h}, recorded {}",
                        input.path, input.sha256
                    )),
                    Err(e) => problems.push(format!("{name}: {role}: {e}")),
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::data(format!(
            "refusing to aggregate: {}",
            problems.join("; ")
        )));
    }
    let mut out = String::from(
        "report\tprompt\tarchitecture\tfeatures\taux\tcells\tfailed\tmean_dev_qwk\tmean_test_qwk\tmean_test_aux_qwk\tmajority_batch_size\n",
    );
    for (name, f) in &files {
        let r = &f.report;
        let aux = f
            .provenance
            .config
            .pointer("/data/aux")
            .and_then(|v| v.as_str())
            .unwrap_or("none");
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{aux}\t{}\t{}\t{}\t{}\t{}\t{}",
            f.prompt,
            r.architecture.name(),
            f.feature_columns,
            r.cells.len(),
            r.failed_cells,
            r.mean_dev_qwk.map_or("NA".into(), |v| v.to_string()),
            r.mean_test_qwk.map_or("NA".into(), |v| v.to_string()),
            r.mean_test_aux_qwk.map_or("NA".into(), |v| v.to_string()),
            r.majority_batch_size.map_or("NA".into(), |v| v.to_string()),
        );
    }
    write_file(&opts.out, &out)?;
    Ok(format!(
        "report: {} reports aggregated -> {}",
        files.len(),
        opts.out.display()
    ))
}
