//! Quadratic weighted kappa, confusion matrices and the cross-validation
//! harness with per-fold batch-size selection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{denormalize_prediction, ScoreScale};
use crate::scorer::{
    predict_all, train, Architecture, Dataset, EpochRecord, ModelDims, ScoringModel, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("reference has {reference} scores but hypothesis has {hypothesis}")]
    LengthMismatch { reference: usize, hypothesis: usize },
    #[error("no scores to compare")]
    Empty,
    #[error("score {value} outside {min}..={max}")]
    OutOfRange { value: i64, min: i64, max: i64 },
    #[error("invalid score range {min}..={max}")]
    BadRange { min: i64, max: i64 },
    #[error("confusion matrices cover different score ranges")]
    RangeMismatch,
}

fn check(reference: &[i64], hypothesis: &[i64], min: i64, max: i64) -> Result<usize, EvalError> {
    if max < min {
        return Err(EvalError::BadRange { min, max });
    }
    if reference.len() != hypothesis.len() {
        return Err(EvalError::LengthMismatch {
            reference: reference.len(),
            hypothesis: hypothesis.len(),
        });
    }
    if reference.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&value) = reference
        .iter()
        .chain(hypothesis)
        .find(|&&v| v < min || v > max)
    {
        return Err(EvalError::OutOfRange { value, min, max });
    }
    Ok((max - min + 1) as usize)
}

/// Quadratic weighted kappa on the integer scale `min..=max`. Both the
/// observed and the chance-expected matrices are normalized to sum 1.
/// Identical inputs give exactly 1; when the expected disagreement is zero
/// the value is defined as 0.
pub fn qwk(reference: &[i64], hypothesis: &[i64], min: i64, max: i64) -> Result<f64, EvalError> {
    let m = check(reference, hypothesis, min, max)?;
    if reference == hypothesis {
        return Ok(1.0);
    }
    let n = reference.len() as f64;
    let mut observed = vec![0.0; m * m];
    let mut hist_ref = vec![0.0; m];
    let mut hist_hyp = vec![0.0; m];
    for (&r, &h) in reference.iter().zip(hypothesis) {
        let (r, h) = ((r - min) as usize, (h - min) as usize);
        observed[r * m + h] += 1.0 / n;
        hist_ref[r] += 1.0 / n;
        hist_hyp[h] += 1.0 / n;
    }
    let denom_w = ((m - 1) * (m - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let d = i as f64 - j as f64;
            let w = d * d / denom_w;
            num += w * observed[i * m + j];
            den += w * hist_ref[i] * hist_hyp[j];
        }
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - num / den)
}

/// Reference-by-hypothesis count matrix on `min..=max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub min: i64,
    pub max: i64,
    /// Row-major; rows are reference scores, columns hypothesis scores.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(min: i64, max: i64) -> Self {
        let m = (max - min + 1).max(0) as usize;
        Self {
            min,
            max,
            counts: vec![0; m * m],
        }
    }

    pub fn size(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn get(&self, reference: i64, hypothesis: i64) -> u64 {
        let m = self.size();
        self.counts[(reference - self.min) as usize * m + (hypothesis - self.min) as usize]
    }

    /// Cellwise sum, used to pool folds and seeds.
    pub fn accumulate(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if (self.min, self.max) != (other.min, other.max) {
            return Err(EvalError::RangeMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.size())
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn confusion_matrix(
    reference: &[i64],
    hypothesis: &[i64],
    min: i64,
    max: i64,
) -> Result<ConfusionMatrix, EvalError> {
    let m = check(reference, hypothesis, min, max)?;
    let mut cm = ConfusionMatrix::zeros(min, max);
    for (&r, &h) in reference.iter().zip(hypothesis) {
        cm.counts[(r - min) as usize * m + (h - min) as usize] += 1;
    }
    Ok(cm)
}

/// Row indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub architecture: Architecture,
    pub dims: ModelDims,
    /// Base training configuration; batch size and seed are overridden per job.
    pub train: TrainConfig,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub folds: Vec<FoldSplit>,
}

/// Dataset plus the scales needed to score it.
#[derive(Debug, Clone, Copy)]
pub struct CvData<'a> {
    pub data: &'a Dataset,
    pub scale: ScoreScale,
    /// Scale of the auxiliary labels when they are integer grammar scores.
    pub aux_scale: Option<ScoreScale>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Job {
    pub fold: usize,
    pub seed: u64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub dev_qwk: f64,
    pub test_qwk: f64,
    pub test_aux_qwk: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job: Job,
    pub result: Result<JobResult, String>,
}

/// All (fold, seed, batch size) jobs in report order.
pub fn jobs(plan: &CvPlan) -> Vec<Job> {
    let mut batches = plan.batch_sizes.clone();
    batches.sort_unstable();
    batches.dedup();
    let mut out = Vec::new();
    for fold in 0..plan.folds.len() {
        for &seed in &plan.seeds {
            for &batch_size in &batches {
                out.push(Job {
                    fold,
                    seed,
                    batch_size,
                });
            }
        }
    }
    out
}

fn run_job_inner(input: &CvData<'_>, plan: &CvPlan, job: Job) -> Result<JobResult, String> {
    let split = plan
        .folds
        .get(job.fold)
        .ok_or_else(|| format!("no fold {}", job.fold))?;
    let train_set = input.data.subset(&split.train);
    let dev_set = input.data.subset(&split.dev);
    let test_set = input.data.subset(&split.test);
    let mut model = ScoringModel::new(plan.architecture, plan.dims.clone(), job.seed)
        .map_err(|e| format!("{e}"))?;
    let config = TrainConfig {
        batch_size: job.batch_size,
        seed: job.seed,
        ..plan.train.clone()
    };
    let history = train(
        &mut model,
        &train_set,
        Some(&dev_set),
        &input.scale,
        &config,
    )
    .map_err(|e| format!("{e}"))?;
    let score = |set: &Dataset| -> Result<(Vec<i64>, Vec<Option<f64>>), String> {
        let preds = predict_all(&model, set).map_err(|e| format!("{e}"))?;
        Ok((
            preds
                .iter()
                .map(|p| denormalize_prediction(p.main, &input.scale))
                .collect(),
            preds.iter().map(|p| p.aux).collect(),
        ))
    };
    let (min, max) = (input.scale.min_score, input.scale.max_score);
    let (dev_hyp, _) = score(&dev_set)?;
    let dev_qwk = qwk(&dev_set.scores, &dev_hyp, min, max).map_err(|e| format!("dev: {e}"))?;
    let (test_hyp, test_aux) = score(&test_set)?;
    let test_qwk = qwk(&test_set.scores, &test_hyp, min, max).map_err(|e| format!("test: {e}"))?;
    let confusion =
        confusion_matrix(&test_set.scores, &test_hyp, min, max).map_err(|e| format!("{e}"))?;
    let test_aux_qwk = match (
        input.aux_scale,
        test_set.aux_scores.as_ref(),
        model.has_aux(),
    ) {
        (Some(aux_scale), Some(aux_ref), true) => {
            let hyp: Vec<i64> = test_aux
                .iter()
                .map(|a| denormalize_prediction(a.unwrap_or(0.0), &aux_scale))
                .collect();
            Some(
                qwk(aux_ref, &hyp, aux_scale.min_score, aux_scale.max_score)
                    .map_err(|e| format!("aux: {e}"))?,
            )
        }
        _ => None,
    };
    Ok(JobResult {
        dev_qwk,
        test_qwk,
        test_aux_qwk,
        confusion,
        history,
    })
}

/// Trains on the fold's train split, then scores dev and test.
pub fn run_job(input: &CvData<'_>, plan: &CvPlan, job: Job) -> JobOutcome {
    JobOutcome {
        job,
        result: run_job_inner(input, plan, job),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub batch_size: usize,
    pub dev_qwk: Option<f64>,
    pub error: Option<String>,
}

/// Result of one (fold, seed) cell after batch-size selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub fold: usize,
    pub seed: u64,
    pub failed: bool,
    pub selected_batch_size: Option<usize>,
    pub dev_qwk: Option<f64>,
    pub test_qwk: Option<f64>,
    pub test_aux_qwk: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub dev_qwk_history: Vec<Option<f64>>,
    pub candidates: Vec<CandidateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMean {
    pub seed: u64,
    pub mean_test_qwk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub architecture: Architecture,
    pub cells: Vec<CellReport>,
    pub failed_cells: usize,
    pub mean_dev_qwk: Option<f64>,
    pub mean_test_qwk: Option<f64>,
    pub mean_test_aux_qwk: Option<f64>,
    pub per_seed: Vec<SeedMean>,
    /// Most frequently selected batch size (smallest on ties).
    pub majority_batch_size: Option<usize>,
    /// Test confusion matrices summed over folds and seeds.
    pub confusion_total: ConfusionMatrix,
    pub notes: Vec<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Deterministic merge of job outcomes into a report: for each (fold, seed)
/// the batch size with the highest dev QWK is selected, ties going to the
/// smallest batch size. Cells whose candidates all failed are marked failed.
pub fn assemble_report(
    plan: &CvPlan,
    scale: &ScoreScale,
    mut outcomes: Vec<JobOutcome>,
) -> EvaluationReport {
    outcomes.sort_by_key(|o| o.job);
    let mut by_cell: BTreeMap<(usize, u64), Vec<&JobOutcome>> = BTreeMap::new();
    for o in &outcomes {
        by_cell.entry((o.job.fold, o.job.seed)).or_default().push(o);
    }
    // keep seed order as given in the plan
    let seed_rank = |s: u64| {
        plan.seeds
            .iter()
            .position(|&x| x == s)
            .unwrap_or(usize::MAX)
    };
    let mut keys: Vec<(usize, u64)> = by_cell.keys().copied().collect();
    keys.sort_by_key(|&(f, s)| (f, seed_rank(s)));

    let mut cells = Vec::new();
    for key in keys {
        let group = &by_cell[&key];
        let mut best: Option<&JobOutcome> = None;
        for o in group {
            if let Ok(r) = &o.result {
                let better = match best.and_then(|b| b.result.as_ref().ok()) {
                    None => true,
                    Some(b) => r.dev_qwk > b.dev_qwk,
                };
                if better {
                    best = Some(o);
                }
            }
        }
        let candidates = group
            .iter()
            .map(|o| CandidateReport {
                batch_size: o.job.batch_size,
                dev_qwk: o.result.as_ref().ok().map(|r| r.dev_qwk),
                error: o.result.as_ref().err().cloned(),
            })
            .collect();
        let chosen = best.and_then(|b| b.result.as_ref().ok().map(|r| (b.job.batch_size, r)));
        cells.push(CellReport {
            fold: key.0,
            seed: key.1,
            failed: chosen.is_none(),
            selected_batch_size: chosen.map(|(b, _)| b),
            dev_qwk: chosen.map(|(_, r)| r.dev_qwk),
            test_qwk: chosen.map(|(_, r)| r.test_qwk),
            test_aux_qwk: chosen.and_then(|(_, r)| r.test_aux_qwk),
            confusion: chosen.map(|(_, r)| r.confusion.clone()),
            dev_qwk_history: chosen
                .map(|(_, r)| r.history.iter().map(|h| h.dev_qwk).collect())
                .unwrap_or_default(),
            candidates,
        });
    }

    let mut confusion_total = ConfusionMatrix::zeros(scale.min_score, scale.max_score);
    for c in cells.iter().filter_map(|c| c.confusion.as_ref()) {
        // all cells share the plan's scale
        let _ = confusion_total.accumulate(c);
    }
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for b in cells.iter().filter_map(|c| c.selected_batch_size) {
        *votes.entry(b).or_default() += 1;
    }
    let majority_batch_size = votes
        .iter()
        .fold(None, |acc: Option<(usize, usize)>, (&b, &n)| match acc {
            Some((_, best)) if best >= n => acc,
            _ => Some((b, n)),
        })
        .map(|(b, _)| b);
    let per_seed = plan
        .seeds
        .iter()
        .map(|&seed| SeedMean {
            seed,
            mean_test_qwk: mean(
                cells
                    .iter()
                    .filter(|c| c.seed == seed)
                    .filter_map(|c| c.test_qwk),
            ),
        })
        .collect();
    EvaluationReport {
        architecture: plan.architecture,
        failed_cells: cells.iter().filter(|c| c.failed).count(),
        mean_dev_qwk: mean(cells.iter().filter_map(|c| c.dev_qwk)),
        mean_test_qwk: mean(cells.iter().filter_map(|c| c.test_qwk)),
        mean_test_aux_qwk: mean(cells.iter().filter_map(|c| c.test_aux_qwk)),
        per_seed,
        majority_batch_size,
        confusion_total,
        cells,
        notes: Vec::new(),
    }
}

/// Runs every job sequentially and assembles the report.
pub fn cross_validate(input: &CvData<'_>, plan: &CvPlan) -> EvaluationReport {
    let outcomes = jobs(plan)
        .into_iter()
        .map(|job| run_job(input, plan, job))
        .collect();
    assemble_report(plan, &input.scale, outcomes)
}
