//! Essays, score scales, tokenization and cross-validation folds.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("invalid score scale for prompt {prompt_id}: min {min} must be below max {max}")]
    InvalidScale { prompt_id: u32, min: i64, max: i64 },
    #[error("score {score} outside scale {min}..={max}")]
    ScoreOutOfRange { score: i64, min: i64, max: i64 },
    #[error("empty essay text")]
    EmptyText,
    #[error("essay text contains no words")]
    NoWords,
    #[error("fold {fold}: essay {id} {problem}")]
    FoldPartition {
        fold: usize,
        id: String,
        problem: &'static str,
    },
    #[error("cannot split {n} essays into {k} folds")]
    TooFewEssays { n: usize, k: usize },
}

/// Integer score range of one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub prompt_id: u32,
    pub min_score: i64,
    pub max_score: i64,
}

impl ScoreScale {
    pub fn new(prompt_id: u32, min_score: i64, max_score: i64) -> Result<Self, CorpusError> {
        if max_score <= min_score {
            return Err(CorpusError::InvalidScale {
                prompt_id,
                min: min_score,
                max: max_score,
            });
        }
        Ok(Self {
            prompt_id,
            min_score,
            max_score,
        })
    }

    pub fn contains(&self, score: i64) -> bool {
        (self.min_score..=self.max_score).contains(&score)
    }

    /// Number of score categories, `max - min + 1`.
    pub fn categories(&self) -> usize {
        (self.max_score - self.min_score + 1) as usize
    }

    fn span(&self) -> f64 {
        (self.max_score - self.min_score) as f64
    }
}

/// Maps `s` affinely from `[min, max]` onto `[-1, 1]`.
pub fn normalize_score(score: i64, scale: &ScoreScale) -> Result<f64, CorpusError> {
    if !scale.contains(score) {
        return Err(CorpusError::ScoreOutOfRange {
            score,
            min: scale.min_score,
            max: scale.max_score,
        });
    }
    Ok(2.0 * (score - scale.min_score) as f64 / scale.span() - 1.0)
}

/// Inverse of [`normalize_score`], rounded half away from zero and clamped
/// into the scale. Infinite inputs clamp to the nearest end; NaN maps to
/// the lower end.
pub fn denormalize_prediction(y: f64, scale: &ScoreScale) -> i64 {
    if y.is_nan() {
        return scale.min_score;
    }
    let raw = scale.min_score as f64 + (y + 1.0) * scale.span() / 2.0;
    let rounded = libm::round(raw);
    if rounded <= scale.min_score as f64 {
        scale.min_score
    } else if rounded >= scale.max_score as f64 {
        scale.max_score
    } else {
        rounded as i64
    }
}

/// True when the token carries at least one alphanumeric character.
pub fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Splits on Unicode whitespace and peels leading and trailing
/// non-alphanumeric characters off each chunk as single-character tokens,
/// so `"rains,"` becomes `["rains", ","]`. Inner punctuation (`don't`) stays.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let start = chunk.find(char::is_alphanumeric);
        let Some(start) = start else {
            out.extend(chunk.chars().map(|c| c.to_string()));
            continue;
        };
        let end = chunk
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_alphanumeric())
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(chunk.len());
        out.extend(chunk[..start].chars().map(|c| c.to_string()));
        out.push(chunk[start..end].to_string());
        out.extend(chunk[end..].chars().map(|c| c.to_string()));
    }
    out
}

pub fn word_count<S: AsRef<str>>(tokens: &[S]) -> usize {
    tokens.iter().filter(|t| is_word(t.as_ref())).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Essay {
    pub essay_id: String,
    pub prompt_id: u32,
    pub text: String,
    /// Word and punctuation tokens in reading order.
    pub tokens: Vec<String>,
    /// Number of word tokens (punctuation excluded); always positive.
    pub word_count: usize,
    pub raw_score: i64,
    pub grammar_score: Option<i64>,
}

impl Essay {
    pub fn new(
        essay_id: impl Into<String>,
        prompt_id: u32,
        text: impl Into<String>,
        raw_score: i64,
        grammar_score: Option<i64>,
    ) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText);
        }
        let tokens = tokenize(&text);
        let word_count = word_count(&tokens);
        if word_count == 0 {
            return Err(CorpusError::NoWords);
        }
        Ok(Self {
            essay_id: essay_id.into(),
            prompt_id,
            text,
            tokens,
            word_count,
            raw_score,
            grammar_score,
        })
    }
}

/// Train/dev/test essay ids for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    #[serde(default)]
    pub fold_index: usize,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl FoldAssignment {
    /// Checks that train/dev/test are pairwise disjoint and cover `ids`.
    pub fn validate<'a, I>(&self, ids: I) -> Result<(), CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let fold = self.fold_index;
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(CorpusError::FoldPartition {
                    fold,
                    id: id.clone(),
                    problem: "appears in more than one split",
                });
            }
        }
        let mut expected = BTreeSet::new();
        for id in ids {
            if !seen.contains(id) {
                return Err(CorpusError::FoldPartition {
                    fold,
                    id: id.to_string(),
                    problem: "is not assigned to any split",
                });
            }
            expected.insert(id);
        }
        if let Some(extra) = seen.iter().find(|id| !expected.contains(*id)) {
            return Err(CorpusError::FoldPartition {
                fold,
                id: extra.to_string(),
                problem: "is not in the corpus",
            });
        }
        Ok(())
    }
}

/// Deterministic seeded k-fold split. Ids are shuffled once; fold `f` tests
/// on chunk `f`, tunes on chunk `f + 1 (mod k)` and trains on the rest, which
/// gives 60/20/20 for `k = 5`.
pub fn split_folds<S: AsRef<str>>(
    ids: &[S],
    k: usize,
    seed: u64,
) -> Result<Vec<FoldAssignment>, CorpusError> {
    let n = ids.len();
    if k < 3 || n < k {
        return Err(CorpusError::TooFewEssays { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunk_of = |pos: usize| pos * k / n;
    let mut chunks: Vec<Vec<String>> = (0..k).map(|_| Vec::new()).collect();
    for (pos, &i) in order.iter().enumerate() {
        chunks[chunk_of(pos)].push(ids[i].as_ref().to_string());
    }
    Ok((0..k)
        .map(|f| {
            let dev_chunk = (f + 1) % k;
            let train = (0..k)
                .filter(|&c| c != f && c != dev_chunk)
                .flat_map(|c| chunks[c].iter().cloned())
                .collect();
            FoldAssignment {
                fold_index: f,
                train,
                dev: chunks[dev_chunk].clone(),
                test: chunks[f].clone(),
            }
        })
        .collect())
}
