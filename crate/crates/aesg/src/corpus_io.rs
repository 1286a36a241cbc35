//! Tab-separated essay corpora, fold files and score-scale files.

use std::collections::BTreeMap;
use std::path::Path;

use aesg_core::corpus::{split_folds, CorpusError};
use aesg_core::{Essay, FoldAssignment, ScoreScale};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corpus column names. Defaults follow the ASAP training file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub id: String,
    pub prompt: String,
    pub text: String,
    pub score: String,
    /// Optional human grammar score column.
    pub grammar_score: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            id: "essay_id".into(),
            prompt: "essay_set".into(),
            text: "essay".into(),
            score: "domain1_score".into(),
            grammar_score: None,
        }
    }
}

fn column(headers: &csv::ByteRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name.as_bytes())
        .ok_or_else(|| Error::format(path, format!("missing column '{name}'")))
}

fn field<'r>(
    record: &'r csv::ByteRecord,
    idx: usize,
    name: &str,
    row: usize,
    path: &Path,
) -> Result<&'r str> {
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::format(path, format!("missing field '{name}', row {row}")))?;
    std::str::from_utf8(raw)
        .map_err(|_| Error::format(path, format!("field '{name}' is not UTF-8, row {row}")))
}

fn parse_int<T: std::str::FromStr>(s: &str, name: &str, row: usize, path: &Path) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("non-integer {name} '{s}', row {row}")))
}

/// Loads essays from a UTF-8 TSV with a header row. Rows are numbered from 1
/// after the header. `prompt` keeps only that prompt's essays.
pub fn load_corpus(
    path: &Path,
    columns: &ColumnMapping,
    prompt: Option<u32>,
) -> Result<Vec<Essay>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let headers = reader
        .byte_headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let id_col = column(&headers, &columns.id, path)?;
    let prompt_col = column(&headers, &columns.prompt, path)?;
    let text_col = column(&headers, &columns.text, path)?;
    let score_col = column(&headers, &columns.score, path)?;
    let grammar_col = columns
        .grammar_score
        .as_deref()
        .map(|c| column(&headers, c, path))
        .transpose()?;

    let mut essays = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, record) in reader.byte_records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(path, format!("{e}, row {row}")))?;
        let prompt_id: u32 = parse_int(
            field(&record, prompt_col, &columns.prompt, row, path)?,
            "prompt",
            row,
            path,
        )?;
        if prompt.is_some_and(|p| p != prompt_id) {
            continue;
        }
        let id = field(&record, id_col, &columns.id, row, path)?
            .trim()
            .to_string();
        if id.is_empty() {
            return Err(Error::format(path, format!("empty essay id, row {row}")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::format(
                path,
                format!("duplicate essay id '{id}', row {row}"),
            ));
        }
        let text = field(&record, text_col, &columns.text, row, path)?;
        let score: i64 = parse_int(
            field(&record, score_col, &columns.score, row, path)?,
            "score",
            row,
            path,
        )?;
        let grammar = match (grammar_col, &columns.grammar_score) {
            (Some(c), Some(name)) => {
                let s = field(&record, c, name, row, path)?;
                if s.trim().is_empty() {
                    None
                } else {
                    Some(parse_int(s, "grammar score", row, path)?)
                }
            }
            _ => None,
        };
        let essay = Essay::new(id, prompt_id, text, score, grammar).map_err(|e| match e {
            CorpusError::EmptyText => Error::format(path, format!("empty essay text, row {row}")),
            other => Error::format(path, format!("{other}, row {row}")),
        })?;
        essays.push(essay);
    }
    Ok(essays)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdValue {
    Text(String),
    Number(i64),
}

impl IdValue {
    fn into_string(self) -> String {
        match self {
            Self::Text(s) => s,
            Self::Number(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct RawFold {
    train: Vec<IdValue>,
    dev: Vec<IdValue>,
    test: Vec<IdValue>,
}

#[derive(Deserialize)]
struct RawFoldFile {
    folds: Vec<RawFold>,
}

#[derive(Serialize)]
struct FoldFile<'a> {
    folds: Vec<FoldIds<'a>>,
}

#[derive(Serialize)]
struct FoldIds<'a> {
    train: &'a [String],
    dev: &'a [String],
    test: &'a [String],
}

/// Reads `{"folds": [{"train": [...], "dev": [...], "test": [...]}, ...]}`.
/// Numeric ids are accepted and converted to strings.
pub fn load_folds(path: &Path) -> Result<Vec<FoldAssignment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawFoldFile =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let strings = |v: Vec<IdValue>| v.into_iter().map(IdValue::into_string).collect();
    Ok(raw
        .folds
        .into_iter()
        .enumerate()
        .map(|(fold_index, f)| FoldAssignment {
            fold_index,
            train: strings(f.train),
            dev: strings(f.dev),
            test: strings(f.test),
        })
        .collect())
}

pub fn folds_to_json(folds: &[FoldAssignment]) -> String {
    let file = FoldFile {
        folds: folds
            .iter()
            .map(|f| FoldIds {
                train: &f.train,
                dev: &f.dev,
                test: &f.test,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("fold ids serialize");
    s.push('\n');
    s
}

/// Fold file restricted to `essays`, checked to partition them; when no file
/// is given, a seeded 5-fold split is generated.
pub fn folds_for(essays: &[Essay], path: Option<&Path>, seed: u64) -> Result<Vec<FoldAssignment>> {
    let ids: Vec<&str> = essays.iter().map(|e| e.essay_id.as_str()).collect();
    let folds = match path {
        Some(p) => load_folds(p)?,
        None => split_folds(&ids, 5, seed).map_err(|e| Error::data(e.to_string()))?,
    };
    if folds.is_empty() {
        return Err(Error::data("fold file has no folds"));
    }
    for f in &folds {
        f.validate(ids.iter().copied())
            .map_err(|e| Error::data(e.to_string()))?;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawScale {
    min: i64,
    max: i64,
}

/// Reads `{"<prompt_id>": {"min": int, "max": int}, ...}`.
pub fn load_scales(path: &Path) -> Result<BTreeMap<u32, ScoreScale>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, RawScale> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    raw.into_iter()
        .map(|(k, v)| {
            let prompt: u32 = k
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("prompt id '{k}' is not an integer")))?;
            let scale = ScoreScale::new(prompt, v.min, v.max)
                .map_err(|e| Error::format(path, e.to_string()))?;
            Ok((prompt, scale))
        })
        .collect()
}

pub fn scale_for(
    scales: &BTreeMap<u32, ScoreScale>,
    prompt: u32,
    path: &Path,
) -> Result<ScoreScale> {
    scales
        .get(&prompt)
        .copied()
        .ok_or_else(|| Error::format(path, format!("no score scale for prompt {prompt}")))
}

/// The single prompt shared by `essays`.
pub fn single_prompt(essays: &[Essay]) -> Result<u32> {
    let mut prompts: Vec<u32> = essays.iter().map(|e| e.prompt_id).collect();
    prompts.sort_unstable();
    prompts.dedup();
    match prompts.as_slice() {
        [p] => Ok(*p),
        [] => Err(Error::data("corpus selection is empty")),
        _ => Err(Error::usage(format!(
            "corpus holds prompts {prompts:?}; select one with --prompt"
        ))),
    }
}
