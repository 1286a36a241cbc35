//! Tab-separated tables keyed by essay id, with `# key=value` header lines.
//!
//! ```text
//! # kind=pf
//! # provenance={"command":"extract-pf",...}
//! essay_id<TAB>col_0<TAB>col_1
//! 17<TAB>1<TAB>0
//! ```
//!
//! Values are written in Rust's shortest round-trip decimal form, so reading
//! a table back recovers every `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use aesg_core::AbilityEstimate;

use crate::error::{Error, Result};
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub meta: BTreeMap<String, String>,
    pub provenance: Option<Provenance>,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    /// Row-major `ids.len() x columns.len()`.
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            meta: BTreeMap::new(),
            provenance: None,
            columns,
            ids: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push_row(&mut self, id: &str, row: &[f64]) {
        assert_eq!(row.len(), self.width(), "row width");
        self.ids.push(id.to_string());
        self.values.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rows for `ids` in that order; every id must be present.
    pub fn select(&self, ids: &[&str], path: &Path) -> Result<Vec<f64>> {
        let index = self.index();
        let mut out = Vec::with_capacity(ids.len() * self.width());
        for id in ids {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::format(path, format!("no row for essay '{id}'")))?;
            out.extend_from_slice(self.row(i));
        }
        Ok(out)
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        write_header(&mut out, &self.meta, self.provenance.as_ref());
        out.push_str("essay_id");
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let (meta, provenance, mut rows) = split_header(text, path)?;
        let Some((_, header)) = rows.next() else {
            return Err(Error::format(path, "missing column header"));
        };
        let mut cols = header.split('\t');
        if cols.next() != Some("essay_id") {
            return Err(Error::format(path, "first column must be essay_id"));
        }
        let mut table = FeatureTable::new(cols.map(str::to_string).collect());
        table.meta = meta;
        table.provenance = provenance;
        let mut seen = std::collections::BTreeSet::new();
        for (line, row) in rows {
            let mut fields = row.split('\t');
            let id = fields.next().unwrap_or_default();
            if !seen.insert(id.to_string()) {
                return Err(Error::format(
                    path,
                    format!("duplicate essay id '{id}', line {line}"),
                ));
            }
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::format(path, format!("bad value '{f}', line {line}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != table.width() {
                return Err(Error::format(
                    path,
                    format!(
                        "expected {} values, found {}, line {line}",
                        table.width(),
                        values.len()
                    ),
                ));
            }
            table.push_row(id, &values);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Column-wise concatenation of tables over the same essays, in the
    /// first table's row order. Column names are prefixed with the table
    /// index when names collide.
    pub fn concat(tables: &[(FeatureTable, &Path)]) -> Result<Self> {
        let Some((first, _)) = tables.first() else {
            return Err(Error::usage("no feature tables given"));
        };
        let mut columns = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (t, (table, _)) in tables.iter().enumerate() {
            for c in &table.columns {
                let name = if seen.contains(c) {
                    format!("{t}:{c}")
                } else {
                    c.clone()
                };
                seen.insert(name.clone());
                columns.push(name);
            }
        }
        for (table, path) in tables {
            if table.len() != first.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "has {} rows; the first table has {}",
                        table.len(),
                        first.len()
                    ),
                ));
            }
        }
        let mut out = FeatureTable::new(columns);
        let ids: Vec<&str> = first.ids.iter().map(String::as_str).collect();
        let parts: Vec<Vec<f64>> = tables
            .iter()
            .map(|(t, p)| t.select(&ids, p))
            .collect::<Result<_>>()?;
        let mut row = Vec::with_capacity(out.width());
        for (i, id) in ids.iter().enumerate() {
            row.clear();
            for (part, (table, _)) in parts.iter().zip(tables) {
                let w = table.width();
                row.extend_from_slice(&part[i * w..(i + 1) * w]);
            }
            out.push_row(id, &row);
        }
        Ok(out)
    }
}

fn write_header(
    out: &mut String,
    meta: &BTreeMap<String, String>,
    provenance: Option<&Provenance>,
) {
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    if let Some(p) = provenance {
        let _ = writeln!(
            out,
            "# provenance={}",
            serde_json::to_string(p).expect("provenance serializes")
        );
    }
}

type Header<'a> = (
    BTreeMap<String, String>,
    Option<Provenance>,
    Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
);

fn split_header<'a>(text: &'a str, path: &Path) -> Result<Header<'a>> {
    let mut meta = BTreeMap::new();
    let mut provenance = None;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .peekable();
    while let Some(&(line, l)) = lines.peek() {
        let Some(comment) = l.strip_prefix('#') else {
            break;
        };
        lines.next();
        let Some((k, v)) = comment.trim_start().split_once('=') else {
            continue;
        };
        if k == "provenance" {
            let p = serde_json::from_str(v)
                .map_err(|e| Error::format(path, format!("provenance line {line}: {e}")))?;
            provenance = Some(p);
        } else {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    Ok((
        meta,
        provenance,
        Box::new(lines.filter(|(_, l)| !l.is_empty())),
    ))
}

/// Writer abilities keyed by essay id.
#[derive(Debug, Clone, PartialEq)]
pub struct AbilityTable {
    pub provenance: Option<Provenance>,
    pub ids: Vec<String>,
    pub estimates: Vec<AbilityEstimate>,
}

impl AbilityTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        write_header(&mut out, &BTreeMap::new(), self.provenance.as_ref());
        out.push_str("essay_id\ttheta\tposterior_sd\n");
        for (id, e) in self.ids.iter().zip(&self.estimates) {
            let _ = writeln!(out, "{id}\t{}\t{}", e.theta, e.posterior_sd);
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = FeatureTable::parse(&text, path)?;
        if table.columns != ["theta", "posterior_sd"] {
            return Err(Error::format(
                path,
                "expected columns essay_id, theta, posterior_sd",
            ));
        }
        let estimates = (0..table.len())
            .map(|i| AbilityEstimate {
                theta: table.row(i)[0],
                posterior_sd: table.row(i)[1],
            })
            .collect();
        Ok(Self {
            provenance: table.provenance,
            ids: table.ids,
            estimates,
        })
    }

    pub fn get(&self, id: &str) -> Option<&AbilityEstimate> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|i| &self.estimates[i])
    }

    pub fn index(&self) -> BTreeMap<&str, &AbilityEstimate> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(&self.estimates)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut t = FeatureTable::new(vec!["a".into(), "b".into()]);
        t.meta.insert("kind".into(), "nf".into());
        t.provenance = Some(Provenance::new("extract-nf"));
        t.push_row("x", &[0.1 + 0.2, 1.0 / 3.0]);
        t.push_row("y", &[0.0, 1e-300]);
        let text = t.to_tsv();
        let back = FeatureTable::parse(&text, Path::new("t.tsv")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_tsv(), text);
    }

    #[test]
    fn rejects_ragged_rows_and_bad_numbers() {
        let p = Path::new("t.tsv");
        assert!(FeatureTable::parse("essay_id\ta\nx\t1\t2\n", p).is_err());
        assert!(FeatureTable::parse("essay_id\ta\nx\tNaN\n", p).is_err());
        assert!(FeatureTable::parse("essay_id\ta\nx\t1\nx\t0\n", p).is_err());
    }

    #[test]
    fn concat_aligns_rows_by_id() {
        let mut a = FeatureTable::new(vec!["f".into()]);
        a.push_row("1", &[1.0]);
        a.push_row("2", &[2.0]);
        let mut b = FeatureTable::new(vec!["f".into(), "g".into()]);
        b.push_row("2", &[20.0, 21.0]);
        b.push_row("1", &[10.0, 11.0]);
        let p = Path::new("x");
        let c = FeatureTable::concat(&[(a, p), (b, p)]).unwrap();
        assert_eq!(c.columns, ["f", "1:f", "g"]);
        assert_eq!(c.row(1), [2.0, 20.0, 21.0]);
    }

    #[test]
    fn abilities_round_trip() {
        let t = AbilityTable {
            provenance: None,
            ids: vec!["e1".into(), "e2".into()],
            estimates: vec![
                AbilityEstimate {
                    theta: -0.25,
                    posterior_sd: 0.5,
                },
                AbilityEstimate {
                    theta: 1.0 / 7.0,
                    posterior_sd: 0.31,
                },
            ],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), t.to_tsv()).unwrap();
        assert_eq!(AbilityTable::read(f.path()).unwrap(), t);
    }
}
