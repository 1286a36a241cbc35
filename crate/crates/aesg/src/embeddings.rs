//! Frozen essay-embedding files.
//!
//! A file is a single-line JSON header terminated by `\n`, followed by
//! `n * d` little-endian `f32` values in row-major order:
//!
//! ```text
//! {"n":3,"d":768,"dtype":"f32","order":"row-major","ids":["a","b","c"],"encoder_id":"bert-base-uncased","max_len":512}
//! <9216 bytes>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub n: usize,
    pub d: usize,
    pub dtype: String,
    pub order: String,
    pub ids: Vec<String>,
    pub encoder_id: String,
    #[serde(default)]
    pub max_len: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub header: EmbeddingHeader,
    pub data: Vec<f32>,
}

impl EmbeddingFile {
    pub fn new(
        ids: Vec<String>,
        d: usize,
        data: Vec<f32>,
        encoder_id: &str,
        max_len: Option<u64>,
    ) -> Result<Self> {
        let header = EmbeddingHeader {
            n: ids.len(),
            d,
            dtype: "f32".into(),
            order: "row-major".into(),
            ids,
            encoder_id: encoder_id.into(),
            max_len,
        };
        validate(&header, data.len()).map_err(Error::data)?;
        Ok(Self { header, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.header.d;
        &self.data[i * d..(i + 1) * d]
    }

    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.header
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rows for `ids`, widened to `f64`, concatenated in that order.
    pub fn select(&self, ids: &[&str], path: &Path) -> Result<Vec<f64>> {
        let index = self.index();
        let mut out = Vec::with_capacity(ids.len() * self.header.d);
        for id in ids {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::format(path, format!("no embedding for essay '{id}'")))?;
            out.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing header terminator"))?;
        let header: EmbeddingHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        let payload = &bytes[nl + 1..];
        let expected = header
            .n
            .checked_mul(header.d)
            .and_then(|x| x.checked_mul(4));
        if expected != Some(payload.len()) {
            return Err(Error::format(
                path,
                format!(
                    "payload is {} bytes; header n={} d={} needs {}",
                    payload.len(),
                    header.n,
                    header.d,
                    4 * header.n * header.d
                ),
            ));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        validate(&header, data.len()).map_err(|m| Error::format(path, m))?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                path,
                format!("non-finite value in row {}", i / header.d.max(1)),
            ));
        }
        Ok(Self { header, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn validate(h: &EmbeddingHeader, values: usize) -> std::result::Result<(), String> {
    if h.dtype != "f32" {
        return Err(format!("unsupported dtype '{}'", h.dtype));
    }
    if h.order != "row-major" {
        return Err(format!("unsupported order '{}'", h.order));
    }
    if h.d == 0 {
        return Err("dimension d must be positive".into());
    }
    if h.ids.len() != h.n {
        return Err(format!("header lists {} ids but n={}", h.ids.len(), h.n));
    }
    if values != h.n * h.d {
        return Err(format!("{} values for n={} d={}", values, h.n, h.d));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = h.ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(format!("duplicate id '{dup}'"));
    }
    Ok(())
}
