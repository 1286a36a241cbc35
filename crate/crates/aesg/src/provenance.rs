//! Content hashes of input files, embedded in every output artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// One input an artifact was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Inputs keyed by role (`corpus`, `pf`, `items`, ...) plus the effective
/// configuration of the command that produced the artifact.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub inputs: BTreeMap<String, InputRecord>,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            config: serde_json::Value::Null,
        }
    }

    /// Hashes `path` and records it under `role`.
    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        let sha256 = hash_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(self)
    }

    pub fn with_config<T: Serialize>(mut self, config: &T) -> Self {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self
    }
}

/// Finds inputs recorded under the same path with different hashes.
pub fn conflicts<'a, I>(records: I) -> Vec<String>
where
    I: IntoIterator<Item = (&'a str, &'a Provenance)>,
{
    let mut seen: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    let mut out = Vec::new();
    for (artifact, prov) in records {
        for input in prov.inputs.values() {
            match seen.get(input.path.as_str()) {
                Some(&(first, hash)) if hash != input.sha256 => out.push(format!(
                    "{} has hash {} in {} but {} in {}",
                    input.path, hash, first, input.sha256, artifact
                )),
                Some(_) => {}
                None => {
                    seen.insert(&input.path, (artifact, &input.sha256));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn conflicting_paths_are_reported() {
        let mut a = Provenance::new("evaluate");
        a.inputs.insert(
            "features".into(),
            InputRecord {
                path: "f.tsv".into(),
                sha256: "aa".into(),
            },
        );
        let mut b = a.clone();
        assert!(conflicts([("a", &a), ("b", &b)]).is_empty());
        b.inputs.get_mut("features").unwrap().sha256 = "bb".into();
        let found = conflicts([("a", &a), ("b", &b)]);
        assert_eq!(found.len(), 1);
        assert!(found[0].contains("f.tsv"));
    }
}
