//! JSON artifacts (catalogs, lexicons, vocabularies, item parameters, fit
//! traces) and the binary model file.

use std::path::Path;

use aesg_core::irt::FitResult;
use aesg_core::scorer::Activation;
use aesg_core::{
    Architecture, Catalog, ErrorTagVocabulary, GrammarPattern, ItemParameters, Lexicon, ModelDims,
    ScoringModel, TrainConfig,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{sha256_hex, Provenance};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn load_catalog(catalog: &Path, lexicon: Option<&Path>) -> Result<Catalog> {
    let patterns: Vec<GrammarPattern> = read_json(catalog)?;
    let lexicon: Lexicon = match lexicon {
        Some(p) => read_json(p)?,
        None => Lexicon::new(),
    };
    Catalog::compile(patterns, &lexicon).map_err(|e| Error::format(catalog, e.to_string()))
}

/// A JSON array of tag strings.
pub fn load_vocabulary(path: &Path, other: bool) -> Result<ErrorTagVocabulary> {
    let tags: Vec<String> = read_json(path)?;
    ErrorTagVocabulary::new(tags, other).map_err(|e| Error::format(path, e.to_string()))
}

/// Calibrated items plus the scaling factor and fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemsFile {
    pub d: f64,
    pub converged: bool,
    pub iterations: usize,
    pub items: Vec<ItemParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ItemsFile {
    pub fn from_fit(fit: &FitResult, d: f64, provenance: Provenance) -> Self {
        Self {
            d,
            converged: fit.converged,
            iterations: fit.iterations,
            items: fit.items.clone(),
            provenance: Some(provenance),
        }
    }

    /// Accepts the full document or a bare item array (D = 1).
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.trim_start().starts_with('[') {
            let items: Vec<ItemParameters> =
                serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
            return Ok(Self {
                d: 1.0,
                converged: true,
                iterations: 0,
                items,
                provenance: None,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub log_likelihood: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Model file header. The payload that follows is every layer in `layers`
/// order, each as its row-major `outputs x inputs` weights then its biases,
/// as little-endian `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub dims: ModelDims,
    pub layers: Vec<LayerInfo>,
    pub param_count: usize,
    pub train: TrainConfig,
    pub config_sha256: String,
    pub provenance: Provenance,
}

const MODEL_FORMAT: &str = "aesg-model";

fn layer_infos(model: &ScoringModel) -> Vec<LayerInfo> {
    let named = |prefix: &str, layers: &[aesg_core::scorer::DenseLayer]| -> Vec<LayerInfo> {
        layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerInfo {
                name: format!("{prefix}.{i}"),
                inputs: l.inputs,
                outputs: l.outputs,
                activation: l.activation,
            })
            .collect()
    };
    let mut out = named("grammar_tower", &model.grammar_tower);
    out.extend(named("top_tower", &model.top_tower));
    out.extend(named("main_head", std::slice::from_ref(&model.main_head)));
    if let Some(aux) = &model.aux_head {
        out.extend(named("aux_head", std::slice::from_ref(aux)));
    }
    out
}

pub fn model_to_bytes(
    model: &ScoringModel,
    train: &TrainConfig,
    provenance: Provenance,
) -> Vec<u8> {
    let config_sha256 =
        sha256_hex(&serde_json::to_vec(&provenance.config).expect("config serializes"));
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        version: 1,
        architecture: model.architecture,
        dims: model.dims.clone(),
        layers: layer_infos(model),
        param_count: model.param_count(),
        train: train.clone(),
        config_sha256,
        provenance,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for p in model.flat_params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<(ModelHeader, ScoringModel)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header terminator"))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format != MODEL_FORMAT || header.version != 1 {
        return Err(Error::format(
            path,
            format!(
                "unsupported model format {} v{}",
                header.format, header.version
            ),
        ));
    }
    let mut model = ScoringModel::new(header.architecture, header.dims.clone(), 0)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if layer_infos(&model) != header.layers || model.param_count() != header.param_count {
        return Err(Error::format(
            path,
            "layer table does not match the architecture and dimensions",
        ));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() != header.param_count * 8 {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes; {} parameters need {}",
                payload.len(),
                header.param_count,
                header.param_count * 8
            ),
        ));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::format(path, "non-finite parameter"));
    }
    model
        .set_flat_params(&params)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((header, model))
}

pub fn read_model(path: &Path) -> Result<(ModelHeader, ScoringModel)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip_is_bitwise() {
        for arch in Architecture::ALL {
            let dims = ModelDims {
                top_width: 6,
                grammar_width: 3,
                ..ModelDims::new(arch, 5, 7)
            };
            let model = ScoringModel::new(arch, dims, 3).unwrap();
            let bytes = model_to_bytes(&model, &TrainConfig::default(), Provenance::new("train"));
            let (header, back) = model_from_bytes(&bytes, Path::new("m.bin")).unwrap();
            assert_eq!(back, model);
            assert_eq!(header.param_count, model.param_count());
            assert_eq!(
                model_to_bytes(&back, &TrainConfig::default(), Provenance::new("train")),
                bytes
            );
        }
    }

    #[test]
    fn truncated_model_is_rejected() {
        let model = ScoringModel::new(
            Architecture::Baseline,
            ModelDims::new(Architecture::Baseline, 4, 0),
            1,
        )
        .unwrap();
        let mut bytes = model_to_bytes(&model, &TrainConfig::default(), Provenance::new("train"));
        bytes.truncate(bytes.len() - 8);
        assert!(model_from_bytes(&bytes, Path::new("m")).is_err());
    }

    #[test]
    fn bare_item_arrays_are_accepted() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(
            f.path(),
            r#"[{"item_id":0,"a":1.2,"b":-0.4,"status":"calibrated"}]"#,
        )
        .unwrap();
        let items = ItemsFile::read(f.path()).unwrap();
        assert_eq!(items.items, [ItemParameters::calibrated(0, 1.2, -0.4)]);
        assert_eq!(items.d, 1.0);
    }
}
