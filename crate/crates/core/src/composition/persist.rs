use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompositionModel, DualProjectionModel, LinearCompositionModel, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::{read_matrix, write_matrix, Matrix};

pub const MODEL_SIDECAR: &str = "model.json";
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelLayout {
    Linear {
        weights: String,
        bias: String,
    },
    DualProjection {
        activation_projection: String,
        embedding_projection: String,
        temperature: f64,
        normalize_activation_side: bool,
    },
}

/// JSON sidecar written next to the model matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub schema_version: u32,
    /// Composite index per weight row (linear) or trained-on seen composites.
    pub composites: Vec<usize>,
    pub composite_names: Vec<String>,
    pub train_config: TrainConfig,
    pub layout: ModelLayout,
}

pub fn save_model(
    model: &CompositionModel,
    cfg: &TrainConfig,
    composite_names: &[String],
    dir: &Path,
) -> Result<ModelSidecar> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (composites, layout) = match model {
        CompositionModel::Linear(m) => {
            write_matrix(&m.weights, &dir.join("weights.f32"))?;
            let bias = Matrix::from_vec(1, m.bias.len(), m.bias.clone())?;
            write_matrix(&bias, &dir.join("bias.f32"))?;
            (
                m.composites.clone(),
                ModelLayout::Linear {
                    weights: "weights.f32".into(),
                    bias: "bias.f32".into(),
                },
            )
        }
        CompositionModel::DualProjection(m) => {
            write_matrix(&m.a, &dir.join("activation_projection.f32"))?;
            write_matrix(&m.b, &dir.join("embedding_projection.f32"))?;
            (
                m.trained_on.clone(),
                ModelLayout::DualProjection {
                    activation_projection: "activation_projection.f32".into(),
                    embedding_projection: "embedding_projection.f32".into(),
                    temperature: m.temperature,
                    normalize_activation_side: m.normalize_activation_side,
                },
            )
        }
    };
    let names = composites
        .iter()
        .map(|&c| {
            composite_names
                .get(c)
                .cloned()
                .ok_or_else(|| Error::arg(format!("no name for composite {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sidecar = ModelSidecar {
        schema_version: SCHEMA_VERSION,
        composites,
        composite_names: names,
        train_config: cfg.clone(),
        layout,
    };
    let path = dir.join(MODEL_SIDECAR);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

pub fn load_model(dir: &Path) -> Result<(CompositionModel, ModelSidecar)> {
    let path = dir.join(MODEL_SIDECAR);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: ModelSidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            path,
            found: sidecar.schema_version,
        });
    }
    let model = match &sidecar.layout {
        ModelLayout::Linear { weights, bias } => {
            let w = read_matrix::<f32>(&dir.join(weights))?;
            let b = read_matrix::<f32>(&dir.join(bias))?;
            if b.rows() != 1 {
                return Err(Error::DimensionMismatch {
                    field: "bias.rows".into(),
                    expected: 1,
                    found: b.rows(),
                });
            }
            if w.first_non_finite().is_some() {
                return Err(Error::NonFinite {
                    field: "weights".into(),
                    row: w.first_non_finite().unwrap().0,
                    col: w.first_non_finite().unwrap().1,
                });
            }
            CompositionModel::Linear(LinearCompositionModel::new(
                sidecar.composites.clone(),
                w,
                b.into_vec(),
            )?)
        }
        ModelLayout::DualProjection {
            activation_projection,
            embedding_projection,
            temperature,
            normalize_activation_side,
        } => {
            let a = read_matrix::<f32>(&dir.join(activation_projection))?;
            let b = read_matrix::<f32>(&dir.join(embedding_projection))?;
            if a.rows() != b.rows() {
                return Err(Error::DimensionMismatch {
                    field: "embedding_projection.rows".into(),
                    expected: a.rows(),
                    found: b.rows(),
                });
            }
            for (field, m) in [("activation_projection", &a), ("embedding_projection", &b)] {
                if let Some((row, col)) = m.first_non_finite() {
                    return Err(Error::NonFinite {
                        field: field.into(),
                        row,
                        col,
                    });
                }
            }
            CompositionModel::DualProjection(DualProjectionModel {
                a,
                b,
                temperature: *temperature,
                normalize_activation_side: *normalize_activation_side,
                trained_on: sidecar.composites.clone(),
            })
        }
    };
    Ok((model, sidecar))
}
