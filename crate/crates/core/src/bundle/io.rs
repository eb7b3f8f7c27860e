use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ActivationMatrix, CompositeEmbeddingMatrix, ConceptVocabulary, DatasetBundle, GroundTruthConceptMatrix,
    GtLevel, LabeledSplit, Normalization, PairAxes, Split,
};
use crate::error::{Error, Result};
use crate::matrix::{read_matrix, write_matrix, Element, Matrix, FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

const ACTIVATIONS_FILE: &str = "activations.f32";
const GROUND_TRUTH_FILE: &str = "ground_truth.u8";
const EMBEDDINGS_FILE: &str = "embeddings.f32";
const FEATURES_FILE: &str = "features.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRef {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRef {
    #[serde(flatten)]
    pub matrix: MatrixRef,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRefs {
    pub activations: MatrixRef,
    pub ground_truth: MatrixRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<MatrixRef>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub primitives: Vec<String>,
    pub composites: Vec<String>,
    pub gt_composition: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_axes: Option<PairAxes>,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub seen_set: Vec<usize>,
    pub candidate_set: Vec<usize>,
    pub normalization: Normalization,
    pub ground_truth_level: GtLevel,
    pub matrices: MatrixRefs,
}

fn matrix_ref<T>(file: &str, m: &Matrix<T>) -> MatrixRef
where
    T: Copy,
{
    MatrixRef {
        file: file.into(),
        rows: m.rows(),
        cols: m.cols(),
    }
}

/// Writes `bundle` as a directory: `manifest.json` plus one `CMAP` file per
/// matrix.
pub fn save_bundle(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let vocab = bundle.vocab();
    let split = bundle.split();
    let acts = bundle.activations();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        primitives: vocab.primitives().to_vec(),
        composites: vocab.composites().to_vec(),
        gt_composition: vocab.gt_composition().to_vec(),
        pair_axes: vocab.pair_axes().cloned(),
        sample_ids: acts.sample_ids.clone(),
        labels: split.labels.clone(),
        splits: split.split_of.clone(),
        seen_set: split.seen_set.clone(),
        candidate_set: split.candidate_set.clone(),
        normalization: acts.normalization.clone(),
        ground_truth_level: bundle.ground_truth().level,
        matrices: MatrixRefs {
            activations: matrix_ref(ACTIVATIONS_FILE, &acts.data),
            ground_truth: matrix_ref(GROUND_TRUTH_FILE, &bundle.ground_truth().data),
            embeddings: bundle.embeddings().map(|g| EmbeddingRef {
                matrix: matrix_ref(EMBEDDINGS_FILE, &g.data),
                source: g.source.clone(),
            }),
            features: bundle.features().map(|f| matrix_ref(FEATURES_FILE, f)),
        },
    };

    write_matrix(&acts.data, &path.join(ACTIVATIONS_FILE))?;
    write_matrix(&bundle.ground_truth().data, &path.join(GROUND_TRUTH_FILE))?;
    if let Some(g) = bundle.embeddings() {
        write_matrix(&g.data, &path.join(EMBEDDINGS_FILE))?;
    }
    if let Some(f) = bundle.features() {
        write_matrix(f, &path.join(FEATURES_FILE))?;
    }
    let manifest_path = path.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

fn read_ref<T: Element>(dir: &Path, field: &str, r: &MatrixRef) -> Result<Matrix<T>> {
    let file: PathBuf = dir.join(&r.file);
    let m = read_matrix::<T>(&file)?;
    if m.rows() != r.rows {
        return Err(Error::DimensionMismatch {
            field: format!("{field}.rows"),
            expected: r.rows,
            found: m.rows(),
        });
    }
    if m.cols() != r.cols {
        return Err(Error::DimensionMismatch {
            field: format!("{field}.cols"),
            expected: r.cols,
            found: m.cols(),
        });
    }
    Ok(m)
}

/// Reads and fully validates a bundle directory.
pub fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    let manifest_path = path.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: manifest_path,
            found: m.format_version,
        });
    }

    let vocab = ConceptVocabulary::new(m.primitives, m.composites, m.gt_composition, m.pair_axes)?;
    let acts = read_ref::<f32>(path, "activations", &m.matrices.activations)?;
    let gt = read_ref::<u8>(path, "ground_truth", &m.matrices.ground_truth)?;
    let embeddings = m
        .matrices
        .embeddings
        .as_ref()
        .map(|r| {
            read_ref::<f32>(path, "embeddings", &r.matrix).map(|data| CompositeEmbeddingMatrix {
                data,
                source: r.source.clone(),
            })
        })
        .transpose()?;
    let features = m
        .matrices
        .features
        .as_ref()
        .map(|r| read_ref::<f32>(path, "features", r))
        .transpose()?;

    DatasetBundle::new(
        vocab,
        ActivationMatrix {
            data: acts,
            sample_ids: m.sample_ids,
            normalization: m.normalization,
        },
        GroundTruthConceptMatrix {
            data: gt,
            level: m.ground_truth_level,
        },
        LabeledSplit {
            labels: m.labels,
            split_of: m.splits,
            seen_set: m.seen_set,
            candidate_set: m.candidate_set,
        },
        embeddings,
        features,
    )
}
