//! Dataset bundles: concept vocabularies, activation and ground-truth
//! matrices, labels and splits.
//!
//! A bundle is validated once, on construction, and immutable afterwards.
//! Column `j` of every primitive-indexed matrix always refers to
//! `vocab.primitives()[j]`.

mod io;
mod ops;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use io::{load_bundle, save_bundle, Manifest, MANIFEST_FILE};
pub use ops::{denoise_to_class_level, normalize_activations, prevalent_attributes};

/// Attribute and object axes of a pair-structured vocabulary (every composite
/// is one attribute primitive plus one object primitive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAxes {
    pub attributes: Vec<usize>,
    pub objects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptVocabulary {
    primitives: Vec<String>,
    composites: Vec<String>,
    gt_composition: Vec<Vec<usize>>,
    pair_axes: Option<PairAxes>,
}

impl ConceptVocabulary {
    pub fn new(
        primitives: Vec<String>,
        composites: Vec<String>,
        gt_composition: Vec<Vec<usize>>,
        pair_axes: Option<PairAxes>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for name in &primitives {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateName {
                    field: "primitives".into(),
                    name: name.clone(),
                });
            }
        }
        let mut seen_q = HashSet::new();
        for name in &composites {
            if seen.contains(name.as_str()) || !seen_q.insert(name.as_str()) {
                return Err(Error::DuplicateName {
                    field: "composites".into(),
                    name: name.clone(),
                });
            }
        }
        if gt_composition.len() != composites.len() {
            return Err(Error::DimensionMismatch {
                field: "gt_composition".into(),
                expected: composites.len(),
                found: gt_composition.len(),
            });
        }
        let mut gt_composition = gt_composition;
        for (q, set) in gt_composition.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(Error::invalid(
                    "gt_composition",
                    format!("composite {q} has an empty primitive set"),
                ));
            }
            for &p in set.iter() {
                if p >= primitives.len() {
                    return Err(Error::IndexOutOfRange {
                        field: format!("gt_composition[{q}]"),
                        index: p,
                        bound: primitives.len(),
                    });
                }
            }
            set.sort_unstable();
            set.dedup();
        }
        if let Some(axes) = &pair_axes {
            for &p in axes.attributes.iter().chain(&axes.objects) {
                if p >= primitives.len() {
                    return Err(Error::IndexOutOfRange {
                        field: "pair_axes".into(),
                        index: p,
                        bound: primitives.len(),
                    });
                }
            }
            let attrs: HashSet<_> = axes.attributes.iter().collect();
            if axes.objects.iter().any(|o| attrs.contains(o)) {
                return Err(Error::invalid(
                    "pair_axes",
                    "attribute and object axes overlap",
                ));
            }
        }
        Ok(Self {
            primitives,
            composites,
            gt_composition,
            pair_axes,
        })
    }

    pub fn primitives(&self) -> &[String] {
        &self.primitives
    }

    pub fn composites(&self) -> &[String] {
        &self.composites
    }

    /// Sorted primitive indices making up composite `q`.
    pub fn composition(&self, q: usize) -> &[usize] {
        &self.gt_composition[q]
    }

    pub fn gt_composition(&self) -> &[Vec<usize>] {
        &self.gt_composition
    }

    pub fn pair_axes(&self) -> Option<&PairAxes> {
        self.pair_axes.as_ref()
    }

    pub fn n_primitives(&self) -> usize {
        self.primitives.len()
    }

    pub fn n_composites(&self) -> usize {
        self.composites.len()
    }

    pub fn composite_index(&self, name: &str) -> Option<usize> {
        self.composites.iter().position(|c| c == name)
    }

    /// Binary indicator of composite `q` over the primitives.
    pub fn indicator(&self, q: usize) -> Vec<u8> {
        let mut row = vec![0u8; self.primitives.len()];
        for &p in &self.gt_composition[q] {
            row[p] = 1;
        }
        row
    }

    /// Composite index of the pair `(attribute, object)`, if present.
    pub fn pair_index(&self, attribute: usize, object: usize) -> Option<usize> {
        let mut key = [attribute, object];
        key.sort_unstable();
        self.gt_composition
            .iter()
            .position(|set| set.as_slice() == key.as_slice())
    }

    /// Copy of the vocabulary with every missing attribute×object pair
    /// appended (attribute-major). Requires pair axes.
    pub fn expand_open_world(&self) -> Result<Self> {
        let axes = self
            .pair_axes
            .as_ref()
            .ok_or_else(|| Error::arg("open-world expansion needs a pair-structured vocabulary"))?;
        let existing: HashSet<Vec<usize>> = self.gt_composition.iter().cloned().collect();
        let mut composites = self.composites.clone();
        let mut gt = self.gt_composition.clone();
        for &a in &axes.attributes {
            for &o in &axes.objects {
                let mut key = vec![a, o];
                key.sort_unstable();
                if !existing.contains(&key) {
                    composites.push(format!("{} {}", self.primitives[a], self.primitives[o]));
                    gt.push(key);
                }
            }
        }
        Self::new(self.primitives.clone(), composites, gt, self.pair_axes.clone())
    }
}

/// Record of the per-column normalization applied to an activation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Normalization {
    None,
    MinMax { lo: Vec<f32>, hi: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub data: Matrix<f32>,
    pub sample_ids: Vec<String>,
    pub normalization: Normalization,
}

impl ActivationMatrix {
    pub fn new(data: Matrix<f32>, sample_ids: Vec<String>) -> Self {
        Self {
            data,
            sample_ids,
            normalization: Normalization::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GtLevel {
    PerSample,
    PerClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthConceptMatrix {
    pub data: Matrix<u8>,
    pub level: GtLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub labels: Vec<usize>,
    pub split_of: Vec<Split>,
    /// Composites seen during training.
    pub seen_set: Vec<usize>,
    /// Closed-world evaluation candidates.
    pub candidate_set: Vec<usize>,
}

/// Text-side embeddings of composites; one row per vocabulary composite.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeEmbeddingMatrix {
    pub data: Matrix<f32>,
    pub source: String,
}

/// Which per-sample input a consumer reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// Model-predicted activations.
    Predicted,
    /// Binary ground-truth primitives.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    vocab: ConceptVocabulary,
    activations: ActivationMatrix,
    ground_truth: GroundTruthConceptMatrix,
    split: LabeledSplit,
    embeddings: Option<CompositeEmbeddingMatrix>,
    features: Option<Matrix<f32>>,
}

impl DatasetBundle {
    /// Validates every cross-reference and invariant.
    pub fn new(
        vocab: ConceptVocabulary,
        activations: ActivationMatrix,
        ground_truth: GroundTruthConceptMatrix,
        split: LabeledSplit,
        embeddings: Option<CompositeEmbeddingMatrix>,
        features: Option<Matrix<f32>>,
    ) -> Result<Self> {
        let n = activations.sample_ids.len();
        let p = vocab.n_primitives();
        let q = vocab.n_composites();

        check_dim("activations.rows", n, activations.data.rows())?;
        check_dim("activations.cols", p, activations.data.cols())?;
        if let Some((row, col)) = activations.data.first_non_finite() {
            return Err(Error::NonFinite {
                field: "activations".into(),
                row,
                col,
            });
        }
        let mut ids = HashSet::new();
        for id in &activations.sample_ids {
            if !ids.insert(id.as_str()) {
                return Err(Error::DuplicateName {
                    field: "sample_ids".into(),
                    name: id.clone(),
                });
            }
        }

        check_dim("labels", n, split.labels.len())?;
        check_dim("splits", n, split.split_of.len())?;
        for (i, &l) in split.labels.iter().enumerate() {
            if l >= q {
                return Err(Error::IndexOutOfRange {
                    field: format!("labels[{i}]"),
                    index: l,
                    bound: q,
                });
            }
        }
        for (field, set) in [("seen_set", &split.seen_set), ("candidate_set", &split.candidate_set)] {
            let mut uniq = HashSet::new();
            for &c in set.iter() {
                if c >= q {
                    return Err(Error::IndexOutOfRange {
                        field: field.into(),
                        index: c,
                        bound: q,
                    });
                }
                if !uniq.insert(c) {
                    return Err(Error::invalid(field, format!("composite {c} listed twice")));
                }
            }
        }
        let candidates: HashSet<_> = split.candidate_set.iter().copied().collect();
        if let Some(&c) = split.seen_set.iter().find(|c| !candidates.contains(c)) {
            return Err(Error::invalid(
                "seen_set",
                format!("seen composite {c} is not in the candidate set"),
            ));
        }
        let seen: HashSet<_> = split.seen_set.iter().copied().collect();
        for i in 0..n {
            if split.split_of[i] == Split::Train && !seen.contains(&split.labels[i]) {
                return Err(Error::invalid(
                    "labels",
                    format!("training sample {i} has unseen label {}", split.labels[i]),
                ));
            }
        }

        match ground_truth.level {
            GtLevel::PerSample => check_dim("ground_truth.rows", n, ground_truth.data.rows())?,
            GtLevel::PerClass => check_dim("ground_truth.rows", q, ground_truth.data.rows())?,
        }
        check_dim("ground_truth.cols", p, ground_truth.data.cols())?;
        for (k, &v) in ground_truth.data.as_slice().iter().enumerate() {
            if v > 1 {
                return Err(Error::NonBinary {
                    field: "ground_truth".into(),
                    row: k / p.max(1),
                    col: k % p.max(1),
                    value: v,
                });
            }
        }

        if let Normalization::MinMax { lo, hi } = &activations.normalization {
            check_dim("normalization.lo", p, lo.len())?;
            check_dim("normalization.hi", p, hi.len())?;
        }

        if let Some(g) = &embeddings {
            check_dim("embeddings.rows", q, g.data.rows())?;
            if let Some((row, col)) = g.data.first_non_finite() {
                return Err(Error::NonFinite {
                    field: "embeddings".into(),
                    row,
                    col,
                });
            }
        }
        if let Some(f) = &features {
            check_dim("features.rows", n, f.rows())?;
            if let Some((row, col)) = f.first_non_finite() {
                return Err(Error::NonFinite {
                    field: "features".into(),
                    row,
                    col,
                });
            }
        }

        Ok(Self {
            vocab,
            activations,
            ground_truth,
            split,
            embeddings,
            features,
        })
    }

    pub fn vocab(&self) -> &ConceptVocabulary {
        &self.vocab
    }

    pub fn activations(&self) -> &ActivationMatrix {
        &self.activations
    }

    pub fn ground_truth(&self) -> &GroundTruthConceptMatrix {
        &self.ground_truth
    }

    pub fn split(&self) -> &LabeledSplit {
        &self.split
    }

    pub fn embeddings(&self) -> Option<&CompositeEmbeddingMatrix> {
        self.embeddings.as_ref()
    }

    /// Raw model features (e.g. image embeddings) for projection ablations.
    pub fn features(&self) -> Option<&Matrix<f32>> {
        self.features.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.activations.sample_ids.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.split.labels
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.split.split_of[i] == split)
            .collect()
    }

    pub fn is_seen(&self, composite: usize) -> bool {
        self.split.seen_set.contains(&composite)
    }

    /// Ground-truth row for sample `i`; class-level truth is looked up by the
    /// sample's label.
    pub fn gt_row(&self, i: usize) -> &[u8] {
        match self.ground_truth.level {
            GtLevel::PerSample => self.ground_truth.data.row(i),
            GtLevel::PerClass => self.ground_truth.data.row(self.split.labels[i]),
        }
    }

    pub fn input_row(&self, i: usize, source: InputSource) -> Vec<f64> {
        match source {
            InputSource::Predicted => self.activations.data.row_f64(i),
            InputSource::GroundTruth => self.gt_row(i).iter().map(|&v| v as f64).collect(),
        }
    }

    /// Replaces the activation matrix (e.g. after normalization), revalidating.
    pub fn with_activations(self, activations: ActivationMatrix) -> Result<Self> {
        Self::new(
            self.vocab,
            activations,
            self.ground_truth,
            self.split,
            self.embeddings,
            self.features,
        )
    }

    pub fn with_ground_truth(self, ground_truth: GroundTruthConceptMatrix) -> Result<Self> {
        Self::new(
            self.vocab,
            self.activations,
            ground_truth,
            self.split,
            self.embeddings,
            self.features,
        )
    }
}

fn check_dim(field: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            field: field.into(),
            expected,
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Four samples, three primitives, two composites.
    pub fn small_bundle() -> DatasetBundle {
        let vocab = ConceptVocabulary::new(
            vec!["red".into(), "wing".into(), "tail".into()],
            vec!["red wing".into(), "red tail".into()],
            vec![vec![0, 1], vec![0, 2]],
            None,
        )
        .unwrap();
        let acts = Matrix::from_vec(
            4,
            3,
            vec![0.9, 0.8, 0.1, 0.7, 0.2, 0.9, 1.0, 0.6, 0.3, 0.8, 0.1, 0.7],
        )
        .unwrap();
        let gt = Matrix::from_vec(4, 3, vec![1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0, 1]).unwrap();
        let emb = Matrix::from_vec(2, 3, vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        DatasetBundle::new(
            vocab,
            ActivationMatrix::new(acts, (0..4).map(|i| format!("img{i}")).collect()),
            GroundTruthConceptMatrix {
                data: gt,
                level: GtLevel::PerSample,
            },
            LabeledSplit {
                labels: vec![0, 1, 0, 1],
                split_of: vec![Split::Train, Split::Train, Split::Test, Split::Test],
                seen_set: vec![0, 1],
                candidate_set: vec![0, 1],
            },
            Some(CompositeEmbeddingMatrix {
                data: emb,
                source: "synthetic".into(),
            }),
            None,
        )
        .unwrap()
    }
}
