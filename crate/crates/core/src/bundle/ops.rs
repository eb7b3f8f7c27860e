use super::{ActivationMatrix, GroundTruthConceptMatrix, GtLevel, Normalization};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-column min-max normalization with statistics taken from `train_rows`
/// only. Columns that are constant on the training rows map to 0.5. Values
/// outside the training range are not clamped.
pub fn normalize_activations(m: &ActivationMatrix, train_rows: &[usize]) -> Result<ActivationMatrix> {
    if m.normalization != Normalization::None {
        return Err(Error::arg("activations are already normalized"));
    }
    if train_rows.is_empty() {
        return Err(Error::arg("normalization needs at least one training row"));
    }
    let (rows, cols) = m.data.shape();
    if let Some(&bad) = train_rows.iter().find(|&&r| r >= rows) {
        return Err(Error::IndexOutOfRange {
            field: "train_rows".into(),
            index: bad,
            bound: rows,
        });
    }
    let mut lo = vec![f32::INFINITY; cols];
    let mut hi = vec![f32::NEG_INFINITY; cols];
    for &r in train_rows {
        for (j, &v) in m.data.row(r).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let src = m.data.row(i);
        let dst = out.row_mut(i);
        for j in 0..cols {
            dst[j] = if lo[j] == hi[j] {
                0.5
            } else {
                ((src[j] as f64 - lo[j] as f64) / (hi[j] as f64 - lo[j] as f64)) as f32
            };
        }
    }
    Ok(ActivationMatrix {
        data: out,
        sample_ids: m.sample_ids.clone(),
        normalization: Normalization::MinMax { lo, hi },
    })
}

/// Majority vote of per-sample attributes into one row per class. An entry
/// is 1 only when strictly more than half of the class's samples carry the
/// attribute; exact ties resolve to 0.
pub fn denoise_to_class_level(
    gt: &GroundTruthConceptMatrix,
    labels: &[usize],
    n_classes: usize,
) -> Result<GroundTruthConceptMatrix> {
    if gt.level != GtLevel::PerSample {
        return Err(Error::arg("ground truth is already class-level"));
    }
    if labels.len() != gt.data.rows() {
        return Err(Error::DimensionMismatch {
            field: "labels".into(),
            expected: gt.data.rows(),
            found: labels.len(),
        });
    }
    let cols = gt.data.cols();
    let mut votes = vec![0usize; n_classes * cols];
    let mut counts = vec![0usize; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::IndexOutOfRange {
                field: format!("labels[{i}]"),
                index: l,
                bound: n_classes,
            });
        }
        counts[l] += 1;
        for (j, &v) in gt.data.row(i).iter().enumerate() {
            votes[l * cols + j] += v as usize;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid("labels", format!("class {empty} has zero samples")));
    }
    let data = votes
        .iter()
        .enumerate()
        .map(|(k, &v)| u8::from(2 * v > counts[k / cols.max(1)]))
        .collect();
    Ok(GroundTruthConceptMatrix {
        data: Matrix::from_vec(n_classes, cols, data)?,
        level: GtLevel::PerClass,
    })
}

/// Attribute filter: indices of columns active in at least `min_classes`
/// rows of a class-level matrix.
pub fn prevalent_attributes(class_gt: &GroundTruthConceptMatrix, min_classes: usize) -> Vec<usize> {
    (0..class_gt.data.cols())
        .filter(|&j| {
            (0..class_gt.data.rows())
                .filter(|&q| class_gt.data.get(q, j) == 1)
                .count()
                >= min_classes
        })
        .collect()
}
