//! Alignment of learned composition weights with ground-truth compositions,
//! and per-composite weight profiles for plotting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bundle::ConceptVocabulary;
use crate::composition::{softmax_in_place, LinearCompositionModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean over composites of |top-k ∩ gt| / k.
    #[default]
    PerComposite,
    /// Hits over all (composite, slot) pairs.
    Micro,
}

/// Indices of the `k` largest entries; ties go to the lower index.
pub fn top_k_indices(w: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// For each composite row with `k` ground-truth primitives, the share of
/// its `k` largest weights that fall on those primitives.
pub fn topk_alignment(model: &LinearCompositionModel, vocab: &ConceptVocabulary, averaging: Averaging) -> Result<f64> {
    if model.input_dim() != vocab.n_primitives() {
        return Err(Error::DimensionMismatch {
            field: "weights.cols".into(),
            expected: vocab.n_primitives(),
            found: model.input_dim(),
        });
    }
    if model.composites.is_empty() {
        return Err(Error::arg("model has no composites"));
    }
    let (mut hits, mut slots, mut per_sum) = (0usize, 0usize, 0.0);
    for (row, &q) in model.composites.iter().enumerate() {
        if q >= vocab.n_composites() {
            return Err(Error::IndexOutOfRange {
                field: "model composites".into(),
                index: q,
                bound: vocab.n_composites(),
            });
        }
        let gt = vocab.composition(q);
        let top = top_k_indices(model.weights.row(row), gt.len());
        let h = top.iter().filter(|p| gt.binary_search(p).is_ok()).count();
        hits += h;
        slots += gt.len();
        per_sum += h as f64 / gt.len() as f64;
    }
    Ok(match averaging {
        Averaging::PerComposite => per_sum / model.composites.len() as f64,
        Averaging::Micro => hits as f64 / slots as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub primitive: String,
    pub weight: f64,
    pub normalized: f64,
    pub is_gt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub composite: String,
    pub entries: Vec<ProfileEntry>,
}

/// Softmax-normalized weight row per requested composite, in primitive order.
pub fn export_weight_profiles(
    model: &LinearCompositionModel,
    vocab: &ConceptVocabulary,
    composites: &[usize],
) -> Result<Vec<WeightProfile>> {
    composites
        .iter()
        .map(|&q| {
            let row = model
                .row_of(q)
                .ok_or_else(|| Error::arg(format!("composite {q} has no weight row in this model")))?;
            let raw: Vec<f64> = model.weights.row(row).iter().map(|&w| w as f64).collect();
            let mut norm = raw.clone();
            softmax_in_place(&mut norm);
            let gt = vocab.composition(q);
            Ok(WeightProfile {
                composite: vocab.composites()[q].clone(),
                entries: vocab
                    .primitives()
                    .iter()
                    .enumerate()
                    .map(|(p, name)| ProfileEntry {
                        primitive: name.clone(),
                        weight: raw[p],
                        normalized: norm[p],
                        is_gt: gt.binary_search(&p).is_ok(),
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Long-format CSV: one line per (composite, primitive).
pub fn write_profiles_csv<W: Write>(profiles: &[WeightProfile], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::invalid("csv", e.to_string());
    w.write_record(["composite", "primitive", "weight", "normalized", "is_gt"]).map_err(wrap)?;
    for p in profiles {
        for e in &p.entries {
            w.write_record([
                p.composite.as_str(),
                e.primitive.as_str(),
                &e.weight.to_string(),
                &e.normalized.to_string(),
                &e.is_gt.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::invalid("csv", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn vocab() -> ConceptVocabulary {
        ConceptVocabulary::new(
            (0..6).map(|i| format!("p{i}")).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0, 1], vec![2, 3, 4], vec![5]],
            None,
        )
        .unwrap()
    }

    fn model(rows: Vec<Vec<f32>>) -> LinearCompositionModel {
        let n = rows.len();
        LinearCompositionModel::new((0..n).collect(), Matrix::from_rows(&rows, 6).unwrap(), vec![0.0; n]).unwrap()
    }

    fn indicator_rows(v: &ConceptVocabulary) -> Vec<Vec<f32>> {
        (0..3).map(|q| v.indicator(q).iter().map(|&b| b as f32).collect()).collect()
    }

    #[test]
    fn perfect_and_worst() {
        let v = vocab();
        let m = model(indicator_rows(&v));
        assert_eq!(topk_alignment(&m, &v, Averaging::PerComposite).unwrap(), 1.0);
        assert_eq!(topk_alignment(&m, &v, Averaging::Micro).unwrap(), 1.0);
        let rev: Vec<Vec<f32>> = indicator_rows(&v)
            .into_iter()
            .map(|r| r.into_iter().map(|x| 1.0 - x).collect())
            .collect();
        assert_eq!(topk_alignment(&model(rev), &v, Averaging::PerComposite).unwrap(), 0.0);
    }

    #[test]
    fn averaging_modes_differ() {
        let v = vocab();
        // a: 1/2 hit, b: 3/3, c: 0/1
        let m = model(vec![
            vec![5.0, 0.0, 4.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ]);
        let per = topk_alignment(&m, &v, Averaging::PerComposite).unwrap();
        assert!((per - (0.5 + 1.0 + 0.0) / 3.0).abs() < 1e-15);
        assert!((topk_alignment(&m, &v, Averaging::Micro).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(top_k_indices(&[1.0, 2.0, 2.0, 2.0], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[0.0; 4], 1), vec![0]);
    }

    #[test]
    fn profiles() {
        let v = vocab();
        let mut rows = vec![vec![0.0f32; 6]; 3];
        rows[1][3] = 10.0;
        let m = model(rows);
        let p = export_weight_profiles(&m, &v, &[0, 1]).unwrap();
        assert!(p[0].entries.iter().all(|e| (e.normalized - 1.0 / 6.0).abs() < 1e-12));
        assert!(p[1].entries[3].normalized > 0.99);
        let flags: Vec<bool> = p[1].entries.iter().map(|e| e.is_gt).collect();
        assert_eq!(flags, vec![false, false, true, true, true, false]);

        let mut buf = Vec::new();
        write_profiles_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.starts_with("composite,primitive,weight,normalized,is_gt\n"));
    }

    #[test]
    fn uniform_four() {
        let v = ConceptVocabulary::new(
            (0..4).map(|i| format!("p{i}")).collect(),
            vec!["a".into()],
            vec![vec![0]],
            None,
        )
        .unwrap();
        let m = LinearCompositionModel::new(vec![0], Matrix::from_vec(1, 4, vec![0.7; 4]).unwrap(), vec![0.0]).unwrap();
        let p = export_weight_profiles(&m, &v, &[0]).unwrap();
        assert!(p[0].entries.iter().all(|e| (e.normalized - 0.25).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn invariant_to_shift_and_scale(
            w in prop::collection::vec(-3i32..3, 18),
            shift in -5i32..5,
            scale in 1u32..4,
        ) {
            let v = vocab();
            let rows: Vec<Vec<f32>> = w.chunks(6).map(|r| r.iter().map(|&x| x as f32).collect()).collect();
            let moved: Vec<Vec<f32>> = rows
                .iter()
                .map(|r| r.iter().map(|&x| x * scale as f32 + shift as f32).collect())
                .collect();
            let a = topk_alignment(&model(rows), &v, Averaging::PerComposite).unwrap();
            let b = topk_alignment(&model(moved), &v, Averaging::PerComposite).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
