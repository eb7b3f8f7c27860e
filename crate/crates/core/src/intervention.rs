//! Model intervention: replacing inference-time activations with
//! ground-truth primitives, and the interpretability gap Δ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterventionMode {
    /// Predicted activations, untouched.
    None,
    /// Every dimension replaced by the binary ground truth.
    Full,
    /// Ground-truth-active dimensions set to 1; the rest keep predictions.
    Partial,
}

impl std::str::FromStr for InterventionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "full" => Ok(Self::Full),
            "partial" => Ok(Self::Partial),
            other => Err(Error::arg(format!("unknown intervention mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for InterventionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Full => "full",
            Self::Partial => "partial",
        })
    }
}

/// Applies `mode` to one activation row, in normalized space.
pub fn intervene(e_row: &[f64], gt_row: &[u8], mode: InterventionMode) -> Result<Vec<f64>> {
    if e_row.len() != gt_row.len() {
        return Err(Error::DimensionMismatch {
            field: "intervention ground truth".into(),
            expected: e_row.len(),
            found: gt_row.len(),
        });
    }
    Ok(match mode {
        InterventionMode::None => e_row.to_vec(),
        InterventionMode::Full => gt_row.iter().map(|&g| g as f64).collect(),
        InterventionMode::Partial => e_row
            .iter()
            .zip(gt_row)
            .map(|(&e, &g)| if g == 1 { 1.0 } else { e })
            .collect(),
    })
}

/// Interpretability gap: metric of the ground-truth composition on true
/// primitives minus the learned composition's metric on true primitives.
/// Lower is more interpretable.
pub fn interpretability_delta(metric_gt: f64, metric_pred_on_gt: f64) -> f64 {
    metric_gt - metric_pred_on_gt
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn modes() {
        let e = [0.2, 0.9, 0.4];
        assert_eq!(intervene(&e, &[1, 0, 1], InterventionMode::Full).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(intervene(&e, &[1, 0, 0], InterventionMode::Partial).unwrap(), vec![1.0, 0.9, 0.4]);
        assert_eq!(intervene(&e, &[1, 0, 0], InterventionMode::None).unwrap(), e.to_vec());
        assert_eq!(
            intervene(&e, &[1, 1, 1], InterventionMode::Full).unwrap(),
            intervene(&e, &[1, 1, 1], InterventionMode::Partial).unwrap()
        );
        assert!(intervene(&e, &[1, 0], InterventionMode::Full).is_err());
    }

    #[test]
    fn delta_values() {
        assert_eq!(interpretability_delta(99.9, 30.0), 69.9);
        assert!((interpretability_delta(98.9, 13.4) - 85.5).abs() < 1e-12);
        assert_eq!(interpretability_delta(0.734, 0.734), 0.0);
    }

    proptest! {
        #[test]
        fn idempotent_and_partial_dominates(
            e in prop::collection::vec(0.0f64..1.0, 8),
            g in prop::collection::vec(0u8..2, 8),
        ) {
            for mode in [InterventionMode::Full, InterventionMode::Partial] {
                let once = intervene(&e, &g, mode).unwrap();
                prop_assert_eq!(intervene(&once, &g, mode).unwrap(), once);
            }
            let p = intervene(&e, &g, InterventionMode::Partial).unwrap();
            for j in 0..8 {
                if g[j] == 1 { prop_assert!(p[j] >= e[j]); } else { prop_assert_eq!(p[j], e[j]); }
            }
        }
    }
}
