//! Input transforms for the projection ablation: raw features, a frozen
//! random projection, or a projection learned jointly with the composition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{sgd_step, Adam};
use super::{
    gaussian_init, softmax_in_place, to_f32_matrix, train_logreg, LinearCompositionModel, Objective, Optimizer,
    TrainConfig, INIT_STD,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    None,
    Random,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputTransform {
    pub kind: ProjectionKind,
    pub source_dim: usize,
    /// `target × source`; absent for the identity.
    pub matrix: Option<Matrix<f32>>,
}

impl InputTransform {
    pub fn output_dim(&self) -> usize {
        self.matrix.as_ref().map_or(self.source_dim, |m| m.rows())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.matrix {
            None => x.to_vec(),
            Some(m) => super::matvec(m, x),
        }
    }

    pub fn apply_rows(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = x.iter_rows().map(|r| self.apply(r)).collect();
        Matrix::from_rows(&rows, self.output_dim()).expect("rows share the output width")
    }
}

/// Builds the transform for `kind`. Random projections draw entries from
/// `N(0, 1/source_dim)`, which keeps per-coordinate variance of unit-variance
/// inputs; learned projections start from the seeded small-Gaussian init and
/// are fit by [`train_with_projection`].
pub fn make_projection_baseline(
    kind: ProjectionKind,
    source_dim: usize,
    target_dim: usize,
    cfg: &TrainConfig,
) -> Result<InputTransform> {
    if source_dim == 0 {
        return Err(Error::arg("projection source dimension must be positive"));
    }
    if kind != ProjectionKind::None && target_dim == 0 {
        return Err(Error::arg("projection target dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let matrix = match kind {
        ProjectionKind::None => None,
        ProjectionKind::Random => {
            let std = (1.0 / source_dim as f64).sqrt();
            Some(to_f32_matrix(target_dim, source_dim, &gaussian_init(target_dim * source_dim, std, &mut rng))?)
        }
        ProjectionKind::Learned => Some(to_f32_matrix(
            target_dim,
            source_dim,
            &gaussian_init(target_dim * source_dim, INIT_STD, &mut rng),
        )?),
    };
    Ok(InputTransform {
        kind,
        source_dim,
        matrix,
    })
}

/// Logistic regression on projected inputs `P x` with the projection as a
/// free parameter: mean cross-entropy plus `(λ/2)(‖P‖² + ‖W‖²)`.
///
/// Parameters: `P` (`k × s`), then `W` (`classes × k`), then the bias.
#[derive(Debug, Clone)]
pub struct FactoredLogregObjective<'a> {
    x: &'a Matrix<f64>,
    targets: Vec<usize>,
    n_classes: usize,
    target_dim: usize,
    lambda: f64,
}

impl<'a> FactoredLogregObjective<'a> {
    pub fn new(x: &'a Matrix<f64>, targets: Vec<usize>, n_classes: usize, target_dim: usize, lambda: f64) -> Result<Self> {
        if targets.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                field: "labels".into(),
                expected: x.rows(),
                found: targets.len(),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n_classes) {
            return Err(Error::IndexOutOfRange {
                field: "labels".into(),
                index: t,
                bound: n_classes,
            });
        }
        Ok(Self {
            x,
            targets,
            n_classes,
            target_dim,
            lambda,
        })
    }

    pub fn batch_value_and_gradient(&self, params: &[f64], batch: &[usize]) -> (f64, Vec<f64>) {
        let (s, k, c) = (self.x.cols(), self.target_dim, self.n_classes);
        let (proj, rest) = params.split_at(k * s);
        let (w, b) = rest.split_at(c * k);
        let mut grad = vec![0.0; params.len()];
        let m = batch.len().max(1) as f64;
        let mut loss = 0.0;
        let mut h = vec![0.0; k];
        let mut dh = vec![0.0; k];
        let mut z = vec![0.0; c];
        for &i in batch {
            let xi = self.x.row(i);
            for (r, hr) in h.iter_mut().enumerate() {
                *hr = proj[r * s..(r + 1) * s].iter().zip(xi).map(|(a, b)| a * b).sum();
            }
            for q in 0..c {
                z[q] = b[q] + w[q * k..(q + 1) * k].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            let t = self.targets[i];
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            loss += mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() - z[t];
            softmax_in_place(&mut z);
            z[t] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..c {
                let r = z[q] / m;
                grad[k * s + c * k + q] += r;
                for a in 0..k {
                    grad[k * s + q * k + a] += r * h[a];
                    dh[a] += r * w[q * k + a];
                }
            }
            for a in 0..k {
                for (j, &xv) in xi.iter().enumerate() {
                    grad[a * s + j] += dh[a] * xv;
                }
            }
        }
        loss /= m;
        let mut reg = 0.0;
        for j in 0..k * s + c * k {
            reg += params[j] * params[j];
            grad[j] += self.lambda * params[j];
        }
        (loss + 0.5 * self.lambda * reg, grad)
    }
}

impl Objective for FactoredLogregObjective<'_> {
    fn dim(&self) -> usize {
        self.target_dim * self.x.cols() + self.n_classes * (self.target_dim + 1)
    }

    fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let all: Vec<usize> = (0..self.x.rows()).collect();
        self.batch_value_and_gradient(params, &all)
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedFit {
    pub transform: InputTransform,
    /// Operates on transformed inputs.
    pub model: LinearCompositionModel,
    pub loss: f64,
}

/// Fits the composition model on transformed inputs. Identity and random
/// transforms feed the ordinary logistic-regression trainer; a learned
/// transform is optimized jointly with the classifier by minibatch descent.
pub fn train_with_projection(
    transform: InputTransform,
    x: &Matrix<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<ProjectedFit> {
    if x.cols() != transform.source_dim {
        return Err(Error::DimensionMismatch {
            field: "projection input".into(),
            expected: transform.source_dim,
            found: x.cols(),
        });
    }
    if transform.kind != ProjectionKind::Learned {
        let projected = transform.apply_rows(x);
        let fit = train_logreg(&projected, labels, cfg)?;
        return Ok(ProjectedFit {
            transform,
            model: fit.model,
            loss: fit.loss,
        });
    }

    cfg.validate()?;
    if x.rows() == 0 || labels.len() != x.rows() {
        return Err(Error::arg("learned projection needs one label per training row"));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let targets = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let k = transform.output_dim();
    let s = transform.source_dim;
    let c = classes.len();
    let objective = FactoredLogregObjective::new(x, targets, c, k, cfg.effective_l2(x.rows()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut params: Vec<f64> = transform
        .matrix
        .as_ref()
        .expect("learned transforms carry a matrix")
        .as_slice()
        .iter()
        .map(|&v| v as f64)
        .collect();
    params.extend(gaussian_init(c * k, INIT_STD, &mut rng));
    params.extend(std::iter::repeat_n(0.0, c));

    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = objective.batch_value_and_gradient(&params, batch);
            if !loss.is_finite() {
                return Err(Error::NonFiniteResult(format!("learned projection, epoch {epoch}")));
            }
            match cfg.optimizer {
                Optimizer::AdaptiveMoment => adam.step(&mut params, &grad),
                Optimizer::PlainSgd => sgd_step(&mut params, &grad, cfg.learning_rate),
            }
        }
    }
    let loss = objective.value(&params);
    Ok(ProjectedFit {
        transform: InputTransform {
            matrix: Some(to_f32_matrix(k, s, &params[..k * s])?),
            ..transform
        },
        model: LinearCompositionModel::new(
            classes,
            to_f32_matrix(c, k, &params[k * s..k * s + c * k])?,
            params[k * s + c * k..].iter().map(|&v| v as f32).collect(),
        )?,
        loss,
    })
}
