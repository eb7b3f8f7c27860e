//! Linear composition models mapping primitive activations to composite
//! scores, and their trainers.
//!
//! Two model families are provided. [`LinearCompositionModel`] keeps one
//! weight row per composite and is trained by L2-regularized multinomial
//! logistic regression ([`train_logreg`]). [`DualProjectionModel`] projects
//! activations and composite text embeddings into a shared space and is
//! trained contrastively over the seen composites ([`train_contrastive`]); it
//! can score composites never seen in training, and for a fixed candidate set
//! reduces to a linear model.

mod contrastive;
mod gradcheck;
mod logreg;
mod optim;
mod persist;
mod projection;

use serde::{Deserialize, Serialize};

use crate::bundle::CompositeEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

pub use contrastive::{train_contrastive, ContrastiveFit, ContrastiveObjective};
pub use gradcheck::gradient_check;
pub use logreg::{train_logreg, LogregFit, LogregObjective};
pub use optim::{minimize_lbfgs, Adam, LbfgsOutcome};
pub use persist::{load_model, save_model, ModelSidecar, MODEL_SIDECAR};
pub use projection::{
    make_projection_baseline, train_with_projection, FactoredLogregObjective, InputTransform, ProjectedFit,
    ProjectionKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    PlainSgd,
    AdaptiveMoment,
}

/// How `l2_penalty` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Convention {
    /// `l2_penalty` is the weight λ of `(λ/2)‖W‖²` added to the mean loss.
    Penalty,
    /// `l2_penalty` is an inverse strength C; the effective penalty on the
    /// mean loss is `1 / (C · n_samples)`.
    InverseStrength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub l2_convention: L2Convention,
    pub temperature: f64,
    pub shared_dim: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Iteration cap for the full-batch logistic-regression solver.
    pub max_iterations: usize,
    /// Gradient infinity-norm at which the full-batch solver stops.
    pub tolerance: f64,
    /// L2-normalize the projected activation before scoring.
    pub normalize_activation_side: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::logreg()
    }
}

impl TrainConfig {
    /// Defaults for the logistic-regression trainer (λ = 1).
    pub fn logreg() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 256,
            l2_penalty: 1.0,
            l2_convention: L2Convention::Penalty,
            temperature: 0.05,
            shared_dim: 512,
            seed: 0,
            optimizer: Optimizer::AdaptiveMoment,
            max_iterations: 2000,
            tolerance: 1e-9,
            normalize_activation_side: true,
        }
    }

    /// Defaults for the contrastive dual-projection trainer.
    pub fn contrastive() -> Self {
        Self {
            l2_penalty: 0.0,
            ..Self::logreg()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::arg(format!("train config: `{name}` must be positive")))
            }
        };
        positive("epochs", self.epochs > 0)?;
        positive("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite())?;
        positive("batch_size", self.batch_size > 0)?;
        positive("temperature", self.temperature > 0.0 && self.temperature.is_finite())?;
        positive("shared_dim", self.shared_dim > 0)?;
        positive("max_iterations", self.max_iterations > 0)?;
        positive("tolerance", self.tolerance > 0.0)?;
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::arg("train config: `l2_penalty` must be nonnegative"));
        }
        if self.l2_convention == L2Convention::InverseStrength && self.l2_penalty == 0.0 {
            return Err(Error::arg("train config: inverse-strength `l2_penalty` must be positive"));
        }
        Ok(())
    }

    /// Penalty weight on the mean-loss scale for a training set of `n`.
    pub fn effective_l2(&self, n: usize) -> f64 {
        match self.l2_convention {
            L2Convention::Penalty => self.l2_penalty,
            L2Convention::InverseStrength => 1.0 / (self.l2_penalty * n as f64),
        }
    }
}

/// Differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>);
    fn value(&self, params: &[f64]) -> f64 {
        self.value_and_gradient(params).0
    }
}

/// One weight row `w_q` and bias `b_q` per composite; `score = w_q·e + b_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCompositionModel {
    /// Composite index of each weight row.
    pub composites: Vec<usize>,
    pub weights: Matrix<f32>,
    pub bias: Vec<f32>,
}

impl LinearCompositionModel {
    pub fn new(composites: Vec<usize>, weights: Matrix<f32>, bias: Vec<f32>) -> Result<Self> {
        if weights.rows() != composites.len() {
            return Err(Error::DimensionMismatch {
                field: "weights.rows".into(),
                expected: composites.len(),
                found: weights.rows(),
            });
        }
        if bias.len() != composites.len() {
            return Err(Error::DimensionMismatch {
                field: "bias".into(),
                expected: composites.len(),
                found: bias.len(),
            });
        }
        if weights.first_non_finite().is_some() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteResult("model construction".into()));
        }
        Ok(Self {
            composites,
            weights,
            bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn row_of(&self, composite: usize) -> Option<usize> {
        self.composites.iter().position(|&c| c == composite)
    }

    pub fn score_row(&self, row: usize, e: &[f64]) -> f64 {
        let w = self.weights.row(row);
        w.iter().zip(e).map(|(&w, &x)| w as f64 * x).sum::<f64>() + self.bias[row] as f64
    }

    /// Index (into `composites`) of the highest score; ties go to the lower row.
    pub fn predict_row(&self, e: &[f64]) -> usize {
        argmax(&(0..self.composites.len()).map(|r| self.score_row(r, e)).collect::<Vec<_>>())
    }
}

/// Activation-side projection `A` and embedding-side projection `B` into a
/// shared space; `score(e, q) = unit(A e)·unit(B g_q) / τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualProjectionModel {
    /// `shared_dim × n_primitives`.
    pub a: Matrix<f32>,
    /// `shared_dim × embed_dim`.
    pub b: Matrix<f32>,
    pub temperature: f64,
    pub normalize_activation_side: bool,
    /// Seen composites the model was trained on.
    pub trained_on: Vec<usize>,
}

impl DualProjectionModel {
    pub fn shared_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn project_activation(&self, e: &[f64]) -> Vec<f64> {
        let u = matvec(&self.a, e);
        if self.normalize_activation_side {
            unit(&u)
        } else {
            u
        }
    }

    pub fn project_embedding(&self, g: &[f64]) -> Vec<f64> {
        unit(&matvec(&self.b, g))
    }

    /// Equivalent linear model over `candidates`: `w_q = Aᵀ unit(B g_q) / τ`.
    /// Scores agree exactly with the dual model when the activation side is
    /// not normalized; otherwise they agree up to a positive per-sample scale.
    pub fn reduce(&self, g: &CompositeEmbeddingMatrix, candidates: &[usize]) -> Result<LinearCompositionModel> {
        check_embeddings(self, g, candidates)?;
        let p = self.a.cols();
        let mut weights = Matrix::zeros(candidates.len(), p);
        for (r, &q) in candidates.iter().enumerate() {
            let v = self.project_embedding(&g.data.row_f64(q));
            let row = weights.row_mut(r);
            for (j, w) in row.iter_mut().enumerate() {
                let s: f64 = (0..self.a.rows()).map(|k| self.a.get(k, j) as f64 * v[k]).sum();
                *w = (s / self.temperature) as f32;
            }
        }
        LinearCompositionModel::new(candidates.to_vec(), weights, vec![0.0; candidates.len()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompositionModel {
    Linear(LinearCompositionModel),
    DualProjection(DualProjectionModel),
}

impl CompositionModel {
    /// Precomputes whatever is shared across rows for a fixed candidate set.
    pub fn prepare(&self, candidates: &[usize], g: Option<&CompositeEmbeddingMatrix>) -> Result<PreparedScorer<'_>> {
        match self {
            CompositionModel::Linear(m) => {
                if g.is_some() {
                    return Err(Error::arg("linear composition models take no composite embeddings"));
                }
                let rows = candidates
                    .iter()
                    .map(|&c| {
                        m.row_of(c).ok_or_else(|| {
                            Error::arg(format!("composite {c} has no weight row in this model"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedScorer::Linear { model: m, rows })
            }
            CompositionModel::DualProjection(m) => {
                let g = g.ok_or_else(|| Error::arg("dual-projection scoring needs composite embeddings"))?;
                check_embeddings(m, g, candidates)?;
                let projected = candidates
                    .iter()
                    .map(|&q| m.project_embedding(&g.data.row_f64(q)))
                    .collect();
                Ok(PreparedScorer::Dual { model: m, projected })
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CompositionModel::Linear(m) => m.input_dim(),
            CompositionModel::DualProjection(m) => m.a.cols(),
        }
    }
}

pub enum PreparedScorer<'a> {
    Linear {
        model: &'a LinearCompositionModel,
        rows: Vec<usize>,
    },
    Dual {
        model: &'a DualProjectionModel,
        projected: Vec<Vec<f64>>,
    },
}

impl PreparedScorer<'_> {
    pub fn score(&self, e: &[f64]) -> Result<Vec<f64>> {
        match self {
            PreparedScorer::Linear { model, rows } => {
                check_input(model.input_dim(), e)?;
                Ok(rows.iter().map(|&r| model.score_row(r, e)).collect())
            }
            PreparedScorer::Dual { model, projected } => {
                check_input(model.a.cols(), e)?;
                let u = model.project_activation(e);
                Ok(projected.iter().map(|v| dot(&u, v) / model.temperature).collect())
            }
        }
    }
}

/// One score per candidate for a single activation row.
pub fn score_candidates(
    model: &CompositionModel,
    e_row: &[f64],
    candidates: &[usize],
    g: Option<&CompositeEmbeddingMatrix>,
) -> Result<Vec<f64>> {
    model.prepare(candidates, g)?.score(e_row)
}

fn check_input(expected: usize, e: &[f64]) -> Result<()> {
    if e.len() != expected {
        return Err(Error::DimensionMismatch {
            field: "activation row".into(),
            expected,
            found: e.len(),
        });
    }
    Ok(())
}

fn check_embeddings(m: &DualProjectionModel, g: &CompositeEmbeddingMatrix, candidates: &[usize]) -> Result<()> {
    if g.data.cols() != m.b.cols() {
        return Err(Error::DimensionMismatch {
            field: "embeddings.cols".into(),
            expected: m.b.cols(),
            found: g.data.cols(),
        });
    }
    if let Some(&bad) = candidates.iter().find(|&&q| q >= g.data.rows()) {
        return Err(Error::IndexOutOfRange {
            field: "candidates".into(),
            index: bad,
            bound: g.data.rows(),
        });
    }
    Ok(())
}

pub(crate) fn matvec(m: &Matrix<f32>, x: &[f64]) -> Vec<f64> {
    m.iter_rows()
        .map(|r| r.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum())
        .collect()
}

/// Zero vectors stay zero.
pub(crate) fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Seeded Gaussian initialization shared by the trainers.
pub(crate) fn gaussian_init(n: usize, std: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("std is positive");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub(crate) const INIT_STD: f64 = 0.02;

pub(crate) fn to_f32_matrix(rows: usize, cols: usize, v: &[f64]) -> Result<Matrix<f32>> {
    Matrix::from_vec(rows, cols, v.iter().map(|&x| x as f32).collect())
}
