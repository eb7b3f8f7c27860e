use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::minimize_lbfgs;
use super::{gaussian_init, softmax_in_place, to_f32_matrix, LinearCompositionModel, Objective, TrainConfig, INIT_STD};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mean softmax cross-entropy plus `(λ/2)‖W‖²`; biases are not penalized.
///
/// Parameters are laid out as `W` (classes × features, row-major) followed
/// by the bias vector.
#[derive(Debug, Clone)]
pub struct LogregObjective<'a> {
    x: &'a Matrix<f64>,
    /// Class position of each row.
    targets: Vec<usize>,
    n_classes: usize,
    lambda: f64,
}

impl<'a> LogregObjective<'a> {
    pub fn new(x: &'a Matrix<f64>, targets: Vec<usize>, n_classes: usize, lambda: f64) -> Result<Self> {
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
            lambda,
        })
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }
}

impl Objective for LogregObjective<'_> {
    fn dim(&self) -> usize {
        self.n_classes * (self.x.cols() + 1)
    }

    fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (n, p, c) = (self.x.rows(), self.x.cols(), self.n_classes);
        let (w, b) = params.split_at(c * p);
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut logits = vec![0.0; c];
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            let xi = self.x.row(i);
            for k in 0..c {
                let wk = &w[k * p..(k + 1) * p];
                logits[k] = b[k] + wk.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
            let t = self.targets[i];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - logits[t];
            softmax_in_place(&mut logits);
            logits[t] -= 1.0;
            for k in 0..c {
                let r = logits[k] * inv_n;
                if r != 0.0 {
                    let gk = &mut grad[k * p..(k + 1) * p];
                    for (g, &xv) in gk.iter_mut().zip(xi) {
                        *g += r * xv;
                    }
                }
                grad[c * p + k] += r;
            }
        }
        loss *= inv_n;
        let mut reg = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            reg += wj * wj;
            grad[j] += self.lambda * wj;
        }
        (loss + 0.5 * self.lambda * reg, grad)
    }
}

#[derive(Debug, Clone)]
pub struct LogregFit {
    pub model: LinearCompositionModel,
    /// Objective value at the returned parameters.
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Trains multinomial logistic regression on the rows of `x`. The model's
/// composite order is the sorted set of labels present.
pub fn train_logreg(x: &Matrix<f64>, labels: &[usize], cfg: &TrainConfig) -> Result<LogregFit> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::arg("logistic regression needs at least one training sample"));
    }
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            field: "labels".into(),
            expected: x.rows(),
            found: labels.len(),
        });
    }
    if let Some((row, col)) = first_non_finite(x) {
        return Err(Error::NonFinite {
            field: "training inputs".into(),
            row,
            col,
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let targets = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label collected above"))
        .collect();
    let objective = LogregObjective::new(x, targets, classes.len(), cfg.effective_l2(x.rows()))?;

    let (c, p) = (classes.len(), x.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut start = gaussian_init(c * p, INIT_STD, &mut rng);
    start.extend(std::iter::repeat_n(0.0, c));

    let out = minimize_lbfgs(&objective, start, cfg.max_iterations, cfg.tolerance)?;
    if !out.converged {
        log::debug!(
            "logistic regression stopped after {} iterations without meeting tolerance {}",
            out.iterations,
            cfg.tolerance
        );
    }
    let weights = to_f32_matrix(c, p, &out.params[..c * p])?;
    let bias = out.params[c * p..].iter().map(|&v| v as f32).collect();
    Ok(LogregFit {
        model: LinearCompositionModel::new(classes, weights, bias)?,
        loss: out.value,
        iterations: out.iterations,
        converged: out.converged,
    })
}

fn first_non_finite(x: &Matrix<f64>) -> Option<(usize, usize)> {
    x.as_slice()
        .iter()
        .position(|v| !v.is_finite())
        .map(|k| (k / x.cols().max(1), k % x.cols().max(1)))
}
