use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{sgd_step, Adam};
use super::{gaussian_init, to_f32_matrix, DualProjectionModel, Objective, Optimizer, TrainConfig, INIT_STD};
use crate::bundle::CompositeEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const NORM_FLOOR: f64 = 1e-12;

/// Softmax cross-entropy over seen composites with logits
/// `unit(A x)·unit(B g_q) / τ`, plus `(λ/2)(‖A‖² + ‖B‖²)`.
///
/// Parameters are `A` (`d × n_primitives`) followed by `B` (`d × embed_dim`),
/// both row-major.
#[derive(Debug, Clone)]
pub struct ContrastiveObjective<'a> {
    x: &'a Matrix<f64>,
    targets: Vec<usize>,
    /// Embeddings of the seen composites, in target order.
    g: Matrix<f64>,
    shared_dim: usize,
    temperature: f64,
    lambda: f64,
    normalize_activation_side: bool,
}

impl<'a> ContrastiveObjective<'a> {
    pub fn new(
        x: &'a Matrix<f64>,
        targets: Vec<usize>,
        g: Matrix<f64>,
        shared_dim: usize,
        temperature: f64,
        lambda: f64,
        normalize_activation_side: bool,
    ) -> Result<Self> {
        if targets.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                field: "labels".into(),
                expected: x.rows(),
                found: targets.len(),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= g.rows()) {
            return Err(Error::IndexOutOfRange {
                field: "labels".into(),
                index: t,
                bound: g.rows(),
            });
        }
        Ok(Self {
            x,
            targets,
            g,
            shared_dim,
            temperature,
            lambda,
            normalize_activation_side,
        })
    }

    fn a_len(&self) -> usize {
        self.shared_dim * self.x.cols()
    }

    /// Loss and gradient over the rows in `batch`.
    pub fn batch_value_and_gradient(&self, params: &[f64], batch: &[usize]) -> (f64, Vec<f64>) {
        let d = self.shared_dim;
        let p = self.x.cols();
        let e = self.g.cols();
        let s = self.g.rows();
        let (a, b) = params.split_at(self.a_len());
        let mut grad = vec![0.0; params.len()];

        // embedding side
        let mut v = vec![0.0; s * d];
        let mut v_norm = vec![0.0; s];
        for q in 0..s {
            let gq = self.g.row(q);
            let vq = &mut v[q * d..(q + 1) * d];
            for (k, out) in vq.iter_mut().enumerate() {
                let bk = &b[k * e..(k + 1) * e];
                *out = bk.iter().zip(gq).map(|(x, y)| x * y).sum();
            }
            let n = vq.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            v_norm[q] = n;
            vq.iter_mut().for_each(|x| *x /= n);
        }
        let mut dv_hat = vec![0.0; s * d];

        let m = batch.len().max(1) as f64;
        let inv_tau = 1.0 / self.temperature;
        let mut loss = 0.0;
        let mut u = vec![0.0; d];
        let mut du = vec![0.0; d];
        let mut logits = vec![0.0; s];
        for &i in batch {
            let xi = self.x.row(i);
            u.iter_mut().for_each(|x| *x = 0.0);
            for (j, &xv) in xi.iter().enumerate() {
                if xv != 0.0 {
                    for k in 0..d {
                        u[k] += a[k * p + j] * xv;
                    }
                }
            }
            let u_norm = if self.normalize_activation_side {
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
                u.iter_mut().for_each(|x| *x /= n);
                n
            } else {
                1.0
            };
            for q in 0..s {
                let vq = &v[q * d..(q + 1) * d];
                logits[q] = inv_tau * u.iter().zip(vq).map(|(x, y)| x * y).sum::<f64>();
            }
            let t = self.targets[i];
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - mx).exp();
                z += *l;
            }
            loss += -((logits[t] / z).ln());
            // r_q = (p_q - y_q) / m, reused for both sides
            for l in logits.iter_mut() {
                *l /= z;
            }
            logits[t] -= 1.0;
            du.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..s {
                let r = logits[q] / m * inv_tau;
                let vq = &v[q * d..(q + 1) * d];
                let dvq = &mut dv_hat[q * d..(q + 1) * d];
                for k in 0..d {
                    du[k] += r * vq[k];
                    dvq[k] += r * u[k];
                }
            }
            if self.normalize_activation_side {
                let proj: f64 = du.iter().zip(&u).map(|(x, y)| x * y).sum();
                for k in 0..d {
                    du[k] = (du[k] - u[k] * proj) / u_norm;
                }
            }
            for (j, &xv) in xi.iter().enumerate() {
                if xv != 0.0 {
                    for k in 0..d {
                        grad[k * p + j] += du[k] * xv;
                    }
                }
            }
        }
        loss /= m;

        let gb = &mut grad[self.a_len()..];
        for q in 0..s {
            let vq = &v[q * d..(q + 1) * d];
            let dvq = &dv_hat[q * d..(q + 1) * d];
            let proj: f64 = dvq.iter().zip(vq).map(|(x, y)| x * y).sum();
            let gq = self.g.row(q);
            for k in 0..d {
                let dv = (dvq[k] - vq[k] * proj) / v_norm[q];
                if dv != 0.0 {
                    for (c, &gv) in gq.iter().enumerate() {
                        gb[k * e + c] += dv * gv;
                    }
                }
            }
        }

        if self.lambda > 0.0 {
            let mut reg = 0.0;
            for (gi, &w) in grad.iter_mut().zip(params) {
                reg += w * w;
                *gi += self.lambda * w;
            }
            loss += 0.5 * self.lambda * reg;
        }
        (loss, grad)
    }
}

impl Objective for ContrastiveObjective<'_> {
    fn dim(&self) -> usize {
        self.shared_dim * (self.x.cols() + self.g.cols())
    }

    fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let all: Vec<usize> = (0..self.x.rows()).collect();
        self.batch_value_and_gradient(params, &all)
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveFit {
    pub model: DualProjectionModel,
    /// Mean minibatch loss of each epoch.
    pub loss_trajectory: Vec<f64>,
}

/// Trains the dual-projection model on rows of `x` whose labels are all in
/// `seen`; `g` holds one embedding row per vocabulary composite.
pub fn train_contrastive(
    x: &Matrix<f64>,
    labels: &[usize],
    g: &CompositeEmbeddingMatrix,
    seen: &[usize],
    cfg: &TrainConfig,
) -> Result<ContrastiveFit> {
    cfg.validate()?;
    if seen.len() < 2 {
        return Err(Error::arg("contrastive training needs at least two seen composites"));
    }
    if x.rows() == 0 {
        return Err(Error::arg("contrastive training needs at least one sample"));
    }
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            field: "labels".into(),
            expected: x.rows(),
            found: labels.len(),
        });
    }
    if let Some(&q) = seen.iter().find(|&&q| q >= g.data.rows()) {
        return Err(Error::invalid(
            "embeddings",
            format!("no embedding row for seen composite {q}"),
        ));
    }
    let targets = labels
        .iter()
        .map(|l| {
            seen.iter()
                .position(|s| s == l)
                .ok_or_else(|| Error::arg(format!("training label {l} is not a seen composite")))
        })
        .collect::<Result<Vec<_>>>()?;
    let g_seen = g.data.select_rows(seen).map(|v| v as f64);
    let objective = ContrastiveObjective::new(
        x,
        targets,
        g_seen,
        cfg.shared_dim,
        cfg.temperature,
        cfg.effective_l2(x.rows()),
        cfg.normalize_activation_side,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = gaussian_init(objective.dim(), INIT_STD, &mut rng);
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = objective.batch_value_and_gradient(&params, batch);
            if !loss.is_finite() {
                return Err(Error::NonFiniteResult(format!("contrastive training, epoch {epoch}")));
            }
            match cfg.optimizer {
                Optimizer::AdaptiveMoment => adam.step(&mut params, &grad),
                Optimizer::PlainSgd => sgd_step(&mut params, &grad, cfg.learning_rate),
            }
            total += loss;
            batches += 1;
        }
        trajectory.push(total / batches as f64);
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResult("contrastive training".into()));
    }
    let (d, p, e) = (cfg.shared_dim, x.cols(), g.data.cols());
    Ok(ContrastiveFit {
        model: DualProjectionModel {
            a: to_f32_matrix(d, p, &params[..d * p])?,
            b: to_f32_matrix(d, e, &params[d * p..])?,
            temperature: cfg.temperature,
            normalize_activation_side: cfg.normalize_activation_side,
            trained_on: seen.to_vec(),
        },
        loss_trajectory: trajectory,
    })
}
