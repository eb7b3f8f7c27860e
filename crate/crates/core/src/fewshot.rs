//! Episodic n-way k-shot evaluation and the full-shot classifier.
//!
//! Every episode trains its own logistic regression on the support set and
//! scores the query set. Episodes draw from all samples of the bundle;
//! each task seeds its own ChaCha stream from (global seed, task index), so
//! results do not depend on evaluation order or thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{DatasetBundle, InputSource, Split};
use crate::composition::{train_logreg, TrainConfig};
use crate::error::{Error, Result};
use crate::intervention::{intervene, InterventionMode};
use crate::matrix::Matrix;

pub const DEFAULT_QUERY: usize = 15;
pub const DEFAULT_TASKS: usize = 600;

/// One n-way k-shot task. Sample references are bundle row indices, grouped
/// per class in the order of `classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub classes: Vec<usize>,
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn support_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.support.iter().flatten().copied()
    }

    pub fn query_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.query.iter().flatten().copied()
    }
}

fn task_rng(seed: u64, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task as u64);
    rng
}

/// Samples `tasks` episodes over every labeled sample of the bundle.
///
/// Classes with at least `k + 1` samples are eligible. When a class holds
/// fewer than `k + q` samples its query set shrinks to what remains, with a
/// warning.
pub fn sample_episodes(
    bundle: &DatasetBundle,
    n: usize,
    k: usize,
    q: usize,
    tasks: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    sample_episodes_from(bundle.labels(), n, k, q, tasks, seed)
}

/// Label-only form of [`sample_episodes`]; row `i` carries `labels[i]`.
pub fn sample_episodes_from(
    labels: &[usize],
    n: usize,
    k: usize,
    q: usize,
    tasks: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    if n == 0 || k == 0 || q == 0 || tasks == 0 {
        return Err(Error::arg("n, k, q and tasks must all be positive"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let eligible: Vec<usize> = by_class
        .iter()
        .filter(|(_, rows)| rows.len() > k)
        .map(|(&c, _)| c)
        .collect();
    if n > by_class.len() {
        return Err(Error::invalid(
            "episodes",
            format!("{n}-way tasks need {n} classes, bundle has {}", by_class.len()),
        ));
    }
    if eligible.len() < n {
        return Err(Error::invalid(
            "episodes",
            format!(
                "{n}-way {k}-shot tasks need {n} classes with at least {} samples, found {}",
                k + 1,
                eligible.len()
            ),
        ));
    }
    let short = eligible.iter().filter(|c| by_class[c].len() < k + q).count();
    if short > 0 {
        log::warn!("{short} eligible classes hold fewer than k + q = {} samples; their query sets shrink", k + q);
    }

    Ok((0..tasks)
        .map(|t| {
            let mut rng = task_rng(seed, t);
            let mut pool = eligible.clone();
            pool.shuffle(&mut rng);
            pool.truncate(n);
            let mut support = Vec::with_capacity(n);
            let mut query = Vec::with_capacity(n);
            for &c in &pool {
                let mut rows = by_class[&c].clone();
                rows.shuffle(&mut rng);
                let take_q = q.min(rows.len() - k);
                support.push(rows[..k].to_vec());
                query.push(rows[k..k + take_q].to_vec());
            }
            EpisodeSpec {
                classes: pool,
                support,
                query,
                seed,
            }
        })
        .collect())
}

/// Which inputs a few-shot or full-shot classifier sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    /// Inputs for training, and the base of query inputs.
    pub train_source: InputSource,
    /// Applied to query inputs only.
    pub intervene: InterventionMode,
    pub train: TrainConfig,
}

impl Default for ShotConfig {
    fn default() -> Self {
        Self {
            train_source: InputSource::Predicted,
            intervene: InterventionMode::None,
            train: TrainConfig::logreg(),
        }
    }
}

fn inputs(bundle: &DatasetBundle, rows: &[usize], source: InputSource) -> Result<Matrix<f64>> {
    let data: Vec<Vec<f64>> = rows.iter().map(|&i| bundle.input_row(i, source)).collect();
    Matrix::from_rows(&data, bundle.vocab().n_primitives())
}

/// Trains on `train_rows` and returns accuracy over `test_rows`.
fn train_and_score(bundle: &DatasetBundle, train_rows: &[usize], test_rows: &[usize], cfg: &ShotConfig) -> Result<f64> {
    if train_rows.is_empty() {
        return Err(Error::invalid("support", "no training samples"));
    }
    if test_rows.is_empty() {
        return Err(Error::invalid("query", "no evaluation samples"));
    }
    let x = inputs(bundle, train_rows, cfg.train_source)?;
    let y: Vec<usize> = train_rows.iter().map(|&i| bundle.labels()[i]).collect();
    let model = train_logreg(&x, &y, &cfg.train)?.model;
    let mut correct = 0usize;
    for &i in test_rows {
        let e = intervene(&bundle.input_row(i, cfg.train_source), bundle.gt_row(i), cfg.intervene)?;
        if model.composites[model.predict_row(&e)] == bundle.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_rows.len() as f64)
}

/// Query accuracy of one episode.
pub fn eval_episode(bundle: &DatasetBundle, spec: &EpisodeSpec, cfg: &ShotConfig) -> Result<f64> {
    let support: Vec<usize> = spec.support_rows().collect();
    let query: Vec<usize> = spec.query_rows().collect();
    train_and_score(bundle, &support, &query, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub tasks: usize,
    pub mean: f64,
    /// Sample standard deviation over tasks.
    pub std: f64,
    pub accuracies: Vec<f64>,
}

/// Mean and sample standard deviation; summation runs over sorted values so
/// the result does not depend on task order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// Evaluates every episode in parallel and aggregates.
pub fn eval_episodes(bundle: &DatasetBundle, specs: &[EpisodeSpec], cfg: &ShotConfig) -> Result<FewShotReport> {
    let first = specs.first().ok_or_else(|| Error::arg("no episodes to evaluate"))?;
    let accuracies = specs
        .par_iter()
        .map(|s| eval_episode(bundle, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&accuracies);
    Ok(FewShotReport {
        n_way: first.classes.len(),
        k_shot: first.support.first().map_or(0, Vec::len),
        n_query: first.query.iter().map(Vec::len).max().unwrap_or(0),
        tasks: specs.len(),
        mean,
        std,
        accuracies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullShotReport {
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Test samples dropped because their class has no training samples.
    pub excluded_test_samples: usize,
    pub accuracy: f64,
}

/// One classifier over the whole training split, scored on the test split.
/// Test samples of classes absent from training (held-out composites of a
/// zero-shot split) cannot be predicted and are left out.
pub fn eval_fullshot(bundle: &DatasetBundle, cfg: &ShotConfig) -> Result<FullShotReport> {
    let train = bundle.rows_in(Split::Train);
    let mut trained: Vec<usize> = train.iter().map(|&i| bundle.labels()[i]).collect();
    trained.sort_unstable();
    trained.dedup();
    let all_test = bundle.rows_in(Split::Test);
    let test: Vec<usize> = all_test
        .iter()
        .copied()
        .filter(|&i| trained.binary_search(&bundle.labels()[i]).is_ok())
        .collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("splits", "full-shot evaluation needs non-empty train and test splits"));
    }
    let accuracy = train_and_score(bundle, &train, &test, cfg)?;
    Ok(FullShotReport {
        classes: trained.len(),
        train_samples: train.len(),
        test_samples: test.len(),
        excluded_test_samples: all_test.len() - test.len(),
        accuracy,
    })
}
