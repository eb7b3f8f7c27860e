//! Synthetic concept universes with known compositions.
//!
//! Each composite is a random set of primitives. A sample of composite `q`
//! has ground truth equal to `q`'s indicator row; its predicted activations
//! start from that row and pass through three corruption channels: bit
//! flips, a fixed per-composite distractor primitive that co-fires, and
//! additive Gaussian blur. Blurred activations are min-max normalized with
//! training-split statistics; without blur they stay binary and unnormalized,
//! so the noiseless case reproduces the ground truth exactly.

use std::collections::HashSet;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{
    normalize_activations, ActivationMatrix, CompositeEmbeddingMatrix, ConceptVocabulary, DatasetBundle,
    GroundTruthConceptMatrix, GtLevel, LabeledSplit, PairAxes, Split,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Attribute × object structure: primitives are `n_attributes` attributes
/// followed by `n_objects` objects, and every composite is one of each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairShape {
    pub n_attributes: usize,
    pub n_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_primitives: usize,
    pub n_composites: usize,
    /// Inclusive range of primitives per composite.
    pub primitives_per_composite: (usize, usize),
    pub n_samples: usize,
    pub flip_noise: f64,
    pub blur_noise: f64,
    pub spurious_strength: f64,
    pub unseen_fraction: f64,
    pub seed: u64,
    /// When set, overrides `n_primitives` and `primitives_per_composite`;
    /// the vocabulary lists every pair and the closed candidate set is the
    /// `n_composites` sampled pairs.
    pub pairs: Option<PairShape>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_primitives: 60,
            n_composites: 40,
            primitives_per_composite: (2, 6),
            n_samples: 4000,
            flip_noise: 0.0,
            blur_noise: 0.0,
            spurious_strength: 0.0,
            unseen_fraction: 0.25,
            seed: 0,
            pairs: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::arg(format!("synth config: {msg}")));
        for (name, p) in [
            ("flip_noise", self.flip_noise),
            ("spurious_strength", self.spurious_strength),
            ("unseen_fraction", self.unseen_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("`{name}` must lie in [0, 1], got {p}"));
            }
        }
        if !(self.blur_noise >= 0.0 && self.blur_noise.is_finite()) {
            return bad(format!("`blur_noise` must be a nonnegative std, got {}", self.blur_noise));
        }
        if self.n_composites == 0 || self.n_samples == 0 {
            return bad("`n_composites` and `n_samples` must be positive".into());
        }
        match self.pairs {
            Some(PairShape { n_attributes, n_objects }) => {
                if n_attributes == 0 || n_objects == 0 {
                    return bad("pair axes must be non-empty".into());
                }
            }
            None => {
                let (lo, hi) = self.primitives_per_composite;
                if self.n_primitives == 0 || lo == 0 || lo > hi {
                    return bad("need n_primitives > 0 and 1 <= min <= max primitives per composite".into());
                }
                if hi > self.n_primitives {
                    return bad(format!(
                        "max primitives per composite ({hi}) exceeds n_primitives ({})",
                        self.n_primitives
                    ));
                }
            }
        }
        if self.unseen_count() >= self.n_composites {
            return bad("unseen_fraction leaves no seen composites".into());
        }
        Ok(())
    }

    pub fn unseen_count(&self) -> usize {
        (self.unseen_fraction * self.n_composites as f64).round() as usize
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

fn sample_subsets(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let (lo, hi) = cfg.primitives_per_composite;
    let available: u128 = (lo..=hi).map(|s| binomial(cfg.n_primitives, s)).fold(0, u128::saturating_add);
    if (cfg.n_composites as u128) > available {
        return Err(Error::arg(format!(
            "synth config: {} distinct composites requested but only {available} primitive subsets of size {lo}..={hi} exist",
            cfg.n_composites
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.n_composites);
    let cap = 1000 * cfg.n_composites + 100_000;
    for _ in 0..cap {
        if out.len() == cfg.n_composites {
            break;
        }
        let size = rng.random_range(lo..=hi);
        let mut set = index::sample(rng, cfg.n_primitives, size).into_vec();
        set.sort_unstable();
        if seen.insert(set.clone()) {
            out.push(set);
        }
    }
    if out.len() < cfg.n_composites {
        return Err(Error::arg("synth config: too close to the number of available subsets to sample"));
    }
    Ok(out)
}

/// Generates a validated bundle; identical configs give identical bundles.
pub fn generate(cfg: &SynthConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (vocab, classes) = match cfg.pairs {
        None => {
            let sets = sample_subsets(cfg, &mut rng)?;
            let vocab = ConceptVocabulary::new(
                (0..cfg.n_primitives).map(|j| format!("p{j}")).collect(),
                (0..cfg.n_composites).map(|q| format!("c{q}")).collect(),
                sets,
                None,
            )?;
            (vocab, (0..cfg.n_composites).collect::<Vec<_>>())
        }
        Some(PairShape { n_attributes, n_objects }) => {
            let total = n_attributes * n_objects;
            if cfg.n_composites > total {
                return Err(Error::arg(format!(
                    "synth config: {} composites requested from {total} attribute-object pairs",
                    cfg.n_composites
                )));
            }
            let mut prims: Vec<String> = (0..n_attributes).map(|a| format!("a{a}")).collect();
            prims.extend((0..n_objects).map(|o| format!("o{o}")));
            let axes = PairAxes {
                attributes: (0..n_attributes).collect(),
                objects: (n_attributes..n_attributes + n_objects).collect(),
            };
            let (mut names, mut sets) = (Vec::with_capacity(total), Vec::with_capacity(total));
            for a in 0..n_attributes {
                for o in 0..n_objects {
                    names.push(format!("{} {}", prims[a], prims[n_attributes + o]));
                    sets.push(vec![a, n_attributes + o]);
                }
            }
            let mut chosen = index::sample(&mut rng, total, cfg.n_composites).into_vec();
            chosen.sort_unstable();
            (ConceptVocabulary::new(prims, names, sets, Some(axes))?, chosen)
        }
    };
    let p = vocab.n_primitives();

    let distractors: Vec<Option<usize>> = (0..vocab.n_composites())
        .map(|q| {
            let off: Vec<usize> = (0..p).filter(|j| vocab.composition(q).binary_search(j).is_err()).collect();
            off.choose(&mut rng).copied()
        })
        .collect();

    let mut unseen: Vec<usize> = index::sample(&mut rng, classes.len(), cfg.unseen_count())
        .into_iter()
        .map(|i| classes[i])
        .collect();
    unseen.sort_unstable();
    let seen_set: Vec<usize> = classes.iter().copied().filter(|c| unseen.binary_search(c).is_err()).collect();

    let mut labels: Vec<usize> = (0..cfg.n_samples).map(|i| classes[i % classes.len()]).collect();
    labels.shuffle(&mut rng);

    let mut split_of = vec![Split::Test; cfg.n_samples];
    for &c in &classes {
        let mut rows: Vec<usize> = (0..cfg.n_samples).filter(|&i| labels[i] == c).collect();
        rows.shuffle(&mut rng);
        let n = rows.len();
        let (n_train, n_val) = if unseen.binary_search(&c).is_ok() {
            (0, n / 2)
        } else {
            (n * 3 / 5, n / 5)
        };
        for (r, &i) in rows.iter().enumerate() {
            split_of[i] = if r < n_train {
                Split::Train
            } else if r < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    let blur = (cfg.blur_noise > 0.0)
        .then(|| Normal::new(0.0, cfg.blur_noise).map_err(|e| Error::arg(format!("synth config: {e}"))))
        .transpose()?;
    let mut gt = Matrix::<u8>::zeros(cfg.n_samples, p);
    let mut pred = Matrix::<f32>::zeros(cfg.n_samples, p);
    for (i, &c) in labels.iter().enumerate() {
        let ind = vocab.indicator(c);
        gt.row_mut(i).copy_from_slice(&ind);
        let mut e: Vec<f64> = ind.iter().map(|&b| b as f64).collect();
        if cfg.flip_noise > 0.0 {
            for v in e.iter_mut() {
                if rng.random_bool(cfg.flip_noise) {
                    *v = 1.0 - *v;
                }
            }
        }
        if let Some(d) = distractors[c] {
            if cfg.spurious_strength > 0.0 && rng.random_bool(cfg.spurious_strength) {
                e[d] = 1.0;
            }
        }
        if let Some(normal) = &blur {
            for v in e.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        for (dst, v) in pred.row_mut(i).iter_mut().zip(&e) {
            *dst = *v as f32;
        }
    }

    let sample_ids: Vec<String> = (0..cfg.n_samples).map(|i| format!("s{i:05}")).collect();
    let mut activations = ActivationMatrix::new(pred, sample_ids);
    if blur.is_some() {
        let train: Vec<usize> = (0..cfg.n_samples).filter(|&i| split_of[i] == Split::Train).collect();
        activations = normalize_activations(&activations, &train)?;
    }

    let emb_rows: Vec<Vec<f32>> = (0..vocab.n_composites())
        .map(|q| vocab.indicator(q).iter().map(|&b| b as f32).collect())
        .collect();
    let embeddings = CompositeEmbeddingMatrix {
        data: Matrix::from_rows(&emb_rows, p)?,
        source: "one-hot-sum".into(),
    };

    DatasetBundle::new(
        vocab,
        activations,
        GroundTruthConceptMatrix {
            data: gt,
            level: GtLevel::PerSample,
        },
        LabeledSplit {
            labels,
            split_of,
            seen_set,
            candidate_set: classes,
        },
        Some(embeddings),
        None,
    )
}
