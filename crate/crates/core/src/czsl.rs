//! Generalized compositional zero-shot evaluation.
//!
//! A calibration bias is added to the scores of unseen composites. Sweeping
//! it trades seen accuracy for unseen accuracy; the area under the
//! (unseen, seen) accuracy curve, the best accuracies and the best harmonic
//! mean summarize the trade-off.
//!
//! The sweep is exact. For each sample the top-k hit indicator, as a function
//! of the bias, is a single threshold step: the label's rank only changes
//! when the bias crosses a difference between the label's score and the
//! score of a candidate of the opposite kind (seen vs unseen). Collecting
//! these thresholds over all samples partitions the bias axis into regimes
//! of constant accuracy, and every regime is evaluated once. Score ties
//! between candidates are broken by lower position in the candidate list.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ConceptVocabulary, DatasetBundle, InputSource, Split};
use crate::composition::CompositionModel;
use crate::error::{Error, Result};
use crate::intervention::{intervene, InterventionMode};

/// Harmonic mean of seen and unseen accuracy; 0 when both are 0.
pub fn harmonic_mean(acc_seen: f64, acc_unseen: f64) -> f64 {
    let s = acc_seen + acc_unseen;
    if s == 0.0 {
        0.0
    } else {
        2.0 * acc_seen * acc_unseen / s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    Closed,
    Open,
}

/// Candidate composites for evaluation. Closed world returns the supplied
/// list; open world returns every attribute×object pair of the vocabulary
/// (attribute-major), which must already be enumerated in it.
pub fn build_candidate_set(vocab: &ConceptVocabulary, world: World, closed_list: Option<&[usize]>) -> Result<Vec<usize>> {
    match world {
        World::Closed => {
            let list = closed_list.ok_or_else(|| Error::arg("closed-world evaluation needs a candidate list"))?;
            if let Some(&bad) = list.iter().find(|&&q| q >= vocab.n_composites()) {
                return Err(Error::IndexOutOfRange {
                    field: "closed_list".into(),
                    index: bad,
                    bound: vocab.n_composites(),
                });
            }
            Ok(list.to_vec())
        }
        World::Open => {
            let axes = vocab
                .pair_axes()
                .ok_or_else(|| Error::arg("open-world evaluation needs a pair-structured vocabulary"))?;
            let mut out = Vec::with_capacity(axes.attributes.len() * axes.objects.len());
            let lookup: std::collections::HashMap<&[usize], usize> = vocab
                .gt_composition()
                .iter()
                .enumerate()
                .map(|(q, s)| (s.as_slice(), q))
                .collect();
            for &a in &axes.attributes {
                for &o in &axes.objects {
                    let key = if a < o { [a, o] } else { [o, a] };
                    let q = lookup.get(key.as_slice()).ok_or_else(|| {
                        Error::invalid(
                            "composites",
                            format!(
                                "open world needs pair ({}, {}); expand the vocabulary first",
                                vocab.primitives()[a],
                                vocab.primitives()[o]
                            ),
                        )
                    })?;
                    out.push(*q);
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Representative bias inside the regime.
    pub bias: f64,
    pub acc_seen: f64,
    pub acc_unseen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKCurve {
    pub k: usize,
    pub points: Vec<SweepPoint>,
    pub auc: f64,
    pub best_seen: f64,
    pub best_unseen: f64,
    pub best_hm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub curves: Vec<TopKCurve>,
}

impl SweepResult {
    pub fn curve(&self, k: usize) -> Option<&TopKCurve> {
        self.curves.iter().find(|c| c.k == k)
    }

    pub fn auc(&self, k: usize) -> Option<f64> {
        self.curve(k).map(|c| c.auc)
    }

    /// Curve used for the headline best-seen/unseen/HM numbers (smallest k).
    pub fn primary(&self) -> &TopKCurve {
        &self.curves[0]
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.primary().points
    }

    pub fn best_seen(&self) -> f64 {
        self.primary().best_seen
    }

    pub fn best_unseen(&self) -> f64 {
        self.primary().best_unseen
    }

    pub fn best_hm(&self) -> f64 {
        self.primary().best_hm
    }
}

/// Hit indicator of one sample as a function of the bias regime.
#[derive(Debug, Clone, Copy)]
enum Hit {
    Never,
    Always,
    /// Seen label: hit while the bias is below the threshold.
    Below(f64),
    /// Unseen label: hit once the bias is above the threshold.
    Above(f64),
}

fn sample_hit(scores: &[f64], label_pos: usize, is_unseen: &[bool], k: usize) -> Hit {
    let sy = scores[label_pos];
    let label_unseen = is_unseen[label_pos];
    let mut same_beaters = 0usize;
    let mut diffs = Vec::new();
    for (c, &sc) in scores.iter().enumerate() {
        if c == label_pos {
            continue;
        }
        if is_unseen[c] == label_unseen {
            if sc > sy || (sc == sy && c < label_pos) {
                same_beaters += 1;
            }
        } else if label_unseen {
            diffs.push(sc - sy);
        } else {
            diffs.push(sy - sc);
        }
    }
    if same_beaters >= k {
        return Hit::Never;
    }
    let need = k - same_beaters;
    if need > diffs.len() {
        return Hit::Always;
    }
    diffs.sort_by(f64::total_cmp);
    if label_unseen {
        // beaten by every seen candidate whose difference exceeds the bias
        Hit::Above(diffs[diffs.len() - need])
    } else {
        // beaten by every unseen candidate whose difference is below the bias
        Hit::Below(diffs[need - 1])
    }
}

/// Exact calibration-bias sweep.
///
/// `scores[i]` holds sample `i`'s scores over `candidates` (same order);
/// `labels[i]` must be one of the candidates. Candidates outside `seen` are
/// unseen and receive the bias.
pub fn sweep_calibration(
    scores: &[Vec<f64>],
    labels: &[usize],
    candidates: &[usize],
    seen: &[usize],
    topk: &[usize],
) -> Result<SweepResult> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            field: "scores".into(),
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if topk.is_empty() || topk.contains(&0) {
        return Err(Error::arg("top-k values must be positive"));
    }
    let seen_set: HashSet<usize> = seen.iter().copied().collect();
    let is_unseen: Vec<bool> = candidates.iter().map(|c| !seen_set.contains(c)).collect();
    let mut label_pos = Vec::with_capacity(labels.len());
    for (i, (&l, s)) in labels.iter().zip(scores).enumerate() {
        if s.len() != candidates.len() {
            return Err(Error::DimensionMismatch {
                field: format!("scores[{i}]"),
                expected: candidates.len(),
                found: s.len(),
            });
        }
        if let Some((c, _)) = s.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "scores".into(),
                row: i,
                col: c,
            });
        }
        let pos = candidates
            .iter()
            .position(|&c| c == l)
            .ok_or_else(|| Error::invalid("labels", format!("label {l} of sample {i} is not a candidate")))?;
        label_pos.push(pos);
    }
    let n_unseen_samples = label_pos.iter().filter(|&&p| is_unseen[p]).count();
    let n_seen_samples = labels.len() - n_unseen_samples;
    if n_seen_samples == 0 || n_unseen_samples == 0 {
        return Err(Error::invalid(
            "labels",
            "evaluation split needs both seen-labeled and unseen-labeled samples",
        ));
    }

    let hits: Vec<Vec<Hit>> = topk
        .iter()
        .map(|&k| {
            scores
                .iter()
                .zip(&label_pos)
                .map(|(s, &p)| sample_hit(s, p, &is_unseen, k))
                .collect()
        })
        .collect();

    let mut thresholds: Vec<f64> = hits
        .iter()
        .flatten()
        .filter_map(|h| match h {
            Hit::Below(t) | Hit::Above(t) => Some(*t),
            _ => None,
        })
        .collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let regimes = thresholds.len() + 1;
    let biases: Vec<f64> = (0..regimes)
        .map(|r| match (r, thresholds.len()) {
            (_, 0) => 0.0,
            (0, _) => thresholds[0] - 1.0,
            (r, n) if r == n => thresholds[n - 1] + 1.0,
            (r, _) => thresholds[r - 1] + 0.5 * (thresholds[r] - thresholds[r - 1]),
        })
        .collect();
    let regime_of = |t: f64| thresholds.partition_point(|&x| x < t);

    let curves = topk
        .iter()
        .zip(&hits)
        .map(|(&k, hits)| {
            // difference arrays over regimes
            let mut seen_delta = vec![0i64; regimes + 1];
            let mut unseen_delta = vec![0i64; regimes + 1];
            for (h, &p) in hits.iter().zip(&label_pos) {
                let delta = if is_unseen[p] { &mut unseen_delta } else { &mut seen_delta };
                let (from, to) = match *h {
                    Hit::Never => continue,
                    Hit::Always => (0, regimes),
                    // threshold j (0-based) separates regime j from j+1
                    Hit::Below(t) => (0, regime_of(t) + 1),
                    Hit::Above(t) => (regime_of(t) + 1, regimes),
                };
                delta[from] += 1;
                delta[to] -= 1;
            }
            let (mut sh, mut uh) = (0i64, 0i64);
            let points: Vec<SweepPoint> = (0..regimes)
                .map(|r| {
                    sh += seen_delta[r];
                    uh += unseen_delta[r];
                    SweepPoint {
                        bias: biases[r],
                        acc_seen: sh as f64 / n_seen_samples as f64,
                        acc_unseen: uh as f64 / n_unseen_samples as f64,
                    }
                })
                .collect();
            summarize(k, points)
        })
        .collect();
    Ok(SweepResult { curves })
}

/// Trapezoidal area over points ordered by increasing unseen accuracy, plus
/// the curve maxima.
///
/// The most seen-favoring regime is extended flat to zero unseen accuracy.
/// This only matters when fewer than `k` seen candidates exist (so unseen
/// labels still hit at the lowest bias); it keeps the area monotone in `k`
/// and gives a perfect scorer an area of 1 at every `k`.
pub(crate) fn summarize(k: usize, points: Vec<SweepPoint>) -> TopKCurve {
    let lead = points.first().map_or(0.0, |p| p.acc_unseen * p.acc_seen);
    let auc = lead
        + points
            .windows(2)
            .map(|w| (w[1].acc_unseen - w[0].acc_unseen) * 0.5 * (w[0].acc_seen + w[1].acc_seen))
            .sum::<f64>();
    let best_seen = points.iter().map(|p| p.acc_seen).fold(0.0, f64::max);
    let best_unseen = points.iter().map(|p| p.acc_unseen).fold(0.0, f64::max);
    let best_hm = points
        .iter()
        .map(|p| harmonic_mean(p.acc_seen, p.acc_unseen))
        .fold(0.0, f64::max);
    TopKCurve {
        k,
        points,
        auc,
        best_seen,
        best_unseen,
        best_hm,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzslEvalConfig {
    pub world: World,
    pub split: Split,
    /// Base input fed to the model before intervention.
    pub source: InputSource,
    pub intervene: InterventionMode,
    pub topk: Vec<usize>,
}

impl Default for CzslEvalConfig {
    fn default() -> Self {
        Self {
            world: World::Closed,
            split: Split::Test,
            source: InputSource::Predicted,
            intervene: InterventionMode::None,
            topk: vec![1, 2, 3],
        }
    }
}

/// Scores every sample of the evaluation split over the candidate set and
/// runs the calibration sweep.
pub fn evaluate_czsl(bundle: &DatasetBundle, model: &CompositionModel, cfg: &CzslEvalConfig) -> Result<SweepResult> {
    let candidates = match cfg.world {
        World::Closed => build_candidate_set(bundle.vocab(), World::Closed, Some(&bundle.split().candidate_set))?,
        World::Open => build_candidate_set(bundle.vocab(), World::Open, None)?,
    };
    let rows = bundle.rows_in(cfg.split);
    let scorer = model.prepare(&candidates, bundle.embeddings().filter(|_| matches!(model, CompositionModel::DualProjection(_))))?;
    let scores = rows
        .par_iter()
        .map(|&i| {
            let x = intervene(&bundle.input_row(i, cfg.source), bundle.gt_row(i), cfg.intervene)?;
            scorer.score(&x)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = rows.iter().map(|&i| bundle.labels()[i]).collect();
    sweep_calibration(&scores, &labels, &candidates, &bundle.split().seen_set, &cfg.topk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Literal oracle: add the bias to unseen scores, rank with index
    /// tie-break, at a bias inside every interval between pairwise
    /// seen/unseen score differences.
    pub(crate) fn brute_force(
        scores: &[Vec<f64>],
        labels: &[usize],
        candidates: &[usize],
        seen: &[usize],
        k: usize,
    ) -> TopKCurve {
        let unseen: Vec<bool> = candidates.iter().map(|c| !seen.contains(c)).collect();
        let mut cuts = Vec::new();
        for s in scores {
            for a in 0..s.len() {
                for b in 0..s.len() {
                    if !unseen[a] && unseen[b] {
                        cuts.push(s[a] - s[b]);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut probes = vec![cuts.first().copied().unwrap_or(0.0) - 1.0];
        for w in cuts.windows(2) {
            probes.push(0.5 * (w[0] + w[1]));
        }
        probes.push(cuts.last().copied().unwrap_or(0.0) + 1.0);
        let points = probes
            .iter()
            .map(|&b| {
                let (mut sh, mut sn, mut uh, mut un) = (0, 0, 0, 0);
                for (s, &l) in scores.iter().zip(labels) {
                    let biased: Vec<f64> = s
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| if unseen[c] { v + b } else { v })
                        .collect();
                    let mut order: Vec<usize> = (0..s.len()).collect();
                    order.sort_by(|&x, &y| biased[y].total_cmp(&biased[x]).then(x.cmp(&y)));
                    let pos = candidates.iter().position(|&c| c == l).unwrap();
                    let hit = order[..k.min(order.len())].contains(&pos);
                    if unseen[pos] {
                        un += 1;
                        uh += hit as usize;
                    } else {
                        sn += 1;
                        sh += hit as usize;
                    }
                }
                SweepPoint {
                    bias: b,
                    acc_seen: sh as f64 / sn as f64,
                    acc_unseen: uh as f64 / un as f64,
                }
            })
            .collect::<Vec<_>>();
        // curve anchored at zero unseen accuracy, integrated segment by segment
        let mut path = vec![(0.0, points[0].acc_seen)];
        path.extend(points.iter().map(|p| (p.acc_unseen, p.acc_seen)));
        let auc = (1..path.len())
            .map(|i| (path[i].0 - path[i - 1].0) * (path[i].1 + path[i - 1].1) / 2.0)
            .sum();
        let best_hm = points
            .iter()
            .map(|p| {
                let (s, u) = (p.acc_seen, p.acc_unseen);
                if s + u > 0.0 { 2.0 * s * u / (s + u) } else { 0.0 }
            })
            .fold(0.0, f64::max);
        TopKCurve {
            k,
            auc,
            best_seen: points.iter().map(|p| p.acc_seen).fold(0.0, f64::max),
            best_unseen: points.iter().map(|p| p.acc_unseen).fold(0.0, f64::max),
            best_hm,
            points,
        }
    }

    #[test]
    fn harmonic_mean_values() {
        assert_eq!(harmonic_mean(0.5, 0.5), 0.5);
        assert_eq!(harmonic_mean(0.0, 0.9), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.6, 0.3) - 0.4).abs() < 1e-12);
        assert_eq!(harmonic_mean(0.6, 0.3), harmonic_mean(0.3, 0.6));
    }

    #[test]
    fn perfect_scorer() {
        // candidates 0,1 seen; 2,3 unseen; label strictly highest
        let scores = vec![
            vec![5.0, 1.0, 0.0, 0.0],
            vec![0.0, 5.0, 1.0, 0.0],
            vec![0.0, 0.0, 5.0, 1.0],
            vec![1.0, 0.0, 0.0, 5.0],
        ];
        let r = sweep_calibration(&scores, &[0, 1, 2, 3], &[0, 1, 2, 3], &[0, 1], &[1, 2, 3]).unwrap();
        for c in &r.curves {
            assert_eq!((c.best_seen, c.best_unseen, c.best_hm), (1.0, 1.0, 1.0));
            assert!((c.auc - 1.0).abs() < 1e-12, "k={} auc={}", c.k, c.auc);
        }
    }

    #[test]
    fn constant_scorer_matches_enumeration() {
        let scores = vec![vec![0.0; 4]; 6];
        let labels = [0, 1, 2, 3, 0, 2];
        let r = sweep_calibration(&scores, &labels, &[0, 1, 2, 3], &[0, 1], &[1, 2, 3]).unwrap();
        for k in 1..=3 {
            let bf = brute_force(&scores, &labels, &[0, 1, 2, 3], &[0, 1], k);
            let c = r.curve(k).unwrap();
            assert!((c.auc - bf.auc).abs() < 1e-12);
            assert_eq!(c.best_seen, bf.best_seen);
            assert_eq!(c.best_unseen, bf.best_unseen);
        }
    }

    #[test]
    fn ten_sample_fixture() {
        let scores = vec![
            vec![0.9, 0.1, 0.3, 0.2],
            vec![0.2, 0.8, 0.7, 0.1],
            vec![0.4, 0.3, 0.6, 0.5],
            vec![0.1, 0.2, 0.3, 0.9],
            vec![0.5, 0.6, 0.4, 0.45],
            vec![0.3, 0.3, 0.35, 0.2],
            vec![0.7, 0.2, 0.75, 0.1],
            vec![0.2, 0.9, 0.1, 0.95],
            vec![0.6, 0.1, 0.2, 0.65],
            vec![0.05, 0.15, 0.25, 0.1],
        ];
        let labels = [0, 1, 2, 3, 0, 1, 2, 3, 0, 2];
        let c = [0, 1, 2, 3];
        let r = sweep_calibration(&scores, &labels, &c, &[0, 1], &[1]).unwrap();
        let bf = brute_force(&scores, &labels, &c, &[0, 1], 1);
        assert!((r.auc(1).unwrap() - bf.auc).abs() < 1e-9);
        assert!((r.best_hm() - bf.best_hm).abs() < 1e-9);
    }

    #[test]
    fn needs_both_kinds_of_samples() {
        let scores = vec![vec![1.0, 0.0]; 2];
        assert!(sweep_calibration(&scores, &[0, 0], &[0, 1], &[0], &[1]).is_err());
    }

    #[test]
    fn candidate_sets() {
        let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let build = |na: usize, no: usize| {
            let mut prims = names("a", na);
            prims.extend(names("o", no));
            ConceptVocabulary::new(
                prims,
                vec!["a0 o0".into()],
                vec![vec![0, na]],
                Some(crate::bundle::PairAxes {
                    attributes: (0..na).collect(),
                    objects: (na..na + no).collect(),
                }),
            )
            .unwrap()
            .expand_open_world()
            .unwrap()
        };
        let small = build(2, 3);
        assert_eq!(build_candidate_set(&small, World::Open, None).unwrap().len(), 6);
        let big = build(115, 245);
        assert_eq!(build_candidate_set(&big, World::Open, None).unwrap().len(), 28_175);
        let closed: Vec<usize> = (0..1962).collect();
        assert_eq!(build_candidate_set(&big, World::Closed, Some(&closed)).unwrap().len(), 1962);
        assert!(build_candidate_set(&small, World::Closed, Some(&[6])).is_err());
        assert!(build_candidate_set(&small, World::Closed, None).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, usize, usize)> {
        (2usize..=10, 1usize..=20).prop_flat_map(|(n_cand, n)| {
            (1..n_cand).prop_flat_map(move |n_seen| {
                (
                    prop::collection::vec(prop::collection::vec((-4i32..=4).prop_map(f64::from), n_cand), n),
                    prop::collection::vec(0..n_cand, n),
                    Just(n_seen),
                    Just(n_cand),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((scores, mut labels, n_seen, n_cand) in instance()) {
            // force at least one seen and one unseen label
            labels.push(0);
            labels.push(n_cand - 1);
            let mut scores = scores;
            scores.push(scores[0].clone());
            scores.push(scores[0].clone());
            let cands: Vec<usize> = (0..n_cand).collect();
            let seen: Vec<usize> = (0..n_seen).collect();
            let r = sweep_calibration(&scores, &labels, &cands, &seen, &[1, 2, 3]).unwrap();
            for k in 1..=3 {
                let bf = brute_force(&scores, &labels, &cands, &seen, k);
                let c = r.curve(k).unwrap();
                prop_assert!((c.auc - bf.auc).abs() < 1e-9);
                prop_assert!((c.best_seen - bf.best_seen).abs() < 1e-9);
                prop_assert!((c.best_unseen - bf.best_unseen).abs() < 1e-9);
                prop_assert!((c.best_hm - bf.best_hm).abs() < 1e-9);
                prop_assert!(c.auc <= c.best_seen + 1e-12);
                for w in c.points.windows(2) {
                    prop_assert!(w[1].acc_unseen >= w[0].acc_unseen);
                    prop_assert!(w[1].acc_seen <= w[0].acc_seen);
                }
            }
            prop_assert!(r.auc(1).unwrap() <= r.auc(2).unwrap() + 1e-12);
            prop_assert!(r.auc(2).unwrap() <= r.auc(3).unwrap() + 1e-12);

            // shift and positive power-of-two scale leave everything unchanged
            let shifted: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|v| v + 3.0).collect()).collect();
            let scaled: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|v| v * 4.0).collect()).collect();
            for other in [shifted, scaled] {
                let r2 = sweep_calibration(&other, &labels, &cands, &seen, &[1, 2, 3]).unwrap();
                for (a, b) in r.curves.iter().zip(&r2.curves) {
                    prop_assert_eq!(a.auc, b.auc);
                    prop_assert_eq!(a.best_hm, b.best_hm);
                    prop_assert_eq!(a.points.len(), b.points.len());
                }
            }
        }
    }
}
