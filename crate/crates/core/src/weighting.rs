//! Soft class centroids and the source-relevance weighting schemes.
//!
//! Similarity of a source to the target is `S = Σ_c cos(r_T^c, r_n^c) + 1`.
//! MDMGB+ turns similarities into weights with a temperature softmax; the
//! MDMGB baseline normalizes them linearly; group normalization rescales the
//! global weights within each half of a partition.

use serde::{Deserialize, Serialize};

use crate::discrepancy::GroupPartition;
use crate::domainsim::SampleMatrix;
use crate::error::{Error, Result};
use crate::nn::{check_compatible, Classifier, FeatureExtractor};

/// Classes whose soft count falls below this in either domain are left out
/// of the similarity sum.
pub const MIN_CLASS_MASS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub domain_name: String,
    pub centroids: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
}

impl CentroidSet {
    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.centroids.first().map_or(0, |c| c.len())
    }
}

/// `r^c = Σ_x δ_c(x)·G(x) / Σ_x δ_c(x)` with `δ_c(x) = F(G(x))_c`, over
/// every sample; labels play no part. Classes with zero mass get a zero
/// centroid.
pub fn compute_centroids(
    g: &FeatureExtractor,
    f: &Classifier,
    domain_name: &str,
    samples: &SampleMatrix,
) -> Result<CentroidSet> {
    check_compatible(g, f)?;
    if samples.is_empty() {
        return Err(Error::Precondition(format!(
            "centroids of empty domain {domain_name}"
        )));
    }
    if samples.dim() != g.input_dim() {
        return Err(Error::mismatch("samples", samples.dim(), "extractor input", g.input_dim()));
    }
    let (c, d) = (f.num_classes(), f.input_dim());
    let mut sums = vec![vec![0.0; d]; c];
    let mut mass = vec![0.0; c];
    for x in samples.rows() {
        let z = g.forward(x);
        let delta = f.forward(&z);
        for (k, &p) in delta.iter().enumerate() {
            mass[k] += p;
            for (s, zi) in sums[k].iter_mut().zip(&z) {
                *s += p * zi;
            }
        }
    }
    let centroids = sums
        .into_iter()
        .zip(&mass)
        .map(|(s, &m)| {
            if m > 0.0 {
                s.into_iter().map(|v| v / m).collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();
    let set = CentroidSet {
        domain_name: domain_name.to_string(),
        centroids,
        mass,
    };
    if set.centroids.iter().flatten().chain(&set.mass).any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite centroid for domain {domain_name}")));
    }
    Ok(set)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `Σ_c cos(r_T^c, r_n^c) + 1`, skipping classes with mass below
/// [`MIN_CLASS_MASS`] in either domain. A zero-norm centroid contributes 0.
pub fn similarity_score(target: &CentroidSet, source: &CentroidSet) -> Result<f64> {
    if target.num_classes() != source.num_classes() {
        return Err(Error::mismatch(
            format!("{} classes", target.domain_name),
            target.num_classes(),
            format!("{} classes", source.domain_name),
            source.num_classes(),
        ));
    }
    if target.feature_dim() != source.feature_dim() {
        return Err(Error::mismatch(
            format!("{} centroid", target.domain_name),
            target.feature_dim(),
            format!("{} centroid", source.domain_name),
            source.feature_dim(),
        ));
    }
    let sum: f64 = (0..target.num_classes())
        .filter(|&c| target.mass[c] >= MIN_CLASS_MASS && source.mass[c] >= MIN_CLASS_MASS)
        .map(|c| cosine(&target.centroids[c], &source.centroids[c]))
        .sum();
    Ok(sum + 1.0)
}

/// `w_n = exp(τ·S_n) / Σ_j exp(τ·S_j)`, evaluated after subtracting the
/// maximum.
pub fn mdmgb_plus(similarities: &[f64], tau: f64) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::Precondition("weighting needs at least one source".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive and finite, got {tau}")));
    }
    if let Some(s) = similarities.iter().find(|s| !s.is_finite()) {
        return Err(Error::numeric(format!("non-finite similarity {s}")));
    }
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| (tau * (s - max)).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Linear normalization of similarities clamped at zero; falls back to
/// uniform weights when every clamped similarity is zero.
pub fn mdmgb_baseline(similarities: &[f64]) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::Precondition("weighting needs at least one source".into()));
    }
    if let Some(s) = similarities.iter().find(|s| !s.is_finite()) {
        return Err(Error::numeric(format!("non-finite similarity {s}")));
    }
    let clamped: Vec<f64> = similarities.iter().map(|s| s.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        log::warn!("all source similarities are zero; MDMGB falls back to uniform weights");
        return Ok(uniform_weights(similarities.len()));
    }
    Ok(clamped.into_iter().map(|s| s / total).collect())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `w̃_n = w_n / Σ_{i ∈ group(n)} w_i`. A group with zero total weight (only
/// possible under the clamped baseline) is normalized uniformly.
pub fn group_normalize(global: &[f64], partition: &GroupPartition) -> Result<Vec<f64>> {
    partition.validate(global.len())?;
    let mut out = vec![0.0; global.len()];
    for group in [partition.g1(), partition.g2()] {
        let total: f64 = group.iter().map(|&i| global[i]).sum();
        for &i in group {
            out[i] = if total > 0.0 {
                global[i] / total
            } else {
                1.0 / group.len() as f64
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingScheme {
    MdmgbPlus,
    Mdmgb,
    Uniform,
}

impl WeightingScheme {
    pub fn weights(self, similarities: &[f64], tau: f64) -> Result<Vec<f64>> {
        match self {
            WeightingScheme::MdmgbPlus => mdmgb_plus(similarities, tau),
            WeightingScheme::Mdmgb => mdmgb_baseline(similarities),
            WeightingScheme::Uniform => {
                if similarities.is_empty() {
                    return Err(Error::Precondition("weighting needs at least one source".into()));
                }
                Ok(uniform_weights(similarities.len()))
            }
        }
    }
}

/// One round's weighting state.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainWeights {
    pub global: Vec<f64>,
    pub group_normalized: Vec<f64>,
    pub similarity: Vec<f64>,
    pub tau: f64,
    pub partition: GroupPartition,
}

impl DomainWeights {
    pub fn new(
        scheme: WeightingScheme,
        similarity: Vec<f64>,
        tau: f64,
        partition: GroupPartition,
    ) -> Result<Self> {
        let global = scheme.weights(&similarity, tau)?;
        let group_normalized = group_normalize(&global, &partition)?;
        Ok(Self {
            global,
            group_normalized,
            similarity,
            tau,
            partition,
        })
    }

    /// `w_Gi = Σ_{n∈Gi} w_n`.
    pub fn group_totals(&self) -> (f64, f64) {
        let sum = |g: &[usize]| g.iter().map(|&i| self.global[i]).sum();
        (sum(self.partition.g1()), sum(self.partition.g2()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::random_partition;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(centroids: Vec<Vec<f64>>) -> CentroidSet {
        let c = centroids.len();
        CentroidSet {
            domain_name: "t".into(),
            centroids,
            mass: vec![1.0; c],
        }
    }

    #[test]
    fn similarity_examples() {
        let a = set(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0]]);
        assert!((similarity_score(&a, &a).unwrap() - 4.0).abs() < 1e-12);
        let b = set(vec![vec![0.0, 1.0], vec![5.0, 0.0], vec![-1.0, 1.0]]);
        assert!((similarity_score(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let p = set(vec![vec![1.0, 1.0], vec![1.0, 0.0]]);
        let q = set(vec![vec![2.0, 2.0], vec![-1.0, 0.0]]);
        assert!((similarity_score(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn low_mass_classes_are_skipped() {
        let a = set(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut b = set(vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        b.mass[1] = 1e-9;
        assert!((similarity_score(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let w = mdmgb_plus(&[2.0, 1.0], 1.0).unwrap();
        assert!((w[0] - 0.731_058_578_630_004_9).abs() < 1e-5);
        assert!((w[1] - 0.268_941_421_369_995_1).abs() < 1e-5);
        let sharp = mdmgb_plus(&[2.0, 1.0], 100.0).unwrap();
        assert!(sharp[0] > 1.0 - 1e-10);
        assert_eq!(mdmgb_plus(&[0.3; 4], 2.0).unwrap(), vec![0.25; 4]);
        assert!(mdmgb_plus(&[1e5, -1e5], 50.0).unwrap().iter().all(|w| w.is_finite()));
        assert!(mdmgb_plus(&[1.0], 0.0).is_err());
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(mdmgb_baseline(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(mdmgb_baseline(&[3.0, 1.0]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(mdmgb_baseline(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(mdmgb_baseline(&[-1.0, 2.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn group_normalize_examples() {
        let p = GroupPartition::from_groups(4, vec![0, 3], vec![1, 2], 0).unwrap();
        let w = group_normalize(&[0.1, 0.2, 0.3, 0.4], &p).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[3] - 0.8).abs() < 1e-12);
        assert!((w[1] - 0.4).abs() < 1e-12 && (w[2] - 0.6).abs() < 1e-12);

        let p = GroupPartition::from_groups(5, vec![1, 4], vec![0, 2, 3], 0).unwrap();
        let w = group_normalize(&uniform_weights(5), &p).unwrap();
        for i in 0..5 {
            let want = if [1, 4].contains(&i) { 0.5 } else { 1.0 / 3.0 };
            assert!((w[i] - want).abs() < 1e-12);
        }

        let p = GroupPartition::from_groups(3, vec![2], vec![0, 1], 0).unwrap();
        assert_eq!(group_normalize(&[0.2, 0.3, 0.5], &p).unwrap()[2], 1.0);
    }

    fn reference_centroids(g: &FeatureExtractor, f: &Classifier, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let c = f.num_classes();
        let mut out = Vec::new();
        for k in 0..c {
            let mut num = vec![0.0; g.output_dim()];
            let mut den = 0.0;
            for x in rows {
                let z = g.forward(x);
                let logits = f.logits(&z);
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let p = e[k] / e.iter().sum::<f64>();
                den += p;
                for (a, zi) in num.iter_mut().zip(&z) {
                    *a += p * zi;
                }
            }
            out.push(num.into_iter().map(|v| v / den).collect());
        }
        out
    }

    #[test]
    fn centroids_match_reference_and_ignore_order() {
        let mut rng = rng_from(11, &[]);
        let g = FeatureExtractor::new(5, &[7], 4, &mut rng).unwrap();
        let f = Classifier::new(4, 3, &mut rng).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let set = compute_centroids(&g, &f, "d", &SampleMatrix::from_rows(&rows).unwrap()).unwrap();
        let want = reference_centroids(&g, &f, &rows);
        for (a, b) in set.centroids.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        rows.reverse();
        rows.swap(3, 11);
        let perm = compute_centroids(&g, &f, "d", &SampleMatrix::from_rows(&rows).unwrap()).unwrap();
        for (a, b) in set.centroids.iter().flatten().zip(perm.centroids.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_sample_centroids_are_the_feature() {
        let mut rng = rng_from(12, &[]);
        let g = FeatureExtractor::new(3, &[], 3, &mut rng).unwrap();
        let f = Classifier::new(3, 4, &mut rng).unwrap();
        let x = vec![vec![0.5, 1.0, 2.0]];
        let z = g.forward(&x[0]);
        let set = compute_centroids(&g, &f, "d", &SampleMatrix::from_rows(&x).unwrap()).unwrap();
        for c in &set.centroids {
            for (a, b) in c.iter().zip(&z) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance_and_monotonicity(
            s in prop::collection::vec(-5.0f64..5.0, 1..12),
            shift in -100.0f64..100.0,
            tau in 0.01f64..20.0,
        ) {
            let w = mdmgb_plus(&s, tau).unwrap();
            let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
            let w2 = mdmgb_plus(&shifted, tau).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if s[i] > s[j] {
                        prop_assert!(w[i] > w[j]);
                    }
                }
            }
        }

        #[test]
        fn group_weights_are_restricted_softmax(
            s in prop::collection::vec(-3.0f64..3.0, 2..16),
            tau in 0.05f64..10.0,
            seed in any::<u64>(),
        ) {
            let p = random_partition(s.len(), seed).unwrap();
            let dw = DomainWeights::new(WeightingScheme::MdmgbPlus, s.clone(), tau, p.clone()).unwrap();
            for group in [p.g1(), p.g2()] {
                let sub: Vec<f64> = group.iter().map(|&i| s[i]).collect();
                let local = mdmgb_plus(&sub, tau).unwrap();
                for (k, &i) in group.iter().enumerate() {
                    prop_assert!((dw.group_normalized[i] - local[k]).abs() < 1e-9);
                }
                let total: f64 = group.iter().map(|&i| dw.group_normalized[i]).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
