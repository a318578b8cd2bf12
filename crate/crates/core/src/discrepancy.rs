//! Classifier-disagreement objectives on target data and the extractor
//! update that minimizes them.
//!
//! Every objective is a sum of terms `E_x ||P_A(G(x)) − P_B(G(x))||_1`
//! where `P_A`, `P_B` are convex mixtures of member classifiers' probability
//! outputs. IGD uses the two weighted halves of a random partition, IDD two
//! single classifiers, and the full objective every unordered pair. Only the
//! extractor receives gradients; sign(0) is taken as 0.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::domainsim::SampleMatrix;
use crate::error::{Error, Result};
use crate::nn::{
    central_differences, max_relative_error, minibatches, sgd_step, Classifier, FeatureExtractor, OptimizerState,
    ParamVec,
};
use crate::rng::rng_from;

const PARTITION_STREAM: u64 = 0x9A27;

/// Two disjoint groups of source indices covering `0..n`, with
/// `|g1| = ⌊n/2⌋` for random partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    g1: Vec<usize>,
    g2: Vec<usize>,
    seed: u64,
}

impl GroupPartition {
    pub fn from_groups(n: usize, mut g1: Vec<usize>, mut g2: Vec<usize>, seed: u64) -> Result<Self> {
        g1.sort_unstable();
        g2.sort_unstable();
        let p = Self { g1, g2, seed };
        p.validate(n)?;
        Ok(p)
    }

    /// Checks that both groups are nonempty, disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.g1.is_empty() || self.g2.is_empty() {
            return Err(Error::Partition(format!(
                "empty group in partition {:?} / {:?}",
                self.g1, self.g2
            )));
        }
        let mut seen = vec![false; n];
        for &i in self.g1.iter().chain(&self.g2) {
            if i >= n {
                return Err(Error::Partition(format!("index {i} outside 0..{n}")));
            }
            if seen[i] {
                return Err(Error::Partition(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("index {missing} belongs to no group")));
        }
        Ok(())
    }

    pub fn g1(&self) -> &[usize] {
        &self.g1
    }

    pub fn g2(&self) -> &[usize] {
        &self.g2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.g1.len() + self.g2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bit `n` set iff source `n` is in `g1`.
    pub fn g1_bitmask(&self) -> u128 {
        self.g1.iter().fold(0u128, |m, &i| m | (1u128 << i))
    }
}

/// Uniformly random split with `|g1| = ⌊n/2⌋`, `|g2| = ⌈n/2⌉`.
pub fn random_partition(n: usize, seed: u64) -> Result<GroupPartition> {
    if n < 2 {
        return Err(Error::Config(format!("partitioning needs at least 2 sources, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[PARTITION_STREAM]));
    let (a, b) = order.split_at(n / 2);
    GroupPartition::from_groups(n, a.to_vec(), b.to_vec(), seed)
}

/// Weighted mixture of member classifiers in probability space.
#[derive(Debug, Clone)]
pub struct GroupClassifier<'a> {
    members: Vec<(usize, &'a Classifier)>,
    weights: Vec<f64>,
}

impl<'a> GroupClassifier<'a> {
    pub fn new(members: Vec<(usize, &'a Classifier)>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Partition("group classifier without members".into()));
        }
        if members.len() != weights.len() {
            return Err(Error::mismatch("group members", members.len(), "weights", weights.len()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Precondition(format!(
                "group weights must be nonnegative and sum to 1, got {weights:?}"
            )));
        }
        let (d, c) = (members[0].1.input_dim(), members[0].1.num_classes());
        if let Some((i, f)) = members.iter().find(|(_, f)| f.input_dim() != d || f.num_classes() != c) {
            return Err(Error::mismatch(
                format!("member {i} classifier"),
                f.input_dim() * f.num_classes(),
                "group classifier",
                d * c,
            ));
        }
        Ok(Self { members, weights })
    }

    /// Members `group` of `classifiers`, weighted by `w_tilde[n]`.
    pub fn from_group(classifiers: &'a [Classifier], group: &[usize], w_tilde: &[f64]) -> Result<Self> {
        Self::new(
            group.iter().map(|&n| (n, &classifiers[n])).collect(),
            group.iter().map(|&n| w_tilde[n]).collect(),
        )
    }

    pub fn single(index: usize, f: &'a Classifier) -> Self {
        Self {
            members: vec![(index, f)],
            weights: vec![1.0],
        }
    }

    pub fn members(&self) -> &[(usize, &'a Classifier)] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].1.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].1.num_classes()
    }

    /// `Σ_n w̃_n · F_n(z)`.
    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::mismatch("features", z.len(), "group classifier input", self.input_dim()));
        }
        let mut out = vec![0.0; self.num_classes()];
        for ((_, f), w) in self.members.iter().zip(&self.weights) {
            for (o, p) in out.iter_mut().zip(f.forward(z)) {
                *o += w * p;
            }
        }
        Ok(out)
    }

    /// The same mixture expressed as a single parameter vector,
    /// `Σ_n w̃_n θ_n`.
    pub fn averaged_params(&self) -> Result<ParamVec> {
        ParamVec::weighted_sum(self.members.iter().map(|(_, f)| f.params()).zip(self.weights.iter().copied()))
    }
}

pub fn group_predict(gc: &GroupClassifier<'_>, z: &[f64]) -> Result<Vec<f64>> {
    gc.predict(z)
}

/// Mixture over a shared classifier table.
type Mix = Vec<(usize, f64)>;

/// Disagreement objective over a table of classifiers.
struct Objective<'a> {
    classifiers: Vec<&'a Classifier>,
    terms: Vec<(Mix, Mix)>,
}

impl<'a> Objective<'a> {
    fn from_groups(gc1: &GroupClassifier<'a>, gc2: &GroupClassifier<'a>) -> Self {
        let mut classifiers = Vec::new();
        let mut mix = |gc: &GroupClassifier<'a>| -> Mix {
            gc.members
                .iter()
                .zip(&gc.weights)
                .map(|((_, f), &w)| {
                    classifiers.push(*f);
                    (classifiers.len() - 1, w)
                })
                .collect()
        };
        let a = mix(gc1);
        let b = mix(gc2);
        Self {
            classifiers,
            terms: vec![(a, b)],
        }
    }

    fn pairwise(classifiers: Vec<&'a Classifier>) -> Self {
        let n = classifiers.len();
        let terms = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (vec![(i, 1.0)], vec![(j, 1.0)])))
            .collect();
        Self { classifiers, terms }
    }

    fn check(&self, g: &FeatureExtractor, batch: &[&[f64]]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Precondition("discrepancy on an empty batch".into()));
        }
        let (d, c) = (self.classifiers[0].input_dim(), self.classifiers[0].num_classes());
        if g.output_dim() != d {
            return Err(Error::mismatch("extractor output", g.output_dim(), "classifier input", d));
        }
        if let Some(f) = self.classifiers.iter().find(|f| f.input_dim() != d || f.num_classes() != c) {
            return Err(Error::mismatch("classifier input", f.input_dim(), "classifier input", d));
        }
        if let Some(x) = batch.iter().find(|x| x.len() != g.input_dim()) {
            return Err(Error::mismatch("input", x.len(), "extractor input", g.input_dim()));
        }
        Ok(())
    }

    /// Batch-mean loss summed over terms, and optionally its gradient with
    /// respect to the extractor parameters.
    fn evaluate(&self, g: &FeatureExtractor, batch: &[&[f64]], with_grad: bool) -> Result<(f64, Option<ParamVec>)> {
        self.check(g, batch)?;
        let scale = 1.0 / batch.len() as f64;
        let c = self.classifiers[0].num_classes();
        let d = g.output_dim();
        let mut grad = with_grad.then(|| ParamVec::zeros(g.params().shape().clone()));
        let mut loss = 0.0;
        let mut dp = vec![vec![0.0; c]; self.classifiers.len()];
        let mut dz = vec![0.0; d];
        let mut dlogits = vec![0.0; c];
        for x in batch {
            let trace = g.forward_trace(x);
            let z = trace.features();
            let probs: Vec<Vec<f64>> = self.classifiers.iter().map(|f| f.forward(z)).collect();
            dp.iter_mut().for_each(|v| v.iter_mut().for_each(|e| *e = 0.0));
            for (a, b) in &self.terms {
                let mixture = |m: &Mix| {
                    let mut out = vec![0.0; c];
                    for &(k, w) in m {
                        out.iter_mut().zip(&probs[k]).for_each(|(s, p)| *s += w * p);
                    }
                    out
                };
                let pb = mixture(b);
                let diff: Vec<f64> = mixture(a).iter().zip(&pb).map(|(x, y)| x - y).collect();
                loss += diff.iter().map(|v| v.abs()).sum::<f64>();
                if grad.is_some() {
                    let sign: Vec<f64> = diff.iter().map(|&v| sign(v) * scale).collect();
                    for &(k, w) in a {
                        dp[k].iter_mut().zip(&sign).for_each(|(g, s)| *g += w * s);
                    }
                    for &(k, w) in b {
                        dp[k].iter_mut().zip(&sign).for_each(|(g, s)| *g -= w * s);
                    }
                }
            }
            if let Some(grad) = grad.as_mut() {
                dz.iter_mut().for_each(|v| *v = 0.0);
                for ((f, p), up) in self.classifiers.iter().zip(&probs).zip(&dp) {
                    // softmax Jacobian: dℓ/dlogit = p ⊙ (up − p·up)
                    let dot: f64 = p.iter().zip(up).map(|(a, b)| a * b).sum();
                    for ((dl, pi), ui) in dlogits.iter_mut().zip(p).zip(up) {
                        *dl = pi * (ui - dot);
                    }
                    f.accumulate_input_grad(&dlogits, &mut dz);
                }
                g.backward(&trace, &dz, grad.values_mut());
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("non-finite discrepancy loss {loss}")));
        }
        Ok((loss, grad))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `L_IGD = E_x ||F_G1(G(x)) − F_G2(G(x))||_1` and its gradient w.r.t. `G`.
pub fn igd_loss(
    g: &FeatureExtractor,
    gc1: &GroupClassifier<'_>,
    gc2: &GroupClassifier<'_>,
    batch: &[&[f64]],
) -> Result<(f64, ParamVec)> {
    let (loss, grad) = Objective::from_groups(gc1, gc2).evaluate(g, batch, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

pub fn igd_loss_value(
    g: &FeatureExtractor,
    gc1: &GroupClassifier<'_>,
    gc2: &GroupClassifier<'_>,
    batch: &[&[f64]],
) -> Result<f64> {
    Ok(Objective::from_groups(gc1, gc2).evaluate(g, batch, false)?.0)
}

/// IGD with singleton groups.
/// Smallest `|P_1(G(x))_c − P_2(G(x))_c|` over the batch; the distance to
/// the nearest kink of the L1 objective.
pub fn igd_kink_margin(
    g: &FeatureExtractor,
    gc1: &GroupClassifier<'_>,
    gc2: &GroupClassifier<'_>,
    batch: &[&[f64]],
) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for x in batch {
        let z = g.forward(x);
        for (a, b) in gc1.predict(&z)?.into_iter().zip(gc2.predict(&z)?) {
            margin = margin.min((a - b).abs());
        }
    }
    Ok(margin)
}

/// Max relative error between the analytic IGD extractor gradient and
/// central differences with step `eps`.
pub fn igd_grad_check(
    g: &FeatureExtractor,
    gc1: &GroupClassifier<'_>,
    gc2: &GroupClassifier<'_>,
    batch: &[&[f64]],
    eps: f64,
) -> Result<f64> {
    let (_, grad) = igd_loss(g, gc1, gc2, batch)?;
    let mut probe = g.clone();
    let numeric = central_differences(
        |theta| {
            probe.params_mut().values_mut().copy_from_slice(theta);
            igd_loss_value(&probe, gc1, gc2, batch).unwrap_or(f64::NAN)
        },
        g.params().values(),
        eps,
    );
    Ok(max_relative_error(grad.values(), &numeric))
}

pub fn idd_loss(g: &FeatureExtractor, fi: &Classifier, fj: &Classifier, batch: &[&[f64]]) -> Result<(f64, ParamVec)> {
    igd_loss(g, &GroupClassifier::single(0, fi), &GroupClassifier::single(1, fj), batch)
}

/// `Σ_{i<j} E_x ||F_i(G(x)) − F_j(G(x))||_1`.
pub fn full_pairwise_loss(g: &FeatureExtractor, classifiers: &[Classifier], batch: &[&[f64]]) -> Result<f64> {
    if classifiers.len() < 2 {
        return Err(Error::Config("the pairwise objective needs at least 2 classifiers".into()));
    }
    Ok(Objective::pairwise(classifiers.iter().collect()).evaluate(g, batch, false)?.0)
}

pub fn full_pairwise_loss_grad(
    g: &FeatureExtractor,
    classifiers: &[Classifier],
    batch: &[&[f64]],
) -> Result<(f64, ParamVec)> {
    if classifiers.len() < 2 {
        return Err(Error::Config("the pairwise objective needs at least 2 classifiers".into()));
    }
    let (loss, grad) = Objective::pairwise(classifiers.iter().collect()).evaluate(g, batch, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Objective minimized by the target-side extractor update.
#[derive(Debug, Clone)]
pub enum Discrepancy<'a> {
    InterGroup(GroupClassifier<'a>, GroupClassifier<'a>),
    Pair(&'a Classifier, &'a Classifier),
    FullPairwise(&'a [Classifier]),
}

impl<'a> Discrepancy<'a> {
    fn objective(&self) -> Result<Objective<'a>> {
        Ok(match self {
            Discrepancy::InterGroup(a, b) => Objective::from_groups(a, b),
            Discrepancy::Pair(a, b) => {
                Objective::from_groups(&GroupClassifier::single(0, a), &GroupClassifier::single(1, b))
            }
            Discrepancy::FullPairwise(cs) => {
                if cs.len() < 2 {
                    return Err(Error::Config("the pairwise objective needs at least 2 classifiers".into()));
                }
                Objective::pairwise(cs.iter().collect())
            }
        })
    }

    pub fn loss(&self, g: &FeatureExtractor, batch: &[&[f64]]) -> Result<f64> {
        Ok(self.objective()?.evaluate(g, batch, false)?.0)
    }

    pub fn loss_grad(&self, g: &FeatureExtractor, batch: &[&[f64]]) -> Result<(f64, ParamVec)> {
        let (loss, grad) = self.objective()?.evaluate(g, batch, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }
}

/// `epochs` passes of shuffled minibatch SGD on the objective, updating only
/// `g`. Returns the sample-weighted mean loss seen during the final pass.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_update<R: Rng + ?Sized>(
    g: &mut FeatureExtractor,
    objective: &Discrepancy<'_>,
    target: &SampleMatrix,
    epochs: usize,
    batch_size: usize,
    opt: &mut OptimizerState,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    if epochs == 0 {
        return Err(Error::Config("the extractor update needs at least one epoch".into()));
    }
    if target.is_empty() {
        return Err(Error::Precondition("no target samples to adapt on".into()));
    }
    let obj = objective.objective()?;
    let mut last = 0.0;
    for _ in 0..epochs {
        let mut total = 0.0;
        for idx in minibatches(target.len(), batch_size, rng) {
            let batch = target.gather(&idx);
            let (loss, grad) = obj.evaluate(g, &batch, true)?;
            total += loss * idx.len() as f64;
            sgd_step(g.params_mut(), &grad.expect("gradient requested"), opt, lr)?;
        }
        last = total / target.len() as f64;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn setup(seed: u64, n: usize) -> (FeatureExtractor, Vec<Classifier>, Vec<Vec<f64>>) {
        let mut rng = rng_from(seed, &[]);
        let g = FeatureExtractor::new(4, &[6], 5, &mut rng).unwrap();
        let cs = (0..n).map(|_| Classifier::new(5, 3, &mut rng).unwrap()).collect();
        let xs = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        (g, cs, xs)
    }

    fn refs(xs: &[Vec<f64>]) -> Vec<&[f64]> {
        xs.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn partition_sizes() {
        for n in 2..12 {
            let p = random_partition(n, n as u64).unwrap();
            assert_eq!(p.g1().len(), n / 2);
            assert_eq!(p.g2().len(), n - n / 2);
            p.validate(n).unwrap();
        }
        assert!(matches!(random_partition(1, 0), Err(Error::Config(_))));
        assert_eq!(random_partition(7, 3).unwrap(), random_partition(7, 3).unwrap());
    }

    #[test]
    fn malformed_partitions_rejected() {
        assert!(GroupPartition::from_groups(3, vec![0], vec![0, 2], 0).is_err());
        assert!(GroupPartition::from_groups(3, vec![0], vec![2], 0).is_err());
        assert!(GroupPartition::from_groups(3, vec![], vec![0, 1, 2], 0).is_err());
    }

    #[test]
    fn group_predict_examples() {
        // zero weights with a large bias on one class approximate one-hot outputs
        let mut a = Classifier::zeros(2, 2).unwrap();
        let mut b = Classifier::zeros(2, 2).unwrap();
        a.params_mut().values_mut()[4] = 60.0;
        b.params_mut().values_mut()[5] = 60.0;
        let gc = GroupClassifier::new(vec![(0, &a), (1, &b)], vec![0.3, 0.7]).unwrap();
        let p = gc.predict(&[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-9 && (p[1] - 0.7).abs() < 1e-9);
        let same = GroupClassifier::new(vec![(0, &a), (1, &a)], vec![0.9, 0.1]).unwrap();
        let pa = a.forward(&[0.3, -0.2]);
        for (x, y) in same.predict(&[0.3, -0.2]).unwrap().iter().zip(&pa) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(GroupClassifier::new(vec![(0, &a)], vec![0.5]).is_err());
    }

    #[test]
    fn identical_groups_give_zero_loss_and_gradient() {
        let (g, cs, xs) = setup(1, 4);
        let gc = GroupClassifier::new(vec![(0, &cs[0]), (1, &cs[1])], vec![0.4, 0.6]).unwrap();
        let (loss, grad) = igd_loss(&g, &gc, &gc.clone(), &refs(&xs)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idd_is_igd_of_singletons_and_bounded() {
        let (g, cs, xs) = setup(2, 2);
        let b = refs(&xs);
        let (l1, g1) = idd_loss(&g, &cs[0], &cs[1], &b).unwrap();
        let (l2, g2) = igd_loss(&g, &GroupClassifier::single(0, &cs[0]), &GroupClassifier::single(1, &cs[1]), &b).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        assert!((0.0..=2.0).contains(&l1));
        assert_eq!(idd_loss(&g, &cs[0], &cs[0], &b).unwrap().0, 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let (g, cs, _) = setup(3, 2);
        assert!(matches!(idd_loss(&g, &cs[0], &cs[1], &[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn full_pairwise_is_sum_of_pairs() {
        let (g, cs, xs) = setup(4, 4);
        let b = refs(&xs);
        let mut want = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                want += idd_loss(&g, &cs[i], &cs[j], &b).unwrap().0;
            }
        }
        assert!((full_pairwise_loss(&g, &cs, &b).unwrap() - want).abs() < 1e-9);
        let same = vec![cs[0].clone(); 3];
        assert_eq!(full_pairwise_loss(&g, &same, &b).unwrap(), 0.0);
    }

    #[test]
    fn igd_gradient_matches_finite_differences() {
        let (g, cs, xs) = setup(5, 4);
        let b = refs(&xs);
        let gc1 = GroupClassifier::new(vec![(0, &cs[0]), (2, &cs[2])], vec![0.3, 0.7]).unwrap();
        let gc2 = GroupClassifier::new(vec![(1, &cs[1]), (3, &cs[3])], vec![0.5, 0.5]).unwrap();
        let (_, grad) = igd_loss(&g, &gc1, &gc2, &b).unwrap();
        let numeric = central_differences(
            |theta| {
                let gg = g.with_params(ParamVec::from_values(g.params().shape().clone(), theta.to_vec()).unwrap()).unwrap();
                igd_loss_value(&gg, &gc1, &gc2, &b).unwrap()
            },
            g.params().values(),
            1e-5,
        );
        assert!(max_relative_error(grad.values(), &numeric) < 1e-4);
    }

    #[test]
    fn full_pairwise_gradient_matches_finite_differences() {
        let (g, cs, xs) = setup(6, 3);
        let b = refs(&xs);
        let (_, grad) = full_pairwise_loss_grad(&g, &cs, &b).unwrap();
        let numeric = central_differences(
            |theta| {
                let gg = g.with_params(ParamVec::from_values(g.params().shape().clone(), theta.to_vec()).unwrap()).unwrap();
                full_pairwise_loss(&gg, &cs, &b).unwrap()
            },
            g.params().values(),
            1e-5,
        );
        assert!(max_relative_error(grad.values(), &numeric) < 1e-4);
    }

    #[test]
    fn update_with_identical_groups_or_zero_lr_is_a_no_op() {
        let (mut g, cs, xs) = setup(7, 2);
        let before = g.clone();
        let samples = SampleMatrix::from_rows(&xs).unwrap();
        let mut opt = OptimizerState::new(g.params(), 0.1, 0.0, 0.0).unwrap();
        let obj = Discrepancy::Pair(&cs[0], &cs[0]);
        adversarial_update(&mut g, &obj, &samples, 1, 4, &mut opt, 0.1, &mut rng_from(0, &[])).unwrap();
        assert_eq!(g, before);
        let obj = Discrepancy::Pair(&cs[0], &cs[1]);
        adversarial_update(&mut g, &obj, &samples, 1, 4, &mut opt, 0.0, &mut rng_from(0, &[])).unwrap();
        assert_eq!(g, before);
    }
}
