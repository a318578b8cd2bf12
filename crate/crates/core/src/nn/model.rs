//! Dense feature extractor `G` and linear-softmax classifier `F`.
//!
//! Every extractor layer is followed by a ReLU, including the last one, so
//! features are nonnegative like the pooled activations of a conv backbone.
//! The classifier is a single affine map followed by softmax. Both keep their
//! weights in a [`ParamVec`] laid out by [`ShapeSpec::dense_stack`].

use std::sync::Arc;

use rand::Rng;

use super::param::{ParamVec, ShapeSpec};
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn xavier_init<R: Rng + ?Sized>(params: &mut ParamVec, dims: &[usize], rng: &mut R) {
    let mut offset = 0;
    let values = params.values_mut();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[offset..offset + fan_in * fan_out] {
            *v = rng.random_range(-bound..bound);
        }
        // biases stay zero
        offset += fan_in * fan_out + fan_out;
    }
}

#[inline]
fn dense_forward(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &weights[o * n_in..(o + 1) * n_in];
        *y = bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
    }
}

/// Accumulate parameter gradients of one dense layer and, if requested, the
/// gradient with respect to its input.
#[inline]
fn dense_backward(
    weights: &[f64],
    x: &[f64],
    dy: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad_b[o] += g;
        let row = &mut grad_w[o * n_in..(o + 1) * n_in];
        for (gw, xi) in row.iter_mut().zip(x) {
            *gw += g * xi;
        }
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &weights[o * n_in..(o + 1) * n_in];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    params: ParamVec,
    dims: Vec<usize>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ExtractorTrace {
    /// `acts[0]` is the input, `acts[l + 1]` the post-ReLU output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub preacts: Vec<Vec<f64>>,
}

impl ExtractorTrace {
    pub fn features(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden_dims);
        dims.push(output_dim);
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "feature extractor layer sizes must be positive, got {dims:?}"
            )));
        }
        let shape = Arc::new(ShapeSpec::dense_stack("g", &dims));
        let mut params = ParamVec::zeros(shape);
        xavier_init(&mut params, &dims, rng);
        Ok(Self { params, dims })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &ParamVec {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVec {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVec) -> Result<()> {
        if !self.params.same_shape(&params) {
            return Err(Error::mismatch(
                "extractor params",
                self.params.len(),
                "replacement",
                params.len(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParamVec) -> Result<Self> {
        let mut out = self.clone();
        out.set_params(params)?;
        Ok(out)
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let mut offset = 0;
        for w in self.dims[..=l].windows(2) {
            offset += w[0] * w[1] + w[1];
        }
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let values = self.params.values();
        let weights = &values[offset..offset + n_in * n_out];
        let bias = &values[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (weights, bias)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = x.to_vec();
        for l in 0..self.dims.len() - 1 {
            let (w, b) = self.layer(l);
            let mut next = vec![0.0; self.dims[l + 1]];
            dense_forward(w, b, &cur, &mut next);
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            cur = next;
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> ExtractorTrace {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        let mut preacts = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut pre = vec![0.0; self.dims[l + 1]];
            dense_forward(w, b, &acts[l], &mut pre);
            acts.push(pre.iter().map(|v| v.max(0.0)).collect());
            preacts.push(pre);
        }
        ExtractorTrace { acts, preacts }
    }

    /// Backpropagate `d_features` (gradient w.r.t. the extractor output)
    /// through a recorded trace, accumulating into `grad` (same layout as the
    /// parameters). ReLU has derivative 0 at 0.
    pub fn backward(&self, trace: &ExtractorTrace, d_features: &[f64], grad: &mut [f64]) {
        let layers = self.dims.len() - 1;
        let mut delta: Vec<f64> = d_features
            .iter()
            .zip(&trace.preacts[layers - 1])
            .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
            .collect();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w, _) = self.layer(l);
            let o = offsets[l];
            let (gw, rest) = grad[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            if l == 0 {
                dense_backward(w, &trace.acts[0], &delta, gw, rest, None);
            } else {
                let mut dx = vec![0.0; n_in];
                dense_backward(w, &trace.acts[l], &delta, gw, rest, Some(&mut dx));
                for (d, p) in dx.iter_mut().zip(&trace.preacts[l - 1]) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = dx;
            }
        }
    }

    /// Smallest |pre-activation| over the inputs; the distance to the nearest
    /// ReLU kink.
    pub fn min_abs_preactivation<'a, I>(&self, inputs: I) -> f64
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        inputs
            .into_iter()
            .flat_map(|x| self.forward_trace(x).preacts.into_iter().flatten())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    params: ParamVec,
    input_dim: usize,
    num_classes: usize,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("classifier input dimension must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let dims = [input_dim, num_classes];
        let shape = Arc::new(ShapeSpec::dense_stack("f", &dims));
        let mut params = ParamVec::zeros(shape);
        xavier_init(&mut params, &dims, rng);
        Ok(Self {
            params,
            input_dim,
            num_classes,
        })
    }

    pub fn zeros(input_dim: usize, num_classes: usize) -> Result<Self> {
        let mut c = Self::new(input_dim, num_classes, &mut crate::rng::rng_from(0, &[]))?;
        c.params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        Ok(c)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamVec {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVec {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVec) -> Result<()> {
        if !self.params.same_shape(&params) {
            return Err(Error::mismatch(
                "classifier params",
                self.params.len(),
                "replacement",
                params.len(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParamVec) -> Result<Self> {
        let mut out = self.clone();
        out.set_params(params)?;
        Ok(out)
    }

    fn parts(&self) -> (&[f64], &[f64]) {
        self.params
            .values()
            .split_at(self.input_dim * self.num_classes)
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.input_dim);
        let (w, b) = self.parts();
        let mut out = vec![0.0; self.num_classes];
        dense_forward(w, b, z, &mut out);
        out
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        let mut l = self.logits(z);
        softmax_in_place(&mut l);
        l
    }

    /// Accumulate the parameter gradient for upstream `d_logits` into `grad`
    /// and, when given, write the gradient w.r.t. the features into `dz`.
    pub fn backward(&self, z: &[f64], d_logits: &[f64], grad: &mut [f64], dz: Option<&mut [f64]>) {
        let (w, _) = self.parts();
        let (gw, gb) = grad.split_at_mut(self.input_dim * self.num_classes);
        dense_backward(w, z, d_logits, gw, gb, dz);
    }

    /// Accumulate `Wᵀ·d_logits` into `dz`, treating the classifier as constant.
    pub fn accumulate_input_grad(&self, d_logits: &[f64], dz: &mut [f64]) {
        let (w, _) = self.parts();
        for (o, &g) in d_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * self.input_dim..(o + 1) * self.input_dim];
            for (d, wi) in dz.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

/// `h = F ∘ G`: class probabilities for one input.
pub fn forward_model(g: &FeatureExtractor, f: &Classifier, x: &[f64]) -> Result<Vec<f64>> {
    check_compatible(g, f)?;
    if x.len() != g.input_dim() {
        return Err(Error::mismatch("input", x.len(), "extractor input", g.input_dim()));
    }
    Ok(f.forward(&g.forward(x)))
}

pub fn check_compatible(g: &FeatureExtractor, f: &Classifier) -> Result<()> {
    if g.output_dim() != f.input_dim() {
        return Err(Error::mismatch(
            "extractor output",
            g.output_dim(),
            "classifier input",
            f.input_dim(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    /// Straight-line reference: reads the named blocks and multiplies.
    fn reference_forward(g: &FeatureExtractor, f: &Classifier, x: &[f64]) -> Vec<f64> {
        let dims = g.layer_dims();
        let mut h = x.to_vec();
        for l in 0..dims.len() - 1 {
            let w = g.params().block(&format!("g{l}.weight")).unwrap();
            let b = g.params().block(&format!("g{l}.bias")).unwrap();
            let mut out = Vec::new();
            for o in 0..dims[l + 1] {
                let mut acc = b[o];
                for i in 0..dims[l] {
                    acc += w[o * dims[l] + i] * h[i];
                }
                out.push(if acc > 0.0 { acc } else { 0.0 });
            }
            h = out;
        }
        let w = f.params().block("f0.weight").unwrap();
        let b = f.params().block("f0.bias").unwrap();
        let c = f.num_classes();
        let logits: Vec<f64> = (0..c)
            .map(|k| b[k] + (0..h.len()).map(|i| w[k * h.len() + i] * h[i]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn zero_classifier_gives_uniform() {
        let f = Classifier::zeros(6, 5).unwrap();
        let p = f.forward(&[0.3, -2.0, 1.0, 4.0, 0.0, 9.0]);
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_logits_split_evenly() {
        for a in [-700.0, -3.0, 0.0, 12.5, 800.0] {
            let p = softmax(&[a, a]);
            assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = rng_from(11, &[]);
        let g = FeatureExtractor::new(7, &[9, 6], 5, &mut rng).unwrap();
        let f = Classifier::new(5, 4, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = forward_model(&g, &f, &x).unwrap();
            let want = reference_forward(&g, &f, &x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = rng_from(1, &[]);
        let g = FeatureExtractor::new(4, &[8], 6, &mut rng).unwrap();
        let f = Classifier::new(5, 3, &mut rng).unwrap();
        let err = forward_model(&g, &f, &[0.0; 4]).unwrap_err();
        assert!(err.to_string().contains("extractor output"), "{err}");
        let f = Classifier::new(6, 3, &mut rng).unwrap();
        assert!(forward_model(&g, &f, &[0.0; 3]).is_err());
    }

    #[test]
    fn init_is_bounded_and_biases_zero() {
        let mut rng = rng_from(2, &[]);
        let g = FeatureExtractor::new(10, &[20], 6, &mut rng).unwrap();
        let b0 = (6.0f64 / 30.0).sqrt();
        assert!(g.params().block("g0.weight").unwrap().iter().all(|v| v.abs() <= b0));
        assert!(g.params().block("g0.bias").unwrap().iter().all(|v| *v == 0.0));
        assert!(g.params().block("g1.bias").unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn classifier_requires_two_classes() {
        let mut rng = rng_from(3, &[]);
        assert!(Classifier::new(4, 1, &mut rng).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one_and_is_shift_invariant(
                logits in prop::collection::vec(-300.0f64..300.0, 2..12),
                shift in -500.0f64..500.0,
            ) {
                let p = softmax(&logits);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
                let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
                let q = softmax(&shifted);
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
