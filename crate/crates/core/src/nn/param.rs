//! Flat parameter vectors: the unit of aggregation and communication.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Named layer blocks describing how a flat vector maps onto matrices and
/// biases, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeSpec {
    blocks: Vec<(String, Vec<usize>)>,
}

impl ShapeSpec {
    pub fn new(blocks: Vec<(String, Vec<usize>)>) -> Self {
        Self { blocks }
    }

    /// Shape of a stack of dense layers `dims[0] -> dims[1] -> ...`, each
    /// stored as a row-major `[out, in]` weight followed by an `[out]` bias.
    pub fn dense_stack(prefix: &str, dims: &[usize]) -> Self {
        let blocks = dims
            .windows(2)
            .enumerate()
            .flat_map(|(l, w)| {
                [
                    (format!("{prefix}{l}.weight"), vec![w[1], w[0]]),
                    (format!("{prefix}{l}.bias"), vec![w[1]]),
                ]
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[(String, Vec<usize>)] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|(_, dims)| dims.iter().product::<usize>())
            .sum()
    }

    /// Offset and length of the named block.
    pub fn locate(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for (n, dims) in &self.blocks {
            let len = dims.iter().product::<usize>();
            if n == name {
                return Some((offset, len));
            }
            offset += len;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    values: Vec<f64>,
    shape: Arc<ShapeSpec>,
}

impl ParamVec {
    pub fn zeros(shape: Arc<ShapeSpec>) -> Self {
        Self {
            values: vec![0.0; shape.total_len()],
            shape,
        }
    }

    pub fn from_values(shape: Arc<ShapeSpec>, values: Vec<f64>) -> Result<Self> {
        let expected = shape.total_len();
        if values.len() != expected {
            return Err(Error::mismatch("values", values.len(), "shape spec", expected));
        }
        Ok(Self { values, shape })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shape(&self) -> &Arc<ShapeSpec> {
        &self.shape
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.shape
            .locate(name)
            .map(|(off, len)| &self.values[off..off + len])
    }

    pub fn same_shape(&self, other: &ParamVec) -> bool {
        Arc::ptr_eq(&self.shape, &other.shape) || *self.shape == *other.shape
    }

    fn check_shape(&self, other: &ParamVec) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::mismatch(
                "parameter vector",
                self.len(),
                "parameter vector",
                other.len(),
            ))
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &ParamVec, alpha: f64) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVec) -> Result<ParamVec> {
        let mut out = self.clone();
        out.add_scaled(other, 1.0)?;
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> ParamVec {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// `Σ_k weight_k · vec_k`, reduced strictly in the given order.
    pub fn weighted_sum<'a, I>(terms: I) -> Result<ParamVec>
    where
        I: IntoIterator<Item = (&'a ParamVec, f64)>,
    {
        let mut iter = terms.into_iter();
        let (first, w0) = iter
            .next()
            .ok_or_else(|| Error::Precondition("weighted sum of zero parameter vectors".into()))?;
        let mut acc = first.scaled(w0);
        for (p, w) in iter {
            acc.add_scaled(p, w)?;
        }
        Ok(acc)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamVec) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(n: usize) -> Arc<ShapeSpec> {
        Arc::new(ShapeSpec::new(vec![("p".into(), vec![n])]))
    }

    #[test]
    fn dense_stack_lengths() {
        let s = ShapeSpec::dense_stack("l", &[3, 5, 2]);
        assert_eq!(s.total_len(), 3 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(s.locate("l1.weight"), Some((20, 10)));
        assert_eq!(s.locate("l1.bias"), Some((30, 2)));
        assert_eq!(s.locate("nope"), None);
    }

    #[test]
    fn length_must_match_shape() {
        assert!(ParamVec::from_values(shape(3), vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn mismatched_shapes_do_not_combine() {
        let mut a = ParamVec::zeros(shape(3));
        let b = ParamVec::zeros(shape(4));
        assert!(a.add_scaled(&b, 1.0).is_err());
    }

    #[test]
    fn weighted_sum_of_equal_vectors_is_identity() {
        let s = shape(4);
        let p = ParamVec::from_values(s, vec![0.3, -1.2, 7.5, 1e-3]).unwrap();
        let w = [0.1, 0.25, 0.4, 0.25];
        let sum = ParamVec::weighted_sum(w.iter().map(|&wi| (&p, wi))).unwrap();
        assert!(sum.max_abs_diff(&p) < 1e-12);
    }

    proptest! {
        #[test]
        fn add_is_commutative_and_associative(
            len in 1usize..=1000,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..len).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let s = shape(len);
            let a = ParamVec::from_values(s.clone(), vals[0].clone()).unwrap();
            let b = ParamVec::from_values(s.clone(), vals[1].clone()).unwrap();
            let c = ParamVec::from_values(s, vals[2].clone()).unwrap();
            let ab = a.add(&b).unwrap();
            let ba = b.add(&a).unwrap();
            prop_assert!(ab.max_abs_diff(&ba) <= 1e-12);
            let left = ab.add(&c).unwrap();
            let right = a.add(&b.add(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) <= 1e-12);
            let s1 = a.scaled(0.5).scaled(4.0);
            let s2 = a.scaled(2.0);
            prop_assert!(s1.max_abs_diff(&s2) <= 1e-12);
        }
    }
}
