//! Dense row-major `f64` tensors and the handful of kernels the models need.
//!
//! Every reduction runs in a fixed loop order, so results are bit-reproducible
//! across runs and thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added inside [`cross_entropy`] so an untrained model never takes `log(0)`.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.contains(&0) {
            return Err(Error::dim("from_vec", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix literal");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Width of the trailing axis (1 for a scalar-shaped tensor).
    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            self.shape.first().copied().unwrap_or(1)
        } else {
            self.shape[self.shape.len() - 1]
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add_assign", &self.shape, &other.shape));
        }
        add_into(&mut self.data, &other.data);
        Ok(())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.data)
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if xs[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

/// `[m×k] × [k×n] → [m×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let (m, n) = (a.shape[0], b.shape[1]);
    let mut out = Tensor::zeros(&[m, n]);
    matmul_acc(&a.data, &b.data, &mut out.data, m, a.shape[1], n);
    Ok(out)
}

/// `out[m×n] += a[m×k] · b[k×n]`. The sum for each output cell runs over `k`
/// in ascending order.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k×n] += aᵀ · b` with `a: [m×k]`, `b: [m×n]` (weight-gradient shape).
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a · bᵀ` with `a: [m×n]`, `b: [k×n]` (input-gradient shape).
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += dot(arow, brow);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Numerically stable softmax of a slice, written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    let mut out = logits.zeros_like();
    softmax_into(&logits.data, &mut out.data);
    Ok(out)
}

/// `-ln(probs[target] + 1e-12)`, floored at 0.
pub fn cross_entropy(probs: &Tensor, target: usize) -> Result<f64> {
    let p = probs.data.get(target).ok_or(Error::Index {
        what: "probability vector",
        index: target,
        len: probs.len(),
    })?;
    Ok((-(p + CE_EPSILON).ln()).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::from_vec(&[m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let id = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = Tensor::matrix(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
        let r = matmul(&Tensor::matrix(&[&[1.0, 2.0]]), &Tensor::matrix(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = Rng::new(7);
        let a = rng.uniform_tensor(&[5, 7], -1.0, 1.0);
        let b = rng.uniform_tensor(&[7, 3], -1.0, 1.0);
        let fast = matmul(&a, &b).unwrap();
        let slow = triple_loop(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transpose_kernels_agree_with_explicit_transpose() {
        let mut rng = Rng::new(3);
        let a = rng.uniform_tensor(&[4, 3], -1.0, 1.0);
        let b = rng.uniform_tensor(&[4, 5], -1.0, 1.0);
        let mut at = Tensor::zeros(&[3, 4]);
        for i in 0..4 {
            for j in 0..3 {
                at.data_mut()[j * 4 + i] = a.data()[i * 3 + j];
            }
        }
        let want = matmul(&at, &b).unwrap();
        let mut got = vec![0.0; 15];
        matmul_tn_acc(a.data(), b.data(), &mut got, 4, 3, 5);
        for (x, y) in got.iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-14);
        }

        let c = rng.uniform_tensor(&[6, 5], -1.0, 1.0);
        let mut ct = Tensor::zeros(&[5, 6]);
        for i in 0..6 {
            for j in 0..5 {
                ct.data_mut()[j * 6 + i] = c.data()[i * 5 + j];
            }
        }
        let want = matmul(&b, &ct).unwrap();
        let mut got = vec![0.0; 24];
        matmul_nt_acc(b.data(), c.data(), &mut got, 4, 5, 6);
        for (x, y) in got.iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(1e3) - 1.0).abs() < 1e-12);
        assert!((sigmoid_scalar(1.0) - 0.7310585786).abs() < 1e-9);
        assert!(sigmoid_scalar(-1e3) >= 0.0);
        assert!(sigmoid_scalar(-30.0) > 0.0 && sigmoid_scalar(30.0) < 1.0);
    }

    #[test]
    fn tanh_values_and_symmetry() {
        assert_eq!(tanh_act(&Tensor::vector(vec![0.0])).data(), &[0.0]);
        assert!((1f64.tanh() - 0.7615941560).abs() < 1e-9);
        let mut rng = Rng::new(11);
        let x = rng.uniform_tensor(&[32], -5.0, 5.0);
        let pos = tanh_act(&x);
        let neg = tanh_act(&x.map(|v| -v));
        for (p, n) in pos.data().iter().zip(neg.data()) {
            assert!((p + n).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&Tensor::filled(&[4], 2.5)).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let p = softmax(&Tensor::vector(vec![0.0, 3f64.ln()])).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-9);
        assert!((p.data()[1] - 0.75).abs() < 1e-9);
        assert!(matches!(softmax(&Tensor::vector(vec![])), Err(Error::Domain(_))));
        let big = softmax(&Tensor::vector(vec![1000.0, 999.0, -1000.0])).unwrap();
        assert!(big.all_finite());
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&Tensor::vector(vec![0.0, 1.0]), 1).unwrap(), 0.0);
        let u = Tensor::filled(&[4], 0.25);
        assert!((cross_entropy(&u, 2).unwrap() - 4f64.ln()).abs() < 1e-9);
        let p = Tensor::vector(vec![0.25, 0.75]);
        assert!((cross_entropy(&p, 1).unwrap() - 0.2876821).abs() < 1e-6);
        assert!(matches!(cross_entropy(&p, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
