use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero extent"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {bad}",
                data[bad]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::matrix(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    /// Trailing extent for matrices; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose needs a matrix, got shape {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }
}

/// Matrix product with summation strictly left to right over the inner
/// extent.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul needs matrices, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents differ: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        // k outer keeps the per-entry accumulation order fixed at 0..k
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    let out = Tensor {
        shape: vec![m, n],
        data: out,
    };
    if !out.is_finite() {
        return Err(Error::Numeric("matmul produced a non-finite value".into()));
    }
    Ok(out)
}

/// Numerically stable softmax over a 1-D tensor.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    let out = softmax_slice(v.data())?;
    Ok(Tensor {
        shape: v.shape.clone(),
        data: out,
    })
}

pub fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("softmax input contains {bad}")));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

/// `log(softmax(v))`, stable for large logits.
pub fn log_softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Given `p = softmax(e)` and `dL/dp`, returns `dL/de`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, dpi)| pi * (dpi - inner)).collect()
}

/// Zero-padded "same" 1-D convolution of one signal with `K` kernels of
/// odd width `w`: `out[t, k] = sum_j kernels[k, j] * padded[t + j]`.
/// Returns a `T x K` tensor.
pub fn conv1d_same(signal: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (k, w) = kernel_dims(kernels)?;
    let t = signal.len();
    let mut out = vec![0.0; t * k];
    conv1d_same_into(signal.data(), kernels.data(), k, w, &mut out);
    Tensor::matrix(t, k, out)
}

fn kernel_dims(kernels: &Tensor) -> Result<(usize, usize)> {
    if kernels.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "conv kernels must be K x w, got {:?}",
            kernels.shape()
        )));
    }
    let (k, w) = (kernels.shape()[0], kernels.shape()[1]);
    if w % 2 == 0 {
        return Err(Error::Config(format!("conv kernel width {w} is even")));
    }
    Ok((k, w))
}

pub(crate) fn conv1d_same_into(signal: &[f64], kernels: &[f64], k: usize, w: usize, out: &mut [f64]) {
    let t_len = signal.len();
    let pad = (w - 1) / 2;
    for t in 0..t_len {
        let row = &mut out[t * k..(t + 1) * k];
        for (ch, o) in row.iter_mut().enumerate() {
            let kern = &kernels[ch * w..(ch + 1) * w];
            let mut acc = 0.0;
            for (j, &kj) in kern.iter().enumerate() {
                let src = t + j;
                if src >= pad && src - pad < t_len {
                    acc += kj * signal[src - pad];
                }
            }
            *o = acc;
        }
    }
}

/// Backward of [`conv1d_same`]: accumulates into `d_signal` and `d_kernels`.
pub(crate) fn conv1d_same_backward(
    signal: &[f64],
    kernels: &[f64],
    k: usize,
    w: usize,
    d_out: &[f64],
    d_signal: &mut [f64],
    d_kernels: &mut [f64],
) {
    let t_len = signal.len();
    let pad = (w - 1) / 2;
    for t in 0..t_len {
        let d_row = &d_out[t * k..(t + 1) * k];
        for (ch, &g) in d_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for j in 0..w {
                let src = t + j;
                if src >= pad && src - pad < t_len {
                    let s = src - pad;
                    d_kernels[ch * w + j] += g * signal[s];
                    d_signal[s] += g * kernels[ch * w + j];
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four fixed accumulation lanes. The order is fixed, so
/// results are reproducible, but it is not strict left-to-right.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += W x` for row-major `W` of shape `y.len() x x.len()`.
#[inline]
pub(crate) fn gemv_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(w.len(), n * y.len());
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(n)) {
        *yi += dot(row, x);
    }
}

/// `x_grad += W^T dy`.
#[inline]
pub(crate) fn gemv_t_acc(w: &[f64], dy: &[f64], x_grad: &mut [f64]) {
    let n = x_grad.len();
    debug_assert_eq!(w.len(), n * dy.len());
    for (&g, row) in dy.iter().zip(w.chunks_exact(n)) {
        if g == 0.0 {
            continue;
        }
        axpy(g, row, x_grad);
    }
}

/// `W_grad += dy x^T`.
#[inline]
pub(crate) fn ger_acc(dy: &[f64], x: &[f64], w_grad: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(w_grad.len(), n * dy.len());
    for (&g, row) in dy.iter().zip(w_grad.chunks_exact_mut(n)) {
        if g == 0.0 {
            continue;
        }
        axpy(g, x, row);
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_matmul_is_noop() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(3), &x).unwrap(), x);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn zero_matrix_annihilates() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let z = Tensor::zeros(&[4, 2]);
        let c = matmul(&z, &x).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        assert_eq!(c.shape(), &[4, 3]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn tensor_rejects_bad_shape_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(matches!(
            Tensor::vector(vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn softmax_symmetric_pair() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_direct_evaluation() {
        let s = softmax_slice(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax_slice(&[1.0, f64::INFINITY]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn conv_delta_identity_kernel() {
        let sig = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let kern = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let out = conv1d_same(&sig, &kern).unwrap();
        assert_eq!(out.data(), sig.data());
    }

    #[test]
    fn conv_constant_interior() {
        let sig = Tensor::vector(vec![2.0; 9]).unwrap();
        let kern = Tensor::matrix(1, 5, vec![1.0; 5]).unwrap();
        let out = conv1d_same(&sig, &kern).unwrap();
        for t in 2..7 {
            assert_eq!(out.get2(t, 0), 10.0);
        }
    }

    #[test]
    fn conv_hand_example() {
        let sig = Tensor::vector(vec![1.0, 0.0, 0.0]).unwrap();
        let kern = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let out = conv1d_same(&sig, &kern).unwrap();
        assert_eq!(out.data(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_rejects_even_width() {
        let sig = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let kern = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(conv1d_same(&sig, &kern), Err(Error::Config(_))));
    }

    #[test]
    fn dot_matches_naive_sum_closely() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let s = softmax_slice(&v).unwrap();
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&p| p > 0.0));
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 1..20), c in -30.0f64..30.0) {
            let a = softmax_slice(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax_slice(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn matmul_associative(a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(2, 5)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn conv_preserves_length(t in 1usize..60, half in 0usize..6) {
            let w = 2 * half + 1;
            let sig = Tensor::vector((0..t).map(|i| i as f64).collect()).unwrap();
            let kern = Tensor::matrix(2, w, vec![0.5; 2 * w]).unwrap();
            let out = conv1d_same(&sig, &kern).unwrap();
            prop_assert_eq!(out.shape(), &[t, 2]);
        }
    }
}
