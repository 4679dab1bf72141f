use crate::error::{Error, Result};
use crate::numerics::{axpy, gemv_acc, gemv_t_acc, ger_acc, sigmoid, Tensor};

/// Borrowed LSTM weights. Gate rows are stacked `[input; forget; cell; output]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `4n x n_in`
    pub wx: &'a [f64],
    /// `4n x n`
    pub wh: &'a [f64],
    /// `4n`
    pub b: &'a [f64],
    pub n_in: usize,
    pub n_hidden: usize,
}

impl<'a> LstmWeights<'a> {
    pub fn from_tensors(wx: &'a Tensor, wh: &'a Tensor, b: &'a Tensor) -> Result<Self> {
        let n4 = b.len();
        if n4 % 4 != 0 || wx.rows() != n4 || wh.shape() != [n4, n4 / 4] {
            return Err(Error::Dimension(format!(
                "inconsistent LSTM shapes wx {:?}, wh {:?}, b {:?}",
                wx.shape(),
                wh.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            wx: wx.data(),
            wh: wh.data(),
            b: b.data(),
            n_in: wx.cols(),
            n_hidden: n4 / 4,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        Self {
            wx: vec![0.0; 4 * n_hidden * n_in],
            wh: vec![0.0; 4 * n_hidden * n_hidden],
            b: vec![0.0; 4 * n_hidden],
        }
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    /// Activated gates `[i; f; g; o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One step given the precomputed input projection `wx_x = Wx x`.
pub(crate) fn step_from_projection(
    w: &LstmWeights,
    wx_x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> LstmStepCache {
    let n = w.n_hidden;
    let mut z: Vec<f64> = wx_x.iter().zip(w.b).map(|(a, b)| a + b).collect();
    gemv_acc(w.wh, h_prev, &mut z);
    let mut gates = z;
    for (k, v) in gates.iter_mut().enumerate() {
        *v = if (2 * n..3 * n).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    let (i, rest) = gates.split_at(n);
    let (f, rest) = rest.split_at(n);
    let (g, o) = rest.split_at(n);
    let mut c = vec![0.0; n];
    let mut tanh_c = vec![0.0; n];
    let mut h = vec![0.0; n];
    for k in 0..n {
        c[k] = f[k] * c_prev[k] + i[k] * g[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    LstmStepCache { gates, c, tanh_c, h }
}

/// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate,
/// `c = f*c_prev + i*g`, `h = o*tanh(c)`. Returns `(h, c)`.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w: &LstmWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != w.n_in || h_prev.len() != w.n_hidden || c_prev.len() != w.n_hidden {
        return Err(Error::Dimension(format!(
            "lstm_step got x {}, h {}, c {} for weights {}->{}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            w.n_in,
            w.n_hidden
        )));
    }
    let mut wx_x = vec![0.0; 4 * w.n_hidden];
    gemv_acc(w.wx, x, &mut wx_x);
    let cache = step_from_projection(w, &wx_x, h_prev, c_prev);
    Ok((cache.h, cache.c))
}

/// Backward through one step. `dh`, `dc` are gradients w.r.t. this step's
/// outputs. Accumulates parameter grads and returns `(dz, dh_prev, dc_prev)`
/// where `dz` is the pre-activation gradient; the input gradient is
/// `Wx^T dz` and is left to the caller.
pub(crate) fn step_backward(
    w: &LstmWeights,
    cache: &LstmStepCache,
    h_prev: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmGrads,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = w.n_hidden;
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (i, f, gg, o) = (g[k], g[n + k], g[2 * n + k], g[3 * n + k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let d_i = dct * gg;
        let d_g = dct * i;
        let d_f = dct * c_prev[k];
        dc_prev[k] = dct * f;
        dz[k] = d_i * i * (1.0 - i);
        dz[n + k] = d_f * f * (1.0 - f);
        dz[2 * n + k] = d_g * (1.0 - gg * gg);
        dz[3 * n + k] = d_o * o * (1.0 - o);
    }
    ger_acc(&dz, h_prev, &mut grads.wh);
    axpy(1.0, &dz, &mut grads.b);
    let mut dh_prev = vec![0.0; n];
    gemv_t_acc(w.wh, &dz, &mut dh_prev);
    (dz, dh_prev, dc_prev)
}

/// Forward/backward state for one direction over a whole sequence.
#[derive(Debug, Clone)]
pub struct LstmSeqCache {
    pub steps: Vec<LstmStepCache>,
    pub reverse: bool,
}

/// Runs one direction over `input` (`len x n_in`, row-major); writes
/// hidden states into columns `[offset, offset + n)` of `out`
/// (`len x out_stride`).
pub(crate) fn run_direction(
    w: &LstmWeights,
    input: &[f64],
    len: usize,
    reverse: bool,
    out: &mut [f64],
    out_stride: usize,
    offset: usize,
) -> LstmSeqCache {
    let n = w.n_hidden;
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut steps: Vec<LstmStepCache> = Vec::with_capacity(len);
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    let mut wx_x = vec![0.0; 4 * n];
    for &t in &order {
        wx_x.iter_mut().for_each(|v| *v = 0.0);
        gemv_acc(w.wx, &input[t * w.n_in..(t + 1) * w.n_in], &mut wx_x);
        let cache = step_from_projection(w, &wx_x, &h, &c);
        out[t * out_stride + offset..t * out_stride + offset + n].copy_from_slice(&cache.h);
        h.clone_from(&cache.h);
        c.clone_from(&cache.c);
        steps.push(cache);
    }
    LstmSeqCache { steps, reverse }
}

/// Backward of [`run_direction`]. `d_out` has the same layout as `out`;
/// input gradients are accumulated into `d_input` (`len x n_in`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_direction(
    w: &LstmWeights,
    cache: &LstmSeqCache,
    input: &[f64],
    d_out: &[f64],
    out_stride: usize,
    offset: usize,
    d_input: &mut [f64],
    grads: &mut LstmGrads,
) {
    let n = w.n_hidden;
    let len = cache.steps.len();
    let zeros = vec![0.0; n];
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    // processing order index k runs over the forward order reversed
    for k in (0..len).rev() {
        let t = if cache.reverse { len - 1 - k } else { k };
        let (h_prev, c_prev) = if k == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&cache.steps[k - 1].h[..], &cache.steps[k - 1].c[..])
        };
        let mut dh = d_out[t * out_stride + offset..t * out_stride + offset + n].to_vec();
        axpy(1.0, &dh_next, &mut dh);
        let x = &input[t * w.n_in..(t + 1) * w.n_in];
        let (dz, dh_prev, dc_prev) =
            step_backward(w, &cache.steps[k], h_prev, c_prev, &dh, &dc_next, grads);
        ger_acc(&dz, x, &mut grads.wx);
        gemv_t_acc(w.wx, &dz, &mut d_input[t * w.n_in..(t + 1) * w.n_in]);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamSet, Rng};

    fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_zero_state() {
        let wx = Tensor::zeros(&[8, 3]);
        let wh = Tensor::zeros(&[8, 2]);
        let b = Tensor::zeros(&[8]);
        let w = LstmWeights::from_tensors(&wx, &wh, &b).unwrap();
        let (h, c) = lstm_step(&[0.3, -2.0, 5.0], &[0.0, 0.0], &[0.0, 0.0], &w).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_weights_unit_cell() {
        let wx = Tensor::zeros(&[4, 1]);
        let wh = Tensor::zeros(&[4, 1]);
        let b = Tensor::zeros(&[4]);
        let w = LstmWeights::from_tensors(&wx, &wh, &b).unwrap();
        let (h, c) = lstm_step(&[0.7], &[0.0], &[1.0], &w).unwrap();
        assert_eq!(c, vec![0.5]);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.231059).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let wx = Tensor::zeros(&[4, 2]);
        let wh = Tensor::zeros(&[4, 1]);
        let b = Tensor::zeros(&[4]);
        let w = LstmWeights::from_tensors(&wx, &wh, &b).unwrap();
        assert!(matches!(
            lstm_step(&[1.0], &[0.0], &[0.0], &w),
            Err(Error::Dimension(_))
        ));
    }

    /// Scalar loss `r_h . h + r_c . c` over one step; checks every weight
    /// and the input/state gradients.
    #[test]
    fn step_gradient_matches_finite_differences() {
        let (n_in, n) = (3, 2);
        let mut rng = Rng::new(17);
        let mut p = ParamSet::new();
        p.insert("wx", random_tensor(&mut rng, &[4 * n, n_in], 0.8));
        p.insert("wh", random_tensor(&mut rng, &[4 * n, n], 0.8));
        p.insert("b", random_tensor(&mut rng, &[4 * n], 0.5));
        p.insert("x", random_tensor(&mut rng, &[n_in], 1.0));
        p.insert("h0", random_tensor(&mut rng, &[n], 1.0));
        p.insert("c0", random_tensor(&mut rng, &[n], 1.0));
        let r_h: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let r_c: Vec<f64> = (0..n).map(|_| rng.normal()).collect();

        let f = |p: &ParamSet| -> Result<(f64, ParamSet)> {
            let w = LstmWeights::from_tensors(p.get("wx")?, p.get("wh")?, p.get("b")?)?;
            let x = p.get("x")?.data();
            let h0 = p.get("h0")?.data();
            let c0 = p.get("c0")?.data();
            let mut wx_x = vec![0.0; 4 * n];
            gemv_acc(w.wx, x, &mut wx_x);
            let cache = step_from_projection(&w, &wx_x, h0, c0);
            let loss: f64 = cache.h.iter().zip(&r_h).map(|(a, b)| a * b).sum::<f64>()
                + cache.c.iter().zip(&r_c).map(|(a, b)| a * b).sum::<f64>();
            let mut g = LstmGrads::zeros(n_in, n);
            let (dz, dh0, dc0) = step_backward(&w, &cache, h0, c0, &r_h, &r_c, &mut g);
            ger_acc(&dz, x, &mut g.wx);
            let mut dx = vec![0.0; n_in];
            gemv_t_acc(w.wx, &dz, &mut dx);
            let mut out = p.zeros_like();
            out.get_mut("wx")?.data_mut().copy_from_slice(&g.wx);
            out.get_mut("wh")?.data_mut().copy_from_slice(&g.wh);
            out.get_mut("b")?.data_mut().copy_from_slice(&g.b);
            out.get_mut("x")?.data_mut().copy_from_slice(&dx);
            out.get_mut("h0")?.data_mut().copy_from_slice(&dh0);
            out.get_mut("c0")?.data_mut().copy_from_slice(&dc0);
            Ok((loss, out))
        };
        let report = grad_check(f, &p, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn sequence_gradient_matches_finite_differences() {
        let (n_in, n, len) = (2, 3, 5);
        let mut rng = Rng::new(23);
        let mut p = ParamSet::new();
        p.insert("wx", random_tensor(&mut rng, &[4 * n, n_in], 0.7));
        p.insert("wh", random_tensor(&mut rng, &[4 * n, n], 0.7));
        p.insert("b", random_tensor(&mut rng, &[4 * n], 0.3));
        p.insert("x", random_tensor(&mut rng, &[len, n_in], 1.0));
        let r: Vec<f64> = (0..len * n).map(|_| rng.normal()).collect();
        for reverse in [false, true] {
            let f = |p: &ParamSet| -> Result<(f64, ParamSet)> {
                let w = LstmWeights::from_tensors(p.get("wx")?, p.get("wh")?, p.get("b")?)?;
                let x = p.get("x")?.data();
                let mut out = vec![0.0; len * n];
                let cache = run_direction(&w, x, len, reverse, &mut out, n, 0);
                let loss: f64 = out.iter().zip(&r).map(|(a, b)| a * b).sum();
                let mut g = LstmGrads::zeros(n_in, n);
                let mut dx = vec![0.0; len * n_in];
                backward_direction(&w, &cache, x, &r, n, 0, &mut dx, &mut g);
                let mut gp = p.zeros_like();
                gp.get_mut("wx")?.data_mut().copy_from_slice(&g.wx);
                gp.get_mut("wh")?.data_mut().copy_from_slice(&g.wh);
                gp.get_mut("b")?.data_mut().copy_from_slice(&g.b);
                gp.get_mut("x")?.data_mut().copy_from_slice(&dx);
                Ok((loss, gp))
            };
            let report = grad_check(f, &p, 1e-5).unwrap();
            assert!(report.max_relative_error < 1e-6, "reverse={reverse}: {report:?}");
        }
    }
}
