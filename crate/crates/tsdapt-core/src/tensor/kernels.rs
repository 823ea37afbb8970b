//! Forward and backward kernels for the graph operations.
//!
//! Backward kernels accumulate into caller-provided buffers so that a
//! node shared by several consumers sums its gradient contributions.
//! Buffers are `Option` so work for inputs that do not require
//! gradients (e.g. the raw sensor windows) is skipped outright.

use super::{Array, TensorError};

/// Floor applied inside every logarithm, and to the cosine denominator.
pub const LOG_EPS: f64 = 1e-12;

/// Padding mode for 1D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length; the kernel is centered with
    /// left pad `(width - 1) / 2`.
    Same,
    /// No padding; output length is `length - width + 1`.
    Valid,
}

fn conv_geometry(len: usize, width: usize, padding: Padding) -> Result<(usize, isize), TensorError> {
    match padding {
        Padding::Valid => {
            if width > len {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d",
                    expected: format!("kernel width <= input length {}", len),
                    actual: format!("width {}", width),
                });
            }
            Ok((len - width + 1, 0))
        }
        Padding::Same => Ok((len, ((width - 1) / 2) as isize)),
    }
}

/// Cross-correlation of `input [C, L]` with `kernels [F, C, W]` plus `bias [F]`.
pub fn conv1d(
    input: &Array,
    kernels: &Array,
    bias: &Array,
    padding: Padding,
) -> Result<Array, TensorError> {
    let (c_in, len) = input.dims2("conv1d input")?;
    let (filters, c_k, width) = kernels.dims3("conv1d kernels")?;
    let b = bias.dims1("conv1d bias")?;
    if c_in != c_k || b != filters {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            expected: format!("kernels [F, {}, W] and bias [F] for input [{} x {}]", c_in, c_in, len),
            actual: format!("kernels {:?}, bias [{}]", kernels.shape(), b),
        });
    }
    if width == 0 || len == 0 {
        return Err(TensorError::Empty { op: "conv1d" });
    }
    let (out_len, pad_left) = conv_geometry(len, width, padding)?;

    let mut out = vec![0.0; filters * out_len];
    for f in 0..filters {
        let out_row = &mut out[f * out_len..(f + 1) * out_len];
        out_row.fill(bias.data()[f]);
        for c in 0..c_in {
            let in_row = &input.data()[c * len..(c + 1) * len];
            let k_row = &kernels.data()[(f * c_in + c) * width..(f * c_in + c + 1) * width];
            for (w, &k) in k_row.iter().enumerate() {
                let off = w as isize - pad_left;
                let t0 = (-off).max(0) as usize;
                let t1 = ((len as isize - off).min(out_len as isize)).max(0) as usize;
                if t0 >= t1 {
                    continue;
                }
                let src = &in_row[(t0 as isize + off) as usize..(t1 as isize + off) as usize];
                for (d, s) in out_row[t0..t1].iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
    Array::new(vec![filters, out_len], out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    grad_out: &Array,
    input: &Array,
    kernels: &Array,
    padding: Padding,
    mut d_input: Option<&mut [f64]>,
    mut d_kernels: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) {
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (filters, _, width) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    let (out_len, pad_left) = conv_geometry(len, width, padding).expect("validated in forward");

    if let Some(db) = d_bias {
        for f in 0..filters {
            db[f] += grad_out.data()[f * out_len..(f + 1) * out_len].iter().sum::<f64>();
        }
    }
    for f in 0..filters {
        let g_row = &grad_out.data()[f * out_len..(f + 1) * out_len];
        for c in 0..c_in {
            let in_row = &input.data()[c * len..(c + 1) * len];
            let k_base = (f * c_in + c) * width;
            for w in 0..width {
                let off = w as isize - pad_left;
                let t0 = (-off).max(0) as usize;
                let t1 = ((len as isize - off).min(out_len as isize)).max(0) as usize;
                if t0 >= t1 {
                    continue;
                }
                let i0 = (t0 as isize + off) as usize;
                let i1 = (t1 as isize + off) as usize;
                if let Some(dk) = d_kernels.as_deref_mut() {
                    let mut acc = 0.0;
                    for (g, s) in g_row[t0..t1].iter().zip(&in_row[i0..i1]) {
                        acc += g * s;
                    }
                    dk[k_base + w] += acc;
                }
                if let Some(di) = d_input.as_deref_mut() {
                    let k = kernels.data()[k_base + w];
                    let dst = &mut di[c * len + i0..c * len + i1];
                    for (d, g) in dst.iter_mut().zip(&g_row[t0..t1]) {
                        *d += k * g;
                    }
                }
            }
        }
    }
}

/// `weights [O, I] * input [I] + bias [O]`.
pub fn dense(input: &Array, weights: &Array, bias: &Array) -> Result<Array, TensorError> {
    let i = input.dims1("dense input")?;
    let (o, wi) = weights.dims2("dense weights")?;
    let b = bias.dims1("dense bias")?;
    if wi != i || b != o {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            expected: format!("weights [O, {}] and bias [O] for input [{}]", i, i),
            actual: format!("weights {:?}, bias [{}]", weights.shape(), b),
        });
    }
    let mut out = bias.data().to_vec();
    for (row, o_v) in out.iter_mut().enumerate() {
        let w_row = &weights.data()[row * i..(row + 1) * i];
        let mut acc = 0.0;
        for (w, x) in w_row.iter().zip(input.data()) {
            acc += w * x;
        }
        *o_v += acc;
    }
    Ok(Array::vector(out))
}

pub fn dense_backward(
    grad_out: &Array,
    input: &Array,
    weights: &Array,
    mut d_input: Option<&mut [f64]>,
    mut d_weights: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) {
    let i = input.len();
    let o = grad_out.len();
    if let Some(db) = d_bias {
        for (d, g) in db.iter_mut().zip(grad_out.data()) {
            *d += g;
        }
    }
    for row in 0..o {
        let g = grad_out.data()[row];
        if let Some(dw) = d_weights.as_deref_mut() {
            let dst = &mut dw[row * i..(row + 1) * i];
            for (d, x) in dst.iter_mut().zip(input.data()) {
                *d += g * x;
            }
        }
        if let Some(di) = d_input.as_deref_mut() {
            let w_row = &weights.data()[row * i..(row + 1) * i];
            for (d, w) in di.iter_mut().zip(w_row) {
                *d += g * w;
            }
        }
    }
}

/// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
pub fn relu(input: &Array) -> Array {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Array {
        shape: input.shape().to_vec(),
        data,
    }
}

pub fn relu_backward(grad_out: &Array, input: &Array, d_input: &mut [f64]) {
    for ((d, g), x) in d_input.iter_mut().zip(grad_out.data()).zip(input.data()) {
        if *x > 0.0 {
            *d += g;
        }
    }
}

/// Per-channel mean over the time axis: `[C, L] -> [C]`.
pub fn global_average_pool(input: &Array) -> Result<Array, TensorError> {
    let (c, l) = input.dims2("global_average_pool")?;
    if l == 0 {
        return Err(TensorError::Empty {
            op: "global_average_pool",
        });
    }
    let mut out = vec![0.0; c];
    for (ci, o) in out.iter_mut().enumerate() {
        *o = input.data()[ci * l..(ci + 1) * l].iter().sum::<f64>() / l as f64;
    }
    Ok(Array::vector(out))
}

pub fn global_average_pool_backward(grad_out: &Array, input_len: usize, d_input: &mut [f64]) {
    let c = grad_out.len();
    let scale = 1.0 / input_len as f64;
    for ci in 0..c {
        let g = grad_out.data()[ci] * scale;
        for d in &mut d_input[ci * input_len..(ci + 1) * input_len] {
            *d += g;
        }
    }
}

/// Numerically stable softmax over a rank-1 array, floored at
/// [`LOG_EPS`] and renormalized so every output is strictly positive.
pub fn softmax(logits: &Array) -> Result<Array, TensorError> {
    let n = logits.dims1("softmax")?;
    if n == 0 {
        return Err(TensorError::Empty { op: "softmax" });
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v = (*v / sum).max(LOG_EPS);
    }
    let sum2: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum2;
    }
    Ok(Array::vector(out))
}

pub fn softmax_backward(grad_out: &Array, output: &Array, d_input: &mut [f64]) {
    let dot: f64 = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(g, y)| g * y)
        .sum();
    for ((d, g), y) in d_input.iter_mut().zip(grad_out.data()).zip(output.data()) {
        *d += y * (g - dot);
    }
}

/// `-ln(max(p[label], eps))` for a probability vector `p`.
pub fn cross_entropy(probs: &Array, label: usize) -> Result<f64, TensorError> {
    let n = probs.dims1("cross_entropy")?;
    if label >= n {
        return Err(TensorError::LabelOutOfRange { label, classes: n });
    }
    let sum: f64 = probs.data().iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.data().iter().any(|&p| p < 0.0) {
        return Err(TensorError::InvalidDistribution {
            op: "cross_entropy",
            sum,
        });
    }
    Ok(-probs.data()[label].max(LOG_EPS).ln())
}

pub fn cross_entropy_backward(grad_out: f64, probs: &Array, label: usize, d_probs: &mut [f64]) {
    let p = probs.data()[label];
    if p > LOG_EPS {
        d_probs[label] += grad_out * (-1.0 / p);
    }
}

/// Cosine similarity with an epsilon-guarded denominator; a pair with a
/// near-zero norm yields similarity 0 (and zero gradient).
pub fn cosine_similarity(a: &Array, b: &Array) -> Result<f64, TensorError> {
    let na = a.dims1("cosine_similarity")?;
    let nb = b.dims1("cosine_similarity")?;
    if na != nb {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            expected: format!("[{}]", na),
            actual: format!("[{}]", nb),
        });
    }
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let norm_a = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm_a * norm_b;
    if denom < LOG_EPS {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

pub fn cosine_backward(
    grad_out: f64,
    a: &Array,
    b: &Array,
    value: f64,
    d_a: Option<&mut [f64]>,
    d_b: Option<&mut [f64]>,
) {
    let norm_a = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm_a * norm_b;
    if denom < LOG_EPS {
        return;
    }
    if let Some(da) = d_a {
        let na2 = norm_a * norm_a;
        for ((d, &xa), &xb) in da.iter_mut().zip(a.data()).zip(b.data()) {
            *d += grad_out * (xb / denom - value * xa / na2);
        }
    }
    if let Some(db) = d_b {
        let nb2 = norm_b * norm_b;
        for ((d, &xb), &xa) in db.iter_mut().zip(b.data()).zip(a.data()) {
            *d += grad_out * (xa / denom - value * xb / nb2);
        }
    }
}

/// `ln(sum_k exp(x_k))` over scalars, stabilized by max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_sum_valid() {
        // input [1,2,3], kernel [1,1], bias 0, valid -> [3,5]
        let input = arr(&[1, 3], &[1.0, 2.0, 3.0]);
        let k = arr(&[1, 1, 2], &[1.0, 1.0]);
        let b = arr(&[1], &[0.0]);
        let out = conv1d(&input, &k, &b, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv1d_width_one_is_identity() {
        let input = arr(&[1, 4], &[1.0, -2.0, 0.5, 4.0]);
        let k = arr(&[1, 1, 1], &[1.0]);
        let b = arr(&[1], &[0.0]);
        for pad in [Padding::Valid, Padding::Same] {
            let out = conv1d(&input, &k, &b, pad).unwrap();
            assert_eq!(out.data(), input.data());
        }
    }

    #[test]
    fn conv1d_matches_naive_triple_loop() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, "test/conv-oracle");
        let input = Array::new(vec![3, 128], (0..3 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let kernels = Array::new(vec![4, 3, 8], (0..4 * 3 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let bias = Array::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());

        for (pad, out_len, pad_left) in [(Padding::Valid, 121usize, 0isize), (Padding::Same, 128, 3)] {
            let got = conv1d(&input, &kernels, &bias, pad).unwrap();
            assert_eq!(got.shape(), &[4, out_len]);
            // independent nested-loop oracle
            for f in 0..4 {
                for t in 0..out_len {
                    let mut want = bias.data()[f];
                    for c in 0..3 {
                        for w in 0..8 {
                            let idx = t as isize + w as isize - pad_left;
                            if idx >= 0 && (idx as usize) < 128 {
                                want += input.data()[c * 128 + idx as usize]
                                    * kernels.data()[(f * 3 + c) * 8 + w];
                            }
                        }
                    }
                    assert_abs_diff_eq!(got.data()[f * out_len + t], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv1d_rejects_bad_shapes() {
        let input = arr(&[2, 8], &[0.0; 16]);
        let k = arr(&[1, 3, 2], &[0.0; 6]); // 3 channels vs 2
        let b = arr(&[1], &[0.0]);
        let err = conv1d(&input, &k, &b, Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected") && msg.contains("got"), "{msg}");
    }

    #[test]
    fn conv1d_valid_output_length() {
        let input = arr(&[1, 10], &[0.0; 10]);
        let k = arr(&[1, 1, 4], &[0.0; 4]);
        let b = arr(&[1], &[0.0]);
        let out = conv1d(&input, &k, &b, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[1, 7]); // 10 - 4 + 1
        let out = conv1d(&input, &k, &b, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[1, 10]);
    }

    #[test]
    fn dense_hand_sum() {
        let w = arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let x = arr(&[2], &[1.0, 1.0]);
        let b = arr(&[2], &[0.0, 0.0]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn dense_identity_weights() {
        let w = arr(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = arr(&[3], &[0.5, -1.0, 2.0]);
        let b = arr(&[3], &[0.0; 3]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn dense_matches_naive_loop() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, "test/dense-oracle");
        let x = Array::vector((0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = Array::new(vec![16, 32], (0..16 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Array::vector((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = dense(&x, &w, &b).unwrap();
        for o in 0..16 {
            let mut want = b.data()[o];
            for i in 0..32 {
                want += w.data()[o * 32 + i] * x.data()[i];
            }
            assert_abs_diff_eq!(got.data()[o], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let out = relu(&arr(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
        let nonneg = arr(&[3], &[0.5, 0.0, 2.0]);
        assert_eq!(relu(&nonneg).data(), nonneg.data());
    }

    #[test]
    fn gap_means_and_oracle() {
        let input = arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(global_average_pool(&input).unwrap().data(), &[2.0, 5.0]);
        let constant = Array::full(&[4, 7], 3.25);
        assert_eq!(global_average_pool(&constant).unwrap().data(), &[3.25; 4]);

        use rand::Rng;
        let mut rng = crate::rng::stream(3, "test/gap-oracle");
        let x = Array::new(vec![8, 128], (0..8 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = global_average_pool(&x).unwrap();
        for c in 0..8 {
            let want: f64 = x.data()[c * 128..(c + 1) * 128].iter().sum::<f64>() / 128.0;
            assert_abs_diff_eq!(got.data()[c], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_values() {
        let out = softmax(&arr(&[2], &[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(out.data()[0], 0.5, epsilon = 1e-12);
        let out = softmax(&arr(&[2], &[1f64.ln(), 3f64.ln()])).unwrap();
        assert_abs_diff_eq!(out.data()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data()[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        use rand::Rng;
        let mut rng = crate::rng::stream(9, "test/softmax-shift");
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let c: f64 = rng.gen_range(-50.0..50.0);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let a = softmax(&Array::vector(x)).unwrap();
            let b = softmax(&Array::vector(shifted)).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(a.data().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let mut one_hot = vec![0.0; 4];
        one_hot[2] = 1.0;
        assert_abs_diff_eq!(cross_entropy(&Array::vector(one_hot), 2).unwrap(), 0.0, epsilon = 1e-9);
        let uniform = Array::vector(vec![0.25; 4]);
        assert_abs_diff_eq!(cross_entropy(&uniform, 1).unwrap(), 4f64.ln(), epsilon = 1e-9);
        let p = Array::vector(vec![0.7, 0.2, 0.1]);
        assert_abs_diff_eq!(cross_entropy(&p, 1).unwrap(), -(0.2f64.ln()), epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let p = Array::vector(vec![0.5, 0.5]);
        assert!(matches!(
            cross_entropy(&p, 2),
            Err(TensorError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_rejects_non_distribution() {
        let p = Array::vector(vec![0.9, 0.9]);
        assert!(matches!(
            cross_entropy(&p, 0),
            Err(TensorError::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn cosine_values() {
        let z = Array::vector(vec![0.3, -1.2, 4.0]);
        assert_abs_diff_eq!(cosine_similarity(&z, &z).unwrap(), 1.0, epsilon = 1e-12);
        let a = Array::vector(vec![1.0, 0.0]);
        let b = Array::vector(vec![0.0, 1.0]);
        assert_abs_diff_eq!(cosine_similarity(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
        let c = Array::vector(vec![1.0, 1.0]);
        assert_abs_diff_eq!(
            cosine_similarity(&a, &c).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn cosine_zero_vectors_guarded() {
        let z = Array::vector(vec![0.0, 0.0]);
        assert_eq!(cosine_similarity(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn log_sum_exp_stable() {
        // ln(e^1000 + e^1000) = 1000 + ln 2 without overflow
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert_abs_diff_eq!(v, 1000.0 + 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(log_sum_exp(&[0.0]), 0.0, epsilon = 1e-12);
    }
}
