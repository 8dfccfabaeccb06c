//! Differentiable operations over [`Tensor`].

use ndarray::ArrayView2;

use crate::error::{dim_err, num_err, val_err, Result};
use crate::tensor::Tensor;

fn as_matrix(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    match s.len() {
        2 => Ok((s[0], s[1])),
        _ => Err(dim_err(format!("expected rank-2 tensor, got shape {s:?}"))),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let av = ArrayView2::from_shape((m, k), a).expect("matmul lhs shape");
    let bv = ArrayView2::from_shape((k, n), b).expect("matmul rhs shape");
    av.dot(&bv).into_raw_vec()
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Elementwise a + b.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let values: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| x + y)
        .collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(a.shape(), values, vec![a.clone(), b.clone()], Box::new(move |g| {
        ac.accumulate_grad(g);
        bc.accumulate_grad(g);
    }))
}

/// Elementwise a - b.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let values: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| x - y)
        .collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(a.shape(), values, vec![a.clone(), b.clone()], Box::new(move |g| {
        ac.accumulate_grad(g);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        bc.accumulate_grad(&neg);
    }))
}

/// Elementwise a * b (Hadamard).
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let av = a.values();
    let bv = b.values();
    let values: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(a.shape(), values, vec![a.clone(), b.clone()], Box::new(move |g| {
        let ga: Vec<f64> = g.iter().zip(&bv).map(|(gi, y)| gi * y).collect();
        let gb: Vec<f64> = g.iter().zip(&av).map(|(gi, x)| gi * x).collect();
        ac.accumulate_grad(&ga);
        bc.accumulate_grad(&gb);
    }))
}

/// Scalar multiple c * a.
pub fn scale(a: &Tensor, c: f64) -> Result<Tensor> {
    let values: Vec<f64> = a.values().iter().map(|x| c * x).collect();
    let ac = a.clone();
    Tensor::from_op(a.shape(), values, vec![a.clone()], Box::new(move |g| {
        let ga: Vec<f64> = g.iter().map(|v| c * v).collect();
        ac.accumulate_grad(&ga);
    }))
}

/// Elementwise 1 - a.
pub fn one_minus(a: &Tensor) -> Result<Tensor> {
    let values: Vec<f64> = a.values().iter().map(|x| 1.0 - x).collect();
    let ac = a.clone();
    Tensor::from_op(a.shape(), values, vec![a.clone()], Box::new(move |g| {
        let ga: Vec<f64> = g.iter().map(|v| -v).collect();
        ac.accumulate_grad(&ga);
    }))
}

/// Matrix product a[m x k] . b[k x n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a)?;
    let (k2, n) = as_matrix(b)?;
    if k != k2 {
        return Err(dim_err(format!("matmul: inner dims {k} vs {k2}")));
    }
    let av = a.values();
    let bv = b.values();
    let values = matmul_raw(&av, &bv, m, k, n);
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(vec![m, n], values, vec![a.clone(), b.clone()], Box::new(move |g| {
        // dA = G . B^T, dB = A^T . G
        let bt = transpose_raw(&bv, k, n);
        let at = transpose_raw(&av, m, k);
        ac.accumulate_grad(&matmul_raw(g, &bt, m, n, k));
        bc.accumulate_grad(&matmul_raw(&at, g, k, m, n));
    }))
}

/// a[m x k] . b[n x k]^T -> [m x n]. Used for logits against a row-major bank.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a)?;
    let (n, k2) = as_matrix(b)?;
    if k != k2 {
        return Err(dim_err(format!("matmul_nt: widths {k} vs {k2}")));
    }
    let av = a.values();
    let bv = b.values();
    let bt = transpose_raw(&bv, n, k);
    let values = matmul_raw(&av, &bt, m, k, n);
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(vec![m, n], values, vec![a.clone(), b.clone()], Box::new(move |g| {
        // dA = G . B, dB = G^T . A
        ac.accumulate_grad(&matmul_raw(g, &bv, m, n, k));
        let gt = transpose_raw(g, m, n);
        bc.accumulate_grad(&matmul_raw(&gt, &av, n, m, k));
    }))
}

/// input[B x Din] . weight[Din x Dout] + bias[Dout].
pub fn affine(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, din) = as_matrix(input)?;
    let (din2, dout) = as_matrix(weight)?;
    if din != din2 {
        return Err(dim_err(format!(
            "affine: input width {din} vs weight fan-in {din2}"
        )));
    }
    let out = matmul(input, weight)?;
    match bias {
        None => Ok(out),
        Some(bias) => {
            if bias.shape() != vec![dout] {
                return Err(dim_err(format!(
                    "affine: bias shape {:?}, expected [{dout}]",
                    bias.shape()
                )));
            }
            let mut values = out.values();
            let bv = bias.values();
            for r in 0..b {
                for c in 0..dout {
                    values[r * dout + c] += bv[c];
                }
            }
            let (oc, bc) = (out.clone(), bias.clone());
            Tensor::from_op(vec![b, dout], values, vec![out.clone(), bias.clone()], Box::new(
                move |g| {
                    oc.accumulate_grad(g);
                    let mut gb = vec![0.0; dout];
                    for r in 0..b {
                        for c in 0..dout {
                            gb[c] += g[r * dout + c];
                        }
                    }
                    bc.accumulate_grad(&gb);
                },
            ))
        }
    }
}

/// Column-wise concatenation [a | b].
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = as_matrix(a)?;
    let (rb, cb) = as_matrix(b)?;
    if ra != rb {
        return Err(dim_err(format!("concat: batch extents {ra} vs {rb}")));
    }
    let av = a.values();
    let bv = b.values();
    let cols = ca + cb;
    let mut values = vec![0.0; ra * cols];
    for r in 0..ra {
        values[r * cols..r * cols + ca].copy_from_slice(&av[r * ca..(r + 1) * ca]);
        values[r * cols + ca..(r + 1) * cols].copy_from_slice(&bv[r * cb..(r + 1) * cb]);
    }
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(vec![ra, cols], values, vec![a.clone(), b.clone()], Box::new(move |g| {
        let mut ga = vec![0.0; ra * ca];
        let mut gb = vec![0.0; ra * cb];
        for r in 0..ra {
            ga[r * ca..(r + 1) * ca].copy_from_slice(&g[r * cols..r * cols + ca]);
            gb[r * cb..(r + 1) * cb].copy_from_slice(&g[r * cols + ca..(r + 1) * cols]);
        }
        ac.accumulate_grad(&ga);
        bc.accumulate_grad(&gb);
    }))
}

/// Columns [start, end) of a matrix.
pub fn slice_cols(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (rows, cols) = as_matrix(a)?;
    if start > end || end > cols {
        return Err(dim_err(format!(
            "slice_cols: [{start}, {end}) out of width {cols}"
        )));
    }
    let w = end - start;
    let av = a.values();
    let mut values = vec![0.0; rows * w];
    for r in 0..rows {
        values[r * w..(r + 1) * w].copy_from_slice(&av[r * cols + start..r * cols + end]);
    }
    let ac = a.clone();
    Tensor::from_op(vec![rows, w], values, vec![a.clone()], Box::new(move |g| {
        let mut ga = vec![0.0; rows * cols];
        for r in 0..rows {
            ga[r * cols + start..r * cols + end].copy_from_slice(&g[r * w..(r + 1) * w]);
        }
        ac.accumulate_grad(&ga);
    }))
}

/// Elementwise leaky ReLU; subgradient at 0 is `slope`.
pub fn leaky_relu(a: &Tensor, slope: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&slope) {
        return Err(val_err(format!("leaky_relu: slope {slope} outside [0, 1)")));
    }
    let av = a.values();
    let values: Vec<f64> = av.iter().map(|&x| if x >= 0.0 { x } else { slope * x }).collect();
    let ac = a.clone();
    Tensor::from_op(a.shape(), values, vec![a.clone()], Box::new(move |g| {
        let ga: Vec<f64> = g
            .iter()
            .zip(&av)
            .map(|(gi, &x)| if x >= 0.0 { *gi } else { slope * gi })
            .collect();
        ac.accumulate_grad(&ga);
    }))
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    leaky_relu(a, 0.0)
}

/// Elementwise logistic function, overflow-safe on both tails.
pub fn sigmoid(a: &Tensor) -> Result<Tensor> {
    let values: Vec<f64> = a.values().iter().map(|&x| stable_sigmoid(x)).collect();
    let yv = values.clone();
    let ac = a.clone();
    Tensor::from_op(a.shape(), values, vec![a.clone()], Box::new(move |g| {
        let ga: Vec<f64> = g.iter().zip(&yv).map(|(gi, &y)| gi * y * (1.0 - y)).collect();
        ac.accumulate_grad(&ga);
    }))
}

fn stable_sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep the output strictly inside (0, 1) even where rounding would
    // saturate it.
    y.clamp(f64::MIN_POSITIVE, 1.0_f64.next_down())
}

/// L2-normalize each row. Errors on a zero-norm row.
pub fn row_l2_normalize(a: &Tensor) -> Result<Tensor> {
    let (rows, cols) = as_matrix(a)?;
    let av = a.values();
    let mut values = vec![0.0; rows * cols];
    let mut norms = vec![0.0; rows];
    for r in 0..rows {
        let row = &av[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(num_err(format!("row_l2_normalize: zero-norm row {r}")));
        }
        norms[r] = norm;
        for c in 0..cols {
            values[r * cols + c] = row[c] / norm;
        }
    }
    let yv = values.clone();
    let ac = a.clone();
    Tensor::from_op(vec![rows, cols], values, vec![a.clone()], Box::new(move |g| {
        // d x_c = (g_c - y_c * <g, y>) / ||x||
        let mut ga = vec![0.0; rows * cols];
        for r in 0..rows {
            let gr = &g[r * cols..(r + 1) * cols];
            let yr = &yv[r * cols..(r + 1) * cols];
            let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
            for c in 0..cols {
                ga[r * cols + c] = (gr[c] - yr[c] * dot) / norms[r];
            }
        }
        ac.accumulate_grad(&ga);
    }))
}

/// Mean over rows of -log softmax(logits_i)[target_i].
pub fn softmax_cross_entropy_rows(logits: &Tensor, target_index: &[usize]) -> Result<Tensor> {
    let (rows, cols) = as_matrix(logits)?;
    if target_index.len() != rows {
        return Err(dim_err(format!(
            "softmax_cross_entropy_rows: {} targets for {rows} rows",
            target_index.len()
        )));
    }
    if let Some(&bad) = target_index.iter().find(|&&t| t >= cols) {
        return Err(val_err(format!("target index {bad} out of range {cols}")));
    }
    let lv = logits.values();
    let mut probs = vec![0.0; rows * cols];
    let mut loss = 0.0;
    for r in 0..rows {
        let row = &lv[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..cols {
            probs[r * cols + c] = exps[c] / z;
        }
        loss += -(probs[r * cols + target_index[r]].ln());
    }
    loss /= rows as f64;
    let targets = target_index.to_vec();
    let lc = logits.clone();
    Tensor::from_op(vec![1], vec![loss], vec![logits.clone()], Box::new(move |g| {
        let scale = g[0] / rows as f64;
        let mut ga = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let p = probs[r * cols + c];
                let ind = if c == targets[r] { 1.0 } else { 0.0 };
                ga[r * cols + c] = scale * (p - ind);
            }
        }
        lc.accumulate_grad(&ga);
    }))
}

/// Mean elementwise binary cross-entropy on logits, computed in the stable
/// form max(x, 0) - x*t + ln(1 + exp(-|x|)).
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    same_shape(logits, targets, "bce_with_logits")?;
    let tv = targets.values();
    if tv.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(val_err("bce_with_logits: targets must be 0 or 1"));
    }
    let lv = logits.values();
    let n = lv.len() as f64;
    let mut loss = 0.0;
    for (&x, &t) in lv.iter().zip(&tv) {
        loss += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
    }
    loss /= n;
    let lc = logits.clone();
    Tensor::from_op(vec![1], vec![loss], vec![logits.clone()], Box::new(move |g| {
        let scale = g[0] / n;
        let ga: Vec<f64> = lv
            .iter()
            .zip(&tv)
            .map(|(&x, &t)| scale * (stable_sigmoid(x) - t))
            .collect();
        lc.accumulate_grad(&ga);
    }))
}

/// Mean of all entries.
pub fn mean_all(a: &Tensor) -> Result<Tensor> {
    let av = a.values();
    let n = av.len() as f64;
    let m = av.iter().sum::<f64>() / n;
    let ac = a.clone();
    let len = av.len();
    Tensor::from_op(vec![1], vec![m], vec![a.clone()], Box::new(move |g| {
        let ga = vec![g[0] / n; len];
        ac.accumulate_grad(&ga);
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::gradcheck_tensors;

    fn t(rows: usize, cols: usize, v: Vec<f64>) -> Tensor {
        Tensor::matrix(rows, cols, v).unwrap()
    }

    #[test]
    fn affine_identity_weight() {
        let input = t(1, 2, vec![1.0, 2.0]);
        let w = t(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let out = affine(&input, &w, Some(&b)).unwrap();
        assert_eq!(out.values(), vec![1.0, 2.0]);
    }

    #[test]
    fn affine_zero_weight_gives_bias() {
        let input = t(1, 1, vec![5.0]);
        let w = t(1, 1, vec![0.0]);
        let b = Tensor::vector(vec![3.0]).unwrap();
        let out = affine(&input, &w, Some(&b)).unwrap();
        assert_eq!(out.values(), vec![3.0]);
    }

    #[test]
    fn affine_shape_mismatch_errors() {
        let input = t(1, 3, vec![1.0, 2.0, 3.0]);
        let w = t(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(affine(&input, &w, None).is_err());
    }

    #[test]
    fn affine_gradcheck() {
        let input = t(2, 2, vec![0.3, -0.7, 1.2, 0.5]).requires_grad(true);
        let w = t(2, 3, vec![0.1, -0.2, 0.4, 0.9, -0.3, 0.6]).requires_grad(true);
        let b = Tensor::vector(vec![0.05, -0.1, 0.2]).unwrap().requires_grad(true);
        let max_rel = gradcheck_tensors(
            || {
                let y = affine(&input, &w, Some(&b)).unwrap();
                mean_all(&mul(&y, &y).unwrap()).unwrap()
            },
            &[input.clone(), w.clone(), b.clone()],
        );
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::vector(vec![-1.0, 2.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01).unwrap().values(), vec![-0.01, 2.0]);
    }

    #[test]
    fn leaky_relu_zero_slope_is_relu() {
        let x = Tensor::vector(vec![-5.0, 3.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.0).unwrap().values(), vec![0.0, 3.0]);
    }

    #[test]
    fn leaky_relu_rejects_bad_slope() {
        let x = Tensor::vector(vec![1.0]).unwrap();
        assert!(leaky_relu(&x, 1.0).is_err());
        assert!(leaky_relu(&x, -0.1).is_err());
    }

    #[test]
    fn leaky_relu_gradcheck_away_from_zero() {
        let x = t(1, 4, vec![-2.0, -0.5, 0.7, 1.9]).requires_grad(true);
        let max_rel = gradcheck_tensors(
            || mean_all(&leaky_relu(&x, 0.01).unwrap()).unwrap(),
            &[x.clone()],
        );
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }

    #[test]
    fn sigmoid_symmetry_and_saturation() {
        let x = Tensor::vector(vec![0.0, 40.0]).unwrap();
        let y = sigmoid(&x).unwrap().values();
        assert_eq!(y[0], 0.5);
        assert!((y[1] - 1.0).abs() < 1e-9);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        let x = Tensor::vector(vec![-745.0, 745.0]).unwrap();
        let y = sigmoid(&x).unwrap().values();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_gradcheck() {
        let x = t(1, 3, vec![-1.2, 0.3, 2.1]).requires_grad(true);
        let max_rel =
            gradcheck_tensors(|| mean_all(&sigmoid(&x).unwrap()).unwrap(), &[x.clone()]);
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }

    #[test]
    fn concat_definition_and_degenerate() {
        let a = t(1, 1, vec![1.0]);
        let b = t(1, 2, vec![2.0, 3.0]);
        assert_eq!(concat_cols(&a, &b).unwrap().values(), vec![1.0, 2.0, 3.0]);
        let empty = t(1, 0, vec![]);
        assert_eq!(concat_cols(&a, &empty).unwrap().values(), vec![1.0]);
    }

    #[test]
    fn concat_batch_mismatch_errors() {
        let a = t(2, 1, vec![1.0, 2.0]);
        let b = t(1, 1, vec![3.0]);
        assert!(concat_cols(&a, &b).is_err());
    }

    #[test]
    fn concat_gradcheck() {
        let a = t(2, 2, vec![0.1, 0.2, 0.3, 0.4]).requires_grad(true);
        let b = t(2, 1, vec![-0.5, 0.8]).requires_grad(true);
        let max_rel = gradcheck_tensors(
            || {
                let c = concat_cols(&a, &b).unwrap();
                mean_all(&mul(&c, &c).unwrap()).unwrap()
            },
            &[a.clone(), b.clone()],
        );
        assert!(max_rel < 1e-6, "max rel {max_rel}");
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let logits = t(4, 4, vec![0.7; 16]);
        let loss = softmax_cross_entropy_rows(&logits, &[0, 1, 2, 3]).unwrap();
        assert!((loss.item() - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_large_diagonal_drives_loss_to_zero() {
        let mut v = vec![0.0; 9];
        for i in 0..3 {
            v[i * 3 + i] = 50.0;
        }
        let logits = t(3, 3, v);
        let loss = softmax_cross_entropy_rows(&logits, &[0, 1, 2]).unwrap();
        assert!(loss.item() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = t(2, 3, vec![0.2, -1.4, 3.0, 0.0, 0.5, -0.5]);
        let lv = logits.values();
        for r in 0..2 {
            let row = &lv[r * 3..(r + 1) * 3];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            let s: f64 = row.iter().map(|&x| (x - max).exp() / z).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_ce_gradcheck() {
        let logits = t(3, 3, vec![0.2, -0.4, 1.0, 0.7, 0.1, -0.9, 0.3, 0.6, -0.2])
            .requires_grad(true);
        let max_rel = gradcheck_tensors(
            || softmax_cross_entropy_rows(&logits, &[0, 2, 1]).unwrap(),
            &[logits.clone()],
        );
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }

    #[test]
    fn bce_zero_logits() {
        let logits = t(2, 2, vec![0.0; 4]);
        let targets = t(2, 2, vec![1.0, 0.0, 1.0, 1.0]);
        let loss = bce_with_logits(&logits, &targets).unwrap();
        assert!((loss.item() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_saturated_correct() {
        let logits = t(1, 2, vec![40.0, 40.0]);
        let targets = t(1, 2, vec![1.0, 1.0]);
        assert!(bce_with_logits(&logits, &targets).unwrap().item() < 1e-9);
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let logits = t(1, 1, vec![0.0]);
        let targets = t(1, 1, vec![0.5]);
        assert!(bce_with_logits(&logits, &targets).is_err());
    }

    #[test]
    fn bce_gradcheck() {
        let logits = t(2, 3, vec![0.4, -1.2, 0.9, -0.3, 2.0, 0.1]).requires_grad(true);
        let targets = t(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let max_rel = gradcheck_tensors(
            || bce_with_logits(&logits, &targets).unwrap(),
            &[logits.clone()],
        );
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }

    #[test]
    fn matmul_nt_matches_matmul_on_transpose() {
        let a = t(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(4, 3, (0..12).map(|i| i as f64 * 0.1).collect());
        let bt = t(3, 4, transpose_raw(&b.values(), 4, 3));
        let y1 = matmul_nt(&a, &b).unwrap();
        let y2 = matmul(&a, &bt).unwrap();
        assert_eq!(y1.values(), y2.values());
    }

    #[test]
    fn row_normalize_unit_norm_and_zero_row_error() {
        let a = t(2, 2, vec![3.0, 4.0, 0.5, 0.0]);
        let y = row_l2_normalize(&a).unwrap().values();
        assert!((y[0] * y[0] + y[1] * y[1] - 1.0).abs() < 1e-12);
        let z = t(1, 2, vec![0.0, 0.0]);
        assert!(row_l2_normalize(&z).is_err());
    }

    #[test]
    fn row_normalize_gradcheck() {
        let a = t(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.3, -0.7]).requires_grad(true);
        let max_rel = gradcheck_tensors(
            || {
                let y = row_l2_normalize(&a).unwrap();
                mean_all(&mul(&y, &y).unwrap()).unwrap()
            },
            &[a.clone()],
        );
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }

    #[test]
    fn matmul_gradcheck() {
        let a = t(2, 3, vec![0.1, -0.4, 0.9, 1.1, 0.2, -0.6]).requires_grad(true);
        let b = t(3, 2, vec![0.7, -0.2, 0.3, 0.8, -0.5, 0.4]).requires_grad(true);
        let max_rel = gradcheck_tensors(
            || {
                let y = matmul(&a, &b).unwrap();
                mean_all(&mul(&y, &y).unwrap()).unwrap()
            },
            &[a.clone(), b.clone()],
        );
        assert!(max_rel < 1e-4, "max rel {max_rel}");
    }
}
