//! 1-D batch normalization with running statistics.

use crate::error::{dim_err, val_err, Result};
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct BatchNormState {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
    channels: usize,
}

impl BatchNormState {
    pub fn new(name_prefix: &str, channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || momentum == 0.0 {
            return Err(val_err(format!("batch_norm momentum {momentum} outside (0,1)")));
        }
        if eps <= 0.0 {
            return Err(val_err("batch_norm eps must be positive"));
        }
        Ok(BatchNormState {
            gamma: Parameter::new(
                format!("{name_prefix}.gamma"),
                Tensor::vector(vec![1.0; channels])?,
            ),
            beta: Parameter::new(
                format!("{name_prefix}.beta"),
                Tensor::vector(vec![0.0; channels])?,
            ),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
            mode: Mode::Train,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> Vec<Parameter> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() != 2 || shape[1] != self.channels {
            return Err(dim_err(format!(
                "batch_norm: input shape {shape:?}, expected [B, {}]",
                self.channels
            )));
        }
        let (b, d) = (shape[0], shape[1]);
        let x = input.values();
        let (mean, var) = match self.mode {
            Mode::Train => {
                if b < 2 {
                    return Err(val_err("batch_norm: train mode requires batch size >= 2"));
                }
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                for r in 0..b {
                    for c in 0..d {
                        mean[c] += x[r * d + c];
                    }
                }
                for m in &mut mean {
                    *m /= b as f64;
                }
                for r in 0..b {
                    for c in 0..d {
                        let diff = x[r * d + c] - mean[c];
                        var[c] += diff * diff;
                    }
                }
                for v in &mut var {
                    *v /= b as f64;
                }
                // Running stats use the unbiased variance estimate.
                let unbias = b as f64 / (b as f64 - 1.0);
                for c in 0..d {
                    self.running_mean[c] =
                        (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                    self.running_var[c] = (1.0 - self.momentum) * self.running_var[c]
                        + self.momentum * var[c] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; b * d];
        for r in 0..b {
            for c in 0..d {
                xhat[r * d + c] = (x[r * d + c] - mean[c]) * inv_std[c];
            }
        }
        let gv = self.gamma.tensor.values();
        let bv = self.beta.tensor.values();
        let mut values = vec![0.0; b * d];
        for r in 0..b {
            for c in 0..d {
                values[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
            }
        }

        let train = self.mode == Mode::Train;
        let (inp, gamma, beta) = (
            input.clone(),
            self.gamma.tensor.clone(),
            self.beta.tensor.clone(),
        );
        let xhat_c = xhat;
        let inv_std_c = inv_std;
        Tensor::from_op(
            vec![b, d],
            values,
            vec![input.clone(), self.gamma.tensor.clone(), self.beta.tensor.clone()],
            Box::new(move |g| {
                let gvv = gamma.values();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..b {
                    for c in 0..d {
                        dgamma[c] += g[r * d + c] * xhat_c[r * d + c];
                        dbeta[c] += g[r * d + c];
                    }
                }
                let mut dx = vec![0.0; b * d];
                if train {
                    // Batch statistics depend on the input, so fold their
                    // contributions back in.
                    for c in 0..d {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for r in 0..b {
                            let dxhat = g[r * d + c] * gvv[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat_c[r * d + c];
                        }
                        let nb = b as f64;
                        for r in 0..b {
                            let dxhat = g[r * d + c] * gvv[c];
                            dx[r * d + c] = inv_std_c[c]
                                * (dxhat
                                    - sum_dxhat / nb
                                    - xhat_c[r * d + c] * sum_dxhat_xhat / nb);
                        }
                    }
                } else {
                    for r in 0..b {
                        for c in 0..d {
                            dx[r * d + c] = g[r * d + c] * gvv[c] * inv_std_c[c];
                        }
                    }
                }
                inp.accumulate_grad(&dx);
                gamma.accumulate_grad(&dgamma);
                beta.accumulate_grad(&dbeta);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::gradcheck_tensors;
    use crate::tensor::ops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalized_input_passes_through() {
        // Columns already zero-mean unit-(biased)-var.
        let s = (2.0f64).sqrt() / 2.0; // {-s, s} has mean 0, biased var s^2*... build exactly
        let x = Tensor::matrix(2, 2, vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let mut bn = BatchNormState::new("bn", 2, 0.1, 1e-5).unwrap();
        let y = bn.forward(&x).unwrap().values();
        let xv = x.values();
        for (a, b) in y.iter().zip(&xv) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b} (s={s})");
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut bn = BatchNormState::new("bn", 2, 0.1, 1e-5).unwrap();
        bn.gamma.tensor.set_values(&[0.0, 0.0]).unwrap();
        bn.beta.tensor.set_values(&[0.7, -0.3]).unwrap();
        let y = bn.forward(&x).unwrap().values();
        assert_eq!(y, vec![0.7, -0.3, 0.7, -0.3, 0.7, -0.3]);
    }

    #[test]
    fn degenerate_batch_errors_in_train_mode() {
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bn = BatchNormState::new("bn", 2, 0.1, 1e-5).unwrap();
        assert!(bn.forward(&x).is_err());
        bn.mode = Mode::Eval;
        assert!(bn.forward(&x).is_ok());
    }

    #[test]
    fn eval_mode_uses_running_stats_only() {
        let mut bn = BatchNormState::new("bn", 2, 0.1, 1e-5).unwrap();
        bn.running_mean = vec![1.0, -1.0];
        bn.running_var = vec![4.0, 0.25];
        bn.mode = Mode::Eval;
        let x = Tensor::matrix(1, 2, vec![3.0, 0.0]).unwrap();
        let y = bn.forward(&x).unwrap().values();
        assert!((y[0] - 2.0 / (4.0 + 1e-5f64).sqrt()).abs() < 1e-12);
        assert!((y[1] - 1.0 / (0.25 + 1e-5f64).sqrt()).abs() < 1e-12);
        // Running stats untouched in eval mode.
        assert_eq!(bn.running_mean, vec![1.0, -1.0]);
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut bn = BatchNormState::new("bn", 1, 0.1, 1e-5).unwrap();
        let x = Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap();
        bn.forward(&x).unwrap();
        // mean 1, biased var 1, unbiased var 2
        assert!((bn.running_mean[0] - 0.1).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gradcheck_train_mode_4x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
            .requires_grad(true);
        // Fresh state per call keeps the forward deterministic despite the
        // running-stat updates in train mode (batch stats themselves do not
        // depend on the running stats).
        let gamma = Tensor::vector(vec![1.2, 0.8, -0.5]).unwrap().requires_grad(true);
        let beta = Tensor::vector(vec![0.1, -0.2, 0.3]).unwrap().requires_grad(true);
        let max_rel = gradcheck_tensors(
            || {
                let mut bn = BatchNormState::new("bn", 3, 0.1, 1e-5).unwrap();
                bn.gamma.tensor.set_values(&gamma.values()).unwrap();
                bn.beta.tensor.set_values(&beta.values()).unwrap();
                bn.gamma.tensor = gamma.clone();
                bn.beta.tensor = beta.clone();
                let y = bn.forward(&x).unwrap();
                ops::mean_all(&ops::mul(&y, &y).unwrap()).unwrap()
            },
            &[x.clone(), gamma.clone(), beta.clone()],
        );
        assert!(max_rel < 1e-3, "max rel {max_rel}");
    }
}
