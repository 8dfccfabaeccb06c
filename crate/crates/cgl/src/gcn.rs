//! Auxiliary graph-convolutional stream: a separate composer over node
//! features, a small GCN stack over the normalized correlation matrix, and
//! the node-classification heads that regularize the main composer.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composer::AnyComposer;
use crate::error::{dim_err, val_err, Result};
use crate::graph::GraphBundle;
use crate::tensor::batchnorm::Mode;
use crate::tensor::ops::{matmul, matmul_nt, relu};
use crate::tensor::sparse::{spmm, SparseMatrix};
use crate::tensor::{Parameter, Tensor};

/// One propagation step: ReLU(Λ̂ · h · w), with the activation optional so
/// the final layer can stay logit-compatible.
pub fn gcn_layer(
    lambda_hat: &Rc<SparseMatrix>,
    h: &Tensor,
    w: &Tensor,
    activate: bool,
) -> Result<Tensor> {
    let mixed = spmm(lambda_hat, &matmul(h, w)?)?;
    if activate {
        relu(&mixed)
    } else {
        Ok(mixed)
    }
}

/// Stack of bias-free graph convolutions, ReLU on all but the last layer.
pub struct GcnStack {
    layers: Vec<Parameter>,
}

impl GcnStack {
    /// Two layers with widths d_v -> d_v -> d_v.
    pub fn new(d_v: usize, seed: u64) -> Result<GcnStack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / d_v as f64).sqrt();
        let layers = (0..2)
            .map(|l| {
                let values: Vec<f64> =
                    (0..d_v * d_v).map(|_| rng.gen_range(-bound..bound)).collect();
                Ok(Parameter {
                    name: format!("stack.l{l}.w"),
                    tensor: Tensor::matrix(d_v, d_v, values)?.requires_grad(true),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GcnStack { layers })
    }

    pub fn forward(&self, lambda_hat: &Rc<SparseMatrix>, h: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut out = h.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            out = gcn_layer(lambda_hat, &out, &layer.tensor, l < last)?;
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<Parameter> {
        self.layers.clone()
    }
}

/// The full auxiliary branch. Holds the graph bundle, its own composer (not
/// shared with the main stream), and the GCN stack; the node feature matrix
/// is split once into image and text halves.
pub struct GcnStreamState {
    pub bundle: Rc<GraphBundle>,
    pub stream_composer: AnyComposer,
    pub stack: GcnStack,
    v_bar: Tensor,
    t_bar: Tensor,
}

impl GcnStreamState {
    pub fn new(
        bundle: Rc<GraphBundle>,
        stream_composer: AnyComposer,
        seed: u64,
    ) -> Result<GcnStreamState> {
        if stream_composer.d_v() != bundle.d_v || stream_composer.d_t() != bundle.d_t {
            return Err(val_err(format!(
                "stream composer dims ({}, {}) do not match graph bundle dims ({}, {})",
                stream_composer.d_v(),
                stream_composer.d_t(),
                bundle.d_v,
                bundle.d_t
            )));
        }
        let (n, d_v, d_t) = (bundle.n, bundle.d_v, bundle.d_t);
        let mut v_vals = Vec::with_capacity(n * d_v);
        let mut t_vals = Vec::with_capacity(n * d_t);
        for row in bundle.node_features.chunks(d_v + d_t) {
            v_vals.extend_from_slice(&row[..d_v]);
            t_vals.extend_from_slice(&row[d_v..]);
        }
        let stack = GcnStack::new(d_v, seed)?;
        Ok(GcnStreamState {
            bundle,
            stream_composer,
            stack,
            v_bar: Tensor::matrix(n, d_v, v_vals)?,
            t_bar: Tensor::matrix(n, d_t, t_vals)?,
        })
    }

    /// Compose every node's features and propagate through the stack.
    /// Recomputed each optimization step since both parts are learning.
    pub fn stream_forward(&mut self) -> Result<Tensor> {
        let h_tilde = self.stream_composer.compose(&self.v_bar, &self.t_bar)?;
        self.stack.forward(&self.bundle.lambda_hat, &h_tilde)
    }

    pub fn params(&self) -> Vec<Parameter> {
        let mut params = self.stream_composer.params();
        params.extend(self.stack.params());
        params
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.stream_composer.set_mode(mode);
    }

    /// The split halves of the node feature matrix.
    pub fn split(&self) -> (&Tensor, &Tensor) {
        (&self.v_bar, &self.t_bar)
    }
}

/// Node-classification logits: composed batch outputs projected onto the
/// stream output, one score per graph node.
pub fn node_logits(main_out: &Tensor, w_out: &Tensor) -> Result<Tensor> {
    matmul_nt(main_out, w_out)
}

/// Multi-hot classification targets: row b is the binarized correlation row
/// of the b-th batch key (self-entry always 1).
pub fn pseudo_labels(bundle: &GraphBundle, batch_keys: &[usize]) -> Result<Tensor> {
    let n = bundle.n;
    let mut values = vec![0.0; batch_keys.len() * n];
    for (b, &key) in batch_keys.iter().enumerate() {
        if key >= n {
            return Err(dim_err(format!("batch key {key} out of range for {n} nodes")));
        }
        for &j in bundle.prime_row(key) {
            values[b * n + j as usize] = 1.0;
        }
    }
    Tensor::matrix(batch_keys.len(), n, values)
}
