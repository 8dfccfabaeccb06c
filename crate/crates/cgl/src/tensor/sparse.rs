//! Constant sparse matrices (COO, row-major order) and sparse-dense products.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// (row, col, value) triples sorted row-major.
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseMatrix {
    pub fn from_dense(rows: usize, cols: usize, values: &[f64]) -> SparseMatrix {
        let mut entries = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = values[r * cols + c];
                if v != 0.0 {
                    entries.push((r as u32, c as u32, v));
                }
            }
        }
        SparseMatrix { rows, cols, entries }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.entries {
            out[r as usize * self.cols + c as usize] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    fn mul_dense(&self, h: &[f64], width: usize, transpose_self: bool) -> Vec<f64> {
        let out_rows = if transpose_self { self.cols } else { self.rows };
        let mut out = vec![0.0; out_rows * width];
        for &(r, c, v) in &self.entries {
            let (i, j) = if transpose_self {
                (c as usize, r as usize)
            } else {
                (r as usize, c as usize)
            };
            let src = &h[j * width..(j + 1) * width];
            let dst = &mut out[i * width..(i + 1) * width];
            for k in 0..width {
                dst[k] += v * src[k];
            }
        }
        out
    }
}

/// sp[N x M] . h[M x D] -> [N x D]; the sparse factor is constant, so only
/// `h` receives gradient (sp^T . g).
pub fn spmm(sp: &Rc<SparseMatrix>, h: &Tensor) -> Result<Tensor> {
    let shape = h.shape();
    if shape.len() != 2 || shape[0] != sp.cols {
        return Err(dim_err(format!(
            "spmm: sparse [{}, {}] vs dense {:?}",
            sp.rows, sp.cols, shape
        )));
    }
    let width = shape[1];
    let values = sp.mul_dense(&h.values(), width, false);
    let hc = h.clone();
    let spc = Rc::clone(sp);
    Tensor::from_op(vec![sp.rows, width], values, vec![h.clone()], Box::new(move |g| {
        hc.accumulate_grad(&spc.mul_dense(g, width, true));
    }))
}
