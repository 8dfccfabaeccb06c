//! Correlation-graph construction over training triplets: cosine correlation
//! matrix, density-targeted binarization, anti-over-smoothing reweighting,
//! and symmetric normalization, bundled with the node feature matrix.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::{StubEncoders, TripletRecord};
use crate::error::{val_err, Error, Result};
use crate::tensor::sparse::SparseMatrix;

pub const BUNDLE_MAGIC: &[u8; 4] = b"CGLG";

/// Off-diagonal row-sum budget of the reweighting step.
pub const REWEIGHT_BUDGET: f64 = 0.33;

pub const DEFAULT_DENSITY: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixState {
    Raw,
    Binarized,
    Reweighted,
    Normalized,
}

/// N x N correlation matrix; operations enforce the state machine
/// raw -> binarized -> reweighted -> normalized.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub state: MatrixState,
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    fn expect_state(&self, state: MatrixState, op: &str) -> Result<()> {
        if self.state != state {
            return Err(val_err(format!(
                "{op}: matrix in state {:?}, expected {state:?}",
                self.state
            )));
        }
        Ok(())
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Normalization exponent for the final step. `Symmetric` is
/// D^{-1/2} L D^{-1/2}; `LeftRaised` is the D^{1/2} L D^{-1/2} form, kept
/// selectable for auditability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationExponent {
    Symmetric,
    LeftRaised,
}

/// Cosine similarities between target feature rows. Zero-norm rows get 0
/// off-diagonal and 1 on the diagonal; their count is returned alongside.
pub fn target_correlations(features: &[f64], n: usize, d: usize) -> Result<(CorrelationMatrix, usize)> {
    if n < 2 {
        return Err(val_err("target_correlations requires at least 2 rows"));
    }
    if features.len() != n * d {
        return Err(val_err("feature matrix length does not match n x d"));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| features[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let zero_rows = norms.iter().filter(|&&v| v == 0.0).count();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let sim = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = features[i * d..(i + 1) * d]
                    .iter()
                    .zip(&features[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i * n + j] = sim;
            values[j * n + i] = sim;
        }
    }
    Ok((
        CorrelationMatrix {
            n,
            state: MatrixState::Raw,
            values,
        },
        zero_rows,
    ))
}

#[derive(Debug, Clone)]
pub struct TauChoice {
    pub tau: f64,
    pub mean_degree: f64,
    /// Set when the requested density could not be met (ties or a target
    /// below one edge per node).
    pub clamped: bool,
}

/// Smallest threshold from the sorted off-diagonal values whose mean
/// activated degree stays at or below `density * n`.
pub fn choose_tau(raw: &CorrelationMatrix, density: f64) -> Result<TauChoice> {
    raw.expect_state(MatrixState::Raw, "choose_tau")?;
    if !(0.0..1.0).contains(&density) || density == 0.0 {
        return Err(val_err(format!("density {density} outside (0, 1)")));
    }
    let n = raw.n;
    let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off.push(raw.values[i * n + j]);
            }
        }
    }
    off.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let count_at = |tau: f64| off.partition_point(|&v| v >= tau);

    let target_degree = density * n as f64;
    if target_degree < 1.0 {
        // Too small for the target: keep at least the single nearest
        // neighbor of the least-connected node.
        let min_row_max = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| raw.values[i * n + j])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        let tau = min_row_max;
        return Ok(TauChoice {
            tau,
            mean_degree: count_at(tau) as f64 / n as f64,
            clamped: true,
        });
    }

    let budget = (target_degree * n as f64).floor() as usize;
    // Walk distinct values from large to small; the count of activated
    // entries grows monotonically. Keep the smallest value still in budget.
    let mut best: Option<f64> = None;
    let mut idx = 0;
    while idx < off.len() {
        let v = off[idx];
        let c = count_at(v);
        if c <= budget {
            best = Some(v);
            idx = c; // skip past the tie block
        } else {
            break;
        }
    }
    match best {
        Some(tau) => Ok(TauChoice {
            tau,
            mean_degree: count_at(tau) as f64 / n as f64,
            clamped: false,
        }),
        None => {
            // Massive ties at the top: even the largest value overshoots.
            // Return a value just above it, clamping the density to zero
            // activated off-diagonal edges.
            let tau = next_above(off[0]);
            Ok(TauChoice {
                tau,
                mean_degree: 0.0,
                clamped: true,
            })
        }
    }
}

fn next_above(v: f64) -> f64 {
    f64::from_bits(v.to_bits() + 1)
}

/// Entry 1 iff raw value >= tau; the diagonal is forced to 1.
pub fn binarize(raw: &CorrelationMatrix, tau: f64) -> Result<CorrelationMatrix> {
    raw.expect_state(MatrixState::Raw, "binarize")?;
    if tau > 1.0 {
        return Err(val_err(format!("binarize: tau {tau} > 1")));
    }
    let n = raw.n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = if i == j || raw.values[i * n + j] >= tau {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok(CorrelationMatrix {
        n,
        state: MatrixState::Binarized,
        values,
    })
}

/// Diagonal 1; each activated off-diagonal entry gets 0.33 / deg(i). A node
/// with no neighbors keeps only its self-loop.
pub fn reweight(binarized: &CorrelationMatrix) -> Result<CorrelationMatrix> {
    binarized.expect_state(MatrixState::Binarized, "reweight")?;
    let n = binarized.n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let deg = (0..n)
            .filter(|&j| j != i && binarized.values[i * n + j] == 1.0)
            .count();
        values[i * n + i] = 1.0;
        if deg == 0 {
            continue;
        }
        let w = REWEIGHT_BUDGET / deg as f64;
        for j in 0..n {
            if j != i && binarized.values[i * n + j] == 1.0 {
                values[i * n + j] = w;
            }
        }
    }
    Ok(CorrelationMatrix {
        n,
        state: MatrixState::Reweighted,
        values,
    })
}

/// Degree-normalize with D = diag of row sums of the reweighted matrix.
pub fn normalize(
    reweighted: &CorrelationMatrix,
    exponent: NormalizationExponent,
) -> Result<CorrelationMatrix> {
    reweighted.expect_state(MatrixState::Reweighted, "normalize")?;
    let n = reweighted.n;
    let row_sums: Vec<f64> = (0..n)
        .map(|i| reweighted.values[i * n..(i + 1) * n].iter().sum())
        .collect();
    // Diagonal is 1, so row sums are strictly positive.
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let left = match exponent {
            NormalizationExponent::Symmetric => 1.0 / row_sums[i].sqrt(),
            NormalizationExponent::LeftRaised => row_sums[i].sqrt(),
        };
        for j in 0..n {
            values[i * n + j] =
                left * reweighted.values[i * n + j] / row_sums[j].sqrt();
        }
    }
    Ok(CorrelationMatrix {
        n,
        state: MatrixState::Normalized,
        values,
    })
}

/// Normalized correlation matrix plus node features, with the binarized
/// matrix retained for pseudo-labeling.
pub struct GraphBundle {
    pub n: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub tau: f64,
    pub density: f64,
    pub mean_degree: f64,
    pub fingerprint: [u8; 32],
    /// N x (d_v + d_t), row i = v_src_i (+) t_i for triplet key i.
    pub node_features: Vec<f64>,
    pub lambda_hat: Rc<SparseMatrix>,
    /// Activated columns per row of the binarized matrix, diagonal included.
    pub lambda_prime_rows: Vec<Vec<u32>>,
}

impl GraphBundle {
    pub fn prime_row(&self, key: usize) -> &[u32] {
        &self.lambda_prime_rows[key]
    }
}

fn prime_rows(binarized: &CorrelationMatrix) -> Vec<Vec<u32>> {
    let n = binarized.n;
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| binarized.values[i * n + j] == 1.0)
                .map(|j| j as u32)
                .collect()
        })
        .collect()
}

/// Run the full construction pipeline over the training triplets.
pub fn build_graph(
    triplets: &[TripletRecord],
    encoders: &StubEncoders,
    fingerprint: [u8; 32],
    density: f64,
) -> Result<GraphBundle> {
    let n = triplets.len();
    let (d_v, d_t) = (encoders.d_v, encoders.d_t);
    let mut node_features = Vec::with_capacity(n * (d_v + d_t));
    let mut targets = Vec::with_capacity(n * d_v);
    for t in triplets {
        node_features.extend(encoders.encode_image(t.source_id)?);
        node_features.extend(encoders.encode_text(&t.text)?);
        targets.extend(encoders.encode_image(t.target_id)?);
    }
    let (raw, _zero_rows) = target_correlations(&targets, n, d_v)?;
    let choice = choose_tau(&raw, density)?;
    let binarized = binarize(&raw, choice.tau.min(1.0))?;
    let reweighted = reweight(&binarized)?;
    let normalized = normalize(&reweighted, NormalizationExponent::Symmetric)?;
    Ok(GraphBundle {
        n,
        d_v,
        d_t,
        tau: choice.tau,
        density,
        mean_degree: choice.mean_degree,
        fingerprint,
        node_features,
        lambda_hat: Rc::new(SparseMatrix::from_dense(n, n, &normalized.values)),
        lambda_prime_rows: prime_rows(&binarized),
    })
}

impl GraphBundle {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(BUNDLE_MAGIC)?;
        w.write_u32::<LittleEndian>(1)?;
        w.write_u32::<LittleEndian>(self.n as u32)?;
        w.write_u32::<LittleEndian>(self.d_v as u32)?;
        w.write_u32::<LittleEndian>(self.d_t as u32)?;
        w.write_f64::<LittleEndian>(self.tau)?;
        w.write_f64::<LittleEndian>(self.density)?;
        w.write_f64::<LittleEndian>(self.mean_degree)?;
        w.write_all(&self.fingerprint)?;
        for &v in &self.node_features {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u64::<LittleEndian>(self.lambda_hat.nnz() as u64)?;
        for &(r, c, v) in &self.lambda_hat.entries {
            w.write_u32::<LittleEndian>(r)?;
            w.write_u32::<LittleEndian>(c)?;
            w.write_f64::<LittleEndian>(v)?;
        }
        let prime_nnz: usize = self.lambda_prime_rows.iter().map(|r| r.len()).sum();
        w.write_u64::<LittleEndian>(prime_nnz as u64)?;
        for (i, row) in self.lambda_prime_rows.iter().enumerate() {
            for &c in row {
                w.write_u32::<LittleEndian>(i as u32)?;
                w.write_u32::<LittleEndian>(c)?;
                w.write_f64::<LittleEndian>(1.0)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<GraphBundle> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format("bad graph bundle magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported bundle version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let d_v = r.read_u32::<LittleEndian>()? as usize;
        let d_t = r.read_u32::<LittleEndian>()? as usize;
        let tau = r.read_f64::<LittleEndian>()?;
        let density = r.read_f64::<LittleEndian>()?;
        let mean_degree = r.read_f64::<LittleEndian>()?;
        let mut fingerprint = [0u8; 32];
        r.read_exact(&mut fingerprint)?;
        let mut node_features = Vec::with_capacity(n * (d_v + d_t));
        for _ in 0..n * (d_v + d_t) {
            node_features.push(r.read_f64::<LittleEndian>()?);
        }
        let hat_nnz = r.read_u64::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(hat_nnz);
        for _ in 0..hat_nnz {
            let row = r.read_u32::<LittleEndian>()?;
            let col = r.read_u32::<LittleEndian>()?;
            let v = r.read_f64::<LittleEndian>()?;
            entries.push((row, col, v));
        }
        let prime_nnz = r.read_u64::<LittleEndian>()? as usize;
        let mut lambda_prime_rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for _ in 0..prime_nnz {
            let row = r.read_u32::<LittleEndian>()? as usize;
            let col = r.read_u32::<LittleEndian>()?;
            r.read_f64::<LittleEndian>()?;
            lambda_prime_rows[row].push(col);
        }
        Ok(GraphBundle {
            n,
            d_v,
            d_t,
            tau,
            density,
            mean_degree,
            fingerprint,
            node_features,
            lambda_hat: Rc::new(SparseMatrix {
                rows: n,
                cols: n,
                entries,
            }),
            lambda_prime_rows,
        })
    }
}
