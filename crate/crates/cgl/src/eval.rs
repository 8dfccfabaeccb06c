//! Retrieval evaluation: a normalized gallery of item features, cosine
//! ranking of composed queries against it, and Recall@K reporting.

use serde::Serialize;

use crate::composer::AnyComposer;
use crate::data::{Item, StubEncoders, TripletRecord};
use crate::error::{val_err, Result};
use crate::tensor::batchnorm::Mode;
use crate::tensor::Tensor;

/// All item features, L2-normalized, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    pub ids: Vec<usize>,
    pub d_v: usize,
    /// G x d_v, row order matches `ids`.
    pub features: Vec<f64>,
}

fn normalize_rows(features: &mut [f64], d: usize, context: &str) -> Result<()> {
    for (i, row) in features.chunks_mut(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(val_err(format!("{context}: zero-norm feature at row {i}")));
        }
        for v in row {
            *v /= norm;
        }
    }
    Ok(())
}

pub fn build_index(items: &[Item], encoders: &StubEncoders) -> Result<GalleryIndex> {
    if items.is_empty() {
        return Err(val_err("cannot build an index over zero items"));
    }
    let mut ids = Vec::with_capacity(items.len());
    let mut features = Vec::with_capacity(items.len() * encoders.d_v);
    for item in items {
        if ids.contains(&item.id) {
            return Err(val_err(format!("duplicate item id {} in gallery", item.id)));
        }
        ids.push(item.id);
        features.extend(encoders.encode_image(item.id)?);
    }
    normalize_rows(&mut features, encoders.d_v, "gallery index")?;
    Ok(GalleryIndex {
        ids,
        d_v: encoders.d_v,
        features,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecallEntry {
    pub k: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalReport {
    pub gallery_size: usize,
    pub query_count: usize,
    pub recalls: Vec<RecallEntry>,
    /// (R@10 + R@50) / 2, present when the gallery holds at least 50 items.
    pub composite: Option<f64>,
    /// 1-based rank of the ground-truth target per query.
    pub ranks: Vec<usize>,
}

impl RetrievalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recalls.iter().find(|r| r.k == k).map(|r| r.percent)
    }

    pub fn csv_header() -> String {
        "gallery_size,query_count,recall@1,recall@5,recall@10,recall@50,composite".into()
    }

    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.gallery_size,
            self.query_count,
            cell(self.recall_at(1)),
            cell(self.recall_at(5)),
            cell(self.recall_at(10)),
            cell(self.recall_at(50)),
            cell(self.composite),
        )
    }
}

fn ks_for(gallery_size: usize) -> Vec<usize> {
    let mut ks = vec![1, 5, 10];
    if gallery_size >= 50 {
        ks.push(50);
    }
    ks
}

/// Rank pre-normalized composed query rows against the index. Ties are
/// broken by ascending item id.
pub fn evaluate_features(
    composed: &[f64],
    target_ids: &[usize],
    index: &GalleryIndex,
) -> Result<RetrievalReport> {
    let d = index.d_v;
    let queries = target_ids.len();
    if composed.len() != queries * d {
        return Err(val_err("composed feature matrix does not match query count"));
    }
    let g = index.ids.len();
    let mut ranks = Vec::with_capacity(queries);
    for (q, &target) in target_ids.iter().enumerate() {
        let target_row = index
            .ids
            .iter()
            .position(|&id| id == target)
            .ok_or_else(|| val_err(format!("target id {target} absent from gallery")))?;
        let query = &composed[q * d..(q + 1) * d];
        let sim = |row: usize| -> f64 {
            index.features[row * d..(row + 1) * d]
                .iter()
                .zip(query)
                .map(|(a, b)| a * b)
                .sum()
        };
        let target_sim = sim(target_row);
        let target_id = index.ids[target_row];
        // Rank = 1 + number of gallery entries ordered ahead of the target.
        let beaten = (0..g)
            .filter(|&row| row != target_row)
            .filter(|&row| {
                let s = sim(row);
                s > target_sim || (s == target_sim && index.ids[row] < target_id)
            })
            .count();
        ranks.push(beaten + 1);
    }
    let recalls = ks_for(g)
        .into_iter()
        .map(|k| RecallEntry {
            k,
            percent: 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64
                / queries.max(1) as f64,
        })
        .collect::<Vec<_>>();
    let composite = if g >= 50 {
        let r10 = recalls.iter().find(|r| r.k == 10).unwrap().percent;
        let r50 = recalls.iter().find(|r| r.k == 50).unwrap().percent;
        Some((r10 + r50) / 2.0)
    } else {
        None
    };
    Ok(RetrievalReport {
        gallery_size: g,
        query_count: queries,
        recalls,
        composite,
        ranks,
    })
}

/// Compose every eval triplet with the composer in eval-mode normalization,
/// L2-normalize, and rank against the index.
pub fn evaluate(
    composer: &mut AnyComposer,
    triplets: &[TripletRecord],
    encoders: &StubEncoders,
    index: &GalleryIndex,
) -> Result<RetrievalReport> {
    let composed = compose_queries(composer, triplets, encoders)?;
    let target_ids: Vec<usize> = triplets.iter().map(|t| t.target_id).collect();
    evaluate_features(&composed, &target_ids, index)
}

/// The normalized composed query matrix used by `evaluate`, exposed so
/// feature export stays bitwise consistent with evaluation.
pub fn compose_queries(
    composer: &mut AnyComposer,
    triplets: &[TripletRecord],
    encoders: &StubEncoders,
) -> Result<Vec<f64>> {
    if triplets.is_empty() {
        return Err(val_err("no queries to evaluate"));
    }
    let (d_v, d_t) = (composer.d_v(), composer.d_t());
    let mut v_vals = Vec::with_capacity(triplets.len() * d_v);
    let mut t_vals = Vec::with_capacity(triplets.len() * d_t);
    for t in triplets {
        v_vals.extend(encoders.encode_image(t.source_id)?);
        t_vals.extend(encoders.encode_text(&t.text)?);
    }
    composer.set_mode(Mode::Eval);
    let out = composer.compose(
        &Tensor::matrix(triplets.len(), d_v, v_vals)?,
        &Tensor::matrix(triplets.len(), d_t, t_vals)?,
    )?;
    let mut composed = out.values();
    normalize_rows(&mut composed, d_v, "composed queries")?;
    Ok(composed)
}
