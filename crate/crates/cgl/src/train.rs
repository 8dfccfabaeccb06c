//! Two-stage training: main-stream ranking loss, joint training with the
//! auxiliary graph stream, and the Linear+BCE / pseudo-pair baselines.

use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointConfig, STREAM_PREFIX};
use crate::composer::{AnyComposer, ComposerSpec};
use crate::data::{cosine, Dataset, StubEncoders, TripletRecord};
use crate::error::{num_err, val_err, Result};
use crate::eval::{build_index, evaluate, GalleryIndex, RetrievalReport};
use crate::gcn::{node_logits, pseudo_labels, GcnStreamState};
use crate::graph::GraphBundle;
use crate::tensor::batchnorm::Mode;
use crate::tensor::ops::{add, bce_with_logits, matmul_nt, row_l2_normalize, scale, softmax_cross_entropy_rows};
use crate::tensor::{sgd_step, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Stage1,
    Joint,
    LinearBce,
    PseudoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFrom {
    Scratch,
    Transfer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda_pair: f64,
    pub lambda_bce: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub init_from: InitFrom,
    pub similarity_temperature: f64,
    /// Minimum target cosine similarity for pseudo-pair swapping.
    pub pseudo_pair_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            lr: 0.01,
            lambda_pair: 1.0,
            lambda_bce: 1.0,
            seed: 0,
            mode: TrainMode::Stage1,
            init_from: InitFrom::Scratch,
            similarity_temperature: 10.0,
            pseudo_pair_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(val_err("batch size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(val_err("epoch count must be positive"));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(val_err("learning rate must be finite and non-negative"));
        }
        if self.lambda_pair < 0.0 || self.lambda_bce < 0.0 {
            return Err(val_err("loss weights must be non-negative"));
        }
        if self.similarity_temperature <= 0.0 {
            return Err(val_err("similarity temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pseudo_pair_threshold) || self.pseudo_pair_threshold == 0.0 {
            return Err(val_err("pseudo-pair threshold must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Step decay: factor 1/sqrt(2) every 10 epochs (epochs counted from 0).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * (1.0 / 2.0_f64.sqrt()).powi((epoch / 10) as i32)
    }
}

/// Batch-classification ranking loss: every composed row must identify its
/// own target among all batch targets.
pub fn dml_loss(composed: &Tensor, targets: &Tensor, temperature: f64) -> Result<Tensor> {
    let shape = composed.shape();
    if shape != targets.shape() {
        return Err(val_err("composed and target shapes differ"));
    }
    if shape[0] < 2 {
        return Err(val_err("ranking loss needs a batch of at least 2"));
    }
    let logits = scale(
        &matmul_nt(&row_l2_normalize(composed)?, &row_l2_normalize(targets)?)?,
        temperature,
    )?;
    let diagonal: Vec<usize> = (0..shape[0]).collect();
    softmax_cross_entropy_rows(&logits, &diagonal)
}

/// Partition a shuffled permutation of `n` keys into batches of `batch_size`;
/// a trailing batch smaller than 2 is dropped.
pub fn batch_sample(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut keys: Vec<usize> = (0..n).collect();
    keys.shuffle(rng);
    keys.chunks(batch_size)
        .filter(|chunk| chunk.len() >= 2)
        .map(|chunk| chunk.to_vec())
        .collect()
}

/// Augment the triplet list by swapping targets between highly similar
/// pairs. Pairs are taken highest-similarity first until roughly `n`
/// swapped records exist; returns the augmented list and the swap count.
pub fn generate_pseudo_pairs(
    triplets: &[TripletRecord],
    target_features: &[f64],
    d: usize,
    threshold: f64,
) -> Result<(Vec<TripletRecord>, usize)> {
    if !(0.0..=1.0).contains(&threshold) || threshold == 0.0 {
        return Err(val_err("pseudo-pair threshold must lie in (0, 1]"));
    }
    let n = triplets.len();
    if target_features.len() != n * d {
        return Err(val_err("target feature matrix does not match triplet count"));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = cosine(&target_features[i * d..(i + 1) * d], &target_features[j * d..(j + 1) * d]);
            if sim >= threshold {
                candidates.push((sim, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut augmented = triplets.to_vec();
    let mut swapped = 0usize;
    for (_, i, j) in candidates {
        if swapped >= n {
            break;
        }
        for (src, other) in [(i, j), (j, i)] {
            let mut record = triplets[src].clone();
            record.target_id = triplets[other].target_id;
            record.key = augmented.len();
            augmented.push(record);
            swapped += 1;
        }
    }
    Ok((augmented, swapped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss_pair: f64,
    pub loss_bce: f64,
    pub loss_final: f64,
    #[serde(rename = "recall@1")]
    pub recall_at_1: f64,
    #[serde(rename = "recall@5")]
    pub recall_at_5: f64,
    #[serde(rename = "recall@10")]
    pub recall_at_10: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub final_report: RetrievalReport,
    /// Records added by pseudo-pair augmentation, when that mode ran.
    pub augmented_records: Option<usize>,
}

/// Graph inputs for the joint and linear-baseline modes. The expected
/// fingerprint, when given, guards against training on a bundle built from
/// different artifacts.
pub struct GraphInputs {
    pub bundle: Rc<GraphBundle>,
    pub expected_fingerprint: Option<[u8; 32]>,
}

enum AuxBranch {
    None,
    Gcn(GcnStreamState),
    Linear(Parameter),
}

impl AuxBranch {
    fn params(&self) -> Vec<Parameter> {
        match self {
            AuxBranch::None => Vec::new(),
            AuxBranch::Gcn(state) => state.params(),
            AuxBranch::Linear(p) => vec![p.clone()],
        }
    }
}

/// Build the main composer as the trainer would before the first step:
/// fresh from the seed, or carrying the checkpoint's weights on transfer.
pub fn init_main_composer(
    config: &TrainConfig,
    spec: &ComposerSpec,
    init: Option<&Checkpoint>,
) -> Result<AnyComposer> {
    let mut composer = AnyComposer::build(spec, config.seed.wrapping_add(1))?;
    if config.init_from == InitFrom::Transfer {
        let ckpt = init.ok_or_else(|| {
            val_err("transfer initialization requires a source checkpoint")
        })?;
        composer.load_state_dict(&ckpt.main_dict())?;
    }
    Ok(composer)
}

struct EncodedBatch {
    sources: Tensor,
    texts: Tensor,
    targets: Tensor,
}

fn encode_batch(
    triplets: &[TripletRecord],
    keys: &[usize],
    encoders: &StubEncoders,
) -> Result<EncodedBatch> {
    let (d_v, d_t) = (encoders.d_v, encoders.d_t);
    let mut v = Vec::with_capacity(keys.len() * d_v);
    let mut t = Vec::with_capacity(keys.len() * d_t);
    let mut y = Vec::with_capacity(keys.len() * d_v);
    for &k in keys {
        let triplet = &triplets[k];
        v.extend(encoders.encode_image(triplet.source_id)?);
        t.extend(encoders.encode_text(&triplet.text)?);
        y.extend(encoders.encode_image(triplet.target_id)?);
    }
    Ok(EncodedBatch {
        sources: Tensor::matrix(keys.len(), d_v, v)?,
        texts: Tensor::matrix(keys.len(), d_t, t)?,
        targets: Tensor::matrix(keys.len(), d_v, y)?,
    })
}

fn build_checkpoint(
    config: &TrainConfig,
    main: &mut AnyComposer,
    aux: &mut AuxBranch,
) -> Result<Checkpoint> {
    let stream_composer = match aux {
        AuxBranch::Gcn(state) => Some(state.stream_composer.spec()),
        _ => None,
    };
    let mut ckpt = Checkpoint::new(CheckpointConfig {
        composer: main.spec(),
        stream_composer,
        extra: serde_json::to_value(config)?,
    });
    ckpt.insert_dict("", &main.state_dict())?;
    match aux {
        AuxBranch::None => {}
        AuxBranch::Gcn(state) => {
            let prefix = format!("{STREAM_PREFIX}composer.");
            ckpt.insert_dict(&prefix, &state.stream_composer.state_dict())?;
            for p in state.stack.params() {
                ckpt.insert(
                    &format!("{STREAM_PREFIX}{}", p.name),
                    p.tensor.shape(),
                    p.tensor.values(),
                )?;
            }
        }
        AuxBranch::Linear(p) => {
            ckpt.insert(
                &format!("{STREAM_PREFIX}{}", p.name),
                p.tensor.shape(),
                p.tensor.values(),
            )?;
        }
    }
    Ok(ckpt)
}

/// Run the configured training mode end to end. `latest_checkpoint`, when
/// given, is rewritten after every epoch.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    encoders: &StubEncoders,
    spec: &ComposerSpec,
    graph: Option<GraphInputs>,
    init: Option<&Checkpoint>,
    latest_checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;

    let mut main = init_main_composer(config, spec, init)?;

    let needs_graph = matches!(config.mode, TrainMode::Joint | TrainMode::LinearBce);
    let graph = match (needs_graph, graph) {
        (true, None) => {
            return Err(val_err("this training mode requires a graph bundle"))
        }
        (true, Some(g)) => {
            if let Some(expected) = g.expected_fingerprint {
                if g.bundle.fingerprint != expected {
                    return Err(val_err(
                        "graph bundle fingerprint does not match the current artifacts; rebuild the graph",
                    ));
                }
            }
            if g.bundle.n != dataset.train.len() {
                return Err(val_err(
                    "graph bundle node count does not match the training split",
                ));
            }
            Some(g.bundle)
        }
        (false, _) => None,
    };

    let mut aux = match config.mode {
        TrainMode::Stage1 | TrainMode::PseudoPairs => AuxBranch::None,
        TrainMode::Joint => {
            let bundle = graph.clone().unwrap();
            let stream = main.clone_architecture(config.seed.wrapping_add(2))?;
            AuxBranch::Gcn(GcnStreamState::new(bundle, stream, config.seed.wrapping_add(3))?)
        }
        TrainMode::LinearBce => {
            let bundle = graph.clone().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(4));
            let bound = (1.0 / main.d_v() as f64).sqrt();
            let values: Vec<f64> = (0..bundle.n * main.d_v())
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            AuxBranch::Linear(Parameter {
                name: "linear.w_out".into(),
                tensor: Tensor::matrix(bundle.n, main.d_v(), values)?.requires_grad(true),
            })
        }
    };

    // Pseudo-pair augmentation acts on the training list before any epoch.
    let mut augmented_records = None;
    let train_list: Vec<TripletRecord> = if config.mode == TrainMode::PseudoPairs {
        let d_v = encoders.d_v;
        let mut target_features = Vec::with_capacity(dataset.train.len() * d_v);
        for t in &dataset.train {
            target_features.extend(encoders.encode_image(t.target_id)?);
        }
        let (augmented, swapped) = generate_pseudo_pairs(
            &dataset.train,
            &target_features,
            d_v,
            config.pseudo_pair_threshold,
        )?;
        if swapped == 0 {
            eprintln!("warning: no triplet pairs met the pseudo-pair threshold; training on originals");
        }
        augmented_records = Some(swapped);
        augmented
    } else {
        dataset.train.clone()
    };

    let index = build_index(&dataset.items, encoders)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = main.params();
    params.extend(aux.params());

    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        main.set_mode(Mode::Train);
        if let AuxBranch::Gcn(state) = &mut aux {
            state.set_mode(Mode::Train);
        }
        let batches = batch_sample(train_list.len(), config.batch_size, &mut shuffle_rng);
        let (mut sum_pair, mut sum_bce, mut sum_final) = (0.0, 0.0, 0.0);
        for keys in &batches {
            let batch = encode_batch(&train_list, keys, encoders)?;
            let composed = main.compose(&batch.sources, &batch.texts)?;
            let l_pair = dml_loss(&composed, &batch.targets, config.similarity_temperature)?;
            let weighted_pair = scale(&l_pair, config.lambda_pair)?;

            let (l_final, bce_value) = match &mut aux {
                AuxBranch::None => (weighted_pair, 0.0),
                branch => {
                    let bundle = graph.as_ref().unwrap();
                    let w_out = match branch {
                        AuxBranch::Gcn(state) => state.stream_forward()?,
                        AuxBranch::Linear(p) => p.tensor.clone(),
                        AuxBranch::None => unreachable!(),
                    };
                    let logits = node_logits(&composed, &w_out)?;
                    let labels = pseudo_labels(bundle, keys)?;
                    let l_bce = bce_with_logits(&logits, &labels)?;
                    let total = add(&weighted_pair, &scale(&l_bce, config.lambda_bce)?)?;
                    (total, l_bce.values()[0])
                }
            };

            let pair_value = l_pair.values()[0];
            let final_value = l_final.values()[0];
            if !final_value.is_finite() {
                return Err(num_err(format!(
                    "non-finite loss at epoch {epoch} (pair {pair_value}, bce {bce_value})"
                )));
            }
            let recomposed = config.lambda_pair * pair_value + config.lambda_bce * bce_value;
            if (final_value - recomposed).abs() > 1e-12 {
                return Err(num_err(format!(
                    "loss decomposition violated at epoch {epoch}: {final_value} vs {recomposed}"
                )));
            }

            l_final.backward()?;
            sgd_step(&params, lr)?;
            sum_pair += pair_value;
            sum_bce += bce_value;
            sum_final += final_value;
        }

        let nb = batches.len().max(1) as f64;
        let report = evaluate(&mut main, &dataset.eval, encoders, &index)?;
        metrics.push(EpochMetrics {
            epoch,
            lr,
            loss_pair: sum_pair / nb,
            loss_bce: sum_bce / nb,
            loss_final: sum_final / nb,
            recall_at_1: report.recall_at(1).unwrap_or(0.0),
            recall_at_5: report.recall_at(5).unwrap_or(0.0),
            recall_at_10: report.recall_at(10).unwrap_or(0.0),
        });
        if let Some(path) = latest_checkpoint {
            build_checkpoint(config, &mut main, &mut aux)?.write(path)?;
        }
    }

    let final_report = evaluate(&mut main, &dataset.eval, encoders, &index)?;
    Ok(TrainOutcome {
        checkpoint: build_checkpoint(config, &mut main, &mut aux)?,
        metrics,
        final_report,
        augmented_records,
    })
}

/// Evaluate a checkpoint's main composer against a gallery index.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    triplets: &[TripletRecord],
    encoders: &StubEncoders,
    index: &GalleryIndex,
) -> Result<RetrievalReport> {
    let mut composer = AnyComposer::build(&ckpt.config.composer, 0)?;
    composer.load_state_dict(&ckpt.main_dict())?;
    evaluate(&mut composer, triplets, encoders, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::ComposerConfig;
    use crate::data::{generate_dataset, DatasetConfig};
    use crate::graph::build_graph;

    fn tiny_dataset(seed: u64) -> (Dataset, StubEncoders) {
        let config = DatasetConfig {
            item_count: 64,
            train_triplets: 24,
            eval_triplets: 8,
            d_v: 16,
            d_t: 8,
            seed,
            ..DatasetConfig::default()
        };
        generate_dataset(&config).unwrap()
    }

    fn tiny_config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 2,
            mode,
            ..TrainConfig::default()
        }
    }

    fn rtic_spec() -> ComposerSpec {
        ComposerSpec::Rtic(ComposerConfig::variant('a', 16, 8).unwrap())
    }

    #[test]
    fn lr_schedule_closed_form() {
        let config = TrainConfig::default();
        let factor = 1.0 / 2.0_f64.sqrt();
        for epoch in 0..40 {
            let expected = 0.01 * factor.powi((epoch / 10) as i32);
            assert!((config.lr_at(epoch) - expected).abs() < 1e-12);
        }
        assert_eq!(config.lr_at(9), 0.01);
        assert!((config.lr_at(10) - 0.01 * factor).abs() < 1e-15);
    }

    #[test]
    fn dml_loss_perfect_alignment_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f64> = (0..4 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = Tensor::matrix(4, 6, m.clone()).unwrap();
        let b = Tensor::matrix(4, 6, m).unwrap();
        let loss = dml_loss(&a, &b, 1000.0).unwrap();
        assert!(loss.values()[0] < 1e-6, "{}", loss.values()[0]);
    }

    #[test]
    fn dml_loss_identical_rows_is_ln_b() {
        let row = vec![0.3, -0.7, 0.2];
        let mut m = Vec::new();
        for _ in 0..5 {
            m.extend(&row);
        }
        let a = Tensor::matrix(5, 3, m.clone()).unwrap();
        let b = Tensor::matrix(5, 3, m).unwrap();
        for temperature in [1.0, 10.0, 100.0] {
            let loss = dml_loss(&a, &b, temperature).unwrap();
            assert!((loss.values()[0] - 5.0_f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dml_loss_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (b, d, temp) = (4, 5, 10.0);
        let cm: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tm: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = dml_loss(
            &Tensor::matrix(b, d, cm.clone()).unwrap(),
            &Tensor::matrix(b, d, tm.clone()).unwrap(),
            temp,
        )
        .unwrap();

        let norm = |v: &[f64]| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let mut expected = 0.0;
        for i in 0..b {
            let q = norm(&cm[i * d..(i + 1) * d]);
            let logits: Vec<f64> = (0..b)
                .map(|j| {
                    let t = norm(&tm[j * d..(j + 1) * d]);
                    temp * q.iter().zip(&t).map(|(x, y)| x * y).sum::<f64>()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            expected += -(logits[i] - max) + z.ln();
        }
        expected /= b as f64;
        assert!((loss.values()[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn dml_loss_rejects_zero_norm_and_tiny_batches() {
        let a = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(dml_loss(&a, &b, 10.0).is_err());
        let single = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(dml_loss(&single, &single, 10.0).is_err());
    }

    #[test]
    fn batch_sample_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Full batch = a permutation.
        let batches = batch_sample(10, 10, &mut rng);
        assert_eq!(batches.len(), 1);
        let mut sorted = batches[0].clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());

        // Coverage and distinctness; short trailing batch of 1 dropped.
        let batches = batch_sample(13, 4, &mut rng);
        assert_eq!(batches.len(), 3);
        let mut seen: Vec<usize> = batches.iter().flatten().cloned().collect();
        let total = seen.len();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), total);

        // Trailing batch of exactly 2 kept.
        let batches = batch_sample(10, 4, &mut rng);
        assert_eq!(batches.last().unwrap().len(), 2);
    }

    #[test]
    fn pseudo_pairs_identical_targets_and_audit() {
        let (d, e) = tiny_dataset(41);
        let mut target_features = Vec::new();
        for t in &d.train {
            target_features.extend(e.encode_image(t.target_id).unwrap());
        }
        let (augmented, swapped) =
            generate_pseudo_pairs(&d.train, &target_features, e.d_v, 0.5).unwrap();
        assert_eq!(augmented.len(), d.train.len() + swapped);
        assert!(swapped <= d.train.len());
        // Swapped records preserve source and text, change only the target.
        for (offset, record) in augmented[d.train.len()..].iter().enumerate() {
            assert_eq!(record.key, d.train.len() + offset);
            let original = d
                .train
                .iter()
                .find(|t| t.source_id == record.source_id && t.text == record.text)
                .expect("source/text must come from an original record");
            assert_eq!(record.source_id, original.source_id);
        }

        // Two triplets with identical targets swap into copies of themselves.
        let pair = vec![d.train[0].clone(), {
            let mut t = d.train[1].clone();
            t.target_id = d.train[0].target_id;
            t.key = 1;
            t
        }];
        let mut feats = Vec::new();
        for t in &pair {
            feats.extend(e.encode_image(t.target_id).unwrap());
        }
        let (augmented, swapped) = generate_pseudo_pairs(&pair, &feats, e.d_v, 0.99).unwrap();
        assert_eq!(swapped, 2);
        assert_eq!(augmented[2].target_id, pair[0].target_id);
        assert_eq!(augmented[2].source_id, pair[0].source_id);
        assert_eq!(augmented[3].target_id, pair[1].target_id);
    }

    #[test]
    fn pseudo_pairs_threshold_above_max_yields_originals() {
        let (d, e) = tiny_dataset(43);
        // Pick triplets with distinct targets so no similarity reaches 1.
        let mut chosen: Vec<TripletRecord> = Vec::new();
        for t in &d.train {
            if !chosen.iter().any(|c| c.target_id == t.target_id) {
                chosen.push(t.clone());
            }
            if chosen.len() == 6 {
                break;
            }
        }
        let mut feats = Vec::new();
        for t in &chosen {
            feats.extend(e.encode_image(t.target_id).unwrap());
        }
        let max_sim = (0..chosen.len())
            .flat_map(|i| {
                let feats = &feats;
                ((i + 1)..chosen.len()).map(move |j| {
                    cosine(&feats[i * e.d_v..(i + 1) * e.d_v], &feats[j * e.d_v..(j + 1) * e.d_v])
                })
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_sim < 1.0);
        let threshold = (max_sim + (1.0 - max_sim) / 2.0).min(1.0);
        let (augmented, swapped) =
            generate_pseudo_pairs(&chosen, &feats, e.d_v, threshold).unwrap();
        assert_eq!(swapped, 0);
        assert_eq!(augmented.len(), chosen.len());
    }

    #[test]
    fn zero_lr_training_is_identity() {
        let (d, e) = tiny_dataset(47);
        let config = TrainConfig {
            lr: 0.0,
            ..tiny_config(TrainMode::Stage1)
        };
        let initial = init_main_composer(&config, &rtic_spec(), None).unwrap();
        let initial_values: Vec<Vec<f64>> =
            initial.params().iter().map(|p| p.tensor.values()).collect();
        let outcome = train(&config, &d, &e, &rtic_spec(), None, None, None).unwrap();
        let mut rebuilt = AnyComposer::build(&rtic_spec(), 0).unwrap();
        rebuilt.load_state_dict(&outcome.checkpoint.main_dict()).unwrap();
        let final_values: Vec<Vec<f64>> =
            rebuilt.params().iter().map(|p| p.tensor.values()).collect();
        assert_eq!(initial_values, final_values);
    }

    #[test]
    fn same_seed_runs_are_identical() {
        let (d, e) = tiny_dataset(53);
        let config = tiny_config(TrainMode::Stage1);
        let a = train(&config, &d, &e, &rtic_spec(), None, None, None).unwrap();
        let b = train(&config, &d, &e, &rtic_spec(), None, None, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a.metrics).unwrap(),
            serde_json::to_string(&b.metrics).unwrap()
        );
        for (name, (shape, values)) in &a.checkpoint.entries {
            let (bs, bv) = &b.checkpoint.entries[name];
            assert_eq!(shape, bs);
            assert_eq!(values, bv);
        }
    }

    fn graph_inputs(d: &Dataset, e: &StubEncoders) -> GraphInputs {
        GraphInputs {
            bundle: Rc::new(build_graph(&d.train, e, [9; 32], 0.15).unwrap()),
            expected_fingerprint: Some([9; 32]),
        }
    }

    #[test]
    fn joint_training_logs_both_components() {
        let (d, e) = tiny_dataset(59);
        let config = tiny_config(TrainMode::Joint);
        let outcome = train(
            &config,
            &d,
            &e,
            &rtic_spec(),
            Some(graph_inputs(&d, &e)),
            None,
            None,
        )
        .unwrap();
        assert_eq!(outcome.metrics.len(), 2);
        for m in &outcome.metrics {
            assert!(m.loss_pair.is_finite() && m.loss_pair > 0.0);
            assert!(m.loss_bce.is_finite() && m.loss_bce > 0.0);
            assert!((m.loss_final - (m.loss_pair + m.loss_bce)).abs() < 1e-9);
        }
        // Checkpoint carries both main and stream entries.
        assert!(outcome.checkpoint.entries.keys().any(|k| k.starts_with(STREAM_PREFIX)));
        assert!(!outcome.checkpoint.main_dict().is_empty());
    }

    #[test]
    fn joint_with_zero_bce_matches_stage1_trajectory() {
        let (d, e) = tiny_dataset(61);
        let stage1 = train(
            &tiny_config(TrainMode::Stage1),
            &d,
            &e,
            &rtic_spec(),
            None,
            None,
            None,
        )
        .unwrap();
        let config = TrainConfig {
            lambda_bce: 0.0,
            ..tiny_config(TrainMode::Joint)
        };
        let joint = train(
            &config,
            &d,
            &e,
            &rtic_spec(),
            Some(graph_inputs(&d, &e)),
            None,
            None,
        )
        .unwrap();
        for (name, (_, values)) in &stage1.checkpoint.entries {
            assert_eq!(values, &joint.checkpoint.entries[name].1, "entry {name}");
        }
    }

    #[test]
    fn zero_pair_weight_still_updates_main_composer() {
        let (d, e) = tiny_dataset(67);
        let config = TrainConfig {
            lambda_pair: 0.0,
            epochs: 1,
            ..tiny_config(TrainMode::Joint)
        };
        let scratch = init_main_composer(&config, &rtic_spec(), None).unwrap();
        let before: Vec<Vec<f64>> = scratch.params().iter().map(|p| p.tensor.values()).collect();
        let outcome = train(
            &config,
            &d,
            &e,
            &rtic_spec(),
            Some(graph_inputs(&d, &e)),
            None,
            None,
        )
        .unwrap();
        let mut rebuilt = AnyComposer::build(&rtic_spec(), 0).unwrap();
        rebuilt.load_state_dict(&outcome.checkpoint.main_dict()).unwrap();
        let after: Vec<Vec<f64>> = rebuilt.params().iter().map(|p| p.tensor.values()).collect();
        assert_ne!(before, after);
    }

    #[test]
    fn stale_fingerprint_is_rejected() {
        let (d, e) = tiny_dataset(71);
        let graph = GraphInputs {
            bundle: Rc::new(build_graph(&d.train, &e, [9; 32], 0.15).unwrap()),
            expected_fingerprint: Some([1; 32]),
        };
        let err = train(
            &tiny_config(TrainMode::Joint),
            &d,
            &e,
            &rtic_spec(),
            Some(graph),
            None,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("fingerprint"));
    }

    #[test]
    fn joint_mode_requires_bundle() {
        let (d, e) = tiny_dataset(73);
        assert!(train(
            &tiny_config(TrainMode::Joint),
            &d,
            &e,
            &rtic_spec(),
            None,
            None,
            None
        )
        .is_err());
    }

    #[test]
    fn linear_bce_runs_with_finite_losses() {
        let (d, e) = tiny_dataset(79);
        let outcome = train(
            &tiny_config(TrainMode::LinearBce),
            &d,
            &e,
            &rtic_spec(),
            Some(graph_inputs(&d, &e)),
            None,
            None,
        )
        .unwrap();
        for m in &outcome.metrics {
            assert!(m.loss_final.is_finite());
            assert!(m.loss_bce > 0.0);
        }
        assert!(outcome
            .checkpoint
            .entries
            .contains_key("gcn_stream/linear.w_out"));
    }

    #[test]
    fn pseudo_pair_mode_logs_augmentation() {
        let (d, e) = tiny_dataset(83);
        let outcome = train(
            &tiny_config(TrainMode::PseudoPairs),
            &d,
            &e,
            &rtic_spec(),
            None,
            None,
            None,
        )
        .unwrap();
        let swapped = outcome.augmented_records.unwrap();
        assert!(swapped <= d.train.len());
        for m in &outcome.metrics {
            assert!(m.loss_final.is_finite());
        }
    }

    #[test]
    fn transfer_init_reproduces_checkpoint_evaluation() {
        let (d, e) = tiny_dataset(89);
        let stage1 = train(
            &tiny_config(TrainMode::Stage1),
            &d,
            &e,
            &rtic_spec(),
            None,
            None,
            None,
        )
        .unwrap();
        let index = build_index(&d.items, &e).unwrap();
        let baseline =
            evaluate_checkpoint(&stage1.checkpoint, &d.eval, &e, &index).unwrap();

        let config = TrainConfig {
            init_from: InitFrom::Transfer,
            ..tiny_config(TrainMode::Joint)
        };
        let mut transferred =
            init_main_composer(&config, &rtic_spec(), Some(&stage1.checkpoint)).unwrap();
        let epoch0 = evaluate(&mut transferred, &d.eval, &e, &index).unwrap();
        assert_eq!(baseline.ranks, epoch0.ranks);
        assert_eq!(
            serde_json::to_string(&baseline).unwrap(),
            serde_json::to_string(&epoch0).unwrap()
        );

        // Transfer without a checkpoint is a usage problem.
        assert!(init_main_composer(&config, &rtic_spec(), None).is_err());
    }

    #[test]
    fn training_reduces_loss_on_tiny_data() {
        let (d, e) = tiny_dataset(97);
        let config = TrainConfig {
            epochs: 12,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let outcome = train(&config, &d, &e, &rtic_spec(), None, None, None).unwrap();
        let first = outcome.metrics.first().unwrap().loss_final;
        let last = outcome.metrics.last().unwrap().loss_final;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }
}
