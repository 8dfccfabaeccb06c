//! Command implementations behind the CLI: each resolves its configuration,
//! validates inputs up front, runs the corresponding library pipeline, and
//! records a manifest with input/output hashes.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::composer::{AnyComposer, ComposerConfig, ComposerSpec};
use crate::data::{files, generate_dataset, Dataset, DatasetConfig, ModificationText, TripletRecord};
use crate::error::{num_err, val_err, Error, Result};
use crate::eval::{build_index, compose_queries, evaluate, RetrievalReport};
use crate::gcn::GcnStack;
use crate::graph::{build_graph, GraphBundle};
use crate::tensor::batchnorm::Mode;
use crate::tensor::gradcheck::gradcheck;
use crate::tensor::ops;
use crate::tensor::sparse::SparseMatrix;
use crate::tensor::Tensor;
use crate::train::{train, GraphInputs, InitFrom, TrainConfig, TrainMode};

fn usage_err(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// CGL_SEED overrides any seed flag; a malformed value is a usage error.
pub fn resolve_seed(flag_seed: u64) -> Result<u64> {
    match std::env::var("CGL_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| usage_err(format!("CGL_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(flag_seed),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fingerprint tying a graph bundle to the encoder and checkpoint files it
/// was built from.
pub fn artifact_fingerprint(encoders_path: &Path, checkpoint_path: &Path) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(encoders_path)?);
    hasher.update(std::fs::read(checkpoint_path)?);
    Ok(hasher.finalize().into())
}

/// Write through a temp file in the same directory so interrupted runs never
/// leave a partial file at the target path.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| usage_err(format!("output path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    write(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input path -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> sha256.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub notes: serde_json::Value,
}

struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    notes: serde_json::Value,
    started: Instant,
}

impl ManifestBuilder {
    fn new(command: &str, config: serde_json::Value, seed: u64) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            notes: serde_json::Value::Null,
            started: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn finish(self, manifest_path: &Path) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for path in &self.outputs {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            outputs.insert(name, sha256_file(path)?);
        }
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            notes: self.notes,
        };
        write_atomic(manifest_path, |tmp| {
            Ok(std::fs::write(tmp, serde_json::to_vec_pretty(&manifest)?)?)
        })?;
        Ok(manifest)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// gen-data

pub struct GenDataArgs {
    pub out: PathBuf,
    pub config: DatasetConfig,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<RunManifest> {
    let seed = resolve_seed(args.config.seed)?;
    let mut config = args.config.clone();
    config.seed = seed;
    let mut manifest =
        ManifestBuilder::new("gen-data", serde_json::to_value(&config)?, seed);

    let (dataset, encoders) = generate_dataset(&config)?;
    std::fs::create_dir_all(&args.out)?;
    dataset.write(&args.out)?;
    write_atomic(&args.out.join(files::ENCODERS), |tmp| encoders.write(tmp))?;

    for name in [files::ITEMS, files::TRAIN, files::EVAL, files::VOCAB, files::ENCODERS] {
        manifest.output(&args.out.join(name));
    }
    manifest.finish(&args.out.join(MANIFEST_FILE))
}

// ---------------------------------------------------------------------------
// train

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
    pub composer: ComposerSpec,
    pub graph: Option<PathBuf>,
    /// Stage-1 checkpoint: required for transfer initialization, and used to
    /// verify the graph bundle's fingerprint when present.
    pub stage1_checkpoint: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let seed = resolve_seed(args.config.seed)?;
    let mut config = args.config.clone();
    config.seed = seed;
    config.validate()?;

    let needs_graph = matches!(config.mode, TrainMode::Joint | TrainMode::LinearBce);
    if needs_graph && args.graph.is_none() {
        return Err(usage_err(format!(
            "training mode {:?} requires --graph",
            config.mode
        )));
    }
    if config.init_from == InitFrom::Transfer && args.stage1_checkpoint.is_none() {
        return Err(usage_err("--init transfer requires --stage1-checkpoint"));
    }
    for name in [files::ITEMS, files::TRAIN, files::EVAL, files::VOCAB, files::ENCODERS] {
        let path = args.data.join(name);
        if !path.is_file() {
            return Err(usage_err(format!("missing dataset file {}", path.display())));
        }
    }
    if let Some(path) = &args.graph {
        if !path.is_file() {
            return Err(usage_err(format!("missing graph bundle {}", path.display())));
        }
    }
    if let Some(path) = &args.stage1_checkpoint {
        if !path.is_file() {
            return Err(usage_err(format!("missing checkpoint {}", path.display())));
        }
    }

    let mut manifest = ManifestBuilder::new(
        "train",
        serde_json::json!({
            "train": config,
            "composer": args.composer,
        }),
        seed,
    );
    for name in [files::ITEMS, files::TRAIN, files::EVAL, files::VOCAB, files::ENCODERS] {
        manifest.input(&args.data.join(name))?;
    }

    let dataset = Dataset::read(&args.data)?;
    let encoders = dataset.read_encoders(&args.data)?;

    let graph = match &args.graph {
        None => None,
        Some(path) => {
            manifest.input(path)?;
            let bundle = GraphBundle::read(path)?;
            let expected_fingerprint = match &args.stage1_checkpoint {
                Some(ckpt_path) => Some(artifact_fingerprint(
                    &args.data.join(files::ENCODERS),
                    ckpt_path,
                )?),
                None => None,
            };
            Some(GraphInputs {
                bundle: Rc::new(bundle),
                expected_fingerprint,
            })
        }
    };
    let init = match &args.stage1_checkpoint {
        Some(path) => {
            manifest.input(path)?;
            Some(Checkpoint::read(path)?)
        }
        None => None,
    };

    std::fs::create_dir_all(&args.out)?;
    let checkpoint_path = args.out.join(CHECKPOINT_FILE);
    let outcome = train(
        &config,
        &dataset,
        &encoders,
        &args.composer,
        graph,
        init.as_ref(),
        Some(&checkpoint_path),
    )?;
    outcome.checkpoint.write(&checkpoint_path)?;

    let metrics_path = args.out.join(METRICS_FILE);
    write_atomic(&metrics_path, |tmp| {
        let mut f = std::fs::File::create(tmp)?;
        for m in &outcome.metrics {
            writeln!(f, "{}", serde_json::to_string(m)?)?;
        }
        Ok(())
    })?;

    manifest.output(&checkpoint_path);
    manifest.output(&metrics_path);
    manifest.notes = serde_json::json!({
        "training_records": dataset.train.len()
            + outcome.augmented_records.unwrap_or(0),
        "augmented_records": outcome.augmented_records,
        "final_recall@10": outcome.final_report.recall_at(10),
    });
    manifest.finish(&args.out.join(MANIFEST_FILE))
}

// ---------------------------------------------------------------------------
// build-graph

pub struct BuildGraphArgs {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub density: f64,
    pub seed: u64,
}

pub fn cmd_build_graph(args: &BuildGraphArgs) -> Result<RunManifest> {
    let seed = resolve_seed(args.seed)?;
    if !args.checkpoint.is_file() {
        return Err(usage_err(format!(
            "missing stage-1 checkpoint {}",
            args.checkpoint.display()
        )));
    }
    let encoders_path = args.data.join(files::ENCODERS);
    if !encoders_path.is_file() {
        return Err(usage_err(format!("missing encoders file {}", encoders_path.display())));
    }
    Checkpoint::read(&args.checkpoint)?;

    let mut manifest = ManifestBuilder::new(
        "build-graph",
        serde_json::json!({ "density": args.density }),
        seed,
    );
    manifest.input(&encoders_path)?;
    manifest.input(&args.checkpoint)?;

    let dataset = Dataset::read(&args.data)?;
    let encoders = dataset.read_encoders(&args.data)?;
    let fingerprint = artifact_fingerprint(&encoders_path, &args.checkpoint)?;
    let bundle = build_graph(&dataset.train, &encoders, fingerprint, args.density)?;
    write_atomic(&args.out, |tmp| bundle.write(tmp))?;

    println!(
        "graph: N={} tau={:.6} target_density={} achieved_mean_degree={:.3}",
        bundle.n, bundle.tau, bundle.density, bundle.mean_degree
    );
    manifest.output(&args.out);
    manifest.notes = serde_json::json!({
        "n": bundle.n,
        "tau": bundle.tau,
        "mean_degree": bundle.mean_degree,
    });
    manifest.finish(&manifest_sibling(&args.out))
}

fn manifest_sibling(output_file: &Path) -> PathBuf {
    let name = output_file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    output_file.with_file_name(format!("{name}.manifest.json"))
}

// ---------------------------------------------------------------------------
// eval

pub struct EvalArgs {
    pub data: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub reports: Vec<RetrievalReport>,
    /// Mean/std per metric, present when more than one checkpoint was given.
    pub summary: Option<Vec<MetricSummary>>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

pub fn summarize_reports(reports: &[RetrievalReport]) -> Vec<MetricSummary> {
    let mut out = Vec::new();
    let ks: Vec<usize> = reports[0].recalls.iter().map(|r| r.k).collect();
    for k in ks {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.recall_at(k)).collect();
        let (mean, std) = mean_std(&values);
        out.push(MetricSummary {
            metric: format!("recall@{k}"),
            mean,
            std,
        });
    }
    if reports.iter().all(|r| r.composite.is_some()) {
        let values: Vec<f64> = reports.iter().map(|r| r.composite.unwrap()).collect();
        let (mean, std) = mean_std(&values);
        out.push(MetricSummary {
            metric: "composite".into(),
            mean,
            std,
        });
    }
    out
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let seed = resolve_seed(args.seed)?;
    if args.checkpoints.is_empty() {
        return Err(usage_err("at least one --checkpoint is required"));
    }
    for path in &args.checkpoints {
        if !path.is_file() {
            return Err(usage_err(format!("missing checkpoint {}", path.display())));
        }
    }
    if !args.data.join(files::ITEMS).is_file() {
        return Err(usage_err(format!(
            "missing dataset directory {}",
            args.data.display()
        )));
    }

    let mut manifest = ManifestBuilder::new(
        "eval",
        serde_json::json!({ "checkpoints": args.checkpoints.len() }),
        seed,
    );
    for name in [files::ITEMS, files::EVAL, files::VOCAB, files::ENCODERS] {
        manifest.input(&args.data.join(name))?;
    }
    for path in &args.checkpoints {
        manifest.input(path)?;
    }

    let dataset = Dataset::read(&args.data)?;
    let encoders = dataset.read_encoders(&args.data)?;
    let index = build_index(&dataset.items, &encoders)?;

    let mut reports = Vec::new();
    for path in &args.checkpoints {
        let ckpt = Checkpoint::read(path)?;
        let mut composer = AnyComposer::build(&ckpt.config.composer, 0)?;
        composer.load_state_dict(&ckpt.main_dict())?;
        reports.push(evaluate(&mut composer, &dataset.eval, &encoders, &index)?);
    }
    let summary = if reports.len() > 1 {
        Some(summarize_reports(&reports))
    } else {
        None
    };
    let output = EvalOutput { reports, summary };

    std::fs::create_dir_all(&args.out)?;
    let json_path = args.out.join(REPORT_JSON);
    write_atomic(&json_path, |tmp| {
        Ok(std::fs::write(tmp, serde_json::to_vec_pretty(&output)?)?)
    })?;
    let csv_path = args.out.join(REPORT_CSV);
    write_atomic(&csv_path, |tmp| {
        let mut f = std::fs::File::create(tmp)?;
        writeln!(f, "{}", RetrievalReport::csv_header())?;
        for report in &output.reports {
            writeln!(f, "{}", report.csv_row())?;
        }
        Ok(())
    })?;

    if let Some(summary) = &output.summary {
        for m in summary {
            println!("{}: {:.3} ± {:.3}", m.metric, m.mean, m.std);
        }
    } else if let Some(r1) = output.reports[0].recall_at(1) {
        println!("recall@1: {r1:.3}");
    }

    manifest.output(&json_path);
    manifest.output(&csv_path);
    manifest.finish(&args.out.join(MANIFEST_FILE))
}

// ---------------------------------------------------------------------------
// export-features

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportBlock {
    ErrorEncoding,
    Composed,
}

pub struct ExportFeaturesArgs {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub block: ExportBlock,
    /// Schema attribute whose values condition the export.
    pub attribute: usize,
    pub samples: usize,
    pub seed: u64,
}

pub fn cmd_export_features(args: &ExportFeaturesArgs) -> Result<RunManifest> {
    let seed = resolve_seed(args.seed)?;
    if !args.checkpoint.is_file() {
        return Err(usage_err(format!("missing checkpoint {}", args.checkpoint.display())));
    }
    if !args.data.join(files::ITEMS).is_file() {
        return Err(usage_err(format!("missing dataset directory {}", args.data.display())));
    }

    let mut manifest = ManifestBuilder::new(
        "export-features",
        serde_json::json!({
            "block": match args.block {
                ExportBlock::ErrorEncoding => "error_encoding",
                ExportBlock::Composed => "composed",
            },
            "attribute": args.attribute,
            "samples": args.samples,
        }),
        seed,
    );
    manifest.input(&args.checkpoint)?;
    for name in [files::ITEMS, files::VOCAB, files::ENCODERS] {
        manifest.input(&args.data.join(name))?;
    }

    let dataset = Dataset::read(&args.data)?;
    let encoders = dataset.read_encoders(&args.data)?;
    let attr = dataset
        .config
        .attributes
        .get(args.attribute)
        .ok_or_else(|| val_err(format!("attribute index {} out of range", args.attribute)))?;
    if args.samples == 0 || args.samples > dataset.items.len() {
        return Err(val_err(format!(
            "sample count must lie in [1, {}]",
            dataset.items.len()
        )));
    }

    let ckpt = Checkpoint::read(&args.checkpoint)?;
    let mut composer = AnyComposer::build(&ckpt.config.composer, 0)?;
    composer.load_state_dict(&ckpt.main_dict())?;
    composer.set_mode(Mode::Eval);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = dataset.items.iter().map(|i| i.id).collect();
    ids.shuffle(&mut rng);
    ids.truncate(args.samples);
    ids.sort();

    let d_v = composer.d_v();
    let mut rows: Vec<(usize, String, Vec<f64>)> = Vec::new();
    for value in &attr.values {
        let text = ModificationText {
            tokens: vec!["make".into(), attr.name.clone(), value.clone()],
        };
        // One synthetic query per sampled item, conditioned on this label.
        let triplets: Vec<TripletRecord> = ids
            .iter()
            .enumerate()
            .map(|(key, &id)| TripletRecord {
                source_id: id,
                target_id: id,
                text: text.clone(),
                key,
            })
            .collect();
        let features: Vec<f64> = match args.block {
            // Matches the evaluator's composed query features bitwise.
            ExportBlock::Composed => compose_queries(&mut composer, &triplets, &encoders)?,
            ExportBlock::ErrorEncoding => {
                let mut v = Vec::with_capacity(ids.len() * d_v);
                let mut t = Vec::with_capacity(ids.len() * encoders.d_t);
                for triplet in &triplets {
                    v.extend(encoders.encode_image(triplet.source_id)?);
                    t.extend(encoders.encode_text(&triplet.text)?);
                }
                composer
                    .compose_detailed(
                        &Tensor::matrix(ids.len(), d_v, v)?,
                        &Tensor::matrix(ids.len(), encoders.d_t, t)?,
                    )?
                    .error_out
                    .values()
            }
        };
        for (row, &id) in ids.iter().enumerate() {
            rows.push((id, value.clone(), features[row * d_v..(row + 1) * d_v].to_vec()));
        }
    }

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_atomic(&args.out, |tmp| {
        let mut f = std::fs::File::create(tmp)?;
        let header: Vec<String> = (0..d_v).map(|i| format!("f{i}")).collect();
        writeln!(f, "item_id,label,{}", header.join(","))?;
        for (id, label, features) in &rows {
            let cells: Vec<String> = features.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{id},{label},{}", cells.join(","))?;
        }
        Ok(())
    })?;

    manifest.output(&args.out);
    manifest.notes = serde_json::json!({ "rows": rows.len() });
    manifest.finish(&manifest_sibling(&args.out))
}

// ---------------------------------------------------------------------------
// gradcheck

pub struct GradcheckArgs {
    pub composer: ComposerSpec,
    pub seeds: u64,
    pub tolerance: f64,
    pub seed: u64,
    /// Where to write the report and manifest.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct GradcheckSummary {
    pub seeds: u64,
    pub tolerance: f64,
    pub max_composer_error: f64,
    pub max_stack_error: f64,
}

pub fn run_gradcheck(spec: &ComposerSpec, seeds: u64, tolerance: f64, base_seed: u64) -> Result<GradcheckSummary> {
    let mut max_composer_error: f64 = 0.0;
    let mut max_stack_error: f64 = 0.0;
    for offset in 0..seeds {
        let seed = base_seed.wrapping_add(offset);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xC0FFEE));
        let mut composer = AnyComposer::build(spec, seed)?;
        let (d_v, d_t) = (composer.d_v(), composer.d_t());
        let batch = 4;
        let v = Tensor::matrix(batch, d_v, (0..batch * d_v).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let t = Tensor::matrix(batch, d_t, (0..batch * d_t).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        // Populate running statistics, then check against frozen normalization.
        composer.compose(&v, &t)?;
        composer.set_mode(Mode::Eval);
        let params = composer.params();
        let report = gradcheck(
            || {
                let y = composer.compose(&v, &t).unwrap();
                ops::mean_all(&ops::mul(&y, &y).unwrap()).unwrap()
            },
            &params,
            tolerance,
        )?;
        max_composer_error = max_composer_error.max(report.max_rel_error());

        let nodes = 4;
        let h = Tensor::matrix(
            nodes,
            d_v,
            (0..nodes * d_v).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let mut dense = vec![0.0; nodes * nodes];
        for i in 0..nodes {
            dense[i * nodes + i] = 1.0 / 1.33;
            dense[i * nodes + (i + 1) % nodes] = 0.33 / 1.33;
        }
        let lam = Rc::new(SparseMatrix::from_dense(nodes, nodes, &dense));
        let stack = GcnStack::new(d_v, seed.wrapping_add(1))?;
        let stack_params = stack.params();
        let report = gradcheck(
            || ops::mean_all(&stack.forward(&lam, &h).unwrap()).unwrap(),
            &stack_params,
            tolerance,
        )?;
        max_stack_error = max_stack_error.max(report.max_rel_error());
    }
    let summary = GradcheckSummary {
        seeds,
        tolerance,
        max_composer_error,
        max_stack_error,
    };
    if max_composer_error >= tolerance || max_stack_error >= tolerance {
        return Err(num_err(format!(
            "gradient check failed: composer {max_composer_error:.3e}, stack {max_stack_error:.3e} (tolerance {tolerance:.1e})"
        )));
    }
    Ok(summary)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckSummary> {
    let seed = resolve_seed(args.seed)?;
    if args.seeds == 0 {
        return Err(usage_err("--seeds must be positive"));
    }
    let mut manifest = ManifestBuilder::new(
        "gradcheck",
        serde_json::json!({
            "composer": args.composer,
            "seeds": args.seeds,
            "tolerance": args.tolerance,
        }),
        seed,
    );
    let summary = run_gradcheck(&args.composer, args.seeds, args.tolerance, seed)?;
    println!(
        "gradcheck ok over {} seeds: composer max rel {:.3e}, stack max rel {:.3e}",
        summary.seeds, summary.max_composer_error, summary.max_stack_error
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let report_path = out.join("gradcheck.json");
        write_atomic(&report_path, |tmp| {
            Ok(std::fs::write(tmp, serde_json::to_vec_pretty(&summary)?)?)
        })?;
        manifest.output(&report_path);
        manifest.finish(&out.join(MANIFEST_FILE))?;
    }
    Ok(summary)
}

/// Parse a composer selection shared by train/gradcheck flags.
pub fn composer_spec(kind: &str, variant: char, d_v: usize, d_t: usize) -> Result<ComposerSpec> {
    match kind {
        "rtic" => Ok(ComposerSpec::Rtic(ComposerConfig::variant(variant, d_v, d_t)?)),
        "tirg" => Ok(ComposerSpec::Tirg {
            d_v,
            d_t,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }),
        other => Err(usage_err(format!("unknown composer {other:?} (expected rtic or tirg)"))),
    }
}
