use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cgl::commands::{
    cmd_build_graph, cmd_eval, cmd_export_features, cmd_gen_data, cmd_gradcheck, cmd_train,
    composer_spec, BuildGraphArgs, EvalArgs, ExportBlock, ExportFeaturesArgs, GenDataArgs,
    GradcheckArgs, TrainArgs,
};
use cgl::data::DatasetConfig;
use cgl::train::{InitFrom, TrainConfig, TrainMode};
use cgl::Result;

/// Image-text composition training and retrieval on synthetic attribute data.
#[derive(Parser)]
#[command(name = "cgl", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and frozen stub encoders.
    GenData {
        /// Output directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
        /// Number of gallery items.
        #[arg(long, default_value_t = 256)]
        items: usize,
        /// Training triplet count.
        #[arg(long, default_value_t = 2048)]
        train_triplets: usize,
        /// Evaluation triplet count.
        #[arg(long, default_value_t = 512)]
        eval_triplets: usize,
        /// Attribute changes per modification text.
        #[arg(long, default_value_t = 1)]
        changes: usize,
        /// Image feature width.
        #[arg(long, default_value_t = 64)]
        d_v: usize,
        /// Text feature width.
        #[arg(long, default_value_t = 32)]
        d_t: usize,
        /// Per-item noise scale relative to the signal norm.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a composer (stage 1, joint, or an appendix baseline).
    Train {
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, metrics, and manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeFlag::Stage1)]
        mode: ModeFlag,
        #[arg(long, default_value = "rtic")]
        composer: String,
        /// Architecture variant a..e (residual composer only).
        #[arg(long, default_value_t = 'd')]
        variant: char,
        #[arg(long, value_enum, default_value_t = InitFlag::Scratch)]
        init: InitFlag,
        /// Graph bundle (required for joint and linear-bce modes).
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Stage-1 checkpoint for transfer init and graph fingerprint checks.
        #[arg(long)]
        stage1_checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_pair: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_bce: f64,
        #[arg(long, default_value_t = 10.0)]
        temperature: f64,
        /// Target-similarity floor for pseudo-pair swapping.
        #[arg(long, default_value_t = 0.5)]
        pseudo_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the correlation graph bundle from training triplets.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint the graph is tied to.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output bundle file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate one or more checkpoints; several report mean and std.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file; repeat for multi-seed aggregation.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export intermediate features conditioned on class labels to CSV.
    ExportFeatures {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        block: BlockFlag,
        /// Schema attribute index supplying the conditioning labels.
        #[arg(long, default_value_t = 0)]
        attribute: usize,
        #[arg(long, default_value_t = 250)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient check of a composer and the GCN stack.
    Gradcheck {
        #[arg(long, default_value = "rtic")]
        composer: String,
        #[arg(long, default_value_t = 'd')]
        variant: char,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 16)]
        d_v: usize,
        #[arg(long, default_value_t = 8)]
        d_t: usize,
        /// Optional directory for the JSON report and manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeFlag {
    Stage1,
    Joint,
    LinearBce,
    PseudoPairs,
}

impl From<ModeFlag> for TrainMode {
    fn from(flag: ModeFlag) -> TrainMode {
        match flag {
            ModeFlag::Stage1 => TrainMode::Stage1,
            ModeFlag::Joint => TrainMode::Joint,
            ModeFlag::LinearBce => TrainMode::LinearBce,
            ModeFlag::PseudoPairs => TrainMode::PseudoPairs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitFlag {
    Scratch,
    Transfer,
}

impl From<InitFlag> for InitFrom {
    fn from(flag: InitFlag) -> InitFrom {
        match flag {
            InitFlag::Scratch => InitFrom::Scratch,
            InitFlag::Transfer => InitFrom::Transfer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockFlag {
    ErrorEncoding,
    Composed,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            items,
            train_triplets,
            eval_triplets,
            changes,
            d_v,
            d_t,
            noise,
            seed,
        } => {
            cmd_gen_data(&GenDataArgs {
                out,
                config: DatasetConfig {
                    item_count: items,
                    train_triplets,
                    eval_triplets,
                    changes_per_text: changes,
                    d_v,
                    d_t,
                    noise_scale: noise,
                    seed,
                    ..DatasetConfig::default()
                },
            })?;
        }
        Command::Train {
            data,
            out,
            mode,
            composer,
            variant,
            init,
            graph,
            stage1_checkpoint,
            batch_size,
            epochs,
            lr,
            lambda_pair,
            lambda_bce,
            temperature,
            pseudo_threshold,
            seed,
        } => {
            let dataset_config = cgl::data::Dataset::read(&data)
                .map(|d| d.config)
                .map_err(|e| cgl::Error::Usage(format!("cannot read dataset: {e}")))?;
            cmd_train(&TrainArgs {
                data,
                out,
                config: TrainConfig {
                    batch_size,
                    epochs,
                    lr,
                    lambda_pair,
                    lambda_bce,
                    seed,
                    mode: mode.into(),
                    init_from: init.into(),
                    similarity_temperature: temperature,
                    pseudo_pair_threshold: pseudo_threshold,
                },
                composer: composer_spec(&composer, variant, dataset_config.d_v, dataset_config.d_t)?,
                graph,
                stage1_checkpoint,
            })?;
        }
        Command::BuildGraph {
            data,
            checkpoint,
            out,
            density,
            seed,
        } => {
            cmd_build_graph(&BuildGraphArgs {
                data,
                checkpoint,
                out,
                density,
                seed,
            })?;
        }
        Command::Eval {
            data,
            checkpoint,
            out,
            seed,
        } => {
            cmd_eval(&EvalArgs {
                data,
                checkpoints: checkpoint,
                out,
                seed,
            })?;
        }
        Command::ExportFeatures {
            data,
            checkpoint,
            out,
            block,
            attribute,
            samples,
            seed,
        } => {
            cmd_export_features(&ExportFeaturesArgs {
                data,
                checkpoint,
                out,
                block: match block {
                    BlockFlag::ErrorEncoding => ExportBlock::ErrorEncoding,
                    BlockFlag::Composed => ExportBlock::Composed,
                },
                attribute,
                samples,
                seed,
            })?;
        }
        Command::Gradcheck {
            composer,
            variant,
            seeds,
            tolerance,
            d_v,
            d_t,
            out,
            seed,
        } => {
            cmd_gradcheck(&GradcheckArgs {
                composer: composer_spec(&composer, variant, d_v, d_t)?,
                seeds,
                tolerance,
                seed,
                out,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
