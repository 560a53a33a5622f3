//! Command-line driver: dataset synthesis, training, evaluation,
//! gradient checking, the pooling/iteration ablation grid, and DOT
//! export.
//!
//! Exit codes: 0 success, 2 usage/config, 3 I/O or parse, 4 numeric
//! failure, 5 verification failure.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgmp::checkpoint::{self, Checkpoint};
use sgmp::config::{load_config, RunConfig};
use sgmp::data::{export_dot, load_dataset, save_dataset, synth_generate};
use sgmp::error::{Error, Result};
use sgmp::eval::{evaluate, EvalConfig, Task};
use sgmp::gradcheck::grad_check_model;
use sgmp::graph::{build_channel_index, build_edge_set, EdgeSetMode};
use sgmp::model::{run_forward, ModelDims, PoolingMode};
use sgmp::train::fit;

#[derive(Parser)]
#[command(name = "sgmp", version, about = "Scene graph generation by iterative message passing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Default)]
struct ConfigArg {
    /// TOML config file; explicit flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// output dataset path
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// global index of the first image; lets one seed produce
        /// disjoint train/test splits of the same world
        #[arg(long)]
        offset: Option<usize>,
        /// fraction of class pairs with context-dependent predicates
        #[arg(long)]
        ambiguity: Option<f64>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        predicates: Option<usize>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a model and write a checkpoint
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// input dataset path
        #[arg(long)]
        data: PathBuf,
        /// output checkpoint path
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// message passing rounds T
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        pooling: Option<PoolingMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// model checkpoint path
        #[arg(long)]
        model: PathBuf,
        /// predcls, sgcls, or sggen (repeatable)
        #[arg(long, required = true)]
        task: Vec<Task>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        pooling: Option<PoolingMode>,
    },
    /// Verify analytic gradients against central differences
    Gradcheck {
        /// message passing rounds T
        #[arg(long, default_value_t = 2)]
        iters: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 6)]
        features: usize,
        #[arg(long, default_value = "weighted")]
        pooling: PoolingMode,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// max tolerated relative error
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Train/evaluate the full iteration-count x pooling-mode grid
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// held-out dataset; defaults to the training data
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one scene graph as Graphviz DOT
    ExportDot {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        /// image id; defaults to the first image
        #[arg(long)]
        image: Option<String>,
        /// optional checkpoint; adds predicted labels
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        pooling: Option<PoolingMode>,
    },
}

fn effective_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        Some(path) => {
            let cfg = load_config(path)?;
            println!("config: file {} (flags override file, file overrides defaults)", path.display());
            Ok(cfg)
        }
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            out,
            images,
            seed,
            offset,
            ambiguity,
            classes,
            predicates,
            feature_dim,
            noise,
        } => {
            let mut cfg = effective_config(&config)?.synth;
            if let Some(v) = images {
                cfg.num_images = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = offset {
                cfg.image_offset = v;
            }
            if let Some(v) = ambiguity {
                cfg.context_ambiguity = v;
            }
            if let Some(v) = classes {
                cfg.num_classes = v;
            }
            if let Some(v) = predicates {
                cfg.num_predicates = v;
            }
            if let Some(v) = feature_dim {
                cfg.feature_dim = v;
            }
            if let Some(v) = noise {
                cfg.feature_noise_sigma = v;
            }
            let dataset = synth_generate(&cfg)?;
            save_dataset(&dataset, &out)?;
            println!(
                "wrote {} images ({} classes, {} predicates) to {}",
                dataset.samples.len(),
                dataset.vocab.num_classes(),
                dataset.vocab.num_predicates(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            epochs,
            lr,
            iterations,
            pooling,
            seed,
            hidden,
        } => {
            let run_cfg = effective_config(&config)?;
            let mut cfg = run_cfg.train;
            let mut dims = run_cfg.model;
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = iterations {
                cfg.iterations = v;
            }
            if let Some(v) = pooling {
                cfg.pooling_mode = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = hidden {
                dims.hidden = v;
            }
            let dataset = load_dataset(&data)?;
            dims.feature_dim = dataset.feature_dim;
            dims.num_classes = dataset.vocab.num_classes();
            dims.num_predicates = dataset.vocab.num_predicates();
            dims.validate()?;
            let (params, records) = fit(&dataset.samples, dims, &cfg)?;
            for r in &records {
                println!("{}", r.to_line());
            }
            checkpoint::save(
                &Checkpoint {
                    seed: cfg.seed,
                    dims,
                    vocab: dataset.vocab,
                    params,
                },
                &out,
            )?;
            println!("wrote checkpoint to {}", out.display());
            Ok(())
        }
        Command::Eval {
            config,
            data,
            model,
            task,
            iterations,
            pooling,
        } => {
            let run_cfg = effective_config(&config)?;
            let dataset = load_dataset(&data)?;
            let ck = checkpoint::load(&model)?;
            if ck.vocab != dataset.vocab {
                return Err(Error::Config(format!(
                    "checkpoint vocabulary does not match dataset {}",
                    data.display()
                )));
            }
            let cfg = EvalConfig {
                iterations: iterations.unwrap_or(run_cfg.train.iterations),
                pooling_mode: pooling.unwrap_or(run_cfg.train.pooling_mode),
            };
            for t in task {
                let report = evaluate(&dataset.samples, &dataset.vocab, &ck.params, &cfg, t)?;
                print!("{}", report.to_text());
            }
            Ok(())
        }
        Command::Gradcheck {
            iters,
            hidden,
            features,
            pooling,
            eps,
            seed,
            threshold,
        } => {
            let dims = ModelDims {
                feature_dim: features,
                hidden,
                num_classes: 4,
                num_predicates: 4,
            };
            dims.validate()?;
            let (max_rel, worst) = grad_check_model(dims, seed, iters, pooling, eps)?;
            println!(
                "gradcheck: T={iters} pooling={pooling} max_rel_error={max_rel:.3e} worst={worst}"
            );
            if max_rel > threshold {
                eprintln!("gradcheck failed: {max_rel:.3e} exceeds threshold {threshold:.3e}");
                std::process::exit(5);
            }
            println!("gradcheck passed (threshold {threshold:.3e})");
            Ok(())
        }
        Command::Ablate {
            config,
            data,
            eval_data,
            epochs,
            seed,
        } => {
            let run_cfg = effective_config(&config)?;
            let mut cfg = run_cfg.train;
            let mut dims = run_cfg.model;
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let train_set = load_dataset(&data)?;
            let eval_set = match &eval_data {
                Some(p) => load_dataset(p)?,
                None => train_set.clone(),
            };
            if eval_set.vocab != train_set.vocab {
                return Err(Error::Config(
                    "evaluation dataset vocabulary does not match training data".to_string(),
                ));
            }
            dims.feature_dim = train_set.feature_dim;
            dims.num_classes = train_set.vocab.num_classes();
            dims.num_predicates = train_set.vocab.num_predicates();
            dims.validate()?;

            println!("iterations pooling   r_at_50  r_at_100");
            for t in [0usize, 1, 2, 4] {
                for mode in [PoolingMode::Weighted, PoolingMode::Avg, PoolingMode::Max] {
                    let mut cell = cfg.clone();
                    cell.iterations = t;
                    cell.pooling_mode = mode;
                    let (params, _) = fit(&train_set.samples, dims, &cell)?;
                    let report = evaluate(
                        &eval_set.samples,
                        &eval_set.vocab,
                        &params,
                        &EvalConfig {
                            iterations: t,
                            pooling_mode: mode,
                        },
                        Task::PredCls,
                    )?;
                    println!(
                        "{t:<10} {:<9} {:.6} {:.6}",
                        mode.to_string(),
                        report.r_at_50,
                        report.r_at_100
                    );
                }
            }
            Ok(())
        }
        Command::ExportDot {
            config,
            data,
            image,
            model,
            out,
            iterations,
            pooling,
        } => {
            let run_cfg = effective_config(&config)?;
            let dataset = load_dataset(&data)?;
            let s = match &image {
                Some(id) => dataset
                    .samples
                    .iter()
                    .find(|s| s.image_id == *id)
                    .ok_or_else(|| Error::Config(format!("no image with id {id:?}")))?,
                None => dataset
                    .samples
                    .first()
                    .ok_or_else(|| Error::Config("dataset has no images".to_string()))?,
            };
            let text = match &model {
                Some(path) => {
                    let ck = checkpoint::load(path)?;
                    if ck.vocab != dataset.vocab {
                        return Err(Error::Config(
                            "checkpoint vocabulary does not match dataset".to_string(),
                        ));
                    }
                    let edges =
                        build_edge_set(s.num_nodes(), &BTreeSet::new(), EdgeSetMode::Test)?;
                    let channels = build_channel_index(&edges, s.num_nodes())?;
                    let (pred, _) = run_forward(
                        s,
                        &channels,
                        &ck.params,
                        iterations.unwrap_or(run_cfg.train.iterations),
                        pooling.unwrap_or(run_cfg.train.pooling_mode),
                    )?;
                    export_dot(s, &dataset.vocab, Some((&pred, &channels)))
                }
                None => export_dot(s, &dataset.vocab, None),
            };
            write_text(&out, &text)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
