use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdaae_core::data::synthetic::{load_ground_truth, make_synthetic_corpus_with_prefix};
use cdaae_core::data::{load_image, load_manifest, preprocess, save_png};
use cdaae_core::eval::{
    comparison_strip, evaluate, interpolate_emotions, manifold_grid, shared_oracle, tile, GridAxis, GridSpec,
    HeldOutSet,
};
use cdaae_core::labels::au_index;
use cdaae_core::train::{self, run_ablation, Checkpoint, TrainConfig};
use cdaae_core::{Emotion, LabelMode, LabelVector, ModelParams, SkipPosition};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "cdaae", version, about = "Conditional difference adversarial autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic face corpus with manifest and ground truth.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 9)]
        expressions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Subject id prefix; use a distinct one for held-out corpora.
        #[arg(long, default_value = "s")]
        prefix: String,
    },
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many steps (overrides the config).
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Continue a run from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// New step limit; the checkpoint's own limit otherwise.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Train one model per skip position and compare identity preservation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Ground truth of a held-out synthetic corpus; enables evaluation.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = SkipPosition::ALL.map(|s| s.name().to_string()))]
        positions: Vec<String>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Score a checkpoint on a held-out synthetic corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep two AU slots over a grid.
    Grid {
        #[command(flatten)]
        input: Input,
        /// Column axis: AU name (AU12) or slot index.
        #[arg(long)]
        x: String,
        /// Row axis: AU name or slot index.
        #[arg(long)]
        y: String,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend between two emotions.
    Interpolate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Real frames of one subject above their re-synthesized counterparts.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        subject: String,
        /// Index (within the subject) of the frame used as source.
        #[arg(long, default_value_t = 0)]
        source: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a checkpoint over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allowed CORS origin; any origin when absent.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args, Debug)]
struct Input {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source face image, any size.
    #[arg(long)]
    image: PathBuf,
}

impl Input {
    fn load(&self) -> Result<(ModelParams<f32>, cdaae_core::Tensor<f32>)> {
        let model = load_model(&self.checkpoint)?;
        let img = load_image(&self.image).with_context(|| format!("reading {}", self.image.display()))?;
        Ok((model, preprocess(&img)))
    }
}

fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))?
        .params)
}

fn load_config(path: &Path, max_steps: Option<u64>) -> Result<TrainConfig> {
    let mut config = TrainConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if max_steps.is_some() {
        config.max_steps = max_steps;
    }
    Ok(config)
}

fn load_held_out(truth: &Path) -> Result<HeldOutSet> {
    let rows = load_ground_truth(truth).with_context(|| format!("reading {}", truth.display()))?;
    let root = truth.parent().unwrap_or(Path::new("."));
    Ok(HeldOutSet::load(&rows, root)?)
}

fn parse_axis(s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(i) => Ok(i),
        Err(_) => Ok(au_index(s)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus {
            out,
            subjects,
            expressions,
            seed,
            prefix,
        } => {
            let mut corpus = make_synthetic_corpus_with_prefix(subjects, expressions, seed, &prefix)?;
            let manifest = corpus.write(&out)?;
            println!("{}", manifest.display());
        }
        Command::Train { config, max_steps } => {
            let outcome = train::train(load_config(&config, max_steps)?)?;
            info!("{} steps", outcome.trainer.global_step);
            println!("{}", outcome.final_checkpoint.display());
        }
        Command::Resume { checkpoint, max_steps } => {
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let mut trainer = train::Trainer::from_checkpoint(ckpt);
            if max_steps.is_some() {
                trainer.config.max_steps = max_steps;
            }
            let corpus = train::load_training_corpus(&trainer.config)?;
            let outcome = train::train_on(trainer, &corpus)?;
            println!("{}", outcome.final_checkpoint.display());
        }
        Command::Ablate {
            config,
            truth,
            positions,
            max_steps,
        } => {
            let config = load_config(&config, max_steps)?;
            let positions = positions
                .iter()
                .map(|p| p.parse::<SkipPosition>())
                .collect::<cdaae_core::Result<Vec<_>>>()?;
            let corpus = train::load_training_corpus(&config)?;
            let held = truth.as_deref().map(load_held_out).transpose()?;
            let report = run_ablation(
                &config,
                &positions,
                &corpus,
                held.as_ref().map(|h| (h, shared_oracle())),
            )?;
            for flag in &report.red_flags {
                log::warn!("red flag: {flag}");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval { checkpoint, truth, out } => {
            let model = load_model(&checkpoint)?;
            let report = evaluate(&model, &load_held_out(&truth)?, shared_oracle())?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(out) = out {
                std::fs::write(&out, &json).with_context(|| format!("writing {}", out.display()))?;
            }
            println!("{json}");
        }
        Command::Grid {
            input,
            x,
            y,
            steps,
            out,
        } => {
            let (model, source) = input.load()?;
            if model.label_mode != LabelMode::Au {
                bail!(
                    "grids sweep AU labels; this checkpoint is an {} model",
                    model.label_mode
                );
            }
            let values = GridSpec::linspace(steps);
            let spec = GridSpec {
                axis_x: GridAxis {
                    index: parse_axis(&x)?,
                    values: values.clone(),
                },
                axis_y: GridAxis {
                    index: parse_axis(&y)?,
                    values,
                },
                base: LabelVector::zeros_au(),
            };
            save_png(&manifold_grid(&model, &source, &spec)?.image, &out)?;
            println!("{}", out.display());
        }
        Command::Interpolate {
            input,
            from,
            to,
            steps,
            out,
        } => {
            let (model, source) = input.load()?;
            let (a, b): (Emotion, Emotion) = (from.parse()?, to.parse()?);
            let cells = GridSpec::linspace(steps)
                .into_iter()
                .map(|w| interpolate_emotions(&model, &source, a, b, 1.0 - w))
                .collect::<cdaae_core::Result<Vec<_>>>()?;
            save_png(&tile(&cells, cells.len())?, &out)?;
            println!("{}", out.display());
        }
        Command::Compare {
            checkpoint,
            manifest,
            subject,
            source,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let manifest = load_manifest(&manifest)?;
            let frames = manifest
                .rows
                .iter()
                .filter(|r| r.subject_id == subject)
                .map(|r| Ok((preprocess(&load_image(&manifest.resolve(r))?), r.label.clone())))
                .collect::<Result<Vec<_>>>()?;
            if frames.is_empty() {
                bail!("subject {subject:?} is not in the manifest");
            }
            save_png(&comparison_strip(&model, &frames, source)?.image, &out)?;
            println!("{}", out.display());
        }
        Command::Serve {
            checkpoint,
            host,
            port,
            cors_origin,
        } => {
            let model = cdaae_serve::LoadedModel::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let state = cdaae_serve::AppState::with_model(model);
            let cors = cdaae_serve::cors(cors_origin.as_deref()).map_err(anyhow::Error::msg)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            tokio::runtime::Runtime::new()?.block_on(cdaae_serve::serve(addr, state, cors))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
