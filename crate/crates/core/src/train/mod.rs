//! The alternating adversarial training loop.
//!
//! Each step first updates both discriminators together with the
//! autoencoder frozen, then recomputes the forward pass and updates the
//! autoencoder with both discriminators frozen. All randomness (pairing,
//! batch order, prior samples) is derived from the config seed, the epoch
//! and the global step, so a run is reproducible bit for bit and can be
//! resumed from any checkpoint.

mod ablation;
mod checkpoint;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use ablation::{run_ablation, AblationEntry, AblationReport, ABLATION_REPORT};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR_AE, DEFAULT_LR_DISC};

use crate::data::{load_manifest, sample_pairs_au, sample_pairs_emotion, Batch, Corpus, CorpusManifest, FacePair};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::labels::LabelMode;
use crate::model::{LossBundle, ModelParams, Trainable, Z_DIM};
use crate::optim::AdamState;
use crate::tensor::Tensor;

const STREAM_PAIRS: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_PRIOR: u64 = 3;

/// Mixes a seed, a stream id and an index into an independent RNG seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Loss values of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub losses: LossBundle,
}

/// Model, optimizers and counters of a run in progress.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub opt_ae: AdamState,
    pub opt_disc: AdamState,
    pub global_step: u64,
    pub loss_means: LossBundle,
}

fn numeric_failure(phase: &str, step: u64, losses: &LossBundle) -> Error {
    let terms: Vec<String> = LossBundle::FIELD_NAMES
        .iter()
        .zip(losses.as_array())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    Error::Numeric(format!("non-finite loss at step {step} ({phase}): {}", terms.join(" ")))
}

impl Trainer {
    /// Freshly initialized model and optimizers.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(config.skip_position, config.label_mode, config.seed);
        let opt_ae = AdamState::new(config.lr_ae, &params.autoencoder_tensors());
        let opt_disc = AdamState::new(config.lr_disc, &params.discriminator_tensors());
        Ok(Self {
            config,
            params,
            opt_ae,
            opt_disc,
            global_step: 0,
            loss_means: LossBundle::default(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            config: ckpt.config,
            params: ckpt.params,
            opt_ae: ckpt.opt_ae,
            opt_disc: ckpt.opt_disc,
            global_step: ckpt.global_step,
            loss_means: ckpt.loss_means,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            opt_ae: self.opt_ae.clone(),
            opt_disc: self.opt_disc.clone(),
            global_step: self.global_step,
            loss_means: self.loss_means,
        }
    }

    /// `n` standard normal codes for the current step.
    pub fn prior_sample(&self, n: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, STREAM_PRIOR, self.global_step));
        let data = (0..n * Z_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new(&[n, Z_DIM], data).expect("valid shape")
    }

    /// The shuffled pairs of one epoch.
    pub fn epoch_pairs(&self, manifest: &CorpusManifest, epoch: usize) -> Result<Vec<FacePair>> {
        let seed = self.config.seed;
        let pair_seed = derive_seed(seed, STREAM_PAIRS, epoch as u64);
        let mut pairs = match manifest.label_mode {
            LabelMode::Au => {
                sample_pairs_au(manifest, self.config.per_au_cap, self.config.zero_frames, pair_seed)?.pairs
            }
            LabelMode::Emotion => sample_pairs_emotion(manifest, pair_seed)?,
        };
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            STREAM_ORDER,
            epoch as u64,
        )));
        Ok(pairs)
    }

    /// One discriminator update followed by one autoencoder update.
    ///
    /// The returned losses come from the autoencoder phase's forward pass,
    /// so the discriminator terms reflect the updated discriminators.
    pub fn train_step(&mut self, batch: &Batch, z_prior: &Tensor<f32>) -> Result<LossBundle> {
        let weights = self.config.weights();
        let step = self.global_step;

        // Phase 1: discriminators learn, the autoencoder is constant.
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, Trainable::DISCRIMINATORS);
        let (s, t, l, z) = (
            g.constant(batch.source.clone()),
            g.constant(batch.target.clone()),
            g.constant(batch.labels.clone()),
            g.constant(z_prior.clone()),
        );
        let lv = self.params.build_losses(&mut g, &vars, s, t, l, z, weights)?;
        let phase1 = lv.bundle(&g);
        if !phase1.is_finite() {
            return Err(numeric_failure("discriminator phase", step, &phase1));
        }
        g.backward(lv.discriminator_total)?;
        let grads: Vec<Option<&[f32]>> = vars.discriminators().into_iter().map(|v| g.grad(v)).collect();
        self.opt_disc
            .step(&mut self.params.discriminator_tensors_mut(), &grads)?;
        drop(g);

        // Phase 2: the autoencoder learns against the updated discriminators.
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, Trainable::AUTOENCODER);
        let (s, t, l, z) = (
            g.constant(batch.source.clone()),
            g.constant(batch.target.clone()),
            g.constant(batch.labels.clone()),
            g.constant(z_prior.clone()),
        );
        let lv = self.params.build_losses(&mut g, &vars, s, t, l, z, weights)?;
        let losses = lv.bundle(&g);
        if !losses.is_finite() {
            return Err(numeric_failure("autoencoder phase", step, &losses));
        }
        g.backward(lv.total_ae)?;
        let grads: Vec<Option<&[f32]>> = vars.autoencoder().into_iter().map(|v| g.grad(v)).collect();
        self.opt_ae.step(&mut self.params.autoencoder_tensors_mut(), &grads)?;

        self.global_step += 1;
        let n = self.global_step as f64;
        let mut means = self.loss_means.as_array();
        for (m, v) in means.iter_mut().zip(losses.as_array()) {
            *m += (v - *m) / n;
        }
        self.loss_means = LossBundle {
            l_r: means[0],
            l_e_d: means[1],
            l_e_g: means[2],
            l_g_d: means[3],
            l_g_g: means[4],
            total_ae: means[5],
        };
        Ok(losses)
    }

    fn steps_per_epoch(&self, pairs: usize) -> u64 {
        pairs.div_ceil(self.config.batch_size) as u64
    }

    fn done(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.global_step >= m)
    }

    /// Runs the remaining steps of the configured schedule over `corpus`.
    ///
    /// `on_epoch` is called after every completed epoch with the epoch index.
    pub fn run(
        &mut self,
        corpus: &Corpus,
        mut on_step: impl FnMut(&StepRecord) -> Result<()>,
        mut on_epoch: impl FnMut(&Trainer, usize) -> Result<()>,
    ) -> Result<()> {
        let batch_size = self.config.batch_size;
        let mut skip = self.global_step;
        for epoch in 0..self.config.epochs {
            if self.done() {
                break;
            }
            let pairs = self.epoch_pairs(&corpus.manifest, epoch)?;
            let steps = self.steps_per_epoch(pairs.len());
            if skip >= steps {
                skip -= steps;
                continue;
            }
            let mut completed = true;
            for chunk in pairs.chunks(batch_size).skip(skip as usize) {
                if self.done() {
                    completed = false;
                    break;
                }
                let batch = corpus.batch(chunk)?;
                let z = self.prior_sample(chunk.len());
                let losses = self.train_step(&batch, &z)?;
                on_step(&StepRecord {
                    step: self.global_step,
                    losses,
                })?;
            }
            skip = 0;
            if completed {
                on_epoch(self, epoch)?;
            }
        }
        Ok(())
    }
}

/// Writes loss curves as `step,l_r,l_e_d,l_e_g,l_g_d,l_g_g,total_ae`.
pub struct LossLog {
    writer: csv::Writer<std::fs::File>,
}

impl LossLog {
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        if !exists {
            let mut header = vec!["step"];
            header.extend(LossBundle::FIELD_NAMES);
            writer.write_record(&header)?;
        }
        Ok(Self { writer })
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.losses.as_array().iter().map(|v| v.to_string()));
        self.writer.write_record(&rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(Error::RawIo)
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub history: Vec<StepRecord>,
    pub trainer: Trainer,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_CSV: &str = "losses.csv";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{:04}.ckpt", epoch + 1)
}

/// Loads the manifest named by the config, restricted to the training fold.
pub fn load_training_corpus(config: &TrainConfig) -> Result<Corpus> {
    let mut manifest = load_manifest(&config.manifest)?;
    if let Some(subjects) = &config.train_subjects {
        manifest = manifest.filter_subjects(subjects)?;
    }
    if manifest.label_mode != config.label_mode {
        return Err(Error::Validation(format!(
            "config label_mode is {}, manifest is {}",
            config.label_mode, manifest.label_mode
        )));
    }
    Corpus::load(manifest)
}

/// Trains from scratch (or continues `trainer`) on an in-memory corpus,
/// writing checkpoints and the loss CSV into the config's output directory.
pub fn train_on(mut trainer: Trainer, corpus: &Corpus) -> Result<TrainOutcome> {
    if corpus.manifest.label_mode != trainer.config.label_mode {
        return Err(Error::Validation(format!(
            "config label_mode is {}, corpus is {}",
            trainer.config.label_mode, corpus.manifest.label_mode
        )));
    }
    let out = trainer.config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let resuming = trainer.global_step > 0;
    let mut log = LossLog::create(&out.join(LOSS_CSV), resuming)?;
    let mut history = Vec::new();
    let every = trainer.config.checkpoint_every;
    let started = std::time::Instant::now();
    trainer.run(
        corpus,
        |r| {
            history.push(*r);
            if r.step % 100 == 0 {
                info!(
                    "step {} l_r={:.5} l_e_d={:.4} l_g_d={:.4} ({:.1}s)",
                    r.step,
                    r.losses.l_r,
                    r.losses.l_e_d,
                    r.losses.l_g_d,
                    started.elapsed().as_secs_f64()
                );
            }
            log.record(r)
        },
        |t, epoch| {
            if every > 0 && (epoch + 1) % every == 0 {
                t.checkpoint().save(&out.join(epoch_checkpoint_name(epoch)))?;
            }
            Ok(())
        },
    )?;
    log.flush()?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        history,
        trainer,
    })
}

/// Trains according to `config`: corpus validation happens before step 0.
pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    let corpus = load_training_corpus(&config)?;
    train_on(Trainer::new(config)?, &corpus)
}

/// Continues a run from a checkpoint file.
pub fn resume(checkpoint: &Path) -> Result<TrainOutcome> {
    let trainer = Trainer::from_checkpoint(Checkpoint::load(checkpoint)?);
    let corpus = load_training_corpus(&trainer.config)?;
    train_on(trainer, &corpus)
}

/// Writes `text` to `path`, creating parent directories.
fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
