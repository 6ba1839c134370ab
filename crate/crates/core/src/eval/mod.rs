//! Desk-scale evaluation: the oracle regressor, metrics and figure artifacts.

mod artifacts;
mod metrics;
pub mod oracle;

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use artifacts::{
    comparison_strip, interpolate_emotions, manifold_grid, synthesize_one, tile, ComparisonStrip, GridAxis, GridSpec,
    ManifoldGrid,
};
pub use metrics::{
    eval_identity, eval_label_control, eval_transfer, evaluate, identity_label_set, is_monotone, pearson, EvalReport,
    HeldOutSet, HeldOutSubject, IdentityReport, LabelControlReport, Sweep, TransferReport, MIN_DYNAMIC_RANGE,
    MONOTONE_TOLERANCE, ORACLE_NOTE, SWEEP_STEPS,
};
pub use oracle::{shared_oracle, OracleRegressor};

use crate::error::{Error, Result};
use crate::labels::LabelMode;
use crate::model::{ModelParams, IMAGE_CHANNELS, IMAGE_SIZE};
use crate::tensor::Tensor;

/// Anything that maps source images and target labels to images.
pub trait Synthesizer {
    fn label_mode(&self) -> LabelMode;
    fn synthesize(&self, images: &Tensor<f32>, labels: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Synthesizer for ModelParams<f32> {
    fn label_mode(&self) -> LabelMode {
        self.label_mode
    }

    fn synthesize(&self, images: &Tensor<f32>, labels: &Tensor<f32>) -> Result<Tensor<f32>> {
        ModelParams::synthesize(self, images, labels)
    }
}

/// Ignores its inputs and returns uniform noise; the chance-level baseline.
#[derive(Debug)]
pub struct RandomPixels {
    mode: LabelMode,
    rng: Mutex<ChaCha8Rng>,
}

impl RandomPixels {
    pub fn new(mode: LabelMode, seed: u64) -> Self {
        Self {
            mode,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Synthesizer for RandomPixels {
    fn label_mode(&self) -> LabelMode {
        self.mode
    }

    fn synthesize(&self, images: &Tensor<f32>, labels: &Tensor<f32>) -> Result<Tensor<f32>> {
        let n = images.shape()[0];
        if labels.shape() != [n, self.mode.dim()] {
            return Err(Error::Shape(format!("labels {:?} for {n} images", labels.shape())));
        }
        let mut rng = self.rng.lock().expect("rng lock");
        let len = n * IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
        let data = (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Tensor::new(&[n, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data)
    }
}
