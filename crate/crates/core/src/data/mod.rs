//! Corpus ingestion, pairing and the synthetic face corpus.

mod image_io;
mod manifest;
mod sampler;
pub mod synthetic;

pub use image_io::{decode_image, encode_png, load_image, postprocess, preprocess, resize_bilinear, save_png};
pub use manifest::{label_names, load_manifest, parse_manifest, CorpusManifest, ManifestRow, AU_RAW_MAX};
pub use sampler::{
    sample_pairs, sample_pairs_au, sample_pairs_emotion, AuPairing, FacePair, DEFAULT_PER_AU_CAP, DEFAULT_ZERO_FRAMES,
};

use crate::error::{Error, Result};
use crate::model::label_batch;
use crate::tensor::Tensor;

/// A manifest with every image decoded and preprocessed.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    images: Vec<Tensor<f32>>,
}

/// Source images, target images and labels for one step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub source: Tensor<f32>,
    pub target: Tensor<f32>,
    pub labels: Tensor<f32>,
}

impl Corpus {
    /// Loads every image of the manifest from disk.
    pub fn load(manifest: CorpusManifest) -> Result<Self> {
        let mut images = Vec::with_capacity(manifest.len());
        let mut size = None;
        for row in &manifest.rows {
            let path = manifest.resolve(row);
            let img = load_image(&path)?;
            match size {
                None => size = Some(img.dimensions()),
                Some(s) if s != img.dimensions() => {
                    return Err(Error::Validation(format!(
                        "{} is {:?}, earlier images are {s:?}",
                        path.display(),
                        img.dimensions()
                    )))
                }
                Some(_) => {}
            }
            images.push(preprocess(&img));
        }
        Ok(Self { manifest, images })
    }

    /// Wraps already decoded images, one per manifest row.
    pub fn from_images(manifest: CorpusManifest, images: &[image::RgbImage]) -> Result<Self> {
        if images.len() != manifest.len() {
            return Err(Error::Validation(format!(
                "{} images for {} manifest rows",
                images.len(),
                manifest.len()
            )));
        }
        Ok(Self {
            images: images.iter().map(preprocess).collect(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, row: usize) -> &Tensor<f32> {
        &self.images[row]
    }

    /// Stacks a slice of pairs into batch tensors.
    pub fn batch(&self, pairs: &[FacePair]) -> Result<Batch> {
        let sources: Vec<&Tensor<f32>> = pairs.iter().map(|p| &self.images[p.source]).collect();
        let targets: Vec<&Tensor<f32>> = pairs.iter().map(|p| &self.images[p.target]).collect();
        let labels: Vec<_> = pairs.iter().map(|p| &p.label).collect();
        Ok(Batch {
            source: Tensor::stack(&sources)?,
            target: Tensor::stack(&targets)?,
            labels: label_batch(&labels)?,
        })
    }
}

impl synthetic::SyntheticCorpus {
    pub fn to_corpus(&self) -> Result<Corpus> {
        Corpus::from_images(self.manifest.clone(), &self.images)
    }
}
