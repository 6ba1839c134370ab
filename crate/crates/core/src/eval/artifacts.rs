//! Figure-style outputs: manifold grids, emotion blends and comparison strips.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::Synthesizer;
use crate::data::postprocess;
use crate::error::{Error, Result};
use crate::labels::{Emotion, LabelMode, LabelVector};
use crate::model::{label_batch, IMAGE_SIZE};
use crate::tensor::Tensor;

/// One sweep axis: a label slot and the values it takes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub index: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Varies along each row (columns of the tiled image).
    pub axis_x: GridAxis,
    /// Varies down the rows.
    pub axis_y: GridAxis,
    /// Values of every other label slot.
    pub base: LabelVector,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base.mode() != LabelMode::Au {
            return Err(Error::Validation("manifold grids sweep AU labels".into()));
        }
        if self.axis_x.index == self.axis_y.index {
            return Err(Error::Validation("grid axes must use different label slots".into()));
        }
        for axis in [&self.axis_x, &self.axis_y] {
            if axis.index >= self.base.dim() {
                return Err(Error::Validation(format!("label slot {} out of range", axis.index)));
            }
            if axis.values.is_empty() {
                return Err(Error::Validation("grid axis has no values".into()));
            }
            if let Some(v) = axis.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Validation(format!("grid value {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Label of the cell in row `row`, column `col`.
    pub fn cell_label(&self, row: usize, col: usize) -> Result<LabelVector> {
        self.base
            .with_value(self.axis_x.index, self.axis_x.values[col])?
            .with_value(self.axis_y.index, self.axis_y.values[row])
    }

    /// `n` evenly spaced values from 0 to 1.
    pub fn linspace(n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        }
    }
}

/// A tiled grid image and the tensor of every cell, row-major.
#[derive(Clone, Debug)]
pub struct ManifoldGrid {
    pub image: RgbImage,
    pub cells: Vec<Tensor<f32>>,
    pub rows: usize,
    pub cols: usize,
}

fn single(source: &Tensor<f32>) -> Result<Tensor<f32>> {
    match source.shape() {
        [3, 32, 32] => source.reshape(&[1, 3, IMAGE_SIZE, IMAGE_SIZE]),
        [1, 3, 32, 32] => Ok(source.clone()),
        s => Err(Error::Shape(format!("expected one [3, 32, 32] image, got {s:?}"))),
    }
}

/// Synthesizes one image for one label.
pub fn synthesize_one(model: &dyn Synthesizer, source: &Tensor<f32>, label: &LabelVector) -> Result<Tensor<f32>> {
    if label.mode() != model.label_mode() {
        return Err(Error::Validation(format!(
            "model expects {} labels, got {}",
            model.label_mode(),
            label.mode()
        )));
    }
    let out = model.synthesize(&single(source)?, &label_batch(&[label])?)?;
    out.reshape(&[3, IMAGE_SIZE, IMAGE_SIZE])
}

/// Tiles `[3, 32, 32]` tensors row-major into one image.
pub fn tile(images: &[Tensor<f32>], cols: usize) -> Result<RgbImage> {
    if images.is_empty() || cols == 0 {
        return Err(Error::Validation("nothing to tile".into()));
    }
    let rows = images.len().div_ceil(cols);
    let side = IMAGE_SIZE as u32;
    let mut out = RgbImage::new(cols as u32 * side, rows as u32 * side);
    for (i, t) in images.iter().enumerate() {
        let img = postprocess(t)?;
        let (x0, y0) = ((i % cols) as u32 * side, (i / cols) as u32 * side);
        for (x, y, p) in img.enumerate_pixels() {
            out.put_pixel(x0 + x, y0 + y, *p);
        }
    }
    Ok(out)
}

/// Sweeps two label slots over a grid, one synthesized face per cell.
pub fn manifold_grid(model: &dyn Synthesizer, source: &Tensor<f32>, spec: &GridSpec) -> Result<ManifoldGrid> {
    spec.validate()?;
    let (rows, cols) = (spec.axis_y.values.len(), spec.axis_x.values.len());
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            cells.push(synthesize_one(model, source, &spec.cell_label(r, c)?)?);
        }
    }
    Ok(ManifoldGrid {
        image: tile(&cells, cols)?,
        cells,
        rows,
        cols,
    })
}

/// Synthesizes a blend with `weight` on `a` and `1 - weight` on `b`.
pub fn interpolate_emotions(
    model: &dyn Synthesizer,
    source: &Tensor<f32>,
    a: Emotion,
    b: Emotion,
    weight: f64,
) -> Result<Tensor<f32>> {
    synthesize_one(model, source, &LabelVector::blend(a, b, weight)?)
}

/// Real frames on top, the source re-synthesized with each frame's label below.
#[derive(Clone, Debug)]
pub struct ComparisonStrip {
    pub image: RgbImage,
    pub generated: Vec<Tensor<f32>>,
}

pub fn comparison_strip(
    model: &dyn Synthesizer,
    frames: &[(Tensor<f32>, LabelVector)],
    source: usize,
) -> Result<ComparisonStrip> {
    let src = &frames
        .get(source)
        .ok_or_else(|| Error::Validation(format!("source index {source} out of range")))?
        .0;
    let generated = frames
        .iter()
        .map(|(_, label)| synthesize_one(model, src, label))
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<Tensor<f32>> = frames
        .iter()
        .map(|(t, _)| t.reshape(&[3, IMAGE_SIZE, IMAGE_SIZE]))
        .collect::<Result<_>>()?;
    all.extend(generated.iter().cloned());
    Ok(ComparisonStrip {
        image: tile(&all, frames.len())?,
        generated,
    })
}
