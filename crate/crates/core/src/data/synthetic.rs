//! Procedural cartoon faces with known identity and expression parameters.
//!
//! Four identity parameters (skin tone, face aspect, eye spacing, nose
//! length) and four expression parameters drive a deterministic 32×32
//! renderer. Expression parameters map onto four AU label slots, so a
//! corpus of these faces exercises the full AU pipeline while every image
//! has an exact ground truth.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io::save_png;
use super::manifest::{CorpusManifest, ManifestRow};
use crate::error::{Error, Result};
use crate::labels::{au_index, LabelMode, LabelVector};
use crate::model::IMAGE_SIZE;

/// Label slots driven by the expression parameters, in parameter order.
pub const EXPRESSION_AUS: [&str; 4] = ["AU2", "AU4", "AU26", "AU12"];

pub const IDENTITY_NAMES: [&str; 4] = ["skin_tone", "face_aspect", "eye_spacing", "nose_length"];
pub const EXPRESSION_NAMES: [&str; 4] = ["brow_raise", "brow_lower", "mouth_open", "mouth_corner"];

/// Minimum Euclidean distance between identity vectors of a corpus.
pub const MIN_IDENTITY_DISTANCE: f64 = 0.05;

/// Region the mouth parameters can touch: `[x0, x1) × [y0, y1)` in pixels.
pub const MOUTH_BOX: [usize; 4] = [11, 21, 19, 26];

const SUPERSAMPLE: usize = 4;

const BACKGROUND: [f64; 3] = [46.0, 64.0, 92.0];
const SKIN_LIGHT: [f64; 3] = [240.0, 206.0, 176.0];
const SKIN_DARK: [f64; 3] = [112.0, 72.0, 48.0];
const EYE: [f64; 3] = [24.0, 20.0, 28.0];
const BROW: [f64; 3] = [58.0, 36.0, 24.0];
const MOUTH: [f64; 3] = [128.0, 28.0, 44.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub skin_tone: f64,
    pub face_aspect: f64,
    pub eye_spacing: f64,
    pub nose_length: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    pub brow_raise: f64,
    pub brow_lower: f64,
    pub mouth_open: f64,
    pub mouth_corner: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFaceSpec {
    pub identity: Identity,
    pub expression: Expression,
}

impl Identity {
    pub fn to_array(self) -> [f64; 4] {
        [self.skin_tone, self.face_aspect, self.eye_spacing, self.nose_length]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            skin_tone: a[0],
            face_aspect: a[1],
            eye_spacing: a[2],
            nose_length: a[3],
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl Expression {
    pub const NEUTRAL: Self = Self {
        brow_raise: 0.0,
        brow_lower: 0.0,
        mouth_open: 0.0,
        mouth_corner: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.brow_raise, self.brow_lower, self.mouth_open, self.mouth_corner]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            brow_raise: a[0],
            brow_lower: a[1],
            mouth_open: a[2],
            mouth_corner: a[3],
        }
    }

    /// The AU label this expression corresponds to.
    pub fn to_label(self) -> LabelVector {
        let mut values = vec![0.0; LabelMode::Au.dim()];
        for (au, v) in EXPRESSION_AUS.iter().zip(self.to_array()) {
            values[au_index(au).expect("known AU")] = v;
        }
        LabelVector::new(LabelMode::Au, values).expect("expression params are in range")
    }

    /// Reads the expression slots back out of an AU label.
    pub fn from_label(label: &LabelVector) -> Result<Self> {
        if label.mode() != LabelMode::Au {
            return Err(Error::Validation("synthetic expressions need an AU label".into()));
        }
        Ok(Self::from_array(
            EXPRESSION_AUS.map(|au| label.values()[au_index(au).expect("known AU")]),
        ))
    }
}

impl SyntheticFaceSpec {
    pub fn to_array(self) -> [f64; 8] {
        let mut out = [0.0; 8];
        out[..4].copy_from_slice(&self.identity.to_array());
        out[4..].copy_from_slice(&self.expression.to_array());
        out
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            identity: Identity::from_array([a[0], a[1], a[2], a[3]]),
            expression: Expression::from_array([a[4], a[5], a[6], a[7]]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = IDENTITY_NAMES.iter().chain(EXPRESSION_NAMES.iter());
        for (name, v) in names.zip(self.to_array()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Geometry derived from a spec, in pixel coordinates.
struct Layout {
    skin: [f64; 3],
    nose: [f64; 3],
    head_rx: f64,
    head_ry: f64,
    eye_dx: f64,
    brows: [((f64, f64), (f64, f64)); 2],
    nose_end: f64,
    mouth_open: f64,
    mouth_corner: f64,
}

const HEAD_CENTER: (f64, f64) = (16.0, 16.5);
const EYE_Y: f64 = 14.0;
const EYE_R: f64 = 1.2;
const BROW_Y: f64 = 10.0;
const BROW_DX: f64 = 4.2;
const BROW_HALF_LENGTH: f64 = 1.7;
const BROW_HALF_WIDTH: f64 = 0.55;
const NOSE_HALF_WIDTH: f64 = 0.9;
const NOSE_TOP: f64 = 14.5;
const MOUTH_CENTER: (f64, f64) = (16.0, 23.5);
const MOUTH_HALF_WIDTH: f64 = 4.0;

impl Layout {
    fn new(spec: &SyntheticFaceSpec) -> Self {
        let id = spec.identity;
        let ex = spec.expression;
        let skin = lerp3(SKIN_LIGHT, SKIN_DARK, id.skin_tone);
        let eye_dx = 2.8 + 1.8 * id.eye_spacing;
        let brow_y = BROW_Y - 1.6 * (ex.brow_raise - ex.brow_lower);
        let inner_drop = 1.2 * ex.brow_lower;
        let brow = |side: f64| {
            let cx = HEAD_CENTER.0 + side * BROW_DX;
            let outer = (cx + side * BROW_HALF_LENGTH, brow_y);
            let inner = (cx - side * BROW_HALF_LENGTH, brow_y + inner_drop);
            (outer, inner)
        };
        Self {
            skin,
            nose: skin.map(|c| c * 0.62),
            head_rx: 10.5 - 2.0 * id.face_aspect,
            head_ry: 11.0 + 2.0 * id.face_aspect,
            eye_dx,
            brows: [brow(-1.0), brow(1.0)],
            nose_end: 15.5 + 3.0 * id.nose_length,
            mouth_open: ex.mouth_open,
            mouth_corner: ex.mouth_corner,
        }
    }

    fn in_mouth(&self, x: f64, y: f64) -> bool {
        let u = (x - MOUTH_CENTER.0) / MOUTH_HALF_WIDTH;
        if u.abs() > 1.0 {
            return false;
        }
        let center = MOUTH_CENTER.1 - 1.8 * self.mouth_corner * u * u;
        let half_height = (0.5 + 1.6 * self.mouth_open) * (1.0 - u * u).sqrt();
        (y - center).abs() <= half_height
    }

    fn color_at(&self, x: f64, y: f64) -> [f64; 3] {
        let (hx, hy) = ((x - HEAD_CENTER.0) / self.head_rx, (y - HEAD_CENTER.1) / self.head_ry);
        if hx * hx + hy * hy > 1.0 {
            return BACKGROUND;
        }
        let mut color = self.skin;
        if (y - NOSE_TOP) >= 0.0 && y <= self.nose_end && (x - HEAD_CENTER.0).abs() <= NOSE_HALF_WIDTH {
            color = self.nose;
        }
        for side in [-1.0, 1.0] {
            let ex = HEAD_CENTER.0 + side * self.eye_dx;
            if (x - ex).powi(2) + (y - EYE_Y).powi(2) <= EYE_R * EYE_R {
                color = EYE;
            }
        }
        for (a, b) in self.brows {
            if segment_distance((x, y), a, b) <= BROW_HALF_WIDTH {
                color = BROW;
            }
        }
        if self.in_mouth(x, y) {
            color = MOUTH;
        }
        color
    }
}

/// Renders a spec to a 32×32 RGB image with 4×4 supersampling.
pub fn render_synthetic_face(spec: &SyntheticFaceSpec) -> Result<RgbImage> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let side = IMAGE_SIZE as u32;
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    Ok(RgbImage::from_fn(side, side, |px, py| {
        let mut acc = [0.0f64; 3];
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                let c = layout.color_at(x, y);
                for i in 0..3 {
                    acc[i] += c[i];
                }
            }
        }
        image::Rgb(acc.map(|v| (v / n).round().clamp(0.0, 255.0) as u8))
    }))
}

/// Draws `n` identities with pairwise distance above [`MIN_IDENTITY_DISTANCE`].
pub fn sample_identities(n: usize, rng: &mut impl Rng) -> Vec<Identity> {
    let mut out: Vec<Identity> = Vec::with_capacity(n);
    while out.len() < n {
        let candidate = Identity::from_array([(); 4].map(|_| rng.random::<f64>()));
        if out.iter().all(|o| o.distance(&candidate) > MIN_IDENTITY_DISTANCE) {
            out.push(candidate);
        }
    }
    out
}

/// A random expression with at least one active parameter.
pub fn sample_expression(rng: &mut impl Rng) -> Expression {
    loop {
        let a = [(); 4].map(|_| {
            if rng.random_bool(0.5) {
                rng.random_range(0.15..=1.0)
            } else {
                0.0
            }
        });
        if a.iter().any(|&v| v > 0.0) {
            return Expression::from_array(a);
        }
    }
}

/// One generated image with its ground truth, as stored in `ground_truth.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub image_path: PathBuf,
    pub subject_id: String,
    pub skin_tone: f64,
    pub face_aspect: f64,
    pub eye_spacing: f64,
    pub nose_length: f64,
    pub brow_raise: f64,
    pub brow_lower: f64,
    pub mouth_open: f64,
    pub mouth_corner: f64,
}

impl TruthRow {
    pub fn spec(&self) -> SyntheticFaceSpec {
        SyntheticFaceSpec::from_array([
            self.skin_tone,
            self.face_aspect,
            self.eye_spacing,
            self.nose_length,
            self.brow_raise,
            self.brow_lower,
            self.mouth_open,
            self.mouth_corner,
        ])
    }

    fn new(image_path: PathBuf, subject_id: String, spec: &SyntheticFaceSpec) -> Self {
        let [skin_tone, face_aspect, eye_spacing, nose_length, brow_raise, brow_lower, mouth_open, mouth_corner] =
            spec.to_array();
        Self {
            image_path,
            subject_id,
            skin_tone,
            face_aspect,
            eye_spacing,
            nose_length,
            brow_raise,
            brow_lower,
            mouth_open,
            mouth_corner,
        }
    }
}

/// A generated corpus: manifest rows line up with `truth` and `images`.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub truth: Vec<TruthRow>,
    pub images: Vec<RgbImage>,
}

/// Generates `n_subjects` identities with `n_expressions` images each.
///
/// The first image of every subject is neutral. Subject ids carry `prefix`
/// so corpora generated for training and held-out evaluation never collide.
pub fn make_synthetic_corpus_with_prefix(
    n_subjects: usize,
    n_expressions: usize,
    seed: u64,
    prefix: &str,
) -> Result<SyntheticCorpus> {
    if n_subjects < 2 {
        return Err(Error::Validation(
            "a synthetic corpus needs at least two subjects".into(),
        ));
    }
    if n_expressions < 2 {
        return Err(Error::Validation("each subject needs at least two expressions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identities = sample_identities(n_subjects, &mut rng);
    for (i, a) in identities.iter().enumerate() {
        for b in &identities[..i] {
            assert!(a.distance(b) > MIN_IDENTITY_DISTANCE);
        }
    }
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    let mut images = Vec::new();
    for (s, identity) in identities.into_iter().enumerate() {
        let subject_id = format!("{prefix}{s:03}");
        for e in 0..n_expressions {
            let expression = if e == 0 {
                Expression::NEUTRAL
            } else {
                sample_expression(&mut rng)
            };
            let spec = SyntheticFaceSpec { identity, expression };
            let image_path = PathBuf::from(format!("{subject_id}/{e:03}.png"));
            images.push(render_synthetic_face(&spec)?);
            truth.push(TruthRow::new(image_path.clone(), subject_id.clone(), &spec));
            rows.push(ManifestRow {
                image_path,
                subject_id: subject_id.clone(),
                gaze: None,
                label: expression.to_label(),
            });
        }
    }
    let manifest = CorpusManifest::new(LabelMode::Au, rows, PathBuf::new())?;
    Ok(SyntheticCorpus {
        manifest,
        truth,
        images,
    })
}

pub fn make_synthetic_corpus(n_subjects: usize, n_expressions: usize, seed: u64) -> Result<SyntheticCorpus> {
    make_synthetic_corpus_with_prefix(n_subjects, n_expressions, seed, "s")
}

impl SyntheticCorpus {
    /// Writes PNGs, `manifest.csv` and `ground_truth.csv` under `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        for (row, img) in self.manifest.rows.iter().zip(&self.images) {
            let path = dir.join(&row.image_path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_png(img, &path)?;
        }
        let manifest_path = dir.join("manifest.csv");
        self.manifest.write(&manifest_path)?;
        write_ground_truth(&self.truth, &dir.join("ground_truth.csv"))?;
        self.manifest.root = dir.to_path_buf();
        Ok(manifest_path)
    }
}

pub fn write_ground_truth(rows: &[TruthRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TruthRow>, _>>()?;
    for row in &rows {
        row.spec().validate()?;
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}
