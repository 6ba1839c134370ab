//! Same-subject (source, target, target label) pairing.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{CorpusManifest, AU_RAW_MAX};
use crate::error::{Error, Result};
use crate::labels::{Emotion, LabelMode, LabelVector};

pub const DEFAULT_PER_AU_CAP: usize = 2000;
pub const DEFAULT_ZERO_FRAMES: usize = 1000;

/// A training triple. `source` and `target` index manifest rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FacePair {
    pub source: usize,
    pub target: usize,
    /// Label of the target frame.
    pub label: LabelVector,
    pub subject_id: String,
}

/// Pairs plus how many targets each AU (and the zero pool) contributed.
#[derive(Clone, Debug)]
pub struct AuPairing {
    pub pairs: Vec<FacePair>,
    pub per_au: Vec<usize>,
    pub zero_frames: usize,
}

/// Intensity bin of a rescaled AU value, one bin per original unit.
fn intensity_bin(v: f64) -> usize {
    ((v * AU_RAW_MAX).ceil() as usize).clamp(1, AU_RAW_MAX as usize)
}

/// Splits `cap` across bins proportionally to their sizes (largest remainder).
fn proportional_quotas(sizes: &[usize], cap: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * cap as f64 / total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = cap - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// AU-mode pairing.
///
/// For each AU, up to `per_au_cap` frames with a nonzero intensity for that
/// AU are drawn, stratified by intensity bin in proportion to the corpus
/// histogram. `zero_frames` all-zero frames are pooled once. Every target is
/// paired with a uniformly drawn frame of the same subject.
pub fn sample_pairs_au(
    manifest: &CorpusManifest,
    per_au_cap: usize,
    zero_frames: usize,
    seed: u64,
) -> Result<AuPairing> {
    if manifest.label_mode != LabelMode::Au {
        return Err(Error::Validation("AU pairing needs an AU-mode manifest".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = LabelMode::Au.dim();
    let mut targets = Vec::new();
    let mut per_au = vec![0; dim];

    for (au, count) in per_au.iter_mut().enumerate() {
        let mut bins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, row) in manifest.rows.iter().enumerate() {
            let v = row.label.values()[au];
            if v > 0.0 {
                bins.entry(intensity_bin(v)).or_default().push(i);
            }
        }
        let available: usize = bins.values().map(Vec::len).sum();
        if available == 0 {
            warn!("AU slot {au} has no nonzero frames; it contributes no targets");
            continue;
        }
        if available <= per_au_cap {
            for members in bins.values() {
                targets.extend_from_slice(members);
            }
            *count = available;
            continue;
        }
        let sizes: Vec<usize> = bins.values().map(Vec::len).collect();
        let quotas = proportional_quotas(&sizes, per_au_cap);
        for (members, quota) in bins.values_mut().zip(quotas) {
            members.shuffle(&mut rng);
            targets.extend_from_slice(&members[..quota]);
            *count += quota;
        }
    }

    let mut zeros: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.rows[i].label.is_zero())
        .collect();
    zeros.shuffle(&mut rng);
    zeros.truncate(zero_frames);
    let zero_count = zeros.len();
    targets.extend(zeros);

    let subjects = manifest.subjects();
    let pairs = targets
        .into_iter()
        .map(|t| {
            let row = &manifest.rows[t];
            let pool = &subjects[row.subject_id.as_str()];
            FacePair {
                source: *pool.choose(&mut rng).expect("subjects have rows"),
                target: t,
                label: row.label.clone(),
                subject_id: row.subject_id.clone(),
            }
        })
        .collect();
    Ok(AuPairing {
        pairs,
        per_au,
        zero_frames: zero_count,
    })
}

/// Emotion-mode pairing: every image with every image of the same subject
/// and gaze, itself included. Requires one image per emotion per cell.
pub fn sample_pairs_emotion(manifest: &CorpusManifest, seed: u64) -> Result<Vec<FacePair>> {
    if manifest.label_mode != LabelMode::Emotion {
        return Err(Error::Validation(
            "emotion pairing needs an emotion-mode manifest".into(),
        ));
    }
    let n_classes = Emotion::ALL.len();
    let mut cells: BTreeMap<(&str, &str), Vec<Option<usize>>> = BTreeMap::new();
    let mut problems = Vec::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        let gaze = row.gaze.as_deref().unwrap_or("");
        let emotion = match row.label.dominant_emotion() {
            Some(e) if row.label.values()[e.index()] == 1.0 => e,
            _ => {
                problems.push(format!("{} is not a one-hot emotion", row.image_path.display()));
                continue;
            }
        };
        let slot = &mut cells
            .entry((row.subject_id.as_str(), gaze))
            .or_insert_with(|| vec![None; n_classes])[emotion.index()];
        if slot.is_some() {
            problems.push(format!(
                "subject {} gaze {gaze:?} has two {} images",
                row.subject_id,
                emotion.name()
            ));
        }
        *slot = Some(i);
    }
    for ((subject, gaze), slots) in &cells {
        for (e, slot) in slots.iter().enumerate() {
            if slot.is_none() {
                problems.push(format!(
                    "subject {subject} gaze {gaze:?} is missing {}",
                    Emotion::ALL[e].name()
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(format!(
            "incomplete emotion grid: {}",
            problems.join("; ")
        )));
    }

    let mut pairs = Vec::with_capacity(manifest.len() * n_classes);
    for slots in cells.values() {
        let members: Vec<usize> = slots.iter().map(|s| s.expect("checked")).collect();
        for &source in &members {
            for &target in &members {
                let row = &manifest.rows[target];
                pairs.push(FacePair {
                    source,
                    target,
                    label: row.label.clone(),
                    subject_id: row.subject_id.clone(),
                });
            }
        }
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(pairs)
}

/// Pairs for one epoch in whichever mode the manifest uses.
pub fn sample_pairs(manifest: &CorpusManifest, seed: u64) -> Result<Vec<FacePair>> {
    match manifest.label_mode {
        LabelMode::Au => Ok(sample_pairs_au(manifest, DEFAULT_PER_AU_CAP, DEFAULT_ZERO_FRAMES, seed)?.pairs),
        LabelMode::Emotion => sample_pairs_emotion(manifest, seed),
    }
}
