//! Identity retrieval, label control and reconstruction metrics on synthetic held-out faces.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::synthesize_one;
use super::{OracleRegressor, Synthesizer};
use crate::data::synthetic::{Expression, Identity, SyntheticCorpus, TruthRow, EXPRESSION_AUS};
use crate::data::{load_image, preprocess};
use crate::error::{Error, Result};
use crate::labels::{au_index, LabelMode, LabelVector};
use crate::tensor::Tensor;

/// Number of label values in one control sweep.
pub const SWEEP_STEPS: usize = 5;
/// A sweep counts as monotone if no step drops by more than this.
pub const MONOTONE_TOLERANCE: f64 = 0.01;
/// Minimum endpoint difference for a sweep to count as non-trivial.
pub const MIN_DYNAMIC_RANGE: f64 = 0.1;

pub const ORACLE_NOTE: &str = "Identity and expression are judged by a least-squares oracle fit on the \
synthetic renderer, standing in for human raters.";

/// One held-out subject: its true identity, a source frame and all its frames.
#[derive(Clone, Debug)]
pub struct HeldOutSubject {
    pub subject_id: String,
    pub identity: Identity,
    pub source: Tensor<f32>,
    pub frames: Vec<(Tensor<f32>, Expression)>,
}

#[derive(Clone, Debug)]
pub struct HeldOutSet {
    pub subjects: Vec<HeldOutSubject>,
}

impl HeldOutSet {
    fn from_rows(rows: Vec<(TruthRow, Tensor<f32>)>) -> Result<Self> {
        let mut grouped: BTreeMap<String, Vec<(TruthRow, Tensor<f32>)>> = BTreeMap::new();
        for (row, img) in rows {
            grouped.entry(row.subject_id.clone()).or_default().push((row, img));
        }
        if grouped.len() < 2 {
            return Err(Error::Validation(
                "identity retrieval needs at least two held-out subjects".into(),
            ));
        }
        let subjects = grouped
            .into_iter()
            .map(|(subject_id, rows)| {
                let identity = rows[0].0.spec().identity;
                if rows.iter().any(|(r, _)| r.spec().identity != identity) {
                    return Err(Error::Validation(format!(
                        "subject {subject_id} has inconsistent identity params"
                    )));
                }
                let source_idx = rows
                    .iter()
                    .position(|(r, _)| r.spec().expression == Expression::NEUTRAL)
                    .unwrap_or(0);
                Ok(HeldOutSubject {
                    subject_id,
                    identity,
                    source: rows[source_idx].1.clone(),
                    frames: rows.into_iter().map(|(r, img)| (img, r.spec().expression)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { subjects })
    }

    pub fn from_synthetic(corpus: &SyntheticCorpus) -> Result<Self> {
        Self::from_rows(
            corpus
                .truth
                .iter()
                .cloned()
                .zip(corpus.images.iter().map(preprocess))
                .collect(),
        )
    }

    /// Reads a ground-truth table; image paths resolve against `root`.
    pub fn load(truth: &[TruthRow], root: &Path) -> Result<Self> {
        let rows = truth
            .iter()
            .map(|r| Ok((r.clone(), preprocess(&load_image(&root.join(&r.image_path))?))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }
}

/// The labels identity retrieval is measured under: neutral, then each
/// synthetic AU alone at full intensity.
pub fn identity_label_set() -> Vec<LabelVector> {
    let zero = LabelVector::zeros_au();
    let mut out = vec![zero.clone()];
    for au in EXPRESSION_AUS {
        out.push(zero.with_value(au_index(au).expect("known AU"), 1.0).expect("in range"));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Top-1 retrieval accuracy.
    pub score: f64,
    pub correct: usize,
    pub trials: usize,
    /// Accuracy of guessing uniformly among the held-out subjects.
    pub chance: f64,
    pub per_subject: BTreeMap<String, usize>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Top-1 nearest-identity retrieval of synthesized faces among held-out subjects.
pub fn eval_identity(
    model: &dyn Synthesizer,
    held_out: &HeldOutSet,
    oracle: &OracleRegressor,
) -> Result<IdentityReport> {
    require_au(model)?;
    let truths: Vec<[f64; 4]> = held_out.subjects.iter().map(|s| s.identity.to_array()).collect();
    let labels = identity_label_set();
    let mut correct = 0;
    let mut per_subject = BTreeMap::new();
    for (i, subject) in held_out.subjects.iter().enumerate() {
        let mut hits = 0;
        for label in &labels {
            let out = synthesize_one(model, &subject.source, label)?;
            let guess = oracle.identity(&out)?;
            let nearest = truths
                .iter()
                .enumerate()
                .min_by(|a, b| distance(&guess, a.1).total_cmp(&distance(&guess, b.1)))
                .map(|(j, _)| j)
                .expect("at least two subjects");
            if nearest == i {
                hits += 1;
            }
        }
        correct += hits;
        per_subject.insert(subject.subject_id.clone(), hits);
    }
    let trials = held_out.subjects.len() * labels.len();
    Ok(IdentityReport {
        score: correct as f64 / trials as f64,
        correct,
        trials,
        chance: 1.0 / held_out.subjects.len() as f64,
        per_subject,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub subject_id: String,
    pub au: String,
    /// Regressed expression parameter at each sweep step.
    pub responses: Vec<f64>,
    pub monotone: bool,
    pub dynamic_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelControlReport {
    pub monotone_fraction: f64,
    /// Fraction of sweeps whose endpoints differ by more than [`MIN_DYNAMIC_RANGE`].
    pub dynamic_range_fraction: f64,
    pub sweeps: Vec<Sweep>,
}

pub fn is_monotone(values: &[f64], tolerance: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tolerance)
}

/// Sweeps each synthetic AU from 0 to 1 and checks the regressed parameter follows.
pub fn eval_label_control(
    model: &dyn Synthesizer,
    held_out: &HeldOutSet,
    oracle: &OracleRegressor,
) -> Result<LabelControlReport> {
    require_au(model)?;
    let steps: Vec<f64> = (0..SWEEP_STEPS).map(|i| i as f64 / (SWEEP_STEPS - 1) as f64).collect();
    let mut sweeps = Vec::new();
    for subject in &held_out.subjects {
        for (param, au) in EXPRESSION_AUS.iter().enumerate() {
            let slot = au_index(au)?;
            let responses = steps
                .iter()
                .map(|&v| {
                    let label = LabelVector::zeros_au().with_value(slot, v)?;
                    let out = synthesize_one(model, &subject.source, &label)?;
                    Ok(oracle.expression(&out)?[param])
                })
                .collect::<Result<Vec<f64>>>()?;
            let dynamic_range = responses[SWEEP_STEPS - 1] - responses[0];
            sweeps.push(Sweep {
                subject_id: subject.subject_id.clone(),
                au: au.to_string(),
                monotone: is_monotone(&responses, MONOTONE_TOLERANCE),
                dynamic_range,
                responses,
            });
        }
    }
    let n = sweeps.len() as f64;
    Ok(LabelControlReport {
        monotone_fraction: sweeps.iter().filter(|s| s.monotone).count() as f64 / n,
        dynamic_range_fraction: sweeps.iter().filter(|s| s.dynamic_range > MIN_DYNAMIC_RANGE).count() as f64 / n,
        sweeps,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Reconstruction error and expression agreement of source-to-frame synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Mean squared error against the real frame on the `[-1, 1]` scale.
    pub reconstruction_mse: f64,
    /// Pearson correlation of regressed expression params of synthesized
    /// frames with the true params of the real frames, pooled over params.
    pub expression_correlation: f64,
}

/// Re-synthesizes every held-out frame from its subject's source frame.
pub fn eval_transfer(
    model: &dyn Synthesizer,
    held_out: &HeldOutSet,
    oracle: &OracleRegressor,
) -> Result<TransferReport> {
    require_au(model)?;
    let (mut se, mut count) = (0.0, 0usize);
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    for subject in &held_out.subjects {
        for (frame, expression) in &subject.frames {
            let out = synthesize_one(model, &subject.source, &expression.to_label())?;
            se += out
                .data()
                .iter()
                .zip(frame.data())
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>();
            count += out.numel();
            predicted.extend(oracle.expression(&out)?);
            truth.extend(expression.to_array());
        }
    }
    Ok(TransferReport {
        reconstruction_mse: se / count as f64,
        expression_correlation: pearson(&predicted, &truth),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub identity_score: f64,
    pub label_monotonicity: f64,
    pub dynamic_range_fraction: f64,
    pub reconstruction_mse: f64,
    pub expression_correlation: f64,
    pub identity: IdentityReport,
    pub label_control: LabelControlReport,
    pub note: String,
}

pub fn evaluate(model: &dyn Synthesizer, held_out: &HeldOutSet, oracle: &OracleRegressor) -> Result<EvalReport> {
    let identity = eval_identity(model, held_out, oracle)?;
    let label_control = eval_label_control(model, held_out, oracle)?;
    let transfer = eval_transfer(model, held_out, oracle)?;
    Ok(EvalReport {
        identity_score: identity.score,
        label_monotonicity: label_control.monotone_fraction,
        dynamic_range_fraction: label_control.dynamic_range_fraction,
        reconstruction_mse: transfer.reconstruction_mse,
        expression_correlation: transfer.expression_correlation,
        identity,
        label_control,
        note: ORACLE_NOTE.into(),
    })
}

fn require_au(model: &dyn Synthesizer) -> Result<()> {
    if model.label_mode() != LabelMode::Au {
        return Err(Error::Validation("synthetic evaluation needs an AU-mode model".into()));
    }
    Ok(())
}
