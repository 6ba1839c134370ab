//! Expression labels: AU intensities or emotion class weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The twelve annotated action units, in label-slot order.
pub const AU_NAMES: [&str; 12] = [
    "AU1", "AU2", "AU4", "AU5", "AU6", "AU9", "AU12", "AU15", "AU17", "AU20", "AU25", "AU26",
];

/// How an expression label is encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Twelve action-unit intensities in `[0, 1]`.
    Au,
    /// Eight emotion class weights.
    Emotion,
}

impl LabelMode {
    pub fn dim(self) -> usize {
        match self {
            LabelMode::Au => AU_NAMES.len(),
            LabelMode::Emotion => Emotion::ALL.len(),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Au => "au",
            LabelMode::Emotion => "emotion",
        })
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "au" => Ok(LabelMode::Au),
            "emotion" => Ok(LabelMode::Emotion),
            other => Err(Error::Validation(format!("unknown label_mode {other:?}"))),
        }
    }
}

/// Emotion classes in label-slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happiness,
    Sadness,
    Anger,
    Disgust,
    Contempt,
    Fear,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Emotion::Neutral,
        Emotion::Happiness,
        Emotion::Sadness,
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Contempt,
        Emotion::Fear,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happiness => "happiness",
            Emotion::Sadness => "sadness",
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Contempt => "contempt",
            Emotion::Fear => "fear",
            Emotion::Surprise => "surprise",
        }
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown emotion {s:?}")))
    }
}

/// Slot index of an AU name such as `"AU26"`.
pub fn au_index(name: &str) -> Result<usize> {
    let upper = name.trim().to_ascii_uppercase();
    AU_NAMES
        .iter()
        .position(|&n| n == upper)
        .ok_or_else(|| Error::Validation(format!("unknown action unit {name:?}")))
}

const SUM_TOLERANCE: f64 = 1e-4;

/// A validated target expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    mode: LabelMode,
    values: Vec<f64>,
}

impl LabelVector {
    pub fn new(mode: LabelMode, values: Vec<f64>) -> Result<Self> {
        if values.len() != mode.dim() {
            return Err(Error::Validation(format!(
                "{mode} label needs {} entries, got {}",
                mode.dim(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("label entry {v} outside [0, 1]")));
        }
        if mode == LabelMode::Emotion {
            let sum: f64 = values.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::Validation(format!("emotion label must sum to 1, sums to {sum}")));
            }
        }
        Ok(Self { mode, values })
    }

    pub fn zeros_au() -> Self {
        Self {
            mode: LabelMode::Au,
            values: vec![0.0; LabelMode::Au.dim()],
        }
    }

    pub fn one_hot(emotion: Emotion) -> Self {
        let mut values = vec![0.0; LabelMode::Emotion.dim()];
        values[emotion.index()] = 1.0;
        Self {
            mode: LabelMode::Emotion,
            values,
        }
    }

    /// `weight` on `a`, `1 - weight` on `b`.
    pub fn blend(a: Emotion, b: Emotion, weight: f64) -> Result<Self> {
        if a == b {
            return Err(Error::Validation(format!(
                "blend needs two different emotions, got {} twice",
                a.name()
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Validation(format!("blend weight {weight} outside [0, 1]")));
        }
        let mut values = vec![0.0; LabelMode::Emotion.dim()];
        values[a.index()] = weight;
        values[b.index()] = 1.0 - weight;
        Self::new(LabelMode::Emotion, values)
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Copy with slot `index` set to `value` (AU mode only).
    pub fn with_value(&self, index: usize, value: f64) -> Result<Self> {
        let mut values = self.values.clone();
        *values
            .get_mut(index)
            .ok_or_else(|| Error::Validation(format!("label index {index} out of range")))? = value;
        Self::new(self.mode, values)
    }

    /// Whether every entry is zero.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// The single class of a one-hot emotion label.
    pub fn dominant_emotion(&self) -> Option<Emotion> {
        if self.mode != LabelMode::Emotion {
            return None;
        }
        let (i, _) = self.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        Some(Emotion::ALL[i])
    }
}
