//! Corpus manifests: one CSV row per pre-aligned face image.
//!
//! ```text
//! image_path,subject_id,gaze,label_mode,l1,l2,...,l12
//! s01/0001.png,s01,,au,0,0.2,0,...
//! ```
//!
//! `label_mode` is `au` (intensities already in `[0, 1]`), `au5` (raw
//! intensities on the original 0–5 scale, divided by 5 on load) or
//! `emotion` (eight class weights in `l1..l8`, `l9..l12` empty). Image
//! paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labels::{LabelMode, LabelVector, AU_NAMES};

/// Largest raw AU intensity in the original annotation scale.
pub const AU_RAW_MAX: f64 = 5.0;

pub const LABEL_COLUMNS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub image_path: PathBuf,
    pub subject_id: String,
    pub gaze: Option<String>,
    pub label: LabelVector,
}

/// A validated corpus description.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub label_mode: LabelMode,
    pub rows: Vec<ManifestRow>,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = ["image_path", "subject_id", "gaze", "label_mode"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=LABEL_COLUMNS).map(|i| format!("l{i}")));
    h
}

impl CorpusManifest {
    /// Checks the structural invariants and builds a manifest.
    pub fn new(label_mode: LabelMode, rows: Vec<ManifestRow>, root: PathBuf) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("manifest has no rows".into()));
        }
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(&row.image_path) {
                return Err(Error::Validation(format!(
                    "duplicate image_path {}",
                    row.image_path.display()
                )));
            }
            if row.label.mode() != label_mode {
                return Err(Error::Validation(format!(
                    "row {} has label mode {}, manifest is {label_mode}",
                    row.image_path.display(),
                    row.label.mode()
                )));
            }
        }
        let manifest = Self { label_mode, rows, root };
        if let Some((subject, _)) = manifest.subjects().iter().find(|(_, idx)| idx.len() < 2) {
            return Err(Error::Validation(format!(
                "subject {subject} has a single image; pairing needs at least two"
            )));
        }
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row indices grouped by subject, in subject-id order.
    pub fn subjects(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            map.entry(row.subject_id.as_str()).or_default().push(i);
        }
        map
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.image_path)
    }

    /// Keeps only the rows whose subject is in `subjects`.
    pub fn filter_subjects(&self, subjects: &[String]) -> Result<Self> {
        let keep: HashSet<&str> = subjects.iter().map(String::as_str).collect();
        let rows = self
            .rows
            .iter()
            .filter(|r| keep.contains(r.subject_id.as_str()))
            .cloned()
            .collect();
        Self::new(self.label_mode, rows, self.root.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header())?;
        for row in &self.rows {
            let mut rec = vec![
                row.image_path.to_string_lossy().replace('\\', "/"),
                row.subject_id.clone(),
                row.gaze.clone().unwrap_or_default(),
                self.label_mode.to_string(),
            ];
            for i in 0..LABEL_COLUMNS {
                rec.push(row.label.values().get(i).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads and validates a manifest CSV.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(file, root)
}

/// Parses manifest CSV text from any reader.
pub fn parse_manifest(reader: impl std::io::Read, root: PathBuf) -> Result<CorpusManifest> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let got: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if got != header() {
        return Err(Error::Validation(format!(
            "manifest header must be {:?}, got {got:?}",
            header().join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut mode: Option<LabelMode> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let (row_mode, scale) = match field(3).to_ascii_lowercase().as_str() {
            "au5" => (LabelMode::Au, 1.0 / AU_RAW_MAX),
            other => (
                other
                    .parse::<LabelMode>()
                    .map_err(|e| Error::Validation(format!("line {line}: {e}")))?,
                1.0,
            ),
        };
        match mode {
            None => mode = Some(row_mode),
            Some(m) if m != row_mode => {
                return Err(Error::Validation(format!(
                    "line {line}: label_mode {row_mode} differs from earlier rows ({m})"
                )))
            }
            Some(_) => {}
        }
        let dim = row_mode.dim();
        let mut values = Vec::with_capacity(dim);
        for i in 0..LABEL_COLUMNS {
            let raw = field(4 + i);
            if i < dim {
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Validation(format!("line {line}: label column l{} is not a number: {raw:?}", i + 1))
                })?;
                values.push(v * scale);
            } else if !raw.is_empty() {
                return Err(Error::Validation(format!(
                    "line {line}: column l{} must be empty in {row_mode} mode",
                    i + 1
                )));
            }
        }
        let label = LabelVector::new(row_mode, values).map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        let image_path = field(0);
        let subject_id = field(1);
        if image_path.is_empty() || subject_id.is_empty() {
            return Err(Error::Validation(format!(
                "line {line}: image_path and subject_id are required"
            )));
        }
        let gaze = Some(field(2).to_string()).filter(|g| !g.is_empty());
        rows.push(ManifestRow {
            image_path: PathBuf::from(image_path),
            subject_id: subject_id.to_string(),
            gaze,
            label,
        });
    }
    let mode = mode.ok_or_else(|| Error::Validation("manifest has no rows".into()))?;
    CorpusManifest::new(mode, rows, root)
}

/// Human-readable names of the label columns for a mode.
pub fn label_names(mode: LabelMode) -> Vec<&'static str> {
    match mode {
        LabelMode::Au => AU_NAMES.to_vec(),
        LabelMode::Emotion => crate::labels::Emotion::ALL.iter().map(|e| e.name()).collect(),
    }
}
