use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Healthy = 0,
    Dysarthric = 1,
}

impl Label {
    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Healthy),
            1 => Ok(Label::Dysarthric),
            other => Err(Error::Input(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Articulatory posteriors, values in [0, 1].
    Ap,
    /// Log-magnitude STFT.
    Stft,
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap" => Ok(FeatureKind::Ap),
            "stft" => Ok(FeatureKind::Stft),
            other => Err(Error::Config(format!("unknown feature kind `{other}` (ap|stft)"))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Ap => "ap",
            FeatureKind::Stft => "stft",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub speaker_id: String,
    pub label: Label,
    pub item_id: String,
    /// As written in the manifest, relative to the manifest's directory.
    pub path: PathBuf,
    pub features: FeatureMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestMeta {
    pub database: String,
    pub frame_ms: f32,
    pub kind: FeatureKind,
}

/// A corpus: every utterance with its speaker, label and item identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub meta: ManifestMeta,
    pub entries: Vec<UtteranceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    speaker_id: String,
    label: u8,
    item_id: String,
    path: String,
}

/// Tolerance for AP values sitting marginally outside [0, 1].
const AP_RANGE_SLACK: f32 = 1e-4;

impl Manifest {
    pub fn new(meta: ManifestMeta, entries: Vec<UtteranceRecord>) -> Result<Self> {
        let m = Manifest { meta, entries };
        m.validate()?;
        Ok(m)
    }

    /// Reads the CSV (`speaker_id,label,item_id,path`) and every feature
    /// file it references.
    pub fn load(path: &Path, kind: FeatureKind) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["speaker_id", "label", "item_id", "path"] {
            return Err(Error::Input(format!(
                "{}: header must be speaker_id,label,item_id,path",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            let label = Label::from_index(row.label)
                .map_err(|e| e.context(format!("{} row {}", path.display(), line + 2)))?;
            let rel = PathBuf::from(&row.path);
            let features = FeatureMatrix::read(&base.join(&rel))?;
            entries.push(UtteranceRecord {
                speaker_id: row.speaker_id,
                label,
                item_id: row.item_id,
                path: rel,
                features,
            });
        }
        let database = base
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into());
        Manifest::new(
            ManifestMeta {
                database,
                frame_ms: 10.0,
                kind,
            },
            entries,
        )
    }

    /// Writes the CSV to `dir/manifest.csv` and each utterance's features
    /// to `dir/<path>`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&csv_path)
            .map_err(|e| Error::Input(format!("{}: {e}", csv_path.display())))?;
        for e in &self.entries {
            let target = dir.join(&e.path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            }
            e.features.write(&target)?;
            w.serialize(CsvRow {
                speaker_id: e.speaker_id.clone(),
                label: e.label as u8,
                item_id: e.item_id.clone(),
                path: e.path.to_string_lossy().replace('\\', "/"),
            })
            .map_err(|err| Error::Input(format!("{}: {err}", csv_path.display())))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        Ok(csv_path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Input("manifest has no entries".into()));
        }
        let mut seen = BTreeSet::new();
        let mut labels: HashMap<&str, Label> = HashMap::new();
        let dim = self.entries[0].features.features();
        for e in &self.entries {
            if !seen.insert((e.speaker_id.as_str(), e.item_id.as_str())) {
                return Err(Error::Input(format!(
                    "duplicate entry for speaker {} item {}",
                    e.speaker_id, e.item_id
                )));
            }
            if let Some(prev) = labels.insert(&e.speaker_id, e.label) {
                if prev != e.label {
                    return Err(Error::Input(format!(
                        "speaker {} has conflicting labels",
                        e.speaker_id
                    )));
                }
            }
            if e.features.features() != dim {
                return Err(Error::Input(format!(
                    "{}: {} features, corpus uses {dim}",
                    e.path.display(),
                    e.features.features()
                )));
            }
            if self.meta.kind == FeatureKind::Ap
                && e
                    .features
                    .data()
                    .iter()
                    .any(|&v| !(-AP_RANGE_SLACK..=1.0 + AP_RANGE_SLACK).contains(&v))
            {
                return Err(Error::Input(format!(
                    "{}: AP features must lie in [0, 1]",
                    e.path.display()
                )));
            }
            if !e.features.as_tensor().all_finite() {
                return Err(Error::Input(format!("{}: non-finite feature", e.path.display())));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.entries[0].features.features()
    }

    /// Speaker id → label, sorted by speaker id.
    pub fn speakers(&self) -> BTreeMap<String, Label> {
        self.entries
            .iter()
            .map(|e| (e.speaker_id.clone(), e.label))
            .collect()
    }

    pub fn label_of(&self, speaker: &str) -> Option<Label> {
        self.entries
            .iter()
            .find(|e| e.speaker_id == speaker)
            .map(|e| e.label)
    }

    pub fn items(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.item_id.clone()).collect()
    }

    /// Indices of a speaker's utterances, in manifest order.
    pub fn utterances_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.speaker_id == speaker)
            .map(|(i, _)| i)
    }

    /// `(speaker, item) → entry index`.
    pub fn index(&self) -> HashMap<(String, String), usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.speaker_id.clone(), e.item_id.clone()), i))
            .collect()
    }
}
