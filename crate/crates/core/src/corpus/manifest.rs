use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{load_alignments, load_wav, Alignments, Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ALIGNMENTS_FILE: &str = "alignments.txt";

/// One line of `manifest.tsv`: `utterance_id speaker subset wav_path
/// n_samples`, tab separated, with the WAV path relative to the corpus root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: String,
    pub subset: String,
    pub wav: PathBuf,
    pub samples: usize,
}

/// A corpus directory: manifest, WAV files and an optional alignment file.
#[derive(Clone, Debug)]
pub struct Corpus {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.clone(),
                line,
                message,
            };
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 tab-separated fields, found {}", f.len())));
            }
            let samples = f[4]
                .trim()
                .parse()
                .map_err(|_| err(format!("sample count {:?} is not an integer", f[4])))?;
            if let Some(first) = seen.insert(f[0].to_string(), line) {
                return Err(err(format!("utterance {} already listed on line {first}", f[0])));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                speaker: f[1].to_string(),
                subset: f[2].to_string(),
                wav: PathBuf::from(f[3]),
                samples,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
        let mut text = String::from("# utterance_id\tspeaker\tsubset\twav_path\tn_samples\n");
        for e in entries {
            writeln!(text, "{}\t{}\t{}\t{}\t{}", e.id, e.speaker, e.subset, e.wav.display(), e.samples)
                .expect("writing to a string");
        }
        let path = root.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Keeps only entries whose subset is listed; an empty list keeps all.
    pub fn restrict(mut self, subsets: &[String]) -> Self {
        if !subsets.is_empty() {
            self.entries.retain(|e| subsets.contains(&e.subset));
        }
        self
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Utterance> {
        let path = self.root.join(&entry.wav);
        let samples = load_wav(&path)?;
        if samples.len() != entry.samples {
            return Err(Error::format(
                &path,
                format!("holds {} samples but the manifest lists {}", samples.len(), entry.samples),
            ));
        }
        Ok(Utterance {
            id: entry.id.clone(),
            speaker: entry.speaker.clone(),
            subset: entry.subset.clone(),
            samples,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Utterance>> {
        self.entries.iter().map(|e| self.load(e)).collect()
    }

    /// Utterance durations in seconds.
    pub fn durations(&self) -> HashMap<String, f64> {
        self.entries
            .iter()
            .map(|e| (e.id.clone(), e.samples as f64 / SAMPLE_RATE as f64))
            .collect()
    }

    /// Alignments from `alignments.txt`, checked against the manifest.
    pub fn alignments(&self) -> Result<Alignments> {
        load_alignments(&self.root.join(ALIGNMENTS_FILE), Some(&self.durations()))
    }
}
