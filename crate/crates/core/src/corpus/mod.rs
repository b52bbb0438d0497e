//! Audio ingestion, log-Mel features, phone alignments, corpus manifests and
//! a synthetic phone corpus with exact alignments.

mod alignments;
mod features;
mod manifest;
mod synth;
mod wav;

pub use alignments::{
    load_alignments, parse_alignments, segment_frames, write_alignments, AlignmentRecord, Alignments, SENTINEL,
};
pub use features::{log_mel, mel_filterbank, FeatureConfig, LOG_FLOOR};
pub use manifest::{Corpus, ManifestEntry, MANIFEST_FILE, ALIGNMENTS_FILE};
pub use synth::{synth_corpus, write_corpus, SynthCorpus, SynthSpec};
pub use wav::{load_wav, write_wav};

/// Audio sample rate everywhere in the crate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Samples per 10 ms frame.
pub const HOP: usize = 160;

/// Seconds per frame.
pub const FRAME_SECONDS: f64 = HOP as f64 / SAMPLE_RATE as f64;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub subset: String,
    /// Samples in `[-1, 1]` at [`SAMPLE_RATE`].
    pub samples: Vec<f32>,
}

impl Utterance {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}
