use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_alignments, write_wav, AlignmentRecord, Alignments, Corpus, ManifestEntry, Utterance, ALIGNMENTS_FILE, SAMPLE_RATE, SENTINEL};
use crate::error::{Error, Result};
use crate::rng::{rng_for, split, split_index, Rng};

/// Parameters of the synthetic phone corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub phones: usize,
    pub speakers: usize,
    pub utterances: usize,
    pub min_phones_per_utterance: usize,
    pub max_phones_per_utterance: usize,
    /// Phone durations are normal with this mean and deviation, truncated
    /// symmetrically to `mean +- duration_clip` seconds.
    pub duration_mean: f64,
    pub duration_std: f64,
    pub duration_clip: f64,
    /// Standard deviation of additive white noise.
    pub noise: f64,
    /// Each speaker scales every phone frequency by a factor drawn from
    /// `1 +- speaker_shift`.
    pub speaker_shift: f64,
    /// Subset labels, assigned to utterances round robin.
    pub subsets: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            phones: 8,
            speakers: 4,
            utterances: 40,
            min_phones_per_utterance: 15,
            max_phones_per_utterance: 35,
            duration_mean: 0.09,
            duration_std: 0.05,
            duration_clip: 0.07,
            noise: 0.02,
            speaker_shift: 0.1,
            subsets: vec!["train".into()],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.phones < 2 || self.speakers < 2 {
            return bad("need at least 2 phones and 2 speakers");
        }
        if self.utterances == 0 || self.subsets.is_empty() {
            return bad("need at least one utterance and one subset");
        }
        if self.min_phones_per_utterance == 0 || self.min_phones_per_utterance > self.max_phones_per_utterance {
            return bad("phones per utterance must satisfy 1 <= min <= max");
        }
        if !(self.duration_mean > 0.0 && self.duration_std >= 0.0 && self.duration_clip >= 0.0) {
            return bad("duration mean must be positive, deviation and clip non-negative");
        }
        if self.duration_mean - self.duration_clip < 0.02 - 1e-12 {
            return bad("shortest phone (mean - clip) must be at least 20 ms");
        }
        if !(self.noise >= 0.0 && (0.0..1.0).contains(&self.speaker_shift)) {
            return bad("noise must be non-negative and speaker shift in [0, 1)");
        }
        Ok(())
    }

    pub fn phone_label(p: usize) -> String {
        format!("ph{p}")
    }

    pub fn speaker_label(s: usize) -> String {
        format!("spk{s}")
    }
}

/// Sinusoid components of one phone: (frequency Hz, amplitude, phase).
fn phone_partials(spec: &SynthSpec, phone: usize) -> Vec<(f64, f64, f64)> {
    let mut r = rng_for(split_index(spec.seed, phone as u64), "phone");
    let n = r.random_range(2..=3);
    // the lowest partial sits in its own slot so phones are spectrally distinct
    let slot = 2800.0 / spec.phones as f64;
    let base = 250.0 + slot * (phone as f64 + r.random_range(0.2..0.8));
    let mut parts = vec![(base, 1.0, r.random_range(0.0..2.0 * PI))];
    for _ in 1..n {
        parts.push((
            r.random_range(400.0..4500.0),
            r.random_range(0.3..0.9),
            r.random_range(0.0..2.0 * PI),
        ));
    }
    parts
}

fn speaker_factor(spec: &SynthSpec, speaker: usize) -> f64 {
    let mut r = rng_for(split_index(spec.seed, speaker as u64), "speaker");
    1.0 + spec.speaker_shift * r.random_range(-1.0..=1.0)
}

/// Noise-free waveform of one phone token of `len` samples.
fn render_phone(parts: &[(f64, f64, f64)], factor: f64, len: usize) -> Vec<f64> {
    let total: f64 = parts.iter().map(|p| p.1).sum();
    let ramp = (0.005 * SAMPLE_RATE as f64) as usize;
    (0..len)
        .map(|n| {
            let t = n as f64 / SAMPLE_RATE as f64;
            let s: f64 = parts.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * factor * t + ph).sin()).sum();
            let edge = n.min(len - 1 - n);
            let gain = if edge < ramp { 0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos() } else { 1.0 };
            0.5 * gain * s / total
        })
        .collect()
}

fn draw_duration(spec: &SynthSpec, r: &mut Rng) -> usize {
    let normal = Normal::new(spec.duration_mean, spec.duration_std).expect("validated deviation");
    let d = loop {
        let d: f64 = normal.sample(r);
        if (d - spec.duration_mean).abs() <= spec.duration_clip {
            break d;
        }
    };
    (d * SAMPLE_RATE as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub utterances: Vec<Utterance>,
    pub alignments: Alignments,
}

/// Generates a corpus whose alignments are exact by construction.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let partials: Vec<_> = (0..spec.phones).map(|p| phone_partials(spec, p)).collect();
    let factors: Vec<_> = (0..spec.speakers).map(|s| speaker_factor(spec, s)).collect();
    let mut utterances = Vec::with_capacity(spec.utterances);
    let mut alignments = Alignments::new();
    for u in 0..spec.utterances {
        let mut r = Rng::clone(&rng_for(split_index(split(spec.seed, "utterance"), u as u64), "draw"));
        let speaker = u % spec.speakers;
        let id = format!("{}-u{u:04}", SynthSpec::speaker_label(speaker));
        let count = r.random_range(spec.min_phones_per_utterance..=spec.max_phones_per_utterance);
        let mut phones: Vec<usize> = Vec::with_capacity(count);
        while phones.len() < count {
            let p = r.random_range(0..spec.phones);
            if phones.last() != Some(&p) {
                phones.push(p);
            }
        }
        let mut samples = Vec::new();
        let mut records = Vec::with_capacity(count);
        for (i, &p) in phones.iter().enumerate() {
            let len = draw_duration(spec, &mut r);
            let start = samples.len();
            samples.extend(render_phone(&partials[p], factors[speaker], len));
            let label = |j: Option<&usize>| j.map_or(SENTINEL.to_string(), |&q| SynthSpec::phone_label(q));
            records.push(AlignmentRecord {
                utterance_id: id.clone(),
                onset: start as f64 / SAMPLE_RATE as f64,
                offset: samples.len() as f64 / SAMPLE_RATE as f64,
                phone: SynthSpec::phone_label(p),
                prev_phone: label(i.checked_sub(1).and_then(|k| phones.get(k))),
                next_phone: label(phones.get(i + 1)),
                speaker: SynthSpec::speaker_label(speaker),
            });
        }
        if spec.noise > 0.0 {
            let noise = Normal::new(0.0, spec.noise).expect("validated noise");
            for s in samples.iter_mut() {
                *s += noise.sample(&mut r);
            }
        }
        // quantize to the 16-bit grid so written files round-trip exactly
        let samples = samples
            .iter()
            .map(|&s| ((s * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0) as f32)
            .collect();
        alignments.insert(id.clone(), records);
        utterances.push(Utterance {
            id,
            speaker: SynthSpec::speaker_label(speaker),
            subset: spec.subsets[u % spec.subsets.len()].clone(),
            samples,
        });
    }
    Ok(SynthCorpus { utterances, alignments })
}

/// Writes `manifest.tsv`, `alignments.txt` and `wav/<id>.wav` under `root`.
pub fn write_corpus(root: &Path, corpus: &SynthCorpus) -> Result<Corpus> {
    let wav_dir = root.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let rel = PathBuf::from("wav").join(format!("{}.wav", u.id));
        write_wav(&root.join(&rel), &u.samples)?;
        entries.push(ManifestEntry {
            id: u.id.clone(),
            speaker: u.speaker.clone(),
            subset: u.subset.clone(),
            wav: rel,
            samples: u.samples.len(),
        });
    }
    Corpus::write_manifest(root, &entries)?;
    write_alignments(&root.join(ALIGNMENTS_FILE), &corpus.alignments)?;
    Corpus::open(root)
}

#[cfg(test)]
mod tests {
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    use super::*;

    fn centroid(x: &[f64]) -> f64 {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, c) in buf[..n / 2].iter().enumerate() {
            let f = k as f64 * SAMPLE_RATE as f64 / n as f64;
            num += f * c.norm();
            den += c.norm();
        }
        num / den
    }

    #[test]
    fn same_phone_same_speaker_is_identical_without_noise() {
        let spec = SynthSpec::default();
        let parts = phone_partials(&spec, 3);
        let a = render_phone(&parts, speaker_factor(&spec, 1), 1440);
        let b = render_phone(&phone_partials(&spec, 3), speaker_factor(&spec, 1), 1440);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_phones_have_distinct_centroids() {
        let spec = SynthSpec::default();
        let c: Vec<f64> = (0..spec.phones)
            .map(|p| centroid(&render_phone(&phone_partials(&spec, p), 1.0, 4096)))
            .collect();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert!((c[i] - c[j]).abs() > 1.0, "phones {i} and {j}: {} vs {}", c[i], c[j]);
            }
        }
    }

    #[test]
    fn deterministic_and_exactly_aligned() {
        let spec = SynthSpec {
            utterances: 6,
            ..SynthSpec::default()
        };
        let a = synth_corpus(&spec).unwrap();
        assert_eq!(a, synth_corpus(&spec).unwrap());
        for u in &a.utterances {
            let recs = &a.alignments[&u.id];
            assert_eq!(recs[0].onset, 0.0);
            assert!((recs.last().unwrap().offset - u.duration()).abs() < 1e-12);
            assert_eq!(recs[0].prev_phone, SENTINEL);
            assert_eq!(recs.last().unwrap().next_phone, SENTINEL);
            for w in recs.windows(2) {
                assert_eq!(w[0].offset, w[1].onset);
                assert_ne!(w[0].phone, w[1].phone);
                assert_eq!(w[0].next_phone, w[1].phone);
                assert!(w[0].frames().is_some());
            }
            assert!(u.samples.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn duration_distribution() {
        let spec = SynthSpec::default();
        let mut r = crate::rng::rng(5);
        let d: Vec<f64> = (0..4000).map(|_| draw_duration(&spec, &mut r) as f64 / 16000.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!((mean - 0.09).abs() < 0.005, "{mean}");
        assert!(d.iter().all(|&x| (0.02..=0.16).contains(&x)));
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        for spec in [
            SynthSpec { phones: 1, ..SynthSpec::default() },
            SynthSpec { duration_mean: 0.0, ..SynthSpec::default() },
            SynthSpec { duration_clip: 0.2, ..SynthSpec::default() },
        ] {
            assert!(synth_corpus(&spec).is_err());
        }
    }

    #[test]
    fn written_corpus_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            utterances: 3,
            subsets: vec!["train".into(), "dev".into()],
            ..SynthSpec::default()
        };
        let synth = synth_corpus(&spec).unwrap();
        let corpus = write_corpus(dir.path(), &synth).unwrap();
        assert_eq!(corpus.entries().len(), 3);
        assert_eq!(corpus.load_all().unwrap(), synth.utterances);
        assert_eq!(corpus.alignments().unwrap(), synth.alignments);
        assert_eq!(corpus.clone().restrict(&["dev".into()]).entries().len(), 1);
    }
}
