use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub window_s: f64,
    pub hop_s: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            window_s: 0.025,
            hop_s: 0.010,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl FeatureConfig {
    pub fn window(&self) -> usize {
        (self.window_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn hop(&self) -> usize {
        (self.hop_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.window().next_power_of_two()
    }

    /// Frames produced for `samples` input samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop()
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if self.n_mels == 0 || self.window() == 0 || self.hop() == 0 {
            return Err(Error::Config("feature window, hop and band count must be positive".into()));
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "feature band edges must satisfy 0 <= fmin < fmax <= {nyquist}, got {} and {}",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels` rows of `n_fft / 2 + 1` weights, with
/// centers equally spaced on the mel scale between `fmin` and `fmax`.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft() / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / cfg.n_fft() as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log mel-band magnitudes, one frame per hop.
///
/// Frame `f` analyses the Hann-windowed samples starting at `f * hop`;
/// windows running past the end are zero padded, so a signal of `N`
/// samples yields `N / hop` frames.
pub fn log_mel(samples: &[f32], cfg: &FeatureConfig) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let (win, hop, n_fft) = (cfg.window(), cfg.hop(), cfg.n_fft());
    if samples.len() < win {
        return Err(Error::invalid(format!(
            "audio of {} samples is shorter than one analysis window of {win}",
            samples.len()
        )));
    }
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let bank = mel_filterbank(cfg);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let frames = cfg.frames_for(samples.len());
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut mag = vec![0.0; n_fft / 2 + 1];
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = if i < win { samples.get(start + i).copied().unwrap_or(0.0) as f64 * hann[i] } else { 0.0 };
            *b = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&mag).map(|(w, m)| w * m).sum();
            out.push(e.max(LOG_FLOOR).ln() as f32);
        }
    }
    Tensor::new(&[frames, cfg.n_mels], out)
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::rng::rng;

    #[test]
    fn frame_counts() {
        let cfg = FeatureConfig::default();
        assert_eq!((cfg.window(), cfg.hop(), cfg.n_fft()), (400, 160, 512));
        let one_second = log_mel(&vec![0.1; 16000], &cfg).unwrap();
        assert_eq!(one_second.shape(), &[100, 80]);
        assert_eq!(log_mel(&vec![0.1; 400], &cfg).unwrap().shape(), &[2, 80]);
        assert!(log_mel(&vec![0.1; 399], &cfg).is_err());
    }

    #[test]
    fn white_noise_is_finite_above_floor() {
        let mut r = rng(1);
        let x: Vec<f32> = (0..8000).map(|_| r.random_range(-0.5..0.5)).collect();
        let f = log_mel(&x, &FeatureConfig::default()).unwrap();
        assert!(f.data().iter().all(|&v| v.is_finite() && v as f64 > LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_in_the_band_covering_it() {
        let cfg = FeatureConfig::default();
        let x: Vec<f32> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin() as f32 * 0.5)
            .collect();
        let feats = log_mel(&x, &cfg).unwrap();
        // 1 kHz falls exactly on FFT bin 32 at 31.25 Hz per bin
        let bank = mel_filterbank(&cfg);
        let expected = (0..cfg.n_mels)
            .max_by(|&a, &b| bank[a][32].partial_cmp(&bank[b][32]).unwrap())
            .unwrap();
        let row = feats.row(50);
        let peak = (0..cfg.n_mels).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        assert_eq!(peak, expected);
    }

    #[test]
    fn filters_cover_the_band() {
        let bank = mel_filterbank(&FeatureConfig::default());
        assert_eq!(bank.len(), 80);
        assert!(bank.iter().all(|f| f.iter().any(|&w| w > 0.0)));
        assert!(bank.iter().flatten().all(|&w| (0.0..=1.0).contains(&w)));
    }
}
