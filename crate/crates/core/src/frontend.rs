//! Audio decoding and dB spectrograms.
//!
//! Spectrogram values are stored in dB relative to the loudest bin of the
//! recording (0 dB peak) and clipped below at `db_floor`. Everything
//! downstream works on the non-negative "dB above floor" view returned by
//! [`Spectrogram::above_floor`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("cannot read audio file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("audio file {path} contains no samples")]
    Empty { path: PathBuf },
    #[error("waveform of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
    pub db_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_freq_bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_range: Option<[f64; 2]>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 512,
            hop: 128,
            window: WindowKind::Hann,
            db_floor: -80.0,
            log_freq_bins: None,
            freq_range: None,
        }
    }
}

impl StftConfig {
    /// Log-frequency preset used for narrow-band songs: 256 bins over 1-12 kHz.
    pub fn log_frequency() -> Self {
        Self {
            log_freq_bins: Some(256),
            freq_range: Some([1000.0, 12000.0]),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FrontendError> {
        if self.hop == 0 || self.hop > self.window_size {
            return Err(FrontendError::InvalidConfig(format!(
                "hop must satisfy 0 < hop <= window_size, got hop={} window_size={}",
                self.hop, self.window_size
            )));
        }
        if !(self.db_floor < 0.0) {
            return Err(FrontendError::InvalidConfig(format!(
                "db_floor must be negative, got {}",
                self.db_floor
            )));
        }
        if let Some([lo, hi]) = self.freq_range {
            if !(lo >= 0.0 && hi > lo) {
                return Err(FrontendError::InvalidConfig(format!(
                    "freq_range must satisfy 0 <= low < high, got [{lo}, {hi}]"
                )));
            }
        }
        if self.log_freq_bins == Some(0) {
            return Err(FrontendError::InvalidConfig("log_freq_bins must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqScale {
    Linear,
    Log,
}

/// dB-scaled magnitude spectrogram, `values[[freq_row, time_col]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    /// Seconds per column.
    pub time_step: f64,
    /// Centre frequency of each row in Hz, strictly increasing.
    pub freq_axis: Vec<f64>,
    pub scale: FreqScale,
    pub db_floor: f64,
}

impl Spectrogram {
    pub fn n_freq(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_time(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration_secs(&self) -> f64 {
        self.n_time() as f64 * self.time_step
    }

    /// Values shifted so the floor sits at zero.
    pub fn above_floor(&self) -> Array2<f64> {
        let floor = self.db_floor;
        self.values.mapv(|v| v - floor)
    }

    /// Builds a spectrogram from a dB-above-floor matrix.
    pub fn from_above_floor(
        above: &Array2<f64>,
        time_step: f64,
        freq_axis: Vec<f64>,
        scale: FreqScale,
        db_floor: f64,
    ) -> Self {
        Self {
            values: above.mapv(|v| v.max(0.0) + db_floor),
            time_step,
            freq_axis,
            scale,
            db_floor,
        }
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float), mixing
/// all channels down to mono.
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform, FrontendError> {
    let path = path.as_ref();
    let unreadable = |source| FrontendError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported | hound::Error::FormatError(_) => {
            FrontendError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: e.to_string(),
            }
        }
        other => unreadable(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(FrontendError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(unreadable)?
        }
        (format, bits) => {
            return Err(FrontendError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{format:?} samples with {bits} bits"),
            })
        }
    };

    if interleaved.len() < channels {
        return Err(FrontendError::Empty {
            path: path.to_path_buf(),
        });
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

fn hann(n: usize) -> Vec<f64> {
    // periodic Hann
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of STFT frames for `n_samples` without padding.
pub fn frame_count(n_samples: usize, window_size: usize, hop: usize) -> usize {
    if n_samples < window_size {
        0
    } else {
        (n_samples - window_size) / hop + 1
    }
}

/// Linear power spectrogram `[n_bins × n_frames]` plus bin centre frequencies.
fn power_stft(wave: &Waveform, cfg: &StftConfig) -> (Array2<f64>, Vec<f64>) {
    let n = cfg.window_size;
    let n_frames = frame_count(wave.samples.len(), n, cfg.hop);
    let n_bins = n / 2 + 1;
    let window = match cfg.window {
        WindowKind::Hann => hann(n),
    };
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut power = Array2::<f64>::zeros((n_bins, n_frames));
    for frame in 0..n_frames {
        let start = frame * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(wave.samples[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for bin in 0..n_bins {
            power[[bin, frame]] = buf[bin].norm_sqr();
        }
    }
    let df = wave.sample_rate as f64 / n as f64;
    let freqs = (0..n_bins).map(|k| k as f64 * df).collect();
    (power, freqs)
}

fn crop_rows(power: Array2<f64>, freqs: Vec<f64>, lo: f64, hi: f64) -> (Array2<f64>, Vec<f64>) {
    let keep: Vec<usize> = (0..freqs.len())
        .filter(|&i| freqs[i] >= lo && freqs[i] <= hi)
        .collect();
    let cropped = power.select(ndarray::Axis(0), &keep);
    let f = keep.iter().map(|&i| freqs[i]).collect();
    (cropped, f)
}

/// Redistributes linear-bin power onto `n_bins` log-spaced bands.
///
/// Each linear bin is treated as a band of width `df` centred on its
/// frequency with uniform power density; its power is split across the
/// log bands in proportion to overlap, so column power is conserved.
pub fn log_rebin(power: &Array2<f64>, freqs: &[f64], df: f64, n_bins: usize) -> (Array2<f64>, Vec<f64>) {
    let n_frames = power.ncols();
    let lo = (freqs[0] - df / 2.0).max(df / 2.0);
    let hi = freqs[freqs.len() - 1] + df / 2.0;
    let ratio = (hi / lo).ln();
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| lo * (ratio * i as f64 / n_bins as f64).exp())
        .collect();
    let mut out = Array2::<f64>::zeros((n_bins, n_frames));
    for (row, &f) in freqs.iter().enumerate() {
        let a = (f - df / 2.0).max(lo);
        let b = f + df / 2.0;
        let width = b - a;
        if width <= 0.0 {
            continue;
        }
        // first band whose upper edge exceeds a
        let mut band = edges[1..].partition_point(|&e| e <= a);
        while band < n_bins && edges[band] < b {
            let overlap = b.min(edges[band + 1]) - a.max(edges[band]);
            if overlap > 0.0 {
                let frac = overlap / width;
                for t in 0..n_frames {
                    out[[band, t]] += frac * power[[row, t]];
                }
            }
            band += 1;
        }
    }
    let centres = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    (out, centres)
}

/// Short-time Fourier transform to a max-referenced dB spectrogram.
pub fn compute_spectrogram(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram, FrontendError> {
    cfg.validate()?;
    if wave.samples.len() < cfg.window_size {
        return Err(FrontendError::TooShort {
            samples: wave.samples.len(),
            window: cfg.window_size,
        });
    }
    let (mut power, mut freqs) = power_stft(wave, cfg);
    let df = wave.sample_rate as f64 / cfg.window_size as f64;

    if let Some([lo, hi]) = cfg.freq_range {
        (power, freqs) = crop_rows(power, freqs, lo, hi);
        if freqs.is_empty() {
            return Err(FrontendError::InvalidConfig(format!(
                "freq_range [{lo}, {hi}] contains no STFT bins"
            )));
        }
    }
    let mut scale = FreqScale::Linear;
    if let Some(n_log) = cfg.log_freq_bins {
        // the DC bin has no positive log position
        if freqs[0] <= 0.0 {
            let keep: Vec<usize> = (1..freqs.len()).collect();
            power = power.select(ndarray::Axis(0), &keep);
            freqs.remove(0);
        }
        if freqs.is_empty() {
            return Err(FrontendError::InvalidConfig("no positive-frequency bins to rebin".into()));
        }
        (power, freqs) = log_rebin(&power, &freqs, df, n_log);
        scale = FreqScale::Log;
    }

    let reference = power.iter().cloned().fold(0.0f64, f64::max);
    let floor = cfg.db_floor;
    let values = if reference > 0.0 {
        power.mapv(|p| {
            if p > 0.0 {
                (10.0 * (p / reference).log10()).max(floor)
            } else {
                floor
            }
        })
    } else {
        Array2::from_elem(power.dim(), floor)
    };

    Ok(Spectrogram {
        values,
        time_step: cfg.hop as f64 / wave.sample_rate as f64,
        freq_axis: freqs,
        scale,
        db_floor: floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: u32, n: usize, amp: f64) -> Waveform {
        Waveform {
            samples: (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sample_rate: sr,
        }
    }

    #[test]
    fn silence_maps_to_floor() {
        let wave = Waveform {
            samples: vec![0.0; 4096],
            sample_rate: 32000,
        };
        let spec = compute_spectrogram(&wave, &StftConfig::default()).unwrap();
        assert!(spec.values.iter().all(|&v| v == -80.0));
    }

    #[test]
    fn shape_law() {
        let cfg = StftConfig::default();
        for n in [512usize, 513, 640, 1000, 32000] {
            let wave = Waveform {
                samples: vec![0.1; n],
                sample_rate: 32000,
            };
            let spec = compute_spectrogram(&wave, &cfg).unwrap();
            assert_eq!(spec.n_time(), (n - 512) / 128 + 1);
            assert_eq!(spec.n_freq(), 257);
        }
    }

    #[test]
    fn too_short_is_an_error() {
        let wave = Waveform {
            samples: vec![0.0; 100],
            sample_rate: 32000,
        };
        assert!(matches!(
            compute_spectrogram(&wave, &StftConfig::default()),
            Err(FrontendError::TooShort { .. })
        ));
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let sr = 32000;
        let bin = 40;
        let f0 = bin as f64 * sr as f64 / 512.0;
        let spec = compute_spectrogram(&sine(f0, sr, 8000, 0.5), &StftConfig::default()).unwrap();
        let means: Vec<f64> = spec.values.rows().into_iter().map(|r| r.mean().unwrap()).collect();
        let argmax = (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        assert_eq!(argmax, bin);
        assert!((spec.values.iter().cloned().fold(f64::MIN, f64::max)).abs() < 1e-12);
    }

    #[test]
    fn global_scaling_is_invisible() {
        let wave = sine(3000.0, 32000, 6000, 0.2);
        let loud = Waveform {
            samples: wave.samples.iter().map(|s| s * 4.0).collect(),
            sample_rate: wave.sample_rate,
        };
        let cfg = StftConfig::default();
        let a = compute_spectrogram(&wave, &cfg).unwrap();
        let b = compute_spectrogram(&loud, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_rebin_conserves_column_power() {
        let wave = sine(2500.0, 32000, 4096, 0.3);
        let cfg = StftConfig::default();
        let (power, freqs) = power_stft(&wave, &cfg);
        let (power, freqs) = crop_rows(power, freqs, 1000.0, 12000.0);
        let (binned, centres) = log_rebin(&power, &freqs, 62.5, 256);
        assert_eq!(binned.nrows(), 256);
        assert!(centres.windows(2).all(|w| w[1] > w[0]));
        for t in 0..power.ncols() {
            let before = power.column(t).sum();
            let after = binned.column(t).sum();
            assert!((before - after).abs() <= 1e-6 * before, "{before} vs {after}");
        }
    }

    #[test]
    fn log_mode_axis_is_increasing() {
        let wave = sine(5000.0, 32000, 8192, 0.3);
        let spec = compute_spectrogram(&wave, &StftConfig::log_frequency()).unwrap();
        assert_eq!(spec.n_freq(), 256);
        assert_eq!(spec.scale, FreqScale::Log);
        assert!(spec.freq_axis.windows(2).all(|w| w[1] > w[0]));
        assert!(spec.values.iter().all(|&v| v >= -80.0));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = StftConfig::default();
        cfg.hop = 0;
        assert!(cfg.validate().is_err());
        cfg.hop = 1024;
        assert!(cfg.validate().is_err());
        let mut cfg = StftConfig::default();
        cfg.db_floor = 0.0;
        assert!(cfg.validate().is_err());
    }
}
