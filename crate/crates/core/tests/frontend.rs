use std::f64::consts::PI;

use proptest::prelude::*;

use syllable_core::frontend::{compute_spectrogram, frame_count, load_audio, log_rebin, StftConfig, Waveform};

fn chirp(sr: u32, secs: f64, f1: f64, f2: f64) -> Waveform {
    let n = (sr as f64 * secs) as usize;
    let k = (f2 - f1) / secs;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.5 * (2.0 * PI * (f1 * t + 0.5 * k * t * t)).sin()
        })
        .collect();
    Waveform { samples, sample_rate: sr }
}

/// Direct O(N²) DFT power of one Hann-windowed frame.
fn dft_power(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in frame.iter().enumerate() {
                let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                re += x * w[i] * ang.cos();
                im += x * w[i] * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn chirp_matches_direct_dft() {
    let cfg = StftConfig::default();
    let wave = chirp(32_000, 0.25, 1_000.0, 8_000.0);
    let spec = compute_spectrogram(&wave, &cfg).unwrap();
    let n_frames = frame_count(wave.samples.len(), cfg.window_size, cfg.hop);
    assert_eq!(spec.n_time(), n_frames);
    let power: Vec<Vec<f64>> = (0..n_frames)
        .map(|t| dft_power(&wave.samples[t * cfg.hop..t * cfg.hop + cfg.window_size]))
        .collect();
    let reference = power.iter().flatten().cloned().fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (t, col) in power.iter().enumerate() {
        for (k, &p) in col.iter().enumerate() {
            let want = (10.0 * (p / reference).log10()).max(cfg.db_floor);
            worst = worst.max((spec.values[[k, t]] - want).abs());
        }
    }
    assert!(worst < 1e-6, "max dB deviation {worst}");

    let argmax: Vec<usize> = (0..spec.n_time())
        .map(|t| {
            let col = spec.values.column(t);
            (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap()
        })
        .collect();
    assert!(argmax.windows(2).all(|w| w[1] >= w[0]), "argmax rows {argmax:?}");
}

#[test]
fn wav_decoding_and_mixdown() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stereo.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    let frames: Vec<(i16, i16)> = (0..1000).map(|i| ((i * 7 % 2000 - 1000) as i16, (i * 3 % 500) as i16)).collect();
    for &(l, r) in &frames {
        w.write_sample(l).unwrap();
        w.write_sample(r).unwrap();
    }
    w.finalize().unwrap();

    let wave = load_audio(&path).unwrap();
    assert_eq!(wave.sample_rate, 16_000);
    assert_eq!(wave.samples.len(), frames.len());
    for (s, &(l, r)) in wave.samples.iter().zip(&frames) {
        assert_eq!(*s, (l as f64 / 32768.0 + r as f64 / 32768.0) / 2.0);
    }
}

#[test]
fn float_wav_and_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8_000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for i in 0..64 {
        w.write_sample(i as f32 / 64.0).unwrap();
    }
    w.finalize().unwrap();
    let wave = load_audio(&path).unwrap();
    assert_eq!(wave.samples[32], 0.5);

    let bad = dir.path().join("bad.wav");
    std::fs::write(&bad, b"not a wav file").unwrap();
    assert!(load_audio(&bad).is_err());
    assert!(load_audio(dir.path().join("missing.wav")).is_err());
}

#[test]
fn spectrogram_is_deterministic() {
    let wave = chirp(32_000, 0.2, 2_000.0, 3_000.0);
    let cfg = StftConfig::default();
    let a = compute_spectrogram(&wave, &cfg).unwrap();
    let b = compute_spectrogram(&wave, &cfg).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.freq_axis, b.freq_axis);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shape_law(n in 64usize..4000, win_pow in 5u32..9, hop_frac in 1usize..5) {
        let window_size = 1usize << win_pow;
        let hop = (window_size * hop_frac / 4).max(1);
        let cfg = StftConfig { window_size, hop, ..StftConfig::default() };
        let wave = Waveform { samples: (0..n).map(|i| (i as f64 * 0.37).sin()).collect(), sample_rate: 16_000 };
        match compute_spectrogram(&wave, &cfg) {
            Ok(s) => {
                prop_assert!(n >= window_size);
                prop_assert_eq!(s.n_time(), (n - window_size) / hop + 1);
                prop_assert_eq!(s.n_freq(), window_size / 2 + 1);
                prop_assert!(s.values.iter().all(|&v| v >= cfg.db_floor && v <= 0.0));
                prop_assert!(s.freq_axis.windows(2).all(|w| w[1] > w[0]));
            }
            Err(_) => prop_assert!(n < window_size),
        }
    }

    #[test]
    fn scaling_by_powers_of_two_is_invisible(seed in 0u64..1000, e in 1i32..6) {
        let samples: Vec<f64> = (0..3000).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5).collect();
        let c = 2f64.powi(e);
        let a = Waveform { samples: samples.clone(), sample_rate: 32_000 };
        let b = Waveform { samples: samples.iter().map(|x| x * c).collect(), sample_rate: 32_000 };
        let cfg = StftConfig::default();
        prop_assert_eq!(compute_spectrogram(&a, &cfg).unwrap().values, compute_spectrogram(&b, &cfg).unwrap().values);
    }

    #[test]
    fn log_rebin_conserves_power(
        cols in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 40), 1..4),
        n_bins in 4usize..64,
    ) {
        let n_rows = 40;
        let power = ndarray::Array2::from_shape_fn((n_rows, cols.len()), |(r, c)| cols[c][r]);
        let df = 62.5;
        let freqs: Vec<f64> = (1..=n_rows).map(|k| k as f64 * df).collect();
        let (out, centres) = log_rebin(&power, &freqs, df, n_bins);
        prop_assert_eq!(centres.len(), n_bins);
        for c in 0..cols.len() {
            let before: f64 = power.column(c).sum();
            let after: f64 = out.column(c).sum();
            prop_assert!((before - after).abs() <= 1e-6 * before.max(1e-12));
        }
    }
}
