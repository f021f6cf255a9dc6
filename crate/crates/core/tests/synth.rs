use proptest::prelude::*;

use syllable_core::events::{detect_events, DetectionConfig};
use syllable_core::evaluation::{detection_pr, GroundTruthEvent};
use syllable_core::synth::{generate, score_against_truth, truth_events, truth_records, SynthConfig, SynthError};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_time: 2000,
        seed,
        ..SynthConfig::default()
    }
}

fn boxed(seed: u64) -> SynthConfig {
    SynthConfig {
        // boxed shapes are centred, so fewer of them clear the separation bar
        n_prototypes: 4,
        n_freq: 64,
        proto_rows: 40,
        freq_jitter: 3,
        detect: DetectionConfig {
            eta: 10.0,
            box_time: 48,
            box_freq: 48,
            full_band: false,
            min_pixels: 5,
        },
        ..small(seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_render_round_trips_through_detection(seed in 0u64..1000, use_box in any::<bool>()) {
        let base = if use_box { boxed(seed) } else { small(seed) };
        let cfg = SynthConfig { noise_sigma: 0.0, ..base };
        let truth = generate(&cfg).unwrap();
        let events = detect_events(&truth.spectrogram, &cfg.detect);
        prop_assert_eq!(events.len(), cfg.n_events);
        for (e, p) in events.iter().zip(&truth.placements) {
            // independent centre: energy centroid of the render's super-threshold cells
            let r = &truth.prototypes[p.prototype];
            let (mut wt, mut wf, mut w) = (0.0, 0.0, 0.0);
            for ((row, col), &v) in r.indexed_iter() {
                if v >= cfg.detect.eta {
                    wt += v * (p.t + col) as f64;
                    wf += v * (p.f + row) as f64;
                    w += v;
                }
            }
            prop_assert!((e.centroid.0 - wt / w).abs() <= 1.0, "time {} vs {}", e.centroid.0, wt / w);
            prop_assert!((e.centroid.1 - wf / w).abs() <= 1.0, "freq {} vs {}", e.centroid.1, wf / w);
        }
    }

    #[test]
    fn placements_respect_gap_and_signal_is_nonnegative(seed in 0u64..1000, gap in 1usize..40, sigma in 0.0f64..6.0) {
        let cfg = SynthConfig { min_gap: gap, noise_sigma: sigma, ..small(seed) };
        let truth = generate(&cfg).unwrap();
        prop_assert_eq!(truth.placements.len(), cfg.n_events);
        for w in truth.placements.windows(2) {
            prop_assert!(w[1].extent.first_col >= w[0].extent.end_col + gap);
        }
        prop_assert!(truth.signal.iter().all(|&v| v >= 0.0));
        prop_assert!(truth.spectrogram.values.iter().all(|&v| v >= cfg.db_floor));
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..1000) {
        prop_assert_eq!(generate(&small(seed)).unwrap(), generate(&small(seed)).unwrap());
    }
}

#[test]
fn noiseless_signal_is_the_sum_of_placed_renders() {
    let cfg = SynthConfig { noise_sigma: 0.0, ..boxed(3) };
    let truth = generate(&cfg).unwrap();
    let mut expect = ndarray::Array2::<f64>::zeros(truth.signal.dim());
    for p in &truth.placements {
        let r = &truth.prototypes[p.prototype];
        let mut w = expect.slice_mut(ndarray::s![p.f..p.f + r.nrows(), p.t..p.t + r.ncols()]);
        w += r;
    }
    assert_eq!(truth.signal, expect);
}

#[test]
fn twenty_events_at_gap_thirty() {
    let truth = generate(&SynthConfig { n_events: 20, min_gap: 30, ..small(1) }).unwrap();
    for (i, a) in truth.placements.iter().enumerate() {
        for b in &truth.placements[i + 1..] {
            assert!(b.extent.first_col - a.extent.end_col >= 30);
        }
    }
}

#[test]
fn grid_too_small_is_reported() {
    let cfg = SynthConfig { n_time: 300, ..small(0) };
    assert!(matches!(generate(&cfg), Err(SynthError::GridTooSmall { .. })));
}

#[test]
fn truth_scores_perfectly() {
    let truth = generate(&small(4)).unwrap();
    let s = score_against_truth(&truth_records(&truth, "r"), &truth, None, 0.3);
    assert_eq!((s.detection.precision, s.detection.recall), (Some(1.0), Some(1.0)));
    assert_eq!(s.classification.micro_precision, Some(1.0));
    assert_eq!(s.classification.weighted_precision, Some(1.0));
    assert_eq!(s.classification.weighted_recall, Some(1.0));
}

#[test]
fn perturbed_onsets_match_hand_converted_truth() {
    let truth = generate(&small(6)).unwrap();
    let dt = truth.spectrogram.time_step;
    let mut recs = truth_records(&truth, "r");
    for (i, r) in recs.iter_mut().enumerate() {
        let shift = [-2.0, 1.0, 0.0, 3.0][i % 4] * dt;
        r.onset_s += shift;
        r.offset_s += shift;
    }
    // ground truth converted by hand from the placements
    let gt: Vec<GroundTruthEvent> = truth
        .placements
        .iter()
        .map(|p| GroundTruthEvent {
            onset: p.extent.first_col as f64 * dt,
            offset: p.extent.end_col as f64 * dt,
            label: format!("p{}", p.prototype),
        })
        .collect();
    assert_eq!(gt, truth_events(&truth));
    let s = score_against_truth(&recs, &truth, None, 0.3);
    assert_eq!(s.detection, detection_pr(&recs, &gt, 0.3));
    assert_eq!(s.detection.recall, Some(1.0));
}

#[test]
fn half_the_events_missing() {
    let truth = generate(&small(8)).unwrap();
    let recs: Vec<_> = truth_records(&truth, "r").into_iter().step_by(2).collect();
    let s = score_against_truth(&recs, &truth, None, 0.3);
    assert_eq!(s.detection.recall, Some(0.5));
}
