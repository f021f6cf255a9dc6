//! Synthetic spectrogram corpora with known prototypes and placements.
//!
//! Everything happens in the dB-above-floor domain: prototypes are
//! parametric curves rasterised with Gaussian cross-sections, placed
//! without overlap, and overlaid with Gaussian noise clipped at zero.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    assign_support_labels, build_label_map, classification_metrics, detection_pr, ClassificationScores, DetectionScores,
    GroundTruthEvent, LabelMap,
};
use crate::events::{detect_events, DetectionConfig};
use crate::frontend::{FreqScale, Spectrogram};
use crate::records::AnnotationRecord;
use crate::templates::matrix_distance;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("grid of {n_time} columns cannot hold {n_events} events at gap {min_gap} (needs {needed})")]
    GridTooSmall {
        n_time: usize,
        n_events: usize,
        min_gap: usize,
        needed: usize,
    },
    #[error("could not draw {0} mutually distinct prototypes")]
    PrototypesNotSeparable(usize),
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeKind {
    Ramp,
    Chevron,
    HarmonicStack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_prototypes: usize,
    /// Kinds are assigned to prototypes cyclically.
    pub kinds: Vec<PrototypeKind>,
    pub n_freq: usize,
    pub n_time: usize,
    /// Height of a prototype; equal to `n_freq` for full-band corpora.
    pub proto_rows: usize,
    pub n_events: usize,
    /// Minimum number of silent columns between consecutive events.
    pub min_gap: usize,
    /// Peak height of a prototype above the floor, dB.
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Placement frequency jitter in rows (boxed corpora only).
    pub freq_jitter: usize,
    /// Per-individual curve shift, in rows.
    pub individual_variation: f64,
    /// Minimum distance between prototype reference patches.
    pub min_separation: f64,
    pub time_step: f64,
    pub freq_range: [f64; 2],
    pub db_floor: f64,
    pub detect: DetectionConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_prototypes: 6,
            kinds: vec![PrototypeKind::Ramp, PrototypeKind::Chevron, PrototypeKind::HarmonicStack],
            n_freq: 48,
            n_time: 7500,
            proto_rows: 48,
            n_events: 20,
            min_gap: 30,
            amplitude: 40.0,
            noise_sigma: 4.0,
            freq_jitter: 0,
            individual_variation: 0.0,
            min_separation: 1.0,
            time_step: 0.004,
            freq_range: [1000.0, 12000.0],
            db_floor: -80.0,
            detect: DetectionConfig {
                eta: 10.0,
                box_time: 48,
                box_freq: 48,
                full_band: true,
                min_pixels: 5,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.n_prototypes == 0 || self.kinds.is_empty() {
            return bad("need at least one prototype and one kind");
        }
        if self.min_gap == 0 {
            return bad("min_gap must be >= 1");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if self.proto_rows < 16 || self.proto_rows > self.n_freq {
            return bad("proto_rows must lie in [16, n_freq]");
        }
        if self.detect.full_band && self.proto_rows != self.n_freq {
            return bad("full-band corpora need proto_rows == n_freq");
        }
        if !(self.amplitude > self.detect.eta) {
            return bad("amplitude must exceed eta");
        }
        if !(self.time_step > 0.0 && self.freq_range[0] > 0.0 && self.freq_range[1] > self.freq_range[0]) {
            return bad("time_step and freq_range must be positive and ordered");
        }
        self.detect.validate().map_err(SynthError::InvalidConfig)
    }

    pub fn freq_axis(&self) -> Vec<f64> {
        let [lo, hi] = self.freq_range;
        let n = self.n_freq;
        (0..n).map(|r| lo + (hi - lo) * r as f64 / (n - 1).max(1) as f64).collect()
    }
}

const SIGMA_CELLS: f64 = 2.0;
const CUTOFF: f64 = 1e-3;
const MAX_SLOPE: f64 = 1.5;
const CENTROID_MARGIN: f64 = 0.25;

/// Parametric shape of one syllable class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub kind: PrototypeKind,
    /// Columns.
    pub length: usize,
    /// Curve rows at the start, middle and end.
    pub rows: [f64; 3],
    /// Harmonic spacing in rows (harmonic stacks only).
    pub spacing: f64,
    pub gain: f64,
    /// Row of the prototype's bottom edge in the spectrogram.
    pub base_row: usize,
}

impl Prototype {
    fn draw(kind: PrototypeKind, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.proto_rows as f64;
        let (lo, hi) = (5.0, h - 6.0);
        let length = rng.random_range(14..=32);
        let pick = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..=hi);
        let (rows, spacing) = match kind {
            // slopes stay below MAX_SLOPE rows per column so noise cannot cut
            // a syllable into pieces
            PrototypeKind::Ramp => loop {
                let (a, b) = (pick(rng, lo, hi), pick(rng, lo, hi));
                if (a - b).abs() >= 8.0 && (a - b).abs() <= MAX_SLOPE * length as f64 {
                    break ([a, 0.5 * (a + b), b], 0.0);
                }
            },
            PrototypeKind::Chevron => loop {
                let (a, p, b) = (pick(rng, lo, hi), pick(rng, lo, hi), pick(rng, lo, hi));
                let half = MAX_SLOPE * length as f64 / 2.0;
                if (p - a).abs() >= 8.0
                    && (p - b).abs() >= 8.0
                    && (p - a).abs() <= half
                    && (p - b).abs() <= half
                    && (p - a).signum() == (p - b).signum()
                {
                    break ([a, p, b], 0.0);
                }
            },
            PrototypeKind::HarmonicStack => {
                let spacing = pick(rng, 5.0, 6.0);
                let top = hi - 2.0 * spacing;
                let a = pick(rng, lo, top.max(lo));
                let b = (a + pick(rng, -8.0, 8.0)).clamp(lo, top.max(lo));
                ([a, 0.5 * (a + b), b], spacing)
            }
        };
        let base_row = if cfg.detect.full_band {
            0
        } else {
            rng.random_range(0..=cfg.n_freq - cfg.proto_rows)
        };
        Self {
            kind,
            length,
            rows,
            spacing,
            gain: 1.0,
            base_row,
        }
    }

    fn curve(&self, x: f64) -> f64 {
        let [a, m, b] = self.rows;
        match self.kind {
            PrototypeKind::Chevron => {
                if x < 0.5 {
                    a + (m - a) * 2.0 * x
                } else {
                    m + (b - m) * (2.0 * x - 1.0)
                }
            }
            _ => a + (b - a) * x,
        }
    }

    /// Rasterised shape, `proto_rows × length`.
    pub fn render(&self, rows: usize, amplitude: f64) -> Array2<f64> {
        let amp = amplitude * self.gain;
        let strokes = if self.kind == PrototypeKind::HarmonicStack { 3 } else { 1 };
        Array2::from_shape_fn((rows, self.length), |(r, c)| {
            let y = self.curve((c as f64 + 0.5) / self.length as f64);
            let mut best: f64 = 0.0;
            for k in 0..strokes {
                let d = r as f64 - (y + k as f64 * self.spacing);
                best = best.max((-d * d / (2.0 * SIGMA_CELLS * SIGMA_CELLS)).exp());
            }
            // the stack's first column joins its harmonics into one component
            if strokes > 1 && c == 0 {
                let top = y + (strokes - 1) as f64 * self.spacing;
                if r as f64 >= y && r as f64 <= top {
                    best = 1.0;
                }
            }
            let v = amp * best;
            if v < CUTOFF * amp {
                0.0
            } else {
                v
            }
        })
    }

    fn perturbed(&self, rng: &mut ChaCha8Rng, variation: f64, rows: usize) -> Self {
        if variation <= 0.0 {
            return self.clone();
        }
        let shift = rng.random_range(-variation..=variation);
        let limit = rows as f64 - 4.0 - 2.0 * self.spacing;
        let mut out = self.clone();
        for r in out.rows.iter_mut() {
            *r = (*r + shift).clamp(3.0, limit.max(3.0));
        }
        out.gain = 1.0 + rng.random_range(-0.05 * variation..=0.05 * variation);
        out
    }
}

/// Columns `[first, end)` and rows `[low, high]` holding cells ≥ `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub first_col: usize,
    pub end_col: usize,
    pub low_row: usize,
    pub high_row: usize,
}

fn detectable_extent(m: &Array2<f64>, eta: f64) -> Extent {
    let mut e = Extent {
        first_col: usize::MAX,
        end_col: 0,
        low_row: usize::MAX,
        high_row: 0,
    };
    for ((r, c), &v) in m.indexed_iter() {
        if v >= eta {
            e.first_col = e.first_col.min(c);
            e.end_col = e.end_col.max(c + 1);
            e.low_row = e.low_row.min(r);
            e.high_row = e.high_row.max(r);
        }
    }
    e
}

/// Patch the detector extracts from a noiseless, isolated rendering.
pub fn reference_patch(render: &Array2<f64>, base_row: usize, cfg: &SynthConfig) -> Array2<f64> {
    isolated_event(render, base_row, cfg).0
}

/// Patch and time centroid of a noiseless, isolated rendering.
fn isolated_event(render: &Array2<f64>, base_row: usize, cfg: &SynthConfig) -> (Array2<f64>, f64) {
    let pad = cfg.detect.box_time;
    let (rows, cols) = render.dim();
    let mut grid = Array2::zeros((cfg.n_freq, cols + 2 * pad));
    grid.slice_mut(s![base_row..base_row + rows, pad..pad + cols]).assign(render);
    let spec = Spectrogram::from_above_floor(&grid, cfg.time_step, cfg.freq_axis(), FreqScale::Linear, cfg.db_floor);
    let det = DetectionConfig {
        min_pixels: 1,
        ..cfg.detect.clone()
    };
    detect_events(&spec, &det)
        .into_iter()
        .max_by_key(|e| e.pixels.len())
        .map(|e| (e.patch, e.centroid.0))
        .unwrap_or_else(|| (Array2::zeros(det.patch_shape(cfg.n_freq)), 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub prototype: usize,
    /// Left edge of the rendered prototype.
    pub t: usize,
    /// Bottom row of the rendered prototype.
    pub f: usize,
    /// Detectable extent in spectrogram coordinates.
    pub extent: Extent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Renders used in this recording, indexed by prototype id.
    pub prototypes: Vec<Array2<f64>>,
    /// Reference patches of the unperturbed prototypes.
    pub references: Vec<Array2<f64>>,
    /// Sorted by `t`.
    pub placements: Vec<Placement>,
    /// dB above floor.
    pub signal: Array2<f64>,
    pub spectrogram: Spectrogram,
}

/// Prototype bank shared by a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub prototypes: Vec<Prototype>,
    pub references: Vec<Array2<f64>>,
}

pub fn draw_bank(cfg: &SynthConfig) -> Result<PrototypeBank, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // a bank that paints itself into a corner is redrawn from scratch
    'restart: for _ in 0..100 {
        let mut prototypes: Vec<Prototype> = Vec::new();
        let mut references: Vec<Array2<f64>> = Vec::new();
        for i in 0..cfg.n_prototypes {
            let kind = cfg.kinds[i % cfg.kinds.len()];
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > 200 {
                    continue 'restart;
                }
                let p = Prototype::draw(kind, cfg, &mut rng);
                let (reference, centroid) = isolated_event(&p.render(cfg.proto_rows, cfg.amplitude), p.base_row, cfg);
                // a centroid near a half column makes noisy copies round to
                // two different patch alignments
                if (centroid.fract() - 0.5).abs() < CENTROID_MARGIN {
                    continue;
                }
                let far = references
                    .iter()
                    .all(|r| matrix_distance(r.view(), reference.view()).is_ok_and(|d| d >= cfg.min_separation));
                if far {
                    prototypes.push(p);
                    references.push(reference);
                    break;
                }
            }
        }
        return Ok(PrototypeBank { prototypes, references });
    }
    Err(SynthError::PrototypesNotSeparable(cfg.n_prototypes))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Renders one recording from `bank`, perturbed for `individual`.
pub fn render_recording(bank: &PrototypeBank, cfg: &SynthConfig, individual: usize, recording: usize) -> Result<SynthTruth, SynthError> {
    let mut ind_rng = stream_rng(cfg.seed, 1 + individual as u64);
    let protos: Vec<Prototype> = bank
        .prototypes
        .iter()
        .map(|p| p.perturbed(&mut ind_rng, cfg.individual_variation, cfg.proto_rows))
        .collect();
    let renders: Vec<Array2<f64>> = protos.iter().map(|p| p.render(cfg.proto_rows, cfg.amplitude)).collect();
    let extents: Vec<Extent> = renders.iter().map(|r| detectable_extent(r, cfg.detect.eta)).collect();

    let mut rng = stream_rng(cfg.seed, 1 << 32 | (individual as u64) << 20 | recording as u64);
    let ids: Vec<usize> = (0..cfg.n_events).map(|_| rng.random_range(0..protos.len())).collect();
    let widths: Vec<usize> = ids.iter().map(|&k| extents[k].end_col - extents[k].first_col).collect();
    let margin = cfg.detect.box_time;
    let needed = widths.iter().sum::<usize>() + cfg.n_events.saturating_sub(1) * cfg.min_gap + 2 * margin;
    if needed > cfg.n_time {
        return Err(SynthError::GridTooSmall {
            n_time: cfg.n_time,
            n_events: cfg.n_events,
            min_gap: cfg.min_gap,
            needed,
        });
    }
    let slack = (cfg.n_time - needed) as f64;
    let weights: Vec<f64> = (0..=cfg.n_events).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = weights.iter().sum();
    let extra: Vec<usize> = weights.iter().map(|w| (slack * w / total).floor() as usize).collect();

    let mut signal = Array2::<f64>::zeros((cfg.n_freq, cfg.n_time));
    let mut placements = Vec::with_capacity(cfg.n_events);
    let mut cursor = margin + extra[0];
    for (i, &k) in ids.iter().enumerate() {
        let p = &protos[k];
        let ext = extents[k];
        let t = cursor - ext.first_col;
        let f = if cfg.detect.full_band {
            0
        } else {
            let j = cfg.freq_jitter as i64;
            let shift = if j > 0 { rng.random_range(-j..=j) } else { 0 };
            (p.base_row as i64 + shift).clamp(0, (cfg.n_freq - cfg.proto_rows) as i64) as usize
        };
        let (rows, cols) = renders[k].dim();
        let mut win = signal.slice_mut(s![f..f + rows, t..t + cols]);
        win += &renders[k];
        placements.push(Placement {
            prototype: k,
            t,
            f,
            extent: Extent {
                first_col: t + ext.first_col,
                end_col: t + ext.end_col,
                low_row: f + ext.low_row,
                high_row: f + ext.high_row,
            },
        });
        cursor += widths[i] + cfg.min_gap + extra[i + 1];
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
        signal.mapv_inplace(|v| (v + noise.sample(&mut rng)).max(0.0));
    }
    let spectrogram = Spectrogram::from_above_floor(&signal, cfg.time_step, cfg.freq_axis(), FreqScale::Linear, cfg.db_floor);
    Ok(SynthTruth {
        prototypes: renders,
        references: bank.references.clone(),
        placements,
        signal,
        spectrogram,
    })
}

/// One recording with its own prototype bank.
pub fn generate(cfg: &SynthConfig) -> Result<SynthTruth, SynthError> {
    let bank = draw_bank(cfg)?;
    render_recording(&bank, cfg, 0, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    pub individual: String,
    pub name: String,
    pub truth: SynthTruth,
}

impl SynthRecording {
    pub fn id(&self) -> String {
        format!("{}/{}", self.individual, self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub bank: PrototypeBank,
    /// Ordered by individual, then recording.
    pub recordings: Vec<SynthRecording>,
}

pub fn individual_name(i: usize) -> String {
    format!("ind{i:02}")
}

pub fn recording_name(i: usize) -> String {
    format!("rec{i:03}")
}

pub fn generate_corpus(cfg: &SynthConfig, n_individuals: usize, per_individual: usize) -> Result<SynthCorpus, SynthError> {
    let bank = draw_bank(cfg)?;
    let mut recordings = Vec::with_capacity(n_individuals * per_individual);
    for ind in 0..n_individuals {
        for rec in 0..per_individual {
            recordings.push(SynthRecording {
                individual: individual_name(ind),
                name: recording_name(rec),
                truth: render_recording(&bank, cfg, ind, rec)?,
            });
        }
    }
    Ok(SynthCorpus { bank, recordings })
}

pub fn prototype_label(k: usize) -> String {
    format!("p{k}")
}

/// Ground truth in physical units; labels name the prototype.
pub fn truth_events(truth: &SynthTruth) -> Vec<GroundTruthEvent> {
    let dt = truth.spectrogram.time_step;
    truth
        .placements
        .iter()
        .map(|p| GroundTruthEvent {
            onset: p.extent.first_col as f64 * dt,
            offset: p.extent.end_col as f64 * dt,
            label: prototype_label(p.prototype),
        })
        .collect()
}

/// Ground truth in annotation-record form (template id = prototype id).
pub fn truth_records(truth: &SynthTruth, recording_id: &str) -> Vec<AnnotationRecord> {
    let dt = truth.spectrogram.time_step;
    let axis = &truth.spectrogram.freq_axis;
    truth
        .placements
        .iter()
        .map(|p| AnnotationRecord {
            recording_id: recording_id.to_string(),
            onset_s: p.extent.first_col as f64 * dt,
            offset_s: p.extent.end_col as f64 * dt,
            low_hz: axis[p.extent.low_row],
            high_hz: axis[p.extent.high_row],
            template_id: p.prototype as u32,
            score: truth.prototypes[p.prototype].iter().map(|v| v * v).sum(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScores {
    pub detection: DetectionScores,
    pub classification: ClassificationScores,
    pub label_map: LabelMap,
}

/// Scores an annotation against synthetic ground truth. Without a label
/// map, one is built from the annotation's own majority labels.
pub fn score_against_truth(records: &[AnnotationRecord], truth: &SynthTruth, map: Option<&LabelMap>, iou_min: f64) -> SynthScores {
    let gt = truth_events(truth);
    let label_map = match map {
        Some(m) => m.clone(),
        None => {
            let labels = assign_support_labels(records, &gt);
            let pairs: Vec<_> = records.iter().map(|r| r.template_id).zip(labels).collect();
            let mut ids: Vec<u32> = records.iter().map(|r| r.template_id).collect();
            ids.sort_unstable();
            ids.dedup();
            build_label_map(&pairs, &ids)
        }
    };
    SynthScores {
        detection: detection_pr(records, &gt, iou_min),
        classification: classification_metrics(records, &gt, &label_map, iou_min),
        label_map,
    }
}
