//! Greedy matching pursuit over a template dictionary.
//!
//! The residual starts as the dB-above-floor spectrogram. For every
//! template `k`, column `t` and row offset `f`, the score
//! `Δ = 2⟨R[f.., t..], T_k⟩ − ‖T_k‖²` is exactly how much `‖R‖²` drops if
//! `T_k` is subtracted there. Each round keeps the local maxima of the best
//! score per column, suppresses peaks closer than the collar to a stronger
//! one, subtracts the survivors, and rescores the touched columns.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{flatten_patches, split_clusters, ClusterAssignment, HdbscanConfig};
use crate::events::connected_components;
use crate::templates::{build_templates, merge_templates, Template, TemplateId, TemplateSet};

#[derive(Debug, Error, PartialEq)]
pub enum MpError {
    #[error("template {template} of shape {template_shape:?} does not fit a residual of shape {residual_shape:?}")]
    TemplateTooLarge {
        template: TemplateId,
        template_shape: (usize, usize),
        residual_shape: (usize, usize),
    },
    #[error("template set is empty")]
    EmptyTemplateSet,
    #[error("templates in a set must share one shape")]
    MixedShapes,
    #[error("invalid matching pursuit configuration: {0}")]
    InvalidConfig(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpConfig {
    /// Minimum column separation between peaks accepted in one round;
    /// `None` uses half the median template duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar: Option<usize>,
    /// A placement must reduce `‖R‖²` by at least this fraction of `‖T‖²`.
    pub min_rel_score: f64,
    /// Decompose / re-cluster rounds in [`refine`].
    pub max_iters_outer: usize,
    /// Stride of the frequency-offset search when templates are shorter
    /// than the spectrogram.
    #[serde(default = "default_stride")]
    pub freq_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl Default for MpConfig {
    fn default() -> Self {
        Self {
            collar: None,
            min_rel_score: 0.2,
            max_iters_outer: 2,
            freq_stride: 1,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<(), MpError> {
        if self.collar == Some(0) {
            return Err(MpError::InvalidConfig("collar must be >= 1".into()));
        }
        if !(self.min_rel_score > 0.0 && self.min_rel_score < 1.0) {
            return Err(MpError::InvalidConfig(format!(
                "min_rel_score must lie in (0, 1), got {}",
                self.min_rel_score
            )));
        }
        if self.max_iters_outer == 0 {
            return Err(MpError::InvalidConfig("max_iters_outer must be >= 1".into()));
        }
        if self.freq_stride == 0 {
            return Err(MpError::InvalidConfig("freq_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_collar(&self, ts: &TemplateSet) -> usize {
        self.collar.unwrap_or_else(|| (ts.median_duration() / 2).max(1))
    }
}

/// One template placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub template_id: TemplateId,
    /// Column of the placed window's left edge.
    pub t: usize,
    /// Row of the placed window's first row; 0 for full-band templates.
    pub f: usize,
    /// Decrease of `‖R‖²` at acceptance.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSequence {
    pub recording_id: String,
    /// Sorted by `t`.
    pub detections: Vec<Detection>,
    /// `‖V − Σ placed templates‖₂`.
    pub residual_norm: f64,
}

/// Bookkeeping for one accepted placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub round: usize,
    pub detection: Detection,
    pub residual_sq_before: f64,
    pub residual_sq_after: f64,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub sequence: AnnotationSequence,
    /// Steps in acceptance order.
    pub steps: Vec<Step>,
    pub residual: Array2<f64>,
    pub collar: usize,
}

/// Non-zero cells of a template, grouped for streaming correlation.
struct SparseTemplate {
    id: TemplateId,
    cells: Vec<(usize, usize, f64)>,
    norm_sq: f64,
}

impl SparseTemplate {
    fn new(t: &Template) -> Self {
        let cells = t
            .matrix
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((r, c), &v)| (r, c, v))
            .collect();
        Self {
            id: t.id,
            cells,
            norm_sq: t.norm_sq(),
        }
    }

    /// `Δ` for every `t` in `t_range` at row offset `f`, written to `out`.
    fn scores_into(&self, residual: ArrayView2<f64>, f: usize, t_lo: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = out.len();
        for &(r, c, v) in &self.cells {
            let row = residual.row(f + r);
            let src = &row.as_slice().expect("standard layout")[t_lo + c..t_lo + c + n];
            for (o, x) in out.iter_mut().zip(src) {
                *o += v * x;
            }
        }
        for o in out.iter_mut() {
            *o = 2.0 * *o - self.norm_sq;
        }
    }

    fn score_at(&self, residual: ArrayView2<f64>, t: usize, f: usize) -> f64 {
        let dot: f64 = self.cells.iter().map(|&(r, c, v)| v * residual[[f + r, t + c]]).sum();
        2.0 * dot - self.norm_sq
    }

    fn subtract(&self, residual: &mut Array2<f64>, t: usize, f: usize) {
        for &(r, c, v) in &self.cells {
            residual[[f + r, t + c]] -= v;
        }
    }
}

fn freq_offsets(template_rows: usize, residual_rows: usize, stride: usize) -> Vec<usize> {
    (0..=residual_rows - template_rows).step_by(stride.max(1)).collect()
}

fn check_shapes(residual: (usize, usize), ts: &TemplateSet) -> Result<(usize, usize), MpError> {
    let shape = ts.shape().ok_or(MpError::EmptyTemplateSet)?;
    for t in &ts.templates {
        if t.shape() != shape {
            return Err(MpError::MixedShapes);
        }
        if shape.0 > residual.0 || shape.1 > residual.1 {
            return Err(MpError::TemplateTooLarge {
                template: t.id,
                template_shape: shape,
                residual_shape: residual,
            });
        }
    }
    Ok(shape)
}

/// Score map `Δ(f, t)` of one template against a residual: rows index the
/// searched frequency offsets, columns every valid time offset.
pub fn score_map(residual: ArrayView2<f64>, template: &Template, freq_stride: usize) -> Result<Array2<f64>, MpError> {
    let (tr, tc) = template.shape();
    let (rr, rc) = residual.dim();
    if tr > rr || tc > rc {
        return Err(MpError::TemplateTooLarge {
            template: template.id,
            template_shape: (tr, tc),
            residual_shape: (rr, rc),
        });
    }
    let residual = residual.as_standard_layout();
    let sparse = SparseTemplate::new(template);
    let offsets = freq_offsets(tr, rr, freq_stride);
    let n_pos = rc - tc + 1;
    let mut out = Array2::zeros((offsets.len(), n_pos));
    for (i, &f) in offsets.iter().enumerate() {
        let mut row = vec![0.0; n_pos];
        sparse.scores_into(residual.view(), f, 0, &mut row);
        out.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Ok(out)
}

/// Best score over templates and offsets per column, with its argmax.
struct BestScores {
    value: Vec<f64>,
    template: Vec<usize>,
    offset: Vec<usize>,
}

impl BestScores {
    fn refresh(&mut self, residual: ArrayView2<f64>, dict: &[SparseTemplate], offsets: &[usize], lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        let n = hi - lo;
        self.value[lo..hi].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let mut buf = vec![0.0; n];
        for (k, tmpl) in dict.iter().enumerate() {
            for &f in offsets {
                tmpl.scores_into(residual, f, lo, &mut buf);
                for (i, &d) in buf.iter().enumerate() {
                    // strict: ties keep the lowest template, then lowest offset
                    if d > self.value[lo + i] {
                        self.value[lo + i] = d;
                        self.template[lo + i] = k;
                        self.offset[lo + i] = f;
                    }
                }
            }
        }
    }
}

/// Greedy decomposition of a dB-above-floor matrix with per-step trace.
pub fn decompose(recording_id: &str, signal: ArrayView2<f64>, ts: &TemplateSet, cfg: &MpConfig) -> Result<Decomposition, MpError> {
    cfg.validate()?;
    let collar = cfg.effective_collar(ts);
    let mut residual = signal.as_standard_layout().to_owned();
    let (rows, cols) = residual.dim();
    let empty = |residual: Array2<f64>| {
        let residual_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        Decomposition {
            sequence: AnnotationSequence {
                recording_id: recording_id.to_string(),
                detections: Vec::new(),
                residual_norm,
            },
            steps: Vec::new(),
            residual,
            collar,
        }
    };
    if rows == 0 || cols == 0 {
        return Ok(empty(residual));
    }
    let (t_rows, t_cols) = check_shapes((rows, cols), ts)?;
    let dict: Vec<SparseTemplate> = ts.templates.iter().map(SparseTemplate::new).filter(|t| t.norm_sq > 0.0).collect();
    if dict.is_empty() {
        return Err(MpError::EmptyTemplateSet);
    }
    let offsets = freq_offsets(t_rows, rows, cfg.freq_stride);
    let n_pos = cols - t_cols + 1;

    let mut best = BestScores {
        value: vec![f64::NEG_INFINITY; n_pos],
        template: vec![0; n_pos],
        offset: vec![0; n_pos],
    };
    best.refresh(residual.view(), &dict, &offsets, 0, n_pos);

    let mut residual_sq: f64 = residual.iter().map(|v| v * v).sum();
    let min_norm = dict.iter().map(|t| t.norm_sq).fold(f64::INFINITY, f64::min);
    let max_steps = (residual_sq / (cfg.min_rel_score * min_norm)).floor() as usize + 1;
    let mut steps: Vec<Step> = Vec::new();
    let mut round = 0;

    loop {
        round += 1;
        let threshold = |t: usize| cfg.min_rel_score * dict[best.template[t]].norm_sq;
        let mut peaks: Vec<usize> = (0..n_pos)
            .filter(|&t| {
                let m = best.value[t];
                m > 0.0
                    && m >= threshold(t)
                    && (t == 0 || m >= best.value[t - 1])
                    && (t + 1 == n_pos || m >= best.value[t + 1])
            })
            .collect();
        if peaks.is_empty() {
            break;
        }
        peaks.sort_by(|&a, &b| best.value[b].total_cmp(&best.value[a]).then(a.cmp(&b)));

        let mut accepted: Vec<usize> = Vec::new();
        for t in peaks {
            if accepted.iter().any(|&a| a.abs_diff(t) < collar) {
                continue;
            }
            let tmpl = &dict[best.template[t]];
            let f = best.offset[t];
            // earlier placements this round may overlap this window
            let delta = tmpl.score_at(residual.view(), t, f);
            if !(delta > 0.0 && delta >= cfg.min_rel_score * tmpl.norm_sq) {
                continue;
            }
            tmpl.subtract(&mut residual, t, f);
            let before = residual_sq;
            residual_sq = (before - delta).max(0.0);
            steps.push(Step {
                round,
                detection: Detection {
                    template_id: tmpl.id,
                    t,
                    f,
                    score: delta,
                },
                residual_sq_before: before,
                residual_sq_after: residual_sq,
            });
            accepted.push(t);
        }
        if accepted.is_empty() {
            return Err(MpError::Invariant("a round with fresh scores accepted nothing".into()));
        }
        if steps.len() > max_steps {
            return Err(MpError::Invariant(format!("more than {max_steps} placements; descent bound broken")));
        }
        accepted.sort_unstable();
        let reach = t_cols + collar;
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for &t in &accepted {
            let lo = t.saturating_sub(reach);
            let hi = (t + reach + 1).min(n_pos);
            match spans.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => spans.push((lo, hi)),
            }
        }
        for (lo, hi) in spans {
            best.refresh(residual.view(), &dict, &offsets, lo, hi);
        }
    }

    let mut detections: Vec<Detection> = steps.iter().map(|s| s.detection).collect();
    detections.sort_by(|a, b| a.t.cmp(&b.t).then(a.template_id.cmp(&b.template_id)).then(a.f.cmp(&b.f)));
    let residual_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Decomposition {
        sequence: AnnotationSequence {
            recording_id: recording_id.to_string(),
            detections,
            residual_norm,
        },
        steps,
        residual,
        collar,
    })
}

/// Greedy decomposition returning only the annotation.
pub fn greedy_decompose(recording_id: &str, signal: ArrayView2<f64>, ts: &TemplateSet, cfg: &MpConfig) -> Result<AnnotationSequence, MpError> {
    decompose(recording_id, signal, ts, cfg).map(|d| d.sequence)
}

/// Drops detections of templates whose active duration is at most one column.
pub fn postprocess(seq: &AnnotationSequence, ts: &TemplateSet) -> AnnotationSequence {
    let keep = |d: &Detection| ts.get(d.template_id).is_some_and(|t| t.duration > 1);
    AnnotationSequence {
        recording_id: seq.recording_id.clone(),
        detections: seq.detections.iter().copied().filter(keep).collect(),
        residual_norm: seq.residual_norm,
    }
}

/// Sum of all placed templates, shaped like the signal.
pub fn reconstruction(shape: (usize, usize), detections: &[Detection], ts: &TemplateSet) -> Array2<f64> {
    let mut out = Array2::zeros(shape);
    for d in detections {
        if let Some(t) = ts.get(d.template_id) {
            let (r, c) = t.shape();
            let mut win = out.slice_mut(s![d.f..d.f + r, d.t..d.t + c]);
            win += &t.matrix;
        }
    }
    out
}

/// Patches explained by each detection: the signal window with every other
/// placement removed, restricted to the super-threshold components that
/// touch the template's support.
pub fn matched_patches(signal: ArrayView2<f64>, detections: &[Detection], ts: &TemplateSet, eta: f64) -> Vec<Array2<f64>> {
    let placed = reconstruction(signal.dim(), detections, ts);
    detections
        .iter()
        .map(|d| {
            let t = ts.get(d.template_id).expect("detection of a known template");
            let (r, c) = t.shape();
            let sl = s![d.f..d.f + r, d.t..d.t + c];
            let window = &signal.slice(sl) - &placed.slice(sl) + &t.matrix;
            let mask = window.mapv(|v| v >= eta);
            let mut keep = Array2::<bool>::from_elem((r, c), false);
            for comp in connected_components(&mask) {
                if comp.iter().any(|&(i, j)| t.matrix[[i, j]] > 0.0) {
                    for (i, j) in comp {
                        keep[[i, j]] = true;
                    }
                }
            }
            Array2::from_shape_fn((r, c), |(i, j)| if keep[[i, j]] { window[[i, j]] } else { 0.0 })
        })
        .collect()
}

/// Settings [`refine`] needs beyond [`MpConfig`].
#[derive(Debug, Clone)]
pub struct RefineSettings<'a> {
    pub mp: &'a MpConfig,
    pub split: &'a HdbscanConfig,
    pub merge_h: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub templates: TemplateSet,
    pub annotations: Vec<AnnotationSequence>,
    pub rounds: usize,
    /// Set when a round produced no templates and the previous one was kept.
    pub stopped_early: Option<String>,
}

/// Alternates matching pursuit with split/merge re-clustering of the
/// matched patches. Returns the templates used in the final round and its
/// post-processed annotations.
pub fn refine(recordings: &[(String, ArrayView2<f64>)], ts: &TemplateSet, settings: &RefineSettings) -> Result<RefineOutcome, MpError> {
    settings.mp.validate()?;
    let mut current = ts.clone();
    let mut stopped_early = None;
    let mut rounds = 0;
    let annotations = loop {
        rounds += 1;
        let anns: Vec<AnnotationSequence> = recordings
            .par_iter()
            .map(|(id, sig)| greedy_decompose(id, *sig, &current, settings.mp))
            .collect::<Result<_, _>>()?;
        if rounds >= settings.mp.max_iters_outer {
            break anns;
        }
        match rebuild(recordings, &anns, &current, settings) {
            Ok(next) if !next.is_empty() => current = next,
            Ok(_) => {
                stopped_early = Some(format!("round {} produced no templates", rounds + 1));
                break anns;
            }
            Err(msg) => {
                stopped_early = Some(format!("round {} failed: {msg}", rounds + 1));
                break anns;
            }
        }
    };
    let annotations = annotations.iter().map(|a| postprocess(a, &current)).collect();
    Ok(RefineOutcome {
        templates: current,
        annotations,
        rounds,
        stopped_early,
    })
}

fn rebuild(recordings: &[(String, ArrayView2<f64>)], anns: &[AnnotationSequence], ts: &TemplateSet, settings: &RefineSettings) -> Result<TemplateSet, String> {
    let mut patches = Vec::new();
    let mut labels = Vec::new();
    let index_of = |id: TemplateId| ts.templates.iter().position(|t| t.id == id).expect("known template") as i32;
    for ((_, sig), ann) in recordings.iter().zip(anns) {
        patches.extend(matched_patches(*sig, &ann.detections, ts, settings.eta));
        labels.extend(ann.detections.iter().map(|d| index_of(d.template_id)));
    }
    if patches.is_empty() {
        return Ok(TemplateSet::default());
    }
    let assignment = ClusterAssignment::from_labels(labels);
    let data = flatten_patches(&patches);
    let split = split_clusters(data.view(), &assignment, settings.split).map_err(|e| e.to_string())?;
    let built = build_templates(&patches, &split).map_err(|e| e.to_string())?;
    let merged = merge_templates(&built, settings.merge_h, &patches, &split.labels).map_err(|e| e.to_string())?;
    Ok(merged.renumbered())
}
