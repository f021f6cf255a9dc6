//! In-memory orchestration: fit templates on a support set, annotate a
//! query set, and score both against ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{flatten_patches, initial_clustering, split_clusters, ClusterError};
use crate::config::PipelineConfig;
use crate::evaluation::{
    assign_support_labels, build_label_map, classification_counts, detection_pr_pooled, ClassificationScores,
    DetectionScores, GroundTruthEvent, LabelMap,
};
use crate::events::detect_events;
use crate::frontend::Spectrogram;
use crate::pursuit::{greedy_decompose, postprocess, refine, AnnotationSequence, MpError, RefineSettings};
use crate::records::{to_records, AnnotationRecord, RecordError};
use crate::templates::{build_templates, merge_templates, TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("detection stage: no syllable events found in {0} support recording(s)")]
    NoEvents(usize),
    #[error("clustering stage: all {0} events were labelled noise")]
    AllNoise(usize),
    #[error("clustering stage: {0}")]
    Cluster(#[from] ClusterError),
    #[error("template stage: {0}")]
    Template(TemplateError),
    #[error("matching pursuit stage: {0}")]
    Mp(#[from] MpError),
    #[error("annotation stage: {0}")]
    Record(#[from] RecordError),
    #[error("spectrograms have {found} frequency rows, expected {expected}")]
    RowMismatch { expected: usize, found: usize },
}

impl PipelineError {
    /// True for failures that indicate a bug rather than unsuitable data.
    pub fn is_invariant(&self) -> bool {
        matches!(self, PipelineError::Mp(MpError::Invariant(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitStats {
    pub n_recordings: usize,
    pub n_events: usize,
    pub n_initial_clusters: usize,
    pub n_split_clusters: usize,
    /// Templates built from the split clusters.
    pub n_before_merge: usize,
    pub n_templates: usize,
}

/// Detection → PCA + HDBSCAN → split → median templates → merge.
pub fn fit_templates(support: &[&Spectrogram], cfg: &PipelineConfig) -> Result<(TemplateSet, FitStats), PipelineError> {
    if let Some(first) = support.first() {
        if let Some(bad) = support.iter().find(|s| s.n_freq() != first.n_freq()) {
            return Err(PipelineError::RowMismatch {
                expected: first.n_freq(),
                found: bad.n_freq(),
            });
        }
    }
    let patches: Vec<_> = support
        .par_iter()
        .map(|s| detect_events(s, &cfg.detect).into_iter().map(|e| e.patch).collect::<Vec<_>>())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut stats = FitStats {
        n_recordings: support.len(),
        n_events: patches.len(),
        ..FitStats::default()
    };
    if patches.is_empty() {
        return Err(PipelineError::NoEvents(support.len()));
    }
    if patches.len() < cfg.hdbscan.min_cluster_size.max(2) {
        return Err(PipelineError::AllNoise(patches.len()));
    }
    let data = flatten_patches(&patches);
    let (_, initial) = initial_clustering(data.view(), &cfg.hdbscan)?;
    stats.n_initial_clusters = initial.n_clusters;
    if initial.n_clusters == 0 {
        return Err(PipelineError::AllNoise(patches.len()));
    }
    let split = split_clusters(data.view(), &initial, cfg.split())?;
    stats.n_split_clusters = split.n_clusters;
    let built = build_templates(&patches, &split).map_err(|e| match e {
        TemplateError::AllNoise => PipelineError::AllNoise(patches.len()),
        other => PipelineError::Template(other),
    })?;
    stats.n_before_merge = built.len();
    let merged = merge_templates(&built, cfg.merge_h, &patches, &split.labels)
        .map_err(PipelineError::Template)?
        .renumbered();
    stats.n_templates = merged.len();
    Ok((merged, stats))
}

#[derive(Debug, Clone)]
pub struct Annotated {
    /// Templates of the final refinement round.
    pub templates: TemplateSet,
    pub sequences: Vec<AnnotationSequence>,
    pub records: Vec<Vec<AnnotationRecord>>,
    pub rounds: usize,
    pub stopped_early: Option<String>,
}

/// Refinement loop over the given recordings.
pub fn annotate(recordings: &[(String, &Spectrogram)], ts: &TemplateSet, cfg: &PipelineConfig) -> Result<Annotated, PipelineError> {
    let above: Vec<_> = recordings.par_iter().map(|(_, s)| s.above_floor()).collect();
    let inputs: Vec<_> = recordings.iter().zip(&above).map(|((id, _), a)| (id.clone(), a.view())).collect();
    let settings = RefineSettings {
        mp: &cfg.mp,
        split: cfg.split(),
        merge_h: cfg.merge_h,
        eta: cfg.detect.eta,
    };
    let out = refine(&inputs, ts, &settings)?;
    let records = out
        .annotations
        .iter()
        .zip(recordings)
        .map(|(a, (_, s))| to_records(a, &out.templates, s))
        .collect::<Result<_, _>>()?;
    Ok(Annotated {
        templates: out.templates,
        sequences: out.annotations,
        records,
        rounds: out.rounds,
        stopped_early: out.stopped_early,
    })
}

/// One greedy pass plus post-processing with fixed templates.
pub fn decompose_with(recordings: &[(String, &Spectrogram)], ts: &TemplateSet, cfg: &PipelineConfig) -> Result<Vec<Vec<AnnotationRecord>>, PipelineError> {
    recordings
        .par_iter()
        .map(|(id, s)| {
            let seq = postprocess(&greedy_decompose(id, s.above_floor().view(), ts, &cfg.mp)?, ts);
            Ok(to_records(&seq, ts, s)?)
        })
        .collect()
}

/// Majority-label map from support annotations and their ground truth.
pub fn support_label_map(support: &[(&[AnnotationRecord], &[GroundTruthEvent])], ts: &TemplateSet) -> LabelMap {
    let mut pairs = Vec::new();
    for (recs, gt) in support {
        let labels = assign_support_labels(recs, gt);
        pairs.extend(recs.iter().map(|r| r.template_id).zip(labels));
    }
    build_label_map(&pairs, &ts.ids())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScores {
    pub n_templates: usize,
    pub detection: DetectionScores,
    pub classification: ClassificationScores,
}

pub fn score_query(query: &[(&[AnnotationRecord], &[GroundTruthEvent])], map: &LabelMap, n_templates: usize, iou_min: f64) -> UnitScores {
    UnitScores {
        n_templates,
        detection: detection_pr_pooled(query, iou_min),
        classification: classification_counts(query, map, iou_min).scores(),
    }
}

/// A recording with its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct LabelledRecording<'a> {
    pub id: &'a str,
    pub spectrogram: &'a Spectrogram,
    pub truth: &'a [GroundTruthEvent],
}

#[derive(Debug, Clone)]
pub struct UnitOutcome {
    pub fit_templates: TemplateSet,
    pub fit_stats: FitStats,
    pub annotated: Annotated,
    pub support_records: Vec<Vec<AnnotationRecord>>,
    pub label_map: LabelMap,
    pub scores: UnitScores,
}

/// Fit on `support`, annotate `query`, label templates from the support
/// annotations made with the final templates, and score the query.
pub fn run_unit(support: &[LabelledRecording], query: &[LabelledRecording], cfg: &PipelineConfig) -> Result<UnitOutcome, PipelineError> {
    let support_specs: Vec<&Spectrogram> = support.iter().map(|r| r.spectrogram).collect();
    let (fitted, fit_stats) = fit_templates(&support_specs, cfg)?;
    let query_in: Vec<(String, &Spectrogram)> = query.iter().map(|r| (r.id.to_string(), r.spectrogram)).collect();
    let annotated = annotate(&query_in, &fitted, cfg)?;
    let support_in: Vec<(String, &Spectrogram)> = support.iter().map(|r| (r.id.to_string(), r.spectrogram)).collect();
    let support_records = decompose_with(&support_in, &annotated.templates, cfg)?;
    let sup: Vec<_> = support_records.iter().zip(support).map(|(r, s)| (r.as_slice(), s.truth)).collect();
    let label_map = support_label_map(&sup, &annotated.templates);
    let q: Vec<_> = annotated.records.iter().zip(query).map(|(r, s)| (r.as_slice(), s.truth)).collect();
    let scores = score_query(&q, &label_map, annotated.templates.len(), cfg.eval.iou_min);
    Ok(UnitOutcome {
        fit_templates: fitted,
        fit_stats,
        annotated,
        support_records,
        label_map,
        scores,
    })
}
