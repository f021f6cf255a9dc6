//! Detection and classification scores against ground truth, label
//! mapping, bag-of-syllables embeddings and retrieval mAP.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{fit_pca, project_all};
use crate::records::AnnotationRecord;
use crate::templates::TemplateId;

/// Printed name of the "no ground-truth event here" label.
pub const EMPTY: &str = "EMPTY";

/// `None` is the empty label.
pub type Label = Option<String>;

pub fn label_name(l: &Label) -> &str {
    l.as_deref().unwrap_or(EMPTY)
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("detection references template {template} but only {n_templates} exist")]
    UnknownTemplate { template: TemplateId, n_templates: usize },
    #[error("bin edges must be strictly increasing with at least two entries")]
    BadEdges,
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub onset: f64,
    pub offset: f64,
    pub label: String,
}

pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Greedy one-to-one matching: candidate pairs with IoU ≥ `iou_min` are
/// taken in descending IoU order (ties by detection, then ground-truth
/// index). Returns `(detection, gt)` index pairs.
pub fn match_events(dets: &[(f64, f64)], gt: &[(f64, f64)], iou_min: f64) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &d) in dets.iter().enumerate() {
        for (j, &g) in gt.iter().enumerate() {
            let iou = interval_iou(d, g);
            if iou >= iou_min && iou > 0.0 {
                cands.push((iou, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !det_used[i] && !gt_used[j] {
            det_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

fn det_intervals(dets: &[AnnotationRecord]) -> Vec<(f64, f64)> {
    dets.iter().map(|d| (d.onset_s, d.offset_s)).collect()
}

fn gt_intervals(gt: &[GroundTruthEvent]) -> Vec<(f64, f64)> {
    gt.iter().map(|g| (g.onset, g.offset)).collect()
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionScores {
    pub true_positives: usize,
    pub n_detections: usize,
    pub n_ground_truth: usize,
    /// `None` when there are no detections.
    pub precision: Option<f64>,
    /// `None` when there is no ground truth.
    pub recall: Option<f64>,
}

impl DetectionScores {
    fn from_counts(tp: usize, n_det: usize, n_gt: usize) -> Self {
        Self {
            true_positives: tp,
            n_detections: n_det,
            n_ground_truth: n_gt,
            precision: ratio(tp, n_det),
            recall: ratio(tp, n_gt),
        }
    }
}

pub fn detection_pr(dets: &[AnnotationRecord], gt: &[GroundTruthEvent], iou_min: f64) -> DetectionScores {
    detection_pr_pooled(&[(dets, gt)], iou_min)
}

/// Matching per recording, counts pooled across recordings.
pub fn detection_pr_pooled(items: &[(&[AnnotationRecord], &[GroundTruthEvent])], iou_min: f64) -> DetectionScores {
    let (mut tp, mut nd, mut ng) = (0, 0, 0);
    for (dets, gt) in items {
        tp += match_events(&det_intervals(dets), &gt_intervals(gt), iou_min).len();
        nd += dets.len();
        ng += gt.len();
    }
    DetectionScores::from_counts(tp, nd, ng)
}

/// Template id to ground-truth label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelMap {
    pub map: BTreeMap<TemplateId, Label>,
}

impl LabelMap {
    /// Unknown templates map to the empty label.
    pub fn get(&self, id: TemplateId) -> Label {
        self.map.get(&id).cloned().flatten()
    }
}

/// Label of the ground-truth event containing each detection's midpoint;
/// among several, the one overlapping the detection most, then the
/// earliest onset.
pub fn assign_support_labels(dets: &[AnnotationRecord], gt: &[GroundTruthEvent]) -> Vec<Label> {
    dets.iter()
        .map(|d| {
            let m = d.midpoint();
            gt.iter()
                .enumerate()
                .filter(|(_, g)| g.onset <= m && m <= g.offset)
                .max_by(|(ia, a), (ib, b)| {
                    let oa = overlap((d.onset_s, d.offset_s), (a.onset, a.offset));
                    let ob = overlap((d.onset_s, d.offset_s), (b.onset, b.offset));
                    oa.total_cmp(&ob).then(b.onset.total_cmp(&a.onset)).then(ib.cmp(ia))
                })
                .map(|(_, g)| g.label.clone())
        })
        .collect()
}

/// Modal label per template; ties prefer a real label over the empty one,
/// then the lexicographically smallest. Every id in `template_ids` gets an
/// entry, empty when it has no labelled detections.
pub fn build_label_map(labelled: &[(TemplateId, Label)], template_ids: &[TemplateId]) -> LabelMap {
    let mut counts: BTreeMap<TemplateId, BTreeMap<&Label, usize>> = BTreeMap::new();
    for (id, l) in labelled {
        *counts.entry(*id).or_default().entry(l).or_default() += 1;
    }
    let mut map: BTreeMap<TemplateId, Label> = template_ids.iter().map(|&id| (id, None)).collect();
    for (id, hist) in counts {
        // BTreeMap order puts None first, then labels ascending
        let best = hist
            .iter()
            .max_by(|(la, ca), (lb, cb)| {
                ca.cmp(cb)
                    .then(la.is_some().cmp(&lb.is_some()))
                    .then(lb.cmp(la))
            })
            .map(|(l, _)| (*l).clone())
            .flatten();
        map.insert(id, best);
    }
    LabelMap { map }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: BTreeMap<String, usize>,
    pub fp: BTreeMap<String, usize>,
    pub fn_: BTreeMap<String, usize>,
    pub support: BTreeMap<String, usize>,
}

impl ClassCounts {
    fn add(&mut self, dets: &[AnnotationRecord], gt: &[GroundTruthEvent], map: &LabelMap, iou_min: f64) {
        let pairs = match_events(&det_intervals(dets), &gt_intervals(gt), iou_min);
        let mut det_matched = vec![false; dets.len()];
        let mut gt_matched = vec![false; gt.len()];
        for g in gt {
            *self.support.entry(g.label.clone()).or_default() += 1;
        }
        for &(i, j) in &pairs {
            det_matched[i] = true;
            gt_matched[j] = true;
            let pred = label_name(&map.get(dets[i].template_id)).to_string();
            let actual = &gt[j].label;
            if map.get(dets[i].template_id).as_deref() == Some(actual.as_str()) {
                *self.tp.entry(pred).or_default() += 1;
            } else {
                *self.fp.entry(pred).or_default() += 1;
                *self.fn_.entry(actual.clone()).or_default() += 1;
            }
        }
        for (i, d) in dets.iter().enumerate() {
            if !det_matched[i] {
                *self.fp.entry(label_name(&map.get(d.template_id)).to_string()).or_default() += 1;
            }
        }
        for (j, g) in gt.iter().enumerate() {
            if !gt_matched[j] {
                *self.fn_.entry(g.label.clone()).or_default() += 1;
            }
        }
    }

    fn get(m: &BTreeMap<String, usize>, k: &str) -> usize {
        m.get(k).copied().unwrap_or(0)
    }

    pub fn scores(&self) -> ClassificationScores {
        let tp: usize = self.tp.values().sum();
        let fp: usize = self.fp.values().sum();
        let total: usize = self.support.values().sum();
        let mut wp = 0.0;
        let mut wr = 0.0;
        for (c, &n) in &self.support {
            let (t, f, m) = (Self::get(&self.tp, c), Self::get(&self.fp, c), Self::get(&self.fn_, c));
            let p = if t + f > 0 { t as f64 / (t + f) as f64 } else { 0.0 };
            let r = if t + m > 0 { t as f64 / (t + m) as f64 } else { 0.0 };
            wp += n as f64 * p;
            wr += n as f64 * r;
        }
        ClassificationScores {
            micro_precision: ratio(tp, tp + fp),
            weighted_precision: (total > 0).then(|| wp / total as f64),
            weighted_recall: (total > 0).then(|| wr / total as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassificationScores {
    /// `None` when nothing was predicted.
    pub micro_precision: Option<f64>,
    /// Per-class values weighted by ground-truth support; `None` without
    /// ground truth. Classes never predicted score 0 precision.
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
}

pub fn classification_metrics(dets: &[AnnotationRecord], gt: &[GroundTruthEvent], map: &LabelMap, iou_min: f64) -> ClassificationScores {
    classification_counts(&[(dets, gt)], map, iou_min).scores()
}

pub fn classification_counts(items: &[(&[AnnotationRecord], &[GroundTruthEvent])], map: &LabelMap, iou_min: f64) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for (dets, gt) in items {
        counts.add(dets, gt, map, iou_min);
    }
    counts
}

/// Count vector over (template, frequency bin), template-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BosVector {
    pub n_templates: usize,
    pub n_bins: usize,
    pub counts: Vec<u32>,
}

impl BosVector {
    pub fn zeros(n_templates: usize, n_bins: usize) -> Self {
        Self {
            n_templates,
            n_bins,
            counts: vec![0; n_templates * n_bins],
        }
    }

    pub fn get(&self, template: usize, bin: usize) -> u32 {
        self.counts[template * self.n_bins + bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// `n + 1` geometrically spaced edges from `low` to `high`.
pub fn log_spaced_edges(low: f64, high: f64, n: usize) -> Vec<f64> {
    let (a, b) = (low.max(1e-9).ln(), high.ln());
    (0..=n).map(|i| (a + (b - a) * i as f64 / n as f64).exp()).collect()
}

/// Bin of `x` among `edges`; values outside go to the boundary bins.
pub fn freq_bin(x: f64, edges: &[f64]) -> usize {
    let n = edges.len() - 1;
    edges[1..n].iter().take_while(|&&e| x >= e).count()
}

pub fn bag_of_syllables(records: &[AnnotationRecord], n_templates: usize, edges: &[f64]) -> Result<BosVector, EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::BadEdges);
    }
    let mut v = BosVector::zeros(n_templates, edges.len() - 1);
    for r in records {
        let k = r.template_id as usize;
        if k >= n_templates {
            return Err(EvalError::UnknownTemplate {
                template: r.template_id,
                n_templates,
            });
        }
        v.counts[k * v.n_bins + freq_bin(r.centre_hz(), edges)] += 1;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    /// Mean over non-skipped queries; `None` if all were skipped.
    pub map: Option<f64>,
    pub k: Option<usize>,
    pub n_queries: usize,
    /// Queries whose label has no other member.
    pub skipped: Vec<usize>,
}

/// Average precision of one ranked relevance list, truncated at `k`, normalised
/// by `min(total relevant, k)`.
pub fn average_precision(relevant: &[bool], k: Option<usize>) -> f64 {
    let total = relevant.iter().filter(|&&r| r).count();
    let cut = k.unwrap_or(relevant.len()).min(relevant.len());
    let denom = total.min(k.unwrap_or(usize::MAX));
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &r) in relevant[..cut].iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Same-label retrieval under Euclidean distance, ties broken by index.
pub fn retrieval_map(vectors: &[Vec<f64>], labels: &[String], k: Option<usize>) -> Result<RetrievalScores, EvalError> {
    if vectors.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            vectors: vectors.len(),
            labels: labels.len(),
        });
    }
    let n = vectors.len();
    let mut aps = Vec::new();
    let mut skipped = Vec::new();
    for q in 0..n {
        if !labels.iter().enumerate().any(|(i, l)| i != q && *l == labels[q]) {
            skipped.push(q);
            continue;
        }
        let dist = |i: usize| -> f64 { vectors[q].iter().zip(&vectors[i]).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut order: Vec<(f64, usize)> = (0..n).filter(|&i| i != q).map(|i| (dist(i), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let rel: Vec<bool> = order.iter().map(|&(_, i)| labels[i] == labels[q]).collect();
        aps.push(average_precision(&rel, k));
    }
    Ok(RetrievalScores {
        map: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
        k,
        n_queries: aps.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceProfile {
    pub individuals: Vec<String>,
    /// `individual × template`, rows sum to 1 or are all zero.
    pub matrix: Array2<f64>,
    pub empty_rows: Vec<String>,
}

/// Relative template usage per individual.
pub fn template_occurrence_profile(usage: &BTreeMap<String, Vec<TemplateId>>, n_templates: usize) -> Result<OccurrenceProfile, EvalError> {
    let individuals: Vec<String> = usage.keys().cloned().collect();
    let mut matrix = Array2::zeros((individuals.len(), n_templates));
    let mut empty_rows = Vec::new();
    for (i, (name, ids)) in usage.iter().enumerate() {
        for &id in ids {
            if id as usize >= n_templates {
                return Err(EvalError::UnknownTemplate { template: id, n_templates });
            }
            matrix[[i, id as usize]] += 1.0;
        }
        let total = ids.len() as f64;
        if ids.is_empty() {
            empty_rows.push(name.clone());
        } else {
            matrix.row_mut(i).mapv_inplace(|v| v / total);
        }
    }
    Ok(OccurrenceProfile {
        individuals,
        matrix,
        empty_rows,
    })
}

/// First two principal coordinates of the given vectors (zeros where the
/// data has too few samples or dimensions).
pub fn projection_2d(vectors: &[Vec<f64>]) -> Array2<f64> {
    let n = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut out = Array2::zeros((n, 2));
    if n < 2 || dim == 0 {
        return out;
    }
    let data = Array2::from_shape_fn((n, dim), |(i, j)| vectors[i][j]);
    let comps = 2.min(dim).min(n);
    if let Ok(model) = fit_pca(data.view(), comps) {
        if let Ok(coords) = project_all(&model, data.view()) {
            out.slice_mut(ndarray::s![.., ..comps]).assign(&coords);
        }
    }
    out
}

/// Distinct labels of a ground-truth list, sorted.
pub fn label_set(gt: &[GroundTruthEvent]) -> BTreeSet<String> {
    gt.iter().map(|g| g.label.clone()).collect()
}
