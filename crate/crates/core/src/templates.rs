//! Syllable templates: element-wise medians of clustered patches, the
//! normalised template distance, and complete-linkage merging of
//! near-duplicate templates.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::clustering::ClusterAssignment;

pub type TemplateId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("assignment has no clusters; cannot build templates")]
    AllNoise,
    #[error("template shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("template has zero norm")]
    ZeroNorm,
    #[error("merge threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("{labels} labels given for {patches} patches")]
    LengthMismatch { labels: usize, patches: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: TemplateId,
    /// dB-above-floor values, representable exactly as `f32`.
    pub matrix: Array2<f64>,
    pub support: usize,
    /// Number of columns with positive energy.
    pub duration: usize,
}

/// Bounding box of a template's non-zero cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveExtent {
    pub first_col: usize,
    /// Exclusive.
    pub end_col: usize,
    pub low_row: usize,
    pub high_row: usize,
}

impl Template {
    pub fn new(id: TemplateId, matrix: Array2<f64>, support: usize) -> Self {
        let matrix = matrix.mapv(|v| v as f32 as f64);
        let duration = matrix.columns().into_iter().filter(|c| c.sum() > 0.0).count();
        Self {
            id,
            matrix,
            support,
            duration,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    pub fn norm_sq(&self) -> f64 {
        self.matrix.iter().map(|v| v * v).sum()
    }

    pub fn active_extent(&self) -> Option<ActiveExtent> {
        let mut ext: Option<ActiveExtent> = None;
        for ((r, c), &v) in self.matrix.indexed_iter() {
            if v > 0.0 {
                let e = ext.get_or_insert(ActiveExtent {
                    first_col: c,
                    end_col: c + 1,
                    low_row: r,
                    high_row: r,
                });
                e.first_col = e.first_col.min(c);
                e.end_col = e.end_col.max(c + 1);
                e.low_row = e.low_row.min(r);
                e.high_row = e.high_row.max(r);
            }
        }
        ext
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateSet {
    pub templates: Vec<Template>,
    /// Template id → ids of the clusters that contributed to it.
    pub provenance: BTreeMap<TemplateId, Vec<u32>>,
}

impl TemplateSet {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: TemplateId) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn ids(&self) -> Vec<TemplateId> {
        self.templates.iter().map(|t| t.id).collect()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.templates.first().map(Template::shape)
    }

    /// Median of the templates' active durations.
    pub fn median_duration(&self) -> usize {
        let mut d: Vec<usize> = self.templates.iter().map(|t| t.duration).collect();
        if d.is_empty() {
            return 0;
        }
        d.sort_unstable();
        d[(d.len() - 1) / 2]
    }

    /// Reassigns ids densely as `0..len` in current order; provenance follows.
    pub fn renumbered(&self) -> TemplateSet {
        let mut out = TemplateSet::default();
        for (new_id, t) in self.templates.iter().enumerate() {
            let new_id = new_id as TemplateId;
            let prov = self.provenance.get(&t.id).cloned().unwrap_or_else(|| vec![t.id]);
            out.provenance.insert(new_id, prov);
            out.templates.push(Template { id: new_id, ..t.clone() });
        }
        out
    }
}

/// Element-wise median; even counts average the two middle values.
pub fn elementwise_median(patches: &[ArrayView2<f64>]) -> Array2<f64> {
    let shape = patches[0].dim();
    let mut out = Array2::zeros(shape);
    let mut buf = Vec::with_capacity(patches.len());
    for ((r, c), slot) in out.indexed_iter_mut() {
        buf.clear();
        buf.extend(patches.iter().map(|p| p[[r, c]]));
        buf.sort_unstable_by(f64::total_cmp);
        let m = buf.len();
        *slot = if m % 2 == 1 {
            buf[m / 2]
        } else {
            0.5 * (buf[m / 2 - 1] + buf[m / 2])
        };
    }
    out
}

/// One median template per cluster; template id = cluster label. Clusters
/// whose median is all zero are dropped.
pub fn build_templates(patches: &[Array2<f64>], assignment: &ClusterAssignment) -> Result<TemplateSet, TemplateError> {
    if assignment.labels.len() != patches.len() {
        return Err(TemplateError::LengthMismatch {
            labels: assignment.labels.len(),
            patches: patches.len(),
        });
    }
    if assignment.n_clusters == 0 {
        return Err(TemplateError::AllNoise);
    }
    let mut set = TemplateSet::default();
    for c in 0..assignment.n_clusters as i32 {
        let views: Vec<ArrayView2<f64>> = assignment.members(c).into_iter().map(|i| patches[i].view()).collect();
        if views.is_empty() {
            continue;
        }
        let t = Template::new(c as TemplateId, elementwise_median(&views), views.len());
        if t.norm_sq() > 0.0 {
            set.provenance.insert(t.id, vec![t.id]);
            set.templates.push(t);
        }
    }
    Ok(set)
}

/// `‖A − B‖² / max(‖A‖², ‖B‖²)` on raw matrices.
pub fn matrix_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64, TemplateError> {
    if a.dim() != b.dim() {
        return Err(TemplateError::ShapeMismatch(a.dim(), b.dim()));
    }
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let denom = na.max(nb);
    if na == 0.0 || nb == 0.0 {
        return Err(TemplateError::ZeroNorm);
    }
    Ok(diff / denom)
}

pub fn template_distance(a: &Template, b: &Template) -> Result<f64, TemplateError> {
    matrix_distance(a.matrix.view(), b.matrix.view())
}

/// Complete-linkage agglomeration of a symmetric distance matrix; groups
/// are merged while their linkage is `<= h`. Returns groups of indices in
/// ascending order of their smallest member. Ties go to the lowest index pair.
pub fn complete_linkage_groups(dist: &Array2<f64>, h: f64) -> Vec<Vec<usize>> {
    let k = dist.nrows();
    let mut groups: Vec<Option<Vec<usize>>> = (0..k).map(|i| Some(vec![i])).collect();
    let mut link = dist.clone();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..k {
            if groups[i].is_none() {
                continue;
            }
            for j in (i + 1)..k {
                if groups[j].is_none() {
                    continue;
                }
                let d = link[[i, j]];
                if d <= h && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let moved = groups[j].take().expect("live group");
        groups[i].as_mut().expect("live group").extend(moved);
        for m in 0..k {
            let d = link[[i, m]].max(link[[j, m]]);
            link[[i, m]] = d;
            link[[m, i]] = d;
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_iter().flatten().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort_by_key(|g| g[0]);
    out
}

fn pairwise(ts: &[Template]) -> Result<Array2<f64>, TemplateError> {
    let k = ts.len();
    let mut d = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let v = template_distance(&ts[i], &ts[j])?;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(d)
}

/// Merges over-split templates.
///
/// `labels[i]` is the template id that patch `i` belongs to (negative for
/// none). Each merged group's template is the median of all its member
/// patches. Merging repeats on the rebuilt templates until every pair is
/// farther apart than `h`. A merged template keeps the smallest id of its group.
pub fn merge_templates(ts: &TemplateSet, h: f64, patches: &[Array2<f64>], labels: &[i32]) -> Result<TemplateSet, TemplateError> {
    if !(0.0..=1.0).contains(&h) {
        return Err(TemplateError::InvalidThreshold(h));
    }
    if labels.len() != patches.len() {
        return Err(TemplateError::LengthMismatch {
            labels: labels.len(),
            patches: patches.len(),
        });
    }
    let mut current = ts.clone();
    let mut members: BTreeMap<TemplateId, Vec<usize>> = ts.ids().into_iter().map(|id| (id, Vec::new())).collect();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            if let Some(m) = members.get_mut(&(l as TemplateId)) {
                m.push(i);
            }
        }
    }

    loop {
        if current.len() <= 1 {
            break;
        }
        let dist = pairwise(&current.templates)?;
        let groups = complete_linkage_groups(&dist, h);
        if groups.len() == current.len() {
            break;
        }
        let mut next = TemplateSet::default();
        let mut next_members = BTreeMap::new();
        for g in groups {
            let ts_in: Vec<&Template> = g.iter().map(|&i| &current.templates[i]).collect();
            if ts_in.len() == 1 {
                let t = ts_in[0].clone();
                next.provenance.insert(t.id, current.provenance[&t.id].clone());
                next_members.insert(t.id, members.remove(&t.id).unwrap_or_default());
                next.templates.push(t);
                continue;
            }
            let id = ts_in.iter().map(|t| t.id).min().expect("non-empty group");
            let mut pooled: Vec<usize> = Vec::new();
            let mut prov: Vec<u32> = Vec::new();
            for t in &ts_in {
                pooled.extend(members.remove(&t.id).unwrap_or_default());
                prov.extend(current.provenance.get(&t.id).cloned().unwrap_or_else(|| vec![t.id]));
            }
            pooled.sort_unstable();
            prov.sort_unstable();
            prov.dedup();
            let matrix = if pooled.is_empty() {
                let views: Vec<_> = ts_in.iter().map(|t| t.matrix.view()).collect();
                elementwise_median(&views)
            } else {
                let views: Vec<_> = pooled.iter().map(|&i| patches[i].view()).collect();
                elementwise_median(&views)
            };
            let support = ts_in.iter().map(|t| t.support).sum();
            let t = Template::new(id, matrix, support);
            if t.norm_sq() == 0.0 {
                continue;
            }
            next.provenance.insert(id, prov);
            next_members.insert(id, pooled);
            next.templates.push(t);
        }
        next.templates.sort_by_key(|t| t.id);
        current = next;
        members = next_members;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn t(id: TemplateId, m: Array2<f64>) -> Template {
        Template::new(id, m, 1)
    }

    #[test]
    fn distance_closed_forms() {
        let a = t(0, array![[1.0, 2.0], [0.0, 3.0]]);
        let b = t(1, a.matrix.mapv(|v| 2.0 * v));
        assert_eq!(template_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(template_distance(&a, &b).unwrap(), 0.25);
        let o1 = t(0, array![[3.0, 0.0], [0.0, 4.0]]);
        let o2 = t(1, array![[0.0, 5.0], [0.0, 0.0]]);
        assert_eq!(template_distance(&o1, &o2).unwrap(), 2.0);
    }

    #[test]
    fn distance_errors() {
        let a = t(0, array![[1.0, 2.0]]);
        let z = t(1, array![[0.0, 0.0]]);
        let c = t(2, array![[1.0], [2.0]]);
        assert_eq!(template_distance(&a, &z), Err(TemplateError::ZeroNorm));
        assert!(matches!(template_distance(&a, &c), Err(TemplateError::ShapeMismatch(..))));
    }

    #[test]
    fn median_rules() {
        let p = array![[1.0, 5.0], [2.0, 0.0]];
        let q = array![[9.0, 9.0], [9.0, 9.0]];
        let m = elementwise_median(&[p.view(), p.view(), q.view()]);
        assert_eq!(m, p);
        let m2 = elementwise_median(&[p.view(), q.view()]);
        assert_eq!(m2, array![[5.0, 7.0], [5.5, 4.5]]);
    }

    #[test]
    fn build_identical_cluster() {
        let p = array![[1.5, 0.0], [2.0, 4.0]];
        let patches = vec![p.clone(), p.clone(), p.clone(), array![[7.0, 7.0], [7.0, 7.0]]];
        let a = ClusterAssignment::from_labels(vec![0, 0, 0, -1]);
        let ts = build_templates(&patches, &a).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.templates[0].matrix, p);
        assert_eq!(ts.templates[0].support, 3);
        assert_eq!(ts.templates[0].duration, 2);
    }

    #[test]
    fn build_all_noise_fails() {
        let patches = vec![array![[1.0]]];
        let a = ClusterAssignment::all_noise(1);
        assert_eq!(build_templates(&patches, &a), Err(TemplateError::AllNoise));
    }

    #[test]
    fn linkage_by_hand() {
        // d(0,1) = 0.1, d(0,2) = d(1,2) = 0.9
        let d = array![[0.0, 0.1, 0.9], [0.1, 0.0, 0.9], [0.9, 0.9, 0.0]];
        assert_eq!(complete_linkage_groups(&d, 0.33), vec![vec![0, 1], vec![2]]);
        // complete linkage refuses a chain: 0-1 close, 1-2 close, 0-2 far
        let d = array![[0.0, 0.1, 0.5], [0.1, 0.0, 0.2], [0.5, 0.2, 0.0]];
        assert_eq!(complete_linkage_groups(&d, 0.33), vec![vec![0, 1], vec![2]]);
        assert_eq!(complete_linkage_groups(&d, 0.6), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn duplicate_clusters_merge() {
        let p = array![[1.0, 2.0], [3.0, 0.0]];
        let patches = vec![p.clone(); 4];
        let a = ClusterAssignment::from_labels(vec![0, 0, 1, 1]);
        let ts = build_templates(&patches, &a).unwrap();
        let merged = merge_templates(&ts, 0.33, &patches, &a.labels).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.templates[0].id, 0);
        assert_eq!(merged.templates[0].support, 4);
        assert_eq!(merged.provenance[&0], vec![0, 1]);
    }

    #[test]
    fn far_templates_untouched() {
        let patches = vec![array![[1.0, 0.0]], array![[0.0, 1.0]]];
        let a = ClusterAssignment::from_labels(vec![0, 1]);
        let ts = build_templates(&patches, &a).unwrap();
        assert_eq!(merge_templates(&ts, 0.33, &patches, &a.labels).unwrap(), ts);
    }

    #[test]
    fn threshold_out_of_range() {
        let ts = TemplateSet::default();
        assert_eq!(merge_templates(&ts, 1.5, &[], &[]), Err(TemplateError::InvalidThreshold(1.5)));
    }

    #[test]
    fn renumber_keeps_provenance() {
        let patches = vec![array![[1.0, 0.0]], array![[0.0, 1.0]], array![[0.0, 1.0]]];
        let a = ClusterAssignment { labels: vec![0, 2, 2], n_clusters: 3 };
        let ts = build_templates(&patches, &a).unwrap();
        assert_eq!(ts.ids(), vec![0, 2]);
        let r = ts.renumbered();
        assert_eq!(r.ids(), vec![0, 1]);
        assert_eq!(r.provenance[&1], vec![2]);
    }
}
