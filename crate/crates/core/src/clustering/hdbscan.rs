//! HDBSCAN with excess-of-mass cluster selection.
//!
//! Core distances count the point itself among its `min_samples` nearest
//! neighbours. The single-linkage tree is built from a Prim minimum spanning
//! tree over mutual-reachability distances and condensed with
//! `min_cluster_size`. Clusters larger than `max_cluster_size` cannot be
//! selected, which pushes selection down to their children.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{ClusterAssignment, ClusterError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdbscanConfig {
    pub min_cluster_size: usize,
    pub max_cluster_size: usize,
    /// Neighbourhood size for core distances; `None` uses `min_cluster_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_samples: Option<usize>,
    /// Whether the root of the condensed tree may be selected.
    #[serde(default = "default_allow_single")]
    pub allow_single_cluster: bool,
}

fn default_allow_single() -> bool {
    true
}

impl Default for HdbscanConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 10,
            max_cluster_size: 200,
            min_samples: None,
            allow_single_cluster: true,
        }
    }
}

impl HdbscanConfig {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_cluster_size < 2 {
            return Err(format!("min_cluster_size must be >= 2, got {}", self.min_cluster_size));
        }
        if self.max_cluster_size < self.min_cluster_size {
            return Err(format!(
                "max_cluster_size ({}) must be >= min_cluster_size ({})",
                self.max_cluster_size, self.min_cluster_size
            ));
        }
        if self.min_samples == Some(0) {
            return Err("min_samples must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LinkageNode {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

#[derive(Debug, Clone, Copy)]
struct CondensedEdge {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Clusters the rows of `points`.
pub fn hdbscan(points: ArrayView2<f64>, cfg: &HdbscanConfig) -> Result<ClusterAssignment, ClusterError> {
    let n = points.nrows();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    cfg.validate().map_err(ClusterError::InvalidConfig)?;
    if n < cfg.min_cluster_size || n < 2 {
        return Ok(ClusterAssignment::all_noise(n));
    }
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&rows[i], &rows[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let k = cfg.min_samples().min(n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row.select_nth_unstable_by(k - 1, f64::total_cmp);
            row[k - 1]
        })
        .collect();

    let mst = prim_mst(n, &dist, &core);
    let linkage = single_linkage(n, &mst);
    let condensed = condense(n, &linkage, cfg.min_cluster_size);
    let selected = select_clusters(n, &condensed, cfg);
    Ok(label_points(n, &condensed, &selected))
}

/// Prim over mutual-reachability distances. Each edge joins the previously
/// added node to the next one (a Prim-order chain), which yields the same
/// single-linkage hierarchy as true tree edges and breaks ties like the
/// common reference implementations.
fn prim_mst(n: usize, dist: &[f64], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mrd = dist[current * n + j].max(core[current]).max(core[j]);
            if mrd < best[j] {
                best[j] = mrd;
            }
            if best[j] < next_d || next == usize::MAX {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((current, next, next_d));
        current = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    edges
}

fn single_linkage(n: usize, mst: &[(usize, usize, f64)]) -> Vec<LinkageNode> {
    let total = 2 * n - 1;
    let mut parent: Vec<usize> = (0..total).collect();
    let mut size = vec![1usize; total];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        while parent[x] != root {
            let next = parent[x];
            parent[x] = root;
            x = next;
        }
        root
    }
    let mut out = Vec::with_capacity(n - 1);
    for (i, &(a, b, d)) in mst.iter().enumerate() {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let id = n + i;
        size[id] = size[ra] + size[rb];
        parent[ra] = id;
        parent[rb] = id;
        out.push(LinkageNode {
            left: ra,
            right: rb,
            distance: d,
            size: size[id],
        });
    }
    out
}

fn subtree_leaves(n: usize, linkage: &[LinkageNode], node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let l = &linkage[x - n];
            stack.push(l.right);
            stack.push(l.left);
        }
    }
}

fn condense(n: usize, linkage: &[LinkageNode], min_cluster_size: usize) -> Vec<CondensedEdge> {
    let root = 2 * n - 2;
    let node_size = |x: usize| if x < n { 1 } else { linkage[x - n].size };
    // breadth-first order from the root
    let mut order = vec![root];
    let mut i = 0;
    while i < order.len() {
        let x = order[i];
        if x >= n {
            let l = &linkage[x - n];
            order.push(l.left);
            order.push(l.right);
        }
        i += 1;
    }
    let mut relabel = vec![0usize; root + 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut ignore = vec![false; root + 1];
    let mut out = Vec::new();
    let mut leaves = Vec::new();

    for &node in &order {
        if node < n || ignore[node] {
            continue;
        }
        let l = linkage[node - n];
        let lambda = if l.distance > 0.0 { 1.0 / l.distance } else { f64::INFINITY };
        let (ls, rs) = (node_size(l.left), node_size(l.right));
        let parent = relabel[node];
        let mut drop_points = |child: usize, ignore: &mut Vec<bool>, out: &mut Vec<CondensedEdge>| {
            leaves.clear();
            subtree_leaves(n, linkage, child, &mut leaves);
            for &p in leaves.iter() {
                out.push(CondensedEdge {
                    parent,
                    child: p,
                    lambda,
                    size: 1,
                });
            }
            let mut stack = vec![child];
            while let Some(x) = stack.pop() {
                ignore[x] = true;
                if x >= n {
                    stack.push(linkage[x - n].left);
                    stack.push(linkage[x - n].right);
                }
            }
        };
        match (ls >= min_cluster_size, rs >= min_cluster_size) {
            (true, true) => {
                for (child, size) in [(l.left, ls), (l.right, rs)] {
                    relabel[child] = next_label;
                    next_label += 1;
                    out.push(CondensedEdge {
                        parent,
                        child: relabel[child],
                        lambda,
                        size,
                    });
                }
            }
            (false, false) => {
                drop_points(l.left, &mut ignore, &mut out);
                drop_points(l.right, &mut ignore, &mut out);
            }
            (false, true) => {
                relabel[l.right] = parent;
                drop_points(l.left, &mut ignore, &mut out);
            }
            (true, false) => {
                relabel[l.left] = parent;
                drop_points(l.right, &mut ignore, &mut out);
            }
        }
    }
    out
}

fn excess(lambda: f64, birth: f64) -> f64 {
    if lambda == birth {
        0.0
    } else {
        lambda - birth
    }
}

/// Returns the selected cluster node ids (condensed numbering, root = n).
fn select_clusters(n: usize, condensed: &[CondensedEdge], cfg: &HdbscanConfig) -> Vec<usize> {
    let root = n;
    let max_node = condensed.iter().map(|e| e.parent.max(e.child)).max().unwrap_or(root).max(root);
    let n_clusters = max_node - root + 1;
    let mut birth = vec![0.0; n_clusters];
    let mut size = vec![0usize; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    size[0] = n;
    for e in condensed.iter().filter(|e| e.child >= root) {
        birth[e.child - root] = e.lambda;
        size[e.child - root] = e.size;
        children[e.parent - root].push(e.child);
    }
    let mut stability = vec![0.0; n_clusters];
    for e in condensed {
        let p = e.parent - root;
        stability[p] += excess(e.lambda, birth[p]) * e.size as f64;
    }

    let mut is_cluster = vec![true; n_clusters];
    if !cfg.allow_single_cluster {
        is_cluster[0] = false;
    }
    // children always carry larger ids than their parents
    let lowest = if cfg.allow_single_cluster { 0 } else { 1 };
    for c in (lowest..n_clusters).rev() {
        let subtree: f64 = children[c].iter().map(|&ch| stability[ch - root]).sum();
        if subtree > stability[c] || size[c] > cfg.max_cluster_size {
            is_cluster[c] = false;
            stability[c] = subtree;
        } else {
            let mut stack: Vec<usize> = children[c].clone();
            while let Some(x) = stack.pop() {
                is_cluster[x - root] = false;
                stack.extend(children[x - root].iter().copied());
            }
        }
    }
    (0..n_clusters).filter(|&c| is_cluster[c]).map(|c| c + root).collect()
}

fn label_points(n: usize, condensed: &[CondensedEdge], selected: &[usize]) -> ClusterAssignment {
    let root = n;
    let max_node = condensed.iter().map(|e| e.parent.max(e.child)).max().unwrap_or(root).max(root);
    let mut parent_of = vec![usize::MAX; max_node + 1];
    for e in condensed {
        parent_of[e.child] = e.parent;
    }
    let mut is_selected = vec![false; max_node + 1];
    for &s in selected {
        is_selected[s] = true;
    }
    let mut owner = vec![None; n];
    for (p, slot) in owner.iter_mut().enumerate() {
        let mut x = parent_of[p];
        while x != usize::MAX {
            if is_selected[x] {
                *slot = Some(x);
                break;
            }
            x = if x == root { usize::MAX } else { parent_of[x] };
        }
    }
    // label clusters in order of their first member
    let mut label_of = std::collections::HashMap::new();
    let labels = owner
        .iter()
        .map(|o| match o {
            None => -1,
            Some(c) => {
                let next = label_of.len() as i32;
                *label_of.entry(*c).or_insert(next)
            }
        })
        .collect();
    ClusterAssignment::from_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centres: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spread).unwrap();
        let mut data = Array2::zeros((centres.len() * per, 2));
        for (b, c) in centres.iter().enumerate() {
            for i in 0..per {
                data[[b * per + i, 0]] = c.0 + normal.sample(&mut rng);
                data[[b * per + i, 1]] = c.1 + normal.sample(&mut rng);
            }
        }
        data
    }

    #[test]
    fn three_separated_blobs() {
        let data = blobs(&[(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)], 50, 1.0, 7);
        let a = hdbscan(data.view(), &HdbscanConfig::default()).unwrap();
        assert_eq!(a.n_clusters, 3);
        for b in 0..3 {
            let l = a.labels[b * 50];
            assert!(l >= 0);
            assert!(a.labels[b * 50..(b + 1) * 50].iter().all(|&x| x == l));
        }
    }

    #[test]
    fn too_few_points_are_noise() {
        let data = blobs(&[(0.0, 0.0)], 5, 1.0, 1);
        let a = hdbscan(data.view(), &HdbscanConfig::default()).unwrap();
        assert_eq!(a.n_clusters, 0);
        assert!(a.labels.iter().all(|&l| l == -1));
    }

    #[test]
    fn empty_input_is_an_error() {
        let data = Array2::<f64>::zeros((0, 2));
        assert!(matches!(hdbscan(data.view(), &HdbscanConfig::default()), Err(ClusterError::Empty)));
    }

    #[test]
    fn duplicated_points_keep_cluster_count() {
        let data = blobs(&[(0.0, 0.0), (15.0, 5.0), (-5.0, 18.0)], 40, 1.0, 3);
        let doubled = ndarray::concatenate(ndarray::Axis(0), &[data.view(), data.view()]).unwrap();
        let cfg = HdbscanConfig {
            max_cluster_size: 400,
            ..HdbscanConfig::default()
        };
        let a = hdbscan(data.view(), &cfg).unwrap();
        let b = hdbscan(doubled.view(), &cfg).unwrap();
        assert_eq!(a.n_clusters, 3);
        assert_eq!(b.n_clusters, a.n_clusters);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let data = Array2::<f64>::zeros((30, 3));
        let a = hdbscan(data.view(), &HdbscanConfig::default()).unwrap();
        assert_eq!(a.n_clusters, 1);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn oversized_cluster_is_not_selectable() {
        // one dense blob of 300 with no internal structure cannot be selected
        let data = blobs(&[(0.0, 0.0)], 300, 1.0, 11);
        let cfg = HdbscanConfig::default();
        let a = hdbscan(data.view(), &cfg).unwrap();
        for c in 0..a.n_clusters as i32 {
            let size = a.labels.iter().filter(|&&l| l == c).count();
            assert!(size <= cfg.max_cluster_size);
        }
    }

    #[test]
    fn clusters_respect_min_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let k = rng.random_range(2..5);
            let centres: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0))).collect();
            let data = blobs(&centres, rng.random_range(12..40), 2.0, rng.random());
            let cfg = HdbscanConfig {
                min_cluster_size: 8,
                ..HdbscanConfig::default()
            };
            let a = hdbscan(data.view(), &cfg).unwrap();
            for c in 0..a.n_clusters as i32 {
                assert!(a.labels.iter().filter(|&&l| l == c).count() >= 8);
            }
        }
    }
}
