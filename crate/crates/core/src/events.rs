//! Syllable event detection: 8-connected components of the super-threshold
//! spectrogram, each rendered as a fixed-size zero-padded patch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::frontend::Spectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Threshold in dB above the spectrogram floor.
    pub eta: f64,
    pub box_time: usize,
    pub box_freq: usize,
    /// Patches span every frequency row; `box_freq` is ignored.
    pub full_band: bool,
    #[serde(default = "default_min_pixels")]
    pub min_pixels: usize,
}

fn default_min_pixels() -> usize {
    5
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            eta: 10.0,
            box_time: 100,
            box_freq: 100,
            full_band: true,
            min_pixels: default_min_pixels(),
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eta > 0.0) {
            return Err(format!("eta must be positive, got {}", self.eta));
        }
        if self.box_time == 0 || self.box_freq == 0 {
            return Err("box dimensions must be at least 1".into());
        }
        Ok(())
    }

    /// Patch shape `(rows, cols)` for a spectrogram with `n_freq` rows.
    pub fn patch_shape(&self, n_freq: usize) -> (usize, usize) {
        if self.full_band {
            (n_freq, self.box_time)
        } else {
            (self.box_freq, self.box_time)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyllableEvent {
    /// `(freq_row, time_col)` cells, sorted.
    pub pixels: Vec<(usize, usize)>,
    pub t_start: usize,
    pub t_end: usize,
    pub f_low: usize,
    pub f_high: usize,
    /// Energy centroid as `(time, freq)`.
    pub centroid: (f64, f64),
    /// Spectrogram coordinates `(freq_row, time_col)` of the patch's
    /// top-left cell; may be negative when the window overhangs the edge.
    pub origin: (isize, isize),
    pub patch: Array2<f64>,
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// 8-connected components of a boolean mask, each as a sorted pixel list.
/// Components are returned in order of their first pixel in column-major
/// scan order.
pub fn connected_components(mask: &Array2<bool>) -> Vec<Vec<(usize, usize)>> {
    let (rows, cols) = mask.dim();
    let mut seen = Array2::<bool>::from_elem((rows, cols), false);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for c in 0..cols {
        for r in 0..rows {
            if !mask[[r, c]] || seen[[r, c]] {
                continue;
            }
            let mut comp = Vec::new();
            seen[[r, c]] = true;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                comp.push((pr, pc));
                for (dr, dc) in NEIGHBOURS {
                    let nr = pr as isize + dr;
                    let nc = pc as isize + dc;
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if mask[[nr, nc]] && !seen[[nr, nc]] {
                        seen[[nr, nc]] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
    }
    out
}

/// Finds syllable events in `spec` and renders their patches.
pub fn detect_events(spec: &Spectrogram, cfg: &DetectionConfig) -> Vec<SyllableEvent> {
    let above = spec.above_floor();
    let mask = above.mapv(|v| v >= cfg.eta);
    let mut events: Vec<SyllableEvent> = connected_components(&mask)
        .into_iter()
        .filter(|c| c.len() >= cfg.min_pixels)
        .map(|pixels| event_from_pixels(&above, pixels, cfg))
        .collect();
    events.sort_by_key(|e| (e.t_start, e.f_low));
    events
}

fn event_from_pixels(above: &Array2<f64>, pixels: Vec<(usize, usize)>, cfg: &DetectionConfig) -> SyllableEvent {
    let mut t_start = usize::MAX;
    let mut t_end = 0;
    let mut f_low = usize::MAX;
    let mut f_high = 0;
    let (mut wt, mut wf, mut w) = (0.0, 0.0, 0.0);
    for &(r, c) in &pixels {
        t_start = t_start.min(c);
        t_end = t_end.max(c);
        f_low = f_low.min(r);
        f_high = f_high.max(r);
        let e = above[[r, c]];
        wt += e * c as f64;
        wf += e * r as f64;
        w += e;
    }
    let centroid = if w > 0.0 {
        (wt / w, wf / w)
    } else {
        let n = pixels.len() as f64;
        (
            pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n,
            pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n,
        )
    };
    let mut ev = SyllableEvent {
        pixels,
        t_start,
        t_end,
        f_low,
        f_high,
        centroid,
        origin: (0, 0),
        patch: Array2::zeros((0, 0)),
    };
    let (origin, patch) = render_patch(above, &ev, cfg);
    ev.origin = origin;
    ev.patch = patch;
    ev
}

/// Patch window origin `(row, col)` for an event with the given centroid.
pub fn patch_origin(centroid: (f64, f64), cfg: &DetectionConfig) -> (isize, isize) {
    let ct = centroid.0.round() as isize;
    let col0 = ct - (cfg.box_time / 2) as isize;
    let row0 = if cfg.full_band {
        0
    } else {
        centroid.1.round() as isize - (cfg.box_freq / 2) as isize
    };
    (row0, col0)
}

fn render_patch(above: &Array2<f64>, ev: &SyllableEvent, cfg: &DetectionConfig) -> ((isize, isize), Array2<f64>) {
    let (rows, cols) = cfg.patch_shape(above.nrows());
    let origin = patch_origin(ev.centroid, cfg);
    let mut patch = Array2::<f64>::zeros((rows, cols));
    for &(r, c) in &ev.pixels {
        let pr = r as isize - origin.0;
        let pc = c as isize - origin.1;
        if pr >= 0 && pc >= 0 && (pr as usize) < rows && (pc as usize) < cols {
            patch[[pr as usize, pc as usize]] = above[[r, c]];
        }
    }
    (origin, patch)
}

/// Re-renders an event's patch from `spec`; masked values only, zero
/// elsewhere, truncated symmetrically about the centroid.
pub fn extract_patch(spec: &Spectrogram, ev: &SyllableEvent, cfg: &DetectionConfig) -> Array2<f64> {
    render_patch(&spec.above_floor(), ev, cfg).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FreqScale;

    fn spec_from(above: Array2<f64>) -> Spectrogram {
        let n = above.nrows();
        Spectrogram::from_above_floor(&above, 0.004, (0..n).map(|i| 100.0 * (i + 1) as f64).collect(), FreqScale::Linear, -80.0)
    }

    fn boxed(bt: usize, bf: usize) -> DetectionConfig {
        DetectionConfig {
            eta: 10.0,
            box_time: bt,
            box_freq: bf,
            full_band: false,
            min_pixels: 1,
        }
    }

    #[test]
    fn floor_only_gives_nothing() {
        let spec = spec_from(Array2::zeros((20, 50)));
        assert!(detect_events(&spec, &DetectionConfig::default()).is_empty());
    }

    #[test]
    fn two_rectangles_two_events() {
        let mut a = Array2::zeros((20, 60));
        for r in 3..8 {
            for c in 5..15 {
                a[[r, c]] = 20.0;
            }
            for c in 16..30 {
                a[[r + 6, c]] = 20.0;
            }
        }
        let evs = detect_events(&spec_from(a), &boxed(32, 16));
        assert_eq!(evs.len(), 2);
        assert_eq!((evs[0].t_start, evs[0].t_end, evs[0].f_low, evs[0].f_high), (5, 14, 3, 7));
        assert_eq!((evs[1].t_start, evs[1].t_end, evs[1].f_low, evs[1].f_high), (16, 29, 9, 13));
    }

    #[test]
    fn diagonal_cells_connect() {
        let mut a = Array2::zeros((10, 10));
        for i in 0..6 {
            a[[i, i]] = 30.0;
        }
        let evs = detect_events(&spec_from(a), &boxed(8, 8));
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].pixels.len(), 6);
    }

    #[test]
    fn dust_is_dropped() {
        let mut a = Array2::zeros((10, 10));
        a[[2, 2]] = 30.0;
        a[[2, 3]] = 30.0;
        let cfg = DetectionConfig {
            min_pixels: 5,
            ..boxed(4, 4)
        };
        assert!(detect_events(&spec_from(a), &cfg).is_empty());
    }

    #[test]
    fn single_pixel_lands_at_box_centre() {
        let mut a = Array2::zeros((40, 40));
        a[[17, 21]] = 25.0;
        for (bt, bf) in [(10, 8), (11, 7), (1, 1)] {
            let evs = detect_events(&spec_from(a.clone()), &boxed(bt, bf));
            let p = &evs[0].patch;
            assert_eq!(p.dim(), (bf, bt));
            assert_eq!(p[[bf / 2, bt / 2]], 25.0);
            assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn box_sized_event_needs_no_padding() {
        let mut a = Array2::zeros((30, 30));
        for r in 10..16 {
            for c in 5..13 {
                a[[r, c]] = 12.0 + (r * 3 + c) as f64;
            }
        }
        let spec = spec_from(a.clone());
        let ev = &detect_events(&spec, &boxed(8, 6))[0];
        assert!(ev.patch.iter().all(|&v| v > 0.0));
        assert_eq!(ev.patch, extract_patch(&spec, ev, &boxed(8, 6)));
    }

    #[test]
    fn full_band_patch_keeps_rows() {
        let mut a = Array2::zeros((12, 40));
        for c in 10..20 {
            a[[4, c]] = 20.0;
        }
        let cfg = DetectionConfig {
            full_band: true,
            ..boxed(16, 3)
        };
        let ev = &detect_events(&spec_from(a), &cfg)[0];
        assert_eq!(ev.patch.dim(), (12, 16));
        assert_eq!(ev.origin.0, 0);
        assert_eq!(ev.patch.row(4).iter().filter(|&&v| v == 20.0).count(), 10);
    }
}
