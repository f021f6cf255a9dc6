//! SVG overlay: the spectrogram as an embedded PNG raster with one outlined
//! rectangle per detection, coloured by template id.

use std::fmt::Write as _;

use base64::Engine;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use syllable_core::frontend::Spectrogram;
use syllable_core::records::AnnotationRecord;

use crate::error::{CliError, Result};

const TAB10: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn template_color(id: u32) -> String {
    if let Some(c) = TAB10.get(id as usize) {
        return c.to_string();
    }
    let hue = (id as f64 * 137.507_764) % 360.0;
    format!("hsl({hue:.1},70%,50%)")
}

/// Pixel mapping from spectrogram coordinates to the document.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub n_freq: usize,
    pub n_time: usize,
    pub time_step: f64,
    pub freq_axis: Vec<f64>,
    pub px_per_col: f64,
    pub px_per_row: f64,
    pub margin_left: f64,
    pub margin_top: f64,
    pub legend_width: f64,
}

impl Geometry {
    pub fn for_spectrogram(spec: &Spectrogram) -> Self {
        Self {
            n_freq: spec.n_freq(),
            n_time: spec.n_time(),
            time_step: spec.time_step,
            freq_axis: spec.freq_axis.clone(),
            px_per_col: 1.0,
            px_per_row: (256 / spec.n_freq()).max(1) as f64,
            margin_left: 10.0,
            margin_top: 10.0,
            legend_width: 120.0,
        }
    }

    pub fn plot_width(&self) -> f64 {
        self.n_time as f64 * self.px_per_col
    }

    pub fn plot_height(&self) -> f64 {
        self.n_freq as f64 * self.px_per_row
    }

    /// Horizontal position of a time in seconds.
    pub fn x(&self, seconds: f64) -> f64 {
        self.margin_left + seconds / self.time_step * self.px_per_col
    }

    /// Fractional row of a frequency, interpolating along the axis.
    pub fn row_of(&self, hz: f64) -> Option<f64> {
        let a = &self.freq_axis;
        let (first, last) = (*a.first()?, *a.last()?);
        if hz < first || hz > last {
            return None;
        }
        if a.len() == 1 {
            return Some(0.0);
        }
        let i = a.partition_point(|&f| f <= hz).clamp(1, a.len() - 1);
        Some((i - 1) as f64 + (hz - a[i - 1]) / (a[i] - a[i - 1]))
    }

    /// Top edge of a (fractional) row; row 0 sits at the bottom.
    pub fn y_top(&self, row: f64) -> f64 {
        self.margin_top + (self.n_freq as f64 - 1.0 - row) * self.px_per_row
    }

    /// `(x, y, width, height)` of the box drawn for a record.
    pub fn rect(&self, r: &AnnotationRecord) -> Result<(f64, f64, f64, f64)> {
        let duration = self.n_time as f64 * self.time_step;
        let eps = 1e-9 * duration.max(1.0);
        if r.onset_s < -eps || r.offset_s > duration + eps || r.offset_s < r.onset_s {
            return Err(CliError::Data(format!(
                "detection [{}, {}] s lies outside the {duration} s spectrogram",
                r.onset_s, r.offset_s
            )));
        }
        let (lo, hi) = match (self.row_of(r.low_hz), self.row_of(r.high_hz)) {
            (Some(lo), Some(hi)) if hi >= lo => (lo, hi),
            _ => {
                return Err(CliError::Data(format!(
                    "detection band [{}, {}] Hz lies outside the frequency axis",
                    r.low_hz, r.high_hz
                )))
            }
        };
        let x0 = self.x(r.onset_s);
        let y0 = self.y_top(hi);
        Ok((x0, y0, self.x(r.offset_s) - x0, self.y_top(lo) + self.px_per_row - y0))
    }
}

fn raster_png(spec: &Spectrogram) -> Vec<u8> {
    let (rows, cols) = spec.values.dim();
    let floor = spec.db_floor;
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        for c in 0..cols {
            let v = ((spec.values[[r, c]] - floor) / -floor).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
    }
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&pixels, cols as u32, rows as u32, ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    out
}

pub fn render_svg(spec: &Spectrogram, records: &[AnnotationRecord]) -> Result<String> {
    let g = Geometry::for_spectrogram(spec);
    let rects = records.iter().map(|r| g.rect(r)).collect::<Result<Vec<_>>>()?;
    let width = g.margin_left * 2.0 + g.plot_width() + g.legend_width;
    let height = g.margin_top * 2.0 + g.plot_height();
    let png = base64::engine::general_purpose::STANDARD.encode(raster_png(spec));

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<image x="{}" y="{}" width="{}" height="{}" preserveAspectRatio="none" style="image-rendering:pixelated" href="data:image/png;base64,{png}"/>"#,
        g.margin_left,
        g.margin_top,
        g.plot_width(),
        g.plot_height()
    );
    let _ = writeln!(s, r#"<g id="detections" fill="none" stroke-width="1">"#);
    for (r, (x, y, w, h)) in records.iter().zip(&rects) {
        let _ = writeln!(
            s,
            r#"<rect class="detection" data-template="{}" x="{x}" y="{y}" width="{w}" height="{h}" stroke="{}"/>"#,
            r.template_id,
            template_color(r.template_id)
        );
    }
    let _ = writeln!(s, "</g>");
    let mut ids: Vec<u32> = records.iter().map(|r| r.template_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let lx = g.margin_left * 2.0 + g.plot_width();
    let _ = writeln!(s, r#"<g id="legend" font-family="sans-serif" font-size="10">"#);
    for (i, id) in ids.iter().enumerate() {
        let y = g.margin_top + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{lx}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}">template {id}</text>"#,
            template_color(*id),
            lx + 14.0,
            y + 9.0
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use syllable_core::frontend::FreqScale;

    fn spec() -> Spectrogram {
        Spectrogram {
            values: Array2::from_elem((4, 10), -80.0),
            time_step: 0.01,
            freq_axis: vec![100.0, 200.0, 300.0, 400.0],
            scale: FreqScale::Linear,
            db_floor: -80.0,
        }
    }

    #[test]
    fn empty_annotation_has_no_boxes() {
        let svg = render_svg(&spec(), &[]).unwrap();
        assert!(!svg.contains("class=\"detection\""));
        assert!(svg.contains("data:image/png;base64,"));
    }

    #[test]
    fn out_of_range_rejected() {
        let r = AnnotationRecord {
            recording_id: "x".into(),
            onset_s: 0.05,
            offset_s: 0.2,
            low_hz: 100.0,
            high_hz: 200.0,
            template_id: 0,
            score: 1.0,
        };
        assert!(render_svg(&spec(), &[r]).is_err());
    }

    #[test]
    fn colours_distinct() {
        let c: std::collections::BTreeSet<_> = (0..30).map(template_color).collect();
        assert_eq!(c.len(), 30);
    }
}
