//! Evaluation report: JSON document plus a fixed-width text table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use syllable_core::config::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub individual: String,
    /// Fitting unit whose templates annotated this individual.
    pub unit: String,
    pub n_support: usize,
    pub n_query: usize,
    pub n_query_events: usize,
    pub detection_precision: Option<f64>,
    pub detection_recall: Option<f64>,
    pub micro_precision: Option<f64>,
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub n_templates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBlock {
    pub n_songs: usize,
    pub bos_edges: Vec<f64>,
    pub map: Option<f64>,
    pub k: usize,
    pub map_at_k: Option<f64>,
    /// Songs whose individual has no other query song.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fingerprint: String,
    pub mode: Mode,
    pub seed: u64,
    pub support_minutes: f64,
    pub iou_min: f64,
    pub rows: Vec<ReportRow>,
    pub retrieval: Option<RetrievalBlock>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub fn render_table(report: &Report) -> String {
    let mut s = String::new();
    let mode = match report.mode {
        Mode::Single => "single",
        Mode::Multi => "multi",
    };
    let _ = writeln!(s, "setup: {mode}   seed: {}   support: {} min   iou_min: {}", report.seed, report.support_minutes, report.iou_min);
    let _ = writeln!(
        s,
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "individual", "det_P", "det_R", "micro_P", "wtd_P", "wtd_R", "templates"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
            r.individual,
            cell(r.detection_precision),
            cell(r.detection_recall),
            cell(r.micro_precision),
            cell(r.weighted_precision),
            cell(r.weighted_recall),
            r.n_templates
        );
    }
    if let Some(b) = &report.retrieval {
        let _ = writeln!(s, "bag-of-syllables retrieval over {} songs: mAP {}  mAP@{} {}", b.n_songs, cell(b.map), b.k, cell(b.map_at_k));
        if !b.skipped.is_empty() {
            let _ = writeln!(s, "skipped queries without a same-individual match: {}", b.skipped.join(", "));
        }
    }
    s
}
