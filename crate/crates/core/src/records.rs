//! Per-detection annotation records and their CSV / JSON-lines forms.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::Spectrogram;
use crate::pursuit::AnnotationSequence;
use crate::templates::{TemplateId, TemplateSet};

pub const CSV_HEADER: &str = "recording_id,onset_s,offset_s,low_hz,high_hz,template_id,score";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error on line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("unexpected header {found:?}")]
    Header { found: String },
    #[error("detection references unknown template {0}")]
    UnknownTemplate(TemplateId),
    #[error("detection at column {t} row {f} falls outside the spectrogram")]
    OutOfRange { t: usize, f: usize },
}

/// One detection in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub recording_id: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub template_id: TemplateId,
    pub score: f64,
}

impl AnnotationRecord {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.onset_s + self.offset_s)
    }

    pub fn centre_hz(&self) -> f64 {
        0.5 * (self.low_hz + self.high_hz)
    }
}

/// Maps each placement to the time/frequency extent of its template's
/// active cells. Column `c` starts at `c · time_step` seconds.
pub fn to_records(seq: &AnnotationSequence, ts: &TemplateSet, spec: &Spectrogram) -> Result<Vec<AnnotationRecord>, RecordError> {
    seq.detections
        .iter()
        .map(|d| {
            let t = ts.get(d.template_id).ok_or(RecordError::UnknownTemplate(d.template_id))?;
            let ext = t.active_extent().ok_or(RecordError::UnknownTemplate(d.template_id))?;
            let (rows, cols) = t.shape();
            if d.f + rows > spec.n_freq() || d.t + cols > spec.n_time() {
                return Err(RecordError::OutOfRange { t: d.t, f: d.f });
            }
            Ok(AnnotationRecord {
                recording_id: seq.recording_id.clone(),
                onset_s: (d.t + ext.first_col) as f64 * spec.time_step,
                offset_s: (d.t + ext.end_col) as f64 * spec.time_step,
                low_hz: spec.freq_axis[d.f + ext.low_row],
                high_hz: spec.freq_axis[d.f + ext.high_row],
                template_id: d.template_id,
                score: d.score,
            })
        })
        .collect()
}

/// Writes records as CSV; the header is always present.
pub fn write_csv<W: Write>(mut out: W, records: &[AnnotationRecord]) -> Result<(), RecordError> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<AnnotationRecord>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if found != CSV_HEADER {
        return Err(RecordError::Header { found });
    }
    rdr.deserialize().map(|r| r.map_err(RecordError::from)).collect()
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[AnnotationRecord]) -> Result<(), RecordError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| RecordError::Json { line: 0, source })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<AnnotationRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RecordError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<AnnotationRecord> {
        vec![
            AnnotationRecord {
                recording_id: "bird1/song, 01".into(),
                onset_s: 0.1,
                offset_s: 0.35000000000000003,
                low_hz: 1000.0,
                high_hz: 4187.5,
                template_id: 3,
                score: 1234.5678,
            },
            AnnotationRecord {
                recording_id: "bird1/song, 01".into(),
                onset_s: 1.0 / 3.0,
                offset_s: 2.0,
                low_hz: 0.0,
                high_hz: 1e-7,
                template_id: 0,
                score: f64::MIN_POSITIVE,
            },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample()).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn empty_csv_has_header() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(read_csv(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &sample()).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(matches!(read_csv("a,b\n1,2\n".as_bytes()), Err(RecordError::Header { .. })));
    }
}
