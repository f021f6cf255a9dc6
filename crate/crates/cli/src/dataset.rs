//! Dataset layout: `<audio_root>/<individual>/**/<name>.{wav,spg}` with
//! ground truth at `<annotation_root>/<individual>/**/<name>.csv` or
//! `<name>.wav.csv` (columns `onset_s`, `offset_s`, `label`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use syllable_core::config::stable_seed;
use syllable_core::evaluation::GroundTruthEvent;
use syllable_core::frontend::{compute_spectrogram, load_audio, Spectrogram, StftConfig};
use syllable_core::spg::read_spg;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingEntry {
    /// `<individual>/<path below it without extension>`.
    pub id: String,
    pub individual: String,
    pub audio: PathBuf,
    pub truth: Option<PathBuf>,
    pub duration_s: f64,
}

fn is_audio(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("wav" | "spg"))
}

fn probe_duration(path: &Path) -> Result<f64> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => {
            let r = hound::WavReader::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok(r.duration() as f64 / r.spec().sample_rate as f64)
        }
        _ => Ok(read_spg(path).map_err(|e| CliError::Data(e.to_string()))?.duration_secs()),
    }
}

/// Every recording below `audio_root`, sorted by id.
pub fn discover(audio_root: &Path, annotation_root: Option<&Path>) -> Result<Vec<RecordingEntry>> {
    if !audio_root.is_dir() {
        return Err(CliError::Data(format!("{}: audio directory not found", audio_root.display())));
    }
    let ann_root = annotation_root.unwrap_or(audio_root);
    let mut out = Vec::new();
    for entry in WalkDir::new(audio_root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Data(format!("{}: {e}", audio_root.display())))?;
        let path = entry.path();
        if !entry.file_type().is_file() || !is_audio(path) {
            continue;
        }
        let rel = path.strip_prefix(audio_root).expect("walk stays below root");
        if rel.components().count() < 2 {
            continue;
        }
        let individual = rel.components().next().expect("two components").as_os_str().to_string_lossy().into_owned();
        let stem_rel = rel.with_extension("");
        let id = stem_rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let file_name = rel.file_name().expect("file").to_string_lossy().into_owned();
        let candidates = [
            ann_root.join(&stem_rel).with_extension("csv"),
            ann_root.join(rel.with_file_name(format!("{file_name}.csv"))),
        ];
        let truth = candidates.into_iter().find(|p| p.is_file() && p != path);
        out.push(RecordingEntry {
            id,
            individual,
            audio: path.to_path_buf(),
            truth,
            duration_s: probe_duration(path)?,
        });
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no .wav or .spg recordings found", audio_root.display())));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn load_spectrogram(path: &Path, stft: &StftConfig) -> Result<Spectrogram> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("spg") => read_spg(path).map_err(|e| CliError::Data(e.to_string())),
        _ => {
            let wave = load_audio(path).map_err(|e| CliError::Data(e.to_string()))?;
            compute_spectrogram(&wave, stft).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
    }
}

/// Reads `onset_s, offset_s, label` columns (other columns are ignored).
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthEvent>> {
    let fail = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| fail(format!("missing column {name}")))
    };
    let (on, off, lab) = (col("onset_s")?, col("offset_s")?, col("label")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| fail(e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            row.get(j)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| fail(format!("row {}: bad number in column {j}", i + 1)))
        };
        let ev = GroundTruthEvent {
            onset: num(on)?,
            offset: num(off)?,
            label: row.get(lab).unwrap_or_default().trim().to_string(),
        };
        if !(ev.onset < ev.offset) {
            return Err(fail(format!("row {}: onset must precede offset", i + 1)));
        }
        out.push(ev);
    }
    Ok(out)
}

pub fn write_ground_truth(path: &Path, events: &[GroundTruthEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(["onset_s", "offset_s", "label"]).map_err(io)?;
    for e in events {
        w.write_record([e.onset.to_string(), e.offset.to_string(), e.label.clone()]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualSplit {
    pub support: Vec<String>,
    pub query: Vec<String>,
    pub support_seconds: f64,
}

/// Support/query partition per individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportQuerySplit {
    pub seed: u64,
    pub support_minutes: f64,
    pub individuals: BTreeMap<String, IndividualSplit>,
}

/// Shuffles each individual's recordings with a seed derived from its name,
/// then adds files while they keep the support duration at most 5% over
/// the target, until it is within 5% of it.
pub fn make_split(entries: &[RecordingEntry], seed: u64, support_minutes: f64) -> Result<SupportQuerySplit> {
    let target = support_minutes * 60.0;
    let mut by_ind: BTreeMap<&str, Vec<&RecordingEntry>> = BTreeMap::new();
    for e in entries {
        by_ind.entry(&e.individual).or_default().push(e);
    }
    let mut individuals = BTreeMap::new();
    for (ind, mut recs) in by_ind {
        let total: f64 = recs.iter().map(|r| r.duration_s).sum();
        if total < 0.95 * target {
            return Err(CliError::Data(format!(
                "individual {ind}: {total:.1} s of audio cannot provide a {target:.1} s support set"
            )));
        }
        recs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, ind));
        recs.shuffle(&mut rng);
        let mut support = Vec::new();
        let mut query = Vec::new();
        let mut acc = 0.0;
        for r in recs {
            if acc < 0.95 * target && acc + r.duration_s <= 1.05 * target {
                acc += r.duration_s;
                support.push(r.id.clone());
            } else {
                query.push(r.id.clone());
            }
        }
        if (acc - target).abs() > 0.05 * target {
            log::warn!("individual {ind}: support holds {acc:.1} s, outside 5% of the {target:.1} s target");
        }
        support.sort();
        query.sort();
        individuals.insert(
            ind.to_string(),
            IndividualSplit {
                support,
                query,
                support_seconds: acc,
            },
        );
    }
    Ok(SupportQuerySplit {
        seed,
        support_minutes,
        individuals,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("plain data serialises");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(ind: &str, name: &str, dur: f64) -> RecordingEntry {
        RecordingEntry {
            id: format!("{ind}/{name}"),
            individual: ind.into(),
            audio: PathBuf::from(name),
            truth: None,
            duration_s: dur,
        }
    }

    #[test]
    fn split_is_disjoint_and_near_target() {
        let entries: Vec<_> = (0..40).map(|i| entry(if i % 2 == 0 { "a" } else { "b" }, &format!("r{i:02}"), 30.0)).collect();
        let s = make_split(&entries, 7, 5.0).unwrap();
        for split in s.individuals.values() {
            assert_eq!(split.support.len(), 10);
            assert_eq!(split.query.len(), 10);
            assert!(split.support.iter().all(|r| !split.query.contains(r)));
            assert!((split.support_seconds - 300.0).abs() <= 15.0);
        }
        assert_eq!(s, make_split(&entries, 7, 5.0).unwrap());
    }

    #[test]
    fn split_too_little_audio() {
        let entries = vec![entry("a", "x", 10.0)];
        assert!(make_split(&entries, 0, 1.0).is_err());
    }
}
