//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use syllable_core::archive::{read_archive, write_archive};
use syllable_core::config::{Mode, PipelineConfig};
use syllable_core::evaluation::{
    bag_of_syllables, log_spaced_edges, projection_2d, retrieval_map, template_occurrence_profile, GroundTruthEvent,
};
use syllable_core::frontend::Spectrogram;
use syllable_core::pipeline::{annotate, decompose_with, fit_templates, score_query, support_label_map, FitStats};
use syllable_core::records::{read_csv, write_csv, write_jsonl, AnnotationRecord};
use syllable_core::spg::write_spg;
use syllable_core::synth::{generate_corpus, truth_events, truth_records, SynthConfig};
use syllable_core::templates::{Template, TemplateSet};

use crate::dataset::{
    discover, load_ground_truth, load_spectrogram, make_split, read_json, write_ground_truth, write_json, RecordingEntry,
    SupportQuerySplit,
};
use crate::error::{CliError, Result};
use crate::plot::render_svg;
use crate::report::{render_table, Report, ReportRow, RetrievalBlock};

pub const SPLIT_FILE: &str = "split.json";
pub const FIT_STATS_FILE: &str = "fit_stats.json";
pub const ANNOTATE_FILE: &str = "annotate.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const PROJECTION_FILE: &str = "bos_projection.csv";
pub const OCCURRENCE_FILE: &str = "occurrence.csv";
pub const POOLED_UNIT: &str = "all";

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub support_minutes: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

/// Parses a TOML configuration; relative paths resolve against the file's
/// directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.paths.audio_root, &mut cfg.paths.annotation_root, &mut cfg.paths.output_root]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

impl Context {
    pub fn new(config: Option<&Path>, ov: Overrides) -> Result<Self> {
        let mut cfg = match config {
            Some(p) => load_config(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(m) = ov.mode {
            cfg.mode = m;
        }
        if let Some(m) = ov.support_minutes {
            cfg.support_minutes = m;
        }
        if let Some(o) = ov.out {
            cfg.paths.output_root = Some(o);
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let out = cfg
            .paths
            .output_root
            .clone()
            .ok_or_else(|| CliError::Usage("no output directory: pass --out or set paths.output_root".into()))?;
        Ok(Self { cfg, out })
    }

    fn audio_root(&self) -> Result<&Path> {
        self.cfg
            .paths
            .audio_root
            .as_deref()
            .ok_or_else(|| CliError::Usage("paths.audio_root is not set".into()))
    }

    fn entries(&self) -> Result<Vec<RecordingEntry>> {
        discover(self.audio_root()?, self.cfg.paths.annotation_root.as_deref())
    }

    fn unit_of<'a>(&self, individual: &'a str) -> &'a str {
        match self.cfg.mode {
            Mode::Single => individual,
            Mode::Multi => POOLED_UNIT,
        }
    }

    fn templates_dir(&self, unit: &str) -> PathBuf {
        self.out.join("templates").join(unit)
    }

    fn refined_dir(&self, unit: &str) -> PathBuf {
        self.out.join("refined").join(unit)
    }

    fn annotation_path(&self, kind: &str, id: &str, ext: &str) -> PathBuf {
        self.out.join(kind).join(format!("{id}.{ext}"))
    }
}

/// Unit name → (support ids, query ids), each sorted.
fn units(ctx: &Context, split: &SupportQuerySplit) -> BTreeMap<String, (Vec<String>, Vec<String>)> {
    let mut out: BTreeMap<String, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for (ind, s) in &split.individuals {
        let e = out.entry(ctx.unit_of(ind).to_string()).or_default();
        e.0.extend(s.support.iter().cloned());
        e.1.extend(s.query.iter().cloned());
    }
    for (s, q) in out.values_mut() {
        s.sort();
        q.sort();
    }
    out
}

fn lookup<'a>(entries: &'a BTreeMap<String, RecordingEntry>, id: &str) -> Result<&'a RecordingEntry> {
    entries
        .get(id)
        .ok_or_else(|| CliError::Data(format!("recording {id} listed in the split is missing from the audio directory")))
}

fn load_specs(ctx: &Context, entries: &BTreeMap<String, RecordingEntry>, ids: &[String]) -> Result<Vec<(String, Spectrogram)>> {
    ids.par_iter()
        .map(|id| Ok((id.clone(), load_spectrogram(&lookup(entries, id)?.audio, &ctx.cfg.stft)?)))
        .collect()
}

fn entry_map(entries: Vec<RecordingEntry>) -> BTreeMap<String, RecordingEntry> {
    entries.into_iter().map(|e| (e.id.clone(), e)).collect()
}

fn write_records(path_csv: &Path, path_jsonl: &Path, records: &[AnnotationRecord]) -> Result<()> {
    for p in [path_csv, path_jsonl] {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    let mut csv_bytes = Vec::new();
    write_csv(&mut csv_bytes, records).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path_csv, csv_bytes).map_err(|e| CliError::io(path_csv, e))?;
    let mut json_bytes = Vec::new();
    write_jsonl(&mut json_bytes, records).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path_jsonl, json_bytes).map_err(|e| CliError::io(path_jsonl, e))
}

fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub individuals: usize,
    pub recordings: usize,
    pub variation: f64,
}

/// Writes a synthetic corpus in the dataset layout plus a matching config.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.individuals == 0 || args.recordings == 0 {
        return Err(CliError::Usage("--individuals and --recordings must be positive".into()));
    }
    let scfg = SynthConfig {
        seed: args.seed,
        individual_variation: args.variation,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&scfg, args.individuals, args.recordings).map_err(|e| CliError::Data(e.to_string()))?;
    let out = &args.out;
    for rec in &corpus.recordings {
        let id = rec.id();
        let audio = out.join("audio").join(format!("{id}.spg"));
        let gt = out.join("annotations").join(format!("{id}.csv"));
        let truth = out.join("truth").join(format!("{id}.csv"));
        for p in [&audio, &gt, &truth] {
            let parent = p.parent().expect("nested path");
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_spg(&audio, &rec.truth.spectrogram).map_err(|e| CliError::Data(e.to_string()))?;
        write_ground_truth(&gt, &truth_events(&rec.truth))?;
        let mut bytes = Vec::new();
        write_csv(&mut bytes, &truth_records(&rec.truth, &id)).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(&truth, bytes).map_err(|e| CliError::io(&truth, e))?;
    }
    let mut cfg = PipelineConfig {
        seed: args.seed,
        detect: scfg.detect.clone(),
        ..PipelineConfig::default()
    };
    let support_s = (args.recordings as f64 * scfg.n_time as f64 * scfg.time_step * 0.4).max(scfg.n_time as f64 * scfg.time_step);
    cfg.support_minutes = support_s / 60.0;
    cfg.mode = if args.individuals > 1 { Mode::Multi } else { Mode::Single };
    cfg.paths.audio_root = Some("audio".into());
    cfg.paths.annotation_root = Some("annotations".into());
    cfg.paths.output_root = Some("run".into());
    let mut prototypes = TemplateSet::default();
    for (k, r) in corpus.bank.references.iter().enumerate() {
        prototypes.templates.push(Template::new(k as u32, r.clone(), 0));
        prototypes.provenance.insert(k as u32, vec![]);
    }
    write_archive(&out.join("prototypes"), &prototypes, &cfg.fingerprint(), scfg.detect.full_band)?;
    let toml = toml::to_string(&cfg).map_err(|e| CliError::Invariant(e.to_string()))?;
    let path = out.join("config.toml");
    fs::write(&path, toml).map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

// ---------------------------------------------------------------- fit

pub fn cmd_fit(ctx: &Context) -> Result<BTreeMap<String, FitStats>> {
    let entries = ctx.entries()?;
    let split = make_split(&entries, ctx.cfg.seed, ctx.cfg.support_minutes)?;
    write_json(&ctx.out.join(SPLIT_FILE), &split)?;
    let entries = entry_map(entries);
    let fingerprint = ctx.cfg.fingerprint();
    let mut stats = BTreeMap::new();
    for (unit, (support, _)) in units(ctx, &split) {
        let specs = load_specs(ctx, &entries, &support)?;
        let refs: Vec<&Spectrogram> = specs.iter().map(|(_, s)| s).collect();
        let (ts, st) = fit_templates(&refs, &ctx.cfg).map_err(|e| CliError::from(e).with_unit(&unit))?;
        write_archive(&ctx.templates_dir(&unit), &ts, &fingerprint, ctx.cfg.detect.full_band)?;
        log::info!("{unit}: {} events, {} templates", st.n_events, st.n_templates);
        stats.insert(unit, st);
    }
    write_json(&ctx.out.join(FIT_STATS_FILE), &stats)?;
    Ok(stats)
}

impl CliError {
    fn with_unit(self, unit: &str) -> Self {
        match self {
            CliError::Data(m) => CliError::Data(format!("unit {unit}: {m}")),
            CliError::Invariant(m) => CliError::Invariant(format!("unit {unit}: {m}")),
            other => other,
        }
    }
}

// ---------------------------------------------------------------- annotate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAnnotation {
    pub rounds: usize,
    pub stopped_early: Option<String>,
    pub n_templates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateMeta {
    pub fingerprint: String,
    pub units: BTreeMap<String, UnitAnnotation>,
}

/// Refines each unit's templates on its query recordings and writes one
/// annotation file per query and support recording.
pub fn cmd_annotate(ctx: &Context) -> Result<AnnotateMeta> {
    let split: SupportQuerySplit = read_json(&ctx.out.join(SPLIT_FILE))?;
    let entries = entry_map(ctx.entries()?);
    let fingerprint = ctx.cfg.fingerprint();
    let mut meta = AnnotateMeta {
        fingerprint: fingerprint.clone(),
        units: BTreeMap::new(),
    };
    for (unit, (support, query)) in units(ctx, &split) {
        let (ts, _) = read_archive(&ctx.templates_dir(&unit), Some(&fingerprint))?;
        let specs = load_specs(ctx, &entries, &query)?;
        let inputs: Vec<(String, &Spectrogram)> = specs.iter().map(|(id, s)| (id.clone(), s)).collect();
        let out = annotate(&inputs, &ts, &ctx.cfg).map_err(|e| CliError::from(e).with_unit(&unit))?;
        if let Some(note) = &out.stopped_early {
            log::warn!("{unit}: {note}");
        }
        for ((id, _), recs) in specs.iter().zip(&out.records) {
            write_records(
                &ctx.annotation_path("annotations", id, "csv"),
                &ctx.annotation_path("annotations", id, "jsonl"),
                recs,
            )?;
        }
        drop(specs);
        write_archive(&ctx.refined_dir(&unit), &out.templates, &fingerprint, ctx.cfg.detect.full_band)?;
        let specs = load_specs(ctx, &entries, &support)?;
        let inputs: Vec<(String, &Spectrogram)> = specs.iter().map(|(id, s)| (id.clone(), s)).collect();
        let support_records = decompose_with(&inputs, &out.templates, &ctx.cfg).map_err(|e| CliError::from(e).with_unit(&unit))?;
        for ((id, _), recs) in specs.iter().zip(&support_records) {
            write_records(
                &ctx.annotation_path("support_annotations", id, "csv"),
                &ctx.annotation_path("support_annotations", id, "jsonl"),
                recs,
            )?;
        }
        meta.units.insert(
            unit,
            UnitAnnotation {
                rounds: out.rounds,
                stopped_early: out.stopped_early,
                n_templates: out.templates.len(),
            },
        );
    }
    write_json(&ctx.out.join(ANNOTATE_FILE), &meta)?;
    Ok(meta)
}

/// Annotates explicit recordings with a stored archive (one greedy pass,
/// no refinement), writing `<out>/<stem>.csv` and `.jsonl`.
pub fn cmd_annotate_files(ctx: &Context, archive: &Path, recordings: &[PathBuf]) -> Result<()> {
    let (ts, _) = read_archive(archive, Some(&ctx.cfg.fingerprint()))?;
    let specs: Vec<(String, Spectrogram)> = recordings
        .par_iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((stem, load_spectrogram(p, &ctx.cfg.stft)?))
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<(String, &Spectrogram)> = specs.iter().map(|(id, s)| (id.clone(), s)).collect();
    let records = decompose_with(&inputs, &ts, &ctx.cfg)?;
    for ((id, _), recs) in specs.iter().zip(&records) {
        write_records(&ctx.out.join(format!("{id}.csv")), &ctx.out.join(format!("{id}.jsonl")), recs)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

fn ground_truth(entries: &BTreeMap<String, RecordingEntry>, id: &str) -> Result<Vec<GroundTruthEvent>> {
    let e = lookup(entries, id)?;
    let path = e
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("recording {id} has no ground-truth annotation file")))?;
    load_ground_truth(path)
}

pub fn cmd_eval(ctx: &Context) -> Result<Report> {
    let split: SupportQuerySplit = read_json(&ctx.out.join(SPLIT_FILE))?;
    let meta: AnnotateMeta = read_json(&ctx.out.join(ANNOTATE_FILE))?;
    let fingerprint = ctx.cfg.fingerprint();
    if meta.fingerprint != fingerprint {
        return Err(CliError::Data(format!(
            "annotations were produced with fingerprint {} but the configuration has {fingerprint}",
            meta.fingerprint
        )));
    }
    let entries = entry_map(ctx.entries()?);
    let iou = ctx.cfg.eval.iou_min;
    let mut rows = Vec::new();
    let mut query_records: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    let mut unit_templates = BTreeMap::new();
    for (unit, (support, _)) in units(ctx, &split) {
        let (ts, _) = read_archive(&ctx.refined_dir(&unit), Some(&fingerprint))?;
        let sup_recs = support
            .iter()
            .map(|id| read_records(&ctx.annotation_path("support_annotations", id, "csv")))
            .collect::<Result<Vec<_>>>()?;
        let sup_gt = support.iter().map(|id| ground_truth(&entries, id)).collect::<Result<Vec<_>>>()?;
        let pairs: Vec<_> = sup_recs.iter().zip(&sup_gt).map(|(r, g)| (r.as_slice(), g.as_slice())).collect();
        let map = support_label_map(&pairs, &ts);
        for (ind, s) in split.individuals.iter().filter(|(ind, _)| ctx.unit_of(ind) == unit) {
            let q_recs = s
                .query
                .iter()
                .map(|id| read_records(&ctx.annotation_path("annotations", id, "csv")))
                .collect::<Result<Vec<_>>>()?;
            let q_gt = s.query.iter().map(|id| ground_truth(&entries, id)).collect::<Result<Vec<_>>>()?;
            let pairs: Vec<_> = q_recs.iter().zip(&q_gt).map(|(r, g)| (r.as_slice(), g.as_slice())).collect();
            let scores = score_query(&pairs, &map, ts.len(), iou);
            rows.push(ReportRow {
                individual: ind.clone(),
                unit: unit.clone(),
                n_support: s.support.len(),
                n_query: s.query.len(),
                n_query_events: q_gt.iter().map(Vec::len).sum(),
                detection_precision: scores.detection.precision,
                detection_recall: scores.detection.recall,
                micro_precision: scores.classification.micro_precision,
                weighted_precision: scores.classification.weighted_precision,
                weighted_recall: scores.classification.weighted_recall,
                n_templates: ts.len(),
            });
            for (id, r) in s.query.iter().zip(q_recs) {
                query_records.insert(id.clone(), r);
            }
        }
        unit_templates.insert(unit, ts.len());
    }

    let retrieval = if ctx.cfg.mode == Mode::Multi {
        Some(retrieval_block(ctx, &split, &entries, &query_records, unit_templates[POOLED_UNIT])?)
    } else {
        None
    };
    let report = Report {
        fingerprint,
        mode: ctx.cfg.mode,
        seed: split.seed,
        support_minutes: split.support_minutes,
        iou_min: iou,
        rows,
        retrieval,
    };
    write_json(&ctx.out.join(REPORT_JSON), &report)?;
    let path = ctx.out.join(REPORT_TXT);
    fs::write(&path, render_table(&report)).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}

fn retrieval_block(
    ctx: &Context,
    split: &SupportQuerySplit,
    entries: &BTreeMap<String, RecordingEntry>,
    query_records: &BTreeMap<String, Vec<AnnotationRecord>>,
    n_templates: usize,
) -> Result<RetrievalBlock> {
    let edges = match &ctx.cfg.eval.bos_edges {
        Some(e) => e.clone(),
        None => {
            let first = query_records
                .keys()
                .next()
                .ok_or_else(|| CliError::Data("no query recordings to embed".into()))?;
            let axis = load_spectrogram(&lookup(entries, first)?.audio, &ctx.cfg.stft)?.freq_axis;
            log_spaced_edges(axis[0].max(1.0), *axis.last().expect("non-empty axis"), ctx.cfg.eval.bos_bins)
        }
    };
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    let mut usage: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (ind, s) in &split.individuals {
        usage.entry(ind.clone()).or_default();
        for id in &s.query {
            let recs = &query_records[id];
            let bos = bag_of_syllables(recs, n_templates, &edges).map_err(|e| CliError::Data(format!("{id}: {e}")))?;
            vectors.push(bos.as_f64());
            labels.push(ind.clone());
            ids.push(id.clone());
            usage.get_mut(ind).expect("inserted").extend(recs.iter().map(|r| r.template_id));
        }
    }
    let k = ctx.cfg.eval.map_k;
    let full = retrieval_map(&vectors, &labels, None).map_err(|e| CliError::Invariant(e.to_string()))?;
    let at_k = retrieval_map(&vectors, &labels, Some(k)).map_err(|e| CliError::Invariant(e.to_string()))?;

    let coords = projection_2d(&vectors);
    let mut csv = String::from("recording_id,individual,pc1,pc2\n");
    for (i, id) in ids.iter().enumerate() {
        csv.push_str(&format!("{id},{},{},{}\n", labels[i], coords[[i, 0]], coords[[i, 1]]));
    }
    let path = ctx.out.join(PROJECTION_FILE);
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;

    let profile = template_occurrence_profile(&usage, n_templates).map_err(|e| CliError::Data(e.to_string()))?;
    let mut csv = String::from("individual");
    for t in 0..n_templates {
        csv.push_str(&format!(",t{t}"));
    }
    csv.push('\n');
    for (i, ind) in profile.individuals.iter().enumerate() {
        csv.push_str(ind);
        for t in 0..n_templates {
            csv.push_str(&format!(",{}", profile.matrix[[i, t]]));
        }
        csv.push('\n');
    }
    let path = ctx.out.join(OCCURRENCE_FILE);
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;

    Ok(RetrievalBlock {
        n_songs: vectors.len(),
        bos_edges: edges,
        map: full.map,
        k,
        map_at_k: at_k.map,
        skipped: full.skipped.iter().map(|&i| ids[i].clone()).collect(),
    })
}

// ---------------------------------------------------------------- plot

/// Renders `<out>/<recording stem>.svg`.
pub fn cmd_plot(ctx: &Context, recording: &Path, annotation: &Path) -> Result<PathBuf> {
    let spec = load_spectrogram(recording, &ctx.cfg.stft)?;
    let records = read_records(annotation)?;
    let svg = render_svg(&spec, &records)?;
    fs::create_dir_all(&ctx.out).map_err(|e| CliError::io(&ctx.out, e))?;
    let stem = recording.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    let path = ctx.out.join(format!("{stem}.svg"));
    fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
