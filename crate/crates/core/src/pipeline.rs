//! File-backed pipeline stages. Each stage reads the artifacts of earlier
//! stages from the output directory and writes its own next to them.
//!
//! ```text
//! <out>/dataset/{manifest.txt,labels.csv,records/}
//! <out>/gate.csv
//! <out>/models/{ann,svm}.model, <method>_training.csv, cv_<method>.csv, training_records.txt
//! <out>/extract/<method>.csv
//! <out>/metrics/{metrics,summary,boxplot}.csv
//! <out>/sinograms/<method>.csv, <method>_squared.csv
//! <out>/recon/<method>.{csv,pgm}, reference.{csv,pgm}
//! <out>/report/rmse.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::eval::{
    aggregate, derive_metrics, score_record, write_boxplot_csv, write_metrics_csv, write_summary_csv, MetricReport,
};
use crate::extract::{
    extract_fft, extract_gradient, extract_wavelet, read_extraction_csv, write_extraction_csv, ExtractionResult,
    Method, PacketOutcome,
};
use crate::ml::{
    cross_validate, extract_ml, labelled_features, train_ann, train_svm, write_training_log, FeatureVector, Model,
};
use crate::par::Exec;
use crate::preprocess::{detrend, gate_noise, segment_packets, GateDecision};
use crate::synth::{synth_dataset, Manifest, ScanSimulator, LABELS_FILE, MANIFEST_FILE};
use crate::tomo::{
    assemble_sinogram, make_phantom, read_image_csv, reconstruct_fbp_with, rmse, write_image_csv, write_pgm,
    write_sinogram_csv, ReconImage, SinogramMode,
};
use crate::waveform::{read_labels_csv, read_record, GroundTruthLabels, RecordId, WaveformRecord};
use crate::{Error, Result};

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dataset().join(MANIFEST_FILE)
    }
    pub fn labels(&self) -> PathBuf {
        self.dataset().join(LABELS_FILE)
    }
    pub fn gate(&self) -> PathBuf {
        self.root.join("gate.csv")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn model(&self, method: Method) -> PathBuf {
        self.models().join(format!("{method}.model"))
    }
    pub fn training_log(&self, method: Method) -> PathBuf {
        self.models().join(format!("{method}_training.csv"))
    }
    pub fn cv(&self, method: Method) -> PathBuf {
        self.models().join(format!("cv_{method}.csv"))
    }
    pub fn training_records(&self) -> PathBuf {
        self.models().join("training_records.txt")
    }
    pub fn extract(&self) -> PathBuf {
        self.root.join("extract")
    }
    pub fn extraction(&self, method: Method) -> PathBuf {
        self.extract().join(format!("{method}.csv"))
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn sinograms(&self) -> PathBuf {
        self.root.join("sinograms")
    }
    pub fn sinogram(&self, method: Method) -> PathBuf {
        self.sinograms().join(format!("{method}.csv"))
    }
    pub fn squared_sinogram(&self, method: Method) -> PathBuf {
        self.sinograms().join(format!("{method}_squared.csv"))
    }
    pub fn recon(&self) -> PathBuf {
        self.root.join("recon")
    }
    pub fn image(&self, name: &str, ext: &str) -> PathBuf {
        self.recon().join(format!("{name}.{ext}"))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report").join("rmse.csv")
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let body = || -> std::io::Result<()> {
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .collect()
}

/// `key=value` pairs describing what a stage did.
pub type StageStats = Vec<(&'static str, String)>;

pub fn generate(cfg: &PipelineConfig, exec: Exec) -> Result<(Manifest, StageStats)> {
    let layout = Layout::new(&cfg.output_dir);
    let phantom = make_phantom(&cfg.geometry, &cfg.phantom)?;
    let sim = ScanSimulator::new(&phantom, &cfg.geometry, &cfg.synth, cfg.seed)?;
    let manifest = synth_dataset(&sim, &layout.dataset(), cfg.record_format.into(), exec)?;
    let packets: usize = manifest.entries.iter().map(|e| e.packet_count).sum();
    let stats = vec![
        ("records", manifest.entries.len().to_string()),
        ("packets", packets.to_string()),
    ];
    Ok((manifest, stats))
}

fn load_record(dataset: &Path, manifest: &Manifest, k: usize) -> Result<WaveformRecord> {
    let e = &manifest.entries[k];
    let rec = read_record(&dataset.join(&e.file), manifest.format)?;
    if rec.id() != e.id {
        return Err(Error::Format(format!("{} holds record {}", e.file.display(), rec.id())));
    }
    Ok(rec)
}

pub const GATE_CSV_HEADER: &str = "record_id,std_dev,threshold,is_transmission";

pub fn write_gate_csv(path: &Path, gates: &[GateDecision]) -> Result<()> {
    write_lines(
        path,
        std::iter::once(GATE_CSV_HEADER.to_string()).chain(gates.iter().map(|g| {
            format!("{},{:?},{:?},{}", g.record_id, g.std_dev, g.threshold, g.is_transmission)
        })),
    )
}

pub fn read_gate_csv(path: &Path) -> Result<Vec<GateDecision>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        out.push(GateDecision {
            record_id: c[0].parse()?,
            std_dev: c[1].parse().map_err(|_| bad("std_dev"))?,
            threshold: c[2].parse().map_err(|_| bad("threshold"))?,
            is_transmission: c[3].parse().map_err(|_| bad("is_transmission"))?,
        });
    }
    Ok(out)
}

pub fn gate(cfg: &PipelineConfig, exec: Exec) -> Result<(Vec<GateDecision>, StageStats)> {
    let layout = Layout::new(&cfg.output_dir);
    let manifest = Manifest::read(&layout.manifest())?;
    let dataset = layout.dataset();
    let gates = exec.try_map(manifest.entries.len(), |k| {
        gate_noise(&load_record(&dataset, &manifest, k)?, cfg.gate_threshold)
    })?;
    write_gate_csv(&layout.gate(), &gates)?;
    let kept = gates.iter().filter(|g| g.is_transmission).count();
    let stats = vec![
        ("records", gates.len().to_string()),
        ("transmission", kept.to_string()),
        ("noise", (gates.len() - kept).to_string()),
    ];
    Ok((gates, stats))
}

/// Seeded draw of `cfg.training_records` transmission records.
pub fn select_training_records(gates: &[GateDecision], cfg: &PipelineConfig) -> Vec<RecordId> {
    let mut ids: Vec<RecordId> = gates.iter().filter(|g| g.is_transmission).map(|g| g.record_id).collect();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00));
    ids.truncate(cfg.training_records);
    ids.sort_unstable();
    ids
}

pub fn read_training_records(path: &Path) -> Result<BTreeSet<RecordId>> {
    read_lines(path)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse())
        .collect()
}

fn labels_for(all: &BTreeMap<RecordId, Vec<crate::waveform::LabeledPeak>>, id: RecordId, len: usize) -> GroundTruthLabels {
    GroundTruthLabels {
        peaks: all.get(&id).cloned().unwrap_or_default(),
        record_len: len,
    }
}

pub const CV_CSV_HEADER: &str = "fold,tp,tn,fp,fn,accuracy,f1,recall,precision,specificity,mcc";

/// Trains every learned method in `cfg.methods` on the selected records and
/// cross-validates it on the configured slice.
pub fn train(cfg: &PipelineConfig, exec: Exec) -> Result<StageStats> {
    let layout = Layout::new(&cfg.output_dir);
    let learned: Vec<Method> = cfg.methods.iter().copied().filter(|m| m.is_learned()).collect();
    create_dir(&layout.models())?;
    let gates = read_gate_csv(&layout.gate())?;
    let chosen = select_training_records(&gates, cfg);
    write_lines(&layout.training_records(), chosen.iter().map(|id| id.to_string()))?;
    if learned.is_empty() {
        return Ok(vec![("models", "0".into())]);
    }
    let manifest = Manifest::read(&layout.manifest())?;
    let labels = read_labels_csv(&layout.labels())?;
    let dataset = layout.dataset();
    let index: BTreeMap<RecordId, usize> = manifest.entries.iter().enumerate().map(|(k, e)| (e.id, k)).collect();
    let parts = exec.try_map(chosen.len(), |j| -> Result<(Vec<FeatureVector>, Vec<u8>)> {
        let id = chosen[j];
        let k = *index
            .get(&id)
            .ok_or_else(|| Error::Format(format!("record {id} missing from manifest")))?;
        let rec = load_record(&dataset, &manifest, k)?;
        let x = detrend(rec.samples())?;
        let mut fc = cfg.features;
        fc.sample_rate = rec.sample_rate();
        labelled_features(&x, &labels_for(&labels, id, x.len()), &fc)
    })?;
    let (mut features, mut classes) = (Vec::new(), Vec::new());
    for (f, c) in parts {
        features.extend(f);
        classes.extend(c);
    }
    let mut stats: StageStats = vec![
        ("records", chosen.len().to_string()),
        ("samples", features.len().to_string()),
        ("positives", classes.iter().filter(|&&c| c == 1).count().to_string()),
    ];
    for method in learned {
        let (model, log) = match method {
            Method::Ann => {
                let (m, log) = train_ann(&features, &classes, &cfg.train)?;
                (Model::Ann(m), log)
            }
            _ => {
                let (m, log) = train_svm(&features, &classes, &cfg.train)?;
                (Model::Svm(m), log)
            }
        };
        model.save(&layout.model(method))?;
        write_training_log(&layout.training_log(method), &log)?;
        let folds = cross_validate(&features, &classes, method, &cfg.train)?;
        let mean_f1 = folds.iter().map(|f| f.metrics.f1).sum::<f64>() / folds.len() as f64;
        write_lines(
            &layout.cv(method),
            std::iter::once(CV_CSV_HEADER.to_string()).chain(folds.iter().map(|f| {
                let m = f.metrics.values().map(|v| format!("{v:?}")).join(",");
                let c = f.counts;
                format!("{},{},{},{},{},{m}", f.fold, c.tp, c.tn, c.fp, c.fn_)
            })),
        )?;
        stats.push((
            match method {
                Method::Ann => "ann_cv_f1",
                _ => "svm_cv_f1",
            },
            format!("{mean_f1:.4}"),
        ));
    }
    Ok(stats)
}

/// Everything a single-record extraction needs besides the samples.
pub struct Extractors {
    pub cfg: PipelineConfig,
    pub models: BTreeMap<Method, Model>,
    pub window: usize,
}

impl Extractors {
    /// Loads models for learned methods in `cfg.methods` from `models_dir`.
    pub fn new(cfg: &PipelineConfig, models: &Layout) -> Result<Self> {
        let mut loaded = BTreeMap::new();
        for &m in cfg.methods.iter().filter(|m| m.is_learned()) {
            loaded.insert(m, Model::load(&models.model(m))?);
        }
        let window = cfg.synth.burst.template(cfg.synth.sample_rate)?.values.len();
        Ok(Self {
            cfg: cfg.clone(),
            models: loaded,
            window,
        })
    }

    /// Runs every configured method over one record. Preprocessing happens
    /// once; a segmentation failure is reported by every method.
    pub fn run(&self, record: &WaveformRecord) -> Vec<ExtractionResult> {
        let id = record.id();
        let methods = &self.cfg.methods;
        let fail = |e: &Error| {
            methods
                .iter()
                .map(|&m| ExtractionResult::from_outcomes(id, m, vec![(Err(Error::Format(e.to_string())), false)]))
                .collect()
        };
        let prepared = detrend(record.samples()).and_then(|x| {
            let p = segment_packets(&x, self.window, self.cfg.geometry.packet_count, &self.cfg.segment)?;
            Ok((x, p))
        });
        let (x, packets) = match prepared {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let c = &self.cfg;
        let fs = record.sample_rate();
        let f = c.geometry.signal_frequency;
        methods
            .iter()
            .map(|&m| {
                let plain = |v: Vec<PacketOutcome>| v.into_iter().map(|o| (o, false)).collect();
                let outcomes: Result<Vec<(PacketOutcome, bool)>> = match m {
                    Method::Gradient => Ok(plain(extract_gradient(&x, &packets, &c.trough))),
                    Method::Fft => extract_fft(&x, fs, f, &packets, &c.fft, &c.trough).map(plain),
                    Method::Wavelet => extract_wavelet(&x, fs, f, &packets, &c.wavelet, &c.trough).map(plain),
                    Method::Ann | Method::Svm => {
                        let mut fc = c.features;
                        fc.sample_rate = fs;
                        extract_ml(&x, &packets, &self.models[&m], &fc, &c.trough)
                    }
                };
                let outcomes = outcomes.unwrap_or_else(|e| {
                    let msg = e.to_string();
                    (0..packets.len())
                        .map(|_| (Err(Error::Format(msg.clone())), false))
                        .collect()
                });
                ExtractionResult::from_outcomes(id, m, outcomes)
            })
            .collect()
    }
}

pub fn extract(cfg: &PipelineConfig, exec: Exec) -> Result<StageStats> {
    let layout = Layout::new(&cfg.output_dir);
    let manifest = Manifest::read(&layout.manifest())?;
    let ex = Extractors::new(cfg, &layout)?;
    let dataset = layout.dataset();
    let per_record = exec.try_map(manifest.entries.len(), |k| -> Result<Vec<ExtractionResult>> {
        Ok(ex.run(&load_record(&dataset, &manifest, k)?))
    })?;
    create_dir(&layout.extract())?;
    let mut stats = vec![("records", per_record.len().to_string())];
    for (j, &m) in cfg.methods.iter().enumerate() {
        let results: Vec<ExtractionResult> = per_record.iter().map(|r| r[j].clone()).collect();
        write_extraction_csv(&layout.extraction(m), &results)?;
        let failed: usize = results.iter().map(|r| r.failures.len()).sum();
        let fallback: usize = results
            .iter()
            .map(|r| r.readings.iter().filter(|p| p.fallback).count())
            .sum();
        stats.push((m.as_str(), format!("failures:{failed}/fallbacks:{fallback}")));
    }
    Ok(stats)
}

/// Per-record metrics of every method. Learned methods skip the records
/// they were trained on.
pub fn evaluate(cfg: &PipelineConfig) -> Result<(Vec<MetricReport>, StageStats)> {
    let layout = Layout::new(&cfg.output_dir);
    let manifest = Manifest::read(&layout.manifest())?;
    let labels = read_labels_csv(&layout.labels())?;
    let training = if cfg.methods.iter().any(|m| m.is_learned()) {
        read_training_records(&layout.training_records())?
    } else {
        BTreeSet::new()
    };
    let mut reports = Vec::new();
    let mut stats = StageStats::new();
    for &m in &cfg.methods {
        let mut rows = Vec::new();
        for r in read_extraction_csv(&layout.extraction(m))? {
            if m.is_learned() && training.contains(&r.record_id) {
                continue;
            }
            let truth = labels_for(&labels, r.record_id, manifest.record_len).peak_indices();
            let scored = score_record(&r.predicted_peaks(), &truth, manifest.record_len, cfg.tolerance)?;
            rows.push((r.record_id, derive_metrics(&scored.counts)));
        }
        let report = aggregate(rows, m)?;
        let f1 = report.summary("f1").map(|s| s.mean).unwrap_or(0.0);
        stats.push((m.as_str(), format!("mean_f1:{f1:.4}")));
        reports.push(report);
    }
    let dir = layout.metrics();
    create_dir(&dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), &reports)?;
    write_summary_csv(&dir.join("summary.csv"), &reports)?;
    write_boxplot_csv(&dir.join("boxplot.csv"), &reports)?;
    Ok((reports, stats))
}

pub const REFERENCE_IMAGE: &str = "reference";

/// Sinograms and unit-range reconstructions of every method, plus the
/// phantom reference image.
pub fn reconstruct(cfg: &PipelineConfig, exec: Exec) -> Result<StageStats> {
    let layout = Layout::new(&cfg.output_dir);
    let manifest = Manifest::read(&layout.manifest())?;
    let gates = read_gate_csv(&layout.gate())?;
    let geometry = &cfg.geometry;
    if (manifest.rotations, manifest.translations) != (geometry.rotations, geometry.translations) {
        return Err(Error::Geometry(format!(
            "dataset is {}x{}, configuration expects {}x{}",
            manifest.rotations, manifest.translations, geometry.rotations, geometry.translations
        )));
    }
    create_dir(&layout.sinograms())?;
    create_dir(&layout.recon())?;
    let a0 = manifest.reference_peak_to_trough;
    let mut stats = StageStats::new();
    for &m in &cfg.methods {
        let results = read_extraction_csv(&layout.extraction(m))?;
        let squared = assemble_sinogram(&results, &gates, geometry, a0, SinogramMode::SquaredAmplitude)?;
        write_sinogram_csv(&layout.squared_sinogram(m), &squared)?;
        let sino = assemble_sinogram(&results, &gates, geometry, a0, SinogramMode::Attenuation)?;
        write_sinogram_csv(&layout.sinogram(m), &sino)?;
        let image = reconstruct_fbp_with(&sino, exec)?.unit_range();
        write_image_csv(&layout.image(m.as_str(), "csv"), &image)?;
        write_pgm(&layout.image(m.as_str(), "pgm"), &image)?;
        stats.push((m.as_str(), format!("valid:{}", sino.valid_count())));
    }
    let reference = make_phantom(geometry, &cfg.phantom)?.reference_image(geometry.translations)?;
    write_image_csv(&layout.image(REFERENCE_IMAGE, "csv"), &reference)?;
    write_pgm(&layout.image(REFERENCE_IMAGE, "pgm"), &reference)?;
    Ok(stats)
}

pub const RMSE_CSV_HEADER: &str = "method,rmse,zero_image_rmse";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseRow {
    pub method: Method,
    pub rmse: f64,
    pub zero_image_rmse: f64,
}

/// RMSE of each reconstruction against the reference image. Reads only the
/// image CSVs written by [`reconstruct`].
pub fn report(cfg: &PipelineConfig) -> Result<(Vec<RmseRow>, StageStats)> {
    let layout = Layout::new(&cfg.output_dir);
    let reference = read_image_csv(&layout.image(REFERENCE_IMAGE, "csv"))?;
    let zero = rmse(&ReconImage::zeros(reference.size), &reference)?;
    let rows = cfg
        .methods
        .iter()
        .map(|&m| {
            let image = read_image_csv(&layout.image(m.as_str(), "csv"))?;
            Ok(RmseRow {
                method: m,
                rmse: rmse(&image, &reference)?,
                zero_image_rmse: zero,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_lines(
        &layout.report(),
        std::iter::once(RMSE_CSV_HEADER.to_string()).chain(
            rows.iter()
                .map(|r| format!("{},{:?},{:?}", r.method, r.rmse, r.zero_image_rmse)),
        ),
    )?;
    let stats = rows.iter().map(|r| (r.method.as_str(), format!("{:.4}", r.rmse))).collect();
    Ok((rows, stats))
}

pub fn read_rmse_csv(path: &Path) -> Result<Vec<RmseRow>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        out.push(RmseRow {
            method: c[0].parse()?,
            rmse: c[1].parse().map_err(|_| bad("rmse"))?,
            zero_image_rmse: c[2].parse().map_err(|_| bad("zero_image_rmse"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Gate,
    Train,
    Extract,
    Evaluate,
    Reconstruct,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Generate,
        Stage::Gate,
        Stage::Train,
        Stage::Extract,
        Stage::Evaluate,
        Stage::Reconstruct,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Gate => "gate",
            Stage::Train => "train",
            Stage::Extract => "extract",
            Stage::Evaluate => "evaluate",
            Stage::Reconstruct => "reconstruct",
            Stage::Report => "report",
        }
    }

    pub fn run(self, cfg: &PipelineConfig, exec: Exec) -> Result<StageStats> {
        match self {
            Stage::Generate => generate(cfg, exec).map(|r| r.1),
            Stage::Gate => gate(cfg, exec).map(|r| r.1),
            Stage::Train => train(cfg, exec),
            Stage::Extract => extract(cfg, exec),
            Stage::Evaluate => evaluate(cfg).map(|r| r.1),
            Stage::Reconstruct => reconstruct(cfg, exec),
            Stage::Report => report(cfg).map(|r| r.1),
        }
    }
}

/// A failed stage and its cause.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

/// Runs every stage in order, calling `on_done` after each with its
/// statistics and wall time in seconds.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    exec: Exec,
    mut on_done: impl FnMut(Stage, &StageStats, f64),
) -> std::result::Result<(), StageError> {
    for stage in Stage::ALL {
        let t = std::time::Instant::now();
        let stats = stage.run(cfg, exec).map_err(|source| StageError {
            stage: stage.as_str(),
            source,
        })?;
        on_done(stage, &stats, t.elapsed().as_secs_f64());
    }
    Ok(())
}
