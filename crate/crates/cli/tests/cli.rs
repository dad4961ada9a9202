use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uct_core::extract::read_extraction_csv;
use uct_core::synth::ScanSimulator;
use uct_core::tomo::{make_phantom, Materials};
use uct_core::waveform::{write_record, Format, RecordId, ScanGeometry};

fn uct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uct")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small scan so the whole pipeline runs in seconds.
fn small(out: &Path) -> Vec<String> {
    [
        format!("output_dir={}", out.display()),
        "geometry.rotations=6".into(),
        "geometry.translations=8".into(),
        "training_records=6".into(),
        "train.epochs=3".into(),
        "record_format=\"text\"".into(),
    ]
    .into_iter()
    .flat_map(|kv| ["--set".to_string(), kv])
    .collect()
}

fn run_with(cmd: &str, sets: &[String]) -> Output {
    let mut args = vec![cmd];
    args.extend(sets.iter().map(String::as_str));
    uct(&args)
}

fn csv_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else if p.extension().is_some_and(|x| x == "csv" || x == "pgm" || x == "model" || x == "txt") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = uct(&["pipeline", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = uct(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let o = uct(&["generate", "--set", "geometry.rotation=3"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error stage=config message="), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn missing_inputs_fail_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let o = uct(&["gate", "--set", &format!("output_dir={}", dir.path().display())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error stage=gate message="), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn config_file_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let o = uct(&["config", "--set", "tolerance=5"]);
    assert!(o.status.success());
    let path = dir.path().join("c.toml");
    fs::write(&path, &o.stdout).unwrap();
    let again = uct(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn pipeline_is_deterministic_and_report_reads_only_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(a.path(), "1"), (b.path(), "2")] {
        let mut sets = small(dir);
        sets.extend(["--workers".to_string(), workers.to_string()]);
        let o = run_with("pipeline", &sets);
        assert!(o.status.success(), "{}", stderr(&o));
        let err = stderr(&o);
        for stage in ["generate", "gate", "train", "extract", "evaluate", "reconstruct", "report"] {
            assert!(err.contains(&format!("stage={stage} status=ok seconds=")), "{err}");
        }
    }
    let (ta, tb) = (csv_tree(a.path()), csv_tree(b.path()));
    assert!(ta.len() > 30);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
    for m in ["gradient", "fft", "wavelet", "ann", "svm"] {
        assert!(a.path().join(format!("sinograms/{m}.csv")).exists());
        assert!(a.path().join(format!("recon/{m}.pgm")).exists());
    }
    let table = fs::read_to_string(a.path().join("report/rmse.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);

    // report needs nothing but the reconstructed images
    let before = table;
    fs::remove_dir_all(a.path().join("dataset")).unwrap();
    fs::remove_dir_all(a.path().join("extract")).unwrap();
    fs::remove_dir_all(a.path().join("sinograms")).unwrap();
    let o = run_with("report", &small(a.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(a.path().join("report/rmse.csv")).unwrap(), before);
}

#[test]
fn single_record_gradient_matches_labels() {
    let dir = tempfile::tempdir().unwrap();
    let geometry = ScanGeometry::default();
    let phantom = make_phantom(&geometry, &Materials::default()).unwrap();
    let cfg = uct_core::config::PipelineConfig::default();
    let sim = ScanSimulator::new(&phantom, &geometry, &cfg.synth.noiseless(), 5).unwrap();
    let out = sim.simulate(RecordId::new(3, 17)).unwrap();
    let path = dir.path().join("r.bin");
    write_record(&out.record, &path, Format::Binary).unwrap();

    let o = uct(&[
        "extract",
        "--method",
        "gradient",
        "--record",
        path.to_str().unwrap(),
        "--set",
        &format!("output_dir={}", dir.path().display()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = read_extraction_csv(&dir.path().join("extract/record_r03_t17.csv")).unwrap();
    assert_eq!(results.len(), 1);
    let readings = &results[0].readings;
    assert_eq!(readings.len(), out.labels.peaks.len());
    for (r, p) in readings.iter().zip(&out.labels.peaks) {
        assert_eq!(r.reading.peak_index, p.peak_index);
        assert_eq!(r.reading.trough_index, p.trough_index);
        assert!((r.reading.amplitude - p.true_amplitude).abs() <= 1e-6 * p.true_amplitude);
    }
}
