//! End-to-end acceptance checks on the synthetic scanner. Runs without the
//! libtest harness so that every criterion prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use uct_core::config::PipelineConfig;
use uct_core::eval::{derive_metrics, score_record, ConfusionCounts, MetricRow};
use uct_core::extract::{dwt, idwt, ExtractionResult, Method, WaveletConfig};
use uct_core::ml::{compute_features, labelled_features, train_ann, train_svm, FeatureConfig, Model};
use uct_core::par::Exec;
use uct_core::pipeline::{read_rmse_csv, run_pipeline, select_training_records, Extractors, Layout, RMSE_CSV_HEADER};
use uct_core::preprocess::{detrend, gate_noise, DEFAULT_GATE_THRESHOLD};
use uct_core::synth::{record_seed, synth_noise_record, DistortionSpec, NoiseModel, ScanSimulator, SynthConfig};
use uct_core::tomo::{forward_project, make_phantom, reconstruct_fbp, rmse, Materials, Sinogram, SinogramMode};
use uct_core::waveform::{RecordId, ScanGeometry};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn simulator(synth: &SynthConfig, seed: u64) -> ScanSimulator {
    let geometry = ScanGeometry::default();
    let phantom = make_phantom(&geometry, &Materials::default()).unwrap();
    ScanSimulator::new(&phantom, &geometry, synth, seed).unwrap()
}

fn extractors(cfg: &PipelineConfig, methods: &[Method], models: Vec<(Method, Model)>) -> Extractors {
    let mut cfg = cfg.clone();
    cfg.methods = methods.to_vec();
    Extractors {
        window: cfg.synth.burst.template(cfg.synth.sample_rate).unwrap().values.len(),
        cfg,
        models: models.into_iter().collect(),
    }
}

fn f1_of(result: &ExtractionResult, truth: &[usize], n: usize) -> f64 {
    let scored = score_record(&result.predicted_peaks(), truth, n, 3).unwrap();
    derive_metrics(&scored.counts).f1
}

fn noiseless_closure() -> Outcome {
    let start = Instant::now();
    let mut cfg = PipelineConfig::default();
    cfg.synth = cfg.synth.noiseless();
    let sim = simulator(&cfg.synth, 11);
    let methods = [Method::Gradient, Method::Fft, Method::Wavelet];
    let ex = extractors(&cfg, &methods, vec![]);
    let ids = sim.geometry.record_ids();
    // per record: (worst relative amplitude error, min F1, unread packets)
    let per_record = Exec::default().map(ids.len(), |k| {
        let out = sim.simulate(ids[k]).unwrap();
        let truth = out.labels.peak_indices();
        let mut worst = 0.0f64;
        let mut min_f1 = 1.0f64;
        let mut missing = 0usize;
        for res in ex.run(&out.record) {
            min_f1 = min_f1.min(f1_of(&res, &truth, out.record.len()));
            missing += out.labels.peaks.len().saturating_sub(res.readings.len());
            for r in &res.readings {
                match out.labels.peaks.iter().find(|p| p.peak_index == r.reading.peak_index) {
                    Some(p) => {
                        worst = worst.max((r.reading.amplitude - p.true_amplitude).abs() / p.true_amplitude)
                    }
                    None => worst = f64::INFINITY,
                }
            }
        }
        (worst, min_f1, missing)
    });
    let worst = per_record.iter().map(|r| r.0).fold(0.0, f64::max);
    let min_f1 = per_record.iter().map(|r| r.1).fold(1.0, f64::min);
    let missing: usize = per_record.iter().map(|r| r.2).sum();
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && min_f1 == 1.0 && missing == 0 && secs < 60.0,
        format!(
            "{} records x 3 methods, max rel amplitude error {worst:.2e}, min F1 {min_f1}, unread packets {missing}, {secs:.1} s",
            ids.len()
        ),
    )
}

fn noisy_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.noise = NoiseModel::SnrDb(30.0);
    cfg.synth.distortion = DistortionSpec {
        probability: 0.3,
        ..DistortionSpec::default()
    };
    cfg
}

/// Mean per-record F1 of each method over `ids`.
fn mean_f1(sim: &ScanSimulator, ex: &Extractors, ids: &[RecordId]) -> Vec<f64> {
    let per_record = Exec::default().map(ids.len(), |k| {
        let out = sim.simulate(ids[k]).unwrap();
        let truth = out.labels.peak_indices();
        ex.run(&out.record)
            .iter()
            .map(|r| f1_of(r, &truth, out.record.len()))
            .collect::<Vec<f64>>()
    });
    (0..ex.cfg.methods.len())
        .map(|j| per_record.iter().map(|r| r[j]).sum::<f64>() / ids.len() as f64)
        .collect()
}

fn noisy_robustness() -> Outcome {
    let cfg = noisy_config();
    let sim = simulator(&cfg.synth, cfg.seed);
    let ex = extractors(&cfg, &[Method::Gradient, Method::Fft, Method::Wavelet], vec![]);
    let ids = sim.geometry.record_ids();
    let f = mean_f1(&sim, &ex, &ids);
    check(
        f[0] >= 0.99 && f[1] >= 0.99 && f[2] >= 0.98,
        format!(
            "30 dB, distortion 0.3, {} records: mean F1 gradient {:.4}, fft {:.4}, wavelet {:.4}",
            ids.len(),
            f[0],
            f[1],
            f[2]
        ),
    )
}

fn ml_plausibility() -> Outcome {
    let cfg = noisy_config();
    let sim = simulator(&cfg.synth, cfg.seed);
    let ids = sim.geometry.record_ids();
    let gates = Exec::default().map(ids.len(), |k| {
        gate_noise(&sim.simulate(ids[k]).unwrap().record, cfg.gate_threshold).unwrap()
    });
    let chosen = select_training_records(&gates, &cfg);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for &id in &chosen {
        let out = sim.simulate(id).unwrap();
        let samples = detrend(out.record.samples()).unwrap();
        let (f, c) = labelled_features(&samples, &out.labels, &cfg.features).unwrap();
        x.extend(f);
        y.extend(c);
    }
    let ann = Model::Ann(train_ann(&x, &y, &cfg.train).unwrap().0);
    let svm = Model::Svm(train_svm(&x, &y, &cfg.train).unwrap().0);
    let again_ann = Model::Ann(train_ann(&x, &y, &cfg.train).unwrap().0);
    let again_svm = Model::Svm(train_svm(&x, &y, &cfg.train).unwrap().0);
    let deterministic = ann.to_text() == again_ann.to_text() && svm.to_text() == again_svm.to_text();

    let held_out: Vec<RecordId> = ids.iter().copied().filter(|id| !chosen.contains(id)).collect();
    let ex = extractors(&cfg, &[Method::Ann, Method::Svm], vec![(Method::Ann, ann), (Method::Svm, svm)]);
    let f = mean_f1(&sim, &ex, &held_out);
    check(
        f[0] >= 0.8 && f[1] >= 0.8 && deterministic,
        format!(
            "trained on {} records, {} held out: mean F1 ann {:.4}, svm {:.4}; retraining identical: {deterministic}",
            chosen.len(),
            held_out.len(),
            f[0],
            f[1]
        ),
    )
}

/// Metric definitions evaluated directly from the four counts.
fn direct_metrics(tp: f64, tn: f64, fp: f64, fn_: f64) -> [f64; 6] {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    [
        div(tp + tn, tp + tn + fp + fn_),
        div(2.0 * tp, 2.0 * tp + fp + fn_),
        recall,
        precision,
        div(tn, tn + fp),
        div(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt()),
    ]
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let scale = [10u64, 1000, 100_000][rng.random_range(0..3)];
        let c: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..=scale));
        let got = derive_metrics(&ConfusionCounts::new(c[0], c[1], c[2], c[3])).values();
        let want = direct_metrics(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    let degenerate = [(0, 0, 0, 0), (0, 5, 0, 0), (5, 0, 0, 0), (0, 0, 3, 0), (0, 0, 0, 3)];
    let mut exact_zero = true;
    for (tp, tn, fp, fn_) in degenerate {
        let got = derive_metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).values();
        let want = direct_metrics(tp as f64, tn as f64, fp as f64, fn_ as f64);
        for (g, w) in got.iter().zip(&want) {
            if *w == 0.0 && g.to_bits() != 0.0f64.to_bits() {
                exact_zero = false;
            }
        }
    }
    let zero_row = derive_metrics(&ConfusionCounts::default()) == MetricRow::from_values([0.0; 6]);
    check(
        worst <= 1e-12 && exact_zero && zero_row,
        format!("1000 random counts, max abs difference {worst:.2e}; 0/0 cases exactly 0: {}", exact_zero && zero_row),
    )
}

fn wavelet_reconstruction() -> Outcome {
    let cfg = WaveletConfig::default();
    let (mut worst_pr, mut worst_energy) = (0.0f64, 0.0f64);
    let per_signal = Exec::default().map(100, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s as u64);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..50_002).map(|_| normal.sample(&mut rng)).collect();
        let p = dwt(&x, &cfg).unwrap();
        let back = idwt(&p);
        let norm = x.iter().map(|v| v * v).sum::<f64>();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        ((err / norm).sqrt(), (p.energy() - norm).abs() / norm, back.len() == x.len())
    });
    let mut lengths_ok = true;
    for (pr, en, len) in per_signal {
        worst_pr = worst_pr.max(pr);
        worst_energy = worst_energy.max(en);
        lengths_ok &= len;
    }
    check(
        worst_pr <= 1e-8 && worst_energy <= 1e-8 && lengths_ok,
        format!("100 signals of 50002 samples: max rel reconstruction error {worst_pr:.2e}, max rel energy error {worst_energy:.2e}"),
    )
}

fn tomographic_closure() -> Outcome {
    let geometry = ScanGeometry::default();
    let phantom = make_phantom(&geometry, &Materials::default()).unwrap();
    let image = reconstruct_fbp(&forward_project(&phantom, &geometry)).unwrap().unit_range();
    let reference = phantom.reference_image(geometry.translations).unwrap();
    let err = rmse(&image, &reference).unwrap();
    let zero = reconstruct_fbp(&Sinogram::zeros(&geometry, SinogramMode::Attenuation)).unwrap();
    let zero_exact = zero.pixels.iter().all(|&v| v == 0.0);
    check(
        err <= 0.05 && zero_exact,
        format!("40x40 phantom RMSE {err:.4}; zero sinogram gives zero image: {zero_exact}"),
    )
}

fn end_to_end_rmse() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.output_dir = dir.path().to_path_buf();
    run_pipeline(&cfg, Exec::default(), |_, _, _| {}).map_err(|e| e.to_string())?;
    let path = Layout::new(&cfg.output_dir).report();
    let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap_or("").to_string();
    let rows = read_rmse_csv(&path).map_err(|e| e.to_string())?;
    let layout_ok = header == RMSE_CSV_HEADER && rows.iter().map(|r| r.method).eq(Method::ALL);
    let below = rows.iter().all(|r| r.rmse < r.zero_image_rmse);
    let table: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.method, r.rmse)).collect();
    check(
        layout_ok && below,
        format!(
            "RMSE {} vs zero image {:.4}; five-row table: {layout_ok}",
            table.join(", "),
            rows.first().map(|r| r.zero_image_rmse).unwrap_or(f64::NAN)
        ),
    )
}

fn gate_separation() -> Outcome {
    let cfg = PipelineConfig::default();
    let sim = simulator(&cfg.synth, 3);
    let ids = sim.geometry.record_ids();
    let sigma = cfg.synth.noise.sigma_for(cfg.synth.reference_amplitude);
    let decisions = Exec::default().map(ids.len(), |k| {
        let burst = sim.simulate(ids[k]).unwrap().record;
        let noise = synth_noise_record(&cfg.synth, sigma, ids[k], record_seed(99, ids[k])).unwrap();
        (
            gate_noise(&burst, DEFAULT_GATE_THRESHOLD).unwrap(),
            gate_noise(&noise, DEFAULT_GATE_THRESHOLD).unwrap(),
        )
    });
    let missed = decisions.iter().filter(|d| !d.0.is_transmission).count();
    let false_alarms = decisions.iter().filter(|d| d.1.is_transmission).count();
    let min_burst = decisions.iter().map(|d| d.0.std_dev).fold(f64::INFINITY, f64::min);
    let max_noise = decisions.iter().map(|d| d.1.std_dev).fold(0.0, f64::max);
    check(
        missed == 0 && false_alarms == 0,
        format!(
            "{} burst + {} noise records, sigma {sigma:.1e}: missed {missed}, false alarms {false_alarms}; std ranges burst >= {min_burst:.3e}, noise <= {max_noise:.3e}",
            ids.len(),
            ids.len()
        ),
    )
}

/// Brute-force evaluation of the eight features, independent of the
/// library's precomputation and FFT.
fn brute_force_features(x: &[f64], cfg: &FeatureConfig) -> Vec<[f64; 8]> {
    let n = x.len();
    let m = cfg.half_width;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let is_max = |i: usize| i > 0 && i + 1 < n && x[i] > x[i - 1] && x[i] > x[i + 1];
    let is_min = |i: usize| i > 0 && i + 1 < n && x[i] < x[i - 1] && x[i] < x[i + 1];
    let next_extremum = |i: usize| (i + 1..n).find(|&j| is_max(j) || is_min(j)).map_or(0.0, |j| x[j]);
    let raw1: Vec<f64> = (0..n).map(|i| (x[i].abs() - next_extremum(i).abs()).abs()).collect();
    let max1 = raw1.iter().cloned().fold(0.0, f64::max);
    let f1: Vec<f64> = raw1.iter().map(|v| div(*v, max1)).collect();
    let total: f64 = x.iter().map(|v| v.abs()).sum();

    // mel filterbank and first cepstral coefficient via a direct DFT
    let fl = cfg.mfcc.frame_len;
    let fs = cfg.sample_rate;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let filters = cfg.mfcc.filters;
    let edges: Vec<f64> = (0..filters + 2)
        .map(|k| hz(mel(fs / 2.0) * k as f64 / (filters + 1) as f64))
        .collect();
    let weight = |j: usize, f: f64| {
        let (a, b, c) = (edges[j], edges[j + 1], edges[j + 2]);
        if f > a && f <= b {
            (f - a) / (b - a)
        } else if f > b && f < c {
            (c - f) / (c - b)
        } else {
            0.0
        }
    };
    let c0 = |centre: usize| {
        let frame: Vec<f64> = (0..fl)
            .map(|k| {
                let idx = centre as isize - (fl / 2) as isize + k as isize;
                let v = if idx >= 0 && (idx as usize) < n { x[idx as usize] } else { 0.0 };
                v * (0.54 - 0.46 * (2.0 * PI * k as f64 / (fl - 1) as f64).cos())
            })
            .collect();
        let power: Vec<f64> = (0..=fl / 2)
            .map(|b| {
                let (mut re, mut im) = (0.0, 0.0);
                for (k, v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (b * k) as f64 / fl as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im) / fl as f64
            })
            .collect();
        (0..filters)
            .map(|j| {
                let e: f64 = (0..=fl / 2).map(|b| weight(j, b as f64 * fs / fl as f64) * power[b]).sum();
                e.max(1e-30).ln()
            })
            .sum::<f64>()
            / (filters as f64).sqrt()
    };

    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(m);
            let hi = (i + m).min(n - 1);
            let abs_sum: f64 = (lo..=hi).map(|k| x[k].abs()).sum();
            let f1_sum: f64 = (lo..=hi).map(|k| f1[k]).sum();
            let nb_max = (lo..=hi).map(|k| x[k]).fold(f64::NEG_INFINITY, f64::max);
            let centre = i - i % cfg.mfcc.stride;
            [
                f1[i],
                div(x[i].abs() * 2.0 * m as f64, abs_sum),
                if is_max(i) { 1.0 } else { 0.0 },
                div(x[i].abs() * n as f64, total),
                c0(centre),
                div(x[i], next_extremum(i).abs()),
                div(x[i], nb_max),
                div(f1[i] * 2.0 * m as f64, f1_sum),
            ]
        })
        .collect()
}

fn feature_oracle() -> Outcome {
    let cfg = FeatureConfig::default();
    let mut worst = [0.0f64; 8];
    for s in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
        let x: Vec<f64> = (0..200)
            .map(|i| (2.0 * PI * i as f64 / 33.3).sin() * 1e-3 + rng.random_range(-1e-3..1e-3))
            .collect();
        let got = compute_features(&x, &cfg).unwrap();
        let want = brute_force_features(&x, &cfg);
        for (g, w) in got.iter().zip(&want) {
            for k in 0..8 {
                // f5 is a sum of logarithms of order 100; compare it relatively
                let scale = if k == 4 { w[k].abs().max(1.0) } else { 1.0 };
                worst[k] = worst[k].max((g[k] - w[k]).abs() / scale);
            }
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let per: Vec<String> = worst.iter().enumerate().map(|(k, v)| format!("f{}={v:.1e}", k + 1)).collect();
    check(max <= 1e-12, format!("50 signals of 200 samples: max difference {}", per.join(" ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("noiseless closure", noiseless_closure),
        ("noisy robustness", noisy_robustness),
        ("ml plausibility", ml_plausibility),
        ("metric formula oracle", metric_oracle),
        ("wavelet perfect reconstruction", wavelet_reconstruction),
        ("tomographic closure", tomographic_closure),
        ("end-to-end rmse ordering", end_to_end_rmse),
        ("gate separation", gate_separation),
        ("feature oracle", feature_oracle),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {}: {name} ({d}) [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({d}) [{secs:.1} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
