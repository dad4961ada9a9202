use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use uct_core::config::PipelineConfig;
use uct_core::extract::{write_extraction_csv, Method};
use uct_core::par::Exec;
use uct_core::pipeline::{run_pipeline, Extractors, Layout, Stage, StageStats};
use uct_core::waveform::{read_record, Format};

#[derive(Parser)]
#[command(name = "uct", version, about = "Ultrasound CT projection extraction and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file, or `default` for built-in settings.
    #[arg(long, default_value = "default", global = true)]
    config: String,
    /// Override one config key, e.g. `--set geometry.rotations=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gradient,
    Fft,
    Wavelet,
    Ann,
    Svm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gradient => Method::Gradient,
            MethodArg::Fft => Method::Fft,
            MethodArg::Wavelet => Method::Wavelet,
            MethodArg::Ann => Method::Ann,
            MethodArg::Svm => Method::Svm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scan of the configured phantom.
    Generate(Common),
    /// Classify records as transmission or noise.
    Gate(Common),
    /// Read packet amplitudes with the selected methods.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Restrict to these methods (repeatable).
        #[arg(long = "method", value_enum)]
        methods: Vec<MethodArg>,
        /// Process one record file instead of the generated dataset.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Encoding of `--record`.
        #[arg(long, value_enum, default_value = "binary", requires = "record")]
        format: FormatArg,
    },
    /// Train the ANN and SVM classifiers.
    Train(Common),
    /// Score extractions against the labels.
    Evaluate(Common),
    /// Build sinograms and reconstruct images.
    Reconstruct(Common),
    /// Tabulate reconstruction RMSE from image files.
    Report(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Print the effective configuration as TOML.
    Config(Common),
}

struct Failure {
    stage: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn new(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self {
            stage,
            message: e.to_string(),
            code: 1,
        }
    }

    fn usage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            ..Self::new(stage, e)
        }
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = if c.config == "default" {
        PipelineConfig::default()
    } else {
        PipelineConfig::load(&PathBuf::from(&c.config)).map_err(|e| Failure::usage("config", e))?
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage("config", format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure::usage("config", e))?;
    }
    Ok(cfg)
}

fn setup(c: &Common) -> Result<(PipelineConfig, Exec), Failure> {
    let cfg = load_config(c)?;
    if c.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(c.workers)
            .build_global()
            .map_err(|e| Failure::new("setup", e))?;
    }
    Ok((cfg, Exec::default()))
}

fn log(stage: &str, stats: &StageStats, seconds: f64) {
    let mut line = format!("stage={stage} status=ok seconds={seconds:.3}");
    for (k, v) in stats {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn run_stage(stage: Stage, c: &Common) -> Result<(), Failure> {
    let (cfg, exec) = setup(c)?;
    let t = Instant::now();
    let stats = stage.run(&cfg, exec).map_err(|e| Failure::new(stage.as_str(), e))?;
    log(stage.as_str(), &stats, t.elapsed().as_secs_f64());
    Ok(())
}

fn extract_one(cfg: &PipelineConfig, path: &PathBuf, format: Format) -> Result<(), Failure> {
    let fail = |e: uct_core::Error| Failure::new("extract", e);
    let t = Instant::now();
    let record = read_record(path, format).map_err(fail)?;
    let layout = Layout::new(&cfg.output_dir);
    let results = Extractors::new(cfg, &layout).map_err(fail)?.run(&record);
    let out = layout.extract().join(format!("record_{}.csv", record.id()));
    std::fs::create_dir_all(layout.extract()).map_err(|e| Failure::new("extract", e))?;
    write_extraction_csv(&out, &results).map_err(fail)?;
    let readings: usize = results.iter().map(|r| r.readings.len()).sum();
    let stats = vec![
        ("record", record.id().to_string()),
        ("readings", readings.to_string()),
        ("output", out.display().to_string()),
    ];
    log("extract", &stats, t.elapsed().as_secs_f64());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(c) => run_stage(Stage::Generate, &c),
        Command::Gate(c) => run_stage(Stage::Gate, &c),
        Command::Train(c) => run_stage(Stage::Train, &c),
        Command::Evaluate(c) => run_stage(Stage::Evaluate, &c),
        Command::Reconstruct(c) => run_stage(Stage::Reconstruct, &c),
        Command::Report(c) => run_stage(Stage::Report, &c),
        Command::Extract {
            common,
            methods,
            record,
            format,
        } => {
            let (mut cfg, exec) = setup(&common)?;
            if !methods.is_empty() {
                let mut m: Vec<Method> = methods.into_iter().map(Method::from).collect();
                m.sort_unstable();
                m.dedup();
                cfg.methods = m;
            }
            match record {
                Some(path) => {
                    let format = match format {
                        FormatArg::Text => Format::Text,
                        FormatArg::Binary => Format::Binary,
                    };
                    extract_one(&cfg, &path, format)
                }
                None => {
                    let t = Instant::now();
                    let stats = Stage::Extract.run(&cfg, exec).map_err(|e| Failure::new("extract", e))?;
                    log("extract", &stats, t.elapsed().as_secs_f64());
                    Ok(())
                }
            }
        }
        Command::Pipeline(c) => {
            let (cfg, exec) = setup(&c)?;
            let t = Instant::now();
            run_pipeline(&cfg, exec, |stage, stats, secs| log(stage.as_str(), stats, secs))
                .map_err(|e| Failure::new(e.stage, e.source))?;
            log("pipeline", &Vec::new(), t.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Config(c) => {
            let cfg = load_config(&c)?;
            print!("{}", cfg.to_toml().map_err(|e| Failure::new("config", e))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.message.replace(['\n', '\r'], " ");
            eprintln!("error stage={} message={msg:?}", f.stage);
            ExitCode::from(f.code)
        }
    }
}
