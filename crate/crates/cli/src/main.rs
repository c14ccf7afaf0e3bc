use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use platescope_core::corpus::{read_corpus, write_corpus};
use platescope_core::detect::{
    detect, load_model_backend, load_stub_backend, DetectRequest, DetectorBackend, ImageSource, SyntheticLatency,
    UrlFetcher, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_MAX_URL_BYTES, DEFAULT_NMS_THRESHOLD,
};
use platescope_core::eval::{evaluate_corpus, report_to_csv, report_to_json, EvalConfig, EvalReport};
use platescope_core::fixtures::{verify_tree, write_fixture_tree};
use platescope_core::labelmap::LabelMap;
use platescope_core::AnnotatedImage;
use platescope_server::{Overrides, Secrets, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "platescope", version, about = "Meal photo analysis: server, evaluation and fixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Evaluate a detection corpus and write a metrics report.
    Eval(EvalArgs),
    /// Run the detector on one image and print a corpus record.
    Detect(DetectArgs),
    /// Generate or verify fixture trees.
    Fixtures(FixturesArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `bind` from the file and the environment.
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSONL corpus, one annotated image per line.
    corpus: PathBuf,
    /// Label map with `coarse_vocabulary` and `mapping`.
    labelmap: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    iou: f64,
    #[arg(long, default_value_t = 0.25, value_parser = unit_interval)]
    conf: f64,
    /// Report destination; omitted means no report file.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Stub,
    Model,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Image file path or http(s) URL.
    image: String,
    #[arg(long, value_enum, default_value_t = BackendArg::Stub)]
    backend: BackendArg,
    /// Sidecar directory for the stub backend.
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    #[arg(long, required_if_eq("backend", "model"))]
    model_file: Option<PathBuf>,
    #[arg(long, required_if_eq("backend", "model"))]
    vocabulary_file: Option<PathBuf>,
    /// Model input as WIDTHxHEIGHT.
    #[arg(long, default_value = "640x640", value_parser = input_size)]
    input_size: (u32, u32),
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD, value_parser = unit_interval)]
    conf: f64,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD, value_parser = unit_interval)]
    nms: f64,
    /// Record id; defaults to the file stem.
    #[arg(long)]
    image_id: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("action").required(true).args(["gen_corpus", "verify"])))]
struct FixturesArgs {
    /// Number of images to generate.
    #[arg(long, value_name = "N", requires_all = ["seed", "out"])]
    gen_corpus: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Check every fixture file under this directory.
    #[arg(long, value_name = "DIR")]
    verify: Option<PathBuf>,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn input_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: u32 = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Detect(args) = &cli.command {
        if matches!(args.backend, BackendArg::Stub) && args.fixture_dir.is_none() {
            Cli::command()
                .error(ErrorKind::MissingRequiredArgument, "--fixture-dir is required by the stub backend")
                .exit();
        }
    }
    let default_level = match cli.command {
        Command::Serve(_) => "info",
        _ => "warn",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();

    let result = match cli.command {
        Command::Serve(args) => run_serve(args),
        Command::Eval(args) => run_eval(args),
        Command::Detect(args) => run_detect(args),
        Command::Fixtures(args) => run_fixtures(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn run_serve(args: ServeArgs) -> anyhow::Result<()> {
    let mut config = ServiceConfig::load(&args.config)?;
    config.apply_env()?;
    config.apply_overrides(&Overrides { bind: args.bind });
    runtime()?.block_on(platescope_server::serve(config, Secrets::from_env()))?;
    Ok(())
}

fn fmt_metric(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.4}"))
}

fn summary_line(report: &EvalReport) -> String {
    let a = &report.aggregate;
    format!(
        "P={} R={} F1={} acc={} mAP={} median_latency={}",
        fmt_metric(Some(a.precision)),
        fmt_metric(Some(a.recall)),
        fmt_metric(Some(a.f1)),
        fmt_metric(a.accuracy),
        fmt_metric(report.map_50),
        fmt_metric(report.latency.as_ref().map(|l| l.median)),
    )
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let map = LabelMap::load(&args.labelmap)?;
    let report = evaluate_corpus(
        &corpus,
        &map,
        EvalConfig {
            iou_threshold: args.iou,
            confidence_threshold: args.conf,
        },
    )?;
    if let Some(path) = &args.report {
        let text = match args.format {
            ReportFormat::Json => report_to_json(&report),
            ReportFormat::Csv => report_to_csv(&report),
        };
        std::fs::write(path, text).with_context(|| format!("writing report {}", path.display()))?;
    }
    println!("{}", summary_line(&report));
    Ok(())
}

fn file_stem(name: &str) -> Option<String> {
    let base = name.rsplit(['/', '\\']).next()?;
    let stem = base.rsplit_once('.').map_or(base, |(s, _)| s);
    (!stem.is_empty()).then(|| stem.to_owned())
}

fn run_detect(args: DetectArgs) -> anyhow::Result<()> {
    let backend: Arc<dyn DetectorBackend> = match args.backend {
        BackendArg::Stub => Arc::new(load_stub_backend(
            args.fixture_dir.as_deref().expect("required by clap"),
            SyntheticLatency::None,
        )?),
        BackendArg::Model => Arc::new(load_model_backend(
            args.model_file.as_deref().expect("required by clap"),
            args.vocabulary_file.as_deref().expect("required by clap"),
            args.input_size,
        )?),
    };
    let is_url = args.image.starts_with("http://") || args.image.starts_with("https://");
    let source = if is_url {
        ImageSource::Url(args.image.clone())
    } else {
        let path = Path::new(&args.image);
        let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        ImageSource::Bytes {
            data,
            format: None,
            name: Some(args.image.clone()),
        }
    };
    let request = DetectRequest {
        source,
        confidence_threshold: args.conf,
        nms_threshold: args.nms,
    };
    let fetcher = UrlFetcher::new(DEFAULT_MAX_URL_BYTES, Duration::from_secs(10))?;
    let response = runtime()?.block_on(detect(request, backend, &fetcher))?;

    let image_id = match args.image_id {
        Some(id) => id,
        None => file_stem(&args.image).context("cannot derive an image id; pass --image-id")?,
    };
    let record = AnnotatedImage {
        image_id,
        ground_truth: vec![],
        predictions: response.detections,
        detect_seconds: Some(response.detect_seconds),
    };
    let mut stdout = std::io::stdout().lock();
    write_corpus(&mut stdout, std::slice::from_ref(&record))?;
    stdout.flush()?;
    Ok(())
}

fn run_fixtures(args: FixturesArgs) -> anyhow::Result<()> {
    if let Some(n) = args.gen_corpus {
        let (seed, out) = (args.seed.expect("required by clap"), args.out.expect("required by clap"));
        let corpus = write_fixture_tree(&out, n, seed)?;
        println!("generated {} images under {}", corpus.len(), out.display());
        return Ok(());
    }
    let dir = args.verify.expect("clap group requires one action");
    let report = verify_tree(&dir)?;
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    if !report.is_ok() {
        bail!(
            "{} of {} fixture files violate their invariants",
            report.violations.len(),
            report.checked.len()
        );
    }
    println!("ok: {} files checked under {}", report.checked.len(), dir.display());
    Ok(())
}
