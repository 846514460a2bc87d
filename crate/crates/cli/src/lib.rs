//! `bfpip` command-line driver.
//!
//! Every subcommand prints a JSON summary on stdout. Failures print
//! `{"error": {kind, message, instance_id, config}}` on stderr and exit 1.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bfpip_core::backend::{Predictor, ResponseCache};
use bfpip_core::config::{load_config, HarnessConfig};
use bfpip_core::dataset::jaad::{adapt_jaad, SplitSpec};
use bfpip_core::dataset::parse_manifest;
use bfpip_core::digest::sha256_hex;
use bfpip_core::protocol::{
    build_clip, derive_run_id, read_records, write_records, ClipSettings, Harness, RecordSink, RunDir, RunManifest,
};
use bfpip_core::prompt::PROMPT_ORDER;
use bfpip_core::report::{emit_report, reference_rows, run_ablation, RunResult};
use bfpip_core::{Error, ModalityConfig, ReportFormat, Split, VideoMode};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tracing::{info, warn};

mod failure;

pub use failure::Failure;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("split {0} has no evaluable instances")]
    EmptySplit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(Error::io(path, e))
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

core_from!(
    bfpip_core::config::ConfigError,
    bfpip_core::dataset::ManifestError,
    bfpip_core::dataset::jaad::AdaptError,
    bfpip_core::clip::ClipError,
    bfpip_core::prompt::PromptError,
    bfpip_core::backend::BackendError,
    bfpip_core::protocol::EvalError,
    bfpip_core::protocol::RecordsError,
    bfpip_core::report::ReportError
);

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "bfpip", version, about = "Zero-shot pedestrian crossing-intention evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert JAAD-style XML annotations into a canonical manifest.
    Ingest {
        #[arg(long)]
        annotations: PathBuf,
        /// JSON split listing, or a directory of train/val/test.txt files.
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the observation-window clip of every instance in a split.
    Prepare(PrepareArgs),
    /// Evaluate the configured modality configurations.
    Run(RunArgs),
    /// Evaluate all eight modality configurations.
    Ablate(CommonRunArgs),
    /// Re-emit the report of a finished run from its records.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// md, csv or json.
        #[arg(long, default_value = "md")]
        format: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect or clear the response cache.
    Cache(CacheArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Harness config supplying clip settings and the manifest path.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// annotated (AV) or unannotated (UV).
    #[arg(long, default_value = "annotated")]
    pub mode: String,
    #[arg(long)]
    pub frames_root: Option<PathBuf>,
    #[arg(long)]
    pub videos_root: Option<PathBuf>,
    #[arg(long)]
    pub clips_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CommonRunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Config override, `dotted.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Serve only from the cache; a miss is an error.
    #[arg(long)]
    pub offline: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonRunArgs,
    /// Configuration label such as `AV+S`; repeatable. Overrides the config file.
    #[arg(long)]
    pub modality: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Cache directory; defaults to the one named by --config.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "purge", conflicts_with = "purge")]
    pub stats: bool,
    #[arg(long)]
    pub purge: bool,
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("BFPIP_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging();
    match execute(cli.command) {
        Ok(summary) => {
            if let Some(s) = summary {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", Failure::from_error(&e).to_json());
            ExitCode::FAILURE
        }
    }
}

/// Runs one command; the returned value, if any, goes to stdout.
pub fn execute(command: Command) -> Result<Option<serde_json::Value>> {
    match command {
        Command::Ingest {
            annotations,
            splits,
            out,
        } => ingest(&annotations, &splits, &out).map(Some),
        Command::Prepare(args) => prepare(&args).map(Some),
        Command::Run(args) => {
            let configs = args
                .modality
                .iter()
                .map(|m| m.parse::<ModalityConfig>().map_err(CliError::InvalidArgument))
                .collect::<Result<Vec<_>>>()?;
            evaluate(&args.common, "run", (!configs.is_empty()).then_some(configs)).map(Some)
        }
        Command::Ablate(args) => evaluate(&args, "ablate", Some(ModalityConfig::ALL.to_vec())).map(Some),
        Command::Report { run, format, out } => {
            let bytes = report(&run, &format)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
                    Ok(Some(json!({ "report": path })))
                }
                None => {
                    use std::io::Write;
                    let mut stdout = std::io::stdout().lock();
                    stdout
                        .write_all(&bytes)
                        .and_then(|_| stdout.flush())
                        .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
                    Ok(None)
                }
            }
        }
        Command::Cache(args) => cache(&args).map(Some),
    }
}

fn ingest(annotations: &Path, splits: &Path, out: &Path) -> Result<serde_json::Value> {
    let spec = SplitSpec::load(splits)?;
    let outcome = adapt_jaad(annotations, &spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    outcome.manifest.write(out).map_err(|e| CliError::io(out, e))?;
    let count = |s: Split| outcome.manifest.filter_split(s).len();
    let excluded: Vec<_> = outcome
        .excluded
        .iter()
        .map(|x| json!({ "instance_id": x.instance_id, "reason": x.reason.code() }))
        .collect();
    Ok(json!({
        "manifest": out,
        "instances": outcome.manifest.instances.len(),
        "train": count(Split::Train),
        "val": count(Split::Val),
        "test": count(Split::Test),
        "excluded": excluded,
    }))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(CliError::InvalidArgument)
}

fn parse_mode(s: &str) -> Result<VideoMode> {
    match s.to_ascii_lowercase().as_str() {
        "annotated" | "av" => Ok(VideoMode::AV),
        "unannotated" | "uv" => Ok(VideoMode::UV),
        other => Err(CliError::InvalidArgument(format!(
            "unknown video mode {other:?} (expected annotated or unannotated)"
        ))),
    }
}

fn prepare(args: &PrepareArgs) -> Result<serde_json::Value> {
    let base = match &args.config {
        Some(path) => load_config(path, &[])?.config,
        None => HarnessConfig::default(),
    };
    let mut settings: ClipSettings = base.clips.clone();
    if args.frames_root.is_some() || args.videos_root.is_some() {
        settings.frames_root = args.frames_root.clone();
        settings.videos_root = args.videos_root.clone();
    }
    if let Some(dir) = &args.clips_dir {
        settings.clips_dir = dir.clone();
    }
    if settings.frames_root.is_none() && settings.videos_root.is_none() {
        return Err(CliError::InvalidArgument(
            "need --frames-root, --videos-root or a config that names one".into(),
        ));
    }
    let manifest_path = args.manifest.clone().unwrap_or(base.dataset.manifest);
    let split = parse_split(&args.split)?;
    let mode = parse_mode(&args.mode)?;

    let manifest = parse_manifest(&manifest_path)?;
    let instances = manifest.filter_split(split);
    if instances.is_empty() {
        return Err(CliError::EmptySplit(split.to_string()));
    }
    let mut index = Vec::with_capacity(instances.len());
    for inst in instances {
        let clip = build_clip(inst, mode, &settings).map_err(|e| {
            CliError::Core(Error::Eval(bfpip_core::protocol::EvalError {
                instance_id: inst.instance_id.clone(),
                config: None,
                source: e.into(),
            }))
        })?;
        index.push(json!({ "instance_id": inst.instance_id, "clip": clip }));
    }
    std::fs::create_dir_all(&settings.clips_dir).map_err(|e| CliError::io(&settings.clips_dir, e))?;
    let index_path = settings.clips_dir.join(format!("index-{split}-{}.json", args.mode.to_ascii_lowercase()));
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&index_path, text + "\n").map_err(|e| CliError::io(&index_path, e))?;
    Ok(json!({ "clips": index.len(), "index": index_path }))
}

fn evaluate(args: &CommonRunArgs, command: &str, configs: Option<Vec<ModalityConfig>>) -> Result<serde_json::Value> {
    let loaded = load_config(&args.config, &args.set)?;
    for w in &loaded.warnings {
        warn!("{w}");
    }
    let cfg = loaded.config;
    let configs = configs.unwrap_or_else(|| cfg.configs.clone());
    if configs.is_empty() {
        return Err(CliError::InvalidArgument("no modality configurations selected".into()));
    }
    let ablation = command == "ablate";

    let manifest_bytes =
        std::fs::read(&cfg.dataset.manifest).map_err(|e| CliError::io(&cfg.dataset.manifest, e))?;
    let dataset = parse_manifest(&cfg.dataset.manifest)?;
    let instances = dataset.filter_split(cfg.dataset.split);
    if instances.is_empty() {
        return Err(CliError::EmptySplit(cfg.dataset.split.to_string()));
    }
    let templates = cfg.load_templates()?;

    let mut run = RunManifest {
        run_id: String::new(),
        command: command.to_string(),
        predictor: cfg.predictor.clone(),
        protocol: cfg.protocol,
        configs: configs.clone(),
        template_digest: templates.digest(),
        stage1_digest: sha256_hex(templates.stage1.as_bytes()),
        stage2_digest: sha256_hex(templates.stage2.as_bytes()),
        prompt_order: PROMPT_ORDER.iter().map(|s| s.to_string()).collect(),
        dataset_manifest: cfg.dataset.manifest.clone(),
        dataset_digest: sha256_hex(&manifest_bytes),
        split: cfg.dataset.split.to_string(),
        instance_count: instances.len(),
        video_count: instances.iter().map(|i| &i.video_id).collect::<BTreeSet<_>>().len(),
        clip_settings: serde_json::to_value(&cfg.clips).expect("clip settings serialize"),
        deviations: cfg.deviations(),
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    run.run_id = args
        .run_id
        .clone()
        .or_else(|| cfg.run_id.clone())
        .unwrap_or_else(|| derive_run_id(&run));

    let dir = RunDir::new(&cfg.runs_dir, &run.run_id);
    std::fs::create_dir_all(dir.root()).map_err(|e| CliError::io(dir.root(), e))?;
    run.write(&dir).map_err(|e| CliError::io(&dir.manifest_path(), e))?;

    let mut predictor = Predictor::from_spec(cfg.predictor.clone(), Some(ResponseCache::new(&cfg.cache_dir)))?;
    predictor.set_network_enabled(!args.offline);
    let harness = Harness {
        predictor: &predictor,
        templates: &templates,
        protocol: cfg.protocol,
        clips: &cfg.clips,
        max_concurrency: cfg.max_concurrency,
    };
    let records_path = dir.records_path();
    let sink = RecordSink::create(&records_path).map_err(|e| CliError::io(&records_path, e))?;
    info!(run_id = %run.run_id, instances = instances.len(), configs = configs.len(), "evaluating");

    let (result, records) = if ablation {
        let (result, records) = run_ablation(&instances, &harness, &run, Some(&sink))?;
        (result.into_inner(), records)
    } else {
        let records = harness.evaluate(&instances, &configs, Some(&sink))?;
        (RunResult::from_records(&run, &records)?, records)
    };
    write_records(&records_path, &records).map_err(|e| CliError::io(&records_path, e))?;

    let reference = reference_rows();
    let mut reports = serde_json::Map::new();
    for format in ReportFormat::ALL {
        let path = dir.report_path(format.extension());
        std::fs::write(&path, emit_report(&result, &reference, format)).map_err(|e| CliError::io(&path, e))?;
        reports.insert(format.extension().to_string(), json!(path));
    }

    let counters = predictor.counters();
    let rows: Vec<_> = result
        .rows
        .iter()
        .map(|r| {
            json!({
                "config": r.config,
                "acc": r.metrics.acc,
                "auc": r.metrics.auc,
                "f1": r.metrics.f1,
                "precision": r.metrics.precision,
                "recall": r.metrics.recall,
                "n": r.metrics.n,
                "evaluation_failures": r.metrics.evaluation_failures,
            })
        })
        .collect();
    Ok(json!({
        "run_id": run.run_id,
        "run_dir": dir.root(),
        "records": records.len(),
        "rows": rows,
        "reports": reports,
        "cache": {
            "hits": counters.cache_hits,
            "misses": counters.cache_misses,
            "network_calls": counters.network_calls,
        },
        "deviations": run.deviations,
    }))
}

/// Re-renders a run report from `manifest.json` and `records.jsonl`.
pub fn report(run_dir: &Path, format: &str) -> Result<Vec<u8>> {
    let format: ReportFormat = format.parse()?;
    let dir = RunDir::open(run_dir);
    let records = read_records(&dir.records_path())?;
    let manifest = RunManifest::read(&dir)?;
    let result = RunResult::from_records(&manifest, &records)?;
    Ok(emit_report(&result, &reference_rows(), format))
}

fn cache(args: &CacheArgs) -> Result<serde_json::Value> {
    let dir = match (&args.dir, &args.config) {
        (Some(dir), _) => dir.clone(),
        (None, Some(config)) => load_config(config, &[])?.config.cache_dir,
        (None, None) => return Err(CliError::InvalidArgument("need --dir or --config".into())),
    };
    let cache = ResponseCache::new(&dir);
    if args.purge {
        let removed = cache.purge().map_err(|e| CliError::io(&dir, e))?;
        Ok(json!({ "dir": dir, "purged": removed }))
    } else {
        Ok(json!({ "dir": dir, "stats": cache.stats() }))
    }
}
