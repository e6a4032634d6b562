use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use facility_enum::compliance::{evaluate, BuildingContext, Catalog};
use facility_enum::cot::{enumerate_plan, PlanInput};
use facility_enum::detection::{
    fetch_detections, filter_doors, load_detections, DetectorClient, DetectorConfig,
    DETECTOR_URL_ENV,
};
use facility_enum::eval::{
    compare_prepared, detect_tiled, plan_tiles, prepare_plans, tile_png, ComparisonConfig,
    Contender, DatasetManifest, Method, PairChoice,
};
use facility_enum::gateway::{
    Backend, DiskCache, Gateway, OracleBackend, OracleConfig, OracleFixture, PromptTemplates,
    RemoteBackend, RemoteConfig, LLM_MODEL_ENV, LLM_URL_ENV,
};
use facility_enum::model::{EnumerationResult, FacilityType, FloorPlanRef};
use facility_enum::synth::{write_bundle, GenerateRequest, ScenarioSpec};
use facility_enum::{Error, Result};

const CACHE_DIR_ENV: &str = "FE_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "facility-enum",
    version,
    about = "Count facilities on floor plans and check them against building rules"
)]
struct Cli {
    /// TOML file with defaults for any option below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count facilities on one plan.
    Enumerate(EnumerateArgs),
    /// Check counts against the rule catalog.
    Check(CheckArgs),
    /// Score baseline and pipeline accuracy over a dataset manifest.
    Evaluate(EvaluateArgs),
    /// Write a synthetic fixture bundle.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum BackendKind {
    Oracle,
    Remote,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Answer cache directory.
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
    /// Oracle answer corruption rate.
    #[arg(long)]
    error_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = LLM_URL_ENV)]
    llm_url: Option<String>,
    #[arg(long, env = LLM_MODEL_ENV)]
    llm_model: Option<String>,
    /// Prompt template file; defaults to the built-in set.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_enum)]
    pairs: Option<PairArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PairArg {
    All,
    Gated,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    plan_id: Option<String>,
    /// Detection manifest; otherwise the detector service is called.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long, env = DETECTOR_URL_ENV)]
    detector_url: Option<String>,
    /// Split the image into tiles of this size for the detector service.
    #[arg(long)]
    tile_px: Option<u32>,
    #[arg(long)]
    overlap_px: Option<u32>,
    #[arg(long)]
    confidence_threshold: Option<f64>,
    #[arg(long)]
    dedup_iou: Option<f64>,
    /// Oracle fixture for the plan when the oracle backend is used.
    #[arg(long)]
    oracle_fixture: Option<PathBuf>,
    /// Facility types to count; all when omitted.
    #[arg(long = "facility", value_parser = parse_facility)]
    facilities: Vec<FacilityType>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct CheckArgs {
    /// Directory of per-facility result files.
    #[arg(long, required_unless_present = "counts")]
    results: Option<PathBuf>,
    /// JSON map of facility type to count, instead of a results directory.
    #[arg(long, conflicts_with = "results")]
    counts: Option<PathBuf>,
    #[arg(long)]
    context: PathBuf,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Catalog parameter override, `name=value`.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, u32)>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
    Both,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Methods to compare.
    #[arg(long = "method", value_enum, default_values = ["baseline", "cot"])]
    methods: Vec<MethodArg>,
    #[arg(long = "facility", value_parser = parse_facility)]
    facilities: Vec<FacilityType>,
    /// Leave failed plans out of the denominator.
    #[arg(long)]
    exclude_failures: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Baseline,
    Cot,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario spec JSON; a single scenario or {"dataset", "scenarios"}.
    #[arg(long, required_unless_present = "random")]
    spec: Option<PathBuf>,
    /// Instead of a spec, generate this many random scenarios.
    #[arg(long, conflicts_with = "spec")]
    random: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    #[arg(long, default_value_t = 25)]
    max_doors: u32,
    #[arg(long)]
    out: PathBuf,
}

/// Defaults read from `--config`. Flags and environment variables win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<BackendKind>,
    cache_dir: Option<PathBuf>,
    error_rate: Option<f64>,
    seed: Option<u64>,
    llm_url: Option<String>,
    llm_model: Option<String>,
    templates: Option<PathBuf>,
    pairs: Option<PairArg>,
    workers: Option<usize>,
    detector_url: Option<String>,
    confidence_threshold: Option<f64>,
    dedup_iou: Option<f64>,
    tile_px: Option<u32>,
    overlap_px: Option<u32>,
    catalog: Option<PathBuf>,
    #[serde(default)]
    params: BTreeMap<String, u32>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Every setting a run used, written next to its results.
#[derive(Debug, Serialize)]
struct EffectiveConfig {
    backend: String,
    backend_kind: BackendKind,
    cache_dir: Option<PathBuf>,
    error_rate: f64,
    seed: u64,
    llm_url: Option<String>,
    llm_model: Option<String>,
    template_version: String,
    pairs: PairArg,
    detector: Option<DetectorConfig>,
    tiling: Option<(u32, u32)>,
    workers: Option<usize>,
    facilities: Vec<FacilityType>,
}

fn parse_facility(s: &str) -> std::result::Result<FacilityType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_param(s: &str) -> std::result::Result<(String, u32), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{v}: {e}"))?))
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Validation(_) | Error::Schema { .. } | Error::Config(_) | Error::Io { .. } => 2,
        _ => 3,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct Model {
    gateway: Arc<Gateway>,
    effective: EffectiveConfig,
}

/// Builds the gateway: oracle or remote backend, optional disk cache.
fn build_model(
    args: &ModelArgs,
    file: &FileConfig,
    oracle_fixtures: impl FnOnce() -> Result<Vec<OracleFixture>>,
    cancel: Arc<AtomicBool>,
) -> Result<Model> {
    let kind = args.backend.or(file.backend).unwrap_or(BackendKind::Oracle);
    let error_rate = args.error_rate.or(file.error_rate).unwrap_or(0.0);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let llm_url = args.llm_url.clone().or_else(|| file.llm_url.clone());
    let llm_model = args.llm_model.clone().or_else(|| file.llm_model.clone());
    let backend: Arc<dyn Backend> = match kind {
        BackendKind::Oracle => {
            let mut oracle = OracleBackend::new(OracleConfig::with_error_rate(error_rate, seed))?;
            for f in oracle_fixtures()? {
                oracle.add_fixture(f);
            }
            Arc::new(oracle)
        }
        BackendKind::Remote => {
            let url = llm_url.clone();
            let model = llm_model.clone();
            let cfg = RemoteConfig::from_lookup(|name| match name {
                n if n == LLM_URL_ENV => url.clone(),
                n if n == LLM_MODEL_ENV => model.clone(),
                n => std::env::var(n).ok(),
            })?;
            Arc::new(RemoteBackend::new(cfg))
        }
    };
    let templates = match args.templates.as_ref().or(file.templates.as_ref()) {
        Some(p) => PromptTemplates::load(p)?,
        None => PromptTemplates::builtin("v1")?,
    };
    let cache_dir = args.cache_dir.clone().or_else(|| file.cache_dir.clone());
    let mut gateway = Gateway::new(backend, templates).with_cancel(cancel);
    if let Some(dir) = &cache_dir {
        gateway = gateway.with_cache(Arc::new(DiskCache::open(dir)?));
    }
    let effective = EffectiveConfig {
        backend: gateway.backend_name().to_string(),
        backend_kind: kind,
        cache_dir,
        error_rate,
        seed,
        llm_url,
        llm_model,
        template_version: gateway.templates().version().to_string(),
        pairs: args.pairs.or(file.pairs).unwrap_or(PairArg::All),
        detector: None,
        tiling: None,
        workers: None,
        facilities: Vec::new(),
    };
    Ok(Model {
        gateway: Arc::new(gateway),
        effective,
    })
}

fn pair_choice(p: PairArg) -> PairChoice {
    match p {
        PairArg::All => PairChoice::AllPairs,
        PairArg::Gated => PairChoice::Gated,
    }
}

fn facilities_or_all(list: &[FacilityType]) -> Vec<FacilityType> {
    if list.is_empty() {
        FacilityType::ALL.to_vec()
    } else {
        list.to_vec()
    }
}

fn cmd_enumerate(args: EnumerateArgs, file: &FileConfig, cancel: Arc<AtomicBool>) -> Result<u8> {
    let detector = DetectorConfig {
        confidence_threshold: args
            .confidence_threshold
            .or(file.confidence_threshold)
            .unwrap_or(0.5),
        dedup_iou_threshold: args.dedup_iou.or(file.dedup_iou).unwrap_or(0.8),
        endpoint: args
            .detector_url
            .clone()
            .or_else(|| file.detector_url.clone()),
        ..Default::default()
    };
    detector.validate()?;
    if args.detections.is_none() && detector.endpoint.is_none() {
        return Err(Error::Config(format!(
            "no detections: pass --detections or set {DETECTOR_URL_ENV}"
        )));
    }
    let bytes = std::fs::read(&args.image).map_err(|e| Error::io(&args.image, e))?;
    let plan_id = args.plan_id.clone().unwrap_or_else(|| {
        args.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "plan".into())
    });
    let plan = FloorPlanRef::from_image_bytes(plan_id, &bytes, args.image.to_string_lossy())?;
    let tiling = match (
        args.tile_px.or(file.tile_px),
        args.overlap_px.or(file.overlap_px),
    ) {
        (Some(t), o) => Some((
            t,
            o.unwrap_or(facility_enum::eval::DEFAULT_OVERLAP_PX.min(t / 2)),
        )),
        (None, Some(_)) => return Err(Error::Config("--overlap-px needs --tile-px".into())),
        (None, None) => None,
    };
    let canvas = facility_enum::overlay::Canvas::decode(&bytes)?;
    let raw = match (&args.detections, tiling) {
        (Some(path), _) => load_detections(path, &plan)?,
        (None, None) => fetch_detections(&plan, &detector)?,
        (None, Some((tile, overlap))) => {
            let client = DetectorClient::new(&detector)?;
            let tiles = plan_tiles(&plan, tile, overlap)?;
            let doors = detect_tiled(&tiles, detector.dedup_iou_threshold, |t| {
                let png = tile_png(&canvas, t)?;
                let sub = FloorPlanRef::from_image_bytes(
                    format!("{}@{},{}", plan.plan_id, t.origin.0, t.origin.1),
                    &png,
                    "tile",
                )?;
                Ok(client.detect(&sub, &png)?.doors)
            })?;
            facility_enum::detection::DoorSet {
                doors,
                warnings: Vec::new(),
            }
        }
    };
    for w in &raw.warnings {
        log::warn!("detections[{}]: {}", w.entry, w.message);
    }
    let doors = filter_doors(&raw.doors, &detector);
    let fixture_path = args.oracle_fixture.clone();
    let mut model = build_model(
        &args.model,
        file,
        || match fixture_path {
            Some(p) => Ok(vec![OracleFixture::load(&p)?]),
            None => Err(Error::Config(
                "the oracle backend needs --oracle-fixture".into(),
            )),
        },
        cancel,
    )?;
    let facilities = facilities_or_all(&args.facilities);
    model.effective.detector = Some(detector);
    model.effective.tiling = tiling;
    model.effective.facilities = facilities.clone();

    let input = PlanInput::with_canvas(plan.clone(), canvas, doors)?;
    let cfg = ComparisonConfig {
        pairs: pair_choice(model.effective.pairs),
        ..Default::default()
    };
    let configs: Vec<_> = facilities.iter().map(|&f| cfg.pipeline(f, &plan)).collect();
    let dir = args.out.join(&plan.plan_id);
    create_dir(&dir)?;
    write_json(&args.out.join("effective-config.json"), &model.effective)?;

    let outcomes = enumerate_plan(&input, &model.gateway, &configs);
    let mut failed = 0;
    let mut meta = BTreeMap::new();
    for (facility, outcome) in outcomes {
        match outcome {
            Ok(run) => {
                write_json(&dir.join(format!("{facility}.json")), &run.result)?;
                write_json(
                    &dir.join(format!("{facility}.provenance.json")),
                    &run.provenance,
                )?;
                meta.insert(
                    facility,
                    serde_json::to_value(run.timings).expect("timings"),
                );
                println!("{facility}: {}", run.result.n_final());
            }
            Err(e) => {
                failed += 1;
                let stage = match &e {
                    Error::Stage { stage, .. } => Some(stage.to_string()),
                    _ => None,
                };
                log::error!("{facility}: {e}");
                write_json(
                    &dir.join(format!("{facility}.error.json")),
                    &serde_json::json!({"facility": facility, "stage": stage, "error": e.to_string()}),
                )?;
                println!("{facility}: failed");
            }
        }
    }
    write_json(&dir.join("run-meta.json"), &meta)?;
    Ok(if failed == 0 { 0 } else { 3 })
}

/// Reads every `<facility>.json` result in `dir`.
fn read_results(dir: &Path) -> Result<BTreeMap<FacilityType, u32>> {
    let mut out = BTreeMap::new();
    for facility in FacilityType::ALL {
        let path = dir.join(format!("{facility}.json"));
        if !path.exists() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let result: EnumerationResult = serde_json::from_slice(&bytes)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        out.insert(facility, result.n_final());
    }
    if out.is_empty() {
        return Err(Error::validation(format!(
            "no result files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn cmd_check(args: CheckArgs, file: &FileConfig) -> Result<u8> {
    let results = match (&args.results, &args.counts) {
        (Some(dir), _) => read_results(dir)?,
        (None, Some(path)) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let ctx = BuildingContext::load(&args.context)?.with_parking_from(&results);
    let mut catalog = match args.catalog.as_ref().or(file.catalog.as_ref()) {
        Some(p) => Catalog::load(p)?,
        None => Catalog::builtin(),
    };
    let mut params = file.params.clone();
    params.extend(args.params.iter().cloned());
    for (k, v) in params {
        catalog = catalog.with_parameter(&k, v)?;
    }
    let report = evaluate(&results, &ctx, &catalog)?;
    if matches!(args.format, Format::Json | Format::Both) {
        print!("{}", report.to_json());
    }
    if matches!(args.format, Format::Table | Format::Both) {
        print!("{}", report.to_table());
    }
    Ok(if report.overall_pass { 0 } else { 1 })
}

fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig, cancel: Arc<AtomicBool>) -> Result<u8> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let detector = DetectorConfig {
        confidence_threshold: file.confidence_threshold.unwrap_or(0.5),
        dedup_iou_threshold: file.dedup_iou.unwrap_or(0.8),
        ..Default::default()
    };
    let mut model = build_model(
        &args.model,
        file,
        || {
            let oracle = manifest.oracle(OracleConfig::default())?;
            Ok(manifest
                .plans
                .iter()
                .filter_map(|p| oracle.fixture(&p.plan.plan_id).cloned())
                .collect())
        },
        cancel,
    )?;
    let facilities = facilities_or_all(&args.facilities);
    let workers = args.workers.or(file.workers).unwrap_or(4);
    let cfg = ComparisonConfig {
        facilities: facilities.clone(),
        pairs: pair_choice(model.effective.pairs),
        detector: detector.clone(),
        exclude_failures: args.exclude_failures,
        workers,
    };
    model.effective.detector = Some(detector);
    model.effective.workers = Some(workers);
    model.effective.facilities = facilities;

    let mut methods = args.methods.clone();
    methods.dedup();
    let contenders: Vec<Contender> = methods
        .iter()
        .map(|m| Contender {
            label: match m {
                MethodArg::Baseline => "baseline".into(),
                MethodArg::Cot => "cot".into(),
            },
            method: match m {
                MethodArg::Baseline => Method::Baseline,
                MethodArg::Cot => Method::Cot,
            },
            gateway: model.gateway.clone(),
        })
        .collect();
    let plans = prepare_plans(&manifest, &cfg.detector)?;
    let report = compare_prepared(&manifest.dataset, &plans, &contenders, &cfg)?;

    create_dir(&args.out)?;
    write_json(&args.out.join("effective-config.json"), &model.effective)?;
    let csv = report.to_csv()?;
    let csv_path = args.out.join("results.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    let table = report.to_table();
    let table_path = args.out.join("results.txt");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    write_json(&args.out.join("outcomes.json"), &report.outcomes)?;
    write_json(&args.out.join("provenance.json"), &report.provenance)?;
    write_json(
        &args.out.join("run-meta.json"),
        &serde_json::json!({
            "backend_invocations": model.gateway.backend_invocations(),
            "failed_plans": report.failures().count(),
        }),
    )?;
    print!("{table}");
    Ok(0)
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let (dataset, specs) = match (&args.spec, args.random) {
        (Some(p), _) => GenerateRequest::load(p)?.into_parts(),
        (None, Some(n)) => (
            format!("synthetic-random-{}", args.seed_start),
            (0..n as u64)
                .map(|i| {
                    let seed = args.seed_start + i;
                    ScenarioSpec::random(seed, (seed % (args.max_doors as u64 + 1)) as u32)
                })
                .collect(),
        ),
        (None, None) => unreachable!("clap requires one"),
    };
    for s in &specs {
        s.validate()?;
    }
    let manifest = write_bundle(&dataset, &specs, &args.out)?;
    println!(
        "wrote {} plan(s) to {}",
        manifest.plans.len(),
        args.out.join("manifest.json").display()
    );
    Ok(0)
}

fn run(cli: Cli, cancel: Arc<AtomicBool>) -> Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Enumerate(a) => cmd_enumerate(a, &file, cancel),
        Command::Check(a) => cmd_check(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file, cancel),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        log::warn!("interrupted; finishing with what is done");
        flag.store(true, Ordering::Relaxed);
    }) {
        log::debug!("no interrupt handler: {e}");
    }
    match run(cli, cancel) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
