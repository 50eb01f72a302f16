//! The `biastest` command line.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when a chat, scorer or
//! classifier backend is unreachable.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use biastest_core::datastore::{self, DatasetFile, Store};
use biastest_core::genpipeline::mock::MockChatConfig;
use biastest_core::genpipeline::{
    bundled_templates, discover_bias_candidates, fill_templates, generate_for_spec, parse_templates,
    DiscoveryOptions, GenError, GenerationConfig, RewriteStrategy,
};
use biastest_core::metrics::{
    bootstrap_ss, compare_estimates, welch_ttest, BiasTestResult, BootstrapOptions, MetricsError, ALPHA,
};
use biastest_core::scorers::Normalization;
use biastest_core::specs::{validate_spec, BiasSpecification, ValidatedSpec};
use biastest_core::textquality::{quality_report, HttpToxicityClassifier, QualityOptions, ToxicityClassifier};

use crate::api::{router, AppState};
use crate::backends::{chat_client, default_chat_model, resolve_spec, scorer_from_arg};
use crate::AppError;

#[derive(Debug, Parser)]
#[command(name = "biastest", version, about = "Generate bias test sentences and measure stereotype scores")]
struct Cli {
    /// Directory holding specifications, datasets and results.
    #[arg(long, global = true, env = "BIASTEST_DATA_DIR", default_value = "biastest-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List, add or validate bias specifications.
    Specs {
        #[command(subcommand)]
        action: SpecsAction,
    },
    /// Generate test sentences with a chat model.
    Generate(GenerateArgs),
    /// Fill manual templates for a specification.
    Templates(TemplatesArgs),
    /// Score a dataset and compute the stereotype score with a bootstrap.
    Test(TestArgs),
    /// Report length, diversity, readability, sentiment and toxicity.
    Quality(QualityArgs),
    /// Compare two bias test results.
    Compare(CompareArgs),
    /// Ask a chat model to suggest bias specifications for a domain.
    Discover(DiscoverArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum SpecsAction {
    /// Stored and bundled specifications.
    List,
    /// Validate a JSON specification and store it.
    Add { file: PathBuf },
    /// Validate a JSON specification without storing it.
    Validate { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RewriteArg {
    Chat,
    Deterministic,
}

#[derive(Debug, Args)]
struct MockArgs {
    /// Answer chat requests with the seeded offline mock.
    #[arg(long)]
    mock_chat: bool,
    #[arg(long, default_value_t = 0.0, requires = "mock_chat")]
    mock_omit_rate: f64,
    #[arg(long, default_value_t = 0.0, requires = "mock_chat")]
    mock_refusal_rate: f64,
}

impl MockArgs {
    fn config(&self, seed: u64) -> Option<MockChatConfig> {
        self.mock_chat.then(|| MockChatConfig {
            seed,
            omit_rate: self.mock_omit_rate,
            refusal_rate: self.mock_refusal_rate,
            ..MockChatConfig::default()
        })
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Specification file or name.
    #[arg(long)]
    spec: String,
    /// Sentences per attribute term.
    #[arg(long, default_value_t = 2)]
    quota: usize,
    /// Choices per chat request.
    #[arg(long, default_value_t = 5)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chat requests allowed per attribute term.
    #[arg(long, default_value_t = 40)]
    max_tries: usize,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Chat model; defaults to CHAT_MODEL.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value_t = RewriteArg::Chat)]
    rewrite: RewriteArg,
    /// Pins sentence and dataset timestamps (RFC 3339) for reproducible files.
    #[arg(long)]
    timestamp: Option<DateTime<Utc>>,
    #[command(flatten)]
    mock: MockArgs,
    /// Also write the dataset (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TemplatesArgs {
    #[arg(long)]
    spec: String,
    /// Template file, one pattern per line with `[T]` and `[A]` slots.
    /// Defaults to the bundled templates for predefined specifications.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    timestamp: Option<DateTime<Utc>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormalizationArg {
    JointSum,
    PerTokenMean,
}

impl From<NormalizationArg> for Normalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::JointSum => Normalization::JointSum,
            NormalizationArg::PerTokenMean => Normalization::PerTokenMean,
        }
    }
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    spec: String,
    /// Dataset file, or a stored run id. Defaults to all stored runs.
    #[arg(long)]
    dataset: Option<String>,
    /// URL, `env`, `table:FILE`, `unigram:FILE` or `constant[:VALUE]`.
    #[arg(long)]
    scorer: String,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long, value_enum, default_value_t = NormalizationArg::JointSum)]
    normalization: NormalizationArg,
    /// Sentences drawn per attribute term in each replicate.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-pair CSV here.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Add one CSV row per replicate draw to the export.
    #[arg(long)]
    export_replicates: bool,
}

#[derive(Debug, Args)]
struct QualityArgs {
    /// Dataset file or stored run id (with --spec).
    #[arg(long, required_unless_present = "spec")]
    dataset: Option<String>,
    /// Use all stored runs of this specification.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, default_value_t = 200)]
    sample_size: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of the text summary.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Result JSON file or stored result id.
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
}

#[derive(Debug, Args)]
struct DiscoverArgs {
    domain_hint: String,
    /// Which suggestion to turn into a specification (1-based).
    #[arg(long, default_value_t = 1)]
    pick: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    mock: MockArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "BIASTEST_PORT", default_value_t = 8080)]
    port: u16,
    /// Jobs executed at once.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[command(flatten)]
    mock: MockArgs,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let AppError::Validation { details: Some(d), .. } = &e {
                if let Ok(pretty) = serde_json::to_string_pretty(d) {
                    eprintln!("{pretty}");
                }
            }
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), AppError> {
    let store = Store::open(&cli.data_dir)?;
    match cli.command {
        Command::Specs { action } => specs(&store, action),
        Command::Generate(a) => generate(&store, a),
        Command::Templates(a) => templates(&store, a),
        Command::Test(a) => test(&store, a),
        Command::Quality(a) => quality(&store, a),
        Command::Compare(a) => compare(&store, a),
        Command::Discover(a) => discover(a),
        Command::Serve(a) => serve(store, a),
    }
}

fn read_spec_file(path: &Path) -> Result<BiasSpecification, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    BiasSpecification::from_json(&text).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))
}

fn print_warnings(spec: &ValidatedSpec) {
    for w in spec.warnings() {
        eprintln!("warning: {w}");
    }
}

fn specs(store: &Store, action: SpecsAction) -> Result<(), AppError> {
    match action {
        SpecsAction::List => {
            for spec in store.list_specs()? {
                let s = spec.spec();
                println!(
                    "{}\t{} vs {}\t{} vs {}",
                    s.name, s.group1_label, s.group2_label, s.attr1_label, s.attr2_label
                );
            }
        }
        SpecsAction::Add { file } => {
            let spec = validate_spec(read_spec_file(&file)?)?;
            print_warnings(&spec);
            let path = store.save_spec(&spec)?;
            println!("stored {} at {}", spec.name(), path.display());
        }
        SpecsAction::Validate { file } => {
            let spec = validate_spec(read_spec_file(&file)?)?;
            print_warnings(&spec);
            println!("{} is valid ({} sentence pairs per template)", spec.name(), spec.pair_count());
        }
    }
    Ok(())
}

fn store_dataset(
    store: &Store,
    spec: &ValidatedSpec,
    dataset: &DatasetFile,
    out: Option<&Path>,
) -> Result<String, AppError> {
    let run_id = store.save_dataset(dataset)?;
    if let Some(path) = out {
        datastore::save(dataset, path)?;
    }
    println!("stored {} sentences for {} as run {run_id}", dataset.len(), spec.name());
    Ok(run_id)
}

fn generate(store: &Store, a: GenerateArgs) -> Result<(), AppError> {
    let spec = resolve_spec(store, &a.spec)?;
    print_warnings(&spec);
    let config = GenerationConfig {
        batch_size: a.batch,
        per_attribute_quota: a.quota,
        max_tries: a.max_tries,
        concurrency_limit: a.concurrency,
        chat_model: a
            .model
            .or_else(default_chat_model)
            .unwrap_or_else(|| GenerationConfig::default().chat_model),
        seed: a.seed,
        rewrite: match a.rewrite {
            RewriteArg::Chat => RewriteStrategy::Chat,
            RewriteArg::Deterministic => RewriteStrategy::Deterministic,
        },
        fixed_timestamp: a.timestamp,
        ..GenerationConfig::default()
    };
    config.validate()?;
    let chat = chat_client(None, a.mock.config(a.seed))?;
    let created_at = a.timestamp.unwrap_or_else(Utc::now);

    let (output, failure) = match generate_for_spec(&spec, &config, chat.as_ref()) {
        Ok(out) => (out, None),
        Err(GenError::ChatBackendUnavailable { reason, partial: Some(p) }) if !p.sentences.is_empty() => {
            (*p, Some(AppError::Backend(format!("chat backend unavailable: {reason}; partial run stored"))))
        }
        Err(e) => return Err(e.into()),
    };
    let report = &output.report;
    println!(
        "requested {}, accepted {}, stored {}, acceptance rate {:.3}",
        report.requested, report.accepted, report.stored, report.acceptance_rate
    );
    for s in &report.shortfalls {
        eprintln!("warning: {} has {} of {} sentences", s.attribute_term, s.stored, s.wanted);
    }
    if output.sentences.is_empty() {
        return Err(AppError::Backend("no sentence passed the filters".into()));
    }
    let mut dataset = DatasetFile::new(spec.spec().clone(), output.sentences.clone(), created_at);
    dataset.generator_metadata.insert("config".into(), serde_json::to_value(&config).unwrap_or_default());
    dataset.generator_metadata.insert("report".into(), serde_json::to_value(report).unwrap_or_default());
    store_dataset(store, &spec, &dataset, a.out.as_deref())?;
    failure.map_or(Ok(()), Err)
}

fn templates(store: &Store, a: TemplatesArgs) -> Result<(), AppError> {
    let spec = resolve_spec(store, &a.spec)?;
    print_warnings(&spec);
    let templates = match &a.templates {
        Some(path) => parse_templates(
            &std::fs::read_to_string(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?,
        ),
        None => bundled_templates(spec.name()).ok_or_else(|| {
            AppError::validation(format!("no bundled templates for {}; pass --templates", spec.name()))
        })?,
    };
    if templates.is_empty() {
        return Err(AppError::validation("the template file has no patterns"));
    }
    let sentences = fill_templates(&spec, &templates)?;
    let mut dataset = DatasetFile::new(spec.spec().clone(), sentences, a.timestamp.unwrap_or_else(Utc::now));
    dataset.generator_metadata.insert("source".into(), "templates".into());
    store_dataset(store, &spec, &dataset, a.out.as_deref())?;
    Ok(())
}

/// A dataset file, a stored run id, or (when `arg` is `None`) every stored
/// run of the specification.
fn load_dataset(store: &Store, spec: Option<&ValidatedSpec>, arg: Option<&str>) -> Result<DatasetFile, AppError> {
    match (arg, spec) {
        (Some(a), _) if Path::new(a).is_file() => Ok(datastore::load(Path::new(a))?),
        (Some(a), Some(spec)) => Ok(store.load_dataset(spec.name(), a)?),
        (Some(a), None) => Err(AppError::validation(format!("{a} is not a dataset file; pass --spec to use a stored run"))),
        (None, Some(spec)) => store.merged_dataset(spec.name())?.ok_or_else(|| {
            AppError::validation(format!("no stored sentences for {}; run templates or generate first", spec.name()))
        }),
        (None, None) => Err(AppError::validation("pass --dataset or --spec")),
    }
}

fn test(store: &Store, a: TestArgs) -> Result<(), AppError> {
    let spec = resolve_spec(store, &a.spec)?;
    let dataset = load_dataset(store, Some(&spec), a.dataset.as_deref())?;
    if dataset.spec.name != spec.name() {
        return Err(AppError::validation(format!(
            "dataset belongs to {}, not {}",
            dataset.spec.name,
            spec.name()
        )));
    }
    let scorer = scorer_from_arg(&a.scorer, a.model_id.as_deref(), a.normalization.into())?;
    let options = BootstrapOptions {
        k_per_attribute: a.k,
        replicates: a.replicates,
        seed: a.seed,
    };
    let result = bootstrap_ss(&dataset.sentences, &spec, scorer.as_ref(), &options)?;

    println!("spec: {}  model: {}  pairs: {}", result.spec_name, result.model_id, result.pair_count);
    println!("overall SS: {:.1}", result.overall_ss);
    if let Some(b) = &result.bootstrap {
        println!(
            "bootstrap SS: {:.2} ± {:.2} (k={}, {} replicates, seed {})",
            b.mean_ss, b.sd_ss, b.k_per_attribute, b.replicates, b.seed
        );
        for w in &b.warnings {
            eprintln!("warning: {w}");
        }
    }
    for (term, ss) in &result.per_attribute_ss {
        println!("  {term}: {ss:.1}");
    }
    if let Some(path) = &a.out {
        write_json(path, &result)?;
    }
    if let Some(path) = &a.export {
        datastore::export_result_csv(&result, a.export_replicates, path)?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| AppError::Internal(format!("{}: {e}", path.display())))
}

fn quality(store: &Store, a: QualityArgs) -> Result<(), AppError> {
    let spec = a.spec.as_deref().map(|s| resolve_spec(store, s)).transpose()?;
    let dataset = load_dataset(store, spec.as_ref(), a.dataset.as_deref())?;
    let texts: Vec<&str> = dataset.sentences.iter().map(|s| s.text.as_str()).collect();
    let options = QualityOptions {
        sample_size: a.sample_size,
        trials: a.trials,
        seed: a.seed,
        ..QualityOptions::default()
    };
    let classifier = HttpToxicityClassifier::from_env();
    let report = quality_report(&texts, &options, classifier.as_ref().map(|c| c as &dyn ToxicityClassifier))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| AppError::Internal(e.to_string()))?);
    } else {
        print!("{}", report.summary());
    }
    Ok(())
}

fn load_result(store: &Store, arg: &str) -> Result<BiasTestResult, AppError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::validation(format!("{arg}: {e}")))?;
        return serde_json::from_str(&text).map_err(|e| AppError::validation(format!("{arg}: {e}")));
    }
    Ok(store.load_result(arg)?)
}

fn compare(store: &Store, a: CompareArgs) -> Result<(), AppError> {
    let ra = load_result(store, &a.a)?;
    let rb = load_result(store, &a.b)?;
    println!("A: {} on {}  SS {:.1}", ra.model_id, ra.spec_name, ra.overall_ss);
    println!("B: {} on {}  SS {:.1}", rb.model_id, rb.spec_name, rb.overall_ss);

    let reps = |r: &BiasTestResult| r.bootstrap.as_ref().map(|b| b.replicate_ss.clone());
    match (reps(&ra), reps(&rb)) {
        (Some(xa), Some(xb)) => match welch_ttest(&xa, &xb) {
            Ok(t) => println!(
                "Welch t = {:.4}, df = {:.2}, p = {:.6} ({} at alpha = {ALPHA})",
                t.t_statistic,
                t.degrees_of_freedom,
                t.p_value,
                if t.significant { "significant" } else { "not significant" }
            ),
            Err(MetricsError::DegenerateVariance) => {
                println!("Welch t-test: both replicate sets have zero variance (DegenerateVariance); no test possible")
            }
            Err(e) => return Err(e.into()),
        },
        _ => println!("Welch t-test: skipped, a result has no bootstrap replicates"),
    }

    let common: Vec<(&String, f64, f64)> = ra
        .per_attribute_ss
        .iter()
        .filter_map(|(k, x)| rb.per_attribute_ss.get(k).map(|y| (k, *x, *y)))
        .collect();
    if common.is_empty() {
        println!("no attribute terms in common");
        return Ok(());
    }
    let xs: Vec<f64> = common.iter().map(|c| c.1).collect();
    let ys: Vec<f64> = common.iter().map(|c| c.2).collect();
    let c = compare_estimates(&xs, &ys)?;
    println!("per-attribute mean difference (A - B): {:.3} over {} terms", c.mean_difference, xs.len());
    match c.pearson_rho {
        Some(r) => println!("Pearson rho: {r:.4}"),
        None => println!("Pearson rho: undefined (a series is constant)"),
    }
    Ok(())
}

fn discover(a: DiscoverArgs) -> Result<(), AppError> {
    let chat = chat_client(None, a.mock.config(a.seed))?;
    let mut options = DiscoveryOptions {
        pick: a.pick.max(1),
        ..DiscoveryOptions::default()
    };
    if let Some(m) = default_chat_model() {
        options.model = m;
    }
    let drafts = discover_bias_candidates(&a.domain_hint, chat.as_ref(), &options)?;
    let mut stdout = std::io::stdout().lock();
    for draft in drafts {
        let verdict = match validate_spec(draft.clone()) {
            Ok(_) => "valid".to_string(),
            Err(e) => format!("invalid: {e}"),
        };
        eprintln!("draft {}: {verdict}", draft.name);
        let text = serde_json::to_string_pretty(&draft).map_err(|e| AppError::Internal(e.to_string()))?;
        let _ = writeln!(stdout, "{text}");
    }
    Ok(())
}

fn serve(store: Store, a: ServeArgs) -> Result<(), AppError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| AppError::validation(format!("bad listen address: {e}")))?;
    let state = AppState::new(store, a.workers, a.mock.config(0));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| AppError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| AppError::Internal(format!("cannot bind {addr}: {e}")))?;
        tracing::info!("listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| AppError::Internal(e.to_string()))
    })
}
