//! The `kglink` command line: `ingest`, `link`, `eval` and `serve`.
//!
//! Exit codes: 0 success, 1 data or configuration error, 2 pipeline error
//! (partial output is still printed), 64 usage error.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use kglink_core::eval::{evaluate, load_dataset, EvalOptions, DEFAULT_HITS};
use kglink_core::index::{read_ntriples_labels, read_tsv, LabelIndex, LabelRecord, MalformedRecord};
use kglink_core::kg::{FixtureStore, KnowledgeGraph, SparqlClient, SparqlClientConfig};
use kglink_core::llm::{CompletionClient, CompletionClientConfig, LlmBackend, MockLlm, RecordingLlm, ReplayLlm};
use kglink_core::pipeline::{result_rows, LinkMode, Linker, Pipeline, PipelineSettings};
use kglink_service::{Service, ServiceConfig};
use serde_json::json;

use crate::config::{Config, LlmBackendKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Rule table used by `--llm mock` when `--mock-rules` is not given.
pub const BUNDLED_MOCK_RULES: &str = include_str!("../../../fixtures/mock_rules.json");

#[derive(Debug, Parser)]
#[command(name = "kglink", version, about = "Zero-shot entity linking against a scholarly knowledge graph")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Language model backend.
    #[arg(long, global = true, value_enum)]
    pub llm: Option<LlmBackendKind>,
    /// Completion endpoint URL for `--llm http`.
    #[arg(long, global = true, value_name = "URL")]
    pub llm_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    /// Rule table for `--llm mock`.
    #[arg(long, global = true, value_name = "FILE")]
    pub mock_rules: Option<PathBuf>,
    /// Recorded interactions for `--llm replay`.
    #[arg(long, global = true, value_name = "FILE")]
    pub cassette: Option<PathBuf>,
    /// N-Triples file used as the knowledge graph.
    #[arg(long, global = true, value_name = "FILE")]
    pub kg: Option<PathBuf>,
    #[arg(long, global = true, value_name = "URL")]
    pub sparql_endpoint: Option<String>,
    /// Label index directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub index: Option<PathBuf>,
    /// Candidates per mention.
    #[arg(short = 'n', global = true)]
    pub n: Option<usize>,
    /// Neighborhood facts per candidate.
    #[arg(short = 'k', global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub call_budget: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a label index from TSV or N-Triples and save it to --index.
    Ingest {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Link one text and print the ranked candidates as JSON.
    Link {
        /// Input text; `-` reads standard input.
        text: String,
        #[arg(long, default_value = "full")]
        mode: LinkMode,
        /// Include wall-clock stage timings in the output.
        #[arg(long)]
        timings: bool,
        /// Save every model interaction to a cassette file.
        #[arg(long, value_name = "FILE")]
        record: Option<PathBuf>,
    },
    /// Evaluate on a question set and print metrics.
    Eval {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, default_value = "full")]
        mode: LinkMode,
        /// Hits@K cutoffs.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HITS)]
        hits: Vec<usize>,
        /// Questions linked concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write metrics.json and metrics.txt into this directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        queue_capacity: Option<usize>,
        #[arg(long, value_name = "DIR")]
        ui_dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Ingest { .. } => "ingest",
            Self::Link { .. } => "link",
            Self::Eval { .. } => "eval",
            Self::Serve { .. } => "serve",
        }
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

/// Resolves the configuration: defaults, file, environment, flags.
pub fn effective_config<I>(cli: &Cli, env: I) -> Result<Config, Failure>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut c = match &cli.config {
        Some(path) => Config::from_file(path).map_err(|e| Failure::data(e.to_string()))?,
        None => Config::default(),
    };
    c.apply_env(env).map_err(|e| Failure::data(e.to_string()))?;
    let o = &cli.overrides;
    if let Some(v) = o.llm {
        c.llm.backend = v;
    }
    if let Some(v) = &o.llm_endpoint {
        c.llm.endpoint = Some(v.clone());
    }
    if let Some(v) = &o.llm_model {
        c.llm.model = Some(v.clone());
    }
    if let Some(v) = &o.mock_rules {
        c.llm.mock_rules = Some(v.clone());
    }
    if let Some(v) = &o.cassette {
        c.llm.cassette = Some(v.clone());
    }
    if let Some(v) = &o.kg {
        c.kg.fixture = Some(v.clone());
    }
    if let Some(v) = &o.sparql_endpoint {
        c.kg.sparql_endpoint = Some(v.clone());
    }
    if let Some(v) = &o.index {
        c.index = Some(v.clone());
    }
    if let Some(v) = o.n {
        c.linking.n = v;
    }
    if let Some(v) = o.k {
        c.linking.k = v;
    }
    if let Some(v) = o.call_budget {
        c.linking.call_budget = v;
    }
    if let Command::Serve {
        bind,
        workers,
        queue_capacity,
        ui_dir,
    } = &cli.command
    {
        if let Some(v) = bind {
            c.service.bind = v.clone();
        }
        if let Some(v) = workers {
            c.service.workers = *v;
        }
        if let Some(v) = queue_capacity {
            c.service.queue_capacity = *v;
        }
        if let Some(v) = ui_dir {
            c.service.ui_dir = Some(v.clone());
        }
    }
    c.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(c)
}

pub fn build_llm(config: &Config) -> Result<Arc<dyn LlmBackend>, Failure> {
    let llm = &config.llm;
    Ok(match llm.backend {
        LlmBackendKind::Mock => Arc::new(match &llm.mock_rules {
            Some(path) => MockLlm::from_file(path).map_err(Failure::data)?,
            None => MockLlm::from_json(BUNDLED_MOCK_RULES).map_err(Failure::data)?,
        }),
        LlmBackendKind::Replay => {
            let path = llm
                .cassette
                .as_ref()
                .ok_or_else(|| Failure::data("--llm replay needs --cassette"))?;
            Arc::new(ReplayLlm::from_file(path).map_err(Failure::data)?)
        }
        LlmBackendKind::Http => {
            let endpoint = llm
                .endpoint
                .clone()
                .ok_or_else(|| Failure::data("--llm http needs --llm-endpoint (or llm.endpoint in the config)"))?;
            let client = CompletionClient::new(CompletionClientConfig {
                endpoint,
                model: llm.model.clone(),
                api_key: llm.api_key.clone(),
                max_in_flight: llm.max_in_flight,
                timeout_secs: llm.timeout_secs,
            })
            .map_err(|e| Failure::data(e.to_string()))?;
            Arc::new(client)
        }
    })
}

fn index_from_labels(store_path: &Path) -> Result<LabelIndex, Failure> {
    let file = std::fs::File::open(store_path).map_err(|e| Failure::data(format!("{}: {e}", store_path.display())))?;
    let (records, errors) = read_ntriples_labels(std::io::BufReader::new(file));
    for e in &errors {
        eprintln!("warning: {}:{}: {}", store_path.display(), e.line, e.reason);
    }
    let mut index = LabelIndex::new();
    index.ingest(records);
    Ok(index)
}

pub fn build_pipeline(config: &Config, llm: Arc<dyn LlmBackend>) -> Result<Pipeline, Failure> {
    let kg: Arc<dyn KnowledgeGraph> = match (&config.kg.fixture, &config.kg.sparql_endpoint) {
        (Some(path), _) => Arc::new(FixtureStore::from_file(path).map_err(Failure::data)?),
        (None, Some(endpoint)) => {
            let mut sc = SparqlClientConfig::new(endpoint.clone());
            if let Some(v) = config.kg.max_in_flight {
                sc.max_in_flight = v;
            }
            if let Some(v) = config.kg.timeout_secs {
                sc.timeout_secs = v;
            }
            Arc::new(SparqlClient::new(sc).map_err(|e| Failure::data(e.to_string()))?)
        }
        (None, None) => return Err(Failure::data("no knowledge graph: pass --kg or --sparql-endpoint")),
    };
    let index = match (&config.index, &config.kg.fixture) {
        (Some(dir), _) => LabelIndex::open(dir).map_err(|e| Failure::data(e.to_string()))?,
        (None, Some(path)) => index_from_labels(path)?,
        (None, None) => return Err(Failure::data("no label index: pass --index (see `kglink ingest`) or --kg")),
    };
    let settings = PipelineSettings {
        n: config.linking.n,
        k: config.linking.k,
        scoring_top_k: config.linking.scoring_top_k,
        call_budget: config.linking.call_budget,
    };
    Ok(Pipeline::new(llm, Arc::new(index), kg, settings))
}

fn print_json(value: &impl serde::Serialize) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
    let _ = out.flush();
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::data(format!("cannot start runtime: {e}")))
}

fn read_records(input: &Path) -> Result<(Vec<LabelRecord>, Vec<MalformedRecord>), Failure> {
    let file = std::fs::File::open(input).map_err(|e| Failure::data(format!("{}: {e}", input.display())))?;
    let reader = std::io::BufReader::new(file);
    if input.extension().is_some_and(|e| e == "nt") {
        return Ok(read_ntriples_labels(reader));
    }
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for r in read_tsv(reader) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(e),
        }
    }
    Ok((records, errors))
}

fn run_ingest(config: &Config, input: &Path) -> Result<i32, Failure> {
    let dir = config
        .index
        .as_ref()
        .ok_or_else(|| Failure::usage("ingest needs --index DIR for the output"))?;
    let (records, errors) = read_records(input)?;
    for e in &errors {
        eprintln!("warning: {}:{}: {}", input.display(), e.line, e.reason);
    }
    let mut index = LabelIndex::new();
    let stats = index.ingest(records);
    index.save(dir).map_err(|e| Failure::data(e.to_string()))?;
    print_json(&json!({
        "index": dir,
        "per_type": stats.per_type,
        "total": stats.total,
        "malformed_lines": errors.len(),
    }));
    Ok(EXIT_OK)
}

fn read_text(text: &str) -> Result<String, Failure> {
    let text = if text == "-" {
        let mut buf = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut buf)
            .map_err(|e| Failure::data(format!("stdin: {e}")))?;
        buf
    } else {
        text.to_string()
    };
    if text.trim().is_empty() {
        return Err(Failure::usage("input text is empty"));
    }
    Ok(text)
}

fn run_link(config: &Config, text: &str, mode: LinkMode, timings: bool, record: Option<&Path>) -> Result<i32, Failure> {
    let text = read_text(text)?;
    let llm = build_llm(config)?;
    let recorder = record.map(|_| Arc::new(RecordingLlm::new(llm.clone())));
    let llm: Arc<dyn LlmBackend> = match &recorder {
        Some(r) => r.clone(),
        None => llm,
    };
    let pipeline = build_pipeline(config, llm)?;
    let result = runtime()?.block_on(pipeline.link(&text, mode));
    if let (Some(rec), Some(path)) = (&recorder, record) {
        rec.save(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    let result = if timings { result } else { result.without_timings() };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for e in &result.errors {
        eprintln!("error: {}: {}", e.stage.as_str(), e.message);
    }
    print_json(&json!({ "rows": result_rows(&result), "result": result }));
    Ok(if result.errors.is_empty() { EXIT_OK } else { EXIT_PIPELINE })
}

fn run_eval(config: &Config, dataset: &Path, options: EvalOptions, out: Option<&Path>) -> Result<i32, Failure> {
    let data = load_dataset(dataset).map_err(|e| Failure::data(e.to_string()))?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    let pipeline = build_pipeline(config, build_llm(config)?)?;
    let metrics = runtime()?.block_on(evaluate(&data.items, &pipeline as &dyn Linker, &options));
    let table = metrics.to_table();
    eprint!("{table}");
    if let Some(dir) = out {
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
        };
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
        write("metrics.json", serde_json::to_string_pretty(&metrics).unwrap_or_default() + "\n")?;
        write("metrics.txt", table)?;
    }
    print_json(&metrics);
    Ok(if metrics.errored > 0 { EXIT_PIPELINE } else { EXIT_OK })
}

fn run_serve(config: &Config) -> Result<i32, Failure> {
    let pipeline = build_pipeline(config, build_llm(config)?)?;
    let service = Service::new(
        Arc::new(pipeline),
        ServiceConfig {
            workers: config.service.workers,
            queue_capacity: config.service.queue_capacity,
            job_ttl: Duration::from_secs(config.service.job_ttl_secs),
            ui_dir: config.service.ui_dir.clone(),
        },
        serde_json::to_value(config.redacted()).unwrap_or_default(),
    );
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.service.bind)
            .await
            .map_err(|e| Failure::data(format!("cannot bind {}: {e}", config.service.bind)))?;
        let addr = listener.local_addr().map_err(|e| Failure::data(e.to_string()))?;
        tracing::info!(%addr, "listening");
        // one line, so wrappers can read the address before the first request
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", json!({ "listening": format!("http://{addr}") }));
        let _ = out.flush();
        drop(out);
        service.spawn_sweeper();
        axum::serve(listener, service.router())
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure::data(e.to_string()))?;
        Ok(EXIT_OK)
    })
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();

    let outcome = effective_config(&cli, std::env::vars()).and_then(|config| {
        if cli.dry_run {
            print_json(&json!({ "command": cli.command.name(), "config": config.redacted() }));
            return Ok(EXIT_OK);
        }
        match &cli.command {
            Command::Ingest { input } => run_ingest(&config, input),
            Command::Link {
                text,
                mode,
                timings,
                record,
            } => run_link(&config, text, *mode, *timings, record.as_deref()),
            Command::Eval {
                dataset,
                mode,
                hits,
                jobs,
                out,
            } => {
                if hits.is_empty() || hits.contains(&0) || *jobs == 0 {
                    return Err(Failure::usage("--hits values and --jobs must be at least 1"));
                }
                let options = EvalOptions {
                    mode: *mode,
                    hits: hits.clone(),
                    jobs: *jobs,
                };
                run_eval(&config, dataset, options, out.as_deref())
            }
            Command::Serve { .. } => run_serve(&config),
        }
    });
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
