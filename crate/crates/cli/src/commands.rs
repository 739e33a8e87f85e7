use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use map_core::datasets::{
    load_amazon, load_movielens, prepare_cross_domain, prepare_single_domain, read_prepared,
    write_prepared, CrossDomainRules, LoadReport, PreparedUser, SingleDomainRules,
};
use map_core::eval::{
    compare_reports, read_report, render_svg, write_report, write_trace_csv, EvalReport, Harness,
    PlotSeries, Protocol, ProtocolConfig, Recommender,
};
use map_core::{Domain, RetrievalConfig};

use crate::config::{write_catalog, AppConfig, StrategyName};
use crate::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "map", version, about = "Memory-assisted personalized recommendation")]
pub struct Cli {
    /// TOML config file. Defaults to $MAP_CONFIG, then ./map.toml if present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn raw dataset files into a prepared-users file.
    Prepare(PrepareArgs),
    /// Run an offline evaluation protocol.
    Eval {
        #[arg(value_enum)]
        protocol: ProtocolArg,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Print a side-by-side MAE table for two reports.
    Compare {
        /// Baseline report.
        baseline: PathBuf,
        /// Candidate report.
        candidate: PathBuf,
        /// Comma-separated history sizes to show.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        stub: Option<String>,
    },
    /// Chat on the terminal; one JSON event is printed per input line.
    Session {
        #[arg(long)]
        user: String,
        #[arg(long)]
        stub: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetArg {
    Movielens,
    Amazon,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetArg,
    /// Directory holding the raw files.
    #[arg(long)]
    pub dir: PathBuf,
    /// Prepared-users file. Defaults to <prepared_dir>/<dataset>.jsonl.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Minimum ratings per user (movie ratings for amazon).
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Ratings kept per user (movie ratings for amazon).
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Single,
    Cross,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RecommenderArg {
    Map,
    Baseline,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub recommender: RecommenderArg,
    /// Stub policy instead of the configured gateway: constant:R,
    /// echo-mean, genre-oracle:FILE or scripted:FILE.
    #[arg(long)]
    pub stub: Option<String>,
    /// Prepared-users file. Defaults to <prepared_dir>/movielens.jsonl or amazon.jsonl.
    #[arg(long)]
    pub users: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyName>,
    /// Shuffle seeds for the cross-domain protocol.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Evaluate only the first N users.
    #[arg(long)]
    pub limit: Option<usize>,
    /// History sizes as LO-HI.
    #[arg(long, value_parser = parse_range)]
    pub history: Option<(usize, usize)>,
    /// Output directory. Defaults to the configured reports dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint directory for resumable runs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once('-').unwrap_or((s, s));
    let lo = lo.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    Ok((lo, hi))
}

/// Usage problems exit with 1, everything else with 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn load_config(explicit: Option<&Path>) -> Result<AppConfig, CliError> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("MAP_CONFIG").map(PathBuf::from))
        .or_else(|| Some(PathBuf::from("map.toml")).filter(|p| p.is_file()));
    match path {
        Some(p) => AppConfig::load(&p).map_err(|e| CliError::Usage(format!("invalid config: {e}"))),
        None => Ok(AppConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Prepare(args) => prepare(&config, args),
        Command::Eval { protocol, args } => eval(&config, protocol, args),
        Command::Compare {
            baseline,
            candidate,
            sizes,
        } => compare(&baseline, &candidate, &sizes),
        Command::Serve { bind, stub } => serve(&config, bind, stub.as_deref()),
        Command::Session { user, stub } => session(&config, &user, stub.as_deref()),
    }
}

fn summarize_load(report: &LoadReport) {
    for f in &report.files {
        eprintln!("{}: {} lines, {} accepted, {} rejected", f.file, f.lines, f.accepted, f.rejected);
    }
    if report.excluded_no_metadata + report.excluded_no_categories > 0 {
        eprintln!(
            "excluded {} ratings without metadata, {} without categories",
            report.excluded_no_metadata, report.excluded_no_categories
        );
    }
}

fn prepare(config: &AppConfig, args: PrepareArgs) -> Result<(), CliError> {
    let (name, users, catalog) = match args.dataset {
        DatasetArg::Movielens => {
            let data = load_movielens(&args.dir).with_context(|| format!("loading {}", args.dir.display()))?;
            summarize_load(&data.report);
            let defaults = SingleDomainRules::default();
            let rules = SingleDomainRules {
                min_count: args.min_count.unwrap_or(defaults.min_count),
                cap: args.cap.unwrap_or(defaults.cap),
            };
            let users = prepare_single_domain(&data.interactions, &data.catalog, rules);
            ("movielens", users, data.catalog)
        }
        DatasetArg::Amazon => {
            let d = &args.dir;
            let movies = load_amazon(d.join("Movies_and_TV.csv"), d.join("meta_Movies_and_TV.json"), Domain::Movie)
                .context("loading Amazon movies")?;
            let books = load_amazon(d.join("Books.csv"), d.join("meta_Books.json"), Domain::Book)
                .context("loading Amazon books")?;
            summarize_load(&movies.report);
            summarize_load(&books.report);
            let defaults = CrossDomainRules::default();
            let rules = CrossDomainRules {
                movie_min: args.min_count.unwrap_or(defaults.movie_min),
                movie_cap: args.cap.unwrap_or(defaults.movie_cap),
            };
            let users = prepare_cross_domain(&movies.interactions, &movies.catalog, &books.interactions, &books.catalog, rules);
            let mut catalog = movies.catalog;
            catalog.merge(books.catalog);
            ("amazon", users, catalog)
        }
    };
    let output = args
        .output
        .unwrap_or_else(|| config.store.prepared_dir.join(format!("{name}.jsonl")));
    write_prepared(&output, &users).with_context(|| format!("writing {}", output.display()))?;
    let catalog_path = output.with_extension("catalog.json");
    write_catalog(&catalog_path, &catalog)?;
    let records: usize = users.iter().map(|u| u.history.len() + usize::from(u.cross_target.is_some())).sum();
    println!("{}: {} users, {} records", output.display(), users.len(), records);
    println!("{}: {} items", catalog_path.display(), catalog.len());
    Ok(())
}

fn eval(config: &AppConfig, protocol: ProtocolArg, args: EvalArgs) -> Result<(), CliError> {
    let (protocol, default_file, default_strategy) = match protocol {
        ProtocolArg::Single => (Protocol::SingleDomain, "movielens.jsonl", config.retrieval.strategy),
        ProtocolArg::Cross => (Protocol::CrossDomain, "amazon.jsonl", config.retrieval.cross_strategy),
    };
    let recommender = match args.recommender {
        RecommenderArg::Map => Recommender::Map,
        RecommenderArg::Baseline => Recommender::Baseline,
    };
    let (gateway, label) = config.gateway(args.stub.as_deref()).map_err(|e| CliError::Usage(format!("{e:#}")))?;
    let strategy = config.strategy(args.strategy.unwrap_or(default_strategy))?;
    let mut pc = ProtocolConfig::new(protocol, recommender);
    pc.retrieval = RetrievalConfig::with_k(args.k.unwrap_or(config.retrieval.k), strategy);
    pc.gateway_label = label;
    if let Some(range) = args.history {
        pc.history_range = range;
    }
    if !args.seeds.is_empty() {
        pc.shuffle_seeds = args.seeds;
    }
    pc.user_limit = args.limit;
    pc.checkpoint_dir = args.checkpoint;
    pc.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let users_path = args.users.unwrap_or_else(|| config.store.prepared_dir.join(default_file));
    let users: Vec<PreparedUser> =
        read_prepared(&users_path).with_context(|| format!("reading {}", users_path.display()))?;

    let harness = Harness::new(Arc::new(gateway), config.prompts()?);
    let report = harness.run(&pc, &users).context("evaluation failed")?;

    let out = args.out.unwrap_or_else(|| config.store.reports_dir.clone());
    let paths = write_outputs(&out, &report)?;
    print_series(&report);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Writes `<id>.json`, `<id>.csv` and `<id>.svg` under `dir`.
pub fn write_outputs(dir: &Path, report: &EvalReport) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = dir.join(format!("{}.json", report.report_id));
    write_report(&json, report)?;
    let csv = dir.join(format!("{}.csv", report.report_id));
    let file = std::fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    write_trace_csv(io::BufWriter::new(file), &report.traces)?;
    let svg = dir.join(format!("{}.svg", report.report_id));
    let title = format!("{} {} MAE by history size", report.recommender.label(), report.protocol.as_str());
    std::fs::write(&svg, render_svg(&title, &PlotSeries::from_report(report)))?;
    Ok(vec![json, csv, svg])
}

fn print_series(report: &EvalReport) {
    println!("{} ({} users, gateway {})", report.report_id, report.users, report.gateway);
    println!("{:>6}  {:>8}  {:>8}", "size", "MAE", "smoothed");
    for (size, v) in &report.mae_by_size {
        println!("{size:>6}  {v:>8.4}  {:>8.4}", report.smoothed_mae_by_size[size]);
    }
    println!(
        "tokens {} prompt / {} reply, ${:.4}; retried {}, imputed {}",
        report.ledger.prompt_tokens, report.ledger.reply_tokens, report.ledger.dollars, report.retried_traces, report.imputed_traces
    );
}

fn compare(baseline: &Path, candidate: &Path, sizes: &[usize]) -> Result<(), CliError> {
    let a = read_report(baseline).context("reading baseline report")?;
    let b = read_report(candidate).context("reading candidate report")?;
    let mut cmp = compare_reports(&a, &b).context("comparing reports")?;
    if !sizes.is_empty() {
        cmp = cmp.select(sizes);
    }
    print!("{}", cmp.render_table());
    Ok(())
}

fn serve(config: &AppConfig, bind: Option<String>, stub: Option<&str>) -> Result<(), CliError> {
    let bind = bind.unwrap_or_else(|| config.service.bind.clone());
    let addr: std::net::SocketAddr = bind.parse().map_err(|_| CliError::Usage(format!("bad bind address `{bind}`")))?;
    let state = AppState {
        engine: Arc::new(config.engine(stub)?),
        reports_dir: config.store.reports_dir.clone(),
    };
    let app = router(state, config.service.console_dir.as_deref());
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")
    })?;
    Ok(())
}

fn session(config: &AppConfig, user: &str, stub: Option<&str>) -> Result<(), CliError> {
    map_core::types::validate_user_id(user).map_err(|e| CliError::Usage(e.to_string()))?;
    let engine = config.engine(stub)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in io::stdin().lock().lines() {
        let line = line.context("reading stdin")?;
        if line.trim().is_empty() {
            continue;
        }
        match engine.handle_query(user, &line) {
            Ok(event) => {
                serde_json::to_writer(&mut out, &event).context("writing event")?;
                writeln!(out).context("writing event")?;
            }
            Err(e) => {
                if matches!(e, map_core::session::SessionError::Gateway(_)) {
                    return Err(CliError::Runtime(anyhow::Error::new(e)));
                }
                eprintln!("error: {e}");
            }
        }
    }
    if !engine.store().is_persistent() {
        eprintln!("note: profiles are kept in memory; set store.profiles_dir to persist them");
    }
    Ok(())
}
