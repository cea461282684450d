use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use policy_tree::baselines::FittedQConfig;
use policy_tree::env::{load_params, EnvKind, GridWorldParams};
use policy_tree::exec::{ControllerConfig, LeafPolicy, LiveEnv};
use policy_tree::experiments::{compare_policies, emit_table, run_sweep, SweepParam, SweepSpec, TableFormat};
use policy_tree::export::{render_dot, DotStyle, TreeDocument, WidthScale};
use policy_tree::par::{init_threads_from_env, Execution};
use policy_tree::setup::{instantiate, BaselineKind, EnvParams};
use policy_tree::tree::DeltaAggregation;
use policy_tree::{build_tree, BuildConfig};
use policy_tree_service::{router, AppState, DirStore, MemoryStore, SessionStore};
use serde::Deserialize;

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "ptree", version, about = "Surrogate policy trees for MDP and POMDP controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paired tree-vs-baseline trials over one swept parameter (grid world).
    Sweep(SweepArgs),
    /// Build one tree at an environment's initial state.
    Build(BuildArgs),
    /// Convert a tree document to DOT or JSON.
    Export(ExportArgs),
    /// Mean returns of tree, baseline and random policies.
    Compare(CompareArgs),
    /// Run the session HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// TOML file with any of the flags below plus [grid], [build] and
    /// [controller] tables. Flags win over the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// `name=v1,v2,...`, e.g. `p=0.5,0.7,0.9,1.0`.
    #[arg(long)]
    vary: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Use 2500 trials per configuration.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// `mean` or `sum`.
    #[arg(long)]
    aggregation: Option<String>,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `plain` or `csv`. Defaults to csv for `.csv` outputs.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepFile {
    env: Option<String>,
    vary: Option<String>,
    trials: Option<usize>,
    full: bool,
    seed: Option<u64>,
    aggregation: Option<String>,
    sequential: bool,
    out: Option<PathBuf>,
    format: Option<String>,
    vi_tolerance: Option<f64>,
    grid: Option<GridWorldParams>,
    build: Option<BuildConfig>,
    controller: Option<ControllerConfig>,
}

#[derive(Args)]
struct EnvArgs {
    #[arg(long, default_value = "grid")]
    env: String,
    /// Environment parameters as TOML.
    #[arg(long)]
    params: Option<PathBuf>,
    /// value_iteration, fitted_q, lookahead or scripted.
    #[arg(long)]
    baseline: Option<String>,
    /// Build settings as TOML.
    #[arg(long)]
    build_config: Option<PathBuf>,
    /// Fitted-Q training settings as TOML.
    #[arg(long)]
    training: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    tree: PathBuf,
    /// `dot` or `json`.
    #[arg(long, default_value = "dot")]
    format: String,
    /// Logarithmic pen widths.
    #[arg(long)]
    log_width: bool,
    /// Standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// baseline, rebuild or halt.
    #[arg(long, default_value = "baseline")]
    leaf_policy: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PTREE_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "PTREE_BIND", default_value = "127.0.0.1")]
    bind: String,
    /// Directory for session files; sessions are kept in memory otherwise.
    #[arg(long, env = "PTREE_STORE")]
    store: Option<PathBuf>,
}

/// Parses a snake_case enum through its serde representation.
fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown {what} `{s}`").into())
}

fn parse_vary(s: &str) -> CliResult<(SweepParam, Vec<f64>)> {
    let (name, values) = s.split_once('=').ok_or("--vary expects name=v1,v2,...")?;
    let param: SweepParam = name.trim().parse()?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad sweep value `{v}`")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("--vary needs at least one value".into());
    }
    Ok((param, values))
}

fn sweep(args: SweepArgs) -> CliResult {
    let file: SweepFile = match &args.config {
        Some(p) => load_params(p)?,
        None => SweepFile::default(),
    };
    let env = args.env.or(file.env).unwrap_or_else(|| "grid".into());
    if env.parse::<EnvKind>()? != EnvKind::Grid {
        return Err(format!("sweeps run on the grid environment, not `{env}`").into());
    }
    let mut spec = SweepSpec {
        grid: file.grid.unwrap_or_default(),
        build: file.build.unwrap_or_default(),
        controller: file.controller.unwrap_or_default(),
        ..SweepSpec::default()
    };
    if let Some(tol) = file.vi_tolerance {
        spec.vi_tolerance = tol;
    }
    if let Some(v) = args.vary.or(file.vary) {
        (spec.param, spec.values) = parse_vary(&v)?;
    }
    if args.full || file.full {
        spec.trials = 2500;
    }
    if let Some(t) = args.trials.or(file.trials) {
        spec.trials = t;
    }
    if let Some(s) = args.seed.or(file.seed) {
        spec.seed = s;
    }
    if let Some(a) = args.aggregation.or(file.aggregation) {
        spec.build.delta_aggregation = parse_enum::<DeltaAggregation>("aggregation", &a)?;
    }
    if args.sequential || file.sequential {
        spec.build.execution = Execution::Sequential;
    }
    let out = args.out.or(file.out);
    let format = match args.format.or(file.format) {
        Some(f) => f.parse()?,
        None if out.as_deref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv")) => TableFormat::Csv,
        None => TableFormat::Plain,
    };
    let rows = run_sweep(&spec)?;
    for row in &rows {
        if row.excluded > 0 {
            eprintln!("{}={}: {} trials excluded (baseline return 0)", spec.param.name(), row.value, row.excluded);
        }
    }
    write_output(out.as_deref(), &emit_table(&rows, format))
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_env(args: &EnvArgs) -> CliResult<(policy_tree::setup::Setup, BuildConfig)> {
    let kind: EnvKind = args.env.parse()?;
    let params = match &args.params {
        Some(p) => EnvParams::from_toml(kind, &std::fs::read_to_string(p)?)?,
        None => EnvParams::default_for(kind),
    };
    let baseline = match &args.baseline {
        Some(b) => b.parse()?,
        None => kind.default_baseline(),
    };
    let training: FittedQConfig = match &args.training {
        Some(p) => load_params(p)?,
        None => FittedQConfig::default(),
    };
    let build: BuildConfig = match &args.build_config {
        Some(p) => load_params(p)?,
        None => BuildConfig::default(),
    };
    if baseline == BaselineKind::FittedQ {
        eprintln!("training fitted-Q baseline ({} steps)", training.iterations);
    }
    Ok((instantiate(&params, baseline, &training, 0)?, build))
}

fn build(args: BuildArgs) -> CliResult {
    let (setup, mut cfg) = load_env(&args.env)?;
    cfg.seed = args.seed;
    let live = LiveEnv::new(setup.model.as_ref(), args.seed)?;
    let tree = build_tree(setup.model.as_ref(), setup.policy.as_ref(), live.initial_condition(), &cfg)?;
    let doc = TreeDocument::from_tree(&tree, setup.model.as_ref());
    doc.save(&args.out)?;
    eprintln!("{} nodes, most likely path length {}", doc.nodes.len(), doc.most_likely_path.len());
    Ok(())
}

fn export(args: ExportArgs) -> CliResult {
    let doc = TreeDocument::load(&args.tree)?;
    let text = match args.format.as_str() {
        "dot" => {
            let scale = if args.log_width { WidthScale::Log } else { WidthScale::Linear };
            render_dot(&doc, &DotStyle { scale, ..DotStyle::default() })
        }
        "json" => doc.to_json()? + "\n",
        other => return Err(format!("unknown export format `{other}`").into()),
    };
    write_output(args.out.as_deref(), &text)
}

fn compare(args: CompareArgs) -> CliResult {
    let (setup, build) = load_env(&args.env)?;
    let controller = ControllerConfig {
        leaf_policy: parse_enum::<LeafPolicy>("leaf policy", &args.leaf_policy)?,
        ..ControllerConfig::default()
    };
    let c = compare_policies(
        setup.model.as_ref(),
        setup.policy.as_ref(),
        &build,
        &controller,
        args.trials,
        args.seed,
        build.execution,
    )?;
    println!("policy    return        se");
    for (name, m) in [("tree", &c.tree), ("baseline", &c.baseline), ("random", &c.random)] {
        println!("{name:<9} {:>10.3}  {:>8.3}", m.mean, m.se);
    }
    println!("leaf depth {:.2} ± {:.2}", c.leaf_depth.mean, c.leaf_depth.se);
    Ok(())
}

async fn serve(args: ServeArgs) -> CliResult {
    let store: Arc<dyn SessionStore> = match &args.store {
        Some(dir) => Arc::new(DirStore::open(dir)?),
        None => Arc::new(MemoryStore::default()),
    };
    let app = router(Arc::new(AppState::new(store)));
    let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads_from_env();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Build(a) => build(a),
        Command::Export(a) => export(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => tokio::runtime::Runtime::new().map_err(Into::into).and_then(|rt| rt.block_on(serve(a))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
