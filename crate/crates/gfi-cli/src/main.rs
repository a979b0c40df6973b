//! Command-line driver: simulation runs, spectral solves, phase sweeps,
//! the critical-curve root finder, coupled-pair dumps and the
//! verification suite.
//!
//! Every artifact embeds the resolved configuration, master seed,
//! parameter hash and toolkit version. JSON results are wrapped,
//! CSV tables carry `#`-prefixed metadata lines above the header.
//! Results are cached under `<out>/.cache/<command>-<hash>` unless
//! `--no-cache` is given.
//!
//! Exit codes: 0 success, 1 validation error, 2 verification failure,
//! 3 resource cap.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use gfi_core::events::SimOptions;
use gfi_core::forest::ForestState;
use gfi_core::params::{Params, Variant};
use gfi_core::seeds;
use gfi_core::spectral::{self, GeneratorVariant, PerronOptions, PerronTriple};
use gfi_core::{coupling, export, forest, sizes, verification, Error};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "gfi", version, about = "Growth-fragmentation-isolation toolkit")]
struct Cli {
    /// Output directory (env: GFI_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (env: GFI_THREADS); defaults to available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file mirroring the flags; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bypass the result cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replica simulations and write snapshot tables.
    Simulate(SimulateArgs),
    /// Solve the Perron triple at one parameter point.
    Spectral(SpectralArgs),
    /// Sweep the exponent over a (theta, gamma) grid.
    Phase(PhaseArgs),
    /// Find the critical fragmentation rate for 0 < theta < beta.
    Critical(CriticalArgs),
    /// Run the full verification suite and write the report.
    Verify(VerifyArgs),
    /// Sample monotone coupled process pairs and dump them for audit.
    Couple(CoupleArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct RateArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    rates: RateArgs,
    /// standard | modified-edge-isolation | growth-only
    #[arg(long)]
    variant: Option<String>,
    /// tree | size
    #[arg(long)]
    fidelity: Option<String>,
    #[arg(long)]
    initial_size: Option<u32>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Comma-separated observation times.
    #[arg(long)]
    obs: Option<String>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cluster_cap: Option<usize>,
    /// Also write the event log as JSON lines.
    #[arg(long)]
    record_events: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SpectralArgs {
    #[command(flatten)]
    rates: RateArgs,
    /// standard | modified-edge-isolation | vertex-removal
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Cross-validate the root against the finite-difference log slope.
    #[arg(long)]
    fdm_check: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct PhaseArgs {
    #[arg(long)]
    beta: Option<f64>,
    /// Grid as start:end:count.
    #[arg(long)]
    theta_grid: Option<String>,
    #[arg(long)]
    gamma_grid: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CriticalArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Run only these comma-separated criterion numbers (default: all).
    #[arg(long)]
    only: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CoupleArgs {
    #[arg(long)]
    n0: Option<u32>,
    #[arg(long)]
    n0_fast: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    beta_fast: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    pairs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Merge precedence: explicit flag, then config file, then default.
fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn file_f64(cfg: &serde_json::Value, key: &str) -> Option<f64> {
    cfg.get(key).and_then(|v| v.as_f64())
}

fn file_u64(cfg: &serde_json::Value, key: &str) -> Option<u64> {
    cfg.get(key).and_then(|v| v.as_u64())
}

fn file_str(cfg: &serde_json::Value, key: &str) -> Option<String> {
    cfg.get(key).and_then(|v| v.as_str()).map(|s| s.to_string())
}

fn parse_variant(name: &str) -> Result<Variant, Error> {
    match name {
        "standard" => Ok(Variant::Standard),
        "modified" | "modified-edge-isolation" => Ok(Variant::ModifiedEdgeIsolation),
        "growth-only" => Ok(Variant::GrowthOnly),
        other => Err(Error::InvalidArgument(format!("unknown variant '{other}'"))),
    }
}

fn parse_generator_variant(name: &str) -> Result<GeneratorVariant, Error> {
    match name {
        "standard" => Ok(GeneratorVariant::Standard),
        "modified" | "modified-edge-isolation" => Ok(GeneratorVariant::ModifiedEdgeIsolation),
        "vertex-removal" => Ok(GeneratorVariant::VertexRemoval),
        other => Err(Error::InvalidArgument(format!("unknown generator variant '{other}'"))),
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Error> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("grid '{text}' is not start:end:count")));
    }
    let start: f64 = parts[0].parse().map_err(|_| bad_grid(text))?;
    let end: f64 = parts[1].parse().map_err(|_| bad_grid(text))?;
    let count: usize = parts[2].parse().map_err(|_| bad_grid(text))?;
    if count == 0 {
        return Err(bad_grid(text));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    Ok((0..count).map(|i| start + (end - start) * i as f64 / (count - 1) as f64).collect())
}

fn bad_grid(text: &str) -> Error {
    Error::InvalidArgument(format!("cannot parse grid '{text}'"))
}

fn parse_times(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad time '{t}'")))
        })
        .collect()
}

fn parameter_hash(config: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.to_string().as_bytes());
    let digest = hasher.finalize();
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

fn artifact_meta(config: &serde_json::Value, seed: u64) -> (String, serde_json::Value) {
    let hash = parameter_hash(config);
    let meta = serde_json::json!({
        "config": config,
        "seed": seed,
        "parameter_hash": hash,
        "version": VERSION,
    });
    (hash, meta)
}

fn wrap_json(meta: &serde_json::Value, result: serde_json::Value) -> String {
    let mut obj = meta.as_object().expect("meta object").clone();
    obj.insert("result".into(), result);
    serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("serializable") + "\n"
}

fn csv_preamble(meta: &serde_json::Value) -> String {
    format!(
        "# config: {}\n# seed: {}\n# parameter_hash: {}\n# version: {}\n",
        meta["config"], meta["seed"], meta["parameter_hash"], meta["version"]
    )
}

struct Io {
    out_dir: PathBuf,
    cache: bool,
}

impl Io {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Error> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }

    fn cache_path(&self, command: &str, hash: &str, name: &str) -> PathBuf {
        self.out_dir.join(".cache").join(format!("{command}-{hash}")).join(name)
    }

    fn cached(&self, command: &str, hash: &str, name: &str) -> Option<String> {
        if !self.cache {
            return None;
        }
        fs::read_to_string(self.cache_path(command, hash, name)).ok()
    }

    fn store(&self, command: &str, hash: &str, name: &str, contents: &str) -> Result<(), Error> {
        if !self.cache {
            return Ok(());
        }
        let path = self.cache_path(command, hash, name);
        fs::create_dir_all(path.parent().expect("cache dir"))?;
        fs::write(path, contents)?;
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<serde_json::Value, Error> {
    match path {
        None => Ok(serde_json::Value::Object(Default::default())),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn cmd_simulate(args: &SimulateArgs, file: &serde_json::Value, io: &Io) -> Result<(), Error> {
    let beta = pick(args.rates.beta, file_f64(file, "beta"), 1.0);
    let theta = pick(args.rates.theta, file_f64(file, "theta"), 1.0);
    let gamma = pick(args.rates.gamma, file_f64(file, "gamma"), 1.0);
    let variant = parse_variant(&pick(
        args.variant.clone(),
        file_str(file, "variant"),
        "standard".into(),
    ))?;
    let fidelity = pick(args.fidelity.clone(), file_str(file, "fidelity"), "size".into());
    let initial_size = pick(args.initial_size, file_u64(file, "initial_size").map(|v| v as u32), 1);
    let horizon = pick(args.horizon, file_f64(file, "horizon"), 5.0);
    let obs = match (&args.obs, file_str(file, "obs")) {
        (Some(text), _) => parse_times(text)?,
        (None, Some(text)) => parse_times(&text)?,
        (None, None) => vec![horizon],
    };
    let replicas = pick(args.replicas, file_u64(file, "replicas"), 1);
    let seed = pick(args.seed, file_u64(file, "seed"), 0);
    let cluster_cap =
        pick(args.cluster_cap, file_u64(file, "cluster_cap").map(|v| v as usize), 1_000_000);

    let params = Params::new(beta, theta, gamma, variant)?;
    let config = serde_json::json!({
        "command": "simulate",
        "beta": beta, "theta": theta, "gamma": gamma,
        "variant": variant, "fidelity": fidelity,
        "initial_size": initial_size, "horizon": horizon, "obs": obs,
        "replicas": replicas, "seed": seed, "cluster_cap": cluster_cap,
        "record_events": args.record_events,
    });
    let (_, meta) = artifact_meta(&config, seed);
    let preamble = csv_preamble(&meta);

    let opts = SimOptions {
        horizon,
        obs_times: obs.clone(),
        cluster_cap,
        record_events: args.record_events,
        ..Default::default()
    };
    let mut censored_any = false;
    for i in 0..replicas {
        let mut rng = seeds::replica_rng(seed, i);
        let (snapshot_csv, events, extinction, censored) = match fidelity.as_str() {
            "size" => {
                let traj = sizes::simulate(
                    &params,
                    sizes::SizeState::single(initial_size),
                    &opts,
                    &mut rng,
                )?;
                (
                    export::snapshots_csv_size(&traj.snapshots),
                    traj.events,
                    traj.extinction_time,
                    traj.censored,
                )
            }
            "tree" => {
                let state = ForestState::single_cluster(params, initial_size, &mut rng)?;
                let traj = forest::simulate(state, &opts, &mut rng)?;
                (
                    export::snapshots_csv_tree(&traj.snapshots),
                    traj.events,
                    traj.extinction_time,
                    traj.censored,
                )
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "fidelity must be 'tree' or 'size', got '{other}'"
                )))
            }
        };
        censored_any |= censored;
        io.write(&format!("snapshots-{i:04}.csv"), &format!("{preamble}{snapshot_csv}"))?;
        if args.record_events {
            io.write(&format!("events-{i:04}.jsonl"), &export::events_jsonl(&events)?)?;
        }
        let replica_meta = serde_json::json!({
            "replica": i,
            "replica_seed": seeds::replica_seed(seed, i),
            "extinction_time": extinction,
            "censored": censored,
        });
        io.write(
            &format!("replica-{i:04}.json"),
            &wrap_json(&meta, replica_meta),
        )?;
    }
    if censored_any {
        return Err(Error::ResourceCap("at least one replica hit a resource cap".into()));
    }
    Ok(())
}

fn cmd_spectral(args: &SpectralArgs, file: &serde_json::Value, io: &Io) -> Result<(), Error> {
    let beta = pick(args.rates.beta, file_f64(file, "beta"), 1.0);
    let theta = pick(args.rates.theta, file_f64(file, "theta"), 1.0);
    let gamma = pick(args.rates.gamma, file_f64(file, "gamma"), 1.0);
    let variant = parse_generator_variant(&pick(
        args.variant.clone(),
        file_str(file, "variant"),
        "standard".into(),
    ))?;
    let truncation = pick(args.truncation, file_u64(file, "truncation").map(|v| v as usize), 256);
    let tol = pick(args.tol, file_f64(file, "tol"), 1e-6);

    let config = serde_json::json!({
        "command": "spectral",
        "beta": beta, "theta": theta, "gamma": gamma,
        "variant": variant, "truncation": truncation, "tol": tol,
        "fdm_check": args.fdm_check,
    });
    let (hash, meta) = artifact_meta(&config, 0);
    if let Some(text) = io.cached("spectral", &hash, "perron.json") {
        io.write("perron.json", &text)?;
        return Ok(());
    }
    let opts = PerronOptions {
        lambda_tol: tol,
        initial_n: truncation,
        fdm_check: args.fdm_check,
        ..Default::default()
    };
    let rates = gfi_core::params::RateTriple::new(beta, theta, gamma)?;
    let triple: PerronTriple<f64> = spectral::perron_triple(rates, variant, truncation, &opts)?;
    let text = wrap_json(&meta, serde_json::to_value(&triple)?);
    io.write("perron.json", &text)?;
    io.store("spectral", &hash, "perron.json", &text)?;
    Ok(())
}

fn cmd_phase(args: &PhaseArgs, file: &serde_json::Value, io: &Io) -> Result<(), Error> {
    let beta = pick(args.beta, file_f64(file, "beta"), 1.0);
    let theta_grid = parse_grid(&pick(
        args.theta_grid.clone(),
        file_str(file, "theta_grid"),
        "0.1:0.9:5".into(),
    ))?;
    let gamma_grid = parse_grid(&pick(
        args.gamma_grid.clone(),
        file_str(file, "gamma_grid"),
        "0.5:4.0:5".into(),
    ))?;
    let tol = pick(args.tol, file_f64(file, "tol"), 1e-6);
    let config = serde_json::json!({
        "command": "phase",
        "beta": beta, "theta_grid": theta_grid, "gamma_grid": gamma_grid, "tol": tol,
    });
    let (hash, meta) = artifact_meta(&config, 0);
    if let Some(text) = io.cached("phase", &hash, "phase.csv") {
        io.write("phase.csv", &text)?;
        return Ok(());
    }
    let opts = PerronOptions { lambda_tol: tol, ..Default::default() };
    let surface = spectral::phase_surface::<f64>(beta, &theta_grid, &gamma_grid, tol, &opts)?;
    let text = format!(
        "{}# theta_monotone: {}\n# gamma_monotone: {}\n{}",
        csv_preamble(&meta),
        surface.theta_monotone,
        surface.gamma_monotone,
        export::phase_surface_csv(&surface)
    );
    io.write("phase.csv", &text)?;
    io.store("phase", &hash, "phase.csv", &text)?;
    Ok(())
}

fn cmd_critical(args: &CriticalArgs, file: &serde_json::Value, io: &Io) -> Result<(), Error> {
    let beta = pick(args.beta, file_f64(file, "beta"), 1.0);
    let theta = pick(args.theta, file_f64(file, "theta"), 0.5);
    let tol = pick(args.tol, file_f64(file, "tol"), 1e-6);
    let config = serde_json::json!({
        "command": "critical", "beta": beta, "theta": theta, "tol": tol,
    });
    let (hash, meta) = artifact_meta(&config, 0);
    if let Some(text) = io.cached("critical", &hash, "critical.json") {
        io.write("critical.json", &text)?;
        return Ok(());
    }
    let opts = PerronOptions::default();
    let root = spectral::critical_gamma::<f64>(beta, theta, tol, &opts)?;
    let text = wrap_json(&meta, serde_json::to_value(&root)?);
    io.write("critical.json", &text)?;
    io.store("critical", &hash, "critical.json", &text)?;
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, file: &serde_json::Value, io: &Io) -> Result<bool, Error> {
    let seed = pick(args.seed, file_u64(file, "seed"), 0x6F1);
    let only_text = args.only.clone().or_else(|| file_str(file, "only"));
    let only: Option<Vec<usize>> = match only_text {
        Some(t) => Some(
            t.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidArgument(format!("bad criterion '{s}'")))
                })
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };
    let config = serde_json::json!({ "command": "verify", "seed": seed, "only": only });
    let (_, meta) = artifact_meta(&config, seed);
    let ctx = verification::VerifyContext::new(seed);
    let numbers: Vec<usize> = only.unwrap_or_else(|| (1..=16).collect());
    let mut reports = Vec::new();
    let mut all_pass = true;
    for k in numbers {
        let report = ctx.criterion(k);
        println!(
            "{} {:<28} statistic={:<12.5e} threshold={:.3e}",
            if report.pass { "PASS" } else { "FAIL" },
            report.name,
            report.statistic,
            report.threshold
        );
        all_pass &= report.pass;
        reports.push(report);
    }
    let text = wrap_json(&meta, serde_json::to_value(&reports)?);
    io.write("verify-report.json", &text)?;
    Ok(all_pass)
}

fn cmd_couple(args: &CoupleArgs, file: &serde_json::Value, io: &Io) -> Result<(), Error> {
    let n0 = pick(args.n0, file_u64(file, "n0").map(|v| v as u32), 1);
    let n0_fast = pick(args.n0_fast, file_u64(file, "n0_fast").map(|v| v as u32), n0);
    let beta = pick(args.beta, file_f64(file, "beta"), 1.0);
    let beta_fast = pick(args.beta_fast, file_f64(file, "beta_fast"), beta);
    let theta = pick(args.theta, file_f64(file, "theta"), 1.0);
    let gamma = pick(args.gamma, file_f64(file, "gamma"), 1.0);
    let horizon = pick(args.horizon, file_f64(file, "horizon"), 3.0);
    let pairs = pick(args.pairs, file_u64(file, "pairs"), 1);
    let seed = pick(args.seed, file_u64(file, "seed"), 0);
    let config = serde_json::json!({
        "command": "couple",
        "n0": n0, "n0_fast": n0_fast, "beta": beta, "beta_fast": beta_fast,
        "theta": theta, "gamma": gamma, "horizon": horizon, "pairs": pairs, "seed": seed,
    });
    let (_, meta) = artifact_meta(&config, seed);
    let mut lines = String::new();
    for i in 0..pairs {
        let pair_seed = seeds::replica_seed(seed, i);
        let outcome = coupling::coupled_processes(
            n0, n0_fast, beta, beta_fast, theta, gamma, horizon, pair_seed, 1_000_000,
        )?;
        let record = serde_json::json!({
            "pair": i,
            "pair_seed": pair_seed,
            "censored": outcome.censored,
            "slow": outcome.slow,
            "fast": outcome.fast,
            "stopping": outcome.stopping,
        });
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    io.write("coupled-pairs.jsonl", &lines)?;
    io.write("coupled-meta.json", &wrap_json(&meta, serde_json::Value::Null))?;
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ResourceCap(_) | Error::TailBound { .. } => 3,
        Error::DominationViolated { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var("GFI_OUT_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gfi-out"));
    let threads = cli
        .threads
        .or_else(|| std::env::var("GFI_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let io = Io { out_dir, cache: !cli.no_cache };
    let file = match load_config(cli.config.as_deref()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args, &file, &io),
        Command::Spectral(args) => cmd_spectral(args, &file, &io),
        Command::Phase(args) => cmd_phase(args, &file, &io),
        Command::Critical(args) => cmd_critical(args, &file, &io),
        Command::Verify(args) => match cmd_verify(args, &file, &io) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("verification failed");
                return ExitCode::from(2);
            }
            Err(e) => Err(e),
        },
        Command::Couple(args) => cmd_couple(args, &file, &io),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
