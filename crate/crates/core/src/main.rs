//! Command line driver.
//!
//! Each subcommand is a thin wrapper over the library: resolve a model,
//! derive all random streams from one root seed, write outputs under
//! `--out-dir`, and drop a `manifest.json` recording the argument list, the
//! resolved config, the seed, and a digest of every file written. `replay`
//! re-runs a manifest and verifies the outputs come back byte for byte.
//!
//! Exit codes: 0 success, 2 bad usage or config, 3 a statistical check
//! failed, 4 a numerical or io failure. Failures print one JSON line on
//! stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use jumpflow::conditions::{check_conditions, halton_probes};
use jumpflow::config::{build_model, ModelConfig};
use jumpflow::coupling::{
    check_coupling_conditions, coupled_increment_gap, simulate_coupled, write_coupled_jsonl,
    CouplingReport, CouplingSet, IncrementGapReport,
};
use jumpflow::error::{Error, Result};
use jumpflow::gallery::load_gallery;
use jumpflow::lil::{
    center_observable, estimate_sigma_embedded, estimate_sigma_tilde, lil_diagnostics, sigma_bar,
    CenteredObservable, SigmaEmbeddedReport,
};
use jumpflow::model::ModelSpec;
use jumpflow::observable::standard_observable;
use jumpflow::operators::{estimate_invariants, McEstimate};
use jumpflow::report::{RunManifest, MANIFEST_NAME};
use jumpflow::sampler::SeedStream;
use jumpflow::sim::{
    simulate_embedded, simulate_to_horizon, write_path_columnar, write_path_jsonl,
};
use jumpflow::space::HybridState;
use jumpflow::stats::{fit_geometric, GeometricFit};

/// Schema version stamped into every JSON report envelope.
const REPORT_SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(
    name = "jumpflow",
    version,
    about = "simulator and diagnostics for flows switched at random jump times"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the jump chain and export the path
    Simulate(SimulateArgs),
    /// Evaluate the standing model conditions over probe pairs
    Check(CheckArgs),
    /// Run the coupled chain from two starts and fit its contraction
    Couple(CoupleArgs),
    /// Estimate invariant laws, centers, and variance scales
    Estimate(EstimateArgs),
    /// Replica diagnostics of the scaled fluctuation statistics
    Lil(LilArgs),
    /// Re-run a recorded manifest and verify outputs match byte for byte
    Replay(ReplayArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Built-in example model name
    #[arg(long, value_name = "NAME")]
    gallery: Option<String>,

    /// Model config file (TOML)
    #[arg(long, value_name = "FILE", conflicts_with = "gallery")]
    model: Option<PathBuf>,

    /// Root seed for all random streams; JUMPFLOW_SEED when absent, else 0
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; JUMPFLOW_THREADS when absent, 0 lets the pool pick.
    /// Results never depend on it.
    #[arg(long)]
    threads: Option<usize>,

    /// Directory outputs are written into
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.or_else(|| env_parse("JUMPFLOW_SEED")).unwrap_or(0)
    }

    fn threads(&self) -> usize {
        self.threads
            .or_else(|| env_parse("JUMPFLOW_THREADS"))
            .unwrap_or(0)
    }

    /// Load the model and its canonical config text.
    fn resolve_model(&self) -> Result<(ModelSpec, String)> {
        match (&self.gallery, &self.model) {
            (Some(name), None) => {
                let spec = load_gallery(name)?.spec;
                let text = spec.to_config().to_toml()?;
                Ok((spec, text))
            }
            (None, Some(path)) => {
                let cfg = ModelConfig::from_toml(&fs::read_to_string(path)?)?;
                let spec = build_model(&cfg)?;
                let text = spec.to_config().to_toml()?;
                Ok((spec, text))
            }
            _ => Err(Error::InvalidConfig(
                "pass --gallery NAME or --model FILE".into(),
            )),
        }
    }

    fn manifest(&self, spec: &ModelSpec, model_config: String, argv: &[String]) -> RunManifest {
        RunManifest::new(
            argv.to_vec(),
            model_config,
            spec.hash.clone(),
            self.seed(),
            self.threads(),
        )
    }
}

fn env_parse<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok()?.trim().parse().ok()
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,

    /// Number of jumps to simulate; the export has steps + 1 records
    #[arg(long, default_value_t = 1000, conflicts_with = "horizon")]
    steps: usize,

    /// Simulate until this time horizon instead of a fixed jump count
    #[arg(long, value_name = "T")]
    horizon: Option<f64>,

    /// Start state "y1,..,yd@i"; defaults to the reference point with flow 1
    #[arg(long, value_name = "STATE")]
    x0: Option<String>,

    /// Also write the path in the packed columnar layout
    #[arg(long)]
    columnar: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,

    /// Number of low-discrepancy probe pairs
    #[arg(long, default_value_t = 64)]
    probes: usize,

    /// Slack added to each inequality before it counts as failed
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct CoupleArgs {
    #[command(flatten)]
    common: Common,

    /// First start state "y1,..,yd@i"
    #[arg(long, value_name = "STATE")]
    x1: String,

    /// Second start state "y1,..,yd@i"
    #[arg(long, value_name = "STATE")]
    x2: String,

    /// Coupled steps to simulate
    #[arg(long, default_value_t = 200)]
    n: usize,

    /// Contraction factor defining the joint small set
    #[arg(long, default_value_t = 0.5)]
    set_a: f64,

    /// Offset defining the joint small set
    #[arg(long, default_value_t = 1.0)]
    set_b: f64,

    /// Also run the Monte Carlo minorization and contraction diagnostics
    #[arg(long)]
    diagnose: bool,

    /// Monte Carlo draws per probe for --diagnose
    #[arg(long, default_value_t = 400)]
    mc: usize,

    /// Also estimate the coupled increment gap decay for observable y
    #[arg(long)]
    gap: bool,

    /// Steps per path for --gap
    #[arg(long, default_value_t = 40)]
    gap_steps: usize,

    /// Paths for --gap
    #[arg(long, default_value_t = 400)]
    gap_paths: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,

    /// Observable name (y, cosy, expny, idx1)
    #[arg(long, default_value = "y")]
    g: String,

    /// Start state; defaults to the reference point with flow 1
    #[arg(long, value_name = "STATE")]
    x0: Option<String>,

    /// Burn-in steps discarded before collecting states
    #[arg(long, default_value_t = 2000)]
    burn_in: usize,

    /// Post-jump states kept for the invariant law
    #[arg(long, default_value_t = 20000)]
    keep: usize,

    /// Chain length for the embedded long-run variance
    #[arg(long, default_value_t = 40000)]
    chain_len: usize,

    /// Batches for the long-run variance
    #[arg(long, default_value_t = 32)]
    batches: usize,

    /// Averaging passes for the jump variance
    #[arg(long, default_value_t = 4)]
    passes: usize,
}

#[derive(Args)]
struct LilArgs {
    #[command(flatten)]
    common: Common,

    /// Observable name (y, cosy, expny, idx1)
    #[arg(long, default_value = "y")]
    g: String,

    /// Start state; defaults to the reference point with flow 1
    #[arg(long, value_name = "STATE")]
    x0: Option<String>,

    /// Time horizon per replica
    #[arg(long, default_value_t = 10_000.0)]
    horizon: f64,

    /// Independent replicas
    #[arg(long, default_value_t = 16)]
    replicas: usize,

    /// Use this center instead of estimating one
    #[arg(long)]
    center: Option<f64>,

    /// Keep the first replica's trace in the report and write trace.csv
    #[arg(long)]
    full_traces: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest of the run to reproduce
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,

    /// Directory the reproduced outputs are written into
    #[arg(long, value_name = "DIR", default_value = "replay-out")]
    out_dir: PathBuf,
}

/// Wrapper giving every JSON output a schema version and a kind tag.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    kind: &'static str,
    report: &'a T,
}

fn envelope_json<T: Serialize>(kind: &'static str, report: &T) -> Result<String> {
    let env = Envelope {
        schema: REPORT_SCHEMA,
        kind,
        report,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

#[derive(Serialize)]
struct CoupleSummary {
    model: String,
    model_hash: String,
    seed: u64,
    steps: usize,
    set_a: f64,
    set_b: f64,
    hitting_time: Option<usize>,
    coupling_time: usize,
    zeta_frequency: f64,
    start_distance: f64,
    final_distance: f64,
    distance_fit: Option<GeometricFit>,
    diagnostics: Option<CouplingReport>,
    increment_gap: Option<IncrementGapReport>,
}

#[derive(Serialize)]
struct EstimateReport {
    model: String,
    model_hash: String,
    seed: u64,
    observable: String,
    center: f64,
    center_se: f64,
    continuous_center: f64,
    continuous_center_se: f64,
    invariant_atoms: usize,
    invariant_mean: Vec<f64>,
    discrepancy: f64,
    sigma_embedded: SigmaEmbeddedReport,
    sigma_tilde: McEstimate,
    sigma_bar: f64,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let threads = cli.threads_request();
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(cli.cmd, &argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let line = serde_json::json!({ "error": e.tag(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

impl Cli {
    fn threads_request(&self) -> usize {
        match &self.cmd {
            Cmd::Simulate(a) => a.common.threads(),
            Cmd::Check(a) => a.common.threads(),
            Cmd::Couple(a) => a.common.threads(),
            Cmd::Estimate(a) => a.common.threads(),
            Cmd::Lil(a) => a.common.threads(),
            Cmd::Replay(_) => 0,
        }
    }
}

fn dispatch(cmd: Cmd, argv: &[String]) -> Result<u8> {
    match cmd {
        Cmd::Simulate(a) => cmd_simulate(a, argv),
        Cmd::Check(a) => cmd_check(a, argv),
        Cmd::Couple(a) => cmd_couple(a, argv),
        Cmd::Estimate(a) => cmd_estimate(a, argv),
        Cmd::Lil(a) => cmd_lil(a, argv),
        Cmd::Replay(a) => cmd_replay(a),
    }
}

/// Parse "y1,..,yd@i" into a state. The simulator validates dimension and
/// flow range against the model.
fn parse_state(s: &str) -> Result<HybridState> {
    let (ys, is) = s.split_once('@').ok_or_else(|| {
        Error::InvalidConfig(format!("state {s:?} must look like \"y1,..,yd@i\""))
    })?;
    let mut y = Vec::new();
    for part in ys.split(',') {
        let v: f64 = part.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("bad coordinate {part:?} in state {s:?}"))
        })?;
        y.push(v);
    }
    let i: usize = is
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad flow index {is:?} in state {s:?}")))?;
    Ok(HybridState::from_slice(&y, i))
}

fn parse_start(spec: &ModelSpec, text: Option<&str>) -> Result<HybridState> {
    match text {
        Some(s) => parse_state(s),
        None => Ok(HybridState::new(spec.ybar.clone(), 1)),
    }
}

fn cmd_simulate(a: SimulateArgs, argv: &[String]) -> Result<u8> {
    let (spec, cfg_text) = a.common.resolve_model()?;
    let x0 = parse_start(&spec, a.x0.as_deref())?;
    let mut rng = SeedStream::new(a.common.seed()).rng(0);
    let path = match a.horizon {
        Some(t) => simulate_to_horizon(&spec, &x0, t, &mut rng)?,
        None => simulate_embedded(&spec, &x0, a.steps, &mut rng)?,
    };

    let mut manifest = a.common.manifest(&spec, cfg_text, argv);
    let mut buf = Vec::new();
    write_path_jsonl(&mut buf, &path)?;
    manifest.write_output(&a.common.out_dir, "path.jsonl", &buf)?;
    if a.columnar {
        let mut buf = Vec::new();
        write_path_columnar(&mut buf, &path)?;
        manifest.write_output(&a.common.out_dir, "path.bin", &buf)?;
    }
    manifest.write(&a.common.out_dir)?;
    println!(
        "simulated {}: {} records to t = {:.6}; wrote path.jsonl",
        spec.name,
        path.len(),
        path.last_tau()
    );
    Ok(0)
}

fn cmd_check(a: CheckArgs, argv: &[String]) -> Result<u8> {
    let (spec, cfg_text) = a.common.resolve_model()?;
    let probes = halton_probes(&spec, a.probes)?;
    let report = check_conditions(&spec, &probes, a.tol)?;

    let mut manifest = a.common.manifest(&spec, cfg_text, argv);
    let json = envelope_json("conditions", &report)?;
    manifest.write_output(&a.common.out_dir, "conditions.json", json.as_bytes())?;
    manifest.write(&a.common.out_dir)?;

    if report.all_pass() {
        println!(
            "all {} standing conditions hold on {} probe pairs of {}",
            report.entries().len(),
            a.probes,
            spec.name
        );
        Ok(0)
    } else {
        for (name, check) in report.entries() {
            if check.pass {
                continue;
            }
            let w = &check.witness;
            println!(
                "condition {name} failed ({}): margin {:.3e} at y1={:?} y2={:?} (lhs {:.6e} > rhs {:.6e})",
                w.part, check.margin, w.y1, w.y2, w.lhs, w.rhs
            );
        }
        Ok(3)
    }
}

fn cmd_couple(a: CoupleArgs, argv: &[String]) -> Result<u8> {
    let (spec, cfg_text) = a.common.resolve_model()?;
    let x1 = parse_state(&a.x1)?;
    let x2 = parse_state(&a.x2)?;
    let set = CouplingSet::new(a.set_a, a.set_b)?;
    let stream = SeedStream::new(a.common.seed());

    let path = simulate_coupled(&spec, &x1, &x2, a.n, &set, &mut stream.rng(0))?;
    let distances = path.distances();
    let top = distances.iter().cloned().fold(0.0_f64, f64::max);
    let distance_fit = fit_geometric(&distances, top * 1e-9).ok();

    let diagnostics = if a.diagnose {
        Some(check_coupling_conditions(
            &spec,
            &[(x1.clone(), x2.clone())],
            a.mc,
            &mut stream.rng(1),
        )?)
    } else {
        None
    };
    let increment_gap = if a.gap {
        let g = standard_observable("y", &spec)?;
        Some(coupled_increment_gap(
            &spec,
            &x1,
            &x2,
            &g,
            0.0,
            a.gap_steps,
            a.gap_paths,
            &mut stream.rng(2),
        )?)
    } else {
        None
    };

    let summary = CoupleSummary {
        model: spec.name.clone(),
        model_hash: spec.hash.clone(),
        seed: a.common.seed(),
        steps: a.n,
        set_a: a.set_a,
        set_b: a.set_b,
        hitting_time: path.hitting_time(),
        coupling_time: path.coupling_time(),
        zeta_frequency: path.zeta_frequency(),
        start_distance: distances.first().copied().unwrap_or(0.0),
        final_distance: distances.last().copied().unwrap_or(0.0),
        distance_fit,
        diagnostics,
        increment_gap,
    };

    let mut manifest = a.common.manifest(&spec, cfg_text, argv);
    let mut buf = Vec::new();
    write_coupled_jsonl(&mut buf, &path)?;
    manifest.write_output(&a.common.out_dir, "coupled.jsonl", &buf)?;
    let json = envelope_json("couple", &summary)?;
    manifest.write_output(&a.common.out_dir, "couple.json", json.as_bytes())?;
    manifest.write(&a.common.out_dir)?;

    match &summary.distance_fit {
        Some(fit) => println!(
            "coupled {} steps: distance {:.4e} -> {:.4e}, per-step rate {:.4} (r2 {:.3}), coupling time {}",
            a.n,
            summary.start_distance,
            summary.final_distance,
            fit.rate,
            fit.r2,
            summary.coupling_time
        ),
        None => println!(
            "coupled {} steps: distance {:.4e} -> {:.4e}, coupling time {}",
            a.n, summary.start_distance, summary.final_distance, summary.coupling_time
        ),
    }
    Ok(0)
}

fn cmd_estimate(a: EstimateArgs, argv: &[String]) -> Result<u8> {
    let (spec, cfg_text) = a.common.resolve_model()?;
    let x0 = parse_start(&spec, a.x0.as_deref())?;
    let base = standard_observable(&a.g, &spec)?;
    let stream = SeedStream::new(a.common.seed());

    let inv = estimate_invariants(&spec, &x0, a.burn_in, a.keep, &mut stream.rng(0))?;
    let g = center_observable(&spec, base, &x0, a.burn_in, a.keep.max(1000), &mut stream.rng(1))?;
    let embedded = estimate_sigma_embedded(
        &spec,
        &g,
        &x0,
        a.burn_in,
        a.chain_len,
        a.batches,
        &mut stream.rng(2),
    )?;
    let tilde = estimate_sigma_tilde(&spec, &g, &inv.mu, a.passes, &mut stream.rng(3))?;
    let bar = sigma_bar(
        embedded.primary.value,
        tilde.mean.max(0.0).sqrt(),
        spec.lambda,
    )?;

    let invariant_mean = (0..spec.dim).map(|k| inv.mu.mean_coord(k)).collect();
    let report = EstimateReport {
        model: spec.name.clone(),
        model_hash: spec.hash.clone(),
        seed: a.common.seed(),
        observable: g.name.clone(),
        center: g.center,
        center_se: g.center_se,
        continuous_center: g.continuous_center,
        continuous_center_se: g.continuous_center_se,
        invariant_atoms: inv.mu.len(),
        invariant_mean,
        discrepancy: inv.discrepancy,
        sigma_embedded: embedded,
        sigma_tilde: tilde,
        sigma_bar: bar,
    };

    let mut manifest = a.common.manifest(&spec, cfg_text, argv);
    let mut buf = Vec::new();
    inv.mu.write_jsonl(&mut buf)?;
    manifest.write_output(&a.common.out_dir, "mu.jsonl", &buf)?;
    let mut buf = Vec::new();
    inv.nu.write_jsonl(&mut buf)?;
    manifest.write_output(&a.common.out_dir, "nu.jsonl", &buf)?;
    let json = envelope_json("estimate", &report)?;
    manifest.write_output(&a.common.out_dir, "estimate.json", json.as_bytes())?;
    manifest.write(&a.common.out_dir)?;

    println!(
        "estimated {} on {}: center {:.6} (se {:.2e}), sigma_embedded {:.6}, sigma_tilde {:.6}, sigma_bar {:.6}",
        report.observable,
        report.model,
        report.center,
        report.center_se,
        report.sigma_embedded.primary.value,
        report.sigma_tilde.mean.max(0.0).sqrt(),
        report.sigma_bar
    );
    Ok(0)
}

fn cmd_lil(a: LilArgs, argv: &[String]) -> Result<u8> {
    let (spec, cfg_text) = a.common.resolve_model()?;
    let x0 = parse_start(&spec, a.x0.as_deref())?;
    let base = standard_observable(&a.g, &spec)?;
    let seed = a.common.seed();

    let g = match a.center {
        Some(c) => CenteredObservable::with_center(base, c),
        None => {
            // centering gets its own stream, clear of the replica ids the
            // diagnostics use internally
            let mut rng = SeedStream::new(seed).rng(a.replicas as u64 + 1_000);
            center_observable(&spec, base, &x0, 2000, 12000, &mut rng)?
        }
    };
    let report = lil_diagnostics(&spec, &g, &x0, a.horizon, a.replicas, seed, a.full_traces)?;

    let mut manifest = a.common.manifest(&spec, cfg_text, argv);
    let json = envelope_json("lil", &report)?;
    manifest.write_output(&a.common.out_dir, "lil.json", json.as_bytes())?;
    if let Some(trace) = &report.trace {
        let mut csv = String::from("t,s\n");
        for p in trace {
            csv.push_str(&format!("{},{}\n", p.t, p.s));
        }
        manifest.write_output(&a.common.out_dir, "trace.csv", csv.as_bytes())?;
    }
    manifest.write(&a.common.out_dir)?;

    println!(
        "ran {} replicas of {} to t = {}: sigma_bar {:.6}, envelope sup mean {:.4}, prefactor {:.4}",
        report.replicas,
        report.model,
        report.horizon,
        report.sigma_bar,
        report.envelope_sup_mean,
        report
            .checkpoints
            .last()
            .map(|c| c.prefactor_mean)
            .unwrap_or(f64::NAN)
    );
    Ok(0)
}

fn cmd_replay(a: ReplayArgs) -> Result<u8> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.command.first().map(String::as_str) == Some("replay") {
        return Err(Error::InvalidConfig(
            "manifest records a replay; nothing to reproduce".into(),
        ));
    }

    let mut args = strip_flag(&recorded.command, "--out-dir");
    // the config is embedded in the manifest, so a moved or deleted model
    // file cannot break the replay
    if args.iter().any(|s| s == "--model" || s.starts_with("--model=")) {
        fs::create_dir_all(&a.out_dir)?;
        let path = a.out_dir.join("model.toml");
        fs::write(&path, &recorded.model_config)?;
        args = replace_flag_value(&args, "--model", &path.to_string_lossy());
    }
    args.push("--out-dir".into());
    args.push(a.out_dir.to_string_lossy().into_owned());

    let full: Vec<String> = std::iter::once("jumpflow".to_string())
        .chain(args.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&full)
        .map_err(|e| Error::InvalidConfig(format!("recorded command does not parse: {e}")))?;
    let inner = dispatch(cli.cmd, &args)?;

    let reproduced = RunManifest::read(&a.out_dir.join(MANIFEST_NAME))?;
    let bad = recorded.diff_outputs(&reproduced);
    if bad.is_empty() {
        println!(
            "replay verified: {} outputs byte-identical (inner exit {inner})",
            recorded.outputs.len()
        );
        Ok(0)
    } else {
        println!("replay mismatch in {} output(s): {}", bad.len(), bad.join(", "));
        Ok(4)
    }
}

/// Drop `flag` and its value from an argument list, in both the split and
/// the `--flag=value` spelling.
fn strip_flag(args: &[String], flag: &str) -> Vec<String> {
    let eq = format!("{flag}=");
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == flag {
            skip = true;
            continue;
        }
        if a.starts_with(&eq) {
            continue;
        }
        out.push(a.clone());
    }
    out
}

/// Replace the value of `flag`, in both spellings.
fn replace_flag_value(args: &[String], flag: &str, value: &str) -> Vec<String> {
    let eq = format!("{flag}=");
    let mut out = Vec::new();
    let mut replace_next = false;
    for a in args {
        if replace_next {
            out.push(value.to_string());
            replace_next = false;
            continue;
        }
        if a == flag {
            out.push(a.clone());
            replace_next = true;
            continue;
        }
        if a.starts_with(&eq) {
            out.push(format!("{flag}={value}"));
            continue;
        }
        out.push(a.clone());
    }
    out
}
