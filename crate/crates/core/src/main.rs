use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use mac_jscc::correlation::{self, Suite};
use mac_jscc::discrete::{self, DiscreteSearchConfig, DistortionTables};
use mac_jscc::hybrid::{
    optimize_hybrid, optimize_uncoded_with, simulate_uncoded, uncoded_distortions, HybridSearchConfig, Scalarization,
};
use mac_jscc::outer::{outer_membership, OuterGrid};
use mac_jscc::pmf::ChannelPmf;
use mac_jscc::sweep::{self, Curve, PowerScale, SweepSpec};
use mac_jscc::{Error, GaussianProblem, JointPmf, UncodedGains};

/// Distortion bounds for correlated sources with a common part over a
/// two-user multiple-access channel.
#[derive(Parser)]
#[command(name = "mac-jscc", version)]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Power sweep of the symmetric bounds, written as CSV.
    Sweep(SweepArgs),
    /// Search for a hybrid scheme meeting target distortions.
    InnerHybrid(TargetArgs),
    /// Best uncoded scheme, or the distortions of given gains.
    InnerUncoded(TargetArgs),
    /// Membership of a distortion pair in the Gaussian outer bound.
    Outer(TargetArgs),
    /// Certify a finite-alphabet inner-bound point.
    DiscreteCertify,
    /// Sufficient condition for lossless transmission.
    LosslessCheck,
    /// Common-message capacity region of a discrete channel.
    CapacityCm,
    /// Correlation measures of a pmf, or the discretized Gaussian check.
    Correlation(CorrelationArgs),
    /// Randomized property suites for the correlation measures.
    Properties(PropertyArgs),
    /// Sample-level simulation of an uncoded scheme.
    Simulate(SimulateArgs),
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Comma-separated curve names, e.g. `hybrid_c,outer_c`.
    #[arg(long, value_delimiter = ',')]
    curves: Option<Vec<String>>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    record_time: bool,
    /// Also write the hybrid parameters behind each hybrid row (JSON).
    #[arg(long)]
    params_out: Option<PathBuf>,
    /// Emit a (D1, D2) trade-off trace for these weights instead of a sweep.
    #[arg(long, value_delimiter = ',')]
    pareto: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Db,
    Linear,
}

#[derive(clap::Args)]
struct TargetArgs {
    #[arg(long)]
    d1: Option<f64>,
    #[arg(long)]
    d2: Option<f64>,
    /// Symmetric power, overriding both powers of the problem.
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(clap::Args)]
struct CorrelationArgs {
    /// Run the discretized Gaussian check at this correlation instead.
    #[arg(long)]
    gaussian_rho: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 4.0)]
    range: f64,
}

#[derive(clap::Args)]
struct PropertyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    /// Instances per suite (samples for the Gaussian suite).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Chain,
    Dpi,
    Tensorization,
    Gaussian,
    All,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    samples: Option<usize>,
}

/// Failure classes mapped to exit status 2.
enum Failure {
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<bool, Failure>;

fn default_problem() -> GaussianProblem {
    GaussianProblem { rho01: 0.8, rho02: 0.8, rho12: 0.3, p1: 1.0, p2: 1.0 }
}

fn load<T: DeserializeOwned>(path: Option<&Path>, fallback: &str) -> Result<T, Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        None => fallback.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("malformed config: {e}")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    s.push('\n');
    emit(out, &s)
}

fn apply_power(problem: &mut GaussianProblem, power: Option<f64>) {
    if let Some(p) = power {
        problem.p1 = p;
        problem.p2 = p;
    }
}

fn targets(cfg: (Option<f64>, Option<f64>), args: &TargetArgs) -> Result<Option<(f64, f64)>, Failure> {
    match (args.d1.or(cfg.0), args.d2.or(cfg.1)) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Failure::Input("give both target distortions or neither".into())),
    }
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> Outcome {
    let mut spec: SweepSpec = load(cli.config.as_deref(), "{}")?;
    if let Some(s) = cli.seed {
        spec.seed = s;
        spec.hybrid.seed = s;
    }
    if let Some(s) = args.scale {
        spec.scale = match s {
            ScaleArg::Db => PowerScale::Db,
            ScaleArg::Linear => PowerScale::Linear,
        };
    }
    if args.start.is_some() || args.stop.is_some() || args.points.is_some() {
        let first = spec.grid.first().copied().unwrap_or(0.0);
        let last = spec.grid.last().copied().unwrap_or(first);
        let start = args.start.unwrap_or(first);
        let stop = args.stop.unwrap_or(last);
        spec.grid = SweepSpec::linspace(start, stop, args.points.unwrap_or(spec.grid.len().max(1)));
    }
    if let Some(names) = &args.curves {
        spec.curves = names.iter().map(|n| Curve::parse(n.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(b) = args.budget {
        spec.hybrid.budget = b;
    }
    spec.record_time |= args.record_time;
    spec.validate()?;

    if let Some(lambdas) = &args.pareto {
        let mut out = serde_json::Map::new();
        for (name, drop_common) in [("with_common", false), ("without_common", true)] {
            let problem = if drop_common { spec.problem.without_common_part() } else { spec.problem };
            let power = spec.scale.to_linear(spec.grid[0]);
            let problem = problem.with_powers(power, power);
            let uncoded = sweep::pareto_trace(&problem, lambdas, None, spec.uncoded_resolution)?;
            let hybrid = sweep::pareto_trace(&problem, lambdas, Some(&spec.hybrid), spec.uncoded_resolution)?;
            out.insert(name.into(), json!({ "problem": problem, "uncoded": uncoded, "hybrid": hybrid }));
        }
        emit_json(cli.out.as_deref(), &out)?;
        return Ok(true);
    }

    let output = sweep::run_sweep(&spec)?;
    emit(cli.out.as_deref(), &sweep::to_csv(&output.rows))?;
    if let Some(p) = &args.params_out {
        emit_json(Some(p), &output.hybrid_points)?;
    }
    Ok(output.rows.iter().all(|r| r.error.is_none()))
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct HybridCommand {
    problem: GaussianProblem,
    d1: Option<f64>,
    d2: Option<f64>,
    search: HybridSearchConfig,
}

impl Default for HybridCommand {
    fn default() -> Self {
        Self { problem: default_problem(), d1: None, d2: None, search: HybridSearchConfig::default() }
    }
}

fn run_inner_hybrid(cli: &Cli, args: &TargetArgs) -> Outcome {
    let mut cfg: HybridCommand = load(cli.config.as_deref(), "{}")?;
    apply_power(&mut cfg.problem, args.power);
    cfg.problem.validate()?;
    if let Some(s) = cli.seed {
        cfg.search.seed = s;
    }
    if let Some(b) = args.budget {
        cfg.search.budget = b;
    }
    let t = targets((cfg.d1, cfg.d2), args)?;
    if let Some((d1, d2)) = t {
        cfg.search.scalarization = Scalarization::Targets { d1, d2 };
    }
    let opt = optimize_hybrid(&cfg.problem, &cfg.search)?;
    let met = match (t, &opt.evaluation) {
        (_, None) => false,
        (None, Some(_)) => opt.feasible,
        (Some((a, b)), Some(e)) => opt.feasible && e.d1 <= a && e.d2 <= b,
    };
    emit_json(
        cli.out.as_deref(),
        &json!({
            "found": met,
            "problem": cfg.problem,
            "targets": t,
            "search": cfg.search,
            "optimum": opt,
        }),
    )?;
    Ok(met)
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct UncodedCommand {
    problem: GaussianProblem,
    d1: Option<f64>,
    d2: Option<f64>,
    /// Evaluate these gains instead of optimizing.
    gains: Option<UncodedGains>,
    resolution: usize,
}

impl Default for UncodedCommand {
    fn default() -> Self {
        Self { problem: default_problem(), d1: None, d2: None, gains: None, resolution: 64 }
    }
}

fn run_inner_uncoded(cli: &Cli, args: &TargetArgs) -> Outcome {
    let mut cfg: UncodedCommand = load(cli.config.as_deref(), "{}")?;
    apply_power(&mut cfg.problem, args.power);
    cfg.problem.validate()?;
    let t = targets((cfg.d1, cfg.d2), args)?;
    let (gains, d1, d2) = match cfg.gains {
        Some(g) => {
            if !g.satisfies(&cfg.problem) {
                return Err(Failure::Input("gains exceed the power constraints".into()));
            }
            let (d1, d2) = uncoded_distortions(&g, &cfg.problem);
            (g, d1, d2)
        }
        None => {
            let scal = t.map_or(Scalarization::MaxDistortion, |(d1, d2)| Scalarization::Targets { d1, d2 });
            let u = optimize_uncoded_with(&cfg.problem, cfg.resolution, scal, &[])?;
            (u.gains, u.d1, u.d2)
        }
    };
    let met = t.is_none_or(|(a, b)| d1 <= a && d2 <= b);
    let (power1, power2) = gains.powers();
    emit_json(
        cli.out.as_deref(),
        &json!({
            "found": met,
            "problem": cfg.problem,
            "targets": t,
            "gains": gains,
            "d1": d1,
            "d2": d2,
            "power1": power1,
            "power2": power2,
        }),
    )?;
    Ok(met)
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OuterCommand {
    problem: GaussianProblem,
    d1: Option<f64>,
    d2: Option<f64>,
    grid: OuterGrid,
}

impl Default for OuterCommand {
    fn default() -> Self {
        Self { problem: default_problem(), d1: None, d2: None, grid: OuterGrid::default() }
    }
}

fn run_outer(cli: &Cli, args: &TargetArgs) -> Outcome {
    let mut cfg: OuterCommand = load(cli.config.as_deref(), "{}")?;
    apply_power(&mut cfg.problem, args.power);
    cfg.problem.validate()?;
    let Some((d1, d2)) = targets((cfg.d1, cfg.d2), args)? else {
        return Err(Failure::Input("outer needs a distortion pair".into()));
    };
    let (verdict, witness) = outer_membership(d1, d2, &cfg.problem, &cfg.grid)?;
    emit_json(
        cli.out.as_deref(),
        &json!({
            "problem": cfg.problem,
            "d1": d1,
            "d2": d2,
            "grid": cfg.grid,
            "verdict": verdict,
            "witness": witness,
        }),
    )?;
    Ok(verdict.member)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CertifyCommand {
    source: JointPmf,
    channel: Option<ChannelPmf>,
    /// Rates in nats for the source-coding special case.
    rates: Option<(f64, f64)>,
    d1: f64,
    d2: f64,
    distortion: Option<DistortionTables>,
    #[serde(default)]
    search: DiscreteSearchConfig,
}

fn source_sizes(source: &JointPmf) -> Result<(usize, usize), Failure> {
    match source.shape()[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Failure::Input("the source pmf must have exactly two coordinates".into())),
    }
}

fn run_discrete_certify(cli: &Cli) -> Outcome {
    let Some(path) = cli.config.as_deref() else {
        return Err(Failure::Input("discrete-certify needs --config".into()));
    };
    let mut cfg: CertifyCommand = load(Some(path), "")?;
    if let Some(s) = cli.seed {
        cfg.search.seed = s;
    }
    let (n1, n2) = source_sizes(&cfg.source)?;
    let dist = cfg.distortion.clone().unwrap_or_else(|| DistortionTables::hamming(n1, n2));
    let cert = match (&cfg.channel, cfg.rates) {
        (Some(ch), None) => discrete::certify_inner_point(&cfg.source, ch, cfg.d1, cfg.d2, &dist, &cfg.search)?,
        (None, Some((r1, r2))) => discrete::dsc_inner_check(&cfg.source, r1, r2, cfg.d1, cfg.d2, &dist, &cfg.search)?,
        _ => return Err(Failure::Input("give exactly one of `channel` and `rates`".into())),
    };
    let check = match &cert {
        Some(c) => Some(discrete::revalidate(c, &cfg.source, cfg.channel.as_ref(), cfg.rates, &dist)?),
        None => None,
    };
    emit_json(
        cli.out.as_deref(),
        &json!({
            "certified": cert.is_some(),
            "search": cfg.search,
            "certificate": cert,
            "revalidation": check,
        }),
    )?;
    Ok(cert.is_some())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LosslessCommand {
    source: JointPmf,
    channel: ChannelPmf,
    #[serde(default)]
    search: DiscreteSearchConfig,
}

fn run_lossless(cli: &Cli) -> Outcome {
    let Some(path) = cli.config.as_deref() else {
        return Err(Failure::Input("lossless-check needs --config".into()));
    };
    let cfg: LosslessCommand = load(Some(path), "")?;
    let common = discrete::extract_common_part(&cfg.source)?;
    let witness = discrete::check_lossless_admissible(&cfg.source, &cfg.channel, &cfg.search)?;
    emit_json(
        cli.out.as_deref(),
        &json!({ "admissible": witness.is_some(), "common_part": common, "witness": witness }),
    )?;
    Ok(witness.is_some())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityCommand {
    channel: ChannelPmf,
    #[serde(default = "default_capacity_grid")]
    grid: usize,
    /// `(r0, r1, r2)` in nats to test for membership.
    point: Option<[f64; 3]>,
    #[serde(default)]
    slack: f64,
}

fn default_capacity_grid() -> usize {
    4
}

fn run_capacity(cli: &Cli) -> Outcome {
    let Some(path) = cli.config.as_deref() else {
        return Err(Failure::Input("capacity-cm needs --config".into()));
    };
    let cfg: CapacityCommand = load(Some(path), "")?;
    let region = discrete::capacity_region_common_message(&cfg.channel, cfg.grid)?;
    let bounds = |p: &discrete::CapacityPolytope| [p.i1, p.i2, p.i12, p.isum];
    const EPS: f64 = 1e-12;
    let same = |a: [f64; 4], b: [f64; 4]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= EPS);
    let dominated = |a: [f64; 4], b: [f64; 4]| a.iter().zip(&b).all(|(x, y)| *x <= y + EPS) && !same(a, b);
    // keep one representative per bound vector, dropping dominated ones
    let mut kept: Vec<&discrete::CapacityPolytope> = Vec::new();
    for p in &region.polytopes {
        let b = bounds(p);
        if region.polytopes.iter().any(|q| dominated(b, bounds(q))) || kept.iter().any(|k| same(bounds(k), b)) {
            continue;
        }
        kept.push(p);
    }
    let member = cfg.point.map(|r| region.contains(r, cfg.slack));
    emit_json(
        cli.out.as_deref(),
        &json!({
            "grid": cfg.grid,
            "polytopes": kept,
            "corner_points": kept.iter().map(|p| p.corner_points()).collect::<Vec<_>>(),
            "point": cfg.point,
            "member": member,
        }),
    )?;
    Ok(member.unwrap_or(true))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelationCommand {
    pmf: JointPmf,
    a: Option<String>,
    b: Option<String>,
}

fn run_correlation(cli: &Cli, args: &CorrelationArgs) -> Outcome {
    if let Some(rho) = args.gaussian_rho {
        let seed = cli.seed.unwrap_or(1);
        let m = correlation::gaussian_maximal_correlation_mc(rho, args.samples, args.bins, args.range, seed)?;
        let ok = (m - rho.abs()).abs() <= correlation::GAUSSIAN_MC_TOL;
        emit_json(
            cli.out.as_deref(),
            &json!({
                "rho": rho,
                "samples": args.samples,
                "bins": args.bins,
                "range": args.range,
                "seed": seed,
                "maximal": m,
                "within_tolerance": ok,
            }),
        )?;
        return Ok(ok);
    }
    let Some(path) = cli.config.as_deref() else {
        return Err(Failure::Input("correlation needs --config or --gaussian-rho".into()));
    };
    let cfg: CorrelationCommand = load(Some(path), "")?;
    let names = cfg.pmf.names();
    if names.len() < 2 {
        return Err(Failure::Input("the pmf needs at least two coordinates".into()));
    }
    let a = cfg.a.clone().unwrap_or_else(|| names[0].clone());
    let b = cfg.b.clone().unwrap_or_else(|| names[1].clone());
    let report = correlation::correlation_report(&cfg.pmf, &a, &b)?;
    emit_json(cli.out.as_deref(), &json!({ "a": a, "b": b, "report": report }))?;
    Ok(true)
}

fn run_properties(cli: &Cli, args: &PropertyArgs) -> Outcome {
    let suites: Vec<Suite> = match args.suite {
        SuiteArg::Chain => vec![Suite::Chain],
        SuiteArg::Dpi => vec![Suite::Dpi],
        SuiteArg::Tensorization => vec![Suite::Tensorization],
        SuiteArg::Gaussian => vec![Suite::Gaussian],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    let seed = cli.seed.unwrap_or(1);
    let reports = suites
        .into_iter()
        .map(|s| correlation::run_property_suite(s, args.count.unwrap_or(s.default_count()), seed))
        .collect::<Result<Vec<_>, _>>()?;
    let passed = reports.iter().all(|r| r.report.passed());
    emit_json(cli.out.as_deref(), &json!({ "passed": passed, "suites": reports }))?;
    Ok(passed)
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateCommand {
    problem: GaussianProblem,
    gains: Option<UncodedGains>,
    samples: usize,
    resolution: usize,
    seed: u64,
}

impl Default for SimulateCommand {
    fn default() -> Self {
        Self { problem: default_problem(), gains: None, samples: 1_000_000, resolution: 64, seed: 1 }
    }
}

fn run_simulate(cli: &Cli, args: &SimulateArgs) -> Outcome {
    let mut cfg: SimulateCommand = load(cli.config.as_deref(), "{}")?;
    cfg.problem.validate()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if cfg.samples < 2 {
        return Err(Failure::Input("need at least two samples".into()));
    }
    let gains = match cfg.gains {
        Some(g) if g.satisfies(&cfg.problem) => g,
        Some(_) => return Err(Failure::Input("gains exceed the power constraints".into())),
        None => optimize_uncoded_with(&cfg.problem, cfg.resolution, Scalarization::MaxDistortion, &[])?.gains,
    };
    let (d1, d2) = uncoded_distortions(&gains, &cfg.problem);
    let sim = simulate_uncoded(&cfg.problem, &gains, cfg.samples, cfg.seed)?;
    let z1 = (sim.d1 - d1).abs() / sim.std_err1.max(f64::MIN_POSITIVE);
    let z2 = (sim.d2 - d2).abs() / sim.std_err2.max(f64::MIN_POSITIVE);
    let agree = z1 <= 3.0 && z2 <= 3.0;
    emit_json(
        cli.out.as_deref(),
        &json!({
            "problem": cfg.problem,
            "gains": gains,
            "seed": cfg.seed,
            "closed_form": { "d1": d1, "d2": d2 },
            "simulated": sim,
            "standard_errors_off": [z1, z2],
            "agree": agree,
        }),
    )?;
    Ok(agree)
}

fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Sweep(a) => run_sweep(cli, a),
        Command::InnerHybrid(a) => run_inner_hybrid(cli, a),
        Command::InnerUncoded(a) => run_inner_uncoded(cli, a),
        Command::Outer(a) => run_outer(cli, a),
        Command::DiscreteCertify => run_discrete_certify(cli),
        Command::LosslessCheck => run_lossless(cli),
        Command::CapacityCm => run_capacity(cli),
        Command::Correlation(a) => run_correlation(cli, a),
        Command::Properties(a) => run_properties(cli, a),
        Command::Simulate(a) => run_simulate(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
