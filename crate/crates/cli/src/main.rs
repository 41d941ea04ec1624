//! The `metastab` command line: analysis reports, check suites, family
//! condition trends, built-in model export and path sampling, on chain
//! and partition files in the library's JSON formats.
//!
//! Reports carry no timestamps, all randomness flows from explicit
//! seeds, and documents serialize with sorted keys, so a rerun with the
//! same inputs and flags reproduces every output byte for byte.  Exit
//! codes: 0 all checks pass, 1 a check failed, 2 usage or input error,
//! 3 numeric failure.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use metastab_core::io;
use metastab_core::metastability::{
    check_conditions, predict_limit_chain, ChainFamily, ConditionReport, FamilyMember, LimitChain,
    BOUNDED_GROWTH, STABLE_STEP, TREND_SMALL, VIOLATED_GROWTH,
};
use metastab_core::models::{DogGraph, DogGraphSpec, Polymer, PolymerSpec};
use metastab_core::potential::{capacity, mean_jump_rates};
use metastab_core::simulate::{order_fdd_estimate, sample_path, sample_trace_path, FddEstimate, Start};
use metastab_core::spectral::{mixing_profile, spectral_gap};
use metastab_core::transforms::{project_order, reflect_chain, trace_chain, Partition};
use metastab_core::verify::{run_suite, SuiteConfig};
use metastab_core::{Chain, Error, ProbabilityMeasure, Result};

use report::{csv_field, matrix, num, nums, to_pretty};

#[derive(Parser)]
#[command(
    name = "metastab",
    version,
    about = "Metastable structure of finite reversible chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One-shot report: gaps, capacities, mean jump rates, mixing times
    Analyze(AnalyzeArgs),
    /// Run a named check suite and write its verdict table
    Verify(VerifyArgs),
    /// Condition trends and the predicted limit chain of a model family
    Family(FamilyArgs),
    /// Write a built-in model as chain and partition files
    Model(ModelArgs),
    /// Sample paths or the order-process law from a chain file
    Sample(SampleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Cmd::Analyze(args) => run_analyze(args),
        Cmd::Verify(args) => run_verify(args),
        Cmd::Family(args) => run_family(args),
        Cmd::Model(args) => run_model(args),
        Cmd::Sample(args) => run_sample(args),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(0, 255) as u8)
        }
    }
}

/// `METASTAB_THREADS` caps the worker pool; unset leaves the default.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("METASTAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&k| k > 0).ok_or_else(|| {
        Error::Parse(format!(
            "METASTAB_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Parse(format!("worker pool: {e}")))
}

/// Refuses to clobber an existing output unless `--force` was given.
fn fresh(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Parse(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(list: &str, what: &str) -> Result<Vec<T>> {
    list.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::Parse(format!("bad {what} {:?} in {list:?}", tok.trim())))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AnalyzeArgs {
    /// Chain file: JSON state labels and rate triples
    #[arg(long)]
    chain: PathBuf,
    /// Partition file: JSON lists of well state labels
    #[arg(long)]
    partition: PathBuf,
    /// Enlargement rate behind the mean jump rates; defaults to the
    /// geometric mean of the trace gap and the slowest reflected gap
    #[arg(long)]
    gamma: Option<f64>,
    /// Largest acceptable relative defect in the capacity identities
    /// cross-checking the mean rates
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Directory the report is written into
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Overwrite an existing report
    #[arg(long)]
    force: bool,
}

/// Restriction of a partition to the trace state order: well labels
/// carried over, no separating states left.
fn carry_partition(partition: &Partition, kept: &[usize]) -> Result<Partition> {
    let mut wells = vec![Vec::new(); partition.kappa()];
    for (t, &parent) in kept.iter().enumerate() {
        let x = partition.well_of(parent).expect("traced state lies in a well");
        wells[x].push(t);
    }
    Partition::new(kept.len(), wells)
}

struct Analysis {
    full_gap: f64,
    trace_gap: f64,
    reflected: Vec<Option<f64>>,
    /// Capacity of every well pair `(x, y)`, `x < y`.
    capacities: Vec<((usize, usize), f64)>,
    rates: metastab_core::potential::MeanJumpRates,
    t_quarter: Option<f64>,
    t_tenth: Option<f64>,
    theta: f64,
    relaxation: f64,
    scaled: Vec<Vec<f64>>,
    passage_mass: f64,
    exit_mass: Vec<f64>,
}

fn analyze_chain(chain: &Chain, partition: &Partition, gamma_flag: Option<f64>) -> Result<Analysis> {
    if partition.kappa() < 2 {
        return Err(Error::Parse(format!(
            "the analysis needs at least two wells, got {}",
            partition.kappa()
        )));
    }
    let kappa = partition.kappa();
    let full_gap = spectral_gap(chain)?.gap;

    let traced = partition.traced_states();
    let (trace, kept) = trace_chain(chain, &traced)?;
    let local = carry_partition(partition, &kept)?;
    let trace_gap = spectral_gap(&trace)?.gap;

    let mut reflected = Vec::with_capacity(kappa);
    for x in 0..kappa {
        let well = partition.well(x);
        reflected.push(if well.len() < 2 {
            None
        } else {
            let (refl, _) = reflect_chain(chain, well)?;
            Some(spectral_gap(&refl)?.gap)
        });
    }

    let mut capacities = Vec::new();
    for x in 0..kappa {
        for y in x + 1..kappa {
            let cap = capacity(chain, partition.well(x), partition.well(y))?;
            capacities.push(((x, y), cap.value));
        }
    }

    let min_refl = reflected
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let gamma = match gamma_flag {
        Some(g) if g > 0.0 && g.is_finite() => g,
        Some(g) => return Err(Error::Parse(format!("gamma must be positive, got {g}"))),
        None => {
            let second = if min_refl.is_finite() { min_refl } else { chain.max_holding() };
            (trace_gap * second).sqrt()
        }
    };
    let rates = mean_jump_rates(&trace, &local, gamma)?;

    let profile = mixing_profile(chain, &[0.25, 0.1])?;

    // Single-chain surrogates of the family conditions, read on the
    // scale of the inverse trace gap.
    let theta = 1.0 / trace_gap;
    let relaxation = if min_refl.is_finite() { 1.0 / (theta * min_refl) } else { 0.0 };
    let scaled = rates
        .rates
        .iter()
        .map(|row| row.iter().map(|r| theta * r).collect())
        .collect();
    let pi = chain.pi();
    let delta_mass: f64 = partition.delta().iter().map(|&i| pi[i]).sum();
    let min_well_mass = (0..kappa)
        .map(|x| partition.well(x).iter().map(|&i| pi[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let exit_mass = rates.row_rate_bounds.iter().map(|&b| theta * b).collect();

    Ok(Analysis {
        full_gap,
        trace_gap,
        reflected,
        capacities,
        t_quarter: profile.t_mix(0.25),
        t_tenth: profile.t_mix(0.1),
        theta,
        relaxation,
        scaled,
        passage_mass: delta_mass / min_well_mass,
        exit_mass,
        rates,
    })
}

fn pair_name(x: usize, y: usize) -> String {
    format!("({x},{y})")
}

fn analysis_json(chain: &Chain, partition: &Partition, a: &Analysis, tol: f64) -> Value {
    let stationary: Vec<Value> = chain
        .space()
        .labels()
        .iter()
        .zip(chain.pi().as_slice())
        .map(|(label, &p)| json!({"state": label, "p": num(p)}))
        .collect();
    let capacities: Vec<Value> = a
        .capacities
        .iter()
        .map(|&((x, y), v)| json!({"wells": [x, y], "value": num(v)}))
        .collect();
    let reflected: Vec<Value> = a
        .reflected
        .iter()
        .map(|g| g.map(num).unwrap_or(Value::Null))
        .collect();
    let residual = a
        .rates
        .exit_identity_residual
        .max(a.rates.pair_identity_residual);
    json!({
        "chain": {
            "states": chain.n(),
            "wells": partition.kappa(),
            "separating": partition.delta().len(),
        },
        "config": {
            "gamma": num(a.rates.gamma),
            "theta": num(a.theta),
            "tol": num(tol),
        },
        "stationary": stationary,
        "gaps": {
            "full": num(a.full_gap),
            "trace": num(a.trace_gap),
            "reflected": reflected,
        },
        "capacities": capacities,
        "mean_rates": {
            "rates": matrix(&a.rates.rates),
            "exit_identity_residual": num(a.rates.exit_identity_residual),
            "pair_identity_residual": num(a.rates.pair_identity_residual),
            "row_bounds": nums(&a.rates.row_rate_bounds),
            "within_tol": residual <= tol,
        },
        "mixing": {
            "t_quarter": a.t_quarter.map(num).unwrap_or(Value::Null),
            "t_tenth": a.t_tenth.map(num).unwrap_or(Value::Null),
        },
        "surrogates": {
            "relaxation_ratio": num(a.relaxation),
            "scaled_rates": matrix(&a.scaled),
            "passage_mass": num(a.passage_mass),
            "exit_mass": nums(&a.exit_mass),
        },
    })
}

fn analysis_csv(chain: &Chain, partition: &Partition, a: &Analysis, tol: f64) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("section,key,value\n");
    let mut row = |section: &str, key: &str, value: String| {
        let _ = writeln!(out, "{section},{},{value}", csv_field(key));
    };
    row("chain", "states", chain.n().to_string());
    row("chain", "wells", partition.kappa().to_string());
    row("chain", "separating", partition.delta().len().to_string());
    row("config", "gamma", a.rates.gamma.to_string());
    row("config", "theta", a.theta.to_string());
    row("config", "tol", tol.to_string());
    row("gap", "full", a.full_gap.to_string());
    row("gap", "trace", a.trace_gap.to_string());
    for (x, g) in a.reflected.iter().enumerate() {
        let value = g.map(|g| g.to_string()).unwrap_or_default();
        row("gap", &format!("reflected {x}"), value);
    }
    for &((x, y), v) in &a.capacities {
        row("capacity", &pair_name(x, y), v.to_string());
    }
    for (x, r) in a.rates.rates.iter().enumerate() {
        for (y, &v) in r.iter().enumerate() {
            if y != x {
                row("rate", &pair_name(x, y), v.to_string());
            }
        }
    }
    row("identity", "exit residual", a.rates.exit_identity_residual.to_string());
    row("identity", "pair residual", a.rates.pair_identity_residual.to_string());
    for (x, &b) in a.rates.row_rate_bounds.iter().enumerate() {
        row("identity", &format!("row bound {x}"), b.to_string());
    }
    row("mixing", "t(1/4)", a.t_quarter.map(|t| t.to_string()).unwrap_or_default());
    row("mixing", "t(1/10)", a.t_tenth.map(|t| t.to_string()).unwrap_or_default());
    row("surrogate", "relaxation ratio", a.relaxation.to_string());
    for (x, r) in a.scaled.iter().enumerate() {
        for (y, &v) in r.iter().enumerate() {
            if y != x {
                row("surrogate", &format!("scaled rate ({x},{y})"), v.to_string());
            }
        }
    }
    row("surrogate", "passage mass", a.passage_mass.to_string());
    for (x, &m) in a.exit_mass.iter().enumerate() {
        row("surrogate", &format!("exit mass {x}"), m.to_string());
    }
    for (label, &p) in chain.space().labels().iter().zip(chain.pi().as_slice()) {
        row("stationary", label, p.to_string());
    }
    out
}

fn run_analyze(args: &AnalyzeArgs) -> Result<u8> {
    if !(args.tol > 0.0 && args.tol.is_finite()) {
        return Err(Error::Parse(format!("tol must be positive, got {}", args.tol)));
    }
    let chain = io::read_chain(&args.chain)?;
    let partition = io::read_partition(&args.partition, chain.space())?;
    let analysis = analyze_chain(&chain, &partition, args.gamma)?;

    let refl: Vec<String> = analysis
        .reflected
        .iter()
        .map(|g| g.map(|g| format!("{g:.6e}")).unwrap_or_else(|| "-".into()))
        .collect();
    println!(
        "{} states, {} wells, {} separating",
        chain.n(),
        partition.kappa(),
        partition.delta().len()
    );
    println!(
        "gap {:.6e}, trace gap {:.6e}, reflected [{}]",
        analysis.full_gap,
        analysis.trace_gap,
        refl.join(", ")
    );
    for &((x, y), v) in &analysis.capacities {
        println!("capacity {} {:.6e}", pair_name(x, y), v);
    }
    let residual = analysis
        .rates
        .exit_identity_residual
        .max(analysis.rates.pair_identity_residual);
    println!(
        "mean rates at gamma {:.6e}, identity residual {:.3e} (tol {:.1e})",
        analysis.rates.gamma, residual, args.tol
    );

    ensure_dir(&args.out)?;
    let (name, body) = match args.format {
        Format::Json => (
            "analysis.json",
            to_pretty(&analysis_json(&chain, &partition, &analysis, args.tol)),
        ),
        Format::Csv => (
            "analysis.csv",
            analysis_csv(&chain, &partition, &analysis, args.tol),
        ),
    };
    let path = args.out.join(name);
    fresh(&path, args.force)?;
    io::write_text(&path, &body)?;
    println!("wrote {}", path.display());

    Ok(if residual <= args.tol { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Args)]
struct VerifyArgs {
    /// Suite: identities, sandwich, two-valley, fdd, polymer or dog
    suite: String,
    /// Model the suite runs on, for the model-bound suites
    #[arg(long)]
    model: Option<String>,
    /// Master seed behind random instances and sample paths
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Model size: quadrant side or bridge half-length
    #[arg(long = "N")]
    size: Option<usize>,
    /// Random instance or sample path count
    #[arg(long = "n")]
    samples: Option<usize>,
    /// Directory the verdict table is written into
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Overwrite an existing table
    #[arg(long)]
    force: bool,
}

/// The model-bound suites run on exactly one built-in model; naming any
/// other is a usage error, as is naming one for the random suites.
fn check_suite_model(suite: &str, model: Option<&str>) -> Result<()> {
    let expected = match suite {
        "two-valley" | "fdd" | "dog" => Some("dog"),
        "polymer" => Some("polymer"),
        "identities" | "sandwich" => None,
        // Unknown suites fail in run_suite with the full listing.
        _ => return Ok(()),
    };
    match (expected, model) {
        (_, None) => Ok(()),
        (Some(e), Some(m)) if e == m => Ok(()),
        (Some(e), Some(m)) => Err(Error::Parse(format!(
            "suite {suite} runs on the {e} model, not {m}"
        ))),
        (None, Some(m)) => Err(Error::Parse(format!(
            "suite {suite} draws random chains and takes no model, got {m}"
        ))),
    }
}

fn run_verify(args: &VerifyArgs) -> Result<u8> {
    check_suite_model(&args.suite, args.model.as_deref())?;
    let cfg = SuiteConfig {
        seed: args.seed,
        size: args.size,
        samples: args.samples,
    };
    let suite = run_suite(&args.suite, &cfg)?;

    println!("suite: {} (seed {})", suite.suite, args.seed);
    report::print_checks(&suite.checks);
    println!(
        "result: {} ({} checks)",
        if suite.passed() { "pass" } else { "FAIL" },
        suite.checks.len()
    );

    ensure_dir(&args.out)?;
    let (name, body) = match args.format {
        Format::Json => (
            format!("verify-{}.json", suite.suite),
            to_pretty(&json!({
                "suite": suite.suite,
                "config": {"seed": args.seed, "size": args.size, "samples": args.samples},
                "passed": suite.passed(),
                "checks": report::checks_json(&suite.checks),
            })),
        ),
        Format::Csv => (
            format!("verify-{}.csv", suite.suite),
            report::checks_csv(&suite.checks),
        ),
    };
    let path = args.out.join(name);
    fresh(&path, args.force)?;
    io::write_text(&path, &body)?;
    println!("wrote {}", path.display());

    Ok(if suite.passed() { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// family
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FamilyArgs {
    /// Built-in model: dog or polymer
    model: String,
    /// Comma separated sizes, strictly increasing: quadrant sides or
    /// bridge half-lengths
    #[arg(long)]
    params: String,
    /// Quadrant dimension (dog only, default 2)
    #[arg(long)]
    d: Option<usize>,
    /// Pinning strength (polymer only, default 0.3)
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma separated time scales, one per member; default is each
    /// member's inverse trace gap
    #[arg(long)]
    theta: Option<String>,
    /// Starting well
    #[arg(long, default_value_t = 0)]
    well: usize,
    /// Directory for the report and the trend table
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

fn build_member(model: &str, size: usize, d: Option<usize>, alpha: Option<f64>) -> Result<FamilyMember> {
    match model {
        "dog" => {
            if let Some(a) = alpha {
                return Err(Error::Parse(format!(
                    "the dog graph has no pinning strength, got --alpha {a}"
                )));
            }
            let dog = DogGraph::build(DogGraphSpec {
                n: size,
                d: d.unwrap_or(2),
            })?;
            let partition = dog.metastable_partition(None)?;
            Ok(FamilyMember {
                param: size as f64,
                chain: dog.chain,
                partition,
            })
        }
        "polymer" => {
            if let Some(d) = d {
                return Err(Error::Parse(format!(
                    "the polymer has no dimension, got --d {d}"
                )));
            }
            let polymer = Polymer::build(PolymerSpec {
                n: size,
                alpha: alpha.unwrap_or(0.3),
            })?;
            let partition = polymer.metastable_partition(None)?;
            Ok(FamilyMember {
                param: size as f64,
                chain: polymer.chain,
                partition,
            })
        }
        other => Err(Error::Parse(format!(
            "unknown model {other:?}; the built-ins are dog and polymer"
        ))),
    }
}

fn family_json(model: &str, well: usize, report: &ConditionReport, limit: &LimitChain) -> Value {
    let entries: Vec<Value> = report
        .entries
        .iter()
        .map(|e| {
            json!({
                "name": e.name,
                "values": nums(&e.values),
                "verdict": e.verdict.to_string(),
            })
        })
        .collect();
    let scaled: Vec<Value> = report.scaled_rates.iter().map(|m| matrix(m)).collect();
    json!({
        "model": model,
        "config": {
            "params": nums(&report.params),
            "thetas": nums(&report.thetas),
            "gammas": nums(&report.gammas),
            "horizons": nums(&report.horizons),
            "well": well,
            "trend_thresholds": {
                "small": num(TREND_SMALL),
                "stable_step": num(STABLE_STEP),
                "bounded_growth": num(BOUNDED_GROWTH),
                "violated_growth": num(VIOLATED_GROWTH),
            },
        },
        "entries": entries,
        "scaled_rates": scaled,
        "limit": {
            "rates": matrix(&limit.rates),
            "extrapolated": limit.extrapolated,
        },
    })
}

fn trends_csv(report: &ConditionReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("entry,param,value\n");
    for e in &report.entries {
        for (p, v) in report.params.iter().zip(&e.values) {
            let _ = writeln!(out, "{},{p},{v}", csv_field(&e.name));
        }
    }
    out
}

fn run_family(args: &FamilyArgs) -> Result<u8> {
    let sizes: Vec<usize> = parse_list(&args.params, "size")?;
    let members = sizes
        .iter()
        .map(|&s| build_member(&args.model, s, args.d, args.alpha))
        .collect::<Result<Vec<_>>>()?;
    let family = match &args.theta {
        Some(list) => ChainFamily::with_thetas(members, parse_list(list, "time scale")?)?,
        None => ChainFamily::new(members)?,
    };
    let starts = family.stationary_starts(args.well)?;
    let report = check_conditions(&family, &starts, args.well)?;
    let limit = predict_limit_chain(&family)?;

    println!("family: {} with {} members", args.model, family.len());
    for e in &report.entries {
        let values: Vec<String> = e.values.iter().map(|v| format!("{v:.3e}")).collect();
        println!("  {:<24} {:<12} {}", e.name, e.verdict.to_string(), values.join("  "));
    }
    println!(
        "limit rates{}:",
        if limit.extrapolated { "" } else { " (last member, not extrapolated)" }
    );
    for row in &limit.rates {
        let cells: Vec<String> = row.iter().map(|r| format!("{r:.6e}")).collect();
        println!("  [{}]", cells.join(", "));
    }
    let violated = report.any_violated();
    println!("result: {}", if violated { "violated" } else { "pass" });

    ensure_dir(&args.out)?;
    let report_path = args.out.join(format!("family-{}.json", args.model));
    let trends_path = args.out.join(format!("family-{}-trends.csv", args.model));
    fresh(&report_path, args.force)?;
    fresh(&trends_path, args.force)?;
    io::write_text(
        &report_path,
        &to_pretty(&family_json(&args.model, args.well, &report, &limit)),
    )?;
    io::write_text(&trends_path, &trends_csv(&report))?;
    println!("wrote {} and {}", report_path.display(), trends_path.display());

    Ok(if violated { 1 } else { 0 })
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ModelArgs {
    /// Built-in model: dog or polymer
    model: String,
    /// Quadrant side or bridge half-length
    #[arg(long = "N")]
    size: usize,
    /// Quadrant dimension (dog only, default 2)
    #[arg(long)]
    d: Option<usize>,
    /// Pinning strength (polymer only, default 0.3)
    #[arg(long)]
    alpha: Option<f64>,
    /// Split the dog at the origin instead of the deep-corner wells
    #[arg(long)]
    origin: bool,
    /// Directory for the chain and partition files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overwrite existing files
    #[arg(long)]
    force: bool,
}

fn run_model(args: &ModelArgs) -> Result<u8> {
    if args.origin && args.model != "dog" {
        return Err(Error::Parse("the origin split only exists for the dog".into()));
    }
    let (chain, partition) = if args.origin {
        let dog = DogGraph::build(DogGraphSpec {
            n: args.size,
            d: args.d.unwrap_or(2),
        })?;
        let partition = dog.origin_partition()?;
        (dog.chain, partition)
    } else {
        let member = build_member(&args.model, args.size, args.d, args.alpha)?;
        (member.chain, member.partition)
    };

    ensure_dir(&args.out)?;
    let chain_path = args.out.join(format!("{}-chain.json", args.model));
    let partition_path = args.out.join(format!("{}-partition.json", args.model));
    fresh(&chain_path, args.force)?;
    fresh(&partition_path, args.force)?;
    io::write_chain(&chain_path, &chain)?;
    io::write_partition(&partition_path, &partition, chain.space())?;
    println!(
        "{}: {} states, {} wells, {} separating",
        args.model,
        chain.n(),
        partition.kappa(),
        partition.delta().len()
    );
    println!("wrote {} and {}", chain_path.display(), partition_path.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SampleArgs {
    /// Chain file
    #[arg(long)]
    chain: PathBuf,
    /// Partition file; adds the order path, or the law estimate with --times
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Observation window for path samples
    #[arg(long)]
    horizon: Option<f64>,
    /// Sampling seed; always explicit
    #[arg(long)]
    seed: u64,
    /// Starting state label; paths default to a stationary start and the
    /// law estimate to the stationary measure conditioned on --well
    #[arg(long)]
    start: Option<String>,
    /// Comma separated read times in units of the time scale; switches
    /// to the order-law estimate
    #[arg(long)]
    times: Option<String>,
    /// Sample paths behind the law estimate
    #[arg(long = "n")]
    samples: Option<usize>,
    /// Time scale of the law estimate; default is the inverse trace gap
    #[arg(long)]
    theta: Option<f64>,
    /// Well the law estimate starts from
    #[arg(long, default_value_t = 0)]
    well: usize,
    /// Directory for the sample files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overwrite existing files
    #[arg(long)]
    force: bool,
}

/// Stream tag separating the order-path draw from the trajectory draw.
const ORDER_STREAM: u64 = 0x6f72_6465_72;

fn fdd_json(est: &FddEstimate, seed: u64) -> Value {
    let marginals: Vec<Value> = (0..est.times.len())
        .map(|k| {
            json!({
                "time": num(est.times[k]),
                "p": nums(&est.marginal(k)),
                "ci": nums(&est.marginal_ci(k)),
            })
        })
        .collect();
    let joint: Vec<Value> = est
        .probabilities
        .iter()
        .map(|(tuple, &p)| {
            json!({
                "labels": tuple,
                "p": num(p),
                "ci": num(est.ci_half_width(tuple)),
            })
        })
        .collect();
    json!({
        "config": {
            "times": nums(&est.times),
            "theta": num(est.theta),
            "n": est.n,
            "seed": seed,
        },
        "marginals": marginals,
        "joint": joint,
    })
}

fn deepest_state(chain: &Chain, well: &[usize]) -> usize {
    let pi = chain.pi();
    let mut best = well[0];
    for &i in &well[1..] {
        if pi[i] > pi[best] {
            best = i;
        }
    }
    best
}

fn run_sample(args: &SampleArgs) -> Result<u8> {
    let chain = io::read_chain(&args.chain)?;
    let partition = args
        .partition
        .as_ref()
        .map(|p| io::read_partition(p, chain.space()))
        .transpose()?;
    let start = args
        .start
        .as_ref()
        .map(|label| {
            chain.space().index_of(label).ok_or_else(|| {
                Error::Parse(format!(
                    "no state labelled {label:?} in {}",
                    args.chain.display()
                ))
            })
        })
        .transpose()?;
    ensure_dir(&args.out)?;

    if let Some(times) = &args.times {
        let partition = partition
            .as_ref()
            .ok_or_else(|| Error::Parse("the law estimate needs --partition".into()))?;
        if args.well >= partition.kappa() {
            return Err(Error::Parse(format!(
                "no well {} in a partition of {}",
                args.well,
                partition.kappa()
            )));
        }
        let times: Vec<f64> = parse_list(times, "time")?;
        let nu = match start {
            Some(s) => ProbabilityMeasure::dirac(chain.n(), s),
            None => chain.pi().conditioned(partition.well(args.well))?,
        };
        let theta = match args.theta {
            Some(t) => t,
            None => {
                let (trace, _) = trace_chain(&chain, &partition.traced_states())?;
                1.0 / spectral_gap(&trace)?.gap
            }
        };
        let n = args.samples.unwrap_or(5000);
        let est = order_fdd_estimate(&chain, partition, &nu, theta, &times, n, args.seed)?;
        let path = args.out.join("fdd.json");
        fresh(&path, args.force)?;
        io::write_text(&path, &to_pretty(&fdd_json(&est, args.seed)))?;
        println!(
            "order law at {} read times from {n} paths on the scale {theta:.6e}",
            times.len()
        );
        println!("wrote {}", path.display());
        return Ok(0);
    }

    let horizon = args
        .horizon
        .ok_or_else(|| Error::Parse("path samples need --horizon".into()))?;
    let init = match start {
        Some(s) => Start::State(s),
        None => Start::Measure(chain.pi()),
    };
    let traj = sample_path(&chain, init, horizon, args.seed)?;
    let traj_path = args.out.join("trajectory.csv");
    fresh(&traj_path, args.force)?;
    io::write_trajectory(&traj_path, &traj, chain.space())?;
    println!(
        "trajectory: {} jumps over a window of {horizon}",
        traj.states.len().saturating_sub(1)
    );
    println!("wrote {}", traj_path.display());

    if let Some(partition) = &partition {
        if args.well >= partition.kappa() {
            return Err(Error::Parse(format!(
                "no well {} in a partition of {}",
                args.well,
                partition.kappa()
            )));
        }
        // The order path is sampled on the well union directly, on the
        // trace clock, so excursions through the separating set never
        // enter the labels.  Its draw is independent of the trajectory.
        let init = match start {
            Some(s) => match partition.well_of(s) {
                Some(_) => s,
                None => {
                    return Err(Error::Parse(format!(
                        "state {:?} lies outside every well",
                        chain.space().label(s)
                    )))
                }
            },
            None => deepest_state(&chain, partition.well(args.well)),
        };
        let tracej = sample_trace_path(
            &chain,
            &partition.traced_states(),
            init,
            horizon,
            args.seed ^ ORDER_STREAM,
        )?;
        let order = project_order(&tracej, partition)?;
        let order_path = args.out.join("order.csv");
        fresh(&order_path, args.force)?;
        io::write_order_path(&order_path, &order)?;
        println!("order path: {} label changes", order.jumps());
        println!("wrote {}", order_path.display());
    }
    Ok(0)
}
