//! Check suites behind the `verify` command and the release gate.
//!
//! Each suite evaluates a table of named checks: an observed number and
//! the closed interval it must land in.  The random suites draw their
//! instances from an explicit seed, so a report is reproducible bit for
//! bit; the model suites are deterministic outright.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::Observable;
use crate::error::{Error, Result};
use crate::metastability::{
    cesaro_occupation, limit_semigroup, two_valley_ratio, LimitChain, TwoValleyReport,
};
use crate::models::{random_reversible, DogGraph, DogGraphSpec, Polymer, PolymerSpec};
use crate::potential::{
    capacity, escape_bounds, hitting_prob_capacity_formula, mean_jump_rates, quasi_stationary,
};
use crate::semigroup::Uniformized;
use crate::simulate::{hitting_time_samples, order_fdd_estimate, Start, LILLIEFORS_CRITICAL};
use crate::spectral::{gap_sandwich, harmonic_extension, spectral_gap};
use crate::transforms::{reflect_chain, trace_chain, Partition};

/// Exact identities must hold to this relative precision.
const IDENTITY_TOL: f64 = 1e-10;
/// Inequalities may undershoot by at most this much.
const SLACK_TOL: f64 = 1e-10;
/// Bounds checked inside `escape_bounds` are re-reported at its own guard.
const ESCAPE_TOL: f64 = 1e-12;
/// Model symmetries (reflections, closed-form weights).
const SYMMETRY_TOL: f64 = 1e-12;
/// Exit law from the quasi-stationary measure, exact route.
const EXIT_LAW_TOL: f64 = 1e-8;
/// Two-valley ratio distance from one half at the largest size.
const RATIO_TOL: f64 = 0.15;
/// Order-process marginals against the limit semigroup, on top of the
/// per-label 95% half-width.
const MARGINAL_TOL: f64 = 0.05;
/// Expected passage-set time at the largest size.
const PASSAGE_MAX: f64 = 0.05;
/// Occupation integral discrepancy against the limit at the largest size.
const DISCREPANCY_MAX: f64 = 0.1;
/// Spread of `capacity * N^2 log N` across the size ladder.
const CAPACITY_BAND: f64 = 4.0;
const GAP_SLOPE: (f64, f64) = (-2.4, -1.8);
const REFLECTED_GAP_SLOPE: (f64, f64) = (-2.2, -1.8);

// ---------------------------------------------------------------------------
// Check tables
// ---------------------------------------------------------------------------

/// One row of a suite report.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    /// Admissible interval; half-lines use infinities.  Informational
    /// rows are unbounded and only fail on a non-number.
    pub low: f64,
    pub high: f64,
    pub pass: bool,
}

impl Check {
    fn eval(name: String, observed: f64, low: f64, high: f64) -> Check {
        let pass = observed >= low && observed <= high;
        Check {
            name,
            observed,
            low,
            high,
            pass,
        }
    }

    pub fn at_most(name: impl Into<String>, observed: f64, high: f64) -> Check {
        Check::eval(name.into(), observed, f64::NEG_INFINITY, high)
    }

    pub fn at_least(name: impl Into<String>, observed: f64, low: f64) -> Check {
        Check::eval(name.into(), observed, low, f64::INFINITY)
    }

    pub fn within(name: impl Into<String>, observed: f64, low: f64, high: f64) -> Check {
        Check::eval(name.into(), observed, low, high)
    }

    pub fn info(name: impl Into<String>, observed: f64) -> Check {
        Check::eval(name.into(), observed, f64::NEG_INFINITY, f64::INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Knobs a caller may turn; everything has a default matching the gate.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Largest model size, where the suite drives a model family
    /// (dog-graph side length, polymer step count).
    pub size: Option<usize>,
    /// Instance count for the random suites, sample count for the
    /// stochastic ones.
    pub samples: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 7,
            size: None,
            samples: None,
        }
    }
}

pub const SUITES: [&str; 6] = [
    "identities",
    "sandwich",
    "two-valley",
    "fdd",
    "polymer",
    "dog",
];

/// Runs one named suite.  The exit-law and occupation blocks of the dog
/// suite run at fixed sizes; `size` caps the scaling ladders.
pub fn run_suite(name: &str, cfg: &SuiteConfig) -> Result<SuiteReport> {
    let checks = match name {
        "identities" => {
            let instances = cfg.samples.unwrap_or(200);
            let escapes = cfg.samples.map(|s| (s / 4).max(2)).unwrap_or(50);
            let mut checks = identity_checks(cfg.seed, instances)?;
            checks.extend(escape_bound_checks(cfg.seed ^ 0xb01d, escapes)?);
            checks
        }
        "sandwich" => sandwich_checks(cfg.seed, cfg.samples.unwrap_or(200))?,
        "two-valley" => {
            let sizes = doubling(4, cfg.size.unwrap_or(16));
            if sizes.is_empty() {
                return Err(Error::Parse(
                    "two-valley suite needs a side length of at least 4".into(),
                ));
            }
            dog_two_valley_checks(&sizes)?
        }
        "fdd" => dog_fdd_checks(
            cfg.size.unwrap_or(8),
            cfg.samples.unwrap_or(5000),
            cfg.seed,
        )?,
        "polymer" => {
            let top = cfg.size.unwrap_or(5);
            if top < 3 {
                return Err(Error::Parse(
                    "polymer suite needs a half-length of at least three".into(),
                ));
            }
            let halves: Vec<usize> = (3..=top).collect();
            polymer_checks(&halves, 0.3)?
        }
        "dog" => {
            let sizes = doubling(4, cfg.size.unwrap_or(32));
            if sizes.len() < 2 {
                return Err(Error::Parse(
                    "dog suite needs at least two sizes; raise the side length".into(),
                ));
            }
            let mut checks = dog_scaling_checks(&sizes)?;
            checks.extend(dog_exit_law_checks(
                8,
                cfg.samples.unwrap_or(10_000),
                cfg.seed,
            )?);
            checks.extend(dog_occupation_checks(&[8, 16])?);
            checks
        }
        other => return Err(Error::UnknownSuite(other.into())),
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        checks,
    })
}

fn doubling(from: usize, to: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = from;
    while n <= to {
        out.push(n);
        n *= 2;
    }
    out
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

/// Largest step up in a sequence that is supposed to decrease.
fn worst_increase(vals: &[f64]) -> f64 {
    vals.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn lilliefors_critical(level: f64) -> f64 {
    LILLIEFORS_CRITICAL
        .iter()
        .find(|(l, _)| (l - level).abs() < 1e-9)
        .map(|&(_, c)| c)
        .expect("tabulated level")
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Draw {
    n: usize,
    density: f64,
    chain_seed: u64,
    rng_seed: u64,
}

/// Pre-draws all instance parameters sequentially so the parallel body
/// stays deterministic regardless of scheduling.
fn draws(seed: u64, count: usize, sizes: (usize, usize), densities: (f64, f64)) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Draw {
            n: rng.gen_range(sizes.0..=sizes.1),
            density: rng.gen_range(densities.0..densities.1),
            chain_seed: rng.gen(),
            rng_seed: rng.gen(),
        })
        .collect()
}

/// Ascending random subset of `0..n` with `k` states.
fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Splits the whole space into `parts` nonempty blocks.
fn split_whole(rng: &mut ChaCha8Rng, n: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    cuts.truncate(parts - 1);
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for &c in &cuts {
        let mut block = idx[start..c].to_vec();
        block.sort_unstable();
        out.push(block);
        start = c;
    }
    let mut last = idx[start..].to_vec();
    last.sort_unstable();
    out.push(last);
    out
}

/// Splits `set` into two nonempty ascending halves at a random cut.
fn split_set(rng: &mut ChaCha8Rng, set: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut mix = set.to_vec();
    mix.shuffle(rng);
    let mut b = mix.split_off(rng.gen_range(1..set.len()));
    let mut a = mix;
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

// ---------------------------------------------------------------------------
// Identity suite
// ---------------------------------------------------------------------------

/// Exact identities on random reversible chains: the star-capacity
/// expressions for the mean jump rates, the three-capacity hitting
/// identity, the conditioned exit rate of a trace well as a capacity
/// over the well mass, the Dirichlet energy of a harmonic extension,
/// and the Dirichlet-principle row bound on the mean rates.
pub fn identity_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let specs = draws(seed, instances, (8, 60), (0.5, 0.95));
    let results: Vec<[f64; 6]> = specs
        .into_par_iter()
        .map(identity_instance)
        .collect::<Result<_>>()?;
    let mut worst = [f64::NEG_INFINITY; 6];
    for r in &results {
        for (w, v) in worst.iter_mut().zip(r) {
            *w = w.max(*v);
        }
    }
    Ok(vec![
        Check::at_most("star-capacity exit identity", worst[0], IDENTITY_TOL),
        Check::at_most("star-capacity pair identity", worst[1], IDENTITY_TOL),
        Check::at_most("three-capacity hitting identity", worst[2], IDENTITY_TOL),
        Check::at_most("trace exit rate identity", worst[3], IDENTITY_TOL),
        Check::at_most("harmonic extension energy", worst[4], IDENTITY_TOL),
        Check::at_most("mean-rate row bound", worst[5], IDENTITY_TOL),
    ])
}

fn identity_instance(d: Draw) -> Result<[f64; 6]> {
    let chain = random_reversible(d.n, d.chain_seed, d.density)?;
    let n = chain.n();
    let mut rng = ChaCha8Rng::seed_from_u64(d.rng_seed);

    // Star-capacity identities and the row bound, on a full three-way
    // split and a fresh clock rate each time.
    let part = Partition::new(n, split_whole(&mut rng, n, 3))?;
    let gamma = chain.max_holding() * 10f64.powf(rng.gen_range(-2.0..1.0));
    let rates = mean_jump_rates(&chain, &part, gamma)?;
    let row_over = (0..3)
        .map(|x| (rates.row_sum(x) - rates.row_rate_bounds[x]) / rates.row_rate_bounds[x])
        .fold(f64::NEG_INFINITY, f64::max);

    // Three-capacity identity at a random state against two targets.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let eta = idx[0];
    let ka = rng.gen_range(1..=(n - 1) / 3);
    let kb = rng.gen_range(1..=(n - 1) / 3);
    let mut a = idx[1..1 + ka].to_vec();
    let mut b = idx[1 + ka..1 + ka + kb].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let hit = hitting_prob_capacity_formula(&chain, eta, &a, &b)?;
    let three_cap = hit.identity.map_or(0.0, |v| (v - hit.exact).abs());

    // Conditioned exit rate of one trace well against the capacity to
    // the rest of the traced set, over the well mass.
    let e_size = rng.gen_range(4..n);
    let e = pick(&mut rng, n, e_size);
    let (x_well, rest) = split_set(&mut rng, &e);
    let (trace, kept) = trace_chain(&chain, &e)?;
    let mut in_x = vec![false; n];
    for &i in &x_well {
        in_x[i] = true;
    }
    let mut mass = 0.0;
    let mut flow = 0.0;
    for k in 0..trace.n() {
        if !in_x[kept[k]] {
            continue;
        }
        mass += trace.pi()[k];
        let mut out = 0.0;
        for &(j, r) in trace.rates().row(k) {
            if !in_x[kept[j]] {
                out += r;
            }
        }
        flow += trace.pi()[k] * out;
    }
    let lhs = flow / mass;
    let rhs = capacity(&chain, &x_well, &rest)?.value / chain.pi().mass_of(&x_well);
    let trace_exit = (lhs - rhs).abs() / rhs;

    // Dirichlet energy of the harmonic extension against the traced
    // form of its boundary data.
    let sub_size = rng.gen_range(2..n);
    let sub = pick(&mut rng, n, sub_size);
    let f: Vec<f64> = (0..sub.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ext = harmonic_extension(&chain, &sub, &f)?;
    let lhs = chain.dirichlet_form(&ext, &ext)?;
    let (trace2, kept2) = trace_chain(&chain, &sub)?;
    let f_trace = Observable::new(kept2.iter().map(|&i| ext[i]).collect());
    let rhs = chain.pi().mass_of(&sub) * trace2.dirichlet_form(&f_trace, &f_trace)?;
    let extension = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);

    Ok([
        rates.exit_identity_residual,
        rates.pair_identity_residual,
        three_cap,
        trace_exit,
        extension,
        row_over,
    ])
}

/// Escape bounds on random two-well chains: the potential bound with
/// its bracket from below, the Schwarz bound, and the per-state
/// capacity ratio must all contain the exact killed-semigroup
/// probability.
pub fn escape_bound_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let specs = draws(seed, instances, (8, 30), (0.6, 0.95));
    let results: Vec<[f64; 4]> = specs
        .into_par_iter()
        .map(escape_instance)
        .collect::<Result<_>>()?;
    let mut worst = [f64::NEG_INFINITY; 4];
    for r in &results {
        for (w, v) in worst.iter_mut().zip(r) {
            *w = w.max(*v);
        }
    }
    Ok(vec![
        Check::at_most("escape under potential bound", worst[0], ESCAPE_TOL),
        Check::at_most("escape bracket from below", worst[1], ESCAPE_TOL),
        Check::at_most("escape under Schwarz bound", worst[2], ESCAPE_TOL),
        Check::at_most("escape under capacity ratio", worst[3], ESCAPE_TOL),
    ])
}

fn escape_instance(d: Draw) -> Result<[f64; 4]> {
    let chain = random_reversible(d.n, d.chain_seed, d.density)?;
    let n = chain.n();
    let mut rng = ChaCha8Rng::seed_from_u64(d.rng_seed);
    let part = if rng.gen_bool(0.5) && n >= 6 {
        // leave some passage states outside the wells
        let e_size = rng.gen_range(4..n);
        let e = pick(&mut rng, n, e_size);
        let (a, b) = split_set(&mut rng, &e);
        Partition::new(n, vec![a, b])?
    } else {
        Partition::new(n, split_whole(&mut rng, n, 2))?
    };
    let x = rng.gen_range(0..2);
    let nu = chain.pi().conditioned(part.well(x))?;
    let gamma = chain.max_holding() * 10f64.powf(rng.gen_range(-3.0..0.0));
    let eb = escape_bounds(&chain, &part, x, gamma, &nu)?;
    let potential = eb.exact - eb.upper_potential;
    let bracket = eb
        .lower_grid
        .iter()
        .map(|&(_, lower, value)| lower - value)
        .fold(f64::NEG_INFINITY, f64::max);
    let schwarz = eb.exact - eb.upper_schwarz;
    let ratio = eb
        .per_state
        .iter()
        .map(|&(_, bound, value)| value - bound)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok([potential, bracket, schwarz, ratio])
}

// ---------------------------------------------------------------------------
// Sandwich suite
// ---------------------------------------------------------------------------

/// Inequalities between the gap, the trace gap and capacities, plus the
/// two-valley sandwich at five clock rates per instance.
pub fn sandwich_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let specs = draws(seed, instances, (8, 40), (0.85, 0.95));
    let results: Vec<[f64; 5]> = specs
        .into_par_iter()
        .map(sandwich_instance)
        .collect::<Result<_>>()?;
    let mut worst = [f64::INFINITY; 5];
    for r in &results {
        for (w, v) in worst.iter_mut().zip(r) {
            *w = w.min(*v);
        }
    }
    Ok(vec![
        Check::at_least("gap above corrected trace gap", worst[0], -SLACK_TOL),
        Check::at_least("gap below trace gap", worst[1], -SLACK_TOL),
        Check::at_least("capacity bound on trace gap", worst[2], -SLACK_TOL),
        Check::at_least("valley sandwich lower slack", worst[3], -SLACK_TOL),
        Check::at_least("valley sandwich upper slack", worst[4], -SLACK_TOL),
    ])
}

fn sandwich_instance(d: Draw) -> Result<[f64; 5]> {
    let chain = random_reversible(d.n, d.chain_seed, d.density)?;
    let n = chain.n();
    let mut rng = ChaCha8Rng::seed_from_u64(d.rng_seed);

    let e_size = rng.gen_range(2..n);
    let e = pick(&mut rng, n, e_size);
    let gs = gap_sandwich(&chain, &e)?;

    // Valley split; a well whose reflection disconnects is redrawn.
    let mut attempts = 0;
    let (a, b, first) = loop {
        let e2_size = rng.gen_range(2..=n);
        let e2 = pick(&mut rng, n, e2_size);
        let (a, b) = split_set(&mut rng, &e2);
        match two_valley_ratio(&chain, &a, &b, None) {
            Ok(r) => break (a, b, r),
            Err(Error::ReducibleReflection { .. }) if attempts < 32 => attempts += 1,
            Err(err) => return Err(err),
        }
    };
    let mut lo_slack = f64::INFINITY;
    let mut hi_slack = f64::INFINITY;
    let mut absorb = |r: &TwoValleyReport| {
        let (lo, mid, hi) = r.sandwich;
        lo_slack = lo_slack.min((mid - lo) / mid.abs().max(1.0));
        hi_slack = hi_slack.min((hi - mid) / hi.abs().max(1.0));
    };
    absorb(&first);
    for m in [0.25, 0.5, 2.0, 4.0] {
        absorb(&two_valley_ratio(&chain, &a, &b, Some(m * first.gamma))?);
    }

    let mut union: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
    union.sort_unstable();
    let cap = capacity(&chain, &a, &b)?.value;
    let bound = chain.pi().mass_of(&union) * cap
        / (chain.pi().mass_of(&a) * chain.pi().mass_of(&b));
    let cap_slack = bound - first.trace_gap;

    Ok([
        gs.lower_slack,
        gs.upper_slack,
        cap_slack,
        lo_slack,
        hi_slack,
    ])
}

// ---------------------------------------------------------------------------
// Dog-graph suites
// ---------------------------------------------------------------------------

/// Normalized two-valley ratio across a ladder of dog graphs; it must
/// approach one half and land within `RATIO_TOL` at the largest size.
pub fn dog_two_valley_checks(sizes: &[usize]) -> Result<Vec<Check>> {
    if sizes.is_empty() {
        return Err(Error::Parse("two-valley suite needs at least one size".into()));
    }
    let rows: Vec<(usize, f64)> = sizes
        .par_iter()
        .map(|&side| {
            let dog = DogGraph::build(DogGraphSpec { n: side, d: 2 })?;
            let part = dog.metastable_partition(None)?;
            let r = two_valley_ratio(&dog.chain, part.well(0), part.well(1), None)?;
            Ok((side, r.ratio))
        })
        .collect::<Result<_>>()?;
    let mut checks: Vec<Check> = rows
        .iter()
        .map(|&(side, ratio)| Check::info(format!("normalized ratio (N={side})"), ratio))
        .collect();
    let dist: Vec<f64> = rows.iter().map(|r| (r.1 - 0.5).abs()).collect();
    let last = rows.last().unwrap().0;
    checks.push(Check::at_most(
        format!("distance from one half (N={last})"),
        *dist.last().unwrap(),
        RATIO_TOL,
    ));
    if dist.len() >= 2 {
        checks.push(Check::at_most(
            "distance shrinks with N",
            worst_increase(&dist),
            0.0,
        ));
    }
    Ok(checks)
}

/// Gap, reflected-quadrant gap and capacity across a dog-graph ladder:
/// log-log slopes in their bands, the scaled capacity inside a fixed
/// spread.
pub fn dog_scaling_checks(sizes: &[usize]) -> Result<Vec<Check>> {
    if sizes.len() < 2 {
        return Err(Error::Parse("scaling needs at least two sizes".into()));
    }
    let rows: Vec<(usize, f64, f64, f64)> = sizes
        .par_iter()
        .map(|&side| {
            let dog = DogGraph::build(DogGraphSpec { n: side, d: 2 })?;
            let gap = spectral_gap(&dog.chain)?.gap;
            let quadrant = dog.positive_quadrant();
            let (reflected, _) = reflect_chain(&dog.chain, &quadrant)?;
            let refl_gap = spectral_gap(&reflected)?.gap;
            let part = dog.metastable_partition(None)?;
            let cap = capacity(&dog.chain, part.well(0), part.well(1))?.value;
            Ok((side, gap, refl_gap, cap))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| (r.0 as f64).ln()).collect();
    // Raw log-log regressions.  The extra log factor in the gap law
    // drags its slope below -2 at these sizes, hence the deeper band.
    let y_gap: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let y_refl: Vec<f64> = rows.iter().map(|r| r.2.ln()).collect();
    let scaled: Vec<f64> = rows
        .iter()
        .map(|r| r.3 * (r.0 as f64).powi(2) * (r.0 as f64).ln())
        .collect();
    let band = scaled.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        / scaled.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let mut checks: Vec<Check> = rows
        .iter()
        .zip(&scaled)
        .map(|(&(side, ..), &s)| Check::info(format!("scaled capacity (N={side})"), s))
        .collect();
    checks.push(Check::within(
        "gap scaling slope",
        slope(&xs, &y_gap),
        GAP_SLOPE.0,
        GAP_SLOPE.1,
    ));
    checks.push(Check::within(
        "reflected gap scaling slope",
        slope(&xs, &y_refl),
        REFLECTED_GAP_SLOPE.0,
        REFLECTED_GAP_SLOPE.1,
    ));
    checks.push(Check::at_most("capacity scaling band", band, CAPACITY_BAND));
    Ok(checks)
}

/// Exit law of each well from its quasi-stationary measure: the killed
/// semigroup reproduces the exponential with the quasi-stationary rate,
/// and sampled exit times pass the corrected distribution test.
pub fn dog_exit_law_checks(side: usize, samples: usize, seed: u64) -> Result<Vec<Check>> {
    let dog = DogGraph::build(DogGraphSpec { n: side, d: 2 })?;
    let part = dog.metastable_partition(None)?;
    let mut checks = Vec::with_capacity(4);
    for x in 0..part.kappa() {
        let well = part.well(x);
        let q = quasi_stationary(&dog.chain, well)?;
        let (killed, kept) = Uniformized::killed(&dog.chain, well)?;
        let v0: Vec<f64> = kept.iter().map(|&i| q.measure[i]).collect();
        let horizon = 3.0 / q.rate;
        let deviation = (1..=10)
            .map(|k| {
                let t = horizon * k as f64 / 10.0;
                (killed.survival(&v0, t) - (-q.rate * t).exp()).abs()
            })
            .fold(0.0_f64, f64::max);
        checks.push(Check::at_most(
            format!("exit law semigroup gap (well {x})"),
            deviation,
            EXIT_LAW_TOL,
        ));
        let target: Vec<usize> = (0..dog.chain.n())
            .filter(|&i| part.well_of(i) != Some(x))
            .collect();
        let ht = hitting_time_samples(
            &dog.chain,
            Start::Measure(&q.measure),
            &target,
            samples,
            seed.wrapping_add(x as u64),
        )?;
        checks.push(Check::at_most(
            format!("exit law distribution test (well {x})"),
            ht.report.lilliefors_statistic,
            lilliefors_critical(0.01),
        ));
    }
    Ok(checks)
}

/// Occupation integrals of the rescaled chain against the symmetric
/// two-state limit: passage time small, well integrals close, closer
/// with size.
pub fn dog_occupation_checks(sizes: &[usize]) -> Result<Vec<Check>> {
    if sizes.is_empty() {
        return Err(Error::Parse("occupation suite needs at least one size".into()));
    }
    let rows: Vec<(usize, f64, f64)> = sizes
        .par_iter()
        .map(|&side| {
            let dog = DogGraph::build(DogGraphSpec { n: side, d: 2 })?;
            let part = dog.origin_partition()?;
            let (trace, _) = trace_chain(&dog.chain, &part.traced_states())?;
            let theta = 1.0 / spectral_gap(&trace)?.gap;
            let nu = dog.chain.pi().conditioned(part.well(0))?;
            let limit = LimitChain::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]])?;
            let rep = cesaro_occupation(&dog.chain, &part, &nu, theta, 2.0, &limit)?;
            Ok((side, rep.delta_occupation, rep.discrepancy))
        })
        .collect::<Result<_>>()?;
    let last = rows.last().unwrap().0;
    let mut checks: Vec<Check> = rows
        .iter()
        .map(|&(side, delta, _)| Check::info(format!("passage occupation (N={side})"), delta))
        .collect();
    checks.push(Check::at_most(
        format!("passage occupation bound (N={last})"),
        rows.last().unwrap().1,
        PASSAGE_MAX,
    ));
    checks.push(Check::at_most(
        format!("occupation discrepancy (N={last})"),
        rows.last().unwrap().2,
        DISCREPANCY_MAX,
    ));
    if rows.len() >= 2 {
        let discs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        checks.push(Check::at_most(
            "occupation discrepancy shrinks",
            worst_increase(&discs),
            0.0,
        ));
    }
    Ok(checks)
}

/// Sampled one-dimensional marginals of the order process against the
/// symmetric two-state limit semigroup, within tolerance plus the
/// binomial half-width.
pub fn dog_fdd_checks(side: usize, samples: usize, seed: u64) -> Result<Vec<Check>> {
    let dog = DogGraph::build(DogGraphSpec { n: side, d: 2 })?;
    let part = dog.metastable_partition(None)?;
    let (trace, _) = trace_chain(&dog.chain, &part.traced_states())?;
    let theta = 1.0 / spectral_gap(&trace)?.gap;
    let nu = dog.chain.pi().conditioned(part.well(0))?;
    let times = [0.5, 1.0, 2.0];
    let est = order_fdd_estimate(&dog.chain, &part, &nu, theta, &times, samples, seed)?;
    let limit = LimitChain::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]])?;
    let mut checks = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let p = limit_semigroup(&limit, t)?;
        let marginal = est.marginal(k);
        let ci = est.marginal_ci(k);
        let observed = (0..part.kappa())
            .map(|x| (marginal[x] - p[(0, x)]).abs() - ci[x])
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(
            format!("order marginal gap (t={t})"),
            observed,
            MARGINAL_TOL,
        ));
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Polymer suite
// ---------------------------------------------------------------------------

/// Corner-flip rates against the closed-form stationary weights, the
/// path-reflection symmetry, and the relaxation ratio trend across a
/// ladder of bridge lengths.
pub fn polymer_checks(half_lengths: &[usize], alpha: f64) -> Result<Vec<Check>> {
    if half_lengths.is_empty() {
        return Err(Error::Parse("polymer suite needs at least one size".into()));
    }
    let mut balance = f64::NEG_INFINITY;
    let mut weights = f64::NEG_INFINITY;
    let mut rate_sym = f64::NEG_INFINITY;
    let mut quantity_sym = f64::NEG_INFINITY;
    let mut ratios = Vec::with_capacity(half_lengths.len());
    for &half in half_lengths {
        let poly = Polymer::build(PolymerSpec { n: half, alpha })?;
        let chain = &poly.chain;
        let n = chain.n();

        // Detailed balance of the rate table against alpha^(zero count);
        // the common endpoint factor cancels.
        let w: Vec<f64> = (0..n)
            .map(|i| alpha.powi(poly.heights(i).iter().filter(|&&h| h == 0).count() as i32))
            .collect();
        for (i, j, r) in chain.rates().iter_entries() {
            let forward = w[i] * r;
            let back = w[j] * chain.rates().rate(j, i);
            balance = balance.max((forward - back).abs() / forward.max(back));
        }
        let z: f64 = w.iter().sum();
        for i in 0..n {
            weights = weights.max((chain.pi()[i] - w[i] / z).abs() / (w[i] / z));
        }

        // The path reflection must map the rate table onto itself.
        let index: HashMap<Vec<i64>, usize> = (0..n)
            .map(|i| (poly.heights(i).to_vec(), i))
            .collect();
        let sigma: Vec<usize> = (0..n)
            .map(|i| index[&poly.heights(i).iter().map(|h| -h).collect::<Vec<_>>()])
            .collect();
        for (i, j, r) in chain.rates().iter_entries() {
            rate_sym = rate_sym.max((r - chain.rates().rate(sigma[i], sigma[j])).abs());
        }

        let part = poly.metastable_partition(None)?;
        let gap = spectral_gap(chain)?.gap;
        let (r1, _) = reflect_chain(chain, part.well(0))?;
        let (r2, _) = reflect_chain(chain, part.well(1))?;
        let g1 = spectral_gap(&r1)?.gap;
        let g2 = spectral_gap(&r2)?.gap;
        ratios.push(gap / g1.min(g2));

        let m1 = chain.pi().mass_of(part.well(0));
        let m2 = chain.pi().mass_of(part.well(1));
        let q1 = quasi_stationary(chain, part.well(0))?.rate;
        let q2 = quasi_stationary(chain, part.well(1))?.rate;
        quantity_sym = quantity_sym
            .max((m1 - m2).abs())
            .max((g1 - g2).abs() / g1.max(g2))
            .max((q1 - q2).abs() / q1.max(q2));
    }
    let mut checks = vec![
        Check::at_most("corner-flip detailed balance", balance, SYMMETRY_TOL),
        Check::at_most("stationary weights", weights, SYMMETRY_TOL),
        Check::at_most("rate table reflection", rate_sym, SYMMETRY_TOL),
        Check::at_most("reflected quantity symmetry", quantity_sym, SYMMETRY_TOL),
    ];
    for (&half, &ratio) in half_lengths.iter().zip(&ratios) {
        checks.push(Check::info(
            format!("relaxation ratio (2N={})", 2 * half),
            ratio,
        ));
    }
    if ratios.len() >= 2 {
        checks.push(Check::at_most(
            "relaxation ratio decreasing",
            worst_increase(&ratios),
            0.0,
        ));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all_pass(checks: &[Check]) {
        for c in checks {
            assert!(
                c.pass,
                "{} observed {} outside [{}, {}]",
                c.name, c.observed, c.low, c.high
            );
        }
    }

    #[test]
    fn unknown_suite_is_rejected() {
        match run_suite("spectra", &SuiteConfig::default()) {
            Err(Error::UnknownSuite(name)) => assert_eq!(name, "spectra"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_checks_hold_on_a_sample() {
        let checks = identity_checks(7, 15).unwrap();
        assert_eq!(checks.len(), 6);
        assert_all_pass(&checks);
    }

    #[test]
    fn escape_bounds_hold_on_a_sample() {
        let checks = escape_bound_checks(11, 8).unwrap();
        assert_eq!(checks.len(), 4);
        assert_all_pass(&checks);
    }

    #[test]
    fn sandwich_checks_hold_on_a_sample() {
        let checks = sandwich_checks(5, 12).unwrap();
        assert_eq!(checks.len(), 5);
        assert_all_pass(&checks);
    }

    #[test]
    fn sandwich_checks_are_deterministic() {
        let a = sandwich_checks(3, 6).unwrap();
        let b = sandwich_checks(3, 6).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.observed.to_bits(), y.observed.to_bits(), "{}", x.name);
        }
    }

    #[test]
    fn two_valley_ladder_approaches_one_half() {
        let checks = dog_two_valley_checks(&[4, 8, 16]).unwrap();
        assert_eq!(checks.len(), 5);
        assert_all_pass(&checks);
    }

    #[test]
    fn exit_laws_are_exponential() {
        let checks = dog_exit_law_checks(8, 300, 2).unwrap();
        assert_eq!(checks.len(), 4);
        assert_all_pass(&checks);
    }

    #[test]
    fn occupation_integrals_match_limit() {
        let checks = dog_occupation_checks(&[8, 16]).unwrap();
        assert_all_pass(&checks);
    }

    #[test]
    fn order_marginals_match_limit() {
        let checks = dog_fdd_checks(8, 1000, 1).unwrap();
        assert_eq!(checks.len(), 3);
        assert_all_pass(&checks);
    }

    #[test]
    fn polymer_family_checks_hold() {
        let checks = polymer_checks(&[3, 4, 5], 0.3).unwrap();
        assert_all_pass(&checks);
    }

    #[test]
    fn suite_dispatch_runs_identities() {
        let cfg = SuiteConfig {
            samples: Some(8),
            ..SuiteConfig::default()
        };
        let report = run_suite("identities", &cfg).unwrap();
        assert_eq!(report.suite, "identities");
        assert_eq!(report.checks.len(), 10);
        assert!(report.passed(), "{:?}", report.failures());
    }

    #[test]
    fn check_constructors_classify() {
        assert!(Check::at_most("x", 1.0, 2.0).pass);
        assert!(!Check::at_most("x", 3.0, 2.0).pass);
        assert!(Check::at_least("x", -1e-12, -1e-10).pass);
        assert!(!Check::within("x", -2.5, -2.4, -1.8).pass);
        assert!(Check::info("x", f64::INFINITY).pass);
        assert!(!Check::info("x", f64::NAN).pass);
    }

    #[test]
    fn trend_helpers() {
        assert!(worst_increase(&[3.0, 2.0, 1.0]) < 0.0);
        assert!(worst_increase(&[3.0, 2.0, 2.5]) > 0.0);
        let xs = [1.0, 2.0, 3.0];
        let ys = [2.0, 4.0, 6.0];
        assert!((slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
