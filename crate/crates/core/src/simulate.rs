//! Event-driven path sampling and the empirical side of the limit theorems:
//! finite-dimensional distributions of the order process, hitting-time laws,
//! passage occupation, and tightness diagnostics.
//!
//! Sampling is exact Gillespie: exponential holds, jump by the embedded
//! kernel.  Every trajectory draws from its own counter-based stream keyed
//! by (seed, index), so shard layout never changes the statistics, and
//! aggregation walks the trajectories in index order so the floating-point
//! result is reproducible too.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{Chain, ProbabilityMeasure};
use crate::error::{Error, Result};
use crate::semigroup::Uniformized;
use crate::transforms::{trace_chain, Partition};

/// Hard cap on jump events per trajectory; hitting a connected target takes
/// nowhere near this, so running into the cap means the request is broken.
const MAX_JUMPS: usize = 100_000_000;

/// Exact semigroup routes are preferred up to this many states.
const EXACT_ROUTE_MAX: usize = 2_000;

/// Two-sided 95% normal quantile, used for all binomial CIs.
const NORMAL_95: f64 = 1.959_963_984_540_054;

/// A sampled right-continuous path: `states[k]` is occupied from
/// `times[k]` until the next breakpoint (or the horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Entry times, strictly increasing, starting at zero.
    pub times: Vec<f64>,
    /// Visited states; consecutive entries differ.
    pub states: Vec<usize>,
    /// End of the observation window.
    pub horizon: f64,
    pub init: usize,
    pub seed: u64,
}

impl Trajectory {
    /// State occupied at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => self.states[k],
            Err(0) => self.states[0],
            Err(k) => self.states[k - 1],
        }
    }

    pub fn jumps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Total time spent in each of `n` states.
    pub fn occupation(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        for k in 0..self.states.len() {
            let end = if k + 1 < self.times.len() {
                self.times[k + 1]
            } else {
                self.horizon
            };
            occ[self.states[k]] += end - self.times[k];
        }
        occ
    }

    /// Total time spent inside a set of states.
    pub fn time_in(&self, member: &[bool]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.states.len() {
            if member[self.states[k]] {
                let end = if k + 1 < self.times.len() {
                    self.times[k + 1]
                } else {
                    self.horizon
                };
                total += end - self.times[k];
            }
        }
        total
    }
}

/// Starting point of a sample: a fixed state or a draw from a measure.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    State(usize),
    Measure(&'a ProbabilityMeasure),
}

impl Start<'_> {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Start::State(s) if *s >= n => Err(Error::DimensionMismatch {
                context: "start state".into(),
                expected: n,
                got: *s,
            }),
            Start::Measure(m) if m.len() != n => Err(Error::DimensionMismatch {
                context: "start measure".into(),
                expected: n,
                got: m.len(),
            }),
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            Start::State(s) => *s,
            Start::Measure(m) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for i in 0..m.len() {
                    acc += m[i];
                    if u < acc {
                        return i;
                    }
                }
                m.len() - 1
            }
        }
    }
}

impl From<usize> for Start<'static> {
    fn from(s: usize) -> Self {
        Start::State(s)
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One Gillespie event: exponential dwell at `state`, then a jump drawn
/// from the embedded kernel.  Exactly two uniforms per event, always, so
/// different consumers of the same stream stay aligned.
fn step(chain: &Chain, state: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let lambda = chain.holding(state);
    let dwell = -(1.0 - rng.gen::<f64>()).ln() / lambda;
    let mut u = rng.gen::<f64>() * lambda;
    let row = chain.rates().row(state);
    for &(j, r) in row {
        u -= r;
        if u <= 0.0 {
            return (dwell, j);
        }
    }
    (dwell, row[row.len() - 1].0)
}

fn sample_one(chain: &Chain, init: Start, horizon: f64, seed: u64, index: u64) -> Trajectory {
    let mut rng = stream(seed, index);
    let mut state = init.draw(&mut rng);
    let start_state = state;
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![state];
    loop {
        let (dwell, next) = step(chain, state, &mut rng);
        if t + dwell >= horizon {
            break;
        }
        t += dwell;
        times.push(t);
        states.push(next);
        state = next;
    }
    Trajectory {
        times,
        states,
        horizon,
        init: start_state,
        seed,
    }
}

/// Samples one path of the chain up to `horizon`.
pub fn sample_path(chain: &Chain, init: Start, horizon: f64, seed: u64) -> Result<Trajectory> {
    init.validate(chain.n())?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parse(format!("horizon must be positive, got {horizon}")));
    }
    Ok(sample_one(chain, init, horizon, seed, 0))
}

/// Samples `n` independent paths, one stream per path index.
pub fn sample_paths(
    chain: &Chain,
    init: Start,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    init.validate(chain.n())?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parse(format!("horizon must be positive, got {horizon}")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| sample_one(chain, init, horizon, seed, i as u64))
        .collect())
}

fn member_mask(n: usize, subset: &[usize]) -> Result<Vec<bool>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset("subset".into()));
    }
    let mut mask = vec![false; n];
    for &s in subset {
        if s >= n {
            return Err(Error::DimensionMismatch {
                context: "subset state".into(),
                expected: n,
                got: s,
            });
        }
        mask[s] = true;
    }
    Ok(mask)
}

/// Removes the time a trajectory spends outside `subset` and glues the
/// remaining segments: the generalized-inverse time change.  Re-entries
/// into the state just left merge into one segment.
pub fn excise_time(traj: &Trajectory, subset: &[usize], n: usize) -> Result<Trajectory> {
    let mask = member_mask(n, subset)?;
    if !mask[traj.states[0]] {
        return Err(Error::StateOutsideWells {
            state: traj.states[0],
            time: 0.0,
        });
    }
    let mut times = Vec::new();
    let mut states: Vec<usize> = Vec::new();
    let mut clock = 0.0;
    for k in 0..traj.states.len() {
        let s = traj.states[k];
        let end = if k + 1 < traj.times.len() {
            traj.times[k + 1]
        } else {
            traj.horizon
        };
        if mask[s] {
            if states.last() != Some(&s) {
                times.push(clock);
                states.push(s);
            }
            clock += end - traj.times[k];
        }
    }
    Ok(Trajectory {
        times,
        states,
        horizon: clock,
        init: traj.states[0],
        seed: traj.seed,
    })
}

/// Samples a path of the trace process on `subset` by running the full
/// chain and excising the excursions, stopping once the trace clock
/// reaches `horizon`.  States keep their parent indices.
pub fn sample_trace_path(
    chain: &Chain,
    subset: &[usize],
    init: usize,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mask = member_mask(chain.n(), subset)?;
    if init >= chain.n() || !mask[init] {
        return Err(Error::StateOutsideWells {
            state: init,
            time: 0.0,
        });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parse(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = stream(seed, 0);
    let mut state = init;
    let mut clock = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![init];
    for _ in 0..MAX_JUMPS {
        let (dwell, next) = step(chain, state, &mut rng);
        if mask[state] {
            if clock + dwell >= horizon {
                return Ok(Trajectory {
                    times,
                    states,
                    horizon,
                    init,
                    seed,
                });
            }
            clock += dwell;
        }
        if mask[next] && states.last() != Some(&next) {
            times.push(clock);
            states.push(next);
        }
        state = next;
    }
    Err(Error::Unreachable)
}

// ---------------------------------------------------------------------------
// Finite-dimensional distributions of the order process
// ---------------------------------------------------------------------------

/// Empirical joint law of the well label read at a fixed time grid.
#[derive(Debug, Clone)]
pub struct FddEstimate {
    /// Unscaled time grid; reads happen at `times[k] * theta`.
    pub times: Vec<f64>,
    pub theta: f64,
    pub kappa: usize,
    pub n: usize,
    /// Empirical probability of each observed label tuple; sums to one.
    pub probabilities: BTreeMap<Vec<usize>, f64>,
    /// 95% binomial half-widths, same keys.
    pub ci_half_widths: BTreeMap<Vec<usize>, f64>,
}

impl FddEstimate {
    pub fn probability(&self, tuple: &[usize]) -> f64 {
        self.probabilities.get(tuple).copied().unwrap_or(0.0)
    }

    pub fn ci_half_width(&self, tuple: &[usize]) -> f64 {
        self.ci_half_widths.get(tuple).copied().unwrap_or(0.0)
    }

    /// Marginal law of the label at grid point `k`.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.kappa];
        for (tuple, p) in &self.probabilities {
            out[tuple[k]] += p;
        }
        out
    }

    /// 95% half-widths of the marginal at grid point `k`.
    pub fn marginal_ci(&self, k: usize) -> Vec<f64> {
        self.marginal(k)
            .into_iter()
            .map(|p| NORMAL_95 * (p * (1.0 - p) / self.n as f64).sqrt())
            .collect()
    }
}

fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Parse("time grid must be nonempty".into()));
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Parse("time grid must be strictly ascending".into()));
        }
    }
    if times[0] < 0.0 {
        return Err(Error::Parse("time grid must be nonnegative".into()));
    }
    Ok(())
}

fn validate_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Parse(format!("time scale must be positive, got {theta}")));
    }
    Ok(())
}

/// Estimates the joint law of the order process at `times` (in units of
/// `theta`) from `n` trace-path samples started from `nu`.
///
/// The trace chain is built exactly and sampled directly: its paths have
/// the same law as time-changed full-chain paths, at a fraction of the
/// cost when excursions are long.
pub fn order_fdd_estimate(
    chain: &Chain,
    partition: &Partition,
    nu: &ProbabilityMeasure,
    theta: f64,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Result<FddEstimate> {
    validate_grid(times)?;
    validate_theta(theta)?;
    if n < 100 {
        return Err(Error::Parse(format!(
            "need at least 100 samples for a meaningful estimate, got {n}"
        )));
    }
    if nu.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "starting measure".into(),
            expected: chain.n(),
            got: nu.len(),
        });
    }
    let traced = partition.traced_states();
    let (trace, kept) = trace_chain(chain, &traced)?;
    let labels: Vec<usize> = kept
        .iter()
        .map(|&i| partition.well_of(i).expect("traced state is in a well"))
        .collect();
    let weights: Vec<f64> = kept.iter().map(|&i| nu[i]).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroMass("starting measure on the wells".into()));
    }
    let nu_local = ProbabilityMeasure::from_weights(weights)?;

    let horizon = times[times.len() - 1] * theta;
    let tuples: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream(seed, idx as u64);
            let mut state = Start::Measure(&nu_local).draw(&mut rng);
            let mut t = 0.0;
            let mut tuple = Vec::with_capacity(times.len());
            let mut k = 0;
            while k < times.len() {
                let (dwell, next) = step(&trace, state, &mut rng);
                while k < times.len() && times[k] * theta < t + dwell {
                    tuple.push(labels[state]);
                    k += 1;
                }
                if t + dwell > horizon {
                    break;
                }
                t += dwell;
                state = next;
            }
            while tuple.len() < times.len() {
                tuple.push(labels[state]);
            }
            tuple
        })
        .collect();

    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for tuple in tuples {
        *counts.entry(tuple).or_insert(0) += 1;
    }
    let mut probabilities = BTreeMap::new();
    let mut ci_half_widths = BTreeMap::new();
    for (tuple, c) in counts {
        let p = c as f64 / n as f64;
        probabilities.insert(tuple.clone(), p);
        ci_half_widths.insert(tuple, NORMAL_95 * (p * (1.0 - p) / n as f64).sqrt());
    }
    Ok(FddEstimate {
        times: times.to_vec(),
        theta,
        kappa: partition.kappa(),
        n,
        probabilities,
        ci_half_widths,
    })
}

/// Exact joint law of `labels[X(t theta)]` on a small chain, by evolving
/// one sub-probability vector per label prefix through the semigroup.
pub fn order_fdd_exact(
    chain: &Chain,
    labels: &[usize],
    nu: &ProbabilityMeasure,
    theta: f64,
    times: &[f64],
) -> Result<BTreeMap<Vec<usize>, f64>> {
    validate_grid(times)?;
    validate_theta(theta)?;
    if labels.len() != chain.n() || nu.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "labels and measure".into(),
            expected: chain.n(),
            got: labels.len().min(nu.len()),
        });
    }
    let kappa = labels.iter().max().unwrap() + 1;
    let u = Uniformized::new(chain);
    let mut prefixes: Vec<(Vec<usize>, Vec<f64>)> =
        vec![(Vec::new(), nu.as_slice().to_vec())];
    let mut prev = 0.0;
    for &t in times {
        let dt = (t - prev) * theta;
        prev = t;
        let mut next: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for (tuple, mut v) in prefixes {
            u.evolve(&mut v, dt);
            for x in 0..kappa {
                let masked: Vec<f64> = v
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| if labels[i] == x { w } else { 0.0 })
                    .collect();
                if masked.iter().sum::<f64>() > 0.0 {
                    let mut extended = tuple.clone();
                    extended.push(x);
                    next.push((extended, masked));
                }
            }
        }
        prefixes = next;
    }
    Ok(prefixes
        .into_iter()
        .map(|(tuple, v)| (tuple, v.iter().sum()))
        .collect())
}

// ---------------------------------------------------------------------------
// Hitting times and the exponentiality test
// ---------------------------------------------------------------------------

/// Lilliefors-corrected Kolmogorov–Smirnov test against the exponential
/// family with estimated mean.  Critical values for the modified statistic
/// `(D - 0.2/n) (sqrt(n) + 0.26 + 0.5/sqrt(n))` at the tabulated levels.
pub const LILLIEFORS_CRITICAL: [(f64, f64); 5] = [
    (0.15, 0.926),
    (0.10, 0.990),
    (0.05, 1.094),
    (0.025, 1.190),
    (0.01, 1.308),
];

#[derive(Debug, Clone, Copy)]
pub struct ExponentialityReport {
    pub n: usize,
    pub mean: f64,
    /// Plain KS distance against Exp(1/mean).
    pub ks_statistic: f64,
    /// Sample-size-corrected statistic compared against the table.
    pub lilliefors_statistic: f64,
}

impl ExponentialityReport {
    pub fn from_samples(samples: &[f64]) -> ExponentialityReport {
        let n = samples.len();
        assert!(n >= 2, "exponentiality test needs at least two samples");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut d = 0.0f64;
        for (i, &x) in sorted.iter().enumerate() {
            let f = 1.0 - (-x / mean).exp();
            d = d.max(f - i as f64 / n as f64);
            d = d.max((i + 1) as f64 / n as f64 - f);
        }
        let nf = n as f64;
        let t = (d - 0.2 / nf) * (nf.sqrt() + 0.26 + 0.5 / nf.sqrt());
        ExponentialityReport {
            n,
            mean,
            ks_statistic: d,
            lilliefors_statistic: t,
        }
    }

    /// Whether the test rejects exponentiality at a tabulated level.
    pub fn rejects_at(&self, level: f64) -> bool {
        let critical = LILLIEFORS_CRITICAL
            .iter()
            .find(|(l, _)| (l - level).abs() < 1e-9)
            .map(|&(_, c)| c)
            .expect("level must be one of the tabulated values");
        self.lilliefors_statistic > critical
    }

    pub fn passes_at(&self, level: f64) -> bool {
        !self.rejects_at(level)
    }
}

#[derive(Debug, Clone)]
pub struct HittingTimes {
    pub samples: Vec<f64>,
    pub report: ExponentialityReport,
}

/// Samples `n` independent hitting times of `target` and tests the sample
/// for exponentiality.  Starts already inside the target hit at time zero.
pub fn hitting_time_samples(
    chain: &Chain,
    init: Start,
    target: &[usize],
    n: usize,
    seed: u64,
) -> Result<HittingTimes> {
    init.validate(chain.n())?;
    let mask = member_mask(chain.n(), target)?;
    if n < 2 {
        return Err(Error::Parse(format!("need at least 2 samples, got {n}")));
    }
    let samples: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream(seed, idx as u64);
            let mut state = init.draw(&mut rng);
            if mask[state] {
                return Ok(0.0);
            }
            let mut t = 0.0;
            for _ in 0..MAX_JUMPS {
                let (dwell, next) = step(chain, state, &mut rng);
                t += dwell;
                if mask[next] {
                    return Ok(t);
                }
                state = next;
            }
            Err(Error::Unreachable)
        })
        .collect();
    let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let report = ExponentialityReport::from_samples(&samples);
    Ok(HittingTimes { samples, report })
}

// ---------------------------------------------------------------------------
// Passage occupation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct DeltaOccupation {
    /// Monte Carlo estimate of the expected passage time integral.
    pub estimate: f64,
    /// 95% half-width across trajectories.
    pub ci_half_width: f64,
    /// Deterministic uniformization value, on small chains.
    pub exact: Option<f64>,
    pub n: usize,
}

/// Expected time the rescaled process spends in the passage set:
/// `E_nu[ int_0^t 1{X(s theta) in Delta} ds ]`, by Monte Carlo, with an
/// exact quadrature alternative when the chain is small.
pub fn delta_occupation(
    chain: &Chain,
    partition: &Partition,
    nu: Start,
    theta: f64,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<DeltaOccupation> {
    nu.validate(chain.n())?;
    validate_theta(theta)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parse(format!("horizon must be positive, got {t}")));
    }
    if n == 0 {
        return Err(Error::Parse("need at least one trajectory".into()));
    }
    if partition.delta().is_empty() {
        return Ok(DeltaOccupation {
            estimate: 0.0,
            ci_half_width: 0.0,
            exact: Some(0.0),
            n,
        });
    }
    let mask = member_mask(chain.n(), partition.delta())?;
    let horizon = t * theta;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let traj = sample_one(chain, nu, horizon, seed, idx as u64);
            traj.time_in(&mask) / theta
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n.max(2) - 1) as f64;
    let ci = NORMAL_95 * (var / n as f64).sqrt();

    let exact = if chain.n() <= EXACT_ROUTE_MAX {
        let init = match nu {
            Start::State(s) => ProbabilityMeasure::dirac(chain.n(), s),
            Start::Measure(m) => m.clone(),
        };
        Some(occupation_integral(chain, &mask, &init, horizon)? / theta)
    } else {
        None
    };
    Ok(DeltaOccupation {
        estimate: mean,
        ci_half_width: ci,
        exact,
        n,
    })
}

/// `int_0^T P_nu[X(u) in set] du` by Simpson quadrature over the exact
/// semigroup, refined until two successive grids agree.
fn occupation_integral(
    chain: &Chain,
    mask: &[bool],
    nu: &ProbabilityMeasure,
    horizon: f64,
) -> Result<f64> {
    let u = Uniformized::new(chain);
    let simpson = |segments: usize| -> f64 {
        // One incremental sweep: evolve step by step, weight by Simpson.
        let mut v = nu.as_slice().to_vec();
        let h = horizon / segments as f64;
        let masked = |v: &[f64]| {
            v.iter()
                .enumerate()
                .filter(|(i, _)| mask[*i])
                .map(|(_, &w)| w)
                .sum::<f64>()
        };
        let mut acc = masked(&v);
        for k in 1..=segments {
            u.evolve(&mut v, h);
            let w = if k == segments {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * masked(&v);
        }
        acc * h / 3.0
    };
    let mut segments = 8;
    let mut value = simpson(segments);
    loop {
        segments *= 2;
        let refined = simpson(segments);
        let done = (refined - value).abs() <= 1e-10 * value.abs().max(1.0);
        value = refined;
        if done || segments >= 4096 {
            return Ok(value);
        }
    }
}

// ---------------------------------------------------------------------------
// Tightness diagnostic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TightnessWell {
    pub well: usize,
    /// Sampled starting states, in parent indexing.
    pub starts: Vec<usize>,
    /// For each delta: max over starts of P[trace process exits the well
    /// within delta * theta].
    pub max_exit_prob: Vec<f64>,
    /// Whether the killed-semigroup route was used (else Monte Carlo).
    pub exact: bool,
}

#[derive(Debug, Clone)]
pub struct TightnessReport {
    pub deltas: Vec<f64>,
    pub theta: f64,
    pub wells: Vec<TightnessWell>,
}

/// Short-time exit probabilities of the trace process from each well:
/// small values for small `delta` are what keeps the order paths tight.
pub fn tightness_diagnostic(
    chain: &Chain,
    partition: &Partition,
    theta: f64,
    deltas: &[f64],
    m: usize,
    seed: u64,
) -> Result<TightnessReport> {
    validate_theta(theta)?;
    validate_grid(deltas)?;
    if deltas[0] <= 0.0 {
        return Err(Error::Parse("deltas must be positive".into()));
    }
    if m == 0 {
        return Err(Error::Parse("need at least one start per well".into()));
    }
    let traced = partition.traced_states();
    let (trace, kept) = trace_chain(chain, &traced)?;
    let mut wells = Vec::with_capacity(partition.kappa());
    for x in 0..partition.kappa() {
        let local: Vec<usize> = (0..trace.n())
            .filter(|&i| partition.well_of(kept[i]) == Some(x))
            .collect();
        let starts_local = choose_starts(&local, m, stream(seed, x as u64));
        let exact = local.len() <= EXACT_ROUTE_MAX;
        let mut max_exit = vec![0.0f64; deltas.len()];
        if exact {
            let (killed, klocal) = Uniformized::killed(&trace, &local)?;
            for &s in &starts_local {
                let pos = klocal.binary_search(&s).expect("start is in the well");
                let mut v = vec![0.0; killed.n()];
                v[pos] = 1.0;
                let mut prev = 0.0;
                for (di, &d) in deltas.iter().enumerate() {
                    killed.evolve(&mut v, (d - prev) * theta);
                    prev = d;
                    let exit = 1.0 - v.iter().sum::<f64>();
                    max_exit[di] = max_exit[di].max(exit);
                }
            }
        } else {
            const PATHS: usize = 4_000;
            let horizon = deltas[deltas.len() - 1] * theta;
            for (si, &s) in starts_local.iter().enumerate() {
                let hits: Vec<f64> = (0..PATHS)
                    .into_par_iter()
                    .map(|p| {
                        let key = ((x as u64) << 40) ^ ((si as u64) << 20) ^ p as u64;
                        let mut rng = stream(seed, key);
                        let mut state = s;
                        let mut t = 0.0;
                        loop {
                            let (dwell, next) = step(&trace, state, &mut rng);
                            t += dwell;
                            if t > horizon {
                                return f64::INFINITY;
                            }
                            if partition.well_of(kept[next]) != Some(x) {
                                return t;
                            }
                            state = next;
                        }
                    })
                    .collect();
                for (di, &d) in deltas.iter().enumerate() {
                    let frac = hits.iter().filter(|&&h| h <= d * theta).count() as f64
                        / PATHS as f64;
                    max_exit[di] = max_exit[di].max(frac);
                }
            }
        }
        wells.push(TightnessWell {
            well: x,
            starts: starts_local.iter().map(|&i| kept[i]).collect(),
            max_exit_prob: max_exit,
            exact,
        });
    }
    Ok(TightnessReport {
        deltas: deltas.to_vec(),
        theta,
        wells,
    })
}

fn choose_starts(pool: &[usize], m: usize, mut rng: ChaCha8Rng) -> Vec<usize> {
    if pool.len() <= m {
        return pool.to_vec();
    }
    // Partial Fisher-Yates over a copy.
    let mut copy = pool.to_vec();
    for i in 0..m {
        let j = rng.gen_range(i..copy.len());
        copy.swap(i, j);
    }
    copy.truncate(m);
    copy.sort_unstable();
    copy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death, two_state};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn same_seed_same_path() {
        let c = two_state(1.0, 2.0).unwrap();
        let a = sample_path(&c, Start::State(0), 10.0, 42).unwrap();
        let b = sample_path(&c, Start::State(0), 10.0, 42).unwrap();
        assert_eq!(a, b);
        let c2 = sample_path(&c, Start::State(0), 10.0, 43).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn trajectory_invariants() {
        let c = birth_death(5, 1.0, 1.0).unwrap();
        let traj = sample_path(&c, Start::State(2), 50.0, 7).unwrap();
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(traj.states[0], 2);
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        for w in traj.states.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        let occ = traj.occupation(5);
        assert!((occ.iter().sum::<f64>() - traj.horizon).abs() < 1e-9);
    }

    #[test]
    fn occupation_matches_stationary_measure() {
        let c = birth_death(3, 1.0, 1.5).unwrap();
        let paths = sample_paths(&c, Start::State(0), 40.0, 400, 3).unwrap();
        let fracs: Vec<f64> = paths
            .iter()
            .map(|p| p.occupation(3)[0] / p.horizon)
            .collect();
        let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
        let var = fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>()
            / (fracs.len() - 1) as f64;
        let sigma = (var / fracs.len() as f64).sqrt();
        assert!(
            (mean - c.pi()[0]).abs() < 3.0 * sigma + 1e-3,
            "mean {mean} vs pi {}",
            c.pi()[0]
        );
    }

    #[test]
    fn mean_holding_time_matches_rate() {
        let c = two_state(0.7, 1.3).unwrap();
        let traj = sample_path(&c, Start::State(0), 3000.0, 11).unwrap();
        let mut holds = Vec::new();
        for k in 0..traj.states.len() - 1 {
            if traj.states[k] == 0 {
                holds.push(traj.times[k + 1] - traj.times[k]);
            }
        }
        let mean = holds.iter().sum::<f64>() / holds.len() as f64;
        let sigma = (1.0 / 0.7) / (holds.len() as f64).sqrt();
        assert!((mean - 1.0 / 0.7).abs() < 3.0 * sigma);
    }

    #[test]
    fn empirical_generator_recovery() {
        let c = birth_death(4, 1.2, 0.7).unwrap();
        let traj = sample_path(&c, Start::State(0), 40_000.0, 5).unwrap();
        assert!(traj.jumps() > 50_000);
        let occ = traj.occupation(4);
        let mut counts = vec![vec![0usize; 4]; 4];
        for k in 0..traj.states.len() - 1 {
            counts[traj.states[k]][traj.states[k + 1]] += 1;
        }
        for i in 0..4 {
            for j in 0..4 {
                let r = c.rates().rate(i, j);
                if r == 0.0 {
                    assert_eq!(counts[i][j], 0);
                    continue;
                }
                let est = counts[i][j] as f64 / occ[i];
                let sigma = (counts[i][j] as f64).sqrt() / occ[i];
                assert!(
                    (est - r).abs() < 3.0 * sigma,
                    "rate {i}->{j}: {est} vs {r}"
                );
            }
        }
    }

    #[test]
    fn excise_full_subset_is_identity() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let traj = sample_path(&c, Start::State(1), 20.0, 9).unwrap();
        let ex = excise_time(&traj, &[0, 1, 2, 3], 4).unwrap();
        assert_eq!(ex, traj);
    }

    #[test]
    fn excise_shortens_unless_inside() {
        let c = birth_death(5, 1.0, 1.0).unwrap();
        let traj = sample_path(&c, Start::State(0), 30.0, 13).unwrap();
        let ex = excise_time(&traj, &[0, 1], 5).unwrap();
        assert!(ex.horizon <= traj.horizon);
        let visited_outside = traj.states.iter().any(|&s| s > 1);
        if visited_outside {
            assert!(ex.horizon < traj.horizon);
        } else {
            assert_eq!(ex.horizon, traj.horizon);
        }
        let mask = [true, true, false, false, false];
        assert!((ex.horizon - traj.time_in(&mask)).abs() < 1e-12);
    }

    #[test]
    fn trace_sampler_agrees_with_excision() {
        // Same stream, same event draws: the trace sampler must replay
        // the excised path breakpoint for breakpoint.
        let c = birth_death(5, 1.0, 1.2).unwrap();
        let full = sample_path(&c, Start::State(0), 200.0, 17).unwrap();
        let ex = excise_time(&full, &[0, 1, 2], 5).unwrap();
        let tr = sample_trace_path(&c, &[0, 1, 2], 0, ex.horizon * 0.9, 17).unwrap();
        assert!(tr.states.len() <= ex.states.len());
        for k in 0..tr.states.len() {
            assert_eq!(tr.states[k], ex.states[k]);
            assert!((tr.times[k] - ex.times[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_jump_rate_is_halved_on_path() {
        // On the three-state path traced to its endpoints, the middle
        // state splits excursions evenly: effective rate one half.
        let c = birth_death(3, 1.0, 1.0).unwrap();
        let tr = sample_trace_path(&c, &[0, 2], 0, 4000.0, 23).unwrap();
        let occ = tr.occupation(3);
        let mut cross = 0usize;
        for k in 0..tr.states.len() - 1 {
            if tr.states[k] == 0 && tr.states[k + 1] == 2 {
                cross += 1;
            }
        }
        let est = cross as f64 / occ[0];
        let sigma = (cross as f64).sqrt() / occ[0];
        assert!((est - 0.5).abs() < 3.0 * sigma, "estimate {est}");
    }

    #[test]
    fn trace_sampler_matches_direct_trace_chain() {
        // Two-sample chi-square on the joint law at two read times:
        // time-changed full paths vs Gillespie on the exact trace chain.
        let c = birth_death(5, 1.0, 1.0).unwrap();
        let subset = [0, 2, 4];
        let (trace, kept) = trace_chain(&c, &subset).unwrap();
        let reads = [0.8, 2.0];
        let n = 2_000;
        let mut counts_a: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut counts_b: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for idx in 0..n {
            let ta = sample_trace_path(&c, &subset, 0, 2.5, 900 + idx).unwrap();
            let key_a = (ta.state_at(reads[0]), ta.state_at(reads[1]));
            *counts_a.entry(key_a).or_insert(0.0) += 1.0;
            let tb = sample_one(&trace, Start::State(0), 2.5, 7_000, idx as u64);
            let key_b = (kept[tb.state_at(reads[0])], kept[tb.state_at(reads[1])]);
            *counts_b.entry(key_b).or_insert(0.0) += 1.0;
        }
        let keys: Vec<(usize, usize)> = counts_a
            .keys()
            .chain(counts_b.keys())
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut stat = 0.0;
        for &k in &keys {
            let a = counts_a.get(&k).copied().unwrap_or(0.0);
            let b = counts_b.get(&k).copied().unwrap_or(0.0);
            let e = (a + b) / 2.0;
            if e > 0.0 {
                stat += (a - e) * (a - e) / e + (b - e) * (b - e) / e;
            }
        }
        let df = (keys.len() - 1) as f64;
        let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square p = {p} (stat {stat}, df {df})");
    }

    #[test]
    fn fdd_estimate_matches_exact_law_on_small_chain() {
        // The chain is its own order process when wells are singletons.
        let c = two_state(1.0, 2.0).unwrap();
        let part = Partition::new(2, vec![vec![0], vec![1]]).unwrap();
        let nu = ProbabilityMeasure::dirac(2, 0);
        let times = [0.3, 0.9];
        let est = order_fdd_estimate(&c, &part, &nu, 1.0, &times, 20_000, 31).unwrap();
        let labels = [0usize, 1];
        let exact = order_fdd_exact(&c, &labels, &nu, 1.0, &times).unwrap();
        let total: f64 = est.probabilities.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (tuple, p) in &exact {
            let q = est.probability(tuple);
            let sigma = (p * (1.0 - p) / 20_000.0).sqrt();
            assert!(
                (q - p).abs() < 4.0 * sigma + 1e-3,
                "tuple {tuple:?}: {q} vs {p}"
            );
        }
    }

    #[test]
    fn fdd_short_times_stay_put() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let part = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let nu = ProbabilityMeasure::dirac(4, 0);
        let est = order_fdd_estimate(&c, &part, &nu, 1.0, &[1e-4], 500, 77).unwrap();
        assert!(est.probability(&[0]) >= 0.99);
    }

    #[test]
    fn fdd_exact_sums_to_one_and_matches_marginal() {
        let c = birth_death(3, 1.0, 2.0).unwrap();
        let labels = [0usize, 0, 1];
        let nu = ProbabilityMeasure::dirac(3, 0);
        let exact = order_fdd_exact(&c, &labels, &nu, 2.0, &[0.5, 1.0]).unwrap();
        let total: f64 = exact.values().sum();
        assert!((total - 1.0).abs() < 1e-10);
        // Marginal at the second time equals the one-point law there.
        let single = order_fdd_exact(&c, &labels, &nu, 2.0, &[1.0]).unwrap();
        for x in 0..2usize {
            let joint: f64 = exact
                .iter()
                .filter(|(t, _)| t[1] == x)
                .map(|(_, p)| p)
                .sum();
            assert!((joint - single[&vec![x]]).abs() < 1e-10);
        }
    }

    #[test]
    fn hitting_single_transition_is_exponential() {
        let c = two_state(2.0, 3.0).unwrap();
        let ht = hitting_time_samples(&c, Start::State(0), &[1], 4_000, 19).unwrap();
        let mean = ht.report.mean;
        let sigma = 0.5 / (4_000f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma);
        assert!(ht.report.passes_at(0.01), "exact exponential must pass");
    }

    #[test]
    fn hitting_from_target_is_zero() {
        let c = two_state(1.0, 1.0).unwrap();
        let ht = hitting_time_samples(&c, Start::State(1), &[1], 10, 1).unwrap();
        assert!(ht.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn lilliefors_calibration_rarely_rejects_true_exponentials() {
        // Exact exponential data: the 1% test should reject about 1% of
        // the time.  30 deterministic repeats, allow up to 3 rejections.
        let c = two_state(1.0, 1.0).unwrap();
        let mut rejections = 0;
        for rep in 0..30 {
            let ht =
                hitting_time_samples(&c, Start::State(0), &[1], 300, 500 + rep).unwrap();
            if ht.report.rejects_at(0.01) {
                rejections += 1;
            }
        }
        assert!(rejections <= 3, "{rejections} rejections out of 30");
    }

    #[test]
    fn lilliefors_rejects_clearly_nonexponential_data() {
        // Uniform samples on [0,1] are far from exponential.
        let samples: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
        let report = ExponentialityReport::from_samples(&samples);
        assert!(report.rejects_at(0.01));
    }

    #[test]
    fn delta_occupation_stationary_start() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let part = Partition::new(4, vec![vec![0], vec![3]]).unwrap();
        let occ = delta_occupation(
            &c,
            &part,
            Start::Measure(c.pi()),
            2.0,
            1.5,
            800,
            47,
        )
        .unwrap();
        let expect = 1.5 * c.pi().mass_of(&[1, 2]);
        assert!(
            (occ.estimate - expect).abs() < 3.0 * occ.ci_half_width + 1e-3,
            "estimate {} vs {expect}",
            occ.estimate
        );
        let exact = occ.exact.unwrap();
        assert!((exact - expect).abs() < 1e-8, "exact {exact} vs {expect}");
    }

    #[test]
    fn delta_occupation_empty_delta() {
        let c = two_state(1.0, 1.0).unwrap();
        let part = Partition::new(2, vec![vec![0], vec![1]]).unwrap();
        let occ =
            delta_occupation(&c, &part, Start::State(0), 1.0, 1.0, 10, 3).unwrap();
        assert_eq!(occ.estimate, 0.0);
        assert_eq!(occ.exact, Some(0.0));
    }

    #[test]
    fn tightness_two_state_closed_form() {
        // Whole space traced, singleton wells: exit from well 0 is one
        // exponential jump, so P[H <= d theta] = 1 - exp(-a d theta).
        let (a, theta) = (2.0, 3.0);
        let c = two_state(a, 1.0).unwrap();
        let part = Partition::new(2, vec![vec![0], vec![1]]).unwrap();
        let deltas = [0.01, 0.05, 0.2];
        let rep = tightness_diagnostic(&c, &part, theta, &deltas, 4, 1).unwrap();
        assert!(rep.wells[0].exact);
        for (di, &d) in deltas.iter().enumerate() {
            let expect = 1.0 - (-a * d * theta).exp();
            assert!(
                (rep.wells[0].max_exit_prob[di] - expect).abs() < 1e-9,
                "delta {d}"
            );
        }
        // Monotone in delta.
        for w in rep.wells {
            for pair in w.max_exit_prob.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
        }
    }

    #[test]
    fn grid_validation_errors() {
        let c = two_state(1.0, 1.0).unwrap();
        let part = Partition::new(2, vec![vec![0], vec![1]]).unwrap();
        let nu = ProbabilityMeasure::dirac(2, 0);
        assert!(order_fdd_estimate(&c, &part, &nu, 1.0, &[], 200, 1).is_err());
        assert!(order_fdd_estimate(&c, &part, &nu, 1.0, &[1.0, 0.5], 200, 1).is_err());
        assert!(order_fdd_estimate(&c, &part, &nu, 1.0, &[1.0], 50, 1).is_err());
        assert!(order_fdd_estimate(&c, &part, &nu, -1.0, &[1.0], 200, 1).is_err());
    }
}
