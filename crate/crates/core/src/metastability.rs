//! Families of chains with a shared well structure.
//!
//! A metastable description of a family is a small chain on well labels
//! together with a time scale.  This module checks the convergence
//! conditions behind such a description across a family, extrapolates
//! the scaled inter-well rates to a limit chain, evaluates the
//! two-valley capacity ratio against the trace gap, and compares
//! occupation profiles of a finite member with those of a candidate
//! limit.  Verdicts produced here are trends read off a finite family,
//! never proofs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chain::{Chain, ProbabilityMeasure};
use crate::error::{Error, Result};
use crate::linalg::{full_symmetric_eigen, symmetrized};
use crate::potential::{capacity, escape_bounds, mean_jump_rates};
use crate::spectral::{mixing_profile, spectral_gap};
use crate::transforms::{enlarge_chain, reflect_chain, trace_chain, Partition};

/// A vanishing sequence must end below this value.
pub const TREND_SMALL: f64 = 0.2;

/// Relative last step below this counts as settled.
pub const STABLE_STEP: f64 = 0.05;

/// Bounded sequences may grow by this factor end to end.
pub const BOUNDED_GROWTH: f64 = 2.0;

/// Growth beyond this factor counts as unbounded.
pub const VIOLATED_GROWTH: f64 = 8.0;

/// Relative slack allowed in the two-valley sandwich.
const SANDWICH_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

/// One chain of a family, indexed by a scalar parameter (a system size,
/// an inverse temperature) and carrying its own well partition.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub param: f64,
    pub chain: Chain,
    pub partition: Partition,
}

/// A parameter-ordered family of chains whose partitions share the well
/// count, together with the time scale attached to each member.
#[derive(Debug, Clone)]
pub struct ChainFamily {
    members: Vec<FamilyMember>,
    thetas: Vec<f64>,
}

impl ChainFamily {
    /// Family with the default time scale, the inverse trace gap of
    /// each member.
    pub fn new(members: Vec<FamilyMember>) -> Result<ChainFamily> {
        Self::validate(&members)?;
        let thetas = members
            .par_iter()
            .map(|m| Ok(1.0 / TraceView::build(&m.chain, &m.partition)?.gap))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChainFamily { members, thetas })
    }

    /// Family with explicit time scales, one per member.
    pub fn with_thetas(members: Vec<FamilyMember>, thetas: Vec<f64>) -> Result<ChainFamily> {
        Self::validate(&members)?;
        if thetas.len() != members.len() {
            return Err(Error::DimensionMismatch {
                context: "time scales".into(),
                expected: members.len(),
                got: thetas.len(),
            });
        }
        for &t in &thetas {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Parse(format!("time scale must be positive, got {t}")));
            }
        }
        Ok(ChainFamily { members, thetas })
    }

    fn validate(members: &[FamilyMember]) -> Result<()> {
        if members.is_empty() {
            return Err(Error::FamilyTooSmall(0));
        }
        let kappa = members[0].partition.kappa();
        for m in members {
            if m.partition.n() != m.chain.n() {
                return Err(Error::DimensionMismatch {
                    context: "partition".into(),
                    expected: m.chain.n(),
                    got: m.partition.n(),
                });
            }
            if m.partition.kappa() != kappa {
                return Err(Error::IncompatiblePartitions(format!(
                    "well counts differ: {} against {}",
                    kappa,
                    m.partition.kappa()
                )));
            }
        }
        for pair in members.windows(2) {
            if !(pair[1].param > pair[0].param) {
                return Err(Error::Parse(format!(
                    "family parameters must increase strictly, got {} then {}",
                    pair[0].param, pair[1].param
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn kappa(&self) -> usize {
        self.members[0].partition.kappa()
    }

    pub fn members(&self) -> &[FamilyMember] {
        &self.members
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn params(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.param).collect()
    }

    /// Stationary measure of each member conditioned on well `x0`, the
    /// canonical starting measures for condition checks.
    pub fn stationary_starts(&self, x0: usize) -> Result<Vec<ProbabilityMeasure>> {
        if x0 >= self.kappa() {
            return Err(Error::BadPartition(format!("no well {x0}")));
        }
        self.members
            .iter()
            .map(|m| m.chain.pi().conditioned(m.partition.well(x0)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Trace view of a partitioned chain
// ---------------------------------------------------------------------------

/// Trace of a chain on its wells with the partition carried over, the
/// trace gap, and the reflected gap of every well.  Singleton wells
/// have no reflected dynamics and report no gap.
struct TraceView {
    trace: Chain,
    kept: Vec<usize>,
    local: Partition,
    gap: f64,
    refl_gaps: Vec<Option<f64>>,
}

impl TraceView {
    fn build(chain: &Chain, partition: &Partition) -> Result<TraceView> {
        if partition.n() != chain.n() {
            return Err(Error::DimensionMismatch {
                context: "partition".into(),
                expected: chain.n(),
                got: partition.n(),
            });
        }
        let traced = partition.traced_states();
        let (trace, kept) = trace_chain(chain, &traced)?;
        let mut local_ix = vec![usize::MAX; chain.n()];
        for (k, &i) in kept.iter().enumerate() {
            local_ix[i] = k;
        }
        let wells_local: Vec<Vec<usize>> = (0..partition.kappa())
            .map(|x| partition.well(x).iter().map(|&i| local_ix[i]).collect())
            .collect();
        let local = Partition::new(trace.n(), wells_local)?;
        let gap = spectral_gap(&trace)?.gap;
        let refl_gaps = (0..partition.kappa())
            .map(|x| {
                let well = partition.well(x);
                if well.len() < 2 {
                    Ok(None)
                } else {
                    let (refl, _) = reflect_chain(chain, well)?;
                    Ok(Some(spectral_gap(&refl)?.gap))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceView {
            trace,
            kept,
            local,
            gap,
            refl_gaps,
        })
    }

    fn min_reflected(&self) -> Option<f64> {
        self.refl_gaps
            .iter()
            .flatten()
            .copied()
            .fold(None, |m, g| Some(m.map_or(g, |m: f64| m.min(g))))
    }

    /// Geometric mean of the trace gap and the fastest scale above it:
    /// the smallest reflected gap, or the largest holding rate when
    /// every well is a single state.
    fn default_gamma(&self, chain: &Chain) -> f64 {
        (self.gap * self.min_reflected().unwrap_or_else(|| chain.max_holding())).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Condition checks
// ---------------------------------------------------------------------------

/// Trend verdict for one condition across a family.  Read off finitely
/// many members, so never a proof in either direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Satisfied => "satisfied",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// One condition: its per-member values in parameter order and the
/// trend verdict.
#[derive(Debug, Clone)]
pub struct ConditionEntry {
    pub name: String,
    pub values: Vec<f64>,
    pub verdict: Verdict,
}

/// Everything measured by `check_conditions`.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub params: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Enlargement rate used for the jump rates of each member.
    pub gammas: Vec<f64>,
    /// Escape test horizon of each member.
    pub horizons: Vec<f64>,
    /// Scaled inter-well rate matrix of each member.
    pub scaled_rates: Vec<Vec<Vec<f64>>>,
    pub entries: Vec<ConditionEntry>,
}

impl ConditionReport {
    pub fn entry(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn any_violated(&self) -> bool {
        self.entries.iter().any(|e| e.verdict == Verdict::Violated)
    }
}

/// A sequence that should vanish along the family: satisfied when it
/// ends small and has at least halved, violated when it clearly grows.
fn trend_small(values: &[f64]) -> Verdict {
    let first = values[0];
    let last = *values.last().unwrap();
    if values.iter().all(|v| v.abs() <= 1e-14) {
        Verdict::Satisfied
    } else if last <= TREND_SMALL && last <= 0.5 * first {
        Verdict::Satisfied
    } else if last >= 2.0 * first && last > TREND_SMALL {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    }
}

/// A sequence that should stay bounded along the family.
fn trend_bounded(values: &[f64]) -> Verdict {
    if values.iter().all(|v| v.abs() <= 1e-14) {
        return Verdict::Satisfied;
    }
    let first = values[0].abs().max(1e-300);
    let last = values.last().unwrap().abs();
    if last <= BOUNDED_GROWTH * first {
        Verdict::Satisfied
    } else if last >= VIOLATED_GROWTH * first {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    }
}

/// A sequence that should settle at some value: judged on relative
/// successive steps.
fn trend_stable(values: &[f64]) -> Verdict {
    let steps: Vec<f64> = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[1].abs().max(w[0].abs()).max(1e-300))
        .collect();
    let first = steps[0];
    let last = *steps.last().unwrap();
    if last <= STABLE_STEP || (last <= TREND_SMALL && last <= 0.5 * first) {
        Verdict::Satisfied
    } else if last >= 0.5 && last >= 2.0 * first {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    }
}

struct MemberMetrics {
    relaxation: f64,
    scaled: Vec<Vec<f64>>,
    density_c0: f64,
    balance_c0: f64,
    passage: f64,
    exit_mass: f64,
    escape_nu: f64,
    escape_sup: f64,
    margin: f64,
    gamma: f64,
    horizon: f64,
}

fn member_metrics(
    member: &FamilyMember,
    theta: f64,
    nu: &ProbabilityMeasure,
    x0: usize,
) -> Result<MemberMetrics> {
    let chain = &member.chain;
    let partition = &member.partition;
    let kappa = partition.kappa();
    if nu.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "starting measure".into(),
            expected: chain.n(),
            got: nu.len(),
        });
    }
    let off = 1.0 - nu.mass_of(partition.well(x0));
    if off > 1e-12 {
        return Err(Error::MeasureOffWell { well: x0, mass: off });
    }

    let view = TraceView::build(chain, partition)?;
    let relaxation = match view.min_reflected() {
        Some(g) => 1.0 / (theta * g),
        None => 0.0,
    };
    let gamma = view.default_gamma(chain);
    let jump = mean_jump_rates(&view.trace, &view.local, gamma)?;
    let scaled: Vec<Vec<f64>> = jump
        .rates
        .iter()
        .map(|row| row.iter().map(|r| theta * r).collect())
        .collect();

    let masses: Vec<f64> = (0..kappa)
        .map(|x| view.trace.pi().mass_of(view.local.well(x)))
        .collect();
    let min_mass = masses.iter().copied().fold(f64::INFINITY, f64::min);

    // Squared density of the start against the trace measure; its
    // product with the largest balanced mass is the constant that must
    // stay bounded for the starting measure to be admissible.
    let mut density = 0.0;
    for (k, &i) in view.kept.iter().enumerate() {
        if nu[i] > 0.0 {
            density += nu[i] * nu[i] / view.trace.pi()[k];
        }
    }
    let max_balanced = masses
        .iter()
        .map(|&m| m.min(1.0 - m))
        .fold(0.0_f64, f64::max);
    let density_c0 = density * max_balanced;

    let balance_lhs = (0..kappa)
        .map(|x| {
            masses
                .iter()
                .enumerate()
                .filter(|&(z, _)| z != x)
                .map(|(_, &m)| m)
                .fold(0.0_f64, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    let balance_c0 = balance_lhs / min_mass;

    let delta = partition.delta();
    let passage = if delta.is_empty() {
        0.0
    } else {
        let well_min = (0..kappa)
            .map(|x| chain.pi().mass_of(partition.well(x)))
            .fold(f64::INFINITY, f64::min);
        chain.pi().mass_of(delta) / well_min
    };

    // Mean trace rate out of the starting well under its conditioned
    // measure, brought to the family time scale.
    let well0 = view.local.well(x0);
    let cond0 = view.trace.pi().conditioned(well0)?;
    let mut in_well = vec![false; view.trace.n()];
    for &i in well0 {
        in_well[i] = true;
    }
    let mut exit_rate = 0.0;
    for &i in well0 {
        let mut out = 0.0;
        for &(j, r) in view.trace.rates().row(i) {
            if !in_well[j] {
                out += r;
            }
        }
        exit_rate += cond0[i] * out;
    }
    let exit_mass = theta * exit_rate;

    // Escape test horizon: geometric mean of the reflected mixing time
    // at the starting well and the family time scale.
    let floor = 1.0 / chain.max_holding();
    let tmix = if partition.well(x0).len() < 2 {
        floor
    } else {
        let (refl, _) = reflect_chain(chain, partition.well(x0))?;
        mixing_profile(&refl, &[0.25])?
            .t_mix(0.25)
            .unwrap_or(0.0)
            .max(floor)
    };
    let horizon = (tmix * theta).sqrt();
    let bounds = escape_bounds(chain, partition, x0, 1.0 / horizon, nu)?;
    let escape_nu = bounds.upper_potential;
    let escape_sup = bounds
        .per_state
        .iter()
        .map(|&(_, b, _)| b)
        .fold(0.0_f64, f64::max);

    let mut margin = 0.0_f64;
    for x in 0..kappa {
        let well = partition.well(x);
        if well.len() < 2 {
            continue;
        }
        let g = view.refl_gaps[x].expect("reflected gap of a multi-state well");
        let cond = chain.pi().conditioned(well)?;
        let minp = well.iter().map(|&i| cond[i]).fold(f64::INFINITY, f64::min);
        margin = margin.max((1.0 / minp).ln() / (horizon * g));
    }

    Ok(MemberMetrics {
        relaxation,
        scaled,
        density_c0,
        balance_c0,
        passage,
        exit_mass,
        escape_nu,
        escape_sup,
        margin,
        gamma,
        horizon,
    })
}

/// Measures, for every member of the family, the quantities whose
/// limiting behaviour decides whether the family has a metastable
/// description on its time scales: the relaxation ratio of wells
/// against the scale, the scaled inter-well rates, the density and
/// balance constants, the passage-set mass, the exit-rate mass of the
/// starting well, the early-escape bounds at an intermediate horizon,
/// and the mixing margin at that horizon.  `starts[i]` is the starting
/// measure on well `x0` of member `i`.
pub fn check_conditions(
    family: &ChainFamily,
    starts: &[ProbabilityMeasure],
    x0: usize,
) -> Result<ConditionReport> {
    if family.len() < 3 {
        return Err(Error::FamilyTooSmall(family.len()));
    }
    if starts.len() != family.len() {
        return Err(Error::DimensionMismatch {
            context: "starting measures".into(),
            expected: family.len(),
            got: starts.len(),
        });
    }
    if x0 >= family.kappa() {
        return Err(Error::BadPartition(format!("no well {x0}")));
    }

    let metrics: Vec<MemberMetrics> = family
        .members
        .par_iter()
        .enumerate()
        .map(|(i, m)| member_metrics(m, family.thetas[i], &starts[i], x0))
        .collect::<Result<Vec<_>>>()?;

    let kappa = family.kappa();
    let mut entries = Vec::new();
    let mut push = |name: String, values: Vec<f64>, judge: fn(&[f64]) -> Verdict| {
        let verdict = judge(&values);
        entries.push(ConditionEntry {
            name,
            values,
            verdict,
        });
    };

    push(
        "relaxation ratio".into(),
        metrics.iter().map(|m| m.relaxation).collect(),
        trend_small,
    );
    for x in 0..kappa {
        for y in 0..kappa {
            if y != x {
                push(
                    format!("rate ({x},{y})"),
                    metrics.iter().map(|m| m.scaled[x][y]).collect(),
                    trend_stable,
                );
            }
        }
    }
    push(
        "starting density".into(),
        metrics.iter().map(|m| m.density_c0).collect(),
        trend_bounded,
    );
    push(
        "well balance".into(),
        metrics.iter().map(|m| m.balance_c0).collect(),
        trend_bounded,
    );
    push(
        "passage mass".into(),
        metrics.iter().map(|m| m.passage).collect(),
        trend_small,
    );
    push(
        "exit-rate mass".into(),
        metrics.iter().map(|m| m.exit_mass).collect(),
        trend_bounded,
    );
    push(
        "early escape".into(),
        metrics.iter().map(|m| m.escape_nu).collect(),
        trend_small,
    );
    push(
        "early escape (uniform)".into(),
        metrics.iter().map(|m| m.escape_sup).collect(),
        trend_small,
    );
    push(
        "mixing margin".into(),
        metrics.iter().map(|m| m.margin).collect(),
        trend_small,
    );

    Ok(ConditionReport {
        params: family.params(),
        thetas: family.thetas.clone(),
        gammas: metrics.iter().map(|m| m.gamma).collect(),
        horizons: metrics.iter().map(|m| m.horizon).collect(),
        scaled_rates: metrics.into_iter().map(|m| m.scaled).collect(),
        entries,
    })
}

// ---------------------------------------------------------------------------
// Limit chain
// ---------------------------------------------------------------------------

/// A chain on well labels: the candidate limit of the rescaled order
/// dynamics.  Only off-diagonal rates are stored; rows may sum to
/// anything nonnegative, absorbing labels included.
#[derive(Debug, Clone)]
pub struct LimitChain {
    /// `rates[x][y]`, zero on the diagonal.
    pub rates: Vec<Vec<f64>>,
    /// Scaled rate matrix of each family member behind a prediction;
    /// empty for hand-built limits.
    pub per_member: Vec<Vec<Vec<f64>>>,
    /// False when the family was too short to extrapolate and the last
    /// member was passed through unchanged.
    pub extrapolated: bool,
}

impl LimitChain {
    pub fn new(rates: Vec<Vec<f64>>) -> Result<LimitChain> {
        let kappa = rates.len();
        for row in &rates {
            if row.len() != kappa {
                return Err(Error::DimensionMismatch {
                    context: "limit rates".into(),
                    expected: kappa,
                    got: row.len(),
                });
            }
        }
        let mut clean = rates;
        for (x, row) in clean.iter_mut().enumerate() {
            for (y, r) in row.iter_mut().enumerate() {
                if y == x {
                    *r = 0.0;
                } else if !(*r >= 0.0 && r.is_finite()) {
                    return Err(Error::NegativeRate {
                        row: x,
                        col: y,
                        value: *r,
                    });
                }
            }
        }
        Ok(LimitChain {
            rates: clean,
            per_member: Vec::new(),
            extrapolated: false,
        })
    }

    pub fn kappa(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.rates[x][y]
    }
}

/// Quadratic extrapolation to `x = 0` through three points.
fn lagrange_at_zero(xs: [f64; 3], vs: [f64; 3]) -> f64 {
    let mut out = 0.0;
    for i in 0..3 {
        let mut w = 1.0;
        for j in 0..3 {
            if j != i {
                w *= xs[j] / (xs[j] - xs[i]);
            }
        }
        out += w * vs[i];
    }
    out
}

/// Extrapolates the scaled inter-well rates of the family to the large
/// parameter limit: quadratic in the reciprocal parameter through the
/// last three members.  Shorter families pass their last member through
/// unchanged and say so in the result.
pub fn predict_limit_chain(family: &ChainFamily) -> Result<LimitChain> {
    let per_member: Vec<Vec<Vec<f64>>> = family
        .members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let view = TraceView::build(&m.chain, &m.partition)?;
            let gamma = view.default_gamma(&m.chain);
            let jump = mean_jump_rates(&view.trace, &view.local, gamma)?;
            Ok(jump
                .rates
                .iter()
                .map(|row| row.iter().map(|r| family.thetas[i] * r).collect())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let kappa = family.kappa();
    if family.len() < 3 {
        return Ok(LimitChain {
            rates: per_member.last().unwrap().clone(),
            per_member,
            extrapolated: false,
        });
    }

    let tail = family.len() - 3;
    let xs = [
        1.0 / family.members[tail].param,
        1.0 / family.members[tail + 1].param,
        1.0 / family.members[tail + 2].param,
    ];
    let mut rates = vec![vec![0.0; kappa]; kappa];
    for x in 0..kappa {
        for y in 0..kappa {
            if y == x {
                continue;
            }
            let vs = [
                per_member[tail][x][y],
                per_member[tail + 1][x][y],
                per_member[tail + 2][x][y],
            ];
            if vs[0] > 1e-12 && vs[1] >= 2.0 * vs[0] && vs[2] >= 2.0 * vs[1] {
                return Err(Error::DivergentRates(format!(
                    "rate ({x},{y}) keeps doubling across the family: {:.3e}, {:.3e}, {:.3e}",
                    vs[0], vs[1], vs[2]
                )));
            }
            rates[x][y] = lagrange_at_zero(xs, vs).max(0.0);
        }
    }
    Ok(LimitChain {
        rates,
        per_member,
        extrapolated: true,
    })
}

// ---------------------------------------------------------------------------
// Two-valley ratio
// ---------------------------------------------------------------------------

/// Star capacity of a two-valley split against the trace gap, with the
/// sandwich that brackets their ratio.
#[derive(Debug, Clone)]
pub struct TwoValleyReport {
    pub gamma: f64,
    pub trace_gap: f64,
    /// Capacity between the two star sets of the enlarged trace chain.
    pub capacity_star: f64,
    /// Star capacity divided by the product of valley masses.
    pub normalized: f64,
    /// Normalized capacity against the trace gap; tends to one half
    /// when the valleys metastabilize and the enlargement rate sits
    /// between the trace gap and the reflected gaps.
    pub ratio: f64,
    /// `lower <= mid <= upper` with `mid = 2 * normalized / trace_gap`.
    pub sandwich: (f64, f64, f64),
    /// Reflected gap of each valley; none for singletons.
    pub reflected_gaps: [Option<f64>; 2],
}

/// Compares the star capacity of a two-valley split with the trace
/// gap.  States outside the two valleys are passage states and drop
/// out under the trace.  Without an explicit enlargement rate the
/// geometric mean of the trace gap and the fastest internal scale is
/// used.
pub fn two_valley_ratio(
    chain: &Chain,
    a: &[usize],
    b: &[usize],
    gamma: Option<f64>,
) -> Result<TwoValleyReport> {
    let clean = |set: &[usize], name: &str| -> Result<Vec<usize>> {
        let mut s = set.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.is_empty() {
            return Err(Error::BadPartition(format!("valley {name} is empty")));
        }
        if let Some(&worst) = s.iter().find(|&&i| i >= chain.n()) {
            return Err(Error::BadPartition(format!(
                "valley {name} holds state {worst}, chain has {} states",
                chain.n()
            )));
        }
        Ok(s)
    };
    let a = clean(a, "A")?;
    let b = clean(b, "B")?;
    if a.iter().any(|i| b.binary_search(i).is_ok()) {
        return Err(Error::BadPartition("valleys overlap".into()));
    }
    if let Some(g) = gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::NonpositiveGamma(g));
        }
    }

    let mut traced: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
    traced.sort_unstable();
    let (trace, kept) = trace_chain(chain, &traced)?;
    let mut local_ix = vec![usize::MAX; chain.n()];
    for (k, &i) in kept.iter().enumerate() {
        local_ix[i] = k;
    }
    let a_local: Vec<usize> = a.iter().map(|&i| local_ix[i]).collect();
    let b_local: Vec<usize> = b.iter().map(|&i| local_ix[i]).collect();

    let trace_gap = spectral_gap(&trace)?.gap;
    let refl_gap = |set: &[usize]| -> Result<Option<f64>> {
        if set.len() < 2 {
            Ok(None)
        } else {
            let (refl, _) = reflect_chain(chain, set)?;
            Ok(Some(spectral_gap(&refl)?.gap))
        }
    };
    let gap_a = refl_gap(&a)?;
    let gap_b = refl_gap(&b)?;
    let min_refl = match (gap_a, gap_b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    };
    let gamma = gamma
        .unwrap_or_else(|| (trace_gap * min_refl.unwrap_or_else(|| chain.max_holding())).sqrt());

    let enlarged = enlarge_chain(&trace, gamma)?;
    let cap = capacity(
        &enlarged.chain,
        &enlarged.stars_of(&a_local),
        &enlarged.stars_of(&b_local),
    )?
    .value;

    let mass_a = trace.pi().mass_of(&a_local);
    let mass_b = trace.pi().mass_of(&b_local);
    let normalized = cap / (mass_a * mass_b);
    let mid = 2.0 * normalized / trace_gap;
    let lower = {
        let d = 1.0 - 2.0 * normalized / gamma;
        d * d
    };
    let upper = match min_refl {
        Some(g) => 1.0 + (gamma + 2.0 * normalized) / g,
        None => 1.0,
    };
    let tol = SANDWICH_TOL * mid.max(1.0);
    if lower > mid + tol || mid > upper + tol {
        return Err(Error::SolveFailure(format!(
            "two-valley sandwich failed: {lower} <= {mid} <= {upper}"
        )));
    }

    Ok(TwoValleyReport {
        gamma,
        trace_gap,
        capacity_star: cap,
        normalized,
        ratio: normalized / trace_gap,
        sandwich: (lower, mid, upper),
        reflected_gaps: [gap_a, gap_b],
    })
}

// ---------------------------------------------------------------------------
// Limit semigroup and occupation profiles
// ---------------------------------------------------------------------------

/// `exp(t Q)` by scaling and squaring; fine at well-label sizes.
fn expm(q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let a = q * t;
    let norm = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = &a / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=40u64 {
        term = (&term * &b) / k as f64;
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn limit_generator(limit: &LimitChain) -> DMatrix<f64> {
    let kappa = limit.kappa();
    let mut q = DMatrix::zeros(kappa, kappa);
    for x in 0..kappa {
        let mut total = 0.0;
        for y in 0..kappa {
            if y != x {
                q[(x, y)] = limit.rates[x][y];
                total += limit.rates[x][y];
            }
        }
        q[(x, x)] = -total;
    }
    q
}

/// Transition matrix of the limit chain after time `t`; rows are
/// probability distributions.
pub fn limit_semigroup(limit: &LimitChain, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Parse(format!("time must be nonnegative, got {t}")));
    }
    let kappa = limit.kappa();
    let mut p = expm(&limit_generator(limit), t);
    for x in 0..kappa {
        let mut row_sum = 0.0;
        for y in 0..kappa {
            if p[(x, y)] < -1e-12 {
                return Err(Error::SolveFailure(format!(
                    "limit semigroup turned negative at ({x},{y}): {}",
                    p[(x, y)]
                )));
            }
            p[(x, y)] = p[(x, y)].max(0.0);
            row_sum += p[(x, y)];
        }
        if (row_sum - 1.0).abs() > 1e-12 {
            return Err(Error::SolveFailure(format!(
                "limit semigroup row {x} sums to {row_sum}"
            )));
        }
    }
    Ok(p)
}

/// Exact occupation integrals of the chain over `[0, t]` at time scale
/// `theta`, one per well, through the spectral decomposition of the
/// symmetrized generator.  Stiff early modes integrate in closed form,
/// so no quadrature grid is involved.
fn chain_occupation(
    chain: &Chain,
    wells: &[Vec<usize>],
    nu: &ProbabilityMeasure,
    theta: f64,
    t: f64,
) -> Vec<f64> {
    let n = chain.n();
    let sym = symmetrized(chain);
    let (values, vectors) = full_symmetric_eigen(&sym.matrix);
    let sqrt_pi: Vec<f64> = chain.pi().as_slice().iter().map(|p| p.sqrt()).collect();
    let mut out = vec![0.0; wells.len()];
    for k in 0..n {
        let col = vectors.column(k);
        let c: f64 = (0..n).map(|i| col[i] * nu[i] / sqrt_pi[i]).sum();
        if c == 0.0 {
            continue;
        }
        let a = values[k] * theta * t;
        let weight = if a.abs() < 1e-300 {
            t
        } else {
            -(-a).exp_m1() / (values[k] * theta)
        };
        for (x, well) in wells.iter().enumerate() {
            let g: f64 = well.iter().map(|&j| sqrt_pi[j] * col[j]).sum();
            out[x] += c * g * weight;
        }
    }
    out
}

/// Exact occupation integrals of the limit chain started at `x0`: the
/// integrated semigroup falls out of one block exponential of
/// `[[Q, I], [0, 0]]`.
fn limit_occupation(limit: &LimitChain, x0: usize, t: f64) -> Result<Vec<f64>> {
    let kappa = limit.kappa();
    let q = limit_generator(limit);
    let mut block = DMatrix::zeros(2 * kappa, 2 * kappa);
    for x in 0..kappa {
        for y in 0..kappa {
            block[(x, y)] = q[(x, y)];
        }
        block[(x, kappa + x)] = 1.0;
    }
    let e = expm(&block, t);
    let mut out = vec![0.0; kappa];
    let mut total = 0.0;
    for y in 0..kappa {
        out[y] = e[(x0, kappa + y)].max(0.0);
        total += out[y];
    }
    if (total - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::SolveFailure(format!(
            "limit occupation integrals sum to {total} over horizon {t}"
        )));
    }
    Ok(out)
}

/// Occupation comparison of one chain against a candidate limit.
#[derive(Debug, Clone)]
pub struct CesaroReport {
    pub t: f64,
    pub theta: f64,
    /// Well carrying the starting measure.
    pub x0: usize,
    /// Per well: time average over `[0, t]` of the mass the rescaled
    /// chain puts in that well.
    pub chain_side: Vec<f64>,
    /// Same averages for the limit chain started at `x0`.
    pub limit_side: Vec<f64>,
    pub discrepancy: f64,
    /// Time the rescaled chain spends outside every well.
    pub delta_occupation: f64,
}

/// Integrates the well masses of the chain, run at time scale `theta`,
/// over `[0, t]`, and compares them with the occupation integrals of
/// the limit chain.  The starting measure must sit inside one well.
pub fn cesaro_occupation(
    chain: &Chain,
    partition: &Partition,
    nu: &ProbabilityMeasure,
    theta: f64,
    t: f64,
    limit: &LimitChain,
) -> Result<CesaroReport> {
    if partition.n() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "partition".into(),
            expected: chain.n(),
            got: partition.n(),
        });
    }
    if nu.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "starting measure".into(),
            expected: chain.n(),
            got: nu.len(),
        });
    }
    if limit.kappa() != partition.kappa() {
        return Err(Error::DimensionMismatch {
            context: "limit chain".into(),
            expected: partition.kappa(),
            got: limit.kappa(),
        });
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Parse(format!(
            "time scale must be positive, got {theta}"
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Parse(format!("horizon must be nonnegative, got {t}")));
    }

    let kappa = partition.kappa();
    let (x0, best_mass) = (0..kappa)
        .map(|x| (x, nu.mass_of(partition.well(x))))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one well");
    if 1.0 - best_mass > 1e-12 {
        return Err(Error::MeasureOffWell {
            well: x0,
            mass: 1.0 - best_mass,
        });
    }

    if t == 0.0 {
        return Ok(CesaroReport {
            t,
            theta,
            x0,
            chain_side: vec![0.0; kappa],
            limit_side: vec![0.0; kappa],
            discrepancy: 0.0,
            delta_occupation: 0.0,
        });
    }

    let wells: Vec<Vec<usize>> = (0..kappa).map(|x| partition.well(x).to_vec()).collect();
    let chain_side = chain_occupation(chain, &wells, nu, theta, t);
    let limit_side = limit_occupation(limit, x0, t)?;
    let discrepancy = chain_side
        .iter()
        .zip(&limit_side)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    let delta_occupation = (t - chain_side.iter().sum::<f64>()).max(0.0);

    Ok(CesaroReport {
        t,
        theta,
        x0,
        chain_side,
        limit_side,
        discrepancy,
        delta_occupation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::RateMatrix;
    use crate::models::{birth_death, random_reversible, two_state, DogGraph, DogGraphSpec};
    use crate::models::{Polymer, PolymerSpec};

    /// Six-state path with a weak middle bond; two three-state wells.
    fn barrier_chain(eps: f64) -> Chain {
        let mut triples = Vec::new();
        for (i, j, r) in [
            (0usize, 1usize, 1.0),
            (1, 2, 1.0),
            (2, 3, eps),
            (3, 4, 1.0),
            (4, 5, 1.0),
        ] {
            triples.push((i, j, r));
            triples.push((j, i, r));
        }
        Chain::build(RateMatrix::from_triples(6, &triples).unwrap()).unwrap()
    }

    fn barrier_partition() -> Partition {
        Partition::new(6, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap()
    }

    fn barrier_family() -> ChainFamily {
        let members = [4.0, 16.0, 64.0, 256.0]
            .iter()
            .map(|&p| FamilyMember {
                param: p,
                chain: barrier_chain(1.0 / p),
                partition: barrier_partition(),
            })
            .collect();
        ChainFamily::new(members).unwrap()
    }

    #[test]
    fn family_validation() {
        assert!(matches!(
            ChainFamily::new(Vec::new()),
            Err(Error::FamilyTooSmall(0))
        ));

        let flat = vec![
            FamilyMember {
                param: 2.0,
                chain: barrier_chain(0.5),
                partition: barrier_partition(),
            },
            FamilyMember {
                param: 2.0,
                chain: barrier_chain(0.25),
                partition: barrier_partition(),
            },
        ];
        assert!(matches!(ChainFamily::new(flat), Err(Error::Parse(_))));

        let mixed = vec![
            FamilyMember {
                param: 1.0,
                chain: barrier_chain(0.5),
                partition: barrier_partition(),
            },
            FamilyMember {
                param: 2.0,
                chain: barrier_chain(0.25),
                partition: Partition::new(6, vec![vec![0, 1], vec![2, 3], vec![4, 5]]).unwrap(),
            },
        ];
        assert!(matches!(
            ChainFamily::new(mixed),
            Err(Error::IncompatiblePartitions(_))
        ));
    }

    #[test]
    fn check_conditions_guards() {
        let family = barrier_family();
        let starts = family.stationary_starts(0).unwrap();

        let short = ChainFamily::new(
            family.members()[..2]
                .iter()
                .map(|m| FamilyMember {
                    param: m.param,
                    chain: m.chain.clone(),
                    partition: m.partition.clone(),
                })
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            check_conditions(&short, &starts[..2], 0),
            Err(Error::FamilyTooSmall(2))
        ));

        assert!(matches!(
            check_conditions(&family, &starts[..3], 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            check_conditions(&family, &starts, 7),
            Err(Error::BadPartition(_))
        ));
    }

    #[test]
    fn barrier_family_trends() {
        let family = barrier_family();
        let starts = family.stationary_starts(0).unwrap();
        let report = check_conditions(&family, &starts, 0).unwrap();

        assert!(!report.any_violated());
        for name in [
            "relaxation ratio",
            "rate (0,1)",
            "rate (1,0)",
            "starting density",
            "well balance",
            "passage mass",
            "exit-rate mass",
            "mixing margin",
        ] {
            let entry = report.entry(name).unwrap();
            assert_eq!(
                entry.verdict,
                Verdict::Satisfied,
                "{name}: {:?}",
                entry.values
            );
        }
        // The escape bounds shrink with the parameter even where the
        // absolute values stay too large to call.
        for name in ["early escape", "early escape (uniform)"] {
            let v = &report.entry(name).unwrap().values;
            assert!(v.windows(2).all(|w| w[1] < w[0]), "{name}: {v:?}");
        }

        // Weakening bond, slowing trace scale.
        assert!(report.thetas.windows(2).all(|w| w[1] > w[0]));
        // Scaled rates settle near the balanced well mass.
        let last = report.scaled_rates.last().unwrap();
        assert!((last[0][1] - 0.5).abs() < 0.05, "{:?}", last);
        assert!((last[1][0] - 0.5).abs() < 0.05, "{:?}", last);
    }

    #[test]
    fn identical_members_are_inconclusive() {
        let members = [1.0, 2.0, 3.0]
            .iter()
            .map(|&p| FamilyMember {
                param: p,
                chain: birth_death(6, 1.0, 1.0).unwrap(),
                partition: Partition::new(6, vec![vec![0, 1], vec![4, 5]]).unwrap(),
            })
            .collect();
        let family = ChainFamily::new(members).unwrap();
        let starts = family.stationary_starts(0).unwrap();
        let report = check_conditions(&family, &starts, 0).unwrap();

        for name in [
            "relaxation ratio",
            "passage mass",
            "early escape",
            "early escape (uniform)",
            "mixing margin",
        ] {
            let entry = report.entry(name).unwrap();
            assert_eq!(
                entry.verdict,
                Verdict::Inconclusive,
                "{name}: {:?}",
                entry.values
            );
        }
        // Constant sequences have settled and stay bounded.
        assert_eq!(report.entry("rate (0,1)").unwrap().verdict, Verdict::Satisfied);
        assert_eq!(
            report.entry("exit-rate mass").unwrap().verdict,
            Verdict::Satisfied
        );
    }

    #[test]
    fn barrier_limit_rates_extrapolate_to_half() {
        let family = barrier_family();
        let limit = predict_limit_chain(&family).unwrap();
        assert!(limit.extrapolated);
        assert_eq!(limit.per_member.len(), 4);
        assert!((limit.rate(0, 1) - 0.5).abs() < 0.02, "{:?}", limit.rates);
        assert!((limit.rate(0, 1) - limit.rate(1, 0)).abs() < 1e-8);
        assert_eq!(limit.rate(0, 0), 0.0);
    }

    #[test]
    fn single_member_passes_through() {
        let family = ChainFamily::new(vec![FamilyMember {
            param: 1.0,
            chain: barrier_chain(0.1),
            partition: barrier_partition(),
        }])
        .unwrap();
        let limit = predict_limit_chain(&family).unwrap();
        assert!(!limit.extrapolated);
        assert_eq!(limit.rates, limit.per_member[0]);
    }

    #[test]
    fn prediction_is_label_equivariant() {
        let family = barrier_family();
        let swapped = ChainFamily::new(
            family
                .members()
                .iter()
                .map(|m| FamilyMember {
                    param: m.param,
                    chain: m.chain.clone(),
                    partition: Partition::new(6, vec![vec![3, 4, 5], vec![0, 1, 2]]).unwrap(),
                })
                .collect(),
        )
        .unwrap();
        let plain = predict_limit_chain(&family).unwrap();
        let flipped = predict_limit_chain(&swapped).unwrap();
        assert!((plain.rate(0, 1) - flipped.rate(1, 0)).abs() < 1e-9);
        assert!((plain.rate(1, 0) - flipped.rate(0, 1)).abs() < 1e-9);
    }

    #[test]
    fn divergent_scaled_rates_are_rejected() {
        // Fixed chain, wildly shrinking time scales: the scaled rates
        // keep doubling and no limit exists.
        let members: Vec<FamilyMember> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&p| FamilyMember {
                param: p,
                chain: barrier_chain(0.25),
                partition: barrier_partition(),
            })
            .collect();
        let family = ChainFamily::with_thetas(members, vec![1.0, 4.0, 32.0]).unwrap();
        assert!(matches!(
            predict_limit_chain(&family),
            Err(Error::DivergentRates(_))
        ));
    }

    #[test]
    fn two_state_two_valley_closed_form() {
        // Unit-rate two-state chain: the enlarged star capacity is
        // gamma / (4 (gamma + 2)), so the ratio is gamma / (2 gamma + 4)
        // and approaches one half only for large gamma.
        let chain = two_state(1.0, 1.0).unwrap();
        for gamma in [1.0, 10.0, 100.0] {
            let rep = two_valley_ratio(&chain, &[0], &[1], Some(gamma)).unwrap();
            let cap = gamma / (4.0 * (gamma + 2.0));
            assert!((rep.capacity_star - cap).abs() < 1e-12);
            assert!((rep.ratio - gamma / (2.0 * gamma + 4.0)).abs() < 1e-12);
            assert_eq!(rep.reflected_gaps, [None, None]);
            let (lo, mid, hi) = rep.sandwich;
            assert!(lo <= mid + 1e-12 && mid <= hi + 1e-12);
        }
    }

    #[test]
    fn two_valley_guards() {
        let chain = two_state(1.0, 1.0).unwrap();
        assert!(matches!(
            two_valley_ratio(&chain, &[], &[1], None),
            Err(Error::BadPartition(_))
        ));
        assert!(matches!(
            two_valley_ratio(&chain, &[0, 1], &[1], None),
            Err(Error::BadPartition(_))
        ));
        assert!(matches!(
            two_valley_ratio(&chain, &[0], &[1], Some(-1.0)),
            Err(Error::NonpositiveGamma(_))
        ));
    }

    #[test]
    fn sandwich_holds_on_random_chains() {
        // Dense random chains, splits with and without passage states,
        // three enlargement rates each.
        for seed in 0..30u64 {
            let n = 8 + (seed as usize % 9);
            let chain = random_reversible(n, seed, 0.9).unwrap();
            let k = 1 + (seed as usize % (n / 2));
            let cut = k + 1 + (seed as usize % (n - k - 1)).min(n - k - 1);
            let a: Vec<usize> = (0..k).collect();
            let b: Vec<usize> = (k..cut).collect();
            let h = chain.max_holding();
            for gamma in [0.1 * h, h, 10.0 * h] {
                let rep = match two_valley_ratio(&chain, &a, &b, Some(gamma)) {
                    Ok(rep) => rep,
                    Err(Error::ReducibleReflection { .. }) => continue,
                    Err(e) => panic!("seed {seed}: {e}"),
                };
                let (lo, mid, hi) = rep.sandwich;
                let tol = 1e-10 * mid.max(1.0);
                assert!(lo <= mid + tol && mid <= hi + tol, "seed {seed}: {lo} {mid} {hi}");
                assert!((rep.ratio - mid / 2.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dog_ratio_approaches_half() {
        let mut dist = Vec::new();
        for n in [4usize, 8] {
            let dog = DogGraph::build(DogGraphSpec { n, d: 2 }).unwrap();
            let part = dog.metastable_partition(None).unwrap();
            let rep = two_valley_ratio(
                &dog.chain,
                part.well(0),
                part.well(1),
                None,
            )
            .unwrap();
            dist.push((rep.ratio - 0.5).abs());
        }
        assert!(dist[1] < dist[0], "{dist:?}");
        assert!(dist[1] < 0.2, "{dist:?}");
    }

    #[test]
    fn polymer_relaxation_ratio_shrinks() {
        let members: Vec<FamilyMember> = [3usize, 4, 5]
            .iter()
            .map(|&n| {
                let p = Polymer::build(PolymerSpec { n, alpha: 0.3 }).unwrap();
                let partition = p.metastable_partition(None).unwrap();
                FamilyMember {
                    param: n as f64,
                    chain: p.chain,
                    partition,
                }
            })
            .collect();
        let family = ChainFamily::new(members).unwrap();
        let starts = family.stationary_starts(0).unwrap();
        let report = check_conditions(&family, &starts, 0).unwrap();
        let relax = &report.entry("relaxation ratio").unwrap().values;
        assert!(relax.windows(2).all(|w| w[1] < w[0]), "{relax:?}");
    }

    #[test]
    fn limit_chain_validation() {
        assert!(matches!(
            LimitChain::new(vec![vec![0.0, 1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            LimitChain::new(vec![vec![0.0, -1.0], vec![1.0, 0.0]]),
            Err(Error::NegativeRate { .. })
        ));
        // Diagonal entries are ignored.
        let l = LimitChain::new(vec![vec![9.0, 1.0], vec![2.0, 9.0]]).unwrap();
        assert_eq!(l.rate(0, 0), 0.0);
        assert_eq!(l.rate(1, 0), 2.0);
    }

    #[test]
    fn limit_semigroup_two_state_closed_form() {
        let l = LimitChain::new(vec![vec![0.0, 0.7], vec![0.7, 0.0]]).unwrap();
        let t = 1.7;
        let p = limit_semigroup(&l, t).unwrap();
        let off = (1.0 - (-2.0 * 0.7 * t).exp()) / 2.0;
        assert!((p[(0, 1)] - off).abs() < 1e-13);
        assert!((p[(0, 0)] - (1.0 - off)).abs() < 1e-13);

        let id = limit_semigroup(&l, 0.0).unwrap();
        assert!((id[(0, 0)] - 1.0).abs() < 1e-15 && id[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn limit_semigroup_rows_are_stochastic() {
        let l = LimitChain::new(vec![
            vec![0.0, 0.3, 2.0, 0.0],
            vec![1.1, 0.0, 0.2, 0.6],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.5, 0.0],
        ])
        .unwrap();
        let p = limit_semigroup(&l, 3.0).unwrap();
        for x in 0..4 {
            let s: f64 = (0..4).map(|y| p[(x, y)]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // The absorbing label stays put.
        assert!((p[(2, 2)] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn cesaro_matches_exact_two_state_limit() {
        // Chain and limit have identical rates, so the occupation
        // integrals agree up to quadrature error.  The limit side is
        // also pinned to the closed form.
        let chain = two_state(0.5, 0.5).unwrap();
        let partition = Partition::new(2, vec![vec![0], vec![1]]).unwrap();
        let nu = ProbabilityMeasure::dirac(2, 0);
        let limit = LimitChain::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        let rep = cesaro_occupation(&chain, &partition, &nu, 1.0, 2.0, &limit).unwrap();

        assert_eq!(rep.x0, 0);
        assert!(rep.discrepancy < 1e-8, "{}", rep.discrepancy);
        let t: f64 = 2.0;
        let exact = t / 2.0 - (1.0 - (-t).exp()) / 2.0;
        assert!((rep.limit_side[1] - exact).abs() < 1e-8);
        assert!((rep.chain_side[0] + rep.chain_side[1] - t).abs() < 1e-8);
    }

    #[test]
    fn cesaro_zero_horizon_and_guards() {
        let chain = two_state(0.5, 0.5).unwrap();
        let partition = Partition::new(2, vec![vec![0], vec![1]]).unwrap();
        let nu = ProbabilityMeasure::dirac(2, 0);
        let limit = LimitChain::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();

        let rep = cesaro_occupation(&chain, &partition, &nu, 1.0, 0.0, &limit).unwrap();
        assert_eq!(rep.chain_side, vec![0.0, 0.0]);
        assert_eq!(rep.discrepancy, 0.0);

        assert!(matches!(
            cesaro_occupation(&chain, &partition, &nu, 0.0, 1.0, &limit),
            Err(Error::Parse(_))
        ));
        let split = ProbabilityMeasure::from_weights(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            cesaro_occupation(&chain, &partition, &split, 1.0, 1.0, &limit),
            Err(Error::MeasureOffWell { .. })
        ));
        let wide = LimitChain::new(vec![vec![0.0; 3]; 3]).unwrap();
        assert!(matches!(
            cesaro_occupation(&chain, &partition, &nu, 1.0, 1.0, &wide),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dog_cesaro_discrepancy_shrinks_with_size() {
        // Against the balanced two-label limit, the occupation profile
        // of the dog graph improves as the graph grows.
        let mut disc = Vec::new();
        for n in [4usize, 8] {
            let dog = DogGraph::build(DogGraphSpec { n, d: 2 }).unwrap();
            let part = dog.origin_partition().unwrap();
            let nu = dog.chain.pi().conditioned(part.well(0)).unwrap();
            let theta = 1.0
                / spectral_gap(&trace_chain(&dog.chain, &part.traced_states()).unwrap().0)
                    .unwrap()
                    .gap;
            let limit = LimitChain::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
            let rep = cesaro_occupation(&dog.chain, &part, &nu, theta, 2.0, &limit).unwrap();
            disc.push(rep.discrepancy);
        }
        assert!(disc[1] < disc[0], "{disc:?}");
        assert!(disc[1] < 0.12, "{disc:?}");
    }
}
