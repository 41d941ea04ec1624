//! Potential theory: equilibrium potentials, capacities (exact, trial
//! bound, Monte Carlo), mean inter-well jump rates, quasi-stationary
//! measures, and the short-horizon escape bounds built from them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{Chain, Observable, ProbabilityMeasure};
use crate::error::{Error, Result};
use crate::linalg;
use crate::semigroup::Uniformized;
use crate::transforms::{enlarge_at, enlarge_chain, trace_chain, Partition};

/// Agreement required between independent exact routes.
const ROUTE_TOL: f64 = 1e-10;

/// Relative size below which a capacity difference is treated as
/// catastrophically cancelled.
const CANCELLATION_TOL: f64 = 1e-8;

pub(crate) fn clean_set(n: usize, states: &[usize], what: &str) -> Result<Vec<usize>> {
    if states.is_empty() {
        return Err(Error::EmptySubset(what.into()));
    }
    let mut out = states.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&s| s >= n) {
        return Err(Error::DimensionMismatch {
            context: format!("{what} state"),
            expected: n,
            got: bad,
        });
    }
    Ok(out)
}

fn check_disjoint(a: &[usize], b: &[usize]) -> Result<()> {
    // Both sorted.
    let mut shared = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::OverlappingSets(shared))
    }
}

// ---------------------------------------------------------------------------
// Equilibrium potential
// ---------------------------------------------------------------------------

/// Harmonic interpolation between two boundary sets: one on the source,
/// zero on the sink, generator-harmonic in between.  The value at a state
/// is the probability of hitting the source before the sink.
#[derive(Debug, Clone)]
pub struct EquilibriumPotential {
    values: Observable,
    source: Vec<usize>,
    sink: Vec<usize>,
}

impl EquilibriumPotential {
    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn values(&self) -> &Observable {
        &self.values
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn sink(&self) -> &[usize] {
        &self.sink
    }
}

/// Solves the boundary-value problem `LV = 0` off `a` and `b`, `V = 1` on
/// `a`, `V = 0` on `b`; then `V(eta) = P_eta[H_a < H_b]`.
pub fn equilibrium_potential(
    chain: &Chain,
    a: &[usize],
    b: &[usize],
) -> Result<EquilibriumPotential> {
    let n = chain.n();
    let a = clean_set(n, a, "source")?;
    let b = clean_set(n, b, "sink")?;
    check_disjoint(&a, &b)?;
    let mut role = vec![0u8; n]; // 0 interior, 1 source, 2 sink
    for &s in &a {
        role[s] = 1;
    }
    for &s in &b {
        role[s] = 2;
    }
    let interior: Vec<usize> = (0..n).filter(|&i| role[i] == 0).collect();

    let mut values = vec![0.0; n];
    for &s in &a {
        values[s] = 1.0;
    }
    if !interior.is_empty() {
        let m = interior.len();
        let mut local = vec![usize::MAX; n];
        for (k, &i) in interior.iter().enumerate() {
            local[i] = k;
        }
        // (lambda I - R_II) v = R_IA 1.
        let mut mat = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (k, &i) in interior.iter().enumerate() {
            mat[(k, k)] = chain.holding(i);
            for &(j, r) in chain.rates().row(i) {
                match role[j] {
                    0 => mat[(k, local[j])] -= r,
                    1 => rhs[k] += r,
                    _ => {}
                }
            }
        }
        let sol = linalg::solve(mat, rhs)?;
        for (k, &i) in interior.iter().enumerate() {
            values[i] = sol[k];
        }
    }

    // Probabilities must land in [0,1] and be harmonic off the boundary.
    for &i in &interior {
        if values[i] < -ROUTE_TOL || values[i] > 1.0 + ROUTE_TOL {
            return Err(Error::SolveFailure(format!(
                "potential {} at state {i} escapes [0,1]",
                values[i]
            )));
        }
        values[i] = values[i].clamp(0.0, 1.0);
        let mut residual = 0.0;
        for &(j, r) in chain.rates().row(i) {
            residual += r * (values[j] - values[i]);
        }
        if residual.abs() > ROUTE_TOL * (1.0 + chain.holding(i)) {
            return Err(Error::SolveFailure(format!(
                "harmonicity residual {residual} at state {i}"
            )));
        }
    }
    Ok(EquilibriumPotential {
        values: Observable::new(values),
        source: a,
        sink: b,
    })
}

// ---------------------------------------------------------------------------
// Capacity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum CapacityMethod {
    /// Dirichlet form of the exact potential, cross-checked against the
    /// escape-probability sums from both sides.
    Exact,
    /// Stratified escape-probability estimator; the payload is the 95%
    /// half-width.
    MonteCarlo { ci_half_width: f64 },
}

#[derive(Debug, Clone)]
pub struct CapacityResult {
    pub value: f64,
    /// Potential with the first set as source; absent for Monte Carlo.
    pub potential: Option<EquilibriumPotential>,
    pub method: CapacityMethod,
}

/// Escape-probability form: `sum_{eta in a} pi(eta) sum_j r(eta,j) w(j)`
/// where `w` is one on the opposite set and zero back home.
fn escape_sum(chain: &Chain, a: &[usize], w: &Observable) -> f64 {
    let mut acc = 0.0;
    for &eta in a {
        let mut p = 0.0;
        for &(j, r) in chain.rates().row(eta) {
            p += r * w[j];
        }
        acc += chain.pi()[eta] * p;
    }
    acc
}

/// Capacity between two disjoint sets, computed three independent ways
/// (Dirichlet form, escape sums from either side) which must agree.
pub fn capacity(chain: &Chain, a: &[usize], b: &[usize]) -> Result<CapacityResult> {
    let v = equilibrium_potential(chain, a, b)?;
    let w = equilibrium_potential(chain, b, a)?;
    let dirichlet = chain.dirichlet_form(v.values(), v.values())?;
    let from_a = escape_sum(chain, v.source(), w.values());
    let from_b = escape_sum(chain, w.source(), v.values());
    let scale = dirichlet.abs().max(from_a.abs()).max(from_b.abs());
    if (dirichlet - from_a).abs() > ROUTE_TOL * scale.max(1e-300)
        || (dirichlet - from_b).abs() > ROUTE_TOL * scale.max(1e-300)
    {
        return Err(Error::SolveFailure(format!(
            "capacity routes disagree: dirichlet {dirichlet}, escape {from_a} / {from_b}"
        )));
    }
    Ok(CapacityResult {
        value: dirichlet,
        potential: Some(v),
        method: CapacityMethod::Exact,
    })
}

/// Dirichlet form of a trial function pinned to the two boundary sets;
/// an upper bound for the capacity by the variational principle.  The
/// orientation (which set carries the ones) is normalized internally.
pub fn capacity_upper_bound(
    chain: &Chain,
    a: &[usize],
    b: &[usize],
    trial: &Observable,
) -> Result<f64> {
    let n = chain.n();
    let a = clean_set(n, a, "source")?;
    let b = clean_set(n, b, "sink")?;
    check_disjoint(&a, &b)?;
    if trial.len() != n {
        return Err(Error::DimensionMismatch {
            context: "trial function".into(),
            expected: n,
            got: trial.len(),
        });
    }
    let level = |set: &[usize]| -> Result<f64> {
        let first = trial[set[0]];
        for &s in set {
            if (trial[s] - first).abs() > 1e-12 {
                return Err(Error::TrialViolatesBoundary {
                    state: s,
                    value: trial[s],
                });
            }
        }
        Ok(first)
    };
    let la = level(&a)?;
    let lb = level(&b)?;
    let ok = |x: f64, target: f64| (x - target).abs() <= 1e-12;
    let valid = (ok(la, 0.0) && ok(lb, 1.0)) || (ok(la, 1.0) && ok(lb, 0.0));
    if !valid {
        return Err(Error::TrialViolatesBoundary {
            state: a[0],
            value: la,
        });
    }
    chain.dirichlet_form(trial, trial)
}

/// Stratified Monte Carlo estimate of the capacity via the escape sum:
/// trajectories per starting state proportional to its weight
/// `pi(eta) lambda(eta)`.
pub fn capacity_monte_carlo(
    chain: &Chain,
    a: &[usize],
    b: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<CapacityResult> {
    let n = chain.n();
    let a = clean_set(n, a, "source")?;
    let b = clean_set(n, b, "sink")?;
    check_disjoint(&a, &b)?;
    if n_samples < a.len() {
        return Err(Error::Parse(format!(
            "need at least one trajectory per start, got {n_samples} for {} starts",
            a.len()
        )));
    }
    let mut in_a = vec![false; n];
    let mut in_b = vec![false; n];
    for &s in &a {
        in_a[s] = true;
    }
    for &s in &b {
        in_b[s] = true;
    }
    let weights: Vec<f64> = a.iter().map(|&s| chain.pi()[s] * chain.holding(s)).collect();
    let total: f64 = weights.iter().sum();

    let jump = |state: usize, rng: &mut ChaCha8Rng| -> usize {
        let mut u = rng.gen::<f64>() * chain.holding(state);
        let row = chain.rates().row(state);
        for &(j, r) in row {
            u -= r;
            if u <= 0.0 {
                return j;
            }
        }
        row[row.len() - 1].0
    };

    let mut value = 0.0;
    let mut variance = 0.0;
    for (k, (&eta, &w)) in a.iter().zip(&weights).enumerate() {
        let shots = ((n_samples as f64 * w / total).round() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut hits = 0usize;
        for _ in 0..shots {
            let mut state = jump(eta, &mut rng);
            loop {
                if in_b[state] {
                    hits += 1;
                    break;
                }
                if in_a[state] {
                    break;
                }
                state = jump(state, &mut rng);
            }
        }
        let p = hits as f64 / shots as f64;
        value += w * p;
        variance += w * w * p * (1.0 - p) / shots as f64;
    }
    Ok(CapacityResult {
        value,
        potential: None,
        method: CapacityMethod::MonteCarlo {
            ci_half_width: 1.959_963_984_540_054 * variance.sqrt(),
        },
    })
}

// ---------------------------------------------------------------------------
// Mean jump rates between wells
// ---------------------------------------------------------------------------

/// Average rates at which the enlarged process moves between well-copy
/// sets, one number per ordered pair of wells.
#[derive(Debug, Clone)]
pub struct MeanJumpRates {
    /// `rates[x][y]`, zero on the diagonal.
    pub rates: Vec<Vec<f64>>,
    pub gamma: f64,
    pub kappa: usize,
    /// Largest relative defect of the per-well exit identity
    /// (row rate mass against the star capacity of the well).
    pub exit_identity_residual: f64,
    /// Largest relative defect of the pairwise three-capacity identity.
    pub pair_identity_residual: f64,
    /// Dirichlet row bounds: mean escape rate of each well under its
    /// conditioned measure; row sums may not exceed these.
    pub row_rate_bounds: Vec<f64>,
}

impl MeanJumpRates {
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.rates[x][y]
    }

    pub fn row_sum(&self, x: usize) -> f64 {
        self.rates[x].iter().sum()
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Mean jump rates of the gamma-enlarged trace process, by one potential
/// solve per target well, cross-validated against two star-capacity
/// identities.  The chain must already be a trace chain: every state in
/// a well.
pub fn mean_jump_rates(
    chain: &Chain,
    partition: &Partition,
    gamma: f64,
) -> Result<MeanJumpRates> {
    if !partition.delta().is_empty() {
        return Err(Error::DeltaNonempty);
    }
    if partition.n() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "partition".into(),
            expected: chain.n(),
            got: partition.n(),
        });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::NonpositiveGamma(gamma));
    }
    let kappa = partition.kappa();
    let enlarged = enlarge_chain(chain, gamma)?;
    let star_sets: Vec<Vec<usize>> = (0..kappa)
        .map(|x| enlarged.stars_of(partition.well(x)))
        .collect();

    // One solve per target well y: the potential of "reach the y-stars
    // before any other star", read off at the base states of each well.
    let mut rates = vec![vec![0.0; kappa]; kappa];
    for y in 0..kappa {
        let others: Vec<usize> = (0..kappa)
            .filter(|&z| z != y)
            .flat_map(|z| star_sets[z].iter().copied())
            .collect();
        let v = equilibrium_potential(&enlarged.chain, &star_sets[y], &others)?;
        for x in 0..kappa {
            if x == y {
                continue;
            }
            let mut acc = 0.0;
            let mut mass = 0.0;
            for &eta in partition.well(x) {
                acc += chain.pi()[eta] * v.value(eta);
                mass += chain.pi()[eta];
            }
            rates[x][y] = gamma * acc / mass;
        }
    }

    // Exit identity: half the well mass times the row sum must equal the
    // star capacity separating the well copy from all the others.
    let mut exit_residual = 0.0f64;
    for x in 0..kappa {
        let others: Vec<usize> = (0..kappa)
            .filter(|&z| z != x)
            .flat_map(|z| star_sets[z].iter().copied())
            .collect();
        let cap = capacity(&enlarged.chain, &star_sets[x], &others)?.value;
        let mass_star = 0.5 * chain.pi().mass_of(partition.well(x));
        let lhs = mass_star * rates[x].iter().sum::<f64>();
        exit_residual = exit_residual.max(relative_gap(lhs, cap));
    }

    // Pairwise identity: the rate between two wells is a half-sum of
    // three star capacities (the third term drops when only two wells).
    let mut pair_residual = 0.0f64;
    for x in 0..kappa {
        for y in 0..kappa {
            if x == y {
                continue;
            }
            let not_x: Vec<usize> = (0..kappa)
                .filter(|&z| z != x)
                .flat_map(|z| star_sets[z].iter().copied())
                .collect();
            let not_y: Vec<usize> = (0..kappa)
                .filter(|&z| z != y)
                .flat_map(|z| star_sets[z].iter().copied())
                .collect();
            let cap_x = capacity(&enlarged.chain, &star_sets[x], &not_x)?.value;
            let cap_y = capacity(&enlarged.chain, &star_sets[y], &not_y)?.value;
            let rest: Vec<usize> = (0..kappa)
                .filter(|&z| z != x && z != y)
                .flat_map(|z| star_sets[z].iter().copied())
                .collect();
            let cap_xy = if rest.is_empty() {
                0.0
            } else {
                let pair: Vec<usize> = star_sets[x]
                    .iter()
                    .chain(star_sets[y].iter())
                    .copied()
                    .collect();
                capacity(&enlarged.chain, &pair, &rest)?.value
            };
            let lhs = 0.5 * chain.pi().mass_of(partition.well(x)) * rates[x][y];
            let rhs = 0.5 * (cap_x + cap_y - cap_xy);
            pair_residual = pair_residual.max(relative_gap(lhs, rhs));
        }
    }
    if exit_residual > ROUTE_TOL || pair_residual > ROUTE_TOL {
        return Err(Error::SolveFailure(format!(
            "jump-rate identities defective: exit {exit_residual}, pair {pair_residual}"
        )));
    }

    // Dirichlet bound on each row: the mean escape rate of the well.
    let mut row_rate_bounds = Vec::with_capacity(kappa);
    for x in 0..kappa {
        let mass = chain.pi().mass_of(partition.well(x));
        let mut acc = 0.0;
        for &eta in partition.well(x) {
            let mut out = 0.0;
            for &(j, r) in chain.rates().row(eta) {
                if partition.well_of(j) != Some(x) {
                    out += r;
                }
            }
            acc += chain.pi()[eta] / mass * out;
        }
        row_rate_bounds.push(acc);
        if rates[x].iter().sum::<f64>() > acc * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::SolveFailure(format!(
                "row {x} rate sum exceeds its Dirichlet bound"
            )));
        }
    }

    Ok(MeanJumpRates {
        rates,
        gamma,
        kappa,
        exit_identity_residual: exit_residual,
        pair_identity_residual: pair_residual,
        row_rate_bounds,
    })
}

// ---------------------------------------------------------------------------
// Quasi-stationary measure
// ---------------------------------------------------------------------------

/// Principal left eigenpair of the generator killed outside a well: the
/// law of the process conditioned to stay, and the exact exponential
/// rate of the exit time started from it.
#[derive(Debug, Clone)]
pub struct QuasiStationary {
    /// Full-length measure supported on the well.
    pub measure: ProbabilityMeasure,
    pub well: Vec<usize>,
    /// Exit rate: smallest eigenvalue of the killed generator.
    pub rate: f64,
}

/// Quasi-stationary measure of a well of the given chain.  The killed
/// restriction must be connected.
pub fn quasi_stationary(chain: &Chain, well: &[usize]) -> Result<QuasiStationary> {
    let n = chain.n();
    let well = clean_set(n, well, "well")?;
    if well.len() == n {
        return Err(Error::EmptySubset("killing exterior".into()));
    }

    let (measure, rate) = if well.len() == 1 {
        let s = well[0];
        (ProbabilityMeasure::dirac(n, s), chain.holding(s))
    } else {
        let m = well.len();
        let mut local = vec![usize::MAX; n];
        for (k, &i) in well.iter().enumerate() {
            local[i] = k;
        }
        // Connectivity of the killed restriction.
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &(j, _) in chain.rates().row(well[k]) {
                if local[j] != usize::MAX && !seen[local[j]] {
                    seen[local[j]] = true;
                    stack.push(local[j]);
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::ReducibleKilledChain);
        }
        // Symmetrized killed generator: diag(pi)^1/2 (-L_well) diag(pi)^-1/2,
        // positive definite by the killing.
        let mut s = DMatrix::zeros(m, m);
        for (k, &i) in well.iter().enumerate() {
            s[(k, k)] = chain.holding(i);
            for &(j, r) in chain.rates().row(i) {
                if local[j] != usize::MAX {
                    let v = -r * (chain.pi()[i] / chain.pi()[j]).sqrt();
                    s[(k, local[j])] += 0.5 * v;
                    s[(local[j], k)] += 0.5 * v;
                }
            }
        }
        let eig = linalg::smallest_eigenpair_spd(&s)?;
        // Left eigenvector of the killed generator: sqrt(pi) times the
        // symmetric eigenvector, positive by Perron-Frobenius.
        let mut weights = vec![0.0; n];
        for (k, &i) in well.iter().enumerate() {
            weights[i] = eig.vector[k] * chain.pi()[i].sqrt();
        }
        if weights.iter().any(|&w| w < -1e-10) {
            return Err(Error::EigenFailure(
                "principal eigenvector changed sign".into(),
            ));
        }
        for w in &mut weights {
            *w = w.max(0.0);
        }
        (ProbabilityMeasure::from_weights(weights)?, eig.value)
    };

    // The exit time from the quasi-stationary start is exactly
    // exponential; certify the survival function at a few horizons.
    let (killed, klocal) = Uniformized::killed(chain, &well)?;
    let v0: Vec<f64> = klocal.iter().map(|&i| measure[i]).collect();
    for &mult in &[0.5, 1.0, 2.0] {
        let t = mult / rate;
        let survival = killed.survival(&v0, t);
        if (survival - (-rate * t).exp()).abs() > 1e-8 {
            return Err(Error::EigenFailure(format!(
                "exit law defect {} at horizon {t}",
                (survival - (-rate * t).exp()).abs()
            )));
        }
    }

    // The exit rate never exceeds the mean escape rate of the well.
    let mass = chain.pi().mass_of(&well);
    let mut mean_escape = 0.0;
    for &i in &well {
        let mut out = chain.holding(i);
        for &(j, r) in chain.rates().row(i) {
            if klocal.binary_search(&j).is_ok() {
                out -= r;
            }
        }
        mean_escape += chain.pi()[i] / mass * out;
    }
    if rate > mean_escape * (1.0 + 1e-10) {
        return Err(Error::EigenFailure(format!(
            "exit rate {rate} above the mean escape rate {mean_escape}"
        )));
    }

    Ok(QuasiStationary {
        measure,
        well,
        rate,
    })
}

// ---------------------------------------------------------------------------
// Hitting probabilities from capacities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct HittingProbability {
    /// `P_eta[H_b < H_a]`.
    pub exact: f64,
    /// Capacity-ratio upper bound, always at least `exact`.
    pub bound: f64,
    /// Value of the three-capacity identity, when well conditioned.
    pub identity: Option<f64>,
    pub ill_conditioned: bool,
}

/// `P_eta[H_b < H_a]` via the three-capacity identity, with the
/// capacity-ratio upper bound.  The identity route is cross-checked
/// against the potential solve and abandoned when its numerator loses
/// all significant digits.
pub fn hitting_prob_capacity_formula(
    chain: &Chain,
    eta: usize,
    a: &[usize],
    b: &[usize],
) -> Result<HittingProbability> {
    let n = chain.n();
    let a = clean_set(n, a, "first target")?;
    let b = clean_set(n, b, "second target")?;
    check_disjoint(&a, &b)?;
    if eta >= n || a.binary_search(&eta).is_ok() || b.binary_search(&eta).is_ok() {
        return Err(Error::StateInsideSets(eta));
    }
    let both: Vec<usize> = {
        let mut v = a.clone();
        v.extend(&b);
        v.sort_unstable();
        v
    };
    let a_eta = {
        let mut v = a.clone();
        v.push(eta);
        v.sort_unstable();
        v
    };
    let b_eta = {
        let mut v = b.clone();
        v.push(eta);
        v.sort_unstable();
        v
    };
    let cap_eta_both = capacity(chain, &[eta], &both)?.value;
    let cap_b = capacity(chain, &b, &a_eta)?.value;
    let cap_a = capacity(chain, &a, &b_eta)?.value;
    let numerator = cap_eta_both + cap_b - cap_a;
    let scale = cap_eta_both.abs().max(cap_b.abs()).max(cap_a.abs());
    let ill_conditioned = numerator.abs() < CANCELLATION_TOL * scale;

    let exact_potential = equilibrium_potential(chain, &b, &a)?.value(eta);
    let identity = if ill_conditioned {
        None
    } else {
        let value = numerator / (2.0 * cap_eta_both);
        if relative_gap(value, exact_potential) > ROUTE_TOL
            && (value - exact_potential).abs() > ROUTE_TOL
        {
            return Err(Error::SolveFailure(format!(
                "capacity identity {value} against potential {exact_potential}"
            )));
        }
        Some(value)
    };
    let bound = capacity(chain, &[eta], &b)?.value / cap_eta_both;
    if bound < exact_potential - 1e-12 {
        return Err(Error::SolveFailure(
            "capacity-ratio bound fell below the exact probability".into(),
        ));
    }
    Ok(HittingProbability {
        exact: exact_potential,
        bound,
        identity,
        ill_conditioned,
    })
}

// ---------------------------------------------------------------------------
// Short-horizon escape bounds
// ---------------------------------------------------------------------------

/// Escape-probability bounds for one well over the horizon `1/gamma`,
/// each paired with the exact semigroup value it must dominate (or
/// undercut, for the lower bounds).
#[derive(Debug, Clone)]
pub struct EscapeBounds {
    pub well: usize,
    pub gamma: f64,
    /// Equilibrium potential of the enlarged trace chain at each well
    /// state (parent indexing).
    pub w_star: Vec<(usize, f64)>,
    /// Exact `P_nu[H_exit <= 1/gamma]`.
    pub exact: f64,
    /// `e E_nu[W*]`, an upper bound for `exact`.
    pub upper_potential: f64,
    /// For each grid value A: (A, lower bound, exact at `A/gamma`).
    pub lower_grid: Vec<(f64, f64, f64)>,
    /// Schwarz-capacity upper bound for `exact`.
    pub upper_schwarz: f64,
    /// Per well state: (state, capacity-ratio bound, exact from that
    /// state); the bound dominates pointwise.
    pub per_state: Vec<(usize, f64, f64)>,
}

const LOWER_GRID: [f64; 3] = [1.0, 2.0, 4.0];

/// Computes the escape bounds of a well: the potential bound, its lower
/// bracket on a grid, the Schwarz-capacity bound, and the per-state
/// capacity-ratio bound, each verified against the exact killed
/// semigroup probability.
pub fn escape_bounds(
    chain: &Chain,
    partition: &Partition,
    x: usize,
    gamma: f64,
    nu: &ProbabilityMeasure,
) -> Result<EscapeBounds> {
    if x >= partition.kappa() {
        return Err(Error::BadPartition(format!("no well {x}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::NonpositiveGamma(gamma));
    }
    if nu.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "starting measure".into(),
            expected: chain.n(),
            got: nu.len(),
        });
    }
    let off_mass = 1.0 - nu.mass_of(partition.well(x));
    if off_mass > 1e-12 {
        return Err(Error::MeasureOffWell {
            well: x,
            mass: off_mass,
        });
    }

    let traced = partition.traced_states();
    let (trace, kept) = trace_chain(chain, &traced)?;
    let mut local = vec![usize::MAX; chain.n()];
    for (k, &i) in kept.iter().enumerate() {
        local[i] = k;
    }
    let well_local: Vec<usize> = partition.well(x).iter().map(|&i| local[i]).collect();
    let others_local: Vec<usize> = (0..trace.n())
        .filter(|&k| partition.well_of(kept[k]) != Some(x))
        .collect();
    let nu_local: Vec<f64> = kept.iter().map(|&i| nu[i]).collect();

    // Exact escape probabilities through the killed trace semigroup.
    let (killed, klocal) = Uniformized::killed(&trace, &well_local)?;
    let v0: Vec<f64> = klocal.iter().map(|&k| nu_local[k]).collect();
    let escape_by = |t: f64| -> f64 { 1.0 - killed.survival(&v0, t) };
    let exact = escape_by(1.0 / gamma);

    // Full enlargement of the trace chain: the potential of "leave the
    // well before the well's own star rings".
    let enlarged = enlarge_chain(&trace, gamma)?;
    let well_stars = enlarged.stars_of(&well_local);
    let mut source: Vec<usize> = others_local.clone();
    source.extend(enlarged.stars_of(&others_local));
    let w = equilibrium_potential(&enlarged.chain, &source, &well_stars)?;
    let w_star: Vec<(usize, f64)> = well_local
        .iter()
        .map(|&k| (kept[k], w.value(k)))
        .collect();
    let mean_w: f64 = well_local.iter().map(|&k| nu_local[k] * w.value(k)).sum();

    let upper_potential = std::f64::consts::E * mean_w;
    if exact > upper_potential + 1e-12 {
        return Err(Error::SolveFailure(format!(
            "potential bound {upper_potential} below the exact probability {exact}"
        )));
    }
    let lower_grid: Vec<(f64, f64, f64)> = LOWER_GRID
        .iter()
        .map(|&a| {
            let lower = mean_w - (-a).exp() / (1.0 - (-a).exp());
            let value = escape_by(a / gamma);
            (a, lower, value)
        })
        .collect();
    for &(a, lower, value) in &lower_grid {
        if lower > value + 1e-12 {
            return Err(Error::SolveFailure(format!(
                "lower bracket {lower} above the exact probability {value} at A = {a}"
            )));
        }
    }

    // Schwarz route: L2 norm of the starting density against the star
    // capacity separating the well copy from the other wells.
    let cap_star = capacity(&enlarged.chain, &well_stars, &others_local)?.value;
    let density: f64 = well_local
        .iter()
        .map(|&k| {
            let p = trace.pi()[k];
            nu_local[k] * nu_local[k] / p
        })
        .sum();
    let e = std::f64::consts::E;
    let upper_schwarz = e * (2.0 / gamma * density * cap_star).sqrt();
    if exact > upper_schwarz + 1e-12 {
        return Err(Error::SolveFailure(format!(
            "Schwarz bound {upper_schwarz} below the exact probability {exact}"
        )));
    }

    // Per-state capacity ratio: plain capacity on the original chain
    // against the partially enlarged one, on the paper's common scale.
    let part_enlarged = enlarge_at(chain, &traced, gamma)?;
    let scale = (1.0 + chain.pi().mass_of(&traced)) / 2.0;
    let well_stars_parent: Vec<usize> = partition
        .well(x)
        .iter()
        .map(|&i| part_enlarged.star(i).expect("well states are starred"))
        .collect();
    let others_parent: Vec<usize> = (0..partition.kappa())
        .filter(|&z| z != x)
        .flat_map(|z| partition.well(z).iter().copied())
        .collect();
    let mut per_state = Vec::with_capacity(well_local.len());
    for &k in &well_local {
        let eta = kept[k];
        let cap_plain = capacity(chain, &[eta], &others_parent)?.value;
        let cap_starred =
            scale * capacity(&part_enlarged.chain, &[eta], &well_stars_parent)?.value;
        let bound = e * cap_plain / (2.0 * cap_starred);
        let mut dirac = vec![0.0; killed.n()];
        let pos = klocal.binary_search(&k).expect("well state is kept");
        dirac[pos] = 1.0;
        let value = 1.0 - killed.survival(&dirac, 1.0 / gamma);
        if value > bound + 1e-12 {
            return Err(Error::SolveFailure(format!(
                "capacity-ratio bound {bound} below the exact probability {value} at state {eta}"
            )));
        }
        per_state.push((eta, bound, value));
    }

    Ok(EscapeBounds {
        well: x,
        gamma,
        w_star,
        exact,
        upper_potential,
        lower_grid,
        upper_schwarz,
        per_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death, random_reversible, two_state};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn gamblers_ruin_on_path() {
        let c = birth_death(3, 1.0, 1.0).unwrap();
        let v = equilibrium_potential(&c, &[0], &[2]).unwrap();
        assert_relative_eq!(v.value(0), 1.0);
        assert_relative_eq!(v.value(1), 0.5, max_relative = 1e-12);
        assert_relative_eq!(v.value(2), 0.0);
    }

    #[test]
    fn full_boundary_is_indicator() {
        let c = birth_death(4, 1.0, 2.0).unwrap();
        let v = equilibrium_potential(&c, &[0, 2], &[1, 3]).unwrap();
        assert_eq!(
            v.values().as_slice(),
            &[1.0, 0.0, 1.0, 0.0],
            "no interior, no solve"
        );
    }

    #[test]
    fn potential_matches_monte_carlo() {
        let c = random_reversible(10, 21, 0.35).unwrap();
        let v = equilibrium_potential(&c, &[0], &[9]).unwrap();
        // Embedded-chain walks from state 4 until one target absorbs.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut hits = 0;
        for _ in 0..n {
            let mut s = 4usize;
            loop {
                let mut u = rng.gen::<f64>() * c.holding(s);
                let row = c.rates().row(s);
                let mut next = row[row.len() - 1].0;
                for &(j, r) in row {
                    u -= r;
                    if u <= 0.0 {
                        next = j;
                        break;
                    }
                }
                s = next;
                if s == 0 || s == 9 {
                    break;
                }
            }
            if s == 0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let sigma = (v.value(4) * (1.0 - v.value(4)) / n as f64).sqrt();
        assert!((p - v.value(4)).abs() < 3.0 * sigma + 1e-3);
    }

    #[test]
    fn maximum_principle_on_random_chain() {
        let c = random_reversible(25, 4, 0.2).unwrap();
        let v = equilibrium_potential(&c, &[0, 1], &[20, 24]).unwrap();
        for i in 2..20 {
            let row = c.rates().row(i);
            let lo = row.iter().map(|&(j, _)| v.value(j)).fold(f64::MAX, f64::min);
            let hi = row.iter().map(|&(j, _)| v.value(j)).fold(f64::MIN, f64::max);
            assert!(v.value(i) >= lo - 1e-12 && v.value(i) <= hi + 1e-12);
        }
    }

    #[test]
    fn path_capacity_is_series_conductance() {
        let c = birth_death(3, 1.0, 1.0).unwrap();
        let cap = capacity(&c, &[0], &[2]).unwrap();
        assert_relative_eq!(cap.value, 1.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn two_state_capacity_closed_form() {
        let (a, b) = (0.7, 2.3);
        let c = two_state(a, b).unwrap();
        let cap = capacity(&c, &[0], &[1]).unwrap();
        assert_relative_eq!(cap.value, a * b / (a + b), max_relative = 1e-12);
    }

    #[test]
    fn capacity_is_symmetric() {
        let c = random_reversible(20, 8, 0.25).unwrap();
        let ab = capacity(&c, &[0, 3], &[10, 11, 17]).unwrap().value;
        let ba = capacity(&c, &[10, 11, 17], &[0, 3]).unwrap().value;
        assert_relative_eq!(ab, ba, max_relative = 1e-12);
    }

    #[test]
    fn trial_equal_to_potential_is_sharp() {
        let c = random_reversible(15, 3, 0.3).unwrap();
        let cap = capacity(&c, &[0], &[14]).unwrap();
        let v = cap.potential.as_ref().unwrap();
        let bound = capacity_upper_bound(&c, &[0], &[14], v.values()).unwrap();
        assert_relative_eq!(bound, cap.value, max_relative = 1e-10);
    }

    #[test]
    fn trial_boundary_violation_is_rejected() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let trial = Observable::new(vec![0.0, 0.3, 0.9, 0.8]);
        match capacity_upper_bound(&c, &[0], &[3], &trial) {
            Err(Error::TrialViolatesBoundary { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_capacity_covers_exact() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let exact = capacity(&c, &[0], &[3]).unwrap().value;
        let mc = capacity_monte_carlo(&c, &[0], &[3], 20_000, 12).unwrap();
        let ci = match mc.method {
            CapacityMethod::MonteCarlo { ci_half_width } => ci_half_width,
            _ => unreachable!(),
        };
        assert!(
            (mc.value - exact).abs() < 1.6 * ci + 1e-4,
            "mc {} vs exact {exact} (ci {ci})",
            mc.value
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn capacity_monotone_and_bounded_by_trials(seed in 0u64..5_000) {
            let c = random_reversible(12, seed, 0.3).unwrap();
            let small = capacity(&c, &[0], &[6, 7]).unwrap().value;
            let large = capacity(&c, &[0, 1], &[6, 7]).unwrap().value;
            prop_assert!(small <= large + 1e-12);

            // Any interpolation pinned to the boundary dominates.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let mut trial = vec![0.0; 12];
            for t in trial.iter_mut() {
                *t = rng.gen::<f64>();
            }
            trial[0] = 0.0;
            trial[6] = 1.0;
            trial[7] = 1.0;
            let bound =
                capacity_upper_bound(&c, &[0], &[6, 7], &Observable::new(trial)).unwrap();
            prop_assert!(bound >= small - 1e-12);
        }
    }

    #[test]
    fn star_capacity_escape_identity() {
        // The capacity between well-copy unions equals the half-weighted
        // escape sum over base states, evaluated independently.
        let c = random_reversible(12, 31, 0.4).unwrap();
        let part = Partition::new(12, vec![(0..6).collect(), (6..12).collect()]).unwrap();
        let gamma = 1.3;
        let e = enlarge_chain(&c, gamma).unwrap();
        let stars0 = e.stars_of(part.well(0));
        let stars1 = e.stars_of(part.well(1));
        let lhs = capacity(&e.chain, &stars0, &stars1).unwrap().value;
        let v = equilibrium_potential(&e.chain, &stars1, &stars0).unwrap();
        let rhs = 0.5
            * gamma
            * part
                .well(0)
                .iter()
                .map(|&eta| c.pi()[eta] * v.value(eta))
                .sum::<f64>();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn jump_rates_symmetric_two_well_chain() {
        // Mirror-symmetric ladder: both wells see the same landscape.
        let c = birth_death(6, 1.0, 1.0).unwrap();
        let part = Partition::new(6, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let r = mean_jump_rates(&c, &part, 0.8).unwrap();
        assert_relative_eq!(r.rate(0, 1), r.rate(1, 0), max_relative = 1e-10);
        assert!(r.exit_identity_residual <= 1e-10);
        assert!(r.pair_identity_residual <= 1e-10);
        assert!(r.row_sum(0) <= r.row_rate_bounds[0] + 1e-12);
    }

    #[test]
    fn jump_rate_identities_three_wells() {
        let c = random_reversible(18, 77, 0.3).unwrap();
        let part = Partition::new(
            18,
            vec![(0..6).collect(), (6..12).collect(), (12..18).collect()],
        )
        .unwrap();
        let r = mean_jump_rates(&c, &part, 2.0).unwrap();
        assert!(r.exit_identity_residual <= 1e-10, "{}", r.exit_identity_residual);
        assert!(r.pair_identity_residual <= 1e-10, "{}", r.pair_identity_residual);
        for x in 0..3 {
            assert!(r.row_sum(x) <= r.row_rate_bounds[x] + 1e-12);
            for y in 0..3 {
                if x != y {
                    assert!(r.rate(x, y) > 0.0);
                }
            }
        }
    }

    #[test]
    fn jump_rates_require_traced_partition() {
        let c = birth_death(5, 1.0, 1.0).unwrap();
        let part = Partition::new(5, vec![vec![0, 1], vec![3, 4]]).unwrap();
        match mean_jump_rates(&c, &part, 1.0) {
            Err(Error::DeltaNonempty) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mean_escape_rate_is_capacity_over_mass() {
        // Conditioned mean escape rate of a well equals the capacity to
        // the other wells over the well mass, on the trace chain.
        let c = random_reversible(16, 5, 0.35).unwrap();
        let wells = vec![(0..5).collect::<Vec<_>>(), (8..13).collect::<Vec<_>>()];
        let part = Partition::new(16, wells).unwrap();
        let traced = part.traced_states();
        let (trace, kept) = trace_chain(&c, &traced).unwrap();
        let well0_local: Vec<usize> = (0..trace.n())
            .filter(|&k| part.well_of(kept[k]) == Some(0))
            .collect();
        let mass: f64 = well0_local.iter().map(|&k| trace.pi()[k]).sum();
        let mut lhs = 0.0;
        for &k in &well0_local {
            let mut out = 0.0;
            for &(j, r) in trace.rates().row(k) {
                if part.well_of(kept[j]) != Some(0) {
                    out += r;
                }
            }
            lhs += trace.pi()[k] / mass * out;
        }
        let rhs = capacity(&c, part.well(0), part.well(1)).unwrap().value
            / c.pi().mass_of(part.well(0));
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn quasi_stationary_single_state_well() {
        let c = birth_death(4, 2.0, 1.0).unwrap();
        let q = quasi_stationary(&c, &[0]).unwrap();
        assert_relative_eq!(q.rate, c.holding(0), max_relative = 1e-12);
        assert_eq!(q.measure[0], 1.0);
    }

    #[test]
    fn quasi_stationary_two_state_well_closed_form() {
        // Killed 2x2 generator [[a+e1, -a], [-b, b+e2]]: the exit rate is
        // the smaller root of the characteristic quadratic.
        let c = birth_death(4, 1.5, 0.5).unwrap();
        let q = quasi_stationary(&c, &[0, 1]).unwrap();
        // Killed block: states 0,1; holding 1.5 and 2.0; coupling 1.5/0.5.
        let (h0, h1, up, down): (f64, f64, f64, f64) = (1.5, 2.0, 1.5, 0.5);
        let tr = h0 + h1;
        let det = h0 * h1 - up * down;
        let lambda = (tr - (tr * tr - 4.0 * det).sqrt()) / 2.0;
        assert_relative_eq!(q.rate, lambda, max_relative = 1e-10);
        assert!(q.measure[0] > 0.0 && q.measure[1] > 0.0);
        assert_relative_eq!(q.measure[0] + q.measure[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn quasi_stationary_rejects_disconnected_well() {
        let c = birth_death(5, 1.0, 1.0).unwrap();
        match quasi_stationary(&c, &[0, 4]) {
            Err(Error::ReducibleKilledChain) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hitting_prob_symmetric_path() {
        let c = birth_death(5, 1.0, 1.0).unwrap();
        let h = hitting_prob_capacity_formula(&c, 2, &[0], &[4]).unwrap();
        assert_relative_eq!(h.exact, 0.5, max_relative = 1e-10);
        assert!(h.bound >= 0.5 - 1e-12);
        if let Some(v) = h.identity {
            assert_relative_eq!(v, 0.5, max_relative = 1e-9);
        }
    }

    #[test]
    fn hitting_prob_identity_random_chains() {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let c = random_reversible(14, 100 + seed, 0.3).unwrap();
            for (eta, a, b) in [(2usize, [0usize, 1], [12usize, 13]), (7, [0, 3], [10, 13])]
            {
                let h = hitting_prob_capacity_formula(&c, eta, &a, &b).unwrap();
                let v = equilibrium_potential(&c, &b, &a).unwrap().value(eta);
                if let Some(id) = h.identity {
                    worst = worst.max((id - v).abs());
                }
                assert!(h.bound >= h.exact - 1e-12);
            }
        }
        assert!(worst <= 1e-10, "worst identity defect {worst}");
    }

    #[test]
    fn hitting_prob_rejects_state_in_sets() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        match hitting_prob_capacity_formula(&c, 0, &[0], &[3]) {
            Err(Error::StateInsideSets(0)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn escape_bounds_bracket_exact_probability() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let part = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let nu = ProbabilityMeasure::from_weights(vec![0.6, 0.4, 0.0, 0.0]).unwrap();
        let rep = escape_bounds(&c, &part, 0, 2.0, &nu).unwrap();
        assert!(rep.exact > 0.0 && rep.exact < 1.0);
        assert!(rep.upper_potential >= rep.exact);
        assert!(rep.upper_schwarz >= rep.exact);
        for &(_, lower, value) in &rep.lower_grid {
            assert!(lower <= value + 1e-12);
        }
        for &(_, bound, value) in &rep.per_state {
            assert!(bound >= value - 1e-12);
        }
        assert_eq!(rep.w_star.len(), 2);
    }

    #[test]
    fn escape_bounds_with_passage_states() {
        // Nonempty passage: bounds work through the trace chain.
        let c = birth_death(6, 1.0, 1.3).unwrap();
        let part = Partition::new(6, vec![vec![0, 1], vec![4, 5]]).unwrap();
        let qsd = quasi_stationary(&c, &[0, 1]).unwrap();
        let rep = escape_bounds(&c, &part, 0, 1.5, &qsd.measure).unwrap();
        assert!(rep.upper_potential >= rep.exact);
        assert!(rep.upper_schwarz >= rep.exact);
    }

    #[test]
    fn escape_bounds_reject_misplaced_measure() {
        let c = birth_death(4, 1.0, 1.0).unwrap();
        let part = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let nu = ProbabilityMeasure::dirac(4, 3);
        match escape_bounds(&c, &part, 0, 1.0, &nu) {
            Err(Error::MeasureOffWell { well: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
