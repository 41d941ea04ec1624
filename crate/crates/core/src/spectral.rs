//! Spectral gaps and eigenfunctions, the trace-gap sandwich with its
//! capacity upper bound, harmonic extensions, worst-case mixing
//! profiles, and H-1 norms.

use rayon::prelude::*;

use crate::chain::{Chain, Observable};
use crate::error::{Error, Result};
use crate::linalg;
use crate::potential::{capacity, clean_set};
use crate::semigroup::Uniformized;
use crate::transforms::{reflect_chain, trace_chain, Partition};

const NORM_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;

/// Geometric mixing grid: first positive time `GRID_START / gap`,
/// successive ratio `GRID_RATIO`, at most `GRID_MAX_POINTS` points.
const GRID_START: f64 = 0.01;
const GRID_RATIO: f64 = 1.25;
const GRID_MAX_POINTS: usize = 500;

// ---------------------------------------------------------------------------
// Spectral gap
// ---------------------------------------------------------------------------

/// Smallest nonzero eigenvalue of the negated generator with its
/// eigenfunction, centered and normalized in `L2(pi)`.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub gap: f64,
    pub eigenfunction: Observable,
    /// `pi`-weighted norm of `L f + gap f`.
    pub residual: f64,
}

pub fn spectral_gap(chain: &Chain) -> Result<SpectralResult> {
    let sym = linalg::symmetrized(chain);
    if sym.asymmetry > 1e-12 {
        return Err(Error::EigenFailure(format!(
            "symmetrized generator has relative asymmetry {}",
            sym.asymmetry
        )));
    }
    let eig = linalg::gap_eigenpair(&sym.matrix, &sym.null_vector)?;
    let n = chain.n();
    let mut f: Vec<f64> = (0..n)
        .map(|i| eig.vector[i] / chain.pi()[i].sqrt())
        .collect();
    // The unit symmetric eigenvector maps back to a centered, normalized
    // eigenfunction; re-center and re-scale to squash rounding.
    let f_obs = Observable::new(f.clone());
    let mean = chain.pi_mean(&f_obs);
    for v in &mut f {
        *v -= mean;
    }
    let sq: f64 = f
        .iter()
        .zip(chain.pi().as_slice())
        .map(|(v, p)| p * v * v)
        .sum();
    let scale = sq.sqrt();
    if !(scale > 0.0) {
        return Err(Error::EigenFailure("eigenfunction collapsed to zero".into()));
    }
    for v in &mut f {
        *v /= scale;
    }
    // Fix the sign: largest-magnitude component positive.
    let lead = (0..n)
        .max_by(|&i, &j| f[i].abs().total_cmp(&f[j].abs()))
        .unwrap();
    if f[lead] < 0.0 {
        for v in &mut f {
            *v = -*v;
        }
    }
    let f = Observable::new(f);
    debug_assert!(chain.pi_mean(&f).abs() <= NORM_TOL);
    debug_assert!((chain.pi_dot(&f, &f) - 1.0).abs() <= NORM_TOL);

    let lf = chain.apply_generator(&f)?;
    let residual = (0..n)
        .map(|i| {
            let r = lf[i] + eig.value * f[i];
            chain.pi()[i] * r * r
        })
        .sum::<f64>()
        .sqrt();
    if residual > RESIDUAL_TOL {
        return Err(Error::EigenFailure(format!(
            "eigenpair residual {residual} exceeds {RESIDUAL_TOL}"
        )));
    }
    Ok(SpectralResult {
        gap: eig.value,
        eigenfunction: f,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Trace-gap sandwich
// ---------------------------------------------------------------------------

/// Two-sided comparison of the chain's gap with the gap of its trace on
/// a subset: the trace gap dominates, and dominates at most by the
/// eigenfunction mass the subset misses.
#[derive(Debug, Clone)]
pub struct GapSandwich {
    pub gap: f64,
    pub trace_gap: f64,
    /// `1 - pi(E)^{-1} E_pi[f^2 1_{E^c}]` for the full-chain
    /// eigenfunction `f`.
    pub correction: f64,
    /// `gap - trace_gap * correction`, nonnegative up to tolerance.
    pub lower_slack: f64,
    /// `trace_gap - gap`, nonnegative up to tolerance.
    pub upper_slack: f64,
}

pub fn gap_sandwich(chain: &Chain, subset: &[usize]) -> Result<GapSandwich> {
    let subset = clean_set(chain.n(), subset, "trace subset")?;
    let full = spectral_gap(chain)?;
    let (trace, _) = trace_chain(chain, &subset)?;
    let traced = spectral_gap(&trace)?;

    let mut inside = vec![false; chain.n()];
    for &s in &subset {
        inside[s] = true;
    }
    let f = &full.eigenfunction;
    let outside_mass: f64 = (0..chain.n())
        .filter(|&i| !inside[i])
        .map(|i| chain.pi()[i] * f[i] * f[i])
        .sum();
    let correction = 1.0 - outside_mass / chain.pi().mass_of(&subset);

    let lower_slack = full.gap - traced.gap * correction;
    let upper_slack = traced.gap - full.gap;
    if lower_slack < -NORM_TOL || upper_slack < -NORM_TOL {
        return Err(Error::EigenFailure(format!(
            "gap sandwich violated: gap {}, trace gap {}, correction {correction}",
            full.gap, traced.gap
        )));
    }
    Ok(GapSandwich {
        gap: full.gap,
        trace_gap: traced.gap,
        correction,
        lower_slack,
        upper_slack,
    })
}

/// Variational upper bound for the spectral gap from a two-block split:
/// the indicator of `a` as test function gives
/// `Cap(a, a^c) / (pi(a) pi(a^c))`.
pub fn gap_upper_bound_capacity(chain: &Chain, a: &[usize]) -> Result<f64> {
    let n = chain.n();
    let a = clean_set(n, a, "split block")?;
    if a.len() == n {
        return Err(Error::BadSplit(
            "split block covers the whole space".into(),
        ));
    }
    let mut inside = vec![false; n];
    for &s in &a {
        inside[s] = true;
    }
    let b: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
    let cap = capacity(chain, &a, &b)?.value;
    let pa = chain.pi().mass_of(&a);
    Ok(cap / (pa * (1.0 - pa)))
}

// ---------------------------------------------------------------------------
// Harmonic extension
// ---------------------------------------------------------------------------

/// Extends `f`, given on an ascending `subset`, to the whole space by
/// the hitting-distribution average, i.e. harmonically.  The Dirichlet
/// form of the extension equals `pi(subset)` times the trace-chain
/// Dirichlet form of `f`, and no other extension does better; both
/// facts are verified before returning.
pub fn harmonic_extension(chain: &Chain, subset: &[usize], f: &[f64]) -> Result<Observable> {
    let n = chain.n();
    let subset_clean = clean_set(n, subset, "extension subset")?;
    if subset_clean.len() != subset.len() || subset_clean != subset {
        return Err(Error::Parse(
            "extension subset must be strictly increasing".into(),
        ));
    }
    if f.len() != subset.len() {
        return Err(Error::DimensionMismatch {
            context: "boundary values".into(),
            expected: subset.len(),
            got: f.len(),
        });
    }
    let mut boundary = vec![None; n];
    for (k, &s) in subset.iter().enumerate() {
        boundary[s] = Some(f[k]);
    }
    let interior: Vec<usize> = (0..n).filter(|&i| boundary[i].is_none()).collect();

    let mut values = vec![0.0; n];
    for (k, &s) in subset.iter().enumerate() {
        values[s] = f[k];
    }
    if !interior.is_empty() {
        let m = interior.len();
        let mut local = vec![usize::MAX; n];
        for (k, &i) in interior.iter().enumerate() {
            local[i] = k;
        }
        let mut mat = nalgebra::DMatrix::zeros(m, m);
        let mut rhs = nalgebra::DVector::zeros(m);
        for (k, &i) in interior.iter().enumerate() {
            mat[(k, k)] = chain.holding(i);
            for &(j, r) in chain.rates().row(i) {
                match boundary[j] {
                    None => mat[(k, local[j])] -= r,
                    Some(v) => rhs[k] += r * v,
                }
            }
        }
        let sol = linalg::solve(mat, rhs)?;
        for (k, &i) in interior.iter().enumerate() {
            values[i] = sol[k];
        }
    }
    let extension = Observable::new(values);

    // Dirichlet identity against the trace chain.
    let lhs = chain.dirichlet_form(&extension, &extension)?;
    let (trace, kept) = trace_chain(chain, subset)?;
    let f_trace = Observable::new(kept.iter().map(|&i| extension[i]).collect());
    let rhs = chain.pi().mass_of(subset) * trace.dirichlet_form(&f_trace, &f_trace)?;
    if (lhs - rhs).abs() > NORM_TOL * lhs.abs().max(rhs.abs()).max(1.0) {
        return Err(Error::SolveFailure(format!(
            "harmonic extension identity defective: {lhs} against {rhs}"
        )));
    }
    // Minimality: nudging one interior value may not lower the form.
    if let Some(&probe) = interior.first() {
        let span = extension
            .as_slice()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut bumped = extension.clone();
        bumped.as_mut_slice()[probe] += 0.1 * (1.0 + span);
        let d = chain.dirichlet_form(&bumped, &bumped)?;
        if d < lhs - NORM_TOL * lhs.abs().max(1.0) {
            return Err(Error::SolveFailure(
                "perturbed extension undercut the harmonic one".into(),
            ));
        }
    }
    Ok(extension)
}

// ---------------------------------------------------------------------------
// Mixing profile
// ---------------------------------------------------------------------------

/// Worst-case total-variation distance to stationarity on a time grid.
#[derive(Debug, Clone)]
pub struct MixingProfile {
    pub times: Vec<f64>,
    /// `d(t) = max_eta || delta_eta S(t) - pi ||_TV`, nonincreasing.
    pub distances: Vec<f64>,
}

impl MixingProfile {
    /// First grid time with `d(t) <= eps`.
    pub fn t_mix(&self, eps: f64) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.distances)
            .find(|&(_, &d)| d <= eps)
            .map(|(&t, _)| t)
    }
}

/// Worst-case TV distances at the given ascending times, by evolving
/// all Dirac rows through the uniformized semigroup.  Row maxima are
/// reduced in state order for reproducibility.
pub fn worst_case_tv(chain: &Chain, times: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::Parse("empty time grid".into()));
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Parse("time grid must be strictly increasing".into()));
        }
    }
    if !(times[0] >= 0.0) || !times[times.len() - 1].is_finite() {
        return Err(Error::Parse("time grid must be finite and nonnegative".into()));
    }
    let n = chain.n();
    let semi = Uniformized::new(chain);
    let mut m = nalgebra::DMatrix::identity(n, n);
    let mut out = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in times {
        if t > prev {
            semi.evolve_matrix(&mut m, t - prev);
            prev = t;
        }
        let row_tv: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += (m[(i, j)] - chain.pi()[j]).abs();
                }
                0.5 * acc
            })
            .collect();
        out.push(row_tv.into_iter().fold(0.0, f64::max));
    }
    Ok(out)
}

/// Mixing profile on a geometric grid, extended until the distance
/// drops below every requested threshold.  The quarter-mixing time is
/// checked against the gap-entropy bound before returning.
pub fn mixing_profile(chain: &Chain, epsilons: &[f64]) -> Result<MixingProfile> {
    if epsilons.is_empty() {
        return Err(Error::Parse("no thresholds given".into()));
    }
    let mut target = f64::MAX;
    for &e in epsilons {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Parse(format!("threshold must be positive, got {e}")));
        }
        target = target.min(e);
    }
    target = target.min(0.25);

    let gap = spectral_gap(chain)?.gap;
    let n = chain.n();
    let semi = Uniformized::new(chain);
    let mut m = nalgebra::DMatrix::identity(n, n);
    let mut times = vec![0.0];
    let mut prev = 0.0;
    let tv_of = |m: &nalgebra::DMatrix<f64>| -> f64 {
        let row_tv: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += (m[(i, j)] - chain.pi()[j]).abs();
                }
                0.5 * acc
            })
            .collect();
        row_tv.into_iter().fold(0.0, f64::max)
    };
    let mut distances = vec![tv_of(&m)];
    let mut next = GRID_START / gap;
    while *distances.last().unwrap() > target {
        if times.len() >= GRID_MAX_POINTS {
            return Err(Error::GridTooCoarse {
                max_points: GRID_MAX_POINTS,
            });
        }
        semi.evolve_matrix(&mut m, next - prev);
        prev = next;
        times.push(next);
        let d = tv_of(&m);
        if d > distances.last().unwrap() + NORM_TOL {
            return Err(Error::SolveFailure(format!(
                "TV distance increased along the grid at t = {next}"
            )));
        }
        distances.push(d);
        next *= GRID_RATIO;
    }

    let profile = MixingProfile { times, distances };
    let min_pi = chain
        .pi()
        .as_slice()
        .iter()
        .fold(f64::MAX, |m, &p| m.min(p));
    let entropy_bound = (4.0 / min_pi).ln() / gap;
    let quarter = profile
        .t_mix(0.25)
        .expect("grid extends past the quarter threshold");
    if quarter > entropy_bound + 1e-9 {
        return Err(Error::SolveFailure(format!(
            "quarter mixing time {quarter} above the gap-entropy bound {entropy_bound}"
        )));
    }
    Ok(profile)
}

// ---------------------------------------------------------------------------
// H-1 norms
// ---------------------------------------------------------------------------

/// Squared H-1 norm `<f, (-L)^+ f>_pi` of a mean-zero observable,
/// checked against the spectral-gap bound `gap^{-1} <f, f>_pi`.
pub fn hminus1_norm(chain: &Chain, f: &Observable) -> Result<f64> {
    if f.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "H-1 argument".into(),
            expected: chain.n(),
            got: f.len(),
        });
    }
    let mean = chain.pi_mean(f);
    if mean.abs() > NORM_TOL {
        return Err(Error::NonzeroMean(mean));
    }
    let u = Observable::new(linalg::pseudo_inverse_apply(chain, f.as_slice())?);
    let norm_sq = chain.pi_dot(f, &u);
    if norm_sq < -NORM_TOL {
        return Err(Error::SolveFailure(format!(
            "negative squared H-1 norm {norm_sq}"
        )));
    }
    let gap = spectral_gap(chain)?.gap;
    let l2 = chain.pi_dot(f, f);
    if norm_sq > l2 / gap + NORM_TOL * l2.max(1.0) {
        return Err(Error::SolveFailure(format!(
            "H-1 norm {norm_sq} above the spectral bound {}",
            l2 / gap
        )));
    }
    Ok(norm_sq.max(0.0))
}

/// Squared H-1 norms of `f` inside each well, taken against the
/// reflected chains; `f` must be mean zero under every conditioned
/// well measure.  The wells must cover the space.
pub fn hminus1_norms_by_well(
    chain: &Chain,
    partition: &Partition,
    f: &Observable,
) -> Result<Vec<f64>> {
    if !partition.delta().is_empty() {
        return Err(Error::DeltaNonempty);
    }
    if partition.n() != chain.n() || f.len() != chain.n() {
        return Err(Error::DimensionMismatch {
            context: "per-well H-1 arguments".into(),
            expected: chain.n(),
            got: partition.n().min(f.len()),
        });
    }
    let mut out = Vec::with_capacity(partition.kappa());
    for x in 0..partition.kappa() {
        let (reflected, kept) = reflect_chain(chain, partition.well(x))?;
        let f_local = Observable::new(kept.iter().map(|&i| f[i]).collect());
        out.push(hminus1_norm(&reflected, &f_local)?);
    }
    Ok(out)
}
