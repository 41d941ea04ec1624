//! State-space surgery: partitions into wells, trace chains, reflected
//! chains, and star enlargements.
//!
//! The trace chain watches the process only while it visits a subset and
//! excises the excursions; its jump rates are the exit rates weighted by
//! where the excursion re-enters.  Reflection keeps only internal jumps of a
//! well.  Enlargement attaches a starred copy of each state, linked at a
//! fixed rate, which turns sojourn-time questions into potential-theoretic
//! ones.  All three constructions certify reversibility of the result
//! against the measure they are supposed to preserve.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::chain::{Chain, ChainOptions, ProbabilityMeasure, RateMatrix, StateSpace};
use crate::error::{Error, Result};
use crate::linalg;
use crate::simulate::Trajectory;

/// Relative threshold below which reconstructed trace rates are treated as
/// solver noise and dropped (pairwise, to keep the support symmetric).
const TRACE_DROP_REL: f64 = 1e-14;

/// Partition of a state space into disjoint labelled wells plus an implicit
/// separating set.
#[derive(Debug, Clone)]
pub struct Partition {
    n: usize,
    wells: Vec<Vec<usize>>,
    delta: Vec<usize>,
    membership: Vec<Option<usize>>,
}

impl Partition {
    /// Builds a partition from well index sets.  Wells must be nonempty,
    /// disjoint and within range; whatever they do not cover is the
    /// separating set.
    pub fn new(n: usize, wells: Vec<Vec<usize>>) -> Result<Partition> {
        if wells.is_empty() {
            return Err(Error::BadPartition("no wells given".into()));
        }
        let mut membership: Vec<Option<usize>> = vec![None; n];
        let mut cleaned = Vec::with_capacity(wells.len());
        for (x, well) in wells.into_iter().enumerate() {
            if well.is_empty() {
                return Err(Error::BadPartition(format!("well {x} is empty")));
            }
            let mut w = well;
            w.sort_unstable();
            w.dedup();
            for &i in &w {
                if i >= n {
                    return Err(Error::BadPartition(format!(
                        "well {x} references state {i} outside a space of {n} states"
                    )));
                }
                if let Some(other) = membership[i] {
                    return Err(Error::BadPartition(format!(
                        "state {i} lies in wells {other} and {x}"
                    )));
                }
                membership[i] = Some(x);
            }
            cleaned.push(w);
        }
        let delta: Vec<usize> = (0..n).filter(|&i| membership[i].is_none()).collect();
        Ok(Partition {
            n,
            wells: cleaned,
            delta,
            membership,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of wells.
    pub fn kappa(&self) -> usize {
        self.wells.len()
    }

    pub fn well(&self, x: usize) -> &[usize] {
        &self.wells[x]
    }

    pub fn wells(&self) -> &[Vec<usize>] {
        &self.wells
    }

    pub fn delta(&self) -> &[usize] {
        &self.delta
    }

    /// Union of the wells, ascending.
    pub fn traced_states(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.membership[i].is_some()).collect()
    }

    /// Which well a state belongs to, if any.
    pub fn well_of(&self, state: usize) -> Option<usize> {
        self.membership[state]
    }

    /// All states outside well `x` but inside some well.
    pub fn other_wells(&self, x: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| matches!(self.membership[i], Some(y) if y != x))
            .collect()
    }
}

/// Chain watched only on `subset`, excursions outside excised.
///
/// Returns the subset chain with states relabelled in ascending order of the
/// parent indices, together with the parent indices themselves.  The
/// stationary measure is the parent measure conditioned to the subset.
pub fn trace_chain(chain: &Chain, subset: &[usize]) -> Result<(Chain, Vec<usize>)> {
    let n = chain.n();
    let mut kept: Vec<usize> = subset.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.is_empty() {
        return Err(Error::EmptySubset("trace subset".into()));
    }
    if kept.iter().any(|&i| i >= n) {
        return Err(Error::DimensionMismatch {
            context: "trace subset state index".into(),
            expected: n,
            got: *kept.iter().max().unwrap() + 1,
        });
    }
    if kept.len() == n {
        return Ok((chain.clone(), kept));
    }

    let mut local = vec![usize::MAX; n];
    for (a, &i) in kept.iter().enumerate() {
        local[i] = a;
    }
    let delta: Vec<usize> = (0..n).filter(|&i| local[i] == usize::MAX).collect();
    let mut delta_local = vec![usize::MAX; n];
    for (d, &i) in delta.iter().enumerate() {
        delta_local[i] = d;
    }

    // Absorption probabilities: h_z(d) = P_d[re-entry happens at z], one
    // column per subset state, all columns through one factorization.
    let nd = delta.len();
    let m = kept.len();
    let mut a = DMatrix::zeros(nd, nd);
    for (d, &i) in delta.iter().enumerate() {
        a[(d, d)] = chain.holding(i);
        for &(j, r) in chain.rates().row(i) {
            if delta_local[j] != usize::MAX {
                a[(d, delta_local[j])] -= r;
            }
        }
    }
    let mut b = DMatrix::zeros(nd, m);
    for (d, &i) in delta.iter().enumerate() {
        for &(j, r) in chain.rates().row(i) {
            if local[j] != usize::MAX {
                b[(d, local[j])] += r;
            }
        }
    }
    let h = linalg::solve_multi(a, b)?;
    for d in 0..nd {
        let mut row_sum = 0.0;
        for z in 0..m {
            let v = h[(d, z)];
            if v < -1e-8 {
                return Err(Error::SolveFailure(format!(
                    "absorption probability {v:.3e} below zero"
                )));
            }
            row_sum += v;
        }
        if (row_sum - 1.0).abs() > 1e-8 {
            return Err(Error::SolveFailure(format!(
                "absorption probabilities sum to {row_sum} for an excised state"
            )));
        }
    }

    // Trace rates: direct jumps plus excursion re-entry.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (a_idx, &i) in kept.iter().enumerate() {
        let mut row = vec![0.0; m];
        for &(j, r) in chain.rates().row(i) {
            if local[j] != usize::MAX {
                row[local[j]] += r;
            } else {
                let d = delta_local[j];
                for z in 0..m {
                    row[z] += r * h[(d, z)].max(0.0);
                }
            }
        }
        row[a_idx] = 0.0;
        rows[a_idx] = row
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v > 0.0)
            .collect();
    }

    // Drop solver-noise rates pairwise so the support stays symmetric.
    let row_sums: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|&(_, v)| v).sum::<f64>())
        .collect();
    let mut keep_map: Vec<HashMap<usize, f64>> = vec![HashMap::new(); m];
    let mut pairs = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            keep_map[i].insert(j, v);
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut triples = Vec::new();
    for (i, j) in pairs {
        let fwd = keep_map[i].get(&j).copied().unwrap_or(0.0);
        let bwd = keep_map[j].get(&i).copied().unwrap_or(0.0);
        let drop_fwd = fwd <= TRACE_DROP_REL * row_sums[i];
        let drop_bwd = bwd <= TRACE_DROP_REL * row_sums[j];
        if drop_fwd && drop_bwd {
            continue;
        }
        if fwd > 0.0 {
            triples.push((i, j, fwd));
        }
        if bwd > 0.0 {
            triples.push((j, i, bwd));
        }
    }

    let labels: Vec<String> = kept
        .iter()
        .map(|&i| chain.space().label(i).to_string())
        .collect();
    let pi_full = chain.pi().conditioned(&kept)?;
    let pi_local =
        ProbabilityMeasure::from_weights(kept.iter().map(|&i| pi_full[i]).collect())?;
    let rates = RateMatrix::from_triples(m, &triples)?;
    let traced = Chain::with_measure(
        StateSpace::new(labels)?,
        rates,
        pi_local,
        &ChainOptions::default(),
    )?;
    Ok((traced, kept))
}

/// Chain reflected at a well: only jumps internal to the well survive, and
/// the stationary measure is the parent measure conditioned to the well.
/// Returns the reflected chain and the parent indices of its states.
pub fn reflect_chain(chain: &Chain, well: &[usize]) -> Result<(Chain, Vec<usize>)> {
    let n = chain.n();
    let mut kept: Vec<usize> = well.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.is_empty() {
        return Err(Error::EmptySubset("reflection well".into()));
    }
    if kept.iter().any(|&i| i >= n) {
        return Err(Error::DimensionMismatch {
            context: "reflection well state index".into(),
            expected: n,
            got: *kept.iter().max().unwrap() + 1,
        });
    }
    let mut local = vec![usize::MAX; n];
    for (a, &i) in kept.iter().enumerate() {
        local[i] = a;
    }
    let m = kept.len();
    let mut triples = Vec::new();
    for (a_idx, &i) in kept.iter().enumerate() {
        for &(j, r) in chain.rates().row(i) {
            if local[j] != usize::MAX {
                triples.push((a_idx, local[j], r));
            }
        }
    }
    if m > 1 {
        let sizes = component_sizes(m, &triples);
        if sizes.len() > 1 {
            return Err(Error::ReducibleReflection {
                component_sizes: sizes,
            });
        }
    }
    let labels: Vec<String> = kept
        .iter()
        .map(|&i| chain.space().label(i).to_string())
        .collect();
    let pi_full = chain.pi().conditioned(&kept)?;
    let pi_local =
        ProbabilityMeasure::from_weights(kept.iter().map(|&i| pi_full[i]).collect())?;
    let rates = RateMatrix::from_triples(m, &triples)?;
    let reflected = Chain::with_measure(
        StateSpace::new(labels)?,
        rates,
        pi_local,
        &ChainOptions::default(),
    )?;
    Ok((reflected, kept))
}

fn component_sizes(n: usize, triples: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, _) in triples {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut size = 0;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            size += 1;
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

/// A chain together with a starred copy of some (or all) of its states.
///
/// Base states keep their parent indices; the star of base state `i` is
/// `star_of[i]`.  The stationary measure doubles the mass of starred states
/// and renormalizes, so for a full enlargement each copy carries half.
#[derive(Debug, Clone)]
pub struct Enlarged {
    pub chain: Chain,
    n_base: usize,
    star_of: Vec<Option<usize>>,
    parent_of_star: Vec<usize>,
    gamma: f64,
    starred_mass: f64,
}

impl Enlarged {
    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Star index of a base state, if that state was starred.
    pub fn star(&self, base: usize) -> Option<usize> {
        self.star_of[base]
    }

    pub fn is_star(&self, idx: usize) -> bool {
        idx >= self.n_base
    }

    /// Base state a star index copies.
    pub fn parent(&self, idx: usize) -> usize {
        if idx < self.n_base {
            idx
        } else {
            self.parent_of_star[idx - self.n_base]
        }
    }

    /// Parent-measure mass of the starred subset.
    pub fn starred_mass(&self) -> f64 {
        self.starred_mass
    }

    /// Star indices of a set of base states; base states without stars are
    /// reported as an error by the caller's validation, so this filters.
    pub fn stars_of(&self, base: &[usize]) -> Vec<usize> {
        base.iter().filter_map(|&i| self.star_of[i]).collect()
    }
}

/// Attaches a starred copy of every state, linked at rate `gamma`.
pub fn enlarge_chain(chain: &Chain, gamma: f64) -> Result<Enlarged> {
    let all: Vec<usize> = (0..chain.n()).collect();
    enlarge_at(chain, &all, gamma)
}

/// Attaches starred copies of `subset` only, linked at rate `gamma`.  Jumps
/// among base states are untouched; each starred state exchanges with its
/// copy at rate `gamma` in both directions.
pub fn enlarge_at(chain: &Chain, subset: &[usize], gamma: f64) -> Result<Enlarged> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::NonpositiveGamma(gamma));
    }
    let n = chain.n();
    let mut starred: Vec<usize> = subset.to_vec();
    starred.sort_unstable();
    starred.dedup();
    if starred.is_empty() {
        return Err(Error::EmptySubset("enlargement subset".into()));
    }
    if starred.iter().any(|&i| i >= n) {
        return Err(Error::DimensionMismatch {
            context: "enlargement subset state index".into(),
            expected: n,
            got: *starred.iter().max().unwrap() + 1,
        });
    }
    let mut star_of: Vec<Option<usize>> = vec![None; n];
    for (k, &i) in starred.iter().enumerate() {
        star_of[i] = Some(n + k);
    }
    let total = n + starred.len();
    let mut triples: Vec<(usize, usize, f64)> =
        chain.rates().iter_entries().collect();
    for (k, &i) in starred.iter().enumerate() {
        triples.push((i, n + k, gamma));
        triples.push((n + k, i, gamma));
    }
    let mut labels: Vec<String> = chain
        .space()
        .labels()
        .iter()
        .map(|l| l.to_string())
        .collect();
    labels.extend(starred.iter().map(|&i| format!("{}*", chain.space().label(i))));
    let mut weights: Vec<f64> = chain.pi().as_slice().to_vec();
    weights.extend(starred.iter().map(|&i| chain.pi()[i]));
    let starred_mass: f64 = starred.iter().map(|&i| chain.pi()[i]).sum();
    let pi = ProbabilityMeasure::from_weights(weights)?;
    let rates = RateMatrix::from_triples(total, &triples)?;
    let enlarged = Chain::with_measure(
        StateSpace::new(labels)?,
        rates,
        pi,
        &ChainOptions::default(),
    )?;
    Ok(Enlarged {
        chain: enlarged,
        n_base: n,
        star_of,
        parent_of_star: starred,
        gamma,
        starred_mass,
    })
}

/// Piecewise-constant well label path of a trajectory that lives inside the
/// wells.  Consecutive segments with equal labels merge.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderPath {
    /// Segment start times, ascending, starting at the trajectory origin.
    pub times: Vec<f64>,
    /// Well label of each segment.
    pub labels: Vec<usize>,
    /// End of the observation window.
    pub horizon: f64,
}

impl OrderPath {
    /// Label in force at time `t`.
    pub fn label_at(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => self.labels[k],
            Err(0) => self.labels[0],
            Err(k) => self.labels[k - 1],
        }
    }

    /// Total time spent carrying each label.
    pub fn occupation(&self, kappa: usize) -> Vec<f64> {
        let mut occ = vec![0.0; kappa];
        for (k, &label) in self.labels.iter().enumerate() {
            let end = if k + 1 < self.times.len() {
                self.times[k + 1]
            } else {
                self.horizon
            };
            occ[label] += end - self.times[k];
        }
        occ
    }

    /// Number of label changes.
    pub fn jumps(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }
}

/// Collapses a trajectory to its well label path.  Every visited state must
/// lie inside some well.
pub fn project_order(traj: &Trajectory, partition: &Partition) -> Result<OrderPath> {
    let mut times = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (k, &state) in traj.states.iter().enumerate() {
        let label = partition.well_of(state).ok_or(Error::StateOutsideWells {
            state,
            time: traj.times[k],
        })?;
        if labels.last() == Some(&label) {
            continue;
        }
        times.push(traj.times[k]);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptySubset("trajectory".into()));
    }
    Ok(OrderPath {
        times,
        labels,
        horizon: traj.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Observable;

    fn path3() -> Chain {
        let rates =
            RateMatrix::from_triples(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)])
                .unwrap();
        Chain::build(rates).unwrap()
    }

    #[test]
    fn partition_validates() {
        assert!(Partition::new(4, vec![vec![0], vec![1, 2]]).is_ok());
        assert!(matches!(
            Partition::new(4, vec![vec![0, 1], vec![1]]),
            Err(Error::BadPartition(_))
        ));
        assert!(matches!(
            Partition::new(4, vec![vec![0], vec![]]),
            Err(Error::BadPartition(_))
        ));
        assert!(matches!(
            Partition::new(2, vec![vec![0], vec![5]]),
            Err(Error::BadPartition(_))
        ));
    }

    #[test]
    fn partition_delta_and_membership() {
        let p = Partition::new(5, vec![vec![0, 1], vec![4]]).unwrap();
        assert_eq!(p.delta(), &[2, 3]);
        assert_eq!(p.well_of(1), Some(0));
        assert_eq!(p.well_of(3), None);
        assert_eq!(p.traced_states(), vec![0, 1, 4]);
        assert_eq!(p.other_wells(0), vec![4]);
    }

    #[test]
    fn trace_full_is_identity() {
        let c = path3();
        let (t, kept) = trace_chain(&c, &[0, 1, 2]).unwrap();
        assert_eq!(kept, vec![0, 1, 2]);
        for (i, j, r) in c.rates().iter_entries() {
            assert_eq!(t.rates().rate(i, j), r);
        }
    }

    #[test]
    fn trace_path_endpoints() {
        let c = path3();
        let (t, kept) = trace_chain(&c, &[0, 2]).unwrap();
        assert_eq!(kept, vec![0, 2]);
        assert!((t.rates().rate(0, 1) - 0.5).abs() < 1e-12);
        assert!((t.rates().rate(1, 0) - 0.5).abs() < 1e-12);
        assert!((t.pi()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_measure_is_conditioned() {
        let c = crate::models::random_reversible(30, 2024, 0.2).unwrap();
        let subset: Vec<usize> = (0..30).filter(|i| i % 3 != 0).collect();
        let (t, kept) = trace_chain(&c, &subset).unwrap();
        let cond = c.pi().conditioned(&subset).unwrap();
        for (a, &i) in kept.iter().enumerate() {
            assert!((t.pi()[a] - cond[i]).abs() < 1e-10);
        }
        assert!(t.stationarity_residual() < 1e-9);
    }

    #[test]
    fn trace_idempotent() {
        let c = crate::models::random_reversible(24, 7, 0.25).unwrap();
        let s1: Vec<usize> = (0..24).filter(|i| i % 4 != 1).collect();
        let s2: Vec<usize> = (0..24).filter(|i| i % 4 == 0 || i % 4 == 2).collect();
        let (t1, kept1) = trace_chain(&c, &s1).unwrap();
        let s2_local: Vec<usize> = s2
            .iter()
            .map(|&i| kept1.iter().position(|&k| k == i).unwrap())
            .collect();
        let (t12, _) = trace_chain(&t1, &s2_local).unwrap();
        let (t2, _) = trace_chain(&c, &s2).unwrap();
        for (i, j, r) in t2.rates().iter_entries() {
            let other = t12.rates().rate(i, j);
            assert!(
                (other - r).abs() <= 1e-10 * (1.0 + r.abs()),
                "rates differ at ({i},{j}): {other} vs {r}"
            );
        }
    }

    #[test]
    fn reflect_keeps_internal_rates() {
        let c = path3();
        let (r, kept) = reflect_chain(&c, &[0, 1]).unwrap();
        assert_eq!(kept, vec![0, 1]);
        assert!((r.rates().rate(0, 1) - 1.0).abs() < 1e-15);
        assert!((r.pi()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reflect_disconnected_rejected() {
        let c = path3();
        match reflect_chain(&c, &[0, 2]) {
            Err(Error::ReducibleReflection { component_sizes }) => {
                assert_eq!(component_sizes, vec![1, 1]);
            }
            other => panic!("expected ReducibleReflection, got {other:?}"),
        }
    }

    #[test]
    fn reflect_single_state() {
        let c = path3();
        let (r, _) = reflect_chain(&c, &[1]).unwrap();
        assert_eq!(r.n(), 1);
        assert_eq!(r.pi()[0], 1.0);
    }

    #[test]
    fn enlarge_two_state_uniform() {
        let rates = RateMatrix::from_triples(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let c = Chain::build(rates).unwrap();
        let e = enlarge_chain(&c, 1.0).unwrap();
        assert_eq!(e.chain.n(), 4);
        for i in 0..4 {
            assert!((e.chain.pi()[i] - 0.25).abs() < 1e-14);
        }
        assert_eq!(e.star(0), Some(2));
        assert_eq!(e.parent(3), 1);
    }

    #[test]
    fn enlarged_measure_matches_fresh_solve() {
        let c = crate::models::random_reversible(15, 99, 0.3).unwrap();
        let e = enlarge_chain(&c, 0.7).unwrap();
        let rebuilt = Chain::build(e.chain.rates().clone()).unwrap();
        for i in 0..e.chain.n() {
            assert!((rebuilt.pi()[i] - e.chain.pi()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn star_rows_single_entry() {
        let c = path3();
        let e = enlarge_chain(&c, 2.5).unwrap();
        for s in 3..6 {
            let row = e.chain.rates().row(s);
            assert_eq!(row.len(), 1);
            assert!((row[0].1 - 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn enlarge_then_trace_back_recovers() {
        let c = crate::models::random_reversible(12, 5, 0.4).unwrap();
        let e = enlarge_chain(&c, 0.9).unwrap();
        let base: Vec<usize> = (0..12).collect();
        let (back, _) = trace_chain(&e.chain, &base).unwrap();
        for (i, j, r) in c.rates().iter_entries() {
            assert!((back.rates().rate(i, j) - r).abs() <= 1e-12 * (1.0 + r));
        }
        for (i, j, r) in back.rates().iter_entries() {
            assert!((c.rates().rate(i, j) - r).abs() <= 1e-12 * (1.0 + r));
        }
    }

    #[test]
    fn nonpositive_gamma_rejected() {
        let c = path3();
        assert!(matches!(
            enlarge_chain(&c, 0.0),
            Err(Error::NonpositiveGamma(_))
        ));
        assert!(matches!(
            enlarge_chain(&c, -1.0),
            Err(Error::NonpositiveGamma(_))
        ));
    }

    #[test]
    fn partial_enlargement_mass() {
        let c = path3();
        let e = enlarge_at(&c, &[0, 2], 1.0).unwrap();
        assert_eq!(e.chain.n(), 5);
        // Base mass scales by 1/(1 + pi(S)); pi(S) = 2/3.
        let scale = 1.0 / (1.0 + 2.0 / 3.0);
        assert!((e.chain.pi()[0] - scale / 3.0).abs() < 1e-14);
        assert!((e.chain.pi()[1] - scale / 3.0).abs() < 1e-14);
        assert!((e.starred_mass() - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(e.star(1), None);
    }

    #[test]
    fn project_order_merges_and_counts() {
        let p = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            states: vec![0, 1, 2, 3, 0],
            horizon: 5.0,
            init: 0,
            seed: 0,
        };
        let path = project_order(&traj, &p).unwrap();
        assert_eq!(path.labels, vec![0, 1, 0]);
        assert_eq!(path.times, vec![0.0, 2.0, 4.0]);
        assert_eq!(path.jumps(), 2);
        let occ = path.occupation(2);
        assert!((occ[0] - 3.0).abs() < 1e-15);
        assert!((occ[1] - 2.0).abs() < 1e-15);
        assert_eq!(path.label_at(2.5), 1);
    }

    #[test]
    fn project_order_rejects_outside_state() {
        let p = Partition::new(4, vec![vec![0], vec![3]]).unwrap();
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            states: vec![0, 2],
            horizon: 2.0,
            init: 0,
            seed: 0,
        };
        match project_order(&traj, &p) {
            Err(Error::StateOutsideWells { state: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reflected_dirichlet_below_trace_dirichlet() {
        // Birth-death chain keeps contiguous wells connected after reflection.
        let c = crate::models::birth_death(18, 1.3, 0.8).unwrap();
        let wells = vec![vec![0, 1, 2, 3, 4], vec![9, 10, 11, 12]];
        let p = Partition::new(18, wells).unwrap();
        let traced_states = p.traced_states();
        let (te, kept) = trace_chain(&c, &traced_states).unwrap();
        let h: Vec<f64> = kept.iter().map(|&i| (i as f64 * 0.37).sin()).collect();
        let h_obs = Observable::new(h.clone());
        let trace_form = te.dirichlet_form(&h_obs, &h_obs).unwrap();
        let mut reflected_sum = 0.0;
        for x in 0..p.kappa() {
            let (rx, rkept) = reflect_chain(&c, p.well(x)).unwrap();
            let hx: Vec<f64> = rkept
                .iter()
                .map(|&i| h[kept.iter().position(|&k| k == i).unwrap()])
                .collect();
            let hx_obs = Observable::new(hx);
            let mass: f64 = p.well(x).iter().map(|&i| te.pi()[kept.iter().position(|&k| k == i).unwrap()]).sum();
            if rx.n() > 1 {
                reflected_sum += mass * rx.dirichlet_form(&hx_obs, &hx_obs).unwrap();
            }
        }
        assert!(reflected_sum <= trace_form + 1e-12);
    }
}
