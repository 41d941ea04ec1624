//! Finite-state continuous-time Markov chains with certified reversibility.
//!
//! A [`Chain`] bundles a sparse jump-rate matrix, the state labels, and the
//! stationary distribution.  Construction is the only entry point: it checks
//! that rates are nonnegative, that the support graph is connected, solves
//! for the stationary measure, and certifies detailed balance before handing
//! out an immutable value.  Everything downstream (traces, capacities,
//! spectra, simulation) relies on those invariants and never re-checks them.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Ordered set of state labels with reverse lookup.
#[derive(Debug, Clone)]
pub struct StateSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate state label '{l}'")));
            }
        }
        Ok(StateSpace { labels, index })
    }

    /// Labels "0", "1", ... for chains built without explicit names.
    pub fn numeric(n: usize) -> Self {
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        StateSpace::new(labels).expect("numeric labels are distinct")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// Sparse conservative rate matrix, row-major, diagonal implicit.
///
/// Rows hold `(column, rate)` pairs sorted by column; the diagonal is defined
/// by conservation and never stored.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RateMatrix {
    /// Assembles from `(row, col, rate)` triples.  Duplicate entries for the
    /// same pair accumulate; diagonal entries and negative rates are errors.
    pub fn from_triples(n: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
        for &(i, j, v) in triples {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    context: format!("rate triple ({i}, {j})"),
                    expected: n,
                    got: i.max(j) + 1,
                });
            }
            if i == j {
                return Err(Error::Parse(format!(
                    "diagonal rate at state {i}; diagonals are implicit"
                )));
            }
            if v < 0.0 || !v.is_finite() {
                return Err(Error::NegativeRate {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let rows = rows
            .into_iter()
            .map(|r| {
                let mut row: Vec<(usize, f64)> = r.into_iter().filter(|&(_, v)| v > 0.0).collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        Ok(RateMatrix { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    /// Total exit rate of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, v)| v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn max_rate(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().map(|&(_, v)| v))
            .fold(0.0, f64::max)
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, v)| (i, j, v)))
    }
}

/// Probability vector aligned with a chain's state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMeasure(Vec<f64>);

impl ProbabilityMeasure {
    /// Normalizes nonnegative weights to total mass one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, &w)) = weights
            .iter()
            .enumerate()
            .find(|&(_, &w)| w < 0.0 || !w.is_finite())
        {
            return Err(Error::Parse(format!("weight {w} at state {i} is invalid")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass("measure weights sum to zero".into()));
        }
        Ok(ProbabilityMeasure(
            weights.into_iter().map(|w| w / total).collect(),
        ))
    }

    /// Point mass at `state`.
    pub fn dirac(n: usize, state: usize) -> Self {
        let mut w = vec![0.0; n];
        w[state] = 1.0;
        ProbabilityMeasure(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mass_of(&self, states: &[usize]) -> f64 {
        states.iter().map(|&i| self.0[i]).sum()
    }

    /// Expectation of an observable.
    pub fn expect(&self, f: &Observable) -> f64 {
        self.0.iter().zip(f.as_slice()).map(|(p, v)| p * v).sum()
    }

    /// Measure conditioned to `subset`; zero outside.
    pub fn conditioned(&self, subset: &[usize]) -> Result<ProbabilityMeasure> {
        if subset.is_empty() {
            return Err(Error::EmptySubset("conditioning subset".into()));
        }
        let mass = self.mass_of(subset);
        if mass <= 0.0 {
            return Err(Error::ZeroMass("conditioning subset".into()));
        }
        let mut w = vec![0.0; self.0.len()];
        for &i in subset {
            w[i] = self.0[i] / mass;
        }
        Ok(ProbabilityMeasure(w))
    }
}

impl std::ops::Index<usize> for ProbabilityMeasure {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Real-valued function on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable(Vec<f64>);

impl Observable {
    pub fn new(values: Vec<f64>) -> Self {
        Observable(values)
    }

    /// Indicator of a state set.
    pub fn indicator(n: usize, states: &[usize]) -> Self {
        let mut v = vec![0.0; n];
        for &i in states {
            v[i] = 1.0;
        }
        Observable(v)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Observable(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Observable {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Tunable tolerances for chain construction.
#[derive(Debug, Clone)]
pub struct ChainOptions {
    /// Detailed-balance certification threshold: the largest probability-flow
    /// asymmetry `|pi_i r_ij - pi_j r_ji|` may not exceed this fraction of
    /// the largest edge flow.
    pub reversibility_tol: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            reversibility_tol: 1e-10,
        }
    }
}

/// An irreducible reversible Markov jump process on a finite state space.
///
/// Immutable after construction; cheap to clone and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct Chain {
    space: StateSpace,
    rates: RateMatrix,
    pi: ProbabilityMeasure,
    holding: Vec<f64>,
}

impl Chain {
    /// Builds a chain from jump rates with numeric labels.
    pub fn build(rates: RateMatrix) -> Result<Chain> {
        Chain::build_with(StateSpace::numeric(rates.n()), rates, &ChainOptions::default())
    }

    /// Builds a chain from labelled jump rates.
    pub fn build_labeled(space: StateSpace, rates: RateMatrix) -> Result<Chain> {
        Chain::build_with(space, rates, &ChainOptions::default())
    }

    /// Full-control build: validates shape, connectivity and reversibility,
    /// and solves for the stationary measure.
    pub fn build_with(space: StateSpace, rates: RateMatrix, opts: &ChainOptions) -> Result<Chain> {
        let n = rates.n();
        if space.len() != n {
            return Err(Error::DimensionMismatch {
                context: "state labels vs rate matrix".into(),
                expected: n,
                got: space.len(),
            });
        }
        if n < 2 {
            return Err(Error::DimensionMismatch {
                context: "chain must have at least two states".into(),
                expected: 2,
                got: n,
            });
        }
        check_connected(&rates)?;
        let pi = stationary_measure(&rates)?;
        let chain = Chain::assemble(space, rates, pi);
        chain.certify_reversible(opts.reversibility_tol)?;
        Ok(chain)
    }

    /// Builds a chain whose stationary measure is already known exactly
    /// (traces, reflections, enlargements).  Connectivity and detailed
    /// balance against the supplied measure are still certified.
    pub fn with_measure(
        space: StateSpace,
        rates: RateMatrix,
        pi: ProbabilityMeasure,
        opts: &ChainOptions,
    ) -> Result<Chain> {
        let n = rates.n();
        if space.len() != n || pi.len() != n {
            return Err(Error::DimensionMismatch {
                context: "labels, rates and measure must agree".into(),
                expected: n,
                got: space.len().min(pi.len()),
            });
        }
        if n > 1 {
            check_connected(&rates)?;
        }
        let chain = Chain::assemble(space, rates, pi);
        chain.certify_reversible(opts.reversibility_tol)?;
        Ok(chain)
    }

    fn assemble(space: StateSpace, rates: RateMatrix, pi: ProbabilityMeasure) -> Chain {
        let holding = (0..rates.n()).map(|i| rates.exit_rate(i)).collect();
        Chain {
            space,
            rates,
            pi,
            holding,
        }
    }

    pub fn n(&self) -> usize {
        self.rates.n()
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn rates(&self) -> &RateMatrix {
        &self.rates
    }

    pub fn pi(&self) -> &ProbabilityMeasure {
        &self.pi
    }

    /// Holding rate (total exit rate) of a state.
    pub fn holding(&self, i: usize) -> f64 {
        self.holding[i]
    }

    pub fn max_holding(&self) -> f64 {
        self.holding.iter().copied().fold(0.0, f64::max)
    }

    /// Jump probabilities out of `i`: rates scaled by the holding rate.
    pub fn jump_probs(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lambda = self.holding[i];
        self.rates.row(i).iter().map(move |&(j, r)| (j, r / lambda))
    }

    /// Generator action `(Lf)(i) = sum_j r_ij (f_j - f_i)`.
    pub fn apply_generator(&self, f: &Observable) -> Result<Observable> {
        if f.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "observable length".into(),
                expected: self.n(),
                got: f.len(),
            });
        }
        let fv = f.as_slice();
        let out = (0..self.n())
            .map(|i| {
                self.rates
                    .row(i)
                    .iter()
                    .map(|&(j, r)| r * (fv[j] - fv[i]))
                    .sum()
            })
            .collect();
        Ok(Observable::new(out))
    }

    /// Dirichlet form `<f, (-L) g>_pi`, evaluated in the symmetric
    /// half-sum form which is exact for reversible chains.
    pub fn dirichlet_form(&self, f: &Observable, g: &Observable) -> Result<f64> {
        if f.len() != self.n() || g.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "observable length".into(),
                expected: self.n(),
                got: f.len().min(g.len()),
            });
        }
        let (fv, gv) = (f.as_slice(), g.as_slice());
        let mut acc = 0.0;
        for (i, j, r) in self.rates.iter_entries() {
            acc += self.pi[i] * r * (fv[j] - fv[i]) * (gv[j] - gv[i]);
        }
        Ok(0.5 * acc)
    }

    /// Mean of `f` under the stationary measure.
    pub fn pi_mean(&self, f: &Observable) -> f64 {
        self.pi.expect(f)
    }

    /// Inner product `<f, g>_pi`.
    pub fn pi_dot(&self, f: &Observable, g: &Observable) -> f64 {
        f.as_slice()
            .iter()
            .zip(g.as_slice())
            .zip(self.pi.as_slice())
            .map(|((a, b), p)| a * b * p)
            .sum()
    }

    /// Largest probability-flow asymmetry over edges, as a fraction of the
    /// largest edge flow.  Zero for exactly reversible chains.
    pub fn reversibility_defect(&self) -> f64 {
        let mut max_flow = 0.0f64;
        let mut max_gap = 0.0f64;
        for (i, j, r) in self.rates.iter_entries() {
            if i < j {
                let fwd = self.pi[i] * r;
                let bwd = self.pi[j] * self.rates.rate(j, i);
                max_flow = max_flow.max(fwd.max(bwd));
                max_gap = max_gap.max((fwd - bwd).abs());
            }
        }
        if max_flow == 0.0 {
            0.0
        } else {
            max_gap / max_flow
        }
    }

    fn certify_reversible(&self, tol: f64) -> Result<()> {
        let mut max_flow = 0.0f64;
        for (i, j, r) in self.rates.iter_entries() {
            let bwd = self.pi[j] * self.rates.rate(j, i);
            max_flow = max_flow.max((self.pi[i] * r).max(bwd));
        }
        if max_flow == 0.0 {
            return Ok(());
        }
        for (i, j, r) in self.rates.iter_entries() {
            if i < j {
                let fwd = self.pi[i] * r;
                let bwd = self.pi[j] * self.rates.rate(j, i);
                let gap = (fwd - bwd).abs();
                if gap > tol * max_flow {
                    return Err(Error::NotReversible {
                        row: i,
                        col: j,
                        relative_error: gap / max_flow,
                    });
                }
            }
        }
        Ok(())
    }

    /// Maximum residual of the stationarity equations `pi L = 0`, scaled by
    /// the largest probability flow.
    pub fn stationarity_residual(&self) -> f64 {
        let n = self.n();
        let mut inflow = vec![0.0; n];
        let mut max_flow = 0.0f64;
        for (i, j, r) in self.rates.iter_entries() {
            let f = self.pi[i] * r;
            inflow[j] += f;
            max_flow = max_flow.max(f);
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max((inflow[i] - self.pi[i] * self.holding[i]).abs());
        }
        if max_flow == 0.0 {
            0.0
        } else {
            worst / max_flow
        }
    }
}

/// Undirected connectivity of the support graph.  An edge counts if either
/// direction carries positive rate; reversibility certification later
/// guarantees the directions agree.
fn check_connected(rates: &RateMatrix) -> Result<()> {
    let n = rates.n();
    if n == 0 {
        return Err(Error::EmptySubset("state space".into()));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in rates.iter_entries() {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Reducible(missing))
    }
}

/// Stationary measure of a reversible rate matrix, built from detailed
/// balance along a spanning tree: `log pi_j - log pi_i = log r_ij - log r_ji`
/// on tree edges, computed in log space and normalized at the end.  For
/// non-reversible input the candidate fails certification afterwards.
fn stationary_measure(rates: &RateMatrix) -> Result<ProbabilityMeasure> {
    let n = rates.n();
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in rates.iter_entries() {
        reverse[j].push(i);
    }
    let mut logw = vec![f64::NAN; n];
    logw[0] = 0.0;
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        for &(j, rij) in rates.row(i) {
            if logw[j].is_nan() {
                let rji = rates.rate(j, i);
                if rji <= 0.0 {
                    return Err(Error::NotReversible {
                        row: i,
                        col: j,
                        relative_error: 1.0,
                    });
                }
                logw[j] = logw[i] + rij.ln() - rji.ln();
                stack.push(j);
            }
        }
        // A state attached to the visited set only by a reverse edge breaks
        // support symmetry, hence reversibility.
        for &k in &reverse[i] {
            if logw[k].is_nan() && rates.rate(i, k) <= 0.0 {
                return Err(Error::NotReversible {
                    row: k,
                    col: i,
                    relative_error: 1.0,
                });
            }
        }
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logw.into_iter().map(|l| (l - top).exp()).collect();
    ProbabilityMeasure::from_weights(weights)
}
