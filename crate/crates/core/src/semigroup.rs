//! Semigroup evaluation by uniformization.
//!
//! `exp(tL)` is expanded as a Poisson mixture of powers of the uniformized
//! jump kernel `P = I + L/rate`.  The expansion is evaluated with a strict
//! relative tail cut and in bounded substeps so the Poisson weights never
//! underflow, which keeps evaluations deterministic and accurate to well
//! below the tolerances used anywhere in the crate.  The same machinery
//! drives killed semigroups: rows of the kernel then sum to less than one
//! and the lost mass is exactly the killing probability.

use nalgebra::DMatrix;

use crate::chain::Chain;
use crate::error::{Error, Result};

/// Relative Poisson tail mass discarded per substep.
const POISSON_TAIL: f64 = 1e-12;

/// Largest Poisson mean per substep; keeps `exp(-mu)` comfortably normal.
const MAX_STEP_MEAN: f64 = 64.0;

/// Safety factor applied to the maximal holding rate.
const RATE_MARGIN: f64 = 1.05;

/// Uniformized kernel of a (possibly killed) chain.
#[derive(Debug, Clone)]
pub struct Uniformized {
    n: usize,
    rate: f64,
    /// Rows of `P = I + L/rate`, diagonal included.
    rows: Vec<Vec<(usize, f64)>>,
}

impl Uniformized {
    /// Kernel for the full chain.
    pub fn new(chain: &Chain) -> Uniformized {
        let n = chain.n();
        let rate = uniformization_rate(chain.max_holding());
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<(usize, f64)> = vec![(i, 1.0 - chain.holding(i) / rate)];
            for &(j, r) in chain.rates().row(i) {
                row.push((j, r / rate));
            }
            rows.push(row);
        }
        Uniformized { n, rate, rows }
    }

    /// Kernel for the chain killed outside `keep`: jumps leaving `keep`
    /// lose their mass.  States are reindexed in ascending parent order;
    /// the parent indices are returned alongside.
    pub fn killed(chain: &Chain, keep: &[usize]) -> Result<(Uniformized, Vec<usize>)> {
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::EmptySubset("killed semigroup support".into()));
        }
        let mut local = vec![usize::MAX; chain.n()];
        for (a, &i) in kept.iter().enumerate() {
            local[i] = a;
        }
        let rate = uniformization_rate(
            kept.iter()
                .map(|&i| chain.holding(i))
                .fold(0.0, f64::max),
        );
        let mut rows = Vec::with_capacity(kept.len());
        for &i in &kept {
            let mut row: Vec<(usize, f64)> = vec![(local[i], 1.0 - chain.holding(i) / rate)];
            for &(j, r) in chain.rates().row(i) {
                if local[j] != usize::MAX {
                    row.push((local[j], r / rate));
                }
            }
            rows.push(row);
        }
        Ok((
            Uniformized {
                n: kept.len(),
                rate,
                rows,
            },
            kept,
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// One application of the kernel to a distribution row vector.
    fn apply_row(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi != 0.0 {
                for &(j, p) in row {
                    out[j] += vi * p;
                }
            }
        }
    }

    /// Evolves a distribution (or sub-probability) row vector in place:
    /// `v <- v exp(tL)`.
    pub fn evolve(&self, v: &mut [f64], t: f64) {
        assert_eq!(v.len(), self.n, "distribution length");
        let mut remaining = t;
        while remaining > 0.0 {
            let dt = remaining.min(MAX_STEP_MEAN / self.rate);
            self.evolve_step(v, dt);
            remaining -= dt;
        }
    }

    fn evolve_step(&self, v: &mut [f64], dt: f64) {
        let weights = poisson_weights(self.rate * dt);
        let mut acc = vec![0.0; self.n];
        let mut cur = v.to_vec();
        let mut next = vec![0.0; self.n];
        for (k, &w) in weights.iter().enumerate() {
            if k > 0 {
                self.apply_row(&cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            if w > 0.0 {
                for (a, c) in acc.iter_mut().zip(&cur) {
                    *a += w * c;
                }
            }
        }
        v.copy_from_slice(&acc);
    }

    /// Evolves a matrix whose rows are distributions: `M <- M exp(tL)`.
    pub fn evolve_matrix(&self, m: &mut DMatrix<f64>, t: f64) {
        assert_eq!(m.ncols(), self.n, "matrix width");
        let mut remaining = t;
        while remaining > 0.0 {
            let dt = remaining.min(MAX_STEP_MEAN / self.rate);
            self.evolve_matrix_step(m, dt);
            remaining -= dt;
        }
    }

    fn evolve_matrix_step(&self, m: &mut DMatrix<f64>, dt: f64) {
        let weights = poisson_weights(self.rate * dt);
        let rows = m.nrows();
        let mut acc = DMatrix::zeros(rows, self.n);
        let mut cur = m.clone();
        let mut next = DMatrix::zeros(rows, self.n);
        for (k, &w) in weights.iter().enumerate() {
            if k > 0 {
                // next = cur * P, row by row.
                next.fill(0.0);
                for (i, row) in self.rows.iter().enumerate() {
                    for &(j, p) in row {
                        if p != 0.0 {
                            for r in 0..rows {
                                next[(r, j)] += cur[(r, i)] * p;
                            }
                        }
                    }
                }
                std::mem::swap(&mut cur, &mut next);
            }
            if w > 0.0 {
                acc.iter_mut().zip(cur.iter()).for_each(|(a, c)| *a += w * c);
            }
        }
        m.copy_from(&acc);
    }

    /// Survival mass of a killed kernel after time `t`, starting from `v`.
    pub fn survival(&self, v: &[f64], t: f64) -> f64 {
        let mut w = v.to_vec();
        self.evolve(&mut w, t);
        w.iter().sum()
    }
}

fn uniformization_rate(max_holding: f64) -> f64 {
    let r = RATE_MARGIN * max_holding;
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Poisson point masses of mean `mu`, truncated once the accumulated mass
/// reaches `1 - POISSON_TAIL`.
fn poisson_weights(mu: f64) -> Vec<f64> {
    debug_assert!(mu <= MAX_STEP_MEAN * 1.0001);
    let mut w = Vec::with_capacity(16 + 2 * mu as usize);
    let mut p = (-mu).exp();
    let mut cum = p;
    w.push(p);
    let mut k = 1.0;
    while cum < 1.0 - POISSON_TAIL {
        p *= mu / k;
        cum += p;
        w.push(p);
        k += 1.0;
        if w.len() > 4096 {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::RateMatrix;

    fn two_state(a: f64, b: f64) -> Chain {
        let rates = RateMatrix::from_triples(2, &[(0, 1, a), (1, 0, b)]).unwrap();
        Chain::build(rates).unwrap()
    }

    #[test]
    fn two_state_closed_form() {
        let (a, b) = (2.0, 3.0);
        let c = two_state(a, b);
        let u = Uniformized::new(&c);
        for &t in &[0.1, 0.7, 3.0, 25.0] {
            let mut v = vec![1.0, 0.0];
            u.evolve(&mut v, t);
            let pi0 = b / (a + b);
            let expect = pi0 + (1.0 - pi0) * (-(a + b) * t).exp();
            assert!((v[0] - expect).abs() < 1e-11, "t={t}: {} vs {expect}", v[0]);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let c = two_state(1.0, 1.0);
        let u = Uniformized::new(&c);
        let mut v = vec![0.25, 0.75];
        u.evolve(&mut v, 0.0);
        assert_eq!(v, vec![0.25, 0.75]);
    }

    #[test]
    fn matrix_evolution_matches_vector() {
        let c = two_state(0.5, 1.5);
        let u = Uniformized::new(&c);
        let mut m = DMatrix::identity(2, 2);
        u.evolve_matrix(&mut m, 1.3);
        for start in 0..2 {
            let mut v = vec![0.0; 2];
            v[start] = 1.0;
            u.evolve(&mut v, 1.3);
            for j in 0..2 {
                assert!((m[(start, j)] - v[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn killed_survival_exponential_single_state() {
        // Killing a two-state chain outside state 0 leaves a pure death
        // process: survival is exp(-a t).
        let c = two_state(2.0, 3.0);
        let (u, kept) = Uniformized::killed(&c, &[0]).unwrap();
        assert_eq!(kept, vec![0]);
        let s = u.survival(&[1.0], 0.9);
        assert!((s - (-2.0 * 0.9f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn long_horizon_stays_accurate() {
        let c = two_state(1.0, 4.0);
        let u = Uniformized::new(&c);
        let mut v = vec![1.0, 0.0];
        u.evolve(&mut v, 400.0);
        assert!((v[0] - 0.8).abs() < 1e-9);
        assert!((v[1] - 0.2).abs() < 1e-9);
    }
}
