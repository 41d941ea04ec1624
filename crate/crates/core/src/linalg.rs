//! Dense numerical kernels shared by the analysis modules.
//!
//! State spaces at desk scale stay below a few thousand states, so direct
//! dense factorizations are exact enough and simple to reason about.  The
//! one scale-sensitive choice is the symmetric eigensolve: full spectra are
//! computed densely up to [`DENSE_EIGEN_MAX`] states, and beyond that the
//! extreme eigenpair comes from shift-inverted inverse iteration on a
//! rank-one-deflated Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::chain::Chain;
use crate::error::{Error, Result};

/// Above this size, spectral gaps switch from a dense full eigensolve to
/// inverse iteration.
pub const DENSE_EIGEN_MAX: usize = 2000;

/// Relative residual target for iterative eigensolves.
pub const EIGEN_TOL: f64 = 1e-12;

/// Iteration cap for inverse power iterations.
pub const EIGEN_MAX_ITER: usize = 10_000;

/// Deterministic hash of an index into (-1, 1), used for generic start
/// vectors of iterative eigensolves.
fn splitmix_unit(mut z: u64) -> f64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Dense negated generator: diagonal holds exit rates, off-diagonal entries
/// are negated jump rates.
pub fn neg_generator_dense(chain: &Chain) -> DMatrix<f64> {
    let n = chain.n();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = chain.holding(i);
    }
    for (i, j, r) in chain.rates().iter_entries() {
        m[(i, j)] = -r;
    }
    m
}

/// Symmetrization of the negated generator by the stationary measure,
/// `S = D^{1/2} (-L) D^{-1/2}` with `D = diag(pi)`.
///
/// Returns the symmetrized matrix, the unit null vector `sqrt(pi)`, and the
/// relative asymmetry of the raw conjugation before averaging.  For a
/// certified reversible chain the defect sits at rounding level.
pub struct Symmetrized {
    pub matrix: DMatrix<f64>,
    pub null_vector: DVector<f64>,
    pub asymmetry: f64,
}

pub fn symmetrized(chain: &Chain) -> Symmetrized {
    let n = chain.n();
    let sqrt_pi: Vec<f64> = chain.pi().as_slice().iter().map(|p| p.sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = chain.holding(i);
    }
    for (i, j, r) in chain.rates().iter_entries() {
        m[(i, j)] = -r * sqrt_pi[i] / sqrt_pi[j];
    }
    let mut max_entry = 0.0f64;
    let mut max_gap = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            max_entry = max_entry.max(a.abs().max(b.abs()));
            max_gap = max_gap.max((a - b).abs());
            let avg = 0.5 * (a + b);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let asymmetry = if max_entry == 0.0 {
        0.0
    } else {
        max_gap / max_entry
    };
    let null_vector = DVector::from_vec(sqrt_pi);
    Symmetrized {
        matrix: m,
        null_vector,
        asymmetry,
    }
}

/// Smallest nontrivial eigenpair of a symmetrized generator: the eigenvalue
/// is the spectral gap, the eigenvector is mapped back by `D^{-1/2}` by the
/// caller.  `null_vector` must be the known unit kernel vector.
pub struct ExtremeEigen {
    pub value: f64,
    pub vector: DVector<f64>,
    pub residual: f64,
}

pub fn gap_eigenpair(s: &DMatrix<f64>, null_vector: &DVector<f64>) -> Result<ExtremeEigen> {
    let n = s.nrows();
    if n < 2 {
        return Err(Error::EigenFailure(
            "spectral gap needs at least two states".into(),
        ));
    }
    if n <= DENSE_EIGEN_MAX {
        gap_dense(s, null_vector)
    } else {
        gap_shift_invert(s, null_vector)
    }
}

fn gap_dense(s: &DMatrix<f64>, null_vector: &DVector<f64>) -> Result<ExtremeEigen> {
    let eig = s.clone().symmetric_eigen();
    let n = s.nrows();
    // Pick the smallest eigenvalue whose eigenvector is not the kernel
    // direction; for a connected chain the kernel is one-dimensional, so
    // this is the second-smallest eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = s.diagonal().amax().max(1.0);
    for &k in &order {
        let v = eig.eigenvectors.column(k);
        let overlap = v.dot(null_vector).abs();
        if overlap < 0.5 {
            let mut vec = v.clone_owned();
            // Project out the kernel to clean up degenerate rounding.
            let c = vec.dot(null_vector);
            vec -= null_vector * c;
            let norm = vec.norm();
            if norm == 0.0 {
                continue;
            }
            vec /= norm;
            let value = eig.eigenvalues[k];
            let residual = (s * &vec - &vec * value).norm() / scale;
            return Ok(ExtremeEigen {
                value,
                vector: vec,
                residual,
            });
        }
    }
    Err(Error::EigenFailure(
        "no eigenvector orthogonal to the kernel".into(),
    ))
}

fn gap_shift_invert(s: &DMatrix<f64>, null_vector: &DVector<f64>) -> Result<ExtremeEigen> {
    let n = s.nrows();
    let scale = s.diagonal().amax().max(1.0);
    // Rank-one shift moves the kernel eigenvalue to `c`, far above the gap,
    // leaving all other eigenpairs untouched.
    let c = 3.0 * scale;
    let mut b = s.clone();
    b.ger(c, null_vector, null_vector, 1.0);
    let chol = Cholesky::new(b).ok_or_else(|| {
        Error::EigenFailure("deflated symmetrized generator is not positive definite".into())
    })?;
    // Generic deterministic start: must not be orthogonal to the target
    // eigenspace, which structured patterns on symmetric graphs can be.
    let mut x = DVector::from_fn(n, |i, _| splitmix_unit(i as u64 + 1));
    let c0 = x.dot(null_vector);
    x -= null_vector * c0;
    let norm = x.norm();
    if norm == 0.0 {
        return Err(Error::EigenFailure("degenerate start vector".into()));
    }
    x /= norm;
    let mut value = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for _ in 0..EIGEN_MAX_ITER {
        let mut y = chol.solve(&x);
        let cy = y.dot(null_vector);
        y -= null_vector * cy;
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::EigenFailure("inverse iteration collapsed".into()));
        }
        y /= norm;
        let sy = s * &y;
        let prev = value;
        value = y.dot(&sy);
        residual = (&sy - &y * value).norm() / scale;
        x = y;
        // Both the residual and the Rayleigh quotient must settle: a small
        // residual alone also holds at any other eigenpair the start may
        // accidentally align with.
        if residual <= EIGEN_TOL && (prev - value).abs() <= EIGEN_TOL * scale {
            break;
        }
    }
    if residual > 1e-8 {
        return Err(Error::EigenFailure(format!(
            "inverse iteration stalled at relative residual {residual:.3e}"
        )));
    }
    Ok(ExtremeEigen {
        value,
        vector: x,
        residual,
    })
}

/// Smallest eigenpair of a symmetric positive definite matrix by inverse
/// power iteration with shift zero.  Used for killed generators, whose
/// principal eigenvector is entrywise positive.
pub fn smallest_eigenpair_spd(s: &DMatrix<f64>) -> Result<ExtremeEigen> {
    let n = s.nrows();
    let scale = s.diagonal().amax().max(1.0);
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::EigenFailure("killed generator is not positive definite".into()))?;
    let mut x = DVector::from_element(n, (n as f64).powf(-0.5));
    let mut value = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..EIGEN_MAX_ITER {
        let mut y = chol.solve(&x);
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::EigenFailure("inverse iteration collapsed".into()));
        }
        y /= norm;
        let sy = s * &y;
        value = y.dot(&sy);
        residual = (&sy - &y * value).norm() / scale;
        x = y;
        if residual <= EIGEN_TOL {
            break;
        }
    }
    if residual > 1e-8 {
        return Err(Error::EigenFailure(format!(
            "inverse iteration stalled at relative residual {residual:.3e}"
        )));
    }
    if x.iter().all(|v| *v <= 0.0) {
        x = -x;
    }
    Ok(ExtremeEigen {
        value,
        vector: x,
        residual,
    })
}

/// Full spectrum of a symmetric matrix, ascending, with eigenvectors as
/// columns in the same order.  Dense only; callers guard sizes.
pub fn full_symmetric_eigen(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = s.clone().symmetric_eigen();
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (pos, &k) in order.iter().enumerate() {
        vectors.set_column(pos, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// LU solve with one right-hand side.
pub fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.lu();
    lu.solve(&b)
        .ok_or_else(|| Error::SolveFailure("singular linear system".into()))
}

/// LU solve with a matrix of right-hand sides.
pub fn solve_multi(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = a.lu();
    lu.solve(&b)
        .ok_or_else(|| Error::SolveFailure("singular linear system".into()))
}

/// Pseudo-inverse application `u = (-L)^+ f` for mean-zero `f`, via the
/// saddle system that appends the mean-zero constraint on `u`.  The
/// multiplier row keeps the system square and nonsingular even though `-L`
/// has the constants in its kernel.
pub fn pseudo_inverse_apply(chain: &Chain, f: &[f64]) -> Result<Vec<f64>> {
    let n = chain.n();
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            context: "pseudo-inverse right-hand side".into(),
            expected: n,
            got: f.len(),
        });
    }
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        a[(i, i)] = chain.holding(i);
        a[(i, n)] = 1.0;
        a[(n, i)] = chain.pi()[i];
    }
    for (i, j, r) in chain.rates().iter_entries() {
        a[(i, j)] = -r;
    }
    let mut b = DVector::zeros(n + 1);
    for i in 0..n {
        b[i] = f[i];
    }
    let sol = solve(a, b)?;
    Ok(sol.as_slice()[..n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Chain, RateMatrix};

    fn two_state(a: f64, b: f64) -> Chain {
        let rates = RateMatrix::from_triples(2, &[(0, 1, a), (1, 0, b)]).unwrap();
        Chain::build(rates).unwrap()
    }

    #[test]
    fn symmetrized_two_state() {
        let c = two_state(2.0, 3.0);
        let sym = symmetrized(&c);
        assert!(sym.asymmetry < 1e-12);
        // Off-diagonal should be -sqrt(a b).
        assert!((sym.matrix[(0, 1)] + 6.0f64.sqrt()).abs() < 1e-12);
        let sw = &sym.matrix * &sym.null_vector;
        assert!(sw.amax() < 1e-12);
    }

    #[test]
    fn gap_two_state() {
        let c = two_state(2.0, 3.0);
        let sym = symmetrized(&c);
        let eig = gap_eigenpair(&sym.matrix, &sym.null_vector).unwrap();
        assert!((eig.value - 5.0).abs() < 1e-10);
        assert!(eig.residual < 1e-10);
    }

    #[test]
    fn shift_invert_matches_dense() {
        // Ring of 40 states with unit rates: gap = 2(1 - cos(2 pi / 40)).
        let n = 40;
        let mut triples = Vec::new();
        for i in 0..n {
            triples.push((i, (i + 1) % n, 1.0));
            triples.push(((i + 1) % n, i, 1.0));
        }
        let c = Chain::build(RateMatrix::from_triples(n, &triples).unwrap()).unwrap();
        let sym = symmetrized(&c);
        let dense = gap_dense(&sym.matrix, &sym.null_vector).unwrap();
        let iterative = gap_shift_invert(&sym.matrix, &sym.null_vector).unwrap();
        let expect = 2.0 * (1.0 - (2.0 * std::f64::consts::PI / n as f64).cos());
        assert!((dense.value - expect).abs() < 1e-10);
        assert!((iterative.value - expect).abs() < 1e-10);
    }

    #[test]
    fn pseudo_inverse_inverts_on_mean_zero() {
        let c = two_state(2.0, 3.0);
        // f mean-zero under pi = (0.6, 0.4).
        let f = vec![0.4, -0.6];
        let u = pseudo_inverse_apply(&c, &f).unwrap();
        // Check (-L) u = f and mean-zero u.
        let lu0 = c.holding(0) * u[0] - c.rates().rate(0, 1) * u[1];
        let lu1 = c.holding(1) * u[1] - c.rates().rate(1, 0) * u[0];
        assert!((lu0 - f[0]).abs() < 1e-12);
        assert!((lu1 - f[1]).abs() < 1e-12);
        assert!((0.6 * u[0] + 0.4 * u[1]).abs() < 1e-12);
    }
}
