//! Small dense kernels shared by the learning modules: Cholesky
//! factorization, SPD inversion and power iteration.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn frobenius(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Fails when a pivot drops to `rel_guard` times its diagonal entry or below.
pub fn cholesky(a: ArrayView2<'_, f64>, rel_guard: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims("cholesky (square)", n, a.ncols()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > rel_guard * a[[j, j]].abs()) || d <= 0.0 {
            return Err(Error::SingularMatrix {
                condition: condition_from_pivots(&l, j, d),
            });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

fn condition_from_pivots(l: &Array2<f64>, upto: usize, failed: f64) -> f64 {
    let max = (0..upto).map(|i| l[[i, i]] * l[[i, i]]).fold(0.0, f64::max);
    if failed <= 0.0 {
        f64::INFINITY
    } else {
        max / failed
    }
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = b.to_owned();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor. The result is symmetrized.
pub fn spd_inverse(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a, 1e-15)?;
    let diag_max = (0..n).map(|i| l[[i, i]]).fold(0.0, f64::max);
    let diag_min = (0..n).map(|i| l[[i, i]]).fold(f64::INFINITY, f64::min);
    let condition = (diag_max / diag_min).powi(2);
    if !condition.is_finite() || condition > 1e15 {
        return Err(Error::SingularMatrix { condition });
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        inv.column_mut(j)
            .assign(&cholesky_solve(l.view(), e.view()));
    }
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

pub const POWER_MAX_ITERATIONS: usize = 10_000;

/// Dominant eigenpair of a symmetric positive semidefinite operator.
///
/// Stops once `‖Av − μv‖ ≤ tol·μ`, once the remaining change of the
/// Rayleigh quotient extrapolated from its geometric convergence rate is
/// below `0.1·tol·μ`, or when the quotient has stopped moving at machine
/// precision. Returns `(μ, v)`.
pub fn power_iteration<F>(
    apply: F,
    start: ArrayView1<'_, f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<(f64, Array1<f64>)>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    let mut v = start.to_owned();
    let n0 = norm(v.view());
    if n0 == 0.0 || !n0.is_finite() {
        v = default_start(v.len());
    } else {
        v /= n0;
    }
    let mut prev = f64::NAN;
    let mut prev_step = f64::NAN;
    let mut mu = f64::NAN;
    for _ in 0..max_iterations {
        let w = apply(v.view());
        mu = v.dot(&w);
        let wn = norm(w.view());
        if wn == 0.0 {
            return Ok((0.0, v));
        }
        let residual = (&w - &(&v * mu)).mapv(|x| x * x).sum().sqrt();
        let step = mu - prev;
        let rate = step / prev_step;
        let tail = step * rate / (1.0 - rate);
        if residual <= tol * mu.abs()
            || step.abs() <= 1e-15 * mu.abs()
            || (step > 0.0 && rate > 0.0 && rate < 1.0 && tail <= 0.1 * tol * mu.abs())
        {
            return Ok((mu, w / wn));
        }
        prev = mu;
        prev_step = step;
        v = w / wn;
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
        estimate: mu,
    })
}

/// Deterministic start vector with no special symmetry.
pub fn default_start(n: usize) -> Array1<f64> {
    let v = Array1::from_iter((0..n).map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64));
    let nv = norm(v.view());
    v / nv
}

/// Spectral norm ‖M‖₂ of a general matrix, via power iteration on the
/// smaller of MᵀM and MMᵀ.
pub fn spectral_norm(m: ArrayView2<'_, f64>, tol: f64) -> Result<f64> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    let (eig, _) = if rows <= cols {
        power_iteration(
            |v| m.dot(&m.t().dot(&v)),
            default_start(rows).view(),
            tol,
            POWER_MAX_ITERATIONS,
        )?
    } else {
        power_iteration(
            |v| m.t().dot(&m.dot(&v)),
            default_start(cols).view(),
            tol,
            POWER_MAX_ITERATIONS,
        )?
    };
    Ok(eig.max(0.0).sqrt())
}
