//! Greedy sparse approximation.
//!
//! Signals are columns of an `m × N` matrix and are approximated by at most
//! `s` atoms of a dictionary via Orthogonal Matching Pursuit. Codes are kept
//! in support/value form since the number of atoms may grow (the AD-DL
//! filter concatenates stage dictionaries).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm};

/// Tolerance on atom norms for a normalized dictionary.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Squared-sine threshold below which a new atom is considered collinear
/// with the current support.
const COLLINEAR_GUARD: f64 = 1e-10;

/// An `m × n` matrix whose columns are the atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    atoms: Array2<f64>,
}

impl Dictionary {
    /// Wraps a matrix whose columns must already have unit norm.
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        Self::check_shape(&atoms)?;
        for (j, col) in atoms.axis_iter(Axis(1)).enumerate() {
            let nj = norm(col);
            if (nj - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "atom {j} has norm {nj}, expected 1"
                )));
            }
        }
        Ok(Dictionary { atoms })
    }

    /// Normalizes every column; zero columns are rejected.
    pub fn normalized(mut atoms: Array2<f64>) -> Result<Self> {
        Self::check_shape(&atoms)?;
        for (j, mut col) in atoms.axis_iter_mut(Axis(1)).enumerate() {
            let nj = norm(col.view());
            if nj == 0.0 || !nj.is_finite() {
                return Err(Error::InvalidParameter(format!("atom {j} is zero")));
            }
            col /= nj;
        }
        Ok(Dictionary { atoms })
    }

    /// Accepts atoms of arbitrary (nonzero) norm. The online phase works on
    /// such dictionaries because its least-squares updates do not preserve
    /// unit norms.
    pub fn unnormalized(atoms: Array2<f64>) -> Result<Self> {
        Self::check_shape(&atoms)?;
        for (j, col) in atoms.axis_iter(Axis(1)).enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidParameter(format!("atom {j} is zero")));
            }
        }
        Ok(Dictionary { atoms })
    }

    fn check_shape(atoms: &Array2<f64>) -> Result<()> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "dictionary needs at least one row and one atom".into(),
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "dictionary has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, j: usize) -> ArrayView1<'_, f64> {
        self.atoms.column(j)
    }

    pub fn signal_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.atoms
    }

    pub(crate) fn atoms_mut(&mut self) -> &mut Array2<f64> {
        &mut self.atoms
    }

    pub fn is_unit_norm(&self, tol: f64) -> bool {
        self.atoms
            .axis_iter(Axis(1))
            .all(|c| (norm(c) - 1.0).abs() <= tol)
    }

    /// `[self, other]`, atoms of `other` appended after ours.
    pub fn concat(&self, other: &Dictionary) -> Result<Dictionary> {
        if other.signal_dim() != self.signal_dim() {
            return Err(Error::dims(
                "dictionary concatenation",
                self.signal_dim(),
                other.signal_dim(),
            ));
        }
        let atoms = ndarray::concatenate(Axis(1), &[self.atoms.view(), other.atoms.view()])
            .expect("row counts checked");
        Ok(Dictionary { atoms })
    }

    /// Dense reconstruction `D·x`.
    pub fn reconstruct(&self, code: &SparseCode) -> Array1<f64> {
        let mut out = Array1::zeros(self.signal_dim());
        for (j, v) in code.iter() {
            out.scaled_add(v, &self.atoms.column(j));
        }
        out
    }
}

/// A sparse coefficient vector of length `dim`, stored as parallel
/// support/value lists in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    support: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseCode {
    pub fn new(dim: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::dims(
                "sparse code values",
                support.len(),
                values.len(),
            ));
        }
        let mut seen = vec![false; dim];
        for &j in &support {
            if j >= dim {
                return Err(Error::InvalidParameter(format!(
                    "support index {j} out of range for dimension {dim}"
                )));
            }
            if seen[j] {
                return Err(Error::InvalidParameter(format!(
                    "duplicate support index {j}"
                )));
            }
            seen[j] = true;
        }
        Ok(SparseCode {
            support,
            values,
            dim,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseCode {
            support: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Keeps the nonzero entries of a dense vector, in ascending index order.
    pub fn from_dense(x: ArrayView1<'_, f64>) -> Self {
        let (support, values) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        SparseCode {
            support,
            values,
            dim: x.len(),
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn get(&self, j: usize) -> f64 {
        self.support
            .iter()
            .position(|&k| k == j)
            .map_or(0.0, |p| self.values[p])
    }

    pub fn contains(&self, j: usize) -> bool {
        self.support.contains(&j)
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut x = Array1::zeros(self.dim);
        for (j, v) in self.iter() {
            x[j] = v;
        }
        x
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// `N` sparse codes sharing one dimension `n`; column `i` codes signal `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCodeMatrix {
    dim: usize,
    columns: Vec<SparseCode>,
}

impl SparseCodeMatrix {
    pub fn new(dim: usize, columns: Vec<SparseCode>) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.dim != dim) {
            return Err(Error::dims("sparse code matrix column", dim, bad.dim));
        }
        Ok(SparseCodeMatrix { dim, columns })
    }

    pub fn zeros(dim: usize, n_columns: usize) -> Self {
        SparseCodeMatrix {
            dim,
            columns: vec![SparseCode::zeros(dim); n_columns],
        }
    }

    pub fn from_dense(x: ArrayView2<'_, f64>) -> Self {
        SparseCodeMatrix {
            dim: x.nrows(),
            columns: x.axis_iter(Axis(1)).map(SparseCode::from_dense).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, i: usize) -> &SparseCode {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[SparseCode] {
        &self.columns
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [SparseCode] {
        &mut self.columns
    }

    pub fn into_columns(self) -> Vec<SparseCode> {
        self.columns
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SparseCode> {
        self.columns.iter()
    }

    pub fn total_nnz(&self) -> usize {
        self.columns.iter().map(SparseCode::nnz).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.dim, self.columns.len()));
        for (i, c) in self.columns.iter().enumerate() {
            for (j, v) in c.iter() {
                x[[j, i]] = v;
            }
        }
        x
    }

    /// Gram matrix `X·Xᵀ` (n × n).
    pub fn gram(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.dim, self.dim));
        for c in &self.columns {
            for (a, va) in c.iter() {
                for (b, vb) in c.iter() {
                    g[[a, b]] += va * vb;
                }
            }
        }
        g
    }
}

/// Sparse-coding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodingConfig {
    /// Maximum number of atoms per code.
    pub sparsity: usize,
    /// Early exit once `‖r‖₂ ≤ residual_tol·‖y‖₂`.
    pub residual_tol: f64,
}

impl Default for CodingConfig {
    fn default() -> Self {
        CodingConfig {
            sparsity: 5,
            residual_tol: 1e-9,
        }
    }
}

impl CodingConfig {
    pub fn with_sparsity(sparsity: usize) -> Self {
        CodingConfig {
            sparsity,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sparsity == 0 {
            return Err(Error::InvalidParameter("sparsity must be positive".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "residual tolerance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Orthogonal Matching Pursuit.
///
/// Picks the unselected atom with the largest `|d_jᵀ r|` (lowest index on
/// ties), re-solves least squares on the whole support through an
/// incrementally grown Cholesky factor of the support Gram matrix and
/// recomputes the residual.
pub fn omp(d: &Dictionary, y: ArrayView1<'_, f64>, cfg: &CodingConfig) -> Result<SparseCode> {
    let (m, n) = d.atoms.dim();
    if y.len() != m {
        return Err(Error::dims("omp signal", m, y.len()));
    }
    cfg.validate()?;
    if cfg.sparsity > n {
        return Err(Error::SparsityTooLarge {
            sparsity: cfg.sparsity,
            atoms: n,
        });
    }
    let atoms = d.atoms.view();
    let stop = cfg.residual_tol * norm(y);

    let s = cfg.sparsity;
    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut selected = vec![false; n];
    // Row-major lower triangle of the support Gram factor.
    let mut chol = Array2::<f64>::zeros((s, s));
    let mut rhs = Vec::with_capacity(s);
    let mut coef = Array1::<f64>::zeros(0);
    let mut residual = y.to_owned();

    while support.len() < s {
        if norm(residual.view()) <= stop {
            break;
        }
        let corr = atoms.t().dot(&residual);
        let mut best = None;
        let mut best_abs = 0.0;
        for (j, c) in corr.iter().enumerate() {
            if !selected[j] && c.abs() > best_abs {
                best_abs = c.abs();
                best = Some(j);
            }
        }
        let Some(best) = best else { break };

        let k = support.len();
        let atom = atoms.column(best);
        let atom_sq = atom.dot(&atom);
        let mut pivot_sq = atom_sq;
        for i in 0..k {
            let mut v = atoms.column(support[i]).dot(&atom);
            for p in 0..i {
                v -= chol[[i, p]] * chol[[k, p]];
            }
            let w = v / chol[[i, i]];
            chol[[k, i]] = w;
            pivot_sq -= w * w;
        }
        if !(pivot_sq > COLLINEAR_GUARD * atom_sq) {
            return Err(Error::SingularSupport {
                atom: best,
                pivot: pivot_sq,
            });
        }
        chol[[k, k]] = pivot_sq.sqrt();
        support.push(best);
        selected[best] = true;
        rhs.push(atom.dot(&y));

        let l = chol.slice(ndarray::s![..=k, ..=k]);
        coef = linalg::cholesky_solve(l, Array1::from(rhs.clone()).view());
        residual.assign(&y);
        for (&j, &c) in support.iter().zip(coef.iter()) {
            residual.scaled_add(-c, &atoms.column(j));
        }
    }

    Ok(SparseCode {
        support,
        values: coef.to_vec(),
        dim: n,
    })
}

/// Codes every column of `y` independently (in parallel); column `i` of the
/// result equals `omp(d, y.column(i), cfg)`.
pub fn batch_code(
    d: &Dictionary,
    y: ArrayView2<'_, f64>,
    cfg: &CodingConfig,
) -> Result<SparseCodeMatrix> {
    if y.nrows() != d.signal_dim() {
        return Err(Error::dims("batch_code signals", d.signal_dim(), y.nrows()));
    }
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter("no signals to code".into()));
    }
    let results: Vec<Result<SparseCode>> = (0..y.ncols())
        .into_par_iter()
        .map(|i| omp(d, y.column(i), cfg))
        .collect();
    let mut columns = Vec::with_capacity(results.len());
    for (column, r) in results.into_iter().enumerate() {
        columns.push(r.map_err(|e| Error::Column {
            column,
            source: Box::new(e),
        })?);
    }
    Ok(SparseCodeMatrix {
        dim: d.n_atoms(),
        columns,
    })
}

fn check_codes(d: &Dictionary, y: ArrayView2<'_, f64>, x: &SparseCodeMatrix) -> Result<()> {
    if y.nrows() != d.signal_dim() {
        return Err(Error::dims("signal dimension", d.signal_dim(), y.nrows()));
    }
    if x.len() != y.ncols() {
        return Err(Error::dims("code count", y.ncols(), x.len()));
    }
    if x.dim() != d.n_atoms() {
        return Err(Error::dims("code dimension", d.n_atoms(), x.dim()));
    }
    Ok(())
}

/// Per-signal errors `e_i = ‖y_i − D x_i‖₂`.
pub fn representation_errors(
    d: &Dictionary,
    y: ArrayView2<'_, f64>,
    x: &SparseCodeMatrix,
) -> Result<Array1<f64>> {
    check_codes(d, y, x)?;
    Ok(Array1::from_iter(x.iter().enumerate().map(|(i, code)| {
        let r = &y.column(i) - &d.reconstruct(code);
        norm(r.view())
    })))
}

/// Atom popularity `p_j`: the number of codes whose support contains `j`.
pub fn atom_popularity(x: &SparseCodeMatrix) -> Vec<usize> {
    let mut p = vec![0usize; x.dim()];
    for code in x.iter() {
        for &j in code.support() {
            p[j] += 1;
        }
    }
    p
}
