//! Batch dictionary learning by AK-SVD: OMP coding alternated with one
//! power-iteration-style update per atom on fixed supports.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng;
use crate::sparse_coding::{
    atom_popularity, batch_code, representation_errors, CodingConfig, Dictionary, SparseCodeMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DLConfig {
    pub n_atoms: usize,
    /// Number of coding/update alternations.
    pub iterations: usize,
    pub coding: CodingConfig,
    pub seed: u64,
    /// Replace atoms nobody uses by the worst-represented signal.
    pub replace_unused: bool,
}

impl Default for DLConfig {
    fn default() -> Self {
        DLConfig {
            n_atoms: 32,
            iterations: 20,
            coding: CodingConfig::default(),
            seed: 0,
            replace_unused: true,
        }
    }
}

impl DLConfig {
    pub fn validate(&self) -> Result<()> {
        self.coding.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "dictionary learning needs at least one iteration".into(),
            ));
        }
        if self.n_atoms < self.coding.sparsity {
            return Err(Error::InvalidParameter(format!(
                "{} atoms cannot support sparsity {}",
                self.n_atoms, self.coding.sparsity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DLResult {
    pub dictionary: Dictionary,
    pub codes: SparseCodeMatrix,
    /// `‖Y − DX‖_F` after each iteration.
    pub objective_trace: Vec<f64>,
    /// Atoms with zero popularity in `codes`.
    pub unused_atoms: Vec<usize>,
}

/// `‖Y − DX‖_F`.
pub fn objective(d: &Dictionary, y: ArrayView2<'_, f64>, x: &SparseCodeMatrix) -> Result<f64> {
    let e = representation_errors(d, y, x)?;
    Ok(e.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Initial dictionary together with the column indices of `y` it was drawn
/// from (ascending). Atoms beyond the available nonzero columns are seeded
/// Gaussian directions.
pub fn init_dictionary_with_selection(
    y: ArrayView2<'_, f64>,
    n_atoms: usize,
    seed: u64,
) -> Result<(Dictionary, Vec<usize>)> {
    if n_atoms == 0 {
        return Err(Error::InvalidParameter("n_atoms must be positive".into()));
    }
    let nonzero: Vec<usize> = (0..y.ncols())
        .filter(|&i| y.column(i).iter().any(|&v| v != 0.0))
        .collect();
    if nonzero.is_empty() {
        return Err(Error::Data(
            "cannot initialize a dictionary: every signal is zero".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut selected: Vec<usize> = if nonzero.len() >= n_atoms {
        index::sample(&mut rng, nonzero.len(), n_atoms)
            .into_iter()
            .map(|p| nonzero[p])
            .collect()
    } else {
        nonzero.clone()
    };
    selected.sort_unstable();

    let m = y.nrows();
    let mut atoms = Array2::<f64>::zeros((m, n_atoms));
    for (j, &i) in selected.iter().enumerate() {
        atoms.column_mut(j).assign(&y.column(i));
    }
    for j in selected.len()..n_atoms {
        loop {
            let v = Array1::from_shape_fn(m, |_| StandardNormal.sample(&mut rng));
            if norm(v.view()) > 0.0 {
                atoms.column_mut(j).assign(&v);
                break;
            }
        }
    }
    Ok((Dictionary::normalized(atoms)?, selected))
}

pub fn init_dictionary(y: ArrayView2<'_, f64>, n_atoms: usize, seed: u64) -> Result<Dictionary> {
    init_dictionary_with_selection(y, n_atoms, seed).map(|(d, _)| d)
}

/// One AK-SVD sweep over the atoms in ascending order with supports fixed.
///
/// For atom `j` used by signals `I_j`, with `E = Y_I − D X_I + d_j x^j_I`:
/// `d_j ← E x^j / ‖E x^j‖`, then `x^j_I ← Eᵀ d_j`. Updated atoms are signed so
/// that their first nonzero entry is nonnegative. Unused atoms are skipped.
pub fn atom_update_pass(
    d: &Dictionary,
    y: ArrayView2<'_, f64>,
    x: &SparseCodeMatrix,
) -> Result<(Dictionary, SparseCodeMatrix)> {
    if y.nrows() != d.signal_dim() {
        return Err(Error::dims(
            "atom update signals",
            d.signal_dim(),
            y.nrows(),
        ));
    }
    if x.len() != y.ncols() || x.dim() != d.n_atoms() {
        return Err(Error::dims("atom update codes", y.ncols(), x.len()));
    }
    let mut d = d.clone();
    let mut x = x.clone();
    let n = d.n_atoms();

    // users[j] = (signal, position of j in that signal's support)
    let mut users: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, code) in x.iter().enumerate() {
        for (p, &j) in code.support().iter().enumerate() {
            users[j].push((i, p));
        }
    }

    let mut residual = y.to_owned();
    for (i, code) in x.iter().enumerate() {
        let mut col = residual.column_mut(i);
        for (j, v) in code.iter() {
            col.scaled_add(-v, &d.atom(j));
        }
    }

    let m = d.signal_dim();
    for j in 0..n {
        if users[j].is_empty() {
            continue;
        }
        let old = d.atom(j).to_owned();
        // Columns of E restricted to I_j, stored contiguously.
        let mut e = Array2::<f64>::zeros((m, users[j].len()));
        let mut g = Array1::<f64>::zeros(m);
        for (k, &(i, p)) in users[j].iter().enumerate() {
            let coef = x.column(i).values()[p];
            let mut col = e.column_mut(k);
            col.assign(&residual.column(i));
            col.scaled_add(coef, &old);
            g.scaled_add(coef, &col);
        }
        let gn = norm(g.view());
        if gn == 0.0 || !gn.is_finite() {
            continue;
        }
        g /= gn;
        if let Some(first) = g.iter().find(|v| **v != 0.0) {
            if *first < 0.0 {
                g.mapv_inplace(|v| -v);
            }
        }
        let coefs = e.t().dot(&g);
        for (k, &(i, p)) in users[j].iter().enumerate() {
            let c = coefs[k];
            x.columns_mut()[i].values_mut()[p] = c;
            let mut r = residual.column_mut(i);
            r.assign(&e.column(k));
            r.scaled_add(-c, &g);
        }
        d.atoms_mut().column_mut(j).assign(&g);
    }
    Ok((d, x))
}

/// Replaces every atom of zero popularity by the worst-represented signal
/// not yet used for a replacement. Returns the number of replaced atoms.
fn replace_unused_atoms(
    d: &mut Dictionary,
    y: ArrayView2<'_, f64>,
    x: &SparseCodeMatrix,
) -> Result<usize> {
    let popularity = atom_popularity(x);
    let dead: Vec<usize> = (0..popularity.len())
        .filter(|&j| popularity[j] == 0)
        .collect();
    if dead.is_empty() {
        return Ok(0);
    }
    let errors = representation_errors(d, y, x)?;
    let mut order: Vec<usize> = (0..y.ncols())
        .filter(|&i| norm(y.column(i)) > 0.0)
        .collect();
    // descending error, ascending index on ties
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let mut replaced = 0;
    for (j, &i) in dead.iter().zip(order.iter()) {
        let col = y.column(i);
        let atom = &col / norm(col);
        d.atoms_mut().column_mut(*j).assign(&atom);
        replaced += 1;
    }
    Ok(replaced)
}

/// AK-SVD training from [`init_dictionary`].
///
/// Each iteration codes all signals, keeps for every signal whichever of the
/// fresh OMP code and the previous iteration's code represents it better
/// under the current dictionary, runs [`atom_update_pass`], then optionally
/// replaces unused atoms. The trace is therefore non-increasing.
pub fn train(y: ArrayView2<'_, f64>, cfg: &DLConfig) -> Result<DLResult> {
    cfg.validate()?;
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter("no training signals".into()));
    }
    let d = init_dictionary(y, cfg.n_atoms, cfg.seed)?;
    train_from(y, d, cfg)
}

/// [`train`] starting from a given dictionary; `cfg.n_atoms` is ignored.
pub fn train_from(y: ArrayView2<'_, f64>, init: Dictionary, cfg: &DLConfig) -> Result<DLResult> {
    cfg.coding.validate()?;
    if cfg.iterations == 0 {
        return Err(Error::InvalidParameter(
            "dictionary learning needs at least one iteration".into(),
        ));
    }
    if y.nrows() != init.signal_dim() {
        return Err(Error::dims(
            "training signals",
            init.signal_dim(),
            y.nrows(),
        ));
    }
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter("no training signals".into()));
    }
    let mut d = init;
    let mut previous: Option<SparseCodeMatrix> = None;
    let mut trace = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let mut x = batch_code(&d, y, &cfg.coding)?;
        if let Some(prev) = previous.take() {
            keep_better_codes(&d, y, &mut x, prev)?;
        }
        let (nd, nx) = atom_update_pass(&d, y, &x)?;
        d = nd;
        x = nx;
        if cfg.replace_unused {
            let replaced = replace_unused_atoms(&mut d, y, &x)?;
            if replaced > 0 {
                log::debug!("replaced {replaced} unused atoms");
            }
        }
        trace.push(objective(&d, y, &x)?);
        previous = Some(x);
    }

    let codes = previous.expect("at least one iteration");
    let unused_atoms = atom_popularity(&codes)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == 0)
        .map(|(j, _)| j)
        .collect();
    Ok(DLResult {
        dictionary: d,
        codes,
        objective_trace: trace,
        unused_atoms,
    })
}

fn keep_better_codes(
    d: &Dictionary,
    y: ArrayView2<'_, f64>,
    fresh: &mut SparseCodeMatrix,
    prev: SparseCodeMatrix,
) -> Result<()> {
    let e_new = representation_errors(d, y, fresh)?;
    let e_old = representation_errors(d, y, &prev)?;
    for (i, old) in prev.into_columns().into_iter().enumerate() {
        if e_old[i] < e_new[i] {
            fresh.columns_mut()[i] = old;
        }
    }
    Ok(())
}
