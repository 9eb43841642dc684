//! Online semi-supervised learning (TODDLeR).
//!
//! The dictionary follows recursive-least-squares updates (RLS-DLA): with
//! `G` the forgetting-weighted Gram matrix of past codes, a new pair
//! `(y, x)` moves `D` by the rank-one correction
//!
//! ```text
//! u = φ⁻¹ G⁻¹ x,   α = 1 / (1 + xᵀu),   r = y − D x,   D ← D + α r uᵀ
//! ```
//!
//! while `G ← φG + xxᵀ` and its inverse are updated in Sherman–Morrison
//! form. The cross-products matrix `P = Y Xᵀ` is never formed; the rank-one
//! update keeps `D G = P` implicitly.
//!
//! The classifier `W` and consistency map `A` get Tikhonov-anchored
//! updates towards the *estimated* label of each sample. Every sample
//! updates the model, whatever the classification confidence.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm, POWER_MAX_ITERATIONS};
use crate::sparse_coding::{omp, CodingConfig, Dictionary, SparseCode, SparseCodeMatrix};
use crate::supervised_pretrain::{classify, DiscriminativeModel};

/// Typical forgetting factor for the RLS dictionary update.
pub const DEFAULT_FORGETTING: f64 = 0.95;

/// Relative tolerance of the power iteration behind the spectral norms.
pub const SPECTRAL_TOL: f64 = 1e-8;

/// Inverse drift is checked (and repaired by re-inversion) this often.
pub const DRIFT_CHECK_INTERVAL: u64 = 1000;

/// Relative ridge added to the warmup Gram matrix.
const WARMUP_RIDGE: f64 = 1e-8;

/// How the Tikhonov weights `λ1` (classifier) and `λ2` (consistency map)
/// are chosen before each update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// `λ1 = λ2 = ‖G‖₂`.
    #[default]
    GramNorm,
    /// `λ1 = ‖W‖₂`, `λ2 = ‖A‖₂` of the pre-update model.
    ModelNorms,
    Fixed {
        lambda1: f64,
        lambda2: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    model: DiscriminativeModel,
    gram: Array2<f64>,
    gram_inv: Array2<f64>,
    phi: f64,
    policy: LambdaPolicy,
    samples_seen: u64,
    updates_since_check: u64,
    /// Last dominant eigenvector of `G`, used to warm-start power iteration.
    spectral_hint: Array1<f64>,
}

/// What a single online step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ToddlerOutcome {
    pub predicted_class: usize,
    pub scores: Array1<f64>,
    pub code: SparseCode,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `‖y − D x‖₂` under the pre-update dictionary.
    pub reconstruction_error: f64,
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "forgetting factor {phi} outside (0, 1]"
        )));
    }
    Ok(())
}

impl OnlineState {
    /// Seeds `G = X Xᵀ + δI` from the pretraining codes, with
    /// `δ = 1e-8·trace(X Xᵀ)/n`, and inverts it.
    pub fn init(
        model: DiscriminativeModel,
        warmup: &SparseCodeMatrix,
        phi: f64,
        policy: LambdaPolicy,
    ) -> Result<Self> {
        check_phi(phi)?;
        let n = model.n_atoms();
        if warmup.dim() != n {
            return Err(Error::dims("warmup code dimension", n, warmup.dim()));
        }
        if warmup.is_empty() {
            return Err(Error::InvalidParameter(
                "warmup codes are empty; G is undefined".into(),
            ));
        }
        let mut gram = warmup.gram();
        let trace: f64 = gram.diag().sum();
        if !(trace > 0.0) {
            return Err(Error::SingularMatrix {
                condition: f64::INFINITY,
            });
        }
        let ridge = WARMUP_RIDGE * trace / n as f64;
        for j in 0..n {
            gram[[j, j]] += ridge;
        }
        let gram_inv = linalg::spd_inverse(gram.view())?;
        Ok(OnlineState {
            model,
            gram,
            gram_inv,
            phi,
            policy,
            samples_seen: warmup.len() as u64,
            updates_since_check: 0,
            spectral_hint: linalg::default_start(n),
        })
    }

    /// Reassembles a state from checkpointed parts.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        model: DiscriminativeModel,
        gram: Array2<f64>,
        gram_inv: Array2<f64>,
        phi: f64,
        policy: LambdaPolicy,
        samples_seen: u64,
        updates_since_check: u64,
        spectral_hint: Array1<f64>,
    ) -> Result<Self> {
        check_phi(phi)?;
        let n = model.n_atoms();
        if gram.dim() != (n, n) || gram_inv.dim() != (n, n) {
            return Err(Error::dims("checkpoint Gram matrix", n, gram.nrows()));
        }
        if spectral_hint.len() != n {
            return Err(Error::dims(
                "checkpoint spectral hint",
                n,
                spectral_hint.len(),
            ));
        }
        Ok(OnlineState {
            model,
            gram,
            gram_inv,
            phi,
            policy,
            samples_seen,
            updates_since_check,
            spectral_hint,
        })
    }

    pub fn model(&self) -> &DiscriminativeModel {
        &self.model
    }

    pub fn into_model(self) -> DiscriminativeModel {
        self.model
    }

    pub fn gram(&self) -> ArrayView2<'_, f64> {
        self.gram.view()
    }

    pub fn gram_inv(&self) -> ArrayView2<'_, f64> {
        self.gram_inv.view()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn policy(&self) -> LambdaPolicy {
        self.policy
    }

    pub fn coding(&self) -> &CodingConfig {
        &self.model.coding
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub(crate) fn updates_since_check(&self) -> u64 {
        self.updates_since_check
    }

    pub(crate) fn spectral_hint(&self) -> ArrayView1<'_, f64> {
        self.spectral_hint.view()
    }

    /// `‖G⁻¹G − I‖_F`.
    pub fn inverse_residual(&self) -> f64 {
        let mut prod = self.gram_inv.dot(&self.gram);
        for j in 0..prod.nrows() {
            prod[[j, j]] -= 1.0;
        }
        linalg::frobenius(prod.view())
    }

    /// One RLS dictionary update with the pair `(y, x)`. On error the state
    /// is left untouched.
    pub fn rls_update(&mut self, y: ArrayView1<'_, f64>, x: &SparseCode) -> Result<()> {
        let (m, n) = (self.model.signal_dim(), self.model.n_atoms());
        if y.len() != m {
            return Err(Error::dims("rls signal", m, y.len()));
        }
        if x.dim() != n {
            return Err(Error::dims("rls code", n, x.dim()));
        }
        let mut u = Array1::<f64>::zeros(n);
        for (j, v) in x.iter() {
            u.scaled_add(v / self.phi, &self.gram_inv.column(j));
        }
        let xu: f64 = x.iter().map(|(j, v)| v * u[j]).sum();
        let denom = 1.0 + xu;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::CorruptState(format!(
                "1 + xᵀu = {denom} is not positive"
            )));
        }
        let alpha = 1.0 / denom;
        let residual = &y - &self.model.dictionary.reconstruct(x);

        let atoms = self.model.dictionary.atoms_mut();
        for j in 0..n {
            if u[j] != 0.0 {
                atoms.column_mut(j).scaled_add(alpha * u[j], &residual);
            }
        }

        self.gram.mapv_inplace(|g| g * self.phi);
        for (a, va) in x.iter() {
            for (b, vb) in x.iter() {
                self.gram[[a, b]] += va * vb;
            }
        }
        // written symmetrically: an antisymmetric rounding error in G⁻¹ grows
        // by 1/φ per update
        let inv_phi = 1.0 / self.phi;
        for a in 0..n {
            let ua = alpha * u[a];
            for b in a..n {
                let v = self.gram_inv[[a, b]] * inv_phi - ua * u[b];
                self.gram_inv[[a, b]] = v;
                self.gram_inv[[b, a]] = v;
            }
        }

        self.samples_seen += 1;
        self.updates_since_check += 1;
        if self.updates_since_check >= DRIFT_CHECK_INTERVAL {
            self.repair_inverse();
        }
        Ok(())
    }

    fn repair_inverse(&mut self) {
        self.updates_since_check = 0;
        let n = self.model.n_atoms() as f64;
        let drift = self.inverse_residual();
        if drift <= 1e-9 * n {
            linalg::symmetrize(&mut self.gram_inv);
            return;
        }
        match linalg::spd_inverse(self.gram.view()) {
            Ok(inv) => {
                log::debug!("re-inverted G after drift {drift:e}");
                self.gram_inv = inv;
            }
            Err(e) => log::warn!("G re-inversion failed ({e}); keeping recursive inverse"),
        }
    }

    fn select_lambdas(&self) -> Result<(f64, f64, Option<Array1<f64>>)> {
        match self.policy {
            LambdaPolicy::GramNorm => {
                let g = self.gram.view();
                match linalg::power_iteration(
                    |v| g.dot(&v),
                    self.spectral_hint.view(),
                    SPECTRAL_TOL,
                    POWER_MAX_ITERATIONS,
                ) {
                    Ok((mu, v)) => Ok((mu, mu, Some(v))),
                    Err(Error::NoConvergence { estimate, .. }) if estimate > 0.0 => {
                        log::warn!("‖G‖₂ not converged; using Rayleigh estimate {estimate:e}");
                        Ok((estimate, estimate, None))
                    }
                    Err(e) => Err(e),
                }
            }
            LambdaPolicy::ModelNorms => Ok((
                linalg::spectral_norm(self.model.classifier.view(), SPECTRAL_TOL)?,
                linalg::spectral_norm(self.model.consistency.view(), SPECTRAL_TOL)?,
                None,
            )),
            LambdaPolicy::Fixed { lambda1, lambda2 } => Ok((lambda1, lambda2, None)),
        }
    }

    /// `(λ1, λ2)` under the current policy, evaluated on the current state.
    pub fn lambda_select(&self) -> Result<(f64, f64)> {
        self.select_lambdas().map(|(l1, l2, _)| (l1, l2))
    }

    /// Processes one incoming signal: code, classify with the pre-update
    /// classifier, update `W` then `A` towards the estimated labels, then
    /// update `D`. The state is unchanged if any stage fails.
    pub fn toddler_step(&mut self, y: ArrayView1<'_, f64>) -> Result<ToddlerOutcome> {
        let model = &self.model;
        let x = omp(&model.dictionary, y, &model.coding)?;
        let (predicted, scores) = classify(model.classifier.view(), &x)?;
        let reconstruction_error = norm((&y - &model.dictionary.reconstruct(&x)).view());

        let mut h = Array1::<f64>::zeros(model.n_classes());
        h[predicted] = 1.0;
        let q = Array1::from_iter(model.class_of_atom.iter().map(|&k| {
            if k == predicted {
                1.0
            } else {
                0.0
            }
        }));

        let (lambda1, lambda2, hint) = self.select_lambdas()?;
        let w = tikhonov_update(model.classifier.view(), h.view(), &x, lambda1)?;
        let a = tikhonov_update(model.consistency.view(), q.view(), &x, lambda2)?;

        self.rls_update(y, &x)?;
        self.model.classifier = w;
        self.model.consistency = a;
        if let Some(v) = hint {
            self.spectral_hint = v;
        }
        Ok(ToddlerOutcome {
            predicted_class: predicted,
            scores,
            code: x,
            lambda1,
            lambda2,
            reconstruction_error,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.model.dictionary
    }
}

/// Minimizer of `‖target − M x‖² + λ‖M − M0‖²_F`:
/// `M = M0 + (target − M0 x) xᵀ / (λ + xᵀx)`.
pub fn tikhonov_update(
    m0: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
    x: &SparseCode,
    lambda: f64,
) -> Result<Array2<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Tikhonov weight must be positive, got {lambda}"
        )));
    }
    if m0.ncols() != x.dim() {
        return Err(Error::dims("tikhonov code", m0.ncols(), x.dim()));
    }
    if target.len() != m0.nrows() {
        return Err(Error::dims("tikhonov target", m0.nrows(), target.len()));
    }
    let mut residual = target.to_owned();
    for (j, v) in x.iter() {
        residual.scaled_add(-v, &m0.column(j));
    }
    let denom = lambda + x.squared_norm();
    let mut m = m0.to_owned();
    for (j, v) in x.iter() {
        m.column_mut(j).scaled_add(v / denom, &residual);
    }
    Ok(m)
}
