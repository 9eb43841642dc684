//! Label-consistent pretraining (LC-KSVD).
//!
//! The discriminative objective is solved as plain dictionary learning on
//! the stacked signals `[Y; √α·H; √β·Q]`, after which the learned stacked
//! atoms are split into the data dictionary `D`, the linear classifier `W`
//! and the label-consistency map `A`, with the scale of each atom pushed
//! into `W` and `A` so that `D` has unit-norm columns.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dictionary_learning::{init_dictionary, train, train_from, DLConfig, DLResult};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng;
use crate::sparse_coding::{CodingConfig, Dictionary, SparseCode};

/// One-hot label matrix `H` (`c × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndicator {
    h: Array2<f64>,
}

impl LabelIndicator {
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.h.view()
    }

    pub fn n_classes(&self) -> usize {
        self.h.nrows()
    }
}

/// Atom-to-class allocation `Q` (`n × N`): `Q[j, i] = 1` iff atom `j` is
/// allocated to the class of signal `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomAllocation {
    q: Array2<f64>,
    class_of_atom: Vec<usize>,
}

impl AtomAllocation {
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    pub fn class_of_atom(&self) -> &[usize] {
        &self.class_of_atom
    }
}

/// Dictionary, classifier `W` (`c × n`) and consistency map `A` (`n × n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminativeModel {
    pub dictionary: Dictionary,
    pub classifier: Array2<f64>,
    pub consistency: Array2<f64>,
    pub class_of_atom: Vec<usize>,
    pub coding: CodingConfig,
}

impl DiscriminativeModel {
    pub fn new(
        dictionary: Dictionary,
        classifier: Array2<f64>,
        consistency: Array2<f64>,
        class_of_atom: Vec<usize>,
        coding: CodingConfig,
    ) -> Result<Self> {
        let n = dictionary.n_atoms();
        if classifier.ncols() != n {
            return Err(Error::dims("classifier columns", n, classifier.ncols()));
        }
        if consistency.dim() != (n, n) {
            return Err(Error::dims("consistency map size", n, consistency.nrows()));
        }
        if class_of_atom.len() != n {
            return Err(Error::dims("atom classes", n, class_of_atom.len()));
        }
        let c = classifier.nrows();
        if let Some(&bad) = class_of_atom.iter().find(|&&k| k >= c) {
            return Err(Error::InvalidParameter(format!(
                "atom class {bad} out of range for {c} classes"
            )));
        }
        coding.validate()?;
        Ok(DiscriminativeModel {
            dictionary,
            classifier,
            consistency,
            class_of_atom,
            coding,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.dictionary.n_atoms()
    }

    pub fn signal_dim(&self) -> usize {
        self.dictionary.signal_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub n_classes: usize,
    /// Weight of the classification term.
    pub alpha: f64,
    /// Weight of the label-consistency term.
    pub beta: f64,
    pub atoms_per_class: usize,
    pub init: PretrainInit,
    /// `n_atoms` is overridden by `n_classes · atoms_per_class`.
    pub dl: DLConfig,
}

/// How the stacked dictionary is seeded before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainInit {
    /// Each class block of atoms is drawn from that class's stacked signals.
    #[default]
    PerClass,
    /// All atoms drawn jointly from every stacked signal.
    Joint,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            n_classes: 2,
            alpha: 1.0,
            beta: 1.0,
            atoms_per_class: 16,
            init: PretrainInit::PerClass,
            dl: DLConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn n_atoms(&self) -> usize {
        self.n_classes * self.atoms_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::InvalidParameter(
                "alpha and beta must be nonnegative".into(),
            ));
        }
        if self.n_classes == 0 || self.atoms_per_class == 0 {
            return Err(Error::InvalidParameter(
                "need at least one class and one atom per class".into(),
            ));
        }
        DLConfig {
            n_atoms: self.n_atoms(),
            ..self.dl
        }
        .validate()
    }
}

/// Builds `H` and `Q`. Atoms are allocated in contiguous blocks:
/// `0..atoms_per_class` to class 0, the next block to class 1, and so on.
pub fn build_indicators(
    labels: &[usize],
    n_classes: usize,
    atoms_per_class: usize,
) -> Result<(LabelIndicator, AtomAllocation)> {
    if n_classes == 0 || atoms_per_class == 0 {
        return Err(Error::InvalidParameter(
            "need at least one class and one atom per class".into(),
        ));
    }
    let n = n_classes * atoms_per_class;
    let class_of_atom: Vec<usize> = (0..n).map(|j| j / atoms_per_class).collect();
    let mut h = Array2::zeros((n_classes, labels.len()));
    let mut q = Array2::zeros((n, labels.len()));
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} of sample {i} is outside 0..{n_classes}"
            )));
        }
        h[[label, i]] = 1.0;
        for j in label * atoms_per_class..(label + 1) * atoms_per_class {
            q[[j, i]] = 1.0;
        }
    }
    Ok((LabelIndicator { h }, AtomAllocation { q, class_of_atom }))
}

/// `[Y; √α·H; √β·Q]`.
pub fn stack_training(
    y: ArrayView2<'_, f64>,
    h: &LabelIndicator,
    q: &AtomAllocation,
    alpha: f64,
    beta: f64,
) -> Result<Array2<f64>> {
    let n_signals = y.ncols();
    if h.h.ncols() != n_signals {
        return Err(Error::dims(
            "label indicator columns",
            n_signals,
            h.h.ncols(),
        ));
    }
    if q.q.ncols() != n_signals {
        return Err(Error::dims(
            "atom allocation columns",
            n_signals,
            q.q.ncols(),
        ));
    }
    let h_scaled = &h.h * alpha.sqrt();
    let q_scaled = &q.q * beta.sqrt();
    Ok(
        ndarray::concatenate(ndarray::Axis(0), &[y, h_scaled.view(), q_scaled.view()])
            .expect("column counts checked"),
    )
}

/// Trains the stacked problem and returns the split model along with the
/// raw stacked training result.
pub fn pretrain_detailed(
    y: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &PretrainConfig,
) -> Result<(DiscriminativeModel, DLResult)> {
    cfg.validate()?;
    let c = cfg.n_classes;
    let n = cfg.n_atoms();
    if labels.len() != y.ncols() {
        return Err(Error::dims("pretraining labels", y.ncols(), labels.len()));
    }
    if y.ncols() < n {
        return Err(Error::InvalidParameter(format!(
            "{} training signals cannot seed {n} atoms",
            y.ncols()
        )));
    }
    let (h, q) = build_indicators(labels, c, cfg.atoms_per_class)?;
    for class in 0..c {
        if !labels.contains(&class) {
            return Err(Error::Data(format!(
                "class {class} has no training samples"
            )));
        }
    }
    let stacked = stack_training(y, &h, &q, cfg.alpha, cfg.beta)?;
    let dl = DLConfig {
        n_atoms: n,
        ..cfg.dl
    };
    let learned = match cfg.init {
        PretrainInit::Joint => train(stacked.view(), &dl)?,
        PretrainInit::PerClass => {
            let init = per_class_init(stacked.view(), labels, cfg)?;
            train_from(stacked.view(), init, &dl)?
        }
    };

    let m = y.nrows();
    let atoms = learned.dictionary.atoms();
    let d_hat = atoms.slice(s![..m, ..]);
    let w_hat = atoms.slice(s![m..m + c, ..]);
    let a_hat = atoms.slice(s![m + c.., ..]);

    let mut d = Array2::zeros((m, n));
    let mut w = Array2::zeros((c, n));
    let mut a = Array2::zeros((n, n));
    let (sa, sb) = (cfg.alpha.sqrt(), cfg.beta.sqrt());
    for j in 0..n {
        let scale = norm(d_hat.column(j));
        if scale == 0.0 {
            return Err(Error::Data(format!(
                "learned atom {j} has no component in signal space"
            )));
        }
        d.column_mut(j).assign(&(&d_hat.column(j) / scale));
        if sa > 0.0 {
            w.column_mut(j).assign(&(&w_hat.column(j) / (sa * scale)));
        }
        if sb > 0.0 {
            a.column_mut(j).assign(&(&a_hat.column(j) / (sb * scale)));
        }
    }
    let model = DiscriminativeModel::new(
        Dictionary::normalized(d)?,
        w,
        a,
        q.class_of_atom,
        cfg.dl.coding,
    )?;
    Ok((model, learned))
}

fn per_class_init(
    stacked: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &PretrainConfig,
) -> Result<Dictionary> {
    let apc = cfg.atoms_per_class;
    let mut atoms = Array2::zeros((stacked.nrows(), cfg.n_atoms()));
    for class in 0..cfg.n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let block = stacked.select(ndarray::Axis(1), &members);
        let seed = rng::derive_seed(cfg.dl.seed, class as u64);
        let d = init_dictionary(block.view(), apc, seed)?;
        atoms
            .slice_mut(s![.., class * apc..(class + 1) * apc])
            .assign(&d.atoms());
    }
    Dictionary::new(atoms)
}

pub fn pretrain(
    y: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &PretrainConfig,
) -> Result<DiscriminativeModel> {
    pretrain_detailed(y, labels, cfg).map(|(model, _)| model)
}

/// Class scores `W·x` and their argmax (lowest class on ties).
pub fn classify(w: ArrayView2<'_, f64>, x: &SparseCode) -> Result<(usize, Array1<f64>)> {
    if x.dim() != w.ncols() {
        return Err(Error::dims("classifier input", w.ncols(), x.dim()));
    }
    let mut scores = Array1::zeros(w.nrows());
    for (j, v) in x.iter() {
        scores.scaled_add(v, &w.column(j));
    }
    Ok((argmax(scores.view()), scores))
}

pub(crate) fn argmax(v: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sparse_coding::{batch_code, omp};
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn indicators_small_example() {
        let (h, q) = build_indicators(&[0, 1, 0], 2, 1).unwrap();
        assert_eq!(h.matrix(), array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]].view());
        assert_eq!(q.matrix(), array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]].view());
        assert_eq!(q.class_of_atom(), &[0, 1]);
    }

    #[test]
    fn indicators_single_class() {
        let (h, _) = build_indicators(&[0, 0, 0, 0], 3, 2).unwrap();
        assert!(h.matrix().row(0).iter().all(|&v| v == 1.0));
        assert!(h.matrix().row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indicators_structure_random() {
        let mut r = rng::seeded(4);
        let labels: Vec<usize> = (0..50).map(|_| r.random_range(0..3)).collect();
        let (h, q) = build_indicators(&labels, 3, 2).unwrap();
        for i in 0..50 {
            assert_eq!(h.matrix().column(i).sum(), 1.0);
            assert_eq!(q.matrix().column(i).sum(), 2.0);
            for j in 0..6 {
                let expect = if q.class_of_atom()[j] == labels[i] {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(q.matrix()[[j, i]], expect);
            }
        }
    }

    #[test]
    fn indicators_reject_bad_label() {
        assert!(build_indicators(&[0, 2], 2, 1).is_err());
    }

    #[test]
    fn stacking_blocks() {
        let y = array![[1.0, 2.0], [3.0, 4.0]];
        let (h, q) = build_indicators(&[0, 1], 2, 1).unwrap();
        let z = stack_training(y.view(), &h, &q, 0.0, 0.0).unwrap();
        assert_eq!(z.dim(), (6, 2));
        assert_eq!(z.slice(s![..2, ..]), y.view());
        assert!(z.slice(s![2.., ..]).iter().all(|&v| v == 0.0));

        let z = stack_training(y.view(), &h, &q, 1.0, 1.0).unwrap();
        assert_eq!(z.slice(s![2..4, ..]), h.matrix());
        assert_eq!(z.slice(s![4.., ..]), q.matrix());

        let z = stack_training(y.view(), &h, &q, 4.0, 1.0).unwrap();
        assert_eq!(z.slice(s![2..4, ..]), (&h.matrix() * 2.0).view());

        let (h3, _) = build_indicators(&[0, 1, 1], 2, 1).unwrap();
        assert!(stack_training(y.view(), &h3, &q, 1.0, 1.0).is_err());
    }

    fn separable_toy(per_class: usize) -> (Array2<f64>, Vec<usize>) {
        let mut y = Array2::zeros((4, 2 * per_class));
        let mut labels = Vec::new();
        for i in 0..2 * per_class {
            let class = i % 2;
            y[[class, i]] = 1.0 + 0.1 * (i / 2) as f64;
            labels.push(class);
        }
        (y, labels)
    }

    #[test]
    fn separable_toy_recovers_labels() {
        let (y, labels) = separable_toy(10);
        let cfg = PretrainConfig {
            n_classes: 2,
            alpha: 1.0,
            beta: 1.0,
            atoms_per_class: 1,
            init: PretrainInit::PerClass,
            dl: DLConfig {
                iterations: 10,
                coding: CodingConfig::with_sparsity(1),
                seed: 3,
                ..Default::default()
            },
        };
        let model = pretrain(y.view(), &labels, &cfg).unwrap();
        assert!(model.dictionary.is_unit_norm(1e-12));
        for i in 0..y.ncols() {
            let x = omp(&model.dictionary, y.column(i), &model.coding).unwrap();
            let (class, _) = classify(model.classifier.view(), &x).unwrap();
            assert_eq!(class, labels[i], "sample {i}");
        }
    }

    #[test]
    fn zero_weights_reduce_to_plain_training() {
        let mut r = rng::seeded(8);
        let y = Array2::from_shape_fn((6, 30), |_| StandardNormal.sample(&mut r));
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let cfg = PretrainConfig {
            n_classes: 2,
            alpha: 0.0,
            beta: 0.0,
            atoms_per_class: 3,
            init: PretrainInit::Joint,
            dl: DLConfig {
                iterations: 5,
                coding: CodingConfig::with_sparsity(2),
                seed: 13,
                ..Default::default()
            },
        };
        let model = pretrain(y.view(), &labels, &cfg).unwrap();
        assert!(model.classifier.iter().all(|&v| v == 0.0));
        assert!(model.consistency.iter().all(|&v| v == 0.0));
        let plain = train(
            y.view(),
            &DLConfig {
                n_atoms: 6,
                ..cfg.dl
            },
        )
        .unwrap();
        for (a, b) in model
            .dictionary
            .atoms()
            .iter()
            .zip(plain.dictionary.atoms().iter())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_round_trips_stacked_atoms() {
        let mut r = rng::seeded(9);
        let y = Array2::from_shape_fn((5, 40), |_| StandardNormal.sample(&mut r));
        let labels: Vec<usize> = (0..40).map(|i| (i * 7) % 3).collect();
        let cfg = PretrainConfig {
            n_classes: 3,
            alpha: 2.0,
            beta: 0.5,
            atoms_per_class: 2,
            init: PretrainInit::PerClass,
            dl: DLConfig {
                iterations: 4,
                coding: CodingConfig::with_sparsity(2),
                seed: 1,
                ..Default::default()
            },
        };
        let (model, learned) = pretrain_detailed(y.view(), &labels, &cfg).unwrap();
        let stacked = learned.dictionary.atoms();
        let d_hat = stacked.slice(s![..5, ..]);
        for j in 0..6 {
            let scale = norm(d_hat.column(j));
            let rebuilt: Vec<f64> = model
                .dictionary
                .atom(j)
                .iter()
                .copied()
                .chain(model.classifier.column(j).iter().map(|v| v * 2f64.sqrt()))
                .chain(
                    model
                        .consistency
                        .column(j)
                        .iter()
                        .map(|v| v * 0.5f64.sqrt()),
                )
                .map(|v| v * scale)
                .collect();
            for (a, b) in rebuilt.iter().zip(stacked.column(j).iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        // warmup coding against D alone works on the split model
        batch_code(&model.dictionary, y.view(), &model.coding).unwrap();
    }

    #[test]
    fn pretrain_rejects_missing_class() {
        let y = Array2::from_shape_fn((3, 8), |(i, j)| (i + j) as f64 + 1.0);
        let cfg = PretrainConfig {
            atoms_per_class: 1,
            dl: DLConfig {
                coding: CodingConfig::with_sparsity(1),
                iterations: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(
            pretrain(y.view(), &[0; 8], &cfg),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn classify_cases() {
        let w = Array2::<f64>::eye(4);
        let x = SparseCode::new(4, vec![2], vec![1.0]).unwrap();
        assert_eq!(classify(w.view(), &x).unwrap().0, 2);
        let (k, scores) = classify(w.view(), &SparseCode::zeros(4)).unwrap();
        assert_eq!(k, 0);
        assert!(scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classify_matches_dense_product() {
        let mut r = rng::seeded(10);
        let w = Array2::from_shape_fn((3, 8), |_| StandardNormal.sample(&mut r));
        let dense = Array1::from_shape_fn(8, |j| if j % 3 == 0 { j as f64 - 2.5 } else { 0.0 });
        let x = SparseCode::from_dense(dense.view());
        let (k, scores) = classify(w.view(), &x).unwrap();
        let oracle = w.dot(&dense);
        for c in 0..3 {
            assert!((scores[c] - oracle[c]).abs() < 1e-12);
        }
        let best = (0..3).fold(0, |b, c| if oracle[c] > oracle[b] { c } else { b });
        assert_eq!(k, best);
    }
}
