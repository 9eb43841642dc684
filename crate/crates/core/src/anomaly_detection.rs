//! Unsupervised anomaly filters built on dictionary learning.
//!
//! * AD-DL grows a dictionary stage by stage, each stage trained on the
//!   current anomaly candidates, and keeps as candidates the signals whose
//!   representation error exceeds the mean error of the first stage.
//! * The popularity filter learns a fresh dictionary on the candidates at
//!   every iteration and drops the signals represented only by popular
//!   atoms (atoms used by more than `N_a` signals).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dictionary_learning::{train, DLConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sparse_coding::{
    atom_popularity, batch_code, representation_errors, CodingConfig, Dictionary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ADDLConfig {
    pub global_iterations: usize,
    pub stage: DLConfig,
    pub coding: CodingConfig,
}

impl Default for ADDLConfig {
    fn default() -> Self {
        ADDLConfig {
            global_iterations: 10,
            stage: DLConfig::default(),
            coding: CodingConfig::default(),
        }
    }
}

impl ADDLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_iterations == 0 {
            return Err(Error::InvalidParameter(
                "AD-DL needs at least one global iteration".into(),
            ));
        }
        self.stage.validate()?;
        self.coding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopularityConfig {
    pub n_anomalies: usize,
    pub stage: DLConfig,
    pub coding: CodingConfig,
    pub max_iterations: usize,
    /// Keep signals that use any popular atom instead of any rare one.
    pub literal_set_builder: bool,
}

impl Default for PopularityConfig {
    fn default() -> Self {
        PopularityConfig {
            n_anomalies: 1,
            stage: DLConfig::default(),
            coding: CodingConfig::default(),
            max_iterations: 60,
            literal_set_builder: false,
        }
    }
}

impl PopularityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_anomalies == 0 {
            return Err(Error::InvalidParameter(
                "n_anomalies must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be positive".into(),
            ));
        }
        self.stage.validate()?;
        self.coding.validate()?;
        if self.stage.n_atoms < self.coding.sparsity {
            return Err(Error::SparsityTooLarge {
                sparsity: self.coding.sparsity,
                atoms: self.stage.n_atoms,
            });
        }
        Ok(())
    }
}

/// Runner state after termination.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Candidate anomaly indices, ascending.
    pub candidate_set: Vec<usize>,
    /// AD-DL only.
    pub accumulated_dictionary: Option<Dictionary>,
    /// AD-DL only; fixed after the first global iteration.
    pub e_mean: Option<f64>,
    /// Completed iterations.
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub iteration: usize,
    pub card_a: usize,
    pub false_positives: Option<usize>,
    pub false_negatives: Option<usize>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub records: Vec<FilterRecord>,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `iter,card_A,fp,fn,mean_err`; fp/fn are empty without ground truth.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,card_A,fp,fn,mean_err\n");
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.16e}",
                r.iteration,
                r.card_a,
                opt(r.false_positives),
                opt(r.false_negatives),
                r.mean_error
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// 1 = anomaly.
    pub labels: Vec<u8>,
    pub trace: FilterTrace,
    pub state: FilterState,
}

fn check_truth(truth: Option<&[u8]>, n: usize) -> Result<()> {
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::dims("ground-truth labels", n, t.len()));
        }
        if let Some(&v) = t.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("ground-truth label {v} is not 0/1")));
        }
    }
    Ok(())
}

fn labels_of(candidates: &[usize], n: usize) -> Vec<u8> {
    let mut labels = vec![0u8; n];
    for &i in candidates {
        labels[i] = 1;
    }
    labels
}

/// `(fp, fn)` of the candidate set against the truth.
fn errors_against(candidates: &[usize], truth: Option<&[u8]>) -> (Option<usize>, Option<usize>) {
    match truth {
        None => (None, None),
        Some(t) => {
            let est = labels_of(candidates, t.len());
            let fp = est
                .iter()
                .zip(t)
                .filter(|&(&e, &g)| e == 1 && g == 0)
                .count();
            let fneg = est
                .iter()
                .zip(t)
                .filter(|&(&e, &g)| e == 0 && g == 1)
                .count();
            (Some(fp), Some(fneg))
        }
    }
}

fn select_columns(y: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    y.select(Axis(1), idx)
}

/// AD-DL filter.
pub fn addl_run(
    y: ArrayView2<'_, f64>,
    cfg: &ADDLConfig,
    truth: Option<&[u8]>,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    let n = y.ncols();
    check_truth(truth, n)?;
    if n < cfg.stage.n_atoms {
        return Err(Error::InvalidParameter(format!(
            "{n} signals cannot train {} atoms",
            cfg.stage.n_atoms
        )));
    }

    let mut candidates: Vec<usize> = (0..n).collect();
    let mut accumulated: Option<Dictionary> = None;
    let mut e_mean: Option<f64> = None;
    let mut trace = FilterTrace::default();

    for i in 0..cfg.global_iterations {
        if candidates.is_empty() {
            log::info!("AD-DL: candidate set empty after {i} iterations");
            break;
        }
        let stage_cfg = DLConfig {
            seed: derive_seed(cfg.stage.seed, i as u64),
            ..cfg.stage
        };
        let stage = train(select_columns(y, &candidates).view(), &stage_cfg)?.dictionary;
        let dict = match accumulated.take() {
            None => stage,
            Some(d) => d.concat(&stage)?,
        };

        let codes = batch_code(&dict, y, &cfg.coding)?;
        let errors = representation_errors(&dict, y, &codes)?;
        let mean = errors.sum() / n as f64;
        let threshold = *e_mean.get_or_insert(mean);
        candidates = (0..n).filter(|&k| errors[k] > threshold).collect();
        accumulated = Some(dict);

        let (fp, fneg) = errors_against(&candidates, truth);
        trace.records.push(FilterRecord {
            iteration: i + 1,
            card_a: candidates.len(),
            false_positives: fp,
            false_negatives: fneg,
            mean_error: mean,
        });
        log::debug!("AD-DL iteration {}: |A| = {}", i + 1, candidates.len());
    }

    Ok(FilterOutcome {
        labels: labels_of(&candidates, n),
        state: FilterState {
            iteration: trace.len(),
            candidate_set: candidates,
            accumulated_dictionary: accumulated,
            e_mean,
        },
        trace,
    })
}

/// Atom-popularity filter.
pub fn popularity_filter_run(
    y: ArrayView2<'_, f64>,
    cfg: &PopularityConfig,
    truth: Option<&[u8]>,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    let n = y.ncols();
    check_truth(truth, n)?;
    let n_a = cfg.n_anomalies;
    if n_a >= n {
        return Err(Error::InvalidParameter(format!(
            "n_anomalies {n_a} must be below the signal count {n}"
        )));
    }

    let mut candidates: Vec<usize> = (0..n).collect();
    let mut trace = FilterTrace::default();

    for it in 0..cfg.max_iterations {
        if candidates.len() <= n_a {
            break;
        }
        let ya = select_columns(y, &candidates);
        let stage_cfg = DLConfig {
            seed: derive_seed(cfg.stage.seed, it as u64),
            ..cfg.stage
        };
        let dict = train(ya.view(), &stage_cfg)?.dictionary;
        let codes = batch_code(&dict, ya.view(), &cfg.coding)?;
        let errors = representation_errors(&dict, ya.view(), &codes)?;
        let popularity = atom_popularity(&codes);

        let keep = |k: usize| {
            let support = codes.column(k).support();
            if cfg.literal_set_builder {
                support.iter().any(|&j| popularity[j] > n_a)
            } else {
                support.iter().any(|&j| popularity[j] <= n_a)
            }
        };
        let next: Vec<usize> = (0..candidates.len())
            .filter(|&k| keep(k))
            .map(|k| candidates[k])
            .collect();
        let stalled = next.len() >= candidates.len();
        candidates = next;

        let (fp, fneg) = errors_against(&candidates, truth);
        trace.records.push(FilterRecord {
            iteration: it + 1,
            card_a: candidates.len(),
            false_positives: fp,
            false_negatives: fneg,
            mean_error: errors.mean().unwrap_or(0.0),
        });
        log::debug!(
            "popularity iteration {}: |A| = {}",
            it + 1,
            candidates.len()
        );
        if stalled {
            break;
        }
    }

    Ok(FilterOutcome {
        labels: labels_of(&candidates, n),
        state: FilterState {
            iteration: trace.len(),
            candidate_set: candidates,
            accumulated_dictionary: None,
            e_mean: None,
        },
        trace,
    })
}
