//! Datasets: CSV ingestion, z-score normalization, class-ratio subsampling
//! and a planted-anomaly synthetic generator.
//!
//! Signals are stored column-wise (`m × N`), one CSV row per signal.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng;
use crate::sparse_coding::{Dictionary, SparseCode, SparseCodeMatrix};

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schema {
    /// Credit-card fraud table: features `V1..V28` and `Amount`, `Time`
    /// ignored, `Class` as label.
    #[serde(rename = "credit_card_ulb")]
    CreditCardULB,
    /// Every column except the optional label column is a feature.
    Generic { label_column: Option<String> },
}

impl Schema {
    pub const ULB_LABEL: &'static str = "Class";

    pub fn ulb_features() -> Vec<String> {
        (1..=28)
            .map(|i| format!("V{i}"))
            .chain(std::iter::once("Amount".to_string()))
            .collect()
    }
}

/// Generator output kept for test oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub normal_dictionary: Dictionary,
    pub anomaly_dictionary: Dictionary,
    /// Per-sample codes over `[normal atoms | anomaly atoms]`.
    pub codes: SparseCodeMatrix,
}

impl PlantedModel {
    /// Normal and anomaly atoms side by side, matching the code layout.
    pub fn joint_dictionary(&self) -> Result<Dictionary> {
        self.normal_dictionary.concat(&self.anomaly_dictionary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Csv {
        path: PathBuf,
        schema: Schema,
    },
    Synthetic {
        config: SynthConfig,
        planted: Box<PlantedModel>,
    },
    Normalized {
        parent: Box<Provenance>,
        means: Array1<f64>,
        stds: Array1<f64>,
    },
    Subsample {
        parent: Box<Provenance>,
        ratio: usize,
        seed: u64,
        indices: Vec<usize>,
    },
    InMemory,
}

impl Provenance {
    /// The synthetic ground truth, if this dataset came from the generator.
    pub fn planted(&self) -> Option<&PlantedModel> {
        match self {
            Provenance::Synthetic { planted, .. } => Some(planted),
            Provenance::Normalized { parent, .. } | Provenance::Subsample { parent, .. } => {
                parent.planted()
            }
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Provenance::Csv { path, .. } => format!("csv:{}", path.display()),
            Provenance::Synthetic { config, .. } => format!("synthetic(seed={})", config.seed),
            Provenance::Normalized { parent, .. } => format!("normalized({})", parent.describe()),
            Provenance::Subsample {
                parent,
                ratio,
                seed,
                ..
            } => {
                format!("subsample(1:{ratio}, seed={seed}, {})", parent.describe())
            }
            Provenance::InMemory => "memory".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `m × N`, one signal per column.
    pub y: Array2<f64>,
    /// 1 = anomaly.
    pub labels: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        y: Array2<f64>,
        labels: Option<Vec<u8>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            y,
            labels,
            feature_names,
            provenance: Provenance::InMemory,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        if self.feature_names.len() != self.dim() {
            return Err(Error::dims(
                "feature names",
                self.dim(),
                self.feature_names.len(),
            ));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.len() {
                return Err(Error::dims("labels", self.len(), l.len()));
            }
            if let Some(v) = l.iter().find(|&&v| v > 1) {
                return Err(Error::Data(format!("label {v} is not 0/1")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_anomalies(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|&&v| v == 1).count())
    }

    /// Labels widened to class indices, as the classifier expects.
    pub fn class_indices(&self) -> Option<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&v| v as usize).collect())
    }

    /// Columns `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select(Axis(1), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes one row per signal with a trailing `Class` column when
    /// labels exist. Values keep 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.feature_names.join(",");
        if self.labels.is_some() {
            out.push(',');
            out.push_str(Schema::ULB_LABEL);
        }
        out.push('\n');
        for (k, col) in self.y.axis_iter(Axis(1)).enumerate() {
            let mut first = true;
            for v in col {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
            if let Some(l) = &self.labels {
                let _ = write!(out, ",{}", l[k]);
            }
            out.push('\n');
        }
        out
    }
}

fn parse_cell(path: &Path, row: usize, column: &str, value: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_label(path: &Path, row: usize, column: &str, value: &str) -> Result<u8> {
    let v = parse_cell(path, row, column, value)?;
    match v {
        v if v == 0.0 => Ok(0),
        v if v == 1.0 => Ok(1),
        _ => Err(Error::Data(format!(
            "{}: row {row}: label '{value}' is not 0/1",
            path.display()
        ))),
    }
}

/// Reads a headered CSV into a dataset; row order is preserved.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let (feature_cols, label_col): (Vec<usize>, Option<usize>) = match schema {
        Schema::CreditCardULB => {
            let wanted = Schema::ulb_features();
            let missing: Vec<&str> = wanted
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(Schema::ULB_LABEL))
                .filter(|n| find(n).is_none())
                .collect();
            if !missing.is_empty() {
                return Err(Error::Data(format!(
                    "{}: missing columns {}",
                    path.display(),
                    missing.join(", ")
                )));
            }
            (
                wanted.iter().map(|n| find(n).unwrap()).collect(),
                find(Schema::ULB_LABEL),
            )
        }
        Schema::Generic { label_column } => {
            let label = match label_column {
                Some(name) => Some(find(name).ok_or_else(|| {
                    Error::Data(format!("{}: missing label column '{name}'", path.display()))
                })?),
                None => None,
            };
            (
                (0..headers.len()).filter(|&c| Some(c) != label).collect(),
                label,
            )
        }
    };
    if feature_cols.is_empty() {
        return Err(Error::Data(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let m = feature_cols.len();
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = k + 2;
        for &c in &feature_cols {
            let cell = record.get(c).ok_or_else(|| {
                Error::Data(format!("{}: row {row} is too short", path.display()))
            })?;
            values.push(parse_cell(path, row, &headers[c], cell)?);
        }
        if let Some(c) = label_col {
            let cell = record.get(c).ok_or_else(|| {
                Error::Data(format!("{}: row {row} is too short", path.display()))
            })?;
            labels.push(parse_label(path, row, &headers[c], cell)?);
        }
    }
    let n = values.len() / m;
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let y = Array2::from_shape_vec((n, m), values)
        .map_err(|e| Error::Data(e.to_string()))?
        .reversed_axes()
        .as_standard_layout()
        .into_owned();
    Ok(Dataset {
        y,
        labels: label_col.map(|_| labels),
        feature_names: feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        provenance: Provenance::Csv {
            path: path.to_path_buf(),
            schema: schema.clone(),
        },
    })
}

/// Z-scores every feature row (sample standard deviation, divisor `N−1`).
/// Constant rows become zeros.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "normalization needs at least 2 signals, got {n}"
        )));
    }
    let mut y = ds.y.clone();
    let mut means = Array1::zeros(ds.dim());
    let mut stds = Array1::zeros(ds.dim());
    for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let mean = row.sum() / n as f64;
        row.mapv_inplace(|v| v - mean);
        let sd = (row.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64).sqrt();
        let scale = ds.y.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        means[i] = mean;
        if sd <= 1e-12 * scale || sd == 0.0 {
            log::warn!(
                "feature '{}' is constant; mapped to zeros",
                ds.feature_names[i]
            );
            row.fill(0.0);
        } else {
            stds[i] = sd;
            row.mapv_inplace(|v| v / sd);
        }
    }
    Ok(Dataset {
        y,
        labels: ds.labels.clone(),
        feature_names: ds.feature_names.clone(),
        provenance: Provenance::Normalized {
            parent: Box::new(ds.provenance.clone()),
            means,
            stds,
        },
    })
}

/// Keeps every anomaly plus `ratio × anomalies` uniformly drawn normals
/// (all of them if fewer exist), shuffled with the same seed.
pub fn subsample(ds: &Dataset, ratio: usize, seed: u64) -> Result<Dataset> {
    if ratio == 0 {
        return Err(Error::InvalidParameter(
            "subsample ratio must be positive".into(),
        ));
    }
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("subsampling needs labels".into()))?;
    let anomalies: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let normals: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if anomalies.is_empty() {
        return Err(Error::Data("subsampling needs at least one anomaly".into()));
    }
    let mut r = rng::seeded(seed);
    let k = (ratio.saturating_mul(anomalies.len())).min(normals.len());
    let mut indices: Vec<usize> = anomalies;
    indices.extend(
        index::sample(&mut r, normals.len(), k)
            .into_iter()
            .map(|p| normals[p]),
    );
    indices.shuffle(&mut r);

    let mut out = ds.select(&indices);
    out.provenance = Provenance::Subsample {
        parent: Box::new(ds.provenance.clone()),
        ratio,
        seed,
        indices,
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub m: usize,
    pub normal_atoms: usize,
    pub anomaly_atoms: usize,
    pub s_gen: usize,
    pub noise_sigma: f64,
    pub disjoint_support: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_normal: 500,
            n_anomaly: 50,
            m: 16,
            normal_atoms: 4,
            anomaly_atoms: 4,
            s_gen: 2,
            noise_sigma: 0.01,
            disjoint_support: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_normal == 0 || self.m == 0 || self.normal_atoms == 0 || self.anomaly_atoms == 0 {
            return bad("synthetic counts must be positive".into());
        }
        if self.n_anomaly > self.n_normal {
            return bad(format!(
                "{} anomalies exceed {} normals",
                self.n_anomaly, self.n_normal
            ));
        }
        if self.s_gen == 0 || self.s_gen > self.normal_atoms.min(self.anomaly_atoms) {
            return bad(format!(
                "generation sparsity {} must be in 1..={}",
                self.s_gen,
                self.normal_atoms.min(self.anomaly_atoms)
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma {} is invalid", self.noise_sigma));
        }
        if self.disjoint_support && self.m < self.normal_atoms + self.anomaly_atoms {
            return bad(format!(
                "dimension {} cannot hold {} + {} mutually orthogonal directions",
                self.m, self.normal_atoms, self.anomaly_atoms
            ));
        }
        Ok(())
    }
}

fn gaussian_unit(m: usize, r: &mut rng::Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(m, |_| StandardNormal.sample(&mut *r));
        let nv = norm(v.view());
        if nv > 1e-8 {
            return v / nv;
        }
    }
}

/// Orthonormal basis of the columns of `a` (modified Gram–Schmidt).
fn orthonormal_basis(a: &Array2<f64>) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for col in a.axis_iter(Axis(1)) {
        let mut v = col.to_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.scaled_add(-c, q);
            }
        }
        let nv = norm(v.view());
        if nv > 1e-10 {
            basis.push(v / nv);
        }
    }
    basis
}

fn planted_code(
    offset: usize,
    atoms: usize,
    s: usize,
    dim: usize,
    r: &mut rng::Rng,
) -> Result<SparseCode> {
    let mut support: Vec<usize> = index::sample(&mut *r, atoms, s).into_vec();
    support.sort_unstable();
    let values = support
        .iter()
        .map(|_| {
            let mag = r.random_range(0.5..1.5);
            if r.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    SparseCode::new(
        dim,
        support.into_iter().map(|j| j + offset).collect(),
        values,
    )
}

/// Draws a planted-anomaly dataset: normals are sparse combinations of a
/// random unit-atom dictionary, anomalies of a second dictionary which,
/// with `disjoint_support`, is orthogonal to the first. Normals come first.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let m = cfg.m;

    let mut normal = Array2::zeros((m, cfg.normal_atoms));
    for j in 0..cfg.normal_atoms {
        normal.column_mut(j).assign(&gaussian_unit(m, &mut r));
    }
    let basis = if cfg.disjoint_support {
        orthonormal_basis(&normal)
    } else {
        Vec::new()
    };
    let mut anomaly = Array2::zeros((m, cfg.anomaly_atoms));
    for j in 0..cfg.anomaly_atoms {
        loop {
            let mut v = gaussian_unit(m, &mut r);
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&v);
                    v.scaled_add(-c, q);
                }
            }
            let nv = norm(v.view());
            if nv > 1e-6 {
                anomaly.column_mut(j).assign(&(v / nv));
                break;
            }
        }
    }
    let normal = Dictionary::new(normal)?;
    let anomaly = Dictionary::new(anomaly)?;
    let joint = normal.concat(&anomaly)?;

    let dim = cfg.normal_atoms + cfg.anomaly_atoms;
    let n = cfg.n_normal + cfg.n_anomaly;
    let mut codes = Vec::with_capacity(n);
    for k in 0..n {
        codes.push(if k < cfg.n_normal {
            planted_code(0, cfg.normal_atoms, cfg.s_gen, dim, &mut r)?
        } else {
            planted_code(cfg.normal_atoms, cfg.anomaly_atoms, cfg.s_gen, dim, &mut r)?
        });
    }
    let mut y = Array2::zeros((m, n));
    for (k, code) in codes.iter().enumerate() {
        let mut col = joint.reconstruct(code);
        if cfg.noise_sigma > 0.0 {
            for v in col.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut r);
                *v += cfg.noise_sigma * e;
            }
        }
        y.column_mut(k).assign(&col);
    }
    let labels = (0..n).map(|k| (k >= cfg.n_normal) as u8).collect();
    Ok(Dataset {
        y,
        labels: Some(labels),
        feature_names: (1..=m).map(|i| format!("f{i}")).collect(),
        provenance: Provenance::Synthetic {
            config: cfg.clone(),
            planted: Box::new(PlantedModel {
                normal_dictionary: normal,
                anomaly_dictionary: anomaly,
                codes: SparseCodeMatrix::new(dim, codes)?,
            }),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary_learning::{train, DLConfig};
    use crate::sparse_coding::{batch_code, omp, representation_errors, CodingConfig};
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ulb_toy() -> String {
        let mut header = vec!["Time".to_string()];
        header.extend(Schema::ulb_features());
        header.push("Class".into());
        let mut s = header.join(",") + "\n";
        for (row, class) in [(0, "\"0\""), (1, "\"1\"")] {
            let mut cells = vec![format!("{}", row * 10)];
            cells.extend((1..=29).map(|j| format!("{}", row as f64 + j as f64 * 0.5)));
            cells.push(class.into());
            s += &(cells.join(",") + "\n");
        }
        s
    }

    #[test]
    fn ulb_toy_schema() {
        let f = write_tmp(&ulb_toy());
        let ds = load_csv(f.path(), &Schema::CreditCardULB).unwrap();
        assert_eq!((ds.dim(), ds.len()), (29, 2));
        assert_eq!(ds.labels, Some(vec![0, 1]));
        assert_eq!(ds.feature_names[0], "V1");
        assert_eq!(ds.feature_names[28], "Amount");
        assert_eq!(ds.y[[0, 0]], 0.5);
        assert_eq!(ds.y[[28, 1]], 15.5);
    }

    #[test]
    fn ulb_missing_column() {
        let f = write_tmp("Time,V1,Amount,Class\n0,1,2,0\n");
        let err = load_csv(f.path(), &Schema::CreditCardULB).unwrap_err();
        assert!(err.to_string().contains("V2"));
    }

    #[test]
    fn generic_without_label() {
        let f = write_tmp("a,b,c\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), &Schema::Generic { label_column: None }).unwrap();
        assert!(ds.labels.is_none());
        assert_eq!((ds.dim(), ds.len()), (3, 3));
        assert_eq!(ds.y.column(1).to_vec(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn generic_with_label() {
        let f = write_tmp("a,y,b\n1,0,3\n4,1,6\n");
        let ds = load_csv(
            f.path(),
            &Schema::Generic {
                label_column: Some("y".into()),
            },
        )
        .unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.labels, Some(vec![0, 1]));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let f = write_tmp("a,b\n1,2\n3,oops\n");
        match load_csv(f.path(), &Schema::Generic { label_column: None }) {
            Err(Error::NonNumeric {
                row, column, value, ..
            }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "b", "oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("a,b\n");
        assert!(load_csv(f.path(), &Schema::Generic { label_column: None }).is_err());
        let f = write_tmp("");
        assert!(load_csv(f.path(), &Schema::Generic { label_column: None }).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = synth_generate(&SynthConfig {
            n_normal: 20,
            n_anomaly: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.write_csv(f.path()).unwrap();
        let back = load_csv(
            f.path(),
            &Schema::Generic {
                label_column: Some("Class".into()),
            },
        )
        .unwrap();
        assert_eq!(back.y, ds.y);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.feature_names, ds.feature_names);
    }

    fn row_stats(y: &Array2<f64>) -> Vec<(f64, f64)> {
        let n = y.ncols() as f64;
        y.axis_iter(Axis(0))
            .map(|r| {
                let mean = r.sum() / n;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (mean, var.sqrt())
            })
            .collect()
    }

    #[test]
    fn normalize_two_points() {
        let ds = Dataset::new(ndarray::array![[1.0, 3.0]], None, vec!["x".into()]).unwrap();
        let out = normalize(&ds).unwrap();
        let (mean, sd) = row_stats(&out.y)[0];
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        assert!((out.y[[0, 0]] + out.y[[0, 1]]).abs() < 1e-15);
    }

    #[test]
    fn normalize_random_matrix() {
        let mut r = rng::seeded(4);
        let y = Array2::from_shape_fn((7, 300), |(i, _)| {
            let e: f64 = StandardNormal.sample(&mut r);
            3.0 * e * (i as f64 + 1.0) + 10.0 * i as f64
        });
        let ds = Dataset::new(y, None, (0..7).map(|i| i.to_string()).collect()).unwrap();
        let out = normalize(&ds).unwrap();
        for (mean, sd) in row_stats(&out.y) {
            assert!(mean.abs() <= 1e-12);
            assert!((sd - 1.0).abs() <= 1e-12);
        }
        let again = normalize(&out).unwrap();
        for (a, b) in again.y.iter().zip(out.y.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_constant_row() {
        let ds = Dataset::new(
            ndarray::array![[0.1, 0.1, 0.1], [1.0, 2.0, 4.0]],
            None,
            vec!["c".into(), "x".into()],
        )
        .unwrap();
        let out = normalize(&ds).unwrap();
        assert!(out.y.row(0).iter().all(|&v| v == 0.0));
        let single = Dataset::new(ndarray::array![[1.0]], None, vec!["x".into()]).unwrap();
        assert!(normalize(&single).is_err());
    }

    /// Anomalies are the last `n_anomaly` columns; column k holds (2k, 2k+1).
    fn labeled(n_normal: usize, n_anomaly: usize) -> Dataset {
        let n = n_normal + n_anomaly;
        let y = Array2::from_shape_fn((2, n), |(i, k)| (k * 2 + i) as f64);
        let labels = (0..n).map(|k| (k >= n_normal) as u8).collect();
        Dataset::new(y, Some(labels), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn subsample_keeps_all_anomalies() {
        let ds = labeled(200, 5);
        assert_eq!(ds.n_anomalies(), Some(5));
        let out = subsample(&ds, 10, 9).unwrap();
        assert_eq!(out.len(), 55);
        assert_eq!(out.n_anomalies(), Some(5));
        let again = subsample(&ds, 10, 9).unwrap();
        assert_eq!(out, again);
        let other = subsample(&ds, 10, 10).unwrap();
        assert_ne!(out.y, other.y);
        // every retained column is an original column with its label
        for k in 0..out.len() {
            let orig = (out.y[[0, k]] / 2.0) as usize;
            assert_eq!(
                out.labels.as_ref().unwrap()[k],
                ds.labels.as_ref().unwrap()[orig]
            );
        }
    }

    #[test]
    fn subsample_with_few_normals_keeps_everything() {
        let ds = labeled(12, 4);
        let out = subsample(&ds, 100, 1).unwrap();
        assert_eq!(out.len(), 16);
    }

    #[test]
    fn subsample_errors() {
        let ds = Dataset::new(Array2::zeros((1, 3)), None, vec!["a".into()]).unwrap();
        assert!(subsample(&ds, 10, 0).is_err());
        let ds =
            Dataset::new(Array2::zeros((1, 3)), Some(vec![0, 0, 0]), vec!["a".into()]).unwrap();
        assert!(subsample(&ds, 10, 0).is_err());
    }

    #[test]
    fn synth_noiseless_is_exactly_sparse() {
        let cfg = SynthConfig {
            n_normal: 60,
            n_anomaly: 0,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let planted = ds.provenance.planted().unwrap();
        let coding = CodingConfig {
            sparsity: cfg.s_gen,
            residual_tol: 1e-12,
        };
        for k in 0..ds.len() {
            let x = omp(&planted.normal_dictionary, ds.y.column(k), &coding).unwrap();
            let r = &ds.y.column(k) - &planted.normal_dictionary.reconstruct(&x);
            assert!(norm(r.view()) <= 1e-12 * norm(ds.y.column(k)));
            assert!(x.nnz() <= cfg.s_gen);
        }
    }

    #[test]
    fn synth_is_reproducible_and_orthogonal() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 550);
        assert_eq!(a.n_anomalies(), Some(50));
        let p = a.provenance.planted().unwrap();
        let cross = p
            .normal_dictionary
            .atoms()
            .t()
            .dot(&p.anomaly_dictionary.atoms());
        assert!(cross.iter().all(|v| v.abs() <= 1e-10));
        let c = synth_generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn synth_rejects_impossible_orthogonality() {
        let cfg = SynthConfig {
            m: 6,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).is_err());
        assert!(synth_generate(&SynthConfig {
            disjoint_support: false,
            ..cfg
        })
        .is_ok());
    }

    #[test]
    fn synth_anomalies_are_poorly_represented_by_normal_dictionary() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        let normals: Vec<usize> = (0..500).collect();
        let yn = ds.y.select(Axis(1), &normals);
        let dl = DLConfig {
            n_atoms: 8,
            iterations: 10,
            coding: CodingConfig::with_sparsity(2),
            seed: 1,
            replace_unused: true,
        };
        let d = train(yn.view(), &dl).unwrap().dictionary;
        let x = batch_code(&d, ds.y.view(), &dl.coding).unwrap();
        let e = representation_errors(&d, ds.y.view(), &x).unwrap();
        let normal_mean = e.slice(ndarray::s![..500]).mean().unwrap();
        let anomaly_mean = e.slice(ndarray::s![500..]).mean().unwrap();
        assert!(anomaly_mean > 3.0 * normal_mean);
    }
}
