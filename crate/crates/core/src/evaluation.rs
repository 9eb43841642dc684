//! Confusion metrics, experiment configuration and the experiment driver.
//!
//! An experiment reads a TOML [`ExperimentConfig`], runs one method and
//! writes its artifacts plus a `result.json` (config echo, seed, metrics,
//! wall time) into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::anomaly_detection::{
    addl_run, popularity_filter_run, ADDLConfig, FilterOutcome, PopularityConfig,
};
use crate::data_io::{
    load_csv, normalize, subsample, synth_generate, Dataset, Schema, SynthConfig,
};
use crate::error::{Error, Result};
use crate::online_learning::{LambdaPolicy, OnlineState, DEFAULT_FORGETTING};
use crate::persistence::{save_checkpoint, save_model};
use crate::sparse_coding::batch_code;
use crate::supervised_pretrain::{
    classify, pretrain_detailed, DiscriminativeModel, PretrainConfig,
};

pub const RESULT_FILE: &str = "result.json";

/// Counts with anomaly (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub n: usize,
}

impl ConfusionReport {
    pub fn recall(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }
}

pub fn confusion(truth: &[u8], estimates: &[u8]) -> Result<ConfusionReport> {
    if truth.len() != estimates.len() {
        return Err(Error::dims("estimates", truth.len(), estimates.len()));
    }
    if truth.is_empty() {
        return Err(Error::Data("confusion of an empty label set".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&t, &e) in truth.iter().zip(estimates) {
        match (t, e) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fn_ += 1,
            _ => return Err(Error::Data(format!("labels must be 0/1, got ({t}, {e})"))),
        }
    }
    let n = truth.len();
    Ok(ConfusionReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / n as f64,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pretrain,
    Toddler,
    Addl,
    Popularity,
    Synth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pretrain => "pretrain",
            Method::Toddler => "toddler",
            Method::Addl => "addl",
            Method::Popularity => "popularity",
            Method::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub schema: Schema,
    /// Z-score every feature before subsampling.
    pub normalize: bool,
    /// Normals kept per anomaly.
    pub subsample_ratio: Option<usize>,
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DataSource::Synthetic,
            path: None,
            schema: Schema::CreditCardULB,
            normalize: false,
            subsample_ratio: None,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToddlerConfig {
    pub phi: f64,
    pub policy: LambdaPolicy,
    /// Leading share of the dataset used for supervised pretraining; the
    /// rest is streamed.
    pub pretrain_fraction: f64,
}

impl Default for ToddlerConfig {
    fn default() -> Self {
        ToddlerConfig {
            phi: DEFAULT_FORGETTING,
            policy: LambdaPolicy::GramNorm,
            pretrain_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Propagated to every seeded component (generator, subsampling,
    /// dictionary initialization).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toddler: Option<ToddlerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addl: Option<ADDLConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<PopularityConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(method: Method) -> Self {
        ExperimentConfig {
            method,
            seed: 0,
            dataset: DatasetConfig::default(),
            pretrain: None,
            toddler: None,
            addl: None,
            popularity: None,
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Parses a config for a known method. The `method` key may be left
    /// out; when present it must agree.
    pub fn from_toml_str_for(text: &str, method: Method) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match table.get("method").map(|v| v.as_str()) {
            None => {
                table.insert("method".into(), toml::Value::String(method.name().into()));
            }
            Some(Some(name)) if name == method.name() => {}
            Some(other) => {
                return Err(Error::Config(format!(
                    "config is for method {}, not '{}'",
                    other.map_or("<non-string>".to_string(), |s| format!("'{s}'")),
                    method.name()
                )))
            }
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn from_file_for(path: &Path, method: Method) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str_for(&text, method)
    }

    /// Rejects parameter blocks that do not belong to the selected method.
    pub fn validate(&self) -> Result<()> {
        let allowed: &[&str] = match self.method {
            Method::Pretrain => &["pretrain"],
            Method::Toddler => &["pretrain", "toddler"],
            Method::Addl => &["addl"],
            Method::Popularity => &["popularity"],
            Method::Synth => &[],
        };
        let present = [
            ("pretrain", self.pretrain.is_some()),
            ("toddler", self.toddler.is_some()),
            ("addl", self.addl.is_some()),
            ("popularity", self.popularity.is_some()),
        ];
        for (block, is_set) in present {
            if is_set && !allowed.contains(&block) {
                return Err(Error::Config(format!(
                    "parameter block [{block}] does not match method '{}'",
                    self.method.name()
                )));
            }
        }
        if self.dataset.source == DataSource::Csv && self.dataset.path.is_none() {
            return Err(Error::Config("csv dataset source needs a path".into()));
        }
        if self.dataset.subsample_ratio == Some(0) {
            return Err(Error::Config("subsample_ratio must be positive".into()));
        }
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        wrap(self.dataset.synth.validate())?;
        if let Some(p) = &self.pretrain {
            wrap(p.validate())?;
        }
        if let Some(t) = &self.toddler {
            if !(t.phi > 0.0 && t.phi <= 1.0) {
                return Err(Error::Config(format!("phi {} outside (0, 1]", t.phi)));
            }
            if !(t.pretrain_fraction > 0.0 && t.pretrain_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "pretrain_fraction {} outside (0, 1)",
                    t.pretrain_fraction
                )));
            }
        }
        if let Some(a) = &self.addl {
            wrap(a.validate())?;
        }
        if let Some(p) = &self.popularity {
            wrap(p.validate())?;
        }
        Ok(())
    }

    /// Fills the selected method's blocks with defaults and pushes the
    /// top-level seed into every seeded component.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut cfg = self.clone();
        let seed = cfg.seed;
        cfg.dataset.synth.seed = seed;
        match cfg.method {
            Method::Pretrain => {
                cfg.pretrain.get_or_insert_with(Default::default).dl.seed = seed;
            }
            Method::Toddler => {
                cfg.pretrain.get_or_insert_with(Default::default).dl.seed = seed;
                cfg.toddler.get_or_insert_with(Default::default);
            }
            Method::Addl => {
                cfg.addl.get_or_insert_with(Default::default).stage.seed = seed;
            }
            Method::Popularity => {
                cfg.popularity
                    .get_or_insert_with(Default::default)
                    .stage
                    .seed = seed;
            }
            Method::Synth => {}
        }
        Ok(cfg)
    }
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dataset: String,
    pub metrics: Value,
    /// File names written next to the result file.
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

impl ExperimentResult {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Loads the configured dataset: CSV or generator, then optional
/// normalization, then optional class-ratio subsampling.
pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    let ds = match cfg.source {
        DataSource::Synthetic => synth_generate(&SynthConfig {
            seed,
            ..cfg.synth.clone()
        })?,
        DataSource::Csv => {
            let path = cfg
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("csv dataset source needs a path".into()))?;
            load_csv(path, &cfg.schema)?
        }
    };
    let ds = if cfg.normalize { normalize(&ds)? } else { ds };
    match cfg.subsample_ratio {
        Some(ratio) => subsample(&ds, ratio, seed),
        None => Ok(ds),
    }
}

fn labels_of(ds: &Dataset) -> Result<&[u8]> {
    ds.labels
        .as_deref()
        .ok_or_else(|| Error::Data("this method needs a labeled dataset".into()))
}

/// Codes every column and classifies it with the model's classifier.
pub fn predict(model: &DiscriminativeModel, ds: &Dataset) -> Result<Vec<u8>> {
    let codes = batch_code(&model.dictionary, ds.y.view(), &model.coding)?;
    codes
        .iter()
        .map(|x| classify(model.classifier.view(), x).map(|(k, _)| k.min(u8::MAX as usize) as u8))
        .collect()
}

fn binary(estimates: &[u8]) -> Result<()> {
    match estimates.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::Config(format!(
            "predicted class {v}; anomaly experiments need n_classes = 2"
        ))),
        None => Ok(()),
    }
}

fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }
}

fn run_pretrain(cfg: &ExperimentConfig, ds: &Dataset, out: &mut Artifacts) -> Result<Value> {
    let pcfg = cfg.pretrain.as_ref().expect("resolved config");
    let truth = labels_of(ds)?;
    let classes = ds.class_indices().expect("labels checked");
    let (model, learned) = pretrain_detailed(ds.y.view(), &classes, pcfg)?;
    let estimates = predict(&model, ds)?;
    binary(&estimates)?;
    let report = confusion(truth, &estimates)?;
    save_model(&model, &out.path("model.bin"))?;
    Ok(json!({
        "training_confusion": report,
        "objective_final": learned.objective_trace.last().copied(),
        "unused_atoms": learned.unused_atoms.len(),
        "n_atoms": model.n_atoms(),
    }))
}

fn run_toddler(cfg: &ExperimentConfig, ds: &Dataset, out: &mut Artifacts) -> Result<Value> {
    let pcfg = cfg.pretrain.as_ref().expect("resolved config");
    let tcfg = cfg.toddler.as_ref().expect("resolved config");
    let truth = labels_of(ds)?;
    let n = ds.len();
    let n_pre = ((tcfg.pretrain_fraction * n as f64).ceil() as usize).clamp(1, n);
    if n_pre == n {
        return Err(Error::Data(
            "nothing left to stream after pretraining".into(),
        ));
    }
    let pre_idx: Vec<usize> = (0..n_pre).collect();
    let pre = ds.select(&pre_idx);
    let classes = pre.class_indices().expect("labels checked");
    let (model, _) = pretrain_detailed(pre.y.view(), &classes, pcfg)?;
    let pre_estimates = predict(&model, &pre)?;
    binary(&pre_estimates)?;
    let pre_report = confusion(&truth[..n_pre], &pre_estimates)?;

    let warmup = batch_code(&model.dictionary, pre.y.view(), &model.coding)?;
    let mut state = OnlineState::init(model, &warmup, tcfg.phi, tcfg.policy)?;

    let c = state.model().n_classes();
    let mut log = String::from("index,truth,predicted");
    for k in 0..c {
        log.push_str(&format!(",score_{k}"));
    }
    log.push_str(",lambda1,lambda2,reconstruction_error\n");
    let mut estimates = Vec::with_capacity(n - n_pre);
    for i in n_pre..n {
        let o = state.toddler_step(ds.y.column(i))?;
        let predicted = o.predicted_class.min(u8::MAX as usize) as u8;
        estimates.push(predicted);
        log.push_str(&format!("{i},{},{predicted}", truth[i]));
        for s in &o.scores {
            log.push_str(&format!(",{s:.16e}"));
        }
        log.push_str(&format!(
            ",{:.16e},{:.16e},{:.16e}\n",
            o.lambda1, o.lambda2, o.reconstruction_error
        ));
    }
    binary(&estimates)?;
    let report = confusion(&truth[n_pre..], &estimates)?;
    std::fs::write(out.path("predictions.csv"), log)?;
    save_checkpoint(&state, &out.path("checkpoint.bin"))?;
    Ok(json!({
        "confusion": report,
        "pretrain_confusion": pre_report,
        "n_pretrain": n_pre,
        "n_stream": n - n_pre,
        "inverse_residual": state.inverse_residual(),
    }))
}

fn filter_metrics(ds: &Dataset, outcome: &FilterOutcome, out: &mut Artifacts) -> Result<Value> {
    write_labels(&out.path("labels.csv"), &outcome.labels)?;
    outcome.trace.write_csv(&out.path("trace.csv"))?;
    let report = match &ds.labels {
        Some(t) => Some(confusion(t, &outcome.labels)?),
        None => None,
    };
    Ok(json!({
        "confusion": report,
        "recall": report.and_then(|r| r.recall()),
        "iterations": outcome.state.iteration,
        "final_candidates": outcome.state.candidate_set.len(),
        "labeled_normal_fraction":
            1.0 - outcome.state.candidate_set.len() as f64 / ds.len().max(1) as f64,
        "e_mean": outcome.state.e_mean,
    }))
}

/// Runs one experiment and writes its artifacts and `result.json` into the
/// configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let cfg = cfg.resolved()?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let mut out = Artifacts {
        dir: cfg.output.dir.clone(),
        names: Vec::new(),
    };
    let ds = load_dataset(&cfg.dataset, cfg.seed)?;
    log::info!(
        "{}: {} signals of dimension {} from {}",
        cfg.method.name(),
        ds.len(),
        ds.dim(),
        ds.provenance.describe()
    );

    let metrics = match cfg.method {
        Method::Pretrain => run_pretrain(&cfg, &ds, &mut out)?,
        Method::Toddler => run_toddler(&cfg, &ds, &mut out)?,
        Method::Addl => {
            let a = cfg.addl.as_ref().expect("resolved config");
            let outcome = addl_run(ds.y.view(), a, ds.labels.as_deref())?;
            filter_metrics(&ds, &outcome, &mut out)?
        }
        Method::Popularity => {
            let p = cfg.popularity.as_ref().expect("resolved config");
            let outcome = popularity_filter_run(ds.y.view(), p, ds.labels.as_deref())?;
            filter_metrics(&ds, &outcome, &mut out)?
        }
        Method::Synth => {
            ds.write_csv(&out.path("dataset.csv"))?;
            json!({
                "n": ds.len(),
                "m": ds.dim(),
                "n_anomalies": ds.n_anomalies(),
            })
        }
    };

    let result = ExperimentResult {
        method: cfg.method,
        seed: cfg.seed,
        dataset: ds.provenance.describe(),
        config: cfg.clone(),
        metrics,
        artifacts: out.names,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    std::fs::write(cfg.output.dir.join(RESULT_FILE), result.to_json()?)?;
    Ok(result)
}

/// Reads a 0/1 label column from a headered CSV. Without an explicit
/// column name the first of `label`, `Class`, `predicted` is used.
pub fn read_label_column(path: &Path, column: Option<&str>) -> Result<Vec<u8>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let name = match column {
        Some(c) => c.to_string(),
        None => ["label", "Class", "predicted"]
            .iter()
            .find(|c| headers.iter().any(|h| h == *c))
            .map(|c| c.to_string())
            .ok_or_else(|| Error::Data(format!("{}: no label column found", path.display())))?,
    };
    let idx = headers
        .iter()
        .position(|h| *h == name)
        .ok_or_else(|| Error::Data(format!("{}: missing column '{name}'", path.display())))?;
    let mut labels = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("").trim();
        match cell.parse::<f64>() {
            Ok(v) if v == 0.0 => labels.push(0),
            Ok(v) if v == 1.0 => labels.push(1),
            _ => {
                return Err(Error::NonNumeric {
                    path: path.to_path_buf(),
                    row: k + 2,
                    column: name,
                    value: cell.to_string(),
                })
            }
        }
    }
    Ok(labels)
}
