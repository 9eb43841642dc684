use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dictad::data_io::Schema;
use dictad::evaluation::{
    confusion, read_label_column, run_experiment, DataSource, ExperimentConfig, Method,
};
use dictad::online_learning::LambdaPolicy;
use dictad::{Error, ErrorKind, Result};

const THREADS_VAR: &str = "DICTAD_THREADS";

#[derive(Parser)]
#[command(
    name = "dictad",
    version,
    about = "Dictionary-learning anomaly detection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Supervised discriminative pretraining; writes model.bin.
    Pretrain(RunArgs),
    /// Pretrain on a leading split, then stream the rest online.
    Toddler(RunArgs),
    /// Unsupervised AD-DL filter.
    Addl(RunArgs),
    /// Unsupervised atom-popularity filter.
    Popularity(RunArgs),
    /// Write a planted synthetic dataset.
    Synth(RunArgs),
    /// Confusion counts of a prediction file against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; the `method` key may be omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Read this CSV instead of generating synthetic data.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    schema: Option<SchemaArg>,
    /// Label column for the generic schema.
    #[arg(long, value_name = "NAME")]
    label_column: Option<String>,
    /// Z-score every feature.
    #[arg(long)]
    normalize: bool,
    /// Normals kept per anomaly.
    #[arg(long, value_name = "N")]
    ratio: Option<usize>,

    #[arg(long)]
    n_normal: Option<usize>,
    #[arg(long)]
    n_anomaly: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,

    /// Sparsity s of every coding step.
    #[arg(long)]
    sparsity: Option<usize>,
    /// Relative residual stopping tolerance of every coding step.
    #[arg(long)]
    residual_tol: Option<f64>,
    /// Dictionary-learning iterations per training call.
    #[arg(long)]
    iterations: Option<usize>,
    /// Atoms per class (pretrain, toddler) or per stage (addl, popularity).
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,

    /// Forgetting factor.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, requires = "lambda2")]
    lambda1: Option<f64>,
    #[arg(long, requires = "lambda1")]
    lambda2: Option<f64>,
    #[arg(long)]
    pretrain_fraction: Option<f64>,

    /// AD-DL global iterations.
    #[arg(long)]
    global_iterations: Option<usize>,
    /// Assumed anomaly count N_a.
    #[arg(long)]
    anomalies: Option<usize>,
    /// Popularity filter iteration cap.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Keep signals using a popular atom instead of a rare one.
    #[arg(long)]
    literal: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV holding the ground truth.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_name = "NAME")]
    truth_column: Option<String>,
    /// CSV holding the estimates (labels.csv, predictions.csv, ...).
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_name = "NAME")]
    predicted_column: Option<String>,
    /// Also write confusion.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Ulb,
    Generic,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    GramNorm,
    ModelNorms,
    Fixed,
}

fn not_for(flag: &str, method: Method) -> Error {
    Error::Config(format!("--{flag} does not apply to '{}'", method.name()))
}

fn build_config(method: Method, a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_file_for(path, method)?,
        None => ExperimentConfig::new(method),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &a.out {
        cfg.output.dir = out.clone();
    }

    let ds = &mut cfg.dataset;
    if let Some(path) = &a.data {
        ds.source = DataSource::Csv;
        ds.path = Some(path.clone());
    }
    match a.schema {
        Some(SchemaArg::Ulb) => {
            if a.label_column.is_some() {
                return Err(Error::Config(
                    "--label-column needs --schema generic".into(),
                ));
            }
            ds.schema = Schema::CreditCardULB;
        }
        Some(SchemaArg::Generic) => {
            ds.schema = Schema::Generic {
                label_column: a.label_column.clone(),
            };
        }
        None => {
            if let Some(name) = &a.label_column {
                ds.schema = Schema::Generic {
                    label_column: Some(name.clone()),
                };
            }
        }
    }
    if a.normalize {
        ds.normalize = true;
    }
    if a.ratio.is_some() {
        ds.subsample_ratio = a.ratio;
    }
    if let Some(v) = a.n_normal {
        ds.synth.n_normal = v;
    }
    if let Some(v) = a.n_anomaly {
        ds.synth.n_anomaly = v;
    }
    if let Some(v) = a.noise_sigma {
        ds.synth.noise_sigma = v;
    }

    let mut cfg = cfg.resolved()?;
    apply_method_flags(&mut cfg, a)?;
    Ok(cfg)
}

fn apply_method_flags(cfg: &mut ExperimentConfig, a: &RunArgs) -> Result<()> {
    let method = cfg.method;
    let check = |flag: &str, set: bool, allowed: &[Method]| {
        if set && !allowed.contains(&method) {
            Err(not_for(flag, method))
        } else {
            Ok(())
        }
    };
    use Method::*;
    let learners = [Pretrain, Toddler, Addl, Popularity];
    check("sparsity", a.sparsity.is_some(), &learners)?;
    check("residual-tol", a.residual_tol.is_some(), &learners)?;
    check("iterations", a.iterations.is_some(), &learners)?;
    check("atoms", a.atoms.is_some(), &learners)?;
    check("alpha", a.alpha.is_some(), &[Pretrain, Toddler])?;
    check("beta", a.beta.is_some(), &[Pretrain, Toddler])?;
    check("phi", a.phi.is_some(), &[Toddler])?;
    check("policy", a.policy.is_some(), &[Toddler])?;
    check("lambda1", a.lambda1.is_some(), &[Toddler])?;
    check(
        "pretrain-fraction",
        a.pretrain_fraction.is_some(),
        &[Toddler],
    )?;
    check("global-iterations", a.global_iterations.is_some(), &[Addl])?;
    check("anomalies", a.anomalies.is_some(), &[Popularity])?;
    check("max-iterations", a.max_iterations.is_some(), &[Popularity])?;
    check("literal", a.literal, &[Popularity])?;

    if let Some(p) = cfg.pretrain.as_mut() {
        if let Some(s) = a.sparsity {
            p.dl.coding.sparsity = s;
        }
        if let Some(t) = a.residual_tol {
            p.dl.coding.residual_tol = t;
        }
        if let Some(k) = a.iterations {
            p.dl.iterations = k;
        }
        if let Some(n) = a.atoms {
            p.atoms_per_class = n;
        }
        if let Some(v) = a.alpha {
            p.alpha = v;
        }
        if let Some(v) = a.beta {
            p.beta = v;
        }
    }
    if let Some(t) = cfg.toddler.as_mut() {
        if let Some(phi) = a.phi {
            t.phi = phi;
        }
        if let Some(f) = a.pretrain_fraction {
            t.pretrain_fraction = f;
        }
        match (a.policy, a.lambda1, a.lambda2) {
            (Some(PolicyArg::GramNorm), None, _) => t.policy = LambdaPolicy::GramNorm,
            (Some(PolicyArg::ModelNorms), None, _) => t.policy = LambdaPolicy::ModelNorms,
            (Some(PolicyArg::Fixed) | None, Some(lambda1), Some(lambda2)) => {
                t.policy = LambdaPolicy::Fixed { lambda1, lambda2 }
            }
            (Some(PolicyArg::Fixed), None, _) => {
                return Err(Error::Config(
                    "--policy fixed needs --lambda1 and --lambda2".into(),
                ))
            }
            (Some(_), Some(_), _) => {
                return Err(Error::Config(
                    "--lambda1/--lambda2 imply --policy fixed".into(),
                ))
            }
            (None, _, _) => {}
        }
    }
    if let Some(c) = cfg.addl.as_mut() {
        if let Some(s) = a.sparsity {
            c.stage.coding.sparsity = s;
            c.coding.sparsity = s;
        }
        if let Some(t) = a.residual_tol {
            c.stage.coding.residual_tol = t;
            c.coding.residual_tol = t;
        }
        if let Some(k) = a.iterations {
            c.stage.iterations = k;
        }
        if let Some(n) = a.atoms {
            c.stage.n_atoms = n;
        }
        if let Some(i) = a.global_iterations {
            c.global_iterations = i;
        }
    }
    if let Some(c) = cfg.popularity.as_mut() {
        if let Some(s) = a.sparsity {
            c.stage.coding.sparsity = s;
            c.coding.sparsity = s;
        }
        if let Some(t) = a.residual_tol {
            c.stage.coding.residual_tol = t;
            c.coding.residual_tol = t;
        }
        if let Some(k) = a.iterations {
            c.stage.iterations = k;
        }
        if let Some(n) = a.atoms {
            c.stage.n_atoms = n;
        }
        if let Some(n) = a.anomalies {
            c.n_anomalies = n;
        }
        if let Some(n) = a.max_iterations {
            c.max_iterations = n;
        }
        if a.literal {
            c.literal_set_builder = true;
        }
    }
    // overrides may have broken an invariant
    cfg.validate()
}

fn run(method: Method, args: &RunArgs) -> Result<()> {
    let cfg = build_config(method, args)?;
    let res = run_experiment(&cfg)?;
    log::info!(
        "wrote {}",
        cfg.output
            .dir
            .join(dictad::evaluation::RESULT_FILE)
            .display()
    );
    println!("{:#}", res.metrics);
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let truth = read_label_column(&a.truth, a.truth_column.as_deref())?;
    let estimates = read_label_column(&a.predictions, a.predicted_column.as_deref())?;
    let report = confusion(&truth, &estimates)?;
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("confusion.json"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn configure_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_VAR}='{v}' is not a thread count")))?,
        Err(_) => 0,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Pretrain(a) => run(Method::Pretrain, a),
        Command::Toddler(a) => run(Method::Toddler, a),
        Command::Addl(a) => run(Method::Addl, a),
        Command::Popularity(a) => run(Method::Popularity, a),
        Command::Synth(a) => run(Method::Synth, a),
        Command::Eval(a) => eval(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidParameter("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 3);
        assert_eq!(exit_code(&Error::SingularMatrix { condition: 1e20 }), 4);
        assert_eq!(
            exit_code(&Error::NoConvergence {
                iterations: 1,
                estimate: 0.0
            }),
            4
        );
    }

    #[test]
    fn fixed_policy_from_lambdas() {
        let cli =
            Cli::try_parse_from(["dictad", "toddler", "--lambda1", "2", "--lambda2", "3"]).unwrap();
        let Command::Toddler(a) = cli.command else {
            panic!()
        };
        let cfg = build_config(Method::Toddler, &a).unwrap();
        assert_eq!(
            cfg.toddler.unwrap().policy,
            LambdaPolicy::Fixed {
                lambda1: 2.0,
                lambda2: 3.0
            }
        );
        assert!(Cli::try_parse_from(["dictad", "toddler", "--lambda1", "2"]).is_err());
        let cli = Cli::try_parse_from(["dictad", "toddler", "--policy", "fixed"]).unwrap();
        let Command::Toddler(a) = cli.command else {
            panic!()
        };
        assert!(matches!(
            build_config(Method::Toddler, &a),
            Err(Error::Config(_))
        ));
    }
}
