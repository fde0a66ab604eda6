use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use qmle::approx::{estimate_process_trace_only, estimate_state_gaussian, GaussianObjective};
use qmle::exec::Execution;
use qmle::experiment::{run_experiment, ExperimentConfig, ExperimentKind, CSV_COLUMNS};
use qmle::fixedpoint::MleOptions;
use qmle::joint::{compare_joint_sequential, JointDataset};
use qmle::objects::{born_probability, free_parameter_labels, ChoiOperator, CountRecord, DensityMatrix};
use qmle::process::{estimate_process, ProcessDataset};
use qmle::sim::{
    build_choi, generate_joint_dataset, generate_process_dataset, multinomial, pauli_eigenstates, pauli_povm,
    random_mixed_state_with, JointTruth, RngSeed, INPUT_SPACE,
};
use qmle::state::{estimate_state, StateDataset};

/// Exit code for runs that finished without meeting the stopping rule.
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_INPUT_ERROR: u8 = 1;

#[derive(Parser)]
#[command(name = "qmle", version, about = "Maximum-likelihood reconstruction of quantum states and processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it with a manifest.
    Simulate {
        /// Experiment whose defaults to start from.
        #[arg(long, value_parser = parse_kind, default_value = "fig2")]
        experiment: ExperimentKind,
        /// Kind of dataset to write; fig4 defaults to process, others to joint.
        #[arg(long, value_enum)]
        dataset: Option<DatasetKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an estimator on a dataset file.
    Estimate {
        #[arg(value_enum)]
        kind: EstimatorKind,
        file: PathBuf,
        /// JSON file with estimator options (max_iters, tol_loglike, tol_fixedpoint, prob_floor, damping).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a Monte Carlo experiment and write CSV and JSON products.
    Experiment {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
        #[command(flatten)]
        common: Common,
        /// Run trials on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config; fields not given keep the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Replace sampled frequencies by exact Born probabilities.
    #[arg(long)]
    exact_frequencies: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum DatasetKind {
    State,
    Process,
    Joint,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq, Debug)]
enum EstimatorKind {
    State,
    Process,
    Joint,
    ProcessApprox,
    StateGaussian,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: qmle::Error| e.to_string())
}

/// Dataset files carry their kind and, when simulated, the ground truth.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DatasetFile {
    State {
        dataset: StateDataset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<DensityMatrix>,
    },
    Process {
        dataset: ProcessDataset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<ChoiOperator>,
    },
    Joint {
        dataset: JointDataset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<JointTruth>,
    },
}

impl DatasetFile {
    fn kind(&self) -> &'static str {
        match self {
            DatasetFile::State { .. } => "state",
            DatasetFile::Process { .. } => "process",
            DatasetFile::Joint { .. } => "joint",
        }
    }
}

/// Errors in the input (files, configs, arguments) as opposed to estimator outcomes.
struct InputError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.into())
    }
}

fn main() -> ExitCode {
    let mut help = String::from("CSV columns of `experiment` products:\n");
    for (kind, cols) in CSV_COLUMNS {
        help.push_str(&format!("  {kind}.csv: {cols}\n"));
    }
    let cmd = Cli::command().mut_subcommand("experiment", |c| c.after_help(help));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(InputError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<u8, InputError> {
    match cli.command {
        Command::Simulate { experiment, dataset, common } => simulate(experiment, dataset, &common),
        Command::Estimate { kind, file, config, out } => estimate(kind, &file, config.as_deref(), &out),
        Command::Experiment { kind, common, sequential } => experiment(kind, &common, sequential),
    }
}

fn load_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cfg.experiment != kind {
                bail!("config is for {} but {} was requested", cfg.experiment, kind);
            }
            cfg
        }
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    cfg.exact_frequencies |= common.exact_frequencies;
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn manifest(command: &str, cfg: &ExperimentConfig, files: &[&str], dataset: Option<&str>) -> Result<String> {
    let mut m = json!({
        "tool": "qmle",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "config": cfg,
        "files": files,
    });
    if let Some(d) = dataset {
        m["dataset"] = json!(d);
    }
    pretty(&m)
}

fn simulate(kind: ExperimentKind, dataset: Option<DatasetKind>, common: &Common) -> Result<u8, InputError> {
    let cfg = load_config(kind, common)?;
    let dataset =
        dataset.unwrap_or(if kind == ExperimentKind::Fig4 { DatasetKind::Process } else { DatasetKind::Joint });
    let seed = RngSeed::new(cfg.seed, 0);
    let exact = cfg.exact_frequencies;
    let file = match dataset {
        DatasetKind::Joint => {
            let (ds, truth) =
                generate_joint_dataset(&cfg.channel, cfg.m, cfg.n, &cfg.axes_in, &cfg.axes_out, seed, exact)?;
            DatasetFile::Joint { dataset: ds, truth: Some(truth) }
        }
        DatasetKind::Process => {
            let ds = generate_process_dataset(
                &cfg.channel,
                &pauli_eigenstates(INPUT_SPACE),
                cfg.n,
                &cfg.axes_out,
                seed,
                exact,
            )?;
            DatasetFile::Process { dataset: ds, truth: Some(build_choi(&cfg.channel)?) }
        }
        DatasetKind::State => {
            let mut rng = seed.rng();
            let rho = random_mixed_state_with(&mut rng, INPUT_SPACE, 2)?;
            let povm = pauli_povm(INPUT_SPACE, &cfg.axes_in)?;
            let p = povm.elements().iter().map(|e| born_probability(&rho, e)).collect::<qmle::Result<Vec<_>>>()?;
            let setting: String = cfg.axes_in.iter().map(|a| a.to_string()).collect();
            let total = cfg.n * cfg.axes_in.len() as u64;
            let record = if exact {
                CountRecord::from_probabilities(setting, &p, total)?
            } else {
                let counts = p
                    .chunks(2)
                    .flat_map(|b| {
                        let s: f64 = b.iter().sum();
                        multinomial(&mut rng, &[b[0] / s, b[1] / s], cfg.n)
                    })
                    .collect();
                CountRecord::new(setting, counts)?
            };
            DatasetFile::State { dataset: StateDataset::new(povm, record)?, truth: Some(rho) }
        }
    };
    let path = write(&common.out, "dataset.json", &pretty(&file)?)?;
    write(&common.out, "manifest.json", &manifest("simulate", &cfg, &["dataset.json"], Some(file.kind()))?)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn estimate(kind: EstimatorKind, file: &Path, config: Option<&Path>, out: &Path) -> Result<u8, InputError> {
    let opts: MleOptions = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => MleOptions::default(),
    };
    opts.validate()?;
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let data: DatasetFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
    let mismatch = |want: &str| -> InputError {
        InputError(anyhow::anyhow!(
            "estimator {kind:?} needs a {want} dataset, {} holds a {} dataset",
            file.display(),
            data.kind()
        ))
    };
    let (report, converged) = match (kind, &data) {
        (EstimatorKind::State, DatasetFile::State { dataset, .. }) => {
            let r = estimate_state(dataset, &opts, None)?;
            (pretty(&r)?, r.converged)
        }
        (EstimatorKind::StateGaussian, DatasetFile::State { dataset, .. }) => {
            let r = estimate_state_gaussian(&GaussianObjective::from_dataset(dataset.clone()), &opts)?;
            (pretty(&r)?, r.converged)
        }
        (EstimatorKind::Process, DatasetFile::Process { dataset, .. }) => {
            let r = estimate_process(dataset, &opts, None)?;
            (pretty(&json!({ "report": r, "choi_parameters": parameters(&r.estimate) }))?, r.converged)
        }
        (EstimatorKind::ProcessApprox, DatasetFile::Process { dataset, .. }) => {
            let r = estimate_process_trace_only(dataset, &opts)?;
            (pretty(&json!({ "report": r, "choi_parameters": parameters(&r.estimate) }))?, r.converged)
        }
        (EstimatorKind::Joint, DatasetFile::Joint { dataset, .. }) => {
            let c = compare_joint_sequential(dataset, &opts)?;
            let params = parameters(&c.simultaneous.process_estimate);
            (pretty(&json!({ "comparison": c, "choi_parameters": params }))?, c.simultaneous.converged)
        }
        (EstimatorKind::State | EstimatorKind::StateGaussian, _) => return Err(mismatch("state")),
        (EstimatorKind::Process | EstimatorKind::ProcessApprox, _) => return Err(mismatch("process")),
        (EstimatorKind::Joint, _) => return Err(mismatch("joint")),
    };
    let name = format!("{}-report.json", kind.to_possible_value().expect("named").get_name());
    let path = write(out, &name, &report)?;
    println!("wrote {}", path.display());
    if converged {
        Ok(0)
    } else {
        eprintln!("warning: iteration limit reached before convergence");
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// The independent real Choi parameters (12 for a qubit channel), in order.
fn parameters(s: &ChoiOperator) -> Vec<serde_json::Value> {
    free_parameter_labels(s.dim_in(), s.dim_out())
        .into_iter()
        .zip(s.free_parameters())
        .map(|(k, v)| json!({ "element": k, "value": v }))
        .collect()
}

fn experiment(kind: ExperimentKind, common: &Common, sequential: bool) -> Result<u8, InputError> {
    let cfg = load_config(kind, common)?;
    let exec = if sequential { Execution::Sequential } else { Execution::default() };
    let res = run_experiment(&cfg, exec)?;
    let csv_name = format!("{kind}.csv");
    let json_name = format!("{kind}.json");
    write(&common.out, &csv_name, &res.to_csv()?)?;
    write(&common.out, &json_name, &res.to_json()?)?;
    write(&common.out, "manifest.json", &manifest("experiment", &cfg, &[&csv_name, &json_name], None)?)?;
    print!("{}", res.to_csv()?);
    Ok(0)
}
