//! Monte Carlo experiments: Choi-element recovery of the joint estimator
//! (`fig2`), likelihood gain of simultaneous over sequential reconstruction
//! (`fig3`), exact versus trace-only process variances (`fig4`), and a
//! single joint-versus-sequential configuration (`custom`).
//!
//! Every trial draws from its own `(seed, point, trial)` stream and results
//! are collected in trial order, so outputs are reproducible bit-for-bit
//! whatever the execution mode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::approx::{compare_variances, ComparisonConfig, ComparisonReport};
use crate::error::{Error, Result};
use crate::exec::{map_trials, Execution};
use crate::fixedpoint::MleOptions;
use crate::joint::{compare_joint_sequential, estimate_joint};
use crate::objects::free_parameter_labels;
use crate::sim::{generate_joint_dataset, pauli_eigenstates, Axis, ChannelSpec, RngSeed, INPUT_SPACE};
use crate::stats::{bootstrap_mean_ci, mean, std_dev};

const BOOTSTRAP_REPS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Fig2,
    Fig3,
    Fig4,
    Custom,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Fig4 => "fig4",
            ExperimentKind::Custom => "custom",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub channel: ChannelSpec,
    /// Number of probes (`fig2`, `custom`).
    pub m: usize,
    /// Copies per measurement axis (`fig2`, `custom`).
    pub n: u64,
    /// Probe counts swept by `fig3`.
    pub ms: Vec<usize>,
    /// Copies per axis swept by `fig3` and `fig4`.
    pub ns: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    pub axes_in: Vec<Axis>,
    pub axes_out: Vec<Axis>,
    pub exact_frequencies: bool,
    pub mle: MleOptions,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let xyz = vec![Axis::X, Axis::Y, Axis::Z];
        let base = Self {
            experiment: kind,
            channel: ChannelSpec::test_channel(),
            m: 20,
            n: 1000,
            ms: vec![15, 30, 45],
            ns: vec![50, 100, 500, 1000],
            trials: 200,
            seed: 0,
            axes_in: xyz.clone(),
            axes_out: xyz,
            exact_frequencies: false,
            mle: MleOptions::default(),
        };
        match kind {
            ExperimentKind::Fig2 | ExperimentKind::Fig3 => base,
            ExperimentKind::Fig4 => Self {
                channel: ChannelSpec::Rotation { theta: std::f64::consts::PI / 8.0 },
                ns: vec![50, 100, 200, 500, 1000, 2000],
                trials: 500,
                ..base
            },
            ExperimentKind::Custom => Self { trials: 100, ..base },
        }
    }

    /// Parses a JSON object whose `experiment` field selects the defaults
    /// that the remaining fields override. `mle` may be given partially.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let Value::Object(over) = v else {
            return Err(Error::InvalidArgument("experiment config must be a JSON object".into()));
        };
        let kind: ExperimentKind = match over.get("experiment") {
            Some(k) => serde_json::from_value(k.clone())?,
            None => return Err(Error::InvalidArgument("experiment config lacks \"experiment\"".into())),
        };
        let Value::Object(mut base) = serde_json::to_value(Self::defaults(kind))? else { unreachable!() };
        for (key, val) in over {
            match (key.as_str(), base.get_mut(&key), val) {
                ("mle", Some(Value::Object(b)), Value::Object(o)) => b.extend(o),
                (_, _, val) => {
                    base.insert(key, val);
                }
            }
        }
        let cfg: Self = serde_json::from_value(Value::Object(base))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.mle.validate()?;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be at least 1");
        }
        if self.ms.is_empty() || self.ms.contains(&0) || self.ns.is_empty() || self.ns.contains(&0) {
            return bad("ms and ns must be nonempty lists of positive integers");
        }
        for axes in [&self.axes_in, &self.axes_out] {
            let mut sorted = axes.clone();
            sorted.sort();
            sorted.dedup();
            if axes.is_empty() || sorted.len() != axes.len() {
                return bad("axis lists must be nonempty without repeats");
            }
        }
        if self.trials > u32::MAX as usize || self.ms.len() * self.ns.len() > u32::MAX as usize {
            return bad("too many trials or sweep points");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub element: String,
    pub true_value: f64,
    /// Single-run estimate (trial 0).
    pub estimate: f64,
    pub mc_mean: f64,
    /// Standard deviation across trials; the standard error of one run.
    pub mc_sd: f64,
    /// `(estimate − true_value) / mc_sd`
    pub z_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig2Result {
    pub trials: usize,
    pub nonconverged: usize,
    pub rows: Vec<Fig2Row>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub m: usize,
    pub n: u64,
    pub trials: usize,
    pub mean_delta: f64,
    pub delta_ci_lo: f64,
    pub delta_ci_hi: f64,
    pub min_delta: f64,
    pub mean_ratio: f64,
    pub nonconverged_sim: usize,
    pub nonconverged_seq: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Result {
    pub rows: Vec<Fig3Row>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Row {
    pub n: u64,
    pub trials: usize,
    pub var_exact: f64,
    pub var_approx: f64,
    pub ratio: f64,
    pub diff_ci_lo: f64,
    pub diff_ci_hi: f64,
    pub nonconverged_exact: usize,
    pub nonconverged_approx: usize,
    pub mean_tp_residual_approx: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Result {
    pub rows: Vec<Fig4Row>,
    pub reports: Vec<ComparisonReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomRow {
    pub trial: usize,
    pub delta: f64,
    pub ratio: f64,
    pub loglike_sim: f64,
    pub loglike_seq: f64,
    pub converged_sim: bool,
    pub converged_seq: bool,
    pub iterations_sim: usize,
    pub underdetermined: bool,
    /// `Tr[(S_sim − S_true)²]`
    pub sq_error_sim: f64,
    /// `Tr[(S_seq − S_true)²]`
    pub sq_error_seq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomResult {
    pub rows: Vec<CustomRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum ExperimentResult {
    Fig2(Fig2Result),
    Fig3(Fig3Result),
    Fig4(Fig4Result),
    Custom(CustomResult),
}

/// Column layout of each CSV product, as printed by the command-line help.
pub const CSV_COLUMNS: &[(&str, &str)] = &[
    ("fig2", "element,true_value,estimate,mc_mean,mc_sd,z_score"),
    ("fig3", "m,n,trials,mean_delta,delta_ci_lo,delta_ci_hi,min_delta,mean_ratio,nonconverged_sim,nonconverged_seq"),
    (
        "fig4",
        "n,trials,var_exact,var_approx,ratio,diff_ci_lo,diff_ci_hi,nonconverged_exact,nonconverged_approx,mean_tp_residual_approx",
    ),
    (
        "custom",
        "trial,delta,ratio,loglike_sim,loglike_seq,converged_sim,converged_seq,iterations_sim,underdetermined,sq_error_sim,sq_error_seq",
    ),
];

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

impl ExperimentResult {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentResult::Fig2(_) => ExperimentKind::Fig2,
            ExperimentResult::Fig3(_) => ExperimentKind::Fig3,
            ExperimentResult::Fig4(_) => ExperimentKind::Fig4,
            ExperimentResult::Custom(_) => ExperimentKind::Custom,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        match self {
            ExperimentResult::Fig2(r) => to_csv(&r.rows),
            ExperimentResult::Fig3(r) => to_csv(&r.rows),
            ExperimentResult::Fig4(r) => to_csv(&r.rows),
            ExperimentResult::Custom(r) => to_csv(&r.rows),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.validate()?;
    Ok(match cfg.experiment {
        ExperimentKind::Fig2 => ExperimentResult::Fig2(run_fig2(cfg, exec)?),
        ExperimentKind::Fig3 => ExperimentResult::Fig3(run_fig3(cfg, exec)?),
        ExperimentKind::Fig4 => ExperimentResult::Fig4(run_fig4(cfg, exec)?),
        ExperimentKind::Custom => ExperimentResult::Custom(run_custom(cfg, exec)?),
    })
}

pub fn run_fig2(cfg: &ExperimentConfig, exec: Execution) -> Result<Fig2Result> {
    let trial = |t: usize| -> Result<(Vec<f64>, bool, Vec<f64>)> {
        let seed = RngSeed::trial(cfg.seed, 0, t as u32);
        let (ds, truth) = generate_joint_dataset(
            &cfg.channel,
            cfg.m,
            cfg.n,
            &cfg.axes_in,
            &cfg.axes_out,
            seed,
            cfg.exact_frequencies,
        )?;
        let rep = estimate_joint(&ds, &cfg.mle)?;
        Ok((rep.process_estimate.free_parameters(), rep.converged, truth.channel.free_parameters()))
    };
    let runs = map_trials(exec, cfg.trials, trial).into_iter().collect::<Result<Vec<_>>>()?;
    let truth = &runs[0].2;
    let labels = free_parameter_labels(2, 2);
    let rows = (0..truth.len())
        .map(|i| {
            let xs: Vec<f64> = runs.iter().map(|r| r.0[i]).collect();
            let sd = if xs.len() > 1 { std_dev(&xs) } else { 0.0 };
            let diff = xs[0] - truth[i];
            Fig2Row {
                element: labels[i].clone(),
                true_value: truth[i],
                estimate: xs[0],
                mc_mean: mean(&xs),
                mc_sd: sd,
                z_score: if sd > 0.0 { diff / sd } else { f64::NAN },
            }
        })
        .collect();
    Ok(Fig2Result { trials: cfg.trials, nonconverged: runs.iter().filter(|r| !r.1).count(), rows })
}

pub fn run_fig3(cfg: &ExperimentConfig, exec: Execution) -> Result<Fig3Result> {
    let points: Vec<(usize, u64)> = cfg.ms.iter().flat_map(|&m| cfg.ns.iter().map(move |&n| (m, n))).collect();
    let jobs = points.len() * cfg.trials;
    let job = |j: usize| -> Result<(f64, f64, bool, bool)> {
        let (p, t) = (j / cfg.trials, j % cfg.trials);
        let (m, n) = points[p];
        let seed = RngSeed::trial(cfg.seed, p as u32, t as u32);
        let (ds, _) =
            generate_joint_dataset(&cfg.channel, m, n, &cfg.axes_in, &cfg.axes_out, seed, cfg.exact_frequencies)?;
        let c = compare_joint_sequential(&ds, &cfg.mle)?;
        Ok((c.delta, c.ratio, c.simultaneous.converged, c.sequential.converged))
    };
    let out = map_trials(exec, jobs, job).into_iter().collect::<Result<Vec<_>>>()?;
    let rows = points
        .iter()
        .enumerate()
        .map(|(p, &(m, n))| {
            let chunk = &out[p * cfg.trials..(p + 1) * cfg.trials];
            let deltas: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let (lo, hi) =
                bootstrap_mean_ci(&deltas, BOOTSTRAP_REPS, 0.95, RngSeed::new(cfg.seed, u64::MAX - p as u64));
            Fig3Row {
                m,
                n,
                trials: cfg.trials,
                mean_delta: mean(&deltas),
                delta_ci_lo: lo,
                delta_ci_hi: hi,
                min_delta: deltas.iter().copied().fold(f64::INFINITY, f64::min),
                mean_ratio: mean(&chunk.iter().map(|r| r.1).collect::<Vec<_>>()),
                nonconverged_sim: chunk.iter().filter(|r| !r.2).count(),
                nonconverged_seq: chunk.iter().filter(|r| !r.3).count(),
            }
        })
        .collect();
    Ok(Fig3Result { rows })
}

pub fn run_fig4(cfg: &ExperimentConfig, exec: Execution) -> Result<Fig4Result> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (p, &n) in cfg.ns.iter().enumerate() {
        let cc = ComparisonConfig {
            channel: cfg.channel.clone(),
            probes: pauli_eigenstates(INPUT_SPACE),
            out_axes: cfg.axes_out.clone(),
            n,
            trials: cfg.trials.max(2),
            seed: cfg.seed,
            point: p as u32,
            exact_control: false,
            exact_frequencies: cfg.exact_frequencies,
            mle: cfg.mle.clone(),
        };
        let r = compare_variances(&cc, exec)?;
        rows.push(Fig4Row {
            n,
            trials: r.trials,
            var_exact: r.var_exact,
            var_approx: r.var_approx,
            ratio: r.ratio,
            diff_ci_lo: r.diff_ci[0],
            diff_ci_hi: r.diff_ci[1],
            nonconverged_exact: r.nonconverged_exact,
            nonconverged_approx: r.nonconverged_approx,
            mean_tp_residual_approx: r.mean_tp_residual_approx,
        });
        reports.push(r);
    }
    Ok(Fig4Result { rows, reports })
}

pub fn run_custom(cfg: &ExperimentConfig, exec: Execution) -> Result<CustomResult> {
    let trial = |t: usize| -> Result<CustomRow> {
        let seed = RngSeed::trial(cfg.seed, 0, t as u32);
        let (ds, truth) = generate_joint_dataset(
            &cfg.channel,
            cfg.m,
            cfg.n,
            &cfg.axes_in,
            &cfg.axes_out,
            seed,
            cfg.exact_frequencies,
        )?;
        let c = compare_joint_sequential(&ds, &cfg.mle)?;
        let err = |s: &crate::objects::ChoiOperator| crate::approx::squared_error(s.matrix(), truth.channel.matrix());
        Ok(CustomRow {
            trial: t,
            delta: c.delta,
            ratio: c.ratio,
            loglike_sim: c.simultaneous.loglike,
            loglike_seq: c.sequential.loglike,
            converged_sim: c.simultaneous.converged,
            converged_seq: c.sequential.converged,
            iterations_sim: c.simultaneous.iterations,
            underdetermined: c.sequential.underdetermined,
            sq_error_sim: err(&c.simultaneous.process_estimate),
            sq_error_seq: err(&c.sequential.process_estimate),
        })
    };
    let rows = map_trials(exec, cfg.trials, trial).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CustomResult { rows })
}
