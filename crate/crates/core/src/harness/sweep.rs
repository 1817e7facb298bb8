//! Experiment sweeps: simulated fits over a grid of sample ratios compared
//! with state-evolution and closed-form predictions.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::closedform::{ridge_gen, ridgeless_gen};
use crate::denoisers::Penalty;
use crate::error::{Error, Result};
use crate::mc::stream_rng;
use crate::mlvamp::{fit, VampConfig};
use crate::spectra::SpectrumModel;
use crate::stateevo::{predict, SeConfig};
use crate::synthdata::{
    empirical_test_error, generate_dataset, generate_test_pairs, normalized_mse_db, Channel, TestLoss,
};

use super::baseline::{baseline_fit, objective, BaselineOptions};
use super::config::{InputPenalty, ProblemSpec};

pub const CSV_HEADER: &str = "beta,n,p,trial,empirical_err,se_pred,closedform_pred,runtime_ms,status";
pub const SUMMARY_HEADER: &str =
    "beta,n,p,median_err,mean_err,se_pred,closedform_pred,n_ok,n_failed,n_stuck";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `10 log10(E(ŷ - y)² / E y²)`.
    SquaredDb,
    Squared,
    ErrorRate,
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_db" => Ok(Metric::SquaredDb),
            "squared" => Ok(Metric::Squared),
            "error_rate" => Ok(Metric::ErrorRate),
            _ => Err(Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

impl Metric {
    pub fn test_loss(&self) -> TestLoss {
        match self {
            Metric::ErrorRate => TestLoss::ZeroOne,
            _ => TestLoss::Squared,
        }
    }

    pub fn empirical(&self, pairs: &[(f64, f64)]) -> Result<f64> {
        match self {
            Metric::SquaredDb => normalized_mse_db(pairs),
            _ => empirical_test_error(pairs, self.test_loss()),
        }
    }

    /// Express a test error `e` in this metric given the output power `E y²`.
    pub fn from_error(&self, e: f64, power: f64) -> f64 {
        match self {
            Metric::SquaredDb => 10.0 * (e / power).log10(),
            _ => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Baseline,
    Vamp,
}

impl FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Solver::Baseline),
            "vamp" | "mlvamp" => Ok(Solver::Vamp),
            _ => Err(Error::Config(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormKind {
    None,
    Ridge,
    Ridgeless,
}

impl FromStr for ClosedFormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClosedFormKind::None),
            "ridge" => Ok(ClosedFormKind::Ridge),
            "ridgeless" => Ok(ClosedFormKind::Ridgeless),
            _ => Err(Error::Config(format!("unknown closed form `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub p: usize,
    /// Sample ratios `N/p`.
    pub grid: Vec<f64>,
    pub trials: usize,
    pub problem: ProblemSpec,
    pub metric: Metric,
    pub seed: u64,
    pub test_samples: usize,
    pub solver: Solver,
    pub closed_form: ClosedFormKind,
    /// Non-convex fits whose objective exceeds this multiple of the grid
    /// point's median objective are counted as stuck.
    pub stuck_factor: f64,
    pub se: SeConfig,
    pub vamp: VampConfig,
    pub baseline: BaselineOptions,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Empty("feature count"));
        }
        if self.grid.is_empty() {
            return Err(Error::Empty("sample-ratio grid"));
        }
        for &r in &self.grid {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "grid",
                    value: r,
                    reason: "sample ratios must be positive",
                });
            }
        }
        if self.trials == 0 {
            return Err(Error::Empty("trials"));
        }
        if self.test_samples == 0 {
            return Err(Error::Empty("test samples"));
        }
        if self.metric == Metric::ErrorRate && self.problem.model.channel != Channel::Logistic {
            return Err(Error::Config("the error_rate metric needs the logistic channel".into()));
        }
        if !(self.stuck_factor > 1.0) {
            return Err(Error::InvalidParameter {
                name: "stuck_factor",
                value: self.stuck_factor,
                reason: "must exceed 1",
            });
        }
        Ok(())
    }

    pub fn sample_count(&self, ratio: f64) -> usize {
        ((ratio * self.p as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
    Stuck,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
            TrialStatus::Stuck => "stuck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub n: usize,
    pub p: usize,
    pub trial: usize,
    pub empirical_err: f64,
    pub se_pred: f64,
    pub closedform_pred: Option<f64>,
    pub runtime_ms: f64,
    pub status: TrialStatus,
    /// Final training objective (NaN if the fit failed).
    pub objective: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub beta: f64,
    pub n: usize,
    pub p: usize,
    /// Median over the trials with status `ok`.
    pub median_err: f64,
    pub mean_err: f64,
    pub se_pred: f64,
    pub closedform_pred: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_stuck: usize,
    pub se_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// SE prediction at `β = p/N` in metric units.
pub fn se_prediction(problem: &ProblemSpec, se: &SeConfig, metric: Metric, beta: f64) -> Result<f64> {
    let (_, report) = predict(&problem.se_problem(beta)?, se, metric.test_loss())?;
    Ok(metric.from_error(report.e_ts, report.output_power))
}

/// Closed-form prediction for ridge on matched i.i.d. features.
pub fn closed_form_prediction(problem: &ProblemSpec, kind: ClosedFormKind, metric: Metric, beta: f64) -> Result<Option<f64>> {
    if kind == ClosedFormKind::None {
        return Ok(None);
    }
    let sigma2 = match problem.model.spectrum {
        SpectrumModel::IsoConstant { sigma_tr, sigma_ts } if sigma_tr == sigma_ts => sigma_tr * sigma_tr,
        _ => return Err(Error::Unsupported("closed forms need matched i.i.d. features".into())),
    };
    let Channel::Linear { noise_var } = problem.model.channel else {
        return Err(Error::Unsupported("closed forms need the linear channel".into()));
    };
    let var_w0 = problem.model.w0_law.second_moment();
    let e = match kind {
        ClosedFormKind::Ridgeless => ridgeless_gen(beta, sigma2, var_w0, noise_var)?,
        _ => {
            let (InputPenalty::L2 { .. }, Penalty::SquaredLoss { weight }) = (problem.f_in, problem.f_out) else {
                return Err(Error::Unsupported("the ridge closed form needs L2 and squared loss".into()));
            };
            let Penalty::L2 { lambda, beta_scale } = problem.input_penalty(beta)? else {
                unreachable!()
            };
            ridge_gen(beta, beta * lambda / (beta_scale * weight), sigma2, var_w0, noise_var)?
        }
    };
    if metric == Metric::ErrorRate {
        return Err(Error::Unsupported("closed forms predict squared error only".into()));
    }
    Ok(Some(metric.from_error(e, sigma2 * var_w0 + noise_var)))
}

struct TrialOutcome {
    err: f64,
    objective: f64,
    runtime_ms: f64,
    message: Option<String>,
}

fn run_trial(plan: &SweepPlan, grid_index: usize, trial: usize, n: usize, beta: f64) -> TrialOutcome {
    let start = Instant::now();
    let key = [grid_index as u64, trial as u64];
    let res = (|| -> Result<(f64, f64)> {
        let mut data_rng = stream_rng(plan.seed, &[key[0], key[1], 0]);
        let ds = generate_dataset(n, plan.p, &plan.problem.model, &mut data_rng)?;
        let f_in = plan.problem.input_penalty(beta)?;
        let f_out = plan.problem.f_out;
        let (w_hat, obj) = match plan.solver {
            Solver::Baseline => {
                let mut fit_rng = stream_rng(plan.seed, &[key[0], key[1], 1]);
                let fit = baseline_fit(&ds, &f_in, &f_out, &plan.baseline, &mut fit_rng)?;
                (fit.w_hat, fit.objective)
            }
            Solver::Vamp => {
                let fit = fit(&ds, &f_in, &f_out, &plan.vamp)?;
                if !fit.converged {
                    return Err(Error::NonConvergence {
                        what: "ML-VAMP",
                        iterations: fit.iterations,
                        residual: fit.kkt_residual,
                    });
                }
                let obj = objective(&ds, &f_in, &f_out, &fit.w_hat);
                (fit.w_hat, obj)
            }
        };
        let mut test_rng = stream_rng(plan.seed, &[key[0], key[1], 2]);
        let pairs = generate_test_pairs(&ds, &plan.problem.model.channel, &w_hat, plan.test_samples, &mut test_rng)?;
        Ok((plan.metric.empirical(&pairs)?, obj))
    })();
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    match res {
        Ok((err, objective)) => TrialOutcome {
            err,
            objective,
            runtime_ms,
            message: None,
        },
        Err(e) => TrialOutcome {
            err: f64::NAN,
            objective: f64::NAN,
            runtime_ms,
            message: Some(e.to_string()),
        },
    }
}

/// Run every `(grid point, trial)` in parallel. Each trial draws from its own
/// stream keyed by `(seed, grid index, trial)`, so results do not depend on
/// scheduling; aggregation follows grid order.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepResult> {
    plan.validate()?;
    let jobs: Vec<(usize, usize)> = (0..plan.grid.len())
        .flat_map(|g| (0..plan.trials).map(move |t| (g, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let n = plan.sample_count(plan.grid[g]);
            run_trial(plan, g, t, n, plan.p as f64 / n as f64)
        })
        .collect();

    let non_convex = !plan.problem.f_out.is_convex();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut summary = Vec::with_capacity(plan.grid.len());
    for (g, &ratio) in plan.grid.iter().enumerate() {
        let n = plan.sample_count(ratio);
        let beta = plan.p as f64 / n as f64;
        let (se_pred, se_error) = match se_prediction(&plan.problem, &plan.se, plan.metric, beta) {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        let closedform_pred = closed_form_prediction(&plan.problem, plan.closed_form, plan.metric, beta)
            .ok()
            .flatten();
        let chunk = &outcomes[g * plan.trials..(g + 1) * plan.trials];
        let finite_obj: Vec<f64> = chunk.iter().map(|o| o.objective).filter(|o| o.is_finite()).collect();
        let obj_median = median(&finite_obj);
        let mut ok = Vec::new();
        let (mut n_failed, mut n_stuck) = (0, 0);
        for (t, o) in chunk.iter().enumerate() {
            let status = if o.message.is_some() || !o.err.is_finite() {
                n_failed += 1;
                TrialStatus::Failed
            } else if non_convex && o.objective > plan.stuck_factor * obj_median {
                n_stuck += 1;
                TrialStatus::Stuck
            } else {
                ok.push(o.err);
                TrialStatus::Ok
            };
            rows.push(SweepRow {
                beta,
                n,
                p: plan.p,
                trial: t,
                empirical_err: o.err,
                se_pred,
                closedform_pred,
                runtime_ms: o.runtime_ms,
                status,
                objective: o.objective,
                message: o.message.clone(),
            });
        }
        summary.push(SweepSummary {
            beta,
            n,
            p: plan.p,
            median_err: median(&ok),
            mean_err: if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            },
            se_pred,
            closedform_pred,
            n_ok: ok.len(),
            n_failed,
            n_stuck,
            se_error,
        });
    }
    Ok(SweepResult { rows, summary })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.beta.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.trial.to_string(),
            r.empirical_err.to_string(),
            r.se_pred.to_string(),
            opt(r.closedform_pred),
            format!("{:.3}", r.runtime_ms),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summary: &[SweepSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for s in summary {
        w.write_record([
            s.beta.to_string(),
            s.n.to_string(),
            s.p.to_string(),
            s.median_err.to_string(),
            s.mean_err.to_string(),
            s.se_pred.to_string(),
            opt(s.closedform_pred),
            s.n_ok.to_string(),
            s.n_failed.to_string(),
            s.n_stuck.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
