use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use glmlab::closedform::{
    mismatch_gen, ridge_constants, ridge_gen, ridgeless_gen, ridgeless_gen_one_sided, ErrorConstants,
};
use glmlab::denoisers::Penalty;
use glmlab::spectra::SpectrumModel;
use glmlab::harness::sweep::Solver;
use glmlab::harness::{baseline_fit, run_sweep, write_rows_csv, write_summary_csv, Config};
use glmlab::mc::stream_rng;
use glmlab::mlvamp::{fit, kkt_residual};
use glmlab::stateevo::{predict, se_fixed_point, SeConfig, SeProblem};
use glmlab::synthdata::{generate_dataset, load_dataset, save_dataset, Channel, W0Law};
use glmlab::Result;

#[derive(Parser)]
#[command(name = "glmlab", version, about = "GLM learning with ML-VAMP and its state evolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set se.mc_samples=100000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_env()?;
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Vamp,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the configured model and write it to a file.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit a dataset file; prints JSON lines (iterations, then the result).
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file written by `gen`.
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "vamp")]
        solver: SolverArg,
    },
    /// State-evolution fixed point and predicted test error, as JSON.
    Se {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Aspect ratio p/N; defaults to the `beta` key.
        #[arg(long)]
        beta: Option<f64>,
        /// Include the per-iteration SE trajectory.
        #[arg(long)]
        trajectory: bool,
    },
    /// Closed-form ridge, ridgeless and mismatch test errors.
    ClosedForm {
        #[arg(long, value_delimiter = ',', default_value = "0.5,2")]
        beta: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_tr2: f64,
        #[arg(long, default_value_t = 1.0)]
        var_w0: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma_d2: f64,
        /// Mismatch levels for the Bernoulli train/test model (ignores sigma_tr2).
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Run an experiment sweep; per-trial rows as CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Rows file (stdout if omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-grid-point summary file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json_line(out: &mut impl Write, v: &serde_json::Value) -> Result<()> {
    writeln!(out, "{v}")?;
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| glmlab::Error::Format(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { cfg, out } => {
            let cfg = cfg.load()?;
            let model = cfg.true_model()?;
            let n: usize = cfg.require("n")?;
            let p: usize = cfg.require("p")?;
            let mut rng = stream_rng(cfg.seed()?, &[]);
            let ds = generate_dataset(n, p, &model, &mut rng)?;
            save_dataset(&ds, &out)?;
            eprintln!("wrote N={n}, p={p} to {}", out.display());
        }
        Command::Fit { cfg, data, solver } => {
            let cfg = cfg.load()?;
            let ds = load_dataset(&data)?;
            let prob = cfg.problem()?;
            let f_in = prob.input_penalty(ds.beta())?;
            let f_out = prob.f_out;
            let mut out = output(&None)?;
            match solver {
                SolverArg::Vamp => {
                    let res = fit(&ds, &f_in, &f_out, &cfg.vamp_config()?)?;
                    for rec in &res.history {
                        json_line(&mut out, &to_json(rec)?)?;
                    }
                    json_line(
                        &mut out,
                        &json!({
                            "solver": "vamp",
                            "converged": res.converged,
                            "iterations": res.iterations,
                            "kkt_residual": res.kkt_residual,
                            "w_hat": res.w_hat,
                        }),
                    )?;
                }
                SolverArg::Baseline => {
                    let mut rng = stream_rng(cfg.seed()?, &[1]);
                    let res = baseline_fit(&ds, &f_in, &f_out, &cfg.baseline_options()?, &mut rng)?;
                    json_line(
                        &mut out,
                        &json!({
                            "solver": "baseline",
                            "iterations": res.iterations,
                            "objective": res.objective,
                            "kkt_residual": kkt_residual(&ds, &f_in, &f_out, &res.w_hat, None),
                            "w_hat": res.w_hat,
                        }),
                    )?;
                }
            }
            out.flush()?;
        }
        Command::Se { cfg, beta, trajectory } => {
            let cfg = cfg.load()?;
            let beta = match beta {
                Some(b) => b,
                None => cfg.require("beta")?,
            };
            let prob = cfg.problem()?;
            let metric = cfg.metric(&prob.model.channel)?;
            let (mut fp, report) = predict(&prob.se_problem(beta)?, &cfg.se_config()?, metric.test_loss())?;
            if !trajectory {
                fp.trajectory.clear();
            }
            let mut out = output(&None)?;
            json_line(
                &mut out,
                &json!({
                    "beta": beta,
                    "fixed_point": to_json(&fp)?,
                    "report": to_json(&report)?,
                    "prediction": metric.from_error(report.e_ts, report.output_power),
                    "metric": to_json(&metric)?,
                }),
            )?;
            out.flush()?;
        }
        Command::ClosedForm {
            beta,
            lambda,
            sigma_tr2,
            var_w0,
            sigma_d2,
            epsilon,
            csv,
        } => {
            let header = [
                "beta", "lambda", "gamma0_plus", "gamma1_minus", "k22", "tau1_minus", "z", "ridge", "ridgeless",
            ];
            let mut rows = Vec::new();
            for &b in &beta {
                let rc = ridge_constants(b, lambda, sigma_tr2, var_w0, sigma_d2)?;
                let ridgeless = if b == 1.0 {
                    let (lo, hi) = ridgeless_gen_one_sided(b, sigma_tr2, var_w0, sigma_d2)?;
                    format!("{lo:.6}|{hi:.6}")
                } else {
                    format!("{:.6}", ridgeless_gen(b, sigma_tr2, var_w0, sigma_d2)?)
                };
                rows.push(vec![
                    format!("{b}"),
                    format!("{lambda}"),
                    format!("{:.6}", rc.gamma0_plus),
                    format!("{:.6}", rc.gamma1_minus),
                    format!("{:.6}", rc.k22),
                    format!("{:.6}", rc.tau1_minus),
                    format!("{:.6}", rc.z),
                    format!("{:.6}", ridge_gen(b, lambda, sigma_tr2, var_w0, sigma_d2)?),
                    ridgeless,
                ]);
            }
            let mut out = output(&None)?;
            print_table(&mut out, &header, &rows, csv)?;
            if !epsilon.is_empty() {
                let mut mrows = Vec::new();
                for &b in &beta {
                    // Constants come from ridge trained on the Bernoulli spectrum.
                    let prob = SeProblem {
                        spectrum: SpectrumModel::BernoulliMismatch { epsilon: 0.0 },
                        channel: Channel::Linear { noise_var: sigma_d2 },
                        w0_law: W0Law::Gaussian { var: var_w0 },
                        f_in: Penalty::L2 { lambda, beta_scale: b },
                        f_out: Penalty::SquaredLoss { weight: 1.0 },
                        beta: b,
                    };
                    let ec = ErrorConstants::from(&se_fixed_point(&prob, &SeConfig::default())?);
                    for &e in &epsilon {
                        mrows.push(vec![format!("{b}"), format!("{e}"), format!("{:.6}", mismatch_gen(&ec, e, sigma_d2)?)]);
                    }
                }
                writeln!(out)?;
                print_table(&mut out, &["beta", "epsilon", "mismatch"], &mrows, csv)?;
            }
            out.flush()?;
        }
        Command::Sweep { cfg, out, summary } => {
            let cfg = cfg.load()?;
            let plan = cfg.sweep_plan()?;
            if plan.solver == Solver::Vamp {
                eprintln!("solver: ML-VAMP");
            }
            let res = run_sweep(&plan)?;
            write_rows_csv(&res.rows, output(&out)?)?;
            if let Some(path) = summary {
                write_summary_csv(&res.summary, File::create(path)?)?;
            }
            for r in res.rows.iter().filter(|r| r.message.is_some()) {
                eprintln!(
                    "beta={} trial={}: {}",
                    r.beta,
                    r.trial,
                    r.message.as_deref().unwrap_or_default()
                );
            }
        }
    }
    Ok(())
}

fn print_table(out: &mut impl Write, header: &[&str], rows: &[Vec<String>], csv: bool) -> Result<()> {
    if csv {
        writeln!(out, "{}", header.join(","))?;
        for r in rows {
            writeln!(out, "{}", r.join(","))?;
        }
        return Ok(());
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
