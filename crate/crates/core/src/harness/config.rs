//! Flat `key = value` configuration with dotted sections.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments win, so
//! command-line overrides are simply applied after the file. The environment
//! variable `GLMLAB_SEED` overrides `seed`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::denoisers::Penalty;
use crate::error::{Error, Result};
use crate::mlvamp::VampConfig;
use crate::spectra::SpectrumModel;
use crate::stateevo::SeConfig;
use crate::synthdata::{Channel, TrueModel, W0Law};

use super::baseline::BaselineOptions;
use super::calibrate::calibrate_snr;
use super::sweep::{ClosedFormKind, Metric, Solver, SweepPlan};

pub const SEED_ENV: &str = "GLMLAB_SEED";

const KEYS: &[&str] = &[
    "seed",
    "n",
    "p",
    "beta",
    "grid",
    "trials",
    "metric",
    "solver",
    "test_samples",
    "closed_form",
    "stuck_factor",
    "calibrate.target",
    "channel",
    "channel.noise_var",
    "channel.snr_db",
    "spectrum",
    "spectrum.sigma",
    "spectrum.sigma_tr",
    "spectrum.sigma_ts",
    "spectrum.scale",
    "spectrum.sigma_u_db",
    "spectrum.rho",
    "spectrum.epsilon",
    "w0",
    "w0.var",
    "w0.density",
    "w0.value",
    "penalty.in",
    "penalty.in.lambda",
    "penalty.in.beta_scale",
    "penalty.out",
    "penalty.out.weight",
    "penalty.out.noise_var",
    "mlvamp.damping",
    "mlvamp.max_iters",
    "mlvamp.tol",
    "mlvamp.gamma_init",
    "mlvamp.alpha_clip",
    "mlvamp.max_bad_iters",
    "se.mc_samples",
    "se.seed",
    "se.tol",
    "se.max_iters",
    "se.damping",
    "se.tau_init",
    "se.gamma_init",
    "se.alpha_clip",
    "se.quadratic_fast_path",
    "se.hermite_nodes",
    "se.mp_nodes",
    "baseline.newton_tol",
    "baseline.newton_max_iters",
    "baseline.epochs",
    "baseline.batch",
    "baseline.learning_rate",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Take `seed` from `GLMLAB_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.set("seed", v.trim())?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Comma-separated list of reals.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("cannot parse `{key}` entry `{}`", s.trim())))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn vamp_config(&self) -> Result<VampConfig> {
        let d = VampConfig::default();
        let cfg = VampConfig {
            damping: self.get_or("mlvamp.damping", d.damping)?,
            max_iters: self.get_or("mlvamp.max_iters", d.max_iters)?,
            tol: self.get_or("mlvamp.tol", d.tol)?,
            gamma_init: self.get_or("mlvamp.gamma_init", d.gamma_init)?,
            alpha_clip: self.get_or("mlvamp.alpha_clip", d.alpha_clip)?,
            max_bad_iters: self.get_or("mlvamp.max_bad_iters", d.max_bad_iters)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn se_config(&self) -> Result<SeConfig> {
        let d = SeConfig::default();
        let cfg = SeConfig {
            mc_samples: self.get_or("se.mc_samples", d.mc_samples)?,
            seed: self.get_or("se.seed", self.seed()?)?,
            tol: self.get_or("se.tol", d.tol)?,
            max_iters: self.get_or("se.max_iters", d.max_iters)?,
            damping: self.get_or("se.damping", d.damping)?,
            tau_init: self.get_or("se.tau_init", d.tau_init)?,
            gamma_init: self.get_or("se.gamma_init", d.gamma_init)?,
            alpha_clip: self.get_or("se.alpha_clip", d.alpha_clip)?,
            quadratic_fast_path: self.get_or("se.quadratic_fast_path", d.quadratic_fast_path)?,
            hermite_nodes: self.get_or("se.hermite_nodes", d.hermite_nodes)?,
            mp_nodes: self.get_or("se.mp_nodes", d.mp_nodes)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn baseline_options(&self) -> Result<BaselineOptions> {
        let d = BaselineOptions::default();
        Ok(BaselineOptions {
            newton_tol: self.get_or("baseline.newton_tol", d.newton_tol)?,
            newton_max_iters: self.get_or("baseline.newton_max_iters", d.newton_max_iters)?,
            adam: super::baseline::AdamOptions {
                epochs: self.get_or("baseline.epochs", d.adam.epochs)?,
                batch: self.get_or("baseline.batch", d.adam.batch)?,
                learning_rate: self.get_or("baseline.learning_rate", d.adam.learning_rate)?,
                ..d.adam
            },
        })
    }

    pub fn spectrum(&self) -> Result<SpectrumModel> {
        let kind = self.raw("spectrum").unwrap_or("iid");
        let s = match kind {
            "iid" => SpectrumModel::iid(self.get_or("spectrum.sigma", 1.0)?),
            "iso" => SpectrumModel::IsoConstant {
                sigma_tr: self.get_or("spectrum.sigma_tr", 1.0)?,
                sigma_ts: self.get_or("spectrum.sigma_ts", 1.0)?,
            },
            "lognormal" => SpectrumModel::LogNormal {
                scale: self.get_or("spectrum.scale", 1.0)?,
                sigma_u_db: self.get_or("spectrum.sigma_u_db", 3.0)?,
                rho: self.get_or("spectrum.rho", 1.0)?,
            },
            "bernoulli" => SpectrumModel::BernoulliMismatch {
                epsilon: self.get_or("spectrum.epsilon", 0.0)?,
            },
            other => return Err(Error::Config(format!("unknown spectrum `{other}`"))),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn w0_law(&self) -> Result<W0Law> {
        let law = match self.raw("w0").unwrap_or("gaussian") {
            "gaussian" => W0Law::Gaussian {
                var: self.get_or("w0.var", 1.0)?,
            },
            "bernoulli_gaussian" => W0Law::BernoulliGaussian {
                density: self.get_or("w0.density", 0.1)?,
                var: self.get_or("w0.var", 1.0)?,
            },
            "constant" => W0Law::Constant {
                value: self.get_or("w0.value", 1.0)?,
            },
            other => return Err(Error::Config(format!("unknown w0 law `{other}`"))),
        };
        law.validate()?;
        Ok(law)
    }

    /// The data-generating model. A `calibrate.target` rescales the spectrum
    /// so the oracle classifier reaches that error rate.
    pub fn true_model(&self) -> Result<TrueModel> {
        let mut spectrum = self.spectrum()?;
        let w0_law = self.w0_law()?;
        let signal = spectrum.train_second_moment() * w0_law.second_moment();
        let noise_var = match (self.get::<f64>("channel.noise_var")?, self.get::<f64>("channel.snr_db")?) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set at most one of channel.noise_var and channel.snr_db".into()))
            }
            (Some(v), None) => v,
            (None, Some(db)) => signal * 10f64.powf(-db / 10.0),
            (None, None) => 0.1,
        };
        let channel = match self.raw("channel").unwrap_or("linear") {
            "linear" => Channel::Linear { noise_var },
            "logistic" => Channel::Logistic,
            "tanh" => Channel::Tanh { noise_var },
            other => return Err(Error::Config(format!("unknown channel `{other}`"))),
        };
        if let Some(target) = self.get::<f64>("calibrate.target")? {
            if channel != Channel::Logistic {
                return Err(Error::Config("calibrate.target needs the logistic channel".into()));
            }
            spectrum = calibrate_snr(&spectrum, &w0_law, target, 2e-3)?.1;
        }
        let model = TrueModel {
            spectrum,
            channel,
            w0_law,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let model = self.true_model()?;
        let lambda = self.get_or("penalty.in.lambda", 1.0)?;
        let beta_scale = match self.raw("penalty.in.beta_scale") {
            None => BetaScale::Fixed(1.0),
            Some("auto") => BetaScale::Auto,
            Some(_) => BetaScale::Fixed(self.require("penalty.in.beta_scale")?),
        };
        let f_in = match self.raw("penalty.in").unwrap_or("l2") {
            "l2" => InputPenalty::L2 { lambda, beta_scale },
            "l1" => InputPenalty::L1 { lambda },
            other => return Err(Error::Config(format!("unknown input penalty `{other}`"))),
        };
        let channel_noise = model.channel.noise_var();
        let default_out = match model.channel {
            Channel::Linear { .. } => "squared",
            Channel::Logistic => "logistic",
            Channel::Tanh { .. } => "tanh",
        };
        let f_out = match self.raw("penalty.out").unwrap_or(default_out) {
            "squared" => {
                let weight = match self.get::<f64>("penalty.out.weight")? {
                    Some(w) => w,
                    None => match channel_noise {
                        Some(v) if v > 0.0 => 1.0 / v,
                        _ => 1.0,
                    },
                };
                Penalty::SquaredLoss { weight }
            }
            "logistic" => Penalty::LogisticLoss,
            "hinge" => Penalty::HingeLoss,
            "tanh" => Penalty::TanhLoss {
                noise_var: match self.get::<f64>("penalty.out.noise_var")? {
                    Some(v) => v,
                    None => channel_noise.filter(|&v| v > 0.0).unwrap_or(1.0),
                },
            },
            other => return Err(Error::Config(format!("unknown output loss `{other}`"))),
        };
        f_out.validate()?;
        let spec = ProblemSpec { model, f_in, f_out };
        spec.input_penalty(1.0)?.validate()?;
        Ok(spec)
    }

    pub fn metric(&self, channel: &Channel) -> Result<Metric> {
        match self.raw("metric") {
            None => Ok(match channel {
                Channel::Logistic => Metric::ErrorRate,
                _ => Metric::SquaredDb,
            }),
            Some(v) => v.parse(),
        }
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        let problem = self.problem()?;
        let metric = self.metric(&problem.model.channel)?;
        let plan = SweepPlan {
            p: self.require("p")?,
            grid: self
                .get_list("grid")?
                .ok_or_else(|| Error::Config("missing key `grid`".into()))?,
            trials: self.get_or("trials", 10)?,
            metric,
            seed: self.seed()?,
            test_samples: self.get_or("test_samples", 1000)?,
            solver: self.get_or("solver", Solver::Baseline)?,
            closed_form: self.get_or("closed_form", ClosedFormKind::None)?,
            stuck_factor: self.get_or("stuck_factor", 2.0)?,
            problem,
            se: self.se_config()?,
            vamp: self.vamp_config()?,
            baseline: self.baseline_options()?,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Scale of the L2 penalty `λw²/(2 β_s)`; `Auto` uses the problem's `β = p/N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaScale {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputPenalty {
    L2 { lambda: f64, beta_scale: BetaScale },
    L1 { lambda: f64 },
}

/// Data model plus the estimator's penalties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub model: TrueModel,
    pub f_in: InputPenalty,
    pub f_out: Penalty,
}

impl ProblemSpec {
    pub fn input_penalty(&self, beta: f64) -> Result<Penalty> {
        let pen = match self.f_in {
            InputPenalty::L2 { lambda, beta_scale } => Penalty::L2 {
                lambda,
                beta_scale: match beta_scale {
                    BetaScale::Fixed(b) => b,
                    BetaScale::Auto => beta,
                },
            },
            InputPenalty::L1 { lambda } => Penalty::L1 { lambda },
        };
        pen.validate()?;
        Ok(pen)
    }

    pub fn se_problem(&self, beta: f64) -> Result<crate::stateevo::SeProblem> {
        Ok(crate::stateevo::SeProblem {
            spectrum: self.model.spectrum,
            channel: self.model.channel,
            w0_law: self.model.w0_law,
            f_in: self.input_penalty(beta)?,
            f_out: self.f_out,
            beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = Config::parse("# demo\np = 50 # features\nchannel = logistic\n\nse.mc_samples=1000\n").unwrap();
        assert_eq!(cfg.require::<usize>("p").unwrap(), 50);
        cfg.apply_override("p=60").unwrap();
        assert_eq!(cfg.require::<usize>("p").unwrap(), 60);
        assert_eq!(cfg.se_config().unwrap().mc_samples, 1000);
        assert_eq!(cfg.problem().unwrap().f_out, Penalty::LogisticLoss);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::parse("foo = 1").is_err());
        assert!(Config::parse("p 1").is_err());
        let cfg = Config::parse("p = many").unwrap();
        assert!(cfg.require::<usize>("p").is_err());
        assert!(Config::parse("channel = probit").unwrap().problem().is_err());
    }

    #[test]
    fn snr_sets_noise_and_auto_beta_scale() {
        let cfg = Config::parse("channel.snr_db = 10\npenalty.in.beta_scale = auto").unwrap();
        let prob = cfg.problem().unwrap();
        assert_eq!(prob.model.channel, Channel::Linear { noise_var: 0.1 });
        assert_eq!(prob.f_out, Penalty::SquaredLoss { weight: 10.0 });
        assert_eq!(
            prob.input_penalty(2.0).unwrap(),
            Penalty::L2 {
                lambda: 1.0,
                beta_scale: 2.0
            }
        );
    }
}
