//! State evolution (SE) of ML-VAMP for GLM learning: the scalar recursion
//! over precisions, averaged derivatives and error variances, its fixed
//! point, and the asymptotic test-error and parameter-error predictions.
//!
//! The two nonlinear layers (input prior, output loss) are evaluated by
//! seeded Monte Carlo with antithetic pairs. The two linear layers are
//! Gaussian given the singular value, so their moments are computed exactly
//! against a discretized singular-value law.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::denoisers::Penalty;
use crate::error::{check_positive, Error, Result};
use crate::mc::{estimate, McPlan};
use crate::spectra::{Atom, MpLaw, MpSide, SpectrumModel, DEFAULT_HERMITE_NODES};
use crate::synthdata::{sigmoid, Channel, TestLoss, W0Law};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeConfig {
    /// Monte Carlo samples per expectation (counted individually, so one
    /// antithetic pair is two samples).
    pub mc_samples: usize,
    pub seed: u64,
    /// Largest componentwise relative change of the parameter vector at
    /// which iteration stops; raised to `0.1/sqrt(mc_samples)` when a
    /// layer is evaluated by Monte Carlo.
    pub tol: f64,
    pub max_iters: usize,
    /// Weight on the new value when updating log-precisions and variances.
    pub damping: f64,
    pub tau_init: f64,
    pub gamma_init: f64,
    pub alpha_clip: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Use closed forms for an L2 prior and for a squared loss on a linear channel.
    pub quadratic_fast_path: bool,
    pub hermite_nodes: usize,
    pub mp_nodes: usize,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            mc_samples: 1_000_000,
            seed: 0,
            tol: 1e-7,
            max_iters: 2000,
            damping: 0.5,
            tau_init: 1.0,
            gamma_init: 1.0,
            alpha_clip: 1e-6,
            gamma_min: 1e-11,
            gamma_max: 1e11,
            quadratic_fast_path: true,
            hermite_nodes: DEFAULT_HERMITE_NODES,
            mp_nodes: 400,
        }
    }
}

impl SeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "se.damping",
                value: self.damping,
                reason: "must lie in (0, 1]",
            });
        }
        check_positive("se.tol", self.tol)?;
        check_positive("se.tau_init", self.tau_init)?;
        check_positive("se.gamma_init", self.gamma_init)?;
        if self.mc_samples < 2 {
            return Err(Error::InvalidParameter {
                name: "se.mc_samples",
                value: self.mc_samples as f64,
                reason: "need at least one antithetic pair",
            });
        }
        Ok(())
    }

    fn plan(&self) -> McPlan {
        McPlan::new(self.mc_samples / 2, self.seed)
    }
}

/// Everything the SE needs to know about the learning problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeProblem {
    pub spectrum: SpectrumModel,
    pub channel: Channel,
    pub w0_law: W0Law,
    pub f_in: Penalty,
    pub f_out: Penalty,
    /// Aspect ratio `p / N`.
    pub beta: f64,
}

/// Symmetric 2×2 covariance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Cov2 {
    pub k11: f64,
    pub k12: f64,
    pub k22: f64,
}

impl Cov2 {
    pub fn new(k11: f64, k12: f64, k22: f64) -> Self {
        Self { k11, k12, k22 }
    }

    pub fn trace(&self) -> f64 {
        self.k11 + self.k22
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let mid = 0.5 * (self.k11 + self.k22);
        let rad = (0.25 * (self.k11 - self.k22).powi(2) + self.k12 * self.k12).sqrt();
        mid - rad
    }

    /// Lower Cholesky-like factor `(l11, l21, l22)` valid for singular matrices.
    pub fn factor(&self) -> (f64, f64, f64) {
        let l11 = self.k11.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.k12 / l11 } else { 0.0 };
        let l22 = (self.k22 - l21 * l21).max(0.0).sqrt();
        (l11, l21, l22)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.k11, self.k12, self.k22]
    }
}

/// SE parameters after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeIterate {
    pub gamma_plus: [f64; 3],
    pub gamma_minus: [f64; 3],
    pub alpha_plus: [f64; 3],
    pub alpha_minus: [f64; 3],
    pub k_plus: [Cov2; 3],
    pub tau_minus: [f64; 3],
}

impl SeIterate {
    fn params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::with_capacity(18);
        v.extend(self.gamma_plus);
        v.extend(self.gamma_minus);
        v.extend(self.tau_minus);
        for k in &self.k_plus {
            v.extend(k.as_array());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeFixedPoint {
    pub gamma_plus: [f64; 3],
    pub gamma_minus: [f64; 3],
    pub alpha_plus: [f64; 3],
    pub alpha_minus: [f64; 3],
    /// Joint covariance of `(P⁰_ℓ, Q⁺_ℓ)` entering layer ℓ + 1.
    pub k_plus: [Cov2; 3],
    /// Variance of the backward error `Q⁻_ℓ`.
    pub tau_minus: [f64; 3],
    /// Second moments of the true signals `Z⁰_ℓ`.
    pub tau0: [f64; 3],
    pub iterations: usize,
    pub trajectory: Vec<SeIterate>,
    /// `E[Ẑ Q⁻]/E[(Q⁻)²]` for the input layer and the analogous Stein ratio
    /// for the output layer at the last iteration (NaN on closed-form paths).
    pub stein_alpha: [f64; 2],
}

fn expect(atoms: &[Atom], f: impl Fn(f64) -> f64) -> f64 {
    atoms.iter().map(|a| a.weight * f(a.value)).sum()
}

/// Forward message through a linear layer `z = s p`.
fn linear_forward(atoms: &[Atom], k_in: Cov2, gamma_a: f64, gamma_b: f64, tau_b: f64) -> (f64, Cov2) {
    let alpha = expect(atoms, |s| {
        let s2g = s * s * gamma_b;
        s2g / (gamma_a + s2g)
    });
    let one = 1.0 - alpha;
    let m2 = expect(atoms, |s| s * s);
    let cross = expect(atoms, |s| s * s * gamma_a / (gamma_a + s * s * gamma_b));
    let var = expect(atoms, |s| {
        let d = gamma_a + s * s * gamma_b;
        let a = s * gamma_a / d;
        let b = s * s * gamma_b / d - alpha;
        a * a * k_in.k22 + b * b * tau_b
    });
    (
        alpha,
        Cov2::new(m2 * k_in.k11, cross * k_in.k12 / one, var / (one * one)),
    )
}

/// Backward message through a linear layer: averaged derivative and the
/// variance of the new backward error.
fn linear_backward(atoms: &[Atom], k_in: Cov2, gamma_a: f64, gamma_b: f64, tau_b: f64) -> (f64, f64) {
    let alpha = expect(atoms, |s| gamma_a / (gamma_a + s * s * gamma_b));
    let one = 1.0 - alpha;
    let var = expect(atoms, |s| {
        let d = gamma_a + s * s * gamma_b;
        let a = gamma_a / d - alpha;
        let b = s * gamma_b / d;
        a * a * k_in.k22 + b * b * tau_b
    });
    (alpha, var / (one * one))
}

struct Evaluator<'a> {
    prob: &'a SeProblem,
    cfg: &'a SeConfig,
    plan: McPlan,
    train: Vec<Atom>,
    rows: Vec<Atom>,
    cols: Vec<Atom>,
}

const INPUT_KEY: u64 = 0;
const OUTPUT_KEY: u64 = 3;

fn failed(what: &'static str) -> Error {
    Error::NonConvergence {
        what,
        iterations: 0,
        residual: f64::NAN,
    }
}

impl Evaluator<'_> {
    fn input_quadratic(&self) -> Option<f64> {
        match self.prob.f_in {
            Penalty::L2 { lambda, beta_scale } if self.cfg.quadratic_fast_path => Some(lambda / beta_scale),
            _ => None,
        }
    }

    fn output_quadratic(&self) -> Option<(f64, f64)> {
        match (self.prob.f_out, self.prob.channel) {
            (Penalty::SquaredLoss { weight }, Channel::Linear { noise_var }) if self.cfg.quadratic_fast_path => {
                Some((weight, noise_var))
            }
            _ => None,
        }
    }

    /// Stopping tolerance. With frozen Monte Carlo draws the map is only
    /// resolved to O(1/sqrt(n)), and a nonconvex prox makes it piecewise
    /// continuous, so iterating below a tenth of that resolution can cycle.
    fn stop_tol(&self) -> f64 {
        if self.input_quadratic().is_some() && self.output_quadratic().is_some() {
            self.cfg.tol
        } else {
            self.cfg.tol.max(0.1 / (self.cfg.mc_samples as f64).sqrt())
        }
    }

    /// Layer 0 forward: `(ᾱ0⁺, K0⁺, stein)`.
    fn input_layer(&self, gamma: f64, tau: f64) -> Result<(f64, Cov2, f64)> {
        let ew2 = self.prob.w0_law.second_moment();
        if let Some(c) = self.input_quadratic() {
            return Ok((gamma / (gamma + c), Cov2::new(ew2, -ew2, ew2), f64::NAN));
        }
        let law = self.prob.w0_law;
        let f_in = self.prob.f_in;
        let sd = tau.sqrt();
        let flip = law.is_symmetric();
        let draw = |rng: &mut crate::mc::McRng| {
            let w = law.sample(rng);
            let q = sd * rng.sample::<f64, _>(StandardNormal);
            [(w, q), (if flip { -w } else { w }, -q)]
        };
        let pass1 = estimate::<1, _>(&self.plan, INPUT_KEY, |rng, v| {
            for (w, q) in draw(rng) {
                v[0] += 0.5 * f_in.prox(w + q, gamma, 0.0).map_or(f64::NAN, |p| p.derivative);
            }
        });
        let alpha = pass1.mean[0];
        if !alpha.is_finite() {
            return Err(failed("input-layer prox in SE"));
        }
        let a = self.clip(alpha, 0)?;
        let pass2 = estimate::<3, _>(&self.plan, INPUT_KEY, |rng, v| {
            for (w, q) in draw(rng) {
                let z = f_in.prox(w + q, gamma, 0.0).map_or(f64::NAN, |p| p.value);
                let qp = (z - w - a * q) / (1.0 - a);
                v[0] += 0.5 * w * qp;
                v[1] += 0.5 * qp * qp;
                v[2] += 0.5 * z * q;
            }
        });
        Ok((a, Cov2::new(ew2, pass2.mean[0], pass2.mean[1]), pass2.mean[2] / tau))
    }

    /// Layer 3 backward: `(ᾱ2⁻, τ2⁻, stein)`.
    fn output_layer(&self, k: Cov2, gamma: f64) -> Result<(f64, f64, f64)> {
        if let Some((w, noise_var)) = self.output_quadratic() {
            return Ok((gamma / (gamma + w), noise_var, f64::NAN));
        }
        let (l11, l21, l22) = k.factor();
        let channel = self.prob.channel;
        let f_out = self.prob.f_out;
        // (P0, R = P0 + Q⁺, η2) for an antithetic pair, plus label weights.
        let draw = |rng: &mut crate::mc::McRng| {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let d = channel.sample_noise(rng);
            let anti = match channel {
                Channel::Logistic => 1.0 - d,
                _ => -d,
            };
            [(e1, e2, d), (-e1, -e2, anti)]
        };
        // Labels and their probabilities given P0; the logistic label is
        // integrated out exactly.
        let labels = move |p0: f64, d: f64| -> [(f64, f64); 2] {
            match channel {
                Channel::Logistic => {
                    let r = sigmoid(p0);
                    [(1.0, r), (0.0, 1.0 - r)]
                }
                _ => [(channel.output(p0, d), 1.0), (0.0, 0.0)],
            }
        };
        let pass1 = estimate::<1, _>(&self.plan, OUTPUT_KEY, |rng, v| {
            for (e1, e2, d) in draw(rng) {
                let p0 = l11 * e1;
                let r = p0 + l21 * e1 + l22 * e2;
                for (y, wt) in labels(p0, d) {
                    if wt > 0.0 {
                        v[0] += 0.5 * wt * f_out.prox(r, gamma, y).map_or(f64::NAN, |p| p.derivative);
                    }
                }
            }
        });
        let alpha = pass1.mean[0];
        if !alpha.is_finite() {
            return Err(failed("output-layer prox in SE"));
        }
        let a = self.clip(alpha, 5)?;
        let pass2 = estimate::<2, _>(&self.plan, OUTPUT_KEY, |rng, v| {
            for (e1, e2, d) in draw(rng) {
                let p0 = l11 * e1;
                let q = l21 * e1 + l22 * e2;
                for (y, wt) in labels(p0, d) {
                    if wt > 0.0 {
                        let x = f_out.prox(p0 + q, gamma, y).map_or(f64::NAN, |p| p.value);
                        let qm = (x - p0 - a * q) / (1.0 - a);
                        v[0] += 0.5 * wt * qm * qm;
                        v[1] += 0.5 * wt * x * e2;
                    }
                }
            }
        });
        let stein = if l22 > 0.0 { pass2.mean[1] / l22 } else { f64::NAN };
        Ok((a, pass2.mean[0], stein))
    }

    /// Clip an averaged derivative, rejecting values outside (0, 1).
    fn clip(&self, alpha: f64, slot: usize) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Degeneracy {
                layer: slot % 3,
                iteration: 0,
                alpha,
            });
        }
        Ok(alpha.clamp(self.cfg.alpha_clip, 1.0 - self.cfg.alpha_clip))
    }

    fn clip_gamma(&self, g: f64) -> f64 {
        g.clamp(self.cfg.gamma_min, self.cfg.gamma_max)
    }
}

fn damp_log(new: f64, old: f64, theta: f64) -> f64 {
    (theta * new.ln() + (1.0 - theta) * old.ln()).exp()
}

/// Iterate the SE recursion to its fixed point.
pub fn se_fixed_point(prob: &SeProblem, cfg: &SeConfig) -> Result<SeFixedPoint> {
    se_run(prob, cfg, false)
}

/// Run exactly `iterations` SE sweeps without damping-based stopping,
/// returning the per-iteration trajectory.
pub fn se_trajectory(prob: &SeProblem, cfg: &SeConfig, iterations: usize) -> Result<Vec<SeIterate>> {
    let cfg = SeConfig {
        max_iters: iterations,
        ..*cfg
    };
    Ok(se_run(prob, &cfg, true)?.trajectory)
}

fn se_run(prob: &SeProblem, cfg: &SeConfig, fixed_count: bool) -> Result<SeFixedPoint> {
    cfg.validate()?;
    prob.spectrum.validate()?;
    prob.channel.validate()?;
    prob.w0_law.validate()?;
    prob.f_in.validate()?;
    prob.f_out.validate()?;
    check_positive("beta", prob.beta)?;
    let mp = MpLaw::new(prob.beta)?;
    let ev = Evaluator {
        prob,
        cfg,
        plan: cfg.plan(),
        train: prob.spectrum.train_atoms(cfg.hermite_nodes),
        rows: mp.singular_atoms(cfg.mp_nodes, MpSide::Rows),
        cols: mp.singular_atoms(cfg.mp_nodes, MpSide::Cols),
    };
    let tau00 = prob.w0_law.second_moment();
    let tau01 = expect(&ev.train, |s| s * s) * tau00;
    let tau02 = expect(&ev.rows, |s| s * s) * tau01;
    let theta = cfg.damping;
    let tol = ev.stop_tol();

    let mut gamma_minus = [cfg.gamma_init; 3];
    let mut tau_minus = [cfg.tau_init; 3];
    let mut trajectory: Vec<SeIterate> = Vec::new();
    let mut stein = [f64::NAN; 2];
    let mut changes = Vec::new();
    let tag = |e: Error, it: usize| match e {
        Error::Degeneracy { layer, alpha, .. } => Error::Degeneracy {
            layer,
            iteration: it,
            alpha,
        },
        other => other,
    };

    for it in 0..cfg.max_iters {
        let mut gamma_plus = [0.0; 3];
        let mut alpha_plus = [0.0; 3];
        let mut alpha_minus = [0.0; 3];
        let mut k_plus = [Cov2::default(); 3];

        // Forward pass.
        let (a0, k0, s_in) = ev.input_layer(gamma_minus[0], tau_minus[0]).map_err(|e| tag(e, it))?;
        alpha_plus[0] = a0;
        k_plus[0] = k0;
        gamma_plus[0] = ev.clip_gamma((1.0 / a0 - 1.0) * gamma_minus[0]);
        stein[0] = s_in;

        let (a1, k1) = linear_forward(&ev.train, k0, gamma_plus[0], gamma_minus[1], tau_minus[1]);
        let a1 = ev.clip(a1, 1).map_err(|e| tag(e, it))?;
        alpha_plus[1] = a1;
        k_plus[1] = k1;
        gamma_plus[1] = ev.clip_gamma((1.0 / a1 - 1.0) * gamma_minus[1]);

        let (a2, k2) = linear_forward(&ev.rows, k1, gamma_plus[1], gamma_minus[2], tau_minus[2]);
        let a2 = ev.clip(a2, 2).map_err(|e| tag(e, it))?;
        alpha_plus[2] = a2;
        k_plus[2] = k2;
        gamma_plus[2] = ev.clip_gamma((1.0 / a2 - 1.0) * gamma_minus[2]);

        // Backward pass, damping each new (γ̄⁻, τ⁻) as soon as it is produced.
        let (b2, t2, s_out) = ev.output_layer(k2, gamma_plus[2]).map_err(|e| tag(e, it))?;
        alpha_minus[2] = b2;
        stein[1] = s_out;
        gamma_minus[2] = ev.clip_gamma(damp_log((1.0 / b2 - 1.0) * gamma_plus[2], gamma_minus[2], theta));
        tau_minus[2] = theta * t2 + (1.0 - theta) * tau_minus[2];

        let (b1, t1) = linear_backward(&ev.cols, k1, gamma_plus[1], gamma_minus[2], tau_minus[2]);
        let b1 = ev.clip(b1, 4).map_err(|e| tag(e, it))?;
        alpha_minus[1] = b1;
        gamma_minus[1] = ev.clip_gamma(damp_log((1.0 / b1 - 1.0) * gamma_plus[1], gamma_minus[1], theta));
        tau_minus[1] = theta * t1 + (1.0 - theta) * tau_minus[1];

        let (b0, t0) = linear_backward(&ev.train, k0, gamma_plus[0], gamma_minus[1], tau_minus[1]);
        let b0 = ev.clip(b0, 3).map_err(|e| tag(e, it))?;
        alpha_minus[0] = b0;
        gamma_minus[0] = ev.clip_gamma(damp_log((1.0 / b0 - 1.0) * gamma_plus[0], gamma_minus[0], theta));
        tau_minus[0] = theta * t0 + (1.0 - theta) * tau_minus[0];

        let cur = SeIterate {
            gamma_plus,
            gamma_minus,
            alpha_plus,
            alpha_minus,
            k_plus,
            tau_minus,
        };
        if cur.params().iter().any(|x| !x.is_finite()) {
            return Err(Error::Consistency(format!("non-finite SE parameters at iteration {it}")));
        }
        let change = trajectory.last().map(|prev: &SeIterate| {
            cur.params()
                .iter()
                .zip(prev.params())
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
                .fold(0.0, f64::max)
        });
        trajectory.push(cur);
        if let Some(c) = change {
            changes.push(c);
            if !fixed_count && c <= tol {
                let last = trajectory.last().copied().expect("nonempty trajectory");
                return Ok(SeFixedPoint {
                    gamma_plus: last.gamma_plus,
                    gamma_minus: last.gamma_minus,
                    alpha_plus: last.alpha_plus,
                    alpha_minus: last.alpha_minus,
                    k_plus: last.k_plus,
                    tau_minus: last.tau_minus,
                    tau0: [tau00, tau01, tau02],
                    iterations: it + 1,
                    trajectory,
                    stein_alpha: stein,
                });
            }
        }
    }
    if fixed_count {
        let last = trajectory.last().copied().ok_or(Error::Empty("SE trajectory"))?;
        return Ok(SeFixedPoint {
            gamma_plus: last.gamma_plus,
            gamma_minus: last.gamma_minus,
            alpha_plus: last.alpha_plus,
            alpha_minus: last.alpha_minus,
            k_plus: last.k_plus,
            tau_minus: last.tau_minus,
            tau0: [tau00, tau01, tau02],
            iterations: trajectory.len(),
            trajectory,
            stein_alpha: stein,
        });
    }
    Err(Error::FixedPoint {
        iterations: cfg.max_iters,
        changes,
    })
}

/// Covariance `M` of `(Z_ts, Ẑ_ts)` from the fixed point, by quadrature over
/// the joint spectrum.
pub fn m_matrix(fp: &SeFixedPoint, spectrum: &SpectrumModel, hermite_nodes: usize) -> Result<Cov2> {
    let atoms = spectrum.joint_atoms(hermite_nodes);
    let k = fp.k_plus[0];
    let g0 = fp.gamma_plus[0];
    let g1 = fp.gamma_minus[1];
    let t1 = fp.tau_minus[1];
    let (mut ets2, mut cross, mut a2, mut b2) = (0.0, 0.0, 0.0, 0.0);
    for at in &atoms {
        let d = g0 + at.s_tr * at.s_tr * g1;
        let st2 = at.s_ts * at.s_ts;
        ets2 += at.weight * st2;
        cross += at.weight * st2 * g0 / d;
        a2 += at.weight * (at.s_ts * g0 / d).powi(2);
        b2 += at.weight * (at.s_ts * at.s_tr * g1 / d).powi(2);
    }
    let m11 = ets2 * k.k11;
    let m12 = m11 + cross * k.k12;
    let m22 = k.k22 * a2 + t1 * b2 + 2.0 * m12 - m11;
    let m = Cov2::new(m11, m12, m22);
    check_psd(m)
}

fn check_psd(m: Cov2) -> Result<Cov2> {
    let tr = m.trace();
    let min = m.min_eigenvalue();
    if min < -1e-10 * tr.abs() {
        return Err(Error::Consistency(format!(
            "M is not PSD: minimum eigenvalue {min:e}, trace {tr:e}"
        )));
    }
    if min >= 0.0 {
        return Ok(m);
    }
    // Clamp the negative eigenvalue to zero.
    let mid = 0.5 * (m.k11 + m.k22);
    let rad = (0.25 * (m.k11 - m.k22).powi(2) + m.k12 * m.k12).sqrt();
    let top = mid + rad;
    if rad == 0.0 {
        return Ok(Cov2::new(0.0, 0.0, 0.0));
    }
    let (c, s) = {
        let vx = m.k12;
        let vy = top - m.k11;
        let n = (vx * vx + vy * vy).sqrt();
        if n > 0.0 {
            (vx / n, vy / n)
        } else {
            (1.0, 0.0)
        }
    };
    Ok(Cov2::new(top * c * c, top * c * s, top * s * s))
}

/// `M` by direct Monte Carlo over `(S_tr, S_ts)` drawn from the model and
/// the Gaussian SE variables, as an independent route to [`m_matrix`].
pub fn m_matrix_mc(fp: &SeFixedPoint, spectrum: &SpectrumModel, plan: &McPlan) -> Result<(Cov2, Cov2)> {
    spectrum.validate()?;
    let (l11, l21, l22) = fp.k_plus[0].factor();
    let g0 = fp.gamma_plus[0];
    let g1 = fp.gamma_minus[1];
    let t1 = fp.tau_minus[1].max(0.0).sqrt();
    let spec = *spectrum;
    let est = estimate::<3, _>(plan, 11, |rng, v| {
        let pair = spec.sample(1, rng).expect("validated spectrum");
        let (s_tr, s_ts) = (pair.s_tr[0], pair.s_ts[0]);
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let e3: f64 = rng.sample(StandardNormal);
        for sign in [1.0, -1.0] {
            let p0 = sign * l11 * e1;
            let qp = sign * (l21 * e1 + l22 * e2);
            let qm = sign * t1 * e3;
            let d = g0 + s_tr * s_tr * g1;
            let p_hat = p0 + (g0 * qp + s_tr * g1 * qm) / d;
            let w = 0.5 * s_ts * s_ts;
            v[0] += w * p0 * p0;
            v[1] += w * p0 * p_hat;
            v[2] += w * p_hat * p_hat;
        }
    });
    Ok((
        Cov2::new(est.mean[0], est.mean[1], est.mean[2]),
        Cov2::new(est.stderr[0], est.stderr[1], est.stderr[2]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenErrorReport {
    pub m: Cov2,
    /// Test error; the closed form when one exists, otherwise Monte Carlo.
    pub e_ts: f64,
    pub e_ts_mc: f64,
    pub e_ts_stderr: f64,
    pub closed_form: Option<f64>,
    /// `E[y_ts²]`, for normalized errors.
    pub output_power: f64,
    pub metric: TestLoss,
    pub param_mse: Option<f64>,
    /// `M` by direct Monte Carlo and its largest entrywise deviation.
    pub m_direct: Option<Cov2>,
    pub m_discrepancy: Option<f64>,
}

impl GenErrorReport {
    /// `10 log10(E_ts / E[y²])`.
    pub fn normalized_db(&self) -> f64 {
        10.0 * (self.e_ts / self.output_power).log10()
    }
}

/// Test error `E f_ts(φ_out(Z_ts, D), φ(Ẑ_ts))` with `(Z_ts, Ẑ_ts) ~ N(0, M)`.
pub fn generalization_error(m: &Cov2, channel: &Channel, loss: TestLoss, plan: &McPlan) -> Result<GenErrorReport> {
    channel.validate()?;
    let m = check_psd(*m)?;
    let (l11, l21, l22) = m.factor();
    let ch = *channel;
    let est = estimate::<2, _>(plan, 21, |rng, v| {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let d = ch.sample_noise(rng);
        let pairs = match ch {
            Channel::Logistic => [(e1, e2, d), (-e1, -e2, 1.0 - d)],
            _ => [(e1, e2, d), (-e1, -e2, -d)],
        };
        for (a, b, d) in pairs {
            let z = l11 * a;
            let z_hat = l21 * a + l22 * b;
            let y_hat = ch.predict(z_hat);
            match ch {
                Channel::Logistic => {
                    let r = sigmoid(z);
                    v[0] += 0.5 * (r * loss.eval(1.0, y_hat) + (1.0 - r) * loss.eval(0.0, y_hat));
                    v[1] += 0.5 * r;
                }
                _ => {
                    let y = ch.output(z, d);
                    v[0] += 0.5 * loss.eval(y, y_hat);
                    v[1] += 0.5 * y * y;
                }
            }
        }
    });
    let (mc, stderr) = (est.mean[0], est.stderr[0]);
    let (closed, power) = match (ch, loss) {
        (Channel::Linear { noise_var }, TestLoss::Squared) => {
            let c = m.k11 + m.k22 - 2.0 * m.k12 + noise_var;
            if (mc - c).abs() > 5.0 * stderr + 1e-12 * c.abs() {
                return Err(Error::McDisagreement { mc, closed: c, stderr });
            }
            (Some(c), m.k11 + noise_var)
        }
        (Channel::Linear { noise_var }, _) => (None, m.k11 + noise_var),
        _ => (None, est.mean[1]),
    };
    Ok(GenErrorReport {
        m,
        e_ts: closed.unwrap_or(mc),
        e_ts_mc: mc,
        e_ts_stderr: stderr,
        closed_form: closed,
        output_power: power,
        metric: loss,
        param_mse: None,
        m_direct: None,
        m_discrepancy: None,
    })
}

/// Precision used in the prox that maps `W⁰ + Q⁰⁻` to the estimate `Ŵ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EstimatePrecision {
    /// `γ̄0⁻`, the precision of the message the input denoiser actually receives.
    Backward,
    /// `γ̄0⁺`.
    Forward,
}

/// `E(W⁰ - Ŵ)²` with `Ŵ = prox(W⁰ + Q⁰⁻)`, `Q⁰⁻ ~ N(0, τ0⁻)`.
pub fn param_mse(
    fp: &SeFixedPoint,
    f_in: &Penalty,
    w0_law: &W0Law,
    plan: &McPlan,
    precision: EstimatePrecision,
) -> Result<f64> {
    let gamma = match precision {
        EstimatePrecision::Backward => fp.gamma_minus[0],
        EstimatePrecision::Forward => fp.gamma_plus[0],
    };
    let sd = fp.tau_minus[0].max(0.0).sqrt();
    let law = *w0_law;
    let pen = *f_in;
    let flip = law.is_symmetric();
    let est = estimate::<1, _>(plan, 31, |rng, v| {
        let w = law.sample(rng);
        let q = sd * rng.sample::<f64, _>(StandardNormal);
        for (w, q) in [(w, q), (if flip { -w } else { w }, -q)] {
            let x = pen.prox(w + q, gamma, 0.0).map_or(f64::NAN, |p| p.value);
            v[0] += 0.5 * (w - x) * (w - x);
        }
    });
    let mse = est.mean[0];
    if !mse.is_finite() {
        return Err(failed("input prox in parameter MSE"));
    }
    Ok(mse)
}

/// Fixed point, `M`, test error and parameter MSE in one call.
pub fn predict(prob: &SeProblem, cfg: &SeConfig, loss: TestLoss) -> Result<(SeFixedPoint, GenErrorReport)> {
    let fp = se_fixed_point(prob, cfg)?;
    let m = m_matrix(&fp, &prob.spectrum, cfg.hermite_nodes)?;
    let plan = McPlan::new(cfg.mc_samples / 2, cfg.seed ^ 0x5EED);
    let mut report = generalization_error(&m, &prob.channel, loss, &plan)?;
    report.param_mse = Some(param_mse(&fp, &prob.f_in, &prob.w0_law, &plan, EstimatePrecision::Backward)?);
    let (direct, _) = m_matrix_mc(&fp, &prob.spectrum, &plan)?;
    report.m_discrepancy = Some(
        [direct.k11 - m.k11, direct.k12 - m.k12, direct.k22 - m.k22]
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs())),
    );
    report.m_direct = Some(direct);
    Ok((fp, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::{ridge_constants, ridge_gen};

    fn ridge_problem(beta: f64, lambda: f64) -> SeProblem {
        SeProblem {
            spectrum: SpectrumModel::iid(1.0),
            channel: Channel::Linear { noise_var: 0.1 },
            w0_law: W0Law::Gaussian { var: 1.0 },
            f_in: Penalty::L2 { lambda, beta_scale: beta },
            f_out: Penalty::SquaredLoss { weight: 1.0 },
            beta,
        }
    }

    #[test]
    fn ridge_fast_path_matches_closed_form() {
        for beta in [0.5, 1.0, 2.0] {
            let prob = ridge_problem(beta, 0.1);
            let fp = se_fixed_point(&prob, &SeConfig::default()).unwrap();
            let rc = ridge_constants(beta, 0.1, 1.0, 1.0, 0.1).unwrap();
            assert!((fp.gamma_plus[0] - 0.1 / beta).abs() < 1e-9);
            assert!((fp.gamma_minus[1] / rc.gamma1_minus - 1.0).abs() < 1e-5, "beta={beta}: {} vs {}", fp.gamma_minus[1], rc.gamma1_minus);
            assert!((fp.tau_minus[1] / rc.tau1_minus - 1.0).abs() < 1e-5);
            for l in 0..3 {
                assert!((fp.alpha_plus[l] + fp.alpha_minus[l] - 1.0).abs() < 1e-6, "layer {l}");
            }
            let m = m_matrix(&fp, &prob.spectrum, 16).unwrap();
            let e = m.k11 + m.k22 - 2.0 * m.k12 + 0.1;
            let cf = ridge_gen(beta, 0.1, 1.0, 1.0, 0.1).unwrap();
            assert!((e / cf - 1.0).abs() < 1e-5, "beta={beta}: {e} vs {cf}");
        }
    }

    #[test]
    fn ridge_monte_carlo_path_matches_fast_path() {
        let prob = ridge_problem(0.5, 0.1);
        let fast = se_fixed_point(&prob, &SeConfig::default()).unwrap();
        let cfg = SeConfig {
            quadratic_fast_path: false,
            mc_samples: 200_000,
            ..SeConfig::default()
        };
        let mc = se_fixed_point(&prob, &cfg).unwrap();
        for l in 0..3 {
            assert!((mc.gamma_minus[l] / fast.gamma_minus[l] - 1.0).abs() < 0.01, "layer {l}");
            assert!((mc.tau_minus[l] / fast.tau_minus[l] - 1.0).abs() < 0.01, "layer {l}");
        }
        assert!((mc.k_plus[0].k12 + 1.0).abs() < 0.01);
        assert!((mc.stein_alpha[0] - mc.alpha_plus[0]).abs() < 0.01);
    }
}
