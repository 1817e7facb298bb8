//! ML-VAMP for the three-layer factorization of a GLM:
//!
//! ```text
//! w = z0 ─V0→ p0 ─diag(s_tr)→ z1 ─V1→ p1 ─S_mp→ z2 ─V2→ p2 = Xw
//! ```
//!
//! with `U = V2 · S_mp · V1` obtained from the thin SVD of `U`. Vectors in the
//! `p1` and `z2` coordinates are held as a thin part (one entry per singular
//! value) plus the ambient embedding of their null-space component, so the
//! square orthogonal factors are never formed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::denoisers::{linear_denoiser, Penalty};
use crate::error::{check_positive, Error, Result};
use crate::linalg::{mat_t_vec, mat_vec, norm, norm_sq, ThinSvd};
use crate::synthdata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VampConfig {
    /// Weight on the new value in the damped update of messages and log-precisions.
    pub damping: f64,
    pub max_iters: usize,
    /// Relative change of the stacked messages at which iteration stops.
    pub tol: f64,
    /// Initial backward precision of every layer.
    pub gamma_init: f64,
    /// Averaged derivatives are clipped to `[alpha_clip, 1 - alpha_clip]`.
    pub alpha_clip: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Consecutive iterations of growing message change (or of an unclipped
    /// averaged derivative outside (0, 1)) tolerated before giving up.
    pub max_bad_iters: usize,
}

impl Default for VampConfig {
    fn default() -> Self {
        Self {
            damping: 0.75,
            max_iters: 500,
            tol: 1e-8,
            gamma_init: 1.0,
            alpha_clip: 1e-6,
            gamma_min: 1e-11,
            gamma_max: 1e11,
            max_bad_iters: 50,
        }
    }
}

impl VampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "mlvamp.damping",
                value: self.damping,
                reason: "must lie in (0, 1]",
            });
        }
        check_positive("mlvamp.tol", self.tol)?;
        check_positive("mlvamp.gamma_init", self.gamma_init)?;
        if !(self.alpha_clip > 0.0 && self.alpha_clip < 0.5) {
            return Err(Error::InvalidParameter {
                name: "mlvamp.alpha_clip",
                value: self.alpha_clip,
                reason: "must lie in (0, 1/2)",
            });
        }
        Ok(())
    }
}

/// Vector in a rotated coordinate system: one coordinate per singular value
/// plus the ambient embedding of the null-space component (empty when the
/// null space is trivial).
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub thin: Vec<f64>,
    pub null: Vec<f64>,
}

impl Split {
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.thin) + norm_sq(&self.null)
    }

    fn zip_map(&self, other: &Split, f: impl Fn(f64, f64) -> f64) -> Split {
        Split {
            thin: self.thin.iter().zip(&other.thin).map(|(&a, &b)| f(a, b)).collect(),
            null: self.null.iter().zip(&other.null).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn diff_sq(&self, other: &Split) -> f64 {
        dist_sq(&self.thin, &other.thin) + dist_sq(&self.null, &other.null)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The orthogonal factors `V1` and `V2` derived from the thin SVD of `U`.
struct Rotations<'a> {
    svd: &'a ThinSvd,
    n: usize,
    p: usize,
}

impl<'a> Rotations<'a> {
    fn rank(&self) -> usize {
        self.svd.values.len()
    }

    fn project(basis: &faer::Mat<f64>, x: &[f64], with_null: bool) -> Split {
        let thin = mat_t_vec(basis, x);
        let null = if with_null {
            let back = mat_vec(basis, &thin);
            x.iter().zip(&back).map(|(a, b)| a - b).collect()
        } else {
            Vec::new()
        };
        Split { thin, null }
    }

    fn embed(basis: &faer::Mat<f64>, x: &Split) -> Vec<f64> {
        let mut y = mat_vec(basis, &x.thin);
        for (yi, ni) in y.iter_mut().zip(&x.null) {
            *yi += ni;
        }
        y
    }

    /// `V1 x`, x in z1 coordinates.
    fn v1(&self, x: &[f64]) -> Split {
        Self::project(&self.svd.right, x, self.p > self.rank())
    }

    /// `V1ᵀ x`.
    fn v1_t(&self, x: &Split) -> Vec<f64> {
        Self::embed(&self.svd.right, x)
    }

    /// `V2 x`, x in z2 coordinates.
    fn v2(&self, x: &Split) -> Vec<f64> {
        Self::embed(&self.svd.left, x)
    }

    /// `V2ᵀ x`.
    fn v2_t(&self, x: &[f64]) -> Split {
        Self::project(&self.svd.left, x, self.n > self.rank())
    }
}

/// Messages and precisions of ML-VAMP. Index ℓ ∈ {0, 1, 2}: `r_minus[ℓ]`
/// estimates `z_ℓ`, `r_plus[ℓ]` estimates `p_ℓ`.
#[derive(Debug, Clone)]
pub struct VampState {
    pub r0_minus: Vec<f64>,
    pub r1_minus: Vec<f64>,
    pub r2_minus: Split,
    pub r0_plus: Vec<f64>,
    pub r1_plus: Split,
    pub r2_plus: Vec<f64>,
    pub gamma_minus: [f64; 3],
    pub gamma_plus: [f64; 3],
    pub alpha_minus: [f64; 3],
    pub alpha_plus: [f64; 3],
    /// Latest input-layer estimate `ẑ0`.
    pub w_hat: Vec<f64>,
    /// Latest output-layer estimate `p̂2`.
    pub p2_hat: Vec<f64>,
    /// Whether forward messages have been produced yet.
    started: bool,
    /// Unclipped averaged derivatives from the last sweep, forward then backward.
    raw_alpha: [f64; 6],
}

impl VampState {
    /// Cold start: `r⁻ = 0`, `γ⁻ = gamma_init`.
    pub fn cold(ds: &Dataset, gamma_init: f64) -> Result<Self> {
        let (n, p) = (ds.n(), ds.p());
        let k = ds.factor()?.values.len();
        Ok(Self::from_minus(
            vec![0.0; p],
            vec![0.0; p],
            Split {
                thin: vec![0.0; k],
                null: if n > k { vec![0.0; n] } else { Vec::new() },
            },
            [gamma_init; 3],
            n,
            p,
            k,
        ))
    }

    fn from_minus(
        r0_minus: Vec<f64>,
        r1_minus: Vec<f64>,
        r2_minus: Split,
        gamma_minus: [f64; 3],
        n: usize,
        p: usize,
        k: usize,
    ) -> Self {
        Self {
            r0_minus,
            r1_minus,
            r2_minus,
            r0_plus: vec![0.0; p],
            r1_plus: Split {
                thin: vec![0.0; k],
                null: if p > k { vec![0.0; p] } else { Vec::new() },
            },
            r2_plus: vec![0.0; n],
            gamma_minus,
            gamma_plus: [1.0; 3],
            alpha_minus: [0.5; 3],
            alpha_plus: [0.5; 3],
            w_hat: vec![0.0; p],
            p2_hat: vec![0.0; n],
            started: false,
            raw_alpha: [0.5; 6],
        }
    }

    /// Backward messages equal to the true `z_ℓ` plus independent Gaussian
    /// noise of variance `noise_var`, with precisions `gamma`.
    pub fn noisy_truth<R: Rng + ?Sized>(
        ds: &Dataset,
        noise_var: [f64; 3],
        gamma: [f64; 3],
        rng: &mut R,
    ) -> Result<Self> {
        let (n, p) = (ds.n(), ds.p());
        let svd = ds.factor()?;
        let rot = Rotations { svd, n, p };
        let k = rot.rank();
        let mut noise = |len: usize, var: f64| -> Vec<f64> {
            (0..len)
                .map(|_| var.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let z0 = ds.w0.clone();
        let p0 = mat_vec(&ds.v0, &z0);
        let z1: Vec<f64> = p0.iter().zip(&ds.s_tr).map(|(a, s)| a * s).collect();
        let p1 = rot.v1(&z1);
        let z2_thin: Vec<f64> = p1.thin.iter().zip(&svd.values).map(|(a, s)| a * s).collect();
        let r0: Vec<f64> = z0.iter().zip(noise(p, noise_var[0])).map(|(a, b)| a + b).collect();
        let r1: Vec<f64> = z1.iter().zip(noise(p, noise_var[1])).map(|(a, b)| a + b).collect();
        let thin: Vec<f64> = z2_thin
            .iter()
            .zip(noise(k, noise_var[2]))
            .map(|(a, b)| a + b)
            .collect();
        let null = if n > k {
            // Null-space coordinates are i.i.d.; their embedding is the
            // projection of an ambient Gaussian vector.
            let ambient = noise(n, noise_var[2]);
            rot.v2_t(&ambient).null
        } else {
            Vec::new()
        };
        Ok(Self::from_minus(r0, r1, Split { thin, null }, gamma, n, p, k))
    }

    /// Backward messages drawn i.i.d. `N(0, scale²)` with the given precisions.
    pub fn random<R: Rng + ?Sized>(ds: &Dataset, scale: f64, gamma: [f64; 3], rng: &mut R) -> Result<Self> {
        let mut st = Self::noisy_truth(ds, [scale * scale; 3], gamma, rng)?;
        let truth = Self::noisy_truth(ds, [0.0; 3], gamma, rng)?;
        let sub = |a: &mut Vec<f64>, b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
        sub(&mut st.r0_minus, &truth.r0_minus);
        sub(&mut st.r1_minus, &truth.r1_minus);
        sub(&mut st.r2_minus.thin, &truth.r2_minus.thin);
        Ok(st)
    }

    fn stacked_norm_sq(&self) -> f64 {
        norm_sq(&self.r0_minus)
            + norm_sq(&self.r1_minus)
            + self.r2_minus.norm_sq()
            + norm_sq(&self.r0_plus)
            + self.r1_plus.norm_sq()
            + norm_sq(&self.r2_plus)
    }

    fn stacked_diff_sq(&self, other: &VampState) -> f64 {
        dist_sq(&self.r0_minus, &other.r0_minus)
            + dist_sq(&self.r1_minus, &other.r1_minus)
            + self.r2_minus.diff_sq(&other.r2_minus)
            + dist_sq(&self.r0_plus, &other.r0_plus)
            + self.r1_plus.diff_sq(&other.r1_plus)
            + dist_sq(&self.r2_plus, &other.r2_plus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub rel_change: f64,
    pub gamma_plus: [f64; 3],
    pub gamma_minus: [f64; 3],
    pub alpha_plus: [f64; 3],
    pub alpha_minus: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub w_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
    pub kkt_residual: f64,
}

fn mean(xs: impl Iterator<Item = f64>, len: usize) -> f64 {
    pairwise_sum(&xs.collect::<Vec<_>>()) / len as f64
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Damped combination `θ new + (1 - θ) old`.
fn damp_vec(new: Vec<f64>, old: &[f64], theta: f64) -> Vec<f64> {
    if theta == 1.0 {
        return new;
    }
    new.iter().zip(old).map(|(&a, &b)| theta * a + (1.0 - theta) * b).collect()
}

fn damp_split(new: Split, old: &Split, theta: f64) -> Split {
    if theta == 1.0 {
        return new;
    }
    new.zip_map(old, |a, b| theta * a + (1.0 - theta) * b)
}

fn damp_gamma(new: f64, old: f64, theta: f64) -> f64 {
    (theta * new.ln() + (1.0 - theta) * old.ln()).exp()
}

struct Sweep<'a> {
    ds: &'a Dataset,
    rot: Rotations<'a>,
    f_in: &'a Penalty,
    f_out: &'a Penalty,
    cfg: &'a VampConfig,
}

impl Sweep<'_> {
    fn clip_alpha(&self, a: f64) -> f64 {
        a.clamp(self.cfg.alpha_clip, 1.0 - self.cfg.alpha_clip)
    }

    fn clip_gamma(&self, g: f64) -> f64 {
        g.clamp(self.cfg.gamma_min, self.cfg.gamma_max)
    }

    fn input_estimate(&self, r: &[f64], gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut val = Vec::with_capacity(r.len());
        let mut der = Vec::with_capacity(r.len());
        for &ri in r {
            let px = self.f_in.prox(ri, gamma, 0.0)?;
            val.push(px.value);
            der.push(px.derivative);
        }
        Ok((val, der))
    }

    fn step(&self, prev: &VampState) -> Result<VampState> {
        let cfg = self.cfg;
        let theta = cfg.damping;
        let s_tr = &self.ds.s_tr;
        let s_mp = &self.rot.svd.values;
        let (n, p) = (self.rot.n, self.rot.p);
        let k = self.rot.rank();
        let mut st = prev.clone();
        let damp_plus = |new: f64, old: f64| if prev.started { damp_gamma(new, old, theta) } else { new };
        let th_plus = if prev.started { theta } else { 1.0 };

        // Forward, layer 0: input prior.
        let (z0_hat, d0) = self.input_estimate(&st.r0_minus, st.gamma_minus[0])?;
        let raw = mean(d0.into_iter(), p);
        st.raw_alpha[0] = raw;
        let a = self.clip_alpha(raw);
        let onsager: Vec<f64> = z0_hat
            .iter()
            .zip(&st.r0_minus)
            .map(|(z, r)| (z - a * r) / (1.0 - a))
            .collect();
        st.r0_plus = damp_vec(mat_vec(&self.ds.v0, &onsager), &prev.r0_plus, th_plus);
        st.gamma_plus[0] = self.clip_gamma(damp_plus((1.0 / a - 1.0) * st.gamma_minus[0], prev.gamma_plus[0]));
        st.alpha_plus[0] = a;
        st.w_hat = z0_hat;

        // Forward, layer 1: z1 = diag(s_tr) p0.
        let (g0p, g1m) = (st.gamma_plus[0], st.gamma_minus[1]);
        let mut z1_hat = Vec::with_capacity(p);
        let mut dz = Vec::with_capacity(p);
        for i in 0..p {
            let d = linear_denoiser(st.r0_plus[i], st.r1_minus[i], g0p, g1m, s_tr[i]);
            z1_hat.push(d.output);
            dz.push(d.d_output);
        }
        let raw = mean(dz.into_iter(), p);
        st.raw_alpha[1] = raw;
        let a = self.clip_alpha(raw);
        let onsager: Vec<f64> = z1_hat
            .iter()
            .zip(&st.r1_minus)
            .map(|(z, r)| (z - a * r) / (1.0 - a))
            .collect();
        st.r1_plus = damp_split(self.rot.v1(&onsager), &prev.r1_plus, th_plus);
        st.gamma_plus[1] = self.clip_gamma(damp_plus((1.0 / a - 1.0) * g1m, prev.gamma_plus[1]));
        st.alpha_plus[1] = a;

        // Forward, layer 2: z2 = S_mp p1. Null rows of z2 are identically zero.
        let (g1p, g2m) = (st.gamma_plus[1], st.gamma_minus[2]);
        let mut z2_thin = Vec::with_capacity(k);
        let mut dz = Vec::with_capacity(k);
        for i in 0..k {
            let d = linear_denoiser(st.r1_plus.thin[i], st.r2_minus.thin[i], g1p, g2m, s_mp[i]);
            z2_thin.push(d.output);
            dz.push(d.d_output);
        }
        let raw = mean(dz.into_iter(), n);
        st.raw_alpha[2] = raw;
        let a = self.clip_alpha(raw);
        let onsager = Split {
            thin: z2_thin
                .iter()
                .zip(&st.r2_minus.thin)
                .map(|(z, r)| (z - a * r) / (1.0 - a))
                .collect(),
            null: st.r2_minus.null.iter().map(|r| -a * r / (1.0 - a)).collect(),
        };
        st.r2_plus = damp_vec(self.rot.v2(&onsager), &prev.r2_plus, th_plus);
        st.gamma_plus[2] = self.clip_gamma(damp_plus((1.0 / a - 1.0) * g2m, prev.gamma_plus[2]));
        st.alpha_plus[2] = a;

        // Backward, output loss.
        let g2p = st.gamma_plus[2];
        let mut p2_hat = Vec::with_capacity(n);
        let mut dp = Vec::with_capacity(n);
        for (&r, &y) in st.r2_plus.iter().zip(&self.ds.y) {
            let px = self.f_out.prox(r, g2p, y)?;
            p2_hat.push(px.value);
            dp.push(px.derivative);
        }
        let raw = mean(dp.into_iter(), n);
        st.raw_alpha[5] = raw;
        let a = self.clip_alpha(raw);
        let onsager: Vec<f64> = p2_hat
            .iter()
            .zip(&st.r2_plus)
            .map(|(x, r)| (x - a * r) / (1.0 - a))
            .collect();
        st.r2_minus = damp_split(self.rot.v2_t(&onsager), &prev.r2_minus, theta);
        st.gamma_minus[2] = self.clip_gamma(damp_gamma((1.0 / a - 1.0) * g2p, prev.gamma_minus[2], theta));
        st.alpha_minus[2] = a;
        st.p2_hat = p2_hat;

        // Backward, layer 2 estimate of p1. Null coordinates pass through.
        let (g1p, g2m) = (st.gamma_plus[1], st.gamma_minus[2]);
        let mut p1_thin = Vec::with_capacity(k);
        let mut dp = Vec::with_capacity(k);
        for i in 0..k {
            let d = linear_denoiser(st.r1_plus.thin[i], st.r2_minus.thin[i], g1p, g2m, s_mp[i]);
            p1_thin.push(d.input);
            dp.push(d.d_input);
        }
        let raw = (pairwise_sum(&dp) + (p - k) as f64) / p as f64;
        st.raw_alpha[4] = raw;
        let a = self.clip_alpha(raw);
        let onsager = Split {
            thin: p1_thin
                .iter()
                .zip(&st.r1_plus.thin)
                .map(|(x, r)| (x - a * r) / (1.0 - a))
                .collect(),
            null: st.r1_plus.null.clone(),
        };
        st.r1_minus = damp_vec(self.rot.v1_t(&onsager), &prev.r1_minus, theta);
        st.gamma_minus[1] = self.clip_gamma(damp_gamma((1.0 / a - 1.0) * g1p, prev.gamma_minus[1], theta));
        st.alpha_minus[1] = a;

        // Backward, layer 1 estimate of p0.
        let (g0p, g1m) = (st.gamma_plus[0], st.gamma_minus[1]);
        let mut p0_hat = Vec::with_capacity(p);
        let mut dp = Vec::with_capacity(p);
        for i in 0..p {
            let d = linear_denoiser(st.r0_plus[i], st.r1_minus[i], g0p, g1m, s_tr[i]);
            p0_hat.push(d.input);
            dp.push(d.d_input);
        }
        let raw = mean(dp.into_iter(), p);
        st.raw_alpha[3] = raw;
        let a = self.clip_alpha(raw);
        let onsager: Vec<f64> = p0_hat
            .iter()
            .zip(&st.r0_plus)
            .map(|(x, r)| (x - a * r) / (1.0 - a))
            .collect();
        st.r0_minus = damp_vec(mat_t_vec(&self.ds.v0, &onsager), &prev.r0_minus, theta);
        st.gamma_minus[0] = self.clip_gamma(damp_gamma((1.0 / a - 1.0) * g0p, prev.gamma_minus[0], theta));
        st.alpha_minus[0] = a;

        st.started = true;
        Ok(st)
    }
}

fn check_inputs(ds: &Dataset, f_in: &Penalty, f_out: &Penalty, cfg: &VampConfig) -> Result<()> {
    cfg.validate()?;
    f_in.validate()?;
    f_out.validate()?;
    if f_in.needs_label() {
        return Err(Error::Unsupported(format!(
            "{} is an output loss and cannot be the input penalty",
            f_in.name()
        )));
    }
    if !f_out.needs_label() {
        return Err(Error::Unsupported(format!(
            "{} is an input penalty and cannot be the output loss",
            f_out.name()
        )));
    }
    if ds.y.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain {
            what: "fit",
            detail: "non-finite labels".into(),
        });
    }
    Ok(())
}

/// One forward–backward sweep of ML-VAMP.
pub fn forward_backward_step(
    state: &VampState,
    ds: &Dataset,
    f_in: &Penalty,
    f_out: &Penalty,
    cfg: &VampConfig,
) -> Result<VampState> {
    check_inputs(ds, f_in, f_out, cfg)?;
    let sweep = Sweep {
        ds,
        rot: Rotations {
            svd: ds.factor()?,
            n: ds.n(),
            p: ds.p(),
        },
        f_in,
        f_out,
        cfg,
    };
    sweep.step(state)
}

/// Run ML-VAMP from a cold start.
pub fn fit(ds: &Dataset, f_in: &Penalty, f_out: &Penalty, cfg: &VampConfig) -> Result<FitResult> {
    let init = VampState::cold(ds, cfg.gamma_init)?;
    fit_from(ds, f_in, f_out, cfg, init)
}

/// Run ML-VAMP from a given initial state.
pub fn fit_from(
    ds: &Dataset,
    f_in: &Penalty,
    f_out: &Penalty,
    cfg: &VampConfig,
    init: VampState,
) -> Result<FitResult> {
    check_inputs(ds, f_in, f_out, cfg)?;
    let sweep = Sweep {
        ds,
        rot: Rotations {
            svd: ds.factor()?,
            n: ds.n(),
            p: ds.p(),
        },
        f_in,
        f_out,
        cfg,
    };
    let mut state = init;
    let mut history = Vec::new();
    let mut growing = 0usize;
    let mut degenerate = 0usize;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for it in 0..cfg.max_iters {
        let next = sweep.step(&state)?;
        let scale = next.stacked_norm_sq().sqrt();
        let change = next.stacked_diff_sq(&state).sqrt();
        let rel = if scale > 0.0 { change / scale } else { change };
        history.push(IterRecord {
            iteration: it,
            rel_change: rel,
            gamma_plus: next.gamma_plus,
            gamma_minus: next.gamma_minus,
            alpha_plus: next.alpha_plus,
            alpha_minus: next.alpha_minus,
        });
        if !rel.is_finite() || next.gamma_plus.iter().chain(&next.gamma_minus).any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                history: history.iter().map(|h| h.rel_change).collect(),
            });
        }
        let was_started = state.started;
        state = next;
        if !was_started {
            // The first sweep compares against unset forward messages.
            continue;
        }
        if rel <= cfg.tol {
            converged = true;
            break;
        }
        growing = if rel > last_change { growing + 1 } else { 0 };
        last_change = rel;
        if growing > cfg.max_bad_iters {
            return Err(Error::Divergence {
                iteration: it,
                history: history.iter().map(|h| h.rel_change).collect(),
            });
        }
        match state.raw_alpha.iter().enumerate().find(|(_, a)| !(**a > 0.0 && **a < 1.0)) {
            Some((idx, &alpha)) => {
                degenerate += 1;
                if degenerate > cfg.max_bad_iters {
                    return Err(Error::Degeneracy {
                        layer: idx % 3,
                        iteration: it,
                        alpha,
                    });
                }
            }
            None => degenerate = 0,
        }
    }
    let (w_hat, _) = sweep.input_estimate(&state.r0_minus, state.gamma_minus[0])?;
    let certificate: Vec<f64> = state
        .r2_plus
        .iter()
        .zip(&state.p2_hat)
        .map(|(r, x)| state.gamma_plus[2] * (r - x))
        .collect();
    let kkt = kkt_residual(ds, f_in, f_out, &w_hat, Some(&certificate));
    Ok(FitResult {
        w_hat,
        converged,
        iterations: history.len(),
        history,
        kkt_residual: kkt,
    })
}

/// Norm of a minimal-norm subgradient of `Σ f_out(Xw; y) + Σ f_in(w)` at `w`,
/// divided by `√p`. At kinks of the output loss the subgradient is the
/// supplied certificate clamped into the subdifferential.
pub fn kkt_residual(ds: &Dataset, f_in: &Penalty, f_out: &Penalty, w: &[f64], certificate: Option<&[f64]>) -> f64 {
    let xw = ds.apply_x(w);
    let v: Vec<f64> = xw
        .iter()
        .zip(&ds.y)
        .enumerate()
        .map(|(i, (&x, &y))| {
            let (lo, hi) = output_subdifferential(f_out, x, y);
            match certificate {
                Some(c) => c[i].clamp(lo, hi),
                None => 0.5 * (lo + hi),
            }
        })
        .collect();
    let g = ds.apply_xt(&v);
    let res: Vec<f64> = g
        .iter()
        .zip(w)
        .map(|(&gi, &wi)| {
            let (lo, hi) = f_in.subdifferential(wi, 0.0);
            gi + (-gi).clamp(lo, hi)
        })
        .collect();
    norm(&res) / (w.len() as f64).sqrt()
}

/// Subdifferential of the output loss, widened to the full interval when
/// `x` sits within rounding distance of a kink.
fn output_subdifferential(f_out: &Penalty, x: f64, y: f64) -> (f64, f64) {
    if let Penalty::HingeLoss = f_out {
        let s = if y > 0.5 { 1.0 } else { -1.0 };
        if (s * x - 1.0).abs() <= 1e-7 * (1.0 + x.abs()) {
            return ((-s).min(0.0), (-s).max(0.0));
        }
    }
    f_out.subdifferential(x, y)
}

/// Norms of `x_p` and `x_n` before and after applying `V1` and `V2ᵀ`.
pub fn rotation_norms(ds: &Dataset, x_p: &[f64], x_n: &[f64]) -> Result<[(f64, f64); 2]> {
    let rot = Rotations {
        svd: ds.factor()?,
        n: ds.n(),
        p: ds.p(),
    };
    let a = rot.v1(x_p);
    let b = rot.v2_t(x_n);
    Ok([(norm(x_p), a.norm_sq().sqrt()), (norm(x_n), b.norm_sq().sqrt())])
}
