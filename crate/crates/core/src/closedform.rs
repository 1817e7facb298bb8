//! Closed-form generalization error for the squared-loss special cases:
//! ridge regression on i.i.d. features, its ridgeless limit, and the
//! Bernoulli train/test mismatch model.

use serde::Serialize;

use crate::error::{check_nonnegative, check_positive, Error, Result};
use crate::spectra::{MpLaw, SpectrumModel, DEFAULT_HERMITE_NODES};
use crate::stateevo::{Cov2, SeFixedPoint};

/// The four fixed-point quantities that determine the squared test error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorConstants {
    /// Forward precision into the first linear layer.
    pub gamma0_plus: f64,
    /// Backward precision out of the first linear layer.
    pub gamma1_minus: f64,
    /// Variance of the forward error entering the first linear layer.
    pub k22: f64,
    /// Variance of the backward error out of the second linear layer.
    pub tau1_minus: f64,
}

impl From<&SeFixedPoint> for ErrorConstants {
    fn from(fp: &SeFixedPoint) -> Self {
        Self {
            gamma0_plus: fp.gamma_plus[0],
            gamma1_minus: fp.gamma_minus[1],
            k22: fp.k_plus[0].k22,
            tau1_minus: fp.tau_minus[1],
        }
    }
}

/// Ridge regression `½‖y - Xw‖² + λ/(2β) ‖w‖²` with `S_tr ≡ σ_tr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RidgeConstants {
    pub beta: f64,
    pub lambda: f64,
    pub gamma0_plus: f64,
    pub gamma1_plus: f64,
    pub gamma1_minus: f64,
    pub alpha1_minus: f64,
    pub k22: f64,
    pub tau1_minus: f64,
    /// Argument `u = -λ/(σ_tr² β)` of the transform.
    pub u: f64,
    /// Root of the algebraic fixed-point equation; equals `g`.
    pub z: f64,
    /// Residual of the fixed-point equation at `z`.
    pub z_residual: f64,
    /// Stieltjes transform `G(u)` and its derivative by quadrature.
    pub g: f64,
    pub g_prime: f64,
    pub eta: f64,
    pub kappa: f64,
}

impl RidgeConstants {
    pub fn error_constants(&self) -> ErrorConstants {
        ErrorConstants {
            gamma0_plus: self.gamma0_plus,
            gamma1_minus: self.gamma1_minus,
            k22: self.k22,
            tau1_minus: self.tau1_minus,
        }
    }

    /// `τ1⁻` expressed through `η`, `κ` and `z`.
    pub fn tau1_minus_eta_kappa(&self, sigma_tr2: f64, var_w0: f64, sigma_d2: f64) -> f64 {
        let (u, z, b) = (self.u, self.z, self.beta);
        let signal = sigma_tr2 * var_w0;
        let share = b.recip().min(1.0);
        self.eta * self.eta * share * (u * u * z * z * signal * (self.kappa - 1.0) + sigma_d2 * z * (u * z * self.kappa + 1.0))
            + (b - 1.0).max(0.0) * signal
    }
}

/// Positive root of the algebraic equation satisfied by `z = G(u)`, `u < 0`:
/// `u z² + (u + 1 - 1/β) z + 1 = 0` for β ≤ 1 and
/// `(u/β) z² + (u - 1 + 1/β) z + 1 = 0` for β > 1.
pub fn stieltjes_fixed_point(beta: f64, u: f64) -> Result<(f64, f64)> {
    check_positive("beta", beta)?;
    if !(u < 0.0) {
        return Err(Error::Domain {
            what: "Stieltjes fixed point",
            detail: format!("u = {u} must be negative"),
        });
    }
    let (a, b) = if beta <= 1.0 {
        (u, u + 1.0 - 1.0 / beta)
    } else {
        (u / beta, u - 1.0 + 1.0 / beta)
    };
    // a < 0 and the constant term is 1, so the roots have opposite signs.
    let disc = (b * b - 4.0 * a).sqrt();
    let z = if b > 0.0 {
        // Stable form of (-b - disc) / (2a).
        2.0 / (disc - b)
    } else {
        (-b - disc) / (2.0 * a)
    };
    let residual = if beta <= 1.0 {
        1.0 / (beta * (1.0 + z)) - 1.0 / z - u
    } else {
        beta / (beta + z) - 1.0 / z - u
    };
    Ok((z, residual))
}

pub fn ridge_constants(beta: f64, lambda: f64, sigma_tr2: f64, var_w0: f64, sigma_d2: f64) -> Result<RidgeConstants> {
    check_positive("beta", beta)?;
    check_positive("lambda", lambda)?;
    check_positive("sigma_tr2", sigma_tr2)?;
    check_nonnegative("var_w0", var_w0)?;
    check_nonnegative("sigma_d2", sigma_d2)?;
    let c = lambda / (sigma_tr2 * beta);
    let u = -c;
    let law = MpLaw::new(beta)?;
    let g = law.stieltjes(u)?;
    let gp = law.stieltjes_derivative(u)?;
    let (z, z_residual) = stieltjes_fixed_point(beta, u)?;

    // Moments of f(S) = c / (c + S²) and S / (c + S²) under the length-p
    // singular-value law, whose zero atom has mass (1 - 1/β)₊.
    let zero = law.zero_mass(crate::spectra::MpSide::Cols);
    let pos = 1.0 - zero;
    let ef = zero + pos * c * g;
    let ef2 = zero + pos * c * c * gp;
    let eh2 = pos * (g - c * gp);
    let alpha1_minus = ef;
    let gamma1_minus = c * (1.0 / alpha1_minus - 1.0);
    let signal = sigma_tr2 * var_w0;
    let one = 1.0 - alpha1_minus;
    let tau1_minus = ((ef2 - ef * ef) * signal + eh2 * sigma_d2) / (one * one);
    let alpha1_plus = if beta <= 1.0 { 1.0 + u * z } else { (1.0 + u * z) / beta };
    Ok(RidgeConstants {
        beta,
        lambda,
        gamma0_plus: lambda / beta,
        gamma1_plus: c,
        gamma1_minus,
        alpha1_minus,
        k22: var_w0,
        tau1_minus,
        u,
        z,
        z_residual,
        g,
        g_prime: gp,
        eta: 1.0 / alpha1_plus,
        kappa: gp / (g * g),
    })
}

/// Squared-loss test error `E[(S_ts γ0⁺/d)²] k22 + τ1⁻ E[(S_ts S_tr γ1⁻/d)²] + σ_d²`
/// with `d = γ0⁺ + S_tr² γ1⁻`.
pub fn squared_error_gen(constants: &ErrorConstants, spectrum: &SpectrumModel, sigma_d2: f64) -> Result<f64> {
    spectrum.validate()?;
    check_nonnegative("sigma_d2", sigma_d2)?;
    let ErrorConstants {
        gamma0_plus: g0,
        gamma1_minus: g1,
        k22,
        tau1_minus: t1,
    } = *constants;
    let mut total = 0.0;
    for a in spectrum.joint_atoms(DEFAULT_HERMITE_NODES) {
        let d = g0 + a.s_tr * a.s_tr * g1;
        total += a.weight * ((a.s_ts * g0 / d).powi(2) * k22 + t1 * (a.s_ts * a.s_tr * g1 / d).powi(2));
    }
    Ok(total + sigma_d2)
}

/// Covariance `M` of the test scores `(z, ẑ)` for a squared-loss fit with a
/// Gaussian prior: per mode, `ŵ = S_tr² γ1⁻ (w0 + ξ/S_tr)/d` with
/// `E ξ² = τ1⁻` and `d = γ0⁺ + S_tr² γ1⁻`.
pub fn score_covariance(constants: &ErrorConstants, spectrum: &SpectrumModel) -> Result<Cov2> {
    spectrum.validate()?;
    let ErrorConstants {
        gamma0_plus: g0,
        gamma1_minus: g1,
        k22,
        tau1_minus: t1,
    } = *constants;
    let (mut k11, mut k12, mut kh) = (0.0, 0.0, 0.0);
    for a in spectrum.joint_atoms(DEFAULT_HERMITE_NODES) {
        let (tr2, ts2) = (a.s_tr * a.s_tr, a.s_ts * a.s_ts);
        let gain = tr2 * g1 / (g0 + tr2 * g1);
        k11 += a.weight * ts2 * k22;
        k12 += a.weight * ts2 * gain * k22;
        kh += a.weight * ts2 * (gain * gain * k22 + t1 * tr2 * (g1 / (g0 + tr2 * g1)).powi(2));
    }
    Ok(Cov2::new(k11, k12, kh))
}

/// Ridge test error on matched i.i.d. features.
pub fn ridge_gen(beta: f64, lambda: f64, sigma2: f64, var_w0: f64, sigma_d2: f64) -> Result<f64> {
    let rc = ridge_constants(beta, lambda, sigma2, var_w0, sigma_d2)?;
    squared_error_gen(&rc.error_constants(), &SpectrumModel::iid(sigma2.sqrt()), sigma_d2)
}

/// Test error of the minimum-norm interpolator / least-squares solution
/// (λ → 0) on matched i.i.d. features: `σ_d²/(1 - β)` for β < 1 and
/// `β σ_d²/(β - 1) + (1 - 1/β) σ² Var(W⁰)` for β > 1.
pub fn ridgeless_gen(beta: f64, sigma2: f64, var_w0: f64, sigma_d2: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    check_nonnegative("sigma2", sigma2)?;
    check_nonnegative("var_w0", var_w0)?;
    check_nonnegative("sigma_d2", sigma_d2)?;
    if beta == 1.0 {
        return Err(Error::Pole {
            what: "ridgeless test error",
            at: 1.0,
        });
    }
    Ok(if beta < 1.0 {
        sigma_d2 / (1.0 - beta)
    } else {
        beta * sigma_d2 / (beta - 1.0) + (1.0 - 1.0 / beta) * sigma2 * var_w0
    })
}

/// Ridgeless error evaluated just below and just above β = 1.
pub fn ridgeless_gen_one_sided(beta: f64, sigma2: f64, var_w0: f64, sigma_d2: f64) -> Result<(f64, f64)> {
    const OFFSET: f64 = 1e-6;
    Ok((
        ridgeless_gen(beta - OFFSET, sigma2, var_w0, sigma_d2)?,
        ridgeless_gen(beta + OFFSET, sigma2, var_w0, sigma_d2)?,
    ))
}

/// Test error under the Bernoulli mismatch spectrum at mismatch `epsilon`:
/// `k22/2 ((1-ε) γ*² + ε) + τ1⁻/2 (1-γ*)² (1-ε) + σ_d²` with
/// `γ* = γ0⁺/(γ0⁺ + γ1⁻)`.
pub fn mismatch_gen(constants: &ErrorConstants, epsilon: f64, sigma_d2: f64) -> Result<f64> {
    crate::error::check_unit_interval("epsilon", epsilon)?;
    let (intercept, slope) = mismatch_line(constants, sigma_d2);
    Ok(intercept + slope * epsilon)
}

/// Intercept and slope of the mismatch test error as a function of ε.
pub fn mismatch_line(constants: &ErrorConstants, sigma_d2: f64) -> (f64, f64) {
    let gs = constants.gamma0_plus / (constants.gamma0_plus + constants.gamma1_minus);
    let k = constants.k22;
    let t = constants.tau1_minus;
    let intercept = 0.5 * k * gs * gs + 0.5 * t * (1.0 - gs).powi(2) + sigma_d2;
    let slope = 0.5 * k * (1.0 - gs * gs) - 0.5 * t * (1.0 - gs).powi(2);
    (intercept, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridgeless_spot_values() {
        assert!((ridgeless_gen(0.5, 1.0, 1.0, 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert!((ridgeless_gen(2.0, 1.0, 1.0, 0.1).unwrap() - 0.7).abs() < 1e-15);
        assert!(ridgeless_gen(1.0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn algebraic_root_is_the_transform() {
        for beta in [0.25, 0.5, 0.9, 1.0, 1.5, 4.0] {
            for u in [-10.0, -1.0, -0.1, -1e-3] {
                let (z, res) = stieltjes_fixed_point(beta, u).unwrap();
                let g = MpLaw::new(beta).unwrap().stieltjes(u).unwrap();
                assert!(res.abs() < 1e-10, "beta={beta} u={u} residual={res}");
                assert!((z - g).abs() < 1e-8 * g.max(1.0), "beta={beta} u={u}: {z} vs {g}");
            }
        }
    }

    #[test]
    fn eta_kappa_route_agrees() {
        for beta in [0.3, 0.8, 1.6, 3.0] {
            for lambda in [1e-3, 0.1, 2.0] {
                let rc = ridge_constants(beta, lambda, 1.3, 0.7, 0.2).unwrap();
                let alt = rc.tau1_minus_eta_kappa(1.3, 0.7, 0.2);
                assert!((rc.tau1_minus - alt).abs() < 1e-8 * rc.tau1_minus, "beta={beta} lambda={lambda}: {} vs {alt}", rc.tau1_minus);
            }
        }
    }

    #[test]
    fn ridge_tends_to_ridgeless() {
        for beta in [0.3, 0.7, 1.5, 3.0] {
            let r = ridge_gen(beta, 1e-7, 1.0, 1.0, 0.1).unwrap();
            let l = ridgeless_gen(beta, 1.0, 1.0, 0.1).unwrap();
            assert!((r - l).abs() < 1e-4 * l, "beta={beta}: {r} vs {l}");
        }
    }

    #[test]
    fn score_covariance_matches_state_evolution() {
        use crate::denoisers::Penalty;
        use crate::stateevo::{m_matrix, se_fixed_point, SeConfig, SeProblem};
        use crate::synthdata::{Channel, W0Law};
        for spectrum in [
            SpectrumModel::iid(1.0),
            SpectrumModel::LogNormal {
                scale: 1.0,
                sigma_u_db: 3.0,
                rho: 0.5,
            },
        ] {
            let prob = SeProblem {
                spectrum,
                channel: Channel::Linear { noise_var: 0.1 },
                w0_law: W0Law::Gaussian { var: 1.0 },
                f_in: Penalty::ridge(0.3),
                f_out: Penalty::SquaredLoss { weight: 1.0 },
                beta: 0.7,
            };
            let fp = se_fixed_point(&prob, &SeConfig::default()).unwrap();
            let m = m_matrix(&fp, &spectrum, DEFAULT_HERMITE_NODES).unwrap();
            let c = score_covariance(&ErrorConstants::from(&fp), &spectrum).unwrap();
            for (a, b) in [(m.k11, c.k11), (m.k12, c.k12), (m.k22, c.k22)] {
                assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
