//! Scalar proximal operators for separable penalties and the Gaussian
//! linear denoiser used by the middle layers.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::synthdata::sigmoid;

/// Separable penalty or loss. Output losses take the label `y` as side
/// information; input penalties ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    /// `λ x² / (2 β_scale)`.
    L2 { lambda: f64, beta_scale: f64 },
    /// `λ |x|`.
    L1 { lambda: f64 },
    /// `weight (y - x)² / 2`.
    SquaredLoss { weight: f64 },
    /// `log(1 + eˣ) - y x`.
    LogisticLoss,
    /// `max(0, 1 - ỹ x)` with `ỹ = +1` when `y > 1/2` and `-1` otherwise.
    HingeLoss,
    /// `(y - tanh x)² / (2 noise_var)`.
    TanhLoss { noise_var: f64 },
}

/// Proximal point and its derivative with respect to the input `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prox {
    pub value: f64,
    pub derivative: f64,
}

fn hinge_sign(y: f64) -> f64 {
    if y > 0.5 {
        1.0
    } else {
        -1.0
    }
}

impl Penalty {
    pub fn ridge(lambda: f64) -> Self {
        Penalty::L2 {
            lambda,
            beta_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Penalty::L2 { lambda, beta_scale } => {
                crate::error::check_nonnegative("lambda", lambda)?;
                check_positive("beta_scale", beta_scale)
            }
            Penalty::L1 { lambda } => crate::error::check_nonnegative("lambda", lambda),
            Penalty::SquaredLoss { weight } => check_positive("weight", weight),
            Penalty::TanhLoss { noise_var } => check_positive("noise_var", noise_var),
            Penalty::LogisticLoss | Penalty::HingeLoss => Ok(()),
        }
    }

    /// Output losses need the label; input penalties do not.
    pub fn needs_label(&self) -> bool {
        !matches!(self, Penalty::L2 { .. } | Penalty::L1 { .. })
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Penalty::TanhLoss { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Penalty::L2 { .. } => "l2",
            Penalty::L1 { .. } => "l1",
            Penalty::SquaredLoss { .. } => "squared",
            Penalty::LogisticLoss => "logistic",
            Penalty::HingeLoss => "hinge",
            Penalty::TanhLoss { .. } => "tanh",
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Penalty::L2 { lambda, beta_scale } => 0.5 * lambda / beta_scale * x * x,
            Penalty::L1 { lambda } => lambda * x.abs(),
            Penalty::SquaredLoss { weight } => 0.5 * weight * (y - x) * (y - x),
            Penalty::LogisticLoss => softplus(x) - y * x,
            Penalty::HingeLoss => (1.0 - hinge_sign(y) * x).max(0.0),
            Penalty::TanhLoss { noise_var } => {
                let e = y - x.tanh();
                0.5 * e * e / noise_var
            }
        }
    }

    /// Subdifferential `[lo, hi]` at `x` (a single point where differentiable).
    pub fn subdifferential(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Penalty::L2 { lambda, beta_scale } => {
                let g = lambda / beta_scale * x;
                (g, g)
            }
            Penalty::L1 { lambda } => {
                if x > 0.0 {
                    (lambda, lambda)
                } else if x < 0.0 {
                    (-lambda, -lambda)
                } else {
                    (-lambda, lambda)
                }
            }
            Penalty::SquaredLoss { weight } => {
                let g = weight * (x - y);
                (g, g)
            }
            Penalty::LogisticLoss => {
                let g = sigmoid(x) - y;
                (g, g)
            }
            Penalty::HingeLoss => {
                let s = hinge_sign(y);
                let m = s * x;
                if m < 1.0 {
                    (-s, -s)
                } else if m > 1.0 {
                    (0.0, 0.0)
                } else {
                    ((-s).min(0.0), (-s).max(0.0))
                }
            }
            Penalty::TanhLoss { noise_var } => {
                let t = x.tanh();
                let g = -(y - t) * (1.0 - t * t) / noise_var;
                (g, g)
            }
        }
    }

    /// `argmin_x f(x; y) + γ/2 (x - r)²` and its derivative in `r`.
    pub fn prox(&self, r: f64, gamma: f64, y: f64) -> Result<Prox> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
                reason: "prox precision must be finite and positive",
            });
        }
        if !r.is_finite() {
            return Err(Error::Domain {
                what: "prox",
                detail: format!("non-finite input r = {r}"),
            });
        }
        match *self {
            Penalty::L2 { lambda, beta_scale } => {
                let d = gamma / (gamma + lambda / beta_scale);
                Ok(Prox {
                    value: d * r,
                    derivative: d,
                })
            }
            Penalty::L1 { lambda } => {
                let t = lambda / gamma;
                if r > t {
                    Ok(Prox { value: r - t, derivative: 1.0 })
                } else if r < -t {
                    Ok(Prox { value: r + t, derivative: 1.0 })
                } else {
                    Ok(Prox { value: 0.0, derivative: 0.0 })
                }
            }
            Penalty::SquaredLoss { weight } => Ok(Prox {
                value: (gamma * r + weight * y) / (gamma + weight),
                derivative: gamma / (gamma + weight),
            }),
            Penalty::LogisticLoss => logistic_prox(r, gamma, y),
            Penalty::HingeLoss => {
                let s = hinge_sign(y);
                let v = s * r;
                let (t, derivative) = if v >= 1.0 {
                    (v, 1.0)
                } else if v <= 1.0 - 1.0 / gamma {
                    (v + 1.0 / gamma, 1.0)
                } else {
                    (1.0, 0.0)
                };
                Ok(Prox {
                    value: s * t,
                    derivative,
                })
            }
            Penalty::TanhLoss { noise_var } => tanh_prox(r, gamma, y, noise_var),
        }
    }
}

/// `prox_eval` with an optional label, rejecting a missing label for output losses.
pub fn prox_eval(penalty: &Penalty, r: f64, gamma: f64, label: Option<f64>) -> Result<Prox> {
    let y = match (penalty.needs_label(), label) {
        (true, None) => {
            return Err(Error::Domain {
                what: "prox",
                detail: format!("{} loss requires a label", penalty.name()),
            })
        }
        (_, y) => y.unwrap_or(0.0),
    };
    penalty.prox(r, gamma, y)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const ROOT_TOL: f64 = 1e-12;

/// Root of an increasing function on `[lo, hi]` by Newton steps safeguarded
/// with bisection. `f` returns the value and derivative.
fn bracketed_root(
    f: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
) -> Result<f64> {
    let mut x = x0.clamp(lo, hi);
    let mut last = f64::INFINITY;
    let mut prev_step = hi - lo;
    for _ in 0..200 {
        let (v, d) = f(x);
        last = v.abs();
        if v == 0.0 {
            return Ok(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let width = hi - lo;
        let newton = x - v / d;
        // Bisect when Newton leaves the bracket or fails to halve the step.
        let next = if d > 0.0 && newton > lo && newton < hi && (newton - x).abs() <= 0.5 * prev_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        prev_step = step;
        x = next;
        if step <= ROOT_TOL * x.abs().max(1.0) || width <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            let (v, _) = f(x);
            if v.abs() <= 1e-9 * (1.0 + d.abs()) || width <= 1e-14 * x.abs().max(1.0) {
                return Ok(x);
            }
        }
    }
    Err(Error::NonConvergence {
        what: "scalar prox",
        iterations: 200,
        residual: last,
    })
}

fn logistic_prox(r: f64, gamma: f64, y: f64) -> Result<Prox> {
    let g = |x: f64| {
        let s = sigmoid(x);
        (s - y + gamma * (x - r), s * (1.0 - s) + gamma)
    };
    let lo = r + (y.min(1.0) - 1.0) / gamma - 1e-12;
    let hi = r + y.max(0.0) / gamma + 1e-12;
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let x = bracketed_root(g, lo, hi, r)?;
    let s = sigmoid(x);
    Ok(Prox {
        value: x,
        derivative: gamma / (gamma + s * (1.0 - s)),
    })
}

fn tanh_curvature(x: f64, y: f64, noise_var: f64) -> f64 {
    let t = x.tanh();
    let c = 1.0 - t * t;
    (c * c + 2.0 * t * (y - t) * c) / noise_var
}

fn tanh_prox(r: f64, gamma: f64, y: f64, noise_var: f64) -> Result<Prox> {
    let grad = |x: f64| {
        let t = x.tanh();
        let c = 1.0 - t * t;
        let g = -(y - t) * c / noise_var + gamma * (x - r);
        (g, (c * c + 2.0 * t * (y - t) * c) / noise_var + gamma)
    };
    let objective = |x: f64| {
        let e = y - x.tanh();
        0.5 * e * e / noise_var + 0.5 * gamma * (x - r) * (x - r)
    };
    // The minimizer satisfies γ/2 (x - r)² ≤ F(r) ≤ (|y| + 1)² / (2σ²).
    let reach = (y.abs() + 1.0) / (noise_var * gamma).sqrt() + 1e-9;
    let (lo, hi) = (r - reach, r + reach);
    // Beyond this precision the objective is strictly convex.
    let convex = gamma * noise_var > 1.0 + 2.0 * (y.abs() + 1.0);
    let x = if convex {
        bracketed_root(grad, lo, hi, r)?
    } else {
        // Scan the gradient on a grid resolving the tanh features, then
        // refine every sign change from - to + and keep the lowest objective.
        let mut pts: Vec<f64> = (-20..=20)
            .map(|k| 0.25 * k as f64)
            .filter(|&x| x > lo && x < hi)
            .collect();
        pts.extend([lo, hi, r.clamp(lo, hi)]);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut best: Option<(f64, f64)> = None;
        let mut prev = (pts[0], grad(pts[0]).0);
        for &b in &pts[1..] {
            let gb = grad(b).0;
            if prev.1 <= 0.0 && gb >= 0.0 {
                let x = bracketed_root(grad, prev.0, b, 0.5 * (prev.0 + b))?;
                let fx = objective(x);
                if best.is_none_or(|(_, fb)| fx < fb) {
                    best = Some((x, fx));
                }
            }
            prev = (b, gb);
        }
        best.map(|b| b.0).ok_or(Error::NonConvergence {
            what: "tanh prox bracket scan",
            iterations: pts.len(),
            residual: f64::NAN,
        })?
    };
    let curvature = tanh_curvature(x, y, noise_var) + gamma;
    Ok(Prox {
        value: x,
        derivative: gamma / curvature,
    })
}

/// Output of the Gaussian linear denoiser for one singular value `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDenoised {
    /// Estimate of the layer input.
    pub input: f64,
    /// Estimate of the layer output, `s` times `input`.
    pub output: f64,
    /// Derivative of `input` with respect to the forward message.
    pub d_input: f64,
    /// Derivative of `output` with respect to the backward message.
    pub d_output: f64,
}

/// MAP estimate of `(p, z = s p)` from messages `p ~ r_plus` with precision
/// `gamma_plus` and `z ~ r_minus` with precision `gamma_minus`.
pub fn linear_denoiser(r_plus: f64, r_minus: f64, gamma_plus: f64, gamma_minus: f64, s: f64) -> LinearDenoised {
    let s2g = s * s * gamma_minus;
    let den = gamma_plus + s2g;
    let input = (gamma_plus * r_plus + s * gamma_minus * r_minus) / den;
    LinearDenoised {
        input,
        output: s * input,
        d_input: gamma_plus / den,
        d_output: s2g / den,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_values() {
        let p = Penalty::ridge(1.0).prox(2.0, 1.0, 0.0).unwrap();
        assert_eq!((p.value, p.derivative), (1.0, 0.5));
        let p = Penalty::SquaredLoss { weight: 1.0 }.prox(0.0, 1.0, 2.0).unwrap();
        assert_eq!(p.value, 1.0);
        let p = Penalty::L1 { lambda: 1.0 }.prox(0.5, 1.0, 0.0).unwrap();
        assert_eq!((p.value, p.derivative), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_precision_and_missing_label() {
        assert!(Penalty::ridge(1.0).prox(1.0, 0.0, 0.0).is_err());
        assert!(prox_eval(&Penalty::LogisticLoss, 1.0, 1.0, None).is_err());
        assert!(prox_eval(&Penalty::ridge(1.0), 1.0, 1.0, None).is_ok());
    }

    #[test]
    fn linear_denoiser_limits() {
        let d = linear_denoiser(1.0, 3.0, 1e12, 1.0, 2.0);
        assert!((d.input - 1.0).abs() < 1e-9);
        let d = linear_denoiser(1.0, 3.0, 1.0, 1e12, 2.0);
        assert!((d.output - 3.0).abs() < 1e-9);
        assert_eq!(d.output, 2.0 * d.input);
    }
}
