//! Signal-strength calibration for the logistic experiments.

use crate::error::{Error, Result};
use crate::quadrature::AdaptiveIntegrator;
use crate::spectra::SpectrumModel;
use crate::synthdata::{sigmoid, W0Law};

/// Error rate of the oracle predictor `1{z > 0}` when `y ~ Bernoulli(ρ(z))`
/// and `z ~ N(0, v)`: `E[ρ(-|z|)]`.
pub fn oracle_error_rate(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.5;
    }
    let sd = v.sqrt();
    let integ = AdaptiveIntegrator::new(20, 16, 1e-13);
    let phi = |g: f64| (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
    2.0 * integ.integrate(&|g| sigmoid(-sd * g) * phi(g), 0.0, 40.0)
}

/// Scale factor `A` on `S²` (train and test) such that the oracle predictor
/// reaches `target` error rate, and the rescaled spectrum.
pub fn calibrate_snr(spectrum: &SpectrumModel, w0_law: &W0Law, target: f64, tol: f64) -> Result<(f64, SpectrumModel)> {
    if !(target > 0.0 && target <= 0.5) {
        return Err(Error::InvalidParameter {
            name: "target",
            value: target,
            reason: "oracle error rate must lie in (0, 1/2]",
        });
    }
    let unit = spectrum.test_second_moment() * w0_law.second_moment();
    if unit <= 0.0 {
        return Err(Error::Domain {
            what: "calibration",
            detail: "the test signal has zero power".into(),
        });
    }
    if target == 0.5 {
        return Ok((0.0, spectrum.scaled(0.0)?));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while oracle_error_rate(hi) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence {
                what: "calibration bracket",
                iterations: 40,
                residual: target,
            });
        }
    }
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        v = 0.5 * (lo + hi);
        let e = oracle_error_rate(v);
        if (e - target).abs() <= 0.01 * tol || hi - lo <= 1e-12 * hi {
            break;
        }
        if e > target {
            lo = v;
        } else {
            hi = v;
        }
    }
    let factor = v / unit;
    Ok((factor, spectrum.scaled(factor)?))
}
