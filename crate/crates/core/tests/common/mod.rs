#![allow(dead_code)]

use glmlab::denoisers::Penalty;

/// Minimizer of `f(x; y) + γ/2 (x - r)²` found without the library prox:
/// a dense grid over the region that can hold the minimizer, golden-section
/// search around the best grid point, then bisection on the subgradient sign
/// to reach full precision.
pub fn prox_oracle(pen: &Penalty, r: f64, gamma: f64, y: f64) -> f64 {
    let obj = |x: f64| pen.value(x, y) + 0.5 * gamma * (x - r) * (x - r);
    // Every built-in penalty is nonnegative, so γ/2 (x* - r)² ≤ F(r).
    let reach = (2.0 * obj(r) / gamma).sqrt() + 1e-9;
    let points = 20_001;
    let h = 2.0 * reach / (points - 1) as f64;
    let mut best = (f64::INFINITY, r);
    for i in 0..points {
        let x = r - reach + i as f64 * h;
        let v = obj(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (obj(c), obj(d));
    for _ in 0..200 {
        if b - a <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = obj(d);
        }
    }
    // Widen slightly: golden section stalls where F is flat to rounding.
    let slack = 1e-6 * (1.0 + a.abs());
    let (mut lo, mut hi) = (a - slack, b + slack);
    for _ in 0..200 {
        let x = 0.5 * (lo + hi);
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            break;
        }
        let (s_lo, s_hi) = pen.subdifferential(x, y);
        let (g_lo, g_hi) = (s_lo + gamma * (x - r), s_hi + gamma * (x - r));
        if g_lo > 0.0 {
            hi = x;
        } else if g_hi < 0.0 {
            lo = x;
        } else {
            return x;
        }
    }
    0.5 * (lo + hi)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Residuals of the least-squares line through `(x, y)` and its R².
pub fn line_fit(x: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - (my + slope * (a - mx))).collect();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (resid, r2)
}
