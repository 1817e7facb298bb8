//! Direct empirical solvers for the regularized problems: normal equations
//! for ridge, damped Newton for L2-regularized logistic regression, and
//! Adam for the non-convex tanh regression.

use faer::Mat;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::denoisers::Penalty;
use crate::error::{Error, Result};
use crate::linalg::{dot, gram, mat_t_vec, mat_vec, norm, outer_gram, solve_spd};
use crate::synthdata::{sigmoid, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamOptions {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 32,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineOptions {
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub adam: AdamOptions,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-8,
            newton_max_iters: 100,
            adam: AdamOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineFit {
    pub w_hat: Vec<f64>,
    /// Final value of `Σ f_out(Xw; y) + Σ f_in(w)`.
    pub objective: f64,
    pub iterations: usize,
}

fn l2_coefficient(f_in: &Penalty) -> Result<f64> {
    match *f_in {
        Penalty::L2 { lambda, beta_scale } => Ok(lambda / beta_scale),
        other => Err(Error::Unsupported(format!(
            "baseline solvers need an L2 input penalty, got {}",
            other.name()
        ))),
    }
}

pub fn objective(ds: &Dataset, f_in: &Penalty, f_out: &Penalty, w: &[f64]) -> f64 {
    let xw = ds.apply_x(w);
    let out: f64 = xw.iter().zip(&ds.y).map(|(&x, &y)| f_out.value(x, y)).sum();
    out + w.iter().map(|&wi| f_in.value(wi, 0.0)).sum::<f64>()
}

pub fn baseline_fit<R: Rng + ?Sized>(
    ds: &Dataset,
    f_in: &Penalty,
    f_out: &Penalty,
    opts: &BaselineOptions,
    rng: &mut R,
) -> Result<BaselineFit> {
    f_in.validate()?;
    f_out.validate()?;
    let c = l2_coefficient(f_in)?;
    let fit = match *f_out {
        Penalty::SquaredLoss { weight } => ridge(ds, c / weight)?,
        Penalty::LogisticLoss => logistic_newton(ds, c, opts)?,
        Penalty::TanhLoss { noise_var } => tanh_adam(ds, c, noise_var, &opts.adam, rng),
        other => {
            return Err(Error::Unsupported(format!(
                "no baseline solver for the {} loss",
                other.name()
            )))
        }
    };
    let objective = objective(ds, f_in, f_out, &fit.0);
    Ok(BaselineFit {
        w_hat: fit.0,
        objective,
        iterations: fit.1,
    })
}

/// `argmin ½‖y - Xw‖² + (c/2)‖w‖²`, through whichever Gram matrix is smaller.
fn ridge(ds: &Dataset, c: f64) -> Result<(Vec<f64>, usize)> {
    let x = ds.x();
    let (n, p) = (ds.n(), ds.p());
    let w = if n >= p {
        let mut a = gram(&x);
        for i in 0..p {
            a[(i, i)] += c;
        }
        solve_spd(&a, &mat_t_vec(&x, &ds.y))?
    } else {
        let mut a = outer_gram(&x);
        for i in 0..n {
            a[(i, i)] += c;
        }
        mat_t_vec(&x, &solve_spd(&a, &ds.y)?)
    };
    Ok((w, 1))
}

fn logistic_newton(ds: &Dataset, c: f64, opts: &BaselineOptions) -> Result<(Vec<f64>, usize)> {
    if c <= 0.0 {
        return Err(Error::Unsupported("logistic baseline needs a positive L2 weight".into()));
    }
    let x = ds.x();
    let (n, p) = (ds.n(), ds.p());
    let loss = |w: &[f64]| -> f64 {
        let xw = mat_vec(&x, w);
        let l: f64 = xw.iter().zip(&ds.y).map(|(&v, &y)| Penalty::LogisticLoss.value(v, y)).sum();
        l + 0.5 * c * dot(w, w)
    };
    let mut w = vec![0.0; p];
    let mut f = loss(&w);
    for it in 0..opts.newton_max_iters {
        let xw = mat_vec(&x, &w);
        let mu: Vec<f64> = xw.iter().map(|&v| sigmoid(v)).collect();
        let resid: Vec<f64> = mu.iter().zip(&ds.y).map(|(m, y)| m - y).collect();
        let mut grad = mat_t_vec(&x, &resid);
        for (g, wi) in grad.iter_mut().zip(&w) {
            *g += c * wi;
        }
        let gnorm = norm(&grad);
        if gnorm <= opts.newton_tol {
            return Ok((w, it));
        }
        let weights: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).sqrt()).collect();
        let scaled = Mat::<f64>::from_fn(n, p, |i, j| weights[i] * x[(i, j)]);
        let mut h = gram(&scaled);
        for i in 0..p {
            h[(i, i)] += c;
        }
        let step = solve_spd(&h, &grad)?;
        let slope = -dot(&grad, &step);
        // Once the predicted decrease is below the rounding level of the
        // objective, Armijo can no longer discriminate; take pure Newton steps.
        if -slope <= 1e-13 * f.abs().max(1.0) {
            w.iter_mut().zip(&step).for_each(|(wi, s)| *wi -= s);
            f = loss(&w);
            continue;
        }
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(wi, s)| wi - t * s).collect();
            let ft = loss(&trial);
            if ft <= f + 1e-4 * t * slope || t < 1e-12 {
                w = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
    }
    let xw = mat_vec(&x, &w);
    let resid: Vec<f64> = xw.iter().zip(&ds.y).map(|(&v, y)| sigmoid(v) - y).collect();
    let mut grad = mat_t_vec(&x, &resid);
    for (g, wi) in grad.iter_mut().zip(&w) {
        *g += c * wi;
    }
    let gnorm = norm(&grad);
    if gnorm <= opts.newton_tol {
        return Ok((w, opts.newton_max_iters));
    }
    Err(Error::NonConvergence {
        what: "logistic Newton",
        iterations: opts.newton_max_iters,
        residual: gnorm,
    })
}

/// Minibatch Adam on `Σ (y - tanh(xᵀw))²/(2σ²) + (c/2)‖w‖²`, starting at zero.
/// Each minibatch gradient is rescaled to an unbiased estimate of the full one.
fn tanh_adam<R: Rng + ?Sized>(
    ds: &Dataset,
    c: f64,
    noise_var: f64,
    opts: &AdamOptions,
    rng: &mut R,
) -> (Vec<f64>, usize) {
    let (n, p) = (ds.n(), ds.p());
    // Rows of X stored contiguously.
    let xt = ds.x().transpose().to_owned();
    let mut w = vec![0.0; p];
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut order: Vec<usize> = (0..n).collect();
    let batch = opts.batch.max(1);
    let mut step = 0usize;
    let mut grad = vec![0.0; p];
    for _ in 0..opts.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().zip(&w).for_each(|(g, wi)| *g = c * wi);
            let scale = n as f64 / chunk.len() as f64;
            for &i in chunk {
                let row = xt.col_as_slice(i);
                let t = dot(row, &w).tanh();
                let coef = -scale * (ds.y[i] - t) * (1.0 - t * t) / noise_var;
                grad.iter_mut().zip(row).for_each(|(g, xi)| *g += coef * xi);
            }
            step += 1;
            let b1 = 1.0 - opts.beta1.powi(step as i32);
            let b2 = 1.0 - opts.beta2.powi(step as i32);
            for j in 0..p {
                m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * grad[j];
                v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * grad[j] * grad[j];
                let mh = m[j] / b1;
                let vh = v[j] / b2;
                w[j] -= opts.learning_rate * mh / (vh.sqrt() + opts.epsilon);
            }
        }
    }
    (w, step)
}
