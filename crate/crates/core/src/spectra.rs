//! Singular-value laws: the joint train/test spectrum models and the
//! Marchenko–Pastur law of the Gaussian factor `U`.

use std::f64::consts::{LN_10, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_unit_interval, Error, Result};
use crate::linalg::{gaussian_matrix, singular_values};
use crate::quadrature::{gauss_hermite_normal, gauss_legendre, AdaptiveIntegrator};

/// Joint law of the train and test singular values `(S_tr, S_ts)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumModel {
    /// Every singular value equals `sigma_tr` (train) and `sigma_ts` (test).
    IsoConstant { sigma_tr: f64, sigma_ts: f64 },
    /// `S² = scale · 10^(U/10)` with `U` Gaussian of standard deviation
    /// `sigma_u_db` and train/test correlation `rho`.
    LogNormal { scale: f64, sigma_u_db: f64, rho: f64 },
    /// `(S_tr, S_ts) ∈ {0,1}²`, equal with probability `1 - epsilon`.
    BernoulliMismatch { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointAtom {
    pub s_tr: f64,
    pub s_ts: f64,
    pub weight: f64,
}

/// Train and test singular values drawn for one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSample {
    pub s_tr: Vec<f64>,
    pub s_ts: Vec<f64>,
}

/// Default Gauss–Hermite order for expectations over log-normal spectra.
pub const DEFAULT_HERMITE_NODES: usize = 48;

fn db_to_log(sigma_u_db: f64) -> f64 {
    0.1 * LN_10 * sigma_u_db
}

impl SpectrumModel {
    pub fn iid(sigma: f64) -> Self {
        SpectrumModel::IsoConstant {
            sigma_tr: sigma,
            sigma_ts: sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SpectrumModel::IsoConstant { sigma_tr, sigma_ts } => {
                check_nonnegative("sigma_tr", sigma_tr)?;
                check_nonnegative("sigma_ts", sigma_ts)
            }
            SpectrumModel::LogNormal {
                scale,
                sigma_u_db,
                rho,
            } => {
                check_nonnegative("scale", scale)?;
                check_nonnegative("sigma_u_db", sigma_u_db)?;
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::InvalidParameter {
                        name: "rho",
                        value: rho,
                        reason: "correlation must lie in [-1, 1]",
                    });
                }
                Ok(())
            }
            SpectrumModel::BernoulliMismatch { epsilon } => check_unit_interval("epsilon", epsilon),
        }
    }

    /// Draw `p` i.i.d. pairs `(S_tr, S_ts)`.
    pub fn sample<R: Rng + ?Sized>(&self, p: usize, rng: &mut R) -> Result<SpectrumSample> {
        self.validate()?;
        if p == 0 {
            return Err(Error::Empty("spectrum sample"));
        }
        let mut s_tr = Vec::with_capacity(p);
        let mut s_ts = Vec::with_capacity(p);
        for _ in 0..p {
            let (a, b) = self.draw(rng);
            s_tr.push(a);
            s_ts.push(b);
        }
        Ok(SpectrumSample { s_tr, s_ts })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match *self {
            SpectrumModel::IsoConstant { sigma_tr, sigma_ts } => (sigma_tr, sigma_ts),
            SpectrumModel::LogNormal {
                scale,
                sigma_u_db,
                rho,
            } => {
                let g1: f64 = rng.sample(StandardNormal);
                let g2: f64 = rng.sample(StandardNormal);
                let (l_tr, l_ts) = lognormal_exponents(sigma_u_db, rho, g1, g2);
                ((scale * l_tr.exp()).sqrt(), (scale * l_ts.exp()).sqrt())
            }
            SpectrumModel::BernoulliMismatch { epsilon } => {
                let same = rng.random::<f64>() >= epsilon;
                let first = if rng.random::<bool>() { 1.0 } else { 0.0 };
                let second = if same { first } else { 1.0 - first };
                (first, second)
            }
        }
    }

    /// `E[S_tr²]`.
    pub fn train_second_moment(&self) -> f64 {
        match *self {
            SpectrumModel::IsoConstant { sigma_tr, .. } => sigma_tr * sigma_tr,
            SpectrumModel::LogNormal {
                scale, sigma_u_db, ..
            } => scale * (0.5 * db_to_log(sigma_u_db).powi(2)).exp(),
            SpectrumModel::BernoulliMismatch { .. } => 0.5,
        }
    }

    /// `E[S_ts²]`.
    pub fn test_second_moment(&self) -> f64 {
        match *self {
            SpectrumModel::IsoConstant { sigma_ts, .. } => sigma_ts * sigma_ts,
            _ => self.train_second_moment(),
        }
    }

    /// The same model with every `S²` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        check_nonnegative("factor", factor)?;
        match *self {
            SpectrumModel::IsoConstant { sigma_tr, sigma_ts } => Ok(SpectrumModel::IsoConstant {
                sigma_tr: sigma_tr * factor.sqrt(),
                sigma_ts: sigma_ts * factor.sqrt(),
            }),
            SpectrumModel::LogNormal {
                scale,
                sigma_u_db,
                rho,
            } => Ok(SpectrumModel::LogNormal {
                scale: scale * factor,
                sigma_u_db,
                rho,
            }),
            SpectrumModel::BernoulliMismatch { .. } => Err(Error::Unsupported(
                "the Bernoulli mismatch spectrum has no scale".into(),
            )),
        }
    }

    /// Discrete law of `(S_tr, S_ts)` for deterministic expectations.
    pub fn joint_atoms(&self, hermite_nodes: usize) -> Vec<JointAtom> {
        match *self {
            SpectrumModel::IsoConstant { sigma_tr, sigma_ts } => vec![JointAtom {
                s_tr: sigma_tr,
                s_ts: sigma_ts,
                weight: 1.0,
            }],
            SpectrumModel::BernoulliMismatch { epsilon } => {
                let same = 0.5 * (1.0 - epsilon);
                let diff = 0.5 * epsilon;
                [(0.0, 0.0, same), (1.0, 1.0, same), (0.0, 1.0, diff), (1.0, 0.0, diff)]
                    .into_iter()
                    .filter(|a| a.2 > 0.0)
                    .map(|(s_tr, s_ts, weight)| JointAtom { s_tr, s_ts, weight })
                    .collect()
            }
            SpectrumModel::LogNormal {
                scale,
                sigma_u_db,
                rho,
            } => {
                let rule = gauss_hermite_normal(hermite_nodes);
                let independent = (1.0 - rho * rho).max(0.0).sqrt() * sigma_u_db;
                let second: &[(f64, f64)] = &if independent > 0.0 {
                    rule.nodes.iter().copied().zip(rule.weights.iter().copied()).collect::<Vec<_>>()
                } else {
                    vec![(0.0, 1.0)]
                };
                let mut atoms = Vec::with_capacity(rule.len() * second.len());
                for (&g1, &w1) in rule.nodes.iter().zip(&rule.weights) {
                    for &(g2, w2) in second {
                        let (l_tr, l_ts) = lognormal_exponents(sigma_u_db, rho, g1, g2);
                        atoms.push(JointAtom {
                            s_tr: (scale * l_tr.exp()).sqrt(),
                            s_ts: (scale * l_ts.exp()).sqrt(),
                            weight: w1 * w2,
                        });
                    }
                }
                atoms
            }
        }
    }

    /// Discrete law of `S_tr` alone.
    pub fn train_atoms(&self, hermite_nodes: usize) -> Vec<Atom> {
        match *self {
            SpectrumModel::LogNormal {
                scale, sigma_u_db, ..
            } => {
                let rule = gauss_hermite_normal(hermite_nodes);
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&g, &w)| Atom {
                        value: (scale * (db_to_log(sigma_u_db) * g).exp()).sqrt(),
                        weight: w,
                    })
                    .collect()
            }
            _ => {
                let mut atoms: Vec<Atom> = Vec::new();
                for j in self.joint_atoms(hermite_nodes) {
                    match atoms.iter_mut().find(|a| a.value == j.s_tr) {
                        Some(a) => a.weight += j.weight,
                        None => atoms.push(Atom {
                            value: j.s_tr,
                            weight: j.weight,
                        }),
                    }
                }
                atoms
            }
        }
    }
}

fn lognormal_exponents(sigma_u_db: f64, rho: f64, g1: f64, g2: f64) -> (f64, f64) {
    let k = db_to_log(sigma_u_db);
    let u_tr = g1;
    let u_ts = rho * g1 + (1.0 - rho * rho).max(0.0).sqrt() * g2;
    (k * u_tr, k * u_ts)
}

pub fn sample_joint_spectrum<R: Rng + ?Sized>(
    model: &SpectrumModel,
    p: usize,
    rng: &mut R,
) -> Result<SpectrumSample> {
    model.sample(p, rng)
}

/// Which length-normalized singular-value vector of `U` (N×p) a law describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpSide {
    /// Length-N vector: `min(N, p)` singular values padded with zeros.
    Rows,
    /// Length-p vector: `min(N, p)` singular values padded with zeros.
    Cols,
}

/// Marchenko–Pastur law for `U` with i.i.d. `N(0, 1/p)` entries and aspect
/// ratio `beta = p / N`.
///
/// The eigenvalues `x` of `β UᵀU` follow `μ_β(x) = √((b-x)(x-a)) / (2πβx)`
/// on `[a, b] = [(1-√β)², (1+√β)²]`, a measure of mass `min(1, 1/β)`.
/// `ν` denotes its normalization to a probability law, and `G(z) = E_ν[1/(x/β - z)]`
/// is the Stieltjes transform of the positive squared singular values of `U`.
#[derive(Debug, Clone)]
pub struct MpLaw {
    beta: f64,
    integrator: AdaptiveIntegrator,
}

impl MpLaw {
    pub fn new(beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        Ok(Self {
            beta,
            integrator: AdaptiveIntegrator::new(20, 100, 1e-14),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Support `[a, b]` of `μ_β`.
    pub fn edges(&self) -> (f64, f64) {
        let r = self.beta.sqrt();
        ((1.0 - r).powi(2), (1.0 + r).powi(2))
    }

    /// Total mass of `μ_β`.
    pub fn positive_mass(&self) -> f64 {
        if self.beta <= 1.0 {
            1.0
        } else {
            1.0 / self.beta
        }
    }

    /// `μ_β(x)`; zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.edges();
        if x <= a || x >= b || x <= 0.0 {
            return 0.0;
        }
        ((b - x) * (x - a)).sqrt() / (2.0 * PI * self.beta * x)
    }

    /// Point mass at zero in the law of the given side.
    pub fn zero_mass(&self, side: MpSide) -> f64 {
        match side {
            MpSide::Rows => (1.0 - self.beta).max(0.0),
            MpSide::Cols => (1.0 - 1.0 / self.beta).max(0.0),
        }
    }

    /// Eigenvalue `x` of `β UᵀU` and `ν` density (in θ) after substituting
    /// `x = a + (b - a) cos²(θ/2)`, θ ∈ [0, π]. The substitution removes the
    /// square-root edges and, for β = 1, the `1/x` singularity.
    fn theta_point(&self, theta: f64) -> (f64, f64) {
        let (a, b) = self.edges();
        let c = (0.5 * theta).cos();
        let s = (0.5 * theta).sin();
        let x = a + (b - a) * c * c;
        let norm = 1.0 / self.positive_mass();
        let sc = s * c;
        let dens = if self.beta == 1.0 {
            // x = 4c², so 8 s²c² / (π x) = 2 s² / π.
            2.0 * s * s / PI
        } else {
            8.0 * sc * sc / (PI * x)
        };
        (x, norm * dens)
    }

    fn check_outside_support(&self, z: f64) -> Result<()> {
        let (a, b) = self.edges();
        let lo = a / self.beta;
        let hi = b / self.beta;
        if !z.is_finite() || (z >= lo && z <= hi) {
            return Err(Error::Domain {
                what: "MP Stieltjes transform",
                detail: format!("z = {z} lies in the support [{lo}, {hi}]"),
            });
        }
        Ok(())
    }

    /// `G(z) = E_ν[1/(S² - z)]` for `z` outside `[a/β, b/β]`.
    pub fn stieltjes(&self, z: f64) -> Result<f64> {
        self.check_outside_support(z)?;
        let beta = self.beta;
        let f = |t: f64| {
            let (x, w) = self.theta_point(t);
            w / (x / beta - z)
        };
        Ok(self.integrator.integrate(&f, 0.0, PI))
    }

    /// `G'(z) = E_ν[1/(S² - z)²]`.
    pub fn stieltjes_derivative(&self, z: f64) -> Result<f64> {
        self.check_outside_support(z)?;
        let beta = self.beta;
        let f = |t: f64| {
            let (x, w) = self.theta_point(t);
            let d = x / beta - z;
            w / (d * d)
        };
        Ok(self.integrator.integrate(&f, 0.0, PI))
    }

    /// `G(0) = β / |β - 1|`, computed by quadrature; a pole at β = 1.
    pub fn g0(&self) -> Result<f64> {
        if self.beta == 1.0 {
            return Err(Error::Pole {
                what: "G(0)",
                at: 1.0,
            });
        }
        self.stieltjes(0.0)
    }

    /// `E_ν[f(S²)]` by the substituted quadrature with `nodes` points.
    pub fn expect(&self, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
        self.positive_atoms(nodes)
            .iter()
            .map(|a| a.weight * f(a.value * a.value))
            .sum()
    }

    /// Atoms of `ν` expressed as singular values `S = √(x/β)`, weights summing to one.
    pub fn positive_atoms(&self, nodes: usize) -> Vec<Atom> {
        let rule = gauss_legendre(nodes).mapped(0.0, PI);
        let mut atoms: Vec<Atom> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| {
                let (x, d) = self.theta_point(t);
                Atom {
                    value: (x / self.beta).sqrt(),
                    weight: w * d,
                }
            })
            .collect();
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        for a in &mut atoms {
            a.weight /= total;
        }
        atoms
    }

    /// Atoms of the singular-value law of the given side, zero atom included.
    pub fn singular_atoms(&self, nodes: usize, side: MpSide) -> Vec<Atom> {
        let zero = self.zero_mass(side);
        let mut atoms: Vec<Atom> = self
            .positive_atoms(nodes)
            .into_iter()
            .map(|a| Atom {
                value: a.value,
                weight: a.weight * (1.0 - zero),
            })
            .collect();
        if zero > 0.0 {
            atoms.push(Atom {
                value: 0.0,
                weight: zero,
            });
        }
        atoms
    }

    /// CDF of `ν` at eigenvalue `x` of `β UᵀU`.
    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.edges();
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let theta = 2.0 * ((x - a) / (b - a)).sqrt().acos();
        let f = |t: f64| self.theta_point(t).1;
        self.integrator.integrate(&f, theta, PI).clamp(0.0, 1.0)
    }

    /// Kolmogorov–Smirnov distance between sampled eigenvalues of `β UᵀU`
    /// (positive ones only) and `ν`.
    pub fn ks_distance(&self, eigenvalues: &[f64]) -> f64 {
        let mut xs: Vec<f64> = eigenvalues.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = self.cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Singular values of a sampled `U` (N×p, entries `N(0, 1/p)`), returned as the
/// zero-padded length-N and length-p vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MpSample {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

pub fn sample_mp_singulars<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<MpSample> {
    if n == 0 || p == 0 {
        return Err(Error::Empty("MP sample"));
    }
    let u = gaussian_matrix(n, p, 1.0 / (p as f64).sqrt(), rng);
    let sv = singular_values(&u)?;
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; p];
    rows[..sv.len()].copy_from_slice(&sv);
    cols[..sv.len()].copy_from_slice(&sv);
    Ok(MpSample { rows, cols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream_rng;

    #[test]
    fn density_mass_matches_side() {
        for beta in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let law = MpLaw::new(beta).unwrap();
            let (a, b) = law.edges();
            let integ = AdaptiveIntegrator::new(20, 200, 1e-13);
            let mass = integ.integrate(&|x| law.density(x), a, b);
            assert!((mass - law.positive_mass()).abs() < 1e-5, "beta={beta}: {mass}");
        }
    }

    #[test]
    fn mean_of_nu_is_one_over_min_side() {
        // E[x] under μ_β is 1 (β ≤ 1); the nonzero eigenvalues of βUᵀU for β > 1
        // have mean β.
        for beta in [0.3, 0.9, 1.0, 1.7, 4.0] {
            let law = MpLaw::new(beta).unwrap();
            let mean_sq = law.expect(400, |y| y);
            let expected = if beta <= 1.0 { 1.0 / beta } else { 1.0 };
            assert!((mean_sq - expected).abs() < 1e-10, "beta={beta}: {mean_sq}");
        }
    }

    #[test]
    fn support_is_rejected() {
        let law = MpLaw::new(0.5).unwrap();
        assert!(law.stieltjes(1.0).is_err());
        assert!(MpLaw::new(1.0).unwrap().g0().is_err());
        assert!(MpLaw::new(0.0).is_err());
    }

    #[test]
    fn bernoulli_marginals() {
        let m = SpectrumModel::BernoulliMismatch { epsilon: 0.3 };
        let atoms = m.joint_atoms(8);
        let w: f64 = atoms.iter().map(|a| a.weight).sum();
        assert!((w - 1.0).abs() < 1e-15);
        let mut rng = stream_rng(4, &[]);
        let s = m.sample(100_000, &mut rng).unwrap();
        let mism = s.s_tr.iter().zip(&s.s_ts).filter(|(a, b)| a != b).count() as f64 / 1e5;
        assert!((mism - 0.3).abs() < 0.01);
    }
}
