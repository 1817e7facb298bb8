//! Synthetic GLM data: `X = U · diag(s_tr) · V0`, `y = φ_out(X w0, d)`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_unit_interval, Error, Result};
use crate::linalg::{gaussian_matrix, haar_orthogonal, mat_t_vec, mat_vec, thin_svd, ThinSvd};
use crate::spectra::SpectrumModel;

/// Prior on the entries of the true weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum W0Law {
    Gaussian { var: f64 },
    /// Nonzero with probability `density`, then `N(0, var)`.
    BernoulliGaussian { density: f64, var: f64 },
    Constant { value: f64 },
}

impl Default for W0Law {
    fn default() -> Self {
        W0Law::Gaussian { var: 1.0 }
    }
}

impl W0Law {
    pub fn validate(&self) -> Result<()> {
        match *self {
            W0Law::Gaussian { var } => check_nonnegative("w0 variance", var),
            W0Law::BernoulliGaussian { density, var } => {
                check_unit_interval("w0 density", density)?;
                check_nonnegative("w0 variance", var)
            }
            W0Law::Constant { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "w0 value",
                        value,
                        reason: "must be finite",
                    })
                }
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            W0Law::Gaussian { var } => var,
            W0Law::BernoulliGaussian { density, var } => density * var,
            W0Law::Constant { value } => value * value,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            W0Law::Gaussian { var } => var.sqrt() * rng.sample::<f64, _>(StandardNormal),
            W0Law::BernoulliGaussian { density, var } => {
                let on = rng.random::<f64>() < density;
                let g: f64 = rng.sample(StandardNormal);
                if on {
                    var.sqrt() * g
                } else {
                    0.0
                }
            }
            W0Law::Constant { value } => value,
        }
    }

    /// Whether draws are symmetric Gaussian, so antithetic sampling applies.
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, W0Law::Constant { value } if *value != 0.0)
    }
}

/// True output channel `y = φ_out(z, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Channel {
    /// `y = z + d`, `d ~ N(0, noise_var)`.
    Linear { noise_var: f64 },
    /// `y = 1{ρ(z) > d}`, `d ~ U(0, 1)`, ρ the logistic function.
    Logistic,
    /// `y = tanh(z) + d`, `d ~ N(0, noise_var)`.
    Tanh { noise_var: f64 },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Channel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Channel::Linear { noise_var } | Channel::Tanh { noise_var } => {
                check_nonnegative("noise variance", noise_var)
            }
            Channel::Logistic => Ok(()),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Channel::Linear { noise_var } | Channel::Tanh { noise_var } => {
                noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }
            Channel::Logistic => rng.random::<f64>(),
        }
    }

    pub fn output(&self, z: f64, d: f64) -> f64 {
        match *self {
            Channel::Linear { .. } => z + d,
            Channel::Logistic => {
                if sigmoid(z) > d {
                    1.0
                } else {
                    0.0
                }
            }
            Channel::Tanh { .. } => z.tanh() + d,
        }
    }

    /// Postulated predictor `ŷ = φ(ẑ)` matching the channel's link.
    pub fn predict(&self, z_hat: f64) -> f64 {
        match *self {
            Channel::Linear { .. } => z_hat,
            Channel::Logistic => {
                if z_hat > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Channel::Tanh { .. } => z_hat.tanh(),
        }
    }

    pub fn noise_var(&self) -> Option<f64> {
        match *self {
            Channel::Linear { noise_var } | Channel::Tanh { noise_var } => Some(noise_var),
            Channel::Logistic => None,
        }
    }
}

/// Ground-truth generative model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub spectrum: SpectrumModel,
    pub channel: Channel,
    pub w0_law: W0Law,
}

impl TrueModel {
    pub fn validate(&self) -> Result<()> {
        self.spectrum.validate()?;
        self.channel.validate()?;
        self.w0_law.validate()
    }
}

/// One problem instance. `X = U · diag(s_tr) · V0` is kept in factored form.
#[derive(Debug)]
pub struct Dataset {
    pub v0: Mat<f64>,
    pub s_tr: Vec<f64>,
    pub s_ts: Vec<f64>,
    pub u: Mat<f64>,
    pub w0: Vec<f64>,
    pub y: Vec<f64>,
    factor: OnceLock<ThinSvd>,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        let factor = OnceLock::new();
        if let Some(f) = self.factor.get() {
            let _ = factor.set(f.clone());
        }
        Self {
            v0: self.v0.clone(),
            s_tr: self.s_tr.clone(),
            s_ts: self.s_ts.clone(),
            u: self.u.clone(),
            w0: self.w0.clone(),
            y: self.y.clone(),
            factor,
        }
    }
}

impl Dataset {
    pub fn from_parts(
        v0: Mat<f64>,
        s_tr: Vec<f64>,
        s_ts: Vec<f64>,
        u: Mat<f64>,
        w0: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let p = v0.ncols();
        let n = u.nrows();
        let checks = [
            ("V0 rows", p, v0.nrows()),
            ("s_tr", p, s_tr.len()),
            ("s_ts", p, s_ts.len()),
            ("U columns", p, u.ncols()),
            ("w0", p, w0.len()),
            ("y", n, y.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::LengthMismatch { what, expected, got });
            }
        }
        if n == 0 || p == 0 {
            return Err(Error::Empty("dataset"));
        }
        Ok(Self {
            v0,
            s_tr,
            s_ts,
            u,
            w0,
            y,
            factor: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.v0.ncols()
    }

    /// Aspect ratio `p / N`.
    pub fn beta(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    /// Thin SVD of `U`, computed on first use.
    pub fn factor(&self) -> Result<&ThinSvd> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = thin_svd(&self.u)?;
        Ok(self.factor.get_or_init(|| f))
    }

    /// `X w`.
    pub fn apply_x(&self, w: &[f64]) -> Vec<f64> {
        let mut t = mat_vec(&self.v0, w);
        for (ti, s) in t.iter_mut().zip(&self.s_tr) {
            *ti *= s;
        }
        mat_vec(&self.u, &t)
    }

    /// `Xᵀ v`.
    pub fn apply_xt(&self, v: &[f64]) -> Vec<f64> {
        let mut t = mat_t_vec(&self.u, v);
        for (ti, s) in t.iter_mut().zip(&self.s_tr) {
            *ti *= s;
        }
        mat_t_vec(&self.v0, &t)
    }

    /// Dense `X`.
    pub fn x(&self) -> Mat<f64> {
        let p = self.p();
        let scaled = Mat::<f64>::from_fn(p, p, |i, j| self.s_tr[i] * self.v0[(i, j)]);
        &self.u * &scaled
    }

    /// Draw `m` test scores `(z, ẑ) = (⟨x, w0⟩, ⟨x, ŵ⟩)` with
    /// `xᵀ = uᵀ diag(s_ts) V0`, `u ~ N(0, I/p)`.
    pub fn test_scores<R: Rng + ?Sized>(
        &self,
        w_hat: &[f64],
        m: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.p();
        if w_hat.len() != p {
            return Err(Error::LengthMismatch {
                what: "w_hat",
                expected: p,
                got: w_hat.len(),
            });
        }
        let mut a = mat_vec(&self.v0, &self.w0);
        let mut b = mat_vec(&self.v0, w_hat);
        for i in 0..p {
            a[i] *= self.s_ts[i];
            b[i] *= self.s_ts[i];
        }
        let scale = 1.0 / (p as f64).sqrt();
        let mut z = Vec::with_capacity(m);
        let mut z_hat = Vec::with_capacity(m);
        for _ in 0..m {
            let (mut za, mut zb) = (0.0, 0.0);
            for i in 0..p {
                let g: f64 = rng.sample(StandardNormal);
                za += g * a[i];
                zb += g * b[i];
            }
            z.push(scale * za);
            z_hat.push(scale * zb);
        }
        Ok((z, z_hat))
    }
}

pub fn generate_dataset<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    model: &TrueModel,
    rng: &mut R,
) -> Result<Dataset> {
    model.validate()?;
    if n == 0 || p == 0 {
        return Err(Error::Empty("dataset dimensions"));
    }
    let v0 = haar_orthogonal(p, rng);
    let spec = model.spectrum.sample(p, rng)?;
    let u = gaussian_matrix(n, p, 1.0 / (p as f64).sqrt(), rng);
    let w0: Vec<f64> = (0..p).map(|_| model.w0_law.sample(rng)).collect();
    let mut ds = Dataset::from_parts(v0, spec.s_tr, spec.s_ts, u, w0, vec![0.0; n])?;
    let z = ds.apply_x(&ds.w0);
    ds.y = z
        .iter()
        .map(|&zi| {
            let d = model.channel.sample_noise(rng);
            model.channel.output(zi, d)
        })
        .collect();
    Ok(ds)
}

/// Fresh test pairs `(y_ts, ŷ_ts)` for an estimate `ŵ`.
pub fn generate_test_pairs<R: Rng + ?Sized>(
    ds: &Dataset,
    channel: &Channel,
    w_hat: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let (z, z_hat) = ds.test_scores(w_hat, m, rng)?;
    Ok(z.iter()
        .zip(&z_hat)
        .map(|(&zi, &zh)| {
            let d = channel.sample_noise(rng);
            (channel.output(zi, d), channel.predict(zh))
        })
        .collect())
}

/// Test loss `f_ts(y, ŷ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestLoss {
    Squared,
    ZeroOne,
}

impl TestLoss {
    pub fn eval(&self, y: f64, y_hat: f64) -> f64 {
        match self {
            TestLoss::Squared => (y - y_hat) * (y - y_hat),
            TestLoss::ZeroOne => {
                if y != y_hat {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn empirical_test_error(pairs: &[(f64, f64)], loss: TestLoss) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("test pairs"));
    }
    Ok(pairs.iter().map(|&(y, yh)| loss.eval(y, yh)).sum::<f64>() / pairs.len() as f64)
}

/// `10 log10(E(ŷ - y)² / E y²)`.
pub fn normalized_mse_db(pairs: &[(f64, f64)]) -> Result<f64> {
    let mse = empirical_test_error(pairs, TestLoss::Squared)?;
    let power = pairs.iter().map(|&(y, _)| y * y).sum::<f64>() / pairs.len() as f64;
    check_positive("test output power", power)?;
    Ok(10.0 * (mse / power).log10())
}

const MAGIC: &[u8; 6] = b"GLMDS1";

fn write_f64s<W: Write>(w: &mut W, xs: impl IntoIterator<Item = f64>) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn col_major(m: &Mat<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.ncols()).flat_map(move |j| m.col_as_slice(j).iter().copied())
}

/// Binary layout: magic `GLMDS1`, `N` and `p` as little-endian u64, then
/// little-endian f64 arrays `V0` (p×p), `s_tr`, `U` (N×p), `w0`, `y`, `s_ts`,
/// matrices column-major.
pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(ds.n() as u64).to_le_bytes())?;
    out.write_all(&(ds.p() as u64).to_le_bytes())?;
    write_f64s(&mut out, col_major(&ds.v0))?;
    write_f64s(&mut out, ds.s_tr.iter().copied())?;
    write_f64s(&mut out, col_major(&ds.u))?;
    write_f64s(&mut out, ds.w0.iter().copied())?;
    write_f64s(&mut out, ds.y.iter().copied())?;
    write_f64s(&mut out, ds.s_ts.iter().copied())?;
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Mat<f64>> {
    let data = read_f64s(r, rows * cols)?;
    Ok(Mat::from_fn(rows, cols, |i, j| data[j * rows + i]))
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    let mut magic = [0u8; 6];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let n = read_u64(&mut input)? as usize;
    let p = read_u64(&mut input)? as usize;
    if n == 0 || p == 0 || n.checked_mul(p).is_none() {
        return Err(Error::Format(format!("bad dimensions N={n}, p={p}")));
    }
    let v0 = read_matrix(&mut input, p, p)?;
    let s_tr = read_f64s(&mut input, p)?;
    let u = read_matrix(&mut input, n, p)?;
    let w0 = read_f64s(&mut input, p)?;
    let y = read_f64s(&mut input, n)?;
    let s_ts = read_f64s(&mut input, p)?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes".into()));
    }
    Dataset::from_parts(v0, s_tr, s_ts, u, w0, y)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_dataset(ds, std::io::BufWriter::new(f))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream_rng;

    fn model() -> TrueModel {
        TrueModel {
            spectrum: SpectrumModel::iid(1.0),
            channel: Channel::Linear { noise_var: 0.0 },
            w0_law: W0Law::Constant { value: 0.0 },
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut rng = stream_rng(1, &[]);
        let ds = generate_dataset(20, 10, &model(), &mut rng).unwrap();
        assert!(ds.y.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn factored_and_dense_products_agree() {
        let mut rng = stream_rng(2, &[]);
        let m = TrueModel {
            w0_law: W0Law::Gaussian { var: 1.0 },
            ..model()
        };
        let ds = generate_dataset(15, 25, &m, &mut rng).unwrap();
        let x = ds.x();
        let v: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        let dense = mat_t_vec(&x, &v);
        let fact = ds.apply_xt(&v);
        for (a, b) in dense.iter().zip(&fact) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = mat_vec(&x, &ds.w0);
        for (a, b) in z.iter().zip(&ds.y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = stream_rng(3, &[]);
        let m = TrueModel {
            channel: Channel::Logistic,
            w0_law: W0Law::Gaussian { var: 1.0 },
            ..model()
        };
        let ds = generate_dataset(7, 5, &m, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(buf.len(), 6 + 16 + 8 * (25 + 5 + 35 + 5 + 7 + 5));
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back.y, ds.y);
        assert_eq!(back.s_ts, ds.s_ts);
        assert_eq!(back.v0, ds.v0);
        assert_eq!(back.u, ds.u);
        buf[0] = b'X';
        assert!(read_dataset(&buf[..]).is_err());
    }
}
