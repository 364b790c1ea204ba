//! Panel generation from `y_i = Γ(δ + F λ_i + ε_i)` and sample moments.
//!
//! Unit `i` draws from its own ChaCha8 stream `(seed, i)`, so a panel is a
//! pure function of its inputs whatever the thread count. The first period
//! is generated directly from `(δ₁, f₁, ε_{i1})`; there is no burn-in.

use std::io::{BufRead, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::draw::stream_rng;
use crate::error::{Error, Result};
use crate::model::{self, Theta, Variant};
use crate::par;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Distribution of the loadings `λ_i = μ + chol(Ψ)·z_i` with `E[z] = 0`,
/// `Var[z] = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadingSpec {
    Normal {
        #[serde(default)]
        mean: Option<Vec<f64>>,
    },
    /// Independent uniform components on `[−√3, √3]`.
    Uniform {
        #[serde(default)]
        mean: Option<Vec<f64>>,
    },
    /// Non-random Halton points mapped to `[−√3, √3]^r̄` (fixed constants).
    FixedGrid {
        #[serde(default)]
        mean: Option<Vec<f64>>,
    },
}

impl Default for LoadingSpec {
    fn default() -> Self {
        LoadingSpec::Normal { mean: None }
    }
}

impl LoadingSpec {
    fn mean(&self) -> Option<&Vec<f64>> {
        match self {
            LoadingSpec::Normal { mean } | LoadingSpec::Uniform { mean } | LoadingSpec::FixedGrid { mean } => {
                mean.as_ref()
            }
        }
    }
}

/// Shape of the standardized idiosyncratic shocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSpec {
    #[default]
    Normal,
    /// Uniform on `[−√3, √3]`, unit variance.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSpec {
    pub loadings: LoadingSpec,
    pub errors: ErrorSpec,
}

/// `N × T` panel plus the inputs that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSample {
    /// Rows are units, columns periods.
    pub y: DMatrix<f64>,
    pub theta_used: Theta,
    pub delta: Vec<f64>,
    pub seed: u64,
    pub variant: Variant,
}

impl PanelSample {
    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn big_t(&self) -> usize {
        self.y.ncols()
    }
}

fn standard_draw<R: Rng>(rng: &mut R, spec: ErrorSpec) -> f64 {
    match spec {
        ErrorSpec::Normal => rng.sample(StandardNormal),
        ErrorSpec::Uniform => rng.random_range(-SQRT3..SQRT3),
    }
}

/// Radical inverse of `i` in base `b`.
fn van_der_corput(mut i: u64, b: u64) -> f64 {
    let (mut x, mut f) = (0.0, 1.0 / b as f64);
    while i > 0 {
        x += f * (i % b) as f64;
        i /= b;
        f /= b as f64;
    }
    x
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Draws the idiosyncratic vector `ε_i`. Differenced errors come from
/// first-differenced level shocks `u_t` with variance `σ²`; the first error is
/// `c·u₁ + e` with `c = −σ_c/σ²` and `Var(e) = σ₁² − σ_c²/σ²`, which yields
/// `Var(ε₁) = σ₁²` and `Cov(ε₁, ε₂) = σ_c`.
fn draw_errors<R: Rng>(theta: &Theta, rng: &mut R, spec: ErrorSpec) -> DVector<f64> {
    let t = theta.big_t;
    match (theta.variant, theta.d_extra) {
        (Variant::Differenced, Some(e)) => {
            let sd = e.sigma2.sqrt();
            let u: Vec<f64> = (0..t).map(|_| sd * standard_draw(rng, spec)).collect();
            let c = -e.sigma_c / e.sigma2;
            let var_e = (e.sigma1_sq - e.sigma_c * e.sigma_c / e.sigma2).max(0.0);
            let first = c * u[0] + var_e.sqrt() * standard_draw(rng, spec);
            DVector::from_fn(t, |s, _| if s == 0 { first } else { u[s] - u[s - 1] })
        }
        _ => DVector::from_fn(t, |s, _| theta.d_diag[s].sqrt() * standard_draw(rng, spec)),
    }
}

fn check_spec(theta: &Theta, spec: &PanelSpec) -> Result<()> {
    if let Some(m) = spec.loadings.mean() {
        if m.len() != theta.r_bar {
            return Err(Error::InvalidDistribution(format!(
                "loading mean has length {}, expected r_bar = {}",
                m.len(),
                theta.r_bar
            )));
        }
    }
    if matches!(spec.loadings, LoadingSpec::FixedGrid { .. }) && theta.r_bar > PRIMES.len() {
        return Err(Error::InvalidDistribution(format!("fixed grid supports r_bar <= {}", PRIMES.len())));
    }
    if let (Variant::Differenced, Some(e)) = (theta.variant, theta.d_extra) {
        if e.sigma_c * e.sigma_c > e.sigma1_sq * e.sigma2 {
            return Err(Error::InvalidDistribution(
                "differenced errors need sigma_c^2 <= sigma1_sq * sigma2".into(),
            ));
        }
    }
    Ok(())
}

/// Simulates `n_units` independent units.
pub fn gen_panel(theta: &Theta, delta: &[f64], n_units: usize, seed: u64, spec: &PanelSpec) -> Result<PanelSample> {
    theta.validate()?;
    check_spec(theta, spec)?;
    let t = theta.big_t;
    if delta.len() != t {
        return Err(Error::Dimension(format!("delta has length {}, expected T = {t}", delta.len())));
    }
    if n_units < 2 {
        return Err(Error::Dimension("a panel needs at least two units".into()));
    }
    let gamma = model::build_gamma(theta.alpha, t);
    let chol = if theta.r_bar > 0 {
        theta
            .psi
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { min_eig: crate::linalg::min_eigenvalue(&theta.psi) })?
            .l()
    } else {
        DMatrix::zeros(0, 0)
    };
    let mean = spec.loadings.mean().map(|m| DVector::from_column_slice(m)).unwrap_or_else(|| DVector::zeros(theta.r_bar));
    let delta = DVector::from_column_slice(delta);
    let rows = par::map_indexed(n_units, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let z = DVector::from_fn(theta.r_bar, |j, _| match &spec.loadings {
            LoadingSpec::Normal { .. } => rng.sample(StandardNormal),
            LoadingSpec::Uniform { .. } => rng.random_range(-SQRT3..SQRT3),
            LoadingSpec::FixedGrid { .. } => {
                SQRT3 * (2.0 * van_der_corput(i as u64 + 1, PRIMES[j]) - 1.0)
            }
        });
        let lambda = &mean + &chol * z;
        let eps = draw_errors(theta, &mut rng, spec.errors);
        let level = &delta + &theta.factors * lambda + eps;
        (&gamma * level).transpose()
    });
    let y = DMatrix::from_rows(&rows);
    Ok(PanelSample { y, theta_used: theta.clone(), delta: delta.iter().copied().collect(), seed, variant: theta.variant })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// `1/(N − 1)`, unbiased.
    #[default]
    NMinusOne,
    /// `1/N`, the quasi-ML convention.
    N,
}

/// Cross-sectional mean `ȳ`.
pub fn unit_mean(y: &DMatrix<f64>) -> DVector<f64> {
    y.row_mean().transpose()
}

/// Centered cross-product matrix of the rows of `y`.
pub fn sample_cov_matrix(y: &DMatrix<f64>, divisor: Divisor) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::Dimension("sample covariance needs N >= 2".into()));
    }
    let mean = y.row_mean();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let d = match divisor {
        Divisor::NMinusOne => (n - 1) as f64,
        Divisor::N => n as f64,
    };
    let s = centered.transpose() * &centered / d;
    Ok((&s + s.transpose()) * 0.5)
}

pub fn sample_cov(panel: &PanelSample, divisor: Divisor) -> Result<DMatrix<f64>> {
    sample_cov_matrix(&panel.y, divisor)
}

/// `δ̂ = B(α) ȳ`, the time effects implied by the mean at a given `α`.
/// A convenience outside the concentrated likelihood.
pub fn recover_delta(alpha: f64, y: &DMatrix<f64>) -> Vec<f64> {
    let b = model::build_b(alpha, y.ncols());
    (b * unit_mean(y)).iter().copied().collect()
}

/// Writes the panel as CSV with header `unit,t1,…,tT`.
pub fn write_csv<W: Write>(y: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit".to_string()];
    header.extend((1..=y.ncols()).map(|t| format!("t{t}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in y.row_iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let t = r.headers().map_err(csv_err)?.len().saturating_sub(1);
    let mut data = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != t + 1 {
            return Err(Error::PanelFormat(format!("row {} has {} fields, expected {}", n + 1, rec.len(), t + 1)));
        }
        for field in rec.iter().skip(1) {
            data.push(field.trim().parse::<f64>().map_err(|e| Error::PanelFormat(format!("row {}: {e}", n + 1)))?);
        }
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, t, &data))
}

fn csv_err(e: csv::Error) -> Error {
    Error::PanelFormat(e.to_string())
}

pub const BINARY_MAGIC: &[u8; 4] = b"PNLS";
pub const BINARY_VERSION: u8 = 1;

/// Writes `PNLS`, a version byte, `N` and `T` as little-endian `u64`, then
/// the row-major little-endian `f64` values.
pub fn write_binary<W: Write>(y: &DMatrix<f64>, mut out: W) -> Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&[BINARY_VERSION])?;
    out.write_all(&(y.nrows() as u64).to_le_bytes())?;
    out.write_all(&(y.ncols() as u64).to_le_bytes())?;
    for row in y.row_iter() {
        for v in row.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: BufRead>(mut input: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::PanelFormat("bad magic".into()));
    }
    let mut version = [0u8; 1];
    input.read_exact(&mut version)?;
    if version[0] != BINARY_VERSION {
        return Err(Error::PanelFormat(format!("unsupported version {}", version[0])));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let t = u64::from_le_bytes(word) as usize;
    let len = n.checked_mul(t).ok_or_else(|| Error::PanelFormat("N*T overflows".into()))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        input.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(DMatrix::from_row_slice(n, t, &data))
}
