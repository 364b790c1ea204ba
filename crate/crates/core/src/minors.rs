//! Exclusion minors of `O(α̃) = Q Ω Q'` and their determinants as
//! polynomials in `α̃`.
//!
//! Writing `O = Ω + (α − α̃) J` with `J = LΩ + ΩL' + (α − α̃) LΩL'`, every
//! exclusion minor satisfies `det M^O = det M^Ω + (α − α̃) J̃`, where `J̃` is
//! built by Laplace expansion along the last selected row.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, Theta};
use crate::poly::AlphaPoly;

/// Relative tolerance for the vanishing of `Ω` minors of dimension `k > r̄`.
pub const OMEGA_MINOR_TOL: f64 = 1e-9;

/// Row set `R` and column set `C` (0-based, strictly increasing) of a square
/// minor avoiding the band `|r − c| ≤ band`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "MinorDoc", into = "MinorDoc")]
pub struct ExclusionMinor {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub band: usize,
}

/// JSON layout with 1-based indices.
#[derive(Serialize, Deserialize)]
struct MinorDoc {
    rows: Vec<usize>,
    cols: Vec<usize>,
    #[serde(default)]
    band: usize,
}

impl TryFrom<MinorDoc> for ExclusionMinor {
    type Error = Error;
    fn try_from(d: MinorDoc) -> Result<Self> {
        let shift = |v: Vec<usize>| -> Result<Vec<usize>> {
            v.into_iter()
                .map(|i| i.checked_sub(1).ok_or_else(|| Error::InvalidMinor("indices are 1-based".into())))
                .collect()
        };
        ExclusionMinor::new(shift(d.rows)?, shift(d.cols)?, d.band)
    }
}

impl From<ExclusionMinor> for MinorDoc {
    fn from(m: ExclusionMinor) -> Self {
        MinorDoc {
            rows: m.rows.iter().map(|i| i + 1).collect(),
            cols: m.cols.iter().map(|i| i + 1).collect(),
            band: m.band,
        }
    }
}

impl ExclusionMinor {
    /// Checks shape, ordering and band exclusion (not the dimension `T`).
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, band: usize) -> Result<Self> {
        if rows.is_empty() || rows.len() != cols.len() {
            return Err(Error::InvalidMinor(format!(
                "|R| = {} and |C| = {} must be equal and positive",
                rows.len(),
                cols.len()
            )));
        }
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&rows) || !increasing(&cols) {
            return Err(Error::InvalidMinor("index sets must be strictly increasing".into()));
        }
        for &r in &rows {
            for &c in &cols {
                if r.abs_diff(c) <= band {
                    return Err(Error::InBand { row: r + 1, col: c + 1, band });
                }
            }
        }
        Ok(ExclusionMinor { rows, cols, band })
    }

    /// Builds from 1-based indices.
    pub fn one_based(rows: &[usize], cols: &[usize], band: usize) -> Result<Self> {
        let shift = |v: &[usize]| v.iter().map(|i| i.wrapping_sub(1)).collect::<Vec<_>>();
        if rows.iter().chain(cols).any(|&i| i == 0) {
            return Err(Error::InvalidMinor("indices are 1-based".into()));
        }
        ExclusionMinor::new(shift(rows), shift(cols), band)
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn transpose(&self) -> Self {
        ExclusionMinor { rows: self.cols.clone(), cols: self.rows.clone(), band: self.band }
    }

    pub fn fits(&self, big_t: usize) -> bool {
        self.rows.iter().chain(&self.cols).all(|&i| i < big_t)
    }

    /// Selected submatrix of `m`.
    pub fn select(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::submatrix(m, &self.rows, &self.cols)
    }

    /// Compact 1-based label such as `(1,2),(3,4)`.
    pub fn label(&self) -> String {
        let fmt = |v: &[usize]| {
            v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",")
        };
        format!("({}),({})", fmt(&self.rows), fmt(&self.cols))
    }
}

/// All `k`-dimensional exclusion minors of a `T × T` matrix for the given
/// band, one per transpose pair (the member whose `R` holds the smallest
/// index), in lexicographic order of `(R, C)`. Empty when infeasible.
pub fn enumerate_minors(big_t: usize, k: usize, band: usize) -> Vec<ExclusionMinor> {
    let feasible = match band {
        0 => 2 * k <= big_t,
        _ => big_t >= 2 * k + band,
    };
    if k == 0 || !feasible {
        return Vec::new();
    }
    let subsets = combinations(big_t, k);
    let mut out = Vec::new();
    for r in &subsets {
        for c in &subsets {
            if r[0] > c[0] {
                continue;
            }
            if r.iter().all(|&ri| c.iter().all(|&ci| ri.abs_diff(ci) > band)) {
                out.push(ExclusionMinor { rows: r.clone(), cols: c.clone(), band });
            }
        }
    }
    out
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// `J` split into its constant and linear parts in `α̃`:
/// `J = c0 + c1·α̃` with `c0 = LΩ + ΩL' + αLΩL'` and `c1 = −LΩL'`.
#[derive(Debug, Clone)]
pub struct JPoly {
    pub c0: DMatrix<f64>,
    pub c1: DMatrix<f64>,
}

impl JPoly {
    pub fn entry(&self, r: usize, c: usize) -> AlphaPoly {
        AlphaPoly::linear(self.c0[(r, c)], self.c1[(r, c)])
    }

    pub fn eval(&self, x: f64) -> DMatrix<f64> {
        &self.c0 + &self.c1 * x
    }
}

pub fn build_j_poly(theta: &Theta) -> Result<JPoly> {
    let omega = model::build_omega(theta)?;
    Ok(j_from_omega(theta.alpha, &omega))
}

fn j_from_omega(alpha: f64, omega: &DMatrix<f64>) -> JPoly {
    let l = model::build_l(alpha, omega.nrows());
    let lo = &l * omega;
    let lol = &lo * l.transpose();
    let c0 = &lo + lo.transpose() + &lol * alpha;
    JPoly { c0, c1: -lol }
}

/// `O_{r,c} = Ω_{r,c} + (α − α̃) J_{r,c}` for an entry outside the band of the
/// variant's error covariance (0-based indices).
pub fn off_diag_o_poly(theta: &Theta, r: usize, c: usize) -> Result<AlphaPoly> {
    let band = theta.variant.exclusion_band();
    if r.abs_diff(c) <= band {
        return Err(Error::InBand { row: r + 1, col: c + 1, band });
    }
    if r >= theta.big_t || c >= theta.big_t {
        return Err(Error::Dimension(format!("entry ({}, {}) outside T = {}", r + 1, c + 1, theta.big_t)));
    }
    let ctx = MinorContext::new(theta)?;
    Ok(ctx.o_entry(r, c))
}

/// Precomputed `Ω` and `J` for repeated minor evaluations at one `θ`.
#[derive(Debug, Clone)]
pub struct MinorContext {
    pub alpha: f64,
    pub r_bar: usize,
    pub big_t: usize,
    pub band: usize,
    pub omega: DMatrix<f64>,
    pub j: JPoly,
}

impl MinorContext {
    pub fn new(theta: &Theta) -> Result<Self> {
        let omega = model::build_omega(theta)?;
        let j = j_from_omega(theta.alpha, &omega);
        Ok(MinorContext {
            alpha: theta.alpha,
            r_bar: theta.r_bar,
            big_t: theta.big_t,
            band: theta.variant.exclusion_band(),
            omega,
            j,
        })
    }

    pub fn o_entry(&self, r: usize, c: usize) -> AlphaPoly {
        let amp = AlphaPoly::alpha_minus_probe(self.alpha);
        &AlphaPoly::constant(self.omega[(r, c)]) + &(&amp * &self.j.entry(r, c))
    }

    fn check(&self, minor: &ExclusionMinor) -> Result<()> {
        if !minor.fits(self.big_t) {
            return Err(Error::InvalidMinor(format!("{} exceeds T = {}", minor.label(), self.big_t)));
        }
        if minor.band < self.band {
            return Err(Error::InvalidMinor(format!(
                "{} uses band {} but the error covariance needs band {}",
                minor.label(),
                minor.band,
                self.band
            )));
        }
        Ok(())
    }

    /// `J̃_{R,C}` via the Laplace recursion.
    pub fn jtilde(&self, minor: &ExclusionMinor) -> Result<AlphaPoly> {
        self.check(minor)?;
        let mut memo = HashMap::new();
        Ok(self.jtilde_rec(&minor.rows, &minor.cols, &mut memo))
    }

    fn jtilde_rec(
        &self,
        rows: &[usize],
        cols: &[usize],
        memo: &mut HashMap<(Vec<usize>, Vec<usize>), AlphaPoly>,
    ) -> AlphaPoly {
        let k = rows.len();
        if k == 1 {
            return self.j.entry(rows[0], cols[0]);
        }
        let key = (rows.to_vec(), cols.to_vec());
        if let Some(p) = memo.get(&key) {
            return p.clone();
        }
        let rk = rows[k - 1];
        let sub_rows = &rows[..k - 1];
        let amp = AlphaPoly::alpha_minus_probe(self.alpha);
        let mut acc = AlphaPoly::zero();
        for (j, &cj) in cols.iter().enumerate() {
            let sub_cols: Vec<usize> = cols.iter().copied().filter(|&c| c != cj).collect();
            let det_omega = linalg::det(&linalg::submatrix(&self.omega, sub_rows, &sub_cols));
            let sub = self.jtilde_rec(sub_rows, &sub_cols, memo);
            let jrc = self.j.entry(rk, cj);
            let term = &(&jrc.scale(det_omega) + &sub.scale(self.omega[(rk, cj)]))
                + &(&(&amp * &jrc) * &sub);
            // Cofactor sign for 1-based row k and column j + 1.
            let sign = if (k - 1 + j) % 2 == 0 { 1.0 } else { -1.0 };
            acc = &acc + &term.scale(sign);
        }
        memo.insert(key, acc.clone());
        acc
    }

    /// `det M^O_{R,C} = det M^Ω_{R,C} + (α − α̃) J̃_{R,C}`. For `k > r̄` the
    /// constant must vanish; it is checked against a Hadamard-scaled tolerance
    /// and then set to exactly zero.
    pub fn det_minor(&self, minor: &ExclusionMinor) -> Result<AlphaPoly> {
        let jt = self.jtilde(minor)?;
        let m = minor.select(&self.omega);
        let mut det_omega = linalg::det(&m);
        if minor.dim() > self.r_bar {
            let scale = linalg::hadamard_bound(&m).max(f64::MIN_POSITIVE);
            if det_omega.abs() > OMEGA_MINOR_TOL * scale {
                return Err(Error::NonVanishingOmegaMinor { minor: minor.label(), det: det_omega });
            }
            det_omega = 0.0;
        }
        Ok(&AlphaPoly::constant(det_omega) + &(&AlphaPoly::alpha_minus_probe(self.alpha) * &jt))
    }

    /// Dense `O(x) = Q(α, x) Ω Q(α, x)'`.
    pub fn dense_o(&self, x: f64) -> DMatrix<f64> {
        let q = model::build_q(self.alpha, x, self.big_t);
        &q * &self.omega * q.transpose()
    }
}

pub fn jtilde_poly(theta: &Theta, minor: &ExclusionMinor) -> Result<AlphaPoly> {
    MinorContext::new(theta)?.jtilde(minor)
}

pub fn det_minor_poly(theta: &Theta, minor: &ExclusionMinor) -> Result<AlphaPoly> {
    MinorContext::new(theta)?.det_minor(minor)
}

/// Inclusive degree range `[max(0, k − r̄), 2k − 1]` for `J̃` of a `k`-minor.
pub fn degree_bounds(k: usize, r_bar: usize) -> (usize, usize) {
    (k.saturating_sub(r_bar), 2 * k - 1)
}

/// Whether `deg J̃` lies within [`degree_bounds`]; a zero `J̃` fails.
pub fn check_degree_bounds(theta: &Theta, minor: &ExclusionMinor) -> Result<bool> {
    let jt = jtilde_poly(theta, minor)?;
    Ok(degree_within_bounds(&jt, minor.dim(), theta.r_bar))
}

pub fn degree_within_bounds(jt: &AlphaPoly, k: usize, r_bar: usize) -> bool {
    let (lo, hi) = degree_bounds(k, r_bar);
    jt.degree().is_some_and(|d| d >= lo && d <= hi)
}
