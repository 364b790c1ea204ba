//! Structural parameter point and the second-moment matrices it implies.
//!
//! Observations stack as `B y_i = δ + F λ_i + ε_i`, so with `Γ = B⁻¹` the
//! covariance of `y_i` is `Σ(θ) = Γ (F Ψ F' + D) Γ' = Γ Ω Γ'`. For the
//! differenced variant `D` is the tridiagonal covariance of the differenced
//! idiosyncratic errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Model variant, selecting the factor structure and error covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Interactive effects with `F = (I, F₂')'`.
    Baseline,
    /// Individual effects absorbed as a constant factor, plus one free factor.
    FixedEffectsLevels,
    /// First-differenced data with tridiagonal error covariance.
    Differenced,
    /// AR(1) panel with individual effects only.
    ArPanel,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::FixedEffectsLevels,
        Variant::Differenced,
        Variant::ArPanel,
    ];

    /// Off-diagonal band whose entries of `O` depend on the unknown error
    /// covariance: 0 for diagonal `D`, 1 for the tridiagonal differenced case.
    pub fn exclusion_band(self) -> usize {
        match self {
            Variant::Differenced => 1,
            _ => 0,
        }
    }

    pub fn default_normalization(self) -> Normalization {
        match self {
            Variant::Baseline | Variant::Differenced => Normalization::TopBlockIdentity,
            Variant::FixedEffectsLevels => Normalization::Tail,
            Variant::ArPanel => Normalization::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Normalization {
    TopBlockIdentity,
    Tail,
    None,
}

/// Parameters of the differenced error covariance: the level shock variance
/// and the free variance / covariance of the projected first error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DExtra {
    pub sigma2: f64,
    pub sigma1_sq: f64,
    pub sigma_c: f64,
}

/// Full structural parameter point.
///
/// `factors` is stored in full, normalized entries included; free-parameter
/// extraction lives in [`crate::estimate::pack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaDoc", into = "ThetaDoc")]
pub struct Theta {
    pub alpha: f64,
    pub big_t: usize,
    pub r_bar: usize,
    /// `T × r̄`, row `t` is `f_t'`.
    pub factors: DMatrix<f64>,
    /// `r̄ × r̄` loading covariance.
    pub psi: DMatrix<f64>,
    /// Idiosyncratic variances `d_t`; ignored by the differenced variant.
    pub d_diag: Vec<f64>,
    pub d_extra: Option<DExtra>,
    pub variant: Variant,
    pub normalization: Normalization,
}

/// JSON layout of [`Theta`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThetaDoc {
    alpha: f64,
    #[serde(rename = "T")]
    big_t: usize,
    r_bar: usize,
    #[serde(rename = "F")]
    factors: Vec<Vec<f64>>,
    #[serde(rename = "Psi")]
    psi: Vec<Vec<f64>>,
    d: Vec<f64>,
    #[serde(default)]
    d_extra: Option<[f64; 3]>,
    variant: Variant,
    normalization: Normalization,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl TryFrom<ThetaDoc> for Theta {
    type Error = Error;

    fn try_from(doc: ThetaDoc) -> Result<Self> {
        let factors = from_rows(&doc.factors, doc.big_t, doc.r_bar, "F")?;
        let psi = from_rows(&doc.psi, doc.r_bar, doc.r_bar, "Psi")?;
        Ok(Theta {
            alpha: doc.alpha,
            big_t: doc.big_t,
            r_bar: doc.r_bar,
            factors,
            psi,
            d_diag: doc.d,
            d_extra: doc.d_extra.map(|[sigma2, sigma1_sq, sigma_c]| DExtra {
                sigma2,
                sigma1_sq,
                sigma_c,
            }),
            variant: doc.variant,
            normalization: doc.normalization,
        })
    }
}

impl From<Theta> for ThetaDoc {
    fn from(t: Theta) -> Self {
        ThetaDoc {
            alpha: t.alpha,
            big_t: t.big_t,
            r_bar: t.r_bar,
            factors: rows_of(&t.factors),
            psi: rows_of(&t.psi),
            d: t.d_diag,
            d_extra: t.d_extra.map(|e| [e.sigma2, e.sigma1_sq, e.sigma_c]),
            variant: t.variant,
            normalization: t.normalization,
        }
    }
}

impl Theta {
    /// Baseline point with `F = (I, F₂')'`; `f_free` is the `(T − r̄) × r̄` block.
    pub fn baseline(alpha: f64, f_free: DMatrix<f64>, psi: DMatrix<f64>, d: Vec<f64>) -> Result<Self> {
        let r_bar = f_free.ncols();
        let big_t = f_free.nrows() + r_bar;
        let factors = stack_identity(&f_free, r_bar);
        let theta = Theta {
            alpha,
            big_t,
            r_bar,
            factors,
            psi,
            d_diag: d,
            d_extra: None,
            variant: Variant::Baseline,
            normalization: Normalization::TopBlockIdentity,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// Fixed effects in levels with tail normalization:
    /// `F = [(f_γ, 1, …, 1)', (f_1, …, f_{T−2}, 0, 1)']`.
    pub fn fixed_effects_levels(
        alpha: f64,
        f_gamma: f64,
        f_free: &[f64],
        psi: DMatrix<f64>,
        d: Vec<f64>,
    ) -> Result<Self> {
        let big_t = f_free.len() + 2;
        let mut factors = DMatrix::zeros(big_t, 2);
        factors[(0, 0)] = f_gamma;
        for t in 1..big_t {
            factors[(t, 0)] = 1.0;
        }
        for (t, &f) in f_free.iter().enumerate() {
            factors[(t, 1)] = f;
        }
        factors[(big_t - 2, 1)] = 0.0;
        factors[(big_t - 1, 1)] = 1.0;
        let theta = Theta {
            alpha,
            big_t,
            r_bar: 2,
            factors,
            psi,
            d_diag: d,
            d_extra: None,
            variant: Variant::FixedEffectsLevels,
            normalization: Normalization::Tail,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// AR panel with individual effects: `F = (f_γ, 1, …, 1)'`, scalar `Ψ`.
    pub fn ar_panel(alpha: f64, f_gamma: f64, psi: f64, d: Vec<f64>) -> Result<Self> {
        let big_t = d.len();
        let factors = DMatrix::from_fn(big_t, 1, |t, _| if t == 0 { f_gamma } else { 1.0 });
        let theta = Theta {
            alpha,
            big_t,
            r_bar: 1,
            factors,
            psi: DMatrix::from_element(1, 1, psi),
            d_diag: d,
            d_extra: None,
            variant: Variant::ArPanel,
            normalization: Normalization::None,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// Differenced data of length `T = f_free.nrows() + r̄` (levels have `T + 1`).
    pub fn differenced(
        alpha: f64,
        f_free: DMatrix<f64>,
        psi: DMatrix<f64>,
        extra: DExtra,
    ) -> Result<Self> {
        let r_bar = f_free.ncols();
        let big_t = f_free.nrows() + r_bar;
        let theta = Theta {
            alpha,
            big_t,
            r_bar,
            factors: stack_identity(&f_free, r_bar),
            psi,
            d_diag: Vec::new(),
            d_extra: Some(extra),
            variant: Variant::Differenced,
            normalization: Normalization::TopBlockIdentity,
        };
        theta.validate()?;
        Ok(theta)
    }

    /// Structural invariants: shapes, Ψ symmetric PD, positive variances,
    /// the fixed entries of the variant's factor structure, and a PD error
    /// covariance. Normalization entries are checked separately by
    /// [`validate_normalization`].
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTheta(m));
        if self.big_t == 0 {
            return bad("T must be positive".into());
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        if self.factors.shape() != (self.big_t, self.r_bar) {
            return bad(format!("F must be {}x{}", self.big_t, self.r_bar));
        }
        if self.psi.shape() != (self.r_bar, self.r_bar) {
            return bad(format!("Psi must be {0}x{0}", self.r_bar));
        }
        if self.factors.iter().chain(self.psi.iter()).any(|v| !v.is_finite()) {
            return bad("F and Psi must be finite".into());
        }
        if self.r_bar > 0 {
            if !linalg::is_symmetric(&self.psi, 1e-12) {
                return bad("Psi must be symmetric".into());
            }
            let min_eig = linalg::min_eigenvalue(&self.psi);
            if !(min_eig > 0.0) {
                return bad(format!("Psi must be positive definite (smallest eigenvalue {min_eig:e})"));
            }
        }
        match self.variant {
            Variant::Differenced => {
                let Some(e) = self.d_extra else {
                    return bad("differenced variant requires d_extra".into());
                };
                if !(e.sigma2 > 0.0 && e.sigma1_sq > 0.0 && e.sigma_c.is_finite()) {
                    return bad("d_extra requires sigma2 > 0, sigma1_sq > 0".into());
                }
                if self.big_t < 2 {
                    return bad("differenced variant requires T >= 2".into());
                }
            }
            _ => {
                if self.d_diag.len() != self.big_t {
                    return bad(format!("d must have length {}", self.big_t));
                }
                if let Some(v) = self.d_diag.iter().find(|v| !(**v > 0.0)) {
                    return bad(format!("every d_t must be strictly positive (found {v})"));
                }
            }
        }
        match self.variant {
            Variant::FixedEffectsLevels => {
                if self.r_bar != 2 {
                    return bad("fixed effects in levels requires r_bar = 2".into());
                }
                if (1..self.big_t).any(|t| self.factors[(t, 0)] != 1.0) {
                    return bad("first factor column must be (f_gamma, 1, ..., 1)'".into());
                }
            }
            Variant::ArPanel => {
                if self.r_bar != 1 {
                    return bad("AR panel requires r_bar = 1".into());
                }
                if (1..self.big_t).any(|t| self.factors[(t, 0)] != 1.0) {
                    return bad("AR panel factor must be (f_gamma, 1, ..., 1)'".into());
                }
            }
            Variant::Baseline | Variant::Differenced => {}
        }
        let expected = self.variant.default_normalization();
        if self.normalization != expected {
            return bad(format!(
                "variant {:?} requires normalization {:?}",
                self.variant, expected
            ));
        }
        let d = build_error_cov(self);
        if !linalg::is_positive_definite(&d) {
            return Err(Error::NotPositiveDefinite { min_eig: linalg::min_eigenvalue(&d) });
        }
        Ok(())
    }

    /// Smallest admissible `T` for the variant. For the differenced variant
    /// this is in differenced periods (levels need one more).
    pub fn min_periods(&self) -> usize {
        match self.variant {
            Variant::Baseline => 2 * (self.r_bar + 1),
            Variant::FixedEffectsLevels => 6,
            Variant::Differenced => 2 * (self.r_bar + 1) + 2,
            Variant::ArPanel => 4,
        }
    }

    pub fn meets_dimension_bound(&self) -> bool {
        self.big_t >= self.min_periods()
    }

    /// `f_γ` for the variants that carry one.
    pub fn f_gamma(&self) -> Option<f64> {
        matches!(self.variant, Variant::FixedEffectsLevels | Variant::ArPanel)
            .then(|| self.factors[(0, 0)])
    }
}

fn stack_identity(f_free: &DMatrix<f64>, r_bar: usize) -> DMatrix<f64> {
    let big_t = f_free.nrows() + r_bar;
    DMatrix::from_fn(big_t, r_bar, |t, j| {
        if t < r_bar {
            if t == j { 1.0 } else { 0.0 }
        } else {
            f_free[(t - r_bar, j)]
        }
    })
}

/// Lag operator matrix `B`: unit diagonal, `−α` on the first subdiagonal.
pub fn build_b(alpha: f64, big_t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(big_t, big_t, |r, c| {
        if r == c {
            1.0
        } else if r == c + 1 {
            -alpha
        } else {
            0.0
        }
    })
}

/// `Γ = B⁻¹`: `Γ[r,c] = α^(r−c)` on and below the diagonal.
pub fn build_gamma(alpha: f64, big_t: usize) -> DMatrix<f64> {
    let powers = powers(alpha, big_t);
    DMatrix::from_fn(big_t, big_t, |r, c| if r >= c { powers[r - c] } else { 0.0 })
}

/// Strictly lower-triangular Toeplitz `L` with `Q(α, α̃) = I + (α − α̃) L`:
/// 1 on the first subdiagonal, `α^(r−c−1)` below it.
pub fn build_l(alpha: f64, big_t: usize) -> DMatrix<f64> {
    let powers = powers(alpha, big_t);
    DMatrix::from_fn(big_t, big_t, |r, c| if r > c { powers[r - c - 1] } else { 0.0 })
}

/// `Q(α, α̃) = Γ(α̃)⁻¹ Γ(α)`.
pub fn build_q(alpha: f64, alpha_probe: f64, big_t: usize) -> DMatrix<f64> {
    let mut q = build_l(alpha, big_t) * (alpha - alpha_probe);
    for i in 0..big_t {
        q[(i, i)] = 1.0;
    }
    q
}

fn powers(x: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut p = 1.0;
    for _ in 0..n {
        out.push(p);
        p *= x;
    }
    out
}

/// `D` (diagonal) or the tridiagonal differenced error covariance.
pub fn build_error_cov(theta: &Theta) -> DMatrix<f64> {
    let n = theta.big_t;
    match (theta.variant, theta.d_extra) {
        (Variant::Differenced, Some(e)) => {
            let mut d = DMatrix::zeros(n, n);
            for t in 0..n {
                d[(t, t)] = if t == 0 { e.sigma1_sq } else { 2.0 * e.sigma2 };
                if t + 1 < n {
                    let off = if t == 0 { e.sigma_c } else { -e.sigma2 };
                    d[(t, t + 1)] = off;
                    d[(t + 1, t)] = off;
                }
            }
            d
        }
        _ => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&theta.d_diag)),
    }
}

/// Common-component covariance `F Ψ F'` (rank `r̄`).
pub fn build_common(theta: &Theta) -> DMatrix<f64> {
    &theta.factors * &theta.psi * theta.factors.transpose()
}

/// `Ω = F Ψ F' + D`.
pub fn build_omega(theta: &Theta) -> Result<DMatrix<f64>> {
    let omega = build_common(theta) + build_error_cov(theta);
    if !linalg::is_positive_definite(&omega) {
        return Err(Error::NotPositiveDefinite { min_eig: linalg::min_eigenvalue(&omega) });
    }
    Ok(omega)
}

/// `Σ(θ) = Γ Ω Γ'`.
pub fn build_sigma(theta: &Theta) -> Result<DMatrix<f64>> {
    let omega = build_omega(theta)?;
    let gamma = build_gamma(theta.alpha, theta.big_t);
    let sigma = &gamma * omega * gamma.transpose();
    // Symmetrize away the rounding asymmetry of the triple product.
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// `Γ Ω Γ'` without the positive-definiteness check, for callers that
/// handle indefinite points themselves.
pub fn build_sigma_unchecked(theta: &Theta) -> DMatrix<f64> {
    let omega = build_common(theta) + build_error_cov(theta);
    let gamma = build_gamma(theta.alpha, theta.big_t);
    let sigma = &gamma * omega * gamma.transpose();
    (&sigma + sigma.transpose()) * 0.5
}

/// One violated normalization constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub detail: String,
}

/// Constraints of the variant's normalization that `theta` violates; empty
/// iff the normalization holds.
pub fn validate_normalization(theta: &Theta) -> Vec<Violation> {
    const TOL: f64 = 1e-12;
    let mut out = Vec::new();
    let expected = theta.variant.default_normalization();
    if theta.normalization != expected {
        out.push(Violation {
            constraint: "normalization mode".into(),
            detail: format!("{:?} requires {:?}, found {:?}", theta.variant, expected, theta.normalization),
        });
    }
    if theta.factors.shape() != (theta.big_t, theta.r_bar) || theta.big_t < theta.r_bar {
        out.push(Violation {
            constraint: "factor shape".into(),
            detail: format!("F is {:?}, expected ({}, {})", theta.factors.shape(), theta.big_t, theta.r_bar),
        });
        return out;
    }
    match theta.variant {
        Variant::Baseline | Variant::Differenced => {
            let r = theta.r_bar;
            let top = theta.factors.view((0, 0), (r, r));
            let off = (0..r)
                .flat_map(|i| (0..r).map(move |j| (i, j)))
                .filter(|&(i, j)| (top[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() > TOL)
                .collect::<Vec<_>>();
            if !off.is_empty() {
                out.push(Violation {
                    constraint: "top r_bar x r_bar block of F equals identity".into(),
                    detail: format!(
                        "block {:?} deviates at (1-based) {:?}",
                        rows_of(&top.into_owned()),
                        off.iter().map(|&(i, j)| (i + 1, j + 1)).collect::<Vec<_>>()
                    ),
                });
            }
        }
        Variant::FixedEffectsLevels => {
            let t = theta.big_t;
            if theta.r_bar != 2 || t < 2 {
                out.push(Violation {
                    constraint: "tail normalization needs r_bar = 2".into(),
                    detail: format!("r_bar = {}", theta.r_bar),
                });
                return out;
            }
            if (1..t).any(|s| theta.factors[(s, 0)] != 1.0) {
                out.push(Violation {
                    constraint: "individual-effect column is (f_gamma, 1, ..., 1)'".into(),
                    detail: "a non-initial entry differs from 1".into(),
                });
            }
            let (a, b) = (theta.factors[(t - 2, 1)], theta.factors[(t - 1, 1)]);
            if a.abs() > TOL || (b - 1.0).abs() > TOL {
                out.push(Violation {
                    constraint: "tail normalization: last two free-factor entries are (0, 1)".into(),
                    detail: format!("found ({a}, {b})"),
                });
            }
            if (a - b).abs() <= TOL {
                out.push(Violation {
                    constraint: "f_{T-1} != f_T".into(),
                    detail: format!("last two free-factor entries coincide at {a}"),
                });
            }
        }
        Variant::ArPanel => {
            if theta.r_bar != 1 || (1..theta.big_t).any(|s| theta.factors[(s, 0)] != 1.0) {
                out.push(Violation {
                    constraint: "AR panel factor is (f_gamma, 1, ..., 1)'".into(),
                    detail: "structure violated".into(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone().try_inverse().unwrap()
    }

    #[test]
    fn gamma_at_zero_is_identity() {
        assert_eq!(build_gamma(0.0, 3), DMatrix::identity(3, 3));
    }

    #[test]
    fn gamma_half() {
        let g = build_gamma(0.5, 3);
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.25, 0.5, 1.0]);
        assert_eq!(g, want);
    }

    #[test]
    fn gamma_inverts_b() {
        let g = build_gamma(0.7, 5);
        let inv = dense_inverse(&build_b(0.7, 5));
        assert_relative_eq!(g, inv, epsilon = 1e-12);
        assert_relative_eq!(build_b(0.7, 5) * g, DMatrix::identity(5, 5), epsilon = 1e-12);
    }

    #[test]
    fn l_at_zero_is_subdiagonal() {
        let l = build_l(0.0, 4);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(l[(r, c)], if r == c + 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn q_decomposition_matches_gamma_ratio() {
        let (a, ap) = (0.5, 0.2);
        let q = dense_inverse(&build_gamma(ap, 4)) * build_gamma(a, 4);
        let via_l = DMatrix::identity(4, 4) + build_l(a, 4) * (a - ap);
        assert_relative_eq!(q, via_l, epsilon = 1e-12);
        assert_relative_eq!(build_q(a, ap, 4), via_l, epsilon = 1e-15);
    }

    #[test]
    fn l_is_gamma_times_shift() {
        // With S the unit subdiagonal, B = I − αS, so Γ = I + αSΓ and L = ΓS.
        let a = 0.9;
        let g = build_gamma(a, 6);
        let l = build_l(a, 6);
        let s = DMatrix::from_fn(6, 6, |r, c| if r == c + 1 { 1.0 } else { 0.0 });
        assert_relative_eq!(l, &g * &s, epsilon = 1e-12);
        assert_relative_eq!(g.clone(), DMatrix::identity(6, 6) + (&s * &g) * a, epsilon = 1e-12);
    }

    #[test]
    fn omega_single_factor_by_hand() {
        let theta = Theta::baseline(
            0.0,
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![0.5, 0.5],
        )
        .unwrap();
        let om = build_omega(&theta).unwrap();
        assert_eq!(om, DMatrix::from_row_slice(2, 2, &[1.5, 2.0, 2.0, 4.5]));
    }

    #[test]
    fn differenced_error_cov_is_tridiagonal() {
        let theta = Theta::differenced(
            0.3,
            DMatrix::from_column_slice(3, 1, &[0.4, -1.0, 2.0]),
            DMatrix::from_element(1, 1, 1.0),
            DExtra { sigma2: 1.0, sigma1_sq: 2.0, sigma_c: -0.5 },
        )
        .unwrap();
        let d = build_error_cov(&theta);
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[2.0, -0.5, 0.0, 0.0, -0.5, 2.0, -1.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0, -1.0, 2.0],
        );
        assert_eq!(d, want);
    }

    #[test]
    fn sigma_at_zero_alpha_is_omega() {
        let theta = Theta::baseline(
            0.0,
            DMatrix::from_row_slice(2, 1, &[0.3, -1.2]),
            DMatrix::from_element(1, 1, 0.8),
            vec![1.0, 0.5, 0.7],
        )
        .unwrap();
        assert_eq!(build_sigma(&theta).unwrap(), build_omega(&theta).unwrap());
    }

    #[test]
    fn sigma_matches_naive_triple_product() {
        let theta = Theta::baseline(
            0.5,
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_element(1, 1, 1.0),
            vec![1.0; 3],
        )
        .unwrap();
        // Naive loops, independent of nalgebra products.
        let t = 3;
        let g = |r: usize, c: usize| if r >= c { 0.5f64.powi((r - c) as i32) } else { 0.0 };
        let om = |r: usize, c: usize| 1.0 + if r == c { 1.0 } else { 0.0 };
        let sigma = build_sigma(&theta).unwrap();
        for r in 0..t {
            for c in 0..t {
                let mut s = 0.0;
                for i in 0..t {
                    for j in 0..t {
                        s += g(r, i) * om(i, j) * g(c, j);
                    }
                }
                assert_relative_eq!(sigma[(r, c)], s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normalization_reports() {
        let good = Theta::baseline(
            0.2,
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.4, 1.1]),
            DMatrix::identity(2, 2),
            vec![1.0; 4],
        )
        .unwrap();
        assert!(validate_normalization(&good).is_empty());

        let mut bad = good.clone();
        bad.factors[(1, 0)] = 0.5;
        let report = validate_normalization(&bad);
        assert_eq!(report.len(), 1);
        assert!(report[0].constraint.contains("top r_bar"));
        assert!(report[0].detail.contains("(2, 1)"));
        // Idempotent and side-effect free.
        assert_eq!(validate_normalization(&bad), report);
        assert_eq!(bad.factors[(1, 0)], 0.5);
    }

    #[test]
    fn tail_normalization_accepts_zero_one() {
        let theta = Theta::fixed_effects_levels(
            0.4,
            0.7,
            &[0.2, -0.3, 1.4, 0.9],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]),
            vec![1.0; 6],
        )
        .unwrap();
        assert!(validate_normalization(&theta).is_empty());
        assert_eq!(theta.factors[(4, 1)], 0.0);
        assert_eq!(theta.factors[(5, 1)], 1.0);
        assert_eq!(theta.f_gamma(), Some(0.7));
    }

    #[test]
    fn rejects_non_pd_psi_and_bad_d() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(Theta::baseline(0.1, f.clone(), DMatrix::from_element(1, 1, -1.0), vec![1.0; 3]).is_err());
        assert!(Theta::baseline(0.1, f, DMatrix::from_element(1, 1, 1.0), vec![1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn json_round_trip_uses_fixed_keys() {
        let theta = Theta::ar_panel(1.0, 0.3, 0.9, vec![1.0, 1.2, 0.8, 1.1]).unwrap();
        let s = serde_json::to_string(&theta).unwrap();
        for key in ["\"alpha\"", "\"T\"", "\"r_bar\"", "\"F\"", "\"Psi\"", "\"d\"", "\"d_extra\"", "\"variant\"", "\"normalization\""] {
            assert!(s.contains(key), "missing {key} in {s}");
        }
        let back: Theta = serde_json::from_str(&s).unwrap();
        assert_eq!(back, theta);
    }

    #[test]
    fn dimension_bounds() {
        let t = Theta::ar_panel(0.5, 0.3, 0.9, vec![1.0; 3]).unwrap();
        assert!(!t.meets_dimension_bound());
        let t = Theta::ar_panel(0.5, 0.3, 0.9, vec![1.0; 4]).unwrap();
        assert!(t.meets_dimension_bound());
    }
}
