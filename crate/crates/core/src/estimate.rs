//! Concentrated Gaussian quasi-ML: the objective, its population limit, the
//! unconstrained parameterization, and a multi-start fit.
//!
//! With `δ` concentrated out by the cross-sectional mean, the per-unit
//! negative quasi log-likelihood is `½ ln|Σ(θ)| + ½ tr(Σ(θ)⁻¹ S)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::draw::stream_rng;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, DExtra, Theta, Variant};
use crate::optim::{self, BfgsOptions, NelderMeadOptions};
use crate::par;
use crate::simulate::{self, Divisor, PanelSample};

/// Objective value returned at points where `Σ(θ)` is not positive definite,
/// scaled by `1 + |λ_min|`.
pub const BARRIER: f64 = 1e10;

/// Objective value and whether the barrier replaced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub barrier: bool,
}

fn nll_from_sigma(sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<f64> {
    if sigma.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = sigma.clone().cholesky()?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol.solve(s).trace();
    let v = 0.5 * logdet + 0.5 * trace;
    v.is_finite().then_some(v)
}

fn barrier_value(sigma: &DMatrix<f64>) -> f64 {
    let lam = if sigma.iter().all(|v| v.is_finite()) { linalg::min_eigenvalue(sigma) } else { f64::NAN };
    if lam.is_finite() { BARRIER * (1.0 + lam.abs()) } else { BARRIER * 1e3 }
}

/// Barrier-protected objective for optimizers.
pub fn neg_quasi_loglik_penalized(theta: &Theta, s: &DMatrix<f64>) -> Objective {
    let sigma = model::build_sigma_unchecked(theta);
    match nll_from_sigma(&sigma, s) {
        Some(value) => Objective { value, barrier: false },
        None => Objective { value: barrier_value(&sigma), barrier: true },
    }
}

/// `½ ln|Σ(θ)| + ½ tr(Σ(θ)⁻¹ S)`; errors when `Σ(θ)` is not PD.
pub fn neg_quasi_loglik(theta: &Theta, s: &DMatrix<f64>) -> Result<f64> {
    if s.shape() != (theta.big_t, theta.big_t) {
        return Err(Error::Dimension(format!("S is {:?}, expected T = {}", s.shape(), theta.big_t)));
    }
    let sigma = model::build_sigma_unchecked(theta);
    nll_from_sigma(&sigma, s).ok_or(Error::NotPositiveDefinite { min_eig: linalg::min_eigenvalue(&sigma) })
}

/// Population objective `−ln|Σ(θ)| − tr(Σ(θ⁰) Σ(θ)⁻¹)`, maximized uniquely
/// where `Σ(θ) = Σ(θ⁰)`.
pub fn limit_objective(theta: &Theta, theta0: &Theta) -> Result<f64> {
    let sigma0 = model::build_sigma(theta0)?;
    Ok(-2.0 * neg_quasi_loglik(theta, &sigma0)?)
}

/// Shape of the unconstrained parameter vector for one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub variant: Variant,
    pub r_bar: usize,
    pub big_t: usize,
}

impl Layout {
    pub fn of(theta: &Theta) -> Self {
        Layout { variant: theta.variant, r_bar: theta.r_bar, big_t: theta.big_t }
    }

    pub fn new(variant: Variant, r_bar: usize, big_t: usize) -> Result<Self> {
        let r_bar = match variant {
            Variant::FixedEffectsLevels if r_bar != 2 => {
                return Err(Error::InvalidTheta("fixed effects in levels requires r_bar = 2".into()))
            }
            Variant::ArPanel if r_bar != 1 => return Err(Error::InvalidTheta("AR panel requires r_bar = 1".into())),
            _ => r_bar,
        };
        if big_t <= r_bar || (variant == Variant::FixedEffectsLevels && big_t < 3) {
            return Err(Error::Dimension(format!("T = {big_t} too small for r_bar = {r_bar}")));
        }
        Ok(Layout { variant, r_bar, big_t })
    }

    fn n_free_factors(&self) -> usize {
        match self.variant {
            Variant::Baseline | Variant::Differenced => (self.big_t - self.r_bar) * self.r_bar,
            Variant::FixedEffectsLevels => 1 + (self.big_t - 2),
            Variant::ArPanel => 1,
        }
    }

    fn n_psi(&self) -> usize {
        self.r_bar * (self.r_bar + 1) / 2
    }

    fn n_error(&self) -> usize {
        match self.variant {
            Variant::Differenced => 3,
            _ => self.big_t,
        }
    }

    pub fn len(&self) -> usize {
        1 + self.n_free_factors() + self.n_psi() + self.n_error()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `θ` as an unconstrained vector: `α`; free factor entries; `Ψ` by
/// log-Cholesky (row-wise lower triangle, log on the diagonal); `ln d_t`, or
/// `(ln σ², ln σ₁², σ_c)` for differenced data.
pub fn pack(theta: &Theta) -> Result<Vec<f64>> {
    let layout = Layout::of(theta);
    Layout::new(layout.variant, layout.r_bar, layout.big_t)?;
    let mut v = Vec::with_capacity(layout.len());
    v.push(theta.alpha);
    let (t, r) = (theta.big_t, theta.r_bar);
    match theta.variant {
        Variant::Baseline | Variant::Differenced => {
            for i in r..t {
                for j in 0..r {
                    v.push(theta.factors[(i, j)]);
                }
            }
        }
        Variant::FixedEffectsLevels => {
            v.push(theta.factors[(0, 0)]);
            v.extend((0..t - 2).map(|i| theta.factors[(i, 1)]));
        }
        Variant::ArPanel => v.push(theta.factors[(0, 0)]),
    }
    let chol = theta
        .psi
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { min_eig: linalg::min_eigenvalue(&theta.psi) })?
        .l();
    for i in 0..r {
        for j in 0..=i {
            v.push(if i == j { chol[(i, i)].ln() } else { chol[(i, j)] });
        }
    }
    match (theta.variant, theta.d_extra) {
        (Variant::Differenced, Some(e)) => {
            if !(e.sigma2 > 0.0 && e.sigma1_sq > 0.0) {
                return Err(Error::InvalidTheta("sigma2 and sigma1_sq must be positive".into()));
            }
            v.extend([e.sigma2.ln(), e.sigma1_sq.ln(), e.sigma_c]);
        }
        (Variant::Differenced, None) => return Err(Error::InvalidTheta("differenced variant requires d_extra".into())),
        _ => {
            if theta.d_diag.len() != t || theta.d_diag.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::InvalidTheta("d must have T positive entries".into()));
            }
            v.extend(theta.d_diag.iter().map(|d| d.ln()));
        }
    }
    Ok(v)
}

/// Inverse of [`pack`] for the model shape of `template`.
pub fn unpack(v: &[f64], template: &Theta) -> Result<Theta> {
    unpack_layout(v, Layout::of(template))
}

pub fn unpack_layout(v: &[f64], layout: Layout) -> Result<Theta> {
    if v.len() != layout.len() {
        return Err(Error::Dimension(format!("vector length {} does not match layout length {}", v.len(), layout.len())));
    }
    let (t, r) = (layout.big_t, layout.r_bar);
    let mut it = v.iter().copied();
    let mut next = || it.next().expect("length checked");
    let alpha = next();
    let mut factors = DMatrix::zeros(t, r);
    match layout.variant {
        Variant::Baseline | Variant::Differenced => {
            for i in 0..r {
                factors[(i, i)] = 1.0;
            }
            for i in r..t {
                for j in 0..r {
                    factors[(i, j)] = next();
                }
            }
        }
        Variant::FixedEffectsLevels => {
            factors[(0, 0)] = next();
            for i in 1..t {
                factors[(i, 0)] = 1.0;
            }
            for i in 0..t - 2 {
                factors[(i, 1)] = next();
            }
            factors[(t - 1, 1)] = 1.0;
        }
        Variant::ArPanel => {
            factors[(0, 0)] = next();
            for i in 1..t {
                factors[(i, 0)] = 1.0;
            }
        }
    }
    let mut chol = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let x = next();
            chol[(i, j)] = if i == j { x.exp() } else { x };
        }
    }
    let psi = &chol * chol.transpose();
    let (d_diag, d_extra) = match layout.variant {
        Variant::Differenced => {
            let (a, b, c) = (next(), next(), next());
            (Vec::new(), Some(DExtra { sigma2: a.exp(), sigma1_sq: b.exp(), sigma_c: c }))
        }
        _ => ((0..t).map(|_| next().exp()).collect(), None),
    };
    Ok(Theta {
        alpha,
        big_t: t,
        r_bar: r,
        factors,
        psi,
        d_diag,
        d_extra,
        variant: layout.variant,
        normalization: layout.variant.default_normalization(),
    })
}

/// Natural parameters in a fixed order: `α`, every entry of `F`, every
/// entry of `Ψ`, then `d` or `(σ², σ₁², σ_c)`.
pub fn natural_parameters(theta: &Theta) -> Vec<f64> {
    let mut v = vec![theta.alpha];
    v.extend(theta.factors.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    v.extend(theta.psi.iter().copied());
    match theta.d_extra {
        Some(e) if theta.variant == Variant::Differenced => v.extend([e.sigma2, e.sigma1_sq, e.sigma_c]),
        _ => v.extend(theta.d_diag.iter().copied()),
    }
    v
}

/// Largest absolute difference between the natural parameters of two points
/// of the same shape.
pub fn parameter_gap(a: &Theta, b: &Theta) -> Result<f64> {
    let (va, vb) = (natural_parameters(a), natural_parameters(b));
    if va.len() != vb.len() || a.variant != b.variant {
        return Err(Error::Dimension("parameter points have different shapes".into()));
    }
    Ok(va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Input to [`fit`].
#[derive(Debug, Clone, Copy)]
pub enum FitInput<'a> {
    /// Sample covariance is formed with divisor `N`.
    Panel(&'a PanelSample),
    /// A `T × T` covariance matrix and the number of units behind it.
    Covariance { s: &'a DMatrix<f64>, n_units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence requires `‖∇f‖ ≤ grad_tol·(1 + |f|)` by central differences.
    pub grad_tol: f64,
    /// Nelder–Mead polish for starts that BFGS leaves unconverged.
    pub polish: bool,
    /// Spread start `α` over a grid on `[−0.8, 1.2]`; otherwise every start
    /// perturbs the spectral start at the lag-one `α`.
    pub alpha_grid: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { n_starts: 8, seed: 0, max_iter: 2000, grad_tol: 1e-6, polish: true, alpha_grid: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    /// Per-unit concentrated log-likelihood, `−½ ln|Σ| − ½ tr(Σ⁻¹S)`.
    pub loglik: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub start_points_tried: usize,
    /// Final objective of every start, in start order.
    pub start_objectives: Vec<f64>,
    /// Whether the best point sits on the non-PD barrier.
    pub barrier: bool,
    /// Start objectives spread by more than [`MULTIMODAL_TOL`].
    pub multimodal: bool,
}

/// Start objectives further apart than this mark a fit as multimodal.
pub const MULTIMODAL_TOL: f64 = 1e-7;

impl FitResult {
    fn with_multimodal_flag(mut self) -> Self {
        self.multimodal = self.objective_spread() > MULTIMODAL_TOL;
        self
    }

    /// Spread of the final finite objectives across starts.
    pub fn objective_spread(&self) -> f64 {
        let finite: Vec<f64> = self.start_objectives.iter().copied().filter(|v| v.is_finite()).collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Central-difference Jacobian of `Σ` with respect to the packed vector.
fn sigma_jacobian(v: &[f64], layout: Layout) -> Vec<DMatrix<f64>> {
    let mut x = v.to_vec();
    (0..v.len())
        .map(|j| {
            let h = 1e-5 * (1.0 + v[j].abs());
            x[j] = v[j] + h;
            let sp = unpack_layout(&x, layout).map(|t| model::build_sigma_unchecked(&t));
            x[j] = v[j] - h;
            let sm = unpack_layout(&x, layout).map(|t| model::build_sigma_unchecked(&t));
            x[j] = v[j];
            match (sp, sm) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                _ => DMatrix::zeros(layout.big_t, layout.big_t),
            }
        })
        .collect()
}

struct Problem<'a> {
    s: &'a DMatrix<f64>,
    layout: Layout,
}

impl Problem<'_> {
    fn objective(&self, v: &[f64]) -> f64 {
        match unpack_layout(v, self.layout) {
            Ok(theta) => neg_quasi_loglik_penalized(&theta, self.s).value,
            Err(_) => f64::INFINITY,
        }
    }

    fn sigma_inv(&self, v: &[f64]) -> Option<DMatrix<f64>> {
        let theta = unpack_layout(v, self.layout).ok()?;
        model::build_sigma_unchecked(&theta).cholesky().map(|c| c.inverse())
    }

    /// `g_j = ½ tr(W ∂Σ/∂v_j)` with `W = Σ⁻¹ − Σ⁻¹ S Σ⁻¹`.
    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let Some(si) = self.sigma_inv(v) else {
            return optim::central_gradient(|x| self.objective(x), v, 1e-6);
        };
        let w = &si - &si * self.s * &si;
        sigma_jacobian(v, self.layout).iter().map(|d| 0.5 * w.component_mul(d).sum()).collect()
    }

    /// Inverse Fisher information `(½ tr(Σ⁻¹ ∂_jΣ Σ⁻¹ ∂_kΣ))⁻¹`, lightly
    /// regularized.
    fn inverse_fisher(&self, v: &[f64]) -> Option<DMatrix<f64>> {
        let si = self.sigma_inv(v)?;
        let jac = sigma_jacobian(v, self.layout);
        let a: Vec<DMatrix<f64>> = jac.iter().map(|d| &si * d).collect();
        let p = v.len();
        let mut info = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..=j {
                let val = 0.5 * a[j].component_mul(&a[k].transpose()).sum();
                info[(j, k)] = val;
                info[(k, j)] = val;
            }
        }
        let ridge = 1e-8 * (1.0 + info.diagonal().amax());
        for j in 0..p {
            info[(j, j)] += ridge;
        }
        info.cholesky().map(|c| c.inverse())
    }
}

/// Pooled lag-one regression slope `Σ_t S[t,t−1] / Σ_t S[t−1,t−1]`.
pub fn lag_one_alpha(s: &DMatrix<f64>) -> f64 {
    let t = s.nrows();
    let num: f64 = (1..t).map(|i| s[(i, i - 1)]).sum();
    let den: f64 = (1..t).map(|i| s[(i - 1, i - 1)]).sum();
    if den > 0.0 { (num / den).clamp(-1.5, 1.5) } else { 0.0 }
}

/// Start at a given `α`: principal components of `Ω̂ = B(α) S B(α)'` supply
/// `FΨF'`, rotated into the variant's normalization; the residual diagonal
/// supplies the error variances.
pub fn spectral_start(s: &DMatrix<f64>, alpha: f64, layout: Layout) -> Theta {
    let (t, r) = (layout.big_t, layout.r_bar);
    let b = model::build_b(alpha, t);
    let omega = &b * s * b.transpose();
    let omega = (&omega + omega.transpose()) * 0.5;
    let eig = omega.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let noise = if t > r { order[r..].iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / (t - r) as f64 } else { 0.0 };
    let a = DMatrix::from_fn(t, r, |i, j| {
        let lam = eig.eigenvalues[order[j]];
        eig.eigenvectors[(i, order[j])] * (lam - noise).max(1e-3 * lam.abs().max(1e-8)).sqrt()
    });
    // Rotation G with F = A G; then Ψ = G⁻¹ G⁻ᵀ keeps F Ψ F' = A A'.
    let g = match layout.variant {
        Variant::Baseline | Variant::Differenced => {
            let top = a.rows(0, r).into_owned();
            let reg = if linalg::det(&top).abs() < 1e-8 { &top + DMatrix::identity(r, r) * 1e-3 } else { top };
            reg.try_inverse().unwrap_or_else(|| DMatrix::identity(r, r))
        }
        Variant::FixedEffectsLevels => {
            // Column 1: least squares for A[t,:]·g₁ = 1 over t ≥ 1.
            let a_tail = a.rows(1, t - 1).into_owned();
            let ones = DVector::from_element(t - 1, 1.0);
            let g1 = a_tail.clone().svd(true, true).solve(&ones, 1e-12).unwrap_or_else(|_| DVector::from_element(2, 0.0));
            // Column 2: A[T−2,:]·g₂ = 0 and A[T−1,:]·g₂ = 1.
            let last = a.rows(t - 2, 2).into_owned();
            let g2 = last.try_inverse().map(|m| m * DVector::from_column_slice(&[0.0, 1.0])).unwrap_or_else(|| DVector::from_column_slice(&[0.0, 1.0]));
            let mut g = DMatrix::zeros(2, 2);
            g.set_column(0, &g1);
            g.set_column(1, &g2);
            if linalg::det(&g).abs() < 1e-10 {
                g += DMatrix::identity(2, 2) * 1e-3;
            }
            g
        }
        Variant::ArPanel => {
            let tail = a.rows(1, t - 1);
            let denom: f64 = tail.iter().map(|x| x * x).sum();
            let g = if denom > 0.0 { tail.sum() / denom } else { 1.0 };
            DMatrix::from_element(1, 1, if g.abs() < 1e-6 { 1.0 } else { g })
        }
    };
    let f_raw = &a * &g;
    let g_inv = g.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(r, r));
    let mut psi = &g_inv * g_inv.transpose();
    psi = (&psi + psi.transpose()) * 0.5;
    if !linalg::is_positive_definite(&psi) {
        psi = DMatrix::identity(r, r);
    }
    let mut template = unpack_layout(&vec![0.0; layout.len()], layout).expect("zero vector fits layout");
    template.alpha = alpha;
    // Copy free factor entries; structural ones stay as unpack set them.
    match layout.variant {
        Variant::Baseline | Variant::Differenced => {
            for i in r..t {
                for j in 0..r {
                    template.factors[(i, j)] = f_raw[(i, j)];
                }
            }
        }
        Variant::FixedEffectsLevels => {
            template.factors[(0, 0)] = f_raw[(0, 0)];
            for i in 0..t - 2 {
                template.factors[(i, 1)] = f_raw[(i, 1)];
            }
        }
        Variant::ArPanel => template.factors[(0, 0)] = f_raw[(0, 0)],
    }
    template.psi = psi;
    let common = model::build_common(&template);
    let resid: Vec<f64> = (0..t).map(|i| (omega[(i, i)] - common[(i, i)]).max(0.05 * omega[(i, i)].abs().max(1e-6))).collect();
    match layout.variant {
        Variant::Differenced => {
            let sigma2 = if t > 1 { resid[1..].iter().sum::<f64>() / (2.0 * (t - 1) as f64) } else { resid[0] };
            template.d_extra = Some(DExtra { sigma2: sigma2.max(1e-6), sigma1_sq: resid[0], sigma_c: 0.0 });
        }
        _ => template.d_diag = resid,
    }
    template
}

fn start_vectors(s: &DMatrix<f64>, layout: Layout, opts: &FitOptions) -> Vec<Vec<f64>> {
    let n = opts.n_starts.max(1);
    let alpha0 = lag_one_alpha(s);
    (0..n)
        .map(|k| {
            let alpha = if k == 0 || !opts.alpha_grid {
                alpha0
            } else if n == 2 {
                0.5
            } else {
                -0.8 + 2.0 * (k - 1) as f64 / (n - 2) as f64
            };
            let theta = spectral_start(s, alpha, layout);
            let mut v = pack(&theta).unwrap_or_else(|_| vec![0.0; layout.len()]);
            if k > 0 {
                let mut rng = stream_rng(opts.seed, k as u64);
                for x in v.iter_mut().skip(1) {
                    *x += 0.1 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            v
        })
        .collect()
}

struct StartOutcome {
    v: Vec<f64>,
    f: f64,
    iterations: usize,
}

fn run_start(problem: &Problem, v0: &[f64], opts: &FitOptions) -> StartOutcome {
    let bopts = BfgsOptions { max_iter: opts.max_iter, ..Default::default() };
    let f = |x: &[f64]| problem.objective(x);
    let g = |x: &[f64]| problem.gradient(x);
    let h = |x: &[f64]| problem.inverse_fisher(x);
    let mut m = optim::bfgs(f, g, h, v0, bopts);
    let mut iterations = m.iterations;
    if opts.polish && !gradient_ok(problem, &m.x, m.f, opts.grad_tol) {
        let nm = optim::nelder_mead(f, &m.x, 1e-3, NelderMeadOptions { max_iter: 4000, ..Default::default() });
        iterations += nm.iterations;
        if nm.f < m.f {
            let again = optim::bfgs(f, g, h, &nm.x, bopts);
            iterations += again.iterations;
            m = if again.f <= nm.f { again } else { nm };
        }
    }
    StartOutcome { v: m.x, f: m.f, iterations }
}

fn gradient_norm(problem: &Problem, v: &[f64]) -> f64 {
    optim::central_gradient(|x| problem.objective(x), v, 1e-6).iter().map(|g| g * g).sum::<f64>().sqrt()
}

fn gradient_ok(problem: &Problem, v: &[f64], f: f64, tol: f64) -> bool {
    gradient_norm(problem, v) <= tol * (1.0 + f.abs())
}

/// Minimizes the negative quasi log-likelihood over the packed parameters of
/// the given model shape from `opts.n_starts` starts, keeping the best.
pub fn fit(input: FitInput, r_bar: usize, variant: Variant, opts: &FitOptions) -> Result<FitResult> {
    let owned;
    let s = match input {
        FitInput::Panel(p) => {
            owned = simulate::sample_cov(p, Divisor::N)?;
            &owned
        }
        FitInput::Covariance { s, n_units } => {
            if n_units < 1 {
                return Err(Error::Dimension("n_units must be positive".into()));
            }
            s
        }
    };
    if s.nrows() != s.ncols() || !linalg::is_symmetric(s, 1e-10) {
        return Err(Error::Dimension("S must be a symmetric square matrix".into()));
    }
    let layout = Layout::new(variant, r_bar, s.nrows())?;
    let problem = Problem { s, layout };
    let starts = start_vectors(s, layout, opts);
    let outcomes = par::map_indexed(starts.len(), |k| run_start(&problem, &starts[k], opts));
    let start_objectives: Vec<f64> = outcomes.iter().map(|o| o.f).collect();
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.f.total_cmp(&b.f).then(i.cmp(j)))
        .map(|(_, o)| o)
        .ok_or_else(|| Error::Estimation("no start points".into()))?;
    let theta_hat = unpack_layout(&best.v, layout)?;
    let obj = neg_quasi_loglik_penalized(&theta_hat, s);
    let gnorm = gradient_norm(&problem, &best.v);
    let converged = !obj.barrier && gnorm <= opts.grad_tol * (1.0 + obj.value.abs());
    Ok(FitResult {
        theta_hat,
        loglik: -obj.value,
        n_iterations: best.iterations,
        converged,
        gradient_norm: gnorm,
        start_points_tried: starts.len(),
        start_objectives,
        barrier: obj.barrier,
        multimodal: false,
    }
    .with_multimodal_flag())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_theta;

    #[test]
    fn objective_at_truth() {
        let theta = random_theta(Variant::Baseline, 1, 4, 1);
        let sigma = model::build_sigma(&theta).unwrap();
        let want = 0.5 * linalg::det(&sigma).ln() + 2.0;
        assert!((neg_quasi_loglik(&theta, &sigma).unwrap() - want).abs() < 1e-12);
        let lim = limit_objective(&theta, &theta).unwrap();
        assert!((lim - (-linalg::det(&sigma).ln() - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn scalar_objective_minimized_at_sample_variance() {
        let f = |sig2: f64, s: f64| 0.5 * sig2.ln() + s / (2.0 * sig2);
        let s = 2.5;
        assert!(f(s, s) < f(s * 1.01, s) && f(s, s) < f(s * 0.99, s));
        let one = DMatrix::from_element(1, 1, s);
        let sigma = DMatrix::from_element(1, 1, s);
        assert!((nll_from_sigma(&sigma, &one).unwrap() - f(s, s)).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_oracle() {
        let theta = random_theta(Variant::Baseline, 2, 6, 3);
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1 + if i == j { 1.0 } else { 0.0 });
        let s = &a * a.transpose();
        let sigma = model::build_sigma(&theta).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let want = 0.5 * sigma.clone().lu().determinant().ln() + 0.5 * (inv * &s).trace();
        assert!((neg_quasi_loglik(&theta, &s).unwrap() - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn barrier_and_strict_modes() {
        let mut theta = random_theta(Variant::Differenced, 1, 6, 2);
        theta.d_extra = Some(DExtra { sigma2: 1.0, sigma1_sq: 0.01, sigma_c: 5.0 });
        let s = DMatrix::identity(6, 6);
        assert!(neg_quasi_loglik(&theta, &s).is_err());
        let p = neg_quasi_loglik_penalized(&theta, &s);
        assert!(p.barrier && p.value >= BARRIER);
    }

    #[test]
    fn pack_lengths_and_round_trip() {
        let b = random_theta(Variant::Baseline, 1, 4, 0);
        assert_eq!(pack(&b).unwrap().len(), 9);
        let fe = random_theta(Variant::FixedEffectsLevels, 2, 6, 0);
        assert_eq!(pack(&fe).unwrap().len(), 15);
        for variant in Variant::ALL {
            let theta = random_theta(variant, 2, 7, 5);
            let back = unpack(&pack(&theta).unwrap(), &theta).unwrap();
            assert!(parameter_gap(&theta, &back).unwrap() <= 1e-14 * 10.0, "{variant:?}");
            assert_eq!(back.variant, theta.variant);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let theta = random_theta(Variant::Baseline, 1, 5, 7);
        let s = model::build_sigma(&random_theta(Variant::Baseline, 1, 5, 8)).unwrap();
        let layout = Layout::of(&theta);
        let problem = Problem { s: &s, layout };
        let v = pack(&theta).unwrap();
        let g = problem.gradient(&v);
        let fd = optim::central_gradient(|x| problem.objective(x), &v, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn noiseless_recovery_baseline() {
        let theta = random_theta(Variant::Baseline, 1, 6, 12);
        let s = model::build_sigma(&theta).unwrap();
        let res = fit(FitInput::Covariance { s: &s, n_units: 1000 }, 1, Variant::Baseline, &FitOptions::default()).unwrap();
        assert!(res.converged, "{res:?}");
        assert!(parameter_gap(&theta, &res.theta_hat).unwrap() < 1e-4, "{:?}\n{:?}", theta, res.theta_hat);
    }

    #[test]
    fn noiseless_recovery_ar_unit_root() {
        let theta = Theta::ar_panel(1.0, 0.4, 0.8, vec![1.0, 1.3, 0.7, 1.1]).unwrap();
        let s = model::build_sigma(&theta).unwrap();
        let res = fit(FitInput::Covariance { s: &s, n_units: 1000 }, 1, Variant::ArPanel, &FitOptions::default()).unwrap();
        assert!((res.theta_hat.alpha - 1.0).abs() < 1e-5, "{res:?}");
    }
}
