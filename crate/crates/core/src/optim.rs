//! Small unconstrained minimizers: BFGS with Armijo backtracking and a
//! Nelder–Mead simplex, plus a central-difference gradient.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖Δx‖ ≤ step_tol·(1 + ‖x‖)`.
    pub step_tol: f64,
    /// Stop when `‖g‖ ≤ grad_tol·(1 + |f|)`.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 2000, step_tol: 1e-10, grad_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// BFGS on the inverse Hessian. `inv_hessian(x)` supplies the starting
/// metric and is consulted again whenever the line search fails along the
/// current direction; `None` falls back to the identity.
pub fn bfgs<F, G, H>(f: F, grad: G, inv_hessian: H, x0: &[f64], opts: BfgsOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    H: Fn(&[f64]) -> Option<DMatrix<f64>>,
{
    let n = x0.len();
    let metric = |x: &DVector<f64>| inv_hessian(x.as_slice()).unwrap_or_else(|| DMatrix::identity(n, n));
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut g = DVector::from_vec(grad(x.as_slice()));
    let mut h = metric(&x);
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if g.norm() <= opts.grad_tol * (1.0 + fx.abs()) {
            break;
        }
        iterations += 1;
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * t;
            let fn_ = f(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            if fresh {
                break;
            }
            h = metric(&x);
            fresh = true;
            continue;
        };
        let s = &xn - &x;
        let gn = DVector::from_vec(grad(xn.as_slice()));
        let yv = &gn - &g;
        let step_small = s.norm() <= opts.step_tol * (1.0 + x.norm());
        x = xn;
        fx = fn_;
        g = gn;
        fresh = false;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        if step_small {
            break;
        }
    }
    Minimum { x: x.as_slice().to_vec(), f: fx, iterations }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of simplex values is below `f_tol·(1 + |f_best|)`.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iter: 2000, f_tol: 1e-14 }
    }
}

/// Nelder–Mead with standard coefficients; initial simplex offsets
/// `scale·(1 + |x_j|)` along each axis.
pub fn nelder_mead<F>(f: F, x0: &[f64], scale: f64, opts: NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &DVector<f64>| {
        let v = f(x.as_slice());
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let base = DVector::from_column_slice(x0);
    let mut pts: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    pts.push((base.clone(), eval(&base)));
    for j in 0..n {
        let mut p = base.clone();
        p[j] += scale * (1.0 + base[j].abs());
        let v = eval(&p);
        pts.push((p, v));
    }
    let mut iterations = 0;
    while iterations < opts.max_iter {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (pts[0].1, pts[n].1);
        if (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) {
            break;
        }
        iterations += 1;
        let centroid = pts[..n].iter().fold(DVector::zeros(n), |acc, p| acc + &p.0) / n as f64;
        let toward = |t: f64| &centroid + (&pts[n].0 - &centroid) * t;
        let xr = toward(-1.0);
        let fr = eval(&xr);
        if fr < pts[0].1 {
            let xe = toward(-2.0);
            let fe = eval(&xe);
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
        } else {
            let xc = if fr < pts[n].1 { toward(-0.5) } else { toward(0.5) };
            let fc = eval(&xc);
            if fc < pts[n].1.min(fr) {
                pts[n] = (xc, fc);
            } else {
                let x_best = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    p.0 = &x_best + (&p.0 - &x_best) * 0.5;
                    p.1 = eval(&p.0);
                }
            }
        }
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    Minimum { x: pts[0].0.as_slice().to_vec(), f: pts[0].1, iterations }
}

/// Central differences with step `rel_step·(1 + |x_j|)`.
pub fn central_gradient<F>(f: F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = rel_step * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let fp = f(&xp);
            xp[j] = x[j] - h;
            let fm = f(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
