//! Dense univariate polynomials in the probe parameter `α̃` and their real roots.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance under which trailing coefficients are treated as zero.
pub const TRIM_TOL: f64 = 1e-11;

/// Two roots are the same root if `|x − y| ≤ ROOT_MATCH_TOL·(1 + |x|)`.
pub const ROOT_MATCH_TOL: f64 = 1e-7;

/// Polynomial `Σ coeffs[i]·α̃^i`, constant term first.
///
/// Trailing coefficients below `TRIM_TOL·(1 + max|c|)` are dropped on
/// construction, so the zero polynomial has no coefficients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaPoly {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for AlphaPoly {
    fn from(coeffs: Vec<f64>) -> Self {
        AlphaPoly::new(coeffs)
    }
}

impl From<AlphaPoly> for Vec<f64> {
    fn from(p: AlphaPoly) -> Self {
        p.coeffs
    }
}

impl AlphaPoly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        let scale = 1.0 + coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        while coeffs.last().is_some_and(|c| c.abs() <= TRIM_TOL * scale) {
            coeffs.pop();
        }
        AlphaPoly { coeffs }
    }

    pub fn zero() -> Self {
        AlphaPoly { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        AlphaPoly::new(vec![c])
    }

    /// `a + b·α̃`.
    pub fn linear(a: f64, b: f64) -> Self {
        AlphaPoly::new(vec![a, b])
    }

    /// `α − α̃`.
    pub fn alpha_minus_probe(alpha: f64) -> Self {
        AlphaPoly::linear(alpha, -1.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `α̃^i`, zero beyond the degree.
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    /// Degree, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// `Σ |c_i|·|x|^i`, the natural magnitude against which `eval(x)` rounds.
    pub fn eval_scale(&self, x: f64) -> f64 {
        let ax = x.abs();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * ax + c.abs())
    }

    pub fn scale(&self, s: f64) -> Self {
        AlphaPoly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn derivative(&self) -> Self {
        AlphaPoly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect(),
        )
    }

    /// Coefficients up to and including index `len − 1`, zero padded.
    pub fn padded(&self, len: usize) -> Vec<f64> {
        (0..len).map(|i| self.coeff(i)).collect()
    }
}

impl Add for &AlphaPoly {
    type Output = AlphaPoly;
    fn add(self, rhs: &AlphaPoly) -> AlphaPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        AlphaPoly::new((0..n).map(|i| self.coeff(i) + rhs.coeff(i)).collect())
    }
}

impl Sub for &AlphaPoly {
    type Output = AlphaPoly;
    fn sub(self, rhs: &AlphaPoly) -> AlphaPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        AlphaPoly::new((0..n).map(|i| self.coeff(i) - rhs.coeff(i)).collect())
    }
}

impl Mul for &AlphaPoly {
    type Output = AlphaPoly;
    fn mul(self, rhs: &AlphaPoly) -> AlphaPoly {
        if self.is_zero() || rhs.is_zero() {
            return AlphaPoly::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        AlphaPoly::new(out)
    }
}

impl Neg for &AlphaPoly {
    type Output = AlphaPoly;
    fn neg(self) -> AlphaPoly {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for AlphaPoly {
            type Output = AlphaPoly;
            fn $m(self, rhs: AlphaPoly) -> AlphaPoly {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl fmt::Display for AlphaPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            first = false;
            let a = c.abs();
            match i {
                0 => write!(f, "{a}")?,
                1 => write!(f, "{a}·x")?,
                _ => write!(f, "{a}·x^{i}")?,
            }
        }
        Ok(())
    }
}

/// All real roots of `p`, sorted ascending, each repeated root reported once.
///
/// Roots come from the eigenvalues of the companion matrix. Eigenvalues
/// that agree to within a loose cluster radius are treated as one root of
/// multiplicity `m`, located at their centroid and polished by Newton steps
/// on the `(m − 1)`-th derivative. A candidate is real if its imaginary part
/// is small relative to its modulus and the polished residual satisfies
/// `|p(x)| ≤ 1e-10·Σ|c_i||x|^i`.
pub fn real_roots(p: &AlphaPoly) -> Result<Vec<f64>> {
    let Some(deg) = p.degree() else {
        return Err(Error::ZeroPolynomial);
    };
    if deg == 0 {
        return Ok(Vec::new());
    }
    // Strip roots at zero so the companion matrix is well posed.
    let lead = p.coeffs().iter().position(|c| *c != 0.0).unwrap_or(0);
    let mut roots = Vec::new();
    if lead > 0 {
        roots.push(0.0);
    }
    let q = AlphaPoly { coeffs: p.coeffs()[lead..].to_vec() };
    let qdeg = q.coeffs.len() - 1;
    if qdeg > 0 {
        let eig = companion_eigenvalues(&q);
        for cluster in cluster_eigenvalues(&eig) {
            if let Some(x) = resolve_cluster(&q, &cluster) {
                roots.push(x);
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| roots_match(*a, *b));
    Ok(roots)
}

/// Whether two roots coincide under [`ROOT_MATCH_TOL`].
pub fn roots_match(x: f64, y: f64) -> bool {
    (x - y).abs() <= ROOT_MATCH_TOL * (1.0 + x.abs().max(y.abs()))
}

fn companion_eigenvalues(p: &AlphaPoly) -> Vec<(f64, f64)> {
    let c = p.coeffs();
    let n = c.len() - 1;
    let lead = c[n];
    let mut m = DMatrix::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -c[i] / lead;
    }
    m.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

fn cluster_eigenvalues(eig: &[(f64, f64)]) -> Vec<Vec<(f64, f64)>> {
    const RADIUS: f64 = 1e-3;
    let mut clusters: Vec<Vec<(f64, f64)>> = Vec::new();
    for &z in eig {
        let near = clusters.iter_mut().find(|cl| {
            cl.iter().any(|w| {
                let d = ((z.0 - w.0).powi(2) + (z.1 - w.1).powi(2)).sqrt();
                d <= RADIUS * (1.0 + z.0.hypot(z.1))
            })
        });
        match near {
            Some(cl) => cl.push(z),
            None => clusters.push(vec![z]),
        }
    }
    clusters
}

fn resolve_cluster(p: &AlphaPoly, cluster: &[(f64, f64)]) -> Option<f64> {
    let m = cluster.len();
    let re = cluster.iter().map(|z| z.0).sum::<f64>() / m as f64;
    let im = cluster.iter().map(|z| z.1).sum::<f64>() / m as f64;
    // A lone eigenvalue far off the real axis belongs to a complex pair.
    if im.abs() > 1e-6 * (1.0 + re.abs()) && m == 1 {
        return None;
    }
    let mut target = p.clone();
    for _ in 1..m {
        target = target.derivative();
    }
    let x = newton(&target, re);
    let accept = |x: f64| p.eval(x).abs() <= 1e-10 * p.eval_scale(x).max(f64::MIN_POSITIVE);
    if accept(x) {
        return Some(x);
    }
    // Fall back to the individual members, which may be separate real roots
    // that happened to land close together.
    let mut best: Option<f64> = None;
    for z in cluster {
        if z.1.abs() > 1e-6 * (1.0 + z.0.abs()) {
            continue;
        }
        let x = newton(p, z.0);
        if accept(x) && best.is_none_or(|b| p.eval(x).abs() < p.eval(b).abs()) {
            best = Some(x);
        }
    }
    best
}

fn newton(p: &AlphaPoly, x0: f64) -> f64 {
    let dp = p.derivative();
    let mut x = x0;
    for _ in 0..60 {
        let f = p.eval(x);
        let d = dp.eval(x);
        if f == 0.0 || d == 0.0 || !d.is_finite() {
            break;
        }
        let step = f / d;
        let next = x - step;
        if !next.is_finite() || p.eval(next).abs() > f.abs() {
            break;
        }
        x = next;
        if step.abs() <= 1e-16 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Roots of `p` that also appear in `q` within [`ROOT_MATCH_TOL`].
pub fn intersect_roots(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().copied().filter(|x| q.iter().any(|y| roots_match(*x, *y))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_of_conjugate_linears() {
        let p = AlphaPoly::linear(1.0, 1.0) * AlphaPoly::linear(1.0, -1.0);
        assert_eq!(p.coeffs(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn horner() {
        assert_eq!(AlphaPoly::new(vec![2.0, -3.0, 1.0]).eval(3.0), 2.0);
    }

    #[test]
    fn zero_degree_sentinel() {
        assert_eq!(AlphaPoly::zero().degree(), None);
        assert_eq!(AlphaPoly::new(vec![0.0, 1e-15]).degree(), None);
        assert_eq!(AlphaPoly::new(vec![1.0, 0.0, 1e-13]).degree(), Some(0));
    }

    #[test]
    fn roots_of_one_minus_square() {
        let r = real_roots(&AlphaPoly::new(vec![1.0, 0.0, -1.0])).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] + 1.0).abs() < 1e-14 && (r[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_pair_discarded() {
        let p = AlphaPoly::linear(-0.5, 1.0) * AlphaPoly::new(vec![1.0, 0.0, 1.0]);
        let r = real_roots(&p).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn zero_polynomial_errors() {
        assert!(matches!(real_roots(&AlphaPoly::zero()), Err(Error::ZeroPolynomial)));
    }

    #[test]
    fn double_root_found_once() {
        let l = AlphaPoly::linear(-1.0, 1.0);
        let p = &(&l * &l) * &AlphaPoly::linear(2.0, 3.0);
        let r = real_roots(&p).unwrap();
        assert_eq!(r.len(), 2, "{r:?}");
        assert!((r[0] + 2.0 / 3.0).abs() < 1e-10);
        assert!((r[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn root_at_zero() {
        let r = real_roots(&AlphaPoly::new(vec![0.0, -2.0, 1.0])).unwrap();
        assert_eq!(r, vec![0.0, 2.0]);
    }

    #[test]
    fn json_is_coefficient_array() {
        let p = AlphaPoly::new(vec![1.0, -2.0]);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[1.0,-2.0]");
        let back: AlphaPoly = serde_json::from_str("[1.0,-2.0,0.0]").unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn multiplication_evaluates_pointwise(
            a in prop::collection::vec(-5.0f64..5.0, 1..5),
            b in prop::collection::vec(-5.0f64..5.0, 1..5),
            x in -2.0f64..2.0,
        ) {
            let (pa, pb) = (AlphaPoly::new(a), AlphaPoly::new(b));
            let prod = &pa * &pb;
            let want = pa.eval(x) * pb.eval(x);
            prop_assert!((prod.eval(x) - want).abs() <= 1e-10 * (1.0 + want.abs()) * 100.0);
            let sum = &pa + &pb;
            prop_assert!((sum.eval(x) - pa.eval(x) - pb.eval(x)).abs() <= 1e-12 * 100.0);
        }

        #[test]
        fn planted_real_roots_recovered(
            roots in prop::collection::vec(-3.0f64..3.0, 1..6),
        ) {
            let mut sorted = roots.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup_by(|a, b| (*a - *b).abs() < 0.05);
            let p = sorted.iter().fold(AlphaPoly::constant(1.0), |acc, r| &acc * &AlphaPoly::linear(-r, 1.0));
            let found = real_roots(&p).unwrap();
            prop_assert_eq!(found.len(), sorted.len(), "{:?} vs {:?}", found, sorted);
            for (f, r) in found.iter().zip(&sorted) {
                prop_assert!((f - r).abs() < 1e-7, "{} vs {}", f, r);
            }
        }
    }
}
