//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use panel_ident::cli::{self, ExperimentConfig, ThetaSource};
use panel_ident::draw::{stream_rng, ThetaGenerator};
use panel_ident::estimate::{self, FitInput, FitOptions};
use panel_ident::ident::{self, CheckOptions};
use panel_ident::minors::{self, ExclusionMinor};
use panel_ident::model::{self, Theta, Variant};
use panel_ident::{linalg, AlphaPoly};

type Outcome = Result<String, String>;

/// `Γ(x)⁻¹ Γ(α)` built entry by entry.
fn dense_q(alpha: f64, x: f64, t: usize) -> DMatrix<f64> {
    let gamma = DMatrix::from_fn(t, t, |r, c| if r >= c { alpha.powi((r - c) as i32) } else { 0.0 });
    let b = DMatrix::from_fn(t, t, |r, c| if r == c { 1.0 } else if r == c + 1 { -x } else { 0.0 });
    b * gamma
}

fn dense_omega(theta: &Theta) -> DMatrix<f64> {
    let common = &theta.factors * &theta.psi * theta.factors.transpose();
    common + DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&theta.d_diag))
}

fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.max(a.abs()).max(b.abs())
}

fn criterion_1() -> Outcome {
    let mut checked = 0usize;
    for r_bar in [1, 2] {
        for t in [4, 6, 8] {
            if t < 2 * (r_bar + 1) {
                continue;
            }
            let gen = ThetaGenerator::new(Variant::Baseline, r_bar, t);
            for i in 0..10 {
                let theta = gen.draw(100 + r_bar as u64, i).map_err(|e| e.to_string())?;
                let omega = dense_omega(&theta);
                for minor in minors::enumerate_minors(t, r_bar + 1, 0) {
                    let p = minors::det_minor_poly(&theta, &minor).map_err(|e| e.to_string())?;
                    let k = minor.dim();
                    for j in 0..=2 * k {
                        let x = -1.5 + 3.0 * j as f64 / (2 * k) as f64;
                        let q = dense_q(theta.alpha, x, t);
                        let want = linalg::det(&minor.select(&(&q * &omega * q.transpose())));
                        if !rel_close(p.eval(x), want, p.eval_scale(x), 1e-9) {
                            return Err(format!("r̄={r_bar} T={t} {} x={x}: {} vs {want}", minor.label(), p.eval(x)));
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{checked} probe evaluations match"))
}

struct Base1 {
    a: f64,
    f2: f64,
    f3: f64,
    f4: f64,
    psi: f64,
    d: [f64; 4],
}

impl Base1 {
    fn of(theta: &Theta) -> Self {
        Base1 {
            a: theta.alpha,
            f2: theta.factors[(1, 0)],
            f3: theta.factors[(2, 0)],
            f4: theta.factors[(3, 0)],
            psi: theta.psi[(0, 0)],
            d: [theta.d_diag[0], theta.d_diag[1], theta.d_diag[2], theta.d_diag[3]],
        }
    }

    /// Closed-form `O_{i,j}` for `r̄ = 1`, `T = 4`, 1-based.
    fn o(&self, i: usize, j: usize, x: f64) -> f64 {
        let Base1 { a, f2, f3, f4, psi: p, d } = *self;
        let (d1, d2, d3) = (d[0], d[1], d[2]);
        let m = a - x;
        let ax = a * x - a * a;
        let a2x = a * a * x - a * a * a;
        match (i, j) {
            (1, 2) => (d1 + p) * m + f2 * p,
            (1, 3) => f3 * p - (d1 + p) * ax + f2 * p * m,
            (1, 4) => f4 * p - a2x * (d1 + p) + f3 * p * m - f2 * p * ax,
            (2, 3) => m * (p * f2 * f2 + p * m * f2 + d2) - ax * ((d1 + p) * m + f2 * p) + f2 * f3 * p + f3 * p * m,
            (2, 4) => {
                m * (f2 * f3 * p + f3 * p * m) - ax * (p * f2 * f2 + p * m * f2 + d2) - a2x * (f2 * p + (d1 + p) * m)
                    + f2 * f4 * p
                    + f4 * p * m
            }
            (3, 4) => {
                m * (d3 + f3 * f3 * p - f3 * p * ax + f2 * f3 * p * m)
                    - ax * ((p * f2 * f2 + d2) * m + f2 * f3 * p - f2 * p * ax)
                    - a2x * (f3 * p - (d1 + p) * ax + f2 * p * m)
                    + f3 * f4 * p
                    - f4 * p * ax
                    + f2 * f4 * p * m
            }
            _ => unreachable!(),
        }
    }

    /// Coefficients `(a, b, c)` of `J̃_{(2,3),(1,4)}`, with the corrected `a`.
    fn quadratic(&self) -> (f64, f64, f64) {
        let Base1 { a, f2, f3, f4, psi: p, d } = *self;
        let (d1, d2, d3) = (d[0], d[1], d[2]);
        let qa = a * d1 * d2 + a * d2 * p + d1 * f2 * f3 * p + a * d1 * f2 * f2 * p;
        let qb = -(d1 * d3
            + d3 * p
            + a * a * d1 * d2
            + a * a * d2 * p
            + d1 * f3 * f3 * p
            + a * a * d1 * f2 * f2 * p
            + d1 * f2 * f4 * p
            + 2.0 * a * d1 * f2 * f3 * p);
        let qc = a * d1 * d3 + a * d3 * p + d3 * f2 * p + a * d1 * f3 * f3 * p - a * d2 * f3 * p
            + d1 * f3 * f4 * p
            + a * a * d1 * f2 * f3 * p;
        (qa, qb, qc)
    }
}

fn criterion_2() -> Outcome {
    let gen = ThetaGenerator::new(Variant::Baseline, 1, 4);
    let probes = [-1.3, -0.4, 0.2, 0.9, 1.7];
    let mut worst_typo = f64::INFINITY;
    for i in 0..5 {
        let theta = gen.draw(200, i).map_err(|e| e.to_string())?;
        let c = Base1::of(&theta);
        for (i1, j1) in [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)] {
            let p = minors::off_diag_o_poly(&theta, i1 - 1, j1 - 1).map_err(|e| e.to_string())?;
            for &x in &probes {
                if !rel_close(p.eval(x), c.o(i1, j1, x), p.eval_scale(x), 1e-10) {
                    return Err(format!("O_{{{i1},{j1}}} at x={x}: {} vs {}", p.eval(x), c.o(i1, j1, x)));
                }
            }
        }
        let m16 = ExclusionMinor::one_based(&[1, 2], &[3, 4], 0).map_err(|e| e.to_string())?;
        let det16 = minors::det_minor_poly(&theta, &m16).map_err(|e| e.to_string())?;
        for &x in &probes {
            let want = (c.a - x) * c.psi * (c.d[1] - c.a * c.d[0] * c.f2) * (c.f3 * x - c.f4);
            if !rel_close(det16.eval(x), want, det16.eval_scale(x), 1e-10) {
                return Err(format!("(1,2),(3,4) determinant at x={x}: {} vs {want}", det16.eval(x)));
            }
        }
        let m17 = ExclusionMinor::one_based(&[2, 3], &[1, 4], 0).map_err(|e| e.to_string())?;
        let jt = minors::jtilde_poly(&theta, &m17).map_err(|e| e.to_string())?;
        let (qa, qb, qc) = c.quadratic();
        let want = AlphaPoly::new(vec![qc, qb, qa]);
        let scale = want.max_abs_coeff();
        for k in 0..3 {
            if (jt.coeff(k) - want.coeff(k)).abs() > 1e-10 * scale {
                return Err(format!("(2,3),(1,4) coefficient {k}: {} vs {}", jt.coeff(k), want.coeff(k)));
            }
        }
        // The printed leading coefficient lacks α d₁ f₂² Ψ.
        let missing = c.a * c.d[0] * c.f2 * c.f2 * c.psi;
        let printed = qa - missing;
        if (jt.coeff(2) - printed - missing).abs() > 1e-10 * scale {
            return Err("leading coefficient discrepancy is not α d1 f2² Ψ".into());
        }
        worst_typo = worst_typo.min(missing.abs());
    }
    Ok(format!("six O forms, (1,2),(3,4) determinant and corrected quadratic match; printed leading coefficient off by α·d1·f2²·Ψ (min |gap| {worst_typo:.3e})"))
}

fn criterion_3() -> Outcome {
    let mut n_polys = 0usize;
    for i in 0..500u64 {
        let r_bar = 1 + (i % 2) as usize;
        let t = 2 * (r_bar + 1);
        let theta = ThetaGenerator::new(Variant::Baseline, r_bar, t).draw(300, i).map_err(|e| e.to_string())?;
        let ctx = minors::MinorContext::new(&theta).map_err(|e| e.to_string())?;
        for k in 1..=r_bar + 1 {
            for minor in minors::enumerate_minors(t, k, 0) {
                let jt = ctx.jtilde(&minor).map_err(|e| e.to_string())?;
                if !minors::degree_within_bounds(&jt, k, r_bar) {
                    let (lo, hi) = minors::degree_bounds(k, r_bar);
                    return Err(format!("draw {i}: {} degree {:?} outside [{lo},{hi}]", minor.label(), jt.degree()));
                }
                n_polys += 1;
            }
        }
    }
    Ok(format!("{n_polys} polynomials, 0 violations"))
}

fn identify_batch(gen: &ThetaGenerator, seed: u64, n: usize) -> Result<Vec<(Theta, ident::IdentReport)>, String> {
    let cfg = ExperimentConfig {
        theta: Some(ThetaSource::Generator(gen.clone())),
        seed: Some(seed),
        n_replications: n,
        ..ExperimentConfig::from_json("{}").map_err(|e| e.to_string())?
    };
    let reports = cli::run_identify(&cfg).map_err(|e| e.to_string())?;
    (0..n).map(|i| gen.draw(seed, i as u64).map(|t| (t, reports[i].clone())).map_err(|e| e.to_string())).collect()
}

fn all_identified(batch: &[(Theta, ident::IdentReport)], what: &str) -> Result<usize, String> {
    for (i, (theta, rep)) in batch.iter().enumerate() {
        let ok = rep.identified
            && rep.common_roots.len() == 1
            && (rep.common_roots[0] - theta.alpha).abs() <= 1e-7 * (1.0 + theta.alpha.abs());
        if !ok {
            return Err(format!("{what} draw {i} not identified: roots {:?}, α = {}", rep.common_roots, theta.alpha));
        }
    }
    Ok(batch.len())
}

fn criterion_4() -> Outcome {
    let a = identify_batch(&ThetaGenerator::new(Variant::Baseline, 1, 4), 400, 200)?;
    let b = identify_batch(&ThetaGenerator::new(Variant::Baseline, 2, 6), 401, 200)?;
    let na = all_identified(&a, "r̄=1 T=4")?;
    let nb = all_identified(&b, "r̄=2 T=6")?;
    Ok(format!("identified {na}/200 (r̄=1, T=4) and {nb}/200 (r̄=2, T=6)"))
}

fn criterion_5() -> Outcome {
    let fe = identify_batch(&ThetaGenerator::new(Variant::FixedEffectsLevels, 2, 6), 500, 100)?;
    let dif = identify_batch(&ThetaGenerator::new(Variant::Differenced, 1, 6), 501, 100)?;
    let ar = identify_batch(&ThetaGenerator::new(Variant::ArPanel, 1, 4), 502, 75)?;
    let ar_unit = identify_batch(&ThetaGenerator::new(Variant::ArPanel, 1, 4).with_alpha_range(1.0, 1.0), 503, 25)?;
    let n = all_identified(&fe, "fixed effects")? + all_identified(&dif, "differenced")?;
    let n_ar = all_identified(&ar, "AR panel")? + all_identified(&ar_unit, "AR panel α=1")?;

    let opts = CheckOptions::default();
    let check = |theta: &Theta| ident::check(theta, opts).map_err(|e| e.to_string());
    // Ψ singular under fixed effects.
    let mut theta = fe[0].0.clone();
    let p12 = (theta.psi[(0, 0)] * theta.psi[(1, 1)]).sqrt();
    theta.psi[(0, 1)] = p12;
    theta.psi[(1, 0)] = p12;
    let rep = check(&theta)?;
    if rep.identified || !rep.has_case("Case 1'") {
        return Err("fixed effects with singular Ψ not labeled Case 1'".into());
    }
    // f_γ on (α−1)((α−1)(d1+Ψ f_γ²) + Ψ f_γ) = 0 with α = 0.5, Ψ = 2, d1 = 1.
    let fg = 1.0 + 0.5f64.sqrt();
    let theta = Theta::ar_panel(0.5, fg, 2.0, vec![1.0, 1.2, 0.8, 1.1]).map_err(|e| e.to_string())?;
    let rep = check(&theta)?;
    if rep.identified || !rep.has_case("manifold") {
        return Err("AR panel on the unit-root manifold not flagged".into());
    }
    // f₄ = α f₃ in the baseline.
    let alpha = 0.4;
    let theta = Theta::baseline(
        alpha,
        DMatrix::from_column_slice(3, 1, &[0.7, 1.3, alpha * 1.3]),
        DMatrix::from_element(1, 1, 1.1),
        vec![1.0, 0.8, 1.2, 0.9],
    )
    .map_err(|e| e.to_string())?;
    let rep = check(&theta)?;
    if !rep.identified || !rep.has_case("Case 3 candidate root f4/f3 coincides with α") {
        return Err("f4 = α f3 not labeled as coinciding root".into());
    }
    Ok(format!("identified {n}/200 fixed-effects and differenced, {n_ar}/100 AR (25 at α=1); 3 planted cases labeled"))
}

fn criterion_6() -> Outcome {
    for r_bar in 1..=3 {
        let n = minors::enumerate_minors(2 * (r_bar + 1) + 1, r_bar + 1, 1).len();
        if n != 1 {
            return Err(format!("r̄={r_bar}: {n} minors"));
        }
    }
    let n = minors::enumerate_minors(4, 2, 0).len();
    if n != 3 {
        return Err(format!("T=4, k=2: {n} minors"));
    }
    Ok("counts 1, 1, 1 and 3".into())
}

fn criterion_7() -> Outcome {
    let mut cases: Vec<Theta> = Vec::new();
    let draw = |g: ThetaGenerator, seed: u64, n: u64| -> Result<Vec<Theta>, String> {
        (0..n).map(|i| g.draw(seed, i).map_err(|e| e.to_string())).collect()
    };
    cases.extend(draw(ThetaGenerator::new(Variant::Baseline, 1, 4), 700, 10)?);
    cases.extend(draw(ThetaGenerator::new(Variant::Baseline, 2, 6), 701, 10)?);
    cases.extend(draw(ThetaGenerator::new(Variant::FixedEffectsLevels, 2, 6), 702, 20)?);
    cases.extend(draw(ThetaGenerator::new(Variant::Differenced, 1, 6), 703, 20)?);
    cases.extend(draw(ThetaGenerator::new(Variant::ArPanel, 1, 4), 704, 15)?);
    cases.extend(draw(ThetaGenerator::new(Variant::ArPanel, 1, 4).with_alpha_range(1.0, 1.0), 705, 5)?);
    let mut worst: f64 = 0.0;
    for (i, theta) in cases.iter().enumerate() {
        let s = model::build_sigma(theta).map_err(|e| e.to_string())?;
        let opts = FitOptions { seed: i as u64, ..FitOptions::default() };
        let res = estimate::fit(FitInput::Covariance { s: &s, n_units: 1000 }, theta.r_bar, theta.variant, &opts)
            .map_err(|e| e.to_string())?;
        let gap = estimate::parameter_gap(theta, &res.theta_hat).map_err(|e| e.to_string())?;
        if gap > 1e-4 {
            return Err(format!("{:?} case {i}: max parameter gap {gap:.3e} (α {} vs {})", theta.variant, theta.alpha, res.theta_hat.alpha));
        }
        worst = worst.max(gap);
    }
    Ok(format!("{} fits, max parameter gap {worst:.2e}", cases.len()))
}

fn criterion_8() -> Outcome {
    let theta0 = ThetaGenerator::new(Variant::Baseline, 1, 6).with_alpha_range(0.5, 0.5).draw(800, 0).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        theta: Some(ThetaSource::Fixed(theta0)),
        seed: Some(801),
        n_replications: 50,
        n_grid: vec![500, 2000, 8000],
        ..ExperimentConfig::from_json("{}").map_err(|e| e.to_string())?
    };
    let rows = cli::run_mc(&cfg).map_err(|e| e.to_string())?;
    let summary: Vec<String> = rows.iter().map(|r| format!("N={} rmse {:.4} bias {:+.4}", r.n_units, r.rmse, r.bias)).collect();
    let decreasing = rows.windows(2).all(|w| w[1].rmse < w[0].rmse);
    let bias_ok = rows.last().is_some_and(|r| r.bias.abs() <= 0.01);
    if decreasing && bias_ok {
        Ok(summary.join("; "))
    } else {
        Err(summary.join("; "))
    }
}

fn criterion_9() -> Outcome {
    let theta0 = ThetaGenerator::new(Variant::Baseline, 1, 6).draw(900, 0).map_err(|e| e.to_string())?;
    let v0 = estimate::pack(&theta0).map_err(|e| e.to_string())?;
    let sigma0 = model::build_sigma(&theta0).map_err(|e| e.to_string())?;
    let top = estimate::limit_objective(&theta0, &theta0).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(901, 0);
    let (mut accepted, mut min_drop) = (0usize, f64::INFINITY);
    while accepted < 1000 {
        let scale = 10f64.powf(rng.random_range(-5.0..0.0));
        let v: Vec<f64> = v0.iter().map(|x| x + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let theta = estimate::unpack(&v, &theta0).map_err(|e| e.to_string())?;
        let sigma = model::build_sigma(&theta).map_err(|e| e.to_string())?;
        if (&sigma - &sigma0).amax() < 1e-6 {
            continue;
        }
        let value = estimate::limit_objective(&theta, &theta0).map_err(|e| e.to_string())?;
        if value >= top {
            return Err(format!("perturbation at scale {scale:.1e} reached {value} ≥ {top}"));
        }
        min_drop = min_drop.min(top - value);
        accepted += 1;
    }
    Ok(format!("1000 perturbations strictly below the truth (smallest drop {min_drop:.2e})"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 determinant oracle", criterion_1, Duration::from_secs(10)),
        ("2 closed-form O entries", criterion_2, Duration::from_secs(1)),
        ("3 degree bounds", criterion_3, Duration::from_secs(30)),
        ("4 baseline identification", criterion_4, Duration::from_secs(60)),
        ("5 variant identification", criterion_5, Duration::from_secs(120)),
        ("6 minor counts", criterion_6, Duration::from_secs(1)),
        ("7 noiseless recovery", criterion_7, Duration::from_secs(300)),
        ("8 Monte Carlo consistency", criterion_8, Duration::from_secs(900)),
        ("9 limit objective uniqueness", criterion_9, Duration::from_secs(10)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {budget:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("[{}] {name}: {detail} ({:.2}s)", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
