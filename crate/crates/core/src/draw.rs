//! Seeded random parameter points for batch checks, tests and experiments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DExtra, Theta, Variant};

/// Independent ChaCha8 stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Distribution of random [`Theta`] draws. Free factor entries are standard
/// normal times `factor_scale`; variances are uniform on the given ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaGenerator {
    pub variant: Variant,
    pub r_bar: usize,
    /// Number of periods; for the differenced variant, differenced periods.
    #[serde(rename = "T")]
    pub big_t: usize,
    pub alpha_range: [f64; 2],
    /// Probability of drawing `α = 1` exactly (AR panel only).
    pub unit_root_prob: f64,
    pub factor_scale: f64,
    pub psi_diag_range: [f64; 2],
    /// Bound on the correlations implied by `Ψ`.
    pub psi_max_corr: f64,
    pub d_range: [f64; 2],
    /// Bound on `|σ_c| / √(σ₁²σ²)` for the differenced variant.
    pub sigma_c_max_corr: f64,
}

impl Default for ThetaGenerator {
    fn default() -> Self {
        ThetaGenerator {
            variant: Variant::Baseline,
            r_bar: 1,
            big_t: 4,
            alpha_range: [-0.9, 0.9],
            unit_root_prob: 0.0,
            factor_scale: 1.0,
            psi_diag_range: [0.5, 1.5],
            psi_max_corr: 0.6,
            d_range: [0.5, 1.5],
            sigma_c_max_corr: 0.8,
        }
    }
}

impl ThetaGenerator {
    /// Defaults for the variant; `r_bar` is forced to 2 or 1 where the
    /// variant fixes it.
    pub fn new(variant: Variant, r_bar: usize, big_t: usize) -> Self {
        let r_bar = match variant {
            Variant::FixedEffectsLevels => 2,
            Variant::ArPanel => 1,
            _ => r_bar,
        };
        ThetaGenerator { variant, r_bar, big_t, ..Default::default() }
    }

    pub fn with_alpha_range(mut self, lo: f64, hi: f64) -> Self {
        self.alpha_range = [lo, hi];
        self
    }

    pub fn with_unit_root_prob(mut self, p: f64) -> Self {
        self.unit_root_prob = p;
        self
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("theta generator: {m}")));
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.alpha_range) {
            return bad("alpha_range must be an ordered finite pair");
        }
        if !ordered(self.psi_diag_range) || self.psi_diag_range[0] <= 0.0 {
            return bad("psi_diag_range must be positive and ordered");
        }
        if !ordered(self.d_range) || self.d_range[0] <= 0.0 {
            return bad("d_range must be positive and ordered");
        }
        if !(0.0..1.0).contains(&self.psi_max_corr) || !(0.0..1.0).contains(&self.sigma_c_max_corr) {
            return bad("correlation bounds must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.unit_root_prob) {
            return bad("unit_root_prob must lie in [0, 1]");
        }
        if self.big_t <= self.r_bar {
            return bad("T must exceed r_bar");
        }
        Ok(())
    }

    /// Draw number `index` under `seed`; each index uses its own stream.
    pub fn draw(&self, seed: u64, index: u64) -> Result<Theta> {
        self.sample(&mut stream_rng(seed, index))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Theta> {
        self.check()?;
        let [alo, ahi] = self.alpha_range;
        let mut alpha = if alo == ahi { alo } else { rng.random_range(alo..ahi) };
        if self.unit_root_prob > 0.0 && rng.random::<f64>() < self.unit_root_prob {
            alpha = 1.0;
        }
        let t = self.big_t;
        let r = self.r_bar;
        let normal = |rng: &mut R| self.factor_scale * rng.sample::<f64, _>(StandardNormal);
        let uniform = |rng: &mut R, [lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..hi) };
        match self.variant {
            Variant::Baseline => {
                let f = DMatrix::from_fn(t - r, r, |_, _| normal(rng));
                let psi = self.draw_psi(rng, r);
                let d = (0..t).map(|_| uniform(rng, self.d_range)).collect();
                Theta::baseline(alpha, f, psi, d)
            }
            Variant::FixedEffectsLevels => {
                let f_gamma = normal(rng);
                let f: Vec<f64> = (0..t - 2).map(|_| normal(rng)).collect();
                let psi = self.draw_psi(rng, 2);
                let d = (0..t).map(|_| uniform(rng, self.d_range)).collect();
                Theta::fixed_effects_levels(alpha, f_gamma, &f, psi, d)
            }
            Variant::ArPanel => {
                let f_gamma = normal(rng);
                let psi = uniform(rng, self.psi_diag_range);
                let d = (0..t).map(|_| uniform(rng, self.d_range)).collect();
                Theta::ar_panel(alpha, f_gamma, psi, d)
            }
            Variant::Differenced => {
                let f = DMatrix::from_fn(t - r, r, |_, _| normal(rng));
                let psi = self.draw_psi(rng, r);
                let sigma2 = uniform(rng, self.d_range);
                let sigma1_sq = uniform(rng, self.d_range);
                let corr = rng.random_range(-self.sigma_c_max_corr..=self.sigma_c_max_corr);
                let sigma_c = corr * (sigma1_sq * sigma2).sqrt();
                Theta::differenced(alpha, f, psi, DExtra { sigma2, sigma1_sq, sigma_c })
            }
        }
    }

    /// `Ψ = S C S` with `S` diagonal standard deviations and `C` a
    /// correlation matrix from normalized random Gram vectors, shrunk toward
    /// the identity so no correlation exceeds `psi_max_corr`.
    fn draw_psi<R: Rng + ?Sized>(&self, rng: &mut R, r: usize) -> DMatrix<f64> {
        let sd: Vec<f64> = (0..r)
            .map(|_| {
                let [lo, hi] = self.psi_diag_range;
                if lo == hi { lo } else { rng.random_range(lo..hi) }.sqrt()
            })
            .collect();
        let g = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gram = &g * g.transpose();
        DMatrix::from_fn(r, r, |i, j| {
            let c = if i == j {
                1.0
            } else {
                self.psi_max_corr * gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt()
            };
            sd[i] * sd[j] * c
        })
    }
}
