use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::aipw::{InfluenceValues, Interval};
use crate::error::{PteError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::quantile;

pub const MIN_RESAMPLES: usize = 100;

/// Multiplier-resampled estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resampled {
    pub delta_star: Vec<f64>,
    pub delta_s_star: Vec<f64>,
    /// `1 − Δ*_S/Δ*`; `None` where `|Δ*|` fell below the threshold.
    pub r_star: Vec<Option<f64>>,
    pub missing: usize,
    /// Empirical `α/2` and `1 − α/2` quantiles of the non-missing `r_star`.
    pub ci: Interval,
}

/// Perturbation resampling: `Δ*_b = Δ̂ + n⁻¹Σ(G_ib − 1)φ₁ᵢ` and likewise for
/// `Δ_S`, with `G_ib` independent normal of mean 1 and variance 1. Each
/// replicate draws from its own stream derived from `(seed, b)`.
pub fn perturb_resample(
    iv: &InfluenceValues,
    delta: f64,
    delta_s: f64,
    b: usize,
    alpha: f64,
    seed: u64,
    delta_threshold: f64,
) -> Result<Resampled> {
    if b < MIN_RESAMPLES {
        return Err(PteError::Config(format!("at least {MIN_RESAMPLES} resamples required, got {b}")));
    }
    let n = iv.n() as f64;
    let mut delta_star = Vec::with_capacity(b);
    let mut delta_s_star = Vec::with_capacity(b);
    let mut r_star = Vec::with_capacity(b);
    for rep in 0..b {
        let mut rng = rng_from_seed(derive_seed(seed, rep as u64));
        let (mut s1, mut s2) = (0.0, 0.0);
        for (p1, p2) in iv.phi1.iter().zip(&iv.phi2) {
            let g: f64 = rng.sample(StandardNormal);
            s1 += g * p1;
            s2 += g * p2;
        }
        let d = delta + s1 / n;
        let ds = delta_s + s2 / n;
        delta_star.push(d);
        delta_s_star.push(ds);
        r_star.push((d.abs() > delta_threshold).then(|| 1.0 - ds / d));
    }
    let kept: Vec<f64> = r_star.iter().flatten().copied().collect();
    let missing = b - kept.len();
    if kept.is_empty() {
        return Err(PteError::Numerical("every resampled treatment effect fell below the threshold".into()));
    }
    let ci = Interval { lower: quantile(&kept, alpha / 2.0), upper: quantile(&kept, 1.0 - alpha / 2.0) };
    Ok(Resampled { delta_star, delta_s_star, r_star, missing, ci })
}
