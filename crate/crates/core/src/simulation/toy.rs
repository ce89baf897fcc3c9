use serde::{Deserialize, Serialize};

use super::dgm::{simulate_units, DgmKind, DgmSpec, SimReplicate};
use super::oracle::oracle_estimands;
use crate::error::{PteError, Result};
use crate::rng::derive_seed;
use crate::stats::mean;

/// Reference PTE values for four `δ` settings of the toy example.
pub const TOY_REFERENCE_PTE: [(f64, f64); 4] = [(0.0, 0.0), (0.25, 0.2), (0.5, 0.33), (3.0, 0.75)];

/// Intercept and slope of a simple least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LineFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() < 2 {
            return Err(PteError::Data(format!("least squares needs at least 2 rows, got {}", x.len())));
        }
        let (mx, my) = (mean(x), mean(y));
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        if sxx <= 0.0 {
            return Err(PteError::Data("surrogate is constant within an arm".into()));
        }
        let slope = sxy / sxx;
        Ok(Self { intercept: my - slope * mx, slope })
    }

    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Two independent toy studies: arm-wise lines of `Y` on `S` are fit in
/// the first and applied to the second.
#[derive(Debug, Clone)]
pub struct ToyReplicate {
    pub delta: f64,
    pub study1: SimReplicate,
    pub study2: SimReplicate,
    /// Indexed by arm.
    pub psi_fit: [LineFit; 2],
    /// `ψ̂_{A_i}(S_i)` for each second-study row.
    pub psi: Vec<f64>,
}

pub fn gen_toy(spec: &DgmSpec) -> Result<ToyReplicate> {
    if spec.kind != DgmKind::Toy {
        return Err(PteError::Config(format!("spec is for {:?}, not Toy", spec.kind)));
    }
    let params = spec.params()?;
    let study1 = simulate_units(&params, spec.n, derive_seed(spec.seed, 1))?;
    let study2 = simulate_units(&params, spec.n, derive_seed(spec.seed, 2))?;
    let arm_fit = |arm: u8| -> Result<LineFit> {
        let d = &study1.data;
        let rows: Vec<usize> = (0..d.n()).filter(|&i| d.a[i] == arm).collect();
        let s: Vec<f64> = rows.iter().map(|&i| d.s.get(i, 0)).collect();
        let y: Vec<f64> = rows.iter().map(|&i| d.y[i]).collect();
        LineFit::fit(&s, &y).map_err(|e| PteError::Data(format!("study 1, arm A={arm}: {e}")))
    };
    let psi_fit = [arm_fit(0)?, arm_fit(1)?];
    let d2 = &study2.data;
    let psi = (0..d2.n()).map(|i| psi_fit[d2.a[i] as usize].at(d2.s.get(i, 0))).collect();
    Ok(ToyReplicate { delta: spec.delta_toy, study1, study2, psi_fit, psi })
}

/// Closed-form toy PTE: `1 − (1.5 + δ/(1 + δ²))/(1.5 + δ)`.
pub fn toy_pte_analytic(delta: f64) -> f64 {
    1.0 - (1.5 + delta / (1.0 + delta * delta)) / (1.5 + delta)
}

/// Toy PTE three ways: closed form, counterfactual Monte Carlo, and the
/// reference value (when `δ` is one of the four listed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPte {
    pub delta: f64,
    pub analytic: f64,
    pub monte_carlo: f64,
    pub monte_carlo_se: f64,
    pub reference: Option<f64>,
}

pub fn toy_pte(delta: f64, n_mc: usize, seed: u64) -> Result<ToyPte> {
    let spec = DgmSpec::toy(1, delta, seed);
    let est = oracle_estimands(&spec, n_mc)?;
    let reference = TOY_REFERENCE_PTE.iter().find(|(d, _)| *d == delta).map(|(_, r)| *r);
    Ok(ToyPte { delta, analytic: toy_pte_analytic(delta), monte_carlo: est.r, monte_carlo_se: est.se_r, reference })
}
