use serde::{Deserialize, Serialize};

use crate::crossfit::{Dataset, FoldPlan, NuisanceEstimates};
use crate::error::{PteError, Result};
use crate::stats::{mean, normal_quantile};

/// Per-observation AIPW contrast
/// `[AY − (A − p)·f₁]/p − [(1 − A)Y + (A − p)·f₀]/(1 − p)`.
pub fn aipw_terms(a: &[u8], y: &[f64], score: &[f64], f0: &[f64], f1: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if [a.len(), score.len(), f0.len(), f1.len()].iter().any(|&l| l != n) {
        return Err(PteError::Data("nuisance vectors and data differ in length".into()));
    }
    if let Some(i) = score.iter().position(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(PteError::Numerical(format!("score {} at row {} outside (0, 1)", score[i], i + 1)));
    }
    Ok((0..n)
        .map(|i| {
            let (ai, p) = (f64::from(a[i]), score[i]);
            (ai * y[i] - (ai - p) * f1[i]) / p - ((1.0 - ai) * y[i] + (ai - p) * f0[i]) / (1.0 - p)
        })
        .collect())
}

/// `K⁻¹ Σ_k mean_{i ∈ I_k} v_i`.
pub fn fold_mean_of_means(v: &[f64], plan: &FoldPlan) -> f64 {
    let mut sums = vec![0.0; plan.k];
    let sizes = plan.sizes();
    for (x, &f) in v.iter().zip(&plan.assignment) {
        sums[f - 1] += x;
    }
    sums.iter().zip(&sizes).map(|(s, &m)| s / m as f64).sum::<f64>() / plan.k as f64
}

fn delta_terms(data: &Dataset, nz: &NuisanceEstimates) -> Result<Vec<f64>> {
    aipw_terms(&data.a, &data.y, &nz.e_hat, &nz.m0_hat, &nz.m1_hat)
}

fn delta_s_terms(data: &Dataset, nz: &NuisanceEstimates) -> Result<Vec<f64>> {
    aipw_terms(&data.a, &data.y, &nz.pi_hat, &nz.mu0_hat, &nz.mu1_hat)
}

/// Cross-fitted AIPW estimate of the total effect `Δ` from `(ê, m̂₀, m̂₁)`.
pub fn aipw_delta(data: &Dataset, nz: &NuisanceEstimates) -> Result<f64> {
    Ok(fold_mean_of_means(&delta_terms(data, nz)?, &nz.plan))
}

/// Cross-fitted AIPW estimate of the residual effect `Δ_S` from
/// `(π̂, μ̂₀, μ̂₁)`.
pub fn aipw_delta_s(data: &Dataset, nz: &NuisanceEstimates) -> Result<f64> {
    Ok(fold_mean_of_means(&delta_s_terms(data, nz)?, &nz.plan))
}

/// Outcome-model estimate `mean(μ̂₁ − μ̂₀)`.
pub fn plugin_delta_s(nz: &NuisanceEstimates) -> f64 {
    let d: Vec<f64> = nz.mu1_hat.iter().zip(&nz.mu0_hat).map(|(a, b)| a - b).collect();
    mean(&d)
}

/// Horvitz–Thompson estimate `mean(AY/π̂ − (1 − A)Y/(1 − π̂))`.
pub fn ipw_delta_s(data: &Dataset, nz: &NuisanceEstimates) -> Result<f64> {
    let zeros = vec![0.0; data.n()];
    Ok(mean(&aipw_terms(&data.a, &data.y, &nz.pi_hat, &zeros, &zeros)?))
}

/// Per-observation influence values of `Δ̂` (`phi1`) and `Δ̂_S` (`phi2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceValues {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl InfluenceValues {
    pub fn n(&self) -> usize {
        self.phi1.len()
    }

    /// `n⁻¹ Σ φᵢφᵢᵀ`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let n = self.n() as f64;
        let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
        for (a, b) in self.phi1.iter().zip(&self.phi2) {
            s11 += a * a;
            s12 += a * b;
            s22 += b * b;
        }
        [[s11 / n, s12 / n], [s12 / n, s22 / n]]
    }
}

pub fn influence_values(data: &Dataset, nz: &NuisanceEstimates, delta: f64, delta_s: f64) -> Result<InfluenceValues> {
    Ok(InfluenceValues {
        phi1: delta_terms(data, nz)?.into_iter().map(|t| t - delta).collect(),
        phi2: delta_s_terms(data, nz)?.into_iter().map(|t| t - delta_s).collect(),
    })
}

/// How `σ²` is assembled from the influence covariance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceForm {
    /// `gᵀΣ̂g` with `g = (Δ_S/Δ², −1/Δ)`, the gradient of `1 − Δ_S/Δ`.
    #[default]
    DeltaMethod,
    /// `n⁻¹Σ(Δ⁻²φ₁² + Δ_S²Δ⁻⁴φ₂² − 2Δ_SΔ⁻³φ₁φ₂)`: the two squared weights
    /// swapped between the influence terms. Kept for comparison reports.
    SwappedWeights,
}

/// Asymptotic variance of `√n(R̂_S − R_S)` and the 2×2 covariance of
/// `(Δ̂, Δ̂_S)` influence values.
pub fn pte_variance(
    iv: &InfluenceValues,
    delta: f64,
    delta_s: f64,
    form: VarianceForm,
) -> Result<(f64, [[f64; 2]; 2])> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(PteError::Numerical(format!("variance undefined at delta = {delta}")));
    }
    let cov = iv.covariance();
    let sigma2 = match form {
        VarianceForm::DeltaMethod => {
            let g = [delta_s / (delta * delta), -1.0 / delta];
            g[0] * g[0] * cov[0][0] + 2.0 * g[0] * g[1] * cov[0][1] + g[1] * g[1] * cov[1][1]
        }
        VarianceForm::SwappedWeights => {
            cov[0][0] / delta.powi(2) + delta_s.powi(2) * cov[1][1] / delta.powi(4)
                - 2.0 * delta_s * cov[0][1] / delta.powi(3)
        }
    };
    Ok((sigma2.max(0.0), cov))
}

/// Two-sided normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// `r_s ± z_{1−α/2}·√(σ²/n)`.
pub fn pte_ci(r_s: f64, sigma2: f64, n: usize, alpha: f64) -> Interval {
    let half = normal_quantile(1.0 - alpha / 2.0) * (sigma2 / n as f64).sqrt();
    Interval { lower: r_s - half, upper: r_s + half }
}

/// Wald interval for `Δ` from `phi1`.
pub fn delta_ci(delta: f64, iv: &InfluenceValues, alpha: f64) -> Interval {
    pte_ci(delta, iv.covariance()[0][0], iv.n(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfit::{make_folds, Truncation};
    use crate::learners::DesignMatrix;

    fn dataset(a: Vec<u8>, y: Vec<f64>) -> Dataset {
        let n = y.len();
        Dataset::new(DesignMatrix::empty(n).unwrap(), DesignMatrix::empty(n).unwrap(), a, y).unwrap()
    }

    fn injected(n: usize, k: usize, e: f64, m: f64, pi: f64, mu: f64) -> NuisanceEstimates {
        NuisanceEstimates::injected(
            vec![e; n],
            vec![m; n],
            vec![m; n],
            vec![pi; n],
            vec![mu; n],
            vec![mu; n],
            make_folds(n, k, 1).unwrap(),
            Truncation::default(),
        )
        .unwrap()
    }

    #[test]
    fn reduces_to_ipw_with_zero_outcome_models() {
        let a = vec![1, 1, 0, 1, 0, 1, 0, 1, 1, 0];
        let y: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
        let data = dataset(a, y);
        let nz = injected(10, 2, 0.5, 0.0, 0.5, 0.0);
        assert!((aipw_delta(&data, &nz).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn exact_outcome_models_cancel_residuals() {
        let a = vec![1, 0, 1, 0, 1, 1];
        let m0 = vec![0.3, -1.0, 2.0, 0.5, 0.1, 1.0];
        let m1 = vec![1.3, 0.2, 2.5, 1.5, 0.0, 3.0];
        let y: Vec<f64> = (0..6).map(|i| if a[i] == 1 { m1[i] } else { m0[i] }).collect();
        let data = dataset(a, y);
        let e = vec![0.2, 0.7, 0.4, 0.5, 0.9, 0.35];
        let plan = make_folds(6, 2, 4).unwrap();
        let nz = NuisanceEstimates::injected(
            e.clone(),
            m0.clone(),
            m1.clone(),
            e,
            m0.clone(),
            m1.clone(),
            plan,
            Truncation::default(),
        )
        .unwrap();
        let diff: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        assert!((aipw_delta(&data, &nz).unwrap() - mean(&diff)).abs() < 1e-12);
        assert!((aipw_delta_s(&data, &nz).unwrap() - mean(&diff)).abs() < 1e-12);
        assert!((plugin_delta_s(&nz) - mean(&diff)).abs() < 1e-12);
    }

    #[test]
    fn horvitz_thompson_by_hand() {
        let a = vec![1, 0, 1, 1, 0, 0];
        let y = vec![2.0, 1.0, -1.0, 3.0, 0.5, 4.0];
        let pi = vec![0.4, 0.6, 0.5, 0.8, 0.3, 0.5];
        let data = dataset(a, y);
        let plan = make_folds(6, 2, 0).unwrap();
        let z = vec![0.0; 6];
        let nz = NuisanceEstimates::injected(
            pi.clone(),
            z.clone(),
            z.clone(),
            pi,
            z.clone(),
            z,
            plan,
            Truncation::default(),
        )
        .unwrap();
        let hand = (2.0 / 0.4 - 1.0 / 0.4 + -1.0 / 0.5 + 3.0 / 0.8 - 0.5 / 0.7 - 4.0 / 0.5) / 6.0;
        assert!((ipw_delta_s(&data, &nz).unwrap() - hand).abs() < 1e-12);
        assert!((aipw_delta_s(&data, &nz).unwrap() - hand).abs() < 1e-12);
    }

    #[test]
    fn ipw_cancels_for_constant_outcome_at_marginal_score() {
        let a = vec![1, 0, 0, 1, 0];
        let data = dataset(a, vec![1.0; 5]);
        let nz = injected(5, 2, 0.4, 0.0, 0.4, 0.0);
        assert!(ipw_delta_s(&data, &nz).unwrap().abs() < 1e-12);
    }

    #[test]
    fn unbalanced_folds_use_mean_of_fold_means() {
        let plan = FoldPlan::from_assignment(2, vec![1, 1, 2], 0).unwrap();
        assert!((fold_mean_of_means(&[1.0, 3.0, 10.0], &plan) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn constant_data_has_zero_influence() {
        let data = dataset(vec![1, 0, 1, 0], vec![3.0; 4]);
        let nz = injected(4, 2, 0.5, 3.0, 0.5, 3.0);
        let d = aipw_delta(&data, &nz).unwrap();
        let ds = aipw_delta_s(&data, &nz).unwrap();
        let iv = influence_values(&data, &nz, d, ds).unwrap();
        assert!(iv.phi1.iter().chain(&iv.phi2).all(|v| *v == 0.0));
    }

    #[test]
    fn variance_quadratic_form_by_hand() {
        let iv = InfluenceValues { phi1: vec![0.5, -0.5], phi2: vec![1.0, -2.0] };
        let (d, ds) = (2.0, 0.5);
        let (s11, s12, s22) = ((0.25 + 0.25) / 2.0, (0.5 + 1.0) / 2.0, (1.0 + 4.0) / 2.0);
        let (g1, g2) = (ds / (d * d), -1.0 / d);
        let hand = g1 * g1 * s11 + 2.0 * g1 * g2 * s12 + g2 * g2 * s22;
        let (s2, cov) = pte_variance(&iv, d, ds, VarianceForm::DeltaMethod).unwrap();
        assert!((s2 - hand).abs() < 1e-12);
        assert_eq!(cov, [[s11, s12], [s12, s22]]);
        let printed = s11 / 4.0 + 0.25 * s22 / 16.0 - 2.0 * 0.5 * s12 / 8.0;
        let (p2, _) = pte_variance(&iv, d, ds, VarianceForm::SwappedWeights).unwrap();
        assert!((p2 - printed).abs() < 1e-12);
    }

    #[test]
    fn single_term_delta_method() {
        let iv = InfluenceValues { phi1: vec![1.0, -3.0, 2.0], phi2: vec![0.0; 3] };
        let (s2, cov) = pte_variance(&iv, 1.5, 0.7, VarianceForm::DeltaMethod).unwrap();
        assert!((s2 - 0.7f64.powi(2) / 1.5f64.powi(4) * cov[0][0]).abs() < 1e-14);
    }

    #[test]
    fn interval_rules() {
        let ci = pte_ci(0.4, 0.0, 100, 0.05);
        assert_eq!((ci.lower, ci.upper), (0.4, 0.4));
        let z = normal_quantile(0.975);
        assert!((z - 1.959964).abs() < 1e-5);
        let w1 = pte_ci(0.4, 2.0, 100, 0.05).width();
        let w4 = pte_ci(0.4, 2.0, 400, 0.05).width();
        assert!((w1 / w4 - 2.0).abs() < 1e-12);
        assert!(pte_ci(0.4, 2.0, 100, 0.10).width() < w1);
    }
}
