//! Point estimates of `Δ`, `Δ_S` and `R_S = 1 − Δ_S/Δ`, influence-value
//! variance, confidence intervals, perturbation resampling and the
//! MSE-based PTE.

mod aipw;
mod mse;
mod resample;

use serde::{Deserialize, Serialize};

use crate::crossfit::{cross_fit_nuisances, make_folds, Dataset, NuisanceEstimates, Truncation, DEFAULT_K_FOLDS};
use crate::error::{PteError, Result};
use crate::learners::{Family, LearnerSpec};
use crate::rng::derive_seed;
use crate::stats::{pop_variance, sample_sd};

pub use aipw::{
    aipw_delta, aipw_delta_s, aipw_terms, delta_ci, fold_mean_of_means, influence_values, ipw_delta_s, plugin_delta_s,
    pte_ci, pte_variance, InfluenceValues, Interval, VarianceForm,
};
pub use mse::{mse_pte_from_nuisances, mse_terms, MsePteEstimate, NULL_MSE_FLOOR};
pub use resample::{perturb_resample, Resampled, MIN_RESAMPLES};

const STREAM_FOLDS: u64 = 1;
const STREAM_RESAMPLE: u64 = 2;
const STREAM_MSE: u64 = 3;

/// Relative factor of the default `|Δ̂|` threshold, applied to `sd(Y)`.
pub const DELTA_THRESHOLD_SD_FACTOR: f64 = 1e-8;
/// Absolute factor of the default threshold, applied to `max|Y|`; keeps
/// rounding noise from a constant outcome below the threshold.
pub const DELTA_THRESHOLD_ABS_FACTOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub k_folds: usize,
    /// Learner for `m̂_a` and `μ̂_a`.
    pub outcome_learner: LearnerSpec,
    /// Learner for `ê` and `π̂`.
    pub score_learner: LearnerSpec,
    pub truncation: Truncation,
    pub alpha: f64,
    /// Perturbation replicates; 0 disables resampling.
    pub resamples: usize,
    pub seed: u64,
    #[serde(default)]
    pub variance_form: VarianceForm,
    /// Overrides the default `|Δ̂|` threshold.
    #[serde(default)]
    pub delta_threshold: Option<f64>,
    #[serde(default)]
    pub mse_pte: bool,
}

impl EstimatorConfig {
    /// Relaxed-lasso nuisances (relaxed logistic lasso for the scores).
    pub fn dr_lasso() -> Self {
        Self::with_learners(LearnerSpec::new(Family::RelaxedLasso), LearnerSpec::new(Family::RelaxedLasso))
    }

    /// Stacked nuisances.
    pub fn dr_sl() -> Self {
        Self::with_learners(LearnerSpec::default_regression_stack(), LearnerSpec::default_classification_stack())
    }

    pub fn with_learners(outcome_learner: LearnerSpec, score_learner: LearnerSpec) -> Self {
        Self {
            k_folds: DEFAULT_K_FOLDS,
            outcome_learner,
            score_learner,
            truncation: Truncation::default(),
            alpha: 0.05,
            resamples: 0,
            seed: 0,
            variance_form: VarianceForm::DeltaMethod,
            delta_threshold: None,
            mse_pte: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(PteError::Config(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PteError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.resamples != 0 && self.resamples < MIN_RESAMPLES {
            return Err(PteError::Config(format!(
                "resamples must be 0 or at least {MIN_RESAMPLES}, got {}",
                self.resamples
            )));
        }
        if let Some(t) = self.delta_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(PteError::Config(format!("delta threshold must be finite and non-negative, got {t}")));
            }
        }
        Truncation::new(self.truncation.lower, self.truncation.upper)?;
        self.outcome_learner.validate()?;
        self.score_learner.validate()
    }

    /// `|Δ̂|` at or below this value makes the PTE ill-defined.
    pub fn delta_threshold_for(&self, y: &[f64]) -> f64 {
        self.delta_threshold.unwrap_or_else(|| default_delta_threshold(y))
    }
}

/// `max(1e−8·sd(Y), 1e−10·max|Y|)`.
pub fn default_delta_threshold(y: &[f64]) -> f64 {
    let sd = if y.len() > 1 { sample_sd(y) } else { 0.0 };
    let max_abs = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (DELTA_THRESHOLD_SD_FACTOR * sd).max(DELTA_THRESHOLD_ABS_FACTOR * max_abs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub k_folds: usize,
    pub fold_seed: u64,
    pub fold_sizes: Vec<usize>,
    pub truncation: Truncation,
    pub e_clamped: usize,
    pub pi_clamped: usize,
    pub delta_threshold: f64,
    pub outcome_learner: LearnerSpec,
    pub score_learner: LearnerSpec,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PteEstimate {
    pub n: usize,
    pub delta: f64,
    pub delta_s: f64,
    pub r_s: f64,
    /// Asymptotic variance of `√n(R̂_S − R_S)`.
    pub sigma2: f64,
    /// `√(σ²/n)`.
    pub se: f64,
    pub ci: Interval,
    pub alpha: f64,
    pub variance_form: VarianceForm,
    /// `n⁻¹Σφᵢφᵢᵀ` for `(Δ̂, Δ̂_S)`.
    pub cov2x2: [[f64; 2]; 2],
    pub delta_ci: Interval,
    pub plugin_delta_s: f64,
    pub ipw_delta_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resampling: Option<ResamplingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<MsePteEstimate>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub influence: Option<InfluenceValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplingSummary {
    pub resamples: usize,
    pub missing: usize,
    pub ci: Interval,
    pub sd_delta_star: f64,
    pub sd_delta_s_star: f64,
}

/// Warning attached when `R̂_S` falls outside `[0, 1]`.
pub const OUT_OF_RANGE_WARNING: &str = "estimated PTE outside [0, 1]: the conditions that guarantee 0 <= R_S <= 1 \
     (surrogate effect and surrogate-outcome association in the direction of the treatment effect) may not hold";

/// Full pipeline: folds, cross-fitted nuisances, AIPW estimates, variance
/// and intervals.
pub fn estimate_pte(data: &Dataset, config: &EstimatorConfig) -> Result<PteEstimate> {
    config.validate()?;
    data.require_both_arms()?;
    let plan = make_folds(data.n(), config.k_folds, derive_seed(config.seed, STREAM_FOLDS))?;
    let nz = cross_fit_nuisances(data, &plan, &config.outcome_learner, &config.score_learner, config.truncation)?;
    estimate_from_nuisances(data, &nz, config)
}

/// Everything after nuisance estimation; accepts injected nuisances.
pub fn estimate_from_nuisances(
    data: &Dataset,
    nz: &NuisanceEstimates,
    config: &EstimatorConfig,
) -> Result<PteEstimate> {
    config.validate()?;
    let n = data.n();
    if nz.n() != n {
        return Err(PteError::Data(format!("nuisances cover {} rows but the dataset has {n}", nz.n())));
    }
    let delta = aipw_delta(data, nz)?;
    let delta_s = aipw_delta_s(data, nz)?;
    let iv = influence_values(data, nz, delta, delta_s)?;
    let dci = delta_ci(delta, &iv, config.alpha);
    let threshold = config.delta_threshold_for(&data.y);
    if delta.abs() <= threshold {
        return Err(PteError::PteIllDefined {
            delta,
            ci_lower: dci.lower,
            ci_upper: dci.upper,
            level: 100.0 * (1.0 - config.alpha),
        });
    }
    let r_s = 1.0 - delta_s / delta;
    let (sigma2, cov2x2) = pte_variance(&iv, delta, delta_s, config.variance_form)?;
    let ci = pte_ci(r_s, sigma2, n, config.alpha);
    let mut warnings: Vec<String> = nz
        .folds
        .iter()
        .flat_map(|f| {
            [("e", &f.e), ("m0", &f.m0), ("m1", &f.m1), ("pi", &f.pi), ("mu0", &f.mu0), ("mu1", &f.mu1)]
                .into_iter()
                .flat_map(move |(name, m)| m.warnings.iter().map(move |w| format!("fold {} {name}: {w}", f.fold)))
        })
        .collect();
    if !(0.0..=1.0).contains(&r_s) {
        warnings.push(OUT_OF_RANGE_WARNING.to_string());
    }
    let resampling = if config.resamples > 0 {
        let r = perturb_resample(
            &iv,
            delta,
            delta_s,
            config.resamples,
            config.alpha,
            derive_seed(config.seed, STREAM_RESAMPLE),
            threshold,
        )?;
        if r.missing > 0 {
            warnings.push(format!("{} resampled treatment effects below threshold were excluded", r.missing));
        }
        Some(ResamplingSummary {
            resamples: config.resamples,
            missing: r.missing,
            ci: r.ci,
            sd_delta_star: pop_variance(&r.delta_star).sqrt(),
            sd_delta_s_star: pop_variance(&r.delta_s_star).sqrt(),
        })
    } else {
        None
    };
    let mse = if config.mse_pte {
        Some(mse_pte_from_nuisances(data, nz, &config.outcome_learner, derive_seed(config.seed, STREAM_MSE))?)
    } else {
        None
    };
    Ok(PteEstimate {
        n,
        delta,
        delta_s,
        r_s,
        sigma2,
        se: (sigma2 / n as f64).sqrt(),
        ci,
        alpha: config.alpha,
        variance_form: config.variance_form,
        cov2x2,
        delta_ci: dci,
        plugin_delta_s: plugin_delta_s(nz),
        ipw_delta_s: ipw_delta_s(data, nz)?,
        resampling,
        mse,
        diagnostics: Diagnostics {
            k_folds: nz.plan.k,
            fold_seed: nz.plan.seed,
            fold_sizes: nz.plan.sizes(),
            truncation: nz.truncation,
            e_clamped: nz.e_clamped,
            pi_clamped: nz.pi_clamped,
            delta_threshold: threshold,
            outcome_learner: config.outcome_learner.clone(),
            score_learner: config.score_learner.clone(),
            warnings,
        },
        influence: Some(iv),
    })
}

/// MSE-based PTE with its own cross-fitted nuisances.
pub fn estimate_mse_pte(data: &Dataset, config: &EstimatorConfig) -> Result<MsePteEstimate> {
    config.validate()?;
    data.require_both_arms()?;
    let plan = make_folds(data.n(), config.k_folds, derive_seed(config.seed, STREAM_FOLDS))?;
    let nz = cross_fit_nuisances(data, &plan, &config.outcome_learner, &config.score_learner, config.truncation)?;
    mse_pte_from_nuisances(data, &nz, &config.outcome_learner, derive_seed(config.seed, STREAM_MSE))
}
