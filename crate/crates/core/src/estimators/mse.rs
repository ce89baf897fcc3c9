use serde::{Deserialize, Serialize};

use super::aipw::fold_mean_of_means;
use crate::crossfit::{arm_minimum, balanced_assignment, Dataset, NuisanceEstimates};
use crate::error::{PteError, Result};
use crate::learners::{fit_regressor, predict, DesignMatrix, LearnerSpec};
use crate::rng::derive_seed;

pub const NULL_MSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePteEstimate {
    /// Prediction MSE given covariates and surrogates.
    pub m_psi: f64,
    /// Prediction MSE given covariates only.
    pub m_0: f64,
    /// `1 − m_psi/m_0`.
    pub r_m: f64,
    /// Negative conditional-variance predictions set to zero.
    pub floored: usize,
}

/// `mean(A·h₁ − (A − ê)·v₁ + (1 − A)·h₀ + (A − ê)·v₀)` per row, where `h_a`
/// are conditional variances given `(X, S)` and `v_a` their regressions
/// on `X`.
pub fn mse_terms(a: &[u8], e: &[f64], h1: &[f64], h0: &[f64], v1: &[f64], v0: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let ai = f64::from(a[i]);
            ai * h1[i] - (ai - e[i]) * v1[i] + (1.0 - ai) * h0[i] + (ai - e[i]) * v0[i]
        })
        .collect()
}

fn floor_zero(v: Vec<f64>, count: &mut usize) -> Vec<f64> {
    v.into_iter()
        .map(|p| {
            if p < 0.0 {
                *count += 1;
                0.0
            } else {
                p
            }
        })
        .collect()
}

struct Split {
    fit: Vec<usize>,
    var: Vec<usize>,
}

/// Conditional variance of `Y` given `z` in one arm, and its regression on
/// `X`: the mean model is fit on `var` rows, squared residuals on `fit`
/// rows are regressed on `z`, and those fitted variances on `var` rows are
/// regressed on `X`. Returns predictions at `test` rows.
#[allow(clippy::too_many_arguments)]
fn nested_variance(
    z: &DesignMatrix,
    x: &DesignMatrix,
    y: &[f64],
    split: &Split,
    test: &[usize],
    spec: &LearnerSpec,
    seed: u64,
    floored: &mut usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let with_seed = |s: u64| {
        let mut l = spec.clone();
        l.seed = derive_seed(seed, s);
        l
    };
    let y_var: Vec<f64> = split.var.iter().map(|&i| y[i]).collect();
    let mean_model = fit_regressor(&z.select_rows(&split.var)?, &y_var, &with_seed(0))?;
    let z_fit = z.select_rows(&split.fit)?;
    let sq: Vec<f64> = predict(&mean_model, &z_fit)?.iter().zip(&split.fit).map(|(m, &i)| (y[i] - m).powi(2)).collect();
    let eta = fit_regressor(&z_fit, &sq, &with_seed(1))?;
    let eta_var = floor_zero(predict(&eta, &z.select_rows(&split.var)?)?, floored);
    let sigma = fit_regressor(&x.select_rows(&split.var)?, &eta_var, &with_seed(2))?;
    let h = floor_zero(predict(&eta, &z.select_rows(test)?)?, floored);
    let v = floor_zero(predict(&sigma, &x.select_rows(test)?)?, floored);
    Ok((h, v))
}

/// MSE-based PTE over the folds of `nz.plan`, using `ê` from `nz`.
///
/// Within each fold's complement and arm, rows are split in two halves:
/// squared residuals are formed and regressed on one half, and the
/// regression of those variances on `X` is fit on the other. The null MSE
/// uses the same construction with `X` in place of `(X, S)`.
pub fn mse_pte_from_nuisances(
    data: &Dataset,
    nz: &NuisanceEstimates,
    outcome_spec: &LearnerSpec,
    seed: u64,
) -> Result<MsePteEstimate> {
    let plan = &nz.plan;
    let n = data.n();
    let xs = data.xs()?;
    let need = arm_minimum(outcome_spec);
    let mut h = [vec![0.0; n], vec![0.0; n]];
    let mut v = [vec![0.0; n], vec![0.0; n]];
    let mut t = [vec![0.0; n], vec![0.0; n]];
    let mut w = [vec![0.0; n], vec![0.0; n]];
    let mut floored = 0;
    for fold in 1..=plan.k {
        let mut run = |floored: &mut usize| -> Result<()> {
            let train = plan.train_rows(fold);
            let test = plan.test_rows(fold);
            let fold_seed = derive_seed(seed, fold as u64);
            let halves = balanced_assignment(train.len(), 2, fold_seed);
            for arm in [0u8, 1] {
                let pick = |half: usize| -> Vec<usize> {
                    train
                        .iter()
                        .zip(&halves)
                        .filter(|(&i, &hf)| hf == half && data.a[i] == arm)
                        .map(|(&i, _)| i)
                        .collect()
                };
                let split = Split { fit: pick(0), var: pick(1) };
                for part in [&split.fit, &split.var] {
                    if part.len() < need {
                        return Err(PteError::Data(format!(
                            "arm A={arm} has {} rows in a nested sub-fold, at least {need} required",
                            part.len()
                        )));
                    }
                }
                let arm_seed = derive_seed(fold_seed, 10 + u64::from(arm));
                let (hs, vs) = nested_variance(
                    &xs,
                    &data.x,
                    &data.y,
                    &split,
                    &test,
                    outcome_spec,
                    derive_seed(arm_seed, 0),
                    floored,
                )?;
                let (ts, ws) = nested_variance(
                    &data.x,
                    &data.x,
                    &data.y,
                    &split,
                    &test,
                    outcome_spec,
                    derive_seed(arm_seed, 1),
                    floored,
                )?;
                let a = usize::from(arm);
                for (r, &i) in test.iter().enumerate() {
                    h[a][i] = hs[r];
                    v[a][i] = vs[r];
                    t[a][i] = ts[r];
                    w[a][i] = ws[r];
                }
            }
            Ok(())
        };
        run(&mut floored).map_err(|e| e.in_fold(fold))?;
    }
    let m_psi = fold_mean_of_means(&mse_terms(&data.a, &nz.e_hat, &h[1], &h[0], &v[1], &v[0]), plan);
    let m_0 = fold_mean_of_means(&mse_terms(&data.a, &nz.e_hat, &t[1], &t[0], &w[1], &w[0]), plan);
    let (m_psi, m_0) = (m_psi.max(0.0), m_0.max(0.0));
    if m_0 < NULL_MSE_FLOOR {
        return Err(PteError::NullMseDegenerate { m_0 });
    }
    Ok(MsePteEstimate { m_psi, m_0, r_m: 1.0 - m_psi / m_0, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfit::{cross_fit_nuisances, make_folds, Truncation};
    use crate::learners::Family;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_variances_give_constant_mse() {
        let a = [1u8, 0, 0, 1, 1, 0, 1];
        let e = [0.5; 7];
        let c = [2.75; 7];
        let terms = mse_terms(&a, &e, &c, &c, &c, &c);
        assert!(terms.iter().all(|t| *t == 2.75));
    }

    fn simulate(n: usize, seed: u64, s_matters: bool, noise: f64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let a: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let s: Vec<f64> = (0..n).map(|i| x[i] * 0.5 + f64::from(a[i]) + rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| x[i] + if s_matters { 2.0 * s[i] } else { 0.0 } + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::new(DesignMatrix::from_columns(n, &[x]).unwrap(), DesignMatrix::from_columns(n, &[s]).unwrap(), a, y)
            .unwrap()
    }

    fn run(data: &Dataset) -> MsePteEstimate {
        let plan = make_folds(data.n(), 4, 2).unwrap();
        let ols = LearnerSpec::new(Family::Ols);
        let nz =
            cross_fit_nuisances(data, &plan, &ols, &LearnerSpec::new(Family::Logistic), Truncation::default()).unwrap();
        mse_pte_from_nuisances(data, &nz, &ols, 5).unwrap()
    }

    #[test]
    fn noiseless_surrogate_outcome_explains_everything() {
        let data = simulate(2000, 1, true, 0.0);
        let est = run(&data);
        let var_y = crate::stats::pop_variance(&data.y);
        assert!(est.m_psi < 0.01 * var_y, "{est:?}");
        assert!(est.r_m > 0.95);
        assert_eq!(est.r_m, 1.0 - est.m_psi / est.m_0);
    }

    #[test]
    fn irrelevant_surrogate_explains_nothing() {
        let data = simulate(2000, 2, false, 1.0);
        let est = run(&data);
        assert!(est.r_m.abs() < 0.1, "{est:?}");
    }

    #[test]
    fn degenerate_null_mse_is_an_error() {
        let mut data = simulate(400, 3, false, 0.0);
        data.y = data.x.column(0).to_vec();
        let plan = make_folds(400, 4, 2).unwrap();
        let ols = LearnerSpec::new(Family::Ols);
        let nz = cross_fit_nuisances(&data, &plan, &ols, &LearnerSpec::new(Family::Logistic), Truncation::default())
            .unwrap();
        assert!(matches!(mse_pte_from_nuisances(&data, &nz, &ols, 1), Err(PteError::NullMseDegenerate { .. })));
    }
}
