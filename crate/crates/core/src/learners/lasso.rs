use super::cd::{self, CdState};
use super::linear::ols_on_columns;
use super::{check_xy, hyper, DesignMatrix, Family, FittedModel, LearnerSpec, ModelKind, Standardized, TrainingMeta};
use crate::crossfit::balanced_assignment;
use crate::error::Result;

/// Path stops once this fraction of the null deviance is explained.
pub(crate) const DEV_RATIO_MAX: f64 = 0.999;
/// Path stops when the explained fraction changes by less than this.
pub(crate) const DEV_RATIO_MIN_STEP: f64 = 1e-5;

/// Standardized-scale solution at one penalty.
#[derive(Debug, Clone)]
pub(crate) struct PathPoint {
    pub intercept: f64,
    pub beta: Vec<f64>,
}

/// Gaussian lasso path over `lambdas` with warm starts. Returns the
/// solutions actually computed; the path ends early once the fit saturates.
pub(crate) fn gaussian_path(xs: &Standardized, y: &[f64], lambdas: &[f64], early_stop: bool) -> Vec<PathPoint> {
    let curv = cd::curvatures(xs, None);
    let mut st = CdState::null(y, None, xs.p());
    let tss: f64 = st.resid.iter().map(|r| r * r).sum();
    let mut out = Vec::with_capacity(lambdas.len());
    let mut prev_ratio = 0.0;
    let tol = cd::CD_TOL_PATH * tss / xs.n as f64;
    for &lam in lambdas {
        cd::solve(xs, None, &curv, lam, &mut st, tol, None);
        out.push(PathPoint { intercept: st.intercept, beta: st.beta.clone() });
        if early_stop && tss > 0.0 {
            let rss: f64 = st.resid.iter().map(|r| r * r).sum();
            let ratio = 1.0 - rss / tss;
            let nnz = st.beta.iter().filter(|b| **b != 0.0).count();
            if ratio >= DEV_RATIO_MAX
                || (out.len() > 5 && ratio - prev_ratio < DEV_RATIO_MIN_STEP * ratio)
                || nnz + 1 >= xs.n
            {
                break;
            }
            prev_ratio = ratio;
        }
    }
    out
}

pub(crate) fn gaussian_lambda_max(xs: &Standardized, y: &[f64]) -> f64 {
    let n = xs.n as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..xs.p())
        .map(|k| xs.col(k).iter().zip(y).map(|(a, yi)| a * (yi - ybar)).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Maps a standardized-scale solution to original-scale coefficients.
pub(crate) fn unstandardize(x: &DesignMatrix, xs: &Standardized, point: &PathPoint) -> (f64, Vec<f64>) {
    let mut coef = vec![0.0; x.cols()];
    let mut intercept = point.intercept;
    for (k, &j) in xs.active.iter().enumerate() {
        let c = point.beta[k] / x.column_scales()[j];
        coef[j] = c;
        intercept -= c * x.column_means()[j];
    }
    (intercept, coef)
}

/// Linear predictor of a standardized-scale solution on test rows that were
/// standardized with the training statistics.
pub(crate) fn predict_std(test: &[f64], n_test: usize, point: &PathPoint, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = point.intercept);
    for (k, &b) in point.beta.iter().enumerate() {
        if b != 0.0 {
            let col = &test[k * n_test..(k + 1) * n_test];
            for (o, v) in out.iter_mut().zip(col) {
                *o += b * v;
            }
        }
    }
}

pub(crate) struct PathSettings {
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub folds: usize,
}

impl PathSettings {
    pub fn from_spec(spec: &LearnerSpec, n: usize, p: usize) -> Self {
        Self {
            n_lambda: spec.get(hyper::N_LAMBDA).map_or(super::DEFAULT_N_LAMBDA, |v| v as usize).max(1),
            min_ratio: spec.get(hyper::LAMBDA_MIN_RATIO).unwrap_or(if n < p {
                super::DEFAULT_LAMBDA_MIN_RATIO_WIDE
            } else {
                super::DEFAULT_LAMBDA_MIN_RATIO
            }),
            folds: spec.cv_folds(),
        }
    }
}

/// Cross-validated squared error for each of the first `n_keep` penalties.
/// Fold paths that stop early carry their last solution forward.
fn cv_risks(x: &DesignMatrix, y: &[f64], lambdas: &[f64], folds: usize, seed: u64) -> Result<Vec<f64>> {
    let n = x.rows();
    let assignment = balanced_assignment(n, folds.min(n), seed);
    let mut sse = vec![0.0; lambdas.len()];
    for fold in 0..folds.min(n) {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let xtr = x.select_rows(&train)?;
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xte = x.select_rows(&test)?;
        let xs = xtr.standardize();
        let te = xte.standardize_like(&xs, xtr.column_means(), xtr.column_scales());
        let path = gaussian_path(&xs, &ytr, lambdas, true);
        let mut pred = vec![0.0; test.len()];
        for (l, s) in sse.iter_mut().enumerate() {
            let point = &path[l.min(path.len() - 1)];
            predict_std(&te, test.len(), point, &mut pred);
            *s += test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
        }
    }
    Ok(sse.into_iter().map(|s| s / n as f64).collect())
}

/// Lasso by cyclic coordinate descent on the standardized design.
///
/// With `hyper::LAMBDA` set the penalty is fixed; otherwise it is chosen by
/// `cv_folds`-fold cross-validated squared error (minimum rule) over a
/// log-spaced grid from `λ_max = max_j |x̃_jᵀ(y−ȳ)|/n` down to
/// `λ_max · lambda_min_ratio`.
pub fn fit_lasso(x: &DesignMatrix, y: &[f64], spec: &LearnerSpec) -> Result<FittedModel> {
    check_xy(x, y)?;
    let xs = x.standardize();
    let n = x.rows();
    let meta = TrainingMeta { n_train: n, ..TrainingMeta::default() };
    let lmax = gaussian_lambda_max(&xs, y);
    if xs.p() == 0 || lmax == 0.0 {
        let mut m = FittedModel::constant(ModelKind::Regressor, Family::Lasso, crate::stats::mean(y), x.cols(), n);
        m.meta.lambda = Some(spec.get(hyper::LAMBDA).unwrap_or(0.0));
        return Ok(m);
    }
    if let Some(lam) = spec.get(hyper::LAMBDA) {
        let curv = cd::curvatures(&xs, None);
        let mut st = CdState::null(y, None, xs.p());
        let tss: f64 = st.resid.iter().map(|r| r * r).sum();
        let out = cd::solve(&xs, None, &curv, lam, &mut st, cd::CD_TOL_EXACT * tss / n as f64, None);
        let mut meta = meta;
        if !out.converged {
            meta.warnings.push(format!("coordinate descent stopped after {} sweeps without converging", out.sweeps));
        }
        let point = PathPoint { intercept: st.intercept, beta: st.beta };
        let (b0, coef) = unstandardize(x, &xs, &point);
        let mut m = FittedModel::linear(ModelKind::Regressor, Family::Lasso, b0, coef, meta);
        m.meta.lambda = Some(lam);
        return Ok(m);
    }
    let settings = PathSettings::from_spec(spec, n, xs.p());
    let grid = cd::lambda_grid(lmax, settings.n_lambda, settings.min_ratio);
    let path = gaussian_path(&xs, y, &grid, true);
    let kept = &grid[..path.len()];
    let (best, risk) = if kept.len() == 1 {
        (0, None)
    } else {
        let risks = cv_risks(x, y, kept, settings.folds, spec.seed)?;
        let best = argmin(&risks);
        (best, Some(risks[best]))
    };
    let (b0, coef) = unstandardize(x, &xs, &path[best]);
    let mut m = FittedModel::linear(ModelKind::Regressor, Family::Lasso, b0, coef, meta);
    m.meta.lambda = Some(kept[best]);
    m.meta.cv_risk = risk;
    Ok(m)
}

pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, r) in v.iter().enumerate() {
        if *r < v[best] {
            best = i;
        }
    }
    best
}

/// Original-scale column indices with a nonzero standardized coefficient.
pub(crate) fn support_of(xs: &Standardized, point: &PathPoint) -> Vec<usize> {
    let mut cols: Vec<usize> =
        point.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(k, _)| xs.active[k]).collect();
    cols.sort_unstable();
    cols
}

/// Largest support a least-squares refit is attempted on.
fn refit_limit(n: usize) -> usize {
    n.saturating_sub(2)
}

/// Cross-validated squared error of the least-squares refit on each
/// penalty's lasso support. Supports too large to refit score the lasso
/// fit itself.
fn relaxed_cv_risks(x: &DesignMatrix, y: &[f64], lambdas: &[f64], folds: usize, seed: u64) -> Result<Vec<f64>> {
    let n = x.rows();
    let assignment = balanced_assignment(n, folds.min(n), seed);
    let mut sse = vec![0.0; lambdas.len()];
    for fold in 0..folds.min(n) {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let xtr = x.select_rows(&train)?;
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xte = x.select_rows(&test)?;
        let xs = xtr.standardize();
        let te = xte.standardize_like(&xs, xtr.column_means(), xtr.column_scales());
        let path = gaussian_path(&xs, &ytr, lambdas, true);
        let mut pred = vec![0.0; test.len()];
        let mut last: Option<(Vec<usize>, f64)> = None;
        for (l, s) in sse.iter_mut().enumerate() {
            let point = &path[l.min(path.len() - 1)];
            let cols = support_of(&xs, point);
            if let Some((prev, err)) = &last {
                if *prev == cols {
                    *s += err;
                    continue;
                }
            }
            let refit =
                if cols.len() <= refit_limit(train.len()) { ols_on_columns(&xtr, &ytr, &cols).ok() } else { None };
            match refit {
                Some((b0, beta)) => {
                    for (r, p) in pred.iter_mut().enumerate() {
                        *p = b0 + cols.iter().zip(&beta).map(|(&j, b)| b * xte.get(r, j)).sum::<f64>();
                    }
                }
                None => predict_std(&te, test.len(), point, &mut pred),
            }
            let err = test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
            *s += err;
            last = Some((cols, err));
        }
    }
    Ok(sse.into_iter().map(|s| s / n as f64).collect())
}

/// Least-squares refit on `support`, or the lasso fit `fallback` (flagged)
/// when the support is too large or the restricted problem is rank
/// deficient.
fn refit_or_fallback(x: &DesignMatrix, y: &[f64], support: Vec<usize>, mut fallback: FittedModel) -> FittedModel {
    fallback.family = Family::RelaxedLasso;
    if support.is_empty() {
        return fallback;
    }
    if support.len() > x.rows().saturating_sub(1) {
        fallback.meta.relaxed_fallback = true;
        fallback.meta.warnings.push(format!(
            "relaxed refit skipped: support of {} exceeds n - 1 = {}",
            support.len(),
            x.rows() - 1
        ));
        return fallback;
    }
    match ols_on_columns(x, y, &support) {
        Ok((b0, beta)) => {
            let mut coef = vec![0.0; x.cols()];
            for (k, &j) in support.iter().enumerate() {
                coef[j] = beta[k];
            }
            let mut m = FittedModel::linear(ModelKind::Regressor, Family::RelaxedLasso, b0, coef, fallback.meta);
            // keep the selected support even if a refit coefficient is exactly zero
            m.support = support;
            m
        }
        Err(e) => {
            fallback.meta.relaxed_fallback = true;
            fallback.meta.warnings.push(format!("relaxed refit failed: {e}"));
            fallback
        }
    }
}

/// Relaxed lasso: lasso selects the support, unpenalized least squares
/// refits on it. With `hyper::RELAX_CV` set (and no fixed `hyper::LAMBDA`)
/// the penalty minimizes the cross-validated error of the refit rather
/// than of the lasso fit. Keeps the
/// lasso fit (flagged) when the support has more than `n - 1` columns or
/// the restricted problem is rank deficient.
pub fn fit_relaxed_lasso(x: &DesignMatrix, y: &[f64], spec: &LearnerSpec) -> Result<FittedModel> {
    check_xy(x, y)?;
    let xs = x.standardize();
    let n = x.rows();
    let lmax = gaussian_lambda_max(&xs, y);
    if spec.get(hyper::LAMBDA).is_some()
        || spec.get(hyper::RELAX_CV).unwrap_or(0.0) == 0.0
        || xs.p() == 0
        || lmax == 0.0
    {
        let stage1 = fit_lasso(x, y, spec)?;
        let support = stage1.support.clone();
        return Ok(refit_or_fallback(x, y, support, stage1));
    }
    let settings = PathSettings::from_spec(spec, n, xs.p());
    let grid = cd::lambda_grid(lmax, settings.n_lambda, settings.min_ratio);
    let path = gaussian_path(&xs, y, &grid, true);
    let kept = &grid[..path.len()];
    let (best, risk) = if kept.len() == 1 {
        (0, None)
    } else {
        let risks = relaxed_cv_risks(x, y, kept, settings.folds, spec.seed)?;
        let best = argmin(&risks);
        (best, Some(risks[best]))
    };
    let (b0, coef) = unstandardize(x, &xs, &path[best]);
    let meta = TrainingMeta { n_train: n, lambda: Some(kept[best]), cv_risk: risk, ..TrainingMeta::default() };
    let stage1 = FittedModel::linear(ModelKind::Regressor, Family::Lasso, b0, coef, meta);
    Ok(refit_or_fallback(x, y, support_of(&xs, &path[best]), stage1))
}
