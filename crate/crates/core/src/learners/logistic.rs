use nalgebra::{DMatrix, DVector};

use super::cd::{self, CdState};
use super::lasso::{argmin, support_of, unstandardize, PathPoint, PathSettings, DEV_RATIO_MAX, DEV_RATIO_MIN_STEP};
use super::{
    check_binary, hyper, predict, DesignMatrix, Family, FittedModel, LearnerSpec, ModelKind, Standardized, TrainingMeta,
};
use crate::crossfit::balanced_assignment;
use crate::error::{PteError, Result};
use crate::stats::sigmoid;

/// Probability clip for the constant model fitted when one class is absent.
pub(crate) const PROB_CLIP: f64 = 1e-6;
/// Cap on the Euclidean norm of standardized slopes; exceeding it during
/// IRLS is treated as complete separation.
pub(crate) const SEPARATION_CAP: f64 = 30.0;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const WEIGHT_FLOOR: f64 = 1e-5;

/// `Σ a·η − log(1 + e^η)`, evaluated stably.
fn log_likelihood(a: &[f64], eta: &[f64]) -> f64 {
    a.iter().zip(eta).map(|(ai, e)| ai * e - (e.max(0.0) + (-e.abs()).exp().ln_1p())).sum()
}

fn binomial_deviance(a: &[f64], p: &[f64]) -> f64 {
    -2.0 * a
        .iter()
        .zip(p)
        .map(|(ai, pi)| {
            let q = pi.clamp(1e-10, 1.0 - 1e-10);
            ai * q.ln() + (1.0 - ai) * (1.0 - q).ln()
        })
        .sum::<f64>()
}

fn as_f64(a: &[u8]) -> Vec<f64> {
    a.iter().map(|&v| v as f64).collect()
}

fn class_rate(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

fn single_class_model(family: Family, rate: f64, x: &DesignMatrix) -> FittedModel {
    let mut m = FittedModel::constant(
        ModelKind::Classifier,
        family,
        rate.clamp(PROB_CLIP, 1.0 - PROB_CLIP),
        x.cols(),
        x.rows(),
    );
    m.meta.single_class = true;
    m.meta.warnings.push("only one class present; constant probability".into());
    m
}

struct IrlsFit {
    intercept: f64,
    beta: Vec<f64>,
    separated: bool,
}

fn slope_norm(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b * b).sum::<f64>().sqrt()
}

/// Newton–Raphson (IRLS) maximum likelihood on a standardized design with
/// step halving. Stops when the log-likelihood changes by less than
/// `IRLS_TOL`; caps the slope norm at [`SEPARATION_CAP`].
fn irls(xs: &Standardized, a: &[f64]) -> Result<IrlsFit> {
    let n = xs.n;
    let p = xs.p();
    let z = DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { 1.0 } else { xs.col(k - 1)[i] });
    let rate = class_rate(a);
    let mut theta = DVector::zeros(p + 1);
    theta[0] = (rate / (1.0 - rate)).ln();
    let mut eta: Vec<f64> = (&z * &theta).iter().copied().collect();
    let mut ll = log_likelihood(a, &eta);
    let mut separated = false;
    for _ in 0..IRLS_MAX_ITER {
        let mu: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-10)).collect();
        let resid = DVector::from_iterator(n, a.iter().zip(&mu).map(|(ai, m)| ai - m));
        let grad = z.transpose() * resid;
        let mut zw = z.clone();
        for (i, wi) in w.iter().enumerate() {
            zw.row_mut(i).scale_mut(*wi);
        }
        let h = z.transpose() * zw;
        let mut jitter = 1e-10;
        let step = loop {
            let mut hj = h.clone();
            for k in 0..=p {
                hj[(k, k)] += jitter;
            }
            if let Some(ch) = hj.cholesky() {
                break ch.solve(&grad);
            }
            jitter *= 100.0;
            if jitter > 1e6 {
                return Err(PteError::Numerical("IRLS Hessian is not positive definite".into()));
            }
        };
        let mut t = 1.0;
        let (mut new_theta, mut new_eta, mut new_ll);
        loop {
            new_theta = &theta + &step * t;
            new_eta = (&z * &new_theta).iter().copied().collect::<Vec<f64>>();
            new_ll = log_likelihood(a, &new_eta);
            if new_ll >= ll - 1e-12 || t < 1e-9 {
                break;
            }
            t *= 0.5;
        }
        let norm = slope_norm(&new_theta.as_slice()[1..]);
        if norm > SEPARATION_CAP {
            let s = SEPARATION_CAP / norm;
            for k in 1..=p {
                new_theta[k] *= s;
            }
            theta = new_theta;
            separated = true;
            break;
        }
        let change = (new_ll - ll).abs();
        theta = new_theta;
        eta = new_eta;
        ll = new_ll;
        if change < IRLS_TOL {
            break;
        }
    }
    Ok(IrlsFit { intercept: theta[0], beta: theta.iter().skip(1).copied().collect(), separated })
}

/// Unpenalized logistic regression by IRLS. One class absent gives a
/// constant-probability model at the empirical rate clipped to
/// `[1e-6, 1 - 1e-6]`; separation caps the coefficients and sets a flag.
pub fn fit_logistic(x: &DesignMatrix, a: &[u8], _spec: &LearnerSpec) -> Result<FittedModel> {
    check_binary(x, a)?;
    let af = as_f64(a);
    let rate = class_rate(&af);
    if rate == 0.0 || rate == 1.0 {
        return Ok(single_class_model(Family::Logistic, rate, x));
    }
    let xs = x.standardize();
    if xs.p() + 1 > x.rows() {
        return Err(PteError::Learner(format!(
            "logistic regression with {} predictors needs more than {} rows",
            xs.p(),
            x.rows()
        )));
    }
    let fit = irls(&xs, &af)?;
    let (b0, coef) = unstandardize(x, &xs, &PathPoint { intercept: fit.intercept, beta: fit.beta });
    let mut m = FittedModel::linear(
        ModelKind::Classifier,
        Family::Logistic,
        b0,
        coef,
        TrainingMeta { n_train: x.rows(), separation: fit.separated, ..TrainingMeta::default() },
    );
    if fit.separated {
        m.meta.warnings.push("complete separation detected; coefficients capped".into());
    }
    Ok(m)
}

/// State and scratch space for penalized IRLS along a path.
struct PenalizedIrls<'a> {
    xs: &'a Standardized,
    a: &'a [f64],
    state: CdState,
    eta: Vec<f64>,
    /// Inner coordinate-descent threshold.
    tol: f64,
}

impl<'a> PenalizedIrls<'a> {
    fn new(xs: &'a Standardized, a: &'a [f64], tol_frac: f64) -> Self {
        let rate = class_rate(a);
        let b0 = (rate / (1.0 - rate)).ln();
        let n = xs.n;
        let null_dev = -2.0 * log_likelihood(a, &vec![b0; n]) / n as f64;
        Self {
            tol: tol_frac * null_dev,
            xs,
            a,
            state: CdState { intercept: b0, beta: vec![0.0; xs.p()], resid: vec![0.0; n] },
            eta: vec![b0; n],
        }
    }

    fn refresh_eta(&mut self) {
        let st = &self.state;
        self.eta.iter_mut().for_each(|e| *e = st.intercept);
        for (k, &b) in st.beta.iter().enumerate() {
            if b != 0.0 {
                for (e, v) in self.eta.iter_mut().zip(self.xs.col(k)) {
                    *e += b * v;
                }
            }
        }
    }

    fn penalized_objective(&self, lambda: f64) -> f64 {
        -log_likelihood(self.a, &self.eta) / self.xs.n as f64
            + lambda * self.state.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Solves the penalized problem at `lambda` from the current state.
    fn solve(&mut self, lambda: f64) {
        let mut obj = self.penalized_objective(lambda);
        for _ in 0..IRLS_MAX_ITER {
            let mu: Vec<f64> = self.eta.iter().map(|e| sigmoid(*e)).collect();
            let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(WEIGHT_FLOOR)).collect();
            let z: Vec<f64> = self
                .eta
                .iter()
                .zip(self.a)
                .zip(mu.iter().zip(&w))
                .map(|((e, ai), (m, wi))| e + (ai - m) / wi)
                .collect();
            let prev = self.state.clone();
            self.state.reset_residuals(self.xs, &z);
            let curv = cd::curvatures(self.xs, Some(&w));
            cd::solve(self.xs, Some(&w), &curv, lambda, &mut self.state, self.tol, None);
            self.refresh_eta();
            let mut new_obj = self.penalized_objective(lambda);
            // halve towards the previous iterate if the quadratic step overshot
            let mut t = 1.0;
            let target = self.state.clone();
            while new_obj > obj + 1e-12 && t > 1e-6 {
                t *= 0.5;
                self.state.intercept = prev.intercept + t * (target.intercept - prev.intercept);
                for k in 0..self.state.beta.len() {
                    self.state.beta[k] = prev.beta[k] + t * (target.beta[k] - prev.beta[k]);
                }
                self.refresh_eta();
                new_obj = self.penalized_objective(lambda);
            }
            let change = (obj - new_obj).abs();
            obj = new_obj;
            let sum_w: f64 = w.iter().sum::<f64>() / self.xs.n as f64;
            let moved = curv
                .iter()
                .zip(self.state.beta.iter().zip(&prev.beta))
                .map(|(v, (b, b0))| v * (b - b0) * (b - b0))
                .fold(sum_w * (self.state.intercept - prev.intercept).powi(2), f64::max);
            if change < IRLS_TOL || moved < self.tol || slope_norm(&self.state.beta) > SEPARATION_CAP {
                break;
            }
        }
    }

    fn point(&self) -> PathPoint {
        PathPoint { intercept: self.state.intercept, beta: self.state.beta.clone() }
    }
}

fn logistic_lambda_max(xs: &Standardized, a: &[f64]) -> f64 {
    let n = xs.n as f64;
    let abar = class_rate(a);
    (0..xs.p())
        .map(|k| xs.col(k).iter().zip(a).map(|(v, ai)| v * (ai - abar)).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Logistic-lasso path with warm starts. Ends early on deviance saturation
/// or when the slope norm passes the separation cap (that point is dropped).
fn logistic_path(xs: &Standardized, a: &[f64], lambdas: &[f64]) -> (Vec<PathPoint>, bool) {
    let mut solver = PenalizedIrls::new(xs, a, cd::CD_TOL_PATH);
    let null_dev = -2.0 * log_likelihood(a, &solver.eta);
    let mut out = Vec::with_capacity(lambdas.len());
    let mut prev_ratio = 0.0;
    let mut separated = false;
    for &lam in lambdas {
        solver.solve(lam);
        if slope_norm(&solver.state.beta) > SEPARATION_CAP {
            separated = true;
            if out.is_empty() {
                out.push(solver.point());
            }
            break;
        }
        out.push(solver.point());
        let ratio = 1.0 - (-2.0 * log_likelihood(a, &solver.eta)) / null_dev;
        let nnz = solver.state.beta.iter().filter(|b| **b != 0.0).count();
        if ratio >= DEV_RATIO_MAX
            || (out.len() > 5 && ratio - prev_ratio < DEV_RATIO_MIN_STEP * ratio)
            || nnz + 1 >= xs.n
        {
            break;
        }
        prev_ratio = ratio;
    }
    (out, separated)
}

fn probabilities(te: &[f64], n_test: usize, point: &PathPoint) -> Vec<f64> {
    let mut eta = vec![0.0; n_test];
    super::lasso::predict_std(te, n_test, point, &mut eta);
    eta.into_iter().map(sigmoid).collect()
}

/// ℓ₁-penalized logistic regression: penalized coordinate descent on the
/// IRLS quadratic approximation, penalty fixed by `hyper::LAMBDA` or chosen
/// by cross-validated binomial deviance over a log grid.
pub fn fit_logistic_lasso(x: &DesignMatrix, a: &[u8], spec: &LearnerSpec) -> Result<FittedModel> {
    check_binary(x, a)?;
    let af = as_f64(a);
    let rate = class_rate(&af);
    if rate == 0.0 || rate == 1.0 {
        return Ok(single_class_model(Family::LogisticLasso, rate, x));
    }
    let n = x.rows();
    let xs = x.standardize();
    let mut meta = TrainingMeta { n_train: n, ..TrainingMeta::default() };
    let lmax = logistic_lambda_max(&xs, &af);
    if xs.p() == 0 || lmax == 0.0 {
        return Ok(FittedModel::constant(ModelKind::Classifier, Family::LogisticLasso, rate, x.cols(), n));
    }
    let (point, lambda) = if let Some(lam) = spec.get(hyper::LAMBDA) {
        let mut solver = PenalizedIrls::new(&xs, &af, cd::CD_TOL_EXACT);
        solver.solve(lam);
        if slope_norm(&solver.state.beta) > SEPARATION_CAP {
            meta.separation = true;
        }
        (solver.point(), lam)
    } else {
        let settings = PathSettings::from_spec(spec, n, xs.p());
        let grid = cd::lambda_grid(lmax, settings.n_lambda, settings.min_ratio);
        let (path, separated) = logistic_path(&xs, &af, &grid);
        meta.separation = separated;
        let kept = &grid[..path.len()];
        let best = if kept.len() == 1 {
            0
        } else {
            let folds = settings.folds.min(n);
            let assignment = balanced_assignment(n, folds, spec.seed);
            let mut dev = vec![0.0; kept.len()];
            for fold in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
                let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
                let xtr = x.select_rows(&train)?;
                let atr: Vec<f64> = train.iter().map(|&i| af[i]).collect();
                let ate: Vec<f64> = test.iter().map(|&i| af[i]).collect();
                let r = class_rate(&atr);
                let xstr = xtr.standardize();
                if r == 0.0 || r == 1.0 || xstr.p() == 0 {
                    let pc = vec![r.clamp(PROB_CLIP, 1.0 - PROB_CLIP); test.len()];
                    let d = binomial_deviance(&ate, &pc);
                    dev.iter_mut().for_each(|v| *v += d);
                    continue;
                }
                let te = x.select_rows(&test)?.standardize_like(&xstr, xtr.column_means(), xtr.column_scales());
                let (fpath, _) = logistic_path(&xstr, &atr, kept);
                for (l, d) in dev.iter_mut().enumerate() {
                    let pt = &fpath[l.min(fpath.len() - 1)];
                    *d += binomial_deviance(&ate, &probabilities(&te, test.len(), pt));
                }
            }
            let best = argmin(&dev);
            meta.cv_risk = Some(dev[best] / n as f64);
            best
        };
        (path[best].clone(), kept[best])
    };
    let (b0, coef) = unstandardize(x, &xs, &point);
    meta.lambda = Some(lambda);
    if meta.separation {
        meta.warnings.push("logistic lasso path stopped at the separation cap".into());
    }
    Ok(FittedModel::linear(ModelKind::Classifier, Family::LogisticLasso, b0, coef, meta))
}

/// Cross-validated binomial deviance of the unpenalized logistic refit on
/// each penalty's lasso support. Supports too large to refit score the
/// lasso fit itself.
fn relaxed_cv_deviance(
    x: &DesignMatrix,
    af: &[f64],
    lambdas: &[f64],
    spec: &LearnerSpec,
    folds: usize,
) -> Result<Vec<f64>> {
    let n = x.rows();
    let folds = folds.min(n);
    let assignment = balanced_assignment(n, folds, spec.seed);
    let mut dev = vec![0.0; lambdas.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let xtr = x.select_rows(&train)?;
        let xte = x.select_rows(&test)?;
        let atr: Vec<f64> = train.iter().map(|&i| af[i]).collect();
        let ate: Vec<f64> = test.iter().map(|&i| af[i]).collect();
        let r = class_rate(&atr);
        let xstr = xtr.standardize();
        if r == 0.0 || r == 1.0 || xstr.p() == 0 {
            let pc = vec![r.clamp(PROB_CLIP, 1.0 - PROB_CLIP); test.len()];
            let d = binomial_deviance(&ate, &pc);
            dev.iter_mut().for_each(|v| *v += d);
            continue;
        }
        let atr_u8: Vec<u8> = train.iter().map(|&i| af[i] as u8).collect();
        let te = xte.standardize_like(&xstr, xtr.column_means(), xtr.column_scales());
        let (fpath, _) = logistic_path(&xstr, &atr, lambdas);
        let mut last: Option<(Vec<usize>, f64)> = None;
        for (l, d) in dev.iter_mut().enumerate() {
            let pt = &fpath[l.min(fpath.len() - 1)];
            let cols = support_of(&xstr, pt);
            if let Some((prev, v)) = &last {
                if *prev == cols {
                    *d += v;
                    continue;
                }
            }
            let refit = if cols.len() + 2 <= train.len() {
                fit_logistic(&xtr.select_columns(&cols)?, &atr_u8, spec)
                    .and_then(|m| predict(&m, &xte.select_columns(&cols)?))
                    .ok()
            } else {
                None
            };
            let probs = refit.unwrap_or_else(|| probabilities(&te, test.len(), pt));
            let v = binomial_deviance(&ate, &probs);
            *d += v;
            last = Some((cols, v));
        }
    }
    Ok(dev)
}

/// Unpenalized logistic refit on `support`, or the lasso fit `fallback`
/// (flagged) when the support is too large or the refit fails.
fn refit_or_fallback(
    x: &DesignMatrix,
    a: &[u8],
    spec: &LearnerSpec,
    support: Vec<usize>,
    mut fallback: FittedModel,
) -> Result<FittedModel> {
    fallback.family = Family::RelaxedLasso;
    if support.is_empty() || fallback.meta.single_class {
        return Ok(fallback);
    }
    if support.len() > x.rows().saturating_sub(1) {
        fallback.meta.relaxed_fallback = true;
        fallback.meta.warnings.push("relaxed refit skipped: support exceeds n - 1".into());
        return Ok(fallback);
    }
    let sub = x.select_columns(&support)?;
    match fit_logistic(&sub, a, spec) {
        Ok(refit) => {
            let mut coef = vec![0.0; x.cols()];
            for (k, &j) in support.iter().enumerate() {
                coef[j] = refit.coefficients[k];
            }
            let mut meta = fallback.meta;
            meta.separation |= refit.meta.separation;
            meta.warnings.extend(refit.meta.warnings);
            let mut m = FittedModel::linear(ModelKind::Classifier, Family::RelaxedLasso, refit.intercept, coef, meta);
            m.support = support;
            Ok(m)
        }
        Err(e) => {
            fallback.meta.relaxed_fallback = true;
            fallback.meta.warnings.push(format!("relaxed refit failed: {e}"));
            Ok(fallback)
        }
    }
}

/// Logistic lasso for support selection, then unpenalized logistic
/// regression on the selected columns. With `hyper::RELAX_CV` set (and no
/// fixed `hyper::LAMBDA`) the penalty minimizes the cross-validated
/// deviance of the refit.
pub fn fit_relaxed_logistic_lasso(x: &DesignMatrix, a: &[u8], spec: &LearnerSpec) -> Result<FittedModel> {
    check_binary(x, a)?;
    let af = as_f64(a);
    let rate = class_rate(&af);
    let xs = x.standardize();
    let trivial = rate == 0.0 || rate == 1.0 || xs.p() == 0 || logistic_lambda_max(&xs, &af) == 0.0;
    if spec.get(hyper::LAMBDA).is_some() || spec.get(hyper::RELAX_CV).unwrap_or(0.0) == 0.0 || trivial {
        let stage1 = fit_logistic_lasso(x, a, spec)?;
        let support = stage1.support.clone();
        return refit_or_fallback(x, a, spec, support, stage1);
    }
    let n = x.rows();
    let settings = PathSettings::from_spec(spec, n, xs.p());
    let grid = cd::lambda_grid(logistic_lambda_max(&xs, &af), settings.n_lambda, settings.min_ratio);
    let (path, separated) = logistic_path(&xs, &af, &grid);
    let kept = &grid[..path.len()];
    let mut meta = TrainingMeta { n_train: n, separation: separated, ..TrainingMeta::default() };
    let best = if kept.len() == 1 {
        0
    } else {
        let dev = relaxed_cv_deviance(x, &af, kept, spec, settings.folds)?;
        let best = argmin(&dev);
        meta.cv_risk = Some(dev[best] / n as f64);
        best
    };
    meta.lambda = Some(kept[best]);
    if separated {
        meta.warnings.push("logistic lasso path stopped at the separation cap".into());
    }
    let (b0, coef) = unstandardize(x, &xs, &path[best]);
    let stage1 = FittedModel::linear(ModelKind::Classifier, Family::LogisticLasso, b0, coef, meta);
    refit_or_fallback(x, a, spec, support_of(&xs, &path[best]), stage1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::predict;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn intercept_only_mle_is_logit_of_rate() {
        let a: Vec<u8> = (0..10).map(|i| u8::from(i < 3)).collect();
        let x = DesignMatrix::from_columns(10, &[vec![2.0; 10]]).unwrap();
        let m = fit_logistic(&x, &a, &LearnerSpec::new(Family::Logistic)).unwrap();
        assert!((m.intercept - (0.3f64 / 0.7).ln()).abs() < 1e-10);
        let p = predict(&m, &x).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn four_point_fixture_matches_direct_maximization() {
        let xv = [-1.0, 0.0, 1.0, 2.0];
        let a = [0u8, 1, 0, 1];
        let x = DesignMatrix::from_columns(4, &[xv.to_vec()]).unwrap();
        let m = fit_logistic(&x, &a, &LearnerSpec::new(Family::Logistic)).unwrap();
        let af = as_f64(&a);
        let ll = |b0: f64, b1: f64| -> f64 {
            let eta: Vec<f64> = xv.iter().map(|v| b0 + b1 * v).collect();
            log_likelihood(&af, &eta)
        };
        // coordinate-wise golden-section search, repeated to convergence
        let golden = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| -> f64 {
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = hi - g * (hi - lo);
                let d = lo + g * (hi - lo);
                if f(c) > f(d) {
                    hi = d;
                } else {
                    lo = c;
                }
            }
            (lo + hi) / 2.0
        };
        let (mut b0, mut b1) = (0.0, 0.0);
        for _ in 0..2000 {
            b0 = golden(&|t| ll(t, b1), -10.0, 10.0);
            b1 = golden(&|t| ll(b0, t), -10.0, 10.0);
        }
        assert!((m.intercept - b0).abs() < 1e-6, "{} vs {}", m.intercept, b0);
        assert!((m.coefficients[0] - b1).abs() < 1e-6, "{} vs {}", m.coefficients[0], b1);
    }

    #[test]
    fn single_class_gives_clipped_constant() {
        let x = DesignMatrix::from_columns(5, &[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let m = fit_logistic(&x, &[1; 5], &LearnerSpec::new(Family::Logistic)).unwrap();
        assert!(m.meta.single_class);
        let p = predict(&m, &x).unwrap();
        assert!((p[0] - (1.0 - PROB_CLIP)).abs() < 1e-12);
        let m0 = fit_logistic_lasso(&x, &[0; 5], &LearnerSpec::new(Family::LogisticLasso)).unwrap();
        assert!((predict(&m0, &x).unwrap()[0] - PROB_CLIP).abs() < 1e-12);
    }

    #[test]
    fn separation_is_capped_and_flagged() {
        let x = DesignMatrix::from_columns(6, &[vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]]).unwrap();
        let m = fit_logistic(&x, &[0, 0, 0, 1, 1, 1], &LearnerSpec::new(Family::Logistic)).unwrap();
        assert!(m.meta.separation);
        let std_norm = m.coefficients[0].abs() * x.column_scales()[0];
        assert!(std_norm <= SEPARATION_CAP + 1e-9);
        let p = predict(&m, &x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p[0] < 0.01 && p[5] > 0.99);
    }

    #[test]
    fn independent_predictor_has_small_slope() {
        let mut rng = rng_from_seed(44);
        let n = 2000;
        let xv: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let a: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let x = DesignMatrix::from_columns(n, &[xv]).unwrap();
        let m = fit_logistic(&x, &a, &LearnerSpec::new(Family::Logistic)).unwrap();
        assert!(m.coefficients[0].abs() < 0.1);
    }

    #[test]
    fn probabilities_monotone_in_linear_predictor() {
        let mut rng = rng_from_seed(45);
        let n = 200;
        let xv: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let a: Vec<u8> = xv.iter().map(|v| u8::from(rng.random::<f64>() < sigmoid(1.5 * v))).collect();
        let x = DesignMatrix::from_columns(n, std::slice::from_ref(&xv)).unwrap();
        let m = fit_logistic(&x, &a, &LearnerSpec::new(Family::Logistic)).unwrap();
        let p = predict(&m, &x).unwrap();
        let mut pairs: Vec<(f64, f64)> = xv.iter().map(|v| m.intercept + m.coefficients[0] * v).zip(p).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn logistic_lasso_selects_signal() {
        let mut rng = rng_from_seed(46);
        let (n, p) = (400, 8);
        let x = DesignMatrix::from_col_major(n, p, (0..n * p).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let a: Vec<u8> =
            (0..n).map(|i| u8::from(rng.random::<f64>() < sigmoid(1.5 * x.get(i, 0) - x.get(i, 5)))).collect();
        let m = fit_logistic_lasso(&x, &a, &LearnerSpec::new(Family::LogisticLasso).with_seed(2)).unwrap();
        assert!(m.support.contains(&0) && m.support.contains(&5));
        assert!(m.coefficients[0] > 0.8 && m.coefficients[5] < -0.5);
        let r = fit_relaxed_logistic_lasso(&x, &a, &LearnerSpec::new(Family::RelaxedLasso).with_seed(2)).unwrap();
        assert!((r.coefficients[0] - 1.5).abs() < 0.4);
        let pr = predict(&r, &x).unwrap();
        assert!(pr.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn refit_validation_keeps_signal_columns() {
        let mut rng = rng_from_seed(47);
        let (n, p) = (300, 12);
        let x = DesignMatrix::from_col_major(n, p, (0..n * p).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let a: Vec<u8> =
            (0..n).map(|i| u8::from(rng.random::<f64>() < sigmoid(1.5 * x.get(i, 0) - x.get(i, 5)))).collect();
        let spec = LearnerSpec::new(Family::RelaxedLasso).with(hyper::RELAX_CV, 1.0).with_seed(2);
        let r = fit_relaxed_logistic_lasso(&x, &a, &spec).unwrap();
        assert!(r.support.contains(&0) && r.support.contains(&5));
        assert!(r.meta.cv_risk.is_some());
        let direct = fit_logistic(&x.select_columns(&r.support).unwrap(), &a, &spec).unwrap();
        for (k, &j) in r.support.iter().enumerate() {
            assert!((r.coefficients[j] - direct.coefficients[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn large_penalty_gives_null_model() {
        let x = DesignMatrix::from_columns(6, &[vec![-1.0, 0.5, 2.0, -0.3, 0.1, 1.2]]).unwrap();
        let a = [0u8, 1, 1, 0, 0, 1];
        let m = fit_logistic_lasso(&x, &a, &LearnerSpec::new(Family::LogisticLasso).with(hyper::LAMBDA, 10.0)).unwrap();
        assert!(m.support.is_empty());
        assert!((m.intercept - 0.0).abs() < 1e-8);
    }
}
