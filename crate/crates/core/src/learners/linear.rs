use nalgebra::{DMatrix, DVector};

use super::lasso::{argmin, predict_std, unstandardize, PathPoint};
use super::{check_xy, hyper, DesignMatrix, Family, FittedModel, LearnerSpec, ModelKind, Standardized, TrainingMeta};
use crate::crossfit::balanced_assignment;
use crate::error::{PteError, Result};

const RANK_TOL: f64 = 1e-10;

/// Least squares with intercept on the given columns, by Householder QR of
/// the centered design. Returns `(intercept, slopes)` with slopes in the
/// order of `cols`.
pub(crate) fn ols_on_columns(x: &DesignMatrix, y: &[f64], cols: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = x.rows();
    let p = cols.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok((ybar, Vec::new()));
    }
    if p >= n {
        return Err(PteError::Learner(format!("least squares with {p} predictors needs more than {p} rows, got {n}")));
    }
    let means: Vec<f64> = cols.iter().map(|&j| x.column_means()[j]).collect();
    let xc = DMatrix::from_fn(n, p, |i, k| x.get(i, cols[k]) - means[k]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let qr = xc.qr();
    let r = qr.r();
    let diag_max = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if (0..p).any(|k| r[(k, k)].abs() <= RANK_TOL * diag_max.max(f64::MIN_POSITIVE)) {
        return Err(PteError::Learner("design is rank deficient".into()));
    }
    let qty = qr.q().transpose() * yc;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| PteError::Learner("triangular solve failed".into()))?;
    let intercept = ybar - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, beta.iter().copied().collect()))
}

/// Ordinary least squares with intercept. Constant columns get a zero
/// coefficient; `p ≥ n` or a rank-deficient design is an error.
pub fn fit_ols(x: &DesignMatrix, y: &[f64], _spec: &LearnerSpec) -> Result<FittedModel> {
    check_xy(x, y)?;
    let active: Vec<usize> = (0..x.cols()).filter(|&j| x.column_scales()[j] > 0.0).collect();
    let (b0, beta) = ols_on_columns(x, y, &active)?;
    let mut coef = vec![0.0; x.cols()];
    for (k, &j) in active.iter().enumerate() {
        coef[j] = beta[k];
    }
    Ok(FittedModel::linear(
        ModelKind::Regressor,
        Family::Ols,
        b0,
        coef,
        TrainingMeta { n_train: x.rows(), ..TrainingMeta::default() },
    ))
}

const RIDGE_GRID: usize = 40;
const RIDGE_MIN: f64 = 1e-4;
const RIDGE_MAX: f64 = 1e3;

/// Thin SVD of a standardized design, reused across penalties.
struct RidgeSolver {
    d: Vec<f64>,
    v_t: DMatrix<f64>,
    uty: DVector<f64>,
    ybar: f64,
    n: usize,
}

impl RidgeSolver {
    fn new(xs: &Standardized, y: &[f64]) -> Self {
        let n = xs.n;
        let ybar = y.iter().sum::<f64>() / n as f64;
        let m = DMatrix::from_column_slice(n, xs.p(), &xs.data);
        let svd = m.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
        let uty = u.transpose() * yc;
        Self { d: svd.singular_values.iter().copied().collect(), v_t, uty, ybar, n }
    }

    /// Minimizer of `(1/2n)‖yc − X̃b‖² + (λ/2)‖b‖²`.
    fn solve(&self, lambda: f64) -> PathPoint {
        let nl = self.n as f64 * lambda;
        let scaled = DVector::from_iterator(
            self.d.len(),
            self.d.iter().zip(self.uty.iter()).map(|(d, c)| if *d > 0.0 { d * c / (d * d + nl) } else { 0.0 }),
        );
        let beta = self.v_t.transpose() * scaled;
        PathPoint { intercept: self.ybar, beta: beta.iter().copied().collect() }
    }
}

fn ridge_grid() -> Vec<f64> {
    let (hi, lo) = (RIDGE_MAX.ln(), RIDGE_MIN.ln());
    (0..RIDGE_GRID).map(|k| (hi + (lo - hi) * k as f64 / (RIDGE_GRID - 1) as f64).exp()).collect()
}

/// Ridge regression on the standardized design; the penalty is fixed by
/// `hyper::LAMBDA` or cross-validated over a log grid on `[1e-4, 1e3]`.
pub fn fit_ridge(x: &DesignMatrix, y: &[f64], spec: &LearnerSpec) -> Result<FittedModel> {
    check_xy(x, y)?;
    let xs = x.standardize();
    let n = x.rows();
    let mut meta = TrainingMeta { n_train: n, ..TrainingMeta::default() };
    if xs.p() == 0 {
        return Ok(FittedModel::constant(ModelKind::Regressor, Family::Ridge, crate::stats::mean(y), x.cols(), n));
    }
    let lambda = match spec.get(hyper::LAMBDA) {
        Some(l) => l,
        None => {
            let grid = ridge_grid();
            let folds = spec.cv_folds().min(n);
            let assignment = balanced_assignment(n, folds, spec.seed);
            let mut sse = vec![0.0; grid.len()];
            for fold in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
                let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
                let xtr = x.select_rows(&train)?;
                let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let xstr = xtr.standardize();
                let te = x.select_rows(&test)?.standardize_like(&xstr, xtr.column_means(), xtr.column_scales());
                let mut pred = vec![0.0; test.len()];
                if xstr.p() == 0 {
                    let m = crate::stats::mean(&ytr);
                    for s in sse.iter_mut() {
                        *s += test.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>();
                    }
                    continue;
                }
                let solver = RidgeSolver::new(&xstr, &ytr);
                for (l, s) in sse.iter_mut().enumerate() {
                    predict_std(&te, test.len(), &solver.solve(grid[l]), &mut pred);
                    *s += test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
                }
            }
            let best = argmin(&sse);
            meta.cv_risk = Some(sse[best] / n as f64);
            grid[best]
        }
    };
    let point = RidgeSolver::new(&xs, y).solve(lambda);
    let (b0, coef) = unstandardize(x, &xs, &point);
    meta.lambda = Some(lambda);
    Ok(FittedModel::linear(ModelKind::Regressor, Family::Ridge, b0, coef, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_regressor, predict};
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_design(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut rng = rng_from_seed(seed);
        DesignMatrix::from_col_major(n, p, (0..n * p).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn ols_reproduces_hat_matrix_fit() {
        let x = random_design(15, 3, 2);
        let mut rng = rng_from_seed(9);
        let y: Vec<f64> = (0..15).map(|_| rng.sample(StandardNormal)).collect();
        let m = fit_ols(&x, &y, &LearnerSpec::new(Family::Ols)).unwrap();
        let fitted = predict(&m, &x).unwrap();
        // H y with H = Z (ZᵀZ)⁻¹ Zᵀ, Z = [1, X]
        let z = DMatrix::from_fn(15, 4, |i, k| if k == 0 { 1.0 } else { x.get(i, k - 1) });
        let zt = z.transpose();
        let h = &z * (&zt * &z).try_inverse().unwrap() * zt;
        let hy = h * DVector::from_column_slice(&y);
        for i in 0..15 {
            assert!((fitted[i] - hy[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_rejects_wide_design() {
        let x = random_design(4, 5, 1);
        assert!(fit_ols(&x, &[1.0, 2.0, 3.0, 4.0], &LearnerSpec::new(Family::Ols)).is_err());
    }

    #[test]
    fn ridge_zero_penalty_is_ols_and_large_penalty_is_mean() {
        let x = random_design(30, 4, 3);
        let y: Vec<f64> = (0..30).map(|i| x.get(i, 0) - 2.0 * x.get(i, 1) + 0.1 * i as f64).collect();
        let o = fit_ols(&x, &y, &LearnerSpec::new(Family::Ols)).unwrap();
        let r0 = fit_ridge(&x, &y, &LearnerSpec::new(Family::Ridge).with(hyper::LAMBDA, 0.0)).unwrap();
        for j in 0..4 {
            assert!((o.coefficients[j] - r0.coefficients[j]).abs() < 1e-9);
        }
        let rb = fit_ridge(&x, &y, &LearnerSpec::new(Family::Ridge).with(hyper::LAMBDA, 1e12)).unwrap();
        assert!(rb.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((rb.intercept - crate::stats::mean(&y)).abs() < 1e-8);
    }

    #[test]
    fn scaling_response_scales_fitted_values() {
        let x = random_design(25, 3, 4);
        let y: Vec<f64> = (0..25).map(|i| x.get(i, 2) + (i % 3) as f64).collect();
        let c = 2.5;
        let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
        for spec in [LearnerSpec::new(Family::Ols), LearnerSpec::new(Family::Ridge).with(hyper::LAMBDA, 0.3)] {
            let f1 = predict(&fit_regressor(&x, &y, &spec).unwrap(), &x).unwrap();
            let f2 = predict(&fit_regressor(&x, &yc, &spec).unwrap(), &x).unwrap();
            for (a, b) in f1.iter().zip(&f2) {
                assert!((b - c * a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cross_validated_ridge_records_risk() {
        let x = random_design(60, 5, 6);
        let y: Vec<f64> = (0..60).map(|i| x.get(i, 0) + 0.5 * x.get(i, 4)).collect();
        let m = fit_ridge(&x, &y, &LearnerSpec::new(Family::Ridge)).unwrap();
        assert!(m.meta.cv_risk.unwrap() < 0.05);
    }
}
