use super::lasso::argmin;
use super::{check_xy, hyper, Body, DesignMatrix, Family, FittedModel, LearnerSpec, ModelKind, TrainingMeta};
use crate::crossfit::balanced_assignment;
use crate::error::Result;

/// Candidate neighbour counts when `k` is tuned.
const K_GRID: [usize; 5] = [5, 10, 20, 40, 80];

/// k-nearest-neighbour average on standardized features. Distance ties are
/// broken by the lower training row index.
#[derive(Debug, Clone)]
pub(crate) struct KnnModel {
    k: usize,
    active: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Row-major standardized training features.
    train: Vec<f64>,
    y: Vec<f64>,
}

impl KnnModel {
    fn new(x: &DesignMatrix, y: &[f64], k: usize) -> Self {
        let active: Vec<usize> = (0..x.cols()).filter(|&j| x.column_scales()[j] > 0.0).collect();
        let means: Vec<f64> = active.iter().map(|&j| x.column_means()[j]).collect();
        let scales: Vec<f64> = active.iter().map(|&j| x.column_scales()[j]).collect();
        let train = standardized_rows(x, &active, &means, &scales);
        Self { k: k.clamp(1, x.rows()), active, means, scales, train, y: y.to_vec() }
    }

    /// Neighbour indices of each query row, nearest first, up to `k_max`.
    fn neighbours(&self, x: &DesignMatrix, k_max: usize) -> Vec<Vec<usize>> {
        let q = standardized_rows(x, &self.active, &self.means, &self.scales);
        let d = self.active.len();
        let n_train = self.y.len();
        let k_max = k_max.min(n_train);
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n_train);
        (0..x.rows())
            .map(|i| {
                let row = &q[i * d..(i + 1) * d];
                dist.clear();
                dist.extend((0..n_train).map(|t| {
                    let tr = &self.train[t * d..(t + 1) * d];
                    (row.iter().zip(tr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), t)
                }));
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k_max < n_train {
                    dist.select_nth_unstable_by(k_max - 1, cmp);
                    dist.truncate(k_max);
                }
                dist.sort_by(cmp);
                dist.iter().map(|&(_, t)| t).collect()
            })
            .collect()
    }

    pub fn predict(&self, x: &DesignMatrix) -> Vec<f64> {
        self.neighbours(x, self.k)
            .into_iter()
            .map(|nb| nb.iter().map(|&t| self.y[t]).sum::<f64>() / nb.len() as f64)
            .collect()
    }
}

fn standardized_rows(x: &DesignMatrix, active: &[usize], means: &[f64], scales: &[f64]) -> Vec<f64> {
    let d = active.len();
    let mut out = vec![0.0; x.rows() * d];
    for (k, &j) in active.iter().enumerate() {
        for (i, v) in x.column(j).iter().enumerate() {
            out[i * d + k] = (v - means[k]) / scales[k];
        }
    }
    out
}

/// k-NN regressor (mean response) or classifier (class-1 fraction). With
/// `hyper::K_NEIGHBORS` unset, `k` is chosen from a small grid by
/// cross-validated squared error.
pub fn fit_knn(x: &DesignMatrix, y: &[f64], kind: ModelKind, spec: &LearnerSpec) -> Result<FittedModel> {
    check_xy(x, y)?;
    let n = x.rows();
    let mut meta = TrainingMeta { n_train: n, ..TrainingMeta::default() };
    let k = match spec.get(hyper::K_NEIGHBORS) {
        Some(k) => (k as usize).max(1),
        None => {
            let folds = spec.cv_folds().min(n);
            let assignment = balanced_assignment(n, folds, spec.seed);
            let min_train = n - n.div_ceil(folds);
            let grid: Vec<usize> = K_GRID.iter().copied().filter(|&k| k <= min_train.max(1)).collect();
            let grid = if grid.is_empty() { vec![min_train.max(1)] } else { grid };
            let k_max = *grid.last().unwrap();
            let mut sse = vec![0.0; grid.len()];
            for fold in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
                let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
                let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let model = KnnModel::new(&x.select_rows(&train)?, &ytr, k_max);
                let nbs = model.neighbours(&x.select_rows(&test)?, k_max);
                for (t, nb) in test.iter().zip(&nbs) {
                    let mut acc = 0.0;
                    let mut g = 0;
                    for (c, &idx) in nb.iter().enumerate() {
                        acc += ytr[idx];
                        if c + 1 == grid[g] {
                            sse[g] += (y[*t] - acc / (c + 1) as f64).powi(2);
                            g += 1;
                            if g == grid.len() {
                                break;
                            }
                        }
                    }
                }
            }
            let best = argmin(&sse);
            meta.cv_risk = Some(sse[best] / n as f64);
            grid[best]
        }
    };
    let model = KnnModel::new(x, y, k);
    meta.k_neighbors = Some(model.k);
    Ok(FittedModel {
        kind,
        family: Family::Knn,
        intercept: 0.0,
        coefficients: vec![0.0; x.cols()],
        support: Vec::new(),
        weights: Vec::new(),
        meta,
        n_features: x.cols(),
        body: Body::Knn(model),
    })
}
