//! Fold planning and out-of-fold estimation of the six nuisance functions:
//! `ê, m̂₀, m̂₁` on `X` and `π̂, μ̂₀, μ̂₁` on `(X, S)`.

mod dataset;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{PteError, Result};
use crate::learners::{fit_classifier, fit_regressor, predict, DesignMatrix, LearnerSpec, TrainingMeta};
use crate::rng::{derive_seed, rng_from_seed};

pub use dataset::{ArmCounts, Dataset};

pub const DEFAULT_K_FOLDS: usize = 4;
pub const DEFAULT_TRUNCATION: Truncation = Truncation { lower: 0.01, upper: 0.99 };
/// Smallest per-arm training count allowed for arm-specific regressions,
/// before accounting for the learner's own cross-validation.
pub const MIN_ARM_ROWS: usize = 10;

/// Balanced random fold labels in `0..k`: a seeded shuffle of the rows,
/// cut into contiguous blocks, the first `n mod k` blocks one row longer.
pub(crate) fn balanced_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let k = k.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (n / k, n % k);
    let mut out = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &order[pos..pos + size] {
            out[i] = fold;
        }
        pos += size;
    }
    out
}

/// Random partition of the rows into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold label of each row, in `1..=k`.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Builds a plan from explicit labels in `1..=k`; every fold must be
    /// non-empty.
    pub fn from_assignment(k: usize, assignment: Vec<usize>, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(PteError::Config(format!("need at least 2 folds, got {k}")));
        }
        if let Some(&bad) = assignment.iter().find(|&&f| f == 0 || f > k) {
            return Err(PteError::Config(format!("fold label {bad} outside 1..={k}")));
        }
        let plan = Self { k, assignment, seed };
        if let Some(f) = plan.sizes().iter().position(|&s| s == 0) {
            return Err(PteError::Config(format!("fold {} is empty", f + 1)));
        }
        Ok(plan)
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Rows in fold `fold` (1-based), increasing.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Rows outside fold `fold`, increasing.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignment {
            s[f - 1] += 1;
        }
        s
    }
}

/// Seeded balanced partition of `n` rows into `k` folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(PteError::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(PteError::Config(format!("{k} folds requested for {n} rows")));
    }
    let assignment = balanced_assignment(n, k, seed).into_iter().map(|f| f + 1).collect();
    Ok(FoldPlan { k, assignment, seed })
}

/// Clamp bounds for the propensity and surrogate scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub lower: f64,
    pub upper: f64,
}

impl Truncation {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= upper && upper < 1.0) {
            return Err(PteError::Config(format!(
                "truncation bounds must satisfy 0 < lower <= upper < 1, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }
}

impl Default for Truncation {
    fn default() -> Self {
        DEFAULT_TRUNCATION
    }
}

/// Elementwise clamp to `[lower, upper]`, returning the number of entries
/// that moved.
pub fn truncate_scores(v: &[f64], lower: f64, upper: f64) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let out = v
        .iter()
        .map(|&p| {
            let c = p.clamp(lower, upper);
            if c != p {
                clamped += 1;
            }
            c
        })
        .collect();
    (out, clamped)
}

/// Training record of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    /// 1-based fold label.
    pub fold: usize,
    pub train_rows: Vec<usize>,
    pub arm_counts: ArmCounts,
    pub e: TrainingMeta,
    pub m0: TrainingMeta,
    pub m1: TrainingMeta,
    pub pi: TrainingMeta,
    pub mu0: TrainingMeta,
    pub mu1: TrainingMeta,
}

/// Out-of-fold evaluations of the six nuisance functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub e_hat: Vec<f64>,
    pub m0_hat: Vec<f64>,
    pub m1_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub truncation: Truncation,
    /// Entries of `ê` moved by truncation.
    pub e_clamped: usize,
    /// Entries of `π̂` moved by truncation.
    pub pi_clamped: usize,
    pub plan: FoldPlan,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldDiagnostics>,
}

impl NuisanceEstimates {
    /// Wraps externally supplied nuisance values (oracle functions, fixed
    /// numbers). Scores are truncated like fitted ones.
    #[allow(clippy::too_many_arguments)]
    pub fn injected(
        e_hat: Vec<f64>,
        m0_hat: Vec<f64>,
        m1_hat: Vec<f64>,
        pi_hat: Vec<f64>,
        mu0_hat: Vec<f64>,
        mu1_hat: Vec<f64>,
        plan: FoldPlan,
        truncation: Truncation,
    ) -> Result<Self> {
        let n = plan.n();
        for (name, v) in [
            ("e_hat", &e_hat),
            ("m0_hat", &m0_hat),
            ("m1_hat", &m1_hat),
            ("pi_hat", &pi_hat),
            ("mu0_hat", &mu0_hat),
            ("mu1_hat", &mu1_hat),
        ] {
            if v.len() != n {
                return Err(PteError::Data(format!("{name} has length {} but the fold plan covers {n} rows", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(PteError::Data(format!("{name} has non-finite entries")));
            }
        }
        let (e_hat, e_clamped) = truncate_scores(&e_hat, truncation.lower, truncation.upper);
        let (pi_hat, pi_clamped) = truncate_scores(&pi_hat, truncation.lower, truncation.upper);
        Ok(Self {
            e_hat,
            m0_hat,
            m1_hat,
            pi_hat,
            mu0_hat,
            mu1_hat,
            truncation,
            e_clamped,
            pi_clamped,
            plan,
            folds: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.e_hat.len()
    }
}

/// Smallest per-arm count a training complement must have for `spec`.
pub fn arm_minimum(spec: &LearnerSpec) -> usize {
    if spec.tunes() {
        MIN_ARM_ROWS.max(2 * spec.cv_folds())
    } else {
        MIN_ARM_ROWS
    }
}

fn seeded(spec: &LearnerSpec, seed: u64) -> LearnerSpec {
    let mut s = spec.clone();
    s.seed = seed;
    s
}

struct FoldFit {
    test: Vec<usize>,
    diag: FoldDiagnostics,
    values: [Vec<f64>; 6],
}

fn fit_fold(
    data: &Dataset,
    xs: &DesignMatrix,
    plan: &FoldPlan,
    fold: usize,
    outcome: &LearnerSpec,
    score: &LearnerSpec,
) -> Result<FoldFit> {
    let train = plan.train_rows(fold);
    let test = plan.test_rows(fold);
    let a_tr: Vec<u8> = train.iter().map(|&i| data.a[i]).collect();
    let counts = ArmCounts::of(&a_tr);
    let need = arm_minimum(outcome);
    for arm in [0u8, 1] {
        let c = counts.get(arm);
        if c == 0 {
            return Err(PteError::Data(format!("arm A={arm} is empty in the training complement")));
        }
        if c < need {
            return Err(PteError::Data(format!("arm A={arm} has {c} training rows, at least {need} required")));
        }
    }
    let fold_seed = derive_seed(plan.seed, fold as u64);
    let x_tr = data.x.select_rows(&train)?;
    let xs_tr = xs.select_rows(&train)?;
    let x_te = data.x.select_rows(&test)?;
    let xs_te = xs.select_rows(&test)?;

    let e = fit_classifier(&x_tr, &a_tr, &seeded(score, derive_seed(fold_seed, 0)))?;
    let pi = fit_classifier(&xs_tr, &a_tr, &seeded(score, derive_seed(fold_seed, 1)))?;
    let mut arm_fits = Vec::with_capacity(4);
    for arm in [0u8, 1] {
        let rows: Vec<usize> = (0..train.len()).filter(|&r| a_tr[r] == arm).collect();
        let y_arm: Vec<f64> = rows.iter().map(|&r| data.y[train[r]]).collect();
        let m =
            fit_regressor(&x_tr.select_rows(&rows)?, &y_arm, &seeded(outcome, derive_seed(fold_seed, 2 + arm as u64)))?;
        let mu = fit_regressor(
            &xs_tr.select_rows(&rows)?,
            &y_arm,
            &seeded(outcome, derive_seed(fold_seed, 4 + arm as u64)),
        )?;
        arm_fits.push((m, mu));
    }
    let (m0, mu0) = arm_fits.remove(0);
    let (m1, mu1) = arm_fits.remove(0);
    let values = [
        predict(&e, &x_te)?,
        predict(&m0, &x_te)?,
        predict(&m1, &x_te)?,
        predict(&pi, &xs_te)?,
        predict(&mu0, &xs_te)?,
        predict(&mu1, &xs_te)?,
    ];
    Ok(FoldFit {
        test,
        diag: FoldDiagnostics {
            fold,
            train_rows: train,
            arm_counts: counts,
            e: e.meta,
            m0: m0.meta,
            m1: m1.meta,
            pi: pi.meta,
            mu0: mu0.meta,
            mu1: mu1.meta,
        },
        values,
    })
}

/// Fits the six nuisance functions on each fold's complement and evaluates
/// them on the fold. Outcome regressions are fit within each arm; the
/// scores use every complement row and are truncated afterwards.
pub fn cross_fit_nuisances(
    data: &Dataset,
    plan: &FoldPlan,
    outcome_spec: &LearnerSpec,
    score_spec: &LearnerSpec,
    truncation: Truncation,
) -> Result<NuisanceEstimates> {
    if plan.n() != data.n() {
        return Err(PteError::Config(format!("fold plan covers {} rows but the dataset has {}", plan.n(), data.n())));
    }
    Truncation::new(truncation.lower, truncation.upper)?;
    outcome_spec.validate()?;
    score_spec.validate()?;
    data.require_both_arms()?;
    let n = data.n();
    let xs = data.xs()?;
    let mut out: [Vec<f64>; 6] = Default::default();
    for v in out.iter_mut() {
        *v = vec![0.0; n];
    }
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 1..=plan.k {
        let fit = fit_fold(data, &xs, plan, fold, outcome_spec, score_spec).map_err(|e| e.in_fold(fold))?;
        for (dst, src) in out.iter_mut().zip(&fit.values) {
            for (&i, &v) in fit.test.iter().zip(src) {
                dst[i] = v;
            }
        }
        folds.push(fit.diag);
    }
    let [e, m0, m1, pi, mu0, mu1] = out;
    let mut nz = NuisanceEstimates::injected(e, m0, m1, pi, mu0, mu1, plan.clone(), truncation)?;
    nz.folds = folds;
    Ok(nz)
}
