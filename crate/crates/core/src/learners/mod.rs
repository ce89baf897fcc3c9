//! Regression and classification learners for the nuisance functions.
//!
//! Every learner takes a [`DesignMatrix`], a response and a [`LearnerSpec`]
//! and returns an immutable [`FittedModel`]. Penalized fits run on the
//! standardized design (population scale) and report coefficients on the
//! original scale.

pub(crate) mod cd;
mod design;
mod knn;
mod lasso;
mod linear;
mod logistic;
mod stack;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PteError, Result};
use crate::stats::sigmoid;

pub use design::DesignMatrix;
pub(crate) use design::Standardized;
pub use knn::fit_knn;
pub use lasso::{fit_lasso, fit_relaxed_lasso};
pub use linear::{fit_ols, fit_ridge};
pub use logistic::{fit_logistic, fit_logistic_lasso, fit_relaxed_logistic_lasso};
pub use stack::{fit_stack, simplex_least_squares};

/// Names of the tunable hyperparameters understood by the learners.
pub mod hyper {
    /// Fixed penalty; skips cross-validation when present.
    pub const LAMBDA: &str = "lambda";
    pub const N_LAMBDA: &str = "n_lambda";
    pub const LAMBDA_MIN_RATIO: &str = "lambda_min_ratio";
    pub const CV_FOLDS: &str = "cv_folds";
    /// Relaxed lasso only: nonzero chooses the penalty by cross-validating
    /// the refit instead of the lasso fit.
    pub const RELAX_CV: &str = "relax_cv";
    /// Fixed neighbour count for k-NN; cross-validated over a grid otherwise.
    pub const K_NEIGHBORS: &str = "k_neighbors";
}

pub const DEFAULT_N_LAMBDA: usize = 100;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 1e-4;
/// Used instead when there are fewer rows than columns.
pub const DEFAULT_LAMBDA_MIN_RATIO_WIDE: f64 = 1e-2;
pub const DEFAULT_CV_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Intercept only (the stack's "mean" member).
    Mean,
    Ols,
    Ridge,
    Lasso,
    RelaxedLasso,
    Logistic,
    LogisticLasso,
    Knn,
    Stack,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Mean => "mean",
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::RelaxedLasso => "relaxed_lasso",
            Family::Logistic => "logistic",
            Family::LogisticLasso => "logistic_lasso",
            Family::Knn => "knn",
            Family::Stack => "stack",
        }
    }

    fn is_tuned(self) -> bool {
        matches!(
            self,
            Family::Ridge | Family::Lasso | Family::RelaxedLasso | Family::LogisticLasso | Family::Knn | Family::Stack
        )
    }
}

/// Declarative learner choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    #[serde(default)]
    pub hyper: BTreeMap<String, f64>,
    /// Base learners of a stack.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<LearnerSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(family: Family) -> Self {
        Self { family, hyper: BTreeMap::new(), members: Vec::new(), seed: 0 }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyper.insert(key.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stack(members: Vec<LearnerSpec>) -> Self {
        Self { members, ..Self::new(Family::Stack) }
    }

    /// Stack over mean, OLS, ridge, lasso and k-NN.
    pub fn default_regression_stack() -> Self {
        Self::stack(vec![
            Self::new(Family::Mean),
            Self::new(Family::Ols),
            Self::new(Family::Ridge),
            Self::new(Family::Lasso),
            Self::new(Family::Knn),
        ])
    }

    /// Stack over mean, logistic, logistic lasso and k-NN.
    pub fn default_classification_stack() -> Self {
        Self::stack(vec![
            Self::new(Family::Mean),
            Self::new(Family::Logistic),
            Self::new(Family::LogisticLasso),
            Self::new(Family::Knn),
        ])
    }

    /// Sets `hyper::CV_FOLDS` on this spec and on every stack member.
    pub fn with_cv_folds(mut self, folds: usize) -> Self {
        self.members = self.members.into_iter().map(|m| m.with_cv_folds(folds)).collect();
        self.with(hyper::CV_FOLDS, folds as f64)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.hyper.get(key).copied()
    }

    /// Whether fitting runs an internal cross-validation.
    pub(crate) fn tunes(&self) -> bool {
        self.family.is_tuned()
            && !(self.hyper.contains_key(hyper::LAMBDA) || self.hyper.contains_key(hyper::K_NEIGHBORS))
    }

    pub(crate) fn cv_folds(&self) -> usize {
        self.get(hyper::CV_FOLDS).map_or(DEFAULT_CV_FOLDS, |v| v as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == Family::Stack {
            if self.members.len() < 2 {
                return Err(PteError::Config("a stack needs at least two members".into()));
            }
            if self.members.iter().any(|m| m.family == Family::Stack) {
                return Err(PteError::Config("stack members may not be stacks".into()));
            }
            for m in &self.members {
                m.validate()?;
            }
        }
        if self.tunes() && self.cv_folds() < 2 {
            return Err(PteError::Config(format!("{}: cv_folds must be at least 2 when tuning", self.family.name())));
        }
        for (k, v) in &self.hyper {
            if !v.is_finite() {
                return Err(PteError::Config(format!("hyperparameter {k} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Regressor,
    Classifier,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_train: usize,
    pub cv_risk: Option<f64>,
    /// Penalty used for the final fit, when penalized.
    pub lambda: Option<f64>,
    pub k_neighbors: Option<usize>,
    /// IRLS hit the coefficient-norm cap.
    pub separation: bool,
    /// Relaxed lasso kept its stage-1 fit.
    pub relaxed_fallback: bool,
    /// One class absent; constant probability returned.
    pub single_class: bool,
    /// Cross-validated risk of each stack member (`None` when dropped).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_cv_risks: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) enum Body {
    Linear,
    Logistic,
    Knn(knn::KnnModel),
    Stack(Vec<Option<FittedModel>>),
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub family: Family,
    pub intercept: f64,
    /// Original-scale slopes (zero for k-NN and stacks).
    pub coefficients: Vec<f64>,
    /// Indices of non-zero slopes.
    pub support: Vec<usize>,
    /// Stack member weights, in member order; empty otherwise.
    pub weights: Vec<f64>,
    pub meta: TrainingMeta,
    pub(crate) n_features: usize,
    pub(crate) body: Body,
}

impl FittedModel {
    pub(crate) fn linear(
        kind: ModelKind,
        family: Family,
        intercept: f64,
        coefficients: Vec<f64>,
        meta: TrainingMeta,
    ) -> Self {
        let support = coefficients.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, _)| j).collect();
        let n_features = coefficients.len();
        Self {
            kind,
            family,
            intercept,
            coefficients,
            support,
            weights: Vec::new(),
            meta,
            n_features,
            body: match kind {
                ModelKind::Regressor => Body::Linear,
                ModelKind::Classifier => Body::Logistic,
            },
        }
    }

    pub(crate) fn constant(kind: ModelKind, family: Family, value: f64, n_features: usize, n_train: usize) -> Self {
        let intercept = match kind {
            ModelKind::Regressor => value,
            ModelKind::Classifier => (value / (1.0 - value)).ln(),
        };
        Self::linear(
            kind,
            family,
            intercept,
            vec![0.0; n_features],
            TrainingMeta { n_train, ..TrainingMeta::default() },
        )
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn linear_predictor(&self, x: &DesignMatrix) -> Vec<f64> {
        let mut eta = vec![self.intercept; x.rows()];
        for &j in &self.support {
            let c = self.coefficients[j];
            for (e, v) in eta.iter_mut().zip(x.column(j)) {
                *e += c * v;
            }
        }
        eta
    }
}

/// Evaluates a fitted model on new rows.
pub fn predict(model: &FittedModel, x_new: &DesignMatrix) -> Result<Vec<f64>> {
    if x_new.cols() != model.n_features {
        return Err(PteError::Data(format!("model trained on {} columns, got {}", model.n_features, x_new.cols())));
    }
    let out = match &model.body {
        Body::Linear => model.linear_predictor(x_new),
        Body::Logistic => model.linear_predictor(x_new).into_iter().map(sigmoid).collect(),
        Body::Knn(k) => k.predict(x_new),
        Body::Stack(members) => {
            let mut acc = vec![0.0; x_new.rows()];
            for (w, m) in model.weights.iter().zip(members) {
                if let (Some(m), true) = (m, *w > 0.0) {
                    for (a, p) in acc.iter_mut().zip(predict(m, x_new)?) {
                        *a += w * p;
                    }
                }
            }
            acc
        }
    };
    Ok(match model.kind {
        ModelKind::Classifier => out.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        ModelKind::Regressor => out,
    })
}

pub(crate) fn check_xy(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(PteError::Data(format!("design has {} rows but response has {}", x.rows(), y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(PteError::Data(format!("non-finite response at row {i}")));
    }
    Ok(())
}

pub(crate) fn check_binary(x: &DesignMatrix, a: &[u8]) -> Result<()> {
    if x.rows() != a.len() {
        return Err(PteError::Data(format!("design has {} rows but labels have {}", x.rows(), a.len())));
    }
    if let Some(i) = a.iter().position(|&v| v > 1) {
        return Err(PteError::Data(format!("label at row {i} is not 0/1")));
    }
    Ok(())
}

/// Fits a regression learner.
pub fn fit_regressor(x: &DesignMatrix, y: &[f64], spec: &LearnerSpec) -> Result<FittedModel> {
    spec.validate()?;
    check_xy(x, y)?;
    match spec.family {
        Family::Mean => {
            Ok(FittedModel::constant(ModelKind::Regressor, Family::Mean, crate::stats::mean(y), x.cols(), x.rows()))
        }
        Family::Ols => fit_ols(x, y, spec),
        Family::Ridge => fit_ridge(x, y, spec),
        Family::Lasso => fit_lasso(x, y, spec),
        Family::RelaxedLasso => fit_relaxed_lasso(x, y, spec),
        Family::Knn => fit_knn(x, y, ModelKind::Regressor, spec),
        Family::Stack => fit_stack(x, y, ModelKind::Regressor, &spec.members, spec),
        Family::Logistic | Family::LogisticLasso => Err(PteError::Config(format!(
            "{} is a classifier and cannot fit a continuous response",
            spec.family.name()
        ))),
    }
}

/// Fits a probability model for a binary label. `ols`, `lasso` and
/// `relaxed_lasso` map to their logistic counterparts.
pub fn fit_classifier(x: &DesignMatrix, a: &[u8], spec: &LearnerSpec) -> Result<FittedModel> {
    spec.validate()?;
    check_binary(x, a)?;
    match spec.family {
        Family::Mean => {
            let rate = a.iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
            Ok(FittedModel::constant(
                ModelKind::Classifier,
                Family::Mean,
                rate.clamp(logistic::PROB_CLIP, 1.0 - logistic::PROB_CLIP),
                x.cols(),
                x.rows(),
            ))
        }
        Family::Logistic | Family::Ols => fit_logistic(x, a, spec),
        Family::LogisticLasso | Family::Lasso => fit_logistic_lasso(x, a, spec),
        Family::RelaxedLasso => fit_relaxed_logistic_lasso(x, a, spec),
        Family::Knn => {
            let y: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            fit_knn(x, &y, ModelKind::Classifier, spec)
        }
        Family::Stack => {
            let y: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            fit_stack(x, &y, ModelKind::Classifier, &spec.members, spec)
        }
        Family::Ridge => Err(PteError::Config("ridge is a regression learner".into())),
    }
}

/// Dispatches on `kind`; `y` holds 0/1 labels for classifiers.
pub(crate) fn fit_kind(x: &DesignMatrix, y: &[f64], kind: ModelKind, spec: &LearnerSpec) -> Result<FittedModel> {
    match kind {
        ModelKind::Regressor => fit_regressor(x, y, spec),
        ModelKind::Classifier => {
            let a: Vec<u8> = y.iter().map(|&v| u8::from(v > 0.5)).collect();
            fit_classifier(x, &a, spec)
        }
    }
}
