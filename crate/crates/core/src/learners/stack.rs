use nalgebra::{DMatrix, DVector};

use super::{fit_kind, Body, DesignMatrix, Family, FittedModel, LearnerSpec, ModelKind, TrainingMeta};
use crate::crossfit::balanced_assignment;
use crate::error::{PteError, Result};
use crate::rng::derive_seed;

const MAX_MEMBERS: usize = 16;

/// Weights on the probability simplex minimizing `‖y − Zw‖²`, where
/// `columns[m]` is the m-th column of `Z`.
///
/// Solved exactly by enumerating supports: on each support the
/// equality-constrained problem is a small KKT system (pseudo-inverse when
/// columns are collinear); the best feasible candidate wins. Singletons are
/// always feasible, so the result never loses to the best single column.
pub fn simplex_least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = columns.len();
    if m == 0 {
        return Err(PteError::Learner("no columns to combine".into()));
    }
    if m > MAX_MEMBERS {
        return Err(PteError::Config(format!("at most {MAX_MEMBERS} stack members supported")));
    }
    let gram = DMatrix::from_fn(m, m, |a, b| columns[a].iter().zip(&columns[b]).map(|(u, v)| u * v).sum::<f64>());
    let zty = DVector::from_fn(m, |a, _| columns[a].iter().zip(y).map(|(u, v)| u * v).sum::<f64>());
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let risk = |w: &[f64]| -> f64 {
        let mut r = yy;
        for a in 0..m {
            r -= 2.0 * w[a] * zty[a];
            for b in 0..m {
                r += w[a] * w[b] * gram[(a, b)];
            }
        }
        r
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << m) {
        let idx: Vec<usize> = (0..m).filter(|&a| mask & (1 << a) != 0).collect();
        let k = idx.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (r, &a) in idx.iter().enumerate() {
            for (c, &b) in idx.iter().enumerate() {
                kkt[(r, c)] = gram[(a, b)];
            }
            kkt[(r, k)] = 1.0;
            kkt[(k, r)] = 1.0;
            rhs[r] = zty[a];
        }
        rhs[k] = 1.0;
        let sol = if k == 1 {
            DVector::from_vec(vec![1.0, 0.0])
        } else {
            match kkt.clone().svd(true, true).solve(&rhs, 1e-12) {
                Ok(s) => s,
                Err(_) => continue,
            }
        };
        if (0..k).any(|r| !sol[r].is_finite() || sol[r] < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; m];
        let mut total = 0.0;
        for (r, &a) in idx.iter().enumerate() {
            w[a] = sol[r].max(0.0);
            total += w[a];
        }
        if total <= 0.0 {
            continue;
        }
        w.iter_mut().for_each(|v| *v /= total);
        let r = risk(&w);
        if best.as_ref().is_none_or(|(br, _)| r < *br - 1e-14 * br.abs().max(1.0)) {
            best = Some((r, w));
        }
    }
    Ok(best.map(|(_, w)| w).expect("singletons are always feasible"))
}

fn mse(y: &[f64], p: &[f64]) -> f64 {
    y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Stacked generalization: `cv_folds`-fold cross-validated member
/// predictions, combined with simplex weights minimizing squared error
/// (on probabilities for classifiers), then members refit on all rows.
///
/// A member that fails in any fold gets weight zero and a warning; the fit
/// errors only when every member fails.
pub fn fit_stack(
    x: &DesignMatrix,
    y: &[f64],
    kind: ModelKind,
    members: &[LearnerSpec],
    spec: &LearnerSpec,
) -> Result<FittedModel> {
    if members.len() < 2 {
        return Err(PteError::Config("a stack needs at least two members".into()));
    }
    let n = x.rows();
    let folds = spec.cv_folds().min(n);
    let assignment = balanced_assignment(n, folds, spec.seed);
    let member_specs: Vec<LearnerSpec> = members
        .iter()
        .enumerate()
        .map(|(m, s)| {
            let mut s = s.clone();
            s.seed = derive_seed(spec.seed, m as u64 + 1);
            s
        })
        .collect();
    let mut cv_pred: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; n]); members.len()];
    let mut warnings = Vec::new();
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let xtr = x.select_rows(&train)?;
        let xte = x.select_rows(&test)?;
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        for (m, ms) in member_specs.iter().enumerate() {
            let Some(pred) = cv_pred[m].as_mut() else { continue };
            match fit_kind(&xtr, &ytr, kind, ms).and_then(|f| super::predict(&f, &xte)) {
                Ok(p) => {
                    for (&i, v) in test.iter().zip(p) {
                        pred[i] = v;
                    }
                }
                Err(e) => {
                    warnings.push(format!("member {} ({}) dropped: {e}", m, ms.family.name()));
                    cv_pred[m] = None;
                }
            }
        }
    }
    let alive: Vec<usize> = (0..members.len()).filter(|&m| cv_pred[m].is_some()).collect();
    if alive.is_empty() {
        return Err(PteError::Learner(format!("all stack members failed: {}", warnings.join("; "))));
    }
    let mut weights = vec![0.0; members.len()];
    let mut fitted: Vec<Option<FittedModel>> = vec![None; members.len()];
    let mut candidates = alive;
    let stack_risk = loop {
        let cols: Vec<Vec<f64>> = candidates.iter().map(|&m| cv_pred[m].clone().unwrap()).collect();
        let w = simplex_least_squares(&cols, y)?;
        let mut failed = None;
        for (c, &m) in candidates.iter().enumerate() {
            if w[c] > 0.0 && fitted[m].is_none() {
                match fit_kind(x, y, kind, &member_specs[m]) {
                    Ok(f) => fitted[m] = Some(f),
                    Err(e) => {
                        warnings.push(format!(
                            "member {} ({}) failed on full data: {e}",
                            m,
                            member_specs[m].family.name()
                        ));
                        failed = Some(m);
                        break;
                    }
                }
            }
        }
        match failed {
            Some(m) => {
                candidates.retain(|&c| c != m);
                if candidates.is_empty() {
                    return Err(PteError::Learner(format!("all stack members failed: {}", warnings.join("; "))));
                }
            }
            None => {
                weights.iter_mut().for_each(|v| *v = 0.0);
                for (c, &m) in candidates.iter().enumerate() {
                    weights[m] = w[c];
                }
                let combo: Vec<f64> = (0..n)
                    .map(|i| candidates.iter().enumerate().map(|(c, &m)| w[c] * cv_pred[m].as_ref().unwrap()[i]).sum())
                    .collect();
                break mse(y, &combo);
            }
        }
    };
    for (m, f) in fitted.iter_mut().enumerate() {
        if weights[m] == 0.0 {
            *f = None;
        }
    }
    let member_risks: Vec<Option<f64>> = cv_pred.iter().map(|p| p.as_ref().map(|p| mse(y, p))).collect();
    let meta = TrainingMeta {
        n_train: n,
        cv_risk: Some(stack_risk),
        member_cv_risks: member_risks,
        warnings,
        ..TrainingMeta::default()
    };
    Ok(FittedModel {
        kind,
        family: Family::Stack,
        intercept: 0.0,
        coefficients: vec![0.0; x.cols()],
        support: Vec::new(),
        weights,
        meta,
        n_features: x.cols(),
        body: Body::Stack(fitted),
    })
}
