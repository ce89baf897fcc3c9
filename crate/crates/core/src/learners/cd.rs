//! Weighted cyclic coordinate descent for
//!
//! `(1/2n) Σ w_i (z_i - b0 - x_iᵀb)² + λ‖b‖₁`
//!
//! on standardized columns, with an unpenalized intercept. Unit weights give
//! the Gaussian lasso; IRLS weights give the inner solve of logistic lasso.

use super::design::Standardized;

/// Path solves stop when `max_k v_k·Δb_k²` falls below this fraction of
/// the null deviance per observation.
pub(crate) const CD_TOL_PATH: f64 = 1e-7;
/// Fraction used for single-penalty solves.
pub(crate) const CD_TOL_EXACT: f64 = 1e-20;
pub(crate) const CD_MAX_SWEEPS: usize = 1000;

pub(crate) fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// `n_lambda` log-spaced values from `lambda_max` down to
/// `lambda_max * min_ratio`, inclusive.
pub(crate) fn lambda_grid(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * min_ratio).ln());
    (0..n_lambda)
        .map(|k| if k == 0 { lambda_max } else { (hi + (lo - hi) * k as f64 / (n_lambda - 1) as f64).exp() })
        .collect()
}

/// Solution state carried along a path (warm starts).
#[derive(Debug, Clone)]
pub(crate) struct CdState {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub resid: Vec<f64>,
}

impl CdState {
    /// Zero slopes with the weighted mean as intercept.
    pub fn null(z: &[f64], w: Option<&[f64]>, p: usize) -> Self {
        let b0 = weighted_mean(z, w);
        Self { intercept: b0, beta: vec![0.0; p], resid: z.iter().map(|zi| zi - b0).collect() }
    }

    /// Rebuilds residuals for a new working response (IRLS step).
    pub fn reset_residuals(&mut self, x: &Standardized, z: &[f64]) {
        self.resid.clear();
        self.resid.extend(z.iter().map(|zi| zi - self.intercept));
        for (k, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                for (r, xi) in self.resid.iter_mut().zip(x.col(k)) {
                    *r -= xi * b;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CdOutcome {
    pub sweeps: usize,
    pub converged: bool,
}

pub(crate) fn weighted_mean(z: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        None => z.iter().sum::<f64>() / z.len() as f64,
        Some(w) => {
            let sw: f64 = w.iter().sum();
            z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
        }
    }
}

pub(crate) fn objective(state: &CdState, w: Option<&[f64]>, lambda: f64) -> f64 {
    let n = state.resid.len() as f64;
    let rss = match w {
        None => state.resid.iter().map(|r| r * r).sum::<f64>(),
        Some(w) => state.resid.iter().zip(w).map(|(r, wi)| wi * r * r).sum::<f64>(),
    };
    rss / (2.0 * n) + lambda * state.beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Per-column curvature `Σ w_i x_ij² / n`.
pub(crate) fn curvatures(x: &Standardized, w: Option<&[f64]>) -> Vec<f64> {
    let n = x.n as f64;
    (0..x.p())
        .map(|k| match w {
            None => x.col(k).iter().map(|v| v * v).sum::<f64>() / n,
            Some(w) => x.col(k).iter().zip(w).map(|(v, wi)| wi * v * v).sum::<f64>() / n,
        })
        .collect()
}

/// Minimizes the penalized objective in place. Full sweeps alternate with
/// sweeps restricted to the current active set; convergence is declared
/// when no coordinate of a full sweep changes the quadratic objective by
/// more than `tol` (in units of `v_k·Δb_k²`).
///
/// `trace`, when given, receives the objective after every sweep.
pub(crate) fn solve(
    x: &Standardized,
    w: Option<&[f64]>,
    curv: &[f64],
    lambda: f64,
    state: &mut CdState,
    tol: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> CdOutcome {
    let p = x.p();
    let n = x.n as f64;
    let sum_w = w.map_or(n, |w| w.iter().sum::<f64>());
    let mut sweeps = 0usize;
    let all: Vec<usize> = (0..p).collect();
    loop {
        let change = sweep(x, w, curv, lambda, state, &all, sum_w);
        sweeps += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(state, w, lambda));
        }
        if change < tol {
            return CdOutcome { sweeps, converged: true };
        }
        if sweeps >= CD_MAX_SWEEPS {
            return CdOutcome { sweeps, converged: false };
        }
        let active: Vec<usize> = (0..p).filter(|&k| state.beta[k] != 0.0).collect();
        loop {
            let change = sweep(x, w, curv, lambda, state, &active, sum_w);
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(objective(state, w, lambda));
            }
            if change < tol {
                break;
            }
            if sweeps >= CD_MAX_SWEEPS {
                return CdOutcome { sweeps, converged: false };
            }
        }
    }
}

fn sweep(
    x: &Standardized,
    w: Option<&[f64]>,
    curv: &[f64],
    lambda: f64,
    state: &mut CdState,
    coords: &[usize],
    sum_w: f64,
) -> f64 {
    let n = x.n as f64;
    let mut max_change = 0.0f64;
    for &k in coords {
        let v = curv[k];
        if v <= 0.0 {
            continue;
        }
        let col = x.col(k);
        let grad = match w {
            None => col.iter().zip(&state.resid).map(|(a, r)| a * r).sum::<f64>() / n,
            Some(w) => col.iter().zip(&state.resid).zip(w).map(|((a, r), wi)| a * r * wi).sum::<f64>() / n,
        };
        let old = state.beta[k];
        let new = soft_threshold(grad + v * old, lambda) / v;
        let d = new - old;
        if d != 0.0 {
            for (r, a) in state.resid.iter_mut().zip(col) {
                *r -= a * d;
            }
            state.beta[k] = new;
            max_change = max_change.max(v * d * d);
        }
    }
    let shift = match w {
        None => state.resid.iter().sum::<f64>() / n,
        Some(w) => state.resid.iter().zip(w).map(|(r, wi)| r * wi).sum::<f64>() / sum_w,
    };
    if shift != 0.0 {
        state.intercept += shift;
        for r in state.resid.iter_mut() {
            *r -= shift;
        }
        max_change = max_change.max(sum_w / n * shift * shift);
    }
    max_change
}
