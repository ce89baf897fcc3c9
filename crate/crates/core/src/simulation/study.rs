use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::dgm::{gen_replicate, DgmSpec};
use super::oracle::oracle_estimands;
use crate::error::{PteError, Result};
use crate::estimators::{estimate_pte, EstimatorConfig};
use crate::rng::derive_seed;
use crate::stats::median;

pub const DEFAULT_ORACLE_MC: usize = 200_000;

/// One replicate's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub seed: u64,
    pub r_s: Option<f64>,
    pub delta: Option<f64>,
    pub delta_s: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub label: String,
    pub truth: f64,
    pub n_reps: usize,
    /// `R̂_S` of the replicates that succeeded, in replicate order.
    pub estimates: Vec<f64>,
    pub median: f64,
    /// Median of `|R̂_S − R|`.
    pub mad: f64,
    /// Over successful replicates only.
    pub coverage: f64,
    pub mean_half_length: f64,
    pub failures: usize,
    pub replicates: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub label: String,
    pub workers: usize,
    /// Monte Carlo size for the true PTE.
    pub oracle_mc: usize,
    /// Skips the oracle when given.
    pub truth: Option<f64>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { label: "study".into(), workers: 1, oracle_mc: DEFAULT_ORACLE_MC, truth: None }
    }
}

fn run_one(spec: &DgmSpec, config: &EstimatorConfig, rep: usize, seed: u64, truth: f64) -> ReplicateRecord {
    let rep_seed = derive_seed(seed, rep as u64);
    let mut record = ReplicateRecord {
        rep,
        seed: rep_seed,
        r_s: None,
        delta: None,
        delta_s: None,
        se: None,
        ci_lower: None,
        ci_upper: None,
        covered: None,
        error: None,
    };
    let outcome = gen_replicate(&spec.with_seed(rep_seed))
        .and_then(|r| estimate_pte(&r.data, &config.clone().with_seed(derive_seed(rep_seed, 1))));
    match outcome {
        Ok(est) => {
            record.r_s = Some(est.r_s);
            record.delta = Some(est.delta);
            record.delta_s = Some(est.delta_s);
            record.se = Some(est.se);
            record.ci_lower = Some(est.ci.lower);
            record.ci_upper = Some(est.ci.upper);
            record.covered = Some(est.ci.contains(truth));
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Generates `n_reps` replicates of `spec` and estimates the PTE on each.
/// Replicate `r` uses the stream `derive_seed(seed, r)` for both data and
/// estimator, so results do not depend on the worker count.
pub fn run_study(spec: &DgmSpec, config: &EstimatorConfig, n_reps: usize, seed: u64) -> Result<SimSummary> {
    run_study_with(spec, config, n_reps, seed, &StudyOptions::default())
}

pub fn run_study_with(
    spec: &DgmSpec,
    config: &EstimatorConfig,
    n_reps: usize,
    seed: u64,
    options: &StudyOptions,
) -> Result<SimSummary> {
    if n_reps == 0 {
        return Err(PteError::Config("at least one replicate required".into()));
    }
    spec.validate()?;
    config.validate()?;
    let truth = match options.truth {
        Some(t) => t,
        None => oracle_estimands(spec, options.oracle_mc)?.r,
    };
    let workers = options.workers.clamp(1, n_reps);
    let replicates = if workers == 1 {
        (0..n_reps).map(|r| run_one(spec, config, r, seed, truth)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<ReplicateRecord>>> = Mutex::new(vec![None; n_reps]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let r = next.fetch_add(1, Ordering::Relaxed);
                    if r >= n_reps {
                        break;
                    }
                    let rec = run_one(spec, config, r, seed, truth);
                    slots.lock().expect("no worker panicked")[r] = Some(rec);
                });
            }
        });
        slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every replicate ran")).collect()
    };
    summarize(&options.label, truth, replicates)
}

/// Reduces replicate records in replicate order.
pub fn summarize(label: &str, truth: f64, replicates: Vec<ReplicateRecord>) -> Result<SimSummary> {
    let ok: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.r_s.is_some()).collect();
    if ok.is_empty() {
        let first = replicates.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return Err(PteError::Numerical(format!("all {} replicates failed; first error: {first}", replicates.len())));
    }
    let estimates: Vec<f64> = ok.iter().map(|r| r.r_s.expect("filtered")).collect();
    let abs_dev: Vec<f64> = estimates.iter().map(|r| (r - truth).abs()).collect();
    let covered = ok.iter().filter(|r| r.covered == Some(true)).count();
    let half: f64 =
        ok.iter().map(|r| 0.5 * (r.ci_upper.expect("filtered") - r.ci_lower.expect("filtered"))).sum::<f64>()
            / ok.len() as f64;
    Ok(SimSummary {
        label: label.to_string(),
        truth,
        n_reps: replicates.len(),
        median: median(&estimates),
        mad: median(&abs_dev),
        coverage: covered as f64 / ok.len() as f64,
        mean_half_length: half,
        failures: replicates.len() - ok.len(),
        estimates,
        replicates,
    })
}
