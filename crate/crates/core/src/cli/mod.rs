//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on input or usage errors, 2 when the
//! treatment effect is too small for the PTE to be defined.

pub mod io;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::crossfit::{Truncation, DEFAULT_K_FOLDS};
use crate::error::{PteError, Result};
use crate::estimators::{estimate_pte, EstimatorConfig, PteEstimate};
use crate::learners::LearnerSpec;
use crate::simulation::{
    calibrate_dgm2_delta_s, dgm2_delta_s_for, dgm2_true_pte, gen_replicate, gen_toy, run_study_with, toy_pte, DgmKind,
    DgmSpec, ReplicateRecord, SimSummary, StudyOptions, DEFAULT_ORACLE_MC,
};
use crate::stats::mean;
use io::{atomic_write, csv_io, read_dataset, write_dataset, Schema};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ILL_DEFINED: i32 = 2;
pub const SEED_ENV: &str = "SURROGATE_PTE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "surrogate-pte",
    version,
    about = "Doubly-robust proportion of treatment effect explained by surrogates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the PTE from a data file.
    Estimate(EstimateArgs),
    /// Run a replication study on a simulated design.
    Simulate(SimulateArgs),
    /// Emit toy-example outcome and surrogate-prediction distributions.
    Toy(ToyArgs),
    /// Write one simulated dataset.
    Generate(GenerateArgs),
    /// Find the second design's direct effect for a target PTE.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerChoice {
    /// Stacked ensemble nuisances (DR-SL).
    Stack,
    /// Relaxed-lasso nuisances (DR-lasso).
    Lasso,
}

impl LearnerChoice {
    pub fn label(self) -> &'static str {
        match self {
            LearnerChoice::Stack => "DR-SL",
            LearnerChoice::Lasso => "DR-lasso",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum DgmChoice {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "toy")]
    #[serde(rename = "toy")]
    Toy,
}

fn parse_truncation(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    Truncation::new(lo, hi).map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("bad alpha `{s}`"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

fn parse_k(s: &str) -> std::result::Result<usize, String> {
    let k: usize = s.parse().map_err(|_| format!("bad fold count `{s}`"))?;
    if k >= 2 {
        Ok(k)
    } else {
        Err(format!("k-folds must be at least 2, got {k}"))
    }
}

/// Estimator settings shared by `estimate` and `simulate`.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EstimatorArgs {
    #[arg(long, default_value_t = DEFAULT_K_FOLDS, value_parser = parse_k)]
    pub k_folds: usize,
    #[arg(long, value_enum, default_value_t = LearnerChoice::Stack)]
    pub learner: LearnerChoice,
    /// Folds for the learners' internal cross-validation.
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long = "truncate", value_name = "LO,HI", default_value = "0.01,0.99", value_parser = parse_truncation)]
    pub truncation: (f64, f64),
    /// Perturbation-resampling replicates; 0 reports the asymptotic CI only.
    #[arg(long, default_value_t = 0)]
    pub resamples: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Also estimate the MSE-based PTE.
    #[arg(long)]
    pub mse_pte: bool,
}

impl EstimatorArgs {
    pub fn to_config(&self) -> Result<EstimatorConfig> {
        let cv = |spec: LearnerSpec| spec.with_cv_folds(self.cv_folds);
        let base = match self.learner {
            LearnerChoice::Stack => EstimatorConfig::dr_sl(),
            LearnerChoice::Lasso => EstimatorConfig::dr_lasso(),
        };
        let config = EstimatorConfig {
            k_folds: self.k_folds,
            outcome_learner: cv(base.outcome_learner),
            score_learner: cv(base.score_learner),
            truncation: Truncation::new(self.truncation.0, self.truncation.1)?,
            alpha: self.alpha,
            resamples: self.resamples,
            seed: self.seed,
            mse_pte: self.mse_pte,
            ..base
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Delimited file with a header row: `y`, `a`, `x…`, `s…`.
    #[arg(long)]
    pub input: PathBuf,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON file naming the column roles.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DesignArgs {
    #[arg(long, value_enum, default_value_t = DgmChoice::One)]
    pub dgm: DgmChoice,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Noise sd (first design).
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Surrogate dimension.
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    /// Covariate dimension (first design).
    #[arg(long, default_value_t = 100)]
    pub q: usize,
    /// Direct effect; overridden by `--target-r`.
    #[arg(long, default_value_t = 1.0)]
    pub delta_s: f64,
    /// True PTE to hit; sets the direct effect.
    #[arg(long)]
    pub target_r: Option<f64>,
    /// Toy-example `δ`.
    #[arg(long, default_value_t = 3.0)]
    pub delta_toy: f64,
    /// Hold the first design's random coefficients fixed at this seed.
    #[arg(long)]
    pub coefficient_seed: Option<u64>,
}

impl DesignArgs {
    pub fn to_spec(&self, seed: u64) -> Result<DgmSpec> {
        let (kind, q) = match self.dgm {
            DgmChoice::One => (DgmKind::Dgm1, self.q),
            DgmChoice::Two => (DgmKind::Dgm2, 2),
            DgmChoice::Toy => (DgmKind::Toy, 0),
        };
        let delta_s = match (self.target_r, kind) {
            (None, _) => self.delta_s,
            (Some(r), _) if !(r > 0.0 && r <= 1.0) => {
                return Err(PteError::Config(format!("target R must lie in (0, 1], got {r}")))
            }
            (Some(r), DgmKind::Dgm1) => 1.0 / r - 1.0,
            (Some(r), DgmKind::Dgm2) => match dgm2_delta_s_for(r) {
                Some(v) => v,
                None if r == 1.0 => 0.0,
                None => calibrate_dgm2_delta_s(
                    r,
                    crate::simulation::calibration::CALIBRATION_MC,
                    crate::simulation::calibration::CALIBRATION_SEED,
                    0.005,
                )?,
            },
            (Some(_), DgmKind::Toy) => {
                return Err(PteError::Config("--target-r does not apply to the toy design; use --delta-toy".into()))
            }
        };
        let spec = DgmSpec {
            kind,
            n: self.n,
            p: if kind == DgmKind::Toy { 1 } else { self.p },
            q,
            sigma: self.sigma,
            delta_s,
            delta_toy: self.delta_toy,
            seed,
            coefficient_seed: self.coefficient_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Monte Carlo draws for the true PTE.
    #[arg(long, default_value_t = DEFAULT_ORACLE_MC)]
    pub oracle_mc: usize,
    /// Line-delimited output: one row per replicate, then a summary row.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ToyArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,3")]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Long-format rows `delta,study,arm,variable,value`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Group means and PTE comparison as JSON; standard output when
    /// omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub design: DesignArgs,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub target_r: f64,
    #[arg(long, default_value_t = crate::simulation::calibration::CALIBRATION_MC)]
    pub mc: usize,
    #[arg(long, default_value_t = crate::simulation::calibration::CALIBRATION_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.005)]
    pub tol: f64,
}

/// Structured result of `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: EstimateArgs,
    pub estimator: String,
    pub estimate: PteEstimate,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum StudyRow {
    Replicate(ReplicateRecord),
    Summary {
        version: String,
        config: Box<SimulateArgs>,
        spec: DgmSpec,
        estimator: String,
        truth: f64,
        n_reps: usize,
        median: f64,
        mad: f64,
        coverage: f64,
        mean_half_length: f64,
        failures: usize,
    },
}

/// Exit code for an error.
pub fn exit_code(err: &PteError) -> i32 {
    match err.root() {
        PteError::PteIllDefined { .. } => EXIT_ILL_DEFINED,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let PteError::Data(msg) = e.root() {
                if msg.starts_with("both treatment arms") {
                    eprintln!(
                        "hint: the input contains a single treatment arm; the PTE needs treated and control rows"
                    );
                }
            }
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Toy(a) => cmd_toy(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn write_json_to<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => atomic_write(p, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        }),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            writeln!(lock)?;
            Ok(())
        }
    }
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<Report> {
    let start = Instant::now();
    let config = args.estimator.to_config()?;
    let schema = args.schema.as_deref().map(Schema::load).transpose()?;
    let data = read_dataset(&args.input, schema.as_ref())?;
    let estimate = estimate_pte(&data, &config)?;
    for w in &estimate.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    let report = Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: args.clone(),
        estimator: args.estimator.learner.label().to_string(),
        estimate,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    write_json_to(args.output.as_deref(), &report)?;
    Ok(report)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimSummary> {
    let start = Instant::now();
    let spec = args.design.to_spec(args.estimator.seed)?;
    let config = args.estimator.to_config()?;
    let label = match spec.kind {
        DgmKind::Dgm1 => "dgm1",
        DgmKind::Dgm2 => "dgm2",
        DgmKind::Toy => "toy",
    };
    let options = StudyOptions {
        label: format!("{label}/{}", args.estimator.learner.label()),
        workers: args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        oracle_mc: args.oracle_mc,
        truth: None,
    };
    let summary = run_study_with(&spec, &config, args.reps, args.estimator.seed, &options)?;
    let mut rows: Vec<StudyRow> = summary.replicates.iter().cloned().map(StudyRow::Replicate).collect();
    rows.push(StudyRow::Summary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: Box::new(args.clone()),
        spec,
        estimator: args.estimator.learner.label().to_string(),
        truth: summary.truth,
        n_reps: summary.n_reps,
        median: summary.median,
        mad: summary.mad,
        coverage: summary.coverage,
        mean_half_length: summary.mean_half_length,
        failures: summary.failures,
    });
    let body = |w: &mut dyn Write| -> Result<()> {
        for r in &rows {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    };
    match &args.output {
        Some(p) => atomic_write(p, body)?,
        None => body(&mut std::io::stdout().lock())?,
    }
    eprintln!(
        "{}: median {:.4}, MAD {:.4}, coverage {:.3}, failures {} ({:.1}s)",
        summary.label,
        summary.median,
        summary.mad,
        summary.coverage,
        summary.failures,
        start.elapsed().as_secs_f64()
    );
    Ok(summary)
}

/// Mean of one plotted group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGroup {
    pub delta: f64,
    pub study: u8,
    pub arm: u8,
    pub variable: String,
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub groups: Vec<ToyGroup>,
    pub pte: Vec<crate::simulation::ToyPte>,
}

pub fn cmd_toy(args: &ToyArgs) -> Result<()> {
    let mut rows: Vec<(f64, u8, u8, &'static str, f64)> = Vec::new();
    let mut groups = Vec::new();
    let mut pte = Vec::new();
    for (k, &delta) in args.delta.iter().enumerate() {
        let seed = crate::rng::derive_seed(args.seed, k as u64);
        let rep = gen_toy(&DgmSpec::toy(args.n, delta, seed))?;
        let start = rows.len();
        let d1 = &rep.study1.data;
        rows.extend((0..d1.n()).map(|i| (delta, 1, d1.a[i], "Y", d1.y[i])));
        let d2 = &rep.study2.data;
        rows.extend((0..d2.n()).map(|i| (delta, 2, d2.a[i], "psi", rep.psi[i])));
        for (study, variable) in [(1u8, "Y"), (2, "psi")] {
            for arm in [0u8, 1] {
                let v: Vec<f64> = rows[start..].iter().filter(|r| r.1 == study && r.2 == arm).map(|r| r.4).collect();
                groups.push(ToyGroup {
                    delta,
                    study,
                    arm,
                    variable: variable.to_string(),
                    n: v.len(),
                    mean: if v.is_empty() { f64::NAN } else { mean(&v) },
                });
            }
        }
        pte.push(toy_pte(delta, crate::simulation::MIN_ORACLE_MC, seed)?);
    }
    if let Some(p) = &args.output {
        atomic_write(p, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["delta", "study", "arm", "variable", "value"]).map_err(csv_io)?;
            for (delta, study, arm, var, value) in &rows {
                out.write_record([
                    delta.to_string(),
                    study.to_string(),
                    arm.to_string(),
                    var.to_string(),
                    value.to_string(),
                ])
                .map_err(csv_io)?;
            }
            out.flush()?;
            Ok(())
        })?;
    }
    write_json_to(args.summary.as_deref(), &ToySummary { groups, pte })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let spec = args.design.to_spec(args.seed)?;
    let data = if spec.kind == DgmKind::Toy { gen_toy(&spec)?.study1.data } else { gen_replicate(&spec)?.data };
    write_dataset(&args.output, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_r: f64,
    pub delta_s: f64,
    pub closed_form_delta_s: f64,
    pub closed_form_r: f64,
    pub mc: usize,
    pub seed: u64,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let delta_s = calibrate_dgm2_delta_s(args.target_r, args.mc, args.seed, args.tol)?;
    let closed = crate::simulation::DGM2_SURROGATE_EFFECT * (1.0 - args.target_r) / args.target_r;
    write_json_to(
        None,
        &Calibration {
            target_r: args.target_r,
            delta_s,
            closed_form_delta_s: closed,
            closed_form_r: dgm2_true_pte(delta_s),
            mc: args.mc,
            seed: args.seed,
        },
    )
}
