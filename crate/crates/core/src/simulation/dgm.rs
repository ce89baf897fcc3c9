use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::crossfit::Dataset;
use crate::error::{PteError, Result};
use crate::learners::DesignMatrix;
use crate::rng::{derive_seed, rng_from_seed, Rng as StdRng};
use crate::stats::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgmKind {
    Dgm1,
    Dgm2,
    Toy,
}

/// Scenario definition for a data-generating mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub kind: DgmKind,
    pub n: usize,
    /// Surrogate dimension.
    pub p: usize,
    /// Covariate dimension (first mechanism only).
    pub q: usize,
    /// Noise standard deviation (first mechanism only).
    pub sigma: f64,
    /// Direct treatment effect not passing through the surrogates.
    pub delta_s: f64,
    /// `δ` of the toy example.
    pub delta_toy: f64,
    pub seed: u64,
    /// Seed for the random coefficient draws of the first mechanism when
    /// they are held fixed across replicates; `None` redraws them from
    /// `seed`.
    #[serde(default)]
    pub coefficient_seed: Option<u64>,
}

pub const DGM1_MIN_P: usize = 5;
pub const DGM1_MIN_Q: usize = 5;
pub const DGM2_MIN_P: usize = 15;
const DGM1_BETA1: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
const DGM1_BETA0: [f64; 5] = [-2.0, -1.5, -1.0, -0.5, 0.0];
const DGM1_OUTCOME_X: usize = 25;
const DGM2_SHIFTED: usize = 10;
const DGM2_OUTCOME_S: usize = 15;
const DGM2_RHO: f64 = 0.4;

impl DgmSpec {
    /// First mechanism at full scale: `p = q = 100`, `Δ_S = 1`.
    pub fn dgm1(n: usize, sigma: f64, seed: u64) -> Self {
        Self {
            kind: DgmKind::Dgm1,
            n,
            p: 100,
            q: 100,
            sigma,
            delta_s: 1.0,
            delta_toy: 0.0,
            seed,
            coefficient_seed: None,
        }
    }

    pub fn dgm2(n: usize, p: usize, delta_s: f64, seed: u64) -> Self {
        Self { kind: DgmKind::Dgm2, n, p, q: 2, sigma: 1.0, delta_s, delta_toy: 0.0, seed, coefficient_seed: None }
    }

    pub fn toy(n: usize, delta_toy: f64, seed: u64) -> Self {
        Self { kind: DgmKind::Toy, n, p: 1, q: 0, sigma: 1.0, delta_s: 0.0, delta_toy, seed, coefficient_seed: None }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(PteError::Config("n must be at least 1".into()));
        }
        if !self.delta_s.is_finite() {
            return Err(PteError::Config("delta_s must be finite".into()));
        }
        match self.kind {
            DgmKind::Dgm1 => {
                if self.p < DGM1_MIN_P || self.q < DGM1_MIN_Q {
                    return Err(PteError::Config(format!(
                        "dgm1 needs p >= {DGM1_MIN_P} and q >= {DGM1_MIN_Q}, got p = {}, q = {}",
                        self.p, self.q
                    )));
                }
                if !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return Err(PteError::Config(format!("sigma must be positive, got {}", self.sigma)));
                }
            }
            DgmKind::Dgm2 => {
                if self.p < DGM2_MIN_P {
                    return Err(PteError::Config(format!("dgm2 needs p >= {DGM2_MIN_P}, got {}", self.p)));
                }
            }
            DgmKind::Toy => {
                if !(self.delta_toy >= 0.0 && self.delta_toy.is_finite()) {
                    return Err(PteError::Config(format!("toy delta must be >= 0, got {}", self.delta_toy)));
                }
            }
        }
        Ok(())
    }

    /// Draws the mechanism's random coefficients.
    pub fn params(&self) -> Result<DgmParams> {
        self.validate()?;
        Ok(match self.kind {
            DgmKind::Dgm1 => {
                let mut rng = rng_from_seed(derive_seed(self.coefficient_seed.unwrap_or(self.seed), 0));
                let gamma: Vec<f64> = (0..self.q).map(|_| rng.sample(StandardNormal)).collect();
                let u1 = Uniform::new(0.0, 1.0).expect("valid range");
                let u0 = Uniform::new(-0.5, 0.5).expect("valid range");
                let mut alpha1 = vec![0.75, 0.25];
                alpha1.extend((2..self.p).map(|_| u1.sample(&mut rng)));
                let mut alpha0 = vec![0.0, 0.0];
                alpha0.extend((2..self.p).map(|_| u0.sample(&mut rng)));
                DgmParams::Dgm1(Dgm1Params {
                    gamma,
                    alpha: [alpha0, alpha1],
                    sigma: self.sigma,
                    delta_s: self.delta_s,
                    outcome_x: self.q.min(DGM1_OUTCOME_X),
                })
            }
            DgmKind::Dgm2 => DgmParams::Dgm2(Dgm2Params { p: self.p, delta_s: self.delta_s }),
            DgmKind::Toy => DgmParams::Toy(ToyParams { delta: self.delta_toy }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dgm1Params {
    pub gamma: Vec<f64>,
    /// Surrogate intercepts, indexed by arm.
    pub alpha: [Vec<f64>; 2],
    pub sigma: f64,
    pub delta_s: f64,
    pub outcome_x: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dgm2Params {
    pub p: usize,
    pub delta_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub delta: f64,
}

/// Drawn parameters of a mechanism, with its true nuisance functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgmParams {
    Dgm1(Dgm1Params),
    Dgm2(Dgm2Params),
    Toy(ToyParams),
}

/// One unit with both counterfactuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub x: Vec<f64>,
    pub a: u8,
    /// Surrogates under control and treatment.
    pub s: [Vec<f64>; 2],
    /// Outcomes under control and treatment.
    pub y: [f64; 2],
}

fn log_gaussian_ratio_diag(s: &[f64], c1: &[f64], c0: &[f64], var: f64) -> f64 {
    s.iter().zip(c1.iter().zip(c0)).map(|(v, (m1, m0))| ((v - m0).powi(2) - (v - m1).powi(2)) / (2.0 * var)).sum()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Dgm2Params {
    /// Conditional surrogate mean in arm `a`.
    fn s_mean(&self, a: u8, x: &[f64]) -> Vec<f64> {
        let (x1, x2) = (x[0], x[1]);
        (0..self.p)
            .map(|j| {
                let head = j < DGM2_SHIFTED;
                if a == 1 {
                    1.5 + if head { x1 + x2 } else { 0.0 }
                } else {
                    2.0 + if head { x2 } else { 0.0 } - x1 * x2
                }
            })
            .collect()
    }

    /// `vᵀΣ⁻¹v` for the equicorrelated covariance.
    fn mahalanobis(&self, v: &[f64]) -> f64 {
        let p = self.p as f64;
        let kappa = DGM2_RHO / (1.0 - DGM2_RHO + DGM2_RHO * p);
        let ss: f64 = v.iter().map(|x| x * x).sum();
        let s: f64 = v.iter().sum();
        (ss - kappa * s * s) / (1.0 - DGM2_RHO)
    }
}

impl ToyParams {
    fn w_mean(&self, a: u8) -> f64 {
        self.delta * f64::from(a) - 1.0
    }

    fn y_sd(&self) -> f64 {
        0.25 * (self.delta + 1.0).sqrt()
    }
}

impl DgmParams {
    pub fn q(&self) -> usize {
        match self {
            DgmParams::Dgm1(d) => d.gamma.len(),
            DgmParams::Dgm2(_) => 2,
            DgmParams::Toy(_) => 0,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            DgmParams::Dgm1(d) => d.alpha[0].len(),
            DgmParams::Dgm2(d) => d.p,
            DgmParams::Toy(_) => 1,
        }
    }

    /// Propensity score `P(A = 1 | X = x)`.
    pub fn e(&self, x: &[f64]) -> f64 {
        match self {
            DgmParams::Dgm1(d) => sigmoid(d.gamma.iter().zip(x).map(|(g, v)| g * v).sum()),
            DgmParams::Dgm2(_) => sigmoid(-x[0] + 2.0 * x[0] * x[1]),
            DgmParams::Toy(_) => 0.5,
        }
    }

    /// `E(Y | X = x, A = a)`.
    pub fn m(&self, a: u8, x: &[f64]) -> f64 {
        let af = f64::from(a);
        match self {
            DgmParams::Dgm1(d) => {
                let b = if a == 1 { &DGM1_BETA1 } else { &DGM1_BETA0 };
                af * d.delta_s
                    + x[..d.outcome_x].iter().sum::<f64>()
                    + d.alpha[a as usize][0]
                    + d.alpha[a as usize][1]
                    + b[0] * x[0]
                    + b[1] * x[1]
            }
            DgmParams::Dgm2(d) => af * d.delta_s + x[0] + x[1] + d.s_mean(a, x)[..DGM2_OUTCOME_S].iter().sum::<f64>(),
            DgmParams::Toy(t) => 1.5 * af + t.w_mean(a),
        }
    }

    /// `E(Y | X = x, S = s, A = a)`, the surrogate-conditional mean `ψ_a`.
    pub fn mu(&self, a: u8, x: &[f64], s: &[f64]) -> f64 {
        let af = f64::from(a);
        match self {
            DgmParams::Dgm1(d) => af * d.delta_s + x[..d.outcome_x].iter().sum::<f64>() + s[0] + s[1],
            DgmParams::Dgm2(d) => af * d.delta_s + x[0] + x[1] + s[..DGM2_OUTCOME_S].iter().sum::<f64>(),
            DgmParams::Toy(t) => {
                let mw = t.w_mean(a);
                1.5 * af + mw + t.delta / (t.delta * t.delta + 1.0) * (s[0] - t.delta * mw)
            }
        }
    }

    /// Surrogate score `P(A = 1 | X = x, S = s)` by Bayes' rule.
    pub fn pi(&self, x: &[f64], s: &[f64]) -> f64 {
        let prior = logit(self.e(x).clamp(1e-300, 1.0 - 1e-16));
        let llr = match self {
            DgmParams::Dgm1(d) => {
                let mean = |a: u8| -> Vec<f64> {
                    let b = if a == 1 { &DGM1_BETA1 } else { &DGM1_BETA0 };
                    d.alpha[a as usize]
                        .iter()
                        .enumerate()
                        .map(|(j, al)| al + if j < b.len() { b[j] * x[j] } else { 0.0 })
                        .collect()
                };
                log_gaussian_ratio_diag(s, &mean(1), &mean(0), d.sigma * d.sigma)
            }
            DgmParams::Dgm2(d) => {
                let r1: Vec<f64> = s.iter().zip(d.s_mean(1, x)).map(|(v, m)| v - m).collect();
                let r0: Vec<f64> = s.iter().zip(d.s_mean(0, x)).map(|(v, m)| v - m).collect();
                0.5 * (d.mahalanobis(&r0) - d.mahalanobis(&r1))
            }
            DgmParams::Toy(t) => {
                let var = t.delta * t.delta + 1.0;
                log_gaussian_ratio_diag(s, &[t.delta * t.w_mean(1)], &[t.delta * t.w_mean(0)], var)
            }
        };
        sigmoid(prior + llr)
    }

    pub fn draw_unit(&self, rng: &mut StdRng) -> Unit {
        match self {
            DgmParams::Dgm1(d) => {
                let q = d.gamma.len();
                let p = d.alpha[0].len();
                let x: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
                let a = u8::from(rng.random::<f64>() < self.e(&x));
                let noise = Normal::new(0.0, d.sigma).expect("positive sigma");
                let e: Vec<f64> = (0..p).map(|_| noise.sample(rng)).collect();
                let eps = noise.sample(rng);
                let s: [Vec<f64>; 2] = [0u8, 1].map(|arm| {
                    let b = if arm == 1 { &DGM1_BETA1 } else { &DGM1_BETA0 };
                    (0..p)
                        .map(|j| d.alpha[arm as usize][j] + if j < b.len() { b[j] * x[j] } else { 0.0 } + e[j])
                        .collect()
                });
                let y = [0u8, 1].map(|arm| self.mu(arm, &x, &s[arm as usize]) + eps);
                Unit { x, a, s, y }
            }
            DgmParams::Dgm2(d) => {
                let x1 = Uniform::new(-2.0, 5.0).expect("valid range").sample(rng);
                let x2 = f64::from(u8::from(Bernoulli::new(0.5).expect("valid p").sample(rng)));
                let x = vec![x1, x2];
                let a = u8::from(rng.random::<f64>() < self.e(&x));
                let common: f64 = rng.sample::<f64, _>(StandardNormal) * DGM2_RHO.sqrt();
                let e: Vec<f64> =
                    (0..d.p).map(|_| common + rng.sample::<f64, _>(StandardNormal) * (1.0 - DGM2_RHO).sqrt()).collect();
                let eps: f64 = rng.sample(StandardNormal);
                let s: [Vec<f64>; 2] =
                    [0u8, 1].map(|arm| d.s_mean(arm, &x).iter().zip(&e).map(|(m, v)| m + v).collect());
                let y = [0u8, 1].map(|arm| self.mu(arm, &x, &s[arm as usize]) + eps);
                Unit { x, a, s, y }
            }
            DgmParams::Toy(t) => {
                let a = u8::from(rng.random::<f64>() < 0.5);
                let ew: f64 = rng.sample(StandardNormal);
                let es: f64 = rng.sample(StandardNormal);
                let ey: f64 = rng.sample::<f64, _>(StandardNormal) * t.y_sd();
                let w = [0u8, 1].map(|arm| t.w_mean(arm) + ew);
                let s = [0usize, 1].map(|arm| vec![t.delta * w[arm] + es]);
                let y = [0usize, 1].map(|arm| 1.5 * arm as f64 + w[arm] + ey);
                Unit { x: Vec::new(), a, s, y }
            }
        }
    }
}

/// Both counterfactual surrogate and outcome vectors, for oracle use.
#[derive(Debug, Clone)]
pub struct Counterfactuals {
    pub s0: DesignMatrix,
    pub s1: DesignMatrix,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// Simulated study: observed data, counterfactuals and the parameters
/// that generated them.
#[derive(Debug, Clone)]
pub struct SimReplicate {
    pub data: Dataset,
    pub counterfactuals: Counterfactuals,
    pub params: DgmParams,
}

/// Draws `n` units from `params` with the stream `seed`.
pub fn simulate_units(params: &DgmParams, n: usize, seed: u64) -> Result<SimReplicate> {
    let mut rng = rng_from_seed(seed);
    let (p, q) = (params.p(), params.q());
    let mut xv = Vec::with_capacity(n * q);
    let mut sv = Vec::with_capacity(n * p);
    let mut s0 = Vec::with_capacity(n * p);
    let mut s1 = Vec::with_capacity(n * p);
    let (mut a, mut y, mut y0, mut y1) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let u = params.draw_unit(&mut rng);
        xv.extend_from_slice(&u.x);
        sv.extend_from_slice(&u.s[u.a as usize]);
        s0.extend_from_slice(&u.s[0]);
        s1.extend_from_slice(&u.s[1]);
        a.push(u.a);
        y.push(u.y[u.a as usize]);
        y0.push(u.y[0]);
        y1.push(u.y[1]);
    }
    let data = Dataset::new(DesignMatrix::from_row_major(n, q, &xv)?, DesignMatrix::from_row_major(n, p, &sv)?, a, y)?;
    Ok(SimReplicate {
        data,
        counterfactuals: Counterfactuals {
            s0: DesignMatrix::from_row_major(n, p, &s0)?,
            s1: DesignMatrix::from_row_major(n, p, &s1)?,
            y0,
            y1,
        },
        params: params.clone(),
    })
}

fn generate(spec: &DgmSpec, kind: DgmKind) -> Result<SimReplicate> {
    if spec.kind != kind {
        return Err(PteError::Config(format!("spec is for {:?}, not {kind:?}", spec.kind)));
    }
    simulate_units(&spec.params()?, spec.n, derive_seed(spec.seed, 1))
}

/// Linear surrogates and outcome with a logistic propensity in `q`
/// standard-normal covariates.
pub fn gen_dgm1(spec: &DgmSpec) -> Result<SimReplicate> {
    generate(spec, DgmKind::Dgm1)
}

/// Two covariates, interaction-driven propensity and surrogate shifts,
/// equicorrelated surrogate noise.
pub fn gen_dgm2(spec: &DgmSpec) -> Result<SimReplicate> {
    generate(spec, DgmKind::Dgm2)
}

/// Any mechanism, by `spec.kind`.
pub fn gen_replicate(spec: &DgmSpec) -> Result<SimReplicate> {
    generate(spec, spec.kind)
}
