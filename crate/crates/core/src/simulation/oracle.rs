use serde::{Deserialize, Serialize};

use super::dgm::{DgmKind, DgmParams, DgmSpec, SimReplicate};
use crate::crossfit::{FoldPlan, NuisanceEstimates, Truncation};
use crate::error::{PteError, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const MIN_ORACLE_MC: usize = 100_000;
const ORACLE_DELTA_FLOOR: f64 = 1e-10;

/// Running first and second moments of a pair of per-unit contrasts.
#[derive(Debug, Default, Clone, Copy)]
struct PairMoments {
    n: f64,
    s1: f64,
    s2: f64,
    s11: f64,
    s22: f64,
    s12: f64,
}

impl PairMoments {
    fn push(&mut self, u: f64, v: f64) {
        self.n += 1.0;
        self.s1 += u;
        self.s2 += v;
        self.s11 += u * u;
        self.s22 += v * v;
        self.s12 += u * v;
    }

    fn means(&self) -> (f64, f64) {
        (self.s1 / self.n, self.s2 / self.n)
    }

    fn cov(&self) -> [[f64; 2]; 2] {
        let (m1, m2) = self.means();
        let c12 = self.s12 / self.n - m1 * m2;
        [[(self.s11 / self.n - m1 * m1).max(0.0), c12], [c12, (self.s22 / self.n - m2 * m2).max(0.0)]]
    }
}

/// True estimands by counterfactual Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimands {
    pub n_mc: usize,
    /// `mean(Y⁽¹⁾ − Y⁽⁰⁾)`.
    pub delta: f64,
    /// `mean(μ₁(X, S) − μ₀(X, S))` over the observed mixture.
    pub delta_s: f64,
    pub r: f64,
    pub se_delta: f64,
    pub se_delta_s: f64,
    pub se_r: f64,
}

fn check_mc(n_mc: usize) -> Result<()> {
    if n_mc < MIN_ORACLE_MC {
        return Err(PteError::Config(format!("oracle needs at least {MIN_ORACLE_MC} draws, got {n_mc}")));
    }
    Ok(())
}

/// Monte Carlo over `n_mc` fresh units from the mechanism of `spec`,
/// streaming so that memory does not grow with `n_mc`.
pub fn oracle_estimands(spec: &DgmSpec, n_mc: usize) -> Result<OracleEstimands> {
    check_mc(n_mc)?;
    let params = spec.params()?;
    oracle_from_params(&params, n_mc, derive_seed(spec.seed, 2))
}

pub fn oracle_from_params(params: &DgmParams, n_mc: usize, seed: u64) -> Result<OracleEstimands> {
    let mut rng = rng_from_seed(seed);
    let mut m = PairMoments::default();
    for _ in 0..n_mc {
        let u = params.draw_unit(&mut rng);
        let s = &u.s[u.a as usize];
        m.push(u.y[1] - u.y[0], params.mu(1, &u.x, s) - params.mu(0, &u.x, s));
    }
    let (delta, delta_s) = m.means();
    if delta.abs() <= ORACLE_DELTA_FLOOR {
        return Err(PteError::Numerical(format!("true treatment effect {delta:e} is too close to zero")));
    }
    let c = m.cov();
    let g = [delta_s / (delta * delta), -1.0 / delta];
    let var_r = g[0] * g[0] * c[0][0] + 2.0 * g[0] * g[1] * c[0][1] + g[1] * g[1] * c[1][1];
    let nf = n_mc as f64;
    Ok(OracleEstimands {
        n_mc,
        delta,
        delta_s,
        r: 1.0 - delta_s / delta,
        se_delta: (c[0][0] / nf).sqrt(),
        se_delta_s: (c[1][1] / nf).sqrt(),
        se_r: (var_r.max(0.0) / nf).sqrt(),
    })
}

/// `1 − Δ_S/Δ` by counterfactual Monte Carlo.
pub fn true_pte_oracle(spec: &DgmSpec, n_mc: usize) -> Result<f64> {
    Ok(oracle_estimands(spec, n_mc)?.r)
}

/// Closed-form `Δ` of the first mechanism's surrogate pathway plus `Δ_S`.
pub fn dgm1_true_pte(delta_s: f64) -> f64 {
    1.0 - delta_s / (delta_s + 1.0)
}

/// Surrogate-pathway effect of the second mechanism:
/// `10·E(X₁ + X₁X₂ − 0.5) + 5·E(X₁X₂ − 0.5)` with `X₁ ~ U(−2, 5)` and
/// `X₂ ~ Bernoulli(½)`.
pub const DGM2_SURROGATE_EFFECT: f64 = 18.75;

pub fn dgm2_true_pte(delta_s: f64) -> f64 {
    1.0 - delta_s / (delta_s + DGM2_SURROGATE_EFFECT)
}

/// `Δ_S` giving oracle PTE `target_r` in the second mechanism, by
/// bisection on [`oracle_estimands`] with common random numbers.
/// The PTE does not depend on `p ≥ 15`, so the search runs at `p = 15`.
pub fn calibrate_dgm2_delta_s(target_r: f64, n_mc: usize, seed: u64, tol: f64) -> Result<f64> {
    if !(target_r > 0.0 && target_r < 1.0) {
        return Err(PteError::Config(format!("target R must lie in (0, 1), got {target_r}")));
    }
    check_mc(n_mc)?;
    let r_at = |ds: f64| -> Result<f64> { Ok(oracle_estimands(&DgmSpec::dgm2(1, 15, ds, seed), n_mc)?.r) };
    let (mut lo, mut hi) = (0.0, 1.0);
    while r_at(hi)? > target_r {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            return Err(PteError::Numerical("could not bracket the target PTE".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = r_at(mid)?;
        if (r - target_r).abs() < tol * 1e-3 || hi - lo < 1e-12 {
            return Ok(mid);
        }
        if r > target_r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One condition's Monte Carlo evaluation. `margin` is oriented by the
/// sign of `Δ`, so a condition holds when its margin is non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub holds: bool,
    pub margin: f64,
    pub mc_se: f64,
}

impl Condition {
    /// Holds unless the margin is negative by more than three standard
    /// errors.
    fn new(margin: f64, mc_se: f64) -> Self {
        Self { holds: margin + 3.0 * mc_se >= 0.0, margin, mc_se }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionConditions {
    /// `Δ` from the same draws; its sign orients both margins.
    pub delta: f64,
    /// Mixture contrast between the counterfactual surrogate laws of
    /// `e·ψ₁ + (1 − e)·ψ₀`.
    pub as1: Condition,
    /// `E{ψ₁(X, S) − ψ₀(X, S)}` over the observed mixture.
    pub as2: Condition,
}

/// Evaluates the conditions that keep the PTE in `[0, 1]` for the
/// mechanism behind `replicate`, with `n_mc` fresh counterfactual draws.
pub fn check_proportion_conditions(replicate: &SimReplicate, n_mc: usize, seed: u64) -> Result<ProportionConditions> {
    if n_mc < 2 {
        return Err(PteError::Config("at least 2 draws required".into()));
    }
    let params = &replicate.params;
    let mut rng = rng_from_seed(seed);
    let mut d = PairMoments::default();
    let mut c = PairMoments::default();
    for _ in 0..n_mc {
        let u = params.draw_unit(&mut rng);
        let e = params.e(&u.x);
        let blend = |s: &[f64]| e * params.mu(1, &u.x, s) + (1.0 - e) * params.mu(0, &u.x, s);
        let s = &u.s[u.a as usize];
        d.push(u.y[1] - u.y[0], 0.0);
        c.push(blend(&u.s[1]) - blend(&u.s[0]), params.mu(1, &u.x, s) - params.mu(0, &u.x, s));
    }
    let delta = d.means().0;
    let sign = if delta < 0.0 { -1.0 } else { 1.0 };
    let (m1, m2) = c.means();
    let cov = c.cov();
    let nf = n_mc as f64;
    Ok(ProportionConditions {
        delta,
        as1: Condition::new(sign * m1, (cov[0][0] / nf).sqrt()),
        as2: Condition::new(sign * m2, (cov[1][1] / nf).sqrt()),
    })
}

/// The generating functions evaluated at the observed rows, as injectable
/// nuisance estimates.
pub fn oracle_nuisances(replicate: &SimReplicate, plan: FoldPlan, truncation: Truncation) -> Result<NuisanceEstimates> {
    let data = &replicate.data;
    let p = &replicate.params;
    let n = data.n();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|i| (data.x.row(i), data.s.row(i))).collect();
    let e = rows.iter().map(|(x, _)| p.e(x)).collect();
    let m0 = rows.iter().map(|(x, _)| p.m(0, x)).collect();
    let m1 = rows.iter().map(|(x, _)| p.m(1, x)).collect();
    let pi = rows.iter().map(|(x, s)| p.pi(x, s)).collect();
    let mu0 = rows.iter().map(|(x, s)| p.mu(0, x, s)).collect();
    let mu1 = rows.iter().map(|(x, s)| p.mu(1, x, s)).collect();
    NuisanceEstimates::injected(e, m0, m1, pi, mu0, mu1, plan, truncation)
}

/// Analytic PTE where the mechanism admits one.
pub fn analytic_pte(spec: &DgmSpec) -> f64 {
    match spec.kind {
        DgmKind::Dgm1 => dgm1_true_pte(spec.delta_s),
        DgmKind::Dgm2 => dgm2_true_pte(spec.delta_s),
        DgmKind::Toy => super::toy::toy_pte_analytic(spec.delta_toy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::dgm::gen_dgm1;

    fn small_dgm1(delta_s: f64) -> DgmSpec {
        DgmSpec { p: 10, q: 10, delta_s, ..DgmSpec::dgm1(1, 0.5, 3) }
    }

    #[test]
    fn dgm1_oracle_agrees_with_analytic() {
        let est = oracle_estimands(&small_dgm1(1.0), 200_000).unwrap();
        assert!((est.r - 0.5).abs() < 3.0 * est.se_r, "{est:?}");
        assert!((est.r - 0.5).abs() < 0.01);
    }

    #[test]
    fn no_direct_effect_gives_full_capture() {
        for spec in [small_dgm1(0.0), DgmSpec::dgm2(1, 15, 0.0, 2)] {
            let r = true_pte_oracle(&spec, 100_000).unwrap();
            assert!((r - 1.0).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn dgm2_surrogate_effect_matches_closed_form() {
        let est = oracle_estimands(&DgmSpec::dgm2(1, 15, 0.0, 5), 400_000).unwrap();
        assert!((est.delta - DGM2_SURROGATE_EFFECT).abs() < 3.0 * est.se_delta, "{est:?}");
    }

    #[test]
    fn pte_decreases_in_direct_effect() {
        let rs: Vec<f64> =
            [0.0, 0.5, 1.0, 2.0, 4.0].iter().map(|&d| true_pte_oracle(&small_dgm1(d), 100_000).unwrap()).collect();
        assert!(rs.windows(2).all(|w| w[1] < w[0]), "{rs:?}");
    }

    #[test]
    fn too_few_draws_rejected() {
        assert!(true_pte_oracle(&small_dgm1(1.0), 10).is_err());
    }

    #[test]
    fn conditions_hold_for_default_dgm1() {
        let rep = gen_dgm1(&small_dgm1(1.0).with_seed(4)).unwrap();
        let c = check_proportion_conditions(&rep, 100_000, 1).unwrap();
        assert!(c.as1.holds && c.as2.holds);
        assert!(c.as1.margin > 3.0 * c.as1.mc_se && c.as2.margin > 3.0 * c.as2.mc_se, "{c:?}");
    }

    #[test]
    fn equal_surrogate_regressions_give_zero_margin() {
        let rep = gen_dgm1(&small_dgm1(0.0)).unwrap();
        let c = check_proportion_conditions(&rep, 100_000, 1).unwrap();
        assert!(c.as2.margin.abs() <= 3.0 * c.as2.mc_se + 1e-12, "{c:?}");
        assert!(c.as2.holds);
    }

    #[test]
    fn reversed_direct_effect_violates_as2() {
        let rep = gen_dgm1(&small_dgm1(-0.5)).unwrap();
        let c = check_proportion_conditions(&rep, 100_000, 1).unwrap();
        assert!(c.delta > 0.0);
        assert!(!c.as2.holds, "{c:?}");
        assert!((dgm1_true_pte(-0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_hits_closed_form() {
        for target in [0.41, 0.85] {
            let ds = calibrate_dgm2_delta_s(target, 100_000, 11, 0.005).unwrap();
            let r = true_pte_oracle(&DgmSpec::dgm2(1, 15, ds, 11), 100_000).unwrap();
            assert!((r - target).abs() < 0.005);
            assert!((dgm2_true_pte(ds) - target).abs() < 0.01, "{ds}");
        }
    }
}
