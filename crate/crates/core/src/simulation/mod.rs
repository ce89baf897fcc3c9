//! Data-generating mechanisms, Monte Carlo oracles and the replication
//! study runner.

pub mod calibration;
mod dgm;
mod oracle;
mod study;
mod toy;

pub use calibration::{dgm2_delta_s_for, DGM2_DELTA_S_R041, DGM2_DELTA_S_R085};
pub use dgm::{
    gen_dgm1, gen_dgm2, gen_replicate, simulate_units, Counterfactuals, Dgm1Params, Dgm2Params, DgmKind, DgmParams,
    DgmSpec, SimReplicate, ToyParams, Unit, DGM1_MIN_P, DGM1_MIN_Q, DGM2_MIN_P,
};
pub use oracle::{
    analytic_pte, calibrate_dgm2_delta_s, check_proportion_conditions, dgm1_true_pte, dgm2_true_pte, oracle_estimands,
    oracle_from_params, oracle_nuisances, true_pte_oracle, Condition, OracleEstimands, ProportionConditions,
    DGM2_SURROGATE_EFFECT, MIN_ORACLE_MC,
};
pub use study::{run_study, run_study_with, summarize, ReplicateRecord, SimSummary, StudyOptions, DEFAULT_ORACLE_MC};
pub use toy::{gen_toy, toy_pte, toy_pte_analytic, LineFit, ToyPte, ToyReplicate, TOY_REFERENCE_PTE};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, pop_variance};
    use proptest::prelude::*;

    fn small(kind: DgmKind, n: usize, seed: u64) -> DgmSpec {
        match kind {
            DgmKind::Dgm1 => DgmSpec { p: 8, q: 30, ..DgmSpec::dgm1(n, 0.5, seed) },
            DgmKind::Dgm2 => DgmSpec::dgm2(n, 20, 2.0, seed),
            DgmKind::Toy => DgmSpec::toy(n, 0.5, seed),
        }
    }

    fn assert_consistent(rep: &SimReplicate) {
        let d = &rep.data;
        let cf = &rep.counterfactuals;
        for i in 0..d.n() {
            let a = f64::from(d.a[i]);
            assert_eq!(d.y[i], a * cf.y1[i] + (1.0 - a) * cf.y0[i]);
            for j in 0..d.s.cols() {
                assert_eq!(d.s.get(i, j), a * cf.s1.get(i, j) + (1.0 - a) * cf.s0.get(i, j));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn observed_rows_follow_their_arm(seed in any::<u64>(), n in 1usize..60, k in 0usize..3) {
            let kind = [DgmKind::Dgm1, DgmKind::Dgm2, DgmKind::Toy][k];
            assert_consistent(&gen_replicate(&small(kind, n, seed)).unwrap());
        }
    }

    #[test]
    fn replicates_are_deterministic() {
        for kind in [DgmKind::Dgm1, DgmKind::Dgm2, DgmKind::Toy] {
            let a = gen_replicate(&small(kind, 50, 4)).unwrap();
            let b = gen_replicate(&small(kind, 50, 4)).unwrap();
            assert_eq!(a.data, b.data);
            assert_eq!(a.counterfactuals.y1, b.counterfactuals.y1);
            let c = gen_replicate(&small(kind, 50, 5)).unwrap();
            assert_ne!(a.data.y, c.data.y);
        }
    }

    #[test]
    fn spec_validation() {
        let bad = [
            DgmSpec { p: 4, ..DgmSpec::dgm1(10, 0.5, 0) },
            DgmSpec { q: 4, ..DgmSpec::dgm1(10, 0.5, 0) },
            DgmSpec::dgm1(10, 0.0, 0),
            DgmSpec::dgm1(0, 0.5, 0),
            DgmSpec::dgm2(10, 14, 1.0, 0),
            DgmSpec::toy(10, -1.0, 0),
        ];
        for s in bad {
            assert!(matches!(gen_replicate(&s), Err(crate::PteError::Config(_))), "{s:?}");
        }
        assert!(gen_dgm2(&DgmSpec::dgm1(10, 0.5, 0)).is_err());
    }

    #[test]
    fn dgm1_surrogate_pathway_effect_is_one() {
        let rep = gen_dgm1(&DgmSpec::dgm1(1, 0.5, 1)).unwrap();
        let DgmParams::Dgm1(p) = &rep.params else { panic!() };
        let through = (p.alpha[1][0] + p.alpha[1][1]) - (p.alpha[0][0] + p.alpha[0][1]);
        assert_eq!(through, 1.0);
        assert!(p.alpha[1][2..].iter().all(|v| (0.0..1.0).contains(v)));
        assert!(p.alpha[0][2..].iter().all(|v| (-0.5..0.5).contains(v)));
    }

    #[test]
    fn dgm1_treatment_share_is_moderate() {
        let rep = gen_dgm1(&DgmSpec::dgm1(10_000, 0.5, 2)).unwrap();
        let share = mean(&rep.data.a.iter().map(|&a| f64::from(a)).collect::<Vec<_>>());
        assert!((0.3..=0.7).contains(&share), "{share}");
    }

    #[test]
    fn dgm1_noise_vanishes_with_sigma() {
        let spec = DgmSpec { p: 6, q: 6, ..DgmSpec::dgm1(500, 1e-9, 3) };
        let rep = gen_dgm1(&spec).unwrap();
        let d = &rep.data;
        let resid: Vec<f64> = (0..d.n()).map(|i| d.y[i] - rep.params.mu(d.a[i], &d.x.row(i), &d.s.row(i))).collect();
        assert!(resid.iter().all(|r| r.abs() < 1e-7));
    }

    #[test]
    fn dgm2_noise_is_equicorrelated() {
        let spec = DgmSpec::dgm2(100_000, 15, 1.0, 6);
        let rep = gen_dgm2(&spec).unwrap();
        let DgmParams::Dgm2(_) = rep.params else { panic!() };
        let cf = &rep.counterfactuals;
        let d = &rep.data;
        // Columns past the tenth carry 1.5 plus noise under treatment.
        let noise: Vec<Vec<f64>> = (0..15)
            .map(|j| {
                (0..d.n())
                    .map(|i| {
                        let x = d.x.row(i);
                        let shift = if j < 10 { x[0] + x[1] } else { 0.0 };
                        cf.s1.get(i, j) - 1.5 - shift
                    })
                    .collect()
            })
            .collect();
        for j in 0..15 {
            assert!((pop_variance(&noise[j]) - 1.0).abs() < 0.02);
            for k in 0..j {
                let (mj, mk) = (mean(&noise[j]), mean(&noise[k]));
                let c = noise[j].iter().zip(&noise[k]).map(|(a, b)| (a - mj) * (b - mk)).sum::<f64>() / d.n() as f64;
                assert!((c - 0.4).abs() < 0.02, "{j},{k}: {c}");
            }
        }
    }

    #[test]
    fn dgm2_unshifted_columns_have_constant_mean() {
        let rep = gen_dgm2(&DgmSpec::dgm2(2000, 20, 1.0, 1)).unwrap();
        for j in 10..20 {
            let col = rep.counterfactuals.s1.column(j);
            assert!((mean(col) - 1.5).abs() < 0.1);
        }
    }

    #[test]
    fn surrogate_scores_are_calibrated() {
        for spec in [small(DgmKind::Dgm1, 60_000, 2), small(DgmKind::Dgm2, 60_000, 2), small(DgmKind::Toy, 60_000, 2)] {
            let rep = gen_replicate(&spec).unwrap();
            let d = &rep.data;
            let pi: Vec<f64> = (0..d.n()).map(|i| rep.params.pi(&d.x.row(i), &d.s.row(i))).collect();
            for b in 0..5 {
                let (lo, hi) = (b as f64 / 5.0, (b + 1) as f64 / 5.0);
                let rows: Vec<usize> = (0..d.n()).filter(|&i| pi[i] >= lo && pi[i] < hi).collect();
                if rows.len() < 2000 {
                    continue;
                }
                let pbar = rows.iter().map(|&i| pi[i]).sum::<f64>() / rows.len() as f64;
                let abar = rows.iter().map(|&i| f64::from(d.a[i])).sum::<f64>() / rows.len() as f64;
                assert!((pbar - abar).abs() < 0.02, "{:?} bin {b}: {pbar} vs {abar}", spec.kind);
            }
        }
    }

    #[test]
    fn outcome_regressions_match_empirical_means() {
        let rep = gen_dgm2(&DgmSpec::dgm2(50_000, 15, 2.0, 3)).unwrap();
        let d = &rep.data;
        for arm in [0u8, 1] {
            let rows: Vec<usize> = (0..d.n()).filter(|&i| d.a[i] == arm).collect();
            let rm: Vec<f64> = rows.iter().map(|&i| d.y[i] - rep.params.m(arm, &d.x.row(i))).collect();
            let rmu: Vec<f64> = rows.iter().map(|&i| d.y[i] - rep.params.mu(arm, &d.x.row(i), &d.s.row(i))).collect();
            for r in [rm, rmu] {
                let se = (pop_variance(&r) / r.len() as f64).sqrt();
                assert!(mean(&r).abs() < 4.0 * se, "{} vs {se}", mean(&r));
            }
        }
    }

    #[test]
    fn fixed_coefficients_shared_across_seeds() {
        let base = DgmSpec { coefficient_seed: Some(77), p: 6, q: 6, ..DgmSpec::dgm1(20, 0.5, 1) };
        let a = base.params().unwrap();
        let b = base.with_seed(2).params().unwrap();
        assert_eq!(a, b);
        let free = DgmSpec { coefficient_seed: None, ..base.clone() };
        assert_ne!(free.params().unwrap(), free.with_seed(2).params().unwrap());
    }
}
