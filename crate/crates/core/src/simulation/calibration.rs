//! Second-mechanism direct effects reproducing the two target PTEs.
//!
//! Produced by `surrogate-pte calibrate --target-r <R> --mc 1000000
//! --seed 20240601`, which bisects the counterfactual Monte Carlo oracle.

pub const CALIBRATION_SEED: u64 = 20240601;
pub const CALIBRATION_MC: usize = 1_000_000;

/// `Δ_S` giving `R = 0.85`.
pub const DGM2_DELTA_S_R085: f64 = 3.302001953125;
/// `Δ_S` giving `R = 0.41`.
pub const DGM2_DELTA_S_R041: f64 = 26.92578125;

/// Committed `Δ_S` for a target PTE, when one is stored.
pub fn dgm2_delta_s_for(target_r: f64) -> Option<f64> {
    if (target_r - 0.85).abs() < 1e-9 {
        Some(DGM2_DELTA_S_R085)
    } else if (target_r - 0.41).abs() < 1e-9 {
        Some(DGM2_DELTA_S_R041)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{dgm2_true_pte, true_pte_oracle, DgmSpec};

    #[test]
    fn committed_values_hit_targets() {
        for (target, ds) in [(0.85, DGM2_DELTA_S_R085), (0.41, DGM2_DELTA_S_R041)] {
            assert_eq!(dgm2_delta_s_for(target), Some(ds));
            assert!((dgm2_true_pte(ds) - target).abs() < 0.005);
            let r = true_pte_oracle(&DgmSpec::dgm2(1, 50, ds, 99), 200_000).unwrap();
            assert!((r - target).abs() < 0.02, "{r}");
        }
        assert_eq!(dgm2_delta_s_for(0.5), None);
    }
}
