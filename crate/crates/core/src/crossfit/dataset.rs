use serde::{Deserialize, Serialize};

use crate::error::{PteError, Result};
use crate::learners::DesignMatrix;

/// Observed study data: covariates `X`, surrogates `S`, binary treatment
/// `A` and outcome `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DesignMatrix,
    pub s: DesignMatrix,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub ids: Vec<String>,
}

/// Row counts per treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub control: usize,
    pub treated: usize,
}

impl ArmCounts {
    pub fn of(a: &[u8]) -> Self {
        let treated = a.iter().filter(|&&v| v == 1).count();
        Self { control: a.len() - treated, treated }
    }

    pub fn get(&self, arm: u8) -> usize {
        if arm == 1 {
            self.treated
        } else {
            self.control
        }
    }
}

impl Dataset {
    /// Validates shapes and values; ids default to `1..=n`.
    pub fn new(x: DesignMatrix, s: DesignMatrix, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let ids = (1..=y.len()).map(|i| i.to_string()).collect();
        Self::with_ids(x, s, a, y, ids)
    }

    pub fn with_ids(x: DesignMatrix, s: DesignMatrix, a: Vec<u8>, y: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(PteError::Data("dataset has no rows".into()));
        }
        for (name, len) in [("X", x.rows()), ("S", s.rows()), ("A", a.len()), ("ids", ids.len())] {
            if len != n {
                return Err(PteError::Data(format!("{name} has {len} rows but Y has {n}")));
            }
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(PteError::Data(format!("treatment at row {} is {}, expected 0 or 1", i + 1, a[i])));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(PteError::Data(format!("non-finite outcome at row {}", i + 1)));
        }
        Ok(Self { x, s, a, y, ids })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn arm_counts(&self) -> ArmCounts {
        ArmCounts::of(&self.a)
    }

    /// Errors unless both arms have at least one row.
    pub fn require_both_arms(&self) -> Result<()> {
        let c = self.arm_counts();
        if c.treated == 0 || c.control == 0 {
            return Err(PteError::Data(format!(
                "both treatment arms are required (treated = {}, control = {})",
                c.treated, c.control
            )));
        }
        Ok(())
    }

    /// `[X | S]`, the regressors of the surrogate-conditional nuisances.
    pub fn xs(&self) -> Result<DesignMatrix> {
        self.x.hstack(&self.s)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            x: self.x.select_rows(idx)?,
            s: self.s.select_rows(idx)?,
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        })
    }
}
