use crate::error::{PteError, Result};

/// Dense real design matrix with per-column summary statistics.
///
/// Indexing is `(row, column)`; storage is column-major because every
/// learner here works column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    column_means: Vec<f64>,
    column_scales: Vec<f64>,
}

/// Columns whose population standard deviation falls below this (relative
/// to their magnitude) are treated as constant.
const CONSTANT_TOL: f64 = 1e-10;

impl DesignMatrix {
    /// Builds from a row-major buffer.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(PteError::Data(format!(
                "expected {} values for a {rows}x{cols} design, got {}",
                rows * cols,
                values.len()
            )));
        }
        let mut col_major = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                col_major[j * rows + i] = values[i * cols + j];
            }
        }
        Self::from_col_major(rows, cols, col_major)
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(PteError::Data(format!("column {j} has {} rows, expected {rows}", c.len())));
            }
            values.extend_from_slice(c);
        }
        Self::from_col_major(rows, columns.len(), values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(PteError::Data(format!("row {i} has {} columns, expected {p}", r.len())));
            }
            flat.extend_from_slice(r);
        }
        Self::from_row_major(n, p, &flat)
    }

    /// A design with `rows` rows and no columns.
    pub fn empty(rows: usize) -> Result<Self> {
        Self::from_col_major(rows, 0, Vec::new())
    }

    pub fn from_col_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(PteError::Data("design matrix needs at least one row".into()));
        }
        if values.len() != rows * cols {
            return Err(PteError::Data(format!(
                "expected {} values for a {rows}x{cols} design, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(PteError::Data(format!(
                "non-finite design entry at row {}, column {}",
                pos % rows,
                pos / rows
            )));
        }
        let mut column_means = Vec::with_capacity(cols);
        let mut column_scales = Vec::with_capacity(cols);
        for j in 0..cols {
            let c = &values[j * rows..(j + 1) * rows];
            let m = c.iter().sum::<f64>() / rows as f64;
            let var = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / rows as f64;
            let sd = var.sqrt();
            column_means.push(m);
            column_scales.push(if sd <= CONSTANT_TOL * m.abs().max(1.0) { 0.0 } else { sd });
        }
        Ok(Self { rows, cols, values, column_means, column_scales })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.values[col * self.rows..(col + 1) * self.rows]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(row, j)).collect()
    }

    /// Population means.
    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    /// Population standard deviations; zero marks a constant column.
    pub fn column_scales(&self) -> &[f64] {
        &self.column_scales
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let m = idx.len();
        let mut values = Vec::with_capacity(m * self.cols);
        for j in 0..self.cols {
            let c = self.column(j);
            values.extend(idx.iter().map(|&i| c[i]));
        }
        Self::from_col_major(m, self.cols, values)
    }

    pub fn select_columns(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            values.extend_from_slice(self.column(j));
        }
        Self::from_col_major(self.rows, idx.len(), values)
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &DesignMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(PteError::Data(format!("cannot stack designs with {} and {} rows", self.rows, other.rows)));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            rows: self.rows,
            cols: self.cols + other.cols,
            values,
            column_means: [self.column_means.as_slice(), other.column_means.as_slice()].concat(),
            column_scales: [self.column_scales.as_slice(), other.column_scales.as_slice()].concat(),
        })
    }

    /// Centered and scaled copy of the non-constant columns.
    pub(crate) fn standardize(&self) -> Standardized {
        let active: Vec<usize> = (0..self.cols).filter(|&j| self.column_scales[j] > 0.0).collect();
        let n = self.rows;
        let mut data = Vec::with_capacity(n * active.len());
        for &j in &active {
            let (m, s) = (self.column_means[j], self.column_scales[j]);
            data.extend(self.column(j).iter().map(|x| (x - m) / s));
        }
        Standardized { n, active, data }
    }

    /// Applies another design's standardization to this design's columns
    /// `active` (used to move test data into a training coordinate system).
    pub(crate) fn standardize_like(&self, reference: &Standardized, means: &[f64], scales: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut data = Vec::with_capacity(n * reference.active.len());
        for &j in &reference.active {
            let (m, s) = (means[j], scales[j]);
            data.extend(self.column(j).iter().map(|x| (x - m) / s));
        }
        data
    }
}

/// Standardized non-constant columns (column-major, `n` rows each).
#[derive(Debug, Clone)]
pub(crate) struct Standardized {
    pub n: usize,
    /// Original column index of each standardized column.
    pub active: Vec<usize>,
    pub data: Vec<f64>,
}

impl Standardized {
    pub fn p(&self) -> usize {
        self.active.len()
    }

    pub fn col(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_and_column_views_agree() {
        let d = DesignMatrix::from_row_major(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.get(1, 0), 4.0);
        assert_eq!(d.column(2), &[3.0, 6.0]);
        assert_eq!(d.row(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(d.to_row_major(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn constant_columns_get_zero_scale() {
        let d = DesignMatrix::from_columns(3, &[vec![0.1, 0.1, 0.1], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(d.column_scales()[0], 0.0);
        assert!((d.column_scales()[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let s = d.standardize();
        assert_eq!(s.active, vec![1]);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(DesignMatrix::from_row_major(1, 1, &[f64::NAN]).is_err());
        assert!(DesignMatrix::from_row_major(0, 2, &[]).is_err());
        assert!(DesignMatrix::empty(4).is_ok());
    }

    #[test]
    fn row_selection_recomputes_stats() {
        let d = DesignMatrix::from_columns(4, &[vec![1.0, 1.0, 5.0, 7.0]]).unwrap();
        let s = d.select_rows(&[0, 1]).unwrap();
        assert_eq!(s.column_scales()[0], 0.0);
        assert_eq!(s.column_means()[0], 1.0);
    }
}
