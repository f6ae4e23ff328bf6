//! Observation layout for repeated cross-section data.
//!
//! Each observation carries an outcome, a binary treatment-group indicator,
//! a binary period indicator, and covariates split by type: continuous,
//! unordered discrete, and ordered discrete. The four treatment-period
//! cells index most downstream computation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation from the pooled repeated cross-section sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Observed outcome.
    pub y: f64,
    /// Treatment group indicator (0 or 1).
    pub d: u8,
    /// Period indicator (0 = pre, 1 = post).
    pub t: u8,
    /// Continuous covariates.
    pub x_c: Vec<f64>,
    /// Unordered discrete covariates (category codes).
    pub x_u: Vec<i64>,
    /// Ordered discrete covariates.
    pub x_o: Vec<i64>,
    /// Optional cluster identifier for clustered inference.
    pub cluster: Option<u64>,
}

impl Sample {
    /// Treatment-period cell this observation falls in.
    pub fn cell(&self) -> Cell {
        Cell::of(self.d, self.t)
    }
}

/// Treatment-period cell (d, t).
///
/// The enumeration order fixes the column order of probability matrices
/// and weight vectors throughout the crate: (1,1), (1,0), (0,1), (0,0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    D1T1,
    D1T0,
    D0T1,
    D0T0,
}

impl Cell {
    /// All four cells, in the canonical order.
    pub const ALL: [Cell; 4] = [Cell::D1T1, Cell::D1T0, Cell::D0T1, Cell::D0T0];

    /// The three cells other than the treated-post reference cell.
    pub const MINUS: [Cell; 3] = [Cell::D1T0, Cell::D0T1, Cell::D0T0];

    pub fn of(d: u8, t: u8) -> Cell {
        match (d, t) {
            (1, 1) => Cell::D1T1,
            (1, 0) => Cell::D1T0,
            (0, 1) => Cell::D0T1,
            (0, 0) => Cell::D0T0,
            _ => panic!("treatment and period indicators must be 0 or 1"),
        }
    }

    /// Position in the canonical order.
    pub fn index(self) -> usize {
        match self {
            Cell::D1T1 => 0,
            Cell::D1T0 => 1,
            Cell::D0T1 => 2,
            Cell::D0T0 => 3,
        }
    }

    pub fn d(self) -> u8 {
        matches!(self, Cell::D1T1 | Cell::D1T0) as u8
    }

    pub fn t(self) -> u8 {
        matches!(self, Cell::D1T1 | Cell::D0T1) as u8
    }

    /// Alternating sign (-1)^(d+t) used by the difference-in-differences
    /// aggregation.
    pub fn sign(self) -> f64 {
        match self {
            Cell::D1T1 | Cell::D0T0 => 1.0,
            Cell::D1T0 | Cell::D0T1 => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cell::D1T1 => "(1,1)",
            Cell::D1T0 => "(1,0)",
            Cell::D0T1 => "(0,1)",
            Cell::D0T0 => "(0,0)",
        }
    }
}

/// Covariate layout shared by every observation in a data set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateLayout {
    pub n_continuous: usize,
    pub n_unordered: usize,
    pub n_ordered: usize,
}

/// Validate a data set and return its covariate layout.
///
/// Checks that the sample is non-empty, indicators are binary, outcomes and
/// continuous covariates are finite, and every observation shares one
/// covariate layout.
pub fn validate_layout(data: &[Sample]) -> Result<CovariateLayout> {
    let first = data
        .first()
        .ok_or_else(|| Error::Shape("data set is empty".into()))?;
    let layout = CovariateLayout {
        n_continuous: first.x_c.len(),
        n_unordered: first.x_u.len(),
        n_ordered: first.x_o.len(),
    };
    for (i, s) in data.iter().enumerate() {
        if s.d > 1 || s.t > 1 {
            return Err(Error::Shape(format!(
                "observation {i}: treatment/period indicators must be 0 or 1"
            )));
        }
        if !s.y.is_finite() {
            return Err(Error::Shape(format!("observation {i}: outcome is not finite")));
        }
        if s.x_c.len() != layout.n_continuous
            || s.x_u.len() != layout.n_unordered
            || s.x_o.len() != layout.n_ordered
        {
            return Err(Error::Shape(format!(
                "observation {i}: covariate layout differs from observation 0"
            )));
        }
        if s.x_c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "observation {i}: continuous covariate is not finite"
            )));
        }
    }
    Ok(layout)
}

/// Number of observations in each treatment-period cell, canonical order.
pub fn cell_counts(data: &[Sample]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for s in data {
        counts[s.cell().index()] += 1;
    }
    counts
}

/// Error if any treatment-period cell is empty.
pub fn require_all_cells(data: &[Sample]) -> Result<()> {
    let counts = cell_counts(data);
    for cell in Cell::ALL {
        if counts[cell.index()] == 0 {
            return Err(Error::Estimation(format!(
                "empty treatment cell {}",
                cell.label()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(d: u8, t: u8) -> Sample {
        Sample {
            y: 1.0,
            d,
            t,
            x_c: vec![0.0],
            x_u: vec![],
            x_o: vec![],
            cluster: None,
        }
    }

    #[test]
    fn cell_order_and_signs() {
        assert_eq!(Cell::of(1, 1).index(), 0);
        assert_eq!(Cell::of(1, 0).index(), 1);
        assert_eq!(Cell::of(0, 1).index(), 2);
        assert_eq!(Cell::of(0, 0).index(), 3);
        assert_eq!(Cell::D1T1.sign(), 1.0);
        assert_eq!(Cell::D1T0.sign(), -1.0);
        assert_eq!(Cell::D0T1.sign(), -1.0);
        assert_eq!(Cell::D0T0.sign(), 1.0);
        for cell in Cell::ALL {
            assert_eq!(Cell::of(cell.d(), cell.t()), cell);
        }
    }

    #[test]
    fn layout_validation_catches_mismatch() {
        let mut data = vec![obs(1, 1), obs(0, 0)];
        data[1].x_c = vec![0.0, 1.0];
        assert!(validate_layout(&data).is_err());

        let bad = vec![Sample { d: 2, ..obs(1, 1) }];
        assert!(validate_layout(&bad).is_err());

        assert!(validate_layout(&[]).is_err());
    }

    #[test]
    fn missing_cell_is_reported_by_name() {
        let data = vec![obs(1, 1), obs(1, 0), obs(0, 1)];
        let err = require_all_cells(&data).unwrap_err();
        assert!(err.to_string().contains("(0,0)"), "{err}");
    }
}
