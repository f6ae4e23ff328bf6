//! Kernel weights for mixed continuous/discrete covariates.
//!
//! Continuous covariates are weighted with a compactly supported product
//! kernel scaled by a bandwidth; discrete covariates use the Li–Racine
//! kernel, with one smoothing parameter for unordered and one for ordered
//! coordinates (Li & Racine, *Nonparametric Econometrics*, 2007). The
//! composite weight between two observations is the product of the two.
//!
//! All continuous families integrate to one per coordinate. The Gaussian
//! kernel is intentionally not offered: every family here has compact
//! support on [-1, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;

/// Univariate kernel family, each supported on [-1, 1] and integrating to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// K(u) = 3/4 (1 - u^2).
    #[default]
    Epanechnikov,
    /// K(u) = 1 - |u|.
    Triangular,
    /// K(u) = 15/16 (1 - u^2)^2.
    Biweight,
    /// K(u) = 35/32 (1 - u^2)^3.
    Triweight,
}

impl KernelFamily {
    /// Evaluate the univariate kernel; zero outside [-1, 1].
    pub fn value(self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        match self {
            KernelFamily::Epanechnikov => 0.75 * s,
            KernelFamily::Triangular => 1.0 - a,
            KernelFamily::Biweight => 15.0 / 16.0 * s * s,
            KernelFamily::Triweight => 35.0 / 32.0 * s * s * s,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Triangular => "triangular",
            KernelFamily::Biweight => "biweight",
            KernelFamily::Triweight => "triweight",
        }
    }
}

/// Product kernel over a fixed number of continuous coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuousKernel {
    pub family: KernelFamily,
    /// Number of continuous coordinates.
    pub dimension: usize,
}

impl ContinuousKernel {
    pub fn new(family: KernelFamily, dimension: usize) -> Self {
        ContinuousKernel { family, dimension }
    }

    /// Scaled kernel K(u/h) / h^dim.
    ///
    /// Zero as soon as any coordinate lies outside the bandwidth window.
    /// With no continuous coordinates the product is empty and the weight
    /// is identically one.
    pub fn scaled(&self, u: &[f64], h: f64) -> Result<f64> {
        if h <= 0.0 || !h.is_finite() {
            return Err(Error::Parameter(format!("bandwidth must be positive, got {h}")));
        }
        if u.len() != self.dimension {
            return Err(Error::Shape(format!(
                "kernel argument has length {}, expected {}",
                u.len(),
                self.dimension
            )));
        }
        let mut value = 1.0;
        for &ui in u {
            value *= self.family.value(ui / h);
            if value == 0.0 {
                return Ok(0.0);
            }
        }
        Ok(value / h.powi(self.dimension as i32))
    }
}

/// Smoothing parameters of the discrete-covariate kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteKernelParams {
    /// Unordered smoothing parameter in [0, 1].
    pub lambda_u: f64,
    /// Ordered smoothing parameter in [0, 1].
    pub lambda_o: f64,
}

impl DiscreteKernelParams {
    pub fn new(lambda_u: f64, lambda_o: f64) -> Result<Self> {
        for (name, v) in [("lambda_u", lambda_u), ("lambda_o", lambda_o)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(DiscreteKernelParams { lambda_u, lambda_o })
    }

    /// No smoothing: the kernel becomes an exact-match indicator and the
    /// resulting estimators reduce to frequency estimators.
    pub fn frequency() -> Self {
        DiscreteKernelParams { lambda_u: 0.0, lambda_o: 0.0 }
    }
}

/// Li–Racine discrete kernel.
///
/// Unordered coordinates contribute `lambda_u` per mismatch; ordered
/// coordinates contribute `lambda_o^|gap|`. The value is 1 exactly when the
/// vectors agree (or all smoothing parameters equal 1) and lies in [0, 1].
pub fn discrete_kernel(
    x_u: &[i64],
    z_u: &[i64],
    x_o: &[i64],
    z_o: &[i64],
    params: DiscreteKernelParams,
) -> Result<f64> {
    if x_u.len() != z_u.len() || x_o.len() != z_o.len() {
        return Err(Error::Shape("discrete covariate vectors differ in length".into()));
    }
    let mut value = 1.0;
    for (a, b) in x_u.iter().zip(z_u) {
        if a != b {
            value *= params.lambda_u;
            if value == 0.0 {
                return Ok(0.0);
            }
        }
    }
    for (a, b) in x_o.iter().zip(z_o) {
        let gap = (a - b).unsigned_abs() as u32;
        if gap > 0 {
            value *= params.lambda_o.powi(gap as i32);
            if value == 0.0 {
                return Ok(0.0);
            }
        }
    }
    Ok(value)
}

/// Composite weight between two observations: scaled continuous kernel on
/// the continuous gap times the discrete kernel on the discrete parts.
pub fn composite_weight(
    kernel: &ContinuousKernel,
    a: &Sample,
    b: &Sample,
    h: f64,
    params: DiscreteKernelParams,
) -> Result<f64> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {h}")));
    }
    if a.x_c.len() != kernel.dimension || b.x_c.len() != kernel.dimension {
        return Err(Error::Shape("continuous covariate length differs from kernel dimension".into()));
    }
    // Inlined scaled product with early exit; this is the innermost loop of
    // every local fit.
    let mut value = 1.0;
    for (xa, xb) in a.x_c.iter().zip(&b.x_c) {
        value *= kernel.family.value((xa - xb) / h);
        if value == 0.0 {
            return Ok(0.0);
        }
    }
    value /= h.powi(kernel.dimension as i32);
    let disc = discrete_kernel(&a.x_u, &b.x_u, &a.x_o, &b.x_o, params)?;
    Ok(value * disc)
}
