//! Leave-one-out local polynomial estimators for the nuisance functions.
//!
//! Two estimators live here. The generalized propensity score is fit by
//! local multinomial logistic regression: at each observation, the log-odds
//! of the three non-reference treatment-period cells are approximated by
//! polynomials in the continuous covariates and the local likelihood is
//! maximized with kernel weights (Fan, Heckman & Wand 1995 style, with the
//! Li–Racine kernel handling discrete covariates). Outcome regressions are
//! fit by local polynomial least squares within each cell.
//!
//! Every prediction at observation j excludes observation j from the fit;
//! this leave-one-out convention removes a first-order "leave-in" bias in
//! the downstream treatment-effect estimators.

mod leastsq;
mod mlogit;

pub use leastsq::{fit_local_ls_loo, OrCellFit, OrFit};
pub use mlogit::{
    fit_local_mlogit_loo, local_likelihood, local_likelihood_gradient,
    local_likelihood_hessian, predict_gps, GpsFit, MlogitOptions,
};

use crate::kernels::{composite_weight, ContinuousKernel, DiscreteKernelParams};
use crate::sample::Sample;

/// Neighbors of a center point with strictly positive composite weight.
///
/// Basis vectors are stored flattened, `basis_len` entries per neighbor, in
/// the order the neighbors were encountered (ascending data index). That
/// order is part of the determinism contract: sums over neighbors are always
/// accumulated in it.
pub(crate) struct Neighborhood {
    pub weights: Vec<f64>,
    pub cells: Vec<u8>,
    pub outcomes: Vec<f64>,
    pub basis_flat: Vec<f64>,
    pub basis_len: usize,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn basis(&self, k: usize) -> &[f64] {
        &self.basis_flat[k * self.basis_len..(k + 1) * self.basis_len]
    }
}

/// Collect all observations (other than `skip`) with positive weight around
/// `center`, together with their basis vectors.
pub(crate) fn gather_neighbors(
    data: &[Sample],
    skip: Option<usize>,
    center: &Sample,
    basis: &crate::basis::MultiIndexBasis,
    kernel: &ContinuousKernel,
    h: f64,
    lambda: DiscreteKernelParams,
) -> crate::error::Result<Neighborhood> {
    let np = basis.len();
    let mut hood = Neighborhood {
        weights: Vec::new(),
        cells: Vec::new(),
        outcomes: Vec::new(),
        basis_flat: Vec::new(),
        basis_len: np,
    };
    let mut bvec = Vec::with_capacity(np);
    for (i, s) in data.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let w = composite_weight(kernel, s, center, h, lambda)?;
        if w > 0.0 {
            basis.eval_into(&s.x_c, &center.x_c, &mut bvec)?;
            hood.weights.push(w);
            hood.cells.push(s.cell().index() as u8);
            hood.outcomes.push(s.y);
            hood.basis_flat.extend_from_slice(&bvec);
        }
    }
    Ok(hood)
}
