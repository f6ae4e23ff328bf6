//! Local multinomial logit estimation of the generalized propensity score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MultiIndexBasis;
use crate::error::{Error, Result};
use crate::kernels::{ContinuousKernel, DiscreteKernelParams, KernelFamily};
use crate::linalg::SymMatrix;
use crate::sample::{cell_counts, require_all_cells, Cell, Sample};

use super::{gather_neighbors, Neighborhood};

/// Newton solver controls for the local likelihood maximization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MlogitOptions {
    /// Maximum Newton iterations per point.
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the objective gradient.
    pub grad_tol: f64,
    /// Relative ridge applied to degenerate windows.
    pub ridge_scale: f64,
    /// Take one extra Newton step after the tolerance is met, driving the
    /// gradient to roundoff. Cross-validation turns this off.
    pub refine: bool,
}

impl Default for MlogitOptions {
    fn default() -> Self {
        MlogitOptions { max_iter: 50, grad_tol: 1e-8, ridge_scale: 1e-8, refine: true }
    }
}

/// Fitted generalized propensity score surface.
///
/// Row j holds the leave-one-out cell probabilities at observation j, in the
/// canonical cell order (1,1), (1,0), (0,1), (0,0). Rows lie on the simplex
/// before truncation; [`predict_gps`] clips them below at a floor without
/// renormalizing (downstream weights are ratio-based and renormalized there).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsFit {
    /// Leave-one-out probabilities per observation, canonical cell order.
    pub probabilities: Vec<[f64; 4]>,
    /// Local coefficient vectors, three blocks of basis length each, in the
    /// block order (1,0), (0,1), (0,0).
    pub gamma: Vec<Vec<f64>>,
    /// Newton convergence status per point.
    pub converged: Vec<bool>,
    /// Whether the point needed a ridge (degenerate local window).
    pub ridged: Vec<bool>,
    /// Whether any probability in the row was clipped by truncation.
    pub truncated: Vec<bool>,
    /// Truncation floor currently applied (0 = raw fit).
    pub truncation_floor: f64,
    /// Bandwidth used for the fit.
    pub bandwidth: f64,
    /// Discrete smoothing used for the fit.
    pub lambda: DiscreteKernelParams,
}

impl GpsFit {
    /// Probability of `cell` at observation `j`.
    pub fn prob(&self, j: usize, cell: Cell) -> f64 {
        self.probabilities[j][cell.index()]
    }

    pub fn n_converged(&self) -> usize {
        self.converged.iter().filter(|c| **c).count()
    }

    pub fn n_truncated(&self) -> usize {
        self.truncated.iter().filter(|c| **c).count()
    }
}

/// Pointwise local log-likelihood contribution of observation `w` at
/// `center`, for stacked coefficients `gamma` (three blocks in the order
/// (1,0), (0,1), (0,0)).
pub fn local_likelihood(
    w: &Sample,
    center: &Sample,
    gamma: &[f64],
    basis: &MultiIndexBasis,
) -> Result<f64> {
    let b = basis.eval(&w.x_c, &center.x_c)?;
    let np = basis.len();
    check_gamma_len(gamma, np)?;
    let (loglik, _) = loglik_and_probs(&b, w.cell(), gamma, np);
    Ok(loglik)
}

/// Analytic gradient of [`local_likelihood`] with respect to `gamma`.
pub fn local_likelihood_gradient(
    w: &Sample,
    center: &Sample,
    gamma: &[f64],
    basis: &MultiIndexBasis,
) -> Result<Vec<f64>> {
    let b = basis.eval(&w.x_c, &center.x_c)?;
    let np = basis.len();
    check_gamma_len(gamma, np)?;
    let (_, probs) = loglik_and_probs(&b, w.cell(), gamma, np);
    let cell_idx = w.cell().index();
    let mut grad = vec![0.0; 3 * np];
    for a in 0..3 {
        let ind = if cell_idx == a + 1 { 1.0 } else { 0.0 };
        let coeff = ind - probs[a];
        for (r, bv) in b.iter().enumerate() {
            grad[a * np + r] = coeff * bv;
        }
    }
    Ok(grad)
}

/// Analytic Hessian of [`local_likelihood`], row-major, dimension 3·N_p.
pub fn local_likelihood_hessian(
    w: &Sample,
    center: &Sample,
    gamma: &[f64],
    basis: &MultiIndexBasis,
) -> Result<Vec<f64>> {
    let b = basis.eval(&w.x_c, &center.x_c)?;
    let np = basis.len();
    check_gamma_len(gamma, np)?;
    let (_, probs) = loglik_and_probs(&b, w.cell(), gamma, np);
    let dim = 3 * np;
    let mut hess = vec![0.0; dim * dim];
    for a in 0..3 {
        for c in 0..3 {
            let coeff = -probs[a] * (if a == c { 1.0 } else { 0.0 } - probs[c]);
            for r in 0..np {
                for s in 0..np {
                    hess[(a * np + r) * dim + (c * np + s)] = coeff * b[r] * b[s];
                }
            }
        }
    }
    Ok(hess)
}

fn check_gamma_len(gamma: &[f64], np: usize) -> Result<()> {
    if gamma.len() != 3 * np {
        return Err(Error::Shape(format!(
            "gamma has length {}, expected {}",
            gamma.len(),
            3 * np
        )));
    }
    Ok(())
}

/// Log-likelihood value and the three non-reference cell probabilities for
/// one basis vector. Uses a shifted softmax so large local intercepts cannot
/// overflow.
fn loglik_and_probs(b: &[f64], cell: Cell, gamma: &[f64], np: usize) -> (f64, [f64; 3]) {
    let mut scores = [0.0f64; 3];
    for a in 0..3 {
        let mut s = 0.0;
        for (r, bv) in b.iter().enumerate() {
            s += gamma[a * np + r] * bv;
        }
        scores[a] = s;
    }
    let m = scores.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let mut denom = (-m).exp();
    let mut exps = [0.0f64; 3];
    for a in 0..3 {
        exps[a] = (scores[a] - m).exp();
        denom += exps[a];
    }
    let log_denom = m + denom.ln();
    let cell_idx = cell.index();
    let index_term = if cell_idx >= 1 { scores[cell_idx - 1] } else { 0.0 };
    let probs = [exps[0] / denom, exps[1] / denom, exps[2] / denom];
    (index_term - log_denom, probs)
}

/// Cell probabilities implied by the intercept coordinates of a stacked
/// coefficient vector. The reference cell (1,1) gets one minus the rest.
fn probs_from_intercepts(gamma: &[f64], np: usize) -> [f64; 4] {
    let scores = [gamma[0], gamma[np], gamma[2 * np]];
    let m = scores.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let denom = (-m).exp() + scores.iter().map(|s| (s - m).exp()).sum::<f64>();
    let p10 = (scores[0] - m).exp() / denom;
    let p01 = (scores[1] - m).exp() / denom;
    let p00 = (scores[2] - m).exp() / denom;
    let p11 = (1.0 - (p10 + p01 + p00)).max(0.0);
    [p11, p10, p01, p00]
}

struct PointFit {
    gamma: Vec<f64>,
    probabilities: [f64; 4],
    converged: bool,
    ridged: bool,
}

/// Leave-one-out local multinomial logit fit of the generalized propensity
/// score at every observation.
///
/// Each point maximizes the kernel-weighted log-likelihood over all other
/// observations by Newton's method with step halving, starting from the
/// leave-one-out intercept-only solution. Windows with fewer observations
/// than three basis lengths, or with an empty cell, get a ridge penalty and
/// a flag. Points that still fail to converge borrow the coefficients of the
/// nearest converged point and are flagged as non-converged.
pub fn fit_local_mlogit_loo(
    data: &[Sample],
    basis: &MultiIndexBasis,
    family: KernelFamily,
    h: f64,
    lambda: DiscreteKernelParams,
    opts: &MlogitOptions,
) -> Result<GpsFit> {
    let layout = crate::sample::validate_layout(data)?;
    require_all_cells(data)?;
    if basis.dimension() != layout.n_continuous {
        return Err(Error::Shape("basis dimension differs from continuous covariate count".into()));
    }
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {h}")));
    }
    let kernel = ContinuousKernel::new(family, layout.n_continuous);
    let counts = cell_counts(data);

    let points: Vec<PointFit> = (0..data.len())
        .into_par_iter()
        .map(|j| fit_point(data, Some(j), &data[j], counts, basis, &kernel, h, lambda, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut fit = GpsFit {
        probabilities: points.iter().map(|p| p.probabilities).collect(),
        gamma: points.iter().map(|p| p.gamma.clone()).collect(),
        converged: points.iter().map(|p| p.converged).collect(),
        ridged: points.iter().map(|p| p.ridged).collect(),
        truncated: vec![false; data.len()],
        truncation_floor: 0.0,
        bandwidth: h,
        lambda,
    };

    // Failed points borrow the nearest converged point's coefficients.
    let converged_idx: Vec<usize> =
        (0..data.len()).filter(|&j| fit.converged[j]).collect();
    if !converged_idx.is_empty() {
        for j in 0..data.len() {
            if !fit.converged[j] {
                let nearest = converged_idx
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        covariate_distance(&data[a], &data[j])
                            .total_cmp(&covariate_distance(&data[b], &data[j]))
                            .then(a.cmp(&b))
                    })
                    .expect("non-empty");
                fit.gamma[j] = fit.gamma[nearest].clone();
                fit.probabilities[j] = probs_from_intercepts(&fit.gamma[j], basis.len());
            }
        }
    }
    Ok(fit)
}

/// Squared continuous distance plus discrete mismatch penalties; only used
/// to pick fallback donors, so the exact metric matters less than it being
/// deterministic.
fn covariate_distance(a: &Sample, b: &Sample) -> f64 {
    let mut d = 0.0;
    for (x, z) in a.x_c.iter().zip(&b.x_c) {
        d += (x - z) * (x - z);
    }
    for (x, z) in a.x_u.iter().zip(&b.x_u) {
        d += if x != z { 1.0 } else { 0.0 };
    }
    for (x, z) in a.x_o.iter().zip(&b.x_o) {
        d += (x - z).abs() as f64;
    }
    d
}

/// Per-neighbor linear indexes B_k' gamma_a, three per neighbor.
fn scores_of(hood: &Neighborhood, gamma: &[f64], np: usize, out: &mut Vec<f64>) {
    out.clear();
    for k in 0..hood.len() {
        let b = hood.basis(k);
        for a in 0..3 {
            let mut s = 0.0;
            for (r, bv) in b.iter().enumerate() {
                s += gamma[a * np + r] * bv;
            }
            out.push(s);
        }
    }
}

/// Weighted log-likelihood from cached scores shifted by `alpha` times the
/// direction scores.
fn objective_from_scores(
    hood: &Neighborhood,
    scores: &[f64],
    dirs: Option<(&[f64], f64)>,
    norm: f64,
) -> f64 {
    let mut total = 0.0;
    for k in 0..hood.len() {
        let mut s = [scores[3 * k], scores[3 * k + 1], scores[3 * k + 2]];
        if let Some((d, alpha)) = dirs {
            for a in 0..3 {
                s[a] += alpha * d[3 * k + a];
            }
        }
        let m = s.iter().fold(0.0f64, |acc, &v| acc.max(v));
        let denom = (-m).exp() + (s[0] - m).exp() + (s[1] - m).exp() + (s[2] - m).exp();
        let cell_idx = hood.cells[k] as usize;
        let index_term = if cell_idx >= 1 { s[cell_idx - 1] } else { 0.0 };
        total += hood.weights[k] * (index_term - (m + denom.ln()));
    }
    total / norm
}

/// Gradient and Hessian of the weighted log-likelihood from cached scores.
#[allow(clippy::needless_range_loop)]
fn derivs_from_scores(
    hood: &Neighborhood,
    scores: &[f64],
    np: usize,
    norm: f64,
    grad: &mut [f64],
    hess: &mut SymMatrix,
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    hess.data.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..hood.len() {
        let b = hood.basis(k);
        let w = hood.weights[k] / norm;
        let s = &scores[3 * k..3 * k + 3];
        let m = s.iter().fold(0.0f64, |acc, &v| acc.max(v));
        let e = [(s[0] - m).exp(), (s[1] - m).exp(), (s[2] - m).exp()];
        let denom = (-m).exp() + e[0] + e[1] + e[2];
        let probs = [e[0] / denom, e[1] / denom, e[2] / denom];
        let cell_idx = hood.cells[k] as usize;
        for a in 0..3 {
            let ind = if cell_idx == a + 1 { 1.0 } else { 0.0 };
            let coeff = w * (ind - probs[a]);
            for (r, bv) in b.iter().enumerate() {
                grad[a * np + r] += coeff * bv;
            }
        }
        for a in 0..3 {
            for c in a..3 {
                let coeff = -w * probs[a] * (if a == c { 1.0 } else { 0.0 } - probs[c]);
                for r in 0..np {
                    let br = b[r];
                    for sdx in 0..np {
                        let v = coeff * br * b[sdx];
                        hess.add(a * np + r, c * np + sdx, v);
                        if a != c {
                            hess.add(c * np + sdx, a * np + r, v);
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_point(
    data: &[Sample],
    skip: Option<usize>,
    center: &Sample,
    full_counts: [usize; 4],
    basis: &MultiIndexBasis,
    kernel: &ContinuousKernel,
    h: f64,
    lambda: DiscreteKernelParams,
    opts: &MlogitOptions,
) -> Result<PointFit> {
    let np = basis.len();
    let dim = 3 * np;
    let hood = gather_neighbors(data, skip, center, basis, kernel, h, lambda)?;
    let norm = (data.len() - usize::from(skip.is_some())) as f64;

    // Leave-one-out intercept-only start: log odds of the included cell
    // counts relative to the reference cell, with a continuity floor so a
    // cell emptied by the leave-out cannot produce an infinite start.
    let mut counts = full_counts.map(|c| c as f64);
    if let Some(j) = skip {
        counts[data[j].cell().index()] -= 1.0;
    }
    let c11 = counts[0].max(0.5);
    let mut gamma = vec![0.0; dim];
    for a in 0..3 {
        gamma[a * np] = (counts[a + 1].max(0.5) / c11).ln();
    }

    if hood.len() == 0 {
        return Ok(PointFit {
            probabilities: probs_from_intercepts(&gamma, np),
            gamma,
            converged: false,
            ridged: true,
        });
    }

    // Degenerate window: too few points overall or an empty local cell.
    let mut local_counts = [0usize; 4];
    for &c in &hood.cells {
        local_counts[c as usize] += 1;
    }
    let degenerate = hood.len() < 3 * np || local_counts.contains(&0);

    let mut scores = Vec::new();
    scores_of(&hood, &gamma, np, &mut scores);
    let mut grad = vec![0.0; dim];
    let mut hess = SymMatrix::zeros(dim);
    derivs_from_scores(&hood, &scores, np, norm, &mut grad, &mut hess);
    let ridge = if degenerate {
        opts.ridge_scale * ((-hess.trace()) / dim as f64).abs().max(f64::MIN_POSITIVE)
    } else {
        0.0
    };
    let penalty =
        |g: &[f64]| -> f64 { 0.5 * ridge * g.iter().map(|v| v * v).sum::<f64>() };

    let mut objective = objective_from_scores(&hood, &scores, None, norm) - penalty(&gamma);
    let mut dirs = vec![0.0; 3 * hood.len()];
    let mut converged = false;
    let mut refined = false;
    for iter in 0..opts.max_iter {
        if iter > 0 {
            derivs_from_scores(&hood, &scores, np, norm, &mut grad, &mut hess);
        }
        if ridge > 0.0 {
            for (g, x) in grad.iter_mut().zip(&gamma) {
                *g -= ridge * x;
            }
            hess.add_ridge(-ridge);
        }
        let sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if sup < opts.grad_tol {
            converged = true;
            if refined || !opts.refine {
                break;
            }
        }
        // Newton step on the concave objective: solve (-H) delta = g.
        for v in hess.data.iter_mut() {
            *v = -*v;
        }
        let (delta, _) = hess.solve_ridged(&grad, 1e-10);
        scores_of(&hood, &delta, np, &mut dirs);
        let raw_penalty_at = |alpha: f64| {
            let mut acc = 0.0;
            for (g, d) in gamma.iter().zip(&delta) {
                let v = g + alpha * d;
                acc += v * v;
            }
            0.5 * ridge * acc
        };

        if converged {
            // One full refinement step past the tolerance; quadratic
            // convergence drives the gradient to roundoff.
            let trial_obj =
                objective_from_scores(&hood, &scores, Some((&dirs, 1.0)), norm)
                    - raw_penalty_at(1.0);
            if trial_obj >= objective - 1e-12 * objective.abs().max(1.0) {
                for (g, d) in gamma.iter_mut().zip(&delta) {
                    *g += d;
                }
                for (s, d) in scores.iter_mut().zip(&dirs) {
                    *s += d;
                }
                objective = trial_obj;
            }
            refined = true;
            continue;
        }

        // Step halving on the penalized objective.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial_obj =
                objective_from_scores(&hood, &scores, Some((&dirs, alpha)), norm)
                    - raw_penalty_at(alpha);
            if trial_obj > objective {
                for (g, d) in gamma.iter_mut().zip(&delta) {
                    *g += alpha * d;
                }
                for (s, d) in scores.iter_mut().zip(&dirs) {
                    *s += alpha * d;
                }
                objective = trial_obj;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
        // Separation guard: local intercepts this large mean a cell is
        // empty in every practical sense and the maximizer is at infinity.
        if gamma.iter().any(|g| g.abs() > 1e3) {
            break;
        }
    }
    if converged && gamma.iter().any(|g| !g.is_finite()) {
        converged = false;
    }

    Ok(PointFit {
        probabilities: probs_from_intercepts(&gamma, np),
        gamma,
        converged,
        ridged: degenerate,
    })
}

/// Clip fitted probabilities below at `floor`, flagging the rows touched.
///
/// No renormalization happens here: the downstream weights are ratios that
/// get renormalized to mean one anyway.
pub fn predict_gps(fit: &GpsFit, floor: f64) -> Result<GpsFit> {
    if !(0.0..0.25).contains(&floor) {
        return Err(Error::Parameter(format!(
            "truncation floor must lie in [0, 0.25), got {floor}"
        )));
    }
    let mut out = fit.clone();
    out.truncation_floor = floor;
    for (row, flag) in out.probabilities.iter_mut().zip(out.truncated.iter_mut()) {
        let mut touched = false;
        for p in row.iter_mut() {
            if *p < floor {
                *p = floor;
                touched = true;
            }
        }
        *flag = touched;
    }
    Ok(out)
}
