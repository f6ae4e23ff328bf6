//! ATT point estimators and their influence functions.
//!
//! Two influence-function-based estimators are provided: one robust to
//! compositional changes across periods (`att_dr`) and one that imposes a
//! stationary composition (`att_stationary`, the nonparametric analog of
//! the Sant'Anna & Zhao (2020) doubly robust estimator). Both aggregate
//! Hájek-normalized weights with outcome-regression residuals, recenter
//! their influence values by construction, and carry a plug-in variance.
//! Two-way fixed-effects regressions are included as comparators, and the
//! gap diagnostics from the robust-vs-stationary comparison round out the
//! module.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::localpoly::{GpsFit, OrFit};
use crate::sample::{require_all_cells, validate_layout, Cell, Sample};

/// Which estimator produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Influence-function estimator robust to compositional changes.
    DoublyRobust,
    /// Influence-function estimator imposing a stationary composition.
    Stationary,
    /// Two-way fixed effects with linear covariates.
    TwfeLinear,
    /// Two-way fixed effects with quadratic and all pairwise interactions.
    TwfeSaturated,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::DoublyRobust => "dr",
            EstimatorKind::Stationary => "stationary",
            EstimatorKind::TwfeLinear => "twfe_linear",
            EstimatorKind::TwfeSaturated => "twfe_saturated",
        }
    }
}

/// A point estimate of the ATT with its influence values and plug-in
/// variance.
///
/// Invariants checked at construction: the influence values average zero,
/// the variance equals their mean square, and the confidence interval is
/// the normal interval at `ci_level`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttEstimate {
    pub kind: EstimatorKind,
    pub tau_hat: f64,
    /// Per-observation influence values, mean zero by construction.
    pub influence: Vec<f64>,
    /// Plug-in asymptotic variance: mean squared influence.
    pub omega_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub n: usize,
}

impl AttEstimate {
    fn build(
        kind: EstimatorKind,
        tau_hat: f64,
        influence: Vec<f64>,
        ci_level: f64,
    ) -> Result<AttEstimate> {
        let n = influence.len();
        let mean = influence.iter().sum::<f64>() / n as f64;
        let scale = influence.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if mean.abs() > 1e-10 * scale.max(1.0) {
            return Err(Error::Invariant(format!(
                "influence values of {} average {mean:e}, expected zero",
                kind.label()
            )));
        }
        let omega_hat = influence.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let half = z_quantile(ci_level)? * (omega_hat / n as f64).sqrt();
        Ok(AttEstimate {
            kind,
            tau_hat,
            influence,
            omega_hat,
            ci_low: tau_hat - half,
            ci_high: tau_hat + half,
            ci_level,
            n,
        })
    }

    /// Analytic standard error implied by the plug-in variance.
    pub fn se(&self) -> f64 {
        (self.omega_hat / self.n as f64).sqrt()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

fn z_quantile(ci_level: f64) -> Result<f64> {
    if !(0.0 < ci_level && ci_level < 1.0) {
        return Err(Error::Parameter(format!("confidence level must lie in (0,1), got {ci_level}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + 0.5 * ci_level))
}

/// Hájek-normalized weights, one vector per treatment-period cell.
///
/// Each vector is supported on its own cell and averages exactly one over
/// the full sample.
#[derive(Debug, Clone)]
pub struct HajekWeights {
    weights: [Vec<f64>; 4],
}

impl HajekWeights {
    pub fn cell(&self, cell: Cell) -> &[f64] {
        &self.weights[cell.index()]
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Normalize raw weights by their sample mean, erroring on a degenerate or
/// non-finite total, and verify the mean-one invariant.
fn hajek_normalize(raw: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let m = mean(&raw);
    if !m.is_finite() || m <= 0.0 {
        return Err(Error::Estimation(format!(
            "cannot normalize weights for {what}: mean weight is {m}"
        )));
    }
    let weights: Vec<f64> = raw.into_iter().map(|w| w / m).collect();
    let renorm = mean(&weights);
    if (renorm - 1.0).abs() > 1e-12 {
        return Err(Error::Invariant(format!(
            "normalized weights for {what} average {renorm}, expected 1"
        )));
    }
    Ok(weights)
}

/// Hájek weights for the compositional-changes estimator: the treated-post
/// cell gets its empirical-share weight, the other cells get propensity
/// ratios toward the treated-post cell, all normalized to mean one.
pub fn hajek_weights_dr(data: &[Sample], gps: &GpsFit) -> Result<HajekWeights> {
    validate_layout(data)?;
    require_all_cells(data)?;
    if gps.probabilities.len() != data.len() {
        return Err(Error::Shape("propensity fit size differs from data".into()));
    }
    let n = data.len();
    let mut weights: [Vec<f64>; 4] = Default::default();
    // Treated-post: indicator over its empirical share.
    let raw: Vec<f64> = data
        .iter()
        .map(|s| if s.cell() == Cell::D1T1 { 1.0 } else { 0.0 })
        .collect();
    weights[Cell::D1T1.index()] = hajek_normalize(raw, "cell (1,1)")?;
    for cell in Cell::MINUS {
        let mut raw = vec![0.0; n];
        for (i, s) in data.iter().enumerate() {
            if s.cell() != cell {
                continue;
            }
            let p11 = gps.prob(i, Cell::D1T1);
            let pdt = gps.prob(i, cell);
            let r = p11 / pdt;
            if !r.is_finite() {
                return Err(Error::Estimation(format!(
                    "non-finite propensity ratio for cell {} at observation {i}",
                    cell.label()
                )));
            }
            raw[i] = r;
        }
        weights[cell.index()] = hajek_normalize(raw, cell.label())?;
    }
    Ok(HajekWeights { weights })
}

fn require_finite_or(data: &[Sample], or_fit: &OrFit, cells: &[Cell]) -> Result<()> {
    for cell in cells {
        let fit = or_fit.require(*cell)?;
        if fit.means.len() != data.len() {
            return Err(Error::Shape("outcome fit size differs from data".into()));
        }
        let bad = fit.means.iter().filter(|m| !m.is_finite()).count();
        if bad > 0 {
            return Err(Error::Estimation(format!(
                "outcome regression for cell {} is non-finite at {bad} points",
                cell.label()
            )));
        }
    }
    Ok(())
}

/// The adjusted outcome Y - m(1,0) - m(0,1) + m(0,0) per observation.
fn adjusted_outcome(data: &[Sample], or_fit: &OrFit) -> Result<Vec<f64>> {
    let m10 = &or_fit.require(Cell::D1T0)?.means;
    let m01 = &or_fit.require(Cell::D0T1)?.means;
    let m00 = &or_fit.require(Cell::D0T0)?.means;
    Ok(data
        .iter()
        .enumerate()
        .map(|(i, s)| s.y - m10[i] - m01[i] + m00[i])
        .collect())
}

/// Fitted conditional treatment-effect surface (m11 - m10) - (m01 - m00).
pub fn conditional_att_surface(data: &[Sample], or_fit: &OrFit) -> Result<Vec<f64>> {
    require_finite_or(data, or_fit, &Cell::ALL)?;
    let m11 = &or_fit.require(Cell::D1T1)?.means;
    let m10 = &or_fit.require(Cell::D1T0)?.means;
    let m01 = &or_fit.require(Cell::D0T1)?.means;
    let m00 = &or_fit.require(Cell::D0T0)?.means;
    Ok((0..data.len()).map(|i| (m11[i] - m10[i]) - (m01[i] - m00[i])).collect())
}

/// ATT estimator robust to compositional changes.
///
/// Aggregates the adjusted outcome over the treated-post cell and the
/// signed, weighted outcome-regression residuals over the other three
/// cells; the influence values recenter the same terms around the point
/// estimate.
pub fn att_dr(
    data: &[Sample],
    gps: &GpsFit,
    or_fit: &OrFit,
    ci_level: f64,
) -> Result<AttEstimate> {
    require_finite_or(data, or_fit, &Cell::MINUS)?;
    let weights = hajek_weights_dr(data, gps)?;
    let adjusted = adjusted_outcome(data, or_fit)?;
    let n = data.len();
    let w11 = weights.cell(Cell::D1T1);

    // Per-observation residual term: only the observation's own cell
    // contributes.
    let mut resid_term = vec![0.0; n];
    for (i, s) in data.iter().enumerate() {
        let cell = s.cell();
        if cell != Cell::D1T1 {
            let m = or_fit.mean(cell, i)?;
            resid_term[i] = cell.sign() * weights.cell(cell)[i] * (s.y - m);
        }
    }

    let tau_hat = (0..n).map(|i| w11[i] * adjusted[i] + resid_term[i]).sum::<f64>() / n as f64;
    let influence: Vec<f64> =
        (0..n).map(|i| resid_term[i] + w11[i] * (adjusted[i] - tau_hat)).collect();
    AttEstimate::build(EstimatorKind::DoublyRobust, tau_hat, influence, ci_level)
}

/// ATT estimator imposing a stationary composition.
///
/// Uses the pooled treatment propensity (sum of the two treated-cell
/// probabilities), odds-weighted comparison residuals, and all four
/// outcome regressions. The pooled propensity is capped at one minus the
/// fit's truncation floor.
pub fn att_stationary(
    data: &[Sample],
    gps: &GpsFit,
    or_fit: &OrFit,
    ci_level: f64,
) -> Result<AttEstimate> {
    require_finite_or(data, or_fit, &Cell::ALL)?;
    require_all_cells(data)?;
    if gps.probabilities.len() != data.len() {
        return Err(Error::Shape("propensity fit size differs from data".into()));
    }
    let n = data.len();
    let tau_x = conditional_att_surface(data, or_fit)?;

    // Pooled treatment propensity, kept away from one so the odds are finite.
    let cap = 1.0 - gps.truncation_floor;
    let mut ptilde = Vec::with_capacity(n);
    for i in 0..n {
        let p = (gps.prob(i, Cell::D1T1) + gps.prob(i, Cell::D1T0)).min(cap);
        if p >= 1.0 {
            return Err(Error::Estimation(format!(
                "pooled treatment propensity reaches 1 at observation {i}; \
                 set a positive truncation floor"
            )));
        }
        ptilde.push(p);
    }

    // Weights per cell: treated cells use indicators, comparison cells use
    // the treatment odds.
    let mut weights: [Vec<f64>; 4] = Default::default();
    for cell in Cell::ALL {
        let raw: Vec<f64> = data
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.cell() != cell {
                    0.0
                } else if cell.d() == 1 {
                    1.0
                } else {
                    ptilde[i] / (1.0 - ptilde[i])
                }
            })
            .collect();
        weights[cell.index()] = hajek_normalize(raw, cell.label())?;
    }

    let d_share = data.iter().filter(|s| s.d == 1).count() as f64 / n as f64;
    let mut resid_term = vec![0.0; n];
    for (i, s) in data.iter().enumerate() {
        let cell = s.cell();
        let m = or_fit.mean(cell, i)?;
        resid_term[i] = cell.sign() * weights[cell.index()][i] * (s.y - m);
    }
    let lead: Vec<f64> = data
        .iter()
        .enumerate()
        .map(|(i, s)| f64::from(s.d) / d_share * tau_x[i])
        .collect();

    let tau_hat = (0..n).map(|i| lead[i] + resid_term[i]).sum::<f64>() / n as f64;
    let influence: Vec<f64> = (0..n)
        .map(|i| f64::from(data[i].d) / d_share * (tau_x[i] - tau_hat) + resid_term[i])
        .collect();
    AttEstimate::build(EstimatorKind::Stationary, tau_hat, influence, ci_level)
}

/// Two-way fixed-effects specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwfeSpec {
    /// Covariates enter linearly.
    Linear,
    /// Adds squares of continuous covariates and all pairwise covariate
    /// interactions.
    Saturated,
}

fn covariate_row(s: &Sample) -> Vec<f64> {
    let mut row = s.x_c.to_vec();
    row.extend(s.x_u.iter().map(|v| *v as f64));
    row.extend(s.x_o.iter().map(|v| *v as f64));
    row
}

fn twfe_design_row(s: &Sample, spec: TwfeSpec) -> Vec<f64> {
    let covs = covariate_row(s);
    let mut row = vec![
        1.0,
        f64::from(s.t),
        f64::from(s.d),
        f64::from(s.d) * f64::from(s.t),
    ];
    row.extend_from_slice(&covs);
    if spec == TwfeSpec::Saturated {
        for v in &s.x_c {
            row.push(v * v);
        }
        for a in 0..covs.len() {
            for b in (a + 1)..covs.len() {
                row.push(covs[a] * covs[b]);
            }
        }
    }
    row
}

/// OLS interaction-coefficient estimator from the two-way fixed-effects
/// regression of the outcome on period, treatment, their interaction, and
/// covariates. The influence values are the usual OLS ones for that
/// coordinate, giving a sandwich variance.
pub fn att_twfe(data: &[Sample], spec: TwfeSpec, ci_level: f64) -> Result<AttEstimate> {
    validate_layout(data)?;
    require_all_cells(data)?;
    let n = data.len();
    let k = twfe_design_row(&data[0], spec).len();
    if n <= k {
        return Err(Error::Estimation(format!(
            "two-way fixed effects needs more than {k} observations, got {n}"
        )));
    }
    let mut gram = SymMatrix::zeros(k);
    let mut xty = vec![0.0; k];
    let mut rows = Vec::with_capacity(n);
    for s in data {
        let row = twfe_design_row(s, spec);
        for r in 0..k {
            xty[r] += row[r] * s.y;
            for c in r..k {
                gram.add(r, c, row[r] * row[c]);
            }
        }
        rows.push(row);
    }
    for r in 0..k {
        for c in 0..r {
            gram.data[r * k + c] = gram.at(c, r);
        }
    }
    let beta = gram
        .solve(&xty)
        .ok_or_else(|| Error::Estimation("two-way fixed effects design is rank deficient".into()))?;
    let tau_hat = beta[3];

    // Influence of the interaction coordinate: a'x_i e_i with
    // a = (X'X/n)^{-1} e_3.
    let mut e3 = vec![0.0; k];
    e3[3] = n as f64;
    let a = gram
        .solve(&e3)
        .ok_or_else(|| Error::Estimation("two-way fixed effects design is rank deficient".into()))?;
    let influence: Vec<f64> = rows
        .iter()
        .zip(data)
        .map(|(row, s)| {
            let fitted: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            let ax: f64 = row.iter().zip(&a).map(|(x, v)| x * v).sum();
            ax * (s.y - fitted)
        })
        .collect();
    let kind = match spec {
        TwfeSpec::Linear => EstimatorKind::TwfeLinear,
        TwfeSpec::Saturated => EstimatorKind::TwfeSaturated,
    };
    AttEstimate::build(kind, tau_hat, influence, ci_level)
}

/// Plug-in estimate of the gap that a stationarity-imposing estimator picks
/// up when the composition actually shifts: the fitted effect surface
/// averaged over all treated observations minus its average over
/// treated-post observations.
pub fn bias_decomposition(data: &[Sample], or_fit: &OrFit) -> Result<f64> {
    let tau_x = conditional_att_surface(data, or_fit)?;
    let mut sum_d = 0.0;
    let mut n_d = 0.0;
    let mut sum_dt = 0.0;
    let mut n_dt = 0.0;
    for (i, s) in data.iter().enumerate() {
        if s.d == 1 {
            sum_d += tau_x[i];
            n_d += 1.0;
            if s.t == 1 {
                sum_dt += tau_x[i];
                n_dt += 1.0;
            }
        }
    }
    if n_d == 0.0 || n_dt == 0.0 {
        return Err(Error::Estimation("no treated observations".into()));
    }
    Ok(sum_d / n_d - sum_dt / n_dt)
}

/// Plug-in estimate of the efficiency a stationarity-imposing estimator
/// gains when stationarity actually holds: the pre-period share over the
/// treated and post shares, times the variance of the fitted effect
/// surface among the treated.
pub fn efficiency_loss(data: &[Sample], or_fit: &OrFit) -> Result<f64> {
    let tau_x = conditional_att_surface(data, or_fit)?;
    let n = data.len() as f64;
    let treated: Vec<f64> = data
        .iter()
        .enumerate()
        .filter(|(_, s)| s.d == 1)
        .map(|(i, _)| tau_x[i])
        .collect();
    if treated.is_empty() {
        return Err(Error::Estimation("no treated observations".into()));
    }
    let share_t = data.iter().filter(|s| s.t == 1).count() as f64 / n;
    let share_d = treated.len() as f64 / n;
    if share_t == 0.0 {
        return Err(Error::Estimation("no post-period observations".into()));
    }
    let m = mean(&treated);
    let var = treated.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / treated.len() as f64;
    Ok((1.0 - share_t) / (share_d * share_t) * var)
}
