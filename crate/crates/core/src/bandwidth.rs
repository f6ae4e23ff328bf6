//! Data-driven bandwidth selection by leave-one-out cross-validation.
//!
//! Two criteria are offered: a least-squares criterion that sums squared
//! leave-one-out prediction errors of both the cell-probability fit and the
//! outcome regressions, and a likelihood criterion that replaces the
//! probability part with the negative observed log-likelihood. Both are
//! additively separable into a propensity block and one block per outcome
//! cell, so blockwise grid minimization equals the full product-grid
//! search and is what `select_bandwidths` performs.
//!
//! Candidates whose fits come back non-finite (for example, a continuous
//! bandwidth so small that some cell has no in-window neighbors) receive an
//! infinite criterion and drop out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DiscreteKernelParams, KernelFamily};
use crate::localpoly::{fit_local_ls_loo, fit_local_mlogit_loo, GpsFit, MlogitOptions};
use crate::sample::{require_all_cells, validate_layout, Cell, Sample};

/// Cross-validation criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvCriterion {
    /// Squared-error loss for both the probability and outcome fits.
    LeastSquares,
    /// Observed log-likelihood loss for the probability fit, squared error
    /// for the outcomes.
    LocalLikelihood,
}

impl CvCriterion {
    pub fn label(self) -> &'static str {
        match self {
            CvCriterion::LeastSquares => "ls",
            CvCriterion::LocalLikelihood => "ml",
        }
    }
}

/// Estimation settings the cross-validation fits share with the final fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CvSettings {
    /// Polynomial order of the probability fit.
    pub ps_order: usize,
    /// Polynomial order of the outcome fits.
    pub or_order: usize,
    pub family: KernelFamily,
    pub mlogit: MlogitOptions,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            ps_order: 1,
            or_order: 1,
            family: KernelFamily::Epanechnikov,
            mlogit: MlogitOptions::default(),
        }
    }
}

/// Grids to search over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandwidthConfig {
    /// Continuous bandwidth candidates for the probability fit.
    pub h_grid: Vec<f64>,
    /// Discrete smoothing candidates for the probability fit.
    pub lambda_grid: Vec<DiscreteKernelParams>,
    /// Continuous bandwidth candidates for the outcome fits.
    pub b_grid: Vec<f64>,
    /// Discrete smoothing candidates for the outcome fits.
    pub theta_grid: Vec<DiscreteKernelParams>,
    pub criterion: CvCriterion,
    /// Force one (b, theta) across all four outcome cells, selected by the
    /// summed criterion, instead of per-cell selections.
    pub share_or_bandwidths: bool,
}

/// Reference bandwidth scale: mean per-coordinate standard deviation of the
/// continuous covariates times n^(-1/(dim+4)). Returns 1 when there are no
/// continuous covariates (the bandwidth is then inert).
pub fn reference_scale(data: &[Sample]) -> Result<f64> {
    let layout = validate_layout(data)?;
    let dim = layout.n_continuous;
    if dim == 0 {
        return Ok(1.0);
    }
    let n = data.len() as f64;
    let mut scale = 0.0;
    for c in 0..dim {
        let mean = data.iter().map(|s| s.x_c[c]).sum::<f64>() / n;
        let var = data.iter().map(|s| (s.x_c[c] - mean).powi(2)).sum::<f64>() / n;
        scale += var.sqrt();
    }
    scale /= dim as f64;
    Ok(scale.max(f64::MIN_POSITIVE) * n.powf(-1.0 / (dim as f64 + 4.0)))
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn lambda_pairs(values: &[f64]) -> Vec<DiscreteKernelParams> {
    let mut out = Vec::new();
    for &lu in values {
        for &lo in values {
            out.push(DiscreteKernelParams { lambda_u: lu, lambda_o: lo });
        }
    }
    out
}

impl BandwidthConfig {
    /// Full default grid: 8 log-spaced continuous bandwidths spanning 0.2
    /// to 8 times the reference scale, and discrete smoothing pairs over
    /// {0, 0.25, 0.5}. The upper end deliberately reaches near-global
    /// windows; with compactly supported kernels the criterion flattens
    /// there, and doubly robust aggregation tolerates the extra smoothing.
    pub fn default_grid(data: &[Sample]) -> Result<Self> {
        let r = reference_scale(data)?;
        let h_grid = log_spaced(0.2 * r, 8.0 * r, 8);
        Ok(BandwidthConfig {
            h_grid: h_grid.clone(),
            lambda_grid: lambda_pairs(&[0.0, 0.25, 0.5]),
            b_grid: h_grid,
            theta_grid: lambda_pairs(&[0.0, 0.25, 0.5]),
            criterion: CvCriterion::LocalLikelihood,
            share_or_bandwidths: false,
        })
    }

    /// Coarse grid for repeated use inside Monte Carlo loops: 4 log-spaced
    /// continuous bandwidths over 1 to 8 times the reference scale and two
    /// symmetric smoothing pairs. The lower end stays wide enough that
    /// local windows keep a workable number of in-cell neighbors.
    pub fn coarse_grid(data: &[Sample]) -> Result<Self> {
        let r = reference_scale(data)?;
        let h_grid = log_spaced(1.0 * r, 8.0 * r, 4);
        let lambdas = vec![
            DiscreteKernelParams { lambda_u: 0.1, lambda_o: 0.1 },
            DiscreteKernelParams { lambda_u: 0.3, lambda_o: 0.3 },
        ];
        Ok(BandwidthConfig {
            h_grid: h_grid.clone(),
            lambda_grid: lambdas.clone(),
            b_grid: h_grid,
            theta_grid: lambdas,
            criterion: CvCriterion::LocalLikelihood,
            share_or_bandwidths: false,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.h_grid.is_empty()
            || self.lambda_grid.is_empty()
            || self.b_grid.is_empty()
            || self.theta_grid.is_empty()
        {
            return Err(Error::Parameter("bandwidth grids must be non-empty".into()));
        }
        for &h in self.h_grid.iter().chain(&self.b_grid) {
            if h <= 0.0 || !h.is_finite() {
                return Err(Error::Parameter(format!(
                    "continuous bandwidth candidates must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }
}

/// Criterion value at one probability-fit candidate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PsGridPoint {
    pub h: f64,
    pub lambda: DiscreteKernelParams,
    pub ls: f64,
    pub ml: f64,
}

/// Criterion value at one outcome-fit candidate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrGridPoint {
    pub b: f64,
    pub theta: DiscreteKernelParams,
    pub value: f64,
}

/// Trace of one outcome block; `cell` is None for the shared-bandwidth
/// search over the summed criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrTrace {
    pub cell: Option<Cell>,
    pub points: Vec<OrGridPoint>,
}

/// Outcome of a bandwidth search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectedBandwidths {
    pub criterion: CvCriterion,
    pub h: f64,
    pub lambda: DiscreteKernelParams,
    /// Selected (b, theta) per cell, canonical cell order.
    pub or_bandwidths: [(f64, DiscreteKernelParams); 4],
    /// Probability block plus the three non-reference outcome blocks at the
    /// selection.
    pub criterion_value: f64,
    pub ps_trace: Vec<PsGridPoint>,
    pub or_traces: Vec<OrTrace>,
}

impl SelectedBandwidths {
    pub fn or_for(&self, cell: Cell) -> (f64, DiscreteKernelParams) {
        self.or_bandwidths[cell.index()]
    }
}

/// Probability-fit criterion blocks computed from fitted probabilities:
/// squared-error block and log-likelihood block. Non-finite fits poison the
/// candidate with infinity.
pub fn ps_criterion_from_probabilities(data: &[Sample], gps: &GpsFit) -> (f64, f64) {
    let n = data.len() as f64;
    let mut ls = 0.0;
    let mut ml = 0.0;
    for (i, s) in data.iter().enumerate() {
        let row = &gps.probabilities[i];
        if row.iter().any(|p| !p.is_finite()) {
            return (f64::INFINITY, f64::INFINITY);
        }
        let own = s.cell().index();
        for (k, p) in row.iter().enumerate() {
            let ind = if k == own { 1.0 } else { 0.0 };
            ls += (ind - p) * (ind - p);
        }
        ml -= row[own].max(1e-12).ln();
    }
    (ls / n, ml / n)
}

/// Outcome criterion block from fitted means: mean squared in-cell
/// leave-one-out residual. Non-finite in-cell fits poison the candidate.
pub fn or_criterion_from_means(data: &[Sample], cell: Cell, means: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mut acc = 0.0;
    for (i, s) in data.iter().enumerate() {
        if s.cell() != cell {
            continue;
        }
        if !means[i].is_finite() {
            return f64::INFINITY;
        }
        acc += (s.y - means[i]) * (s.y - means[i]);
    }
    acc / n
}

fn ps_blocks(
    data: &[Sample],
    settings: &CvSettings,
    h: f64,
    lambda: DiscreteKernelParams,
) -> Result<(f64, f64)> {
    let basis = crate::basis::MultiIndexBasis::new(
        settings.ps_order,
        validate_layout(data)?.n_continuous,
    );
    // Candidate comparison tolerates a looser solve than the final fit;
    // the selected bandwidths are refit at full precision downstream.
    let relaxed = MlogitOptions {
        grad_tol: settings.mlogit.grad_tol.max(1e-6),
        refine: false,
        ..settings.mlogit
    };
    let fit = fit_local_mlogit_loo(data, &basis, settings.family, h, lambda, &relaxed)?;
    Ok(ps_criterion_from_probabilities(data, &fit))
}

fn or_block(
    data: &[Sample],
    settings: &CvSettings,
    cell: Cell,
    b: f64,
    theta: DiscreteKernelParams,
) -> Result<f64> {
    let basis = crate::basis::MultiIndexBasis::new(
        settings.or_order,
        validate_layout(data)?.n_continuous,
    );
    let fit = fit_local_ls_loo(data, cell, &basis, settings.family, b, theta)?;
    // The estimators evaluate this surface at every observation, so a
    // candidate that cannot predict somewhere is inadmissible even if its
    // in-cell criterion looks fine.
    if fit.means.iter().any(|m| !m.is_finite()) {
        return Ok(f64::INFINITY);
    }
    Ok(or_criterion_from_means(data, cell, &fit.means))
}

/// Squared-error cross-validation criterion at one full candidate: the
/// probability block plus the outcome blocks of the three non-reference
/// cells.
pub fn cv_criterion_ls(
    data: &[Sample],
    settings: &CvSettings,
    h: f64,
    lambda: DiscreteKernelParams,
    or_minus: &[(f64, DiscreteKernelParams); 3],
) -> Result<f64> {
    let (ls, _) = ps_blocks(data, settings, h, lambda)?;
    let mut total = ls;
    for (cell, (b, theta)) in Cell::MINUS.iter().zip(or_minus) {
        total += or_block(data, settings, *cell, *b, *theta)?;
    }
    Ok(total)
}

/// Likelihood cross-validation criterion at one full candidate.
pub fn cv_criterion_ml(
    data: &[Sample],
    settings: &CvSettings,
    h: f64,
    lambda: DiscreteKernelParams,
    or_minus: &[(f64, DiscreteKernelParams); 3],
) -> Result<f64> {
    let (_, ml) = ps_blocks(data, settings, h, lambda)?;
    let mut total = ml;
    for (cell, (b, theta)) in Cell::MINUS.iter().zip(or_minus) {
        total += or_block(data, settings, *cell, *b, *theta)?;
    }
    Ok(total)
}

/// Selections under both criteria from one shared set of leave-one-out
/// fits. The outcome blocks are identical across criteria, so only the
/// probability selection differs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BothSelections {
    pub ls: SelectedBandwidths,
    pub ml: SelectedBandwidths,
}

impl BothSelections {
    pub fn by(&self, criterion: CvCriterion) -> &SelectedBandwidths {
        match criterion {
            CvCriterion::LeastSquares => &self.ls,
            CvCriterion::LocalLikelihood => &self.ml,
        }
    }
}

/// Exhaustive blockwise grid search for both criteria at once.
///
/// Grids are sorted ascending and deduplicated; ties at the minimum go to
/// the smallest bandwidth, then the lexicographically smallest smoothing
/// pair, making the selection deterministic.
pub fn select_bandwidths_both(
    data: &[Sample],
    settings: &CvSettings,
    config: &BandwidthConfig,
) -> Result<BothSelections> {
    validate_layout(data)?;
    require_all_cells(data)?;
    config.validate()?;

    let mut h_grid = config.h_grid.clone();
    h_grid.sort_by(f64::total_cmp);
    h_grid.dedup();
    let mut b_grid = config.b_grid.clone();
    b_grid.sort_by(f64::total_cmp);
    b_grid.dedup();
    let sort_pairs = |grid: &[DiscreteKernelParams]| {
        let mut pairs = grid.to_vec();
        pairs.sort_by(|a, b| {
            a.lambda_u.total_cmp(&b.lambda_u).then(a.lambda_o.total_cmp(&b.lambda_o))
        });
        pairs.dedup_by(|a, b| a.lambda_u == b.lambda_u && a.lambda_o == b.lambda_o);
        pairs
    };
    let lambda_grid = sort_pairs(&config.lambda_grid);
    let theta_grid = sort_pairs(&config.theta_grid);

    // Probability block over its grid.
    let mut ps_trace = Vec::with_capacity(h_grid.len() * lambda_grid.len());
    for &h in &h_grid {
        for &lambda in &lambda_grid {
            let (ls, ml) = ps_blocks(data, settings, h, lambda)?;
            ps_trace.push(PsGridPoint { h, lambda, ls, ml });
        }
    }
    let argmin_ps = |value: fn(&PsGridPoint) -> f64| -> Result<&PsGridPoint> {
        let mut best: Option<&PsGridPoint> = None;
        for point in &ps_trace {
            if value(point).is_finite() && best.is_none_or(|b| value(point) < value(b)) {
                best = Some(point);
            }
        }
        best.ok_or_else(|| {
            Error::Selection(format!(
                "no admissible probability-fit candidate among {} grid points \
                 (all criteria non-finite)",
                ps_trace.len()
            ))
        })
    };
    let best_ls_ps = *argmin_ps(|p| p.ls)?;
    let best_ml_ps = *argmin_ps(|p| p.ml)?;

    // Outcome blocks per cell over their grid.
    let mut cell_points: [Vec<OrGridPoint>; 4] = Default::default();
    for cell in Cell::ALL {
        let mut points = Vec::with_capacity(b_grid.len() * theta_grid.len());
        for &b in &b_grid {
            for &theta in &theta_grid {
                let value = or_block(data, settings, cell, b, theta)?;
                points.push(OrGridPoint { b, theta, value });
            }
        }
        cell_points[cell.index()] = points;
    }

    let argmin_or = |points: &[OrGridPoint], what: &str| -> Result<OrGridPoint> {
        let mut best: Option<OrGridPoint> = None;
        for point in points {
            if point.value.is_finite() && best.is_none_or(|b| point.value < b.value) {
                best = Some(*point);
            }
        }
        best.ok_or_else(|| {
            Error::Selection(format!("no admissible outcome-fit candidate for {what}"))
        })
    };

    let mut or_bandwidths = [(0.0, DiscreteKernelParams::frequency()); 4];
    let mut or_values = [0.0f64; 4];
    let mut or_traces = Vec::new();
    if config.share_or_bandwidths {
        // Sum the four cell blocks pointwise and pick one candidate.
        let mut summed = Vec::with_capacity(cell_points[0].len());
        for k in 0..cell_points[0].len() {
            let value: f64 = cell_points.iter().map(|pts| pts[k].value).sum();
            summed.push(OrGridPoint { value, ..cell_points[0][k] });
        }
        let best = argmin_or(&summed, "the shared outcome bandwidth")?;
        for cell in Cell::ALL {
            or_bandwidths[cell.index()] = (best.b, best.theta);
            let k = summed.iter().position(|p| p.b == best.b && p.theta == best.theta).unwrap();
            or_values[cell.index()] = cell_points[cell.index()][k].value;
        }
        or_traces.push(OrTrace { cell: None, points: summed });
    } else {
        for cell in Cell::ALL {
            let best = argmin_or(&cell_points[cell.index()], cell.label())?;
            or_bandwidths[cell.index()] = (best.b, best.theta);
            or_values[cell.index()] = best.value;
        }
    }
    for cell in Cell::ALL {
        or_traces.push(OrTrace {
            cell: Some(cell),
            points: std::mem::take(&mut cell_points[cell.index()]),
        });
    }

    let or_minus_total: f64 = Cell::MINUS.iter().map(|c| or_values[c.index()]).sum();
    let build = |criterion: CvCriterion, ps: PsGridPoint| SelectedBandwidths {
        criterion,
        h: ps.h,
        lambda: ps.lambda,
        or_bandwidths,
        criterion_value: match criterion {
            CvCriterion::LeastSquares => ps.ls,
            CvCriterion::LocalLikelihood => ps.ml,
        } + or_minus_total,
        ps_trace: ps_trace.clone(),
        or_traces: or_traces.clone(),
    };
    Ok(BothSelections {
        ls: build(CvCriterion::LeastSquares, best_ls_ps),
        ml: build(CvCriterion::LocalLikelihood, best_ml_ps),
    })
}

/// Grid search under the configured criterion.
pub fn select_bandwidths(
    data: &[Sample],
    settings: &CvSettings,
    config: &BandwidthConfig,
) -> Result<SelectedBandwidths> {
    let both = select_bandwidths_both(data, settings, config)?;
    Ok(match config.criterion {
        CvCriterion::LeastSquares => both.ls,
        CvCriterion::LocalLikelihood => both.ml,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DiscreteKernelParams as Dkp;
    use crate::localpoly::GpsFit;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn obs(y: f64, d: u8, t: u8, x: f64) -> Sample {
        Sample { y, d, t, x_c: vec![x], x_u: vec![], x_o: vec![], cluster: None }
    }

    fn random_data(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let cell = Cell::ALL[rng.random_range(0..4)];
                let x: f64 = rng.random_range(-1.0..1.0);
                let y = 2.0 * x + x * x + rng.random::<f64>();
                obs(y, cell.d(), cell.t(), x)
            })
            .collect()
    }

    fn fixed_gps(probs: Vec<[f64; 4]>) -> GpsFit {
        let n = probs.len();
        GpsFit {
            probabilities: probs,
            gamma: vec![vec![]; n],
            converged: vec![true; n],
            ridged: vec![false; n],
            truncated: vec![false; n],
            truncation_floor: 0.0,
            bandwidth: 1.0,
            lambda: Dkp::frequency(),
        }
    }

    #[test]
    fn perfect_fits_give_zero_criterion() {
        let data = vec![obs(1.5, 1, 1, 0.0), obs(2.5, 1, 0, 0.1), obs(3.5, 0, 1, 0.2)];
        let probs: Vec<[f64; 4]> = data
            .iter()
            .map(|s| {
                let mut row = [0.0; 4];
                row[s.cell().index()] = 1.0;
                row
            })
            .collect();
        let gps = fixed_gps(probs);
        let (ls, ml) = ps_criterion_from_probabilities(&data, &gps);
        assert_eq!(ls, 0.0);
        assert_eq!(ml, 0.0);
        let means: Vec<f64> = data.iter().map(|s| s.y).collect();
        assert_eq!(or_criterion_from_means(&data, Cell::D1T1, &means), 0.0);
    }

    #[test]
    fn uniform_probabilities_give_log_four() {
        let data = vec![obs(1.0, 1, 1, 0.0), obs(2.0, 0, 0, 0.1)];
        let gps = fixed_gps(vec![[0.25; 4]; 2]);
        let (_, ml) = ps_criterion_from_probabilities(&data, &gps);
        assert!((ml - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_fit_poisons_candidate() {
        let data = vec![obs(1.0, 1, 1, 0.0), obs(2.0, 0, 0, 0.1)];
        let gps = fixed_gps(vec![[f64::NAN; 4], [0.25; 4]]);
        let (ls, ml) = ps_criterion_from_probabilities(&data, &gps);
        assert!(ls.is_infinite() && ml.is_infinite());
        assert!(or_criterion_from_means(&data, Cell::D1T1, &[f64::NAN, 1.0]).is_infinite());
    }

    /// Eight observations, two per cell, identical covariates, intercept
    /// fits: the probability block is 48/49 by hand, and with in-cell
    /// outcomes {0, 2} each leave-one-out mean is the opposite value so the
    /// outcome block contributes 4 per non-reference observation.
    #[test]
    fn hand_computed_criterion_on_toy_data() {
        let mut data = Vec::new();
        for cell in Cell::ALL {
            for y in [0.0, 2.0] {
                data.push(obs(y, cell.d(), cell.t(), 0.5));
            }
        }
        let settings = CvSettings {
            ps_order: 0,
            or_order: 0,
            ..CvSettings::default()
        };
        let or = [(10.0, Dkp::new(1.0, 1.0).unwrap()); 3];
        let ls =
            cv_criterion_ls(&data, &settings, 10.0, Dkp::new(1.0, 1.0).unwrap(), &or).unwrap();
        let expect_ps = 48.0 / 49.0;
        let expect_or = 3.0;
        assert!((ls - (expect_ps + expect_or)).abs() < 1e-5, "{ls}");

        let ml =
            cv_criterion_ml(&data, &settings, 10.0, Dkp::new(1.0, 1.0).unwrap(), &or).unwrap();
        assert!((ml - (7.0f64.ln() + expect_or)).abs() < 1e-5, "{ml}");
    }

    #[test]
    fn singleton_grids_select_that_point() {
        let data = random_data(60, 1);
        let config = BandwidthConfig {
            h_grid: vec![0.8],
            lambda_grid: vec![Dkp::frequency()],
            b_grid: vec![0.9],
            theta_grid: vec![Dkp::frequency()],
            criterion: CvCriterion::LeastSquares,
            share_or_bandwidths: false,
        };
        let sel = select_bandwidths(&data, &CvSettings::default(), &config).unwrap();
        assert_eq!(sel.h, 0.8);
        for cell in Cell::ALL {
            assert_eq!(sel.or_for(cell).0, 0.9);
        }
        assert!(sel.criterion_value.is_finite());
    }

    #[test]
    fn infinite_candidate_is_excluded() {
        let data = random_data(50, 2);
        // A tiny outcome bandwidth leaves every window empty: infinite block.
        let config = BandwidthConfig {
            h_grid: vec![1.0],
            lambda_grid: vec![Dkp::frequency()],
            b_grid: vec![1e-9, 1.0],
            theta_grid: vec![Dkp::frequency()],
            criterion: CvCriterion::LeastSquares,
            share_or_bandwidths: false,
        };
        let sel = select_bandwidths(&data, &CvSettings::default(), &config).unwrap();
        for cell in Cell::ALL {
            assert_eq!(sel.or_for(cell).0, 1.0);
        }

        // All candidates inadmissible: selection error with diagnostics.
        let config = BandwidthConfig {
            b_grid: vec![1e-9],
            ..config
        };
        assert!(select_bandwidths(&data, &CvSettings::default(), &config).is_err());
    }

    /// Blockwise search equals the brute-force product search recomputed
    /// through the public criterion functions.
    #[test]
    fn separable_search_matches_cartesian_oracle() {
        let data = random_data(60, 3);
        let settings = CvSettings::default();
        let h_grid = vec![0.5, 1.2];
        let b_grid = vec![0.4, 1.5];
        let lambda = Dkp::frequency();
        let config = BandwidthConfig {
            h_grid: h_grid.clone(),
            lambda_grid: vec![lambda],
            b_grid: b_grid.clone(),
            theta_grid: vec![lambda],
            criterion: CvCriterion::LeastSquares,
            share_or_bandwidths: false,
        };
        let sel = select_bandwidths(&data, &settings, &config).unwrap();

        let mut best = f64::INFINITY;
        let mut best_combo = (0.0, [(0.0, lambda); 3]);
        for &h in &h_grid {
            for &b10 in &b_grid {
                for &b01 in &b_grid {
                    for &b00 in &b_grid {
                        let or = [(b10, lambda), (b01, lambda), (b00, lambda)];
                        let value = cv_criterion_ls(&data, &settings, h, lambda, &or).unwrap();
                        if value < best {
                            best = value;
                            best_combo = (h, or);
                        }
                    }
                }
            }
        }
        assert_eq!(sel.h, best_combo.0);
        assert_eq!(sel.or_for(Cell::D1T0).0, best_combo.1[0].0);
        assert_eq!(sel.or_for(Cell::D0T1).0, best_combo.1[1].0);
        assert_eq!(sel.or_for(Cell::D0T0).0, best_combo.1[2].0);
        assert_eq!(sel.criterion_value, best);
    }

    /// With no discrete covariates every smoothing pair gives the same
    /// criterion; the lexicographically smallest pair wins.
    #[test]
    fn tie_break_prefers_smallest_lambda() {
        let data = random_data(80, 4);
        let config = BandwidthConfig {
            h_grid: vec![2.5],
            lambda_grid: vec![
                Dkp::new(0.5, 0.5).unwrap(),
                Dkp::new(0.0, 0.25).unwrap(),
                Dkp::new(0.0, 0.0).unwrap(),
            ],
            b_grid: vec![2.5],
            theta_grid: vec![Dkp::frequency()],
            criterion: CvCriterion::LocalLikelihood,
            share_or_bandwidths: false,
        };
        let sel = select_bandwidths(&data, &CvSettings::default(), &config).unwrap();
        assert_eq!((sel.lambda.lambda_u, sel.lambda.lambda_o), (0.0, 0.0));
    }

    #[test]
    fn shared_or_selection_uses_summed_blocks() {
        let data = random_data(80, 5);
        let config = BandwidthConfig {
            h_grid: vec![1.0],
            lambda_grid: vec![Dkp::frequency()],
            b_grid: vec![0.3, 0.8, 1.5],
            theta_grid: vec![Dkp::frequency()],
            criterion: CvCriterion::LeastSquares,
            share_or_bandwidths: true,
        };
        let sel = select_bandwidths(&data, &CvSettings::default(), &config).unwrap();
        let shared = sel.or_for(Cell::D1T1);
        for cell in Cell::ALL {
            assert_eq!(sel.or_for(cell), shared);
        }
        let trace = sel.or_traces.iter().find(|t| t.cell.is_none()).unwrap();
        let min = trace
            .points
            .iter()
            .map(|p| p.value)
            .fold(f64::INFINITY, f64::min);
        let at_selection =
            trace.points.iter().find(|p| p.b == shared.0).map(|p| p.value).unwrap();
        assert_eq!(min, at_selection);
    }

    /// On a strongly nonlinear but smooth design, an oracle-scale
    /// bandwidth beats an absurdly large one on average across seeds.
    #[test]
    fn criterion_prefers_reasonable_bandwidth_on_average() {
        let settings = CvSettings::default();
        let lambda = Dkp::frequency();
        let mut wins = 0;
        let seeds = 50;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let data: Vec<Sample> = (0..160)
                .map(|_| {
                    let cell = Cell::ALL[rng.random_range(0..4)];
                    let x: f64 = rng.random_range(-1.0..1.0);
                    let y = 5.0 * (3.0 * x).sin() + 0.2 * rng.random::<f64>();
                    obs(y, cell.d(), cell.t(), x)
                })
                .collect();
            let or_good = [(0.4, lambda); 3];
            let or_huge = [(500.0, lambda); 3];
            let good = cv_criterion_ls(&data, &settings, 0.4, lambda, &or_good).unwrap();
            let huge = cv_criterion_ls(&data, &settings, 500.0, lambda, &or_huge).unwrap();
            if good < huge {
                wins += 1;
            }
        }
        assert!(wins * 2 > seeds, "oracle bandwidth won only {wins}/{seeds}");
    }

    #[test]
    fn selection_is_deterministic_across_thread_counts() {
        let data = random_data(70, 6);
        let config = BandwidthConfig {
            h_grid: vec![0.5, 1.0],
            lambda_grid: vec![Dkp::frequency()],
            b_grid: vec![0.5, 1.0],
            theta_grid: vec![Dkp::frequency()],
            criterion: CvCriterion::LocalLikelihood,
            share_or_bandwidths: false,
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| select_bandwidths(&data, &CvSettings::default(), &config).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.h, b.h);
        assert_eq!(a.criterion_value, b.criterion_value);
        for (pa, pb) in a.ps_trace.iter().zip(&b.ps_trace) {
            assert_eq!(pa.ls, pb.ls);
            assert_eq!(pa.ml, pb.ml);
        }
    }
}
