//! End-to-end estimation pipeline shared by the command-line interface and
//! the Monte Carlo harness: bandwidth selection (or fixed bandwidths),
//! nuisance fitting with truncation, all requested estimators, and the
//! compositional-changes test with optional bootstrap inference.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{
    select_bandwidths, BandwidthConfig, CvSettings, SelectedBandwidths,
};
use crate::basis::MultiIndexBasis;
use crate::error::{Error, Result};
use crate::estimators::{
    att_dr, att_stationary, att_twfe, bias_decomposition, efficiency_loss, AttEstimate, TwfeSpec,
};
use crate::inference::{
    bootstrap_hausman_pvalue, bootstrap_se, hausman_test, BootstrapConfig, BootstrapSe,
    HausmanResult,
};
use crate::kernels::DiscreteKernelParams;
use crate::localpoly::{fit_local_ls_loo, fit_local_mlogit_loo, predict_gps, GpsFit, OrFit};
use crate::sample::{validate_layout, Cell, Sample};

/// Continuous and discrete bandwidths actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsedBandwidths {
    pub h: f64,
    pub lambda: DiscreteKernelParams,
    /// Outcome-cell bandwidths in canonical cell order.
    pub or_bandwidths: [(f64, DiscreteKernelParams); 4],
}

/// How to obtain bandwidths for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSpec {
    /// Cross-validate over the given grids.
    Auto(BandwidthConfig),
    /// Use bandwidths as given.
    Fixed(UsedBandwidths),
}

/// Options of a full estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub settings: CvSettings,
    pub bandwidths: BandwidthSpec,
    /// Lower clip for fitted cell probabilities.
    pub truncation_floor: f64,
    pub ci_level: f64,
    /// Also run the two-way fixed-effects comparators.
    pub with_twfe: bool,
    pub bootstrap: Option<BootstrapConfig>,
}

impl AnalysisOptions {
    /// Defaults mirroring the reported conventions: local-linear fits,
    /// Epanechnikov kernel, truncation at 0.01, 95% intervals, both
    /// comparators, no bootstrap.
    pub fn auto(config: BandwidthConfig) -> Self {
        AnalysisOptions {
            settings: CvSettings::default(),
            bandwidths: BandwidthSpec::Auto(config),
            truncation_floor: 0.01,
            ci_level: 0.95,
            with_twfe: true,
            bootstrap: None,
        }
    }
}

/// Convergence and conditioning counts of the first-step fits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub ps_converged: usize,
    pub ps_ridged: usize,
    pub ps_truncated: usize,
    /// Ridged outcome windows per cell, canonical order.
    pub or_ridged: [usize; 4],
}

/// Per-observation first-step fits serialized into the report: cell
/// probabilities (post-truncation, canonical cell order) and their flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedNuisances {
    pub probabilities: Vec<[f64; 4]>,
    pub converged: Vec<bool>,
    pub ridged: Vec<bool>,
    pub truncated: Vec<bool>,
    pub truncation_floor: f64,
}

/// Test outcome that keeps a degenerate variance readable instead of
/// failing the whole run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TestOutcome {
    Ok(HausmanResult),
    Degenerate { message: String },
}

impl TestOutcome {
    pub fn as_ok(&self) -> Option<&HausmanResult> {
        match self {
            TestOutcome::Ok(res) => Some(res),
            TestOutcome::Degenerate { .. } => None,
        }
    }
}

/// Bootstrap standard errors and the clustered test p-value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapInference {
    pub config: BootstrapConfig,
    pub dr_se: BootstrapSe,
    pub stationary_se: BootstrapSe,
    pub hausman_p_value: Option<f64>,
}

/// Everything a full estimation run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub n: usize,
    /// Grid search outcome; absent when bandwidths were fixed.
    pub selection: Option<SelectedBandwidths>,
    pub used_bandwidths: UsedBandwidths,
    pub diagnostics: NuisanceDiagnostics,
    pub nuisances: FittedNuisances,
    pub dr: AttEstimate,
    pub stationary: AttEstimate,
    pub twfe_linear: Option<AttEstimate>,
    pub twfe_saturated: Option<AttEstimate>,
    pub hausman: TestOutcome,
    pub bootstrap: Option<BootstrapInference>,
    pub bias_decomposition: f64,
    pub efficiency_loss: f64,
}

/// Fit both nuisance surfaces at given bandwidths: leave-one-out local
/// multinomial logit probabilities (clipped below at the floor) and all
/// four leave-one-out outcome regressions.
pub fn fit_nuisances(
    data: &[Sample],
    settings: &CvSettings,
    used: &UsedBandwidths,
    truncation_floor: f64,
) -> Result<(GpsFit, OrFit)> {
    let layout = validate_layout(data)?;
    let ps_basis = MultiIndexBasis::new(settings.ps_order, layout.n_continuous);
    let or_basis = MultiIndexBasis::new(settings.or_order, layout.n_continuous);
    let raw = fit_local_mlogit_loo(
        data,
        &ps_basis,
        settings.family,
        used.h,
        used.lambda,
        &settings.mlogit,
    )?;
    let gps = predict_gps(&raw, truncation_floor)?;
    let mut or = OrFit::new();
    for cell in Cell::ALL {
        let (b, theta) = used.or_bandwidths[cell.index()];
        or.insert(fit_local_ls_loo(
            data,
            cell,
            &or_basis,
            settings.family,
            b,
            theta,
        )?);
    }
    Ok((gps, or))
}

fn diagnostics_of(gps: &GpsFit, or: &OrFit) -> NuisanceDiagnostics {
    let mut or_ridged = [0usize; 4];
    for fit in or.iter() {
        or_ridged[fit.cell.index()] = fit.n_ridged();
    }
    NuisanceDiagnostics {
        ps_converged: gps.n_converged(),
        ps_ridged: gps.ridged.iter().filter(|r| **r).count(),
        ps_truncated: gps.n_truncated(),
        or_ridged,
    }
}

/// Run the full estimation pipeline on one data set.
pub fn analyze(data: &[Sample], options: &AnalysisOptions) -> Result<AnalysisResult> {
    validate_layout(data)?;
    if !(0.0..0.25).contains(&options.truncation_floor) {
        return Err(Error::Parameter(format!(
            "truncation floor must lie in [0, 0.25), got {}",
            options.truncation_floor
        )));
    }
    let (selection, used) = match &options.bandwidths {
        BandwidthSpec::Fixed(used) => (None, *used),
        BandwidthSpec::Auto(config) => {
            let sel = select_bandwidths(data, &options.settings, config)?;
            let used = UsedBandwidths {
                h: sel.h,
                lambda: sel.lambda,
                or_bandwidths: sel.or_bandwidths,
            };
            (Some(sel), used)
        }
    };
    let (gps, or) =
        fit_nuisances(data, &options.settings, &used, options.truncation_floor)?;
    let diagnostics = diagnostics_of(&gps, &or);

    let dr = att_dr(data, &gps, &or, options.ci_level)?;
    let stationary = att_stationary(data, &gps, &or, options.ci_level)?;
    let hausman = match hausman_test(&dr, &stationary) {
        Ok(res) => TestOutcome::Ok(res),
        Err(Error::DegenerateTest(message)) => TestOutcome::Degenerate { message },
        Err(other) => return Err(other),
    };
    let (twfe_linear, twfe_saturated) = if options.with_twfe {
        (
            Some(att_twfe(data, TwfeSpec::Linear, options.ci_level)?),
            Some(att_twfe(data, TwfeSpec::Saturated, options.ci_level)?),
        )
    } else {
        (None, None)
    };

    let bootstrap = match &options.bootstrap {
        None => None,
        Some(config) => {
            let dr_se = bootstrap_se(data, &dr, config)?;
            let stationary_se = bootstrap_se(data, &stationary, config)?;
            let hausman_p_value = match &hausman {
                TestOutcome::Ok(_) => {
                    Some(bootstrap_hausman_pvalue(data, &dr, &stationary, config)?)
                }
                TestOutcome::Degenerate { .. } => None,
            };
            Some(BootstrapInference { config: *config, dr_se, stationary_se, hausman_p_value })
        }
    };

    Ok(AnalysisResult {
        n: data.len(),
        selection,
        used_bandwidths: used,
        diagnostics,
        nuisances: FittedNuisances {
            probabilities: gps.probabilities.clone(),
            converged: gps.converged.clone(),
            ridged: gps.ridged.clone(),
            truncated: gps.truncated.clone(),
            truncation_floor: gps.truncation_floor,
        },
        bias_decomposition: bias_decomposition(data, &or)?,
        efficiency_loss: efficiency_loss(data, &or)?,
        dr,
        stationary,
        twfe_linear,
        twfe_saturated,
        hausman,
        bootstrap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{draw_sample, DgpSpec, Design};

    fn small_options(data: &[Sample]) -> AnalysisOptions {
        let mut config = BandwidthConfig::coarse_grid(data).unwrap();
        // Keep the two largest bandwidths: small test samples need wide
        // windows to stay admissible.
        config.h_grid = config.h_grid.split_off(2);
        config.b_grid = config.b_grid.split_off(2);
        config.lambda_grid.truncate(1);
        config.theta_grid.truncate(1);
        AnalysisOptions::auto(config)
    }

    #[test]
    fn full_pipeline_runs_and_is_deterministic() {
        let spec = DgpSpec::new(Design::NonStationary, 300, 77);
        let data = draw_sample(&spec);
        let options = small_options(&data);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| analyze(&data, &options).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.dr.tau_hat, b.dr.tau_hat);
        assert_eq!(a.stationary.tau_hat, b.stationary.tau_hat);
        assert_eq!(a.used_bandwidths, b.used_bandwidths);
        assert!(a.dr.tau_hat.is_finite());
        assert!(a.hausman.as_ok().is_some());
        assert!(a.twfe_linear.is_some());
        let hr = a.hausman.as_ok().unwrap();
        assert!((0.0..=1.0).contains(&hr.p_value));
    }

    #[test]
    fn fixed_bandwidths_skip_selection() {
        let spec = DgpSpec::new(Design::Stationary, 280, 3);
        let data = draw_sample(&spec);
        let lambda = DiscreteKernelParams::new(0.3, 0.3).unwrap();
        let used = UsedBandwidths {
            h: 0.6,
            lambda,
            or_bandwidths: [(0.6, lambda); 4],
        };
        let mut options = small_options(&data);
        options.bandwidths = BandwidthSpec::Fixed(used);
        options.with_twfe = false;
        let res = analyze(&data, &options).unwrap();
        assert!(res.selection.is_none());
        assert_eq!(res.used_bandwidths, used);
        assert!(res.twfe_linear.is_none());
    }

    #[test]
    fn bootstrap_block_present_when_requested() {
        let spec = DgpSpec::new(Design::Stationary, 280, 5);
        let data = draw_sample(&spec);
        let mut options = small_options(&data);
        options.bootstrap = Some(BootstrapConfig { draws: 60, seed: 4, ..Default::default() });
        let res = analyze(&data, &options).unwrap();
        let boot = res.bootstrap.unwrap();
        assert!(boot.dr_se.se > 0.0);
        assert!(boot.hausman_p_value.is_some());
        // Bootstrap and plug-in standard errors agree to the right order.
        let ratio = boot.dr_se.se / res.dr.se();
        assert!((0.5..2.0).contains(&ratio), "{ratio}");
    }
}
