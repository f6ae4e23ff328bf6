//! Replication driver and metric aggregation for the built-in designs.
//!
//! Each replication draws a sample from its own seed stream, cross-validates
//! bandwidths under both criteria on a shared set of leave-one-out fits,
//! runs the influence-function estimators, the two-way fixed-effects
//! comparators, and the compositional-changes test, and records the
//! numbers needed for bias/RMSE/coverage/rejection aggregates. Failed
//! replications are counted and reported, never silently dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bandwidth::{select_bandwidths_both, BandwidthConfig, CvCriterion, CvSettings};
use crate::error::{Error, Result};
use crate::estimators::{
    att_dr, att_stationary, att_twfe, bias_decomposition, efficiency_loss, AttEstimate, TwfeSpec,
};
use crate::inference::hausman_test;
use crate::pipeline::{fit_nuisances, UsedBandwidths};
use crate::simulation::{draw_sample_indexed, efficiency_bound, true_att, DgpSpec};

/// Monte Carlo run controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub replications: usize,
    /// Grids for the per-replication cross-validation; `None` builds the
    /// coarse default grid from each replication's data.
    pub bandwidths: Option<BandwidthConfig>,
    pub settings: CvSettings,
    pub truncation_floor: f64,
    pub ci_level: f64,
    pub with_twfe: bool,
    /// Keep per-replication records in the report.
    pub keep_replications: bool,
    /// Draws for the true-ATT and efficiency-bound integrations.
    pub constants_draws: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            replications: 200,
            bandwidths: None,
            settings: CvSettings::default(),
            truncation_floor: 0.01,
            ci_level: 0.95,
            with_twfe: true,
            keep_replications: true,
            constants_draws: 10_000_000,
        }
    }
}

/// Point estimate and plug-in variance of one estimator in one replication.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstRecord {
    pub tau: f64,
    pub omega: f64,
}

impl EstRecord {
    fn of(est: &AttEstimate) -> Self {
        EstRecord { tau: est.tau_hat, omega: est.omega_hat }
    }
}

/// Per-replication results under one cross-validation criterion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriterionRecord {
    pub dr: EstRecord,
    pub stationary: EstRecord,
    pub statistic: f64,
    pub p_value: f64,
    pub bias_decomposition: f64,
    pub efficiency_loss: f64,
    pub h: f64,
}

/// One replication's records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub ls: CriterionRecord,
    pub ml: CriterionRecord,
    pub twfe_linear: Option<EstRecord>,
    pub twfe_saturated: Option<EstRecord>,
}

/// Sampling-performance aggregates of one estimator across replications.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub avg_bias: f64,
    pub med_bias: f64,
    pub rmse: f64,
    pub avg_asy_var: f64,
    pub coverage: f64,
    pub avg_ci_length: f64,
}

/// Test aggregates across replications.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestMetrics {
    pub avg_statistic: f64,
    pub reject_10: f64,
    pub reject_05: f64,
    pub reject_01: f64,
}

/// Full Monte Carlo report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub spec: DgpSpec,
    pub replications_requested: usize,
    pub replications_used: usize,
    pub true_att: f64,
    pub efficiency_bound: f64,
    pub ci_level: f64,
    pub dr_ml: EstimatorMetrics,
    pub dr_ls: EstimatorMetrics,
    pub stationary_ml: EstimatorMetrics,
    pub stationary_ls: EstimatorMetrics,
    pub twfe_linear: Option<EstimatorMetrics>,
    pub twfe_saturated: Option<EstimatorMetrics>,
    pub test_ml: TestMetrics,
    pub test_ls: TestMetrics,
    pub failed: usize,
    /// First few failure messages, for diagnosis.
    pub failures: Vec<String>,
    pub replications: Option<Vec<RepRecord>>,
}

fn criterion_record(
    data: &[crate::sample::Sample],
    config: &McConfig,
    used: &UsedBandwidths,
) -> Result<CriterionRecord> {
    let (gps, or) = fit_nuisances(data, &config.settings, used, config.truncation_floor)?;
    let dr = att_dr(data, &gps, &or, config.ci_level)?;
    let stationary = att_stationary(data, &gps, &or, config.ci_level)?;
    let test = hausman_test(&dr, &stationary)?;
    Ok(CriterionRecord {
        dr: EstRecord::of(&dr),
        stationary: EstRecord::of(&stationary),
        statistic: test.statistic,
        p_value: test.p_value,
        bias_decomposition: bias_decomposition(data, &or)?,
        efficiency_loss: efficiency_loss(data, &or)?,
        h: used.h,
    })
}

fn replicate(spec: &DgpSpec, config: &McConfig, rep: usize) -> Result<RepRecord> {
    let data = draw_sample_indexed(spec, rep as u64);
    let grid = match &config.bandwidths {
        Some(grid) => grid.clone(),
        None => BandwidthConfig::coarse_grid(&data)?,
    };
    let both = select_bandwidths_both(&data, &config.settings, &grid)?;
    let used_of = |criterion: CvCriterion| {
        let sel = both.by(criterion);
        UsedBandwidths { h: sel.h, lambda: sel.lambda, or_bandwidths: sel.or_bandwidths }
    };
    let used_ls = used_of(CvCriterion::LeastSquares);
    let used_ml = used_of(CvCriterion::LocalLikelihood);
    let ls = criterion_record(&data, config, &used_ls)?;
    let ml = if used_ml == used_ls {
        CriterionRecord { h: used_ml.h, ..ls }
    } else {
        criterion_record(&data, config, &used_ml)?
    };
    let (twfe_linear, twfe_saturated) = if config.with_twfe {
        (
            Some(EstRecord::of(&att_twfe(&data, TwfeSpec::Linear, config.ci_level)?)),
            Some(EstRecord::of(&att_twfe(&data, TwfeSpec::Saturated, config.ci_level)?)),
        )
    } else {
        (None, None)
    };
    Ok(RepRecord { rep, ls, ml, twfe_linear, twfe_saturated })
}

fn metrics(records: &[EstRecord], n: usize, true_att: f64, ci_level: f64) -> EstimatorMetrics {
    let r = records.len() as f64;
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * ci_level);
    let mut biases: Vec<f64> = records.iter().map(|e| e.tau - true_att).collect();
    let avg_bias = biases.iter().sum::<f64>() / r;
    biases.sort_by(f64::total_cmp);
    let med_bias = if biases.len() % 2 == 1 {
        biases[biases.len() / 2]
    } else {
        0.5 * (biases[biases.len() / 2 - 1] + biases[biases.len() / 2])
    };
    let rmse = (biases.iter().map(|b| b * b).sum::<f64>() / r).sqrt();
    let avg_asy_var = records.iter().map(|e| e.omega).sum::<f64>() / r;
    let mut covered = 0usize;
    let mut cil = 0.0;
    for e in records {
        let half = z * (e.omega / n as f64).sqrt();
        if (e.tau - half) <= true_att && true_att <= (e.tau + half) {
            covered += 1;
        }
        cil += 2.0 * half;
    }
    EstimatorMetrics {
        avg_bias,
        med_bias,
        rmse,
        avg_asy_var,
        coverage: covered as f64 / r,
        avg_ci_length: cil / r,
    }
}

fn test_metrics(records: &[(f64, f64)]) -> TestMetrics {
    let r = records.len() as f64;
    let share = |alpha: f64| records.iter().filter(|(_, p)| *p <= alpha).count() as f64 / r;
    TestMetrics {
        avg_statistic: records.iter().map(|(s, _)| s).sum::<f64>() / r,
        reject_10: share(0.10),
        reject_05: share(0.05),
        reject_01: share(0.01),
    }
}

/// Run the Monte Carlo experiment: one record per replication, aggregated
/// into the report. Deterministic in the master seed regardless of worker
/// count; a failed replication is excluded from the aggregates and counted.
pub fn run_monte_carlo(spec: &DgpSpec, config: &McConfig) -> Result<McReport> {
    if config.replications == 0 {
        return Err(Error::Parameter("at least one replication is required".into()));
    }
    let true_att_value = true_att(spec, config.constants_draws);
    let bound = efficiency_bound(spec, config.constants_draws);

    let outcomes: Vec<std::result::Result<RepRecord, String>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| replicate(spec, config, rep).map_err(|e| format!("replication {rep}: {e}")))
        .collect();

    let mut records = Vec::with_capacity(config.replications);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(msg) => failures.push(msg),
        }
    }
    if records.is_empty() {
        return Err(Error::Estimation(format!(
            "all {} replications failed; first failure: {}",
            config.replications,
            failures.first().cloned().unwrap_or_default()
        )));
    }

    let pick =
        |f: &dyn Fn(&RepRecord) -> EstRecord| records.iter().map(f).collect::<Vec<_>>();
    let dr_ml = pick(&|r| r.ml.dr);
    let dr_ls = pick(&|r| r.ls.dr);
    let sz_ml = pick(&|r| r.ml.stationary);
    let sz_ls = pick(&|r| r.ls.stationary);
    let twfe_lin: Vec<EstRecord> = records.iter().filter_map(|r| r.twfe_linear).collect();
    let twfe_sat: Vec<EstRecord> = records.iter().filter_map(|r| r.twfe_saturated).collect();
    let tests_ml: Vec<(f64, f64)> =
        records.iter().map(|r| (r.ml.statistic, r.ml.p_value)).collect();
    let tests_ls: Vec<(f64, f64)> =
        records.iter().map(|r| (r.ls.statistic, r.ls.p_value)).collect();

    let m = |recs: &[EstRecord]| metrics(recs, spec.n, true_att_value, config.ci_level);
    let failed = failures.len();
    failures.truncate(5);
    Ok(McReport {
        spec: *spec,
        replications_requested: config.replications,
        replications_used: records.len(),
        true_att: true_att_value,
        efficiency_bound: bound,
        ci_level: config.ci_level,
        dr_ml: m(&dr_ml),
        dr_ls: m(&dr_ls),
        stationary_ml: m(&sz_ml),
        stationary_ls: m(&sz_ls),
        twfe_linear: (!twfe_lin.is_empty()).then(|| m(&twfe_lin)),
        twfe_saturated: (!twfe_sat.is_empty()).then(|| m(&twfe_sat)),
        test_ml: test_metrics(&tests_ml),
        test_ls: test_metrics(&tests_ls),
        failed,
        failures,
        replications: config.keep_replications.then_some(records),
    })
}

impl McReport {
    /// Two-block text table: estimator metrics over the comparators and the
    /// influence-function estimators, then the test block.
    pub fn format_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "True ATT: {:.3}   Efficiency bound: {:.1}   (n = {}, {} of {} replications, seed {})",
            self.true_att,
            self.efficiency_bound,
            self.spec.n,
            self.replications_used,
            self.replications_requested,
            self.spec.seed,
        );
        if self.failed > 0 {
            let _ = writeln!(out, "Failed replications: {}", self.failed);
        }
        let header = format!(
            "  {:<12} {:<4} {:>9} {:>9} {:>8} {:>10} {:>7} {:>7}",
            "estimator", "cv", "avg bias", "med bias", "rmse", "asy var", "cover", "cil"
        );
        let row = |name: &str, cv: &str, m: &EstimatorMetrics| {
            format!(
                "  {:<12} {:<4} {:>9.3} {:>9.3} {:>8.3} {:>10.3} {:>7.3} {:>7.3}",
                name, cv, m.avg_bias, m.med_bias, m.rmse, m.avg_asy_var, m.coverage,
                m.avg_ci_length
            )
        };
        let _ = writeln!(out, "\nTwo-way fixed effects\n{header}");
        if let Some(m) = &self.twfe_linear {
            let _ = writeln!(out, "{}", row("linear", "-", m));
        }
        if let Some(m) = &self.twfe_saturated {
            let _ = writeln!(out, "{}", row("saturated", "-", m));
        }
        let _ = writeln!(out, "\nDoubly robust estimators\n{header}");
        let _ = writeln!(out, "{}", row("dr", "ml", &self.dr_ml));
        let _ = writeln!(out, "{}", row("dr", "ls", &self.dr_ls));
        let _ = writeln!(out, "{}", row("stationary", "ml", &self.stationary_ml));
        let _ = writeln!(out, "{}", row("stationary", "ls", &self.stationary_ls));
        let _ = writeln!(
            out,
            "\nCompositional-changes test\n  {:<4} {:>9} {:>9} {:>9} {:>9}",
            "cv", "avg stat", "rej 10%", "rej 5%", "rej 1%"
        );
        for (cv, t) in [("ml", &self.test_ml), ("ls", &self.test_ls)] {
            let _ = writeln!(
                out,
                "  {:<4} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                cv, t.avg_statistic, t.reject_10, t.reject_05, t.reject_01
            );
        }
        out
    }
}
