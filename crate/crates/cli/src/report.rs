//! Report assembly: machine-readable JSON plus a formatted text table.
//!
//! The text table follows the convention of reporting analytic standard
//! errors in parentheses and clustered bootstrap standard errors in
//! brackets under each point estimate.

use serde::{Deserialize, Serialize};

use didcc_core::estimators::AttEstimate;
use didcc_core::pipeline::{AnalysisResult, TestOutcome};
use didcc_core::sample::{cell_counts, Sample};

use crate::config::RunConfig;

/// Machine-readable estimation report: the effective configuration echoed
/// verbatim plus everything the pipeline produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub n: usize,
    /// Observations per treatment-period cell, canonical order.
    pub cell_counts: [usize; 4],
    pub result: AnalysisResult,
}

impl RunReport {
    pub fn new(config: RunConfig, data: &[Sample], result: AnalysisResult) -> Self {
        RunReport { config, n: data.len(), cell_counts: cell_counts(data), result }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Formatted text report.
    pub fn format_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let r = &self.result;
        let _ = writeln!(out, "Difference-in-differences ATT estimates");
        let _ = writeln!(
            out,
            "  n = {}, cells (1,1)/{} (1,0)/{} (0,1)/{} (0,0)/{}",
            self.n,
            self.cell_counts[0],
            self.cell_counts[1],
            self.cell_counts[2],
            self.cell_counts[3]
        );
        let ub = &r.used_bandwidths;
        let _ = writeln!(
            out,
            "  bandwidths: h = {:.4}, lambda = ({:.2}, {:.2}); outcome cells b = \
             [{:.4}, {:.4}, {:.4}, {:.4}]{}",
            ub.h,
            ub.lambda.lambda_u,
            ub.lambda.lambda_o,
            ub.or_bandwidths[0].0,
            ub.or_bandwidths[1].0,
            ub.or_bandwidths[2].0,
            ub.or_bandwidths[3].0,
            if r.selection.is_some() { " (cross-validated)" } else { " (fixed)" },
        );
        let d = &r.diagnostics;
        let _ = writeln!(
            out,
            "  diagnostics: {}/{} solver-converged, {} ridged, {} truncated probability rows",
            d.ps_converged, self.n, d.ps_ridged, d.ps_truncated
        );
        let _ = writeln!(out, "\n  {:<38} {:>12}", "estimator", "ATT");

        let boot_se = |est: &AttEstimate| -> Option<f64> {
            let boot = r.bootstrap.as_ref()?;
            match est.kind {
                didcc_core::estimators::EstimatorKind::DoublyRobust => Some(boot.dr_se.se),
                didcc_core::estimators::EstimatorKind::Stationary => {
                    Some(boot.stationary_se.se)
                }
                _ => None,
            }
        };
        let mut push_est = |label: &str, est: &AttEstimate| {
            let _ = writeln!(out, "  {:<38} {:>12.4}", label, est.tau_hat);
            let _ = writeln!(out, "  {:<38} {:>12}", "", format!("({:.4})", est.se()));
            if let Some(se) = boot_se(est) {
                let _ = writeln!(out, "  {:<38} {:>12}", "", format!("[{se:.4}]"));
            }
        };
        if let Some(est) = &r.twfe_linear {
            push_est("TWFE, linear", est);
        }
        if let Some(est) = &r.twfe_saturated {
            push_est("TWFE, saturated", est);
        }
        push_est("DR DiD (stationary composition)", &r.stationary);
        push_est("DR DiD (robust to comp. changes)", &r.dr);

        let _ = writeln!(out, "\nTest for compositional changes");
        match &r.hausman {
            TestOutcome::Ok(h) => {
                let _ = writeln!(
                    out,
                    "  statistic = {:.4}, contrast = {:.4}, unclustered p-value = {:.4}",
                    h.statistic, h.contrast, h.p_value
                );
                if let Some(boot) = &r.bootstrap {
                    if let Some(p) = boot.hausman_p_value {
                        let _ = writeln!(out, "  clustered bootstrap p-value = {p:.4}");
                    }
                }
                for (alpha, reject) in &h.decisions {
                    let _ = writeln!(
                        out,
                        "  at {:.0}%: {}",
                        alpha * 100.0,
                        if *reject { "reject stationary composition" } else { "no rejection" }
                    );
                }
            }
            TestOutcome::Degenerate { message } => {
                let _ = writeln!(out, "  degenerate: {message}");
            }
        }
        let _ = writeln!(
            out,
            "\nDiagnostics: stationarity gap estimate = {:.4}, efficiency loss estimate = {:.4}",
            r.bias_decomposition, r.efficiency_loss
        );
        out
    }
}
