//! Run configuration: a self-describing JSON file plus flag overrides.
//!
//! Every default is materialized into the effective configuration that gets
//! echoed into the report, so a report always records exactly what produced
//! it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use didcc_core::bandwidth::{BandwidthConfig, CvCriterion, CvSettings};
use didcc_core::inference::{BootstrapConfig, WeightLaw};
use didcc_core::kernels::{DiscreteKernelParams, KernelFamily};
use didcc_core::localpoly::MlogitOptions;
use didcc_core::pipeline::{AnalysisOptions, BandwidthSpec, UsedBandwidths};
use didcc_core::Sample;

use crate::CliError;

/// Column mapping of the input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub outcome: String,
    pub treatment: String,
    pub period: String,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub unordered: Vec<String>,
    #[serde(default)]
    pub ordered: Vec<String>,
    #[serde(default)]
    pub cluster: Option<String>,
}

impl ColumnMap {
    pub fn validate(&self) -> Result<(), CliError> {
        let mut names: Vec<&String> = vec![&self.outcome, &self.treatment, &self.period];
        names.extend(self.continuous.iter());
        names.extend(self.unordered.iter());
        names.extend(self.ordered.iter());
        if let Some(c) = &self.cluster {
            names.push(c);
        }
        for (i, a) in names.iter().enumerate() {
            if a.is_empty() {
                return Err(CliError::Config("empty column name in mapping".into()));
            }
            for b in &names[i + 1..] {
                if a == b {
                    return Err(CliError::Config(format!(
                        "column '{a}' mapped more than once"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Polynomial orders of the two first-step fits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Orders {
    pub ps: usize,
    pub or: usize,
}

impl Default for Orders {
    fn default() -> Self {
        Orders { ps: 1, or: 1 }
    }
}

/// Bandwidth section: cross-validate (with optional explicit grids) or fix
/// the bandwidths outright.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BandwidthSection {
    Auto {
        #[serde(default)]
        h_grid: Option<Vec<f64>>,
        #[serde(default)]
        lambda_grid: Option<Vec<DiscreteKernelParams>>,
        #[serde(default)]
        b_grid: Option<Vec<f64>>,
        #[serde(default)]
        theta_grid: Option<Vec<DiscreteKernelParams>>,
        #[serde(default)]
        share_or_bandwidths: bool,
    },
    Fixed {
        h: f64,
        lambda: DiscreteKernelParams,
        /// One outcome bandwidth pair applied to all four cells.
        b: f64,
        theta: DiscreteKernelParams,
    },
}

impl Default for BandwidthSection {
    fn default() -> Self {
        BandwidthSection::Auto {
            h_grid: None,
            lambda_grid: None,
            b_grid: None,
            theta_grid: None,
            share_or_bandwidths: false,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_floor() -> f64 {
    0.01
}
fn default_ci() -> f64 {
    0.95
}
fn default_criterion() -> CvCriterion {
    CvCriterion::LocalLikelihood
}

/// Bootstrap section of the configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapSection {
    pub draws: usize,
    #[serde(default = "default_weight_law")]
    pub weight_law: WeightLaw,
    #[serde(default)]
    pub clustered: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight_law() -> WeightLaw {
    WeightLaw::MeanOneExponential
}

/// Full estimation-run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub columns: ColumnMap,
    /// Min-max rescale continuous covariates to [0, 1] at ingestion.
    #[serde(default = "default_true")]
    pub rescale_continuous: bool,
    #[serde(default)]
    pub orders: Orders,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub bandwidths: BandwidthSection,
    #[serde(default = "default_criterion")]
    pub criterion: CvCriterion,
    #[serde(default = "default_floor")]
    pub truncation_floor: f64,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
    #[serde(default = "default_true")]
    pub with_twfe: bool,
    #[serde(default)]
    pub bootstrap: Option<BootstrapSection>,
    /// Machine-readable report path.
    pub output: PathBuf,
    /// Optional formatted-table path.
    #[serde(default)]
    pub text_output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))?;
        config.columns.validate()?;
        if !(0.0..0.25).contains(&config.truncation_floor) {
            return Err(CliError::Config(format!(
                "truncation_floor must lie in [0, 0.25), got {}",
                config.truncation_floor
            )));
        }
        if !(0.0 < config.ci_level && config.ci_level < 1.0) {
            return Err(CliError::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                config.ci_level
            )));
        }
        Ok(config)
    }

    /// Materialize the pipeline options for a given data set (grids may
    /// depend on the data scale).
    pub fn analysis_options(&self, data: &[Sample]) -> Result<AnalysisOptions, CliError> {
        let settings = CvSettings {
            ps_order: self.orders.ps,
            or_order: self.orders.or,
            family: self.kernel,
            mlogit: MlogitOptions::default(),
        };
        let bandwidths = match &self.bandwidths {
            BandwidthSection::Fixed { h, lambda, b, theta } => {
                BandwidthSpec::Fixed(UsedBandwidths {
                    h: *h,
                    lambda: *lambda,
                    or_bandwidths: [(*b, *theta); 4],
                })
            }
            BandwidthSection::Auto {
                h_grid,
                lambda_grid,
                b_grid,
                theta_grid,
                share_or_bandwidths,
            } => {
                let mut grid = BandwidthConfig::default_grid(data)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                if let Some(h) = h_grid {
                    grid.h_grid = h.clone();
                }
                if let Some(l) = lambda_grid {
                    grid.lambda_grid = l.clone();
                }
                if let Some(b) = b_grid {
                    grid.b_grid = b.clone();
                }
                if let Some(t) = theta_grid {
                    grid.theta_grid = t.clone();
                }
                grid.criterion = self.criterion;
                grid.share_or_bandwidths = *share_or_bandwidths;
                BandwidthSpec::Auto(grid)
            }
        };
        Ok(AnalysisOptions {
            settings,
            bandwidths,
            truncation_floor: self.truncation_floor,
            ci_level: self.ci_level,
            with_twfe: self.with_twfe,
            bootstrap: self.bootstrap.map(|b| BootstrapConfig {
                draws: b.draws,
                weight_law: b.weight_law,
                clustered: b.clustered,
                seed: b.seed,
            }),
        })
    }
}
