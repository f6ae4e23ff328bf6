//! Compositional-changes test and multiplier bootstrap inference.
//!
//! The Hausman-type test contrasts the robust and stationarity-imposing
//! ATT estimators; under a stable composition both estimate the same
//! quantity, so the studentized squared contrast is asymptotically
//! chi-squared with one degree of freedom. The variance of the contrast is
//! estimated from the difference of the two influence-value vectors, never
//! from the difference of the two variances (which can go negative in
//! finite samples).
//!
//! Standard errors and clustered test p-values come from a multiplier
//! bootstrap: nonnegative mean-one weights are drawn once per cluster and
//! applied to the influence values, leaving the nuisance fits untouched.

use rand::prelude::*;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimators::AttEstimate;
use crate::sample::Sample;

/// Significance levels reported with every test decision.
pub const DECISION_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

/// Result of the compositional-changes test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HausmanResult {
    /// Studentized squared contrast, asymptotically chi-squared(1).
    pub statistic: f64,
    /// Variance estimate of the contrast: mean squared difference of the
    /// two influence-value vectors.
    pub v_hat: f64,
    /// Upper-tail chi-squared(1) probability at the statistic.
    pub p_value: f64,
    /// Point-estimate contrast between the robust and stationary
    /// estimators.
    pub contrast: f64,
    /// Reject/accept at the conventional levels, keyed by level.
    pub decisions: Vec<(f64, bool)>,
}

/// Compositional-changes test from two aligned estimates.
///
/// Degeneracy handling: an exactly zero contrast with collapsed variance is
/// reported as "no evidence" (statistic 0, p-value 1); a collapsed variance
/// with a nonzero contrast is an error, since the test's variance condition
/// is violated.
pub fn hausman_test(dr: &AttEstimate, stationary: &AttEstimate) -> Result<HausmanResult> {
    if dr.n != stationary.n {
        return Err(Error::Shape("estimates come from different sample sizes".into()));
    }
    let n = dr.n as f64;
    let contrast = dr.tau_hat - stationary.tau_hat;
    let v_hat = dr
        .influence
        .iter()
        .zip(&stationary.influence)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let statistic = if v_hat < 1e-12 {
        if contrast.abs() < 1e-12 {
            0.0
        } else {
            return Err(Error::DegenerateTest(format!(
                "contrast variance {v_hat:e} collapsed while the contrast is {contrast:e}; \
                 the effect surface may be constant among the treated"
            )));
        }
    } else {
        n * contrast * contrast / v_hat
    };
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new(1.0).expect("valid dof").sf(statistic)
    };
    Ok(HausmanResult {
        statistic,
        v_hat,
        p_value,
        contrast,
        decisions: DECISION_LEVELS.iter().map(|&a| (a, p_value <= a)).collect(),
    })
}

/// Law of the nonnegative mean-one bootstrap multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// Unit-mean, unit-variance exponential weights.
    MeanOneExponential,
    /// Two-point distribution of Mammen (1993), shifted to mean one.
    Mammen,
}

/// Multiplier bootstrap controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub weight_law: WeightLaw,
    /// Draw one weight per cluster id instead of one per observation.
    pub clustered: bool,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            draws: 999,
            weight_law: WeightLaw::MeanOneExponential,
            clustered: false,
            seed: 0,
        }
    }
}

/// Bootstrap standard error with the per-draw estimates that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub se: f64,
    pub draws: Vec<f64>,
    /// Set when the draw count is too small for a stable standard error.
    pub low_draws_warning: bool,
}

fn draw_weight<R: Rng>(law: WeightLaw, rng: &mut R) -> f64 {
    match law {
        WeightLaw::MeanOneExponential => rng.sample::<f64, _>(Exp1),
        WeightLaw::Mammen => {
            // Values (3 -/+ sqrt(5))/2 with probabilities making the mean 1
            // and the variance 1.
            let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
            let p_low = golden / 5.0f64.sqrt();
            if rng.random::<f64>() < p_low {
                (3.0 - 5.0f64.sqrt()) / 2.0
            } else {
                (3.0 + 5.0f64.sqrt()) / 2.0
            }
        }
    }
}

/// Observation-to-cluster assignment; without clustering each observation
/// is its own cluster.
fn cluster_assignment(data: &[Sample], clustered: bool) -> Result<(Vec<usize>, usize)> {
    if !clustered {
        return Ok(((0..data.len()).collect(), data.len()));
    }
    let mut ids: Vec<u64> = Vec::new();
    let mut assignment = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        let id = s.cluster.ok_or_else(|| {
            Error::Estimation(format!("observation {i} has no cluster id"))
        })?;
        let idx = match ids.iter().position(|&v| v == id) {
            Some(idx) => idx,
            None => {
                ids.push(id);
                ids.len() - 1
            }
        };
        assignment.push(idx);
    }
    if ids.len() < 2 {
        return Err(Error::Estimation("clustered bootstrap needs at least two clusters".into()));
    }
    Ok((assignment, ids.len()))
}

/// Mean influence perturbation per draw, with weights shared within
/// clusters: draw b returns mean_i((xi_{g(i),b} - 1) eta_i).
fn bootstrap_perturbations(
    influence: &[f64],
    assignment: &[usize],
    n_clusters: usize,
    config: &BootstrapConfig,
) -> Vec<f64> {
    let n = influence.len() as f64;
    // Per-cluster influence sums make each draw O(#clusters).
    let mut cluster_sums = vec![0.0; n_clusters];
    for (i, &g) in assignment.iter().enumerate() {
        cluster_sums[g] += influence[i];
    }
    (0..config.draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = crate::simulation::stream_rng(
                config.seed,
                crate::simulation::STREAM_BOOTSTRAP,
                b as u64,
            );
            let mut acc = 0.0;
            for &sum in &cluster_sums {
                let xi = draw_weight(config.weight_law, &mut rng);
                acc += (xi - 1.0) * sum;
            }
            acc / n
        })
        .collect()
}

/// Multiplier bootstrap standard error for an influence-function estimate.
///
/// Nuisance fits are frozen; each draw perturbs the influence-value average
/// with mean-one weights (per cluster when configured) and the standard
/// error is the standard deviation of the per-draw estimates.
pub fn bootstrap_se(
    data: &[Sample],
    estimate: &AttEstimate,
    config: &BootstrapConfig,
) -> Result<BootstrapSe> {
    if config.draws == 0 {
        return Err(Error::Parameter("bootstrap needs at least one draw".into()));
    }
    if data.len() != estimate.n {
        return Err(Error::Shape("estimate does not match the data".into()));
    }
    let (assignment, n_clusters) = cluster_assignment(data, config.clustered)?;
    let perturbations =
        bootstrap_perturbations(&estimate.influence, &assignment, n_clusters, config);
    let draws: Vec<f64> = perturbations.iter().map(|p| estimate.tau_hat + p).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (draws.len().saturating_sub(1)).max(1) as f64;
    Ok(BootstrapSe {
        se: var.sqrt(),
        draws,
        low_draws_warning: config.draws < 50,
    })
}

/// Bootstrap p-value for the compositional-changes test.
///
/// The contrast's influence values (difference of the two estimators') are
/// perturbed by the same multiplier scheme; the p-value is the share of
/// draws whose perturbation is at least as large in magnitude as the
/// observed contrast. The studentization cancels because nuisances and the
/// variance estimate are held fixed across draws.
pub fn bootstrap_hausman_pvalue(
    data: &[Sample],
    dr: &AttEstimate,
    stationary: &AttEstimate,
    config: &BootstrapConfig,
) -> Result<f64> {
    if config.draws == 0 {
        return Err(Error::Parameter("bootstrap needs at least one draw".into()));
    }
    if dr.n != stationary.n || dr.n != data.len() {
        return Err(Error::Shape("estimates do not match the data".into()));
    }
    let contrast = dr.tau_hat - stationary.tau_hat;
    let delta: Vec<f64> = dr
        .influence
        .iter()
        .zip(&stationary.influence)
        .map(|(a, b)| a - b)
        .collect();
    let (assignment, n_clusters) = cluster_assignment(data, config.clustered)?;
    let perturbations = bootstrap_perturbations(&delta, &assignment, n_clusters, config);
    let exceed = perturbations
        .iter()
        .filter(|p| p.abs() >= contrast.abs())
        .count();
    Ok(exceed as f64 / config.draws as f64)
}
