//! Built-in Monte Carlo designs and the replication harness.
//!
//! Two designs are provided. In the first, the propensity of landing in
//! each treatment-period cell depends on the period, so the sampled
//! composition shifts across periods. The second averages the cell
//! propensities over periods, making treatment and covariates independent
//! of the period indicator while keeping everything else identical.
//!
//! Outcomes follow a quadratic baseline surface with treated-group
//! heterogeneity in levels and a nonlinear treatment effect, so linear
//! two-way fixed-effects regressions are misspecified by construction.

use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernels::DiscreteKernelParams;
use crate::localpoly::{GpsFit, OrCellFit, OrFit};
use crate::sample::{Cell, Sample};

/// Which Monte Carlo design to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Cell propensities differ across periods (composition shifts).
    NonStationary,
    /// Period-averaged propensities (no composition shifts).
    Stationary,
}

/// A concrete draw specification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DgpSpec {
    pub design: Design,
    /// Sample size per replication.
    pub n: usize,
    /// Master seed; all randomness derives from it via fixed stream ids.
    pub seed: u64,
    /// Replace the heterogeneous treatment-effect surface by a constant.
    /// Diagnostic knob used by property tests; `None` is the real design.
    pub att_override: Option<f64>,
    /// Scale on both outcome noise terms. Diagnostic knob; 1 is the real
    /// design.
    pub noise_scale: f64,
}

impl DgpSpec {
    pub fn new(design: Design, n: usize, seed: u64) -> Self {
        DgpSpec { design, n, seed, att_override: None, noise_scale: 1.0 }
    }
}

// ---------------------------------------------------------------------------
// Index and outcome surfaces.
// ---------------------------------------------------------------------------

/// Cell-index surface for the pre-period treated cell.
fn f_ps_10(x: &[f64; 6]) -> f64 {
    let quad = (x[0] - x[0] * x[0]) + (x[1] - x[1] * x[1]);
    let linear = x[2] + x[3] + x[4] + x[5];
    let adjacent = x[2] * x[3] - x[4] * x[5];
    let cont_disc = (x[0] - x[1]) * (x[2] + x[3] + x[4] + x[5]);
    let disc_disc = x[2] * x[4] - x[2] * x[5] - x[3] * x[4] + x[3] * x[5];
    0.4 * quad + 0.2 * linear + 0.1 * (adjacent + cont_disc + disc_disc)
}

/// Cell-index surface for the post-period comparison cell.
fn f_ps_01(x: &[f64; 6]) -> f64 {
    let quad = 2.0 * x[0] + x[1] + x[0] * x[0] - x[1] * x[1] + x[0] * x[1];
    let linear = x[2] - x[3] + x[4] - x[5];
    let inter = x[1] * (x[2] + x[3] + x[4] + x[5]) + (x[2] + x[3]) * x[5];
    0.4 * quad + 0.2 * linear + 0.1 * inter
}

/// Cell-index surface for the pre-period comparison cell.
fn f_ps_00(x: &[f64; 6]) -> f64 {
    let quad = x[0] + 2.0 * x[1] - x[0] * x[0] + x[1] * x[1] - x[0] * x[1];
    let linear = -x[2] + x[3] - x[4] + x[5];
    let inter = x[0] * (x[2] + x[3] + x[4] + x[5]) + (x[2] + x[3]) * x[4];
    0.4 * quad + 0.2 * linear + 0.1 * inter
}

/// Baseline outcome surface; also the treated-group heterogeneity shift.
fn f_base(x: &[f64; 6]) -> f64 {
    27.4 * x[0] + 27.4 * x[1] + 13.7 * (x[0] * x[0] + x[1] * x[1] + x[0] * x[1])
}

/// Treatment-effect surface.
fn f_att(x: &[f64; 6]) -> f64 {
    27.4 * x[0] + 13.7 * x[1] + 6.85 * (x[2] + x[3] + x[4] + x[5]) - 15.0
}

/// Cell probabilities of the non-stationary design, canonical cell order.
fn ps_nonstationary(x: &[f64; 6]) -> [f64; 4] {
    let e10 = f_ps_10(x).exp();
    let e01 = f_ps_01(x).exp();
    let e00 = f_ps_00(x).exp();
    let denom = 1.0 + e10 + e01 + e00;
    [1.0 / denom, e10 / denom, e01 / denom, e00 / denom]
}

/// Population share of the post period under the non-stationary design,
/// integrated once over the covariate law with a fixed internal seed.
fn nonstationary_post_share() -> f64 {
    static SHARE: OnceLock<f64> = OnceLock::new();
    *SHARE.get_or_init(|| {
        let draws = 4_000_000usize;
        let sums: Vec<f64> = (0..draws / 65_536 + 1)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = stream_rng(0x9e37_79b9, STREAM_POST_SHARE, chunk as u64);
                let lo = chunk * 65_536;
                let hi = ((chunk + 1) * 65_536).min(draws);
                let mut acc = 0.0;
                for _ in lo..hi {
                    let x = draw_covariates(&mut rng);
                    let p = ps_nonstationary(&x);
                    acc += p[Cell::D1T1.index()] + p[Cell::D0T1.index()];
                }
                acc
            })
            .collect();
        sums.iter().sum::<f64>() / draws as f64
    })
}

/// Cell probabilities under `design`, canonical cell order.
pub fn oracle_cell_probabilities(design: Design, x: &[f64; 6]) -> [f64; 4] {
    let p1 = ps_nonstationary(x);
    match design {
        Design::NonStationary => p1,
        Design::Stationary => {
            let post = nonstationary_post_share();
            let pre = 1.0 - post;
            // Period-averaged propensities times the marginal period share.
            let d1 = p1[Cell::D1T1.index()] + p1[Cell::D1T0.index()];
            let d0 = p1[Cell::D0T1.index()] + p1[Cell::D0T0.index()];
            [post * d1, pre * d1, post * d0, pre * d0]
        }
    }
}

/// True conditional outcome mean m_{d,t}(x) under either design.
///
/// The treated group's level shift enters through the mean of the
/// heteroskedastic noise term, which is centered at the heterogeneity
/// surface for treated units.
pub fn oracle_outcome_mean(cell: Cell, x: &[f64; 6], att_override: Option<f64>) -> f64 {
    let base = f_base(x);
    let het = if cell.d() == 1 { base } else { 0.0 };
    let effect = match cell {
        Cell::D1T1 => att_override.unwrap_or_else(|| f_att(x)),
        _ => 0.0,
    };
    match cell.t() {
        1 => 210.0 + 2.0 * base + effect + het,
        _ => 210.0 + base + het,
    }
}

/// True conditional treatment effect surface.
pub fn oracle_conditional_att(x: &[f64; 6], att_override: Option<f64>) -> f64 {
    att_override.unwrap_or_else(|| f_att(x))
}

// ---------------------------------------------------------------------------
// Drawing.
// ---------------------------------------------------------------------------

const STREAM_POST_SHARE: u64 = 0;
const STREAM_SAMPLE: u64 = 1;
const STREAM_TRUE_ATT: u64 = 2;
const STREAM_BOUND: u64 = 3;
pub(crate) const STREAM_BOOTSTRAP: u64 = 5;

/// Independent deterministic stream: one master seed, many (purpose, index)
/// streams.
pub(crate) fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | index);
    rng
}

fn draw_covariates(rng: &mut ChaCha8Rng) -> [f64; 6] {
    let x1 = rng.random_range(-1.0..1.0);
    let x2 = rng.random_range(-1.0..1.0);
    let x3 = f64::from(rng.random::<bool>());
    let x4 = f64::from(rng.random::<bool>());
    let mut x5 = 0.0;
    let mut x6 = 0.0;
    for _ in 0..3 {
        x5 += f64::from(rng.random::<bool>());
        x6 += f64::from(rng.random::<bool>());
    }
    [x1, x2, x3, x4, x5, x6]
}

fn assign_cell(probs: &[f64; 4], u: f64) -> Cell {
    // Partition of the unit interval in the order (1,0), (0,1), (0,0), with
    // the treated-post cell taking the top of the interval.
    let p10 = probs[Cell::D1T0.index()];
    let p01 = probs[Cell::D0T1.index()];
    let p00 = probs[Cell::D0T0.index()];
    if u <= p10 {
        Cell::D1T0
    } else if u <= p10 + p01 {
        Cell::D0T1
    } else if u <= p10 + p01 + p00 {
        Cell::D0T0
    } else {
        Cell::D1T1
    }
}

fn draw_observation(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> ([f64; 6], Cell, f64) {
    let x = draw_covariates(rng);
    let probs = oracle_cell_probabilities(spec.design, &x);
    let u: f64 = rng.random();
    let cell = assign_cell(&probs, u);
    let z_het: f64 = rng.sample(StandardNormal);
    let z_cell: f64 = rng.sample(StandardNormal);
    let y = oracle_outcome_mean(cell, &x, spec.att_override)
        + spec.noise_scale * (z_het + z_cell);
    (x, cell, y)
}

fn to_sample(x: &[f64; 6], cell: Cell, y: f64) -> Sample {
    Sample {
        y,
        d: cell.d(),
        t: cell.t(),
        x_c: vec![x[0], x[1]],
        x_u: vec![x[2] as i64, x[3] as i64],
        x_o: vec![x[4] as i64, x[5] as i64],
        cluster: None,
    }
}

/// Draw one sample of `spec.n` observations, deterministic in the seed.
pub fn draw_sample(spec: &DgpSpec) -> Vec<Sample> {
    draw_sample_indexed(spec, 0)
}

/// The sample a given replication index draws inside the Monte Carlo
/// harness; exposed so single replications can be reproduced and examined.
pub fn draw_sample_for_replication(spec: &DgpSpec, rep: u64) -> Vec<Sample> {
    draw_sample_indexed(spec, rep)
}

/// Draw the sample for replication `rep`; each replication has its own
/// stream of the master seed.
pub(crate) fn draw_sample_indexed(spec: &DgpSpec, rep: u64) -> Vec<Sample> {
    let mut rng = stream_rng(spec.seed, STREAM_SAMPLE, rep);
    (0..spec.n)
        .map(|_| {
            let (x, cell, y) = draw_observation(spec, &mut rng);
            to_sample(&x, cell, y)
        })
        .collect()
}

/// Covariates of an observation in the designs' six-slot layout.
fn sample_x(s: &Sample) -> [f64; 6] {
    [
        s.x_c[0],
        s.x_c[1],
        s.x_u[0] as f64,
        s.x_u[1] as f64,
        s.x_o[0] as f64,
        s.x_o[1] as f64,
    ]
}

/// Nuisance "fits" filled with the design's true surfaces at the sampled
/// covariates: true cell probabilities and true conditional means for all
/// four cells. Used by diagnostics and by contamination experiments that
/// degrade exactly one of the two.
pub fn oracle_fits(spec: &DgpSpec, data: &[Sample]) -> (GpsFit, OrFit) {
    let n = data.len();
    let gps = GpsFit {
        probabilities: data
            .iter()
            .map(|s| oracle_cell_probabilities(spec.design, &sample_x(s)))
            .collect(),
        gamma: vec![Vec::new(); n],
        converged: vec![true; n],
        ridged: vec![false; n],
        truncated: vec![false; n],
        truncation_floor: 0.0,
        bandwidth: f64::INFINITY,
        lambda: DiscreteKernelParams::frequency(),
    };
    let mut or = OrFit::new();
    for cell in Cell::ALL {
        or.insert(OrCellFit {
            cell,
            means: data
                .iter()
                .map(|s| oracle_outcome_mean(cell, &sample_x(s), spec.att_override))
                .collect(),
            beta: vec![Vec::new(); n],
            effective_counts: vec![n; n],
            ridged: vec![false; n],
            bandwidth: f64::INFINITY,
            theta: DiscreteKernelParams::frequency(),
        });
    }
    (gps, or)
}

fn chunked_mc<F>(draws: usize, f: F) -> Vec<[f64; 2]>
where
    F: Fn(usize, usize, usize) -> [f64; 2] + Sync,
{
    let chunk = 65_536usize;
    let n_chunks = draws.div_ceil(chunk);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c, c * chunk, ((c + 1) * chunk).min(draws)))
        .collect()
}

/// True average treatment effect on the treated under `spec`, computed by
/// Monte Carlo integration over the covariate law: the effect surface
/// averaged with treated-post cell weights.
pub fn true_att(spec: &DgpSpec, draws: usize) -> f64 {
    let parts = chunked_mc(draws, |c, lo, hi| {
        let mut rng = stream_rng(spec.seed, STREAM_TRUE_ATT, c as u64);
        let mut num = 0.0;
        let mut den = 0.0;
        for _ in lo..hi {
            let x = draw_covariates(&mut rng);
            let p11 = oracle_cell_probabilities(spec.design, &x)[Cell::D1T1.index()];
            num += oracle_conditional_att(&x, spec.att_override) * p11;
            den += p11;
        }
        [num, den]
    });
    let num: f64 = parts.iter().map(|p| p[0]).sum();
    let den: f64 = parts.iter().map(|p| p[1]).sum();
    num / den
}

/// Semiparametric efficiency bound relevant to the design, evaluated with
/// the design's true nuisance surfaces by Monte Carlo integration.
///
/// For the non-stationary design this is the second moment of the
/// compositional-changes influence function. For the stationary design the
/// relevant benchmark is the bound that exploits stationarity, i.e. the
/// second moment of the stationarity-imposing influence function; it is the
/// tighter of the two there (the robust estimator's variance sits roughly
/// 2.2 times above it on that design).
pub fn efficiency_bound(spec: &DgpSpec, draws: usize) -> f64 {
    let tau = true_att(spec, draws);
    match spec.design {
        Design::NonStationary => bound_dr(spec, tau, draws),
        Design::Stationary => bound_stationary(spec, tau, draws),
    }
}

/// E[eta^2] for the compositional-changes influence function at the truth.
fn bound_dr(spec: &DgpSpec, tau: f64, draws: usize) -> f64 {
    // E[DT] equals the mean treated-post propensity.
    let share_parts = chunked_mc(draws.min(4_000_000), |c, lo, hi| {
        let mut rng = stream_rng(spec.seed, STREAM_BOUND, c as u64);
        let mut acc = 0.0;
        for _ in lo..hi {
            let x = draw_covariates(&mut rng);
            acc += oracle_cell_probabilities(spec.design, &x)[Cell::D1T1.index()];
        }
        [acc, (hi - lo) as f64]
    });
    let e_dt: f64 = share_parts.iter().map(|p| p[0]).sum::<f64>()
        / share_parts.iter().map(|p| p[1]).sum::<f64>();

    let parts = chunked_mc(draws, |c, lo, hi| {
        let mut rng = stream_rng(spec.seed, STREAM_BOUND + 100, c as u64);
        let mut acc = 0.0;
        for _ in lo..hi {
            let (x, cell, y) = draw_observation(spec, &mut rng);
            let probs = oracle_cell_probabilities(spec.design, &x);
            let eta = match cell {
                Cell::D1T1 => {
                    let adj = y
                        - oracle_outcome_mean(Cell::D1T0, &x, spec.att_override)
                        - oracle_outcome_mean(Cell::D0T1, &x, spec.att_override)
                        + oracle_outcome_mean(Cell::D0T0, &x, spec.att_override);
                    (adj - tau) / e_dt
                }
                _ => {
                    let ratio = probs[Cell::D1T1.index()] / probs[cell.index()];
                    let resid = y - oracle_outcome_mean(cell, &x, spec.att_override);
                    cell.sign() * ratio * resid / e_dt
                }
            };
            acc += eta * eta;
        }
        [acc, (hi - lo) as f64]
    });
    parts.iter().map(|p| p[0]).sum::<f64>() / parts.iter().map(|p| p[1]).sum::<f64>()
}

/// E[eta^2] for the stationarity-imposing influence function at the truth.
///
/// Population normalizers use the stationarity identities
/// E[D 1{T=t}] = P(T=t) E[D] and
/// E[ptilde (1-D) 1{T=t} / (1-ptilde)] = P(T=t) E[D].
fn bound_stationary(spec: &DgpSpec, tau: f64, draws: usize) -> f64 {
    let share_parts = chunked_mc(draws.min(4_000_000), |c, lo, hi| {
        let mut rng = stream_rng(spec.seed, STREAM_BOUND, c as u64);
        let mut acc = [0.0f64; 2];
        for _ in lo..hi {
            let x = draw_covariates(&mut rng);
            let p = oracle_cell_probabilities(spec.design, &x);
            acc[0] += p[Cell::D1T1.index()] + p[Cell::D1T0.index()];
            acc[1] += 1.0;
        }
        acc
    });
    let e_d: f64 = share_parts.iter().map(|p| p[0]).sum::<f64>()
        / share_parts.iter().map(|p| p[1]).sum::<f64>();
    let post = nonstationary_post_share();
    let norm_t = [(1.0 - post) * e_d, post * e_d];

    let parts = chunked_mc(draws, |c, lo, hi| {
        let mut rng = stream_rng(spec.seed, STREAM_BOUND + 100, c as u64);
        let mut acc = 0.0;
        for _ in lo..hi {
            let (x, cell, y) = draw_observation(spec, &mut rng);
            let probs = oracle_cell_probabilities(spec.design, &x);
            // P(D=1 | X) under stationarity.
            let ptilde =
                probs[Cell::D1T1.index()] + probs[Cell::D1T0.index()];
            let tau_x = oracle_conditional_att(&x, spec.att_override);
            let resid = y - oracle_outcome_mean(cell, &x, spec.att_override);
            let norm = norm_t[cell.t() as usize];
            let w_term = if cell.d() == 1 {
                resid / norm
            } else {
                (ptilde / (1.0 - ptilde)) * resid / norm
            };
            let lead = if cell.d() == 1 { (tau_x - tau) / e_d } else { 0.0 };
            let eta = lead + cell.sign() * w_term;
            acc += eta * eta;
        }
        [acc, (hi - lo) as f64]
    });
    parts.iter().map(|p| p[0]).sum::<f64>() / parts.iter().map(|p| p[1]).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    const P1: [f64; 6] = [0.5, -0.5, 1.0, 0.0, 2.0, 3.0];
    const P2: [f64; 6] = [-0.8, 0.25, 0.0, 1.0, 3.0, 1.0];

    /// Hand-evaluated surface values at two fixed covariate points; any
    /// transcription slip in the index or outcome formulas trips these.
    #[test]
    fn surfaces_match_hand_evaluation() {
        // P1: quad parts 0.4*(-0.5) = -0.2; levels 0.2*6 = 1.2; interactions
        // 0.1*((0 - 6) + (0.5+0.5)*6 + (2 - 3 - 0 + 0)) = -0.1.
        assert!((f_ps_10(&P1) - 0.9).abs() < 1e-12, "{}", f_ps_10(&P1));
        assert!((f_ps_01(&P1) - 0.1).abs() < 1e-12, "{}", f_ps_01(&P1));
        assert!((f_ps_00(&P1) - 0.4).abs() < 1e-12, "{}", f_ps_00(&P1));
        assert!((f_base(&P1) - 3.425).abs() < 1e-12, "{}", f_base(&P1));
        assert!((f_att(&P1) - 32.95).abs() < 1e-12, "{}", f_att(&P1));

        // P2: 0.4*(-1.2525) + 0.2*5 + 0.1*((0 - 3) - 1.05*5 - 2).
        assert!((f_ps_10(&P2) + 0.526).abs() < 1e-12, "{}", f_ps_10(&P2));
        assert!((f_ps_01(&P2) - 0.036).abs() < 1e-12, "{}", f_ps_01(&P2));
        assert!((f_ps_00(&P2) + 0.571).abs() < 1e-12, "{}", f_ps_00(&P2));
        assert!((f_base(&P2) + 8.18575).abs() < 1e-12, "{}", f_base(&P2));
        assert!((f_att(&P2) - 0.755).abs() < 1e-12, "{}", f_att(&P2));
    }

    #[test]
    fn probabilities_sum_to_one_both_designs() {
        let mut rng = stream_rng(99, 7, 0);
        for _ in 0..10_000 {
            let x = draw_covariates(&mut rng);
            for design in [Design::NonStationary, Design::Stationary] {
                let p = oracle_cell_probabilities(design, &x);
                let sum: f64 = p.iter().sum();
                assert!((sum - 1.0).abs() < 1e-10, "{design:?}: {sum}");
                assert!(p.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn sample_draw_is_seed_deterministic() {
        let spec = DgpSpec::new(Design::NonStationary, 200, 42);
        let a = draw_sample(&spec);
        let b = draw_sample(&spec);
        assert_eq!(a, b);
        let c = draw_sample(&DgpSpec::new(Design::NonStationary, 200, 43));
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_cell_shares_match_integrated_propensities() {
        let spec = DgpSpec::new(Design::NonStationary, 1_000_000, 7);
        let data = draw_sample(&spec);
        let mut shares = [0.0f64; 4];
        for s in &data {
            shares[s.cell().index()] += 1.0;
        }
        shares.iter_mut().for_each(|v| *v /= spec.n as f64);

        // Integration oracle over the covariate law, separate stream.
        let mut rng = stream_rng(1234, 9, 0);
        let mut integrated = [0.0f64; 4];
        let draws = 1_000_000;
        for _ in 0..draws {
            let x = draw_covariates(&mut rng);
            let p = ps_nonstationary(&x);
            for k in 0..4 {
                integrated[k] += p[k];
            }
        }
        integrated.iter_mut().for_each(|v| *v /= draws as f64);
        for k in 0..4 {
            assert!(
                (shares[k] - integrated[k]).abs() < 0.005,
                "cell {k}: {} vs {}",
                shares[k],
                integrated[k]
            );
        }
    }

    /// Mean absolute gaps between same-group propensities across periods
    /// are about 0.125 in the non-stationary design, with a maximum near
    /// 0.63.
    #[test]
    fn composition_shift_magnitude() {
        let mut rng = stream_rng(5, 11, 0);
        let draws = 1_000_000;
        let mut gap_treated = 0.0;
        let mut gap_control = 0.0;
        let mut gap_max = 0.0f64;
        for _ in 0..draws {
            let x = draw_covariates(&mut rng);
            let p = ps_nonstationary(&x);
            let gt = (p[Cell::D1T1.index()] - p[Cell::D1T0.index()]).abs();
            let gc = (p[Cell::D0T1.index()] - p[Cell::D0T0.index()]).abs();
            gap_treated += gt;
            gap_control += gc;
            gap_max = gap_max.max(gt.max(gc));
        }
        gap_treated /= draws as f64;
        gap_control /= draws as f64;
        assert!((gap_treated - 0.125).abs() < 0.01, "{gap_treated}");
        assert!((gap_control - 0.125).abs() < 0.01, "{gap_control}");
        assert!((gap_max - 0.63).abs() < 0.05, "{gap_max}");
    }

    /// The published design constants at moderate integration sizes. The
    /// acceptance suite re-checks these at full size.
    #[test]
    fn design_constants() {
        let s1 = DgpSpec::new(Design::NonStationary, 0, 1);
        let s2 = DgpSpec::new(Design::Stationary, 0, 1);
        let att1 = true_att(&s1, 2_000_000);
        let att2 = true_att(&s2, 2_000_000);
        assert!((att1 - 4.31).abs() < 0.05, "{att1}");
        assert!((att2 - 9.13).abs() < 0.05, "{att2}");
        let seb1 = efficiency_bound(&s1, 2_000_000);
        let seb2 = efficiency_bound(&s2, 2_000_000);
        assert!((seb1 / 1753.6 - 1.0).abs() < 0.02, "{seb1}");
        assert!((seb2 / 796.8 - 1.0).abs() < 0.02, "{seb2}");
    }

    /// In the stationary design, (D, X) is independent of T: a chi-squared
    /// independence test between T and strata of (D, discretized X) should
    /// not reject.
    #[test]
    fn stationary_design_passes_independence_check() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let spec = DgpSpec::new(Design::Stationary, 100_000, 21);
        let data = draw_sample(&spec);
        // Strata: D x X3 x X4 x sign(X1) = 16 rows, columns T = 0/1.
        let mut table = vec![[0.0f64; 2]; 16];
        for s in &data {
            let row = (s.d as usize) * 8
                + (s.x_u[0] as usize) * 4
                + (s.x_u[1] as usize) * 2
                + usize::from(s.x_c[0] > 0.0);
            table[row][s.t as usize] += 1.0;
        }
        let total: f64 = data.len() as f64;
        let col: [f64; 2] = [
            table.iter().map(|r| r[0]).sum::<f64>(),
            table.iter().map(|r| r[1]).sum::<f64>(),
        ];
        let mut stat = 0.0;
        for row in &table {
            let rowsum = row[0] + row[1];
            for t in 0..2 {
                let expected = rowsum * col[t] / total;
                stat += (row[t] - expected).powi(2) / expected;
            }
        }
        let dof = (16 - 1) as f64;
        let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 = {stat}, p = {p}");
    }

    #[test]
    fn constant_effect_override_returns_constant() {
        let mut spec = DgpSpec::new(Design::NonStationary, 10, 3);
        spec.att_override = Some(12.5);
        let att = true_att(&spec, 200_000);
        assert!((att - 12.5).abs() < 1e-12, "{att}");
    }

    /// With a constant effect and no outcome noise the estimand is
    /// deterministic and the bound collapses; scaling the noise up drives
    /// it up monotonically.
    #[test]
    fn efficiency_bound_monotone_in_noise() {
        let mut spec = DgpSpec::new(Design::NonStationary, 10, 3);
        spec.att_override = Some(5.0);
        let mut last = -1.0;
        for scale in [0.0, 0.5, 1.0, 2.0] {
            spec.noise_scale = scale;
            let bound = efficiency_bound(&spec, 400_000);
            assert!(bound > last, "scale {scale}: {bound} <= {last}");
            if scale == 0.0 {
                assert!(bound.abs() < 1e-9, "degenerate bound {bound}");
            }
            last = bound;
        }
    }
}
