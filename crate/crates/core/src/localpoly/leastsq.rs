//! Local polynomial least squares estimation of the outcome regressions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MultiIndexBasis;
use crate::error::{Error, Result};
use crate::kernels::{ContinuousKernel, DiscreteKernelParams, KernelFamily};
use crate::linalg::SymMatrix;
use crate::sample::{Cell, Sample};

use super::gather_neighbors;

/// Fitted outcome-regression surface for one treatment-period cell.
///
/// `means[j]` is the leave-one-out local polynomial prediction of the cell's
/// conditional mean at observation j's covariates, for every j in the sample
/// (not just in-cell observations).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrCellFit {
    pub cell: Cell,
    /// Leave-one-out conditional mean predictions at every observation.
    pub means: Vec<f64>,
    /// Local coefficient vectors per observation.
    pub beta: Vec<Vec<f64>>,
    /// In-cell neighbors with positive kernel weight, per observation.
    pub effective_counts: Vec<usize>,
    /// Whether the local normal equations needed a ridge.
    pub ridged: Vec<bool>,
    pub bandwidth: f64,
    pub theta: DiscreteKernelParams,
}

impl OrCellFit {
    pub fn n_ridged(&self) -> usize {
        self.ridged.iter().filter(|r| **r).count()
    }
}

/// Outcome regressions for the cells a given estimator needs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OrFit {
    cells: [Option<OrCellFit>; 4],
}

impl OrFit {
    pub fn new() -> Self {
        OrFit::default()
    }

    pub fn insert(&mut self, fit: OrCellFit) {
        let idx = fit.cell.index();
        self.cells[idx] = Some(fit);
    }

    pub fn get(&self, cell: Cell) -> Option<&OrCellFit> {
        self.cells[cell.index()].as_ref()
    }

    pub fn require(&self, cell: Cell) -> Result<&OrCellFit> {
        self.get(cell).ok_or_else(|| {
            Error::Estimation(format!("outcome regression for cell {} not fitted", cell.label()))
        })
    }

    /// Prediction of cell `cell`'s conditional mean at observation `j`.
    pub fn mean(&self, cell: Cell, j: usize) -> Result<f64> {
        Ok(self.require(cell)?.means[j])
    }

    pub fn iter(&self) -> impl Iterator<Item = &OrCellFit> {
        self.cells.iter().flatten()
    }
}

/// Leave-one-out local polynomial least squares fit of one cell's outcome
/// regression, evaluated at every observation's covariates.
///
/// At each point the weighted normal equations run over in-cell neighbors
/// excluding the point itself. Degenerate windows — fewer in-cell neighbors
/// than three basis lengths, or a singular local design — fall back to the
/// local constant fit (the kernel-weighted in-cell mean) and are flagged;
/// an exactly- or nearly-interpolating polynomial at a sparse window can
/// otherwise extrapolate arbitrarily far from the data. A window with no
/// in-cell neighbor at all yields a NaN prediction, which bandwidth
/// selection treats as disqualifying.
#[allow(clippy::needless_range_loop)]
pub fn fit_local_ls_loo(
    data: &[Sample],
    cell: Cell,
    basis: &MultiIndexBasis,
    family: KernelFamily,
    b: f64,
    theta: DiscreteKernelParams,
) -> Result<OrCellFit> {
    let layout = crate::sample::validate_layout(data)?;
    if basis.dimension() != layout.n_continuous {
        return Err(Error::Shape("basis dimension differs from continuous covariate count".into()));
    }
    if b <= 0.0 || !b.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {b}")));
    }
    if !data.iter().any(|s| s.cell() == cell) {
        return Err(Error::Estimation(format!("empty treatment cell {}", cell.label())));
    }
    let kernel = ContinuousKernel::new(family, layout.n_continuous);
    let nq = basis.len();

    struct Point {
        beta: Vec<f64>,
        count: usize,
        ridged: bool,
    }

    let points: Vec<Point> = (0..data.len())
        .into_par_iter()
        .map(|j| -> Result<Point> {
            let hood =
                gather_neighbors(data, Some(j), &data[j], basis, &kernel, b, theta)?;
            let mut gram = SymMatrix::zeros(nq);
            let mut rhs = vec![0.0; nq];
            let mut count = 0usize;
            let mut weight_sum = 0.0;
            let mut weighted_y = 0.0;
            let cell_idx = cell.index() as u8;
            for k in 0..hood.len() {
                if hood.cells[k] != cell_idx {
                    continue;
                }
                count += 1;
                let w = hood.weights[k];
                let bv = hood.basis(k);
                let y = hood.outcomes[k];
                weight_sum += w;
                weighted_y += w * y;
                for r in 0..nq {
                    let wbr = w * bv[r];
                    rhs[r] += wbr * y;
                    for s in r..nq {
                        gram.add(r, s, wbr * bv[s]);
                    }
                }
            }
            // Mirror the upper triangle.
            for r in 0..nq {
                for s in 0..r {
                    gram.data[r * nq + s] = gram.at(s, r);
                }
            }
            if count == 0 {
                return Ok(Point { beta: vec![f64::NAN; nq], count, ridged: true });
            }
            // Local constant fallback: bounded by the in-window outcomes.
            let constant = |count: usize| -> Point {
                let mut beta = vec![0.0; nq];
                beta[0] = weighted_y / weight_sum;
                Point { beta, count, ridged: true }
            };
            if count < 3 * nq {
                return Ok(constant(count));
            }
            Ok(match gram.solve(&rhs) {
                Some(beta) => Point { beta, count, ridged: false },
                None => constant(count),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(OrCellFit {
        cell,
        means: points.iter().map(|p| p.beta[0]).collect(),
        beta: points.iter().map(|p| p.beta.clone()).collect(),
        effective_counts: points.iter().map(|p| p.count).collect(),
        ridged: points.iter().map(|p| p.ridged).collect(),
        bandwidth: b,
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const HUGE_BANDWIDTH: f64 = 1e9;

    fn obs(y: f64, d: u8, t: u8, x: f64) -> Sample {
        Sample { y, d, t, x_c: vec![x], x_u: vec![], x_o: vec![], cluster: None }
    }

    fn random_data(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let cell = Cell::ALL[rng.random_range(0..4)];
                let x: f64 = rng.random_range(-1.0..1.0);
                obs(2.0 + 3.0 * x + rng.random::<f64>(), cell.d(), cell.t(), x)
            })
            .collect()
    }

    /// Infinite bandwidth and order zero: the fit is the leave-one-out
    /// in-cell sample mean.
    #[test]
    fn order_zero_huge_bandwidth_is_loo_cell_mean() {
        let data = random_data(60, 1);
        let basis = MultiIndexBasis::new(0, 1);
        let fit = fit_local_ls_loo(
            &data,
            Cell::D1T0,
            &basis,
            KernelFamily::Epanechnikov,
            HUGE_BANDWIDTH,
            DiscreteKernelParams::new(1.0, 1.0).unwrap(),
        )
        .unwrap();
        for (j, s) in data.iter().enumerate() {
            let peers: Vec<f64> = data
                .iter()
                .enumerate()
                .filter(|(i, o)| *i != j && o.cell() == Cell::D1T0 && s.y.is_finite())
                .map(|(_, o)| o.y)
                .collect();
            let mean = peers.iter().sum::<f64>() / peers.len() as f64;
            assert!(
                (fit.means[j] - mean).abs() < 1e-10,
                "j={j}: {} vs {mean}",
                fit.means[j]
            );
        }
    }

    /// Infinite bandwidth and order one: the fit is the leave-one-out
    /// in-cell OLS prediction. The oracle solves the 2x2 normal equations
    /// directly.
    #[test]
    fn order_one_huge_bandwidth_is_loo_ols() {
        let data = random_data(80, 2);
        let basis = MultiIndexBasis::new(1, 1);
        let fit = fit_local_ls_loo(
            &data,
            Cell::D0T1,
            &basis,
            KernelFamily::Epanechnikov,
            HUGE_BANDWIDTH,
            DiscreteKernelParams::new(1.0, 1.0).unwrap(),
        )
        .unwrap();
        for j in [0usize, 17, 55] {
            let xj = data[j].x_c[0];
            // Direct OLS of y on (1, x - xj) over in-cell peers.
            let mut s = [0.0f64; 3]; // sums: 1, u, u^2
            let mut b = [0.0f64; 2]; // sums: y, u*y
            for (i, o) in data.iter().enumerate() {
                if i == j || o.cell() != Cell::D0T1 {
                    continue;
                }
                let u = o.x_c[0] - xj;
                s[0] += 1.0;
                s[1] += u;
                s[2] += u * u;
                b[0] += o.y;
                b[1] += u * o.y;
            }
            let det = s[0] * s[2] - s[1] * s[1];
            let intercept = (s[2] * b[0] - s[1] * b[1]) / det;
            assert!(
                (fit.means[j] - intercept).abs() < 1e-9,
                "j={j}: {} vs {intercept}",
                fit.means[j]
            );
        }
    }

    /// With one binary covariate, no discrete smoothing, and an intercept
    /// basis, the fit reduces to within-stratum leave-one-out in-cell means.
    #[test]
    fn frequency_means_within_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut data = Vec::new();
        for stratum in [0i64, 1] {
            for cell in Cell::ALL {
                for _ in 0..rng.random_range(4..8) {
                    data.push(Sample {
                        y: rng.random_range(-3.0..3.0),
                        d: cell.d(),
                        t: cell.t(),
                        x_c: vec![],
                        x_u: vec![stratum],
                        x_o: vec![],
                        cluster: None,
                    });
                }
            }
        }
        let basis = MultiIndexBasis::new(0, 0);
        let fit = fit_local_ls_loo(
            &data,
            Cell::D1T0,
            &basis,
            KernelFamily::Epanechnikov,
            1.0,
            DiscreteKernelParams::frequency(),
        )
        .unwrap();
        for (j, s) in data.iter().enumerate() {
            let peers: Vec<f64> = data
                .iter()
                .enumerate()
                .filter(|(i, o)| *i != j && o.x_u == s.x_u && o.cell() == Cell::D1T0)
                .map(|(_, o)| o.y)
                .collect();
            let mean = peers.iter().sum::<f64>() / peers.len() as f64;
            assert!(
                (fit.means[j] - mean).abs() < 1e-12,
                "j={j}: {} vs {mean}",
                fit.means[j]
            );
        }
    }

    #[test]
    fn constant_outcome_is_interpolated_exactly() {
        let mut data = random_data(50, 3);
        for s in &mut data {
            if s.cell() == Cell::D0T0 {
                s.y = 7.25;
            }
        }
        let basis = MultiIndexBasis::new(1, 1);
        for b in [0.4, 1.0, HUGE_BANDWIDTH] {
            let fit = fit_local_ls_loo(
                &data,
                Cell::D0T0,
                &basis,
                KernelFamily::Epanechnikov,
                b,
                DiscreteKernelParams::new(1.0, 1.0).unwrap(),
            )
            .unwrap();
            for (j, m) in fit.means.iter().enumerate() {
                if fit.effective_counts[j] >= 2 {
                    assert!((m - 7.25).abs() < 1e-8, "b={b} j={j}: {m}");
                }
            }
        }
    }

    /// Rescaling the outcome rescales the fit.
    #[test]
    fn scale_equivariance() {
        let data = random_data(40, 4);
        let mut scaled = data.clone();
        let c = 3.5;
        for s in &mut scaled {
            s.y *= c;
        }
        let basis = MultiIndexBasis::new(1, 1);
        let theta = DiscreteKernelParams::new(1.0, 1.0).unwrap();
        let base = fit_local_ls_loo(
            &data, Cell::D1T1, &basis, KernelFamily::Epanechnikov, 0.8, theta,
        )
        .unwrap();
        let big = fit_local_ls_loo(
            &scaled, Cell::D1T1, &basis, KernelFamily::Epanechnikov, 0.8, theta,
        )
        .unwrap();
        for (a, b) in base.means.iter().zip(&big.means) {
            if a.is_finite() {
                assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1.0), "{b} vs {}", c * a);
            }
        }
    }

    #[test]
    fn degenerate_windows_are_ridged_and_flagged() {
        // Two identical in-cell points: a local-linear design is collinear.
        let data = vec![
            obs(1.0, 1, 1, 0.5),
            obs(2.0, 1, 1, 0.5),
            obs(3.0, 0, 0, 0.6),
        ];
        let basis = MultiIndexBasis::new(1, 1);
        let fit = fit_local_ls_loo(
            &data,
            Cell::D1T1,
            &basis,
            KernelFamily::Epanechnikov,
            1.0,
            DiscreteKernelParams::new(1.0, 1.0).unwrap(),
        )
        .unwrap();
        // Point 0 sees exactly one in-cell neighbor (point 1): flagged.
        assert!(fit.ridged[0]);
        assert_eq!(fit.effective_counts[0], 1);
        assert!(fit.means[0].is_finite());
    }

    #[test]
    fn empty_cell_is_an_error_and_no_neighbor_is_nan() {
        let data = vec![obs(1.0, 1, 1, 0.0), obs(2.0, 0, 0, 0.1)];
        let basis = MultiIndexBasis::new(0, 1);
        assert!(fit_local_ls_loo(
            &data,
            Cell::D1T0,
            &basis,
            KernelFamily::Epanechnikov,
            1.0,
            DiscreteKernelParams::new(1.0, 1.0).unwrap(),
        )
        .is_err());

        // Cell (1,1) has a single member: its own leave-one-out window is
        // empty, so the prediction there is NaN.
        let fit = fit_local_ls_loo(
            &data,
            Cell::D1T1,
            &basis,
            KernelFamily::Epanechnikov,
            1.0,
            DiscreteKernelParams::new(1.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(fit.means[0].is_nan());
        assert!(fit.means[1].is_finite());
    }
}
