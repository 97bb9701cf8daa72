//! Error of the fluorescence-grid chain against the full protein-count chain.
//!
//! The error in the mean, `e(t) = μ E[P(t)] − E[P_f(t)]`, splits into an
//! aggregation part `e1 = E[P] − E[P_a]` (protein counts) and a grid part
//! `e2 = μ E[P_a] − E[P_f]` (a.u.), with `e = μ e1 + e2`. Expectations over
//! the count chain use weights 0, 1, 2, …; over the aggregated chain the
//! group starts 0, m_1, m_1 + m_2, …; over the grid chain the lower bin
//! edges.
//!
//! Only the e1 bound has a closed form. The e2 bound rests on a comparison
//! function between the two matrix exponentials that is never written down,
//! so e2 is measured, not bounded.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_generator, aggregate_vector, AggregationPlan};
use crate::error::{FgbaError, Result};
use crate::grid::FluorescenceGrid;
use crate::solver::{solve_raw, SolveOptions};
use crate::sparse::SparseGenerator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundInputs {
    /// Fluorescence per protein, a.u.
    pub mu: f64,
    /// Bound on |μ m_i − Δ_i|, a.u.
    pub epsilon: f64,
    /// Bound on Δ_i / Δ_{i-1}.
    pub r: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub gamma: f64,
}

impl ErrorBoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(FgbaError::domain("mu must be > 0"));
        }
        if !(self.epsilon >= 0.0) || !(self.r > 0.0) {
            return Err(FgbaError::domain("need epsilon >= 0 and r > 0"));
        }
        if !(self.delta_min > 0.0) || !(self.delta_min <= self.delta_max) {
            return Err(FgbaError::domain("need 0 < delta_min <= delta_max"));
        }
        if !(self.gamma >= 0.0) {
            return Err(FgbaError::domain("gamma must be >= 0"));
        }
        Ok(())
    }

    /// Smallest admissible r and ε for a grid and plan. A single-bin grid
    /// gets r = 1.
    pub fn from_grid(grid: &FluorescenceGrid, plan: &AggregationPlan, mu: f64, gamma: f64) -> Result<Self> {
        let r = if grid.len() >= 2 { grid_growth_ratio(grid)? } else { 1.0 };
        let inputs = ErrorBoundInputs {
            mu,
            epsilon: epsilon_from_plan(grid, plan, mu)?,
            r,
            delta_min: grid.min_width(),
            delta_max: grid.max_width(),
            gamma,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

/// max_i Δ_i / Δ_{i-1}.
pub fn grid_growth_ratio(grid: &FluorescenceGrid) -> Result<f64> {
    if grid.len() < 2 {
        return Err(FgbaError::domain("growth ratio needs at least two bins"));
    }
    Ok(grid
        .widths()
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(f64::NEG_INFINITY, f64::max))
}

/// max_i |μ m_i − Δ_i|.
pub fn epsilon_from_plan(grid: &FluorescenceGrid, plan: &AggregationPlan, mu: f64) -> Result<f64> {
    if grid.len() != plan.n_groups() {
        return Err(FgbaError::dims(grid.len(), plan.n_groups(), "grid bins vs plan groups"));
    }
    Ok(grid
        .widths()
        .iter()
        .zip(plan.group_sizes())
        .map(|(w, &m)| (mu * m as f64 - w).abs())
        .fold(0.0, f64::max))
}

/// r̂ = 1 − Δ_min / (r Δ_min + r ε + ε).
pub fn r_hat(r: f64, epsilon: f64, delta_min: f64) -> f64 {
    1.0 - delta_min / (r * delta_min + r * epsilon + epsilon)
}

/// Upper bound on e1(t), evaluated as
/// `(Δ_max + ε)/μ · e^{γt} + r̂ (1 − e^{−γt}) γ E[P_a(t)]`.
pub fn e1_bound<F>(t: f64, inputs: &ErrorBoundInputs, expected_pa: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let rh = r_hat(inputs.r, inputs.epsilon, inputs.delta_min);
    let g = inputs.gamma;
    (inputs.delta_max + inputs.epsilon) / inputs.mu * (g * t).exp() + rh * (1.0 - (-g * t).exp()) * g * expected_pa(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub t: f64,
    pub e1: f64,
    pub e2: f64,
    pub e: f64,
    /// E[P(t)], proteins.
    pub expected_full: f64,
    /// E[P_a(t)], proteins.
    pub expected_aggregated: f64,
    /// E[P_f(t)], a.u.
    pub expected_fgba: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTraceRow {
    pub point: ErrorPoint,
    pub e1_bound: f64,
}

fn level_mean(p: &[f64], block: usize, weights: &[f64]) -> f64 {
    p.chunks(block)
        .zip(weights)
        .map(|(c, w)| w * c.iter().sum::<f64>())
        .sum()
}

/// Solves the full, aggregated (E·A·F) and grid chains from `p0_full`
/// (the latter two from E·p0) and decomposes the mean error at each
/// checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn empirical_error(
    full: &SparseGenerator,
    fgba: &SparseGenerator,
    grid: &FluorescenceGrid,
    plan: &AggregationPlan,
    mu: f64,
    p0_full: &[f64],
    checkpoints: &[f64],
    tol: f64,
) -> Result<Vec<ErrorPoint>> {
    if !(mu > 0.0) {
        return Err(FgbaError::domain("mu must be > 0"));
    }
    if full.dim() != plan.source_dim() {
        return Err(FgbaError::dims(plan.source_dim(), full.dim(), "full chain vs plan"));
    }
    if fgba.dim() != plan.aggregated_dim() {
        return Err(FgbaError::dims(plan.aggregated_dim(), fgba.dim(), "grid chain vs plan"));
    }
    if grid.len() != plan.n_groups() {
        return Err(FgbaError::dims(plan.n_groups(), grid.len(), "grid bins vs plan groups"));
    }
    let aggregated = aggregate_generator(full, plan)?;
    let pa0 = aggregate_vector(p0_full, plan)?;
    let opts = SolveOptions {
        tol,
        t_end: checkpoints.iter().copied().fold(0.0, f64::max),
        checkpoint_times: checkpoints.to_vec(),
        ..SolveOptions::default()
    };

    let (full_run, (agg_run, fgba_run)) = rayon::join(
        || solve_raw(full, p0_full, &opts),
        || rayon::join(|| solve_raw(&aggregated, &pa0, &opts), || solve_raw(fgba, &pa0, &opts)),
    );
    let (full_run, agg_run, fgba_run) = (full_run?, agg_run?, fgba_run?);

    let block = plan.per_level_block();
    let count_weights: Vec<f64> = (0..plan.source_levels()).map(|n| n as f64).collect();
    let group_weights: Vec<f64> = plan.group_starts().iter().map(|&s| s as f64).collect();
    let edge_weights = &grid.edges()[..grid.len()];

    Ok(full_run
        .iter()
        .zip(&agg_run)
        .zip(&fgba_run)
        .map(|(((t, p), (_, pa)), (_, pf))| {
            let ep = level_mean(p, block, &count_weights);
            let epa = level_mean(pa, block, &group_weights);
            let epf = level_mean(pf, block, edge_weights);
            let e1 = ep - epa;
            let e2 = mu * epa - epf;
            ErrorPoint {
                t: *t,
                e1,
                e2,
                e: mu * e1 + e2,
                expected_full: ep,
                expected_aggregated: epa,
                expected_fgba: epf,
            }
        })
        .collect())
}

/// [`empirical_error`] with the e1 bound attached, using the smallest r and
/// ε the grid and plan admit.
#[allow(clippy::too_many_arguments)]
pub fn error_trace(
    full: &SparseGenerator,
    fgba: &SparseGenerator,
    grid: &FluorescenceGrid,
    plan: &AggregationPlan,
    mu: f64,
    gamma: f64,
    p0_full: &[f64],
    checkpoints: &[f64],
    tol: f64,
) -> Result<Vec<ErrorTraceRow>> {
    let inputs = ErrorBoundInputs::from_grid(grid, plan, mu, gamma)?;
    let points = empirical_error(full, fgba, grid, plan, mu, p0_full, checkpoints, tol)?;
    Ok(points
        .into_iter()
        .map(|point| ErrorTraceRow {
            e1_bound: e1_bound(point.t, &inputs, |_| point.expected_aggregated),
            point,
        })
        .collect())
}

/// CSV with columns `t,e1,e2,e,e1_bound`.
pub fn write_error_csv<W: Write>(rows: &[ErrorTraceRow], mut w: W) -> Result<()> {
    writeln!(w, "t,e1,e2,e,e1_bound")?;
    for r in rows {
        let p = &r.point;
        writeln!(
            w,
            "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
            p.t, p.e1, p.e2, p.e, r.e1_bound
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cme::{build_fgba_generator, build_full_generator};
    use crate::grid::default_experiment_grid;
    use nalgebra::DMatrix;

    #[test]
    fn growth_ratios() {
        let uniform = FluorescenceGrid::uniform(5, 2.0).unwrap();
        assert_eq!(grid_growth_ratio(&uniform).unwrap(), 1.0);
        let log = default_experiment_grid(4.0, 10).unwrap();
        assert!((grid_growth_ratio(&log).unwrap() - 10f64.powf(0.1)).abs() < 1e-9);
        let g = FluorescenceGrid::from_widths(vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(grid_growth_ratio(&g).unwrap(), 3.0);
        assert!(grid_growth_ratio(&FluorescenceGrid::uniform(1, 1.0).unwrap()).is_err());
    }

    #[test]
    fn epsilon_cases() {
        let g = FluorescenceGrid::from_widths(vec![3.0, 5.0]).unwrap();
        let p = AggregationPlan::new(vec![3, 5], 1).unwrap();
        assert_eq!(epsilon_from_plan(&g, &p, 1.0).unwrap(), 0.0);
        let g = FluorescenceGrid::from_widths(vec![9.0]).unwrap();
        let p = AggregationPlan::new(vec![4], 1).unwrap();
        assert_eq!(epsilon_from_plan(&g, &p, 2.0).unwrap(), 1.0);
        let g = FluorescenceGrid::from_widths(vec![10.0, 100.0]).unwrap();
        let p = AggregationPlan::new(vec![3, 33], 1).unwrap();
        assert!((epsilon_from_plan(&g, &p, 3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(epsilon_from_plan(&g, &AggregationPlan::new(vec![3], 1).unwrap(), 3.0).is_err());
    }

    #[test]
    fn r_hat_cases() {
        assert_eq!(r_hat(1.0, 0.0, 1.0), 0.0);
        assert_eq!(r_hat(2.0, 0.0, 1.0), 0.5);
        let r = 10f64.powf(0.1);
        let v = r_hat(r, 0.5, 1.0);
        assert!((v - (1.0 - 1.0 / (r + 0.5 * r + 0.5))).abs() < 1e-15);
        assert!((v - 0.5813).abs() < 1e-4, "{v}");
    }

    #[test]
    fn e1_bound_cases() {
        let inputs = ErrorBoundInputs {
            mu: 2.0,
            epsilon: 0.5,
            r: 1.5,
            delta_min: 1.0,
            delta_max: 8.0,
            gamma: 0.1,
        };
        assert_eq!(e1_bound(0.0, &inputs, |_| 1e9), 8.5 / 2.0);
        let exact = ErrorBoundInputs {
            epsilon: 0.0,
            r: 1.0,
            ..inputs
        };
        let t = 3.0;
        assert!((e1_bound(t, &exact, |_| 123.0) - 4.0 * (0.1 * t).exp()).abs() < 1e-12);
    }

    #[test]
    fn identity_plan_has_no_error() {
        let full = build_full_generator(&DMatrix::zeros(1, 1), &[5.0], 0.1, 99).unwrap();
        let grid = FluorescenceGrid::uniform(100, 1.0).unwrap();
        let fgba = build_fgba_generator(&DMatrix::zeros(1, 1), &[5.0], &grid, 0.1).unwrap();
        let plan = AggregationPlan::identity(100, 1).unwrap();
        let mut p0 = vec![0.0; 100];
        p0[0] = 1.0;
        let pts = empirical_error(&full, &fgba, &grid, &plan, 1.0, &p0, &[0.0, 1.0, 5.0], 1e-12).unwrap();
        for p in pts {
            assert!(p.e.abs() < 1e-9 && p.e1.abs() < 1e-9 && p.e2.abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn zero_time_from_empty_cell() {
        let full = build_full_generator(&DMatrix::zeros(1, 1), &[5.0], 0.1, 199).unwrap();
        let grid = FluorescenceGrid::uniform(20, 10.0).unwrap();
        let fgba = build_fgba_generator(&DMatrix::zeros(1, 1), &[5.0], &grid, 0.1).unwrap();
        let plan = AggregationPlan::uniform(20, 10, 1).unwrap();
        let mut p0 = vec![0.0; 200];
        p0[0] = 1.0;
        let pts = empirical_error(&full, &fgba, &grid, &plan, 1.0, &p0, &[0.0], 1e-12).unwrap();
        assert_eq!(pts[0].e1, 0.0);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_error_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,e1,e2,e,e1_bound\n");
    }
}
