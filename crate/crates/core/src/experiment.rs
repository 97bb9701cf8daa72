//! The six-mutant experiment on the fluorescence grid and the commands
//! built on it.

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::AggregationPlan;
use crate::cme::{
    build_binomial_fluorescence_map, build_fgba_generator, build_full_generator, build_replication_map_with,
    truncation_outflow, BinRepresentative, Partition, StateSpace,
};
use crate::config::{ExperimentConfig, ReplicationScheme};
use crate::error::{FgbaError, Result};
use crate::error_bound::{error_trace, ErrorTraceRow};
use crate::grid::FluorescenceGrid;
use crate::phase::{phase_generator, phase_steady_state, replication_phase_map, RateSet, N_PHASES};
use crate::solver::{expected_fluorescence, solve, solve_raw, variance_fluorescence, ProbabilityVector, SolveOptions};
use crate::sparse::{SparseGenerator, SparseMatrix};
use crate::ssa::{ensemble_histogram, CellState, SsaModel};

use nalgebra::DMatrix;

/// Everything needed to evolve one mutant on the grid.
#[derive(Debug, Clone)]
pub struct MutantModel {
    pub ratio_r: f64,
    pub rates: RateSet,
    pub space: StateSpace,
    /// A_f: phase switching, production and decay.
    pub a_f: SparseGenerator,
    /// D⁺_f: the division map applied to a distribution.
    pub division: SparseMatrix,
    pub scheme: ReplicationScheme,
}

impl MutantModel {
    pub fn build(
        base: &RateSet,
        ratio_r: f64,
        grid: &FluorescenceGrid,
        scheme: ReplicationScheme,
        mu: f64,
        representative: BinRepresentative,
    ) -> Result<Self> {
        let mut model = MutantModel::from_rates(base.with_ratio_r(ratio_r)?, grid, scheme, mu, representative)?;
        model.ratio_r = ratio_r;
        Ok(model)
    }

    /// Model for an already resolved rate set.
    pub fn from_rates(
        rates: RateSet,
        grid: &FluorescenceGrid,
        scheme: ReplicationScheme,
        mu: f64,
        representative: BinRepresentative,
    ) -> Result<Self> {
        rates.validate()?;
        let ratio_r = rates.k_r / rates.k_neg_r;
        let space = StateSpace::fluorescence(grid.clone(), N_PHASES);
        let a_f = build_fgba_generator(&phase_generator(&rates), &rates.beta_by_phase(), grid, rates.gamma)?;
        let division = match scheme {
            ReplicationScheme::DiscreteBinomial => build_binomial_fluorescence_map(grid, N_PHASES, mu, representative)?,
            _ => build_replication_map_with(&space, Partition::Halving, representative)?,
        };
        Ok(MutantModel {
            ratio_r,
            rates,
            space,
            a_f,
            division,
            scheme,
        })
    }

    pub fn from_config(cfg: &ExperimentConfig, ratio_r: f64, scheme: ReplicationScheme) -> Result<Self> {
        MutantModel::build(
            &cfg.rate_set()?,
            ratio_r,
            &cfg.grid()?,
            scheme,
            cfg.experiment.mu,
            cfg.experiment.bin_representative,
        )
    }

    /// A_f + rate·(D⁺_f − I), the generator of the continuous scheme.
    pub fn continuous_generator(&self) -> Result<SparseGenerator> {
        let rate = self.rates.replication_rate;
        let d_f = self.division.add(&SparseMatrix::identity(self.space.dim()).scaled(-1.0))?;
        self.a_f.add(&d_f.scaled(rate))
    }

    /// Distributions at each checkpoint of `opts`.
    ///
    /// The discrete schemes integrate A_f between divisions, which fall
    /// every 1/replication_rate generations, and apply D⁺_f at each.
    pub fn evolve(&self, p0: &ProbabilityVector, opts: &SolveOptions) -> Result<Vec<(f64, ProbabilityVector)>> {
        if self.scheme == ReplicationScheme::Continuous {
            return solve(&self.continuous_generator()?, p0, opts);
        }
        opts.validate()?;
        let period = 1.0 / self.rates.replication_rate;
        if !period.is_finite() {
            // No divisions at all.
            return solve(&self.a_f, p0, opts);
        }
        let mut checkpoints = if opts.checkpoint_times.is_empty() {
            vec![opts.t_end]
        } else {
            opts.checkpoint_times.clone()
        };
        checkpoints.sort_by(f64::total_cmp);

        let segment = |p: &[f64], tau: f64| -> Result<Vec<f64>> {
            if tau <= 0.0 {
                return Ok(p.to_vec());
            }
            let seg_opts = SolveOptions {
                t_end: tau,
                checkpoint_times: vec![tau],
                ..opts.clone()
            };
            Ok(solve_raw(&self.a_f, p, &seg_opts)?.pop().expect("one checkpoint").1)
        };

        let mut out = Vec::with_capacity(checkpoints.len());
        let mut t = 0.0;
        let mut p = p0.values.clone();
        let mut divisions = 0u64;
        for &tc in &checkpoints {
            loop {
                let next_division = (divisions + 1) as f64 * period;
                if next_division > tc {
                    break;
                }
                p = segment(&p, next_division - t)?;
                p = self.division.mul_vec(&p)?;
                divisions += 1;
                t = next_division;
            }
            let snapshot = segment(&p, tc - t)?;
            out.push((tc, ProbabilityVector::new(snapshot, self.space.clone())?));
        }
        Ok(out)
    }
}

/// Initial distribution: all mass in one (bin, phase).
pub fn initial_distribution(cfg: &ExperimentConfig) -> Result<ProbabilityVector> {
    let space = StateSpace::fluorescence(cfg.grid()?, N_PHASES);
    ProbabilityVector::point_mass(space, cfg.initial.bin, cfg.initial.phase.index())
}

/// Probability in bins that lie entirely at or above `x`.
pub fn mass_above(p: &ProbabilityVector, x: f64) -> Result<f64> {
    let grid = require_grid(p)?;
    let marg = p.level_marginal();
    Ok((0..grid.len())
        .filter(|&i| grid.lower_edge(i) >= x * (1.0 - 1e-12))
        .map(|i| marg[i])
        .sum())
}

/// Probability in bins that lie entirely below `x`.
pub fn mass_below(p: &ProbabilityVector, x: f64) -> Result<f64> {
    let grid = require_grid(p)?;
    let marg = p.level_marginal();
    Ok((0..grid.len())
        .filter(|&i| grid.upper_edge(i) <= x * (1.0 + 1e-12))
        .map(|i| marg[i])
        .sum())
}

fn require_grid(p: &ProbabilityVector) -> Result<&FluorescenceGrid> {
    p.space
        .grid()
        .ok_or_else(|| FgbaError::Unsupported("needs a fluorescence-bin distribution".into()))
}

/// One solved mutant and its summary numbers.
#[derive(Debug, Clone, Serialize)]
pub struct MutantSummary {
    pub ratio_r: f64,
    pub k_neg_r: f64,
    pub total: f64,
    pub mean_au: f64,
    pub variance_au2: f64,
    pub mass_above_10_2_5: f64,
    pub mass_below_10_1_5: f64,
    /// Production flux lost at the top bin at t_end.
    pub truncation_outflow: f64,
}

impl MutantSummary {
    pub fn of(model: &MutantModel, p: &ProbabilityVector) -> Result<Self> {
        Ok(MutantSummary {
            ratio_r: model.ratio_r,
            k_neg_r: model.rates.k_neg_r,
            total: p.total(),
            mean_au: expected_fluorescence(p)?,
            variance_au2: variance_fluorescence(p)?,
            mass_above_10_2_5: mass_above(p, 10f64.powf(2.5))?,
            mass_below_10_1_5: mass_below(p, 10f64.powf(1.5))?,
            truncation_outflow: truncation_outflow(&p.space, &model.rates.beta_by_phase(), &p.values)?,
        })
    }
}

/// Final distribution of every configured mutant, in configuration order.
/// Mutants are solved concurrently.
pub fn run_mutants(cfg: &ExperimentConfig) -> Result<Vec<(MutantSummary, ProbabilityVector)>> {
    let p0 = initial_distribution(cfg)?;
    let opts = cfg.solve_options();
    cfg.experiment
        .ratio_r
        .par_iter()
        .map(|&ratio| {
            let model = MutantModel::from_config(cfg, ratio, cfg.experiment.replication)?;
            let p = model.evolve(&p0, &opts)?.pop().expect("t_end is a checkpoint").1;
            Ok((MutantSummary::of(&model, &p)?, p))
        })
        .collect()
}

/// Variance and mean of the compare-ratio mutant under each scheme.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeResult {
    pub scheme: ReplicationScheme,
    pub mean_au: f64,
    pub variance_au2: f64,
    pub total: f64,
}

pub const ALL_SCHEMES: [ReplicationScheme; 3] = [
    ReplicationScheme::Continuous,
    ReplicationScheme::DiscreteHalving,
    ReplicationScheme::DiscreteBinomial,
];

pub fn run_replication_compare(cfg: &ExperimentConfig) -> Result<Vec<(SchemeResult, ProbabilityVector)>> {
    let p0 = initial_distribution(cfg)?;
    let opts = SolveOptions {
        checkpoint_times: vec![cfg.t_end_generations()],
        ..cfg.solve_options()
    };
    ALL_SCHEMES
        .par_iter()
        .map(|&scheme| {
            let model = MutantModel::from_config(cfg, cfg.experiment.compare_ratio, scheme)?;
            let p = model.evolve(&p0, &opts)?.pop().expect("t_end is a checkpoint").1;
            let res = SchemeResult {
                scheme,
                mean_au: expected_fluorescence(&p)?,
                variance_au2: variance_fluorescence(&p)?,
                total: p.total(),
            };
            Ok((res, p))
        })
        .collect()
}

/// SSA end-state histograms, one per mutant, on the configured grid. Every
/// mutant uses the same seed.
pub fn run_ssa(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(f64, ProbabilityVector)>> {
    let base = cfg.rate_set()?;
    let grid = cfg.grid()?;
    let mu = cfg.experiment.mu;
    let initial = CellState {
        phase: cfg.initial.phase,
        protein: (grid.lower_edge(cfg.initial.bin) / mu).round() as u64,
        t: 0.0,
    };
    let t_end = cfg.t_end_generations();
    cfg.experiment
        .ratio_r
        .iter()
        .map(|&ratio| {
            let rates = base.with_ratio_r(ratio)?;
            // Fluorescence rates become protein rates through mu.
            let beta = rates.beta_by_phase().map(|b| b / mu);
            let model = SsaModel::new(&rates, beta, cfg.experiment.replication.ssa_mode())?;
            let h = ensemble_histogram(cfg.ssa.trajectories, &model, initial, t_end, &grid, mu, seed)?;
            Ok((ratio, h))
        })
        .collect()
}

/// Full single-phase chain, its grid chain and the plan linking them.
#[derive(Debug, Clone)]
pub struct SinglePhaseInstance {
    pub full: SparseGenerator,
    pub fgba: SparseGenerator,
    pub grid: FluorescenceGrid,
    pub plan: AggregationPlan,
    pub mu: f64,
    pub gamma: f64,
}

impl SinglePhaseInstance {
    /// Birth-death chain with `levels` count states in uniform groups; the
    /// grid bins are `mu·group_size` wide so that μ·m_i = Δ_i.
    pub fn new(beta: f64, gamma: f64, levels: usize, group_size: usize, mu: f64) -> Result<Self> {
        if group_size == 0 || levels == 0 || levels % group_size != 0 {
            return Err(FgbaError::domain("levels must be a positive multiple of group_size"));
        }
        let k = DMatrix::zeros(1, 1);
        let full = build_full_generator(&k, &[beta], gamma, levels - 1)?;
        let n_groups = levels / group_size;
        let grid = FluorescenceGrid::uniform(n_groups, mu * group_size as f64)?;
        let fgba = build_fgba_generator(&k, &[beta * mu], &grid, gamma)?;
        let plan = AggregationPlan::uniform(n_groups, group_size, 1)?;
        Ok(SinglePhaseInstance {
            full,
            fgba,
            grid,
            plan,
            mu,
            gamma,
        })
    }

    pub fn trace(&self, checkpoints: &[f64], tol: f64) -> Result<Vec<ErrorTraceRow>> {
        let mut p0 = vec![0.0; self.full.dim()];
        p0[0] = 1.0;
        error_trace(
            &self.full,
            &self.fgba,
            &self.grid,
            &self.plan,
            self.mu,
            self.gamma,
            &p0,
            checkpoints,
            tol,
        )
    }
}

pub fn run_error_bound(cfg: &ExperimentConfig) -> Result<Vec<ErrorTraceRow>> {
    let eb = &cfg.error_bound;
    SinglePhaseInstance::new(eb.beta, eb.gamma, eb.levels, eb.group_size, eb.mu)?.trace(&eb.checkpoints, eb.tol)
}

/// Resolved rates of one mutant and its stationary phase distribution.
#[derive(Debug, Clone, Serialize)]
pub struct MutantRates {
    pub ratio_r: f64,
    pub rates: RateSet,
    pub phase_steady_state: Vec<f64>,
}

pub fn run_rates(cfg: &ExperimentConfig) -> Result<Vec<MutantRates>> {
    let base = cfg.rate_set()?;
    cfg.experiment
        .ratio_r
        .iter()
        .map(|&ratio| {
            let rates = base.with_ratio_r(ratio)?;
            let pi = phase_steady_state(
                &phase_generator(&rates),
                &replication_phase_map(N_PHASES),
                rates.replication_rate,
            )?;
            Ok(MutantRates {
                ratio_r: ratio,
                rates,
                phase_steady_state: pi,
            })
        })
        .collect()
}
