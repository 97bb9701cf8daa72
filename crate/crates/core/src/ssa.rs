//! Exact stochastic simulation (direct method) of one cell lineage: gene
//! phase switching, protein birth and death, and division.
//!
//! Randomness comes from ChaCha8 streams. Trajectory `i` of an ensemble
//! seeded with `s` draws from `ChaCha8Rng::seed_from_u64(s)` moved to
//! stream `i`, so serial and parallel runs produce identical samples.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cme::StateSpace;
use crate::error::{FgbaError, Result};
use crate::grid::FluorescenceGrid;
use crate::phase::{phase_generator, Phase, RateSet, N_PHASES};
use crate::solver::ProbabilityVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicationMode {
    /// Divisions at exponential times with the rate set's replication rate;
    /// the daughter keeps floor(n/2) proteins.
    ContinuousHalving,
    /// Divisions at t = 1, 2, 3, … generations, floor(n/2).
    DiscreteHalving,
    /// Divisions at t = 1, 2, 3, …, the daughter keeps Binomial(n, 1/2).
    DiscreteBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub phase: Phase,
    pub protein: u64,
    pub t: f64,
}

/// Everything a trajectory needs besides its start and its random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaModel {
    k: DMatrix<f64>,
    beta_by_phase: [f64; N_PHASES],
    gamma: f64,
    replication_rate: f64,
    mode: ReplicationMode,
    /// Births are suppressed at this count, mirroring a truncated CME.
    max_protein: Option<u64>,
}

impl SsaModel {
    /// `beta_by_phase` are protein birth rates per generation.
    pub fn new(rates: &RateSet, beta_by_phase: [f64; N_PHASES], mode: ReplicationMode) -> Result<Self> {
        rates.validate()?;
        if beta_by_phase.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(FgbaError::domain("birth rates must be finite and >= 0"));
        }
        Ok(SsaModel {
            k: phase_generator(rates),
            beta_by_phase,
            gamma: rates.gamma,
            replication_rate: rates.replication_rate,
            mode,
            max_protein: None,
        })
    }

    pub fn with_max_protein(mut self, cap: u64) -> Self {
        self.max_protein = Some(cap);
        self
    }

    pub fn mode(&self) -> ReplicationMode {
        self.mode
    }

    fn divide<R: Rng + ?Sized>(&self, state: &mut CellState, binomial: bool, rng: &mut R) {
        state.phase = match state.phase {
            Phase::MF => Phase::MH,
            Phase::MH => {
                if rng.random::<f64>() < 0.5 {
                    Phase::MH
                } else {
                    Phase::UN
                }
            }
            other => other,
        };
        state.protein = if binomial && state.protein > 0 {
            Binomial::new(state.protein, 0.5).expect("p = 1/2 is valid").sample(rng)
        } else {
            state.protein / 2
        };
    }
}

/// Per-trajectory random stream.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one lineage from `initial` until `t_end` and returns every
/// visited state, starting with `initial` and ending with the state at
/// `t_end`.
pub fn simulate_trajectory<R: Rng + ?Sized>(model: &SsaModel, initial: CellState, t_end: f64, rng: &mut R) -> Vec<CellState> {
    let mut path = vec![initial];
    let last = run(model, initial, t_end, rng, |s| path.push(*s));
    if path.last().map(|s| s.t) != Some(t_end) {
        path.push(last);
    }
    path
}

/// State at `t_end` only; avoids storing the path.
pub fn simulate_final_state<R: Rng + ?Sized>(model: &SsaModel, initial: CellState, t_end: f64, rng: &mut R) -> CellState {
    run(model, initial, t_end, rng, |_| {})
}

fn run<R, F>(model: &SsaModel, initial: CellState, t_end: f64, rng: &mut R, mut record: F) -> CellState
where
    R: Rng + ?Sized,
    F: FnMut(&CellState),
{
    let mut s = initial;
    let discrete = !matches!(model.mode, ReplicationMode::ContinuousHalving);
    let binomial = matches!(model.mode, ReplicationMode::DiscreteBinomial);
    let mut next_division = if discrete { s.t.floor() + 1.0 } else { f64::INFINITY };

    loop {
        let p = s.phase.index();
        let switch_total: f64 = (0..N_PHASES).filter(|&q| q != p).map(|q| model.k[(q, p)]).sum();
        let birth = match model.max_protein {
            Some(cap) if s.protein >= cap => 0.0,
            _ => model.beta_by_phase[p],
        };
        let death = model.gamma * s.protein as f64;
        let division = if discrete { 0.0 } else { model.replication_rate };
        let total = switch_total + birth + death + division;

        let horizon = next_division.min(t_end);
        let tau = if total > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / total
        } else {
            f64::INFINITY
        };

        if s.t + tau >= horizon {
            // no stochastic event before the next scheduled division or the end
            if next_division <= t_end {
                s.t = next_division;
                model.divide(&mut s, binomial, rng);
                record(&s);
                next_division += 1.0;
                continue;
            }
            s.t = t_end;
            return s;
        }

        s.t += tau;
        let mut u = rng.random::<f64>() * total;
        let mut fired = false;
        for q in (0..N_PHASES).filter(|&q| q != p) {
            let r = model.k[(q, p)];
            if u < r {
                s.phase = Phase::from_index(q).expect("phase index in range");
                fired = true;
                break;
            }
            u -= r;
        }
        if !fired {
            if u < birth {
                s.protein += 1;
            } else if u < birth + death {
                s.protein -= 1;
            } else if division > 0.0 {
                model.divide(&mut s, false, rng);
            } else if s.protein > 0 && death > 0.0 {
                // rounding put u past the last bucket
                s.protein -= 1;
            }
        }
        record(&s);
    }
}

/// Empirical distribution of end states over (fluorescence bin, phase),
/// with fluorescence `mu · protein`. Trajectories run in parallel on
/// independent streams; the result depends only on the seed.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_histogram(
    n_traj: usize,
    model: &SsaModel,
    initial: CellState,
    t_end: f64,
    grid: &FluorescenceGrid,
    mu: f64,
    seed: u64,
) -> Result<ProbabilityVector> {
    if n_traj == 0 {
        return Err(FgbaError::domain("need at least one trajectory"));
    }
    if !(mu > 0.0) {
        return Err(FgbaError::domain("mu must be > 0"));
    }
    let space = StateSpace::fluorescence(grid.clone(), N_PHASES);
    let dim = space.dim();
    let counts = (0..n_traj as u64)
        .into_par_iter()
        .fold(
            || vec![0u64; dim],
            |mut acc, i| {
                let mut rng = trajectory_rng(seed, i);
                let end = simulate_final_state(model, initial, t_end, &mut rng);
                let bin = grid.bin_of(mu * end.protein as f64);
                acc[space.index(bin, end.phase.index())] += 1;
                acc
            },
        )
        .reduce(
            || vec![0u64; dim],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let values = counts.iter().map(|&c| c as f64 / n_traj as f64).collect();
    ProbabilityVector::new(values, space)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_rates() -> RateSet {
        RateSet {
            k_m: 0.0,
            k_h: 0.0,
            k_o: 0.0,
            k_neg_o: 0.0,
            k_r: 0.0,
            k_neg_r: 0.0,
            gamma: 0.0,
            beta_f_on: 0.0,
            beta_f_partial: 0.0,
            beta_f_off: 0.0,
            replication_rate: 0.0,
        }
    }

    fn start(phase: Phase, protein: u64) -> CellState {
        CellState { phase, protein, t: 0.0 }
    }

    #[test]
    fn no_events_without_rates() {
        let model = SsaModel::new(&quiet_rates(), [0.0; 5], ReplicationMode::ContinuousHalving).unwrap();
        let path = simulate_trajectory(&model, start(Phase::UN, 7), 3.0, &mut trajectory_rng(1, 0));
        assert_eq!(path.len(), 2);
        assert_eq!(path[1], CellState { t: 3.0, ..path[0] });
    }

    #[test]
    fn pure_death_never_increases() {
        let rates = RateSet {
            gamma: 0.5,
            ..quiet_rates()
        };
        let model = SsaModel::new(&rates, [0.0; 5], ReplicationMode::ContinuousHalving).unwrap();
        let path = simulate_trajectory(&model, start(Phase::O, 40), 10.0, &mut trajectory_rng(3, 0));
        assert!(path.windows(2).all(|w| w[1].protein <= w[0].protein));
        assert!(path.windows(2).all(|w| w[1].t >= w[0].t));
    }

    #[test]
    fn same_seed_same_path() {
        let model = SsaModel::new(&RateSet::default(), RateSet::default().beta_by_phase(), ReplicationMode::DiscreteBinomial).unwrap();
        let a = simulate_trajectory(&model, start(Phase::O, 0), 5.0, &mut trajectory_rng(42, 7));
        let b = simulate_trajectory(&model, start(Phase::O, 0), 5.0, &mut trajectory_rng(42, 7));
        assert_eq!(a, b);
        let c = simulate_trajectory(&model, start(Phase::O, 0), 5.0, &mut trajectory_rng(42, 8));
        assert_ne!(a, c);
    }

    #[test]
    fn discrete_divisions_land_on_whole_generations() {
        let model = SsaModel::new(&quiet_rates(), [0.0; 5], ReplicationMode::DiscreteHalving).unwrap();
        let path = simulate_trajectory(&model, start(Phase::MF, 100), 3.5, &mut trajectory_rng(0, 0));
        let times: Vec<f64> = path.iter().map(|s| s.t).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0, 3.0, 3.5]);
        assert_eq!(path.last().unwrap().protein, 12);
        assert_eq!(path[1].phase, Phase::MH);
    }

    #[test]
    fn birth_death_mean_near_poisson() {
        let rates = RateSet {
            gamma: 0.1,
            replication_rate: 0.0,
            ..quiet_rates()
        };
        let model = SsaModel::new(&rates, [5.0; 5], ReplicationMode::ContinuousHalving).unwrap();
        let n = 20_000u64;
        let sum: u64 = (0..n)
            .into_par_iter()
            .map(|i| simulate_final_state(&model, start(Phase::MF, 0), 200.0, &mut trajectory_rng(11, i)).protein)
            .sum();
        let mean = sum as f64 / n as f64;
        // Poisson(50): sd of the sample mean is sqrt(50 / n)
        assert!((mean - 50.0).abs() < 3.0 * (50.0 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn single_trajectory_histogram_is_point_mass() {
        let grid = crate::grid::default_experiment_grid(4.0, 10).unwrap();
        let model = SsaModel::new(&RateSet::default(), RateSet::default().beta_by_phase(), ReplicationMode::ContinuousHalving).unwrap();
        let h = ensemble_histogram(1, &model, start(Phase::O, 0), 2.0, &grid, 1.0, 5).unwrap();
        assert_eq!(h.values.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(h.total(), 1.0);
        assert!(ensemble_histogram(0, &model, start(Phase::O, 0), 2.0, &grid, 1.0, 5).is_err());
    }

    #[test]
    fn binomial_split_spreads_where_halving_does_not() {
        let grid = FluorescenceGrid::uniform(200, 1.0).unwrap();
        let halving = SsaModel::new(&quiet_rates(), [0.0; 5], ReplicationMode::DiscreteHalving).unwrap();
        let binom = SsaModel::new(&quiet_rates(), [0.0; 5], ReplicationMode::DiscreteBinomial).unwrap();
        let var = |h: &ProbabilityVector| {
            let m = h.level_marginal();
            let mean: f64 = m.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
            m.iter().enumerate().map(|(i, p)| p * (i as f64 - mean).powi(2)).sum::<f64>()
        };
        let h_half = ensemble_histogram(2000, &halving, start(Phase::O, 1000), 3.0, &grid, 1.0, 9).unwrap();
        let h_bin = ensemble_histogram(2000, &binom, start(Phase::O, 1000), 3.0, &grid, 1.0, 9).unwrap();
        assert_eq!(var(&h_half), 0.0);
        assert!(var(&h_bin) > 1.0);
    }

    #[test]
    fn cap_suppresses_births() {
        let model = SsaModel::new(&quiet_rates(), [50.0; 5], ReplicationMode::ContinuousHalving)
            .unwrap()
            .with_max_protein(3);
        let end = simulate_final_state(&model, start(Phase::MF, 0), 10.0, &mut trajectory_rng(0, 0));
        assert_eq!(end.protein, 3);
    }
}
