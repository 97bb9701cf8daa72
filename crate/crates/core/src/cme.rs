//! Assembly of the sparse CME generators: the protein-count chain, the
//! replication matrices and the fluorescence-grid chain.
//!
//! States are laid out level-major: `index = n_phases * level + phase`, so
//! the first block holds every phase at protein count (or bin) zero.
//!
//! All builders are probability conserving. Production out of the top level
//! is dropped rather than leaked; [`truncation_outflow`] reports how much
//! probability flux that removes for a given distribution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FgbaError, Result};
use crate::grid::FluorescenceGrid;
use crate::phase::replication_phase_map;
use crate::sparse::{SparseGenerator, SparseMatrix};

/// What a level index means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    /// Level `n` holds exactly `n` proteins.
    ProteinCount,
    /// Level `i` is fluorescence bin `i` of the grid.
    FluorescenceBin(FluorescenceGrid),
    /// Level `g` is a group of consecutive protein counts (aggregated chain).
    Grouped(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub n_levels: usize,
    pub n_phases: usize,
    pub axis: Axis,
}

impl StateSpace {
    pub fn protein_count(n_levels: usize, n_phases: usize) -> Self {
        StateSpace {
            n_levels,
            n_phases,
            axis: Axis::ProteinCount,
        }
    }

    pub fn fluorescence(grid: FluorescenceGrid, n_phases: usize) -> Self {
        StateSpace {
            n_levels: grid.len(),
            n_phases,
            axis: Axis::FluorescenceBin(grid),
        }
    }

    pub fn grouped(group_sizes: Vec<usize>, n_phases: usize) -> Self {
        StateSpace {
            n_levels: group_sizes.len(),
            n_phases,
            axis: Axis::Grouped(group_sizes),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_levels * self.n_phases
    }

    pub fn index(&self, level: usize, phase: usize) -> usize {
        self.n_phases * level + phase
    }

    pub fn level_of(&self, idx: usize) -> usize {
        idx / self.n_phases
    }

    pub fn phase_of(&self, idx: usize) -> usize {
        idx % self.n_phases
    }

    pub fn grid(&self) -> Option<&FluorescenceGrid> {
        match &self.axis {
            Axis::FluorescenceBin(g) => Some(g),
            _ => None,
        }
    }

    /// Value attached to each level when taking expectations: the count,
    /// the lower bin edge, or the first count of the group.
    pub fn level_values(&self) -> Vec<f64> {
        match &self.axis {
            Axis::ProteinCount => (0..self.n_levels).map(|n| n as f64).collect(),
            Axis::FluorescenceBin(g) => g.edges()[..g.len()].to_vec(),
            Axis::Grouped(sizes) => sizes
                .iter()
                .scan(0usize, |acc, m| {
                    let start = *acc;
                    *acc += m;
                    Some(start as f64)
                })
                .collect(),
        }
    }
}

/// How the protein content is split at division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    /// The daughter keeps half (rounded down, or the bin holding half).
    Halving,
    /// The daughter keeps Binomial(n, 1/2) proteins.
    Binomial,
}

/// Value of a bin that gets halved at division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinRepresentative {
    #[default]
    LowerEdge,
    Midpoint,
}

impl BinRepresentative {
    pub fn value(self, grid: &FluorescenceGrid, bin: usize) -> f64 {
        match self {
            BinRepresentative::LowerEdge => grid.lower_edge(bin),
            BinRepresentative::Midpoint => grid.midpoint(bin),
        }
    }
}

fn validate_phase_block(k: &DMatrix<f64>, per_phase: &[f64], what: &str) -> Result<()> {
    let p = k.nrows();
    if p == 0 || k.ncols() != p {
        return Err(FgbaError::domain("phase generator must be square and nonempty"));
    }
    if per_phase.len() != p {
        return Err(FgbaError::dims(p, per_phase.len(), "per-phase rates"));
    }
    for j in 0..p {
        let s = k.column(j).sum();
        if s.abs() > 1e-9 {
            return Err(FgbaError::NotAGenerator { column: j, sum: s });
        }
        for i in 0..p {
            if i != j && k[(i, j)] < 0.0 {
                return Err(FgbaError::domain(format!("negative phase rate K[{i}][{j}]")));
            }
        }
    }
    if let Some(b) = per_phase.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
        return Err(FgbaError::domain(format!("{what} {b} must be finite and >= 0")));
    }
    Ok(())
}

/// Level-structured birth-death chain modulated by K. `production(l)` scales
/// the per-phase rates out of level `l` to `l + 1`; `degradation(l)` is the
/// rate from `l` to `l - 1`. Diagonals are minus the column's outflow.
fn level_chain<P, D>(k: &DMatrix<f64>, beta: &[f64], n_levels: usize, production: P, degradation: D) -> Result<SparseGenerator>
where
    P: Fn(usize) -> f64,
    D: Fn(usize) -> f64,
{
    let p = k.nrows();
    let dim = p * n_levels;
    let mut trip = Vec::with_capacity(dim * (p + 3));
    for level in 0..n_levels {
        let up = if level + 1 < n_levels { production(level) } else { 0.0 };
        let down = if level > 0 { degradation(level) } else { 0.0 };
        if up < 0.0 || down < 0.0 || !up.is_finite() || !down.is_finite() {
            return Err(FgbaError::domain(format!("invalid level rate at level {level}")));
        }
        for ph in 0..p {
            let col = p * level + ph;
            let mut out = 0.0;
            for q in (0..p).filter(|&q| q != ph) {
                let r = k[(q, ph)];
                if r != 0.0 {
                    trip.push((p * level + q, col, r));
                    out += r;
                }
            }
            let birth = beta[ph] * up;
            if birth != 0.0 {
                trip.push((col + p, col, birth));
                out += birth;
            }
            if down != 0.0 {
                trip.push((col - p, col, down));
                out += down;
            }
            trip.push((col, col, -out));
        }
    }
    SparseMatrix::from_triplets(dim, trip)
}

/// Protein-count CME over counts `0..=n_max`: K within each level, birth at
/// `beta_by_phase[p]`, death at `n·gamma`.
pub fn build_full_generator(k: &DMatrix<f64>, beta_by_phase: &[f64], gamma: f64, n_max: usize) -> Result<SparseGenerator> {
    validate_phase_block(k, beta_by_phase, "production rate")?;
    if n_max < 1 {
        return Err(FgbaError::domain("n_max must be >= 1"));
    }
    if !(gamma >= 0.0) {
        return Err(FgbaError::domain("gamma must be >= 0"));
    }
    level_chain(k, beta_by_phase, n_max + 1, |_| 1.0, |n| n as f64 * gamma)
}

/// Fluorescence-grid CME: birth out of bin `i` at `b_f / Δ_i`, decay from bin
/// `i` to `i - 1` at `γ (Δ_1 + … + Δ_{i-1}) / Δ_i` in one-based bin
/// numbering, i.e. `γ · lower_edge(i) / width(i)`.
pub fn build_fgba_generator(k: &DMatrix<f64>, b_f: &[f64], grid: &FluorescenceGrid, gamma: f64) -> Result<SparseGenerator> {
    validate_phase_block(k, b_f, "fluorescence production rate")?;
    if grid.is_empty() {
        return Err(FgbaError::domain("empty fluorescence grid"));
    }
    if grid.widths().iter().any(|w| !(*w > 0.0)) {
        return Err(FgbaError::domain("bin widths must be > 0"));
    }
    if !(gamma >= 0.0) {
        return Err(FgbaError::domain("gamma must be >= 0"));
    }
    let w = grid.widths();
    let e = grid.edges();
    level_chain(k, b_f, grid.len(), |i| 1.0 / w[i], |i| gamma * e[i] / w[i])
}

/// Division map D⁺ (column stochastic).
pub fn build_replication_map(space: &StateSpace, partition: Partition) -> Result<SparseMatrix> {
    build_replication_map_with(space, partition, BinRepresentative::default())
}

pub fn build_replication_map_with(
    space: &StateSpace,
    partition: Partition,
    representative: BinRepresentative,
) -> Result<SparseMatrix> {
    let level_targets: Vec<Vec<(usize, f64)>> = match (&space.axis, partition) {
        (Axis::ProteinCount, Partition::Halving) => (0..space.n_levels).map(|n| vec![(n / 2, 1.0)]).collect(),
        (Axis::ProteinCount, Partition::Binomial) => (0..space.n_levels)
            .map(|n| binomial_half_pmf(n as u64).into_iter().enumerate().collect())
            .collect(),
        (Axis::FluorescenceBin(grid), Partition::Halving) => (0..space.n_levels)
            .map(|j| vec![(grid.bin_of(0.5 * representative.value(grid, j)), 1.0)])
            .collect(),
        (Axis::FluorescenceBin(_), Partition::Binomial) => {
            return Err(FgbaError::Unsupported(
                "binomial partition needs protein counts; use build_binomial_fluorescence_map".into(),
            ))
        }
        (Axis::Grouped(_), _) => {
            return Err(FgbaError::Unsupported("replication on an aggregated axis".into()));
        }
    };
    map_with_phase_block(space, &level_targets)
}

/// Binomial division on a fluorescence grid. Bin `j` is taken to hold
/// `round(rep_j / mu)` proteins; each daughter count `k` is placed in the
/// bin containing `mu·k`.
pub fn build_binomial_fluorescence_map(
    grid: &FluorescenceGrid,
    n_phases: usize,
    mu: f64,
    representative: BinRepresentative,
) -> Result<SparseMatrix> {
    if !(mu > 0.0) {
        return Err(FgbaError::domain("mu must be > 0"));
    }
    let space = StateSpace::fluorescence(grid.clone(), n_phases);
    let level_targets: Vec<Vec<(usize, f64)>> = (0..grid.len())
        .map(|j| {
            let n = (representative.value(grid, j) / mu).round() as u64;
            let mut by_bin: Vec<(usize, f64)> = Vec::new();
            for (kk, w) in binomial_half_pmf(n).into_iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let bin = grid.bin_of(mu * kk as f64);
                match by_bin.last_mut() {
                    Some((b, acc)) if *b == bin => *acc += w,
                    _ => by_bin.push((bin, w)),
                }
            }
            by_bin
        })
        .collect();
    map_with_phase_block(&space, &level_targets)
}

fn map_with_phase_block(space: &StateSpace, level_targets: &[Vec<(usize, f64)>]) -> Result<SparseMatrix> {
    let p = space.n_phases;
    let block = replication_phase_map(p);
    let mut trip = Vec::new();
    for (src, targets) in level_targets.iter().enumerate() {
        for ph in 0..p {
            for &(dst, w) in targets {
                for q in 0..p {
                    let b = block[(q, ph)];
                    if b != 0.0 {
                        trip.push((space.index(dst, q), space.index(src, ph), w * b));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(space.dim(), trip)
}

/// Replication generator D = D⁺ - I.
pub fn build_replication_matrix(space: &StateSpace, partition: Partition) -> Result<SparseGenerator> {
    build_replication_matrix_with(space, partition, BinRepresentative::default())
}

pub fn build_replication_matrix_with(
    space: &StateSpace,
    partition: Partition,
    representative: BinRepresentative,
) -> Result<SparseGenerator> {
    let plus = build_replication_map_with(space, partition, representative)?;
    plus.add(&SparseMatrix::identity(space.dim()).scaled(-1.0))
}

/// A_f + D_f.
pub fn assemble_final_generator(a_f: &SparseGenerator, d_f: &SparseGenerator) -> Result<SparseGenerator> {
    a_f.add(d_f)
}

/// Probability flux per generation that the top-level truncation discards
/// for distribution `p`: the sum over phases of the top level's production
/// rate times its probability.
pub fn truncation_outflow(space: &StateSpace, beta_by_phase: &[f64], p: &[f64]) -> Result<f64> {
    if p.len() != space.dim() {
        return Err(FgbaError::dims(space.dim(), p.len(), "probability vector"));
    }
    if beta_by_phase.len() != space.n_phases {
        return Err(FgbaError::dims(space.n_phases, beta_by_phase.len(), "per-phase rates"));
    }
    let top = space.n_levels - 1;
    let scale = match &space.axis {
        Axis::FluorescenceBin(g) => 1.0 / g.widths()[top],
        Axis::Grouped(sizes) => 1.0 / sizes[top] as f64,
        Axis::ProteinCount => 1.0,
    };
    Ok((0..space.n_phases)
        .map(|ph| beta_by_phase[ph] * scale * p[space.index(top, ph)])
        .sum())
}

/// Binomial(n, 1/2) probabilities for `0..=n`, normalised to sum to one.
pub fn binomial_half_pmf(n: u64) -> Vec<f64> {
    if n == 0 {
        return vec![1.0];
    }
    let n_us = n as usize;
    let mut ln_fact = Vec::with_capacity(n_us + 1);
    ln_fact.push(0.0f64);
    for i in 1..=n_us {
        ln_fact.push(ln_fact[i - 1] + (i as f64).ln());
    }
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    let mut pmf: Vec<f64> = (0..=n_us)
        .map(|k| (ln_fact[n_us] - ln_fact[k] - ln_fact[n_us - k] - ln_half_n).exp())
        .collect();
    let s: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|v| *v /= s);
    pmf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{phase_generator, RateSet};

    fn single_phase() -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    #[test]
    fn zero_rates_give_zero_matrix() {
        let a = build_full_generator(&DMatrix::zeros(5, 5), &[0.0; 5], 0.0, 3).unwrap();
        assert_eq!(a.nnz(), 0);
        assert_eq!(a.dim(), 20);
    }

    #[test]
    fn pure_birth_one_step() {
        let a = build_full_generator(&DMatrix::zeros(5, 5), &[2.5; 5], 0.0, 1).unwrap();
        assert_eq!(a.nnz(), 10);
        for p in 0..5 {
            assert_eq!(a.get(5 + p, p), 2.5);
            assert_eq!(a.get(p, p), -2.5);
        }
    }

    #[test]
    fn full_generator_block_structure() {
        let rates = RateSet::default();
        let k = phase_generator(&rates);
        let beta = rates.beta_by_phase();
        let a = build_full_generator(&k, &beta, rates.gamma, 50).unwrap();
        a.check_generator(1e-12).unwrap();
        // level 3, phase UN: degradation to level 2 at 3γ, birth to level 4
        let col = 5 * 3 + 2;
        assert!((a.get(5 * 2 + 2, col) - 3.0 * rates.gamma).abs() < 1e-15);
        assert_eq!(a.get(5 * 4 + 2, col), beta[2]);
        assert_eq!(a.get(5 * 3 + 3, col), rates.k_o);
        let diag = k[(2, 2)] - beta[2] - 3.0 * rates.gamma;
        assert!((a.get(col, col) - diag).abs() < 1e-12);
        // top level: birth suppressed
        let top = 5 * 50 + 2;
        assert!((a.get(top, top) - (k[(2, 2)] - 50.0 * rates.gamma)).abs() < 1e-12);
    }

    #[test]
    fn single_phase_stationary_law_is_truncated_poisson() {
        // Detailed balance: pi(n+1)/pi(n) = beta / ((n+1) gamma).
        let n_max = 120;
        let a = build_full_generator(&single_phase(), &[5.0], 0.1, n_max).unwrap();
        let mut pi = vec![1.0f64];
        for n in 0..n_max {
            pi.push(pi[n] * 5.0 / ((n + 1) as f64 * 0.1));
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= s);
        let r = a.mul_vec(&pi).unwrap();
        let residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(residual < 1e-14, "{residual}");
        // direct Poisson(50) evaluation
        let ln_pois = |n: usize| -> f64 {
            let lf: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
            n as f64 * 50f64.ln() - 50.0 - lf
        };
        for n in [0usize, 10, 50, 90] {
            assert!((pi[n] - ln_pois(n).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn replication_zero_level_and_halving() {
        let space = StateSpace::protein_count(8, 5);
        let dplus = build_replication_map(&space, Partition::Halving).unwrap();
        for s in dplus.column_sums() {
            assert!((s - 1.0).abs() < 1e-15);
        }
        // level 0, MF -> level 0, MH
        assert_eq!(dplus.get(1, 0), 1.0);
        // MH splits between MH and UN
        assert_eq!(dplus.get(1, 1), 0.5);
        assert_eq!(dplus.get(2, 1), 0.5);
        // level 7, phase O -> level 3, phase O
        assert_eq!(dplus.get(5 * 3 + 4, 5 * 7 + 4), 1.0);
        let d = build_replication_matrix(&space, Partition::Halving).unwrap();
        d.check_generator(1e-15).unwrap();
    }

    #[test]
    fn binomial_partition_weights() {
        let space = StateSpace::protein_count(5, 1);
        let dplus = build_replication_map(&space, Partition::Binomial).unwrap();
        let expect = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v| v / 16.0);
        for (target, w) in expect.iter().enumerate() {
            assert!((dplus.get(target, 4) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn binomial_on_bins_is_unsupported() {
        let space = StateSpace::fluorescence(FluorescenceGrid::uniform(4, 1.0).unwrap(), 5);
        assert!(matches!(
            build_replication_matrix(&space, Partition::Binomial),
            Err(FgbaError::Unsupported(_))
        ));
    }

    #[test]
    fn bin_halving_uses_lower_edge() {
        let grid = FluorescenceGrid::from_edges(vec![0.0, 1.0, 10.0, 100.0]).unwrap();
        let space = StateSpace::fluorescence(grid, 1);
        let lower = build_replication_map(&space, Partition::Halving).unwrap();
        // bin 2 = [10, 100): half of 10 lies in bin 1
        assert_eq!(lower.get(1, 2), 1.0);
        let mid = build_replication_map_with(&space, Partition::Halving, BinRepresentative::Midpoint).unwrap();
        // midpoint 55 -> 27.5, bin 2
        assert_eq!(mid.get(2, 2), 1.0);
    }

    #[test]
    fn halving_twice_floors_twice() {
        let space = StateSpace::protein_count(40, 1);
        let d = build_replication_map(&space, Partition::Halving).unwrap();
        for n in 0..40 {
            let mut x = vec![0.0; 40];
            x[n] = 1.0;
            let y = d.mul_vec(&d.mul_vec(&x).unwrap()).unwrap();
            assert_eq!(y[n / 2 / 2], 1.0);
        }
    }

    #[test]
    fn single_bin_fgba_is_k() {
        let rates = RateSet::default();
        let k = phase_generator(&rates);
        let grid = FluorescenceGrid::uniform(1, 7.0).unwrap();
        let a = build_fgba_generator(&k, &rates.beta_by_phase(), &grid, rates.gamma).unwrap();
        let diff = a.max_abs_diff(&SparseMatrix::from_dense(&k).unwrap()).unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn fgba_without_kinetics_is_block_diagonal_k() {
        let k = phase_generator(&RateSet::default());
        let grid = crate::grid::default_experiment_grid(1.0, 3).unwrap();
        let a = build_fgba_generator(&k, &[0.0; 5], &grid, 0.0).unwrap();
        for (r, c, v) in a.triplets() {
            assert_eq!(r / 5, c / 5);
            assert!((v - k[(r % 5, c % 5)]).abs() < 1e-12);
        }
    }

    #[test]
    fn fgba_rates_follow_grid() {
        let k = DMatrix::zeros(1, 1);
        let grid = FluorescenceGrid::from_widths(vec![1.0, 3.0, 2.0]).unwrap();
        let a = build_fgba_generator(&k, &[6.0], &grid, 0.5).unwrap();
        assert_eq!(a.get(1, 0), 6.0);
        assert_eq!(a.get(2, 1), 2.0);
        // decay from bin 1: γ·Δ1/Δ2, from bin 2: γ(Δ1+Δ2)/Δ3
        assert!((a.get(0, 1) - 0.5 * 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(1, 2) - 0.5 * 4.0 / 2.0).abs() < 1e-15);
        assert_eq!(a.get(2, 2), -1.0);
        assert!(build_fgba_generator(&k, &[-1.0], &grid, 0.5).is_err());
    }

    #[test]
    fn final_generator_conserves() {
        let rates = RateSet::default();
        let grid = crate::grid::default_experiment_grid(4.0, 10).unwrap();
        let a_f = build_fgba_generator(&phase_generator(&rates), &rates.beta_by_phase(), &grid, rates.gamma).unwrap();
        let d_f = build_replication_matrix(&StateSpace::fluorescence(grid, 5), Partition::Halving).unwrap();
        let m = assemble_final_generator(&a_f, &d_f).unwrap();
        m.check_generator(1e-12).unwrap();
        assert_eq!(assemble_final_generator(&a_f, &SparseMatrix::zeros(a_f.dim())).unwrap(), a_f);
        assert!(assemble_final_generator(&a_f, &SparseMatrix::zeros(3)).is_err());
        // A_f = 0, D_f = -I + I
        let i = SparseMatrix::identity(4);
        let zero = assemble_final_generator(&SparseMatrix::zeros(4), &i.scaled(-1.0).add(&i).unwrap()).unwrap();
        assert_eq!(zero.nnz(), 0);
    }

    #[test]
    fn binomial_fluorescence_map_is_stochastic() {
        let grid = crate::grid::default_experiment_grid(4.0, 10).unwrap();
        let m = build_binomial_fluorescence_map(&grid, 5, 1.0, BinRepresentative::LowerEdge).unwrap();
        for s in m.column_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outflow_counts_top_level_only() {
        let space = StateSpace::protein_count(3, 1);
        assert_eq!(truncation_outflow(&space, &[2.0], &[0.5, 0.25, 0.25]).unwrap(), 0.5);
    }
}
