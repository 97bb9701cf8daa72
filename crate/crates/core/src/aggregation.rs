//! Aggregation (E) and disaggregation (F) of level-structured chains.
//!
//! A plan groups consecutive levels; with `per_level_block = 5` each level is
//! a block of five phases and grouping happens along the protein axis only,
//! so E and F act as `E_ij · I_5` and `F_ij · I_5`. Scalar chains use a block
//! of one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FgbaError, Result};
use crate::grid::FluorescenceGrid;
use crate::sparse::{SparseGenerator, SparseMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationPlan {
    group_sizes: Vec<usize>,
    per_level_block: usize,
}

impl AggregationPlan {
    pub fn new(group_sizes: Vec<usize>, per_level_block: usize) -> Result<Self> {
        if group_sizes.is_empty() {
            return Err(FgbaError::domain("aggregation plan needs at least one group"));
        }
        if group_sizes.contains(&0) {
            return Err(FgbaError::domain("group sizes must be >= 1"));
        }
        if per_level_block == 0 {
            return Err(FgbaError::domain("per_level_block must be >= 1"));
        }
        Ok(AggregationPlan {
            group_sizes,
            per_level_block,
        })
    }

    pub fn identity(n_levels: usize, per_level_block: usize) -> Result<Self> {
        AggregationPlan::new(vec![1; n_levels], per_level_block)
    }

    pub fn uniform(n_groups: usize, group_size: usize, per_level_block: usize) -> Result<Self> {
        AggregationPlan::new(vec![group_size; n_groups], per_level_block)
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn per_level_block(&self) -> usize {
        self.per_level_block
    }

    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn source_levels(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn source_dim(&self) -> usize {
        self.source_levels() * self.per_level_block
    }

    pub fn aggregated_dim(&self) -> usize {
        self.n_groups() * self.per_level_block
    }

    /// Group of every source level.
    fn level_groups(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &m)| std::iter::repeat_n(g, m))
            .collect()
    }

    /// First source level of each group: 0, m_1, m_1 + m_2, …
    pub fn group_starts(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .scan(0usize, |acc, &m| {
                let s = *acc;
                *acc += m;
                Some(s)
            })
            .collect()
    }

    fn check_source(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.source_dim() {
            return Err(FgbaError::dims(self.source_dim(), len, context));
        }
        Ok(())
    }
}

struct IndexMap {
    block: usize,
    groups: Vec<usize>,
    sizes: Vec<usize>,
}

impl IndexMap {
    fn new(plan: &AggregationPlan) -> Self {
        IndexMap {
            block: plan.per_level_block,
            groups: plan.level_groups(),
            sizes: plan.group_sizes.clone(),
        }
    }

    fn aggregated(&self, source: usize) -> usize {
        self.block * self.groups[source / self.block] + source % self.block
    }

    fn group_size_of(&self, source: usize) -> f64 {
        self.sizes[self.groups[source / self.block]] as f64
    }
}

/// E·P: sums each group's probabilities, phase by phase.
pub fn aggregate_vector(p: &[f64], plan: &AggregationPlan) -> Result<Vec<f64>> {
    plan.check_source(p.len(), "aggregate_vector input")?;
    let map = IndexMap::new(plan);
    let mut out = vec![0.0; plan.aggregated_dim()];
    for (i, v) in p.iter().enumerate() {
        out[map.aggregated(i)] += v;
    }
    Ok(out)
}

/// F·P_agg: spreads each group's probability evenly over its members.
pub fn disaggregate_vector(p_agg: &[f64], plan: &AggregationPlan) -> Result<Vec<f64>> {
    if p_agg.len() != plan.aggregated_dim() {
        return Err(FgbaError::dims(plan.aggregated_dim(), p_agg.len(), "disaggregate_vector input"));
    }
    let map = IndexMap::new(plan);
    Ok((0..plan.source_dim())
        .map(|i| p_agg[map.aggregated(i)] / map.group_size_of(i))
        .collect())
}

/// E·A·F, formed entry by entry: `A[r][c]` contributes `A[r][c] / m(c)` to
/// the aggregated entry of `(group(r), group(c))`.
pub fn aggregate_generator(a: &SparseGenerator, plan: &AggregationPlan) -> Result<SparseGenerator> {
    plan.check_source(a.dim(), "aggregate_generator input")?;
    let map = IndexMap::new(plan);
    SparseMatrix::from_triplets(
        plan.aggregated_dim(),
        a.triplets()
            .map(|(r, c, v)| (map.aggregated(r), map.aggregated(c), v / map.group_size_of(c))),
    )
}

/// Group sizes `m_i = max{n : mu·n <= Δ_i}`, clamped to at least one.
pub fn plan_from_grid(grid: &FluorescenceGrid, mu: f64, per_level_block: usize) -> Result<AggregationPlan> {
    if !(mu > 0.0) {
        return Err(FgbaError::domain("mu must be > 0"));
    }
    let sizes = grid
        .widths()
        .iter()
        .map(|w| {
            // guard against w/mu landing a hair below an integer
            let q = w / mu;
            let n = (q + 1e-12 * q.max(1.0)).floor() as usize;
            n.max(1)
        })
        .collect();
    AggregationPlan::new(sizes, per_level_block)
}

/// max |E·A − (E·A·F)·E|. Zero exactly when the aggregated chain evolves the
/// aggregated distribution without approximation.
pub fn lumpability_residual(a: &SparseGenerator, plan: &AggregationPlan) -> Result<f64> {
    plan.check_source(a.dim(), "lumpability_residual input")?;
    let map = IndexMap::new(plan);
    let a_agg = aggregate_generator(a, plan)?;

    let mut diff: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (r, c, v) in a.triplets() {
        *diff.entry((map.aggregated(r), c)).or_insert(0.0) += v;
    }
    // (EAF)·E has entry (R, c) = EAF[R][agg(c)]
    let mut by_agg_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); plan.aggregated_dim()];
    for (r, c, v) in a_agg.triplets() {
        by_agg_col[c].push((r, v));
    }
    for c in 0..plan.source_dim() {
        for &(r, v) in &by_agg_col[map.aggregated(c)] {
            *diff.entry((r, c)).or_insert(0.0) -= v;
        }
    }
    Ok(diff.values().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// True when the plan assigns each of `source_dim` states to exactly one
/// group.
pub fn is_state_partitioning(plan: &AggregationPlan, source_dim: usize) -> bool {
    plan.group_sizes.iter().all(|&m| m >= 1) && plan.source_dim() == source_dim
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cme::build_full_generator;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    /// Dense E and F built straight from their definitions.
    fn dense_e_f(plan: &AggregationPlan) -> (DMatrix<f64>, DMatrix<f64>) {
        let b = plan.per_level_block();
        let mut e = DMatrix::zeros(plan.aggregated_dim(), plan.source_dim());
        let mut f = DMatrix::zeros(plan.source_dim(), plan.aggregated_dim());
        let mut level = 0;
        for (g, &m) in plan.group_sizes().iter().enumerate() {
            for l in level..level + m {
                for ph in 0..b {
                    e[(b * g + ph, b * l + ph)] = 1.0;
                    f[(b * l + ph, b * g + ph)] = 1.0 / m as f64;
                }
            }
            level += m;
        }
        (e, f)
    }

    fn birth_death(levels: usize) -> SparseGenerator {
        build_full_generator(&DMatrix::zeros(1, 1), &[5.0], 0.1, levels - 1).unwrap()
    }

    #[test]
    fn identity_plan_is_identity() {
        let a = birth_death(30);
        let plan = AggregationPlan::identity(30, 1).unwrap();
        assert_eq!(aggregate_generator(&a, &plan).unwrap(), a);
        let p: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert_eq!(aggregate_vector(&p, &plan).unwrap(), p);
        assert_eq!(disaggregate_vector(&p, &plan).unwrap(), p);
        assert_eq!(lumpability_residual(&a, &plan).unwrap(), 0.0);
    }

    #[test]
    fn uniform_vector_groups() {
        let plan = AggregationPlan::uniform(4, 3, 1).unwrap();
        let agg = aggregate_vector(&[1.0 / 12.0; 12], &plan).unwrap();
        for v in agg {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn disaggregate_point_mass_in_blocks() {
        let plan = AggregationPlan::new(vec![4, 2], 5).unwrap();
        let mut p_agg = vec![0.0; 10];
        p_agg[0] = 1.0;
        let p = disaggregate_vector(&p_agg, &plan).unwrap();
        for l in 0..4 {
            assert_eq!(p[5 * l], 0.25);
            assert!(p[5 * l + 1..5 * l + 5].iter().all(|v| *v == 0.0));
        }
        assert!(p[20..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let plan = AggregationPlan::uniform(2, 2, 1).unwrap();
        assert!(aggregate_vector(&[1.0; 3], &plan).is_err());
        assert!(disaggregate_vector(&[1.0; 3], &plan).is_err());
        assert!(aggregate_generator(&birth_death(5), &plan).is_err());
    }

    #[test]
    fn birth_death_aggregate_matches_closed_form_and_dense_product() {
        let a = birth_death(200);
        let plan = AggregationPlan::uniform(20, 10, 1).unwrap();
        let agg = aggregate_generator(&a, &plan).unwrap();

        let (e, f) = dense_e_f(&plan);
        let dense = &e * a.to_dense() * &f;
        assert!((agg.to_dense() - &dense).amax() < 1e-12);

        for g in 0..19 {
            assert!((agg.get(g + 1, g) - 5.0 / 10.0).abs() < 1e-15);
            let starts = 10.0 * (g + 1) as f64;
            assert!((agg.get(g, g + 1) - 0.1 * starts / 10.0).abs() < 1e-12);
        }
        agg.check_generator(1e-12).unwrap();
        assert!(lumpability_residual(&a, &plan).unwrap() > 1e-3);
    }

    #[test]
    fn phase_only_dynamics_are_lumpable() {
        let rates = crate::phase::RateSet::default();
        let k = crate::phase::phase_generator(&rates);
        let a = build_full_generator(&k, &[0.0; 5], 0.0, 29).unwrap();
        let plan = AggregationPlan::new(vec![7, 13, 10], 5).unwrap();
        assert!(lumpability_residual(&a, &plan).unwrap() < 1e-12);
    }

    #[test]
    fn plan_from_grid_floors() {
        let g = FluorescenceGrid::from_widths(vec![10.0, 10.0]).unwrap();
        assert_eq!(plan_from_grid(&g, 1.0, 1).unwrap().group_sizes(), &[10, 10]);
        let g = FluorescenceGrid::from_widths(vec![10.0]).unwrap();
        assert_eq!(plan_from_grid(&g, 3.0, 1).unwrap().group_sizes(), &[3]);
        let g = FluorescenceGrid::from_widths(vec![9.0, 90.0, 900.0]).unwrap();
        assert_eq!(plan_from_grid(&g, 2.0, 1).unwrap().group_sizes(), &[4, 45, 450]);
        let g = FluorescenceGrid::from_widths(vec![0.5]).unwrap();
        assert_eq!(plan_from_grid(&g, 1.0, 1).unwrap().group_sizes(), &[1]);
        assert!(plan_from_grid(&g, 0.0, 1).is_err());
    }

    #[test]
    fn state_partitioning() {
        let plan = AggregationPlan::new(vec![2, 3], 5).unwrap();
        assert!(is_state_partitioning(&plan, 25));
        assert!(!is_state_partitioning(&plan, 30));
        assert!(!is_state_partitioning(&plan, 20));
        assert!(AggregationPlan::new(vec![2, 0], 5).is_err());
    }

    proptest! {
        #[test]
        fn e_times_f_is_identity(sizes in proptest::collection::vec(1usize..6, 1..8),
                                 block in 1usize..4,
                                 seed in proptest::collection::vec(0f64..1.0, 40)) {
            let plan = AggregationPlan::new(sizes, block).unwrap();
            let x: Vec<f64> = (0..plan.aggregated_dim()).map(|i| seed[i % seed.len()] + i as f64).collect();
            let back = aggregate_vector(&disaggregate_vector(&x, &plan).unwrap(), &plan).unwrap();
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn aggregation_preserves_mass(sizes in proptest::collection::vec(1usize..6, 1..8),
                                      raw in proptest::collection::vec(0f64..1.0, 200)) {
            let plan = AggregationPlan::new(sizes, 5).unwrap();
            let p: Vec<f64> = raw.iter().cycle().take(plan.source_dim()).copied().collect();
            let total: f64 = p.iter().sum();
            let p: Vec<f64> = p.iter().map(|v| v / total).collect();
            let agg: f64 = aggregate_vector(&p, &plan).unwrap().iter().sum();
            prop_assert!((agg - 1.0).abs() < 1e-14);
        }

        #[test]
        fn aggregated_generator_keeps_zero_column_sums(sizes in proptest::collection::vec(1usize..6, 2..6),
                                                       beta in 0f64..50.0, gamma in 0f64..2.0) {
            let plan = AggregationPlan::new(sizes, 5).unwrap();
            let rates = crate::phase::RateSet::default();
            let k = crate::phase::phase_generator(&rates);
            let a = build_full_generator(&k, &[beta, beta, beta / 2.0, beta / 2.0, 0.1], gamma,
                                         plan.source_levels() - 1).unwrap();
            let agg = aggregate_generator(&a, &plan).unwrap();
            prop_assert!(agg.max_column_sum_error() < 1e-12);
            let (e, f) = dense_e_f(&plan);
            let x = DVector::from_element(plan.aggregated_dim(), 1.0);
            prop_assert!(((&e * &f) * &x - &x).amax() == 0.0);
        }
    }
}
