//! Transient solution of dP/dt = M·P for CTMC generators.
//!
//! Uniformization is the default. With Λ = max |M_ii| and S = I + M/Λ,
//! `P(t) = Σ_k Pois(k; Λt) S^k P(0)`. The horizon is cut into sub-steps with
//! Λh ≤ 32 so the Poisson weights never underflow; each sub-step keeps terms
//! until the neglected Poisson tail falls below its share of `tol`. Every
//! term is nonnegative, so the result is too.
//!
//! Fixed-step RK4 is kept for cross-checks.

use serde::{Deserialize, Serialize};

use crate::cme::{Axis, StateSpace};
use crate::error::{FgbaError, Result};
use crate::sparse::SparseGenerator;

const MAX_SUBSTEP_RATE: f64 = 32.0;
const GENERATOR_TOL: f64 = 1e-9;

/// Distribution over the states of a [`StateSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    pub values: Vec<f64>,
    pub space: StateSpace,
}

impl ProbabilityVector {
    pub fn new(values: Vec<f64>, space: StateSpace) -> Result<Self> {
        if values.len() != space.dim() {
            return Err(FgbaError::dims(space.dim(), values.len(), "probability vector"));
        }
        Ok(ProbabilityVector { values, space })
    }

    pub fn point_mass(space: StateSpace, level: usize, phase: usize) -> Result<Self> {
        if level >= space.n_levels || phase >= space.n_phases {
            return Err(FgbaError::domain(format!("state ({level}, {phase}) outside the state space")));
        }
        let mut values = vec![0.0; space.dim()];
        values[space.index(level, phase)] = 1.0;
        Ok(ProbabilityVector { values, space })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Probability of each level, summed over phases.
    pub fn level_marginal(&self) -> Vec<f64> {
        self.values
            .chunks(self.space.n_phases)
            .map(|c| c.iter().sum())
            .collect()
    }

    /// Probability of each phase, summed over levels.
    pub fn phase_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.space.n_phases];
        for (i, v) in self.values.iter().enumerate() {
            out[i % self.space.n_phases] += v;
        }
        out
    }

    /// Mean of the level values of the state space (counts, lower bin edges
    /// or group starts).
    pub fn expected_level_value(&self) -> f64 {
        self.space
            .level_values()
            .iter()
            .zip(self.level_marginal())
            .map(|(x, p)| x * p)
            .sum()
    }
}

/// Half the L1 distance.
pub fn total_variation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FgbaError::dims(a.len(), b.len(), "total variation"));
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Uniformization,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: Method,
    /// Final time in generations.
    pub t_end: f64,
    /// RK4 step in generations.
    pub dt: f64,
    /// Uniformization truncation tolerance.
    pub tol: f64,
    /// Output times; empty means just `t_end`.
    pub checkpoint_times: Vec<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: Method::Uniformization,
            t_end: 0.0,
            dt: 1e-3,
            tol: 1e-8,
            checkpoint_times: Vec::new(),
        }
    }
}

impl SolveOptions {
    pub fn until(t_end: f64) -> Self {
        SolveOptions {
            t_end,
            ..SolveOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(FgbaError::domain("t_end must be finite and >= 0"));
        }
        if !(self.dt > 0.0) {
            return Err(FgbaError::domain("dt must be > 0"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(FgbaError::domain("tol must lie in (0, 1)"));
        }
        if self.checkpoint_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(FgbaError::domain("checkpoint times must be finite and >= 0"));
        }
        Ok(())
    }

    fn times(&self) -> Vec<f64> {
        let mut ts = if self.checkpoint_times.is_empty() {
            vec![self.t_end]
        } else {
            self.checkpoint_times.clone()
        };
        ts.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
        ts
    }
}

fn check_inputs(m: &SparseGenerator, p0: &[f64]) -> Result<()> {
    if p0.len() != m.dim() {
        return Err(FgbaError::dims(m.dim(), p0.len(), "initial distribution"));
    }
    for (r, c, v) in m.triplets() {
        if r != c && v < 0.0 {
            return Err(FgbaError::domain(format!(
                "negative off-diagonal {v:e} at ({r}, {c}); not a generator"
            )));
        }
    }
    for (column, sum) in m.column_sums().into_iter().enumerate() {
        if sum.abs() > GENERATOR_TOL {
            return Err(FgbaError::NotAGenerator { column, sum });
        }
    }
    if p0.iter().any(|v| *v < -1e-12 || !v.is_finite()) {
        return Err(FgbaError::domain("initial distribution has negative entries"));
    }
    let total: f64 = p0.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(FgbaError::domain(format!("initial distribution sums to {total}")));
    }
    Ok(())
}

/// Solves from `p0` and returns the distribution at every checkpoint, in
/// increasing time order.
pub fn solve(m: &SparseGenerator, p0: &ProbabilityVector, opts: &SolveOptions) -> Result<Vec<(f64, ProbabilityVector)>> {
    let raw = solve_raw(m, &p0.values, opts)?;
    Ok(raw
        .into_iter()
        .map(|(t, values)| {
            (
                t,
                ProbabilityVector {
                    values,
                    space: p0.space.clone(),
                },
            )
        })
        .collect())
}

/// [`solve`] on bare vectors.
pub fn solve_raw(m: &SparseGenerator, p0: &[f64], opts: &SolveOptions) -> Result<Vec<(f64, Vec<f64>)>> {
    opts.validate()?;
    check_inputs(m, p0)?;
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut p = p0.to_vec();
    for target in opts.times() {
        p = advance(m, &p, target - t, opts);
        t = target;
        out.push((t, emit(&p, opts.method)));
    }
    Ok(out)
}

/// Propagates `p` over `tau` generations without input validation.
pub(crate) fn advance(m: &SparseGenerator, p: &[f64], tau: f64, opts: &SolveOptions) -> Vec<f64> {
    match opts.method {
        Method::Uniformization => uniformization(m, p, tau, opts.tol),
        Method::Rk4 => rk4(m, p, tau, opts.dt),
    }
}

fn emit(p: &[f64], method: Method) -> Vec<f64> {
    if method != Method::Rk4 {
        return p.to_vec();
    }
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-12 {
        log::warn!("RK4 produced a negative probability {min:e}; clipping at output");
    }
    let mut q: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = q.iter().sum();
    if s > 0.0 {
        q.iter_mut().for_each(|v| *v /= s);
    }
    q
}

fn uniformization(m: &SparseGenerator, p: &[f64], tau: f64, tol: f64) -> Vec<f64> {
    let lambda = m.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    if tau <= 0.0 || lambda == 0.0 {
        return p.to_vec();
    }
    let n_sub = (lambda * tau / MAX_SUBSTEP_RATE).ceil().max(1.0) as usize;
    let lh = lambda * tau / n_sub as f64;
    let tol_sub = tol / n_sub as f64;
    let k_max = (lh + 20.0 * lh.sqrt() + 50.0).ceil() as usize;

    let n = p.len();
    let mut current = p.to_vec();
    let mut term = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for _ in 0..n_sub {
        term.copy_from_slice(&current);
        let mut w = (-lh).exp();
        let mut cum = w;
        let mut acc: Vec<f64> = term.iter().map(|v| w * v).collect();
        let mut k = 0;
        while 1.0 - cum > tol_sub && k < k_max {
            k += 1;
            // term <- S·term = term + M·term / Λ
            m.mul_vec_into(&term, &mut scratch);
            for (t, s) in term.iter_mut().zip(&scratch) {
                *t = (*t + s / lambda).max(0.0);
            }
            w *= lh / k as f64;
            cum += w;
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += w * t;
            }
        }
        // Give the truncated tail to the last term so mass is conserved.
        let tail = (1.0 - cum).max(0.0);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += tail * t;
        }
        current = acc;
    }
    current
}

fn rk4(m: &SparseGenerator, p: &[f64], tau: f64, dt: f64) -> Vec<f64> {
    if tau <= 0.0 {
        return p.to_vec();
    }
    let steps = (tau / dt).ceil().max(1.0) as usize;
    let h = tau / steps as f64;
    let n = p.len();
    let mut y = p.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        m.mul_vec_into(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        m.mul_vec_into(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        m.mul_vec_into(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        m.mul_vec_into(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let drift = (y.iter().sum::<f64>() - 1.0).abs();
    if drift > 1e-10 {
        log::warn!("RK4 probability drift {drift:e} over {steps} steps");
    }
    y
}

fn require_bins(p: &ProbabilityVector) -> Result<()> {
    match p.space.axis {
        Axis::FluorescenceBin(_) => Ok(()),
        _ => Err(FgbaError::Unsupported(
            "fluorescence moments need a fluorescence-bin state space".into(),
        )),
    }
}

/// Mean fluorescence, valuing each bin at its lower edge.
pub fn expected_fluorescence(p: &ProbabilityVector) -> Result<f64> {
    require_bins(p)?;
    Ok(p.expected_level_value())
}

/// Variance of fluorescence under lower-edge bin values.
pub fn variance_fluorescence(p: &ProbabilityVector) -> Result<f64> {
    require_bins(p)?;
    let x = p.space.level_values();
    let marg = p.level_marginal();
    let mass: f64 = marg.iter().sum();
    let mean = x.iter().zip(&marg).map(|(x, q)| x * q).sum::<f64>() / mass;
    let var = x.iter().zip(&marg).map(|(x, q)| q * (x - mean).powi(2)).sum::<f64>() / mass;
    Ok(var.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cme::build_full_generator;
    use crate::grid::FluorescenceGrid;
    use crate::sparse::SparseMatrix;
    use nalgebra::{DMatrix, DVector};

    fn two_state() -> SparseMatrix {
        SparseMatrix::from_triplets(2, [(0, 0, -1.0), (1, 0, 1.0), (0, 1, 1.0), (1, 1, -1.0)]).unwrap()
    }

    fn opts(method: Method, t_end: f64) -> SolveOptions {
        SolveOptions {
            method,
            t_end,
            tol: 1e-12,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn zero_generator_is_stationary() {
        let p0 = vec![0.3, 0.7, 0.0];
        let out = solve_raw(&SparseMatrix::zeros(3), &p0, &SolveOptions::until(5.0)).unwrap();
        assert_eq!(out[0].1, p0);
    }

    #[test]
    fn two_state_closed_form() {
        let e2 = (-2.0f64).exp();
        let expected = [0.5 + 0.5 * e2, 0.5 - 0.5 * e2];
        for method in [Method::Uniformization, Method::Rk4] {
            let out = solve_raw(&two_state(), &[1.0, 0.0], &opts(method, 1.0)).unwrap();
            for (a, b) in out[0].1.iter().zip(expected) {
                assert!((a - b).abs() < 1e-10, "{method:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn matches_dense_matrix_exponential() {
        let rates = crate::phase::RateSet {
            k_o: 4.0,
            k_neg_o: 2.0,
            k_r: 1.5,
            k_neg_r: 0.7,
            ..crate::phase::RateSet::default()
        };
        let k = crate::phase::phase_generator(&rates);
        let a = build_full_generator(&k, &[3.0, 3.0, 1.0, 1.0, 0.2], 0.3, 12).unwrap();
        let mut p0 = vec![0.0; a.dim()];
        p0[4] = 1.0;
        let t = 2.5;
        let oracle = (a.to_dense() * t).exp() * DVector::from_vec(p0.clone());
        let out = solve_raw(&a, &p0, &opts(Method::Uniformization, t)).unwrap();
        let got = &out[0].1;
        for (x, y) in got.iter().zip(oracle.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(got.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn birth_death_relaxes_to_poisson() {
        let a = build_full_generator(&DMatrix::zeros(1, 1), &[5.0], 0.1, 199).unwrap();
        let mut p0 = vec![0.0; 200];
        p0[0] = 1.0;
        let out = solve_raw(&a, &p0, &SolveOptions::until(200.0)).unwrap();
        let poisson: Vec<f64> = (0..200)
            .map(|n| {
                let lf: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
                (n as f64 * 50f64.ln() - 50.0 - lf).exp()
            })
            .collect();
        assert!(total_variation(&out[0].1, &poisson).unwrap() < 1e-4);
    }

    #[test]
    fn rejects_non_generator() {
        let bad = SparseMatrix::from_triplets(2, [(0, 0, -1.0), (1, 0, 0.5)]).unwrap();
        assert!(matches!(
            solve_raw(&bad, &[1.0, 0.0], &SolveOptions::until(1.0)),
            Err(FgbaError::NotAGenerator { .. })
        ));
        assert!(solve_raw(&two_state(), &[1.0], &SolveOptions::until(1.0)).is_err());
        assert!(solve_raw(&two_state(), &[0.5, 0.4], &SolveOptions::until(1.0)).is_err());
    }

    #[test]
    fn checkpoints_are_sorted_and_cumulative() {
        let o = SolveOptions {
            checkpoint_times: vec![2.0, 0.5, 1.0],
            tol: 1e-12,
            ..SolveOptions::default()
        };
        let out = solve_raw(&two_state(), &[1.0, 0.0], &o).unwrap();
        let times: Vec<f64> = out.iter().map(|(t, _)| *t).collect();
        assert_eq!(times, vec![0.5, 1.0, 2.0]);
        let direct = solve_raw(&two_state(), &[1.0, 0.0], &opts(Method::Uniformization, 2.0)).unwrap();
        assert!(total_variation(&out[2].1, &direct[0].1).unwrap() < 2e-12);
    }

    #[test]
    fn fluorescence_moments() {
        let grid = FluorescenceGrid::from_edges(vec![0.0, 1.0, 10.0]).unwrap();
        let space = StateSpace::fluorescence(grid.clone(), 1);
        let p = ProbabilityVector::point_mass(space.clone(), 0, 0).unwrap();
        assert_eq!(expected_fluorescence(&p).unwrap(), 0.0);
        assert_eq!(variance_fluorescence(&p).unwrap(), 0.0);
        let top = ProbabilityVector::point_mass(space.clone(), 1, 0).unwrap();
        assert_eq!(expected_fluorescence(&top).unwrap(), 1.0);
        let uni = ProbabilityVector::new(vec![0.5, 0.5], space).unwrap();
        assert_eq!(expected_fluorescence(&uni).unwrap(), 0.5);

        let two = FluorescenceGrid::from_edges(vec![0.0, 10.0, 20.0]).unwrap();
        let p = ProbabilityVector::new(vec![0.5, 0.5], StateSpace::fluorescence(two, 1)).unwrap();
        assert_eq!(variance_fluorescence(&p).unwrap(), 25.0);

        let counts = ProbabilityVector::point_mass(StateSpace::protein_count(3, 1), 1, 0).unwrap();
        assert!(expected_fluorescence(&counts).is_err());
    }
}
