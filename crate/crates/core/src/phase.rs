//! Five-phase gene model: phases, kinetic constants and the deterministic
//! fluorescence dynamics.
//!
//! Time is measured in generations throughout the crate. One generation is
//! [`MINUTES_PER_GENERATION`] minutes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FgbaError, Result};

/// Length of one cell generation in minutes.
pub const MINUTES_PER_GENERATION: f64 = 85.0;

/// Number of gene phases.
pub const N_PHASES: usize = 5;

/// k_R as a multiple of k_O, fixed by the stationary phase balance.
pub const K_R_PER_K_O: f64 = 0.118;

/// Converts a duration in hours into generations.
pub fn hours_to_generations(hours: f64) -> f64 {
    hours * 60.0 / MINUTES_PER_GENERATION
}

/// Protein production regime of a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpressionState {
    On,
    Partial,
    Off,
}

/// Gene phase. The discriminant is the phase's offset inside a level block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    /// Fully methylated.
    MF = 0,
    /// Hemimethylated.
    MH = 1,
    /// Unmethylated, naked.
    UN = 2,
    /// Unmethylated with OxyR bound.
    UO = 3,
    /// Off conformation.
    O = 4,
}

impl Phase {
    pub const ALL: [Phase; N_PHASES] = [Phase::MF, Phase::MH, Phase::UN, Phase::UO, Phase::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    /// MH is taken to express On, like MF.
    pub fn expression_state(self) -> ExpressionState {
        match self {
            Phase::MF | Phase::MH => ExpressionState::On,
            Phase::UN | Phase::UO => ExpressionState::Partial,
            Phase::O => ExpressionState::Off,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::MF => "MF",
            Phase::MH => "MH",
            Phase::UN => "UN",
            Phase::UO => "UO",
            Phase::O => "O",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Phase {
    type Err = FgbaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MF" => Ok(Phase::MF),
            "MH" => Ok(Phase::MH),
            "UN" => Ok(Phase::UN),
            "UO" => Ok(Phase::UO),
            "O" | "OFF" => Ok(Phase::O),
            other => Err(FgbaError::Config(format!("unknown phase `{other}`"))),
        }
    }
}

/// Every kinetic constant of the gene-protein system, in per-generation
/// units. Fluorescence production rates are in a.u. per generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    /// MH -> MF.
    pub k_m: f64,
    /// UN -> MH.
    pub k_h: f64,
    /// UN -> UO.
    pub k_o: f64,
    /// UO -> UN.
    pub k_neg_o: f64,
    /// UO -> O.
    pub k_r: f64,
    /// O -> UO.
    pub k_neg_r: f64,
    pub gamma: f64,
    pub beta_f_on: f64,
    pub beta_f_partial: f64,
    pub beta_f_off: f64,
    pub replication_rate: f64,
}

impl Default for RateSet {
    /// Published constants: k_M = 4.3, k_H = 0.4, k_O/k_-O = 3.7,
    /// k_R/k_-R = 15.8, k_O = 1000 k_H, γ = 0.0378 and β_f = (238, 3, 0.37).
    fn default() -> Self {
        let base = derive_rate_set(4.3, 0.4, 3.7, 15.8, 1000.0).expect("positive published rates");
        RateSet {
            gamma: 0.0378,
            beta_f_on: 238.0,
            beta_f_partial: 3.0,
            beta_f_off: 0.37,
            ..base
        }
    }
}

impl RateSet {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("k_m", self.k_m),
            ("k_h", self.k_h),
            ("k_o", self.k_o),
            ("k_neg_o", self.k_neg_o),
            ("k_r", self.k_r),
            ("k_neg_r", self.k_neg_r),
            ("gamma", self.gamma),
            ("beta_f_on", self.beta_f_on),
            ("beta_f_partial", self.beta_f_partial),
            ("beta_f_off", self.beta_f_off),
            ("replication_rate", self.replication_rate),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(FgbaError::domain(format!("rate {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Production rate for each phase, in phase order.
    pub fn beta_by_phase(&self) -> [f64; N_PHASES] {
        Phase::ALL.map(|p| match p.expression_state() {
            ExpressionState::On => self.beta_f_on,
            ExpressionState::Partial => self.beta_f_partial,
            ExpressionState::Off => self.beta_f_off,
        })
    }

    /// Same rates with k_-R re-derived from a mutant's k_R/k_-R ratio.
    pub fn with_ratio_r(&self, ratio_r: f64) -> Result<RateSet> {
        if !(ratio_r > 0.0) {
            return Err(FgbaError::domain(format!("k_R/k_-R ratio must be > 0, got {ratio_r}")));
        }
        Ok(RateSet {
            k_neg_r: self.k_r / ratio_r,
            ..*self
        })
    }
}

/// Derives the phase-variation rates from the measured ratios.
///
/// k_O = multiplier·k_H, k_-O = k_O/ratio_o, k_R = 0.118·k_O and
/// k_-R = k_R/ratio_r. γ and β_f are left at zero, the replication rate at 1.
pub fn derive_rate_set(k_m: f64, k_h: f64, ratio_o: f64, ratio_r: f64, k_o_multiplier: f64) -> Result<RateSet> {
    for (name, v) in [
        ("k_m", k_m),
        ("k_h", k_h),
        ("ratio_o", ratio_o),
        ("ratio_r", ratio_r),
        ("k_o_multiplier", k_o_multiplier),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(FgbaError::domain(format!("{name} must be > 0, got {v}")));
        }
    }
    let k_o = k_o_multiplier * k_h;
    let k_r = K_R_PER_K_O * k_o;
    Ok(RateSet {
        k_m,
        k_h,
        k_o,
        k_neg_o: k_o / ratio_o,
        k_r,
        k_neg_r: k_r / ratio_r,
        gamma: 0.0,
        beta_f_on: 0.0,
        beta_f_partial: 0.0,
        beta_f_off: 0.0,
        replication_rate: 1.0,
    })
}

/// Degradation rate per generation from a half-life in hours.
pub fn gamma_from_half_life(tau_hours: f64, generation_minutes: f64) -> Result<f64> {
    if !(tau_hours > 0.0) || !(generation_minutes > 0.0) {
        return Err(FgbaError::domain("half-life and generation length must be > 0"));
    }
    Ok(std::f64::consts::LN_2 / (tau_hours * 60.0 / generation_minutes))
}

/// Production rate that sustains the steady state `x_inf` against decay `gamma`.
pub fn beta_f_from_steady_state(gamma: f64, x_inf: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(x_inf >= 0.0) {
        return Err(FgbaError::domain("need gamma > 0 and x_inf >= 0"));
    }
    Ok(gamma * x_inf)
}

/// The 5x5 phase-variation generator K. Column j holds the rates out of
/// phase j; columns sum to zero.
pub fn phase_generator(r: &RateSet) -> DMatrix<f64> {
    #[rustfmt::skip]
    let k = DMatrix::from_row_slice(N_PHASES, N_PHASES, &[
        0.0, r.k_m,  0.0,          0.0,                0.0,
        0.0, -r.k_m, r.k_h,        0.0,                0.0,
        0.0, 0.0,    -r.k_h - r.k_o, r.k_neg_o,        0.0,
        0.0, 0.0,    r.k_o,        -r.k_neg_o - r.k_r, r.k_neg_r,
        0.0, 0.0,    0.0,          r.k_r,              -r.k_neg_r,
    ]);
    k
}

/// Column-stochastic phase map applied at division: MF -> MH, MH -> MH or UN
/// with probability 1/2 each, every other phase unchanged. For chains with a
/// phase count other than five the map is the identity.
pub fn replication_phase_map(n_phases: usize) -> DMatrix<f64> {
    if n_phases != N_PHASES {
        return DMatrix::identity(n_phases, n_phases);
    }
    #[rustfmt::skip]
    let d = DMatrix::from_row_slice(N_PHASES, N_PHASES, &[
        0.0, 0.0, 0.0, 0.0, 0.0,
        1.0, 0.5, 0.0, 0.0, 0.0,
        0.0, 0.5, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 1.0,
    ]);
    d
}

/// Closed-form solution of dx/dt = beta_f - gamma x.
pub fn deterministic_trajectory(beta_f: f64, gamma: f64, x0: f64, t: f64) -> f64 {
    if gamma == 0.0 {
        return x0 + beta_f * t;
    }
    let x_inf = beta_f / gamma;
    x_inf + (x0 - x_inf) * (-gamma * t).exp()
}

/// Stationary phase distribution of K + rate·(R - I).
///
/// An all-zero generator has every distribution stationary; the uniform one
/// is returned with a warning. A null space of dimension above one is an
/// error.
pub fn phase_steady_state(k: &DMatrix<f64>, replication_map: &DMatrix<f64>, replication_rate: f64) -> Result<Vec<f64>> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n || replication_map.shape() != (n, n) {
        return Err(FgbaError::domain("phase matrices must be square and of equal size"));
    }
    for j in 0..n {
        let ks: f64 = k.column(j).sum();
        if ks.abs() > 1e-9 {
            return Err(FgbaError::NotAGenerator { column: j, sum: ks });
        }
        let rs: f64 = replication_map.column(j).sum();
        if (rs - 1.0).abs() > 1e-9 {
            return Err(FgbaError::domain(format!("replication map column {j} sums to {rs}, expected 1")));
        }
    }

    let q = k + (replication_map - DMatrix::identity(n, n)) * replication_rate;
    if q.amax() == 0.0 {
        log::warn!("phase generator is identically zero; returning the uniform distribution");
        return Ok(vec![1.0 / n as f64; n]);
    }

    let sv = q.singular_values();
    let scale = sv.max();
    let null_dim = sv.iter().filter(|&&s| s <= 1e-10 * scale).count();
    if null_dim > 1 {
        return Err(FgbaError::Degenerate(format!(
            "phase generator has a {null_dim}-dimensional null space"
        )));
    }

    // Replace one balance equation by the normalisation constraint.
    let mut a = q;
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FgbaError::Degenerate("stationary system is singular".into()))?;

    let mut pi: Vec<f64> = x.iter().map(|&v| if v < 0.0 && v > -1e-12 { 0.0 } else { v }).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}
