//! TOML run configuration. Every field has a default, and the defaults are
//! the published six-mutant setup, so an empty file reproduces it.
//!
//! ```toml
//! [rates]
//! k_m = 4.3
//! beta_f_on = 238.0
//!
//! [experiment]
//! ratio_r = [15.8, 8.9, 5.5, 4.3, 1.0, 0.1]
//! t_end = "20h"          # or "14.12gen", or a bare number of generations
//! replication = "continuous"
//!
//! [grid]
//! decades = 4.0
//! bins_per_decade = 10
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cme::BinRepresentative;
use crate::error::{FgbaError, Result};
use crate::grid::{default_experiment_grid, FluorescenceGrid};
use crate::phase::{derive_rate_set, hours_to_generations, Phase, RateSet};
use crate::solver::{Method, SolveOptions};
use crate::ssa::ReplicationMode;

/// A duration tagged with its unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSpec {
    Hours(f64),
    Generations(f64),
}

impl TimeSpec {
    pub fn generations(self) -> f64 {
        match self {
            TimeSpec::Hours(h) => hours_to_generations(h),
            TimeSpec::Generations(g) => g,
        }
    }
}

impl fmt::Display for TimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSpec::Hours(h) => write!(f, "{h}h"),
            TimeSpec::Generations(g) => write!(f, "{g}gen"),
        }
    }
}

impl FromStr for TimeSpec {
    type Err = FgbaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, ctor): (&str, fn(f64) -> TimeSpec) = if let Some(n) = s.strip_suffix("gen") {
            (n, TimeSpec::Generations)
        } else if let Some(n) = s.strip_suffix('h') {
            (n, TimeSpec::Hours)
        } else {
            (s, TimeSpec::Generations)
        };
        num.trim()
            .parse::<f64>()
            .map(ctor)
            .map_err(|_| FgbaError::Config(format!("cannot read `{s}` as a time; use e.g. `20h` or `14gen`")))
    }
}

impl Serialize for TimeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(g) => Ok(TimeSpec::Generations(g)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Replication treatment in the fluorescence CME.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicationScheme {
    /// D_f = D⁺_f − I added to the generator (divisions at rate 1).
    #[default]
    Continuous,
    /// A_f for one generation, then the halving map, repeated.
    DiscreteHalving,
    /// A_f for one generation, then the binomial map, repeated.
    DiscreteBinomial,
}

impl ReplicationScheme {
    pub fn ssa_mode(self) -> ReplicationMode {
        match self {
            ReplicationScheme::Continuous => ReplicationMode::ContinuousHalving,
            ReplicationScheme::DiscreteHalving => ReplicationMode::DiscreteHalving,
            ReplicationScheme::DiscreteBinomial => ReplicationMode::DiscreteBinomial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub k_m: f64,
    pub k_h: f64,
    pub ratio_o: f64,
    /// Baseline k_R/k_-R; each mutant overrides it.
    pub ratio_r: f64,
    pub k_o_multiplier: f64,
    pub gamma: f64,
    pub beta_f_on: f64,
    pub beta_f_partial: f64,
    pub beta_f_off: f64,
    pub replication_rate: f64,
    /// Explicit overrides of derived rates.
    pub k_o: Option<f64>,
    pub k_neg_o: Option<f64>,
    pub k_r: Option<f64>,
}

impl Default for RatesConfig {
    fn default() -> Self {
        let r = RateSet::default();
        RatesConfig {
            k_m: r.k_m,
            k_h: r.k_h,
            ratio_o: 3.7,
            ratio_r: 15.8,
            k_o_multiplier: 1000.0,
            gamma: r.gamma,
            beta_f_on: r.beta_f_on,
            beta_f_partial: r.beta_f_partial,
            beta_f_off: r.beta_f_off,
            replication_rate: r.replication_rate,
            k_o: None,
            k_neg_o: None,
            k_r: None,
        }
    }
}

impl RatesConfig {
    pub fn resolve(&self) -> Result<RateSet> {
        let mut r = derive_rate_set(self.k_m, self.k_h, self.ratio_o, self.ratio_r, self.k_o_multiplier)?;
        if let Some(k_o) = self.k_o {
            r.k_o = k_o;
            r.k_neg_o = k_o / self.ratio_o;
        }
        if let Some(v) = self.k_neg_o {
            r.k_neg_o = v;
        }
        if let Some(v) = self.k_r {
            r.k_r = v;
        }
        r.k_neg_r = r.k_r / self.ratio_r;
        r.gamma = self.gamma;
        r.beta_f_on = self.beta_f_on;
        r.beta_f_partial = self.beta_f_partial;
        r.beta_f_off = self.beta_f_off;
        r.replication_rate = self.replication_rate;
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// k_R/k_-R of each mutant.
    pub ratio_r: Vec<f64>,
    pub t_end: TimeSpec,
    pub replication: ReplicationScheme,
    /// Fluorescence per protein, used by the binomial map and the SSA.
    pub mu: f64,
    pub bin_representative: BinRepresentative,
    /// Mutant used by `replication-compare`.
    pub compare_ratio: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            ratio_r: vec![15.8, 8.9, 5.5, 4.3, 1.0, 0.1],
            t_end: TimeSpec::Hours(20.0),
            replication: ReplicationScheme::Continuous,
            mu: 1.0,
            bin_representative: BinRepresentative::LowerEdge,
            compare_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub decades: f64,
    pub bins_per_decade: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            decades: 4.0,
            bins_per_decade: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub phase: Phase,
    pub bin: usize,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection { phase: Phase::O, bin: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: Method,
    pub tol: f64,
    pub dt: f64,
    /// Extra output times in generations; `t_end` is always included.
    pub checkpoints: Vec<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverSection {
            method: d.method,
            tol: d.tol,
            dt: d.dt,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsaSection {
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for SsaSection {
    fn default() -> Self {
        SsaSection {
            trajectories: 10_000,
            seed: 0,
        }
    }
}

/// Single-phase birth-death instance for the error harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorBoundSection {
    pub beta: f64,
    pub gamma: f64,
    pub levels: usize,
    pub group_size: usize,
    pub mu: f64,
    pub checkpoints: Vec<f64>,
    pub tol: f64,
}

impl Default for ErrorBoundSection {
    fn default() -> Self {
        ErrorBoundSection {
            beta: 5.0,
            gamma: 0.1,
            levels: 200,
            group_size: 10,
            mu: 1.0,
            checkpoints: vec![0.0, 1.0, 5.0, 14.12],
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rates: RatesConfig,
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub initial: InitialSection,
    pub solver: SolverSection,
    pub ssa: SsaSection,
    pub error_bound: ErrorBoundSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            FgbaError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FgbaError::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FgbaError::Config(m));
        if self.experiment.ratio_r.is_empty() {
            return bad("experiment.ratio_r must list at least one mutant".into());
        }
        if let Some(r) = self.experiment.ratio_r.iter().find(|r| !(**r > 0.0)) {
            return bad(format!("experiment.ratio_r entry {r} must be > 0"));
        }
        let t = self.experiment.t_end.generations();
        if !(t > 0.0) || !t.is_finite() {
            return bad(format!("experiment.t_end = {} must be > 0", self.experiment.t_end));
        }
        if !(self.experiment.mu > 0.0) {
            return bad("experiment.mu must be > 0".into());
        }
        if !(self.experiment.compare_ratio > 0.0) {
            return bad("experiment.compare_ratio must be > 0".into());
        }
        self.rates.resolve().map_err(|e| FgbaError::Config(format!("rates: {e}")))?;
        let grid = self.grid().map_err(|e| FgbaError::Config(format!("grid: {e}")))?;
        if self.initial.bin >= grid.len() {
            return bad(format!("initial.bin {} outside a {}-bin grid", self.initial.bin, grid.len()));
        }
        self.solve_options()
            .validate()
            .map_err(|e| FgbaError::Config(format!("solver: {e}")))?;
        if self.ssa.trajectories == 0 {
            return bad("ssa.trajectories must be >= 1".into());
        }
        let eb = &self.error_bound;
        if !(eb.beta >= 0.0) || !(eb.gamma >= 0.0) || !(eb.mu > 0.0) || eb.levels < 2 || eb.group_size == 0 {
            return bad("error_bound: need beta, gamma >= 0, mu > 0, levels >= 2, group_size >= 1".into());
        }
        if eb.levels % eb.group_size != 0 {
            return bad(format!(
                "error_bound.levels = {} is not a multiple of group_size = {}",
                eb.levels, eb.group_size
            ));
        }
        if eb.checkpoints.iter().any(|t| !(*t >= 0.0)) || !(eb.tol > 0.0 && eb.tol < 1.0) {
            return bad("error_bound: checkpoints must be >= 0 and tol in (0, 1)".into());
        }
        Ok(())
    }

    pub fn rate_set(&self) -> Result<RateSet> {
        self.rates.resolve()
    }

    pub fn grid(&self) -> Result<FluorescenceGrid> {
        default_experiment_grid(self.grid.decades, self.grid.bins_per_decade)
    }

    pub fn t_end_generations(&self) -> f64 {
        self.experiment.t_end.generations()
    }

    pub fn solve_options(&self) -> SolveOptions {
        let t_end = self.t_end_generations();
        let mut checkpoints: Vec<f64> = self.solver.checkpoints.iter().copied().filter(|t| *t < t_end).collect();
        checkpoints.push(t_end);
        SolveOptions {
            method: self.solver.method,
            t_end,
            dt: self.solver.dt,
            tol: self.solver.tol,
            checkpoint_times: checkpoints,
        }
    }
}
