use serde::{Deserialize, Serialize};

use crate::error::{FgbaError, Result};

/// Fluorescence bins in a.u. Bin `i` covers `[edges[i], edges[i+1])`, the
/// first edge is 0 and `edges[k]` is the sum of the first `k` widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceGrid {
    widths: Vec<f64>,
    edges: Vec<f64>,
}

impl FluorescenceGrid {
    pub fn from_widths(widths: Vec<f64>) -> Result<Self> {
        if widths.is_empty() {
            return Err(FgbaError::domain("fluorescence grid needs at least one bin"));
        }
        if let Some((i, w)) = widths.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(FgbaError::domain(format!("bin width {i} is {w}, must be > 0")));
        }
        let mut edges = Vec::with_capacity(widths.len() + 1);
        edges.push(0.0);
        let mut acc = 0.0;
        for w in &widths {
            acc += w;
            edges.push(acc);
        }
        Ok(FluorescenceGrid { widths, edges })
    }

    /// Grid from explicit edges, which must start at 0 and increase strictly.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(FgbaError::domain("need at least two edges"));
        }
        if edges[0] != 0.0 {
            return Err(FgbaError::domain("first edge must be 0"));
        }
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(FgbaError::domain("edges must be strictly increasing"));
        }
        Ok(FluorescenceGrid { widths, edges })
    }

    pub fn uniform(n_bins: usize, width: f64) -> Result<Self> {
        FluorescenceGrid::from_widths(vec![width; n_bins])
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn lower_edge(&self, bin: usize) -> f64 {
        self.edges[bin]
    }

    pub fn upper_edge(&self, bin: usize) -> f64 {
        self.edges[bin + 1]
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    pub fn min_width(&self) -> f64 {
        self.widths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }

    /// Bin containing `x`. Values at or beyond the top edge land in the last
    /// bin, negative values in the first.
    pub fn bin_of(&self, x: f64) -> usize {
        let k = self.edges.partition_point(|&e| e <= x);
        k.saturating_sub(1).min(self.len() - 1)
    }
}

/// Log-spaced experiment grid: edges `10^(k / bins_per_decade)` for
/// `k = 0..=decades * bins_per_decade`, preceded by a `[0, 1)` bin.
pub fn default_experiment_grid(decades: f64, bins_per_decade: usize) -> Result<FluorescenceGrid> {
    if !(decades > 0.0) || bins_per_decade == 0 {
        return Err(FgbaError::domain("need decades > 0 and bins_per_decade >= 1"));
    }
    let n_log = (decades * bins_per_decade as f64 + 1e-9).floor() as usize;
    if n_log == 0 {
        return Err(FgbaError::domain("grid spans less than one bin"));
    }
    let mut edges = Vec::with_capacity(n_log + 2);
    edges.push(0.0);
    edges.extend((0..=n_log).map(|k| 10f64.powf(k as f64 / bins_per_decade as f64)));
    FluorescenceGrid::from_edges(edges)
}
