//! File formats: histogram CSV and the JSON run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{FgbaError, Result};
use crate::phase::{Phase, N_PHASES};
use crate::solver::ProbabilityVector;

pub const HISTOGRAM_HEADER: &str = "bin_lower_au,bin_upper_au,p_MF,p_MH,p_UN,p_UO,p_O,p_total";

/// One row per bin with per-phase probabilities and their sum.
pub fn write_histogram_csv<W: Write>(p: &ProbabilityVector, mut w: W) -> Result<()> {
    let grid = p
        .space
        .grid()
        .ok_or_else(|| FgbaError::Unsupported("histograms need a fluorescence-bin axis".into()))?;
    if p.space.n_phases != N_PHASES {
        return Err(FgbaError::dims(N_PHASES, p.space.n_phases, "histogram phases"));
    }
    writeln!(w, "{HISTOGRAM_HEADER}")?;
    for bin in 0..grid.len() {
        write!(w, "{:.11e},{:.11e}", grid.lower_edge(bin), grid.upper_edge(bin))?;
        let mut total = 0.0;
        for ph in Phase::ALL {
            // Round-off can leave values like -1e-300.
            let v = p.values[p.space.index(bin, ph.index())].max(0.0);
            total += v;
            write!(w, ",{v:.11e}")?;
        }
        writeln!(w, ",{total:.11e}")?;
    }
    Ok(())
}

/// Creates `path`'s directory and hands a buffered writer to `body`.
pub fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)
            .map_err(|e| FgbaError::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
        Ok(())
    })
}

/// File-name fragment for a ratio, e.g. `r15.8`.
pub fn ratio_tag(ratio: f64) -> String {
    format!("r{ratio}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize, R: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub t_end_generations: f64,
    pub results: R,
}
