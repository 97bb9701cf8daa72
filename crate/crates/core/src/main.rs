use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fgba::config::ExperimentConfig;
use fgba::error::{FgbaError, Result};
use fgba::error_bound::write_error_csv;
use fgba::experiment::{run_error_bound, run_mutants, run_rates, run_replication_compare, run_ssa, MutantModel};
use fgba::output::{ratio_tag, write_file, write_histogram_csv, write_json, Manifest};

#[derive(Parser, Debug)]
#[command(name = "fgba", version, about = "Fluorescence-grid CME for a phase-varying gene")]
struct Cli {
    /// TOML configuration; defaults reproduce the six-mutant experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `ssa.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve every mutant to t_end and write one histogram per mutant.
    Mutants,
    /// Compare continuous, discrete-halving and discrete-binomial replication.
    ReplicationCompare,
    /// SSA end-state histograms, one per mutant.
    Ssa,
    /// Error decomposition on the single-phase instance.
    ErrorBound,
    /// Dump each mutant's generator as triplets.
    Build,
    /// Print resolved rates and phase steady states.
    Rates,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mutants => "mutants",
            Command::ReplicationCompare => "replication-compare",
            Command::Ssa => "ssa",
            Command::ErrorBound => "error-bound",
            Command::Build => "build",
            Command::Rates => "rates",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fgba: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.ssa.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| FgbaError::Config(format!("--threads: {e}")))?;
    }
    let out = cli.out.as_path();
    let name = cli.command.name();
    match cli.command {
        Command::Mutants => mutants(&cfg, out, name),
        Command::ReplicationCompare => replication_compare(&cfg, out, name),
        Command::Ssa => ssa(&cfg, out, name),
        Command::ErrorBound => error_bound(&cfg, out, name),
        Command::Build => build(&cfg, out, name),
        Command::Rates => rates(&cfg, out, name),
    }
}

fn manifest<R: Serialize>(cfg: &ExperimentConfig, out: &Path, command: &str, seed: Option<u64>, results: R) -> Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: cfg,
        t_end_generations: cfg.t_end_generations(),
        results,
    };
    write_json(&out.join(format!("{command}_manifest.json")), &m)
}

#[derive(Serialize)]
struct FileEntry<T: Serialize> {
    file: String,
    #[serde(flatten)]
    summary: T,
}

fn mutants(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    let mut entries = Vec::new();
    for (summary, p) in run_mutants(cfg)? {
        let file = format!("mutant_{}.csv", ratio_tag(summary.ratio_r));
        write_file(&out.join(&file), |w| write_histogram_csv(&p, w))?;
        entries.push(FileEntry { file, summary });
    }
    manifest(cfg, out, command, None, entries)
}

fn replication_compare(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    let results = run_replication_compare(cfg)?;
    let mut entries = Vec::new();
    write_file(&out.join("replication_compare.csv"), |w| {
        writeln!(w, "scheme,mean_au,variance_au2")?;
        for (r, _) in &results {
            let scheme = serde_json::to_value(r.scheme).expect("enum serializes");
            writeln!(w, "{},{:.11e},{:.11e}", scheme.as_str().unwrap_or(""), r.mean_au, r.variance_au2)?;
        }
        Ok(())
    })?;
    for (r, p) in results {
        let scheme = serde_json::to_value(r.scheme).expect("enum serializes");
        let file = format!("replication_{}.csv", scheme.as_str().unwrap_or(""));
        write_file(&out.join(&file), |w| write_histogram_csv(&p, w))?;
        entries.push(FileEntry { file, summary: r });
    }
    manifest(cfg, out, command, None, entries)
}

fn ssa(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Entry {
        file: String,
        ratio_r: f64,
        trajectories: usize,
    }
    let mut entries = Vec::new();
    for (ratio, p) in run_ssa(cfg, cfg.ssa.seed)? {
        let file = format!("ssa_{}.csv", ratio_tag(ratio));
        write_file(&out.join(&file), |w| write_histogram_csv(&p, w))?;
        entries.push(Entry {
            file,
            ratio_r: ratio,
            trajectories: cfg.ssa.trajectories,
        });
    }
    manifest(cfg, out, command, Some(cfg.ssa.seed), entries)
}

fn error_bound(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    let rows = run_error_bound(cfg)?;
    let file = "error_trace.csv";
    write_file(&out.join(file), |w| write_error_csv(&rows, w))?;
    manifest(cfg, out, command, None, [file])
}

fn build(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Entry {
        file: String,
        ratio_r: f64,
        dim: usize,
        nnz: usize,
    }
    let mut entries = Vec::new();
    for &ratio in &cfg.experiment.ratio_r {
        let model = MutantModel::from_config(cfg, ratio, cfg.experiment.replication)?;
        let g = model.continuous_generator()?;
        let file = format!("generator_{}.txt", ratio_tag(ratio));
        write_file(&out.join(&file), |w| g.write_triplets(w))?;
        entries.push(Entry {
            file,
            ratio_r: ratio,
            dim: g.dim(),
            nnz: g.nnz(),
        });
    }
    manifest(cfg, out, command, None, entries)
}

fn rates(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    let rates = run_rates(cfg)?;
    let text = serde_json::to_string_pretty(&rates).map_err(|e| FgbaError::Io(std::io::Error::other(e)))?;
    println!("{text}");
    manifest(cfg, out, command, None, rates)
}
