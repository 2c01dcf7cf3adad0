//! End-to-end composition: generate, sweep, analyze, write.

use std::path::{Path, PathBuf};

use crate::analysis::{sweep_population, SweepTable};
use crate::error::Result;
use crate::factory::{build_population, Population};
use crate::io::{self, RunConfig};
use crate::report::{analyze, figures, AnalysisOptions, AnalysisReport};

pub fn generate(cfg: &RunConfig) -> Result<Population> {
    cfg.validate()?;
    build_population(cfg.seed, cfg.n_chips, &cfg.dparams, &cfg.effective_vp())
}

/// Writes the report JSON and figure CSVs; returns the written paths.
pub fn write_analysis(
    tables: &[SweepTable],
    pop: Option<&Population>,
    opts: &AnalysisOptions,
    report_path: &Path,
    fig_dir: Option<&Path>,
) -> Result<(AnalysisReport, Vec<PathBuf>)> {
    let report = analyze(tables, pop, opts)?;
    let mut written = Vec::new();
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::create_dir(dir)?;
    }
    io::write_atomic(report_path, io::to_json_pretty(&report).as_bytes())?;
    written.push(report_path.to_path_buf());
    if let Some(dir) = fig_dir {
        io::create_dir(dir)?;
        for f in figures(tables, &report, pop)? {
            let path = dir.join(&f.name);
            io::write_atomic(&path, f.contents.as_bytes())?;
            written.push(path);
        }
    }
    Ok((report, written))
}

/// Runs the full pipeline into `out_dir`:
/// `population.json`, `sweeps/*.csv`, `report.json`, `figures/*.csv`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<AnalysisReport> {
    let pop = generate(cfg)?;
    io::create_dir(out_dir)?;
    io::write_atomic(
        &out_dir.join("population.json"),
        io::population_to_json(&pop).as_bytes(),
    )?;
    let tables = sweep_population(&pop, None, None)?;
    io::write_sweeps(&tables, &out_dir.join("sweeps"))?;
    let (report, _) = write_analysis(
        &tables,
        Some(&pop),
        &AnalysisOptions::default(),
        &out_dir.join("report.json"),
        Some(&out_dir.join("figures")),
    )?;
    Ok(report)
}
