use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use scaller::analysis::sweep_population;
use scaller::calibration::{
    fit_delay_params, initial_guess, presilicon_report, residual_report, CalibrationTargets, Field,
    FitOptions,
};
use scaller::io::{self, Mode, RunConfig};
use scaller::model::{DelayParams, Flavor, RoConfig, RoType, Speed};
use scaller::netlist::emit_netlist;
use scaller::pipeline;
use scaller::report::AnalysisOptions;
use scaller::variation::VariationParams;
use scaller::{Error, Result};

/// Exit status when a calibration finishes without meeting its tolerance.
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "scaller", version, about = "Tunable ring-oscillator pair simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit delay parameters to target frequencies.
    Calibrate(CalibrateArgs),
    /// Build a chip population from a run config.
    Gen(GenArgs),
    /// Sweep every selection of the chosen pairs into CSV files.
    Sweep(SweepArgs),
    /// Summarize sweep CSVs into a report and figure data.
    Analyze(AnalyzeArgs),
    /// Emit the gate-level netlist of one ring.
    Netlist(NetlistArgs),
    /// Print model frequencies against the built-in pre-silicon table.
    Report(ReportArgs),
    /// Generate, sweep and analyze in one go.
    Run(RunArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Comma-separated list of target files or `builtin-table1` / `builtin-table2`.
    #[arg(long, default_value = "builtin-table1")]
    targets: String,
    /// Hold a field at a value, e.g. `--fix d_del_fast=160`.
    #[arg(long = "fix", value_name = "FIELD=VALUE")]
    fix: Vec<String>,
    /// Let the solver move m_sht and m_ext.
    #[arg(long)]
    free_wpe: bool,
    /// Largest acceptable relative residual.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_chips: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    pop: PathBuf,
    #[arg(long)]
    chip: Option<u64>,
    /// Block type such as `5mux-fast`.
    #[arg(long = "type")]
    ro_type: Option<RoType>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory of sweep CSVs.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Where to write figure CSVs.
    #[arg(long)]
    figdir: Option<PathBuf>,
    /// Population file, needed for the power summary.
    #[arg(long)]
    pop: Option<PathBuf>,
    /// Chip for the single-chip figures.
    #[arg(long, default_value_t = 2)]
    chip: u64,
    #[arg(long, default_value = "5mux-fast")]
    fig_type: RoType,
    #[arg(long, default_value = "7mux-fast")]
    cross_type: RoType,
    #[arg(long, default_value_t = 12)]
    power_chip: u64,
}

#[derive(Args)]
struct NetlistArgs {
    #[arg(long)]
    k: u8,
    #[arg(long)]
    speed: Speed,
    #[arg(long)]
    flavor: Flavor,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Params file; the built-in calibration when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "presilicon" => Ok(Mode::Presilicon),
        "silicon" => Ok(Mode::Silicon),
        _ => Err(format!("unknown mode `{s}`, expected presilicon or silicon")),
    }
}

fn load_targets(spec: &str) -> Result<CalibrationTargets> {
    let mut merged: Option<CalibrationTargets> = None;
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let next = match item {
            "builtin-table1" => CalibrationTargets::table1(),
            "builtin-table2" => CalibrationTargets::silicon_means(VariationParams::default().silicon_scale)?,
            path => {
                let p = Path::new(path);
                CalibrationTargets::from_json(&io::read_to_string(p)?, path)?
            }
        };
        merged = Some(match merged {
            None => next,
            Some(m) => m.merged(&next)?,
        });
    }
    merged.ok_or_else(|| Error::NonIdentifiable {
        direction: "all parameters (no targets given)".into(),
    })
}

fn calibrate(a: CalibrateArgs) -> Result<u8> {
    if !a.tol.is_finite() || a.tol <= 0.0 {
        return Err(Error::InvalidParameter("--tol must be positive".into()));
    }
    let targets = load_targets(&a.targets)?;
    let mut opts = FitOptions {
        free_wpe: a.free_wpe,
        tol: a.tol,
        ..FitOptions::default()
    };
    for f in &a.fix {
        let (name, value) = f
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("--fix expects FIELD=VALUE, got `{f}`")))?;
        let field: Field = name.trim().parse()?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad value in --fix `{f}`")))?;
        opts.fixed.insert(field, value);
    }
    let result = fit_delay_params(&targets, &opts, &initial_guess())?;
    io::write_atomic(&a.out, io::to_json_pretty(&result.params).as_bytes())?;
    let rows = residual_report(&result.params, &targets)?;
    let summary = json!({
        "converged": result.converged,
        "iterations": result.iterations,
        "max_abs_rel_error": result.max_abs_residual(),
        "tol": a.tol,
        "free": result.free.iter().map(|f| f.name()).collect::<Vec<_>>(),
        "pinned": result.pinned,
        "params": result.params,
        "rows": rows,
    });
    emit(&io::to_json_pretty(&summary));
    Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn gen(a: GenArgs) -> Result<u8> {
    let mut cfg = match (&a.config, a.seed) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(seed)) => RunConfig::builtin(seed)?,
        (None, None) => {
            return Err(Error::InvalidParameter(
                "a seed is required: pass --config or --seed".into(),
            ))
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n_chips {
        cfg.n_chips = n;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let pop = pipeline::generate(&cfg)?;
    io::write_atomic(&a.out, io::population_to_json(&pop).as_bytes())?;
    eprintln!(
        "{}",
        json!({"written": a.out, "chips": pop.chips.len(), "pairs": pop.pair_count()})
    );
    Ok(0)
}

fn sweep(a: SweepArgs) -> Result<u8> {
    let pop = io::load_population(&a.pop)?;
    let tables = sweep_population(&pop, a.chip, a.ro_type)?;
    if tables.is_empty() {
        return Err(Error::InvalidParameter("selection matched no blocks".into()));
    }
    let paths = io::write_sweeps(&tables, &a.out_dir)?;
    eprintln!("{}", json!({"written": paths.len(), "dir": a.out_dir}));
    Ok(0)
}

fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let tables = io::read_sweeps(&a.input)?;
    let pop = a.pop.as_deref().map(io::load_population).transpose()?;
    let opts = AnalysisOptions {
        fig_chip: a.chip,
        fig_type: a.fig_type,
        cross_type: a.cross_type,
        power_chip: a.power_chip,
        ..AnalysisOptions::default()
    };
    let (_, written) =
        pipeline::write_analysis(&tables, pop.as_ref(), &opts, &a.report, a.figdir.as_deref())?;
    eprintln!("{}", json!({"tables": tables.len(), "written": written}));
    Ok(0)
}

fn netlist(a: NetlistArgs) -> Result<u8> {
    let n = emit_netlist(RoConfig::new(a.k, a.speed, a.flavor)?);
    n.check_ring()?;
    match a.out {
        Some(p) => io::write_atomic(&p, n.to_json().as_bytes())?,
        None => emit(&n.to_json()),
    }
    Ok(0)
}

fn report(a: ReportArgs) -> Result<u8> {
    let params: DelayParams = match a.params {
        Some(p) => io::load_params(&p)?,
        None => scaller::calibration::calibrate_table1()?.params,
    };
    let rows = presilicon_report(&params)?;
    if a.json {
        emit(&io::to_json_pretty(&rows));
        return Ok(0);
    }
    let mut table = format!(
        "{:<11} {:<6} {:>12} {:>12} {:>10}\n",
        "type", "flavor", "model_mhz", "target_mhz", "rel_err_%"
    );
    for r in rows {
        table += &format!(
            "{:<11} {:<6} {:>12.3} {:>12.3} {:>10.4}\n",
            r.ro_type,
            r.flavor.to_string(),
            r.model_mhz,
            r.target_mhz,
            r.rel_error * 100.0
        );
    }
    emit(&table);
    Ok(0)
}

fn run(a: RunArgs) -> Result<u8> {
    let cfg = RunConfig::load(&a.config)?;
    let dir = a.out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    let report = pipeline::run(&cfg, &dir)?;
    eprintln!(
        "{}",
        json!({"scenario": cfg.scenario, "dir": dir, "tables": report.n_tables})
    );
    Ok(0)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SCALLER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("SCALLER_THREADS=`{raw}` is not a count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Gen(a) => gen(a),
        Command::Sweep(a) => sweep(a),
        Command::Analyze(a) => analyze(a),
        Command::Netlist(a) => netlist(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let line = json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
