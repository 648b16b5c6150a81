//! Command-line front end.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bspd::{run_bspd, stationarity_residual, write_trace_jsonl, BspdOptions};
use crate::channel::generate_channel;
use crate::checks;
use crate::error::{Error, Result};
use crate::harness::{
    dl_rate, emit_figures, evaluate_sinr, format_summary, read_records, realization_seed, realization_topology,
    run_experiment, summarize, worst_tag_ber, write_records, ExperimentOutcome, Format, MetricRecord, Scheme,
};
use crate::settings::{load_config, Settings};
use crate::sinr::{BarrierUtility, Utility};

pub const OUT_DIR_ENV: &str = "BSPD_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "bspd", version, about = "Transceiver optimization and link simulation for multi-tag symbiotic radio")]
pub struct Cli {
    /// JSON configuration document; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set K=2` or `--set system.p_max_dbm=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "bspd-out", value_name = "DIR")]
    pub out: PathBuf,

    /// Experiment seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One BSPD run on the first realization, with its iteration trace.
    Run,
    /// Every configured scheme over a parameter sweep.
    Sweep(SweepArgs),
    /// Every scheme at fixed parameters, with a summary table.
    Compare,
    /// Self-checks of the solver and oracles at reduced scale.
    Validate,
    /// Regenerate figure data from stored records.
    Emit(EmitArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Swept parameter: M, N or P_max. Overrides `experiment.sweep`.
    #[arg(long, requires = "values")]
    pub param: Option<String>,
    /// Comma-separated values; dBm for P_max.
    #[arg(long, value_delimiter = ',', requires = "param")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    /// Records file written by `sweep` or `compare` (.csv or .json).
    #[arg(long, value_name = "PATH")]
    pub records: PathBuf,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(seed) = self.seed {
            o.push(format!("experiment.seed={seed}"));
        }
        if let Command::Sweep(SweepArgs { param: Some(p), values: Some(v) }) = &self.command {
            o.push(format!(
                "experiment.sweep={}",
                serde_json::json!({ "param": p, "values": v })
            ));
        }
        o
    }

    pub fn log_level(&self) -> log::LevelFilter {
        if self.quiet {
            log::LevelFilter::Error
        } else if self.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    write_text(path, &(text + "\n"))
}

/// Creates `dir` and writes the resolved configuration into it.
fn prepare(dir: &Path, settings: &Settings) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.json"), &(settings.to_json() + "\n"))
}

fn write_outcome(dir: &Path, out: &ExperimentOutcome) -> Result<PathBuf> {
    let records = dir.join("records.csv");
    write_records(&out.records, &records, Format::Csv)?;
    write_json(&dir.join("failures.json"), &out.failures)?;
    for (scheme, n) in out.failure_counts() {
        log::warn!("{scheme}: {n} failed realizations");
    }
    Ok(records)
}

/// What a subcommand did, for the caller to print.
#[derive(Debug)]
pub struct Report {
    pub dir: PathBuf,
    pub text: String,
    pub success: bool,
}

fn cmd_run(settings: &Settings, dir: &Path) -> Result<Report> {
    prepare(dir, settings)?;
    let spec = &settings.experiment;
    let cfg = &spec.cfg;
    let seed = realization_seed(spec.seed, 0);
    let ch = generate_channel(cfg, &realization_topology(spec, 0), seed)?;
    let opts = BspdOptions { seed, ..spec.bspd };
    let trace_path = dir.join("trace.jsonl");
    let save_trace = |trace: &[crate::bspd::IterationTrace]| -> Result<()> {
        let f = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        write_trace_jsonl(trace, BufWriter::new(f)).map_err(|e| Error::io(&trace_path, e))
    };
    let run = match run_bspd(cfg, &ch, &spec.schedule, &opts, None) {
        Ok(run) => run,
        Err(abort) => {
            save_trace(&abort.trace)?;
            return Err(abort.error);
        }
    };
    save_trace(&run.trace)?;
    write_json(&dir.join("transceiver.json"), &run.theta)?;

    let sinr = evaluate_sinr(&run.theta, &ch, cfg, seed)?;
    let ber = worst_tag_ber(&run.theta, &ch, cfg, spec.ber_slots, seed)?;
    let residual = stationarity_residual(&run.theta, &ch, cfg)?;
    let record = MetricRecord {
        scheme: Scheme::Bspd,
        sweep_param: String::new(),
        sweep_value: None,
        realization: 0,
        gamma_s: sinr.gamma_s,
        worst_gamma: sinr.worst_tag(),
        utility: BarrierUtility::from_config(cfg).value_extended(&sinr),
        dl_rate: dl_rate(sinr.gamma_s),
        worst_ber: ber.worst,
        ber_halfwidth: ber.halfwidth,
        gamma_tags: sinr.gamma.clone(),
        iterations: run.iterations,
        wall_s: run.trace.last().map_or(0.0, |t| t.wall_s),
    };
    write_json(&dir.join("metrics.json"), &record)?;
    let text = format!(
        "{} iterations ({}), stationarity residual {:.4e}\n\
         DL SINR {:.4}  rate {:.4} b/s/Hz  worst tag SINR {:.4e}  worst BER {:.4e} (+/- {:.1e})\n",
        run.iterations,
        if run.converged { "stopping rule met" } else { "iteration limit" },
        residual,
        record.gamma_s,
        record.dl_rate,
        record.worst_gamma,
        record.worst_ber,
        record.ber_halfwidth,
    );
    Ok(Report { dir: dir.to_path_buf(), text, success: true })
}

fn cmd_sweep(settings: &Settings, out: &Path) -> Result<Report> {
    let spec = &settings.experiment;
    let Some(sweep) = &spec.sweep else {
        return Err(Error::Config(vec![
            "no sweep configured: set experiment.sweep or pass --param and --values".into(),
        ]));
    };
    let dir = out.join(format!("sweep_{}", sweep.param));
    prepare(&dir, settings)?;
    let outcome = run_experiment(spec)?;
    write_outcome(&dir, &outcome)?;
    let figures = emit_figures(&outcome.records, &dir)?;
    let mut text = String::new();
    for m in [crate::harness::Metric::GammaS, crate::harness::Metric::WorstGamma] {
        text.push_str(&format!("{} vs {}:\n", m.name(), sweep.param));
        for p in crate::harness::figure_series(&outcome.records, m) {
            text.push_str(&format!("  {:<10} {:>12.6e} {:>14.6e} +/- {:.2e}\n", p.scheme.name(), p.x, p.mean, p.stderr));
        }
    }
    text.push_str(&format!("{} records, {} failures, {} figure files\n", outcome.records.len(), outcome.failures.len(), figures.len()));
    Ok(Report { dir, text, success: true })
}

fn cmd_compare(settings: &Settings, out: &Path) -> Result<Report> {
    let dir = out.join("compare");
    prepare(&dir, settings)?;
    let mut spec = settings.experiment.clone();
    spec.sweep = None;
    let outcome = run_experiment(&spec)?;
    write_outcome(&dir, &outcome)?;
    let rows = summarize(&outcome.records);
    write_json(&dir.join("summary.json"), &rows)?;
    let mut text = format_summary(&rows);
    if !outcome.failures.is_empty() {
        text.push_str(&format!("{} failed scheme runs (see failures.json)\n", outcome.failures.len()));
    }
    Ok(Report { dir, text, success: true })
}

fn cmd_validate(settings: &Settings, out: &Path) -> Result<Report> {
    let dir = out.join("validate");
    prepare(&dir, settings)?;
    let results = checks::run_all(settings);
    write_json(&dir.join("checks.json"), &results)?;
    let mut text = String::new();
    for r in &results {
        text.push_str(&format!(
            "{} {} ({:.1} s): {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    text.push_str(&format!("{} of {} checks passed\n", results.len() - failed, results.len()));
    Ok(Report { dir, text, success: failed == 0 })
}

fn cmd_emit(args: &EmitArgs, out: &Path, explicit_out: bool) -> Result<Report> {
    let records = read_records(&args.records, Format::from_path(&args.records))?;
    let dir = if explicit_out {
        out.to_path_buf()
    } else {
        args.records.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    };
    create_dir(&dir)?;
    let paths = emit_figures(&records, &dir)?;
    let text = paths.iter().map(|p| format!("wrote {}\n", p.display())).collect();
    Ok(Report { dir, text, success: true })
}

/// Executes the parsed command line.
pub fn dispatch(cli: &Cli) -> Result<Report> {
    if let Command::Emit(args) = &cli.command {
        let explicit = cli.out != Path::new("bspd-out") || std::env::var_os(OUT_DIR_ENV).is_some();
        return cmd_emit(args, &cli.out, explicit);
    }
    let settings = load_config(cli.config.as_deref(), &cli.overrides())?;
    match &cli.command {
        Command::Run => cmd_run(&settings, &cli.out.join("run")),
        Command::Sweep(_) => cmd_sweep(&settings, &cli.out),
        Command::Compare => cmd_compare(&settings, &cli.out),
        Command::Validate => cmd_validate(&settings, &cli.out),
        Command::Emit(_) => unreachable!(),
    }
}
