//! Command-line surface.
//!
//! Exit codes: 0 on success, 2 when a run finished but a monitored bound
//! (or, for `verify`, a structural hypothesis) failed, 1 on any error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::config::{parse_config, Config};
use crate::error::{Error, Result};
use crate::fluid::PressureSolve;
use crate::model::{check_structural_hypotheses, classify_regime};
use crate::output::{write_sweep, write_timeseries, Snapshot};
use crate::stepper::{initial_data, run_with_observer};
use crate::sweep::{epsilon_sweep, select_interpolation_exponents, SweepSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "chemoflow", version, about = "Regularized chemotaxis-fluid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write the time series (and snapshots).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configuration for every eps in the sweep list.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the structural hypotheses and classify the regime without stepping.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the regime and estimate exponents for (m, mu, alpha).
    Exponents {
        #[arg(long)]
        m: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        alpha: f64,
    },
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match dispatch(parsed.command, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command, out: &mut impl Write) -> Result<i32> {
    match cmd {
        Command::Run { config, out: dir } => run_cmd(&load(&config)?, dir, out),
        Command::Sweep { config, out: dir } => sweep_cmd(&load(&config)?, dir, out),
        Command::Verify { config } => verify_cmd(&load(&config)?, out),
        Command::Exponents { m, mu, alpha } => exponents_cmd(m, mu, alpha, out),
    }
}

fn load(path: &Path) -> Result<Config> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn out_dir(cfg: &Config, dir: Option<PathBuf>) -> Result<PathBuf> {
    let dir = dir.unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run_cmd(cfg: &Config, dir: Option<PathBuf>, out: &mut impl Write) -> Result<i32> {
    let dir = out_dir(cfg, dir)?;
    let setup = cfg.run_setup()?;
    let interval = cfg.output.snapshot_interval;
    let mut next_snapshot = 0.0;
    let mut index = 0usize;
    let tol = 1e-9 * setup.control.output_interval;
    let result = run_with_observer(&setup, false, |state| {
        if interval > 0.0 && state.t + tol >= next_snapshot {
            let path = dir.join(format!("snapshot_{index:05}.cnsf"));
            Snapshot::from_state(state).save(&path)?;
            index += 1;
            while next_snapshot <= state.t + tol {
                next_snapshot += interval;
            }
        }
        Ok(())
    })?;
    let csv = dir.join(&cfg.output.csv);
    let mut w = BufWriter::new(File::create(&csv)?);
    write_timeseries(&mut w, &result.rows)?;
    w.flush()?;
    info!("wrote {} rows to {}", result.rows.len(), csv.display());

    writeln!(out, "steps {}  t_end {}", result.steps.len(), result.final_state.t)?;
    for check in &result.bounds.checks {
        writeln!(
            out,
            "{:<24} {}  worst_margin {:e} at t = {}",
            check.name,
            if check.held { "held" } else { "VIOLATED" },
            check.worst_margin,
            check.worst_t
        )?;
    }
    if result.bounds.all_held() {
        Ok(EXIT_OK)
    } else {
        for v in result.bounds.violations() {
            warn!("bound `{}` violated at t = {}", v.name, v.worst_t);
        }
        Ok(EXIT_VIOLATION)
    }
}

fn sweep_cmd(cfg: &Config, dir: Option<PathBuf>, out: &mut impl Write) -> Result<i32> {
    let dir = out_dir(cfg, dir)?;
    let setup = cfg.run_setup()?;
    let settings = SweepSettings {
        threads: SweepSettings::threads_from_env(),
        ..cfg.sweep.clone()
    };
    let report = epsilon_sweep(&setup, &settings)?;
    let path = dir.join("sweep.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    write_sweep(&mut w, &report)?;
    w.flush()?;
    for v in &report.uniformity {
        writeln!(out, "uniform {:<14} ratio {:e}  {}", v.quantity, v.ratio, held(v.held))?;
    }
    for v in &report.cauchy {
        writeln!(
            out,
            "cauchy  {:<14} inversions {}  {}",
            v.field,
            v.inversions,
            held(v.held)
        )?;
    }
    let ok = report.all_runs_held() && report.bounded() && report.cauchy_trend();
    Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
}

fn held(ok: bool) -> &'static str {
    if ok {
        "held"
    } else {
        "FAILED"
    }
}

fn verify_cmd(cfg: &Config, out: &mut impl Write) -> Result<i32> {
    let setup = cfg.run_setup()?;
    let regime = setup.params.regime()?;
    let state = initial_data(&setup.initial, &setup.grid, &mut PressureSolve::default())?;
    let c_max = state.c.max();
    if !(c_max > 0.0) {
        return Err(Error::InitialData("c0 must be positive somewhere".into()));
    }
    let report = check_structural_hypotheses(&setup.params, c_max, cfg.control.hypothesis_samples)?;
    writeln!(out, "regime {}", regime.tag)?;
    writeln!(out, "c_max {c_max:e}")?;
    for c in &report.checks {
        writeln!(
            out,
            "{:<24} {}  worst {:e} at s = {:e}",
            c.name,
            held(c.passed),
            c.worst_value,
            c.worst_point
        )?;
    }
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_VIOLATION })
}

/// Writes `x` as `p/q` when it equals such a fraction with a small denominator.
pub fn fraction(x: f64) -> String {
    for q in 1..=24u32 {
        let p = (x * f64::from(q)).round();
        if (p / f64::from(q) - x).abs() <= 1e-12 * x.abs().max(1.0) {
            return if q == 1 {
                format!("{p}")
            } else {
                format!("{p}/{q}")
            };
        }
    }
    format!("{x}")
}

fn exponents_cmd(m: f64, mu: f64, alpha: f64, out: &mut impl Write) -> Result<i32> {
    let regime = classify_regime(m, mu, alpha)?;
    writeln!(out, "regime {}", regime.tag)?;
    writeln!(out, "delta_mu0 {}", regime.delta_mu0)?;
    let Some(e) = regime.exponents else {
        writeln!(out, "no exponents: need m > 2/3, or mu > 0 with alpha > 4/3")?;
        return Ok(EXIT_OK);
    };
    writeln!(out, "p1={}", fraction(e.p1))?;
    writeln!(out, "p2={}", fraction(e.p2))?;
    writeln!(out, "p3={}", fraction(e.p3))?;
    let (r, q) = select_interpolation_exponents(e.p1)?;
    writeln!(out, "r={r}")?;
    writeln!(out, "q={q}")?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions() {
        assert_eq!(fraction(5.0 / 3.0), "5/3");
        assert_eq!(fraction(2.0), "2");
        assert_eq!(fraction(1.25), "5/4");
        assert_eq!(fraction(std::f64::consts::PI), std::f64::consts::PI.to_string());
    }

    #[test]
    fn exponents_output() {
        let mut buf = Vec::new();
        assert_eq!(exponents_cmd(1.0, 0.0, 2.0, &mut buf).unwrap(), EXIT_OK);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("regime Case1"));
        assert!(text.contains("p1=5/3"));
        assert!(text.contains("p2=5/4"));
        assert!(text.contains("p3=5/4"));
    }
}
