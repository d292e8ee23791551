//! Command-line front end: `validate`, `run-micro`, `run-limit`, `sweep` and
//! `layer`, each driven by one config file.
//!
//! Exit codes: 0 on success, 1 when the config cannot be read or is
//! invalid, 2 when a run fails. `SKT_OUTPUT_DIR` overrides `output.dir`.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::diagnostics::{compute_q, energy_ea, energy_eb};
use crate::error::{Error, Result};
use crate::experiments::{convergence_sweep, emit_csv, initial_layer_study, to_csv_string, CsvTable, RateFit};
use crate::grid::{integrate, l2_norm, Field, InteriorMask};
use crate::integrator::{run, LimitSystem, MicroSystem};
use config::{parse_config, RunConfig};

pub const OUTPUT_DIR_ENV: &str = "SKT_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "skt", version, about = "Fast-reaction approximation of the triangular SKT system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// Integrate the microscopic system at `run.eps`.
    RunMicro { config: PathBuf },
    /// Integrate the cross-diffusion system.
    RunLimit { config: PathBuf },
    /// Convergence sweep over `sweep.eps_list`.
    Sweep { config: PathBuf },
    /// Initial-layer study over `sweep.eps_list`.
    Layer { config: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::RunMicro { .. } => "run-micro",
            Command::RunLimit { .. } => "run-limit",
            Command::Sweep { .. } => "sweep",
            Command::Layer { .. } => "layer",
        }
    }

    fn config(&self) -> &Path {
        match self {
            Command::Validate { config }
            | Command::RunMicro { config }
            | Command::RunLimit { config }
            | Command::Sweep { config }
            | Command::Layer { config } => config,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let path = cli.command.config();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_INVALID;
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors {
                eprintln!("{}: {e}", path.display());
            }
            eprintln!("error: {} problem(s) in {}", errors.len(), path.display());
            return EXIT_INVALID;
        }
    };
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output_dir = PathBuf::from(dir);
    }
    if let Command::Validate { .. } = cli.command {
        print!("{}", cfg.to_toml());
        return EXIT_OK;
    }
    match execute(&cli.command, &cfg) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    command: &'a str,
    config_sha256: String,
    version: &'a str,
    wall_time_seconds: f64,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fits: Vec<(String, RateFit)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<ReferenceInfo>,
    effective_config: String,
}

#[derive(Debug, Serialize)]
struct ReferenceInfo {
    dt: f64,
    dt_reference: f64,
    self_check_error: f64,
    reference_limited: bool,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-sample summary table written by the single-run commands.
struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<f64>>,
}

impl CsvTable for Table {
    fn header(&self) -> &'static [&'static str] {
        self.header
    }

    fn records(&self) -> Vec<Vec<f64>> {
        self.rows.clone()
    }
}

fn field_table(header: &'static [&'static str], fields: &[&Field]) -> Table {
    let g = *fields[0].grid();
    let rows = (0..g.len())
        .map(|i| {
            let p = g.point(i);
            let mut row: Vec<f64> = p[..g.dim()].to_vec();
            row.extend(fields.iter().map(|f| f.values()[i]));
            row
        })
        .collect();
    Table { header, rows }
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plan = &cfg.plan;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut fits = Vec::new();
    let mut reference = None;
    let mut emit = |name: &str, table: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        table(&path)?;
        outputs.push(path);
        Ok(())
    };

    match cmd {
        Command::Validate { .. } => unreachable!("validate does not compute"),
        Command::RunMicro { .. } => {
            let spec = plan.spec()?;
            let m0 = plan.initial_micro(cfg.run_eps, plan.well_prepared)?;
            let sys = MicroSystem {
                params: plan.params,
                spec,
                cfg: plan.step,
            };
            let traj = run(&sys, m0, plan.t_final, plan.step.dt, &plan.sample_times())?;
            let full = InteriorMask::full(plan.grid);
            let mut rows = Vec::new();
            for (t, s) in traj.sample_times.iter().zip(&traj.snapshots) {
                let u = s.total();
                rows.push(vec![
                    *t,
                    integrate(&u, &full)?,
                    l2_norm(&compute_q(s, &spec), &full)?,
                    energy_ea(s, &spec),
                    energy_eb(s, &spec),
                    u.min(),
                    u.max(),
                    s.v.min(),
                    s.v.max(),
                ]);
            }
            let samples = Table {
                header: &["t", "mass_u", "Q_L2", "E_A", "E_B", "u_min", "u_max", "v_min", "v_max"],
                rows,
            };
            let last = traj.last();
            let header: &'static [&'static str] = if plan.grid.dim() == 1 {
                &["x", "u_A", "u_B", "v"]
            } else {
                &["x", "y", "u_A", "u_B", "v"]
            };
            let state = field_table(header, &[&last.ua, &last.ub, &last.v]);
            emit("micro_samples.csv", &|p| emit_csv(&samples, p))?;
            emit("micro_final.csv", &|p| emit_csv(&state, p))?;
            println!(
                "run-micro: eps {} to t = {} in {} steps, final Q_L2 {:.3e}",
                cfg.run_eps,
                last.t,
                traj.step_sizes.len(),
                l2_norm(&compute_q(last, &spec), &full)?
            );
        }
        Command::RunLimit { .. } => {
            let sys = LimitSystem {
                params: plan.params,
                cfg: plan.step,
            };
            let traj = run(&sys, plan.initial_limit(), plan.t_final, plan.step.dt, &plan.sample_times())?;
            let full = InteriorMask::full(plan.grid);
            let mut rows = Vec::new();
            for (t, s) in traj.sample_times.iter().zip(&traj.snapshots) {
                rows.push(vec![
                    *t,
                    integrate(&s.u, &full)?,
                    integrate(&s.v, &full)?,
                    s.u.min(),
                    s.u.max(),
                    s.v.min(),
                    s.v.max(),
                ]);
            }
            let samples = Table {
                header: &["t", "mass_u", "mass_v", "u_min", "u_max", "v_min", "v_max"],
                rows,
            };
            let last = traj.last();
            let header: &'static [&'static str] = if plan.grid.dim() == 1 {
                &["x", "u", "v"]
            } else {
                &["x", "y", "u", "v"]
            };
            let state = field_table(header, &[&last.u, &last.v]);
            emit("limit_samples.csv", &|p| emit_csv(&samples, p))?;
            emit("limit_final.csv", &|p| emit_csv(&state, p))?;
            println!("run-limit: t = {} in {} steps", last.t, traj.step_sizes.len());
        }
        Command::Sweep { .. } => {
            let report = match convergence_sweep(plan) {
                Ok(r) => r,
                Err(Error::SweepAborted { partial, source }) => {
                    let path = dir.join("rates.partial.csv");
                    let rows = Table {
                        header: &crate::experiments::RateRow::CSV_HEADER,
                        rows: partial.iter().map(|r| r.csv_values().to_vec()).collect(),
                    };
                    emit_csv(&rows, &path)?;
                    eprintln!("partial rows written to {}", path.display());
                    return Err(Error::SweepAborted { partial, source });
                }
                Err(e) => return Err(e),
            };
            emit("rates.csv", &|p| emit_csv(&report, p))?;
            for (q, f) in &report.fits {
                println!(
                    "{q}: slope {:.4} +/- {:.4} (r2 {:.4}, {} points)",
                    f.slope, f.slope_ci95, f.r_squared, f.points_used
                );
            }
            if report.reference_limited {
                println!("warning: reference-limited (self-check error {:.3e})", report.reference_error);
            }
            fits = report.fits.clone();
            reference = Some(ReferenceInfo {
                dt: report.dt,
                dt_reference: report.dt_reference,
                self_check_error: report.reference_error,
                reference_limited: report.reference_limited,
            });
        }
        Command::Layer { .. } => {
            let rows = initial_layer_study(plan)?;
            emit("layer.csv", &|p| emit_csv(rows.as_slice(), p))?;
            print!("{}", to_csv_string(rows.as_slice()));
        }
    }

    let effective = cfg.to_toml();
    let provenance = Provenance {
        command: cmd.name(),
        config_sha256: sha256_hex(&effective),
        version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        fits,
        reference,
        effective_config: effective,
    };
    let json = serde_json::to_string_pretty(&provenance).expect("provenance serializes");
    write_text(&dir.join(format!("{}.provenance.json", cmd.name())), &json)
}
