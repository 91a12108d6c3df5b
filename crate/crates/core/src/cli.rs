//! Command-line front end.
//!
//! Exit status: 0 on success, 2 when a screening or bound is inconclusive,
//! 1 on any error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cct::{
    log_grid, procedure1, procedure2, robust_screen, screen, default_grid, CctEstimate, Procedure, Scenario,
    ScreenOptions,
};
use crate::error::{Error, Result};
use crate::lmi::{solve_certificate, LmiSolveConfig, SolveOutcome};
use crate::lyapunov::{compute_vmin, LyapunovFunction};
use crate::netmodel::{parse_network_with, Fluctuation, NetworkModel, ParseOptions};
use crate::sim::{classify, simulate_clearing, true_cct, SimParams, TrueCctConfig};

#[derive(Parser, Debug)]
#[command(name = "cct-screen", version, about = "Certified critical clearing time bounds for line faults")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct NetworkArgs {
    /// Network document (JSON).
    #[arg(long)]
    network: PathBuf,
    /// Angle gap used for the sector bound; must not be below the equilibrium gap.
    #[arg(long)]
    lambda: Option<f64>,
    /// Voltage fluctuation band: every |V| within (1 +- rho) V0.
    #[arg(long, value_name = "RHO")]
    voltage_fluctuation: Option<f64>,
    /// Nominal voltage V0 of the fluctuation band.
    #[arg(long, default_value_t = 1.0, requires = "voltage_fluctuation")]
    nominal_voltage: f64,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Single gamma.
    #[arg(long, conflicts_with = "gamma_grid")]
    gamma: Option<f64>,
    /// Log-spaced grid `lo:hi:count`.
    #[arg(long, value_name = "LO:HI:COUNT")]
    gamma_grid: Option<String>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Post-fault duration in seconds.
    #[arg(long, default_value_t = 20.0)]
    horizon: f64,
    /// Stability tolerance on the final deviation.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ProcedureArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Robust,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Post-fault (and pre-fault) equilibrium, angle gap and sector slope.
    Equilibrium {
        #[command(flatten)]
        net: NetworkArgs,
    },
    /// Solves the certificate at a fixed gamma and reports its bound.
    Certify {
        #[command(flatten)]
        net: NetworkArgs,
        /// Faulted line `u-v`; several comma-separated lines share one certificate.
        #[arg(long)]
        line: String,
        #[arg(long)]
        gamma: f64,
        /// Writes the certificate document here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Best bound for one contingency by procedure 1 or 2.
    Cct {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long)]
        line: String,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value = "1")]
        procedure: ProcedureArg,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the certificate document here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Screens a contingency list; CSV report on stdout or `--output`.
    Screen {
        #[command(flatten)]
        net: NetworkArgs,
        /// `all` or comma-separated lines `u-v,u-v`.
        #[arg(long)]
        contingencies: String,
        /// Fault duration in seconds to certify.
        #[arg(long)]
        clearing_time: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value = "1")]
        procedure: ProcedureArg,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Writes the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Writes the full report (with metadata) as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Trajectory CSV of a fault cleared after `--clearing-time`.
    Simulate {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long)]
        line: String,
        #[arg(long)]
        clearing_time: f64,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulated critical clearing time by bisection.
    TrueCct {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long)]
        line: String,
        /// Clearing time known to be stable.
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        /// Largest clearing time tried.
        #[arg(long, default_value_t = 10.0)]
        cap: f64,
        /// Bisection width.
        #[arg(long, default_value_t = 1e-3)]
        bisect_tol: f64,
        #[command(flatten)]
        sim: SimArgs,
    },
}

/// Six significant digits for summaries.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

pub fn parse_line(text: &str) -> Result<(i64, i64)> {
    let bad = || Error::InvalidArgument(format!("line designation '{text}' is not of the form u-v"));
    let (u, v) = text.trim().split_once('-').ok_or_else(bad)?;
    Ok((u.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?))
}

fn parse_lines(text: &str) -> Result<Vec<(i64, i64)>> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(parse_line).collect()
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("gamma grid '{text}' is not of the form lo:hi:count"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else { return Err(bad()) };
    log_grid(
        lo.parse().map_err(|_| bad())?,
        hi.parse().map_err(|_| bad())?,
        count.parse().map_err(|_| bad())?,
    )
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("--{name} must be positive and finite, got {v}")))
    }
}

fn load(net: &NetworkArgs) -> Result<(String, Scenario)> {
    let text = fs::read_to_string(&net.network)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", net.network.display())))?;
    let fluctuation = net
        .voltage_fluctuation
        .map(|rho| Ok::<_, Error>(Fluctuation { rho: positive("voltage-fluctuation", rho)?, v0: net.nominal_voltage }))
        .transpose()?;
    let model = parse_network_with(&text, ParseOptions { fluctuation })?;
    if let Some(l) = net.lambda {
        positive("lambda", l)?;
    }
    Ok((text, Scenario::new(model, net.lambda)?))
}

fn grid_of(grid: &GridArgs, sc: &Scenario, cfg: &LmiSolveConfig) -> Result<Vec<f64>> {
    match (&grid.gamma, &grid.gamma_grid) {
        (Some(g), _) => Ok(vec![positive("gamma", *g)?]),
        (None, Some(text)) => parse_grid(text),
        (None, None) => Ok(default_grid(&sc.mats, cfg)),
    }
}

fn write_out(path: &Option<PathBuf>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn vector(v: impl Iterator<Item = f64>) -> String {
    format!("[{}]", v.map(sig6).collect::<Vec<_>>().join(", "))
}

fn bus_ids(model: &NetworkModel) -> String {
    model.buses[..model.n].iter().map(|b| b.id.to_string()).collect::<Vec<_>>().join(", ")
}

fn print_estimate(out: &mut dyn Write, est: &CctEstimate) -> Result<()> {
    writeln!(out, "gamma: {}", sig6(est.gamma))?;
    writeln!(out, "vmin: {}", sig6(est.vmin))?;
    writeln!(out, "v_pre: {}", sig6(est.v_pre))?;
    writeln!(out, "bound: {} s", sig6(est.bound))?;
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = LmiSolveConfig::default();
    match cli.command {
        Command::Equilibrium { net } => {
            let (_, sc) = load(&net)?;
            writeln!(out, "buses: [{}]", bus_ids(&sc.model))?;
            writeln!(out, "delta_post: {}", vector(sc.eq_post.angles.iter().copied()))?;
            if sc.eq_pre.angles != sc.eq_post.angles {
                writeln!(out, "delta_pre: {}", vector(sc.eq_pre.angles.iter().copied()))?;
            }
            writeln!(out, "gap: {}", sig6(sc.eq_post.gap))?;
            writeln!(out, "lambda: {}", sig6(sc.sector.lambda))?;
            writeln!(out, "beta: {}", sig6(sc.sector.beta))?;
            Ok(0)
        }
        Command::Certify { net, line, gamma, output } => {
            let (_, sc) = load(&net)?;
            let lines = parse_lines(&line)?;
            let sel = sc.selector(&lines)?;
            match solve_certificate(&sc.mats, sc.beta(), positive("gamma", gamma)?, &sel, &cfg)? {
                SolveOutcome::Infeasible { lower_bound } => {
                    writeln!(out, "infeasible at gamma {} (margin {})", sig6(gamma), sig6(lower_bound))?;
                    Ok(2)
                }
                SolveOutcome::Feasible(cert) => {
                    let l = LyapunovFunction::new(&cert, &sc.mats);
                    let region = compute_vmin(&l)?;
                    let (v_pre, _, bound) = crate::cct::cct_bound(&l, region.vmin, &sc.x_pre)?;
                    writeln!(out, "trace_q: {}", sig6(cert.q.trace()))?;
                    writeln!(out, "k: {}", vector(cert.k.iter().copied()))?;
                    writeln!(out, "h: {}", vector(cert.h.iter().copied()))?;
                    writeln!(out, "gamma: {}", sig6(gamma))?;
                    writeln!(out, "vmin: {}", sig6(region.vmin))?;
                    writeln!(out, "v_pre: {}", sig6(v_pre))?;
                    writeln!(out, "bound: {} s", sig6(bound))?;
                    if let Some(p) = output {
                        fs::write(p, cert.to_document())?;
                    }
                    Ok(if bound > 0.0 { 0 } else { 2 })
                }
            }
        }
        Command::Cct { net, line, grid, procedure, samples, seed, output } => {
            let (_, sc) = load(&net)?;
            let lines = parse_lines(&line)?;
            let grid = grid_of(&grid, &sc, &cfg)?;
            let best = match procedure {
                ProcedureArg::Two => {
                    let r = procedure2(&sc, &lines, samples, &grid, seed, &cfg)?;
                    let covered = r.samples.iter().filter(|s| s.covered).count();
                    writeln!(out, "procedure: 2 (surrogate adaptation)")?;
                    writeln!(out, "radius: {}", sig6(r.radius))?;
                    writeln!(out, "samples covered: {covered}/{}", r.samples.len())?;
                    r.best
                }
                _ => {
                    writeln!(out, "procedure: 1")?;
                    procedure1(&sc, &lines, &grid, &cfg)?.best
                }
            };
            match best {
                Some(est) => {
                    print_estimate(out, &est)?;
                    if let Some(p) = output {
                        fs::write(p, est.certificate.to_document())?;
                    }
                    Ok(if est.bound > 0.0 { 0 } else { 2 })
                }
                None => {
                    writeln!(out, "inconclusive: no feasible certificate")?;
                    Ok(2)
                }
            }
        }
        Command::Screen { net, contingencies, clearing_time, grid, procedure, samples, seed, jobs, output, report } => {
            let (text, sc) = load(&net)?;
            let lines = if contingencies.trim() == "all" {
                (0..sc.model.n_edges()).map(|e| sc.model.edge_ids(e)).collect()
            } else {
                parse_lines(&contingencies)?
            };
            let grid = grid_of(&grid, &sc, &cfg)?;
            let opts = ScreenOptions {
                clearing_time,
                procedure: match procedure {
                    ProcedureArg::One => Procedure::One,
                    ProcedureArg::Two => Procedure::Two,
                    ProcedureArg::Robust => Procedure::Robust,
                },
                grid: Some(grid),
                samples,
                seed,
                jobs,
                lmi: cfg,
            };
            let rep = match procedure {
                ProcedureArg::Robust => robust_screen(&sc, &text, &lines, &opts)?,
                _ => screen(&sc, &text, &lines, &opts)?,
            };
            write_out(&output, &rep.to_csv(), out)?;
            if let Some(p) = report {
                fs::write(p, rep.to_json())?;
            }
            Ok(if rep.any_inconclusive() { 2 } else { 0 })
        }
        Command::Simulate { net, line, clearing_time, sim, output } => {
            let (_, sc) = load(&net)?;
            let (u, v) = parse_line(&line)?;
            let edge = sc.model.edge_index(u, v)?;
            let params = SimParams { dt: sim.dt, horizon: sim.horizon, tol: sim.tol, ..SimParams::default() };
            if !(clearing_time >= 0.0) {
                return Err(Error::InvalidArgument("--clearing-time must be non-negative".into()));
            }
            let traj = simulate_clearing(&sc.model, &sc.eq_post, edge, &sc.x_pre, clearing_time, &params, false)?;
            let verdict = classify(&traj, &sc.model, &sc.eq_post, params.tol, params.escape);
            write_out(&output, &traj.to_csv(&sc.model, &sc.eq_post), out)?;
            eprintln!("verdict: {:?}, final deviation {}", verdict.kind, sig6(verdict.final_deviation));
            Ok(0)
        }
        Command::TrueCct { net, line, start, cap, bisect_tol, sim } => {
            let (_, sc) = load(&net)?;
            let (u, v) = parse_line(&line)?;
            let edge = sc.model.edge_index(u, v)?;
            let cfg = TrueCctConfig {
                start,
                cap: positive("cap", cap)?,
                tol: positive("bisect-tol", bisect_tol)?,
                sim: SimParams { dt: sim.dt, horizon: sim.horizon, tol: sim.tol, ..SimParams::default() },
                max_horizon: 8.0 * sim.horizon,
            };
            match true_cct(&sc.model, &sc.eq_post, edge, &sc.x_pre, &cfg) {
                Ok(t) => {
                    writeln!(out, "true_cct: {} s", sig6(t))?;
                    Ok(0)
                }
                Err(Error::CctAboveCap(c)) => {
                    writeln!(out, "true_cct: >= {} s (stable at the cap)", sig6(c))?;
                    Ok(2)
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
                    1
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(0.11751234), "0.117512");
        assert_eq!(sig6(1.06), "1.06000");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.8), "1.23457e6");
        assert_eq!(sig6(-0.0999312), "-0.0999312");
        assert_eq!(sig6(7e-6), "7.00000e-6");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn line_and_grid_parsing() {
        assert_eq!(parse_line("6-4").unwrap(), (6, 4));
        assert_eq!(parse_line(" 1 - 2 ").unwrap(), (1, 2));
        assert!(parse_line("6").is_err());
        assert!(parse_line("a-b").is_err());
        assert_eq!(parse_lines("1-2,2-3").unwrap(), vec![(1, 2), (2, 3)]);
        let g = parse_grid("1e-8:1e-4:40").unwrap();
        assert_eq!(g.len(), 40);
        assert_eq!((g[0], g[39]), (1e-8, 1e-4));
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("0:1:3").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        let mut buf = Vec::new();
        assert_eq!(run_with(["cct-screen", "bogus"], &mut buf), 1);
        assert_eq!(run_with(["cct-screen", "equilibrium"], &mut buf), 1);
        assert_eq!(run_with(["cct-screen", "equilibrium", "--network", "/nonexistent.json"], &mut buf), 1);
        assert_eq!(run_with(["cct-screen", "--help"], &mut buf), 0);
    }
}
