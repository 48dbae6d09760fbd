//! `essopt`: solve, audit and advise on storage dispatch problems.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 infeasible,
//! 3 audit failure, 4 any other solver failure.

mod commands;
mod prices;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use essopt::advise::{DeviceKind, GridLevel, NetworkChoice};
use essopt::block::EssModel;
use essopt::ess::HullVariant;
use essopt::network::{NetworkKind, ObjectiveKind};

#[derive(Debug, Parser)]
#[command(name = "essopt", version, about = "Multi-period dispatch with energy storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build, solve and audit one dispatch problem.
    Solve(SolveArgs),
    /// Recommend storage models for a network model, grid level and device type.
    Advise(AdviseArgs),
    /// Audit a schedule CSV against a case.
    Audit(AuditArgs),
    /// Sample the battery loss surface and check the convex hull rows.
    HullCheck(HullArgs),
}

fn choice<T: Copy>(all: &[T], name: fn(T) -> &'static str, s: &str) -> Result<T, String> {
    all.iter().copied().find(|v| name(*v) == s).ok_or_else(|| {
        let names: Vec<&str> = all.iter().map(|v| name(*v)).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn ess_model(s: &str) -> Result<EssModel, String> {
    choice(&EssModel::ALL, EssModel::as_str, s)
}

fn network_kind(s: &str) -> Result<NetworkKind, String> {
    choice(&NetworkKind::ALL, NetworkKind::as_str, s)
}

fn objective_kind(s: &str) -> Result<ObjectiveKind, String> {
    choice(&ObjectiveKind::ALL, ObjectiveKind::as_str, s)
}

fn hull_variant(s: &str) -> Result<HullVariant, String> {
    HullVariant::parse(s).ok_or_else(|| "expected as_printed or symmetric".to_string())
}

fn network_choice(s: &str) -> Result<NetworkChoice, String> {
    choice(&NetworkChoice::ALL, NetworkChoice::as_str, s)
}

fn grid_level(s: &str) -> Result<GridLevel, String> {
    choice(&GridLevel::ALL, GridLevel::as_str, s)
}

fn device_kind(s: &str) -> Result<DeviceKind, String> {
    choice(&DeviceKind::ALL, DeviceKind::as_str, s)
}

/// Case loading plus horizon overrides, shared by every case-reading command.
#[derive(Debug, Args)]
struct CaseArgs {
    #[arg(long)]
    case: PathBuf,
    /// Override the number of periods; constant loads are broadcast.
    #[arg(long)]
    periods: Option<usize>,
    /// Override the period length, hours.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Debug, Args)]
struct AuditTolArgs {
    /// Power and energy tolerance of the audit, MW / MWh.
    #[arg(long, default_value_t = 1e-6)]
    audit_tol: f64,
    /// Accepted sum over periods of min(p_ch, p_disch), MW.
    #[arg(long, default_value_t = 1e-6)]
    audit_complementarity_tol: f64,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, value_parser = ess_model)]
    ess_model: EssModel,
    #[arg(long, value_parser = network_kind)]
    network: NetworkKind,
    #[arg(long, value_parser = objective_kind, default_value = "cost")]
    objective: ObjectiveKind,
    /// CSV with a header and two columns: period (1-based) and price in $/MWh.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Require the final energy to equal the initial energy.
    #[arg(long)]
    terminal_soc: bool,
    #[arg(long, value_parser = hull_variant, default_value = "as_printed")]
    hull_variant: HullVariant,
    /// Output directory for schedule.csv, summary.txt and audit.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    feasibility_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    optimality_tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: u32,
    #[arg(long, default_value_t = 1e-6)]
    bnb_gap: f64,
    #[arg(long, default_value_t = 1e-6)]
    complementarity_tol: f64,
    #[command(flatten)]
    audit: AuditTolArgs,
    /// Also write the assembled problem listing to problem.txt.
    #[arg(long)]
    dump: bool,
}

#[derive(Debug, Args)]
struct AdviseArgs {
    #[arg(long, value_parser = network_choice, default_value = "ac")]
    network: NetworkChoice,
    #[arg(long, value_parser = grid_level)]
    level: GridLevel,
    #[arg(long, value_parser = device_kind, default_value = "generic")]
    device: DeviceKind,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    schedule: PathBuf,
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    tol: AuditTolArgs,
    #[arg(long)]
    terminal_soc: bool,
    #[arg(long, value_parser = hull_variant, default_value = "as_printed")]
    hull_variant: HullVariant,
    /// Write audit.csv here as well as printing the report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HullArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Storage device, 1-based; all devices when omitted.
    #[arg(long)]
    device: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = hull_variant, default_value = "as_printed")]
    hull_variant: HullVariant,
    /// Write hull_check.txt here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(commands::EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let code = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Advise(a) => commands::advise(&a),
        Command::Audit(a) => commands::audit(&a),
        Command::HullCheck(a) => commands::hull_check(&a),
    };
    ExitCode::from(code)
}
