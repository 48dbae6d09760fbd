use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use essopt::advise::advise as recommend;
use essopt::audit::{
    audit_schedule, extract_schedule, hull_containment_sample, schedule_from_csv, schedule_to_csv, AuditConfig,
    AuditReport,
};
use essopt::grid::{parse_case, validate_network, Horizon, Network};
use essopt::problem::{build_problem, Problem, ProblemSpec};
use essopt::solver::{solve as run_solver, Solution, SolveError, SolverOptions, Status};

use crate::prices::parse_prices;
use crate::{AdviseArgs, AuditArgs, AuditTolArgs, CaseArgs, HullArgs, SolveArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_AUDIT: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

fn config_error(e: anyhow::Error) -> u8 {
    eprintln!("error: {e:#}");
    EXIT_CONFIG
}

fn load_case(args: &CaseArgs) -> Result<Network> {
    let text = fs::read_to_string(&args.case).with_context(|| format!("reading {}", args.case.display()))?;
    let net = parse_case(&text).with_context(|| format!("parsing {}", args.case.display()))?;
    let report = validate_network(&net);
    if !report.is_valid() {
        bail!("{} is not a valid case:\n{report}", args.case.display());
    }
    for w in report.warnings() {
        eprintln!("warning: {}: {}", w.subject, w.message);
    }
    if args.periods.is_none() && args.dt.is_none() {
        return Ok(net);
    }
    let h = Horizon::new(args.periods.unwrap_or(net.horizon.num_periods), args.dt.unwrap_or(net.horizon.dt_hours))?;
    Ok(net.with_horizon(h)?)
}

fn audit_config(tol: &AuditTolArgs, terminal_soc: bool, hull_variant: essopt::ess::HullVariant) -> Result<AuditConfig> {
    for (name, v) in [("audit-tol", tol.audit_tol), ("audit-complementarity-tol", tol.audit_complementarity_tol)] {
        if !(v > 0.0 && v.is_finite()) {
            bail!("--{name} must be positive, got {v}");
        }
    }
    Ok(AuditConfig {
        power_tol: tol.audit_tol,
        energy_tol: tol.audit_tol,
        complementarity_tol: tol.audit_complementarity_tol,
        terminal_soc,
        hull_variant,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Everything validated before the solver runs.
struct Prepared {
    net: Network,
    problem: Problem,
    opts: SolverOptions,
    audit: AuditConfig,
}

fn prepare(a: &SolveArgs) -> Result<Prepared> {
    let net = load_case(&a.case)?;
    let prices = match &a.prices {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(parse_prices(&text)?)
        }
        None => None,
    };
    let spec = ProblemSpec {
        network: a.network,
        ess_model: a.ess_model,
        objective: a.objective,
        prices,
        terminal_soc: a.terminal_soc,
        hull_variant: a.hull_variant,
    };
    let problem = build_problem(&net, &spec)?;
    let opts = SolverOptions {
        feasibility_tol: a.feasibility_tol,
        optimality_tol: a.optimality_tol,
        max_ip_iterations: a.max_iter,
        bnb_gap_tol: a.bnb_gap,
        complementarity_tol: a.complementarity_tol,
        random_seed: a.seed,
        ..SolverOptions::default()
    };
    opts.validate()?;
    let audit = audit_config(&a.audit, a.terminal_soc, a.hull_variant)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    Ok(Prepared { net, problem, opts, audit })
}

fn summary_header(a: &SolveArgs, p: &Problem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "case {}", a.case.case.display());
    let _ = writeln!(s, "network {}", a.network.as_str());
    let _ = writeln!(s, "ess_model {}", a.ess_model.as_str());
    let _ = writeln!(s, "objective_kind {}", a.objective.as_str());
    let _ = writeln!(s, "periods {}", p.horizon.num_periods);
    let _ = writeln!(s, "dt_hours {}", p.horizon.dt_hours);
    let _ = writeln!(s, "terminal_soc {}", a.terminal_soc);
    let _ = writeln!(s, "hull_variant {}", a.hull_variant.as_str());
    let _ = writeln!(s, "seed {}", a.seed);
    let _ = writeln!(s, "class {}", p.class());
    let _ = writeln!(s, "variables {}", p.rows.num_vars());
    let _ = writeln!(s, "rows {}", p.rows.num_rows());
    s
}

fn solution_lines(s: &mut String, sol: &Solution) {
    let _ = writeln!(s, "status {}", sol.status);
    let _ = writeln!(s, "objective {}", sol.objective);
    let _ = writeln!(s, "iterations {}", sol.stats.iterations);
    let _ = writeln!(s, "nodes {}", sol.stats.nodes);
    let _ = writeln!(s, "relaxations {}", sol.stats.relaxations);
    let _ = writeln!(s, "max_residual {:e}", sol.max_residual);
    if !sol.worst_row.is_empty() {
        let _ = writeln!(s, "worst_row {}", sol.worst_row);
    }
    if let Some(b) = sol.best_bound {
        let _ = writeln!(s, "best_bound {b}");
    }
    if let Some(k) = &sol.kkt {
        let _ = writeln!(s, "kkt_primal {:e}", k.primal);
        let _ = writeln!(s, "kkt_dual {:e}", k.dual);
    }
    if let Some(h) = &sol.hull {
        let _ = writeln!(s, "hull_max_gap {:e}", h.max_gap);
        let _ = writeln!(s, "hull_tolerance {:e}", h.tolerance);
        let _ = writeln!(s, "hull_relaxed_objective {}", h.relaxed_objective);
        if let Some(r) = h.restored_objective {
            let _ = writeln!(s, "hull_restored_objective {r}");
        }
        let _ = writeln!(s, "hull_restored {}", h.restored);
    }
    if let Some(pr) = &sol.penalty {
        let _ = writeln!(s, "penalty_rounds {}", pr.rounds.len());
        let _ = writeln!(s, "penalty_repaired_pairs {}", pr.repaired_pairs);
        let _ = writeln!(s, "complementarity {:e}", pr.final_violation);
    }
    if let Some(why) = &sol.infeasibility {
        let _ = writeln!(s, "infeasibility {why}");
    }
}

fn audit_lines(s: &mut String, report: &AuditReport) {
    let _ = writeln!(s, "audit {}", if report.pass { "pass" } else { "fail" });
    for e in report.failures() {
        let _ = writeln!(s, "audit_failure ess{} {} {:e}", e.device, e.family.as_str(), e.worst);
    }
}

pub fn solve(a: &SolveArgs) -> u8 {
    let prep = match prepare(a) {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    match run(a, &prep) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_SOLVER
        }
    }
}

fn run(a: &SolveArgs, prep: &Prepared) -> Result<u8> {
    let p = &prep.problem;
    if a.dump {
        write(&a.out, "problem.txt", &p.dump())?;
    }
    let mut summary = summary_header(a, p);
    let sol = match run_solver(p, &prep.opts) {
        Ok(sol) => sol,
        Err(SolveError::Options(m)) => {
            eprintln!("error: {m}");
            return Ok(EXIT_CONFIG);
        }
        Err(e) => {
            let _ = writeln!(summary, "status failed");
            let _ = writeln!(summary, "error {e}");
            let relaxed = match &e {
                SolveError::RepairFailed { relaxed, .. } | SolveError::RestorationFailed { relaxed, .. } => {
                    Some(relaxed)
                }
                _ => None,
            };
            if let Some(r) = relaxed {
                let _ = writeln!(summary, "relaxed_status {}", r.status);
                let _ = writeln!(summary, "relaxed_objective {}", r.objective);
                if let Some(h) = &r.hull {
                    let _ = writeln!(summary, "hull_max_gap {:e}", h.max_gap);
                }
            }
            write(&a.out, "summary.txt", &summary)?;
            print!("{summary}");
            eprintln!("error: {e}");
            return Ok(EXIT_SOLVER);
        }
    };
    solution_lines(&mut summary, &sol);
    if !sol.status.has_point() {
        write(&a.out, "summary.txt", &summary)?;
        print!("{summary}");
        return Ok(if sol.status == Status::Infeasible { EXIT_INFEASIBLE } else { EXIT_SOLVER });
    }
    let sched = extract_schedule(p, &sol)?;
    write(&a.out, "schedule.csv", &schedule_to_csv(&sched))?;
    let report = audit_schedule(&sched, &prep.net.devices, &prep.net.buses, &p.horizon, &prep.audit)?;
    write(&a.out, "audit.csv", &report.to_csv())?;
    audit_lines(&mut summary, &report);
    write(&a.out, "summary.txt", &summary)?;
    print!("{summary}");
    print!("{}", report.to_text());
    Ok(if report.pass { EXIT_OK } else { EXIT_AUDIT })
}

pub fn advise(a: &AdviseArgs) -> u8 {
    let r = recommend(a.network, a.level, a.device);
    println!("network {} level {} device {}", a.network.as_str(), a.level.as_str(), a.device.as_str());
    print!("{r}");
    EXIT_OK
}

pub fn audit(a: &AuditArgs) -> u8 {
    let result = (|| -> Result<AuditReport> {
        let net = load_case(&a.case)?;
        let cfg = audit_config(&a.tol, a.terminal_soc, a.hull_variant)?;
        let text =
            fs::read_to_string(&a.schedule).with_context(|| format!("reading {}", a.schedule.display()))?;
        let sched = schedule_from_csv(&text, &net)?;
        let report = audit_schedule(&sched, &net.devices, &net.buses, &net.horizon, &cfg)?;
        if let Some(dir) = &a.out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write(dir, "audit.csv", &report.to_csv())?;
        }
        Ok(report)
    })();
    match result {
        Ok(report) => {
            print!("{}", report.to_text());
            if report.pass {
                EXIT_OK
            } else {
                EXIT_AUDIT
            }
        }
        Err(e) => config_error(e),
    }
}

pub fn hull_check(a: &HullArgs) -> u8 {
    let result = (|| -> Result<String> {
        let net = load_case(&a.case)?;
        if net.devices.is_empty() {
            bail!("case has no storage devices");
        }
        let picked: Vec<usize> = match a.device {
            Some(d) if d >= 1 && d <= net.devices.len() => vec![d - 1],
            Some(d) => bail!("--device {d} out of range 1..={}", net.devices.len()),
            None => (0..net.devices.len()).collect(),
        };
        let mut out = String::new();
        for d in picked {
            let dev = &net.devices[d];
            let bus = net.buses.iter().find(|b| b.id == dev.bus).context("storage bus missing")?;
            // one stream per device, derived from the single seed
            let seed = a.seed.wrapping_add(d as u64);
            let r = hull_containment_sample(dev, bus, net.base_mva, a.hull_variant, a.samples, seed)?;
            let _ = writeln!(out, "device {} bus {}", d + 1, bus.id);
            out.push_str(&r.to_string());
        }
        if let Some(dir) = &a.out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write(dir, "hull_check.txt", &out)?;
        }
        Ok(out)
    })();
    match result {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => config_error(e),
    }
}
