use std::time::Instant;

use super::conic::solve_continuous;
use super::{Solution, SolveError, SolverOptions, Status};
use crate::algebra::{Family, QuadKind};
use crate::ess::hull_rows;
use crate::problem::Problem;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkGap {
    pub device: usize,
    pub period: usize,
    /// `p_loss·V − (r_eq·p² + r_cvt·q²)` at the relaxation point, pu.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullReport {
    pub gaps: Vec<LinkGap>,
    pub max_gap: f64,
    /// Gap accepted as tight.
    pub tolerance: f64,
    pub relaxed_objective: f64,
    /// Objective after loss restoration, when restoration ran.
    pub restored_objective: Option<f64>,
    pub restored: bool,
}

/// Replace each loss equality by its convex hull rows, solve, and either
/// accept the point (tight relaxation) or recompute the losses exactly from
/// the relaxation's powers and voltages and re-check every row.
pub fn solve_bess_via_hull(p: &Problem, opts: &SolverOptions) -> Result<Solution, SolveError> {
    let start = Instant::now();
    if p.rows.variables.iter().any(|v| v.binary) || !p.rows.bilinear.is_empty() {
        return Err(SolveError::Unsupported("hull solver handles loss equalities over convex rows only".into()));
    }
    let loss_rows = p.rows.quad.iter().filter(|q| !q.is_convex()).count();
    let all_loss = p
        .rows
        .quad
        .iter()
        .filter(|q| matches!(q.kind, QuadKind::ProductEq { .. }))
        .all(|q| q.tag.family == Family::LossEquation);
    if !all_loss || loss_rows != p.loss_links.len() {
        return Err(SolveError::Unsupported(format!(
            "{loss_rows} nonconvex rows but {} loss links; only loss equalities have a hull",
            p.loss_links.len()
        )));
    }
    let mut relaxed = p.clone();
    relaxed.rows.quad.retain(|q| q.is_convex());
    for link in &p.loss_links {
        hull_rows(&mut relaxed.rows, link, p.hull_variant, &format!("ess{}", link.device));
    }
    let rel = solve_continuous(&relaxed, opts)?;
    if rel.status != Status::Optimal {
        let mut out = rel;
        out.max_residual = f64::NAN;
        out.stats.wall_time = start.elapsed();
        return Ok(out);
    }
    let gaps: Vec<LinkGap> = p
        .loss_links
        .iter()
        .map(|l| LinkGap { device: l.device, period: l.period, gap: l.gap(&rel.x) })
        .collect();
    let max_gap = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
    let tolerance = opts.feasibility_tol;
    let mut report = HullReport {
        gaps,
        max_gap,
        tolerance,
        relaxed_objective: rel.objective,
        restored_objective: None,
        restored: false,
    };
    if max_gap <= tolerance {
        let mut sol = Solution::new(Status::Optimal, rel.x.clone(), p);
        sol.duals = rel.duals;
        sol.kkt = rel.kkt;
        sol.stats = rel.stats;
        sol.stats.wall_time = start.elapsed();
        sol.hull = Some(report);
        return Ok(sol);
    }

    let mut x = rel.x.clone();
    for link in &p.loss_links {
        let loss = link.exact_loss(&rel.x);
        x[link.p_loss.0] = loss;
        let net = p
            .ess
            .iter()
            .find(|m| m.device == link.device)
            .and_then(|m| m.periods[link.period].p_net);
        if let Some(net) = net {
            x[net.0] = rel.x[link.p_signed.0] + loss;
        }
    }
    let soc_band = p
        .rows
        .linear
        .iter()
        .filter(|r| matches!(r.tag.family, Family::SocBand | Family::TerminalSoc))
        .map(|r| r.violation(&x))
        .fold(0.0, f64::max);
    let converter = p
        .rows
        .cones
        .iter()
        .filter(|r| r.tag.family == Family::ConverterRating)
        .map(|r| r.violation(&x))
        .fold(0.0, f64::max);
    let worst = p.rows.worst_violation(&x, false);
    report.restored = true;
    report.restored_objective = Some(p.objective.eval(&x));
    if worst.value > tolerance {
        let mut relaxed_out = Solution::new(Status::IterationLimit, rel.x.clone(), p);
        relaxed_out.hull = Some(report);
        let other = if soc_band.max(converter) >= worst.value { 0.0 } else { worst.value };
        return Err(SolveError::RestorationFailed {
            soc_band,
            converter,
            other,
            worst_row: worst.row,
            relaxed: Box::new(relaxed_out),
        });
    }
    let mut sol = Solution::new(Status::RestoredFeasible, x, p);
    sol.stats = rel.stats;
    sol.stats.wall_time = start.elapsed();
    sol.hull = Some(report);
    Ok(sol)
}
