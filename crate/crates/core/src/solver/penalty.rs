use std::time::Instant;

use super::conic::solve_bounded;
use super::{Solution, SolveError, SolverOptions, Status};
use crate::algebra::BilinearPair;
use crate::problem::Problem;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyRound {
    pub epsilon: f64,
    /// `Σ min(first, second)` over all pairs, MW.
    pub violation: f64,
    /// Original objective at the round's point.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyReport {
    pub rounds: Vec<PenaltyRound>,
    /// Pairs whose smaller member was fixed to zero by the repair step.
    pub repaired_pairs: usize,
    /// Violation of the returned point, MW.
    pub final_violation: f64,
}

fn violation(pairs: &[BilinearPair], x: &[f64], base: f64) -> f64 {
    pairs.iter().map(|p| x[p.first.0].min(x[p.second.0]).max(0.0)).sum::<f64>() * base
}

/// Drop the product rows and penalize `ε·Σ (first + second)` with growing ε
/// until the pairs are complementary; then, if needed, fix the smaller member
/// of each offending pair to zero and solve once more.
pub fn solve_complementarity_penalty(p: &Problem, opts: &SolverOptions) -> Result<Solution, SolveError> {
    if p.rows.variables.iter().any(|v| v.binary) || p.has_nonconvex() {
        return Err(SolveError::Unsupported("penalty method handles bilinear pairs over convex rows only".into()));
    }
    opts.validate()?;
    let start = Instant::now();
    let pairs = p.rows.bilinear.clone();
    let mut relaxed = p.clone();
    relaxed.rows.bilinear.clear();
    let base_obj = p.objective.clone();
    let scale = match base_obj.scale() {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let mut eps = opts.penalty_epsilon * scale;
    let rounds_allowed = if eps == 0.0 { 1 } else { opts.penalty_max_rounds };
    let lower: Vec<f64> = p.rows.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = p.rows.variables.iter().map(|v| v.upper).collect();
    let mut report = PenaltyReport { rounds: Vec::new(), repaired_pairs: 0, final_violation: 0.0 };
    let (mut iterations, mut relaxations) = (0u64, 0u64);
    let mut last: Option<Solution> = None;
    let mut used_eps = eps;
    for _ in 0..rounds_allowed {
        let mut obj = base_obj.clone();
        for pair in &pairs {
            obj.linear.add_term(pair.first, eps);
            obj.linear.add_term(pair.second, eps);
        }
        relaxed.objective = obj;
        let s = solve_bounded(&relaxed, &lower, &upper, opts)?;
        iterations += s.stats.iterations;
        relaxations += 1;
        used_eps = eps;
        if s.status != Status::Optimal {
            let mut out = Solution::new(s.status, s.x.clone(), p);
            if !s.status.has_point() {
                out.x = Vec::new();
                out.objective = f64::NAN;
            }
            out.farkas = s.farkas;
            out.infeasibility = s.infeasibility;
            out.stats.iterations = iterations;
            out.stats.relaxations = relaxations;
            out.stats.wall_time = start.elapsed();
            out.penalty = Some(report);
            return Ok(out);
        }
        let v = violation(&pairs, &s.x, p.base_mva);
        report.rounds.push(PenaltyRound { epsilon: eps, violation: v, objective: base_obj.eval(&s.x) });
        last = Some(s);
        if v <= opts.complementarity_tol {
            break;
        }
        eps *= opts.penalty_growth;
    }
    let relaxed_sol = last.expect("at least one round");
    let v = report.rounds.last().map_or(0.0, |r| r.violation);
    let mut status = Status::Optimal;
    let mut point = relaxed_sol.x.clone();
    let mut duals = relaxed_sol.duals.clone();
    let mut kkt = relaxed_sol.kkt.clone();
    if v > opts.complementarity_tol {
        // repair: pairs above their share of the tolerance lose their smaller member
        let share = opts.complementarity_tol / pairs.len() as f64;
        let (lo, mut up) = (lower.clone(), upper.clone());
        for pair in &pairs {
            let (a, b) = (point[pair.first.0], point[pair.second.0]);
            if a.min(b) * p.base_mva > share {
                let fix = if a <= b { pair.first } else { pair.second };
                up[fix.0] = 0.0;
                report.repaired_pairs += 1;
            }
        }
        let mut obj = base_obj.clone();
        for pair in &pairs {
            obj.linear.add_term(pair.first, used_eps);
            obj.linear.add_term(pair.second, used_eps);
        }
        relaxed.objective = obj;
        let s = solve_bounded(&relaxed, &lo, &up, opts)?;
        iterations += s.stats.iterations;
        relaxations += 1;
        let after = if s.status == Status::Optimal { violation(&pairs, &s.x, p.base_mva) } else { f64::INFINITY };
        if s.status != Status::Optimal || after > opts.complementarity_tol {
            let mut relaxed_out = Solution::new(Status::IterationLimit, relaxed_sol.x.clone(), p);
            relaxed_out.penalty = Some(report);
            return Err(SolveError::RepairFailed { violation: after, status: s.status, relaxed: Box::new(relaxed_out) });
        }
        point = s.x;
        duals = None;
        kkt = None;
        status = Status::RestoredFeasible;
    }
    report.final_violation = violation(&pairs, &point, p.base_mva);
    let mut sol = Solution::new(status, point, p);
    sol.duals = duals;
    sol.kkt = kkt;
    sol.penalty = Some(report);
    sol.stats.iterations = iterations;
    sol.stats.relaxations = relaxations;
    sol.stats.wall_time = start.elapsed();
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Family, LinExpr, RowSet, Square};
    use crate::problem::Objective;

    /// On the face a + b = 1 the symmetric penalty is constant, so no weight
    /// separates the pair and the repair step must.
    #[test]
    fn repair_separates_pair() {
        let mut rows = RowSet::new();
        let a = rows.add_var("a", 0.0, 1.0);
        let b = rows.add_var("b", 0.0, 1.0);
        rows.le(Family::User, "a+b>=1", LinExpr::constant(1.0).term(a, -1.0).term(b, -1.0));
        rows.bilinear(Family::User, "ab=0", a, b);
        let sq = |v, c: f64| Square::new(1.0, LinExpr::var(v).plus(-c));
        let obj = Objective { linear: LinExpr::new(), squares: vec![sq(a, 0.6), sq(b, 0.7)] };
        let p = Problem::from_rows(rows, obj);
        let s = solve_complementarity_penalty(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::RestoredFeasible);
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 1.0).abs() < 1e-8);
        let r = s.penalty.unwrap();
        assert_eq!(r.repaired_pairs, 1);
        assert_eq!(r.rounds.len(), 6);
        assert!(r.rounds.windows(2).all(|w| w[1].violation <= w[0].violation + 1e-8));
    }

    #[test]
    fn zero_epsilon_single_round() {
        let mut rows = RowSet::new();
        let a = rows.add_var("a", 0.0, 1.0);
        let b = rows.add_var("b", 0.0, 1.0);
        rows.bilinear(Family::User, "ab=0", a, b);
        let obj = Objective { linear: LinExpr::new().term(a, 1.0).term(b, -1.0), squares: vec![] };
        let p = Problem::from_rows(rows, obj);
        let opts = SolverOptions { penalty_epsilon: 0.0, ..SolverOptions::default() };
        let s = solve_complementarity_penalty(&p, &opts).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.penalty.unwrap().rounds.len(), 1);
    }
}
