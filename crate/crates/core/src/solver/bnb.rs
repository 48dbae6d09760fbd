use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::conic::solve_bounded;
use super::{Solution, SolveError, SolverOptions, Status};
use crate::algebra::VarId;
use crate::problem::Problem;

struct Node {
    id: u64,
    /// Objective of the parent relaxation; a lower bound for this subtree.
    bound: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smaller bound, then smaller id, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

/// Most fractional binary; ties go to the lowest variable index.
fn branch_var(binaries: &[VarId], x: &[f64], tol: f64) -> Option<VarId> {
    let mut best: Option<(VarId, f64)> = None;
    for &b in binaries {
        let frac = (x[b.0] - x[b.0].round()).abs();
        if frac > tol && best.is_none_or(|(_, f)| frac > f) {
            best = Some((b, frac));
        }
    }
    best.map(|(b, _)| b)
}

/// Best-first branch-and-bound over the binary variables; node relaxations
/// are continuous solves with the binaries relaxed to `[0, 1]`.
pub fn solve_mixed_integer(p: &Problem, opts: &SolverOptions) -> Result<Solution, SolveError> {
    if !p.rows.bilinear.is_empty() || p.has_nonconvex() {
        return Err(SolveError::Unsupported("branch-and-bound handles binaries over convex rows only".into()));
    }
    opts.validate()?;
    let start = Instant::now();
    let binaries = p.rows.binary_vars();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        bound: f64::NEG_INFINITY,
        lower: p.rows.variables.iter().map(|v| v.lower).collect(),
        upper: p.rows.variables.iter().map(|v| v.upper).collect(),
    });
    let mut next_id = 1;
    let mut incumbent: Option<Solution> = None;
    let (mut nodes, mut iterations, mut relaxations) = (0u64, 0u64, 0u64);
    let mut root_status = None;
    let mut limit_hit = false;
    while let Some(node) = heap.pop() {
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
        if node.bound >= inc_obj - opts.bnb_gap_tol {
            continue;
        }
        nodes += 1;
        let relax = solve_bounded(p, &node.lower, &node.upper, opts)?;
        iterations += relax.stats.iterations;
        relaxations += 1;
        if root_status.is_none() {
            root_status = Some(relax.status);
        }
        match relax.status {
            Status::Optimal => {}
            Status::Infeasible => continue,
            Status::Unbounded => {
                let mut s = relax;
                s.stats.nodes = nodes;
                s.stats.wall_time = start.elapsed();
                return Ok(s);
            }
            _ => {
                limit_hit = true;
                continue;
            }
        }
        if relax.objective >= inc_obj - opts.bnb_gap_tol {
            continue;
        }
        match branch_var(&binaries, &relax.x, opts.integrality_tol) {
            Some(b) => {
                for val in [0.0, 1.0] {
                    let (mut lower, mut upper) = (node.lower.clone(), node.upper.clone());
                    lower[b.0] = val;
                    upper[b.0] = val;
                    heap.push(Node { id: next_id, bound: relax.objective, lower, upper });
                    next_id += 1;
                }
            }
            None => {
                // Integral relaxation: re-solve with every binary fixed so the
                // incumbent satisfies the binary rows exactly.
                let (mut lower, mut upper) = (node.lower.clone(), node.upper.clone());
                for &b in &binaries {
                    let v = relax.x[b.0].round().clamp(0.0, 1.0);
                    lower[b.0] = v;
                    upper[b.0] = v;
                }
                let fixed = solve_bounded(p, &lower, &upper, opts)?;
                iterations += fixed.stats.iterations;
                relaxations += 1;
                if fixed.status == Status::Optimal && fixed.objective < inc_obj {
                    incumbent = Some(fixed);
                }
            }
        }
    }
    let mut sol = match incumbent {
        Some(mut s) => {
            s.best_bound = Some(s.objective);
            s
        }
        None => {
            let status = if limit_hit { Status::IterationLimit } else { Status::Infeasible };
            let mut s = Solution::new(status, Vec::new(), p);
            if status == Status::Infeasible {
                s.infeasibility = Some(match root_status {
                    Some(Status::Infeasible) => "root relaxation is infeasible".to_string(),
                    _ => "no integral assignment is feasible".to_string(),
                });
            }
            s
        }
    };
    if limit_hit && sol.status == Status::Optimal {
        // some subtree could not be explored; optimality is not proven
        sol.status = Status::IterationLimit;
    }
    sol.stats.nodes = nodes;
    sol.stats.iterations = iterations;
    sol.stats.relaxations = relaxations;
    sol.stats.wall_time = start.elapsed();
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Family, LinExpr, RowSet};
    use crate::problem::Objective;
    use crate::solver::solve_continuous;

    #[test]
    fn integral_root_is_one_node() {
        let mut rows = RowSet::new();
        let b = rows.add_binary("b");
        let x = rows.add_var("x", 0.0, 2.0);
        rows.le(Family::User, "x<=2b", LinExpr::var(x).term(b, -2.0));
        let p = Problem::from_rows(rows.clone(), Objective { linear: LinExpr::var(x).term(b, 1.0), squares: vec![] });
        let s = solve_mixed_integer(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.stats.nodes, 1);
        assert_eq!(s.x, vec![0.0, 0.0]);
        let mut relaxed = rows;
        relaxed.variables[0].binary = false;
        let c = solve_continuous(&Problem::from_rows(relaxed, p.objective.clone()), &SolverOptions::default()).unwrap();
        assert!((c.objective - s.objective).abs() < 1e-8);
    }

    #[test]
    fn knapsack() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c ≤ 4 → a = c = 1, value 8
        let mut rows = RowSet::new();
        let v: Vec<VarId> = ["a", "b", "c"].iter().map(|n| rows.add_binary(*n)).collect();
        rows.le(Family::User, "cap", LinExpr::var(v[0]).scaled(2.0).term(v[1], 3.0).term(v[2], 1.0).plus(-4.0));
        let obj = LinExpr::new().term(v[0], -5.0).term(v[1], -4.0).term(v[2], -3.0);
        let p = Problem::from_rows(rows, Objective { linear: obj, squares: vec![] });
        let s = solve_mixed_integer(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective + 8.0).abs() < 1e-8);
        assert_eq!(s.x, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn infeasible_binaries() {
        let mut rows = RowSet::new();
        let a = rows.add_binary("a");
        rows.equal(Family::User, "2a=1", LinExpr::var(a).scaled(2.0).plus(-1.0));
        let p = Problem::from_rows(rows, Objective::default());
        let s = solve_mixed_integer(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible);
    }
}
