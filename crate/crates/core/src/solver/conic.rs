//! Continuous solves: presolve, translation to the conic form
//! `min ½xᵀPx + qᵀx  s.t.  Ax + s = b, s ∈ K` for the Clarabel interior-point
//! solver, and recovery of multipliers for the original rows.
//!
//! Presolve substitutes fixed variables and turns singleton linear rows into
//! bounds, iterating to a fixed point. Variables whose bounds collapse are
//! fixed exactly, which is what makes branch-and-bound fixings exact.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolution, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{kkt, Duals, Solution, SolveError, SolverOptions, Status};
use crate::algebra::{ConeKind, LinExpr, QuadKind, RowSet, Sense, Square};
use crate::problem::{Objective, Problem};

/// Solve a problem with no binaries, bilinear pairs or nonconvex rows.
pub fn solve_continuous(p: &Problem, opts: &SolverOptions) -> Result<Solution, SolveError> {
    if !p.rows.bilinear.is_empty() {
        return Err(SolveError::Unsupported("bilinear pairs need the penalty solver".into()));
    }
    if p.has_nonconvex() {
        return Err(SolveError::Unsupported("nonconvex rows need the hull solver".into()));
    }
    if p.rows.variables.iter().any(|v| v.binary) {
        return Err(SolveError::Unsupported("binary variables need branch-and-bound".into()));
    }
    let lower: Vec<f64> = p.rows.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = p.rows.variables.iter().map(|v| v.upper).collect();
    solve_bounded(p, &lower, &upper, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BoundSrc {
    Declared,
    Row { row: usize, coef: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FixSrc {
    /// Equal bounds, from any mix of declared bounds and singleton `≤` rows.
    Bounds,
    /// A singleton equality row.
    EqRow { row: usize, coef: f64 },
}

struct Presolved {
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_src: Vec<BoundSrc>,
    upper_src: Vec<BoundSrc>,
    fixed: Vec<Option<(f64, FixSrc)>>,
    /// Fixed variables in the order they were fixed.
    order: Vec<usize>,
    absorbed: Vec<bool>,
}

enum PresolveOutcome {
    Done(Presolved),
    Infeasible(String),
}

/// Terms of `e` over free variables (merged) and the constant with fixed values substituted.
fn split(e: &LinExpr, fixed: &[Option<(f64, FixSrc)>]) -> (Vec<(usize, f64)>, f64) {
    let mut c = e.constant;
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for &(v, a) in &e.terms {
        match fixed[v.0] {
            Some((val, _)) => c += a * val,
            None => match terms.iter_mut().find(|t| t.0 == v.0) {
                Some(t) => t.1 += a,
                None => terms.push((v.0, a)),
            },
        }
    }
    terms.retain(|t| t.1 != 0.0);
    (terms, c)
}

fn presolve(rows: &RowSet, lower: &[f64], upper: &[f64], tol: f64) -> PresolveOutcome {
    let n = rows.num_vars();
    let mut ps = Presolved {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        lower_src: vec![BoundSrc::Declared; n],
        upper_src: vec![BoundSrc::Declared; n],
        fixed: vec![None; n],
        order: Vec::new(),
        absorbed: vec![false; rows.linear.len()],
    };
    for j in 0..n {
        if ps.lower[j] > ps.upper[j] + tol {
            return PresolveOutcome::Infeasible(format!("bounds of {} are empty", rows.variables[j].name));
        }
        if ps.lower[j] >= ps.upper[j] {
            ps.fixed[j] = Some((ps.lower[j].min(ps.upper[j]), FixSrc::Bounds));
            ps.order.push(j);
        }
    }
    loop {
        let mut changed = false;
        for (r, row) in rows.linear.iter().enumerate() {
            if ps.absorbed[r] {
                continue;
            }
            let (terms, c) = split(&row.expr, &ps.fixed);
            match terms.as_slice() {
                [] => {
                    let viol = match row.sense {
                        Sense::Eq => c.abs(),
                        Sense::Le => c.max(0.0),
                    };
                    if viol > tol {
                        return PresolveOutcome::Infeasible(format!("{} violated by {viol} with fixed variables", row.tag));
                    }
                    ps.absorbed[r] = true;
                    changed = true;
                }
                &[(j, a)] => {
                    let val = -c / a;
                    match row.sense {
                        Sense::Eq => {
                            if val < ps.lower[j] - tol || val > ps.upper[j] + tol {
                                return PresolveOutcome::Infeasible(format!(
                                    "{} fixes {} = {val} outside [{}, {}]",
                                    row.tag, rows.variables[j].name, ps.lower[j], ps.upper[j]
                                ));
                            }
                            ps.fixed[j] = Some((val.clamp(ps.lower[j], ps.upper[j]), FixSrc::EqRow { row: r, coef: a }));
                            ps.order.push(j);
                        }
                        Sense::Le => {
                            if a > 0.0 {
                                if val < ps.upper[j] {
                                    ps.upper[j] = val;
                                    ps.upper_src[j] = BoundSrc::Row { row: r, coef: a };
                                }
                            } else if val > ps.lower[j] {
                                ps.lower[j] = val;
                                ps.lower_src[j] = BoundSrc::Row { row: r, coef: a };
                            }
                            if ps.lower[j] > ps.upper[j] + tol {
                                return PresolveOutcome::Infeasible(format!(
                                    "bounds of {} collapse to [{}, {}] after {}",
                                    rows.variables[j].name, ps.lower[j], ps.upper[j], row.tag
                                ));
                            }
                            if ps.lower[j] >= ps.upper[j] {
                                ps.fixed[j] = Some((0.5 * (ps.lower[j] + ps.upper[j]), FixSrc::Bounds));
                                ps.order.push(j);
                            }
                        }
                    }
                    ps.absorbed[r] = true;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return PresolveOutcome::Done(ps);
        }
    }
}

/// Which original object each conic row belongs to.
#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Linear(usize),
    Lower(usize),
    Upper(usize),
}

struct Triplets {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    /// Append the row `s = b − A·x = expr(x)` i.e. `A = −coef(expr)`, `b = const(expr)`.
    fn push_slack(&mut self, terms: &[(usize, f64)], c: f64, col: &[Option<usize>]) {
        let r = self.b.len();
        for &(j, a) in terms {
            if let Some(k) = col[j] {
                self.i.push(r);
                self.j.push(k);
                self.v.push(-a);
            }
        }
        self.b.push(c);
    }
}

/// Solve with explicit variable bounds (which may be tighter than declared).
pub(crate) fn solve_bounded(p: &Problem, lower: &[f64], upper: &[f64], opts: &SolverOptions) -> Result<Solution, SolveError> {
    opts.validate()?;
    let start = Instant::now();
    let rows = &p.rows;
    let n = rows.num_vars();
    if n == 0 {
        return Err(SolveError::Empty);
    }
    let ps = match presolve(rows, lower, upper, opts.feasibility_tol) {
        PresolveOutcome::Done(ps) => ps,
        PresolveOutcome::Infeasible(reason) => {
            let mut sol = Solution::new(Status::Infeasible, Vec::new(), p);
            sol.infeasibility = Some(reason);
            sol.stats.relaxations = 1;
            sol.stats.wall_time = start.elapsed();
            return Ok(sol);
        }
    };
    let mut col = vec![None; n];
    let mut free = Vec::new();
    for (j, slot) in col.iter_mut().enumerate() {
        if ps.fixed[j].is_none() {
            *slot = Some(free.len());
            free.push(j);
        }
    }
    let nf = free.len();

    // Objective
    let (lin_terms, _) = split(&p.objective.linear, &ps.fixed);
    let mut q = vec![0.0; nf];
    for (j, a) in lin_terms {
        q[col[j].unwrap()] += a;
    }
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for s in &p.objective.squares {
        let (terms, c) = split(&s.expr, &ps.fixed);
        for &(j, a) in &terms {
            q[col[j].unwrap()] += 2.0 * s.weight * c * a;
        }
        for &(j1, a1) in &terms {
            for &(j2, a2) in &terms {
                let (k1, k2) = (col[j1].unwrap(), col[j2].unwrap());
                if k1 <= k2 {
                    pi.push(k1);
                    pj.push(k2);
                    pv.push(2.0 * s.weight * a1 * a2);
                }
            }
        }
    }

    // Constraints, grouped by cone type.
    let mut t = Triplets { i: Vec::new(), j: Vec::new(), v: Vec::new(), b: Vec::new() };
    let mut origin = Vec::new();
    let mut cones = Vec::new();
    for (r, row) in rows.linear.iter().enumerate() {
        if !ps.absorbed[r] && row.sense == Sense::Eq {
            // s = −expr = 0, same orientation as the ≤ rows so that λ = z
            let (terms, c) = split(&row.expr, &ps.fixed);
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, a)| (j, -a)).collect();
            t.push_slack(&neg, -c, &col);
            origin.push(RowOrigin::Linear(r));
        }
    }
    let n_eq = t.b.len();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    for (r, row) in rows.linear.iter().enumerate() {
        if !ps.absorbed[r] && row.sense == Sense::Le {
            // s = −expr ≥ 0
            let (terms, c) = split(&row.expr, &ps.fixed);
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, a)| (j, -a)).collect();
            t.push_slack(&neg, -c, &col);
            origin.push(RowOrigin::Linear(r));
        }
    }
    for &j in &free {
        if ps.lower[j].is_finite() {
            t.push_slack(&[(j, 1.0)], -ps.lower[j], &col);
            origin.push(RowOrigin::Lower(j));
        }
        if ps.upper[j].is_finite() {
            t.push_slack(&[(j, -1.0)], ps.upper[j], &col);
            origin.push(RowOrigin::Upper(j));
        }
    }
    let n_nonneg = t.b.len() - n_eq;
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }
    let push_expr = |t: &mut Triplets, e: &LinExpr, scale: f64| {
        let (terms, c) = split(e, &ps.fixed);
        let scaled: Vec<(usize, f64)> = terms.iter().map(|&(j, a)| (j, a * scale)).collect();
        t.push_slack(&scaled, c * scale, &col);
    };
    let quad_start = t.b.len();
    for row in &rows.quad {
        let QuadKind::ConvexLe { squares, affine } = &row.kind else { unreachable!("checked by caller") };
        // (1 − aff, 1 + aff, 2√w·l) ∈ SOC  ⇔  Σ w·l² + aff ≤ 0
        push_expr(&mut t, &LinExpr::constant(1.0).term_expr(affine, -1.0), 1.0);
        push_expr(&mut t, &LinExpr::constant(1.0).term_expr(affine, 1.0), 1.0);
        for s in squares {
            push_expr(&mut t, &s.expr, 2.0 * s.weight.sqrt());
        }
        cones.push(SupportedConeT::SecondOrderConeT(2 + squares.len()));
    }
    let cone_start = t.b.len();
    for row in &rows.cones {
        match &row.kind {
            ConeKind::SecondOrder { bound, members } => {
                push_expr(&mut t, bound, 1.0);
                for m in members {
                    push_expr(&mut t, m, 1.0);
                }
                cones.push(SupportedConeT::SecondOrderConeT(1 + members.len()));
            }
            ConeKind::Rotated { left, right, squares } => {
                // (a + b, a − b, 2√w·l) ∈ SOC  ⇔  a·b ≥ Σ w·l², a, b ≥ 0
                push_expr(&mut t, &left.clone().term_expr(right, 1.0), 1.0);
                push_expr(&mut t, &left.clone().term_expr(right, -1.0), 1.0);
                for s in squares {
                    push_expr(&mut t, &s.expr, 2.0 * s.weight.sqrt());
                }
                cones.push(SupportedConeT::SecondOrderConeT(2 + squares.len()));
            }
        }
    }
    let m = t.b.len();

    let mut x = vec![0.0; n];
    for (xj, fixed) in x.iter_mut().zip(&ps.fixed) {
        if let Some((v, _)) = *fixed {
            *xj = v;
        }
    }
    let sol_status;
    let mut iterations = 0u64;
    let mut z = vec![0.0; m];
    if nf == 0 {
        // Everything fixed: feasibility is a direct evaluation.
        let w = rows.worst_violation(&x, false);
        sol_status = if w.value <= opts.feasibility_tol { Status::Optimal } else { Status::Infeasible };
        if sol_status == Status::Infeasible {
            let mut sol = Solution::new(Status::Infeasible, Vec::new(), p);
            sol.infeasibility = Some(format!("all variables fixed; {} violated by {}", w.row, w.value));
            sol.stats.relaxations = 1;
            sol.stats.wall_time = start.elapsed();
            return Ok(sol);
        }
    } else {
        let pmat = CscMatrix::new_from_triplets(nf, nf, pi, pj, pv);
        let amat = CscMatrix::new_from_triplets(m, nf, t.i, t.j, t.v);
        // A stalled interior point run can stop on a point that is accurate
        // in the scaled problem but not in the original rows; lighter
        // regularization with deeper refinement usually finishes the job.
        let mut best: Option<(f64, DefaultSolution<f64>)> = None;
        for attempt in 0..3 {
            let mut b = DefaultSettingsBuilder::default();
            b.verbose(false)
                .max_iter(opts.max_ip_iterations)
                .tol_feas(opts.feasibility_tol * 1e-2)
                .tol_gap_abs(opts.optimality_tol * 1e-2)
                .tol_gap_rel(opts.optimality_tol * 1e-2)
                .tol_ktratio(1e-8);
            if attempt > 0 {
                b.static_regularization_constant(1e-12)
                    .iterative_refinement_max_iter(50)
                    .iterative_refinement_reltol(1e-15)
                    .iterative_refinement_abstol(1e-15);
            }
            if attempt == 1 {
                b.static_regularization_proportional(1e-20)
                    .dynamic_regularization_eps(1e-16)
                    .dynamic_regularization_delta(1e-10);
            }
            if attempt == 2 {
                b.equilibrate_enable(false).tol_feas(opts.feasibility_tol * 1e-3);
            }
            let settings = b.build().map_err(|e| SolveError::Backend(e.to_string()))?;
            let mut solver = DefaultSolver::new(&pmat, &q, &amat, &t.b, &cones, settings)
                .map_err(|e| SolveError::Backend(e.to_string()))?;
            solver.solve();
            iterations += solver.solution.iterations as u64;
            let s = solver.solution;
            let converged = matches!(s.status, SolverStatus::Solved | SolverStatus::AlmostSolved);
            let violation = if converged {
                let mut trial = x.clone();
                for (k, &j) in free.iter().enumerate() {
                    trial[j] = s.x[k];
                }
                rows.worst_violation(&trial, false).value
            } else {
                f64::INFINITY
            };
            let stalled = converged && violation > opts.feasibility_tol;
            let keep = match &best {
                None => true,
                Some((v, _)) => violation < *v,
            };
            if keep {
                best = Some((violation, s));
            }
            if !stalled {
                break;
            }
        }
        let (_, s) = best.expect("at least one attempt");
        sol_status = match s.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Status::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
            _ => Status::IterationLimit,
        };
        if sol_status != Status::Unbounded {
            z.copy_from_slice(&s.z);
        }
        if matches!(sol_status, Status::Optimal | Status::IterationLimit) {
            for (k, &j) in free.iter().enumerate() {
                x[j] = s.x[k];
            }
        }
        if sol_status == Status::Unbounded {
            for (k, &j) in free.iter().enumerate() {
                x[j] = s.x[k];
            }
        }
    }

    let mut duals = Duals {
        linear: vec![0.0; rows.linear.len()],
        quad: vec![0.0; rows.quad.len()],
        cones: rows.cones.iter().map(|r| vec![0.0; cone_dim(&r.kind)]).collect(),
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    for (k, o) in origin.iter().enumerate() {
        let zk = z[k];
        match *o {
            RowOrigin::Linear(r) => duals.linear[r] = zk,
            RowOrigin::Lower(j) => match ps.lower_src[j] {
                BoundSrc::Declared => duals.lower[j] = zk,
                // −μ·e_j = λ·a·e_j with a < 0
                BoundSrc::Row { row, coef } => duals.linear[row] = -zk / coef,
            },
            RowOrigin::Upper(j) => match ps.upper_src[j] {
                BoundSrc::Declared => duals.upper[j] = zk,
                BoundSrc::Row { row, coef } => duals.linear[row] = zk / coef,
            },
        }
    }
    let mut off = quad_start;
    for (qi, row) in rows.quad.iter().enumerate() {
        let QuadKind::ConvexLe { squares, .. } = &row.kind else { unreachable!() };
        duals.quad[qi] = z[off] - z[off + 1];
        off += 2 + squares.len();
    }
    let mut off = cone_start;
    for (ci, row) in rows.cones.iter().enumerate() {
        let d = cone_dim(&row.kind);
        duals.cones[ci].copy_from_slice(&z[off..off + d]);
        off += d;
    }

    if sol_status == Status::Infeasible {
        let mut sol = Solution::new(Status::Infeasible, Vec::new(), p);
        sol.farkas = Some(duals);
        sol.stats.iterations = iterations;
        sol.stats.relaxations = 1;
        sol.stats.wall_time = start.elapsed();
        return Ok(sol);
    }

    if sol_status != Status::Unbounded {
        recover_fixed_duals(rows, &p.objective, &x, &ps, &mut duals);
    }
    let mut sol = Solution::new(sol_status, x, p);
    if sol_status != Status::Unbounded {
        let report = kkt::evaluate_kkt(rows, &p.objective, lower, upper, &sol.x, &duals);
        if sol.status == Status::Optimal && report.primal > opts.feasibility_tol {
            sol.status = Status::IterationLimit;
        }
        sol.kkt = Some(report);
        sol.duals = Some(duals);
    }
    sol.stats.iterations = iterations;
    sol.stats.relaxations = 1;
    sol.stats.wall_time = start.elapsed();
    Ok(sol)
}

fn cone_dim(kind: &ConeKind) -> usize {
    match kind {
        ConeKind::SecondOrder { members, .. } => 1 + members.len(),
        ConeKind::Rotated { squares, .. } => 2 + squares.len(),
    }
}

/// Assign multipliers to variables removed by presolve so that their
/// stationarity rows balance. Variables are visited in reverse fixing order:
/// a fixing row only involves its variable and variables fixed earlier, so
/// its multiplier can be settled and pushed onto those before they are visited.
fn recover_fixed_duals(rows: &RowSet, obj: &Objective, x: &[f64], ps: &Presolved, duals: &mut Duals) {
    let n = rows.num_vars();
    if ps.order.is_empty() {
        return;
    }
    let mut source_row = vec![false; rows.linear.len()];
    for &j in &ps.order {
        match ps.fixed[j] {
            Some((_, FixSrc::EqRow { row, .. })) => source_row[row] = true,
            Some((_, FixSrc::Bounds)) => {
                for src in [ps.lower_src[j], ps.upper_src[j]] {
                    if let BoundSrc::Row { row, .. } = src {
                        source_row[row] = true;
                    }
                }
            }
            None => {}
        }
    }
    let mut g = vec![0.0; n];
    for &(v, a) in &obj.linear.terms {
        g[v.0] += a;
    }
    let add_sq = |g: &mut Vec<f64>, s: &Square, scale: f64| {
        let val = s.expr.eval(x);
        for &(v, a) in &s.expr.terms {
            g[v.0] += scale * 2.0 * s.weight * val * a;
        }
    };
    for s in &obj.squares {
        add_sq(&mut g, s, 1.0);
    }
    for (r, row) in rows.linear.iter().enumerate() {
        if source_row[r] {
            continue;
        }
        for &(v, a) in &row.expr.terms {
            g[v.0] += duals.linear[r] * a;
        }
    }
    for (qi, row) in rows.quad.iter().enumerate() {
        let QuadKind::ConvexLe { squares, affine } = &row.kind else { continue };
        let lam = duals.quad[qi];
        for &(v, a) in &affine.terms {
            g[v.0] += lam * a;
        }
        for s in squares {
            add_sq(&mut g, s, lam);
        }
    }
    for (ci, row) in rows.cones.iter().enumerate() {
        let z = &duals.cones[ci];
        let mut sub = |e: &LinExpr, zk: f64, scale: f64| {
            for &(v, a) in &e.terms {
                g[v.0] -= zk * a * scale;
            }
        };
        match &row.kind {
            ConeKind::SecondOrder { bound, members } => {
                sub(bound, z[0], 1.0);
                for (k, m) in members.iter().enumerate() {
                    sub(m, z[1 + k], 1.0);
                }
            }
            ConeKind::Rotated { left, right, squares } => {
                sub(left, z[0] + z[1], 1.0);
                sub(right, z[0] - z[1], 1.0);
                for (k, s) in squares.iter().enumerate() {
                    sub(&s.expr, z[2 + k], 2.0 * s.weight.sqrt());
                }
            }
        }
    }
    for &j in ps.order.iter().rev() {
        let Some((_, src)) = ps.fixed[j] else { continue };
        // stationarity: g_j + (row or bound multiplier terms) = 0
        let (row, lam) = match src {
            FixSrc::EqRow { row, coef } => (Some(row), -g[j] / coef),
            FixSrc::Bounds => {
                let side = if g[j] > 0.0 { ps.lower_src[j] } else { ps.upper_src[j] };
                match side {
                    BoundSrc::Row { row, coef } if g[j] != 0.0 => (Some(row), -g[j] / coef),
                    _ => {
                        if g[j] > 0.0 {
                            duals.lower[j] = g[j];
                        } else {
                            duals.upper[j] = -g[j];
                        }
                        (None, 0.0)
                    }
                }
            }
        };
        if let Some(r) = row {
            duals.linear[r] = lam;
            for &(v, a) in &rows.linear[r].expr.terms {
                g[v.0] += lam * a;
            }
        }
    }
}

trait TermExpr {
    fn term_expr(self, other: &LinExpr, k: f64) -> LinExpr;
}

impl TermExpr for LinExpr {
    fn term_expr(mut self, other: &LinExpr, k: f64) -> LinExpr {
        self.add_expr(other, k);
        self
    }
}
