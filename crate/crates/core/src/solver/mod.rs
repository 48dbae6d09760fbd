//! Solvers for assembled problems.
//!
//! Continuous problems (affine, convex quadratic and cone rows) go to a conic
//! interior-point method after a small presolve. Binary variables are handled
//! by best-first branch-and-bound, bilinear complementarity pairs by an
//! objective penalty with a repair step, and the nonconvex loss equality by
//! its convex hull followed by feasibility restoration. [`solve`] dispatches
//! on problem content.

mod bnb;
mod conic;
mod hull;
pub mod kkt;
mod penalty;

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::problem::Problem;

pub use bnb::solve_mixed_integer;
pub use conic::solve_continuous;
pub use hull::{solve_bess_via_hull, HullReport, LinkGap};
pub use kkt::{evaluate_kkt, KktReport};
pub use penalty::{solve_complementarity_penalty, PenaltyReport, PenaltyRound};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Absolute primal residual accepted at an optimal point, per-unit.
    pub feasibility_tol: f64,
    /// Relative duality gap.
    pub optimality_tol: f64,
    pub max_ip_iterations: u32,
    /// Absolute objective gap at which branch-and-bound stops.
    pub bnb_gap_tol: f64,
    /// Distance from the nearest integer below which a binary counts as integral.
    pub integrality_tol: f64,
    /// First penalty weight, relative to the largest objective coefficient.
    pub penalty_epsilon: f64,
    pub penalty_growth: f64,
    pub penalty_max_rounds: usize,
    /// Accepted `Σ min(p_ch, p_disch)`, MW.
    pub complementarity_tol: f64,
    /// Seed for any randomized component; the solvers are currently deterministic.
    pub random_seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            max_ip_iterations: 200,
            bnb_gap_tol: 1e-6,
            integrality_tol: 1e-6,
            penalty_epsilon: 1e-3,
            penalty_growth: 10.0,
            penalty_max_rounds: 6,
            complementarity_tol: 1e-6,
            random_seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [
            ("feasibility_tol", self.feasibility_tol),
            ("optimality_tol", self.optimality_tol),
            ("bnb_gap_tol", self.bnb_gap_tol),
            ("integrality_tol", self.integrality_tol),
            ("complementarity_tol", self.complementarity_tol),
            ("penalty_growth", self.penalty_growth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolveError::Options(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.penalty_epsilon >= 0.0) {
            return Err(SolveError::Options(format!("penalty_epsilon must be nonnegative, got {}", self.penalty_epsilon)));
        }
        if self.max_ip_iterations == 0 || self.penalty_max_rounds == 0 {
            return Err(SolveError::Options("iteration and round limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    /// A relaxation or penalty solution was repaired into a feasible point of
    /// the original problem; optimality is not certified.
    RestoredFeasible,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::IterationLimit => "iteration_limit",
            Status::RestoredFeasible => "restored_feasible",
        }
    }

    pub fn has_point(self) -> bool {
        matches!(self, Status::Optimal | Status::RestoredFeasible)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Multipliers in the sign convention of [`kkt`]: linear and quadratic rows
/// carry a scalar (nonnegative for `≤` rows), cone rows a vector in the cone,
/// and each variable a pair of nonnegative bound multipliers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Duals {
    pub linear: Vec<f64>,
    pub quad: Vec<f64>,
    pub cones: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: u64,
    pub nodes: u64,
    /// Continuous solves performed.
    pub relaxations: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    /// Objective in natural units at `x`.
    pub objective: f64,
    /// Per-unit variable values; the best iterate when not optimal.
    pub x: Vec<f64>,
    pub duals: Option<Duals>,
    pub kkt: Option<KktReport>,
    /// Largest violation of any bound or row at `x` and where it occurs.
    pub max_residual: f64,
    pub worst_row: String,
    /// Lower bound proven by branch-and-bound (mixed-integer solves only).
    pub best_bound: Option<f64>,
    /// Infeasibility certificate: a dual ray in the [`Duals`] layout.
    pub farkas: Option<Duals>,
    /// Human-readable reason for a presolve infeasibility verdict.
    pub infeasibility: Option<String>,
    pub stats: SolveStats,
    pub hull: Option<HullReport>,
    pub penalty: Option<PenaltyReport>,
}

impl Solution {
    pub(crate) fn new(status: Status, x: Vec<f64>, p: &Problem) -> Self {
        let objective = if x.is_empty() && p.rows.num_vars() > 0 { f64::NAN } else { p.objective.eval(&x) };
        let (max_residual, worst_row) = if x.len() == p.rows.num_vars() {
            let w = p.rows.worst_violation(&x, false);
            (w.value, w.row)
        } else {
            (f64::NAN, String::new())
        };
        Self {
            status,
            objective,
            x,
            duals: None,
            kkt: None,
            max_residual,
            worst_row,
            best_bound: None,
            farkas: None,
            infeasibility: None,
            stats: SolveStats::default(),
            hull: None,
            penalty: None,
        }
    }

    /// Violation of every row at `x`, labelled, in problem row order.
    pub fn row_residuals(&self, p: &Problem) -> Vec<(String, f64)> {
        let x = &self.x;
        let mut out: Vec<(String, f64)> = Vec::new();
        out.extend(p.rows.linear.iter().map(|r| (r.tag.to_string(), r.violation(x))));
        out.extend(p.rows.quad.iter().map(|r| (r.tag.to_string(), r.violation(x))));
        out.extend(p.rows.cones.iter().map(|r| (r.tag.to_string(), r.violation(x))));
        out.extend(p.rows.bilinear.iter().map(|r| (r.tag.to_string(), r.violation(x))));
        out
    }
}

#[derive(Debug, Error, Clone)]
pub enum SolveError {
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("problem has no variables")]
    Empty,
    #[error("unsupported problem content: {0}")]
    Unsupported(String),
    #[error("conic solver setup failed: {0}")]
    Backend(String),
    #[error("complementarity repair failed: violation {violation} MW after repair ({status})")]
    RepairFailed { violation: f64, status: Status, relaxed: Box<Solution> },
    #[error("loss restoration failed: energy band violated by {soc_band} pu·h, converter rating by {converter} pu, other rows by {other} ({worst_row})")]
    RestorationFailed { soc_band: f64, converter: f64, other: f64, worst_row: String, relaxed: Box<Solution> },
}

/// Route `p` to the solver its content calls for.
pub fn solve(p: &Problem, opts: &SolverOptions) -> Result<Solution, SolveError> {
    let binaries = p.rows.variables.iter().any(|v| v.binary);
    let bilinear = !p.rows.bilinear.is_empty();
    let nonconvex = p.has_nonconvex();
    match (binaries, bilinear, nonconvex) {
        (false, false, false) => solve_continuous(p, opts),
        (true, false, false) => solve_mixed_integer(p, opts),
        (false, true, false) => solve_complementarity_penalty(p, opts),
        (false, false, true) => solve_bess_via_hull(p, opts),
        _ => Err(SolveError::Unsupported(
            "binaries, bilinear pairs and nonconvex rows cannot be combined".into(),
        )),
    }
}
