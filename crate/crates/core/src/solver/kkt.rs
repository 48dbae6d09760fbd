//! Optimality-condition residuals recomputed from row semantics.
//!
//! Nothing here reads solver internals: the Lagrangian is
//! `f(x) + Σ λ_r·g_r(x) + Σ λ_q·h_q(x) − Σ ⟨z_c, s_c(x)⟩ + Σ μ⁺(x − u) + Σ μ⁻(l − x)`,
//! where `g_r` are linear rows, `h_q` convex quadratic rows and `s_c(x)` the
//! natural second-order-cone image of each cone row:
//! `(bound, members…)` for `‖members‖ ≤ bound` and `(a + b, a − b, 2√w·l…)`
//! for `a·b ≥ Σ w·l²`.

use crate::algebra::{ConeKind, LinExpr, QuadKind, RowSet, Sense, Square};
use crate::problem::Objective;

use super::Duals;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KktReport {
    /// Largest bound or row violation.
    pub primal: f64,
    /// ∞-norm of the Lagrangian gradient.
    pub dual: f64,
    /// Largest multiplier sign or cone-membership violation.
    pub dual_feasibility: f64,
    /// Largest |multiplier × slack| product.
    pub complementarity: f64,
    /// Sum of complementarity products over `max(1, |objective|)`.
    pub relative_gap: f64,
    pub worst_primal: String,
    pub worst_dual: String,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.dual_feasibility).max(self.complementarity)
    }
}

fn cone_image(kind: &ConeKind) -> Vec<(LinExpr, f64)> {
    match kind {
        ConeKind::SecondOrder { bound, members } => {
            let mut out = vec![(bound.clone(), 1.0)];
            out.extend(members.iter().map(|m| (m.clone(), 1.0)));
            out
        }
        ConeKind::Rotated { left, right, squares } => {
            let mut sum = left.clone();
            sum.add_expr(right, 1.0);
            let mut diff = left.clone();
            diff.add_expr(right, -1.0);
            let mut out = vec![(sum, 1.0), (diff, 1.0)];
            out.extend(squares.iter().map(|s| (s.expr.clone(), 2.0 * s.weight.sqrt())));
            out
        }
    }
}

fn add_square_grad(g: &mut [f64], s: &Square, x: &[f64], scale: f64) {
    let v = s.expr.eval(x);
    for &(j, a) in &s.expr.terms {
        g[j.0] += scale * 2.0 * s.weight * v * a;
    }
}

/// Evaluate primal, dual and complementarity residuals of `(x, duals)` for
/// `min obj s.t. rows, lower ≤ x ≤ upper`.
pub fn evaluate_kkt(
    rows: &RowSet,
    obj: &Objective,
    lower: &[f64],
    upper: &[f64],
    x: &[f64],
    duals: &Duals,
) -> KktReport {
    let n = rows.num_vars();
    let mut rep = KktReport::default();
    let primal = |v: f64, what: &dyn Fn() -> String, rep: &mut KktReport| {
        if v > rep.primal {
            rep.primal = v;
            rep.worst_primal = what();
        }
    };
    let mut comp_sum = 0.0;
    let mut comp = |v: f64, rep: &mut KktReport| {
        let v = v.abs();
        comp_sum += v;
        rep.complementarity = rep.complementarity.max(v);
    };
    let mut g = vec![0.0; n];
    for &(j, a) in &obj.linear.terms {
        g[j.0] += a;
    }
    for s in &obj.squares {
        add_square_grad(&mut g, s, x, 1.0);
    }

    for j in 0..n {
        let name = || format!("bound {}", rows.variables[j].name);
        primal(lower[j] - x[j], &name, &mut rep);
        primal(x[j] - upper[j], &name, &mut rep);
        let (ml, mu) = (duals.lower[j], duals.upper[j]);
        rep.dual_feasibility = rep.dual_feasibility.max(-ml).max(-mu);
        if lower[j].is_finite() {
            comp(ml * (x[j] - lower[j]), &mut rep);
        } else {
            rep.dual_feasibility = rep.dual_feasibility.max(ml.abs());
        }
        if upper[j].is_finite() {
            comp(mu * (upper[j] - x[j]), &mut rep);
        } else {
            rep.dual_feasibility = rep.dual_feasibility.max(mu.abs());
        }
        g[j] += mu - ml;
    }
    for (r, row) in rows.linear.iter().enumerate() {
        let v = row.expr.eval(x);
        let lam = duals.linear[r];
        match row.sense {
            Sense::Eq => primal(v.abs(), &|| row.tag.to_string(), &mut rep),
            Sense::Le => {
                primal(v, &|| row.tag.to_string(), &mut rep);
                rep.dual_feasibility = rep.dual_feasibility.max(-lam);
                comp(lam * v, &mut rep);
            }
        }
        for &(j, a) in &row.expr.terms {
            g[j.0] += lam * a;
        }
    }
    for (qi, row) in rows.quad.iter().enumerate() {
        primal(row.violation(x), &|| row.tag.to_string(), &mut rep);
        let lam = duals.quad.get(qi).copied().unwrap_or(0.0);
        match &row.kind {
            QuadKind::ConvexLe { squares, affine } => {
                rep.dual_feasibility = rep.dual_feasibility.max(-lam);
                comp(lam * row.residual(x), &mut rep);
                for &(j, a) in &affine.terms {
                    g[j.0] += lam * a;
                }
                for s in squares {
                    add_square_grad(&mut g, s, x, lam);
                }
            }
            QuadKind::ProductEq { left, right, squares } => {
                g[left.0] += lam * x[right.0];
                g[right.0] += lam * x[left.0];
                for s in squares {
                    add_square_grad(&mut g, s, x, -lam);
                }
            }
        }
    }
    for (ci, row) in rows.cones.iter().enumerate() {
        primal(row.violation(x), &|| row.tag.to_string(), &mut rep);
        let z = &duals.cones[ci];
        let image = cone_image(&row.kind);
        let tail = z[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        rep.dual_feasibility = rep.dual_feasibility.max(tail - z[0]);
        let mut inner = 0.0;
        for (k, (e, scale)) in image.iter().enumerate() {
            inner += z[k] * scale * e.eval(x);
            for &(j, a) in &e.terms {
                g[j.0] -= z[k] * scale * a;
            }
        }
        comp(inner, &mut rep);
    }
    for p in &rows.bilinear {
        primal(p.violation(x), &|| p.tag.to_string(), &mut rep);
    }
    for (j, gj) in g.iter().enumerate() {
        if gj.abs() > rep.dual {
            rep.dual = gj.abs();
            rep.worst_dual = rows.variables[j].name.clone();
        }
    }
    rep.relative_gap = comp_sum / obj.eval(x).abs().max(1.0);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Family, VarId};

    #[test]
    fn hand_checked_lp() {
        // min x s.t. 3 − x ≤ 0, x ∈ [0, 10]: x = 3, λ = 1
        let mut rows = RowSet::new();
        let x = rows.add_var("x", 0.0, 10.0);
        rows.le(Family::User, "x>=3", LinExpr::constant(3.0).term(x, -1.0));
        let obj = Objective { linear: LinExpr::var(x), squares: vec![] };
        let duals = Duals { linear: vec![1.0], quad: vec![], cones: vec![], lower: vec![0.0], upper: vec![0.0] };
        let rep = evaluate_kkt(&rows, &obj, &[0.0], &[10.0], &[3.0], &duals);
        assert_eq!(rep.max(), 0.0);
        // wrong multiplier shows up as a dual residual
        let bad = Duals { linear: vec![0.5], ..duals.clone() };
        let rep = evaluate_kkt(&rows, &obj, &[0.0], &[10.0], &[3.0], &bad);
        assert_eq!(rep.dual, 0.5);
        assert_eq!(rep.worst_dual, "x");
        // infeasible point shows up as a primal residual
        let rep = evaluate_kkt(&rows, &obj, &[0.0], &[10.0], &[2.0], &duals);
        assert_eq!(rep.primal, 1.0);
        assert_eq!(rep.complementarity, 1.0);
        let _ = VarId(0);
    }

    #[test]
    fn cone_row_multiplier() {
        // min t s.t. ‖(1)‖ ≤ t: t = 1, z = (1, −1)
        let mut rows = RowSet::new();
        let t = rows.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        rows.soc(Family::User, "c", LinExpr::var(t), vec![LinExpr::constant(1.0)]);
        let obj = Objective { linear: LinExpr::var(t), squares: vec![] };
        let duals = Duals { linear: vec![], quad: vec![], cones: vec![vec![1.0, -1.0]], lower: vec![0.0], upper: vec![0.0] };
        let rep = evaluate_kkt(&rows, &obj, &[f64::NEG_INFINITY], &[f64::INFINITY], &[1.0], &duals);
        assert_eq!(rep.max(), 0.0);
    }
}
