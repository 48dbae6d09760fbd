//! Variables, affine expressions and constraint rows shared by the block
//! emitters, the assembled problem and the solvers.

use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
    /// Declared by another block (e.g. bus voltage used by a storage model);
    /// resolved by name during assembly.
    pub external: bool,
}

/// `Σ coef·x + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        Self { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, k: f64) -> LinExpr {
        LinExpr {
            terms: self.terms.iter().map(|&(v, c)| (v, c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    pub fn map_vars(&self, f: impl Fn(VarId) -> VarId) -> LinExpr {
        LinExpr { terms: self.terms.iter().map(|&(v, c)| (f(v), c)).collect(), constant: self.constant }
    }
}

/// `weight · expr²` with `weight ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Square {
    pub weight: f64,
    pub expr: LinExpr,
}

impl Square {
    pub fn new(weight: f64, expr: LinExpr) -> Self {
        debug_assert!(weight >= 0.0);
        Self { weight, expr }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = self.expr.eval(x);
        self.weight * v * v
    }
}

pub fn sum_squares(squares: &[Square], x: &[f64]) -> f64 {
    squares.iter().map(|s| s.eval(x)).sum()
}

/// Which family a row belongs to; doubles as the row's provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    // storage
    NetPower,
    SocBand,
    TerminalSoc,
    ChargeLimit,
    DischargeLimit,
    ModeExclusive,
    Complementarity,
    LossEquation,
    NetWithLoss,
    ConverterRating,
    LossHull,
    LossHullReactive,
    LossHullVoltage,
    // network
    AngleFlow,
    ReactiveFlow,
    ActiveBalance,
    ReactiveBalance,
    VoltageDrop,
    BranchCone,
    // anything built directly through the problem builder
    User,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::NetPower => "net_power",
            Family::SocBand => "soc_band",
            Family::TerminalSoc => "terminal_soc",
            Family::ChargeLimit => "charge_limit",
            Family::DischargeLimit => "discharge_limit",
            Family::ModeExclusive => "mode_exclusive",
            Family::Complementarity => "complementarity",
            Family::LossEquation => "loss_equation",
            Family::NetWithLoss => "net_with_loss",
            Family::ConverterRating => "converter_rating",
            Family::LossHull => "loss_hull",
            Family::LossHullReactive => "loss_hull_reactive",
            Family::LossHullVoltage => "loss_hull_voltage",
            Family::AngleFlow => "angle_flow",
            Family::ReactiveFlow => "reactive_flow",
            Family::ActiveBalance => "active_balance",
            Family::ReactiveBalance => "reactive_balance",
            Family::VoltageDrop => "voltage_drop",
            Family::BranchCone => "branch_cone",
            Family::User => "user",
        }
    }

    /// Module that emits rows of this family.
    pub fn module(self) -> &'static str {
        use Family::*;
        match self {
            NetPower | SocBand | TerminalSoc | ChargeLimit | DischargeLimit | ModeExclusive
            | Complementarity | LossEquation | NetWithLoss | ConverterRating | LossHull
            | LossHullReactive | LossHullVoltage => "ess",
            AngleFlow | ReactiveFlow | ActiveBalance | ReactiveBalance | VoltageDrop | BranchCone => {
                "network"
            }
            User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowTag {
    pub family: Family,
    pub name: String,
}

impl RowTag {
    pub fn new(family: Family, name: impl Into<String>) -> Self {
        Self { family, name: name.into() }
    }
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:{}] {}", self.family.module(), self.family.label(), self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `expr = 0`
    Eq,
    /// `expr ≤ 0`
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub tag: RowTag,
    pub expr: LinExpr,
    pub sense: Sense,
}

impl LinearRow {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.expr.eval(x);
        match self.sense {
            Sense::Eq => v.abs(),
            Sense::Le => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuadKind {
    /// `Σ squares + affine ≤ 0`; convex because every weight is nonnegative.
    ConvexLe { squares: Vec<Square>, affine: LinExpr },
    /// `left · right = Σ squares`; a nonconvex equality.
    ProductEq { left: VarId, right: VarId, squares: Vec<Square> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRow {
    pub tag: RowTag,
    pub kind: QuadKind,
}

impl QuadRow {
    pub fn is_convex(&self) -> bool {
        matches!(self.kind, QuadKind::ConvexLe { .. })
    }

    /// Signed residual: positive means violated for `ConvexLe`; any nonzero
    /// value is a violation for `ProductEq`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        match &self.kind {
            QuadKind::ConvexLe { squares, affine } => sum_squares(squares, x) + affine.eval(x),
            QuadKind::ProductEq { left, right, squares } => x[left.0] * x[right.0] - sum_squares(squares, x),
        }
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        match &self.kind {
            QuadKind::ConvexLe { .. } => self.residual(x).max(0.0),
            QuadKind::ProductEq { .. } => self.residual(x).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConeKind {
    /// `‖members‖₂ ≤ bound`
    SecondOrder { bound: LinExpr, members: Vec<LinExpr> },
    /// `left · right ≥ Σ squares`, `left ≥ 0`, `right ≥ 0`
    Rotated { left: LinExpr, right: LinExpr, squares: Vec<Square> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeRow {
    pub tag: RowTag,
    pub kind: ConeKind,
}

impl ConeRow {
    pub fn violation(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ConeKind::SecondOrder { bound, members } => {
                let norm = members.iter().map(|m| m.eval(x).powi(2)).sum::<f64>().sqrt();
                (norm - bound.eval(x)).max(0.0)
            }
            ConeKind::Rotated { left, right, squares } => {
                let (a, b) = (left.eval(x), right.eval(x));
                let gap = sum_squares(squares, x) - a * b;
                gap.max(-a).max(-b).max(0.0)
            }
        }
    }
}

/// Two variables whose product must vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearPair {
    pub tag: RowTag,
    pub first: VarId,
    pub second: VarId,
}

impl BilinearPair {
    pub fn violation(&self, x: &[f64]) -> f64 {
        (x[self.first.0] * x[self.second.0]).abs()
    }
}

/// Variables plus every row class. Both emitted blocks and the assembled
/// problem are built on this.
#[derive(Debug, Clone, Default)]
pub struct RowSet {
    pub variables: Vec<Variable>,
    pub linear: Vec<LinearRow>,
    pub quad: Vec<QuadRow>,
    pub cones: Vec<ConeRow>,
    pub bilinear: Vec<BilinearPair>,
    index: HashMap<String, VarId>,
}

impl PartialEq for RowSet {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables
            && self.linear == other.linear
            && self.quad == other.quad
            && self.cones == other.cones
            && self.bilinear == other.bilinear
    }
}

/// Largest violation of any row or bound at a point, with the offending row.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstViolation {
    pub value: f64,
    pub row: String,
}

impl RowSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a variable. Re-declaring an existing name returns the original id.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.push_var(Variable { name: name.into(), lower, upper, binary: false, external: false })
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(Variable { name: name.into(), lower: 0.0, upper: 1.0, binary: true, external: false })
    }

    pub fn add_external(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.push_var(Variable { name: name.into(), lower, upper, binary: false, external: true })
    }

    pub fn push_var(&mut self, var: Variable) -> VarId {
        if let Some(&id) = self.index.get(&var.name) {
            return id;
        }
        let id = VarId(self.variables.len());
        self.index.insert(var.name.clone(), id);
        self.variables.push(var);
        id
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.index.get(name).copied()
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn binary_vars(&self) -> Vec<VarId> {
        self.variables.iter().enumerate().filter(|(_, v)| v.binary).map(|(i, _)| VarId(i)).collect()
    }

    pub fn equal(&mut self, family: Family, name: impl Into<String>, expr: LinExpr) {
        self.linear.push(LinearRow { tag: RowTag::new(family, name), expr, sense: Sense::Eq });
    }

    pub fn le(&mut self, family: Family, name: impl Into<String>, expr: LinExpr) {
        self.linear.push(LinearRow { tag: RowTag::new(family, name), expr, sense: Sense::Le });
    }

    pub fn quad_le(&mut self, family: Family, name: impl Into<String>, squares: Vec<Square>, affine: LinExpr) {
        self.quad.push(QuadRow { tag: RowTag::new(family, name), kind: QuadKind::ConvexLe { squares, affine } });
    }

    pub fn product_eq(&mut self, family: Family, name: impl Into<String>, left: VarId, right: VarId, squares: Vec<Square>) {
        self.quad.push(QuadRow {
            tag: RowTag::new(family, name),
            kind: QuadKind::ProductEq { left, right, squares },
        });
    }

    pub fn soc(&mut self, family: Family, name: impl Into<String>, bound: LinExpr, members: Vec<LinExpr>) {
        self.cones.push(ConeRow { tag: RowTag::new(family, name), kind: ConeKind::SecondOrder { bound, members } });
    }

    pub fn rotated(&mut self, family: Family, name: impl Into<String>, left: LinExpr, right: LinExpr, squares: Vec<Square>) {
        self.cones.push(ConeRow { tag: RowTag::new(family, name), kind: ConeKind::Rotated { left, right, squares } });
    }

    pub fn bilinear(&mut self, family: Family, name: impl Into<String>, first: VarId, second: VarId) {
        self.bilinear.push(BilinearPair { tag: RowTag::new(family, name), first, second });
    }

    pub fn num_rows(&self) -> usize {
        self.linear.len() + self.quad.len() + self.cones.len() + self.bilinear.len()
    }

    /// Every variable id referenced by a row, for the declared-variables check.
    pub fn referenced_vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        let push_expr = |e: &LinExpr, out: &mut Vec<VarId>| out.extend(e.terms.iter().map(|t| t.0));
        for r in &self.linear {
            push_expr(&r.expr, &mut out);
        }
        for r in &self.quad {
            match &r.kind {
                QuadKind::ConvexLe { squares, affine } => {
                    squares.iter().for_each(|s| push_expr(&s.expr, &mut out));
                    push_expr(affine, &mut out);
                }
                QuadKind::ProductEq { left, right, squares } => {
                    out.push(*left);
                    out.push(*right);
                    squares.iter().for_each(|s| push_expr(&s.expr, &mut out));
                }
            }
        }
        for r in &self.cones {
            match &r.kind {
                ConeKind::SecondOrder { bound, members } => {
                    push_expr(bound, &mut out);
                    members.iter().for_each(|m| push_expr(m, &mut out));
                }
                ConeKind::Rotated { left, right, squares } => {
                    push_expr(left, &mut out);
                    push_expr(right, &mut out);
                    squares.iter().for_each(|s| push_expr(&s.expr, &mut out));
                }
            }
        }
        for p in &self.bilinear {
            out.push(p.first);
            out.push(p.second);
        }
        out
    }

    /// Worst violation over bounds, integrality (when `integral`), linear,
    /// quadratic and cone rows, and bilinear pairs.
    pub fn worst_violation(&self, x: &[f64], integral: bool) -> WorstViolation {
        let mut worst = WorstViolation { value: 0.0, row: String::new() };
        let mut consider = |value: f64, row: &dyn fmt::Display| {
            if value > worst.value {
                worst = WorstViolation { value, row: row.to_string() };
            }
        };
        for (i, v) in self.variables.iter().enumerate() {
            let xi = x[i];
            consider((v.lower - xi).max(xi - v.upper), &format!("bound {}", v.name));
            if integral && v.binary {
                consider((xi - xi.round()).abs(), &format!("integrality {}", v.name));
            }
        }
        for r in &self.linear {
            consider(r.violation(x), &r.tag);
        }
        for r in &self.quad {
            consider(r.violation(x), &r.tag);
        }
        for r in &self.cones {
            consider(r.violation(x), &r.tag);
        }
        for p in &self.bilinear {
            consider(p.violation(x), &p.tag);
        }
        worst
    }

    /// Point lookup by variable name, for tests and diagnostics.
    pub fn value(&self, x: &[f64], name: &str) -> Option<f64> {
        self.var_id(name).map(|id| x[id.0])
    }
}

pub(crate) fn fmt_expr(f: &mut impl fmt::Write, e: &LinExpr, vars: &[Variable]) -> fmt::Result {
    let mut first = true;
    for &(v, c) in &e.terms {
        let name = &vars[v.0].name;
        if first {
            write!(f, "{c}*{name}")?;
        } else if c < 0.0 {
            write!(f, " - {}*{name}", -c)?;
        } else {
            write!(f, " + {c}*{name}")?;
        }
        first = false;
    }
    if first {
        write!(f, "{}", e.constant)
    } else if e.constant < 0.0 {
        write!(f, " - {}", -e.constant)
    } else if e.constant > 0.0 {
        write!(f, " + {}", e.constant)
    } else {
        Ok(())
    }
}

fn fmt_squares(f: &mut impl fmt::Write, squares: &[Square], vars: &[Variable]) -> fmt::Result {
    for (i, s) in squares.iter().enumerate() {
        if i > 0 {
            f.write_str(" + ")?;
        }
        write!(f, "{}*(", s.weight)?;
        fmt_expr(f, &s.expr, vars)?;
        f.write_str(")^2")?;
    }
    if squares.is_empty() {
        f.write_str("0")?;
    }
    Ok(())
}

/// Human-readable dump: one line per variable, then one line per row.
pub(crate) fn dump_rows(out: &mut String, rows: &RowSet) -> fmt::Result {
    use fmt::Write;
    let vars = &rows.variables;
    for v in vars {
        let kind = match (v.binary, v.external) {
            (true, _) => "bin",
            (false, true) => "ext",
            _ => "var",
        };
        writeln!(out, "{kind} {} [{}, {}]", v.name, v.lower, v.upper)?;
    }
    for r in &rows.linear {
        write!(out, "lin {}: ", r.tag)?;
        fmt_expr(out, &r.expr, vars)?;
        writeln!(out, " {}", if r.sense == Sense::Eq { "= 0" } else { "<= 0" })?;
    }
    for r in &rows.quad {
        match &r.kind {
            QuadKind::ConvexLe { squares, affine } => {
                write!(out, "quad {}: ", r.tag)?;
                fmt_squares(out, squares, vars)?;
                out.push_str(" + ");
                fmt_expr(out, affine, vars)?;
                writeln!(out, " <= 0")?;
            }
            QuadKind::ProductEq { left, right, squares } => {
                write!(out, "nonconvex {}: {}*{} = ", r.tag, vars[left.0].name, vars[right.0].name)?;
                fmt_squares(out, squares, vars)?;
                out.push('\n');
            }
        }
    }
    for r in &rows.cones {
        match &r.kind {
            ConeKind::SecondOrder { bound, members } => {
                write!(out, "soc {}: ||", r.tag)?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    fmt_expr(out, m, vars)?;
                }
                out.push_str("|| <= ");
                fmt_expr(out, bound, vars)?;
                out.push('\n');
            }
            ConeKind::Rotated { left, right, squares } => {
                write!(out, "rsoc {}: (", r.tag)?;
                fmt_expr(out, left, vars)?;
                out.push_str(")*(");
                fmt_expr(out, right, vars)?;
                out.push_str(") >= ");
                fmt_squares(out, squares, vars)?;
                out.push('\n');
            }
        }
    }
    for p in &rows.bilinear {
        writeln!(out, "bilinear {}: {}*{} = 0", p.tag, vars[p.first.0].name, vars[p.second.0].name)?;
    }
    Ok(())
}
