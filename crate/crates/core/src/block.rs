use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::algebra::{dump_rows, LinExpr, RowSet, VarId};
use crate::grid::{BusId, Horizon};

/// Key of a nodal balance row in a network block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BalanceKey {
    pub bus: BusId,
    pub period: usize,
    pub reactive: bool,
}

/// Power a storage block injects into the grid at one bus and period, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub bus: BusId,
    pub period: usize,
    pub active: LinExpr,
    pub reactive: Option<LinExpr>,
}

/// Which storage formulation a block encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EssModel {
    /// Binary charge/discharge indicators with efficiencies.
    Milp,
    /// Lossless signed power, no binaries.
    Linear,
    /// Efficiencies with a vanishing charge·discharge product instead of binaries.
    Complementarity,
    /// Battery equivalent circuit with the nonconvex ohmic-loss equality.
    BessLoss,
    /// Battery equivalent circuit with the convex hull of the loss equality.
    BessConvex,
}

impl EssModel {
    pub const ALL: [EssModel; 5] =
        [EssModel::Milp, EssModel::Linear, EssModel::Complementarity, EssModel::BessLoss, EssModel::BessConvex];

    pub fn as_str(self) -> &'static str {
        match self {
            EssModel::Milp => "milp",
            EssModel::Linear => "linear",
            EssModel::Complementarity => "complementarity",
            EssModel::BessLoss => "bess-loss",
            EssModel::BessConvex => "bess-convex",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Whether the model needs bus squared-voltage variables from the network block.
    pub fn needs_voltage(self) -> bool {
        matches!(self, EssModel::BessLoss | EssModel::BessConvex)
    }
}

/// Variables of one device in one period; `None` when the model does not use it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeriodVars {
    pub p_ch: Option<VarId>,
    pub p_disch: Option<VarId>,
    pub p_net: Option<VarId>,
    pub p_signed: Option<VarId>,
    pub q_ess: Option<VarId>,
    pub p_loss: Option<VarId>,
    pub alpha_ch: Option<VarId>,
    pub alpha_disch: Option<VarId>,
    pub v_sq: Option<VarId>,
}

impl PeriodVars {
    fn remap(&self, f: &impl Fn(VarId) -> VarId) -> PeriodVars {
        let m = |v: Option<VarId>| v.map(f);
        PeriodVars {
            p_ch: m(self.p_ch),
            p_disch: m(self.p_disch),
            p_net: m(self.p_net),
            p_signed: m(self.p_signed),
            q_ess: m(self.q_ess),
            p_loss: m(self.p_loss),
            alpha_ch: m(self.alpha_ch),
            alpha_disch: m(self.alpha_disch),
            v_sq: m(self.v_sq),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssVarMap {
    /// Index of the device in `Network::devices`.
    pub device: usize,
    pub bus: BusId,
    pub model: EssModel,
    pub periods: Vec<PeriodVars>,
}

impl EssVarMap {
    pub fn remap(&self, f: impl Fn(VarId) -> VarId) -> EssVarMap {
        EssVarMap { periods: self.periods.iter().map(|p| p.remap(&f)).collect(), ..self.clone() }
    }
}

/// Parameters of one ohmic-loss row, per-unit, kept so the convex hull can be
/// substituted for the nonconvex equality and the gap measured afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLink {
    pub device: usize,
    pub period: usize,
    pub p_loss: VarId,
    pub v_sq: VarId,
    pub p_signed: VarId,
    pub q_ess: VarId,
    pub r_eq: f64,
    pub r_cvt: f64,
    pub r_bess: f64,
    /// Converter rating, pu.
    pub s_max: f64,
    pub v_sq_min: f64,
    pub v_sq_max: f64,
}

impl LossLink {
    pub fn remap(&self, f: impl Fn(VarId) -> VarId) -> LossLink {
        LossLink {
            p_loss: f(self.p_loss),
            v_sq: f(self.v_sq),
            p_signed: f(self.p_signed),
            q_ess: f(self.q_ess),
            ..self.clone()
        }
    }

    /// `p_loss·V − (r_eq·p² + r_cvt·q²)`; zero on the loss surface, nonnegative inside the hull.
    pub fn gap(&self, x: &[f64]) -> f64 {
        let (p, q) = (x[self.p_signed.0], x[self.q_ess.0]);
        x[self.p_loss.0] * x[self.v_sq.0] - (self.r_eq * p * p + self.r_cvt * q * q)
    }

    /// Loss that satisfies the equality exactly at the point's (p, q, V).
    pub fn exact_loss(&self, x: &[f64]) -> f64 {
        let (p, q) = (x[self.p_signed.0], x[self.q_ess.0]);
        (self.r_eq * p * p + self.r_cvt * q * q) / x[self.v_sq.0]
    }
}

/// Variables and rows emitted by one model, with the metadata assembly needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub name: String,
    pub horizon: Horizon,
    pub rows: RowSet,
    /// Storage grid injections to wire into network balance rows.
    pub injections: Vec<Injection>,
    /// Network nodal balance rows (indices into `rows.linear`).
    pub balance: BTreeMap<BalanceKey, usize>,
    /// Squared-voltage variables exposed by the network block.
    pub voltages: BTreeMap<(BusId, usize), VarId>,
    pub ess: Option<EssVarMap>,
    pub loss_links: Vec<LossLink>,
}

impl ConstraintBlock {
    pub fn new(name: impl Into<String>, horizon: Horizon) -> Self {
        Self {
            name: name.into(),
            horizon,
            rows: RowSet::new(),
            injections: Vec::new(),
            balance: BTreeMap::new(),
            voltages: BTreeMap::new(),
            ess: None,
            loss_links: Vec::new(),
        }
    }

    pub fn binary_vars(&self) -> Vec<VarId> {
        self.rows.binary_vars()
    }

    /// Human-readable listing used by `--dump-block` and golden tests.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "block {} periods={} dt={}",
            self.name, self.horizon.num_periods, self.horizon.dt_hours
        );
        let _ = dump_rows(&mut out, &self.rows);
        for inj in &self.injections {
            let _ = write!(out, "inject bus={} t={}: p = ", inj.bus, inj.period + 1);
            let _ = crate::algebra::fmt_expr(&mut out, &inj.active, &self.rows.variables);
            if let Some(q) = &inj.reactive {
                out.push_str("; q = ");
                let _ = crate::algebra::fmt_expr(&mut out, q, &self.rows.variables);
            }
            out.push('\n');
        }
        out
    }
}
