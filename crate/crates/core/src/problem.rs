//! Assembly of network, storage and objective into one optimization problem,
//! and its classification.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::algebra::{
    dump_rows, fmt_expr, BilinearPair, ConeKind, ConeRow, LinExpr, LinearRow, QuadKind, QuadRow, RowSet, Square,
    VarId,
};
use crate::block::{BalanceKey, ConstraintBlock, EssModel, EssVarMap, LossLink};
use crate::ess::{self, EssContext, EssError, HullVariant};
use crate::grid::{BusId, EssDevice, Horizon, Network};
use crate::network::{self, NetworkError, NetworkKind, ObjectiveKind, ObjectiveSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("block {block} has {got} periods, network has {expected}")]
    HorizonMismatch { block: String, expected: usize, got: usize },
    #[error("storage model {model} needs the distflow network, got {network}")]
    Pairing { model: &'static str, network: &'static str },
    #[error("storage injection at bus {bus} period {period} has no matching balance row")]
    UnknownBus { bus: BusId, period: usize },
    #[error("block {block} references variable {name}, which no earlier block declares")]
    Unresolved { block: String, name: String },
    #[error("variable {0} is declared by two blocks")]
    Duplicate(String),
    #[error("objective references unknown variable {0}")]
    ObjectiveVariable(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ess(#[from] EssError),
}

/// `linear + Σ squares`, minimized. Valued in natural units ($ or MWh).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub linear: LinExpr,
    pub squares: Vec<Square>,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.linear.eval(x) + self.squares.iter().map(|s| s.eval(x)).sum::<f64>()
    }

    /// Largest coefficient magnitude; the reference size for penalty weights.
    pub fn scale(&self) -> f64 {
        let lin = self.linear.terms.iter().map(|t| t.1.abs());
        let sq = self.squares.iter().flat_map(|s| s.expr.terms.iter().map(move |t| s.weight * t.1 * t.1));
        lin.chain(sq).fold(0.0, f64::max)
    }

    pub fn is_quadratic(&self) -> bool {
        self.squares.iter().any(|s| s.weight != 0.0 && !s.expr.terms.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProblemClass {
    Lp,
    Qp,
    Socp,
    Milp,
    Miqp,
    Misocp,
    Nonconvex,
}

impl ProblemClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemClass::Lp => "LP",
            ProblemClass::Qp => "QP",
            ProblemClass::Socp => "SOCP",
            ProblemClass::Milp => "MILP",
            ProblemClass::Miqp => "MIQP",
            ProblemClass::Misocp => "MISOCP",
            ProblemClass::Nonconvex => "NONCONVEX",
        }
    }

    pub fn is_mixed_integer(self) -> bool {
        matches!(self, ProblemClass::Milp | ProblemClass::Miqp | ProblemClass::Misocp)
    }
}

impl fmt::Display for ProblemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One assembled problem. Variables are per-unit; the objective is in
/// natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub rows: RowSet,
    pub objective: Objective,
    pub horizon: Horizon,
    pub base_mva: f64,
    pub network_kind: Option<NetworkKind>,
    pub balance: BTreeMap<BalanceKey, usize>,
    pub voltages: BTreeMap<(BusId, usize), VarId>,
    pub ess: Vec<EssVarMap>,
    pub loss_links: Vec<LossLink>,
    pub devices: Vec<EssDevice>,
    pub terminal_soc: bool,
    pub hull_variant: HullVariant,
}

impl Problem {
    /// A problem built directly from rows, with no network or storage metadata.
    pub fn from_rows(rows: RowSet, objective: Objective) -> Self {
        Self {
            rows,
            objective,
            horizon: Horizon { num_periods: 1, dt_hours: 1.0 },
            base_mva: 1.0,
            network_kind: None,
            balance: BTreeMap::new(),
            voltages: BTreeMap::new(),
            ess: Vec::new(),
            loss_links: Vec::new(),
            devices: Vec::new(),
            terminal_soc: false,
            hull_variant: HullVariant::default(),
        }
    }

    pub fn class(&self) -> ProblemClass {
        classify(self)
    }

    pub fn has_nonconvex(&self) -> bool {
        self.rows.quad.iter().any(|q| !q.is_convex())
    }

    /// `(row label, module, family)` for every row, in row order.
    pub fn provenance(&self) -> Vec<(String, &'static str, &'static str)> {
        let tags = self
            .rows
            .linear
            .iter()
            .map(|r| &r.tag)
            .chain(self.rows.quad.iter().map(|r| &r.tag))
            .chain(self.rows.cones.iter().map(|r| &r.tag))
            .chain(self.rows.bilinear.iter().map(|r| &r.tag));
        tags.map(|t| (t.name.clone(), t.family.module(), t.family.label())).collect()
    }

    /// Row-per-line listing with provenance tags.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "problem class={} vars={} rows={} periods={} dt={} base_mva={}",
            self.class(),
            self.rows.num_vars(),
            self.rows.num_rows(),
            self.horizon.num_periods,
            self.horizon.dt_hours,
            self.base_mva
        );
        let _ = dump_rows(&mut out, &self.rows);
        out.push_str("objective: ");
        let _ = fmt_expr(&mut out, &self.objective.linear, &self.rows.variables);
        for s in &self.objective.squares {
            let _ = write!(out, " + {}*(", s.weight);
            let _ = fmt_expr(&mut out, &s.expr, &self.rows.variables);
            out.push_str(")^2");
        }
        out.push('\n');
        out
    }
}

/// Binaries × highest row class, with nonconvex rows or bilinear pairs dominating.
pub fn classify(p: &Problem) -> ProblemClass {
    if p.has_nonconvex() || !p.rows.bilinear.is_empty() {
        return ProblemClass::Nonconvex;
    }
    let binary = p.rows.variables.iter().any(|v| v.binary);
    let cone = !p.rows.cones.is_empty();
    let quad = !p.rows.quad.is_empty() || p.objective.is_quadratic();
    match (binary, cone, quad) {
        (false, true, _) => ProblemClass::Socp,
        (false, false, true) => ProblemClass::Qp,
        (false, false, false) => ProblemClass::Lp,
        (true, true, _) => ProblemClass::Misocp,
        (true, false, true) => ProblemClass::Miqp,
        (true, false, false) => ProblemClass::Milp,
    }
}

/// Problem-level metadata carried through assembly untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyMeta {
    pub base_mva: f64,
    pub devices: Vec<EssDevice>,
    pub terminal_soc: bool,
    pub hull_variant: HullVariant,
}

fn remap_square(s: &Square, f: &impl Fn(VarId) -> VarId) -> Square {
    Square { weight: s.weight, expr: s.expr.map_vars(f) }
}

fn merge_block(dst: &mut RowSet, block: &ConstraintBlock) -> Result<Vec<VarId>, ProblemError> {
    let mut map = Vec::with_capacity(block.rows.num_vars());
    for v in &block.rows.variables {
        let existing = dst.var_id(&v.name);
        let id = match (v.external, existing) {
            (true, Some(id)) => id,
            (true, None) => {
                return Err(ProblemError::Unresolved { block: block.name.clone(), name: v.name.clone() })
            }
            (false, Some(_)) => return Err(ProblemError::Duplicate(v.name.clone())),
            (false, None) => dst.push_var(v.clone()),
        };
        map.push(id);
    }
    let f = |v: VarId| map[v.0];
    for r in &block.rows.linear {
        dst.linear.push(LinearRow { tag: r.tag.clone(), expr: r.expr.map_vars(f), sense: r.sense });
    }
    for r in &block.rows.quad {
        let kind = match &r.kind {
            QuadKind::ConvexLe { squares, affine } => QuadKind::ConvexLe {
                squares: squares.iter().map(|s| remap_square(s, &f)).collect(),
                affine: affine.map_vars(f),
            },
            QuadKind::ProductEq { left, right, squares } => QuadKind::ProductEq {
                left: f(*left),
                right: f(*right),
                squares: squares.iter().map(|s| remap_square(s, &f)).collect(),
            },
        };
        dst.quad.push(QuadRow { tag: r.tag.clone(), kind });
    }
    for r in &block.rows.cones {
        let kind = match &r.kind {
            ConeKind::SecondOrder { bound, members } => ConeKind::SecondOrder {
                bound: bound.map_vars(f),
                members: members.iter().map(|m| m.map_vars(f)).collect(),
            },
            ConeKind::Rotated { left, right, squares } => ConeKind::Rotated {
                left: left.map_vars(f),
                right: right.map_vars(f),
                squares: squares.iter().map(|s| remap_square(s, &f)).collect(),
            },
        };
        dst.cones.push(ConeRow { tag: r.tag.clone(), kind });
    }
    for p in &block.rows.bilinear {
        dst.bilinear.push(BilinearPair { tag: p.tag.clone(), first: f(p.first), second: f(p.second) });
    }
    Ok(map)
}

/// Merge the network block and storage blocks, wire storage injections into
/// the nodal balance rows and resolve the objective.
pub fn assemble(
    objective: &ObjectiveSpec,
    network: &ConstraintBlock,
    network_kind: NetworkKind,
    ess_blocks: &[ConstraintBlock],
    meta: AssemblyMeta,
) -> Result<Problem, ProblemError> {
    let horizon = network.horizon;
    for b in ess_blocks {
        if b.horizon != horizon {
            return Err(ProblemError::HorizonMismatch {
                block: b.name.clone(),
                expected: horizon.num_periods,
                got: b.horizon.num_periods,
            });
        }
        if let Some(map) = &b.ess {
            if map.model.needs_voltage() && network_kind != NetworkKind::BranchFlow {
                return Err(ProblemError::Pairing { model: map.model.as_str(), network: network_kind.as_str() });
            }
        }
    }
    let mut rows = RowSet::new();
    merge_block(&mut rows, network)?;
    let mut ess_maps = Vec::new();
    let mut links = Vec::new();
    let mut purchase_terms = LinExpr::new();
    for b in ess_blocks {
        let map = merge_block(&mut rows, b)?;
        let f = |v: VarId| map[v.0];
        for inj in &b.injections {
            let key = BalanceKey { bus: inj.bus, period: inj.period, reactive: false };
            let row = *network.balance.get(&key).ok_or(ProblemError::UnknownBus { bus: inj.bus, period: inj.period })?;
            rows.linear[row].expr.add_expr(&inj.active.map_vars(f), 1.0);
            if let Some(q) = &inj.reactive {
                let key = BalanceKey { reactive: true, ..key };
                let row =
                    *network.balance.get(&key).ok_or(ProblemError::UnknownBus { bus: inj.bus, period: inj.period })?;
                rows.linear[row].expr.add_expr(&q.map_vars(f), 1.0);
            }
            if let Some(&w) = objective.storage_purchase.get(inj.period) {
                purchase_terms.add_expr(&inj.active.map_vars(f), -w);
            }
        }
        if let Some(m) = &b.ess {
            ess_maps.push(m.remap(f));
        }
        links.extend(b.loss_links.iter().map(|l| l.remap(f)));
    }
    let lookup = |n: &str| rows.var_id(n);
    let mut linear = LinExpr::constant(objective.constant);
    for (n, c) in &objective.linear {
        linear.add_term(lookup(n).ok_or_else(|| ProblemError::ObjectiveVariable(n.clone()))?, *c);
    }
    linear.add_expr(&purchase_terms, 1.0);
    let squares = network::squares_from_spec(objective, lookup).map_err(ProblemError::ObjectiveVariable)?;
    Ok(Problem {
        rows,
        objective: Objective { linear, squares },
        horizon,
        base_mva: meta.base_mva,
        network_kind: Some(network_kind),
        balance: network.balance.clone(),
        voltages: network.voltages.clone(),
        ess: ess_maps,
        loss_links: links,
        devices: meta.devices,
        terminal_soc: meta.terminal_soc,
        hull_variant: meta.hull_variant,
    })
}

/// Everything needed to build a problem from a case.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub network: NetworkKind,
    pub ess_model: EssModel,
    pub objective: ObjectiveKind,
    pub prices: Option<Vec<f64>>,
    pub terminal_soc: bool,
    pub hull_variant: HullVariant,
}

impl ProblemSpec {
    pub fn new(network: NetworkKind, ess_model: EssModel, objective: ObjectiveKind) -> Self {
        Self { network, ess_model, objective, prices: None, terminal_soc: false, hull_variant: HullVariant::default() }
    }
}

/// Emit the storage block for device `d` under `model`.
pub fn emit_ess_block(
    model: EssModel,
    dev: &EssDevice,
    d: usize,
    ctx: &EssContext,
    network: &ConstraintBlock,
) -> Result<ConstraintBlock, EssError> {
    Ok(match model {
        EssModel::Milp => ess::emit_milp_model(dev, d, ctx),
        EssModel::Linear => ess::emit_linear_model(dev, d, ctx),
        EssModel::Complementarity => ess::emit_complementarity_model(dev, d, ctx),
        EssModel::BessLoss => ess::emit_bess_loss_model(dev, d, ctx, network)?,
        EssModel::BessConvex => ess::emit_bess_convex_model(dev, d, ctx, network)?,
    })
}

/// Emit every block for `net` over its own horizon and assemble them.
pub fn build_problem(net: &Network, spec: &ProblemSpec) -> Result<Problem, ProblemError> {
    if spec.ess_model.needs_voltage() && spec.network != NetworkKind::BranchFlow {
        return Err(ProblemError::Pairing { model: spec.ess_model.as_str(), network: spec.network.as_str() });
    }
    let h = net.horizon;
    let network_block = network::emit_network(spec.network, net, &h)?;
    let ctx = EssContext { horizon: h, base_mva: net.base_mva, terminal_soc: spec.terminal_soc, hull_variant: spec.hull_variant };
    let blocks = net
        .devices
        .iter()
        .enumerate()
        .map(|(d, dev)| emit_ess_block(spec.ess_model, dev, d, &ctx, &network_block))
        .collect::<Result<Vec<_>, _>>()?;
    let objective = network::emit_objective(spec.objective, net, &h, spec.prices.as_deref(), spec.network)?;
    assemble(
        &objective,
        &network_block,
        spec.network,
        &blocks,
        AssemblyMeta {
            base_mva: net.base_mva,
            devices: net.devices.clone(),
            terminal_soc: spec.terminal_soc,
            hull_variant: spec.hull_variant,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;
    use crate::network::tests::TWO_BUS;

    fn with_storage(periods: usize) -> Network {
        let text = format!("{TWO_BUS}[storage]\n2 1 1 0 100 50 0.9 0.9 0.01 0.01 1\n");
        let net = parse_case(&text).unwrap();
        net.with_horizon(Horizon::new(periods, 1.0).unwrap()).unwrap()
    }

    fn build(net: &Network, network: NetworkKind, model: EssModel) -> Result<Problem, ProblemError> {
        build_problem(net, &ProblemSpec::new(network, model, ObjectiveKind::GenerationCost))
    }

    #[test]
    fn dc_lossless_is_lp() {
        let p = build(&with_storage(2), NetworkKind::Dc, EssModel::Linear).unwrap();
        assert!(p.rows.binary_vars().is_empty());
        assert!(p.rows.cones.is_empty() && p.rows.quad.is_empty());
        assert_eq!(p.class(), ProblemClass::Lp);
    }

    #[test]
    fn dc_binary_model_counts_two_binaries_per_period() {
        let p = build(&with_storage(2), NetworkKind::Dc, EssModel::Milp).unwrap();
        assert_eq!(p.rows.binary_vars().len(), 4);
        assert_eq!(p.class(), ProblemClass::Milp);
    }

    #[test]
    fn hull_model_on_branch_flow_is_a_cone_program() {
        let p = build(&with_storage(2), NetworkKind::BranchFlow, EssModel::BessConvex).unwrap();
        let fams: Vec<_> = p.rows.cones.iter().map(|c| c.tag.family).collect();
        assert!(fams.contains(&crate::algebra::Family::BranchCone));
        assert!(fams.contains(&crate::algebra::Family::LossHull));
        assert!(!p.has_nonconvex());
        assert_eq!(p.class(), ProblemClass::Socp);
        let p = build(&with_storage(2), NetworkKind::BranchFlow, EssModel::BessLoss).unwrap();
        assert_eq!(p.class(), ProblemClass::Nonconvex);
        assert_eq!(p.loss_links.len(), 2);
    }

    #[test]
    fn battery_models_need_branch_flow() {
        let net = with_storage(1);
        for k in [NetworkKind::Dc, NetworkKind::LinearizedAc] {
            assert_eq!(
                build(&net, k, EssModel::BessLoss).unwrap_err(),
                ProblemError::Pairing { model: "bess-loss", network: k.as_str() }
            );
        }
    }

    #[test]
    fn bilinear_pairs_make_the_problem_nonconvex() {
        let p = build(&with_storage(2), NetworkKind::Dc, EssModel::Complementarity).unwrap();
        assert_eq!(p.rows.bilinear.len(), 2);
        assert_eq!(p.class(), ProblemClass::Nonconvex);
    }

    #[test]
    fn options_flow_through_assembly() {
        let net = with_storage(3);
        let mut spec = ProblemSpec::new(NetworkKind::BranchFlow, EssModel::BessConvex, ObjectiveKind::LossMin);
        spec.terminal_soc = true;
        spec.hull_variant = HullVariant::Symmetric;
        let p = build_problem(&net, &spec).unwrap();
        assert!(p.terminal_soc);
        assert_eq!(p.hull_variant, HullVariant::Symmetric);
        assert!(p.rows.linear.iter().any(|r| r.tag.name == "ess0.soc_terminal"));
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let net = with_storage(2);
        let h = net.horizon;
        let nb = network::emit_network(NetworkKind::Dc, &net, &h).unwrap();
        let short = EssContext::new(Horizon::new(1, 1.0).unwrap(), net.base_mva);
        let b = ess::emit_linear_model(&net.devices[0], 0, &short);
        let meta = AssemblyMeta { base_mva: 1.0, devices: net.devices.clone(), terminal_soc: false, hull_variant: HullVariant::AsPrinted };
        let obj = network::emit_objective(ObjectiveKind::GenerationCost, &net, &h, None, NetworkKind::Dc).unwrap();
        assert!(matches!(
            assemble(&obj, &nb, NetworkKind::Dc, &[b], meta),
            Err(ProblemError::HorizonMismatch { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn classification_is_deterministic_and_total() {
        let net = with_storage(2);
        for k in [NetworkKind::Dc, NetworkKind::LinearizedAc, NetworkKind::BranchFlow] {
            for m in [EssModel::Milp, EssModel::Linear, EssModel::Complementarity, EssModel::BessLoss, EssModel::BessConvex] {
                if let Ok(p) = build(&net, k, m) {
                    assert_eq!(classify(&p), classify(&p.clone()));
                }
            }
        }
    }

    proptest::proptest! {
        /// A point feasible for the network block, the storage block and the
        /// injection wiring is feasible for the assembled problem.
        #[test]
        fn assembly_preserves_block_feasibility(
            loads in proptest::collection::vec(1.5f64..4.0, 2),
            store in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let mut net = with_storage(2);
            net.load_active[1] = loads.clone();
            let h = net.horizon;
            let ctx = EssContext::new(h, net.base_mva);
            let nb = network::emit_network(NetworkKind::Dc, &net, &h).unwrap();
            let eb = ess::emit_linear_model(&net.devices[0], 0, &ctx);
            let x_reactance = net.branches[0].reactance;
            let mut values: BTreeMap<String, f64> = BTreeMap::new();
            for t in 0..2 {
                let flow = loads[t] - store[t];
                values.insert(format!("pg[1,{}]", t + 1), flow);
                values.insert(format!("f[1,{}]", t + 1), flow);
                values.insert(format!("theta[1,{}]", t + 1), 0.0);
                values.insert(format!("theta[2,{}]", t + 1), -flow * x_reactance);
                values.insert(format!("ess0.p_signed[{}]", t + 1), store[t]);
            }
            let local = |rows: &RowSet| -> Vec<f64> { rows.variables.iter().map(|v| values[&v.name]).collect() };
            let xe = local(&eb.rows);
            proptest::prop_assert!(eb.rows.worst_violation(&xe, true).value <= 1e-12);
            // network rows other than the balances, which need the injections
            let xn = local(&nb.rows);
            let balance: Vec<usize> = nb.balance.values().copied().collect();
            for (i, r) in nb.rows.linear.iter().enumerate() {
                if !balance.contains(&i) {
                    proptest::prop_assert!(r.violation(&xn) <= 1e-12);
                }
            }
            let p = build(&net, NetworkKind::Dc, EssModel::Linear).unwrap();
            let x = local(&p.rows);
            let w = p.rows.worst_violation(&x, true);
            proptest::prop_assert!(w.value <= 1e-12, "{} {}", w.row, w.value);
        }
    }
}
