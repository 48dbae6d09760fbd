//! Network constraint blocks and objective descriptions.
//!
//! All three blocks work in per-unit on `net.base_mva`. Variable names are
//! `name[bus,t]` for bus quantities, `name[k,t]` for branch `k` (1-based
//! position in `net.branches`) and `name[g,t]` for generator `g`.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::algebra::{Family, LinExpr, Square, VarId};
use crate::block::{BalanceKey, ConstraintBlock};
use crate::grid::{BusId, BusKind, Horizon, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("branch {index} ({from}-{to}) has zero reactance")]
    ZeroReactance { index: usize, from: BusId, to: BusId },
    #[error("branch-flow model needs a radial network: {0}")]
    NotRadial(String),
    #[error("network has no slack bus")]
    NoSlack,
    #[error("horizon has {expected} periods but loads cover {got}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("arbitrage objective needs a price for each of the {expected} periods, got {got}")]
    MissingPrices { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetworkKind {
    Dc,
    LinearizedAc,
    /// DistFlow with the branch cone relaxation; radial networks only.
    BranchFlow,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::Dc, NetworkKind::LinearizedAc, NetworkKind::BranchFlow];

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Dc => "dc",
            NetworkKind::LinearizedAc => "linac",
            NetworkKind::BranchFlow => "distflow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectiveKind {
    GenerationCost,
    LossMin,
    ArbitrageProfit,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] =
        [ObjectiveKind::GenerationCost, ObjectiveKind::LossMin, ObjectiveKind::ArbitrageProfit];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::GenerationCost => "cost",
            ObjectiveKind::LossMin => "loss",
            ObjectiveKind::ArbitrageProfit => "arbitrage",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Objective in terms of network variable names, valued in dollars (or MWh
/// for loss minimization). Resolved against the assembled problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveSpec {
    pub linear: Vec<(String, f64)>,
    /// `weight · var²` terms, weights nonnegative.
    pub squares: Vec<(String, f64)>,
    pub constant: f64,
    /// Per-period weight on power drawn by storage (minus its grid injection),
    /// per-unit. Empty unless the objective prices storage purchases.
    pub storage_purchase: Vec<f64>,
}

fn check_loads(net: &Network, h: &Horizon) -> Result<(), NetworkError> {
    for row in net.load_active.iter().chain(&net.load_reactive) {
        if row.len() != h.num_periods {
            return Err(NetworkError::HorizonMismatch { expected: h.num_periods, got: row.len() });
        }
    }
    Ok(())
}

fn bus_name(var: &str, bus: BusId, t: usize) -> String {
    format!("{var}[{bus},{}]", t + 1)
}

fn idx_name(var: &str, k: usize, t: usize) -> String {
    format!("{var}[{},{}]", k + 1, t + 1)
}

/// Generator variables plus one balance row per bus and period holding
/// `Σ gen − load`; callers add the flow terms.
fn balance_skeleton(block: &mut ConstraintBlock, net: &Network, h: &Horizon, reactive: bool) {
    let base = net.base_mva;
    for t in h.periods() {
        let mut exprs: Vec<LinExpr> = net
            .buses
            .iter()
            .enumerate()
            .map(|(b, _)| {
                let load = if reactive { net.load_reactive[b][t] } else { net.load_active[b][t] };
                LinExpr::constant(-load / base)
            })
            .collect();
        for (g, gen) in net.generators.iter().enumerate() {
            let v = if reactive {
                block.rows.add_var(idx_name("qg", g, t), gen.q_min / base, gen.q_max / base)
            } else {
                block.rows.add_var(idx_name("pg", g, t), gen.p_min / base, gen.p_max / base)
            };
            let b = net.bus_index(gen.bus).expect("validated generator bus");
            exprs[b].add_term(v, 1.0);
        }
        let family = if reactive { Family::ReactiveBalance } else { Family::ActiveBalance };
        let label = if reactive { "q_balance" } else { "p_balance" };
        for (b, expr) in exprs.into_iter().enumerate() {
            let bus = net.buses[b].id;
            block.balance.insert(BalanceKey { bus, period: t, reactive }, block.rows.linear.len());
            block.rows.equal(family, bus_name(label, bus, t), expr);
        }
    }
}

fn add_to_balance(block: &mut ConstraintBlock, bus: BusId, t: usize, reactive: bool, v: VarId, coef: f64) {
    let row = block.balance[&BalanceKey { bus, period: t, reactive }];
    block.rows.linear[row].expr.add_term(v, coef);
}

fn check_reactance(net: &Network) -> Result<(), NetworkError> {
    for (k, br) in net.branches.iter().enumerate() {
        if br.reactance == 0.0 {
            return Err(NetworkError::ZeroReactance { index: k + 1, from: br.from_bus, to: br.to_bus });
        }
    }
    Ok(())
}

/// DC power flow: angles, `f = (θ_from − θ_to)/x`, flow limits, slack angle 0.
pub fn emit_dc_network(net: &Network, h: &Horizon) -> Result<ConstraintBlock, NetworkError> {
    check_loads(net, h)?;
    check_reactance(net)?;
    let slack = net.slack_index().ok_or(NetworkError::NoSlack)?;
    let mut block = ConstraintBlock::new("network.dc", *h);
    balance_skeleton(&mut block, net, h, false);
    for t in h.periods() {
        let theta: Vec<VarId> = net
            .buses
            .iter()
            .enumerate()
            .map(|(b, bus)| {
                let (lo, up) = if b == slack { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                block.rows.add_var(bus_name("theta", bus.id, t), lo, up)
            })
            .collect();
        for (k, br) in net.branches.iter().enumerate() {
            let limit = br.flow_limit / net.base_mva;
            let f = block.rows.add_var(idx_name("f", k, t), -limit, limit);
            let (i, j) = (net.bus_index(br.from_bus).unwrap(), net.bus_index(br.to_bus).unwrap());
            block.rows.equal(
                Family::AngleFlow,
                idx_name("angle_flow", k, t),
                LinExpr::var(f).term(theta[i], -1.0 / br.reactance).term(theta[j], 1.0 / br.reactance),
            );
            add_to_balance(&mut block, br.from_bus, t, false, f, -1.0);
            add_to_balance(&mut block, br.to_bus, t, false, f, 1.0);
        }
    }
    Ok(block)
}

/// DC block plus decoupled reactive flow `qf = (vm_from − vm_to)/x`
/// linearized at flat start, voltage-magnitude bounds and reactive balance.
/// The slack magnitude is the 1.0 pu reference.
pub fn emit_linearized_ac_network(net: &Network, h: &Horizon) -> Result<ConstraintBlock, NetworkError> {
    let mut block = emit_dc_network(net, h)?;
    block.name = "network.linac".into();
    let slack = net.slack_index().ok_or(NetworkError::NoSlack)?;
    balance_skeleton(&mut block, net, h, true);
    for t in h.periods() {
        let vm: Vec<VarId> = net
            .buses
            .iter()
            .enumerate()
            .map(|(b, bus)| {
                let (lo, up) = if b == slack { (1.0, 1.0) } else { (bus.v_sq_min.sqrt(), bus.v_sq_max.sqrt()) };
                block.rows.add_var(bus_name("vm", bus.id, t), lo, up)
            })
            .collect();
        for (k, br) in net.branches.iter().enumerate() {
            let qf = block.rows.add_var(idx_name("qf", k, t), f64::NEG_INFINITY, f64::INFINITY);
            let (i, j) = (net.bus_index(br.from_bus).unwrap(), net.bus_index(br.to_bus).unwrap());
            block.rows.equal(
                Family::ReactiveFlow,
                idx_name("reactive_flow", k, t),
                LinExpr::var(qf).term(vm[i], -1.0 / br.reactance).term(vm[j], 1.0 / br.reactance),
            );
            add_to_balance(&mut block, br.from_bus, t, true, qf, -1.0);
            add_to_balance(&mut block, br.to_bus, t, true, qf, 1.0);
        }
    }
    Ok(block)
}

/// Branches of a radial network oriented away from the slack bus:
/// `(branch index, parent bus index, child bus index)` in BFS order.
fn orient_radial(net: &Network) -> Result<Vec<(usize, usize, usize)>, NetworkError> {
    if !net.is_radial() {
        return Err(NetworkError::NotRadial(format!(
            "{} branches over {} buses do not form a spanning tree",
            net.branches.len(),
            net.buses.len()
        )));
    }
    let slack = net.slack_index().ok_or(NetworkError::NoSlack)?;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); net.buses.len()];
    for (k, br) in net.branches.iter().enumerate() {
        let (i, j) = (net.bus_index(br.from_bus).unwrap(), net.bus_index(br.to_bus).unwrap());
        adj[i].push((k, j));
        adj[j].push((k, i));
    }
    let mut seen = vec![false; net.buses.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(i) = queue.pop_front() {
        for &(k, j) in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                out.push((k, i, j));
                queue.push_back(j);
            }
        }
    }
    Ok(out)
}

/// DistFlow branch-flow model with the cone relaxation `P² + Q² ≤ ℓ·V_from`.
///
/// Branch flows are measured at the parent end; `ℓ` is squared current,
/// bounded by the squared flow limit at 1 pu voltage. The slack squared
/// voltage is the 1.0 pu reference.
pub fn emit_branch_flow_socp(net: &Network, h: &Horizon) -> Result<ConstraintBlock, NetworkError> {
    check_loads(net, h)?;
    let oriented = orient_radial(net)?;
    let slack = net.slack_index().ok_or(NetworkError::NoSlack)?;
    let base = net.base_mva;
    let mut block = ConstraintBlock::new("network.distflow", *h);
    balance_skeleton(&mut block, net, h, false);
    balance_skeleton(&mut block, net, h, true);
    for t in h.periods() {
        let v: Vec<VarId> = net
            .buses
            .iter()
            .enumerate()
            .map(|(b, bus)| {
                let (lo, up) = if b == slack { (1.0, 1.0) } else { (bus.v_sq_min, bus.v_sq_max) };
                let id = block.rows.add_var(bus_name("v_sq", bus.id, t), lo, up);
                block.voltages.insert((bus.id, t), id);
                id
            })
            .collect();
        for &(k, i, j) in &oriented {
            let br = &net.branches[k];
            let (r, x) = (br.resistance, br.reactance);
            let limit = br.flow_limit / base;
            let p = block.rows.add_var(idx_name("P", k, t), f64::NEG_INFINITY, f64::INFINITY);
            let q = block.rows.add_var(idx_name("Q", k, t), f64::NEG_INFINITY, f64::INFINITY);
            let l = block.rows.add_var(idx_name("l", k, t), 0.0, limit * limit);
            block.rows.equal(
                Family::VoltageDrop,
                idx_name("voltage_drop", k, t),
                LinExpr::var(v[j])
                    .term(v[i], -1.0)
                    .term(p, 2.0 * r)
                    .term(q, 2.0 * x)
                    .term(l, -(r * r + x * x)),
            );
            // ‖(2P, 2Q, ℓ − V)‖ ≤ ℓ + V  ⇔  P² + Q² ≤ ℓ·V
            block.rows.soc(
                Family::BranchCone,
                idx_name("branch_cone", k, t),
                LinExpr::var(l).term(v[i], 1.0),
                vec![LinExpr::new().term(p, 2.0), LinExpr::new().term(q, 2.0), LinExpr::var(l).term(v[i], -1.0)],
            );
            let (parent, child) = (net.buses[i].id, net.buses[j].id);
            add_to_balance(&mut block, parent, t, false, p, -1.0);
            add_to_balance(&mut block, parent, t, true, q, -1.0);
            add_to_balance(&mut block, child, t, false, p, 1.0);
            add_to_balance(&mut block, child, t, false, l, -r);
            add_to_balance(&mut block, child, t, true, q, 1.0);
            add_to_balance(&mut block, child, t, true, l, -x);
        }
    }
    Ok(block)
}

pub fn emit_network(kind: NetworkKind, net: &Network, h: &Horizon) -> Result<ConstraintBlock, NetworkError> {
    match kind {
        NetworkKind::Dc => emit_dc_network(net, h),
        NetworkKind::LinearizedAc => emit_linearized_ac_network(net, h),
        NetworkKind::BranchFlow => emit_branch_flow_socp(net, h),
    }
}

/// Objective over the variables of the `network` block kind.
///
/// Cost: `Σ dt·(c2·p² + c1·p + c0)` in $ with `p` in MW. Loss: branch energy
/// loss in MWh (`r·ℓ` for the branch-flow model, the flow-squared proxy
/// otherwise). Arbitrage: `Σ dt·price·(power drawn by storage)` in $, so the
/// optimum is minus the profit.
pub fn emit_objective(
    kind: ObjectiveKind,
    net: &Network,
    h: &Horizon,
    prices: Option<&[f64]>,
    network: NetworkKind,
) -> Result<ObjectiveSpec, NetworkError> {
    let base = net.base_mva;
    let dt = h.dt_hours;
    let mut spec = ObjectiveSpec::default();
    match kind {
        ObjectiveKind::GenerationCost => {
            for t in h.periods() {
                for (g, gen) in net.generators.iter().enumerate() {
                    let name = idx_name("pg", g, t);
                    if gen.cost_quadratic != 0.0 {
                        spec.squares.push((name.clone(), dt * gen.cost_quadratic * base * base));
                    }
                    if gen.cost_linear != 0.0 {
                        spec.linear.push((name, dt * gen.cost_linear * base));
                    }
                    spec.constant += dt * gen.cost_constant;
                }
            }
        }
        ObjectiveKind::LossMin => {
            for t in h.periods() {
                for (k, br) in net.branches.iter().enumerate() {
                    if br.resistance == 0.0 {
                        continue;
                    }
                    let w = dt * base * br.resistance;
                    match network {
                        NetworkKind::BranchFlow => spec.linear.push((idx_name("l", k, t), w)),
                        NetworkKind::Dc => spec.squares.push((idx_name("f", k, t), w)),
                        NetworkKind::LinearizedAc => {
                            spec.squares.push((idx_name("f", k, t), w));
                            spec.squares.push((idx_name("qf", k, t), w));
                        }
                    }
                }
            }
        }
        ObjectiveKind::ArbitrageProfit => {
            let prices = prices.unwrap_or(&[]);
            if prices.len() != h.num_periods {
                return Err(NetworkError::MissingPrices { expected: h.num_periods, got: prices.len() });
            }
            spec.storage_purchase = prices.iter().map(|p| dt * p * base).collect();
        }
    }
    Ok(spec)
}

/// Buses by kind, for diagnostics.
pub fn bus_kinds(net: &Network) -> BTreeMap<BusId, BusKind> {
    net.buses.iter().map(|b| (b.id, b.kind)).collect()
}

pub(crate) fn squares_from_spec(spec: &ObjectiveSpec, lookup: impl Fn(&str) -> Option<VarId>) -> Result<Vec<Square>, String> {
    spec.squares
        .iter()
        .map(|(n, w)| lookup(n).map(|v| Square::new(*w, LinExpr::var(v))).ok_or_else(|| n.clone()))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::parse_case;

    pub(crate) const TWO_BUS: &str = "\
[meta]
base_mva 1
num_periods 1
dt_hours 1
[buses]
1 slack 1.0 1.0
2 pq 0.9 1.1
[branches]
1 2 0.0 0.1 5
[generators]
1 0 10 -10 10 0 10 0
[loads]
2 p 1
";

    #[test]
    fn objective_hand_sum() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net = net.with_horizon(Horizon::new(4, 1.0).unwrap()).unwrap();
        let spec = emit_objective(ObjectiveKind::GenerationCost, &net, &net.horizon, None, NetworkKind::Dc).unwrap();
        // c1 = 10 $/MWh, 2 MW for 4 one-hour periods
        let total: f64 = spec.linear.iter().map(|(_, c)| c * 2.0).sum::<f64>() + spec.constant;
        assert_eq!(total, 80.0);
    }

    #[test]
    fn zero_cost_objective_is_empty() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.generators[0].cost_linear = 0.0;
        let spec = emit_objective(ObjectiveKind::GenerationCost, &net, &net.horizon, None, NetworkKind::Dc).unwrap();
        assert_eq!(spec, ObjectiveSpec::default());
    }

    #[test]
    fn arbitrage_needs_prices() {
        let net = parse_case(TWO_BUS).unwrap();
        let err = emit_objective(ObjectiveKind::ArbitrageProfit, &net, &net.horizon, None, NetworkKind::Dc);
        assert_eq!(err, Err(NetworkError::MissingPrices { expected: 1, got: 0 }));
    }

    #[test]
    fn zero_reactance_rejected() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].reactance = 0.0;
        assert!(matches!(emit_dc_network(&net, &net.horizon), Err(NetworkError::ZeroReactance { index: 1, .. })));
    }

    #[test]
    fn dc_two_bus_hand_point() {
        let net = parse_case(TWO_BUS).unwrap();
        let b = emit_dc_network(&net, &net.horizon).unwrap();
        let mut x = vec![0.0; b.rows.num_vars()];
        let set = |x: &mut Vec<f64>, n: &str, v: f64| x[b.rows.var_id(n).unwrap().0] = v;
        set(&mut x, "pg[1,1]", 1.0);
        set(&mut x, "f[1,1]", 1.0);
        set(&mut x, "theta[2,1]", -0.1);
        assert!(b.rows.worst_violation(&x, false).value < 1e-15);
        // zero load: all-zero point
        let mut idle = net.clone();
        idle.load_active[1][0] = 0.0;
        let b = emit_dc_network(&idle, &idle.horizon).unwrap();
        assert_eq!(b.rows.worst_violation(&vec![0.0; b.rows.num_vars()], false).value, 0.0);
    }

    #[test]
    fn linac_reactive_drop() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.load_reactive[1][0] = 0.5;
        let b = emit_linearized_ac_network(&net, &net.horizon).unwrap();
        let mut x = vec![0.0; b.rows.num_vars()];
        for (n, v) in [
            ("pg[1,1]", 1.0),
            ("f[1,1]", 1.0),
            ("theta[2,1]", -0.1),
            ("qg[1,1]", 0.5),
            ("qf[1,1]", 0.5),
            ("vm[1,1]", 1.0),
            ("vm[2,1]", 1.0 - 0.1 * 0.5),
        ] {
            x[b.rows.var_id(n).unwrap().0] = v;
        }
        assert!(b.rows.worst_violation(&x, false).value < 1e-15);
    }

    #[test]
    fn distflow_rejects_mesh() {
        let mut net = parse_case(TWO_BUS).unwrap();
        let extra = net.branches[0].clone();
        net.branches.push(extra);
        assert!(matches!(emit_branch_flow_socp(&net, &net.horizon), Err(NetworkError::NotRadial(_))));
    }

    #[test]
    fn distflow_zero_load_flat() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.load_active[1][0] = 0.0;
        let b = emit_branch_flow_socp(&net, &net.horizon).unwrap();
        let mut x = vec![0.0; b.rows.num_vars()];
        for &v in b.voltages.values() {
            x[v.0] = 1.0;
        }
        assert_eq!(b.rows.worst_violation(&x, false).value, 0.0);
        assert_eq!(b.voltages.len(), 2);
    }

    #[test]
    fn emitters_are_deterministic() {
        let net = parse_case(TWO_BUS).unwrap();
        for kind in NetworkKind::ALL {
            assert_eq!(emit_network(kind, &net, &net.horizon), emit_network(kind, &net, &net.horizon));
        }
    }
}
