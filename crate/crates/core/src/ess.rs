//! Storage constraint models.
//!
//! Every model is emitted as a [`ConstraintBlock`] in per-unit on the case
//! base. Energy bookkeeping uses one internal convention: `p_store` is power
//! into the reservoir and `soc[t] = e_init + dt·Σ_{k≤t} p_store[k]`. Each
//! model maps onto it as follows:
//!
//! | model            | `p_store`                 | grid injection        |
//! |------------------|---------------------------|-----------------------|
//! | milp             | `p_net`                   | `p_disch − p_ch`      |
//! | linear           | `−p_signed`               | `p_signed`            |
//! | complementarity  | `p_net`                   | `p_disch − p_ch`      |
//! | bess-loss/convex | `−p_net = −(p + p_loss)`  | `p_signed`, `q_ess`   |
//!
//! `p_net` of the efficiency models is `η_ch·p_ch − p_disch/η_disch`; for the
//! battery models it is `p_signed + p_loss`, the power leaving the reservoir.

use thiserror::Error;

use crate::algebra::{Family, LinExpr, RowSet, Square, VarId};
use crate::block::{ConstraintBlock, EssModel, EssVarMap, Injection, LossLink, PeriodVars};
use crate::grid::{BusId, EssDevice, Horizon};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EssError {
    #[error("storage model {model} at bus {bus} needs squared-voltage variables, which the network block does not provide")]
    MissingVoltage { model: &'static str, bus: BusId },
}

/// Which resistance multiplies `q²` in the reactive hull row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HullVariant {
    /// Battery resistance `r_bess` on `q²`, the published form.
    #[default]
    AsPrinted,
    /// Converter resistance `r_cvt`, mirroring the loss equality.
    Symmetric,
}

impl HullVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            HullVariant::AsPrinted => "as_printed",
            HullVariant::Symmetric => "symmetric",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as_printed" | "as-printed" => Some(HullVariant::AsPrinted),
            "symmetric" => Some(HullVariant::Symmetric),
            _ => None,
        }
    }
}

/// Settings shared by every storage emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssContext {
    pub horizon: Horizon,
    pub base_mva: f64,
    /// Require the final state of charge to equal the initial one.
    pub terminal_soc: bool,
    pub hull_variant: HullVariant,
}

impl EssContext {
    pub fn new(horizon: Horizon, base_mva: f64) -> Self {
        Self { horizon, base_mva, terminal_soc: false, hull_variant: HullVariant::default() }
    }
}

fn name(device: usize, var: &str, t: usize) -> String {
    format!("ess{device}.{var}[{}]", t + 1)
}

/// Device ratings converted to per-unit.
struct PerUnit {
    p_ch_max: f64,
    p_disch_max: f64,
    e_min: f64,
    e_max: f64,
    e_init: f64,
    s_max: f64,
}

impl PerUnit {
    fn new(dev: &EssDevice, base: f64) -> Self {
        Self {
            p_ch_max: dev.p_ch_max / base,
            p_disch_max: dev.p_disch_max / base,
            e_min: dev.e_min / base,
            e_max: dev.e_max / base,
            e_init: dev.e_init / base,
            s_max: dev.s_cvt_max / base,
        }
    }
}

/// Energy band rows over the running sum of `store`, plus the optional terminal row.
fn soc_rows(rows: &mut RowSet, device: usize, pu: &PerUnit, store: &[LinExpr], ctx: &EssContext) {
    let dt = ctx.horizon.dt_hours;
    let mut energy = LinExpr::constant(pu.e_init);
    for (t, s) in store.iter().enumerate() {
        energy.add_expr(s, dt);
        rows.le(Family::SocBand, name(device, "soc_min", t), energy.scaled(-1.0).plus(pu.e_min));
        rows.le(Family::SocBand, name(device, "soc_max", t), energy.clone().plus(-pu.e_max));
    }
    if ctx.terminal_soc {
        let mut total = LinExpr::new();
        for s in store {
            total.add_expr(s, 1.0);
        }
        rows.equal(Family::TerminalSoc, format!("ess{device}.soc_terminal"), total);
    }
}

fn block_for(dev: &EssDevice, device: usize, model: EssModel, ctx: &EssContext) -> ConstraintBlock {
    let mut block = ConstraintBlock::new(format!("ess{device}.{}", model.as_str()), ctx.horizon);
    block.ess = Some(EssVarMap {
        device,
        bus: dev.bus,
        model,
        periods: vec![PeriodVars::default(); ctx.horizon.num_periods],
    });
    block
}

fn periods_mut(block: &mut ConstraintBlock) -> &mut Vec<PeriodVars> {
    &mut block.ess.as_mut().expect("storage block").periods
}

/// Charge/discharge variables with the efficiency net-power row. Shared by the
/// binary and complementarity models; returns `(p_ch, p_disch, p_net)` per period.
fn efficiency_core(
    block: &mut ConstraintBlock,
    dev: &EssDevice,
    device: usize,
    ctx: &EssContext,
    ch_upper: f64,
    disch_upper: f64,
) -> Vec<(VarId, VarId, VarId)> {
    let mut out = Vec::new();
    for t in ctx.horizon.periods() {
        let rows = &mut block.rows;
        let p_ch = rows.add_var(name(device, "p_ch", t), 0.0, ch_upper);
        let p_disch = rows.add_var(name(device, "p_disch", t), 0.0, disch_upper);
        let p_net = rows.add_var(name(device, "p_net", t), f64::NEG_INFINITY, f64::INFINITY);
        rows.equal(
            Family::NetPower,
            name(device, "net_power", t),
            LinExpr::var(p_net).term(p_ch, -dev.eta_ch).term(p_disch, 1.0 / dev.eta_disch),
        );
        let pv = &mut periods_mut(block)[t];
        pv.p_ch = Some(p_ch);
        pv.p_disch = Some(p_disch);
        pv.p_net = Some(p_net);
        block.injections.push(Injection {
            bus: dev.bus,
            period: t,
            active: LinExpr::var(p_disch).term(p_ch, -1.0),
            reactive: None,
        });
        out.push((p_ch, p_disch, p_net));
    }
    out
}

/// Binary charge/discharge model with efficiencies.
pub fn emit_milp_model(dev: &EssDevice, device: usize, ctx: &EssContext) -> ConstraintBlock {
    let pu = PerUnit::new(dev, ctx.base_mva);
    let mut block = block_for(dev, device, EssModel::Milp, ctx);
    let core = efficiency_core(&mut block, dev, device, ctx, f64::INFINITY, f64::INFINITY);
    for (t, &(p_ch, p_disch, _)) in core.iter().enumerate() {
        let rows = &mut block.rows;
        let a_ch = rows.add_binary(name(device, "alpha_ch", t));
        let a_disch = rows.add_binary(name(device, "alpha_disch", t));
        rows.le(Family::ChargeLimit, name(device, "charge_limit", t), LinExpr::var(p_ch).term(a_ch, -pu.p_ch_max));
        rows.le(
            Family::DischargeLimit,
            name(device, "discharge_limit", t),
            LinExpr::var(p_disch).term(a_disch, -pu.p_disch_max),
        );
        rows.le(
            Family::ModeExclusive,
            name(device, "mode_exclusive", t),
            LinExpr::var(a_ch).term(a_disch, 1.0).plus(-1.0),
        );
        let pv = &mut periods_mut(&mut block)[t];
        pv.alpha_ch = Some(a_ch);
        pv.alpha_disch = Some(a_disch);
    }
    let store: Vec<LinExpr> = core.iter().map(|&(_, _, p_net)| LinExpr::var(p_net)).collect();
    soc_rows(&mut block.rows, device, &pu, &store, ctx);
    block
}

/// Lossless signed-power model: `p_signed > 0` discharges.
pub fn emit_linear_model(dev: &EssDevice, device: usize, ctx: &EssContext) -> ConstraintBlock {
    let pu = PerUnit::new(dev, ctx.base_mva);
    let mut block = block_for(dev, device, EssModel::Linear, ctx);
    let mut store = Vec::new();
    for t in ctx.horizon.periods() {
        let p = block.rows.add_var(name(device, "p_signed", t), -pu.p_ch_max, pu.p_disch_max);
        periods_mut(&mut block)[t].p_signed = Some(p);
        block.injections.push(Injection { bus: dev.bus, period: t, active: LinExpr::var(p), reactive: None });
        store.push(LinExpr::new().term(p, -1.0));
    }
    soc_rows(&mut block.rows, device, &pu, &store, ctx);
    block
}

/// Efficiency model where the charge·discharge product must vanish; the
/// products are kept as bilinear pairs for the solver to handle.
pub fn emit_complementarity_model(dev: &EssDevice, device: usize, ctx: &EssContext) -> ConstraintBlock {
    let pu = PerUnit::new(dev, ctx.base_mva);
    let mut block = block_for(dev, device, EssModel::Complementarity, ctx);
    let core = efficiency_core(&mut block, dev, device, ctx, pu.p_ch_max, pu.p_disch_max);
    for (t, &(p_ch, p_disch, _)) in core.iter().enumerate() {
        block.rows.bilinear(Family::Complementarity, name(device, "no_simultaneous", t), p_ch, p_disch);
    }
    let store: Vec<LinExpr> = core.iter().map(|&(_, _, p_net)| LinExpr::var(p_net)).collect();
    soc_rows(&mut block.rows, device, &pu, &store, ctx);
    block
}

/// Shared battery-circuit variables, net-power and converter rows; the loss
/// relation itself is added by the caller.
fn bess_core(
    dev: &EssDevice,
    device: usize,
    ctx: &EssContext,
    network: &ConstraintBlock,
    model: EssModel,
) -> Result<(ConstraintBlock, Vec<LossLink>), EssError> {
    let pu = PerUnit::new(dev, ctx.base_mva);
    let mut block = block_for(dev, device, model, ctx);
    let mut links = Vec::new();
    let mut store = Vec::new();
    for t in ctx.horizon.periods() {
        let v_net = *network
            .voltages
            .get(&(dev.bus, t))
            .ok_or(EssError::MissingVoltage { model: model.as_str(), bus: dev.bus })?;
        let v_var = network.rows.var(v_net);
        let rows = &mut block.rows;
        let v_sq = rows.add_external(v_var.name.clone(), v_var.lower, v_var.upper);
        let p = rows.add_var(name(device, "p_signed", t), -pu.s_max, pu.s_max);
        let q = rows.add_var(name(device, "q_ess", t), -pu.s_max, pu.s_max);
        let p_loss = rows.add_var(name(device, "p_loss", t), 0.0, f64::INFINITY);
        let p_net = rows.add_var(name(device, "p_net", t), f64::NEG_INFINITY, f64::INFINITY);
        rows.equal(
            Family::NetWithLoss,
            name(device, "net_with_loss", t),
            LinExpr::var(p_net).term(p, -1.0).term(p_loss, -1.0),
        );
        rows.soc(
            Family::ConverterRating,
            name(device, "converter_rating", t),
            LinExpr::constant(pu.s_max),
            vec![LinExpr::var(p), LinExpr::var(q)],
        );
        store.push(LinExpr::new().term(p_net, -1.0));
        block.injections.push(Injection {
            bus: dev.bus,
            period: t,
            active: LinExpr::var(p),
            reactive: Some(LinExpr::var(q)),
        });
        let pv = &mut periods_mut(&mut block)[t];
        pv.p_signed = Some(p);
        pv.q_ess = Some(q);
        pv.p_loss = Some(p_loss);
        pv.p_net = Some(p_net);
        pv.v_sq = Some(v_sq);
        links.push(LossLink {
            device,
            period: t,
            p_loss,
            v_sq,
            p_signed: p,
            q_ess: q,
            r_eq: dev.r_eq(),
            r_cvt: dev.r_cvt,
            r_bess: dev.r_bess,
            s_max: pu.s_max,
            v_sq_min: v_var.lower,
            v_sq_max: v_var.upper,
        });
    }
    soc_rows(&mut block.rows, device, &pu, &store, ctx);
    Ok((block, links))
}

/// Battery model with the exact ohmic-loss equality `p_loss·V = r_eq·p² + r_cvt·q²`.
///
/// `network` must expose squared-voltage variables at the device bus (only the
/// branch-flow block does).
pub fn emit_bess_loss_model(
    dev: &EssDevice,
    device: usize,
    ctx: &EssContext,
    network: &ConstraintBlock,
) -> Result<ConstraintBlock, EssError> {
    let (mut block, links) = bess_core(dev, device, ctx, network, EssModel::BessLoss)?;
    for link in &links {
        block.rows.product_eq(
            Family::LossEquation,
            name(device, "loss", link.period),
            link.p_loss,
            link.v_sq,
            loss_squares(link),
        );
    }
    block.loss_links = links;
    Ok(block)
}

/// Battery model with the loss equality replaced by its convex hull over the
/// voltage band and the converter disc.
pub fn emit_bess_convex_model(
    dev: &EssDevice,
    device: usize,
    ctx: &EssContext,
    network: &ConstraintBlock,
) -> Result<ConstraintBlock, EssError> {
    let (mut block, links) = bess_core(dev, device, ctx, network, EssModel::BessConvex)?;
    for link in &links {
        hull_rows(&mut block.rows, link, ctx.hull_variant, &format!("ess{device}"));
    }
    block.loss_links = links;
    Ok(block)
}

pub(crate) fn loss_squares(link: &LossLink) -> Vec<Square> {
    vec![
        Square::new(link.r_eq, LinExpr::var(link.p_signed)),
        Square::new(link.r_cvt, LinExpr::var(link.q_ess)),
    ]
}

/// The three convex rows that replace one loss equality.
pub(crate) fn hull_rows(rows: &mut RowSet, link: &LossLink, variant: HullVariant, prefix: &str) {
    let t = link.period + 1;
    let s2 = link.s_max * link.s_max;
    rows.rotated(
        Family::LossHull,
        format!("{prefix}.loss_hull[{t}]"),
        LinExpr::var(link.p_loss),
        LinExpr::var(link.v_sq),
        loss_squares(link),
    );
    let r_q = match variant {
        HullVariant::AsPrinted => link.r_bess,
        HullVariant::Symmetric => link.r_cvt,
    };
    rows.quad_le(
        Family::LossHullReactive,
        format!("{prefix}.loss_hull_reactive[{t}]"),
        vec![Square::new(r_q, LinExpr::var(link.q_ess))],
        LinExpr::new().term(link.p_loss, link.v_sq_min).plus(-link.r_eq * s2),
    );
    rows.le(
        Family::LossHullVoltage,
        format!("{prefix}.loss_hull_voltage[{t}]"),
        LinExpr::new()
            .term(link.v_sq, s2)
            .term(link.p_loss, link.v_sq_min * link.v_sq_max)
            .plus(-s2 * (link.v_sq_min + link.v_sq_max)),
    );
}

/// Power into the reservoir for one period, per the convention above.
pub fn store_power(model: EssModel, p_net: f64, p_signed: f64) -> f64 {
    match model {
        EssModel::Milp | EssModel::Complementarity => p_net,
        EssModel::Linear => -p_signed,
        EssModel::BessLoss | EssModel::BessConvex => -p_net,
    }
}

/// `soc[t] = e_init + dt·Σ_{k≤t} p_store[k]`, MWh. Pure arithmetic, no bounds check.
///
/// Panics if the series length differs from the horizon.
pub fn soc_trajectory(dev: &EssDevice, p_store: &[f64], horizon: &Horizon) -> Vec<f64> {
    assert_eq!(p_store.len(), horizon.num_periods, "series length must match the horizon");
    // Neumaier compensated running sum.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    p_store
        .iter()
        .map(|&p| {
            let v = horizon.dt_hours * p;
            let s = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
            sum = s;
            dev.e_init + (sum + comp)
        })
        .collect()
}
