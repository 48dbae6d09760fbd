//! Solver-independent checks of dispatch schedules.
//!
//! A [`DispatchSchedule`] holds storage trajectories in natural units (MW,
//! MVAr, MWh). [`audit_schedule`] re-evaluates every storage constraint
//! family from the raw device parameters; it never looks at solver residuals.
//! The hull sampler and gap series probe the convex loss envelope directly.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::block::EssModel;
use crate::ess::{soc_trajectory, store_power, HullVariant};
use crate::grid::{Bus, BusId, EssDevice, Horizon, Network};
use crate::problem::Problem;
use crate::solver::Solution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("device {device} ({model}) needs squared voltage at bus {bus}, which the schedule lacks")]
    MissingVoltage { device: usize, model: &'static str, bus: BusId },
    #[error("bus {0} is not in the network")]
    UnknownBus(BusId),
    #[error("solution has no primal point (status {0})")]
    NoPoint(&'static str),
    #[error("schedule csv: {0}")]
    Csv(String),
    #[error("hull sampling needs {0}")]
    Precondition(String),
}

/// One device's trajectories. Quantities a model does not use are derived
/// (`p_ch`/`p_disch` from `p_signed` and vice versa) or zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSchedule {
    pub device: usize,
    pub bus: BusId,
    pub model: EssModel,
    pub p_ch: Vec<f64>,
    pub p_disch: Vec<f64>,
    /// Grid injection, discharge positive.
    pub p_signed: Vec<f64>,
    /// Model-specific net power: into the reservoir for the efficiency and
    /// linear models, out of it (`p_signed + p_loss`) for the battery models.
    pub p_net: Vec<f64>,
    pub soc: Vec<f64>,
    pub q_ess: Vec<f64>,
    pub p_loss: Vec<f64>,
}

impl DeviceSchedule {
    /// All-zero trajectories with SOC held at `e_init`.
    pub fn zero(device: usize, dev: &EssDevice, model: EssModel, periods: usize) -> Self {
        let z = vec![0.0; periods];
        DeviceSchedule {
            device,
            bus: dev.bus,
            model,
            p_ch: z.clone(),
            p_disch: z.clone(),
            p_signed: z.clone(),
            p_net: z.clone(),
            soc: vec![dev.e_init; periods],
            q_ess: z.clone(),
            p_loss: z,
        }
    }

    /// Power into the reservoir per period, MW.
    pub fn p_store(&self) -> Vec<f64> {
        self.p_net.iter().zip(&self.p_signed).map(|(&n, &s)| store_power(self.model, n, s)).collect()
    }

    fn series(&self) -> [(&'static str, &Vec<f64>); 7] {
        [
            ("p_ch", &self.p_ch),
            ("p_disch", &self.p_disch),
            ("p_signed", &self.p_signed),
            ("p_net", &self.p_net),
            ("soc", &self.soc),
            ("q_ess", &self.q_ess),
            ("p_loss", &self.p_loss),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSchedule {
    pub horizon: Horizon,
    pub base_mva: f64,
    pub devices: Vec<DeviceSchedule>,
    /// Squared voltage magnitude per bus and period, when the network has it.
    pub bus_v_sq: BTreeMap<BusId, Vec<f64>>,
}

impl DispatchSchedule {
    pub fn check_dimensions(&self, h: &Horizon, n_devices: usize) -> Result<(), AuditError> {
        if self.horizon.num_periods != h.num_periods {
            return Err(AuditError::Dimension(format!(
                "schedule has {} periods, horizon has {}",
                self.horizon.num_periods, h.num_periods
            )));
        }
        if self.devices.len() != n_devices {
            return Err(AuditError::Dimension(format!(
                "schedule has {} devices, case has {n_devices}",
                self.devices.len()
            )));
        }
        for (i, d) in self.devices.iter().enumerate() {
            if d.device != i {
                return Err(AuditError::Dimension(format!("device entry {i} is labelled {}", d.device)));
            }
            for (name, s) in d.series() {
                if s.len() != h.num_periods {
                    return Err(AuditError::Dimension(format!(
                        "device {i} {name} has {} values, horizon has {}",
                        s.len(),
                        h.num_periods
                    )));
                }
            }
        }
        for (bus, v) in &self.bus_v_sq {
            if v.len() != h.num_periods {
                return Err(AuditError::Dimension(format!("bus {bus} voltage has {} values", v.len())));
            }
        }
        Ok(())
    }

    fn v_sq(&self, d: &DeviceSchedule) -> Option<&Vec<f64>> {
        self.bus_v_sq.get(&d.bus)
    }
}

/// Read the storage trajectories out of a solved problem, in natural units.
pub fn extract_schedule(p: &Problem, sol: &Solution) -> Result<DispatchSchedule, AuditError> {
    if !sol.status.has_point() || sol.x.len() != p.rows.num_vars() {
        return Err(AuditError::NoPoint(sol.status.as_str()));
    }
    let base = p.base_mva;
    let x = &sol.x;
    let get = |v: Option<crate::algebra::VarId>| v.map(|v| x[v.0] * base);
    let mut devices = Vec::new();
    for map in &p.ess {
        let dev = &p.devices[map.device];
        let n = map.periods.len();
        let mut d = DeviceSchedule::zero(map.device, dev, map.model, n);
        for (t, pv) in map.periods.iter().enumerate() {
            match map.model {
                EssModel::Milp | EssModel::Complementarity => {
                    let (c, dis) = (get(pv.p_ch).unwrap_or(0.0), get(pv.p_disch).unwrap_or(0.0));
                    d.p_ch[t] = c;
                    d.p_disch[t] = dis;
                    d.p_signed[t] = dis - c;
                    d.p_net[t] = get(pv.p_net).unwrap_or(0.0);
                }
                EssModel::Linear => {
                    let s = get(pv.p_signed).unwrap_or(0.0);
                    d.p_signed[t] = s;
                    d.p_ch[t] = (-s).max(0.0);
                    d.p_disch[t] = s.max(0.0);
                    d.p_net[t] = -s;
                }
                EssModel::BessLoss | EssModel::BessConvex => {
                    let s = get(pv.p_signed).unwrap_or(0.0);
                    d.p_signed[t] = s;
                    d.p_ch[t] = (-s).max(0.0);
                    d.p_disch[t] = s.max(0.0);
                    d.q_ess[t] = get(pv.q_ess).unwrap_or(0.0);
                    d.p_loss[t] = get(pv.p_loss).unwrap_or(0.0);
                    d.p_net[t] = get(pv.p_net).unwrap_or(0.0);
                }
            }
        }
        d.soc = soc_trajectory(dev, &d.p_store(), &p.horizon);
        devices.push(d);
    }
    let mut bus_v_sq: BTreeMap<BusId, Vec<f64>> = BTreeMap::new();
    for (&(bus, t), v) in &p.voltages {
        let series = bus_v_sq.entry(bus).or_insert_with(|| vec![0.0; p.horizon.num_periods]);
        series[t] = x[v.0];
    }
    Ok(DispatchSchedule { horizon: p.horizon, base_mva: base, devices, bus_v_sq })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuditFamily {
    NetPower,
    SocConsistency,
    SocBand,
    TerminalSoc,
    ChargeRating,
    DischargeRating,
    Complementarity,
    ConverterRating,
    LossEquation,
    LossHull,
    LossNonnegative,
}

impl AuditFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditFamily::NetPower => "net_power",
            AuditFamily::SocConsistency => "soc_consistency",
            AuditFamily::SocBand => "soc_band",
            AuditFamily::TerminalSoc => "terminal_soc",
            AuditFamily::ChargeRating => "charge_rating",
            AuditFamily::DischargeRating => "discharge_rating",
            AuditFamily::Complementarity => "complementarity",
            AuditFamily::ConverterRating => "converter_rating",
            AuditFamily::LossEquation => "loss_equation",
            AuditFamily::LossHull => "loss_hull",
            AuditFamily::LossNonnegative => "loss_nonneg",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            AuditFamily::SocConsistency | AuditFamily::SocBand | AuditFamily::TerminalSoc => "MWh",
            AuditFamily::ConverterRating => "MVA",
            _ => "MW",
        }
    }
}

impl fmt::Display for AuditFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit tolerances, natural units. Independent of the solver's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub power_tol: f64,
    pub energy_tol: f64,
    /// Accepted `Σ_t min(p_ch, p_disch)` per device, MW.
    pub complementarity_tol: f64,
    pub terminal_soc: bool,
    /// Reactive-row form used when checking battery hull rows.
    pub hull_variant: HullVariant,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            power_tol: 1e-6,
            energy_tol: 1e-6,
            complementarity_tol: 1e-6,
            terminal_soc: false,
            hull_variant: HullVariant::default(),
        }
    }
}

impl AuditConfig {
    fn tolerance(&self, family: AuditFamily) -> f64 {
        match family {
            AuditFamily::SocConsistency | AuditFamily::SocBand | AuditFamily::TerminalSoc => self.energy_tol,
            AuditFamily::Complementarity => self.complementarity_tol,
            _ => self.power_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub family: AuditFamily,
    pub device: usize,
    /// Largest violation, natural units; 0 when satisfied.
    pub worst: f64,
    /// 1-based period of the worst violation, if any period violates.
    pub period: Option<usize>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
    /// `Σ_t min(p_ch, p_disch)` per device, MW.
    pub complementarity: Vec<f64>,
    pub pass: bool,
}

impl AuditReport {
    pub fn entry(&self, family: AuditFamily, device: usize) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.family == family && e.device == device)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    /// Largest violation of a family over all devices.
    pub fn worst(&self, family: AuditFamily) -> f64 {
        self.entries.iter().filter(|e| e.family == family).map(|e| e.worst).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "audit: {}", if self.pass { "pass" } else { "FAIL" });
        for e in &self.entries {
            let at = e.period.map_or_else(|| "-".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "  ess{} {:<17} worst={:.3e} {} t={} tol={:.1e} {}",
                e.device,
                e.family.as_str(),
                e.worst,
                e.family.unit(),
                at,
                e.tolerance,
                if e.pass { "ok" } else { "FAIL" }
            );
        }
        for (d, c) in self.complementarity.iter().enumerate() {
            let _ = writeln!(out, "  ess{d} sum_t min(p_ch, p_disch) = {c:.3e} MW");
        }
        out
    }

    /// One row per family per device: `family,device,worst,t,tolerance,pass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,device,worst,t,tolerance,pass\n");
        for e in &self.entries {
            let at = e.period.map_or_else(String::new, |t| t.to_string());
            let _ = writeln!(
                out,
                "{},{},{:e},{},{:e},{}",
                e.family.as_str(),
                e.device,
                e.worst,
                at,
                e.tolerance,
                e.pass
            );
        }
        out
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Running worst violation of one family for one device.
struct Worst {
    value: f64,
    period: Option<usize>,
}

impl Worst {
    fn new() -> Self {
        Worst { value: 0.0, period: None }
    }

    fn see(&mut self, v: f64, t: usize) {
        // NaN counts as a violation
        if v > self.value || (v.is_nan() && !self.value.is_nan()) {
            self.value = v;
            self.period = Some(t + 1);
        }
    }
}

/// Hull-row residuals of one point, each rescaled to MW of loss:
/// `(rotated cone, reactive row, voltage row)`. Positive means violated.
#[allow(clippy::too_many_arguments)]
fn hull_violations(
    p: f64,
    q: f64,
    v: f64,
    p_loss: f64,
    dev: &EssDevice,
    bus: &Bus,
    base: f64,
    variant: HullVariant,
) -> [f64; 3] {
    let (p, q, l) = (p / base, q / base, p_loss / base);
    let s2 = (dev.s_cvt_max / base).powi(2);
    let (lo, hi) = (bus.v_sq_min, bus.v_sq_max);
    let r_q = match variant {
        HullVariant::AsPrinted => dev.r_bess,
        HullVariant::Symmetric => dev.r_cvt,
    };
    let cone = dev.r_eq() * p * p + dev.r_cvt * q * q - l * v;
    let reactive = r_q * q * q + l * lo - dev.r_eq() * s2;
    let voltage = s2 * v + l * lo * hi - s2 * (lo + hi);
    [cone / v * base, reactive / lo * base, voltage / (lo * hi) * base]
}

/// Re-evaluate every storage constraint family of `s` from raw parameters.
pub fn audit_schedule(
    s: &DispatchSchedule,
    devices: &[EssDevice],
    buses: &[Bus],
    h: &Horizon,
    cfg: &AuditConfig,
) -> Result<AuditReport, AuditError> {
    s.check_dimensions(h, devices.len())?;
    let base = s.base_mva;
    let mut entries = Vec::new();
    let mut complementarity = Vec::new();
    for (d, dev) in s.devices.iter().zip(devices) {
        if d.bus != dev.bus {
            return Err(AuditError::Dimension(format!(
                "device {} is at bus {} in the schedule but bus {} in the case",
                d.device, d.bus, dev.bus
            )));
        }
        let mut fam: BTreeMap<AuditFamily, Worst> = BTreeMap::new();
        let mut see = |f: AuditFamily, v: f64, t: usize| fam.entry(f).or_insert_with(Worst::new).see(v, t);

        let soc = soc_trajectory(dev, &d.p_store(), h);
        for t in h.periods() {
            see(AuditFamily::SocConsistency, (d.soc[t] - soc[t]).abs(), t);
            see(AuditFamily::SocBand, (dev.e_min - soc[t]).max(soc[t] - dev.e_max), t);
        }
        if cfg.terminal_soc {
            let last = h.num_periods - 1;
            see(AuditFamily::TerminalSoc, (soc[last] - dev.e_init).abs(), last);
        }

        let mut comp = 0.0;
        let mut comp_worst = Worst::new();
        for t in h.periods() {
            let m = d.p_ch[t].min(d.p_disch[t]).max(0.0);
            comp += m;
            comp_worst.see(m, t);
        }
        complementarity.push(comp);

        match d.model {
            EssModel::Milp | EssModel::Complementarity => {
                for t in h.periods() {
                    let net = dev.eta_ch * d.p_ch[t] - d.p_disch[t] / dev.eta_disch;
                    see(AuditFamily::NetPower, (d.p_net[t] - net).abs(), t);
                    see(AuditFamily::ChargeRating, (d.p_ch[t] - dev.p_ch_max).max(-d.p_ch[t]), t);
                    see(AuditFamily::DischargeRating, (d.p_disch[t] - dev.p_disch_max).max(-d.p_disch[t]), t);
                }
            }
            EssModel::Linear => {
                for t in h.periods() {
                    let split = d.p_disch[t] - d.p_ch[t] - d.p_signed[t];
                    see(AuditFamily::NetPower, (d.p_net[t] + d.p_signed[t]).abs().max(split.abs()), t);
                    see(AuditFamily::ChargeRating, -d.p_signed[t] - dev.p_ch_max, t);
                    see(AuditFamily::DischargeRating, d.p_signed[t] - dev.p_disch_max, t);
                }
            }
            EssModel::BessLoss | EssModel::BessConvex => {
                let v = s.v_sq(d).ok_or(AuditError::MissingVoltage {
                    device: d.device,
                    model: d.model.as_str(),
                    bus: d.bus,
                })?;
                let bus = buses.iter().find(|b| b.id == d.bus).ok_or(AuditError::UnknownBus(d.bus))?;
                for t in h.periods() {
                    let (p, q, l) = (d.p_signed[t], d.q_ess[t], d.p_loss[t]);
                    see(AuditFamily::NetPower, (d.p_net[t] - p - l).abs(), t);
                    see(AuditFamily::ConverterRating, p.hypot(q) - dev.s_cvt_max, t);
                    see(AuditFamily::LossNonnegative, -l, t);
                    if d.model == EssModel::BessLoss {
                        let exact = (dev.r_eq() * p * p + dev.r_cvt * q * q) / (base * v[t]);
                        see(AuditFamily::LossEquation, (l - exact).abs(), t);
                    } else {
                        let r = hull_violations(p, q, v[t], l, dev, bus, base, cfg.hull_variant);
                        see(AuditFamily::LossHull, r[0].max(r[1]).max(r[2]), t);
                    }
                }
            }
        }
        fam.insert(AuditFamily::Complementarity, Worst { value: comp, period: comp_worst.period });

        for (family, w) in fam {
            let tolerance = cfg.tolerance(family);
            let worst = if w.value.is_nan() { f64::NAN } else { w.value.max(0.0) };
            entries.push(AuditEntry {
                family,
                device: d.device,
                worst,
                period: if worst > 0.0 || worst.is_nan() { w.period } else { None },
                tolerance,
                pass: worst <= tolerance,
            });
        }
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(AuditReport { entries, complementarity, pass })
}

/// Per-period `p_loss·V − r_eq·p² − r_cvt·q²` of one battery device, per-unit.
pub fn relaxation_gap(s: &DispatchSchedule, device: usize, dev: &EssDevice) -> Result<Vec<f64>, AuditError> {
    let d = s
        .devices
        .get(device)
        .ok_or_else(|| AuditError::Dimension(format!("schedule has no device {device}")))?;
    let v = s.bus_v_sq.get(&dev.bus).ok_or(AuditError::MissingVoltage {
        device,
        model: d.model.as_str(),
        bus: dev.bus,
    })?;
    let b = s.base_mva;
    Ok((0..d.p_loss.len())
        .map(|t| {
            let (p, q, l) = (d.p_signed[t] / b, d.q_ess[t] / b, d.p_loss[t] / b);
            l * v[t] - dev.r_eq() * p * p - dev.r_cvt * q * q
        })
        .collect())
}

pub const HULL_ROWS: [&str; 3] = ["loss_hull", "loss_hull_reactive", "loss_hull_voltage"];

#[derive(Debug, Clone, PartialEq)]
pub struct HullRowStats {
    pub row: &'static str,
    pub violations: usize,
    /// Largest positive residual, per-unit; 0 when none.
    pub max_violation: f64,
}

/// A sampled point on the loss surface that a hull row rejects; per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub sample: usize,
    pub row: &'static str,
    pub p_signed: f64,
    pub q_ess: f64,
    pub v_sq: f64,
    pub p_loss: f64,
    pub violation: f64,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sample {} violates {} by {:e}: p_signed={:e} q_ess={:e} v_sq={:e} p_loss={:e}",
            self.sample, self.row, self.violation, self.p_signed, self.q_ess, self.v_sq, self.p_loss
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub samples: usize,
    pub seed: u64,
    pub variant: HullVariant,
    pub tolerance: f64,
    pub rows: [HullRowStats; 3],
    /// Lowest-index sample rejected by any row, as drawn.
    pub first_counterexample: Option<Counterexample>,
}

impl ContainmentReport {
    pub fn total_violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations).sum()
    }
}

impl fmt::Display for ContainmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "hull containment: {} samples, seed {}, variant {}, tolerance {:e}",
            self.samples,
            self.seed,
            self.variant.as_str(),
            self.tolerance
        )?;
        for r in &self.rows {
            writeln!(f, "  {:<19} violations={} max={:e}", r.row, r.violations, r.max_violation)?;
        }
        match &self.first_counterexample {
            Some(c) => writeln!(f, "  counterexample: {c}"),
            None => writeln!(f, "  counterexample: none"),
        }
    }
}

/// Residual tolerance of the containment check, per-unit.
pub const CONTAINMENT_TOL: f64 = 1e-9;

/// Sample `n` points on the loss surface (`p, q` area-uniform in the converter
/// disc, `V` uniform in the bus band, `p_loss` from the equality) and count
/// how often each hull row rejects them.
pub fn hull_containment_sample(
    dev: &EssDevice,
    bus: &Bus,
    base_mva: f64,
    variant: HullVariant,
    n: usize,
    seed: u64,
) -> Result<ContainmentReport, AuditError> {
    if !(bus.v_sq_min < bus.v_sq_max) {
        return Err(AuditError::Precondition(format!(
            "v_sq_min < v_sq_max at bus {}, got [{}, {}]",
            bus.id, bus.v_sq_min, bus.v_sq_max
        )));
    }
    if !(dev.s_cvt_max > 0.0) || !(base_mva > 0.0) {
        return Err(AuditError::Precondition("a positive converter rating and base".into()));
    }
    let s = dev.s_cvt_max / base_mva;
    let s2 = s * s;
    let (lo, hi) = (bus.v_sq_min, bus.v_sq_max);
    let r_q = match variant {
        HullVariant::AsPrinted => dev.r_bess,
        HullVariant::Symmetric => dev.r_cvt,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = HULL_ROWS.map(|row| HullRowStats { row, violations: 0, max_violation: 0.0 });
    let mut first = None;
    for i in 0..n {
        let radius = s * rng.gen::<f64>().sqrt();
        let angle = std::f64::consts::TAU * rng.gen::<f64>();
        let (p, q) = (radius * angle.cos(), radius * angle.sin());
        let v = lo + (hi - lo) * rng.gen::<f64>();
        let l = (dev.r_eq() * p * p + dev.r_cvt * q * q) / v;
        let residuals = [
            dev.r_eq() * p * p + dev.r_cvt * q * q - l * v,
            r_q * q * q + l * lo - dev.r_eq() * s2,
            s2 * v + l * lo * hi - s2 * (lo + hi),
        ];
        for (k, &r) in residuals.iter().enumerate() {
            if r > CONTAINMENT_TOL {
                rows[k].violations += 1;
                rows[k].max_violation = rows[k].max_violation.max(r);
                if first.is_none() {
                    first = Some(Counterexample {
                        sample: i,
                        row: HULL_ROWS[k],
                        p_signed: p,
                        q_ess: q,
                        v_sq: v,
                        p_loss: l,
                        violation: r,
                    });
                }
            }
        }
    }
    Ok(ContainmentReport { samples: n, seed, variant, tolerance: CONTAINMENT_TOL, rows, first_counterexample: first })
}

const CSV_HEADER: [&str; 11] =
    ["device", "model", "t", "p_ch", "p_disch", "p_signed", "p_net", "soc", "q_ess", "p_loss", "v_sq"];

/// Schedule as CSV, one row per device and period. Floats use the shortest
/// representation that parses back to the same value.
pub fn schedule_to_csv(s: &DispatchSchedule) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for d in &s.devices {
        let v = s.bus_v_sq.get(&d.bus);
        for t in 0..d.soc.len() {
            let vals = [d.p_ch[t], d.p_disch[t], d.p_signed[t], d.p_net[t], d.soc[t], d.q_ess[t], d.p_loss[t]];
            let mut rec = vec![d.device.to_string(), d.model.as_str().to_string(), (t + 1).to_string()];
            rec.extend(vals.iter().map(|x| x.to_string()));
            rec.push(v.map_or_else(String::new, |v| v[t].to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// Parse a schedule written by [`schedule_to_csv`]. Device buses, horizon and
/// base come from `net`.
pub fn schedule_from_csv(text: &str, net: &Network) -> Result<DispatchSchedule, AuditError> {
    let csv_err = |e: csv::Error| AuditError::Csv(e.to_string());
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| AuditError::Csv(format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = CSV_HEADER.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let n = net.horizon.num_periods;
    let mut devices: Vec<DeviceSchedule> = Vec::new();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut bus_v_sq: BTreeMap<BusId, Vec<f64>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = line + 2;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64, AuditError> {
            field(k)
                .parse::<f64>()
                .map_err(|_| AuditError::Csv(format!("line {line}: {} is not a number: `{}`", CSV_HEADER[k], field(k))))
        };
        let device: usize =
            field(0).parse().map_err(|_| AuditError::Csv(format!("line {line}: bad device `{}`", field(0))))?;
        let model = EssModel::parse(field(1))
            .ok_or_else(|| AuditError::Csv(format!("line {line}: unknown model `{}`", field(1))))?;
        let t: usize = field(2).parse().map_err(|_| AuditError::Csv(format!("line {line}: bad period `{}`", field(2))))?;
        let dev = net
            .devices
            .get(device)
            .ok_or_else(|| AuditError::Dimension(format!("line {line}: case has no device {device}")))?;
        if t == 0 || t > n {
            return Err(AuditError::Dimension(format!("line {line}: period {t} outside 1..={n}")));
        }
        while devices.len() <= device {
            let k = devices.len();
            devices.push(DeviceSchedule::zero(k, &net.devices[k], model, n));
            seen.push(vec![false; n]);
        }
        let d = &mut devices[device];
        if seen[device].iter().any(|&s| s) && d.model != model {
            return Err(AuditError::Csv(format!("line {line}: device {device} changes model")));
        }
        d.model = model;
        if std::mem::replace(&mut seen[device][t - 1], true) {
            return Err(AuditError::Csv(format!("line {line}: duplicate row for device {device}, t={t}")));
        }
        let t0 = t - 1;
        d.p_ch[t0] = num(3)?;
        d.p_disch[t0] = num(4)?;
        d.p_signed[t0] = num(5)?;
        d.p_net[t0] = num(6)?;
        d.soc[t0] = num(7)?;
        d.q_ess[t0] = num(8)?;
        d.p_loss[t0] = num(9)?;
        if !field(10).is_empty() {
            let v = num(10)?;
            bus_v_sq.entry(dev.bus).or_insert_with(|| vec![f64::NAN; n])[t0] = v;
        }
    }
    for (k, s) in seen.iter().enumerate() {
        if let Some(t) = s.iter().position(|&x| !x) {
            return Err(AuditError::Dimension(format!("device {k} has no row for t={}", t + 1)));
        }
    }
    if devices.len() != net.devices.len() {
        return Err(AuditError::Dimension(format!(
            "schedule covers {} devices, case has {}",
            devices.len(),
            net.devices.len()
        )));
    }
    Ok(DispatchSchedule { horizon: net.horizon, base_mva: net.base_mva, devices, bus_v_sq })
}
