//! Network, device and time-series domain types.
//!
//! Quantities are stored in natural units (MW, MVAr, MWh, MVA) except
//! impedances and voltages, which are per-unit on the case's `base_mva`.
//! Voltage bounds are kept as squared magnitudes because the storage loss
//! models and the branch-flow block operate on squared voltage.

mod case;
mod profile;
mod validate;

use std::fmt;

pub use case::{parse_case, serialize_case};
pub use profile::scale_load_profile;
pub use validate::{validate_network, Issue, Severity, ValidationReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {what} references unknown bus {bus}")]
    DanglingBus { line: usize, what: &'static str, bus: BusId },
    #[error("invalid horizon: {0}")]
    Horizon(String),
    #[error("load profile has {got} factors, horizon has {expected} periods")]
    ProfileLength { expected: usize, got: usize },
    #[error("load profile factor {value} at period {period} is negative")]
    NegativeShape { period: usize, value: f64 },
    #[error("network is invalid: {0}")]
    Invalid(ValidationReport),
}

/// Planning horizon: `num_periods` steps of `dt_hours` each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub num_periods: usize,
    pub dt_hours: f64,
}

impl Horizon {
    pub fn new(num_periods: usize, dt_hours: f64) -> Result<Self, GridError> {
        if num_periods == 0 {
            return Err(GridError::Horizon("num_periods must be at least 1".into()));
        }
        if !(dt_hours.is_finite() && dt_hours > 0.0) {
            return Err(GridError::Horizon(format!("dt_hours must be positive, got {dt_hours}")));
        }
        Ok(Self { num_periods, dt_hours })
    }

    pub fn periods(&self) -> std::ops::Range<usize> {
        0..self.num_periods
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pq,
    Pv,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Pq => "pq",
            BusKind::Pv => "pv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slack" | "ref" => Some(BusKind::Slack),
            "pq" => Some(BusKind::Pq),
            "pv" => Some(BusKind::Pv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Squared voltage magnitude bounds, pu².
    pub v_sq_min: f64,
    pub v_sq_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Per-unit series resistance.
    pub resistance: f64,
    /// Per-unit series reactance.
    pub reactance: f64,
    /// MVA.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// $/MW²h
    pub cost_quadratic: f64,
    /// $/MWh
    pub cost_linear: f64,
    /// $/h
    pub cost_constant: f64,
}

/// Storage technology label. Informational only; no model depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TechTag {
    Phs,
    Caes,
    Fes,
    Bess,
    Sc,
    Tess,
    Smes,
    Hes,
    Generic,
}

impl TechTag {
    pub const ALL: [TechTag; 9] = [
        TechTag::Phs,
        TechTag::Caes,
        TechTag::Fes,
        TechTag::Bess,
        TechTag::Sc,
        TechTag::Tess,
        TechTag::Smes,
        TechTag::Hes,
        TechTag::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TechTag::Phs => "PHS",
            TechTag::Caes => "CAES",
            TechTag::Fes => "FES",
            TechTag::Bess => "BESS",
            TechTag::Sc => "SC",
            TechTag::Tess => "TESS",
            TechTag::Smes => "SMES",
            TechTag::Hes => "HES",
            TechTag::Generic => "GENERIC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let upper = s.to_ascii_uppercase();
        Self::ALL.into_iter().find(|t| t.as_str() == upper)
    }
}

/// One storage unit at one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct EssDevice {
    pub bus: BusId,
    /// Charging power rating, MW.
    pub p_ch_max: f64,
    /// Discharging power rating, MW.
    pub p_disch_max: f64,
    /// Energy bounds and initial energy, MWh.
    pub e_min: f64,
    pub e_max: f64,
    pub e_init: f64,
    pub eta_ch: f64,
    pub eta_disch: f64,
    /// Battery internal resistance, pu.
    pub r_bess: f64,
    /// Converter resistance, pu.
    pub r_cvt: f64,
    /// Converter apparent-power rating, MVA.
    pub s_cvt_max: f64,
    pub tech: TechTag,
}

impl EssDevice {
    /// Equivalent series resistance seen by active power: battery plus converter.
    pub fn r_eq(&self) -> f64 {
        self.r_bess + self.r_cvt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub horizon: Horizon,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub devices: Vec<EssDevice>,
    /// `load_active[bus_index][t]`, MW.
    pub load_active: Vec<Vec<f64>>,
    /// `load_reactive[bus_index][t]`, MVAr.
    pub load_reactive: Vec<Vec<f64>>,
}

impl Network {
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    /// True when the branch set forms a spanning tree over the buses.
    pub fn is_radial(&self) -> bool {
        validate::is_spanning_tree(self)
    }

    /// Copy of the network with a different horizon. Loads are truncated or,
    /// when constant over time, broadcast to the new length.
    pub fn with_horizon(&self, horizon: Horizon) -> Result<Network, GridError> {
        let resize = |rows: &Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>, GridError> {
            rows.iter()
                .map(|row| {
                    if horizon.num_periods <= row.len() {
                        Ok(row[..horizon.num_periods].to_vec())
                    } else if row.iter().all(|v| *v == row[0]) {
                        Ok(vec![row[0]; horizon.num_periods])
                    } else {
                        Err(GridError::Horizon(format!(
                            "time-varying loads cover {} periods, cannot extend to {}",
                            row.len(),
                            horizon.num_periods
                        )))
                    }
                })
                .collect()
        };
        Ok(Network {
            horizon,
            load_active: resize(&self.load_active)?,
            load_reactive: resize(&self.load_reactive)?,
            ..self.clone()
        })
    }

    /// Copy of the network without storage devices.
    pub fn without_devices(&self) -> Network {
        Network { devices: Vec::new(), ..self.clone() }
    }
}
