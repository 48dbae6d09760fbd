//! Storage-model recommendations by network model, grid level and device type.

use std::fmt;

use crate::block::EssModel;

/// Network model the recommendation is asked for. `Ac` is the full
/// nonlinear AC model, which this crate does not build but can advise on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetworkChoice {
    Dc,
    LinearizedAc,
    BranchFlow,
    Ac,
}

impl NetworkChoice {
    pub const ALL: [NetworkChoice; 4] =
        [NetworkChoice::Dc, NetworkChoice::LinearizedAc, NetworkChoice::BranchFlow, NetworkChoice::Ac];

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkChoice::Dc => "dc",
            NetworkChoice::LinearizedAc => "linac",
            NetworkChoice::BranchFlow => "distflow",
            NetworkChoice::Ac => "ac",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Linear network models keep storage models in LP/MILP territory.
    pub fn is_linear(self) -> bool {
        matches!(self, NetworkChoice::Dc | NetworkChoice::LinearizedAc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GridLevel {
    Transmission,
    Distribution,
}

impl GridLevel {
    pub const ALL: [GridLevel; 2] = [GridLevel::Transmission, GridLevel::Distribution];

    pub fn as_str(self) -> &'static str {
        match self {
            GridLevel::Transmission => "transmission",
            GridLevel::Distribution => "distribution",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceKind {
    Generic,
    Bess,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 2] = [DeviceKind::Generic, DeviceKind::Bess];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Generic => "generic",
            DeviceKind::Bess => "bess",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Problem class in the LP/MILP/NLP/MINLP taxonomy, plus SOCP for the convex
/// battery model on the branch-flow relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaxonomyClass {
    Lp,
    Milp,
    Socp,
    Nlp,
    Minlp,
}

impl TaxonomyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TaxonomyClass::Lp => "LP",
            TaxonomyClass::Milp => "MILP",
            TaxonomyClass::Socp => "SOCP",
            TaxonomyClass::Nlp => "NLP",
            TaxonomyClass::Minlp => "MINLP",
        }
    }
}

/// Class that results from pairing `model` with `network`.
pub fn taxonomy(model: EssModel, network: NetworkChoice) -> TaxonomyClass {
    match (model, network.is_linear()) {
        (EssModel::Milp, true) => TaxonomyClass::Milp,
        (EssModel::Linear, true) => TaxonomyClass::Lp,
        (EssModel::Milp, false) => TaxonomyClass::Minlp,
        (EssModel::BessConvex, false) if network == NetworkChoice::BranchFlow => TaxonomyClass::Socp,
        _ => TaxonomyClass::Nlp,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    /// Ordered, never empty.
    pub models: Vec<EssModel>,
    /// Convex stand-in for the first recommended model, when one exists.
    pub convex_alternative: Option<EssModel>,
    /// Resulting class for each entry of `models`.
    pub classes: Vec<TaxonomyClass>,
    pub rationale: String,
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.models.iter().map(|m| m.as_str()).collect();
        writeln!(f, "recommended: {}", names.join(", "))?;
        let classes: Vec<String> =
            self.models.iter().zip(&self.classes).map(|(m, c)| format!("{}={}", m.as_str(), c.as_str())).collect();
        writeln!(f, "classes: {}", classes.join(", "))?;
        if let Some(alt) = self.convex_alternative {
            writeln!(f, "convex alternative: {}", alt.as_str())?;
        }
        writeln!(f, "rationale: {}", self.rationale)
    }
}

/// Total over every (network, level, device) combination.
pub fn advise(network: NetworkChoice, level: GridLevel, device: DeviceKind) -> Recommendation {
    let (models, alt, rationale): (Vec<EssModel>, Option<EssModel>, String) = match (level, device) {
        (GridLevel::Distribution, DeviceKind::Bess) => (
            vec![EssModel::BessLoss],
            Some(EssModel::BessConvex),
            "distribution feeders have low X/R ratios and need an AC-faithful network model; for batteries the \
             ohmic converter and cell losses depend on voltage, so the loss-equation model is preferred. Its \
             loss equality is nonconvex; the convex hull model keeps the problem convex at the cost of a \
             possible relaxation gap"
                .to_string(),
        ),
        (GridLevel::Distribution, DeviceKind::Generic) => (
            vec![EssModel::Milp, EssModel::Linear, EssModel::Complementarity],
            None,
            "distribution feeders need an AC-faithful network model, so the problem is nonlinear whichever storage \
             model is used; the binary model turns it mixed-integer but represents charge/discharge exclusivity \
             exactly, and no ranking among the three is implied"
                .to_string(),
        ),
        (GridLevel::Transmission, _) if network.is_linear() => (
            vec![EssModel::Milp, EssModel::Linear],
            None,
            "with a linear network model the binary model gives an MILP that represents efficiencies and \
             exclusivity exactly, while the lossless linear model keeps the whole problem an LP: accuracy \
             against tractability"
                .to_string(),
        ),
        (GridLevel::Transmission, _) => (
            vec![EssModel::Linear, EssModel::Complementarity],
            None,
            "the AC network already makes the problem nonlinear, so binaries are avoided; the complementarity \
             model is the more accurate of the two because it keeps charge and discharge efficiencies"
                .to_string(),
        ),
    };
    let classes = models.iter().map(|&m| taxonomy(m, network)).collect();
    Recommendation { models, convex_alternative: alt, classes, rationale }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_and_nonempty() {
        for n in NetworkChoice::ALL {
            for l in GridLevel::ALL {
                for d in DeviceKind::ALL {
                    let r = advise(n, l, d);
                    assert!(!r.models.is_empty());
                    assert_eq!(r.models.len(), r.classes.len());
                    assert_eq!(r, advise(n, l, d));
                }
            }
        }
    }

    #[test]
    fn linearized_transmission_classes() {
        let r = advise(NetworkChoice::LinearizedAc, GridLevel::Transmission, DeviceKind::Generic);
        assert_eq!(r.classes, vec![TaxonomyClass::Milp, TaxonomyClass::Lp]);
    }
}
