use std::fmt;

use super::{BusKind, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub severity: Severity,
    /// What the issue is about, e.g. `storage 2` or `branch 3-4`.
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    fn error(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            subject: subject.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            subject: subject.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let tag = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            write!(f, "{tag}: {}: {}", issue.subject, issue.message)?;
        }
        Ok(())
    }
}

/// Check every network invariant. Never fails; violations are returned as data.
/// A meshed or disconnected topology is only a warning because only the
/// branch-flow network block needs a tree.
pub fn validate_network(net: &Network) -> ValidationReport {
    let mut report = ValidationReport::default();
    let t_len = net.horizon.num_periods;

    if !(net.base_mva.is_finite() && net.base_mva > 0.0) {
        report.error("meta", format!("base_mva must be positive, got {}", net.base_mva));
    }
    if t_len == 0 {
        report.error("meta", "num_periods must be at least 1");
    }
    if !(net.horizon.dt_hours.is_finite() && net.horizon.dt_hours > 0.0) {
        report.error("meta", format!("dt_hours must be positive, got {}", net.horizon.dt_hours));
    }

    for (i, bus) in net.buses.iter().enumerate() {
        let subject = format!("bus {}", bus.id);
        if net.buses[..i].iter().any(|b| b.id == bus.id) {
            report.error(&subject, "duplicate bus id");
        }
        if !(bus.v_sq_min > 0.0 && bus.v_sq_min <= bus.v_sq_max && bus.v_sq_max.is_finite()) {
            report.error(
                &subject,
                format!("voltage bounds must satisfy 0 < v_min <= v_max (squared: {} .. {})", bus.v_sq_min, bus.v_sq_max),
            );
        }
    }
    match net.buses.iter().filter(|b| b.kind == BusKind::Slack).count() {
        1 => {}
        0 if net.buses.is_empty() => report.error("network", "no buses"),
        0 => report.error("network", "no slack bus"),
        n => report.error("network", format!("{n} slack buses, expected exactly one")),
    }

    for br in &net.branches {
        let subject = format!("branch {}-{}", br.from_bus, br.to_bus);
        for end in [br.from_bus, br.to_bus] {
            if net.bus_index(end).is_none() {
                report.error(&subject, format!("unknown bus {end}"));
            }
        }
        if br.from_bus == br.to_bus {
            report.error(&subject, "branch connects a bus to itself");
        }
        if !(br.resistance >= 0.0 && br.reactance >= 0.0 && br.resistance + br.reactance > 0.0) {
            report.error(&subject, "impedance must satisfy r >= 0, x >= 0, r + x > 0");
        }
        if !(br.flow_limit > 0.0) {
            report.error(&subject, "flow limit must be positive");
        }
    }

    for (g, gen) in net.generators.iter().enumerate() {
        let subject = format!("generator {g}");
        if net.bus_index(gen.bus).is_none() {
            report.error(&subject, format!("unknown bus {}", gen.bus));
        }
        if !(gen.p_min <= gen.p_max) {
            report.error(&subject, "p_min must not exceed p_max");
        }
        if !(gen.q_min <= gen.q_max) {
            report.error(&subject, "q_min must not exceed q_max");
        }
        if !(gen.cost_quadratic >= 0.0) {
            report.error(&subject, "quadratic cost must be nonnegative");
        }
    }

    for (d, dev) in net.devices.iter().enumerate() {
        let subject = format!("storage {d}");
        if net.bus_index(dev.bus).is_none() {
            report.error(&subject, format!("unknown bus {}", dev.bus));
        }
        if !(0.0 <= dev.e_min && dev.e_min <= dev.e_init && dev.e_init <= dev.e_max) {
            report.error(
                &subject,
                format!(
                    "energy must satisfy 0 <= e_min <= e_init <= e_max (got {} <= {} <= {})",
                    dev.e_min, dev.e_init, dev.e_max
                ),
            );
        }
        for (name, eta) in [("eta_ch", dev.eta_ch), ("eta_disch", dev.eta_disch)] {
            if !(eta > 0.0 && eta <= 1.0) {
                report.error(&subject, format!("{name} must lie in (0, 1], got {eta}"));
            }
        }
        if !(dev.p_ch_max > 0.0 && dev.p_disch_max > 0.0) {
            report.error(&subject, "power ratings must be positive");
        }
        if !(dev.r_bess >= 0.0 && dev.r_cvt >= 0.0) {
            report.error(&subject, "resistances must be nonnegative");
        }
        if !(dev.s_cvt_max > 0.0) {
            report.error(&subject, "converter rating must be positive");
        }
    }

    let n_bus = net.buses.len();
    for (name, loads) in [("active", &net.load_active), ("reactive", &net.load_reactive)] {
        if loads.len() != n_bus || loads.iter().any(|row| row.len() != t_len) {
            report.error("loads", format!("{name} load matrix must be {n_bus} x {t_len}"));
        } else if loads.iter().flatten().any(|v| !v.is_finite()) {
            report.error("loads", format!("{name} load matrix has non-finite entries"));
        }
    }

    if report.is_valid() && !is_spanning_tree(net) {
        report.warn(
            "topology",
            "branches do not form a tree; the branch-flow network block is unavailable",
        );
    }
    report
}

/// Union-find check that branches connect all buses without cycles.
pub(crate) fn is_spanning_tree(net: &Network) -> bool {
    if net.buses.is_empty() || net.branches.len() + 1 != net.buses.len() {
        return false;
    }
    let mut parent: Vec<usize> = (0..net.buses.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for br in &net.branches {
        let (Some(a), Some(b)) = (net.bus_index(br.from_bus), net.bus_index(br.to_bus)) else {
            return false;
        };
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}
