//! Section-oriented text case format. Column layouts are documented in
//! `FORMAT.md` at the repository root.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{
    scale_load_profile, validate_network, Branch, Bus, BusId, BusKind, EssDevice, Generator,
    GridError, Horizon, Network, TechTag,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Meta,
    Buses,
    Branches,
    Generators,
    Storage,
    Loads,
    Profile,
}

impl Section {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "meta" => Section::Meta,
            "buses" => Section::Buses,
            "branches" => Section::Branches,
            "generators" => Section::Generators,
            "storage" => Section::Storage,
            "loads" => Section::Loads,
            "profile" => Section::Profile,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LoadKind {
    Active,
    Reactive,
}

struct LoadRecord {
    line: usize,
    values: Vec<f64>,
}

fn syntax(line: usize, message: impl Into<String>) -> GridError {
    GridError::Syntax { line, message: message.into() }
}

fn number(line: usize, field: &str, token: &str) -> Result<f64, GridError> {
    let v: f64 = token
        .parse()
        .map_err(|_| syntax(line, format!("{field}: expected a number, found `{token}`")))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("{field}: value must be finite")));
    }
    Ok(v)
}

fn bus_id(line: usize, token: &str) -> Result<BusId, GridError> {
    token
        .parse()
        .map(BusId)
        .map_err(|_| syntax(line, format!("expected a bus id (unsigned integer), found `{token}`")))
}

fn expect_fields(line: usize, section: &str, tokens: &[&str], expected: &[usize]) -> Result<(), GridError> {
    if expected.contains(&tokens.len()) {
        Ok(())
    } else {
        let want: Vec<String> = expected.iter().map(|n| n.to_string()).collect();
        Err(syntax(
            line,
            format!("[{section}] record needs {} fields, found {}", want.join(" or "), tokens.len()),
        ))
    }
}

/// Parse and fully validate a case file.
///
/// Non-radial topologies parse fine; call [`validate_network`] to see the
/// radiality warning.
pub fn parse_case(text: &str) -> Result<Network, GridError> {
    let mut section: Option<Section> = None;
    let mut meta: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut buses = Vec::new();
    let mut branches: Vec<(usize, Branch)> = Vec::new();
    let mut generators: Vec<(usize, Generator)> = Vec::new();
    let mut devices: Vec<(usize, EssDevice)> = Vec::new();
    let mut loads: BTreeMap<(BusId, LoadKind), LoadRecord> = BTreeMap::new();
    let mut load_buses: Vec<(usize, BusId)> = Vec::new();
    let mut profile: Option<(usize, Vec<f64>)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim()
                .to_ascii_lowercase();
            section = Some(
                Section::parse(&name).ok_or_else(|| syntax(line, format!("unknown section [{name}]")))?,
            );
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let Some(current) = section else {
            return Err(syntax(line, "record outside of any section"));
        };
        match current {
            Section::Meta => {
                expect_fields(line, "meta", &tokens, &[2])?;
                let key = tokens[0].to_ascii_lowercase();
                if !matches!(key.as_str(), "base_mva" | "num_periods" | "dt_hours") {
                    return Err(syntax(line, format!("unknown meta key `{key}`")));
                }
                let value = number(line, &key, tokens[1])?;
                if meta.insert(key.clone(), (line, value)).is_some() {
                    return Err(syntax(line, format!("duplicate meta key `{key}`")));
                }
            }
            Section::Buses => {
                expect_fields(line, "buses", &tokens, &[4])?;
                let id = bus_id(line, tokens[0])?;
                let kind = BusKind::parse(tokens[1])
                    .ok_or_else(|| syntax(line, format!("unknown bus kind `{}`", tokens[1])))?;
                let v_min = number(line, "v_min", tokens[2])?;
                let v_max = number(line, "v_max", tokens[3])?;
                if v_min <= 0.0 || v_max < v_min {
                    return Err(syntax(line, "voltage bounds must satisfy 0 < v_min <= v_max"));
                }
                buses.push(Bus { id, kind, v_sq_min: v_min * v_min, v_sq_max: v_max * v_max });
            }
            Section::Branches => {
                expect_fields(line, "branches", &tokens, &[5])?;
                branches.push((
                    line,
                    Branch {
                        from_bus: bus_id(line, tokens[0])?,
                        to_bus: bus_id(line, tokens[1])?,
                        resistance: number(line, "r", tokens[2])?,
                        reactance: number(line, "x", tokens[3])?,
                        flow_limit: number(line, "flow_limit", tokens[4])?,
                    },
                ));
            }
            Section::Generators => {
                expect_fields(line, "generators", &tokens, &[8])?;
                generators.push((
                    line,
                    Generator {
                        bus: bus_id(line, tokens[0])?,
                        p_min: number(line, "p_min", tokens[1])?,
                        p_max: number(line, "p_max", tokens[2])?,
                        q_min: number(line, "q_min", tokens[3])?,
                        q_max: number(line, "q_max", tokens[4])?,
                        cost_quadratic: number(line, "c2", tokens[5])?,
                        cost_linear: number(line, "c1", tokens[6])?,
                        cost_constant: number(line, "c0", tokens[7])?,
                    },
                ));
            }
            Section::Storage => {
                expect_fields(line, "storage", &tokens, &[11, 12])?;
                let tech = match tokens.get(11) {
                    Some(tag) => TechTag::parse(tag)
                        .ok_or_else(|| syntax(line, format!("unknown technology tag `{tag}`")))?,
                    None => TechTag::Generic,
                };
                devices.push((
                    line,
                    EssDevice {
                        bus: bus_id(line, tokens[0])?,
                        p_ch_max: number(line, "p_ch_max", tokens[1])?,
                        p_disch_max: number(line, "p_disch_max", tokens[2])?,
                        e_min: number(line, "e_min", tokens[3])?,
                        e_max: number(line, "e_max", tokens[4])?,
                        e_init: number(line, "e_init", tokens[5])?,
                        eta_ch: number(line, "eta_ch", tokens[6])?,
                        eta_disch: number(line, "eta_disch", tokens[7])?,
                        r_bess: number(line, "r_bess", tokens[8])?,
                        r_cvt: number(line, "r_cvt", tokens[9])?,
                        s_cvt_max: number(line, "s_cvt_max", tokens[10])?,
                        tech,
                    },
                ));
            }
            Section::Loads => {
                if tokens.len() < 3 {
                    return Err(syntax(line, "[loads] record needs: bus p|q value [value ...]"));
                }
                let bus = bus_id(line, tokens[0])?;
                let kind = match tokens[1].to_ascii_lowercase().as_str() {
                    "p" => LoadKind::Active,
                    "q" => LoadKind::Reactive,
                    other => return Err(syntax(line, format!("load kind must be `p` or `q`, found `{other}`"))),
                };
                let values = tokens[2..]
                    .iter()
                    .map(|t| number(line, "load", t))
                    .collect::<Result<Vec<_>, _>>()?;
                if loads.insert((bus, kind), LoadRecord { line, values }).is_some() {
                    return Err(syntax(line, format!("duplicate load record for bus {bus}")));
                }
                load_buses.push((line, bus));
            }
            Section::Profile => {
                let (_, factors) = profile.get_or_insert_with(|| (line, Vec::new()));
                for t in &tokens {
                    factors.push(number(line, "profile factor", t)?);
                }
            }
        }
    }

    let meta_value = |key: &str| -> Result<(usize, f64), GridError> {
        meta.get(key)
            .copied()
            .ok_or_else(|| syntax(text.lines().count().max(1), format!("[meta] is missing `{key}`")))
    };
    let base_mva = meta_value("base_mva")?.1;
    let (periods_line, periods) = meta_value("num_periods")?;
    if periods.fract() != 0.0 || periods < 1.0 {
        return Err(syntax(periods_line, "num_periods must be a positive integer"));
    }
    let (dt_line, dt) = meta_value("dt_hours")?;
    let horizon =
        Horizon::new(periods as usize, dt).map_err(|e| syntax(dt_line.max(periods_line), e.to_string()))?;
    let t_len = horizon.num_periods;

    let known = |id: BusId| buses.iter().any(|b: &Bus| b.id == id);
    for (line, br) in &branches {
        for end in [br.from_bus, br.to_bus] {
            if !known(end) {
                return Err(GridError::DanglingBus { line: *line, what: "branch", bus: end });
            }
        }
    }
    for (line, gen) in &generators {
        if !known(gen.bus) {
            return Err(GridError::DanglingBus { line: *line, what: "generator", bus: gen.bus });
        }
    }
    for (line, dev) in &devices {
        if !known(dev.bus) {
            return Err(GridError::DanglingBus { line: *line, what: "storage device", bus: dev.bus });
        }
    }
    for (line, bus) in &load_buses {
        if !known(*bus) {
            return Err(GridError::DanglingBus { line: *line, what: "load", bus: *bus });
        }
    }

    let shape = match profile {
        Some((line, factors)) => {
            Some(scale_load_profile(&[1.0], &factors, &horizon).map_err(|e| syntax(line, e.to_string()))?[0].clone())
        }
        None => None,
    };
    let mut load_active = vec![vec![0.0; t_len]; buses.len()];
    let mut load_reactive = vec![vec![0.0; t_len]; buses.len()];
    for ((bus, kind), record) in &loads {
        let row = match record.values.len() {
            1 => match &shape {
                Some(shape) => scale_load_profile(&record.values, shape, &horizon)
                    .map_err(|e| syntax(record.line, e.to_string()))?
                    .remove(0),
                None => vec![record.values[0]; t_len],
            },
            n if n == t_len => record.values.clone(),
            n => {
                return Err(syntax(
                    record.line,
                    format!("load record has {n} values; expected 1 or {t_len}"),
                ))
            }
        };
        let b = buses.iter().position(|x| x.id == *bus).expect("checked above");
        match kind {
            LoadKind::Active => load_active[b] = row,
            LoadKind::Reactive => load_reactive[b] = row,
        }
    }

    let net = Network {
        base_mva,
        horizon,
        buses,
        branches: branches.into_iter().map(|(_, b)| b).collect(),
        generators: generators.into_iter().map(|(_, g)| g).collect(),
        devices: devices.into_iter().map(|(_, d)| d).collect(),
        load_active,
        load_reactive,
    };
    let report = validate_network(&net);
    if !report.is_valid() {
        return Err(GridError::Invalid(report));
    }
    Ok(net)
}

/// Write a network in the case format. Loads are written per bus as a single
/// value when constant over time, otherwise as a full series; no `[profile]`
/// section is emitted.
pub fn serialize_case(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "base_mva {}", net.base_mva);
    let _ = writeln!(out, "num_periods {}", net.horizon.num_periods);
    let _ = writeln!(out, "dt_hours {}", net.horizon.dt_hours);

    let _ = writeln!(out, "\n[buses]\n# id kind v_min v_max");
    for b in &net.buses {
        let _ = writeln!(out, "{} {} {} {}", b.id, b.kind.as_str(), b.v_sq_min.sqrt(), b.v_sq_max.sqrt());
    }

    let _ = writeln!(out, "\n[branches]\n# from to r x flow_limit");
    for br in &net.branches {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            br.from_bus, br.to_bus, br.resistance, br.reactance, br.flow_limit
        );
    }

    let _ = writeln!(out, "\n[generators]\n# bus p_min p_max q_min q_max c2 c1 c0");
    for g in &net.generators {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            g.bus, g.p_min, g.p_max, g.q_min, g.q_max, g.cost_quadratic, g.cost_linear, g.cost_constant
        );
    }

    let _ = writeln!(
        out,
        "\n[storage]\n# bus p_ch_max p_disch_max e_min e_max e_init eta_ch eta_disch r_bess r_cvt s_cvt_max tech"
    );
    for d in &net.devices {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            d.bus,
            d.p_ch_max,
            d.p_disch_max,
            d.e_min,
            d.e_max,
            d.e_init,
            d.eta_ch,
            d.eta_disch,
            d.r_bess,
            d.r_cvt,
            d.s_cvt_max,
            d.tech.as_str()
        );
    }

    let _ = writeln!(out, "\n[loads]\n# bus p|q value [value ...]");
    for (b, bus) in net.buses.iter().enumerate() {
        for (kind, rows) in [("p", &net.load_active), ("q", &net.load_reactive)] {
            let row = &rows[b];
            if row.iter().all(|v| *v == 0.0) {
                continue;
            }
            let _ = write!(out, "{} {kind}", bus.id);
            if row.iter().all(|v| *v == row[0]) {
                let _ = write!(out, " {}", row[0]);
            } else {
                for v in row {
                    let _ = write!(out, " {v}");
                }
            }
            out.push('\n');
        }
    }
    out
}
