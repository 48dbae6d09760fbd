//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use essopt::algebra::{Family, LinExpr, RowSet, Square, VarId};
use essopt::block::EssModel;
use essopt::grid::{Branch, Bus, BusId, BusKind, EssDevice, Generator, Horizon, Network, TechTag};
use essopt::network::{NetworkKind, ObjectiveKind};
use essopt::problem::{build_problem, Objective, Problem, ProblemSpec};
use essopt::solver::{solve_continuous, SolverOptions, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SEED: u64 = 20_240_611;
pub const CORPUS_SIZE: usize = 50;

/// Grid resolution of the enumeration oracle, MW (and MWh per 1 h period).
pub const GRID_MW: f64 = 0.01;

/// One single-device storage arbitrage instance on a two-bus DC network.
/// Ratings, energies and prices sit on the oracle grid so the LP optimum is
/// a grid point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub net: Network,
    pub prices: Vec<f64>,
}

impl Instance {
    pub fn spec(&self, model: EssModel) -> ProblemSpec {
        let mut spec = ProblemSpec::new(NetworkKind::Dc, model, ObjectiveKind::ArbitrageProfit);
        spec.prices = Some(self.prices.clone());
        spec
    }

    pub fn problem(&self, model: EssModel) -> Problem {
        build_problem(&self.net, &self.spec(model)).expect("corpus instance builds")
    }

    pub fn device(&self) -> &EssDevice {
        &self.net.devices[0]
    }
}

pub fn two_bus(periods: usize, base_mva: f64, load_mw: &[f64]) -> Network {
    Network {
        base_mva,
        horizon: Horizon::new(periods, 1.0).unwrap(),
        buses: vec![
            Bus { id: BusId(1), kind: BusKind::Slack, v_sq_min: 1.0, v_sq_max: 1.0 },
            Bus { id: BusId(2), kind: BusKind::Pq, v_sq_min: 0.81, v_sq_max: 1.21 },
        ],
        branches: vec![Branch { from_bus: BusId(1), to_bus: BusId(2), resistance: 0.01, reactance: 0.1, flow_limit: 100.0 }],
        generators: vec![Generator {
            bus: BusId(1),
            p_min: 0.0,
            p_max: 100.0,
            q_min: -100.0,
            q_max: 100.0,
            cost_quadratic: 0.0,
            cost_linear: 0.0,
            cost_constant: 0.0,
        }],
        devices: Vec::new(),
        load_active: vec![vec![0.0; periods], load_mw.to_vec()],
        load_reactive: vec![vec![0.0; periods]; 2],
    }
}

fn grid_value(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    rng.gen_range(lo..=hi) as f64 * GRID_MW
}

/// Instance `i` of the seeded corpus: T ∈ 1..=4, η = 1, symmetric ratings.
pub fn corpus_instance(i: usize) -> Instance {
    let seed = CORPUS_SEED.wrapping_add(i as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let periods = rng.gen_range(1..=4);
    let rating = grid_value(&mut rng, 10, 80);
    let e_min = grid_value(&mut rng, 0, 20);
    let e_max = e_min + grid_value(&mut rng, 20, 150);
    let e_init = grid_value(&mut rng, (e_min / GRID_MW).round() as i64, (e_max / GRID_MW).round() as i64);
    let load: Vec<f64> = (0..periods).map(|_| grid_value(&mut rng, 50, 500)).collect();
    let prices: Vec<f64> = (0..periods).map(|_| rng.gen_range(-10..=80) as f64).collect();
    let mut net = two_bus(periods, 10.0, &load);
    net.devices.push(EssDevice {
        bus: BusId(2),
        p_ch_max: rating,
        p_disch_max: rating,
        e_min,
        e_max,
        e_init,
        eta_ch: 1.0,
        eta_disch: 1.0,
        r_bess: 0.0,
        r_cvt: 0.0,
        s_cvt_max: rating,
        tech: TechTag::Generic,
    });
    Instance { seed, net, prices }
}

pub fn corpus() -> Vec<Instance> {
    (0..CORPUS_SIZE).map(corpus_instance).collect()
}

/// Exhaustive search over injections on the 0.01 MW grid, by dynamic
/// programming over the (grid-aligned) energy level. Returns the minimum of
/// `Σ price·(−injection)`, i.e. the arbitrage objective, in $.
pub fn grid_oracle(inst: &Instance) -> f64 {
    let dev = inst.device();
    assert_eq!(inst.net.horizon.dt_hours, 1.0);
    assert!(dev.eta_ch == 1.0 && dev.eta_disch == 1.0);
    let units = |v: f64| (v / GRID_MW).round() as i64;
    let (lo, hi, init) = (units(dev.e_min), units(dev.e_max), units(dev.e_init));
    let (ch, dis) = (units(dev.p_ch_max), units(dev.p_disch_max));
    let n = (hi - lo + 1) as usize;
    // best[k] = least cost to reach energy lo + k
    let mut best = vec![f64::INFINITY; n];
    best[(init - lo) as usize] = 0.0;
    for &price in &inst.prices {
        let mut next = vec![f64::INFINITY; n];
        for (k, &cost) in best.iter().enumerate() {
            if !cost.is_finite() {
                continue;
            }
            let e = lo + k as i64;
            for inj in -ch..=dis {
                let e2 = e - inj;
                if e2 < lo || e2 > hi {
                    continue;
                }
                let c = cost - price * inj as f64 * GRID_MW;
                let slot = &mut next[(e2 - lo) as usize];
                if c < *slot {
                    *slot = c;
                }
            }
        }
        best = next;
    }
    best.into_iter().fold(f64::INFINITY, f64::min)
}

/// Largest objective error a 0.01 MW grid can introduce: one grid step in
/// every period, priced.
pub fn grid_resolution_error(inst: &Instance) -> f64 {
    inst.prices.iter().map(|p| p.abs() * GRID_MW * inst.net.horizon.dt_hours).sum()
}

/// Minimum over all 3^T mode assignments (idle, charge, discharge) of the
/// binary model with the indicators fixed and solved as an LP.
pub fn mode_enumeration(p: &Problem, opts: &SolverOptions) -> Option<f64> {
    let periods = p.horizon.num_periods;
    let mut best: Option<f64> = None;
    for code in 0..3usize.pow(periods as u32) {
        let mut q = p.clone();
        let mut c = code;
        for map in &p.ess {
            for pv in &map.periods {
                let mode = c % 3;
                c /= 3;
                let (a_ch, a_dis) = match mode {
                    0 => (0.0, 0.0),
                    1 => (1.0, 0.0),
                    _ => (0.0, 1.0),
                };
                for (var, val) in [(pv.alpha_ch.unwrap(), a_ch), (pv.alpha_disch.unwrap(), a_dis)] {
                    let v = &mut q.rows.variables[var.0];
                    v.binary = false;
                    v.lower = val;
                    v.upper = val;
                }
            }
        }
        let s = solve_continuous(&q, opts).expect("mode LP solves");
        if s.status == Status::Optimal {
            best = Some(best.map_or(s.objective, |b: f64| b.min(s.objective)));
        }
    }
    best
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random continuous problem built around a strictly feasible point; finite
/// boxes keep it bounded. Even seeds give LPs and QPs, odd seeds
/// add second-order and rotated cones.
pub fn random_conic(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=8);
    let mut rows = RowSet::new();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vars: Vec<VarId> = (0..n)
        .map(|j| {
            let lo = x0[j] - rng.gen_range(0.1..3.0);
            let up = x0[j] + rng.gen_range(0.1..3.0);
            rows.add_var(format!("x{j}"), lo, up)
        })
        .collect();
    let random_expr = |rng: &mut ChaCha8Rng| {
        let mut e = LinExpr::new();
        for &v in &vars {
            if rng.gen_bool(0.6) {
                e.add_term(v, rng.gen_range(-2.0..2.0));
            }
        }
        e
    };
    for r in 0..rng.gen_range(1..=6) {
        let e = random_expr(&mut rng);
        let at = e.eval(&x0);
        if rng.gen_bool(0.2) {
            rows.equal(Family::User, format!("eq{r}"), e.plus(-at));
        } else {
            rows.le(Family::User, format!("le{r}"), e.plus(-at - rng.gen_range(0.0..1.0)));
        }
    }
    if seed % 2 == 1 {
        for c in 0..rng.gen_range(1..=3) {
            let members: Vec<LinExpr> =
                (0..rng.gen_range(1..=3)).map(|_| random_expr(&mut rng).plus(rng.gen_range(-1.0..1.0))).collect();
            let norm = members.iter().map(|m| m.eval(&x0).powi(2)).sum::<f64>().sqrt();
            let b = random_expr(&mut rng);
            let shift = norm - b.eval(&x0) + rng.gen_range(0.1..1.0);
            rows.soc(Family::User, format!("cone{c}"), b.plus(shift), members);
        }
        if rng.gen_bool(0.5) {
            // a·b ≥ w·l² with both sides positive at x0
            let a = random_expr(&mut rng);
            let b = random_expr(&mut rng);
            let l = random_expr(&mut rng);
            let w = rng.gen_range(0.1..2.0);
            let need = (w * l.eval(&x0).powi(2)).sqrt() + 0.5;
            let a = a.clone().plus(need - a.eval(&x0));
            let b = b.clone().plus(need - b.eval(&x0));
            rows.rotated(Family::User, "rot", a, b, vec![Square::new(w, l)]);
        }
    }
    let linear = random_expr(&mut rng);
    let squares = if rng.gen_bool(0.5) {
        (0..rng.gen_range(1..=2)).map(|_| Square::new(rng.gen_range(0.1..2.0), random_expr(&mut rng))).collect()
    } else {
        Vec::new()
    };
    Problem::from_rows(rows, Objective { linear, squares })
}
