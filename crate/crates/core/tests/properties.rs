mod common;

use common::*;
use essopt::algebra::{Family, LinExpr, Square};
use essopt::audit::{
    audit_schedule, extract_schedule, hull_containment_sample, schedule_from_csv, schedule_to_csv, AuditConfig,
};
use essopt::block::EssModel;
use essopt::ess::{soc_trajectory, HullVariant};
use essopt::grid::{parse_case, serialize_case, Bus, BusId, BusKind, EssDevice, TechTag};
use essopt::problem::{classify, ProblemClass};
use essopt::solver::{solve, solve_continuous, SolverOptions, Status};
use proptest::prelude::*;

fn lossy_device(rating: f64, e_max: f64, init_frac: f64, eta_ch: f64, eta_dis: f64) -> EssDevice {
    EssDevice {
        bus: BusId(2),
        p_ch_max: rating,
        p_disch_max: 0.5 * rating + 0.1,
        e_min: 0.1 * e_max,
        e_max,
        e_init: e_max * (0.1 + 0.9 * init_frac),
        eta_ch,
        eta_disch: eta_dis,
        r_bess: 0.0,
        r_cvt: 0.0,
        s_cvt_max: rating,
        tech: TechTag::Generic,
    }
}

fn instance(dev: EssDevice, prices: Vec<f64>) -> Instance {
    let mut net = two_bus(prices.len(), 10.0, &vec![1.0; prices.len()]);
    net.devices.push(dev);
    Instance { seed: 0, net, prices }
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    (
        0.1f64..2.0,
        0.2f64..4.0,
        0.0f64..1.0,
        0.7f64..1.0,
        0.7f64..1.0,
        proptest::collection::vec(-30.0f64..80.0, 1..=4),
    )
        .prop_map(|(r, e, f, a, b, prices)| instance(lossy_device(r, e, f, a, b), prices))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solved_schedules_pass_audit_and_stay_in_band(inst in arb_instance(), m in 0usize..3) {
        let model = [EssModel::Milp, EssModel::Linear, EssModel::Complementarity][m];
        let p = inst.problem(model);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert!(s.status.has_point(), "{}", s.status);
        let sched = extract_schedule(&p, &s).unwrap();
        let report = audit_schedule(&sched, &inst.net.devices, &inst.net.buses, &p.horizon, &AuditConfig::default()).unwrap();
        prop_assert!(report.pass, "{}", report);
        let dev = inst.device();
        let soc = soc_trajectory(dev, &sched.devices[0].p_store(), &p.horizon);
        prop_assert!(soc.iter().all(|&e| e >= dev.e_min - 1e-8 && e <= dev.e_max + 1e-8), "{:?}", soc);
    }

    #[test]
    fn branch_and_bound_never_beats_its_root(inst in arb_instance()) {
        let p = inst.problem(EssModel::Milp);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        let mut root = p.clone();
        for v in &mut root.rows.variables {
            v.binary = false;
        }
        let r = solve_continuous(&root, &SolverOptions::default()).unwrap();
        prop_assert_eq!(r.status, Status::Optimal);
        prop_assert!(s.objective >= r.objective - 1e-6, "{} < {}", s.objective, r.objective);
    }

    #[test]
    fn schedule_csv_round_trips(inst in arb_instance(), m in 0usize..3) {
        let model = [EssModel::Milp, EssModel::Linear, EssModel::Complementarity][m];
        let p = inst.problem(model);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        let sched = extract_schedule(&p, &s).unwrap();
        let text = schedule_to_csv(&sched);
        prop_assert_eq!(schedule_from_csv(&text, &inst.net).unwrap(), sched);
    }
}

fn arb_battery() -> impl Strategy<Value = (EssDevice, Bus)> {
    (0.0f64..0.1, 0.0f64..0.1, 0.1f64..3.0, 0.8f64..1.0, 0.01f64..0.4).prop_map(|(rb, rc, s, vmin, width)| {
        let dev = EssDevice { r_bess: rb, r_cvt: rc, s_cvt_max: s, ..lossy_device(s, 1.0, 0.5, 0.95, 0.95) };
        let bus = Bus { id: BusId(2), kind: BusKind::Pq, v_sq_min: vmin, v_sq_max: vmin + width };
        (dev, bus)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn containment_is_reproducible_and_rotated_cone_always_holds(
        (dev, bus) in arb_battery(), base in 1.0f64..100.0, seed in any::<u64>(), symmetric in any::<bool>()
    ) {
        let variant = if symmetric { HullVariant::Symmetric } else { HullVariant::AsPrinted };
        let a = hull_containment_sample(&dev, &bus, base, variant, 500, seed).unwrap();
        let b = hull_containment_sample(&dev, &bus, base, variant, 500, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.rows[0].violations, 0);
        if dev.r_eq() <= 1.0 {
            prop_assert_eq!(a.rows[2].violations, 0, "{}", a);
        }
        if !symmetric {
            prop_assert_eq!(a.rows[1].violations, 0, "{}", a);
        }
    }

    #[test]
    fn classification_is_monotone(seed in 0u64..400) {
        let p = random_conic(seed);
        let base = classify(&p);
        prop_assert!(!base.is_mixed_integer());

        let mut with_binary = p.clone();
        with_binary.rows.add_binary("z");
        let c = classify(&with_binary);
        prop_assert!(c.is_mixed_integer() || c == ProblemClass::Nonconvex, "{:?}", c);

        let mut with_product = p.clone();
        let a = with_product.rows.add_var("a", 0.0, 1.0);
        let b = with_product.rows.add_var("b", 0.0, 1.0);
        with_product.rows.product_eq(Family::User, "prod", a, b, vec![Square::new(1.0, LinExpr::var(a))]);
        prop_assert_eq!(classify(&with_product), ProblemClass::Nonconvex);
    }

    #[test]
    fn case_text_round_trips(inst in arb_instance()) {
        // voltage limits are written as magnitudes, so the first pass may
        // move a squared limit by an ulp; after that the text is a fixed point
        let first = parse_case(&serialize_case(&inst.net)).unwrap();
        for (a, b) in first.buses.iter().zip(&inst.net.buses) {
            prop_assert!((a.v_sq_max - b.v_sq_max).abs() <= 1e-15 && (a.v_sq_min - b.v_sq_min).abs() <= 1e-15);
        }
        let mut expect = inst.net.clone();
        expect.buses = first.buses.clone();
        prop_assert_eq!(&first, &expect);
        let text = serialize_case(&first);
        prop_assert_eq!(&parse_case(&text).unwrap(), &first);
        prop_assert_eq!(serialize_case(&parse_case(&text).unwrap()), text);
    }
}
