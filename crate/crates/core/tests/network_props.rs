use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchnet::analysis::{
    hull_load, subcritical_check, traffic_solve, SubcriticalStatus,
};
use switchnet::builders::{
    binary_tree, build_collapsed_rs, build_instability_network, build_multiclass_rs,
    build_pure_branching, build_tandem, example_tree, BranchingCapacity,
};
use switchnet::network::{
    enumerate_maximal_schedules, scale_schedule_set, validate_spec, ArrivalStream, ClassSpec,
    NetworkSpec, ScheduleSet,
};

fn random_open_network(rng: &mut ChaCha8Rng, n: usize) -> NetworkSpec {
    // each row keeps at least 10% exit mass, so the network is open
    let mut routing = vec![vec![0.0; n]; n];
    for row in routing.iter_mut() {
        let mut left = 0.9f64;
        for p in row.iter_mut() {
            let x = rng.gen_range(0.0..=left) * rng.gen_range(0.0f64..0.6);
            *p = x;
            left -= x;
        }
    }
    let queues: Vec<String> = (0..n).map(|i| format!("Q{i}")).collect();
    NetworkSpec {
        classes: (0..n)
            .map(|i| ClassSpec { id: queues[i].clone(), queue: i, service_prob: rng.gen_range(0.2..=1.0) })
            .collect(),
        arrivals: (0..n)
            .filter_map(|i| {
                rng.gen_bool(0.6)
                    .then(|| ArrivalStream { rate: rng.gen_range(0.0..0.2), classes: vec![i] })
            })
            .collect(),
        routing,
        schedule_set: ScheduleSet::unit_simplex(n),
        queues,
    }
}

/// Fixed point of `lambda = a + lambda P` by plain iteration.
fn neumann(spec: &NetworkSpec) -> Vec<f64> {
    let a = spec.arrival_rates();
    let n = a.len();
    let mut lambda = a.clone();
    for _ in 0..2000 {
        lambda = (0..n)
            .map(|k| a[k] + (0..n).map(|i| lambda[i] * spec.routing[i][k]).sum::<f64>())
            .collect();
    }
    lambda
}

#[test]
fn traffic_equations_solve_on_random_open_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let spec = random_open_network(&mut rng, n);
        let sol = traffic_solve(&spec).unwrap();
        assert!(sol.residual <= 1e-10, "residual {}", sol.residual);
        for (x, y) in sol.lambda.iter().zip(neumann(&spec)) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn closed_routing_is_rejected() {
    let mut spec = build_tandem(2, 0.3, None).unwrap();
    spec.routing[1][0] = 1.0;
    assert!(!validate_spec(&spec).is_empty());
    assert!(traffic_solve(&spec).is_err());
}

#[test]
fn constraint_sets_are_downward_closed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let dim = rng.gen_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..rng.gen_range(1..=3))
            .map(|_| (0..dim).map(|_| [0.0, 0.25, 0.4, 0.5, 1.0][rng.gen_range(0..5)]).collect())
            .collect();
        let mut rows = rows;
        // every queue needs a positive coefficient somewhere
        for j in 0..dim {
            if rows.iter().all(|r| r[j] == 0.0) {
                rows[0][j] = 0.5;
            }
        }
        let set = ScheduleSet::constraints(dim, rows);
        let maximal = enumerate_maximal_schedules(&set, 10_000).unwrap();
        for s in &maximal {
            assert!(set.contains(s));
            for j in 0..dim {
                if s[j] > 0 {
                    let mut d = s.clone();
                    d[j] -= 1;
                    assert!(set.contains(&d));
                }
                let mut up = s.clone();
                up[j] += 1;
                assert!(!set.contains(&up), "{s:?} is not maximal");
            }
        }
    }
}

#[test]
fn explicit_set_missing_a_subschedule_is_flagged() {
    let mut spec = build_tandem(2, 0.3, None).unwrap();
    spec.schedule_set = ScheduleSet::explicit(2, vec![vec![0, 0], vec![1, 1], vec![1, 0]]);
    let v = validate_spec(&spec);
    assert!(!v.is_empty());
    spec.schedule_set = ScheduleSet::explicit(2, vec![vec![0, 0], vec![1, 1], vec![1, 0], vec![0, 1]]);
    assert!(validate_spec(&spec).is_empty());
}

proptest! {
    #[test]
    fn scaling_then_unscaling_is_identity(
        coeffs in prop::collection::vec(0.05f64..2.0, 1..6),
        m in prop::collection::vec(0.1f64..10.0, 6),
    ) {
        let dim = coeffs.len();
        let m = &m[..dim];
        let set = ScheduleSet::constraints(dim, vec![coeffs.clone()]);
        let inv: Vec<f64> = m.iter().map(|x| 1.0 / x).collect();
        let back = scale_schedule_set(&scale_schedule_set(&set, m).unwrap(), &inv).unwrap();
        let ScheduleSet::Constraints { rows, .. } = back else { unreachable!() };
        for (c, d) in coeffs.iter().zip(&rows[0].coeffs) {
            prop_assert!((c - d).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn integer_scaling_of_explicit_sets_round_trips(k in 1u32..5) {
        let set = ScheduleSet::explicit(2, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        let scaled = scale_schedule_set(&set, &[f64::from(k), 1.0]).unwrap();
        let ScheduleSet::Explicit { schedules, .. } = scaled else { unreachable!() };
        prop_assert_eq!(schedules[1].clone(), vec![k, 0]);
        prop_assert!(scale_schedule_set(&set, &[1.5, 1.0]).is_err());
    }

    #[test]
    fn subcritical_sign_follows_the_load(a_num in 1i64..99, nu in 1u32..8, j in 1usize..6) {
        let a = a_num as f64 / 100.0;
        let nu = f64::from(nu);
        let (spec, _) = build_instability_network(a, nu, j).unwrap();
        let rep = subcritical_check(&spec, &traffic_solve(&spec).unwrap()).unwrap();
        let margin = 1.0 - a * (1.0 + 1.0 / nu);
        prop_assert!((rep.margin - margin).abs() <= 1e-12);
        let want = if margin > 1e-9 {
            SubcriticalStatus::Interior
        } else if margin < -1e-9 {
            SubcriticalStatus::Supercritical
        } else {
            SubcriticalStatus::Boundary
        };
        prop_assert_eq!(rep.status, want);
    }
}

#[test]
fn boundary_load_is_reported_as_boundary() {
    let (spec, _) = build_instability_network(6.0 / 7.0, 6.0, 3).unwrap();
    let rep = subcritical_check(&spec, &traffic_solve(&spec).unwrap()).unwrap();
    assert_eq!(rep.status, SubcriticalStatus::Boundary);
}

#[test]
fn hull_load_matches_constraint_load_on_integral_sets() {
    // nu = 2 makes every vertex of each component polytope integral
    for &(a, nu, j) in &[(0.3, 2.0, 3usize), (0.6, 2.0, 2), (0.5, 1.0, 3), (0.2, 2.0, 4)] {
        let (spec, _) = build_instability_network(a, nu, j).unwrap();
        let traffic = traffic_solve(&spec).unwrap();
        let by_rows = subcritical_check(&spec, &traffic).unwrap().load;
        let maximal = enumerate_maximal_schedules(&spec.schedule_set, 100_000).unwrap();
        let by_hull = hull_load(&maximal, &traffic.rho_queue).unwrap();
        assert!((by_rows - by_hull).abs() <= 1e-6, "{by_rows} vs {by_hull}");

        let mut explicit = spec.clone();
        explicit.schedule_set = ScheduleSet::explicit(spec.num_queues(), maximal.clone());
        let rep = subcritical_check(&explicit, &traffic).unwrap();
        assert_eq!(rep.method, "explicit_hull");
        assert!((rep.load - by_rows).abs() <= 1e-6);
    }
}

fn close(x: &[f64], y: &[f64]) -> bool {
    x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-12)
}

#[test]
fn instability_network_rho_has_closed_form() {
    for &(a, nu, j) in &[(7.0 / 12.0, 6.0, 30usize), (0.4, 2.0, 3)] {
        let (spec, tags) = build_instability_network(a, nu, j).unwrap();
        assert!(validate_spec(&spec).is_empty());
        let r = tags.resolve(&spec.queues).unwrap();
        let rho = traffic_solve(&spec).unwrap().rho_queue;
        for c in 0..2 {
            assert!((rho[r.hub[c]] - a).abs() <= 1e-12);
            for &s in &r.spread[c] {
                assert!((rho[s] - a / j as f64).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn tandem_rho_is_constant() {
    let spec = build_tandem(5, 0.5, None).unwrap();
    assert!(validate_spec(&spec).is_empty());
    assert!(close(&traffic_solve(&spec).unwrap().rho_queue, &[0.5; 5]));
    assert!(build_tandem(0, 0.5, None).is_err());
}

#[test]
fn branching_rho_is_product_of_split_probabilities() {
    for (children, probs) in [binary_tree(3), example_tree()] {
        let a = 0.2;
        let spec =
            build_pure_branching(&children, a, &probs, BranchingCapacity::PerQueue).unwrap();
        assert!(validate_spec(&spec).is_empty());
        let mut want = vec![0.0; children.len()];
        want[0] = a;
        // children have larger indices than parents in both trees
        for v in 0..children.len() {
            for (c, p) in children[v].iter().zip(&probs[v]) {
                want[*c] = want[v] * p;
            }
        }
        assert!(close(&traffic_solve(&spec).unwrap().rho_queue, &want));
    }
}

#[test]
fn reentrant_networks_have_expected_loads() {
    let (a, eps, k) = (1.0, 0.1791, 20);
    let (spec, _) = build_multiclass_rs(a, eps, k).unwrap();
    assert!(validate_spec(&spec).is_empty());
    let rho = traffic_solve(&spec).unwrap().rho_queue;
    assert!(close(&rho, &[a, k as f64 * a, a, k as f64 * a]));

    let (spec, _) = build_collapsed_rs(a, eps).unwrap();
    let rho = traffic_solve(&spec).unwrap().rho_queue;
    let mean = (1.0 - 2.0 * eps) / (eps * eps);
    assert!((rho[1] - a * mean).abs() <= 1e-9);
    assert!((rho[3] - a * mean).abs() <= 1e-9);
}

#[test]
fn builders_are_deterministic_and_round_trip_through_json() {
    let specs = vec![
        build_instability_network(7.0 / 12.0, 6.0, 30).unwrap().0,
        build_tandem(5, 0.5, None).unwrap(),
        build_multiclass_rs(1.0, 0.1791, 20).unwrap().0,
        build_collapsed_rs(1.0, 0.1791).unwrap().0,
    ];
    for spec in specs {
        let text = spec.to_json_string().unwrap();
        assert_eq!(text, spec.to_json_string().unwrap());
        assert_eq!(NetworkSpec::from_json_str(&text).unwrap(), spec);
    }
    let (c, p) = example_tree();
    let a = build_pure_branching(&c, 0.2, &p, BranchingCapacity::Shared).unwrap();
    let b = build_pure_branching(&c, 0.2, &p, BranchingCapacity::Shared).unwrap();
    assert_eq!(a, b);
}
