use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchnet::network::{scale_schedule_set, ArrivalStream, ClassSpec, NetworkSpec, ScheduleSet};
use switchnet::policy::{
    back_pressure_schedule, max_weight_schedule, objective, proportional_target, Tie,
};

/// Every integer vector in the box `0..=floor(1/c_j)` that satisfies all rows.
fn brute_force_points(dim: usize, rows: &[Vec<f64>]) -> Vec<Vec<u32>> {
    let cap: Vec<u32> = (0..dim)
        .map(|j| {
            rows.iter()
                .filter(|r| r[j] > 0.0)
                .map(|r| ((1.0 + 1e-9) / r[j]).floor() as u32)
                .min()
                .unwrap()
        })
        .collect();
    let mut out = Vec::new();
    let mut x = vec![0u32; dim];
    loop {
        let ok = rows
            .iter()
            .all(|r| r.iter().zip(&x).map(|(c, &s)| c * f64::from(s)).sum::<f64>() <= 1.0 + 1e-9);
        if ok {
            out.push(x.clone());
        }
        let mut i = 0;
        loop {
            if i == dim {
                return out;
            }
            if x[i] < cap[i] {
                x[i] += 1;
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

/// Coefficients whose reciprocals are small, so the box stays enumerable.
const COSTS: [f64; 7] = [1.0, 0.5, 1.0 / 3.0, 0.25, 0.4, 0.3, 0.6];

fn random_rows(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    // disjoint supports: assign each queue to one of up to two rows
    let nrows = rng.gen_range(1..=2.min(dim));
    let mut rows = vec![vec![0.0; dim]; nrows];
    for j in 0..dim {
        let r = if j < nrows { j } else { rng.gen_range(0..nrows) };
        rows[r][j] = COSTS[rng.gen_range(0..COSTS.len())];
    }
    rows
}

fn lex() -> Tie<'static> {
    Tie::Lexicographic
}

#[test]
fn argmax_matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..20 {
        let dim = rng.gen_range(2..=5);
        let rows = random_rows(&mut rng, dim);
        let set = ScheduleSet::constraints(dim, rows.clone());
        let points = brute_force_points(dim, &rows);
        for _ in 0..50 {
            let q: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..40)).collect();
            let w = vec![1.0; dim];
            let got = max_weight_schedule(&q, &set, &w, &mut lex()).unwrap();
            assert!(set.contains(&got.sigma));
            let best = points.iter().map(|p| objective(&q, &w, p)).fold(0.0, f64::max);
            assert_eq!(objective(&q, &w, &got.sigma), best, "q={q:?} rows={rows:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn explicit_scan_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let dim = rng.gen_range(2..=4);
        let rows = random_rows(&mut rng, dim);
        let points = brute_force_points(dim, &rows);
        let set = ScheduleSet::explicit(dim, points.clone());
        for _ in 0..20 {
            let q: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..40)).collect();
            let got = max_weight_schedule(&q, &set, &vec![1.0; dim], &mut lex()).unwrap();
            let best = points.iter().map(|p| objective(&q, &vec![1.0; dim], p)).fold(0.0, f64::max);
            assert_eq!(objective(&q, &vec![1.0; dim], &got.sigma), best);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn argmax_is_scale_invariant(seed in 0u64..10_000, lambda in 1u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(2..=6);
        let set = ScheduleSet::constraints(dim, random_rows(&mut rng, dim));
        let q: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..30)).collect();
        let scaled: Vec<u64> = q.iter().map(|x| x * lambda).collect();
        let w = vec![1.0; dim];
        let a = max_weight_schedule(&q, &set, &w, &mut lex()).unwrap();
        let b = max_weight_schedule(&scaled, &set, &w, &mut lex()).unwrap();
        prop_assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn constant_weights_scale_the_objective(seed in 0u64..10_000, c in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(2..=6);
        let set = ScheduleSet::constraints(dim, random_rows(&mut rng, dim));
        let q: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..30)).collect();
        let ones = vec![1.0; dim];
        let cs = vec![c; dim];
        let plain = max_weight_schedule(&q, &set, &ones, &mut lex()).unwrap();
        let weighted = max_weight_schedule(&q, &set, &cs, &mut lex()).unwrap();
        let lhs = objective(&q, &cs, &weighted.sigma);
        let rhs = c * objective(&q, &ones, &plain.sigma);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn proportional_target_scales_with_the_set(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(2..=6);
        let set = ScheduleSet::constraints(dim, random_rows(&mut rng, dim));
        let m: Vec<f64> = (0..dim).map(|_| f64::from(rng.gen_range(1..6u32))).collect();
        let q: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..30)).collect();
        let base = proportional_target(&q, &set).unwrap();
        let scaled = proportional_target(&q, &scale_schedule_set(&set, &m).unwrap()).unwrap();
        for j in 0..dim {
            prop_assert!((scaled[j] - m[j] * base[j]).abs() <= 1e-9);
        }
    }

    #[test]
    fn back_pressure_skips_nonpositive_pressure(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=5);
        // random substochastic routing to higher-indexed queues (acyclic)
        let mut routing = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut left = 1.0f64;
            for j in i + 1..n {
                let p = (rng.gen_range(0.0f64..1.0) * left * 100.0).round() / 100.0;
                routing[i][j] = p;
                left -= p;
            }
        }
        let queues: Vec<String> = (0..n).map(|i| format!("Q{i}")).collect();
        let spec = NetworkSpec {
            classes: (0..n).map(|i| ClassSpec { id: format!("Q{i}"), queue: i, service_prob: 1.0 }).collect(),
            arrivals: vec![ArrivalStream { rate: 0.1, classes: vec![0] }],
            routing: routing.clone(),
            schedule_set: ScheduleSet::constraints(n, random_rows(&mut rng, n)),
            queues,
        };
        let q: Vec<u64> = (0..n).map(|_| rng.gen_range(0..20)).collect();
        let s = back_pressure_schedule(&q, &spec, &mut lex()).unwrap();
        for j in 0..n {
            let pressure = q[j] as f64 - (0..n).map(|k| routing[j][k] * q[k] as f64).sum::<f64>();
            if pressure <= 0.0 {
                prop_assert_eq!(s.sigma[j], 0, "queue {} has pressure {}", j, pressure);
            }
        }
    }
}
