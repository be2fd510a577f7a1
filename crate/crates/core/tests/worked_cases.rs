mod common;

use overlay_core::gen::{gen_random, gen_setcover, GenConfig, Regime};
use overlay_core::lp::{build_model, solve_ip, solve_lp, ModeOptions, Provenance, TimeBudget};
use overlay_core::rounding::{check_draw, round_attempt, RoundingConfig};
use overlay_core::solution::PathSet;
use overlay_core::verify::simulate_loss;

use common::{brute_force_cover, star};

#[test]
fn three_element_set_cover() {
    // universe {1,2,3} as {0,1,2}; sets {1,2}, {2,3}, {3}
    let sets = vec![vec![0, 1], vec![1, 2], vec![2]];
    let inst = gen_setcover(3, &sets).unwrap();
    let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
    let opt = brute_force_cover(3, &sets) as f64;
    assert_eq!(opt, 2.0);
    let lp = solve_lp(&model).unwrap();
    assert!(lp.objective <= opt + 1e-9);
    let ip = solve_ip(&model, TimeBudget::unlimited(), None).unwrap();
    assert!((ip.objective - opt).abs() < 1e-9);
}

#[test]
fn single_path_loss_rate_is_binomial() {
    let inst = star(&[(0.1, 0.1)], 0.5);
    let ps = PathSet::from_routes(&inst, vec![vec![0]], Provenance::Approx);
    let n = 1_000_000u64;
    let p = 0.19;
    let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let emp = simulate_loss(&inst, &ps, 0, n, 42);
    assert!((emp - p).abs() <= band, "{emp} vs {p} +- {band}");
}

#[test]
fn two_disjoint_paths_multiply() {
    let inst = star(&[(0.1, 0.0), (0.0, 0.1)], 0.5);
    let ps = PathSet::from_routes(&inst, vec![vec![0, 1]], Provenance::Approx);
    let n = 1_000_000u64;
    let p = 0.01;
    let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let emp = simulate_loss(&inst, &ps, 0, n, 7);
    assert!((emp - p).abs() <= band, "{emp} vs {p} +- {band}");
}

#[test]
fn dense_instance_variable_count() {
    let inst = gen_random(&GenConfig::new((10, 7, 28), Regime::Avg, 3)).unwrap();
    let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
    // |R||D| routes + |R||S| feeds + |R| reflectors
    assert_eq!(model.num_vars(), 7 * 28 + 7 * 10 + 7);
}

#[test]
fn theoretical_multiplier_mostly_succeeds_first_time() {
    let mut runs = 0;
    let mut first = 0;
    for inst_seed in 0..10u64 {
        let inst = gen_random(&GenConfig::new((8, 6, 16), Regime::Avg, 300 + inst_seed)).unwrap();
        let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
        let frac = solve_lp(&model).unwrap();
        for seed in 0..100u64 {
            let cfg = RoundingConfig::theoretical(&inst, seed);
            let semi = round_attempt(&model, &frac, &cfg, 0).unwrap();
            runs += 1;
            if check_draw(&model, &semi, cfg.delta, false).is_empty() {
                first += 1;
            }
        }
    }
    let n = 16.0;
    assert!(
        first as f64 >= (1.0 - 1.0 / n) * runs as f64,
        "{first}/{runs}"
    );
}

#[test]
fn route_values_are_unbiased_over_ten_thousand_seeds() {
    let inst = gen_random(&GenConfig::new((2, 3, 4), Regime::High, 21)).unwrap();
    let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
    let frac = solve_lp(&model).unwrap();
    let m = 2.5;
    let seeds = 10_000u64;
    let routes: Vec<usize> = model.route_vars().map(|r| r.0).collect();
    let mut sum = vec![0.0; routes.len()];
    let mut sq = vec![0.0; routes.len()];
    for seed in 0..seeds {
        let semi = round_attempt(&model, &frac, &RoundingConfig::new(m, seed), 0).unwrap();
        for (slot, &v) in routes.iter().enumerate() {
            sum[slot] += semi.values[v];
            sq[slot] += semi.values[v] * semi.values[v];
        }
    }
    let s = seeds as f64;
    for (slot, &v) in routes.iter().enumerate() {
        let mean = sum[slot] / s;
        let se = ((sq[slot] / s - mean * mean).max(0.0) / s).sqrt();
        let dev = (mean - frac.values[v]).abs();
        assert!(
            dev <= 3.0 * se + 1e-12,
            "var {v}: {mean} vs {}",
            frac.values[v]
        );
    }
}
