//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use overlay_core::gen::{gen_random, gen_setcover, random_setcover, GenConfig, Regime};
use overlay_core::lp::{
    build_model, solve_ip, solve_lp, Infeasibility, IpStatus, LpError, LpModel, ModeOptions,
    RowKind, Sense, TimeBudget, VarKind,
};
use overlay_core::model::{normalize, RawInstance};
use overlay_core::pipeline::{approx_from_lp, run_approx, run_hack, run_ip, ApproxRun};
use overlay_core::rounding::{randomized_round, saturating_multiplier, RoundingConfig};
use overlay_core::solution::PathSet;
use overlay_core::verify::{audit, simulate_loss, GuaranteeProfile};
use overlay_core::{CostMode, Instance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_cover, edge, oracle_cost, oracle_loss, reflector, sink, source, star};

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

/// Runs handed over from criterion 4 to criteria 7 and 13.
struct ApproxCase {
    inst: Instance,
    run: ApproxRun,
}

#[derive(Default)]
struct Shared {
    approx_runs: Vec<ApproxCase>,
    half_integral_values: Vec<f64>,
}

// ---------------------------------------------------------------------------
// 1. Threshold equivalence
// ---------------------------------------------------------------------------

fn c1_weight_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut boundary = 0;
    for case in 0..1000 {
        let r = rng.gen_range(1..=6);
        let paths: Vec<(f64, f64)> = (0..r)
            .map(|_| {
                let a = if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(0.0..0.3)
                };
                let b = if rng.gen_bool(0.05) {
                    1.0
                } else {
                    rng.gen_range(0.0..0.3)
                };
                (a, b)
            })
            .collect();
        let routes: Vec<usize> = (0..r).filter(|_| rng.gen_bool(0.6)).collect();
        let phi = match case % 3 {
            // Exactly the loss of some subset: the boundary case.
            0 => {
                let sub: Vec<usize> = (0..r).filter(|_| rng.gen_bool(0.5)).collect();
                sub.iter()
                    .map(|&i| 1.0 - (1.0 - paths[i].0) * (1.0 - paths[i].1))
                    .product::<f64>()
                    .max(1e-12)
            }
            _ => 10f64.powf(-rng.gen_range(0.0..6.0)),
        };
        let inst = star(&paths, phi);
        let w = inst.sinks[0].weight_threshold();
        let weight: f64 = routes
            .iter()
            .map(|&i| inst.path_weight(i, 0).unwrap())
            .sum();
        let loss = oracle_loss(&inst, &routes, 0);
        let model_loss = inst.analytic_loss(&routes, 0).unwrap();
        check(
            (model_loss - loss).abs() <= 1e-12 * loss.max(1e-300) + 1e-15,
            || format!("case {case}: analytic loss {model_loss} vs oracle {loss}"),
        )?;
        // Compare in the log domain; within 1e-9 of the threshold both
        // answers are acceptable.
        let log_gap = if loss > 0.0 {
            -loss.log2() - w
        } else {
            f64::INFINITY
        };
        if log_gap.abs() <= 1e-9 {
            boundary += 1;
            continue;
        }
        let by_weight = weight >= w - 1e-9;
        let by_loss = loss <= phi;
        check(by_weight == by_loss, || {
            format!("case {case}: weight {weight} vs W {w}, loss {loss} vs phi {phi}")
        })?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("1000 cases, {boundary} on the 1e-9 boundary"))
}

// ---------------------------------------------------------------------------
// 2. Fan-out rows imply the per-feed rows for integral points
// ---------------------------------------------------------------------------

fn row_ok(model: &LpModel, kind: RowKind, x: &[f64]) -> bool {
    model.rows_of(kind).all(|row| {
        let lhs: f64 = row.coeffs.iter().map(|&(v, c)| c * x[v]).sum();
        match row.sense {
            Sense::Le => lhs <= row.rhs + 1e-9,
            Sense::Ge => lhs >= row.rhs - 1e-9,
            Sense::Eq => (lhs - row.rhs).abs() <= 1e-9,
        }
    })
}

fn c2_dominance() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut inst_seed = 0;
    while checked < 500 {
        inst_seed += 1;
        let inst = gen_random(&GenConfig::new((3, 5, 10), Regime::Avg, inst_seed)).unwrap();
        let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
        for _ in 0..50 {
            let mut x = vec![0.0; model.num_vars()];
            for i in 0..inst.num_reflectors() {
                x[model.reflector_var(i)] = rng.gen_bool(0.7) as u8 as f64;
            }
            for (v, _, i) in model.feed_vars() {
                x[v] = (x[model.reflector_var(i)] == 1.0 && rng.gen_bool(0.7)) as u8 as f64;
            }
            let mut load = vec![0u32; inst.num_reflectors()];
            let mut routes: Vec<(usize, usize, usize, usize)> = model.route_vars().collect();
            routes.shuffle(&mut rng);
            for (v, k, i, _) in routes {
                let feed = model.feed_var(k, i).unwrap();
                if x[feed] == 1.0 && load[i] < inst.reflectors[i].fanout && rng.gen_bool(0.8) {
                    x[v] = 1.0;
                    load[i] += 1;
                }
            }
            for kind in [RowKind::ReflectorUse, RowKind::FeedUse, RowKind::Fanout] {
                check(row_ok(&model, kind, &x), || {
                    format!("constructed point breaks {kind:?}")
                })?;
            }
            check(row_ok(&model, RowKind::CuttingPlane, &x), || {
                format!("instance {inst_seed}: integral point breaks a per-feed row")
            })?;
            // Same check straight from the instance.
            for (v, k, i) in model.feed_vars() {
                let served = (0..inst.num_sinks())
                    .filter_map(|j| model.route_var(i, j).filter(|_| inst.sinks[j].stream == k))
                    .map(|rv| x[rv])
                    .sum::<f64>();
                check(served <= inst.reflectors[i].fanout as f64 * x[v], || {
                    format!("instance {inst_seed}: feed ({k},{i}) carries {served}")
                })?;
            }
            checked += 1;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{checked} integral points, 0 exceptions"))
}

// ---------------------------------------------------------------------------
// 3. Set cover against enumeration
// ---------------------------------------------------------------------------

fn c3_setcover() -> Verdict {
    let start = Instant::now();
    for seed in 0..50u64 {
        let universe = 3 + (seed % 6) as usize;
        let nsets = 4 + (seed % 7) as usize;
        let sets = random_setcover(universe, nsets, seed);
        let inst = gen_setcover(universe, &sets).unwrap();
        let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
        let sol = solve_ip(&model, TimeBudget::unlimited(), None).map_err(|e| e.to_string())?;
        let opt = brute_force_cover(universe, &sets) as f64;
        check(sol.status == IpStatus::Optimal, || {
            format!("seed {seed}: not optimal")
        })?;
        check((sol.objective - opt).abs() < 1e-6, || {
            format!("seed {seed}: ip {} vs enumeration {opt}", sol.objective)
        })?;
        let ps = PathSet::from_integral(&inst, &model, &sol);
        check(ps.cost(&inst).total == opt, || {
            format!("seed {seed}: plan cost {} vs {opt}", ps.cost(&inst).total)
        })?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "50 reductions in {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 4. Approx postconditions
// ---------------------------------------------------------------------------

fn check_approx_run(inst: &Instance, run: &ApproxRun, label: &str) -> Result<(), String> {
    let ps = &run.pathset;
    for (j, d) in inst.sinks.iter().enumerate() {
        // weight >= W/4  <=>  loss <= phi^(1/4)
        let loss = oracle_loss(inst, &ps.routes[j], j);
        check(loss <= d.threshold.powf(0.25) * (1.0 + 1e-9), || {
            format!(
                "{label}: sink {j} loss {loss} above phi^(1/4) = {}",
                d.threshold.powf(0.25)
            )
        })?;
    }
    let mut used = vec![0u32; inst.num_reflectors()];
    for rs in &ps.routes {
        for &i in rs {
            used[i] += 1;
        }
    }
    for (i, r) in inst.reflectors.iter().enumerate() {
        check(used[i] <= 4 * r.fanout, || {
            format!(
                "{label}: reflector {i} serves {} > 4 * {}",
                used[i], r.fanout
            )
        })?;
    }
    let cost = oracle_cost(inst, ps);
    check(cost <= 2.0 * run.semi.cost * (1.0 + 1e-9), || {
        format!("{label}: cost {cost} > 2 * {}", run.semi.cost)
    })?;
    let report = audit(
        inst,
        ps,
        GuaranteeProfile::approx().with_cost_bound(2.0 * run.semi.cost),
    )
    .map_err(|e| e.to_string())?;
    check(report.pass, || {
        format!("{label}: audit {:?}", report.failures)
    })
}

fn c4_approx_postconditions(shared: &mut Shared) -> Verdict {
    let mut max_attempts = 0;
    for seed in 0..30u64 {
        let inst = gen_random(&GenConfig::new((8, 6, 16), Regime::Avg, 1000 + seed)).unwrap();
        let cfg = RoundingConfig::theoretical(&inst, seed);
        let run = run_approx(&inst, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        check_approx_run(&inst, &run, &format!("seed {seed}"))?;
        max_attempts = max_attempts.max(run.attempts);
        if let Some(g) = &run.gap {
            shared
                .half_integral_values
                .extend(g.half_integral.iter().map(|h| h.2));
        }
        shared.approx_runs.push(ApproxCase { inst, run });
    }
    Ok(format!(
        "30 runs, 0 audit failures, at most {max_attempts} attempts"
    ))
}

// ---------------------------------------------------------------------------
// 5. Unbiased rounding
// ---------------------------------------------------------------------------

fn c5_unbiased() -> Verdict {
    let inst = gen_random(&GenConfig::new((3, 4, 8), Regime::Avg, 5)).unwrap();
    let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
    let frac = solve_lp(&model).map_err(|e| e.to_string())?;
    let m = 3.0;
    let seeds = 4000u64;
    let n = model.num_vars();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut cost = 0.0;
    for seed in 0..seeds {
        let semi = randomized_round(&model, &frac, &RoundingConfig::new(m, seed))
            .map_err(|e| e.to_string())?;
        for (v, kind) in model.vars.iter().enumerate() {
            if let VarKind::Route { .. } = kind {
                sum[v] += semi.values[v];
                sq[v] += semi.values[v] * semi.values[v];
            }
        }
        cost += semi.cost;
    }
    let s = seeds as f64;
    let mut worst: f64 = 0.0;
    for (v, _, _, _) in model.route_vars() {
        let mean = sum[v] / s;
        let var = (sq[v] / s - mean * mean).max(0.0);
        let se = (var / s).sqrt();
        let dev = (mean - frac.values[v]).abs();
        if se == 0.0 {
            check(dev < 1e-12, || {
                format!("var {v}: constant {mean} vs {}", frac.values[v])
            })?;
        } else {
            worst = worst.max(dev / se);
            check(dev <= 3.0 * se, || {
                format!(
                    "var {v}: mean {mean} vs {} ({:.2} se)",
                    frac.values[v],
                    dev / se
                )
            })?;
        }
    }
    let mean_cost = cost / s;
    check(mean_cost <= m * frac.objective * 1.05, || {
        format!("mean cost {mean_cost} > {m} * {} * 1.05", frac.objective)
    })?;
    Ok(format!(
        "{seeds} seeds, worst deviation {worst:.2} se, mean cost {:.3} of M times LP",
        mean_cost / (m * frac.objective)
    ))
}

// ---------------------------------------------------------------------------
// 6. Transmission mode
// ---------------------------------------------------------------------------

fn c6_transmission(shared: &mut Shared) -> Verdict {
    let mut ratios = Vec::new();
    for inst_seed in 0..10u64 {
        let mut inst =
            gen_random(&GenConfig::new((4, 6, 12), Regime::Avg, 600 + inst_seed)).unwrap();
        inst.mode = CostMode::Transmission;
        let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
        let frac = solve_lp(&model).map_err(|e| e.to_string())?;
        for seed in 0..30u64 {
            let cfg = RoundingConfig::theoretical(&inst, seed);
            let run = approx_from_lp(&inst, &model, &frac, &cfg)
                .map_err(|e| format!("instance {inst_seed} seed {seed}: {e}"))?;
            let cost = oracle_cost(&inst, &run.pathset);
            check(run.pathset.cost(&inst).reflector == 0.0, || {
                "reflector cost charged".into()
            })?;
            check(cost <= 2.0 * run.semi.cost * (1.0 + 1e-9), || {
                format!(
                    "instance {inst_seed} seed {seed}: {cost} > 2 * {}",
                    run.semi.cost
                )
            })?;
            if let Some(g) = &run.gap {
                shared
                    .half_integral_values
                    .extend(g.half_integral.iter().map(|h| h.2));
            }
            ratios.push(cost / frac.objective);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    check(mean <= 2.2, || format!("mean cost / LP = {mean:.4}"))?;
    Ok(format!("{} runs, mean cost / LP = {mean:.4}", ratios.len()))
}

// ---------------------------------------------------------------------------
// 7. Half-integral flow
// ---------------------------------------------------------------------------

fn c7_half_integral(shared: &Shared) -> Verdict {
    let vals = &shared.half_integral_values;
    check(!vals.is_empty(), || "no gapflow runs collected".into())?;
    for &v in vals {
        check(v == 0.0 || v == 0.5 || v == 1.0, || format!("value {v}"))?;
    }
    for case in &shared.approx_runs {
        if let Some(g) = &case.run.gap {
            for &f in &g.flow.pair_values {
                check(f == 0.0 || f == 0.5 || f == 1.0, || {
                    format!("pair flow {f}")
                })?;
            }
        }
    }
    Ok(format!("{} values, all in {{0, 1/2, 1}}", vals.len()))
}

// ---------------------------------------------------------------------------
// 8. Saturated multiplier
// ---------------------------------------------------------------------------

fn c8_saturation() -> Verdict {
    let mut details = Vec::new();
    for inst_seed in [8u64, 18, 28] {
        let inst = gen_random(&GenConfig::new((4, 5, 10), Regime::Avg, inst_seed)).unwrap();
        let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
        let frac = solve_lp(&model).map_err(|e| e.to_string())?;
        let m = saturating_multiplier(&model, &frac).max(2.0);
        let mut first: Option<String> = None;
        for seed in 0..10u64 {
            let run = approx_from_lp(&inst, &model, &frac, &RoundingConfig::new(m, seed * 7919))
                .map_err(|e| e.to_string())?;
            let bytes = serde_json::to_string(&run.pathset.to_export(&inst)).unwrap();
            match &first {
                None => first = Some(bytes),
                Some(f) => check(*f == bytes, || {
                    format!("instance {inst_seed}: seed {seed} differs")
                })?,
            }
        }
        details.push(format!("M_sat={m:.2}"));
    }
    Ok(format!(
        "3 instances x 10 seeds identical ({})",
        details.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 9. Worked example: phi = 1e-4
// ---------------------------------------------------------------------------

fn c9_worked_example() -> Verdict {
    // Every path loses 8%-20%, so several paths are needed to reach 1e-4.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let nr = 8;
    let raw = RawInstance {
        sources: vec![source("s")],
        reflectors: (0..nr)
            .map(|i| reflector(&format!("r{i}"), rng.gen_range(5.0..20.0), 6))
            .collect(),
        sinks: (0..6).map(|j| sink(&format!("d{j}"), "s", 1e-4)).collect(),
        src_edges: (0..nr)
            .map(|i| {
                edge(
                    "s",
                    &format!("r{i}"),
                    rng.gen_range(0.02..0.08),
                    rng.gen_range(1.0..5.0),
                )
            })
            .collect(),
        refl_edges: (0..nr)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .map(|(i, j)| {
                edge(
                    &format!("r{i}"),
                    &format!("d{j}"),
                    rng.gen_range(0.06..0.12),
                    rng.gen_range(1.0..5.0),
                )
            })
            .collect(),
        mode: None,
        colors_enabled: false,
        bandwidth_enabled: false,
    };
    let inst = normalize(&raw).map_err(|e| e.to_string())?;
    let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
    let frac = solve_lp(&model).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        for m in [2.0, 4.0, 16.0] {
            let run = approx_from_lp(&inst, &model, &frac, &RoundingConfig::new(m, seed))
                .map_err(|e| format!("seed {seed} M {m}: {e}"))?;
            for j in 0..inst.num_sinks() {
                let loss = oracle_loss(&inst, &run.pathset.routes[j], j);
                worst = worst.max(loss);
                check(loss <= 0.1, || {
                    format!("seed {seed} M {m}: sink {j} loss {loss}")
                })?;
            }
        }
    }
    Ok(format!("60 runs, worst sink loss {worst:.5} <= 0.1"))
}

// ---------------------------------------------------------------------------
// 10. Color pipeline
// ---------------------------------------------------------------------------

fn c10_colors() -> Verdict {
    let start = Instant::now();
    let mut done = 0;
    let mut seed = 0u64;
    let mut max_increase: f64 = 0.0;
    let mut max_copies = 0;
    while done < 20 {
        seed += 1;
        check(seed < 200, || format!("only {done} colored instances ran"))?;
        let mut cfg = GenConfig::new((2, 4 + (seed % 3) as usize, 6), Regime::Avg, 100 + seed);
        cfg.colors = Some(2 + (seed % 2) as u32);
        let inst = gen_random(&cfg).map_err(|e| e.to_string())?;
        let run = run_approx(&inst, &RoundingConfig::new(4.0, seed))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let c = run.color.as_ref().ok_or("no color outcome")?;
        let cert = &c.audit.certificate;
        check(cert.holds(), || {
            format!("seed {seed}: certificate {cert:?}")
        })?;
        // Recheck the rounding contract from the system itself.
        let sys = &c.system;
        for (z, r) in sys.z.iter().zip(&c.rounded) {
            check(*r == z.floor() || *r == z.ceil(), || {
                format!("seed {seed}: {z} -> {r}")
            })?;
        }
        for row in &sys.rows {
            let inc: f64 = row
                .coeffs
                .iter()
                .map(|&(p, a)| a * (c.rounded[p] - sys.z[p]))
                .sum();
            max_increase = max_increase.max(inc);
            check(inc < 9.0, || {
                format!("seed {seed}: row {:?} grows by {inc}", row.kind)
            })?;
        }
        let ps = &run.pathset;
        let mut copies = std::collections::BTreeMap::new();
        for (j, rs) in ps.routes.iter().enumerate() {
            check(!rs.is_empty(), || format!("seed {seed}: sink {j} unserved"))?;
            for &i in rs {
                *copies
                    .entry((j, inst.reflectors[i].color.unwrap()))
                    .or_insert(0usize) += 1;
            }
        }
        let most = copies.values().copied().max().unwrap_or(0);
        max_copies = max_copies.max(most);
        check(most <= 13, || {
            format!("seed {seed}: {most} copies of one color")
        })?;
        let cost = oracle_cost(&inst, ps);
        check(cost <= 13.0 * run.semi.cost * (1.0 + 1e-9), || {
            format!("seed {seed}: cost {cost} > 13 * {}", run.semi.cost)
        })?;
        done += 1;
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "20 instances, max row increase {max_increase:.3} < 9, max copies {max_copies}"
    ))
}

// ---------------------------------------------------------------------------
// 11. Cost ordering
// ---------------------------------------------------------------------------

fn c11_ordering() -> Verdict {
    let budget = || TimeBudget::seconds(20.0);
    let mut compared = 0;
    let mut excluded = Vec::new();
    let mut broken = Vec::new();
    let mut seed = 0u64;
    while compared < 10 && seed < 40 {
        seed += 1;
        let inst = gen_random(&GenConfig::new((3, 4, 8), Regime::Avg, 1100 + seed)).unwrap();
        let hack = match run_hack(&inst, budget()) {
            Ok(h) => h,
            Err(e) => {
                if let overlay_core::pipeline::PipelineError::Lp(LpError::Infeasible(
                    Infeasibility::FixedResidual { .. },
                )) = e
                {
                    excluded.push(seed);
                    eprintln!("criterion 11: seed {seed} excluded, hack fixing infeasible");
                    continue;
                }
                return Err(format!("seed {seed}: hack: {e}"));
            }
        };
        let ip = run_ip(&inst, budget(), Some(&hack.pathset)).map_err(|e| e.to_string())?;
        if ip.solution.status != IpStatus::Optimal {
            continue;
        }
        let approx = run_approx(&inst, &RoundingConfig::theoretical(&inst, seed))
            .map_err(|e| e.to_string())?;
        let (ci, ch, ca) = (
            oracle_cost(&inst, &ip.pathset),
            oracle_cost(&inst, &hack.pathset),
            oracle_cost(&inst, &approx.pathset),
        );
        let tol = 1e-6;
        if !(ci <= ch + tol && ch <= ca + tol) {
            // Approx only promises W/4 and 4x capacity, so its plan may be
            // infeasible for the exact program; say so when it is.
            let exact = audit(&inst, &approx.pathset, GuaranteeProfile::exact())
                .map_err(|e| e.to_string())?;
            broken.push(format!(
                "seed {seed}: ip {ci:.4} hack {ch:.4} approx {ca:.4} (approx vs exact profile: {})",
                if exact.pass {
                    "feasible".to_string()
                } else {
                    exact.failures.join("; ")
                }
            ));
        }
        compared += 1;
    }
    check(compared == 10, || {
        format!("only {compared} instances completed")
    })?;
    check(broken.is_empty(), || broken.join("; "))?;
    Ok(format!("10 instances ordered, excluded {excluded:?}"))
}

// ---------------------------------------------------------------------------
// 12. Scaling
// ---------------------------------------------------------------------------

fn c12_scaling() -> Verdict {
    let inst = gen_random(&GenConfig::new((20, 15, 60), Regime::Avg, 12)).unwrap();
    let model = build_model(&inst, ModeOptions::from_instance(&inst)).unwrap();
    let xs = model.route_vars().count();
    check(xs >= 900, || format!("only {xs} route variables"))?;
    let start = Instant::now();
    let run =
        run_approx(&inst, &RoundingConfig::theoretical(&inst, 12)).map_err(|e| e.to_string())?;
    let approx_time = start.elapsed();
    check_approx_run(&inst, &run, "20x15x60")?;
    within(approx_time, 120.0)?;
    let start = Instant::now();
    let ip = match run_ip(&inst, TimeBudget::seconds(10.0), Some(&run.pathset)) {
        Ok(r) => match r.solution.status {
            IpStatus::Optimal => "optimal".to_string(),
            IpStatus::Timeout { .. } => "timed out with incumbent".to_string(),
        },
        Err(e) => format!("{e}"),
    };
    Ok(format!(
        "{xs} route vars, approx {:.2}s; ip in {:.1}s: {ip}",
        approx_time.as_secs_f64(),
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 13. Simulated loss
// ---------------------------------------------------------------------------

fn c13_monte_carlo(shared: &Shared) -> Verdict {
    let packets = 100_000u64;
    let mut sinks = 0;
    let mut worst: f64 = 0.0;
    for (r, case) in shared.approx_runs.iter().enumerate() {
        let ps = &case.run.pathset;
        for j in 0..case.inst.num_sinks() {
            let p = oracle_loss(&case.inst, &ps.routes[j], j);
            let emp = simulate_loss(&case.inst, ps, j, packets, 13_000 + r as u64);
            let sigma = (p * (1.0 - p) / packets as f64).sqrt();
            if sigma == 0.0 {
                check(emp == p, || format!("run {r} sink {j}: {emp} vs exact {p}"))?;
            } else {
                worst = worst.max((emp - p).abs() / sigma);
                check((emp - p).abs() <= 4.0 * sigma, || {
                    format!(
                        "run {r} sink {j}: empirical {emp} vs {p} ({:.2} sigma)",
                        (emp - p).abs() / sigma
                    )
                })?;
            }
            sinks += 1;
        }
    }
    check(sinks > 0, || "no runs from criterion 4".into())?;
    Ok(format!("{sinks} sinks, worst deviation {worst:.2} sigma"))
}

#[test]
fn acceptance() {
    let mut shared = Shared::default();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut(&mut Shared) -> Verdict| {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&mut shared))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let line = match &v {
            Ok(d) => format!(
                "PASS {n:>2} {name}: {d} [{:.2}s]",
                start.elapsed().as_secs_f64()
            ),
            Err(d) => format!(
                "FAIL {n:>2} {name}: {d} [{:.2}s]",
                start.elapsed().as_secs_f64()
            ),
        };
        println!("{line}");
        results.push((n, name, v));
    };
    run(1, "weight/loss equivalence", &mut |_| {
        c1_weight_equivalence()
    });
    run(2, "fan-out rows dominate per-feed rows", &mut |_| {
        c2_dominance()
    });
    run(3, "set-cover optimum", &mut |_| c3_setcover());
    run(4, "approx postconditions", &mut c4_approx_postconditions);
    run(5, "unbiased rounding", &mut |_| c5_unbiased());
    run(6, "transmission mode within 2x", &mut c6_transmission);
    run(7, "half-integral flow", &mut |s| c7_half_integral(s));
    run(8, "saturated multiplier is deterministic", &mut |_| {
        c8_saturation()
    });
    run(9, "phi = 1e-4 gives loss <= 0.1", &mut |_| {
        c9_worked_example()
    });
    run(10, "color pipeline", &mut |_| c10_colors());
    run(11, "cost ordering ip <= hack <= approx", &mut |_| {
        c11_ordering()
    });
    run(12, "scaling 20x15x60", &mut |_| c12_scaling());
    run(13, "simulated loss matches analytic", &mut |s| {
        c13_monte_carlo(s)
    });

    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| format!("{} {}", r.0, r.1))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
