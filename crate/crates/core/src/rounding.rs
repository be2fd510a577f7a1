//! Randomized rounding of the LP relaxation.
//!
//! Reflector and feed variables are scaled by the multiplier `M` and rounded
//! to 0/1 by coin flips; route variables become `1/M` with probability
//! `x/y` on feeds that survived, so every route keeps its LP value in
//! expectation. Where both scaled probabilities saturate at 1 the route keeps
//! its LP value unchanged.
//!
//! Attempt `t` of a run seeded with `s` draws from a ChaCha8 stream seeded
//! with [`attempt_seed`]`(s, t)`. Uniforms are drawn for every reflector,
//! then every feed, then every route in model order, whether or not the
//! coin is needed, so streams stay aligned across instances of equal shape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::lp::{FractionalSolution, LpModel, RowKind, VarKind};
use crate::model::{Instance, WEIGHT_TOL};

pub const DEFAULT_DELTA: f64 = 0.25;
pub const DEFAULT_MAX_RETRIES: u32 = 20;
/// Constant `c` in the theoretical multiplier `c * log2 n`.
pub const THEORY_CONSTANT: f64 = 64.0;

const CONSISTENCY_TOL: f64 = 1e-7;
const SATURATION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RoundingError {
    #[error("invalid rounding configuration: {0}")]
    InvalidConfig(String),
    #[error("LP solution is inconsistent at `{var}`: {detail}")]
    InconsistentLp { var: String, detail: String },
    #[error(
        "no acceptable rounding in {attempts} attempts; best min weight ratio {best_ratio:.4}, \
         {} sink and {} capacity violations",
        violations.weight.len(),
        violations.capacity.len()
    )]
    RetriesExhausted {
        attempts: u32,
        best: Box<SemiIntegralSolution>,
        best_ratio: f64,
        violations: Violations,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundingConfig {
    /// Multiplier `M > 1` standing in for `c log n`.
    pub multiplier: f64,
    /// Accepted weight shortfall: draws must reach `(1 - delta) W` per sink.
    pub delta: f64,
    pub max_retries: u32,
    pub seed: u64,
}

impl RoundingConfig {
    pub fn new(multiplier: f64, seed: u64) -> Self {
        RoundingConfig {
            multiplier,
            delta: DEFAULT_DELTA,
            max_retries: DEFAULT_MAX_RETRIES,
            seed,
        }
    }

    /// `M = 64 log2 n`, the value the high-probability bounds need.
    pub fn theoretical(inst: &Instance, seed: u64) -> Self {
        Self::new(THEORY_CONSTANT * log2_n(inst), seed)
    }

    pub fn validate(&self) -> Result<(), RoundingError> {
        if !(self.multiplier.is_finite() && self.multiplier > 1.0) {
            return Err(RoundingError::InvalidConfig(format!(
                "multiplier must be finite and > 1, got {}",
                self.multiplier
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(RoundingError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.max_retries == 0 {
            return Err(RoundingError::InvalidConfig(
                "max_retries must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `log2 max(|R|, |D|)`, floored at 1.
pub fn log2_n(inst: &Instance) -> f64 {
    (inst.n() as f64).log2().max(1.0)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of rounding attempt `attempt` under run seed `seed`.
pub fn attempt_seed(seed: u64, attempt: u32) -> u64 {
    splitmix64(seed ^ splitmix64(attempt as u64))
}

/// Values after randomized rounding, aligned with the model's variables:
/// reflector and feed entries are 0 or 1, route entries are 0, `1/M` or the
/// LP value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiIntegralSolution {
    pub values: Vec<f64>,
    /// Objective of `values`.
    pub cost: f64,
    /// `sum_i w_ij x_ij` per sink.
    pub sink_weights: Vec<f64>,
    /// Zero-based attempt that produced this draw.
    pub attempt: u32,
}

impl SemiIntegralSolution {
    /// Builds the record for arbitrary values, e.g. an LP solution used
    /// without rounding.
    pub fn from_values(model: &LpModel, values: Vec<f64>, attempt: u32) -> Self {
        let cost = model.objective_value(&values);
        let sink_weights = (0..model.rows_of(RowKind::Weight).count())
            .map(|j| {
                model
                    .weight_row(j)
                    .coeffs
                    .iter()
                    .map(|&(v, w)| w * values[v])
                    .sum()
            })
            .collect();
        SemiIntegralSolution {
            values,
            cost,
            sink_weights,
            attempt,
        }
    }
}

fn saturate(v: f64) -> f64 {
    if v >= 1.0 - SATURATION_TOL {
        1.0
    } else {
        v
    }
}

fn check_consistency(model: &LpModel, frac: &FractionalSolution) -> Result<(), RoundingError> {
    if frac.values.len() != model.num_vars() {
        return Err(RoundingError::InconsistentLp {
            var: "*".into(),
            detail: format!(
                "{} values for {} variables",
                frac.values.len(),
                model.num_vars()
            ),
        });
    }
    for (v, k, i) in model.feed_vars() {
        let (y, z) = (frac.values[v], frac.values[model.reflector_var(i)]);
        if y > z + CONSISTENCY_TOL {
            return Err(RoundingError::InconsistentLp {
                var: model.names[v].clone(),
                detail: format!("feed value {y} exceeds reflector value {z} (stream {k})"),
            });
        }
    }
    for (v, k, i, _) in model.route_vars() {
        let y = frac.values[model.feed_var(k, i).expect("route has a feed")];
        if frac.values[v] > y + CONSISTENCY_TOL {
            return Err(RoundingError::InconsistentLp {
                var: model.names[v].clone(),
                detail: format!("route value {} exceeds feed value {y}", frac.values[v]),
            });
        }
    }
    Ok(())
}

/// One draw of the rounding using the attempt-0 stream.
pub fn randomized_round(
    model: &LpModel,
    frac: &FractionalSolution,
    cfg: &RoundingConfig,
) -> Result<SemiIntegralSolution, RoundingError> {
    round_attempt(model, frac, cfg, 0)
}

/// One draw of the rounding using the stream of attempt `attempt`.
pub fn round_attempt(
    model: &LpModel,
    frac: &FractionalSolution,
    cfg: &RoundingConfig,
    attempt: u32,
) -> Result<SemiIntegralSolution, RoundingError> {
    cfg.validate()?;
    check_consistency(model, frac)?;
    let m = cfg.multiplier;
    let hat = &frac.values;
    let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed(cfg.seed, attempt));
    let mut values = vec![0.0; model.num_vars()];
    let mut dot = vec![0.0; model.num_vars()];

    for i in 0..model.num_reflectors() {
        let v = model.reflector_var(i);
        dot[v] = saturate(hat[v] * m);
        let u: f64 = rng.gen();
        if u < dot[v] {
            values[v] = 1.0;
        }
    }
    for (v, _, i) in model.feed_vars() {
        let zv = model.reflector_var(i);
        dot[v] = if dot[zv] == 0.0 {
            0.0
        } else {
            saturate(hat[v] * m / dot[zv])
        };
        let u: f64 = rng.gen();
        if values[zv] == 1.0 && u < dot[v] {
            values[v] = 1.0;
        }
    }
    for (v, k, i, _) in model.route_vars() {
        let yv = model.feed_var(k, i).expect("route has a feed");
        let zv = model.reflector_var(i);
        let u: f64 = rng.gen();
        if dot[zv] == 1.0 && dot[yv] == 1.0 {
            values[v] = hat[v];
        } else if values[yv] == 1.0 && hat[yv] > 0.0 && u < (hat[v] / hat[yv]).min(1.0) {
            values[v] = 1.0 / m;
        }
    }
    Ok(SemiIntegralSolution::from_values(model, values, attempt))
}

/// Constraints a draw missed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Violations {
    /// Sinks below `(1 - delta) W`.
    pub weight: Vec<usize>,
    /// Reflectors above twice their fan-out (or bandwidth) cap.
    pub capacity: Vec<usize>,
    /// Color rows whose rounded sum exceeds 1 (checked only on request).
    pub color: Vec<String>,
}

impl Violations {
    pub fn is_empty(&self) -> bool {
        self.weight.is_empty() && self.capacity.is_empty() && self.color.is_empty()
    }

    pub fn count(&self) -> usize {
        self.weight.len() + self.capacity.len() + self.color.len()
    }
}

/// Load and cap per reflector from the model's capacity rows, in fan-out
/// units or bandwidth units depending on how the row was built.
pub fn reflector_loads(model: &LpModel, values: &[f64]) -> Vec<(usize, f64, f64)> {
    model
        .rows
        .iter()
        .filter(|r| matches!(r.kind, RowKind::Fanout | RowKind::Bandwidth))
        .map(|r| {
            let mut load = 0.0;
            let mut cap = 0.0;
            let mut reflector = usize::MAX;
            for &(v, a) in &r.coeffs {
                match model.vars[v] {
                    VarKind::Reflector { reflector: i } => {
                        cap = -a;
                        reflector = i;
                    }
                    _ => load += a * values[v],
                }
            }
            (reflector, load, cap)
        })
        .collect()
}

/// Checks the acceptance predicates: every sink reaches `(1 - delta) W`,
/// every reflector stays within twice its cap, and optionally every color
/// row stays at most 1.
pub fn check_draw(
    model: &LpModel,
    semi: &SemiIntegralSolution,
    delta: f64,
    check_colors: bool,
) -> Violations {
    let mut out = Violations::default();
    for (j, &got) in semi.sink_weights.iter().enumerate() {
        let need = model.weight_row(j).rhs;
        if got < (1.0 - delta) * need - WEIGHT_TOL {
            out.weight.push(j);
        }
    }
    for (i, load, cap) in reflector_loads(model, &semi.values) {
        if load > 2.0 * cap + WEIGHT_TOL {
            out.capacity.push(i);
        }
    }
    if check_colors {
        for row in model.rows_of(RowKind::Color) {
            let s: f64 = row.coeffs.iter().map(|&(v, a)| a * semi.values[v]).sum();
            if s > row.rhs + WEIGHT_TOL {
                out.color.push(row.name.clone());
            }
        }
    }
    out
}

/// Smallest `achieved / W` over sinks with a positive threshold.
pub fn min_weight_ratio(model: &LpModel, semi: &SemiIntegralSolution) -> f64 {
    semi.sink_weights
        .iter()
        .enumerate()
        .filter_map(|(j, &got)| {
            let need = model.weight_row(j).rhs;
            (need > 0.0).then(|| got / need)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct RoundingOutcome {
    pub solution: SemiIntegralSolution,
    /// Number of draws made, including the accepted one.
    pub attempts: u32,
    /// Violations in the very first draw.
    pub first_violations: Violations,
}

/// Draws until one attempt meets the weight and capacity predicates.
pub fn round_with_retries(
    model: &LpModel,
    frac: &FractionalSolution,
    cfg: &RoundingConfig,
) -> Result<RoundingOutcome, RoundingError> {
    round_with_retries_checked(model, frac, cfg, false)
}

pub(crate) fn round_with_retries_checked(
    model: &LpModel,
    frac: &FractionalSolution,
    cfg: &RoundingConfig,
    check_colors: bool,
) -> Result<RoundingOutcome, RoundingError> {
    cfg.validate()?;
    let mut first_violations = None;
    let mut best: Option<(SemiIntegralSolution, f64, Violations)> = None;
    for attempt in 0..cfg.max_retries {
        let semi = round_attempt(model, frac, cfg, attempt)?;
        let violations = check_draw(model, &semi, cfg.delta, check_colors);
        let first = first_violations
            .get_or_insert_with(|| violations.clone())
            .clone();
        if violations.is_empty() {
            return Ok(RoundingOutcome {
                solution: semi,
                attempts: attempt + 1,
                first_violations: first,
            });
        }
        let ratio = min_weight_ratio(model, &semi);
        if best.as_ref().is_none_or(|(_, r, _)| ratio > *r) {
            best = Some((semi, ratio, violations));
        }
    }
    let (best, best_ratio, violations) = best.expect("at least one attempt");
    Err(RoundingError::RetriesExhausted {
        attempts: cfg.max_retries,
        best: Box::new(best),
        best_ratio,
        violations,
    })
}

/// Smallest multiplier at which every nonzero reflector and feed probability
/// saturates, making the rounding deterministic.
pub fn saturating_multiplier(model: &LpModel, frac: &FractionalSolution) -> f64 {
    let mut m: f64 = 1.0;
    for (v, kind) in model.vars.iter().enumerate() {
        if matches!(kind, VarKind::Reflector { .. } | VarKind::Feed { .. }) && frac.values[v] > 0.0
        {
            m = m.max(1.0 / frac.values[v]);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{build_model, solve_lp, ModeOptions};
    use crate::model::{normalize, RawEdge, RawInstance, RawReflector, RawSink, RawSource};

    /// Two reflectors, two sinks needing more than one path each.
    pub(crate) fn small_instance() -> Instance {
        let edge = |f: &str, t: &str, loss: f64, cost: f64| RawEdge {
            from: f.into(),
            to: t.into(),
            loss,
            cost,
        };
        normalize(&RawInstance {
            sources: vec![RawSource {
                id: "s".into(),
                streams: vec![],
                bitrate: None,
            }],
            reflectors: (0..3)
                .map(|i| RawReflector {
                    id: format!("r{i}"),
                    cost: 4.0 + 3.0 * i as f64,
                    fanout: 2,
                    bandwidth: None,
                    color: None,
                })
                .collect(),
            sinks: (0..2)
                .map(|j| RawSink {
                    id: format!("d{j}"),
                    stream: Some("s".into()),
                    threshold: Some(0.02),
                    demands: vec![],
                })
                .collect(),
            src_edges: (0..3)
                .map(|i| edge("s", &format!("r{i}"), 0.05, 1.0 + i as f64))
                .collect(),
            refl_edges: (0..3)
                .flat_map(|i| {
                    (0..2).map(move |j| {
                        edge(
                            &format!("r{i}"),
                            &format!("d{j}"),
                            0.1 + 0.05 * j as f64,
                            2.0,
                        )
                    })
                })
                .collect(),
            mode: None,
            colors_enabled: false,
            bandwidth_enabled: false,
        })
        .unwrap()
    }

    #[test]
    fn integral_lp_solution_is_reproduced_exactly() {
        let inst = small_instance();
        let model = build_model(&inst, ModeOptions::default()).unwrap();
        let mut values = vec![0.0; model.num_vars()];
        for (v, kind) in model.vars.iter().enumerate() {
            values[v] = match kind {
                VarKind::Route { reflector, .. }
                | VarKind::Feed { reflector, .. }
                | VarKind::Reflector { reflector } => (*reflector < 2) as u8 as f64,
            };
        }
        let frac = FractionalSolution {
            objective: model.objective_value(&values),
            values: values.clone(),
        };
        let cfg = RoundingConfig::new(3.0, 7);
        let semi = randomized_round(&model, &frac, &cfg).unwrap();
        assert_eq!(semi.values, values);
        let out = round_with_retries(&model, &frac, &cfg).unwrap();
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn small_reflector_value_saturates() {
        let inst = small_instance();
        let model = build_model(&inst, ModeOptions::default()).unwrap();
        let frac = solve_lp(&model).unwrap();
        let cfg = RoundingConfig::new(saturating_multiplier(&model, &frac).max(2.0), 1);
        let semi = randomized_round(&model, &frac, &cfg).unwrap();
        for i in 0..model.num_reflectors() {
            let zv = model.reflector_var(i);
            assert_eq!(semi.values[zv], (frac.values[zv] > 0.0) as u8 as f64);
        }
        for (v, ..) in model.route_vars() {
            assert_eq!(semi.values[v], frac.values[v]);
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let inst = small_instance();
        let model = build_model(&inst, ModeOptions::default()).unwrap();
        let frac = solve_lp(&model).unwrap();
        let cfg = RoundingConfig::new(1.5, 99);
        let a = round_attempt(&model, &frac, &cfg, 3).unwrap();
        let b = round_attempt(&model, &frac, &cfg, 3).unwrap();
        assert_eq!(a, b);
        for (v, ..) in model.route_vars() {
            if frac.values[v] == 0.0 {
                assert_eq!(a.values[v], 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_configs_and_inconsistent_lps() {
        let inst = small_instance();
        let model = build_model(&inst, ModeOptions::default()).unwrap();
        let frac = solve_lp(&model).unwrap();
        assert!(randomized_round(&model, &frac, &RoundingConfig::new(1.0, 0)).is_err());
        let mut bad = frac.clone();
        let (yv, _, i) = model.feed_vars().next().unwrap();
        bad.values[yv] = 1.0;
        bad.values[model.reflector_var(i)] = 0.5;
        assert!(matches!(
            randomized_round(&model, &bad, &RoundingConfig::new(2.0, 0)),
            Err(RoundingError::InconsistentLp { .. })
        ));
    }

    #[test]
    fn exhausted_retries_carry_the_best_draw() {
        let inst = small_instance();
        let model = build_model(&inst, ModeOptions::default()).unwrap();
        let frac = solve_lp(&model).unwrap();
        let mut cfg = RoundingConfig::new(1.0001, 5);
        cfg.max_retries = 1;
        cfg.delta = 1e-6;
        match round_with_retries(&model, &frac, &cfg) {
            Ok(out) => assert!(check_draw(&model, &out.solution, cfg.delta, false).is_empty()),
            Err(RoundingError::RetriesExhausted { attempts, best, .. }) => {
                assert_eq!(attempts, 1);
                assert_eq!(best.attempt, 0);
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
