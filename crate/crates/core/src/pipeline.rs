//! End-to-end runners for the three algorithms: `Approx` (relaxation,
//! randomized rounding, GAP or colored rounding), `ApproxHack` and the exact
//! integer program.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::color::{color_round, ColorError, ColorOutcome};
use crate::gapflow::{gap_round, GapError, GapOutcome};
use crate::lp::{
    approx_hack, build_model, solve_ip, solve_lp, FractionalSolution, IntegralSolution, LpError,
    LpModel, ModeOptions, TimeBudget, VarKind,
};
use crate::model::Instance;
use crate::rounding::{
    check_draw, min_weight_ratio, round_attempt, RoundingConfig, RoundingError,
    SemiIntegralSolution, Violations,
};
use crate::solution::PathSet;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("lp: {0}")]
    Lp(#[from] LpError),
    #[error("rounding: {0}")]
    Rounding(#[from] RoundingError),
    #[error("gapflow: {0}")]
    Gap(GapError),
    #[error(
        "approx: no attempt out of {attempts} passed rounding and its audits \
         (best min weight ratio {best_ratio:.4}); last failure: {last}"
    )]
    Exhausted {
        attempts: u32,
        best_ratio: f64,
        last: String,
    },
}

impl PipelineError {
    /// True when the instance itself is infeasible.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, PipelineError::Lp(LpError::Infeasible(_)))
    }
}

/// Output of one `Approx` run.
#[derive(Debug, Clone, Serialize)]
pub struct ApproxRun {
    pub pathset: PathSet,
    /// Objective of the relaxation.
    pub lp_bound: f64,
    /// The accepted draw.
    pub semi: SemiIntegralSolution,
    /// Draws made, including the accepted one.
    pub attempts: u32,
    /// Rounding predicates the first draw missed.
    pub first_violations: Violations,
    pub gap: Option<GapOutcome>,
    pub color: Option<ColorOutcome>,
    pub wall_ms: f64,
}

/// Rounds an already solved relaxation. Each attempt draws afresh; a draw
/// is accepted only when the rounding predicates hold and the second stage
/// passes its own audit.
pub fn approx_from_lp(
    inst: &Instance,
    model: &LpModel,
    frac: &FractionalSolution,
    cfg: &RoundingConfig,
) -> Result<ApproxRun, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let colors = model.options.colors;
    let mut first_violations = None;
    let mut best_ratio = f64::NEG_INFINITY;
    let mut last = String::from("none");
    for attempt in 0..cfg.max_retries {
        let semi = round_attempt(model, frac, cfg, attempt)?;
        let violations = check_draw(model, &semi, cfg.delta, colors);
        first_violations.get_or_insert_with(|| violations.clone());
        best_ratio = best_ratio.max(min_weight_ratio(model, &semi));
        if !violations.is_empty() {
            last = format!(
                "draw {attempt} missed {} weight, {} capacity and {} color predicates",
                violations.weight.len(),
                violations.capacity.len(),
                violations.color.len()
            );
            continue;
        }
        let (pathset, gap, color) = if colors {
            match color_round(inst, model, &semi) {
                Ok(c) => (c.pathset.clone(), None, Some(c)),
                Err(ColorError::Gap(GapError::HeterogeneousBitrate)) => {
                    return Err(PipelineError::Gap(GapError::HeterogeneousBitrate))
                }
                Err(e) => {
                    last = format!("draw {attempt}: color: {e}");
                    continue;
                }
            }
        } else {
            match gap_round(inst, model, &semi) {
                Ok(g) => (g.pathset.clone(), Some(g), None),
                Err(GapError::HeterogeneousBitrate) => {
                    return Err(PipelineError::Gap(GapError::HeterogeneousBitrate))
                }
                Err(e) => {
                    last = format!("draw {attempt}: gapflow: {e}");
                    continue;
                }
            }
        };
        return Ok(ApproxRun {
            pathset,
            lp_bound: frac.objective,
            semi,
            attempts: attempt + 1,
            first_violations: first_violations.unwrap_or_default(),
            gap,
            color,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Err(PipelineError::Exhausted {
        attempts: cfg.max_retries,
        best_ratio,
        last,
    })
}

/// Builds and solves the relaxation, then rounds it.
pub fn run_approx(inst: &Instance, cfg: &RoundingConfig) -> Result<ApproxRun, PipelineError> {
    let start = Instant::now();
    let model = build_model(inst, ModeOptions::from_instance(inst))?;
    let frac = solve_lp(&model)?;
    let mut run = approx_from_lp(inst, &model, &frac, cfg)?;
    run.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(run)
}

/// Output of `ApproxHack` or the exact program.
#[derive(Debug, Clone)]
pub struct IntegralRun {
    pub pathset: PathSet,
    pub solution: IntegralSolution,
    pub lp_bound: f64,
    pub wall_ms: f64,
}

pub fn run_hack(inst: &Instance, budget: TimeBudget) -> Result<IntegralRun, PipelineError> {
    let start = Instant::now();
    let model = build_model(inst, ModeOptions::from_instance(inst))?;
    let frac = solve_lp(&model)?;
    let solution = approx_hack(&model, &frac, budget)?;
    Ok(IntegralRun {
        pathset: PathSet::from_integral(inst, &model, &solution),
        solution,
        lp_bound: frac.objective,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Solves the integer program, optionally warm-started from a routing that
/// is feasible for it.
pub fn run_ip(
    inst: &Instance,
    budget: TimeBudget,
    warm: Option<&PathSet>,
) -> Result<IntegralRun, PipelineError> {
    let start = Instant::now();
    let model = build_model(inst, ModeOptions::from_instance(inst))?;
    let frac = solve_lp(&model)?;
    let incumbent = warm.map(|ps| pathset_values(&model, ps));
    let solution = solve_ip(&model, budget, incumbent.as_deref())?;
    Ok(IntegralRun {
        pathset: PathSet::from_integral(inst, &model, &solution),
        solution,
        lp_bound: frac.objective,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// 0/1 program values of a routing. Routes without a program variable are
/// dropped.
pub fn pathset_values(model: &LpModel, ps: &PathSet) -> Vec<f64> {
    let mut x = vec![0.0; model.num_vars()];
    for (v, kind) in model.vars.iter().enumerate() {
        let on = match *kind {
            VarKind::Reflector { reflector } => ps.reflectors.contains(&reflector),
            VarKind::Feed { stream, reflector } => ps.feeds.contains(&(stream, reflector)),
            VarKind::Route {
                reflector, sink, ..
            } => ps.routes[sink].contains(&reflector),
        };
        x[v] = on as u8 as f64;
    }
    x
}
