use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use overlay_core::gen::{gen_random, GenConfig, GenError};
use overlay_core::lp::{
    build_model, solve_lp, Infeasibility, IpStatus, LpError, ModeOptions, TimeBudget,
};
use overlay_core::model::ModelError;
use overlay_core::pipeline::{
    approx_from_lp, run_approx, run_hack, run_ip, ApproxRun, PipelineError,
};
use overlay_core::rounding::{RoundingConfig, RoundingError};
use overlay_core::solution::{PathSet, PathSetExport};
use overlay_core::verify::{audit, simulate_all, AuditReport, GuaranteeProfile};
use overlay_core::{CostMode, Instance};
use serde::Serialize;
use thiserror::Error;

use crate::{Alg, Command, Mode, ModeFlags, Profile, RunFlags};

/// Version of the CSV layouts written by `compare` and `sweep`.
pub const CSV_SCHEMA: u32 = 1;
const CSV_HEADER: [&str; 9] = [
    "alg", "M", "seed", "cost", "lp_bound", "ratio", "attempts", "wall_ms", "status",
];

pub const EXIT_AUDIT: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("gen: {0}")]
    Gen(#[from] GenError),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("solution file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) if e.is_infeasible() => EXIT_INFEASIBLE,
            CliError::Pipeline(PipelineError::Exhausted { .. }) => EXIT_AUDIT,
            CliError::Gen(GenError::Infeasible { .. }) => EXIT_INFEASIBLE,
            _ => 1,
        }
    }
}

impl From<LpError> for CliError {
    fn from(e: LpError) -> Self {
        CliError::Pipeline(PipelineError::Lp(e))
    }
}

pub fn parse_size(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || format!("expected AxBxC, got `{s}`");
    if parts.len() != 3 {
        return Err(bad());
    }
    let n = |p: &str| p.trim().parse::<usize>().map_err(|_| bad());
    Ok((n(parts[0])?, n(parts[1])?, n(parts[2])?))
}

pub fn run(cmd: Command) -> Result<u8, CliError> {
    match cmd {
        Command::Solve { instance, alg, run } => cmd_solve(&instance, alg, &run),
        Command::Compare {
            instance,
            algs,
            run,
        } => cmd_compare(&instance, &algs, &run),
        Command::Sweep {
            instance,
            multipliers,
            seeds,
            run,
        } => cmd_sweep(&instance, &multipliers, &seeds, &run),
        Command::Gen {
            size,
            regime,
            seed,
            density,
            colors,
            bandwidth,
            out,
        } => {
            let mut cfg = GenConfig::new(size, regime, seed);
            cfg.density = density;
            cfg.colors = colors;
            cfg.bandwidth = bandwidth;
            let inst = gen_random(&cfg)?;
            emit(out.as_deref(), &inst.to_json())?;
            Ok(0)
        }
        Command::Verify {
            instance,
            solution,
            profile,
            cost_bound,
            packets,
            seed,
            mode,
        } => cmd_verify(
            &instance, &solution, profile, cost_bound, packets, seed, &mode,
        ),
        Command::ExportLp {
            instance,
            integer,
            out,
            mode,
        } => {
            let inst = load_instance(&instance, &mode)?;
            let model = build_model(&inst, ModeOptions::from_instance(&inst))?;
            emit(out.as_deref(), &model.to_lp_format(integer))?;
            Ok(0)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text),
        None => {
            let mut stdout = io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            let _ = stdout.write_all(b"\n");
            Ok(())
        }
    }
}

fn load_instance(path: &Path, flags: &ModeFlags) -> Result<Instance, CliError> {
    let mut inst = Instance::from_json(&read(path)?)?;
    if let Some(m) = flags.mode {
        inst.mode = match m {
            Mode::Full => CostMode::Full,
            Mode::Transmission => CostMode::Transmission,
        };
    }
    if flags.colors {
        if inst.num_colors() == 0 {
            return Err(CliError::Usage(
                "--colors needs reflector colors in the instance".into(),
            ));
        }
        inst.colors_enabled = true;
    }
    if flags.bandwidth {
        inst.bandwidth_enabled = true;
    }
    Ok(inst)
}

fn rounding_config(inst: &Instance, run: &RunFlags, multiplier: Option<f64>) -> RoundingConfig {
    let mut cfg = match multiplier {
        Some(m) => RoundingConfig::new(m, run.seed),
        None => RoundingConfig::theoretical(inst, run.seed),
    };
    cfg.max_retries = run.max_retries;
    cfg
}

fn budget(run: &RunFlags) -> TimeBudget {
    match run.time_budget_secs {
        Some(s) => TimeBudget::seconds(s),
        None => TimeBudget::unlimited(),
    }
}

fn out_path(run: &RunFlags, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&run.out_dir).map_err(|source| CliError::Io {
        path: run.out_dir.clone(),
        source,
    })?;
    Ok(run.out_dir.join(name))
}

/// Profile and cost ceiling an Approx run is audited against.
fn approx_profile(run: &ApproxRun) -> GuaranteeProfile {
    match (&run.gap, &run.color) {
        (_, Some(c)) => GuaranteeProfile::color().with_cost_bound(c.audit.cost_bound),
        (Some(g), None) => GuaranteeProfile::approx().with_cost_bound(2.0 * g.audit.semi_cost),
        (None, None) => GuaranteeProfile::approx(),
    }
}

struct Solved {
    pathset: PathSet,
    export: PathSetExport,
    report: AuditReport,
    lp_bound: f64,
    attempts: u32,
    wall_ms: f64,
    timed_out: bool,
}

/// `warm` seeds the exact solver with a routing known to be feasible.
fn solve_with(
    inst: &Instance,
    alg: Alg,
    run: &RunFlags,
    warm: Option<&PathSet>,
) -> Result<Solved, CliError> {
    match alg {
        Alg::Approx => {
            let cfg = rounding_config(inst, run, run.multiplier);
            let r = run_approx(inst, &cfg)?;
            let profile = approx_profile(&r);
            let report = audit(inst, &r.pathset, profile)?;
            let mut export = r.pathset.to_export(inst);
            export.audit = r.gap.as_ref().map(|g| to_value(&g.audit));
            export.color_audit = r.color.as_ref().map(|c| to_value(&c.audit));
            Ok(Solved {
                pathset: r.pathset.clone(),
                export,
                report,
                lp_bound: r.lp_bound,
                attempts: r.attempts,
                wall_ms: r.wall_ms,
                timed_out: false,
            })
        }
        Alg::Hack | Alg::Ip => {
            let r = if alg == Alg::Hack {
                run_hack(inst, budget(run))?
            } else {
                run_ip(inst, budget(run), warm)?
            };
            let report = audit(inst, &r.pathset, GuaranteeProfile::exact())?;
            Ok(Solved {
                export: r.pathset.to_export(inst),
                pathset: r.pathset,
                report,
                lp_bound: r.lp_bound,
                attempts: 1,
                wall_ms: r.wall_ms,
                timed_out: matches!(r.solution.status, IpStatus::Timeout { .. }),
            })
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("audit types serialize")
}

fn cmd_solve(path: &Path, alg: Alg, run: &RunFlags) -> Result<u8, CliError> {
    let inst = load_instance(path, &run.mode)?;
    let s = solve_with(&inst, alg, run, None)?;
    write(
        &out_path(run, "solution.json")?,
        &serde_json::to_string_pretty(&s.export)?,
    )?;
    write(
        &out_path(run, "audit.json")?,
        &serde_json::to_string_pretty(&s.report)?,
    )?;
    let c = &s.report.cost;
    println!(
        "{} cost={:.6} (reflector={:.6} first_hop={:.6} second_hop={:.6}) lp_bound={:.6} \
         min_weight_ratio={:.4} max_capacity_ratio={:.4} attempts={} wall_ms={:.1} audit={}",
        alg.name(),
        c.total,
        c.reflector,
        c.first_hop,
        c.second_hop,
        s.lp_bound,
        s.report.min_weight_ratio,
        s.report.max_capacity_ratio,
        s.attempts,
        s.wall_ms,
        if s.report.pass { "pass" } else { "fail" }
    );
    for f in &s.report.failures {
        eprintln!("audit: {f}");
    }
    Ok(if s.report.pass { 0 } else { EXIT_AUDIT })
}

fn csv_writer(extra: &[&str]) -> csv::Writer<io::Stdout> {
    println!("# schema {CSV_SCHEMA}");
    let mut w = csv::Writer::from_writer(io::stdout());
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    header.extend_from_slice(extra);
    w.write_record(&header).expect("stdout");
    w
}

fn fmt_num(x: f64) -> String {
    format!("{x:.6}")
}

fn multiplier_label(run: &RunFlags, alg: Alg) -> String {
    match (alg, run.multiplier) {
        (Alg::Approx, Some(m)) => fmt_num(m),
        (Alg::Approx, None) => "theory".into(),
        _ => String::new(),
    }
}

fn cmd_compare(path: &Path, algs: &[Alg], run: &RunFlags) -> Result<u8, CliError> {
    let inst = load_instance(path, &run.mode)?;
    let mut w = csv_writer(&[]);
    let mut costs: Vec<(Alg, Option<f64>)> = Vec::new();
    let mut fixing_infeasible = false;
    let mut hack_plan: Option<PathSet> = None;
    for &alg in algs {
        let label = multiplier_label(run, alg);
        let seed = if alg == Alg::Approx {
            run.seed.to_string()
        } else {
            String::new()
        };
        let row = match solve_with(&inst, alg, run, hack_plan.as_ref()) {
            Ok(s) => {
                if alg == Alg::Hack {
                    hack_plan = Some(s.pathset.clone());
                }
                let cost = s.report.cost.total;
                let status = if !s.report.pass {
                    "audit-fail"
                } else if s.timed_out {
                    "timeout"
                } else {
                    "ok"
                };
                costs.push((alg, (status == "ok").then_some(cost)));
                vec![
                    alg.name().to_string(),
                    label,
                    seed,
                    fmt_num(cost),
                    fmt_num(s.lp_bound),
                    fmt_num(ratio(cost, s.lp_bound)),
                    s.attempts.to_string(),
                    format!("{:.1}", s.wall_ms),
                    status.to_string(),
                ]
            }
            Err(e) => {
                let status = match &e {
                    CliError::Pipeline(PipelineError::Lp(LpError::Timeout { .. })) => "timeout",
                    CliError::Pipeline(PipelineError::Lp(LpError::Infeasible(
                        Infeasibility::FixedResidual { .. },
                    ))) => {
                        fixing_infeasible = true;
                        "fixing-infeasible"
                    }
                    e if e.exit_code() == EXIT_INFEASIBLE => "infeasible",
                    CliError::Pipeline(PipelineError::Exhausted { .. }) => "exhausted",
                    _ => "error",
                };
                eprintln!("{}: {e}", alg.name());
                costs.push((alg, None));
                vec![
                    alg.name().to_string(),
                    label,
                    seed,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    status.to_string(),
                ]
            }
        };
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })?;
    check_ordering(&costs, fixing_infeasible);
    Ok(0)
}

fn ratio(cost: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        cost / bound
    } else if cost > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Warns when completed costs break `ip <= hack <= approx`.
fn check_ordering(costs: &[(Alg, Option<f64>)], fixing_infeasible: bool) {
    let get = |a: Alg| costs.iter().find(|c| c.0 == a).and_then(|c| c.1);
    let chain: Vec<(Alg, f64)> = [Alg::Ip, Alg::Hack, Alg::Approx]
        .into_iter()
        .filter_map(|a| get(a).map(|c| (a, c)))
        .collect();
    for pair in chain.windows(2) {
        let (a, ca) = pair[0];
        let (b, cb) = pair[1];
        if ca > cb + 1e-6 * cb.abs().max(1.0) {
            eprintln!(
                "warning: cost ordering broken: {} {ca:.6} > {} {cb:.6}",
                a.name(),
                b.name()
            );
        }
    }
    if fixing_infeasible {
        eprintln!("warning: hack fixing was infeasible; ordering check skips it");
    }
}

fn cmd_sweep(
    path: &Path,
    multipliers: &[f64],
    seeds: &[u64],
    run: &RunFlags,
) -> Result<u8, CliError> {
    let inst = load_instance(path, &run.mode)?;
    let model = build_model(&inst, ModeOptions::from_instance(&inst))?;
    let frac = solve_lp(&model)?;
    let mut w = csv_writer(&["violations", "stable"]);
    for &m in multipliers {
        let mut rows = Vec::with_capacity(seeds.len());
        let mut solutions: Vec<Option<String>> = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = RoundingConfig::new(m, seed);
            cfg.max_retries = run.max_retries;
            let start = std::time::Instant::now();
            let res = approx_from_lp(&inst, &model, &frac, &cfg);
            let wall = start.elapsed().as_secs_f64() * 1e3;
            let mut row = vec!["approx".to_string(), fmt_num(m), seed.to_string()];
            match res {
                Ok(r) => {
                    let report = audit(&inst, &r.pathset, approx_profile(&r))?;
                    let cost = report.cost.total;
                    row.extend([
                        fmt_num(cost),
                        fmt_num(frac.objective),
                        fmt_num(ratio(cost, frac.objective)),
                        r.attempts.to_string(),
                        format!("{wall:.1}"),
                        if report.pass { "ok" } else { "audit-fail" }.to_string(),
                        r.first_violations.count().to_string(),
                    ]);
                    solutions.push(Some(serde_json::to_string(&r.pathset.to_export(&inst))?));
                }
                Err(e) => {
                    let (status, attempts) = match &e {
                        PipelineError::Exhausted { attempts, .. } => {
                            ("exhausted", attempts.to_string())
                        }
                        PipelineError::Rounding(RoundingError::InvalidConfig(_)) => {
                            ("invalid", String::new())
                        }
                        _ => ("error", String::new()),
                    };
                    eprintln!("M={m} seed={seed}: {e}");
                    row.extend([
                        String::new(),
                        fmt_num(frac.objective),
                        String::new(),
                        attempts,
                        format!("{wall:.1}"),
                        status.to_string(),
                        String::new(),
                    ]);
                    solutions.push(None);
                }
            }
            rows.push(row);
        }
        let stable =
            solutions.iter().all(|s| s.is_some()) && solutions.windows(2).all(|p| p[0] == p[1]);
        for mut row in rows {
            row.push((stable as u8).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    #[serde(flatten)]
    report: &'a AuditReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulated_loss: Option<Vec<f64>>,
}

fn cmd_verify(
    inst_path: &Path,
    sol_path: &Path,
    profile: Profile,
    cost_bound: Option<f64>,
    packets: u64,
    seed: u64,
    flags: &ModeFlags,
) -> Result<u8, CliError> {
    let inst = load_instance(inst_path, flags)?;
    let export: PathSetExport = serde_json::from_str(&read(sol_path)?)?;
    let ps = PathSet::from_export(&inst, &export)?;
    let mut prof = match profile {
        Profile::Exact => GuaranteeProfile::exact(),
        Profile::Approx => GuaranteeProfile::approx(),
        Profile::Color => GuaranteeProfile::color(),
    };
    if let Some(b) = cost_bound {
        prof = prof.with_cost_bound(b);
    }
    let report = audit(&inst, &ps, prof)?;
    let simulated_loss = (packets > 0).then(|| simulate_all(&inst, &ps, packets, seed));
    let out = VerifyOutput {
        report: &report,
        simulated_loss,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if report.pass { 0 } else { EXIT_AUDIT })
}
