//! Rounding under per-(sink, color) copy limits.
//!
//! The semi-integral flow on the GAP network is split into paths
//! `S -> i -> (i, j) -> box -> T`. Paths costing more than four times the
//! route cost of the draw are dropped, the rest are scaled by 4, and the
//! resulting system (edge capacities, one row per box, color rows and a cost
//! row) is rounded coordinatewise so that no row grows by `t = 9` or more.
//! The box rows carry coefficient -9, so each box keeps at least one path.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::flow::decompose;
use crate::gapflow::{build_boxes, sink_weights, GapError, GapFlowGraph};
use crate::lp::{LpModel, Provenance, VarKind};
use crate::model::Instance;
use crate::rounding::SemiIntegralSolution;
use crate::solution::PathSet;

/// Column-sum bound of the rounding system.
pub const KARP_T: f64 = 9.0;
/// Copies a sink may receive from one color after rounding.
pub const COLOR_COPY_BOUND: usize = 13;
/// Cost factor of the colored pipeline.
pub const COLOR_COST_FACTOR: f64 = 13.0;

const DECOMP_EPS: f64 = 1e-12;
const DECOMP_RESIDUAL: f64 = 1e-9;
const MASS_TOL: f64 = 1e-9;
/// Rows within this of the bound are held fixed during rounding, so the
/// final increase of every row stays below `t - SAFE_MARGIN`.
const SAFE_MARGIN: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-10;
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error("path decomposition left residual flow {0:.3e}")]
    Decomposition(f64),
    #[error("box {gap_box} keeps only {mass:.6} < 1/4 of its mass after filtering")]
    FilteredBox { gap_box: usize, mass: f64 },
    #[error("column {column} has {side} sum {sum:.6} beyond t = {t}")]
    ColumnSum {
        column: usize,
        side: &'static str,
        sum: f64,
        t: f64,
    },
    #[error("rounding contract violated: {0}")]
    Contract(String),
    #[error("colored routing violates its guarantees: {}", violations.join("; "))]
    Audit {
        violations: Vec<String>,
        audit: Box<ColorAudit>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathVar {
    /// Edge ids of the GAP network, from `S` to `T`.
    pub edges: Vec<usize>,
    pub reflector: usize,
    pub sink: usize,
    pub pair: usize,
    pub gap_box: usize,
    /// Route cost of the pair.
    pub cost: f64,
    pub color: Option<u32>,
    /// Fractional flow on the path.
    pub value: f64,
}

/// Splits an edge flow of the GAP network into box paths.
pub fn enumerate_paths(g: &GapFlowGraph, flow: &[f64]) -> Result<Vec<PathVar>, ColorError> {
    let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v, _)| (u, v)).collect();
    let d = decompose(
        g.network.num_nodes(),
        &edges,
        flow,
        g.source,
        g.terminal,
        DECOMP_EPS,
    );
    if d.residual > DECOMP_RESIDUAL {
        return Err(ColorError::Decomposition(d.residual));
    }
    let by_edge: HashMap<usize, usize> = g
        .box_edges
        .iter()
        .enumerate()
        .map(|(n, be)| (be.edge, n))
        .collect();
    Ok(d.paths
        .into_iter()
        .map(|p| {
            let be = &g.box_edges[p
                .edges
                .iter()
                .find_map(|e| by_edge.get(e))
                .copied()
                .expect("every S-T path crosses a box edge")];
            let pair = &g.pairs[be.pair];
            PathVar {
                edges: p.edges,
                reflector: pair.reflector,
                sink: pair.sink,
                pair: be.pair,
                gap_box: be.gap_box,
                cost: be.cost,
                color: None,
                value: p.amount,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledPaths {
    pub kept: Vec<PathVar>,
    /// `min(4 * value, 1)` per kept path.
    pub scaled: Vec<f64>,
    pub removed: usize,
    /// Smallest kept mass over boxes (at least 1/4).
    pub min_box_mass: f64,
    /// The cost yardstick `C`.
    pub budget: f64,
}

/// Drops paths costing more than `4 C` and scales the rest by 4, capped at
/// 1 so the rounded values are 0/1.
pub fn filter_and_scale(
    paths: Vec<PathVar>,
    num_boxes: usize,
    budget: f64,
) -> Result<ScaledPaths, ColorError> {
    let limit = 4.0 * budget * (1.0 + 1e-12) + 1e-12;
    let total = paths.len();
    let kept: Vec<PathVar> = paths.into_iter().filter(|p| p.cost <= limit).collect();
    let mut mass = vec![0.0; num_boxes];
    for p in &kept {
        mass[p.gap_box] += p.value;
    }
    let mut min_box_mass = f64::INFINITY;
    for (b, &m) in mass.iter().enumerate() {
        if m < 0.25 - MASS_TOL {
            return Err(ColorError::FilteredBox {
                gap_box: b,
                mass: m,
            });
        }
        min_box_mass = min_box_mass.min(m);
    }
    let scaled = kept.iter().map(|p| (4.0 * p.value).min(1.0)).collect();
    Ok(ScaledPaths {
        removed: total - kept.len(),
        kept,
        scaled,
        min_box_mass,
        budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemRowKind {
    Capacity { edge: usize },
    Box { gap_box: usize },
    Color { sink: usize, color: u32 },
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemRow {
    pub kind: SystemRowKind,
    pub coeffs: Vec<(usize, f64)>,
    /// Right-hand side of the `<=` row the scaled values satisfy.
    pub rhs: f64,
}

/// `A z` together with the bound `t` on column sums.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundingSystem {
    pub rows: Vec<SystemRow>,
    pub z: Vec<f64>,
    pub t: f64,
}

impl RoundingSystem {
    /// Capacity rows on every used edge (`4 u_e`), box rows at -9, a row per
    /// (sink, color) (`4`) and the cost row (`4`, only when `C > 0`).
    pub fn build(g: &GapFlowGraph, sp: &ScaledPaths) -> Self {
        let caps = g.edges();
        let mut by_edge: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        let mut by_box: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        let mut by_color: BTreeMap<(usize, u32), Vec<(usize, f64)>> = BTreeMap::new();
        let mut cost = Vec::new();
        for (p, path) in sp.kept.iter().enumerate() {
            for &e in &path.edges {
                by_edge.entry(e).or_default().push((p, 1.0));
            }
            by_box.entry(path.gap_box).or_default().push((p, -KARP_T));
            if let Some(c) = path.color {
                by_color.entry((path.sink, c)).or_default().push((p, 1.0));
            }
            if sp.budget > 0.0 && path.cost > 0.0 {
                cost.push((p, path.cost / sp.budget));
            }
        }
        let mut rows: Vec<SystemRow> = by_edge
            .into_iter()
            .map(|(edge, coeffs)| SystemRow {
                kind: SystemRowKind::Capacity { edge },
                coeffs,
                rhs: 4.0 * caps[edge].2,
            })
            .collect();
        rows.extend(by_box.into_iter().map(|(gap_box, coeffs)| SystemRow {
            kind: SystemRowKind::Box { gap_box },
            coeffs,
            rhs: -KARP_T,
        }));
        rows.extend(
            by_color
                .into_iter()
                .map(|((sink, color), coeffs)| SystemRow {
                    kind: SystemRowKind::Color { sink, color },
                    coeffs,
                    rhs: 4.0,
                }),
        );
        if !cost.is_empty() {
            rows.push(SystemRow {
                kind: SystemRowKind::Cost,
                coeffs: cost,
                rhs: 4.0,
            });
        }
        RoundingSystem {
            rows,
            z: sp.scaled.clone(),
            t: KARP_T,
        }
    }

    pub fn row_values(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(p, a)| a * x[p]).sum())
            .collect()
    }

    /// Positive and negative column sums must stay within `t`.
    pub fn validate_columns(&self) -> Result<(), ColorError> {
        let mut pos = vec![0.0; self.z.len()];
        let mut neg = vec![0.0; self.z.len()];
        for r in &self.rows {
            for &(p, a) in &r.coeffs {
                if a > 0.0 {
                    pos[p] += a;
                } else {
                    neg[p] += a;
                }
            }
        }
        for p in 0..self.z.len() {
            if pos[p] > self.t + 1e-9 {
                return Err(ColorError::ColumnSum {
                    column: p,
                    side: "positive",
                    sum: pos[p],
                    t: self.t,
                });
            }
            if neg[p] < -self.t - 1e-9 {
                return Err(ColorError::ColumnSum {
                    column: p,
                    side: "negative",
                    sum: neg[p],
                    t: self.t,
                });
            }
        }
        Ok(())
    }
}

/// Evidence that a rounding meets the contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KarpCertificate {
    pub t: f64,
    /// Every coordinate went to its floor or its ceiling.
    pub floor_ceil: bool,
    /// Largest `(A z_rounded - A z)_r` over rows.
    pub max_increase: f64,
    pub rows: usize,
    pub columns: usize,
    /// Number of moves along kernel directions.
    pub steps: usize,
    /// Times no kernel direction existed and a row had to be released.
    pub released_rows: usize,
}

impl KarpCertificate {
    pub fn holds(&self) -> bool {
        self.floor_ceil && self.max_increase < self.t - 1e-9
    }
}

/// Null-space vector of `m` (rows over `cols` columns), if one exists.
fn kernel_vector(mut m: Vec<Vec<f64>>, cols: usize) -> Option<Vec<f64>> {
    let mut pivots = Vec::new();
    let mut row = 0;
    for c in 0..cols {
        if row == m.len() {
            break;
        }
        let (best, val) = (row..m.len())
            .map(|r| (r, m[r][c].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= PIVOT_TOL {
            continue;
        }
        m.swap(row, best);
        let inv = 1.0 / m[row][c];
        for v in m[row].iter_mut() {
            *v *= inv;
        }
        let pivot_row = m[row].clone();
        for (r, mr) in m.iter_mut().enumerate() {
            if r != row && mr[c] != 0.0 {
                let f = mr[c];
                for (v, pv) in mr.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        pivots.push(c);
        row += 1;
    }
    let free = (0..cols).find(|c| !pivots.contains(c))?;
    let mut d = vec![0.0; cols];
    d[free] = 1.0;
    for (r, &c) in pivots.iter().enumerate() {
        d[c] = -m[r][free];
    }
    Some(d)
}

/// Rounds `sys.z` to integers so that every coordinate goes to its floor or
/// ceiling and no row value increases by `t` or more.
///
/// A row is held fixed while its current increase plus the most it could
/// still gain from the fractional coordinates reaches `t`; the values move
/// along a null-space direction of the held rows until a coordinate becomes
/// integral. Released rows can never reach `t` afterwards. There are at most
/// as many held rows as fractional coordinates, because each coordinate
/// contributes at most `t` to the total potential gain.
pub fn karp_round(sys: &RoundingSystem) -> Result<(Vec<f64>, KarpCertificate), ColorError> {
    sys.validate_columns()?;
    let t = sys.t;
    let base = sys.row_values(&sys.z);
    let mut x: Vec<f64> = sys.z.clone();
    let is_int = |v: f64| (v - v.round()).abs() <= SNAP_TOL;
    for v in x.iter_mut() {
        if is_int(*v) {
            *v = v.round();
        }
    }
    let cols_of_row: Vec<&[(usize, f64)]> = sys.rows.iter().map(|r| r.coeffs.as_slice()).collect();
    let mut released = vec![false; sys.rows.len()];
    let mut steps = 0;
    let mut released_rows = 0;
    loop {
        let floating: Vec<usize> = (0..x.len()).filter(|&p| !is_int(x[p])).collect();
        if floating.is_empty() {
            break;
        }
        let pos: HashMap<usize, usize> =
            floating.iter().enumerate().map(|(a, &p)| (p, a)).collect();
        let current = sys.row_values(&x);
        let mut held: Vec<(usize, f64)> = Vec::new();
        for (r, coeffs) in cols_of_row.iter().enumerate() {
            if released[r] {
                continue;
            }
            let mut gain = 0.0;
            for &(p, a) in coeffs.iter() {
                if pos.contains_key(&p) {
                    let fl = x[p].floor();
                    gain += if a > 0.0 {
                        a * (fl + 1.0 - x[p])
                    } else {
                        -a * (x[p] - fl)
                    };
                }
            }
            let slack_used = current[r] - base[r] + gain;
            if slack_used >= t - SAFE_MARGIN {
                held.push((r, slack_used));
            } else {
                released[r] = true;
            }
        }
        let matrix = |held: &[(usize, f64)]| -> Vec<Vec<f64>> {
            held.iter()
                .map(|&(r, _)| {
                    let mut row = vec![0.0; floating.len()];
                    for &(p, a) in cols_of_row[r] {
                        if let Some(&c) = pos.get(&p) {
                            row[c] += a;
                        }
                    }
                    row
                })
                .collect()
        };
        let d = loop {
            if let Some(d) = kernel_vector(matrix(&held), floating.len()) {
                break d;
            }
            // Degenerate square case: release the row with the least
            // potential gain. The post-hoc check decides whether it held.
            let (k, _) = held
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .expect("a full-rank system has rows");
            let (r, _) = held.remove(k);
            released[r] = true;
            released_rows += 1;
        };
        let mut step = f64::INFINITY;
        let mut hit = floating[0];
        for (c, &p) in floating.iter().enumerate() {
            let room = if d[c] > 0.0 {
                (x[p].floor() + 1.0 - x[p]) / d[c]
            } else if d[c] < 0.0 {
                (x[p] - x[p].floor()) / -d[c]
            } else {
                f64::INFINITY
            };
            if room < step {
                step = room;
                hit = p;
            }
        }
        for (c, &p) in floating.iter().enumerate() {
            x[p] += step * d[c];
        }
        x[hit] = x[hit].round();
        for &p in &floating {
            if is_int(x[p]) {
                x[p] = x[p].round();
            }
        }
        steps += 1;
    }

    let after = sys.row_values(&x);
    let max_increase = after
        .iter()
        .zip(&base)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let floor_ceil = x
        .iter()
        .zip(&sys.z)
        .all(|(&r, &z)| r == z.floor() || r == z.ceil() || (r - z).abs() <= SNAP_TOL);
    let cert = KarpCertificate {
        t,
        floor_ceil,
        max_increase: if sys.rows.is_empty() {
            0.0
        } else {
            max_increase
        },
        rows: sys.rows.len(),
        columns: x.len(),
        steps,
        released_rows,
    };
    if !cert.holds() {
        return Err(ColorError::Contract(format!(
            "floor/ceil {} , max row increase {:.6} vs t = {t}",
            cert.floor_ceil, cert.max_increase
        )));
    }
    Ok((x, cert))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorCopies {
    pub sink: usize,
    pub color: u32,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorAudit {
    pub certificate: KarpCertificate,
    pub paths_total: usize,
    pub paths_kept: usize,
    pub copies: Vec<ColorCopies>,
    pub max_copies: usize,
    /// Boxes without a chosen path.
    pub uncovered_boxes: Vec<usize>,
    /// Sinks that need weight but got no route.
    pub unserved: Vec<String>,
    pub min_weight_ratio: f64,
    /// Route part of the draw's cost, the yardstick `C` of the filter.
    pub route_budget: f64,
    pub route_cost: f64,
    pub semi_cost: f64,
    pub total_cost: f64,
    /// `13` times the draw's cost.
    pub cost_bound: f64,
}

/// Routes every sink through the pairs of its chosen paths and audits
/// coverage, copies per color and cost.
#[allow(clippy::too_many_arguments)]
pub fn extract_colored_solution(
    inst: &Instance,
    model: &LpModel,
    sp: &ScaledPaths,
    rounded: &[f64],
    certificate: KarpCertificate,
    num_boxes: usize,
    paths_total: usize,
    semi: &SemiIntegralSolution,
) -> Result<(PathSet, ColorAudit), ColorError> {
    let mut routes = vec![Vec::new(); inst.num_sinks()];
    let mut covered = vec![false; num_boxes];
    for (p, path) in sp.kept.iter().enumerate() {
        if rounded[p] >= 0.5 {
            routes[path.sink].push(path.reflector);
            covered[path.gap_box] = true;
        }
    }
    let mut pathset = PathSet::from_routes(inst, routes, Provenance::Approx);
    pathset.keep_open(inst, model, &semi.values);
    let mut copies: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for (j, rs) in pathset.routes.iter().enumerate() {
        for &i in rs {
            if let Some(c) = inst.reflectors[i].color {
                *copies.entry((j, c)).or_default() += 1;
            }
        }
    }
    let copies: Vec<ColorCopies> = copies
        .into_iter()
        .map(|((sink, color), copies)| ColorCopies {
            sink,
            color,
            copies,
        })
        .collect();
    let weights = sink_weights(inst, &pathset);
    let mut min_weight_ratio = f64::INFINITY;
    let mut unserved = Vec::new();
    for (j, d) in inst.sinks.iter().enumerate() {
        let need = d.weight_threshold();
        if need > 0.0 {
            min_weight_ratio = min_weight_ratio.min(weights[j] / need);
            if pathset.routes[j].is_empty() {
                unserved.push(d.id.clone());
            }
        }
    }
    let route_cost: f64 = pathset
        .routes
        .iter()
        .enumerate()
        .flat_map(|(j, rs)| rs.iter().map(move |&i| (i, j)))
        .map(|(i, j)| model.objective[model.route_var(i, j).expect("routed pair")])
        .sum();
    let total_cost = pathset.cost(inst).total;
    let audit = ColorAudit {
        certificate,
        paths_total,
        paths_kept: sp.kept.len(),
        max_copies: copies.iter().map(|c| c.copies).max().unwrap_or(0),
        copies,
        uncovered_boxes: (0..num_boxes).filter(|&b| !covered[b]).collect(),
        unserved,
        min_weight_ratio,
        route_budget: sp.budget,
        route_cost,
        semi_cost: semi.cost,
        total_cost,
        cost_bound: COLOR_COST_FACTOR * semi.cost,
    };
    let mut violations = Vec::new();
    if !audit.uncovered_boxes.is_empty() {
        violations.push(format!(
            "{} boxes lost every path",
            audit.uncovered_boxes.len()
        ));
    }
    if !audit.unserved.is_empty() {
        violations.push(format!("unserved sinks {:?}", audit.unserved));
    }
    for c in &audit.copies {
        if c.copies > COLOR_COPY_BOUND {
            violations.push(format!(
                "sink `{}` gets {} copies from color {}",
                inst.sinks[c.sink].id, c.copies, c.color
            ));
        }
    }
    if total_cost > audit.cost_bound + 1e-6 {
        violations.push(format!(
            "cost {total_cost:.6} exceeds 13 x {:.6}",
            semi.cost
        ));
    }
    if violations.is_empty() {
        Ok((pathset, audit))
    } else {
        Err(ColorError::Audit {
            violations,
            audit: Box::new(audit),
        })
    }
}

/// Everything the colored rounding produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorOutcome {
    pub pathset: PathSet,
    pub audit: ColorAudit,
    pub system: RoundingSystem,
    pub rounded: Vec<f64>,
}

/// Route part of the draw's objective.
pub fn route_cost_of(model: &LpModel, semi: &SemiIntegralSolution) -> f64 {
    model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, VarKind::Route { .. }))
        .map(|(v, _)| model.objective[v] * semi.values[v])
        .sum()
}

/// Boxes, path decomposition of the draw's flow, filtering, rounding and
/// extraction.
pub fn color_round(
    inst: &Instance,
    model: &LpModel,
    semi: &SemiIntegralSolution,
) -> Result<ColorOutcome, ColorError> {
    let boxes = build_boxes(inst, model, semi)?;
    let g = GapFlowGraph::build(inst, model, semi, &boxes)?;
    let flow = g.fractional_flow();
    let mut paths = enumerate_paths(&g, &flow)?;
    for p in paths.iter_mut() {
        p.color = inst.reflectors[p.reflector].color;
    }
    let total = paths.len();
    let sp = filter_and_scale(paths, g.boxes.len(), route_cost_of(model, semi))?;
    let system = RoundingSystem::build(&g, &sp);
    let (rounded, cert) = karp_round(&system)?;
    let (pathset, audit) =
        extract_colored_solution(inst, model, &sp, &rounded, cert, g.boxes.len(), total, semi)?;
    Ok(ColorOutcome {
        pathset,
        audit,
        system,
        rounded,
    })
}
