//! The routing program: variables, constraint rows, solvers and export.
//!
//! Variables are `z_i` (reflector in use), `y_k_i` (stream `k` fed to
//! reflector `i`) and `x_k_i_j` (sink `j` receives stream `k` through `i`).
//! Only triples whose two links exist and whose path carries positive weight
//! get an `x` variable, and only feeds with at least one such triple get a `y`.

mod branch;
pub mod simplex;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CostMode, Instance, ModelError, WEIGHT_TOL};
pub use branch::{approx_hack, solve_ip, TimeBudget};
pub use simplex::{LinearProgram, Sense, SimplexError};

/// Primal feasibility tolerance for LP solutions.
pub const FEAS_TOL: f64 = 1e-7;
/// Distance from {0, 1} under which a value counts as integral.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    /// Even using every admissible path at full weight the sink falls short.
    SinkUnreachable {
        sink: String,
        max_weight: f64,
        threshold: f64,
    },
    /// The relaxation has no feasible point; `rows` still carried phase-one
    /// residual when the solver stopped.
    Relaxation { residual: f64, rows: Vec<String> },
    /// The relaxation is feasible but branch-and-bound exhausted every node.
    Integer { nodes: usize },
    /// The variables fixed by the LP solution leave no integral completion.
    FixedResidual { fixed: usize },
}

impl std::fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Infeasibility::SinkUnreachable {
                sink,
                max_weight,
                threshold,
            } => write!(
                f,
                "sink `{sink}` can collect at most weight {max_weight:.6} but needs {threshold:.6}"
            ),
            Infeasibility::Relaxation { residual, rows } => {
                write!(
                    f,
                    "LP relaxation infeasible (residual {residual:.3e}) at rows {rows:?}"
                )
            }
            Infeasibility::Integer { nodes } => {
                write!(
                    f,
                    "no integral solution after {nodes} branch-and-bound nodes"
                )
            }
            Infeasibility::FixedResidual { fixed } => write!(
                f,
                "fixing {fixed} integral LP variables leaves an infeasible integer program"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("infeasible: {0}")]
    Infeasible(Infeasibility),
    #[error("simplex failure: {0}")]
    Solver(SimplexError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "budget exhausted after {nodes} nodes without an integral solution (bound {bound:.6})"
    )]
    Timeout { bound: f64, nodes: usize },
    #[error("{0}")]
    Unsupported(String),
}

impl LpError {
    pub fn certificate(&self) -> Option<&Infeasibility> {
        match self {
            LpError::Infeasible(c) => Some(c),
            _ => None,
        }
    }
}

/// Which variant of the program to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModeOptions {
    pub mode: CostMode,
    pub colors: bool,
    pub bandwidth: bool,
}

impl ModeOptions {
    pub fn from_instance(inst: &Instance) -> Self {
        ModeOptions {
            mode: inst.mode,
            colors: inst.colors_enabled,
            bandwidth: inst.bandwidth_enabled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Reflector {
        reflector: usize,
    },
    Feed {
        stream: usize,
        reflector: usize,
    },
    Route {
        stream: usize,
        reflector: usize,
        sink: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// `y_k_i <= z_i`
    ReflectorUse,
    /// `x_k_i_j <= y_k_i`
    FeedUse,
    /// `sum x_i <= F_i z_i`
    Fanout,
    /// `sum_j x_k_i_j <= F_i y_k_i`
    CuttingPlane,
    /// `sum_i w_ij x_k_i_j >= W_j`
    Weight,
    /// `sum_k B_k sum_j x <= F'_i z_i`
    Bandwidth,
    /// `B_k sum_j x_k_i_j <= F'_i y_k_i`
    BandwidthFeed,
    /// `sum_{i in color} x_k_i_j <= 1`
    Color,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub kind: RowKind,
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LpModel {
    pub options: ModeOptions,
    pub vars: Vec<VarKind>,
    pub names: Vec<String>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    feed_index: HashMap<(usize, usize), usize>,
    route_index: HashMap<(usize, usize), usize>,
    /// Index of the weight row of each sink.
    weight_rows: Vec<usize>,
    num_reflectors: usize,
}

impl LpModel {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// `z_i` lives at index `i`.
    pub fn reflector_var(&self, reflector: usize) -> usize {
        reflector
    }

    pub fn feed_var(&self, stream: usize, reflector: usize) -> Option<usize> {
        self.feed_index.get(&(stream, reflector)).copied()
    }

    /// `x` variable routing `sink`'s stream through `reflector`.
    pub fn route_var(&self, reflector: usize, sink: usize) -> Option<usize> {
        self.route_index.get(&(reflector, sink)).copied()
    }

    pub fn num_reflectors(&self) -> usize {
        self.num_reflectors
    }

    pub fn weight_row(&self, sink: usize) -> &Row {
        &self.rows[self.weight_rows[sink]]
    }

    pub fn rows_of(&self, kind: RowKind) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    pub fn feed_vars(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.vars.iter().enumerate().filter_map(|(v, k)| match *k {
            VarKind::Feed { stream, reflector } => Some((v, stream, reflector)),
            _ => None,
        })
    }

    /// `(var, stream, reflector, sink)` for every route variable, in index order.
    pub fn route_vars(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.vars.iter().enumerate().filter_map(|(v, k)| match *k {
            VarKind::Route {
                stream,
                reflector,
                sink,
            } => Some((v, stream, reflector, sink)),
            _ => None,
        })
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        simplex::max_violation(&self.to_program(), x)
    }

    pub fn to_program(&self) -> LinearProgram {
        LinearProgram {
            objective: self.objective.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| (r.coeffs.clone(), r.sense, r.rhs))
                .collect(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    /// CPLEX-style `.lp` text. With `integer` set, every variable is declared
    /// binary.
    pub fn to_lp_format(&self, integer: bool) -> String {
        fn terms(out: &mut String, coeffs: &[(usize, f64)], names: &[String]) {
            if coeffs.is_empty() {
                out.push_str(" 0 ");
                out.push_str(&names[0]);
                return;
            }
            for (n, &(v, a)) in coeffs.iter().enumerate() {
                let sign = if a < 0.0 {
                    "-"
                } else if n == 0 {
                    ""
                } else {
                    "+"
                };
                let _ = write!(out, " {sign} {} {}", a.abs(), names[v]);
            }
        }
        let mut out = String::new();
        out.push_str("\\ overlay routing program\nMinimize\n obj:");
        let obj: Vec<(usize, f64)> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, c)| (v, *c))
            .collect();
        terms(&mut out, &obj, &self.names);
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            let _ = write!(out, " {}:", row.name);
            terms(&mut out, &row.coeffs, &self.names);
            let _ = writeln!(out, " {} {}", row.sense.symbol(), row.rhs);
        }
        out.push_str("Bounds\n");
        for (v, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, " {} <= {} <= {}", self.lower[v], name, self.upper[v]);
        }
        if integer {
            out.push_str("Binaries\n");
            for name in &self.names {
                let _ = writeln!(out, " {name}");
            }
        }
        out.push_str("End\n");
        out
    }

    /// Values keyed by variable name, for JSON export.
    pub fn named_values(&self, x: &[f64]) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(x.iter().copied()).collect()
    }
}

/// Builds the program for a normalized instance.
pub fn build_model(inst: &Instance, opts: ModeOptions) -> Result<LpModel, LpError> {
    let (nr, nd) = (inst.num_reflectors(), inst.num_sinks());
    if opts.bandwidth {
        if let Some(s) = inst.sources.iter().find(|s| s.bitrate.is_none()) {
            return Err(LpError::Unsupported(format!(
                "bandwidth mode needs a bitrate on every source; `{}` has none",
                s.id
            )));
        }
    }
    let weights = inst.weights();
    let transmission = opts.mode == CostMode::Transmission;

    let mut vars = Vec::new();
    let mut names = Vec::new();
    let mut objective = Vec::new();
    for (i, r) in inst.reflectors.iter().enumerate() {
        vars.push(VarKind::Reflector { reflector: i });
        names.push(format!("z_{i}"));
        objective.push(if transmission { 0.0 } else { r.cost });
    }

    // Admissible triples, grouped by (stream, reflector) in a fixed order.
    let mut routes_by_feed: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for i in 0..nr {
        for j in 0..nd {
            if let Some(w) = weights.get(i, j).filter(|&w| w > 0.0) {
                routes_by_feed
                    .entry((inst.sinks[j].stream, i))
                    .or_default()
                    .push((j, w));
            }
        }
    }

    let mut feed_index = HashMap::new();
    for &(k, i) in routes_by_feed.keys() {
        feed_index.insert((k, i), vars.len());
        vars.push(VarKind::Feed {
            stream: k,
            reflector: i,
        });
        names.push(format!("y_{k}_{i}"));
        let first_hop = inst.src_link(k, i).expect("admissible feed").cost;
        objective.push(if transmission { 0.0 } else { first_hop });
    }
    let mut route_index = HashMap::new();
    let mut route_weight = HashMap::new();
    for (&(k, i), sinks) in &routes_by_feed {
        for &(j, w) in sinks {
            route_index.insert((i, j), vars.len());
            route_weight.insert(vars.len(), w);
            vars.push(VarKind::Route {
                stream: k,
                reflector: i,
                sink: j,
            });
            names.push(format!("x_{k}_{i}_{j}"));
            let (a, b) = inst.path_links(i, j).expect("admissible route");
            objective.push(if transmission {
                a.cost + b.cost
            } else {
                b.cost
            });
        }
    }

    // Infeasibility pre-check, one sink at a time.
    for (j, d) in inst.sinks.iter().enumerate() {
        let need = d.weight_threshold();
        let max_weight: f64 = (0..nr)
            .filter_map(|i| route_index.get(&(i, j)).map(|v| route_weight[v]))
            .sum();
        if max_weight < need - WEIGHT_TOL {
            return Err(LpError::Infeasible(Infeasibility::SinkUnreachable {
                sink: d.id.clone(),
                max_weight,
                threshold: need,
            }));
        }
    }

    let mut rows = Vec::new();
    for (&(k, i), &y) in feed_index.iter().collect::<BTreeMap<_, _>>() {
        rows.push(Row {
            kind: RowKind::ReflectorUse,
            name: format!("use_{k}_{i}"),
            coeffs: vec![(y, 1.0), (i, -1.0)],
            sense: Sense::Le,
            rhs: 0.0,
        });
    }
    for (&(k, i), sinks) in &routes_by_feed {
        let y = feed_index[&(k, i)];
        for &(j, _) in sinks {
            rows.push(Row {
                kind: RowKind::FeedUse,
                name: format!("feed_{k}_{i}_{j}"),
                coeffs: vec![(route_index[&(i, j)], 1.0), (y, -1.0)],
                sense: Sense::Le,
                rhs: 0.0,
            });
        }
    }
    for (i, r) in inst.reflectors.iter().enumerate() {
        let feeds: Vec<(usize, usize)> = routes_by_feed
            .keys()
            .filter(|&&(_, ii)| ii == i)
            .copied()
            .collect();
        if feeds.is_empty() {
            continue;
        }
        let bw_cap = r.bandwidth.filter(|_| opts.bandwidth);
        let mut total = Vec::new();
        for &(k, _) in &feeds {
            let scale = match bw_cap {
                Some(_) => inst.sources[k].bitrate.expect("checked above"),
                None => 1.0,
            };
            let mut per_feed: Vec<(usize, f64)> = routes_by_feed[&(k, i)]
                .iter()
                .map(|&(j, _)| (route_index[&(i, j)], scale))
                .collect();
            total.extend(per_feed.iter().copied());
            let (kind, cap) = match bw_cap {
                Some(bw) => (RowKind::BandwidthFeed, bw),
                None => (RowKind::CuttingPlane, r.fanout as f64),
            };
            per_feed.push((feed_index[&(k, i)], -cap));
            rows.push(Row {
                kind,
                name: format!("feedcap_{k}_{i}"),
                coeffs: per_feed,
                sense: Sense::Le,
                rhs: 0.0,
            });
        }
        let (kind, cap) = match bw_cap {
            Some(bw) => (RowKind::Bandwidth, bw),
            None => (RowKind::Fanout, r.fanout as f64),
        };
        total.sort_by_key(|&(v, _)| v);
        total.push((i, -cap));
        rows.push(Row {
            kind,
            name: format!("cap_{i}"),
            coeffs: total,
            sense: Sense::Le,
            rhs: 0.0,
        });
    }
    let mut weight_rows = Vec::with_capacity(nd);
    for (j, d) in inst.sinks.iter().enumerate() {
        let coeffs: Vec<(usize, f64)> = (0..nr)
            .filter_map(|i| route_index.get(&(i, j)).map(|&v| (v, route_weight[&v])))
            .collect();
        weight_rows.push(rows.len());
        rows.push(Row {
            kind: RowKind::Weight,
            name: format!("weight_{j}"),
            coeffs,
            sense: Sense::Ge,
            rhs: d.weight_threshold(),
        });
    }
    if opts.colors {
        for j in 0..nd {
            let mut by_color: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
            for (i, r) in inst.reflectors.iter().enumerate() {
                if let (Some(c), Some(&v)) = (r.color, route_index.get(&(i, j))) {
                    by_color.entry(c).or_default().push((v, 1.0));
                }
            }
            for (c, coeffs) in by_color {
                rows.push(Row {
                    kind: RowKind::Color,
                    name: format!("color_{c}_{j}"),
                    coeffs,
                    sense: Sense::Le,
                    rhs: 1.0,
                });
            }
        }
    }

    let nv = vars.len();
    Ok(LpModel {
        options: opts,
        vars,
        names,
        objective,
        rows,
        lower: vec![0.0; nv],
        upper: vec![1.0; nv],
        feed_index,
        route_index,
        weight_rows,
        num_reflectors: nr,
    })
}

/// Optimal solution of the relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalSolution {
    pub values: Vec<f64>,
    pub objective: f64,
}

impl FractionalSolution {
    pub fn is_integral(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.abs() < INT_TOL || (v - 1.0).abs() < INT_TOL)
    }
}

pub(crate) fn map_simplex_error(model: &LpModel, err: SimplexError) -> LpError {
    match err {
        SimplexError::Infeasible { residual, rows } => {
            LpError::Infeasible(Infeasibility::Relaxation {
                residual,
                rows: rows
                    .into_iter()
                    .map(|r| model.rows[r].name.clone())
                    .collect(),
            })
        }
        other => LpError::Solver(other),
    }
}

pub fn solve_lp(model: &LpModel) -> Result<FractionalSolution, LpError> {
    let sol = simplex::solve(&model.to_program()).map_err(|e| map_simplex_error(model, e))?;
    Ok(FractionalSolution {
        values: sol.x,
        objective: sol.objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[serde(rename = "exact-ip")]
    ExactIp,
    Approx,
    #[serde(rename = "approxhack")]
    ApproxHack,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IpStatus {
    Optimal,
    /// Budget ran out; `bound` is the best proven lower bound.
    Timeout {
        bound: f64,
    },
}

#[derive(Debug, Clone)]
pub struct IntegralSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub provenance: Provenance,
    pub status: IpStatus,
    pub nodes: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize, RawEdge, RawInstance, RawReflector, RawSink, RawSource};

    fn tiny(colors: [Option<u32>; 2]) -> Instance {
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
            reflectors: (0..2)
                .map(|i| RawReflector {
                    id: format!("r{i}"),
                    cost: 10.0 + i as f64,
                    fanout: 2,
                    bandwidth: None,
                    color: colors[i],
                })
                .collect(),
            sinks: vec![RawSink {
                id: "d".into(),
                stream: Some("s".into()),
                threshold: Some(0.05),
                demands: vec![],
            }],
            src_edges: vec![edge("s", "r0", 0.1, 1.0), edge("s", "r1", 0.1, 2.0)],
            refl_edges: vec![edge("r0", "d", 0.1, 3.0), edge("r1", "d", 0.1, 4.0)],
            mode: None,
            colors_enabled: false,
            bandwidth_enabled: false,
        })
        .unwrap()
    }

    #[test]
    fn counts_variables_and_weight_rows() {
        let m = build_model(&tiny([None, None]), ModeOptions::default()).unwrap();
        let count = |f: fn(&VarKind) -> bool| m.vars.iter().filter(|v| f(v)).count();
        assert_eq!(count(|v| matches!(v, VarKind::Reflector { .. })), 2);
        assert_eq!(count(|v| matches!(v, VarKind::Feed { .. })), 2);
        assert_eq!(count(|v| matches!(v, VarKind::Route { .. })), 2);
        assert_eq!(m.rows_of(RowKind::Weight).count(), 1);
        assert_eq!(m.rows_of(RowKind::CuttingPlane).count(), 2);
        assert_eq!(m.rows_of(RowKind::Fanout).count(), 2);
    }

    #[test]
    fn transmission_mode_charges_whole_paths() {
        let inst = tiny([None, None]);
        let m = build_model(
            &inst,
            ModeOptions {
                mode: CostMode::Transmission,
                ..Default::default()
            },
        )
        .unwrap();
        for (v, kind) in m.vars.iter().enumerate() {
            match *kind {
                VarKind::Route { reflector, .. } => {
                    let expected = [1.0 + 3.0, 2.0 + 4.0][reflector];
                    assert_eq!(m.objective[v], expected);
                }
                _ => assert_eq!(m.objective[v], 0.0),
            }
        }
    }

    #[test]
    fn color_rows_group_same_colored_reflectors() {
        let inst = tiny([Some(1), Some(1)]);
        let m = build_model(
            &inst,
            ModeOptions {
                colors: true,
                ..Default::default()
            },
        )
        .unwrap();
        let rows: Vec<_> = m.rows_of(RowKind::Color).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].coeffs.len(), 2);
        assert_eq!(rows[0].rhs, 1.0);
    }

    #[test]
    fn lp_export_lists_every_row() {
        let m = build_model(&tiny([None, None]), ModeOptions::default()).unwrap();
        let text = m.to_lp_format(true);
        assert!(text.starts_with("\\ overlay"));
        for row in &m.rows {
            assert!(text.contains(&format!(" {}:", row.name)));
        }
        assert!(text.contains("Binaries") && text.trim_end().ends_with("End"));
    }

    #[test]
    fn unreachable_sink_is_reported_before_solving() {
        let mut inst = tiny([None, None]);
        inst.sinks[0].threshold = 1e-9;
        match build_model(&inst, ModeOptions::default()) {
            Err(LpError::Infeasible(Infeasibility::SinkUnreachable { sink, .. })) => {
                assert_eq!(sink, "d")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relaxation_meets_every_row() {
        let m = build_model(&tiny([None, None]), ModeOptions::default()).unwrap();
        let frac = solve_lp(&m).unwrap();
        assert!(m.max_violation(&frac.values) < FEAS_TOL);
    }
}
