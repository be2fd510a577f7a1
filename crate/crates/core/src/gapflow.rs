//! Second rounding stage: turns the semi-integral route values into a 0/1
//! routing through a five-level flow network.
//!
//! Levels are `S`, reflectors, (reflector, sink) pairs with positive value,
//! per-sink boxes, and `T`. Each sink's route mass is poured, heaviest path
//! first, into boxes of exactly 1/2; a trailing partial box is dropped. A
//! min-cost max-flow on the network with every capacity doubled is
//! integral, so halving it gives pair values in {0, 1/2, 1}. Halves are
//! then rounded up.

use serde::Serialize;
use thiserror::Error;

use crate::flow::FlowNetwork;
use crate::lp::{LpModel, Provenance};
use crate::model::{Instance, WEIGHT_TOL};
use crate::rounding::SemiIntegralSolution;
use crate::solution::PathSet;

pub const BOX_MASS: f64 = 0.5;
const BOX_EPS: f64 = 1e-12;
const AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("sink `{sink}` has route mass {mass:.6} < 1/2 after rounding; re-round")]
    InsufficientMass { sink: String, mass: f64 },
    #[error("bandwidth rounding needs one bitrate shared by all sources")]
    HeterogeneousBitrate,
    #[error("max flow {flow} does not saturate the {boxes} boxes")]
    Unsaturated { flow: f64, boxes: usize },
    #[error("rounded routing violates its guarantees: {}", violations.join("; "))]
    Audit {
        violations: Vec<String>,
        outcome: Box<GapOutcome>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fragment {
    pub reflector: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapBox {
    pub fragments: Vec<Fragment>,
    /// Largest and smallest path weight among the fragments.
    pub w_max: f64,
    pub w_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkBoxes {
    pub sink: usize,
    /// Positive route values as `(reflector, weight, value)`, heaviest first.
    pub order: Vec<(usize, f64, f64)>,
    pub total_mass: f64,
    /// `ceil(2 * total_mass)`.
    pub box_count: usize,
    /// Boxes that survive, each holding exactly 1/2.
    pub boxes: Vec<GapBox>,
    /// Mass of the dropped partial box, if there was one.
    pub eliminated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxAssignment {
    pub sinks: Vec<SinkBoxes>,
}

impl BoxAssignment {
    pub fn num_boxes(&self) -> usize {
        self.sinks.iter().map(|s| s.boxes.len()).sum()
    }
}

/// Pours each sink's route values into 1/2-boxes in non-increasing weight
/// order (ties by reflector index). Sinks with a zero threshold need no
/// routes and get no boxes.
pub fn build_boxes(
    inst: &Instance,
    model: &LpModel,
    semi: &SemiIntegralSolution,
) -> Result<BoxAssignment, GapError> {
    let mut per_sink: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); inst.num_sinks()];
    for (v, _, i, j) in model.route_vars() {
        let x = semi.values[v];
        if x > 0.0 {
            let w = inst.path_weight(i, j).expect("route variable has a path");
            per_sink[j].push((i, w, x));
        }
    }
    let mut sinks = Vec::with_capacity(inst.num_sinks());
    for (j, mut order) in per_sink.into_iter().enumerate() {
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let total_mass: f64 = order.iter().map(|e| e.2).sum();
        let box_count = (2.0 * total_mass - BOX_EPS).ceil().max(0.0) as usize;
        if inst.sinks[j].weight_threshold() <= 0.0 {
            sinks.push(SinkBoxes {
                sink: j,
                order,
                total_mass,
                box_count,
                boxes: Vec::new(),
                eliminated: None,
            });
            continue;
        }
        if total_mass < BOX_MASS - BOX_EPS {
            return Err(GapError::InsufficientMass {
                sink: inst.sinks[j].id.clone(),
                mass: total_mass,
            });
        }
        let mut boxes = Vec::new();
        let mut current: Vec<(Fragment, f64)> = Vec::new();
        let mut room = BOX_MASS;
        let close = |frags: &mut Vec<(Fragment, f64)>| GapBox {
            w_max: frags.first().map_or(0.0, |f| f.1),
            w_min: frags.last().map_or(0.0, |f| f.1),
            fragments: frags.drain(..).map(|f| f.0).collect(),
        };
        for &(i, w, x) in &order {
            let mut left = x;
            while left > BOX_EPS {
                let take = left.min(room);
                current.push((
                    Fragment {
                        reflector: i,
                        mass: take,
                    },
                    w,
                ));
                left -= take;
                room -= take;
                if room <= BOX_EPS {
                    boxes.push(close(&mut current));
                    room = BOX_MASS;
                }
            }
        }
        let eliminated = (!current.is_empty()).then(|| current.iter().map(|f| f.0.mass).sum());
        sinks.push(SinkBoxes {
            sink: j,
            order,
            total_mass,
            box_count,
            boxes,
            eliminated,
        });
    }
    Ok(BoxAssignment { sinks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairNode {
    pub reflector: usize,
    pub sink: usize,
    pub node: usize,
    /// Edge from the reflector node into this pair.
    pub edge_in: usize,
    /// Semi-integral route value.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxNode {
    pub sink: usize,
    pub node: usize,
    /// Edge from this box to `T`.
    pub edge_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxEdge {
    pub pair: usize,
    pub gap_box: usize,
    pub edge: usize,
    /// Fragment of the pair's value assigned to the box.
    pub mass: f64,
    pub cost: f64,
}

/// The five-level network. `network` carries doubled capacities.
#[derive(Debug, Clone)]
pub struct GapFlowGraph {
    pub network: FlowNetwork,
    pub source: usize,
    pub terminal: usize,
    /// `S -> i` edge per reflector that has a pair, else `None`.
    pub reflector_edges: Vec<Option<usize>>,
    pub pairs: Vec<PairNode>,
    pub boxes: Vec<BoxNode>,
    pub box_edges: Vec<BoxEdge>,
}

/// Capacity of the `S -> i` edge in doubled units: `4 F_i`, or in bandwidth
/// mode `floor(4 F'_i / B)` for the common bitrate `B`.
pub fn scaled_reflector_cap(
    inst: &Instance,
    bandwidth: bool,
    reflector: usize,
) -> Result<i64, GapError> {
    let r = &inst.reflectors[reflector];
    match r.bandwidth.filter(|_| bandwidth) {
        Some(bw) => {
            let b = inst
                .uniform_bitrate()
                .ok_or(GapError::HeterogeneousBitrate)?;
            Ok((4.0 * bw / b + 1e-9).floor() as i64)
        }
        None => Ok(4 * r.fanout as i64),
    }
}

impl GapFlowGraph {
    pub fn build(
        inst: &Instance,
        model: &LpModel,
        semi: &SemiIntegralSolution,
        boxes: &BoxAssignment,
    ) -> Result<Self, GapError> {
        let nr = inst.num_reflectors();
        let source = 0;
        let mut nodes = 1 + nr;
        let mut pairs = Vec::new();
        let mut pair_of = std::collections::HashMap::new();
        for (v, _, i, j) in model.route_vars() {
            if semi.values[v] > 0.0 && !boxes.sinks[j].boxes.is_empty() {
                pair_of.insert((i, j), pairs.len());
                pairs.push(PairNode {
                    reflector: i,
                    sink: j,
                    node: 0,
                    edge_in: 0,
                    value: semi.values[v],
                });
            }
        }
        let box_total = boxes.num_boxes();
        let terminal = nodes + pairs.len() + box_total;
        // Node ids: S, reflectors, pairs, boxes, T.
        let mut net = FlowNetwork::new(terminal + 1);
        let mut reflector_edges = vec![None; nr];
        for (i, slot) in reflector_edges.iter_mut().enumerate() {
            if pairs.iter().any(|p| p.reflector == i) {
                let cap = scaled_reflector_cap(inst, model.options.bandwidth, i)?;
                *slot = Some(net.add_edge(source, 1 + i, cap, 0.0));
            }
        }
        for p in pairs.iter_mut() {
            p.node = nodes;
            nodes += 1;
            p.edge_in = net.add_edge(1 + p.reflector, p.node, 2, 0.0);
        }
        let mut box_nodes = Vec::with_capacity(box_total);
        let mut box_edges = Vec::new();
        for sb in &boxes.sinks {
            for b in &sb.boxes {
                let node = nodes;
                nodes += 1;
                let id = box_nodes.len();
                for f in &b.fragments {
                    let pair = pair_of[&(f.reflector, sb.sink)];
                    let v = model
                        .route_var(f.reflector, sb.sink)
                        .expect("fragment of a route variable");
                    let cost = model.objective[v];
                    let edge = net.add_edge(pairs[pair].node, node, 1, cost);
                    box_edges.push(BoxEdge {
                        pair,
                        gap_box: id,
                        edge,
                        mass: f.mass,
                        cost,
                    });
                }
                box_nodes.push(BoxNode {
                    sink: sb.sink,
                    node,
                    edge_out: usize::MAX,
                });
            }
        }
        for b in box_nodes.iter_mut() {
            b.edge_out = net.add_edge(b.node, terminal, 1, 0.0);
        }
        debug_assert_eq!(nodes, terminal);
        Ok(GapFlowGraph {
            network: net,
            source,
            terminal,
            reflector_edges,
            pairs,
            boxes: box_nodes,
            box_edges,
        })
    }

    /// `(tail, head)` per edge and its capacity in original (undoubled) units.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.network.num_edges())
            .map(|e| {
                let (u, v, cap, _) = self.network.edge(e);
                (u, v, cap as f64 / 2.0)
            })
            .collect()
    }

    /// Flow induced by the semi-integral values on the surviving boxes, in
    /// original units: each fragment on its box edge, summed upstream.
    pub fn fractional_flow(&self) -> Vec<f64> {
        let mut flow = vec![0.0; self.network.num_edges()];
        for be in &self.box_edges {
            flow[be.edge] += be.mass;
            let p = &self.pairs[be.pair];
            flow[p.edge_in] += be.mass;
            if let Some(e) = self.reflector_edges[p.reflector] {
                flow[e] += be.mass;
            }
            flow[self.boxes[be.gap_box].edge_out] += be.mass;
        }
        flow
    }
}

/// Result of the min-cost max-flow, in original units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowAssignment {
    /// Flow on every edge of the doubled network.
    pub scaled: Vec<i64>,
    pub value: f64,
    pub cost: f64,
    /// Flow through each pair node, in {0, 1/2, 1}.
    pub pair_values: Vec<f64>,
}

/// Runs the flow and checks that every box is filled.
pub fn min_cost_max_flow(g: &mut GapFlowGraph) -> Result<FlowAssignment, GapError> {
    let r = g.network.min_cost_max_flow(g.source, g.terminal);
    let value = r.value as f64 / 2.0;
    if r.value != g.boxes.len() as i64 {
        return Err(GapError::Unsaturated {
            flow: value,
            boxes: g.boxes.len(),
        });
    }
    let scaled: Vec<i64> = (0..g.network.num_edges())
        .map(|e| g.network.flow(e))
        .collect();
    let pair_values = g
        .pairs
        .iter()
        .map(|p| scaled[p.edge_in] as f64 / 2.0)
        .collect();
    Ok(FlowAssignment {
        scaled,
        value,
        cost: r.cost / 2.0,
        pair_values,
    })
}

/// Checked guarantees of the doubled routing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapAudit {
    /// Largest `used / cap` over reflectors (cap is `F_i`, or `F'_i` in
    /// bitrate units in bandwidth mode). Bound: 4.
    pub max_capacity_ratio: f64,
    /// Smallest achieved weight over threshold, among sinks that need weight.
    /// Bound: 1/4.
    pub min_weight_ratio: f64,
    /// Cost of the flow before doubling.
    pub flow_cost: f64,
    /// Route part of the final cost. Bound: twice `flow_cost`.
    pub route_cost: f64,
    pub total_cost: f64,
    /// Cost of the semi-integral draw. Bound on `total_cost`: twice this.
    pub semi_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapOutcome {
    pub pathset: PathSet,
    pub boxes: BoxAssignment,
    pub flow: FlowAssignment,
    /// `(reflector, sink, value)` before doubling.
    pub half_integral: Vec<(usize, usize, f64)>,
    pub audit: GapAudit,
}

/// Used capacity over the cap for each reflector, in the units of the
/// capacity row that governs it.
pub fn capacity_ratios(inst: &Instance, bandwidth: bool, ps: &PathSet) -> Vec<f64> {
    let used = ps.fanout_usage(inst.num_reflectors());
    inst.reflectors
        .iter()
        .enumerate()
        .map(|(i, r)| match r.bandwidth.filter(|_| bandwidth) {
            Some(bw) => {
                let load: f64 = ps
                    .routes
                    .iter()
                    .enumerate()
                    .filter(|(_, rs)| rs.contains(&i))
                    .map(|(j, _)| inst.sources[inst.sinks[j].stream].bitrate.unwrap_or(0.0))
                    .sum();
                load / bw
            }
            None => used[i] as f64 / r.fanout as f64,
        })
        .collect()
}

/// Clamped weight collected by each sink.
pub fn sink_weights(inst: &Instance, ps: &PathSet) -> Vec<f64> {
    ps.routes
        .iter()
        .enumerate()
        .map(|(j, rs)| rs.iter().filter_map(|&i| inst.path_weight(i, j).ok()).sum())
        .collect()
}

/// Doubles the half-valued pairs, builds the routing and audits it.
pub fn extract_and_double(
    inst: &Instance,
    model: &LpModel,
    g: &GapFlowGraph,
    flow: FlowAssignment,
    boxes: BoxAssignment,
    semi: &SemiIntegralSolution,
) -> Result<GapOutcome, GapError> {
    let mut routes = vec![Vec::new(); inst.num_sinks()];
    let mut half_integral = Vec::with_capacity(g.pairs.len());
    for (p, &val) in g.pairs.iter().zip(&flow.pair_values) {
        half_integral.push((p.reflector, p.sink, val));
        if val > 0.0 {
            routes[p.sink].push(p.reflector);
        }
    }
    let mut pathset = PathSet::from_routes(inst, routes, Provenance::Approx);
    pathset.keep_open(inst, model, &semi.values);
    let cost = pathset.cost(inst);
    let route_cost: f64 = pathset
        .routes
        .iter()
        .enumerate()
        .flat_map(|(j, rs)| rs.iter().map(move |&i| (i, j)))
        .map(|(i, j)| model.objective[model.route_var(i, j).expect("routed pair")])
        .sum();

    let ratios = capacity_ratios(inst, model.options.bandwidth, &pathset);
    let weights = sink_weights(inst, &pathset);
    let mut violations = Vec::new();
    for (i, &r) in ratios.iter().enumerate() {
        if r > 4.0 + AUDIT_TOL {
            violations.push(format!(
                "reflector `{}` uses {r:.3}x its capacity (> 4)",
                inst.reflectors[i].id
            ));
        }
    }
    let mut min_weight_ratio = f64::INFINITY;
    for (j, &w) in weights.iter().enumerate() {
        let need = inst.sinks[j].weight_threshold();
        if need <= 0.0 {
            continue;
        }
        min_weight_ratio = min_weight_ratio.min(w / need);
        if w < need / 4.0 - WEIGHT_TOL {
            violations.push(format!(
                "sink `{}` gets weight {w:.6} < W/4 = {:.6}",
                inst.sinks[j].id,
                need / 4.0
            ));
        }
    }
    if route_cost > 2.0 * flow.cost + AUDIT_TOL {
        violations.push(format!(
            "route cost {route_cost:.6} exceeds twice the flow cost {:.6}",
            flow.cost
        ));
    }
    if cost.total > 2.0 * semi.cost + AUDIT_TOL {
        violations.push(format!(
            "total cost {:.6} exceeds twice the rounded cost {:.6}",
            cost.total, semi.cost
        ));
    }
    let outcome = GapOutcome {
        audit: GapAudit {
            max_capacity_ratio: ratios.iter().copied().fold(0.0, f64::max),
            min_weight_ratio,
            flow_cost: flow.cost,
            route_cost,
            total_cost: cost.total,
            semi_cost: semi.cost,
        },
        pathset,
        boxes,
        flow,
        half_integral,
    };
    if violations.is_empty() {
        Ok(outcome)
    } else {
        Err(GapError::Audit {
            violations,
            outcome: Box::new(outcome),
        })
    }
}

/// Boxes, flow and doubling in one call.
pub fn gap_round(
    inst: &Instance,
    model: &LpModel,
    semi: &SemiIntegralSolution,
) -> Result<GapOutcome, GapError> {
    let boxes = build_boxes(inst, model, semi)?;
    let mut g = GapFlowGraph::build(inst, model, semi, &boxes)?;
    let flow = min_cost_max_flow(&mut g)?;
    extract_and_double(inst, model, &g, flow, boxes, semi)
}
