//! Best-bound branch-and-bound over the LP relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::simplex::{self, SimplexError};
use super::{
    map_simplex_error, FractionalSolution, Infeasibility, IntegralSolution, IpStatus, LpError,
    LpModel, Provenance, FEAS_TOL, INT_TOL,
};

/// Nodes closer than this to the incumbent are pruned.
const GAP_TOL: f64 = 1e-6;
/// LP values this close to 0 or 1 are fixed by [`approx_hack`].
const FIX_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default)]
pub struct TimeBudget {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<usize>,
}

impl TimeBudget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn seconds(secs: f64) -> Self {
        TimeBudget {
            time_limit: Some(Duration::from_secs_f64(secs)),
            node_limit: None,
        }
    }
}

struct Node {
    bound: f64,
    id: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Reversed so the max-heap pops the smallest bound, oldest node first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.id.cmp(&self.id))
    }
}

fn is_integral(x: &[f64]) -> bool {
    x.iter()
        .all(|v| v.abs() < INT_TOL || (v - 1.0).abs() < INT_TOL)
}

fn most_fractional(x: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut best_dist = INT_TOL;
    for (v, &val) in x.iter().enumerate() {
        let frac = val - val.floor();
        let dist = frac.min(1.0 - frac);
        if dist > best_dist + 1e-12 {
            best_dist = dist;
            best = Some(v);
        }
    }
    best
}

enum NodeLp {
    Solved(Vec<f64>, f64),
    Infeasible,
}

fn solve_node(model: &LpModel, lower: &[f64], upper: &[f64]) -> Result<NodeLp, LpError> {
    let mut lp = model.to_program();
    lp.lower = lower.to_vec();
    lp.upper = upper.to_vec();
    match simplex::solve(&lp) {
        Ok(s) => Ok(NodeLp::Solved(s.x, s.objective)),
        Err(SimplexError::Infeasible { .. }) => Ok(NodeLp::Infeasible),
        Err(e) => Err(map_simplex_error(model, e)),
    }
}

fn feasible_integral(model: &LpModel, x: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    x.len() == model.num_vars()
        && is_integral(x)
        && model.max_violation(x) <= FEAS_TOL
        && x.iter()
            .zip(lower.iter().zip(upper))
            .all(|(v, (l, u))| *v >= l - INT_TOL && *v <= u + INT_TOL)
}

fn branch_and_bound(
    model: &LpModel,
    lower: Vec<f64>,
    upper: Vec<f64>,
    budget: TimeBudget,
    incumbent: Option<&[f64]>,
    provenance: Provenance,
) -> Result<IntegralSolution, LpError> {
    let start = Instant::now();
    let (root_x, root_obj) = match solve_node(model, &lower, &upper)? {
        NodeLp::Solved(x, obj) => (x, obj),
        NodeLp::Infeasible => {
            // Re-solve to surface the certificate naming the failing rows.
            let mut lp = model.to_program();
            lp.lower = lower;
            lp.upper = upper;
            let err = simplex::solve(&lp).expect_err("node was infeasible");
            return Err(map_simplex_error(model, err));
        }
    };

    let mut best: Option<(Vec<f64>, f64)> = incumbent
        .filter(|x| feasible_integral(model, x, &lower, &upper))
        .map(|x| {
            (
                x.iter().map(|v| v.round()).collect(),
                model.objective_value(x),
            )
        });
    let mut nodes = 1usize;
    let mut heap = BinaryHeap::new();

    let consider = |x: Vec<f64>,
                    obj: f64,
                    lower: Vec<f64>,
                    upper: Vec<f64>,
                    best: &mut Option<(Vec<f64>, f64)>,
                    heap: &mut BinaryHeap<Node>,
                    id: usize| {
        if best.as_ref().is_some_and(|(_, b)| obj >= b - GAP_TOL) {
            return;
        }
        if is_integral(&x) {
            let rounded: Vec<f64> = x.iter().map(|v| v.round()).collect();
            let value = model.objective_value(&rounded);
            *best = Some((rounded, value));
        } else {
            heap.push(Node {
                bound: obj,
                id,
                lower,
                upper,
                x,
            });
        }
    };
    consider(root_x, root_obj, lower, upper, &mut best, &mut heap, 0);

    while let Some(node) = heap.pop() {
        if best
            .as_ref()
            .is_some_and(|(_, b)| node.bound >= b - GAP_TOL)
        {
            break;
        }
        let over_time = budget.time_limit.is_some_and(|t| start.elapsed() >= t);
        let over_nodes = budget.node_limit.is_some_and(|n| nodes >= n);
        if over_time || over_nodes {
            let bound = node.bound;
            return match best {
                Some((values, objective)) => Ok(IntegralSolution {
                    values,
                    objective,
                    provenance,
                    status: IpStatus::Timeout { bound },
                    nodes,
                }),
                None => Err(LpError::Timeout { bound, nodes }),
            };
        }
        let Some(v) = most_fractional(&node.x) else {
            continue;
        };
        for fix in [0.0, 1.0] {
            let mut lo = node.lower.clone();
            let mut up = node.upper.clone();
            if fix == 0.0 {
                up[v] = 0.0;
            } else {
                lo[v] = 1.0;
            }
            nodes += 1;
            if let NodeLp::Solved(x, obj) = solve_node(model, &lo, &up)? {
                consider(x, obj, lo, up, &mut best, &mut heap, nodes);
            }
        }
    }

    match best {
        Some((values, objective)) => Ok(IntegralSolution {
            values,
            objective,
            provenance,
            status: IpStatus::Optimal,
            nodes,
        }),
        None => Err(LpError::Infeasible(Infeasibility::Integer { nodes })),
    }
}

/// Solves the integer program exactly, optionally seeded with a known
/// feasible integral point. When the budget runs out the best solution found
/// is returned with [`IpStatus::Timeout`]; with no solution at all the call
/// fails with [`LpError::Timeout`].
pub fn solve_ip(
    model: &LpModel,
    budget: TimeBudget,
    incumbent: Option<&[f64]>,
) -> Result<IntegralSolution, LpError> {
    branch_and_bound(
        model,
        model.lower.clone(),
        model.upper.clone(),
        budget,
        incumbent,
        Provenance::ExactIp,
    )
}

/// Fixes every variable the relaxation already made integral and solves the
/// rest as an integer program.
pub fn approx_hack(
    model: &LpModel,
    frac: &FractionalSolution,
    budget: TimeBudget,
) -> Result<IntegralSolution, LpError> {
    let mut lower = model.lower.clone();
    let mut upper = model.upper.clone();
    let mut fixed = 0;
    for (v, &val) in frac.values.iter().enumerate() {
        if val.abs() < FIX_TOL {
            upper[v] = 0.0;
            fixed += 1;
        } else if (val - 1.0).abs() < FIX_TOL {
            lower[v] = 1.0;
            fixed += 1;
        }
    }
    if fixed == frac.values.len() {
        let values: Vec<f64> = frac.values.iter().map(|v| v.round()).collect();
        return Ok(IntegralSolution {
            objective: model.objective_value(&values),
            values,
            provenance: Provenance::ApproxHack,
            status: IpStatus::Optimal,
            nodes: 0,
        });
    }
    match branch_and_bound(model, lower, upper, budget, None, Provenance::ApproxHack) {
        Err(LpError::Infeasible(_)) => {
            Err(LpError::Infeasible(Infeasibility::FixedResidual { fixed }))
        }
        other => other,
    }
}
