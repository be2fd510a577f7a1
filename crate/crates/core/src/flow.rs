//! Integral min-cost max-flow and fractional path decomposition.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Reduced costs above `-COST_EPS` are treated as non-negative.
const COST_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Directed network with integer capacities and non-negative real costs.
///
/// Arcs are stored in forward/reverse pairs: arc `2e` is edge `e`, arc
/// `2e + 1` its residual twin.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    original_cap: Vec<i64>,
    tails: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub value: i64,
    pub cost: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.node.cmp(&self.node))
    }
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            adj: vec![Vec::new(); nodes],
            ..Default::default()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.original_cap.len()
    }

    /// Adds an edge and returns its id.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        assert!(cap >= 0, "negative capacity");
        assert!(
            cost >= 0.0 && cost.is_finite(),
            "costs must be finite and non-negative"
        );
        let id = self.original_cap.len();
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.original_cap.push(cap);
        self.tails.push(from);
        id
    }

    pub fn edge(&self, e: usize) -> (usize, usize, i64, f64) {
        let a = &self.arcs[2 * e];
        (self.tails[e], a.to, self.original_cap[e], a.cost)
    }

    /// Flow currently on edge `e`.
    pub fn flow(&self, e: usize) -> i64 {
        self.arcs[2 * e + 1].cap
    }

    /// Successive shortest augmenting paths with Johnson potentials. Ties
    /// in Dijkstra go to the lower node id and adjacency is scanned in
    /// insertion order, so the result is a deterministic function of the
    /// construction sequence.
    pub fn min_cost_max_flow(&mut self, s: usize, t: usize) -> FlowResult {
        let n = self.num_nodes();
        let mut potential = vec![0.0; n];
        let mut value = 0i64;
        let mut cost = 0.0;
        loop {
            let mut dist = vec![f64::INFINITY; n];
            let mut via = vec![usize::MAX; n];
            let mut done = vec![false; n];
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem { dist: 0.0, node: s });
            while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
                if done[u] {
                    continue;
                }
                done[u] = true;
                for &a in &self.adj[u] {
                    let arc = &self.arcs[a];
                    if arc.cap == 0 || done[arc.to] {
                        continue;
                    }
                    let reduced = (arc.cost + potential[u] - potential[arc.to]).max(0.0);
                    debug_assert!(arc.cost + potential[u] - potential[arc.to] > -COST_EPS * 1e3);
                    let nd = d + reduced;
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        via[arc.to] = a;
                        heap.push(HeapItem {
                            dist: nd,
                            node: arc.to,
                        });
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = i64::MAX;
            let mut v = t;
            while v != s {
                let a = via[v];
                push = push.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let a = via[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                cost += push as f64 * self.arcs[a].cost;
                v = self.arcs[a ^ 1].to;
            }
            value += push;
        }
        FlowResult { value, cost }
    }
}

/// One path of a decomposition: edge ids from source to sink and the
/// amount carried.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub edges: Vec<usize>,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub paths: Vec<FlowPath>,
    /// Largest flow left on any edge after peeling off all paths.
    pub residual: f64,
}

/// Splits an acyclic edge flow into `s`-`t` paths by repeatedly following
/// the first edge with remaining flow and removing the bottleneck. Each
/// step zeroes at least one edge, so there are at most `edges` paths.
/// Flow that does not reach `t` (or edges below `eps`) stays in the
/// residual.
pub fn decompose(
    num_nodes: usize,
    edges: &[(usize, usize)],
    flow: &[f64],
    s: usize,
    t: usize,
    eps: f64,
) -> Decomposition {
    assert_eq!(edges.len(), flow.len());
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for (e, &(u, _)) in edges.iter().enumerate() {
        out[u].push(e);
    }
    let mut rest = flow.to_vec();
    let mut paths = Vec::new();
    let mut dead = vec![false; num_nodes];
    loop {
        let mut path = Vec::new();
        let mut u = s;
        while u != t {
            match out[u]
                .iter()
                .copied()
                .find(|&e| rest[e] > eps && !dead[edges[e].1])
            {
                Some(e) => {
                    path.push(e);
                    u = edges[e].1;
                }
                None => {
                    dead[u] = true;
                    break;
                }
            }
            if path.len() > edges.len() {
                panic!("flow contains a cycle");
            }
        }
        if u != t {
            if u == s {
                break;
            }
            continue;
        }
        let amount = path.iter().map(|&e| rest[e]).fold(f64::INFINITY, f64::min);
        for &e in &path {
            rest[e] -= amount;
        }
        paths.push(FlowPath {
            edges: path,
            amount,
        });
    }
    let residual = rest.iter().copied().fold(0.0, f64::max);
    Decomposition { paths, residual }
}
