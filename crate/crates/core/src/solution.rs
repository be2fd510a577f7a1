//! Integral routings: which reflectors are open, which streams they are fed,
//! and which reflectors each sink listens to.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::lp::{IntegralSolution, LpModel, Provenance, VarKind};
use crate::model::{CostMode, Instance, ModelError};

/// A routing plan over a normalized instance, by index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSet {
    pub mode: CostMode,
    pub provenance: Provenance,
    /// Open reflectors, sorted.
    pub reflectors: Vec<usize>,
    /// `(stream, reflector)` feeds, sorted.
    pub feeds: Vec<(usize, usize)>,
    /// Per sink, the sorted reflectors it receives its stream from.
    pub routes: Vec<Vec<usize>>,
    /// Cost as accounted by the algorithm that produced the plan.
    pub declared_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Fixed reflector costs.
    pub reflector: f64,
    /// Source → reflector hops (per feed, or per route in transmission mode).
    pub first_hop: f64,
    /// Reflector → sink hops.
    pub second_hop: f64,
    pub total: f64,
}

impl PathSet {
    /// Builds a plan from per-sink routes, opening exactly the reflectors and
    /// feeds the routes need.
    pub fn from_routes(inst: &Instance, routes: Vec<Vec<usize>>, provenance: Provenance) -> Self {
        let mut reflectors = BTreeSet::new();
        let mut feeds = BTreeSet::new();
        let routes: Vec<Vec<usize>> = routes
            .into_iter()
            .enumerate()
            .map(|(j, mut r)| {
                r.sort_unstable();
                r.dedup();
                for &i in &r {
                    reflectors.insert(i);
                    feeds.insert((inst.sinks[j].stream, i));
                }
                r
            })
            .collect();
        let mut ps = PathSet {
            mode: inst.mode,
            provenance,
            reflectors: reflectors.into_iter().collect(),
            feeds: feeds.into_iter().collect(),
            routes,
            declared_cost: 0.0,
        };
        ps.declared_cost = ps.cost(inst).total;
        ps
    }

    /// Also opens every reflector and feed set to 1 in `values`, as a
    /// rounded draw leaves them. The draw's fixed costs stay charged even
    /// where the final routes do not use them.
    pub fn keep_open(&mut self, inst: &Instance, model: &LpModel, values: &[f64]) {
        let mut reflectors: BTreeSet<usize> = self.reflectors.iter().copied().collect();
        let mut feeds: BTreeSet<(usize, usize)> = self.feeds.iter().copied().collect();
        for i in 0..model.num_reflectors() {
            if values[model.reflector_var(i)] >= 0.5 {
                reflectors.insert(i);
            }
        }
        for (v, k, i) in model.feed_vars() {
            if values[v] >= 0.5 {
                feeds.insert((k, i));
            }
        }
        self.reflectors = reflectors.into_iter().collect();
        self.feeds = feeds.into_iter().collect();
        self.declared_cost = self.cost(inst).total;
    }

    /// Reads the plan off a 0/1 solution of the program, keeping the `z`
    /// and `y` values as solved even where no route uses them.
    pub fn from_integral(inst: &Instance, model: &LpModel, sol: &IntegralSolution) -> Self {
        let mut reflectors = Vec::new();
        let mut feeds = Vec::new();
        let mut routes = vec![Vec::new(); inst.num_sinks()];
        for (v, kind) in model.vars.iter().enumerate() {
            if sol.values[v] < 0.5 {
                continue;
            }
            match *kind {
                VarKind::Reflector { reflector } => reflectors.push(reflector),
                VarKind::Feed { stream, reflector } => feeds.push((stream, reflector)),
                VarKind::Route {
                    reflector, sink, ..
                } => routes[sink].push(reflector),
            }
        }
        reflectors.sort_unstable();
        feeds.sort_unstable();
        routes.iter_mut().for_each(|r| r.sort_unstable());
        PathSet {
            mode: model.options.mode,
            provenance: sol.provenance,
            reflectors,
            feeds,
            routes,
            declared_cost: sol.objective,
        }
    }

    pub fn cost(&self, inst: &Instance) -> CostBreakdown {
        let mut c = CostBreakdown::default();
        let transmission = self.mode == CostMode::Transmission;
        if !transmission {
            c.reflector = self
                .reflectors
                .iter()
                .map(|&i| inst.reflectors[i].cost)
                .sum();
            c.first_hop = self
                .feeds
                .iter()
                .filter_map(|&(k, i)| inst.src_link(k, i))
                .map(|l| l.cost)
                .sum();
        }
        for (j, rs) in self.routes.iter().enumerate() {
            for &i in rs {
                if let Some((a, b)) = inst.path_links(i, j) {
                    c.second_hop += b.cost;
                    if transmission {
                        c.first_hop += a.cost;
                    }
                }
            }
        }
        c.total = c.reflector + c.first_hop + c.second_hop;
        c
    }

    /// Number of sinks each reflector transmits to.
    pub fn fanout_usage(&self, num_reflectors: usize) -> Vec<usize> {
        let mut used = vec![0; num_reflectors];
        for rs in &self.routes {
            for &i in rs {
                used[i] += 1;
            }
        }
        used
    }

    /// Checks that every index is in range, every route is an existing
    /// path, and every route's reflector and feed are open.
    pub fn validate(&self, inst: &Instance) -> Result<(), ModelError> {
        let bad = |field: &str, reason: String| ModelError::Validation {
            field: field.into(),
            reason,
        };
        if self.routes.len() != inst.num_sinks() {
            return Err(bad(
                "routes",
                format!(
                    "{} route lists for {} sinks",
                    self.routes.len(),
                    inst.num_sinks()
                ),
            ));
        }
        let open: BTreeSet<usize> = self.reflectors.iter().copied().collect();
        let fed: BTreeSet<(usize, usize)> = self.feeds.iter().copied().collect();
        if let Some(&i) = open.iter().find(|&&i| i >= inst.num_reflectors()) {
            return Err(bad("reflectors", format!("index {i} out of range")));
        }
        for &(k, i) in &fed {
            if k >= inst.num_sources() || i >= inst.num_reflectors() {
                return Err(bad("feeds", format!("({k}, {i}) out of range")));
            }
        }
        for (j, rs) in self.routes.iter().enumerate() {
            let k = inst.sinks[j].stream;
            for &i in rs {
                if i >= inst.num_reflectors() {
                    return Err(bad("routes", format!("reflector index {i} out of range")));
                }
                if inst.path_links(i, j).is_none() {
                    return Err(ModelError::PathUnavailable {
                        reflector: inst.reflectors[i].id.clone(),
                        sink: inst.sinks[j].id.clone(),
                    });
                }
                if !open.contains(&i) || !fed.contains(&(k, i)) {
                    return Err(bad(
                        "routes",
                        format!(
                            "sink `{}` routes through `{}` which is not open or not fed",
                            inst.sinks[j].id, inst.reflectors[i].id
                        ),
                    ));
                }
            }
            if rs.windows(2).any(|w| w[0] == w[1]) {
                return Err(bad(
                    "routes",
                    format!("sink `{}` repeats a reflector", inst.sinks[j].id),
                ));
            }
        }
        Ok(())
    }

    pub fn to_export(&self, inst: &Instance) -> PathSetExport {
        PathSetExport {
            mode: self.mode,
            provenance: self.provenance,
            reflectors: self
                .reflectors
                .iter()
                .map(|&i| inst.reflectors[i].id.clone())
                .collect(),
            feeds: self
                .feeds
                .iter()
                .map(|&(k, i)| FeedExport {
                    stream: inst.sources[k].id.clone(),
                    reflector: inst.reflectors[i].id.clone(),
                })
                .collect(),
            routes: self
                .routes
                .iter()
                .enumerate()
                .map(|(j, rs)| RouteExport {
                    sink: inst.sinks[j].id.clone(),
                    stream: inst.sources[inst.sinks[j].stream].id.clone(),
                    reflectors: rs.iter().map(|&i| inst.reflectors[i].id.clone()).collect(),
                })
                .collect(),
            declared_cost: self.declared_cost,
            cost: self.cost(inst),
            audit: None,
            color_audit: None,
        }
    }

    /// Resolves an exported plan against `inst`. Sinks missing from the
    /// export get no routes.
    pub fn from_export(inst: &Instance, ex: &PathSetExport) -> Result<Self, ModelError> {
        fn index<'a>(
            field: &str,
            mut ids: impl Iterator<Item = &'a String>,
            id: &str,
        ) -> Result<usize, ModelError> {
            ids.position(|x| x == id)
                .ok_or_else(|| ModelError::UnknownNode {
                    field: field.into(),
                    id: id.into(),
                })
        }
        let refl = |id: &str| index("reflector", inst.reflectors.iter().map(|r| &r.id), id);
        let src = |id: &str| index("stream", inst.sources.iter().map(|s| &s.id), id);
        let sink_pos: HashMap<&str, usize> = inst
            .sinks
            .iter()
            .enumerate()
            .map(|(j, d)| (d.id.as_str(), j))
            .collect();

        let mut reflectors = ex
            .reflectors
            .iter()
            .map(|r| refl(r))
            .collect::<Result<Vec<_>, _>>()?;
        reflectors.sort_unstable();
        let mut feeds = ex
            .feeds
            .iter()
            .map(|f| Ok((src(&f.stream)?, refl(&f.reflector)?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        feeds.sort_unstable();
        let mut routes = vec![Vec::new(); inst.num_sinks()];
        for r in &ex.routes {
            let j = *sink_pos
                .get(r.sink.as_str())
                .ok_or_else(|| ModelError::UnknownNode {
                    field: "routes.sink".into(),
                    id: r.sink.clone(),
                })?;
            let k = src(&r.stream)?;
            if k != inst.sinks[j].stream {
                return Err(ModelError::UnknownStream {
                    sink: r.sink.clone(),
                    stream: r.stream.clone(),
                });
            }
            let mut rs = r
                .reflectors
                .iter()
                .map(|i| refl(i))
                .collect::<Result<Vec<_>, _>>()?;
            rs.sort_unstable();
            routes[j] = rs;
        }
        let ps = PathSet {
            mode: ex.mode,
            provenance: ex.provenance,
            reflectors,
            feeds,
            routes,
            declared_cost: ex.declared_cost,
        };
        ps.validate(inst)?;
        Ok(ps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedExport {
    pub stream: String,
    pub reflector: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteExport {
    pub sink: String,
    pub stream: String,
    pub reflectors: Vec<String>,
}

/// On-disk form of a [`PathSet`], keyed by node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSetExport {
    pub mode: CostMode,
    pub provenance: Provenance,
    pub reflectors: Vec<String>,
    pub feeds: Vec<FeedExport>,
    pub routes: Vec<RouteExport>,
    pub declared_cost: f64,
    pub cost: CostBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_audit: Option<serde_json::Value>,
}
