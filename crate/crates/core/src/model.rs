//! Problem instances: the three-level source → reflector → sink network,
//! its JSON schema, replication of multi-stream nodes, and the
//! loss ↔ weight transform.
//!
//! Weights are base-2 negative logarithms of loss probabilities, so a path
//! that drops half the packets carries weight 1 and weights of edge-disjoint
//! paths add up to the negative log of the reconstructed stream's loss.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for every weight comparison.
pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("sink `{sink}` demands unknown stream `{stream}`")]
    UnknownStream { sink: String, stream: String },
    #[error("{field} references unknown node `{id}`")]
    UnknownNode { field: String, id: String },
    #[error("path unavailable: reflector `{reflector}` cannot reach sink `{sink}` for its stream")]
    PathUnavailable { reflector: String, sink: String },
    #[error("malformed instance JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

/// How the objective charges for a routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Reflector fixed costs, per-feed first-hop costs and per-sink second-hop costs.
    #[default]
    Full,
    /// Reflectors are free; every routed (stream, reflector, sink) triple pays
    /// its first and second hop.
    Transmission,
}

impl std::fmt::Display for CostMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostMode::Full => f.write_str("full"),
            CostMode::Transmission => f.write_str("transmission"),
        }
    }
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

/// Instance document as stored on disk. Physical entry points and edge
/// servers may carry several streams; [`normalize`] splits them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInstance {
    pub sources: Vec<RawSource>,
    pub reflectors: Vec<RawReflector>,
    pub sinks: Vec<RawSink>,
    #[serde(default)]
    pub src_edges: Vec<RawEdge>,
    #[serde(default)]
    pub refl_edges: Vec<RawEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CostMode>,
    #[serde(default)]
    pub colors_enabled: bool,
    #[serde(default)]
    pub bandwidth_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSource {
    pub id: String,
    /// Streams entering here. Empty means one stream named after the source.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub streams: Vec<String>,
    /// Encoded bitrate in bits/sec; only read in bandwidth mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitrate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReflector {
    pub id: String,
    pub cost: f64,
    pub fanout: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<u32>,
}

/// A sink either names one `stream` with its `threshold`, or lists several
/// `demands`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSink {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demands: Vec<RawDemand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDemand {
    pub stream: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEdge {
    pub from: String,
    pub to: String,
    pub loss: f64,
    pub cost: f64,
}

impl RawInstance {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

// ---------------------------------------------------------------------------
// Normalized instance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub id: String,
    pub bitrate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reflector {
    pub id: String,
    pub cost: f64,
    pub fanout: u32,
    pub bandwidth: Option<f64>,
    pub color: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sink {
    pub id: String,
    /// Index of the source originating the demanded stream.
    pub stream: usize,
    pub threshold: f64,
}

impl Sink {
    /// `-log2(threshold)`.
    pub fn weight_threshold(&self) -> f64 {
        -self.threshold.log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub loss: f64,
    pub cost: f64,
}

/// A normalized instance: one stream per source, one demand per sink.
/// Links are stored densely; `None` means the link is unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sources: Vec<Source>,
    pub reflectors: Vec<Reflector>,
    pub sinks: Vec<Sink>,
    src_links: Vec<Option<Link>>,
    refl_links: Vec<Option<Link>>,
    pub mode: CostMode,
    pub colors_enabled: bool,
    pub bandwidth_enabled: bool,
}

/// Loss of a two-hop path with independent link losses.
pub fn combined_loss(first: f64, second: f64) -> f64 {
    first + second - first * second
}

/// Base-2 weight of a path loss, without clamping. Lossless paths have
/// infinite weight.
pub fn loss_to_weight(loss: f64) -> f64 {
    if loss <= 0.0 {
        f64::INFINITY
    } else {
        -loss.log2()
    }
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        normalize(&RawInstance::from_json(text)?)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn num_reflectors(&self) -> usize {
        self.reflectors.len()
    }

    pub fn num_sinks(&self) -> usize {
        self.sinks.len()
    }

    /// `max(|R|, |D|)`.
    pub fn n(&self) -> usize {
        self.reflectors.len().max(self.sinks.len())
    }

    pub fn src_link(&self, source: usize, reflector: usize) -> Option<&Link> {
        self.src_links[source * self.reflectors.len() + reflector].as_ref()
    }

    pub fn refl_link(&self, reflector: usize, sink: usize) -> Option<&Link> {
        self.refl_links[reflector * self.sinks.len() + sink].as_ref()
    }

    /// Both hops of the path feeding `sink` through `reflector`.
    pub fn path_links(&self, reflector: usize, sink: usize) -> Option<(&Link, &Link)> {
        let k = self.sinks[sink].stream;
        Some((
            self.src_link(k, reflector)?,
            self.refl_link(reflector, sink)?,
        ))
    }

    pub fn path_loss(&self, reflector: usize, sink: usize) -> Option<f64> {
        self.path_links(reflector, sink)
            .map(|(a, b)| combined_loss(a.loss, b.loss))
    }

    /// Weight of the path before clamping to the sink's threshold.
    pub fn raw_path_weight(&self, reflector: usize, sink: usize) -> Option<f64> {
        self.path_loss(reflector, sink).map(loss_to_weight)
    }

    /// Weight of the path clamped into `[0, W_j]`.
    pub fn path_weight(&self, reflector: usize, sink: usize) -> Result<f64, ModelError> {
        let raw =
            self.raw_path_weight(reflector, sink)
                .ok_or_else(|| ModelError::PathUnavailable {
                    reflector: self.reflectors[reflector].id.clone(),
                    sink: self.sinks[sink].id.clone(),
                })?;
        Ok(raw.clamp(0.0, self.sinks[sink].weight_threshold()))
    }

    pub fn weights(&self) -> WeightTable {
        WeightTable::new(self)
    }

    /// Probability that a packet is lost on every one of the given routes to
    /// `sink`. An empty route set loses everything.
    pub fn analytic_loss(&self, routes: &[usize], sink: usize) -> Result<f64, ModelError> {
        routes.iter().try_fold(1.0, |acc, &i| {
            self.path_loss(i, sink)
                .map(|p| acc * p)
                .ok_or_else(|| ModelError::PathUnavailable {
                    reflector: self.reflectors[i].id.clone(),
                    sink: self.sinks[sink].id.clone(),
                })
        })
    }

    /// Number of distinct colors in use (largest color label).
    pub fn num_colors(&self) -> u32 {
        self.reflectors
            .iter()
            .filter_map(|r| r.color)
            .max()
            .unwrap_or(0)
    }

    /// Common bitrate of all sources, if every source declares the same one.
    pub fn uniform_bitrate(&self) -> Option<f64> {
        let first = self.sources.first()?.bitrate?;
        self.sources
            .iter()
            .all(|s| s.bitrate == Some(first))
            .then_some(first)
    }

    /// Serializes back to the on-disk schema. The result normalizes to `self`.
    pub fn to_raw(&self) -> RawInstance {
        let mut src_edges = Vec::new();
        for (k, s) in self.sources.iter().enumerate() {
            for (i, r) in self.reflectors.iter().enumerate() {
                if let Some(l) = self.src_link(k, i) {
                    src_edges.push(RawEdge {
                        from: s.id.clone(),
                        to: r.id.clone(),
                        loss: l.loss,
                        cost: l.cost,
                    });
                }
            }
        }
        let mut refl_edges = Vec::new();
        for (i, r) in self.reflectors.iter().enumerate() {
            for (j, d) in self.sinks.iter().enumerate() {
                if let Some(l) = self.refl_link(i, j) {
                    refl_edges.push(RawEdge {
                        from: r.id.clone(),
                        to: d.id.clone(),
                        loss: l.loss,
                        cost: l.cost,
                    });
                }
            }
        }
        RawInstance {
            sources: self
                .sources
                .iter()
                .map(|s| RawSource {
                    id: s.id.clone(),
                    streams: Vec::new(),
                    bitrate: s.bitrate,
                })
                .collect(),
            reflectors: self
                .reflectors
                .iter()
                .map(|r| RawReflector {
                    id: r.id.clone(),
                    cost: r.cost,
                    fanout: r.fanout,
                    bandwidth: r.bandwidth,
                    color: r.color,
                })
                .collect(),
            sinks: self
                .sinks
                .iter()
                .map(|d| RawSink {
                    id: d.id.clone(),
                    stream: Some(self.sources[d.stream].id.clone()),
                    threshold: Some(d.threshold),
                    demands: Vec::new(),
                })
                .collect(),
            src_edges,
            refl_edges,
            mode: Some(self.mode),
            colors_enabled: self.colors_enabled,
            bandwidth_enabled: self.bandwidth_enabled,
        }
    }

    pub fn to_json(&self) -> String {
        self.to_raw().to_json()
    }
}

/// Clamped path weights `w_ij` (the stream is implied by the sink).
#[derive(Debug, Clone)]
pub struct WeightTable {
    num_sinks: usize,
    weights: Vec<Option<f64>>,
}

impl WeightTable {
    pub fn new(inst: &Instance) -> Self {
        let d = inst.num_sinks();
        let mut weights = vec![None; inst.num_reflectors() * d];
        for i in 0..inst.num_reflectors() {
            for j in 0..d {
                weights[i * d + j] = inst.path_weight(i, j).ok();
            }
        }
        WeightTable {
            num_sinks: d,
            weights,
        }
    }

    pub fn get(&self, reflector: usize, sink: usize) -> Option<f64> {
        self.weights[reflector * self.num_sinks + sink]
    }
}

// ---------------------------------------------------------------------------
// Normalization and validation
// ---------------------------------------------------------------------------

fn replica_id(orig: &str, stream: &str) -> String {
    format!("{orig}#{stream}")
}

fn check_unique<'a>(field: &str, ids: impl Iterator<Item = &'a str>) -> Result<(), ModelError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(field, format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

fn check_link(field: &str, e: &RawEdge) -> Result<Link, ModelError> {
    if !(0.0..=1.0).contains(&e.loss) {
        return Err(invalid(
            format!("{field}[{}->{}].loss", e.from, e.to),
            format!("{} is outside [0, 1]", e.loss),
        ));
    }
    if !e.cost.is_finite() || e.cost < 0.0 {
        return Err(invalid(
            format!("{field}[{}->{}].cost", e.from, e.to),
            format!("{} must be finite and non-negative", e.cost),
        ));
    }
    Ok(Link {
        loss: e.loss,
        cost: e.cost,
    })
}

/// Splits every multi-stream source and sink into single-stream replicas
/// named `origId#streamId`, copying their links, and validates the result.
/// Nodes that already carry exactly one stream keep their id, so normalizing
/// a normalized instance is the identity.
pub fn normalize(raw: &RawInstance) -> Result<Instance, ModelError> {
    if raw.sources.is_empty() || raw.reflectors.is_empty() || raw.sinks.is_empty() {
        return Err(invalid(
            "instance",
            "needs at least one source, one reflector and one sink",
        ));
    }
    check_unique("sources", raw.sources.iter().map(|s| s.id.as_str()))?;
    check_unique("reflectors", raw.reflectors.iter().map(|r| r.id.as_str()))?;
    check_unique("sinks", raw.sinks.iter().map(|d| d.id.as_str()))?;

    // Source replicas, remembering which physical source each came from.
    let mut sources = Vec::new();
    let mut origin_of_source = Vec::new();
    let mut stream_index: HashMap<String, usize> = HashMap::new();
    for (p, s) in raw.sources.iter().enumerate() {
        if let Some(b) = s.bitrate {
            if !(b.is_finite() && b > 0.0) {
                return Err(invalid(format!("sources[{}].bitrate", s.id), "must be > 0"));
            }
        }
        let streams: Vec<&str> = if s.streams.is_empty() {
            vec![s.id.as_str()]
        } else {
            s.streams.iter().map(String::as_str).collect()
        };
        let replicate = streams.len() > 1;
        for stream in streams {
            let id = if replicate {
                replica_id(&s.id, stream)
            } else {
                s.id.clone()
            };
            if stream_index
                .insert(stream.to_string(), sources.len())
                .is_some()
            {
                return Err(invalid(
                    format!("sources[{}].streams", s.id),
                    format!("stream `{stream}` originates at more than one source"),
                ));
            }
            // Also resolvable by the replica's own id.
            stream_index.entry(id.clone()).or_insert(sources.len());
            sources.push(Source {
                id,
                bitrate: s.bitrate,
            });
            origin_of_source.push(p);
        }
    }
    check_unique(
        "sources (after replication)",
        sources.iter().map(|s| s.id.as_str()),
    )?;

    let mut reflectors = Vec::with_capacity(raw.reflectors.len());
    for r in &raw.reflectors {
        if !r.cost.is_finite() || r.cost < 0.0 {
            return Err(invalid(
                format!("reflectors[{}].cost", r.id),
                "must be finite and non-negative",
            ));
        }
        if r.fanout < 1 {
            return Err(invalid(
                format!("reflectors[{}].fanout", r.id),
                "must be >= 1",
            ));
        }
        if let Some(bw) = r.bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(invalid(
                    format!("reflectors[{}].bandwidth", r.id),
                    "must be > 0",
                ));
            }
        }
        if r.color == Some(0) {
            return Err(invalid(
                format!("reflectors[{}].color", r.id),
                "colors start at 1",
            ));
        }
        reflectors.push(Reflector {
            id: r.id.clone(),
            cost: r.cost,
            fanout: r.fanout,
            bandwidth: r.bandwidth,
            color: r.color,
        });
    }

    let mut sinks = Vec::new();
    let mut origin_of_sink = Vec::new();
    for (p, d) in raw.sinks.iter().enumerate() {
        let demands: Vec<(String, f64)> = match (&d.stream, d.threshold, d.demands.is_empty()) {
            (Some(s), Some(t), true) => vec![(s.clone(), t)],
            (None, None, false) => d
                .demands
                .iter()
                .map(|x| (x.stream.clone(), x.threshold))
                .collect(),
            _ => {
                return Err(invalid(
                    format!("sinks[{}]", d.id),
                    "give either `stream` + `threshold` or a non-empty `demands` list",
                ))
            }
        };
        let replicate = demands.len() > 1;
        for (stream, threshold) in demands {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(invalid(
                    format!("sinks[{}].threshold", d.id),
                    format!("{threshold} is outside (0, 1]"),
                ));
            }
            let k = *stream_index
                .get(&stream)
                .ok_or_else(|| ModelError::UnknownStream {
                    sink: d.id.clone(),
                    stream: stream.clone(),
                })?;
            let id = if replicate {
                replica_id(&d.id, &stream)
            } else {
                d.id.clone()
            };
            sinks.push(Sink {
                id,
                stream: k,
                threshold,
            });
            origin_of_sink.push(p);
        }
    }
    check_unique(
        "sinks (after replication)",
        sinks.iter().map(|d| d.id.as_str()),
    )?;

    let phys_source: HashMap<&str, usize> = raw
        .sources
        .iter()
        .enumerate()
        .map(|(p, s)| (s.id.as_str(), p))
        .collect();
    let phys_sink: HashMap<&str, usize> = raw
        .sinks
        .iter()
        .enumerate()
        .map(|(p, s)| (s.id.as_str(), p))
        .collect();
    let refl_index: HashMap<&str, usize> = reflectors
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();

    let (ns, nr, nd) = (sources.len(), reflectors.len(), sinks.len());
    let mut src_links = vec![None; ns * nr];
    let mut seen = HashSet::new();
    for e in &raw.src_edges {
        let link = check_link("src_edges", e)?;
        let p = *phys_source
            .get(e.from.as_str())
            .ok_or_else(|| ModelError::UnknownNode {
                field: "src_edges.from".into(),
                id: e.from.clone(),
            })?;
        let i = *refl_index
            .get(e.to.as_str())
            .ok_or_else(|| ModelError::UnknownNode {
                field: "src_edges.to".into(),
                id: e.to.clone(),
            })?;
        if !seen.insert((p, i)) {
            return Err(invalid(
                "src_edges",
                format!("duplicate edge {} -> {}", e.from, e.to),
            ));
        }
        for k in (0..ns).filter(|&k| origin_of_source[k] == p) {
            src_links[k * nr + i] = Some(link);
        }
    }
    let mut refl_links = vec![None; nr * nd];
    let mut seen = HashSet::new();
    for e in &raw.refl_edges {
        let link = check_link("refl_edges", e)?;
        let i = *refl_index
            .get(e.from.as_str())
            .ok_or_else(|| ModelError::UnknownNode {
                field: "refl_edges.from".into(),
                id: e.from.clone(),
            })?;
        let p = *phys_sink
            .get(e.to.as_str())
            .ok_or_else(|| ModelError::UnknownNode {
                field: "refl_edges.to".into(),
                id: e.to.clone(),
            })?;
        if !seen.insert((i, p)) {
            return Err(invalid(
                "refl_edges",
                format!("duplicate edge {} -> {}", e.from, e.to),
            ));
        }
        for j in (0..nd).filter(|&j| origin_of_sink[j] == p) {
            refl_links[i * nd + j] = Some(link);
        }
    }

    Ok(Instance {
        sources,
        reflectors,
        sinks,
        src_links,
        refl_links,
        mode: raw.mode.unwrap_or_default(),
        colors_enabled: raw.colors_enabled,
        bandwidth_enabled: raw.bandwidth_enabled,
    })
}
