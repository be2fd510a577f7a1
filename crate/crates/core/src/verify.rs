//! Independent checks of a routing against its instance: capacity and
//! weight ratios, copies per color, cost re-accounting, analytic loss and a
//! packet-level loss simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::color::COLOR_COPY_BOUND;
use crate::gapflow::{capacity_ratios, sink_weights};
use crate::model::{Instance, ModelError, WEIGHT_TOL};
use crate::solution::{CostBreakdown, PathSet};

const COST_TOL: f64 = 1e-6;
const RATIO_TOL: f64 = 1e-9;
/// Packets simulated per independently seeded shard.
const SHARD_PACKETS: u64 = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    /// Every constraint holds exactly.
    Exact,
    /// Weight at least `W/4`, capacity at most 4 times the cap.
    Approx,
    /// Every sink served, at most 13 copies per (sink, color).
    Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuaranteeProfile {
    pub kind: ProfileKind,
    /// Optional ceiling on the total cost.
    pub cost_bound: Option<f64>,
}

impl GuaranteeProfile {
    pub fn exact() -> Self {
        GuaranteeProfile {
            kind: ProfileKind::Exact,
            cost_bound: None,
        }
    }

    pub fn approx() -> Self {
        GuaranteeProfile {
            kind: ProfileKind::Approx,
            cost_bound: None,
        }
    }

    pub fn color() -> Self {
        GuaranteeProfile {
            kind: ProfileKind::Color,
            cost_bound: None,
        }
    }

    pub fn with_cost_bound(mut self, bound: f64) -> Self {
        self.cost_bound = Some(bound);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkReport {
    pub id: String,
    pub routes: Vec<String>,
    pub weight: f64,
    pub threshold_weight: f64,
    /// `weight / W`; infinite for sinks with `W = 0`.
    pub weight_ratio: f64,
    pub loss_threshold: f64,
    pub analytic_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectorReport {
    pub id: String,
    pub fanout: usize,
    pub fanout_cap: u32,
    pub fanout_ratio: f64,
    /// `used / F'` in bandwidth mode.
    pub bandwidth_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorReport {
    pub sink: String,
    pub color: u32,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub profile: GuaranteeProfile,
    pub sinks: Vec<SinkReport>,
    pub reflectors: Vec<ReflectorReport>,
    pub colors: Vec<ColorReport>,
    pub cost: CostBreakdown,
    pub declared_cost: f64,
    pub min_weight_ratio: f64,
    pub max_capacity_ratio: f64,
    pub max_color_copies: usize,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Audits `ps` against `inst` under `profile`.
pub fn audit(
    inst: &Instance,
    ps: &PathSet,
    profile: GuaranteeProfile,
) -> Result<AuditReport, ModelError> {
    ps.validate(inst)?;
    let bandwidth = inst.bandwidth_enabled;
    let weights = sink_weights(inst, ps);
    let cap_ratios = capacity_ratios(inst, bandwidth, ps);
    let fanout = ps.fanout_usage(inst.num_reflectors());
    let mut failures = Vec::new();

    let mut sinks = Vec::with_capacity(inst.num_sinks());
    let mut min_weight_ratio = f64::INFINITY;
    for (j, d) in inst.sinks.iter().enumerate() {
        let need = d.weight_threshold();
        let ratio = if need > 0.0 {
            weights[j] / need
        } else {
            f64::INFINITY
        };
        min_weight_ratio = min_weight_ratio.min(ratio);
        let floor = match profile.kind {
            ProfileKind::Exact => need,
            ProfileKind::Approx => need / 4.0,
            ProfileKind::Color => 0.0,
        };
        if weights[j] < floor - WEIGHT_TOL {
            failures.push(format!(
                "sink `{}`: weight {:.6} below {floor:.6}",
                d.id, weights[j]
            ));
        }
        if profile.kind == ProfileKind::Color && need > 0.0 && ps.routes[j].is_empty() {
            failures.push(format!("sink `{}` is not served", d.id));
        }
        sinks.push(SinkReport {
            id: d.id.clone(),
            routes: ps.routes[j]
                .iter()
                .map(|&i| inst.reflectors[i].id.clone())
                .collect(),
            weight: weights[j],
            threshold_weight: need,
            weight_ratio: ratio,
            loss_threshold: d.threshold,
            analytic_loss: inst.analytic_loss(&ps.routes[j], j)?,
        });
    }

    let cap_limit = match profile.kind {
        ProfileKind::Exact => Some(1.0),
        ProfileKind::Approx => Some(4.0),
        ProfileKind::Color => None,
    };
    let mut reflectors = Vec::with_capacity(inst.num_reflectors());
    for (i, r) in inst.reflectors.iter().enumerate() {
        let bw = r.bandwidth.filter(|_| bandwidth).map(|_| cap_ratios[i]);
        if let Some(limit) = cap_limit {
            if cap_ratios[i] > limit + RATIO_TOL {
                failures.push(format!(
                    "reflector `{}`: capacity ratio {:.4} above {limit}",
                    r.id, cap_ratios[i]
                ));
            }
        }
        reflectors.push(ReflectorReport {
            id: r.id.clone(),
            fanout: fanout[i],
            fanout_cap: r.fanout,
            fanout_ratio: fanout[i] as f64 / r.fanout as f64,
            bandwidth_ratio: bw,
        });
    }

    let mut colors = Vec::new();
    if inst.colors_enabled {
        let mut counts = std::collections::BTreeMap::new();
        for (j, rs) in ps.routes.iter().enumerate() {
            for &i in rs {
                if let Some(c) = inst.reflectors[i].color {
                    *counts.entry((j, c)).or_insert(0usize) += 1;
                }
            }
        }
        let limit = match profile.kind {
            ProfileKind::Exact => 1,
            ProfileKind::Approx => usize::MAX,
            ProfileKind::Color => COLOR_COPY_BOUND,
        };
        for ((j, c), n) in counts {
            if n > limit {
                failures.push(format!(
                    "sink `{}` gets {n} copies from color {c} (limit {limit})",
                    inst.sinks[j].id
                ));
            }
            colors.push(ColorReport {
                sink: inst.sinks[j].id.clone(),
                color: c,
                copies: n,
            });
        }
    }

    let cost = ps.cost(inst);
    if (cost.total - ps.declared_cost).abs() > COST_TOL * (1.0 + cost.total.abs()) {
        failures.push(format!(
            "recomputed cost {:.6} differs from declared {:.6}",
            cost.total, ps.declared_cost
        ));
    }
    if let Some(b) = profile.cost_bound {
        if cost.total > b + COST_TOL {
            failures.push(format!("cost {:.6} above bound {b:.6}", cost.total));
        }
    }

    Ok(AuditReport {
        profile,
        max_capacity_ratio: cap_ratios.iter().copied().fold(0.0, f64::max),
        max_color_copies: colors.iter().map(|c| c.copies).max().unwrap_or(0),
        sinks,
        reflectors,
        colors,
        cost,
        declared_cost: ps.declared_cost,
        min_weight_ratio,
        pass: failures.is_empty(),
        failures,
    })
}

fn shard_seed(seed: u64, shard: u64) -> u64 {
    let mut x = seed ^ shard.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Empirical loss rate of every sink over `packets` packets.
///
/// Per packet, each first hop `(k, i)` in use is sampled once and shared by
/// all sinks routed through `i`, and each second hop is sampled on its own.
/// A sink loses the packet when every one of its routes drops it; sinks
/// without routes lose everything. Packets are split into fixed shards with
/// seeds derived from `seed`, so the result does not depend on the number of
/// worker threads.
pub fn simulate_all(inst: &Instance, ps: &PathSet, packets: u64, seed: u64) -> Vec<f64> {
    let nd = inst.num_sinks();
    if packets == 0 {
        return vec![1.0; nd];
    }
    let feeds: Vec<(usize, usize, f64)> = ps
        .feeds
        .iter()
        .filter_map(|&(k, i)| inst.src_link(k, i).map(|l| (k, i, l.loss)))
        .collect();
    let feed_index = |k: usize, i: usize| feeds.iter().position(|f| f.0 == k && f.1 == i);
    // Per sink: (feed index, second-hop loss) of each route.
    let routes: Vec<Vec<(usize, f64)>> = ps
        .routes
        .iter()
        .enumerate()
        .map(|(j, rs)| {
            rs.iter()
                .filter_map(|&i| {
                    let f = feed_index(inst.sinks[j].stream, i)?;
                    Some((f, inst.refl_link(i, j)?.loss))
                })
                .collect()
        })
        .collect();
    let shards = packets.div_ceil(SHARD_PACKETS);
    let lost = (0..shards)
        .into_par_iter()
        .map(|s| {
            let n = SHARD_PACKETS.min(packets - s * SHARD_PACKETS);
            let mut rng = ChaCha8Rng::seed_from_u64(shard_seed(seed, s));
            let mut lost = vec![0u64; nd];
            let mut first = vec![false; feeds.len()];
            for _ in 0..n {
                for (f, slot) in feeds.iter().zip(first.iter_mut()) {
                    *slot = rng.gen::<f64>() < f.2;
                }
                for (j, rs) in routes.iter().enumerate() {
                    let mut all_lost = true;
                    for &(f, p) in rs {
                        let second = rng.gen::<f64>() < p;
                        if !(first[f] || second) {
                            all_lost = false;
                        }
                    }
                    if all_lost {
                        lost[j] += 1;
                    }
                }
            }
            lost
        })
        .reduce(
            || vec![0u64; nd],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    lost.into_iter()
        .map(|l| l as f64 / packets as f64)
        .collect()
}

/// Empirical loss rate at one sink; see [`simulate_all`].
pub fn simulate_loss(inst: &Instance, ps: &PathSet, sink: usize, packets: u64, seed: u64) -> f64 {
    if ps.routes[sink].is_empty() {
        eprintln!(
            "warning: sink `{}` has no routes; every packet is lost",
            inst.sinks[sink].id
        );
        return 1.0;
    }
    let mut only = ps.clone();
    for (j, rs) in only.routes.iter_mut().enumerate() {
        if j != sink {
            rs.clear();
        }
    }
    simulate_all(inst, &only, packets, seed)[sink]
}
