#![allow(dead_code)]

use overlay_core::model::{normalize, RawEdge, RawInstance, RawReflector, RawSink, RawSource};
use overlay_core::solution::PathSet;
use overlay_core::Instance;

/// Loss of a sink's routes computed straight from link losses: routes
/// through distinct reflectors fail independently.
pub fn oracle_loss(inst: &Instance, routes: &[usize], sink: usize) -> f64 {
    let k = inst.sinks[sink].stream;
    routes
        .iter()
        .map(|&i| {
            let a = inst.src_link(k, i).expect("first hop").loss;
            let b = inst.refl_link(i, sink).expect("second hop").loss;
            1.0 - (1.0 - a) * (1.0 - b)
        })
        .product()
}

/// Total cost of a plan from the raw link and reflector costs: open
/// reflectors, fed (stream, reflector) pairs and second hops, or both hops
/// per route when reflectors are free.
pub fn oracle_cost(inst: &Instance, ps: &PathSet) -> f64 {
    use overlay_core::CostMode;
    let mut total = 0.0;
    for (j, rs) in ps.routes.iter().enumerate() {
        let k = inst.sinks[j].stream;
        for &i in rs {
            total += inst.refl_link(i, j).unwrap().cost;
            if inst.mode == CostMode::Transmission {
                total += inst.src_link(k, i).unwrap().cost;
            }
        }
    }
    if inst.mode == CostMode::Full {
        total += ps
            .feeds
            .iter()
            .map(|&(k, i)| inst.src_link(k, i).unwrap().cost)
            .sum::<f64>();
        total += ps
            .reflectors
            .iter()
            .map(|&i| inst.reflectors[i].cost)
            .sum::<f64>();
    }
    total
}

pub fn edge(from: &str, to: &str, loss: f64, cost: f64) -> RawEdge {
    RawEdge {
        from: from.into(),
        to: to.into(),
        loss,
        cost,
    }
}

pub fn source(id: &str) -> RawSource {
    RawSource {
        id: id.into(),
        streams: vec![],
        bitrate: None,
    }
}

pub fn reflector(id: &str, cost: f64, fanout: u32) -> RawReflector {
    RawReflector {
        id: id.into(),
        cost,
        fanout,
        bandwidth: None,
        color: None,
    }
}

pub fn sink(id: &str, stream: &str, threshold: f64) -> RawSink {
    RawSink {
        id: id.into(),
        stream: Some(stream.into()),
        threshold: Some(threshold),
        demands: vec![],
    }
}

/// One source, one sink and a reflector per entry of `paths`, each given
/// as `(first-hop loss, second-hop loss)`.
pub fn star(paths: &[(f64, f64)], threshold: f64) -> Instance {
    let raw = RawInstance {
        sources: vec![source("s")],
        reflectors: (0..paths.len())
            .map(|i| reflector(&format!("r{i}"), 1.0, 1))
            .collect(),
        sinks: vec![sink("d", "s", threshold)],
        src_edges: paths
            .iter()
            .enumerate()
            .map(|(i, p)| edge("s", &format!("r{i}"), p.0, 1.0))
            .collect(),
        refl_edges: paths
            .iter()
            .enumerate()
            .map(|(i, p)| edge(&format!("r{i}"), "d", p.1, 1.0))
            .collect(),
        mode: None,
        colors_enabled: false,
        bandwidth_enabled: false,
    };
    normalize(&raw).expect("valid star instance")
}

/// Smallest number of sets covering the universe, by enumeration.
pub fn brute_force_cover(universe: usize, sets: &[Vec<usize>]) -> usize {
    (1u32..1 << sets.len())
        .filter(|mask| {
            (0..universe)
                .all(|e| (0..sets.len()).any(|i| mask & (1 << i) != 0 && sets[i].contains(&e)))
        })
        .map(|mask| mask.count_ones() as usize)
        .min()
        .expect("some cover exists")
}
