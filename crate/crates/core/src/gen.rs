//! Seeded synthetic instances and set-cover reductions.
//!
//! Loss regimes are synthetic stand-ins for measured traces:
//! low `U[0, 0.01]`, avg `U[0.005, 0.05]`, high `U[0.02, 0.20]` per link.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{build_model, solve_lp, ModeOptions};
use crate::model::{
    combined_loss, normalize, Instance, ModelError, RawEdge, RawInstance, RawReflector, RawSink,
    RawSource,
};

pub const MAX_ATTEMPTS: u32 = 100;
/// Smallest loss threshold the generator emits.
const MIN_PHI: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid sizes: {0}")]
    Sizes(String),
    #[error(
        "no feasible instance in {attempts} draws; try a higher density, a lower-loss regime \
         or more reflectors"
    )]
    Infeasible { attempts: u32 },
    #[error("element {element} is in no set; the reduction would be infeasible")]
    Uncovered { element: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    Avg,
    High,
}

impl Regime {
    pub fn loss_range(self) -> (f64, f64) {
        match self {
            Regime::Low => (0.0, 0.01),
            Regime::Avg => (0.005, 0.05),
            Regime::High => (0.02, 0.20),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Low => "low",
            Regime::Avg => "avg",
            Regime::High => "high",
        })
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Regime::Low),
            "avg" => Ok(Regime::Avg),
            "high" => Ok(Regime::High),
            other => Err(format!(
                "unknown regime `{other}` (expected low, avg or high)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub sources: usize,
    pub reflectors: usize,
    pub sinks: usize,
    pub regime: Regime,
    pub seed: u64,
    /// Probability that each potential link exists.
    pub density: f64,
    /// Number of reflector colors; `None` leaves colors off.
    pub colors: Option<u32>,
    /// Gives every source bitrate 1 and every reflector a bandwidth cap.
    pub bandwidth: bool,
}

impl GenConfig {
    pub fn new(sizes: (usize, usize, usize), regime: Regime, seed: u64) -> Self {
        GenConfig {
            sources: sizes.0,
            reflectors: sizes.1,
            sinks: sizes.2,
            regime,
            seed,
            density: 1.0,
            colors: None,
            bandwidth: false,
        }
    }
}

fn mix(seed: u64, attempt: u32) -> u64 {
    let mut x = seed ^ (attempt as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x = (x ^ (x >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    x ^ (x >> 33)
}

/// Draws a random instance whose LP relaxation is feasible.
///
/// Fan-out caps are uniform integers in `[2, max(2, ceil(2|D|/|R|))]`. Each
/// sink's threshold is the loss of 1 to 3 randomly chosen available paths
/// (of distinct colors when colors are on), loosened by up to 20%, so every
/// sink can be served by at most three paths when capacity allows.
pub fn gen_random(cfg: &GenConfig) -> Result<Instance, GenError> {
    let (ns, nr, nd) = (cfg.sources, cfg.reflectors, cfg.sinks);
    if ns == 0 || nr == 0 || nd == 0 {
        return Err(GenError::Sizes(
            "every layer needs at least one node".into(),
        ));
    }
    if ns > nd {
        return Err(GenError::Sizes(format!("{ns} sources but only {nd} sinks")));
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(GenError::Sizes(format!(
            "density {} outside (0, 1]",
            cfg.density
        )));
    }
    if cfg.colors == Some(0) {
        return Err(GenError::Sizes("zero colors".into()));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, attempt));
        let inst = normalize(&draw(cfg, &mut rng))?;
        let model = match build_model(&inst, ModeOptions::from_instance(&inst)) {
            Ok(m) => m,
            Err(_) => continue,
        };
        if solve_lp(&model).is_ok() {
            return Ok(inst);
        }
    }
    Err(GenError::Infeasible {
        attempts: MAX_ATTEMPTS,
    })
}

#[allow(clippy::needless_range_loop)]
fn draw(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> RawInstance {
    let (ns, nr, nd) = (cfg.sources, cfg.reflectors, cfg.sinks);
    let (lo, hi) = cfg.regime.loss_range();
    let fmax = ((2 * nd).div_ceil(nr)).max(2) as u32;
    let loss = |rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..hi) } else { lo };

    let reflectors: Vec<RawReflector> = (0..nr)
        .map(|i| {
            let fanout = rng.gen_range(2..=fmax);
            RawReflector {
                id: format!("r{i}"),
                cost: rng.gen_range(5.0..50.0),
                fanout,
                bandwidth: cfg
                    .bandwidth
                    .then(|| fanout as f64 * rng.gen_range(0.75..1.5)),
                color: cfg.colors.map(|m| rng.gen_range(1..=m)),
            }
        })
        .collect();
    let stream_of = |j: usize| j % ns;

    let mut src: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None; nr]; ns];
    let mut refl: Vec<Vec<Option<(f64, f64)>>> = vec![vec![None; nd]; nr];
    for row in src.iter_mut() {
        for cell in row.iter_mut() {
            if rng.gen::<f64>() < cfg.density {
                *cell = Some((loss(rng), rng.gen_range(1.0..10.0)));
            }
        }
    }
    for row in refl.iter_mut() {
        for cell in row.iter_mut() {
            if rng.gen::<f64>() < cfg.density {
                *cell = Some((loss(rng), rng.gen_range(1.0..10.0)));
            }
        }
    }
    // Every sink keeps at least one complete path.
    for j in 0..nd {
        let k = stream_of(j);
        if !(0..nr).any(|i| src[k][i].is_some() && refl[i][j].is_some()) {
            let i = rng.gen_range(0..nr);
            if src[k][i].is_none() {
                src[k][i] = Some((loss(rng), rng.gen_range(1.0..10.0)));
            }
            if refl[i][j].is_none() {
                refl[i][j] = Some((loss(rng), rng.gen_range(1.0..10.0)));
            }
        }
    }

    let mut sinks = Vec::with_capacity(nd);
    for j in 0..nd {
        let k = stream_of(j);
        let mut avail: Vec<usize> = (0..nr)
            .filter(|&i| src[k][i].is_some() && refl[i][j].is_some())
            .collect();
        avail.shuffle(rng);
        let want = match rng.gen::<f64>() {
            u if u < 0.5 => 1,
            u if u < 0.8 => 2,
            _ => 3,
        };
        let mut chosen: Vec<usize> = Vec::new();
        let mut used_colors = Vec::new();
        for &i in &avail {
            if chosen.len() == want {
                break;
            }
            if let Some(c) = reflectors[i].color {
                if used_colors.contains(&c) {
                    continue;
                }
                used_colors.push(c);
            }
            chosen.push(i);
        }
        let phi: f64 = chosen
            .iter()
            .map(|&i| combined_loss(src[k][i].unwrap().0, refl[i][j].unwrap().0))
            .product::<f64>()
            * rng.gen_range(1.0..1.2);
        sinks.push(RawSink {
            id: format!("d{j}"),
            stream: Some(format!("s{k}")),
            threshold: Some(phi.clamp(MIN_PHI, 1.0)),
            demands: vec![],
        });
    }

    let edge = |from: String, to: String, (loss, cost): (f64, f64)| RawEdge {
        from,
        to,
        loss,
        cost,
    };
    RawInstance {
        sources: (0..ns)
            .map(|k| RawSource {
                id: format!("s{k}"),
                streams: vec![],
                bitrate: cfg.bandwidth.then_some(1.0),
            })
            .collect(),
        reflectors,
        sinks,
        src_edges: (0..ns)
            .flat_map(|k| (0..nr).map(move |i| (k, i)))
            .filter_map(|(k, i)| src[k][i].map(|l| edge(format!("s{k}"), format!("r{i}"), l)))
            .collect(),
        refl_edges: (0..nr)
            .flat_map(|i| (0..nd).map(move |j| (i, j)))
            .filter_map(|(i, j)| refl[i][j].map(|l| edge(format!("r{i}"), format!("d{j}"), l)))
            .collect(),
        mode: None,
        colors_enabled: cfg.colors.is_some(),
        bandwidth_enabled: cfg.bandwidth,
    }
}

/// Set cover as routing: one source, a reflector per set (cost 1, no
/// effective fan-out limit), a sink per element needing weight 1, and a
/// loss-1/2 link from each set to each of its elements. All link costs are
/// zero, so the optimum cost is the minimum number of sets.
pub fn gen_setcover(universe: usize, sets: &[Vec<usize>]) -> Result<Instance, GenError> {
    if universe == 0 || sets.is_empty() {
        return Err(GenError::Sizes("empty universe or no sets".into()));
    }
    for e in 0..universe {
        if !sets.iter().any(|s| s.contains(&e)) {
            return Err(GenError::Uncovered { element: e });
        }
    }
    if let Some(e) = sets.iter().flatten().find(|&&e| e >= universe) {
        return Err(GenError::Sizes(format!("element {e} outside the universe")));
    }
    let edge = |from: String, to: String, loss: f64| RawEdge {
        from,
        to,
        loss,
        cost: 0.0,
    };
    let raw = RawInstance {
        sources: vec![RawSource {
            id: "s".into(),
            streams: vec![],
            bitrate: None,
        }],
        reflectors: (0..sets.len())
            .map(|i| RawReflector {
                id: format!("set{i}"),
                cost: 1.0,
                fanout: universe as u32,
                bandwidth: None,
                color: None,
            })
            .collect(),
        sinks: (0..universe)
            .map(|e| RawSink {
                id: format!("e{e}"),
                stream: Some("s".into()),
                threshold: Some(0.5),
                demands: vec![],
            })
            .collect(),
        src_edges: (0..sets.len())
            .map(|i| edge("s".into(), format!("set{i}"), 0.0))
            .collect(),
        refl_edges: sets
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                s.into_iter()
                    .map(move |e| edge(format!("set{i}"), format!("e{e}"), 0.5))
            })
            .collect(),
        mode: None,
        colors_enabled: false,
        bandwidth_enabled: false,
    };
    Ok(normalize(&raw)?)
}

/// Random covering family: each set takes each element with probability
/// 0.4, then uncovered elements join a random set.
pub fn random_setcover(universe: usize, num_sets: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets: Vec<Vec<usize>> = (0..num_sets)
        .map(|_| (0..universe).filter(|_| rng.gen::<f64>() < 0.4).collect())
        .collect();
    for e in 0..universe {
        if !sets.iter().any(|s| s.contains(&e)) {
            let i = rng.gen_range(0..num_sets);
            sets[i].push(e);
            sets[i].sort_unstable();
        }
    }
    sets
}
