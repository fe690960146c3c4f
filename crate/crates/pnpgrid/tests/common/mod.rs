//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use pnpgrid::design::{design_all, synthesize_all, DesignOptions};
use pnpgrid::io::{controller_set, read_grid, read_scenario, ScenarioSpec, StoredController};
use pnpgrid::synthesis::{ControllerGains, LmiWeights, SynthesisOptions};
use pnpgrid::{DguId, DguParams, GridGraph, LineParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn scenario1_grid() -> GridGraph {
    read_grid(&configs().join("scenario1_grid.toml")).unwrap()
}

pub fn scenario2_grid() -> GridGraph {
    read_grid(&configs().join("scenario2_grid.toml")).unwrap()
}

pub fn scenario(name: &str) -> ScenarioSpec {
    read_scenario(&configs().join(name)).unwrap()
}

pub fn gains(g: &GridGraph) -> BTreeMap<DguId, ControllerGains> {
    synthesize_all(g, &LmiWeights::default(), &SynthesisOptions::default()).unwrap()
}

pub fn designed(
    g: &GridGraph,
    k: &BTreeMap<DguId, ControllerGains>,
    d: &DesignOptions,
) -> BTreeMap<DguId, StoredController> {
    design_all(g, k, d).unwrap()
}

pub fn single_set(
    name: &str,
    s: &BTreeMap<DguId, StoredController>,
) -> BTreeMap<String, pnpgrid::sim::ControllerSet> {
    BTreeMap::from([(name.to_string(), controller_set(s))])
}

pub fn random_dgu(rng: &mut ChaCha8Rng) -> DguParams {
    DguParams::new(
        rng.random_range(0.05..1.0),
        rng.random_range(0.5e-3..5e-3),
        rng.random_range(0.5e-3..5e-3),
        100.0,
        Some(rng.random_range(2.0..20.0)),
    )
    .unwrap()
}

pub fn random_line(rng: &mut ChaCha8Rng) -> LineParams {
    LineParams::new(rng.random_range(0.02..0.2), rng.random_range(0.5e-6..5e-6)).unwrap()
}

/// Connected grid with `n` DGUs: a random tree plus extra edges.
pub fn random_grid(rng: &mut ChaCha8Rng, n: DguId) -> GridGraph {
    let mut g = GridGraph::new();
    for id in 1..=n {
        g.add_dgu(id, random_dgu(rng)).unwrap();
        if id > 1 {
            let j = rng.random_range(1..id);
            g.add_line(j, id, random_line(rng)).unwrap();
        }
    }
    for i in 1..=n {
        for j in i + 1..=n {
            if g.line(i, j).is_none() && rng.random_bool(0.2) {
                g.add_line(i, j, random_line(rng)).unwrap();
            }
        }
    }
    g
}
