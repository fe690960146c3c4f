//! Reference prefilters and load-current compensators on top of synthesized gains.

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::{
    band_limit, closed_loop_reference_tf, design_disturbance_compensator, design_prefilter,
    desired_tf_template, Rejection,
};
use crate::error::{invalid, Error, Result};
use crate::grid::{AugmentedDgu, DguId, GridGraph};
use crate::io::{controller_set, read_gains, ScenarioSpec, SetSource, StoredController};
use crate::sim::{ControllerSet, DguController, Scenario};
use crate::synthesis::{synthesize_grid, ControllerGains, LmiWeights, SynthesisOptions};

/// Optional design stage run after the gains are known.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    /// Bandwidth of the Butterworth reference model; no prefilter when `None`.
    pub prefilter_hz: Option<f64>,
    pub prefilter_order: usize,
    pub compensator: bool,
    /// Bandwidth used to place the low-pass poles of an improper compensator.
    pub compensator_hz: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            prefilter_hz: None,
            prefilter_order: 3,
            compensator: false,
            compensator_hz: 100.0,
        }
    }
}

fn rejected(what: &str, id: DguId, r: Rejection) -> Error {
    Error::Numerical(format!("{what} for DGU {id} rejected: {r}"))
}

/// Controller of DGU `id` with the requested prefilter and compensator.
pub fn design_controller(
    id: DguId,
    aug: &AugmentedDgu,
    gains: &ControllerGains,
    opts: &DesignOptions,
) -> Result<StoredController> {
    let prefilter = match opts.prefilter_hz {
        None => None,
        Some(hz) => {
            let f = closed_loop_reference_tf(aug, gains)?;
            let target = desired_tf_template(hz, opts.prefilter_order)?;
            Some(design_prefilter(&f, &target).map_err(|r| rejected("prefilter", id, r))?)
        }
    };
    let (compensator, band_limit_pole_hz) = if opts.compensator {
        let (gd, gu) = crate::analysis::disturbance_tfs(aug, gains)?;
        match design_disturbance_compensator(&gd, &gu) {
            Ok(tf) => (Some(tf), None),
            Err(Rejection::Improper { tf, .. }) => {
                let b = band_limit(&tf, opts.compensator_hz)?;
                (Some(b.tf), Some(b.pole_hz))
            }
            Err(r) => return Err(rejected("compensator", id, r)),
        }
    } else {
        (None, None)
    };
    Ok(StoredController {
        controller: DguController {
            gains: gains.clone(),
            prefilter,
            compensator,
        },
        band_limit_pole_hz,
    })
}

/// Runs [`design_controller`] for every DGU of `gains` on the topology `g`.
pub fn design_all(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
    opts: &DesignOptions,
) -> Result<BTreeMap<DguId, StoredController>> {
    if !(opts.compensator_hz.is_finite() && opts.compensator_hz > 0.0) {
        return Err(invalid("compensator bandwidth must be positive"));
    }
    gains
        .iter()
        .map(|(&id, k)| {
            Ok((
                id,
                design_controller(id, &AugmentedDgu::for_dgu(g, id)?, k, opts)?,
            ))
        })
        .collect()
}

/// Gains for every DGU of `g`, failing on the first DGU without a solution.
pub fn synthesize_all(
    g: &GridGraph,
    w: &LmiWeights,
    opts: &SynthesisOptions,
) -> Result<BTreeMap<DguId, ControllerGains>> {
    synthesize_grid(g, w, opts)
        .into_iter()
        .map(|(id, r)| match r {
            Ok(k) => Ok((id, k)),
            Err(e) => Err(prefix(id, e.into())),
        })
        .collect()
}

fn prefix(id: DguId, e: Error) -> Error {
    match e {
        Error::Infeasible(m) => Error::Infeasible(format!("DGU {id}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("DGU {id}: {m}")),
        Error::InvalidInput(m) => Error::InvalidInput(format!("DGU {id}: {m}")),
        other => other,
    }
}

/// Topology a scenario starts from: open lines and lines of offline DGUs removed.
pub fn initial_topology(g: &GridGraph, sc: &Scenario) -> Result<GridGraph> {
    let mut out = g.clone();
    let lines: Vec<(DguId, DguId)> = g.edges().map(|(i, j, _)| (i, j)).collect();
    for (i, j) in lines {
        if sc.open_lines.contains(&(i, j)) || sc.offline.contains(&i) || sc.offline.contains(&j) {
            out.remove_line(i, j)?;
        }
    }
    Ok(out)
}

/// Builds the named controller sets of a scenario.
///
/// `gains` backs sets sourced from the command line; `base` resolves file
/// paths relative to the scenario.
pub fn resolve_sets(
    g: &GridGraph,
    spec: &ScenarioSpec,
    gains: Option<&BTreeMap<DguId, StoredController>>,
    base: &Path,
    w: &LmiWeights,
    opts: &SynthesisOptions,
) -> Result<BTreeMap<String, ControllerSet>> {
    let mut out = BTreeMap::new();
    for (name, src) in &spec.sets {
        let set = match src {
            SetSource::Gains => {
                let s = gains.ok_or_else(|| {
                    invalid(format!("controller set `{name}` needs a gains file"))
                })?;
                controller_set(s)
            }
            SetSource::File { path } => controller_set(&read_gains(&base.join(path))?),
            SetSource::SynthesizeInitial {
                prefilter_hz,
                compensator,
            } => {
                let topo = initial_topology(g, &spec.scenario)?;
                let k = synthesize_all(&topo, w, opts)?;
                let d = DesignOptions {
                    prefilter_hz: *prefilter_hz,
                    compensator: *compensator,
                    ..Default::default()
                };
                controller_set(&design_all(&topo, &k, &d)?)
            }
        };
        out.insert(name.clone(), set);
    }
    Ok(out)
}
