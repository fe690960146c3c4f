//! TOML formats for grids, gain sets, scenarios and PnP decisions.
//!
//! Grid files hold `[dgu.<id>]` and `[line.<i>-<j>]` tables whose values are
//! numbers or strings with engineering suffixes (`"2.2 mF"`). Floats are
//! written in shortest round-trip form, so every file the crate writes reads
//! back to identical values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{Poly, RationalTf};
use crate::error::{invalid, Error, Result};
use crate::grid::{DguId, DguParams, GridGraph, LineParams};
use crate::pnp::{PlugRequest, PnpDecision};
use crate::sim::{ControllerSet, DguController, Event, EventKind, Scenario};
use crate::synthesis::{CertificateReport, ControllerGains, GlobalCertificate, SolverMeta};
use crate::units::parse_quantity;

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
enum Quantity {
    Num(f64),
    Text(String),
}

impl Quantity {
    fn value(&self) -> Result<f64> {
        match self {
            Quantity::Num(x) => Ok(*x),
            Quantity::Text(s) => parse_quantity(s),
        }
    }
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Parse(e.to_string()))
}

fn parse_id(s: &str) -> Result<DguId> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a DGU id: {s:?}")))
}

/// Parses `"i-j"` into an ordered pair.
pub fn parse_edge(s: &str) -> Result<(DguId, DguId)> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| Error::Parse(format!("not an edge `i-j`: {s:?}")))?;
    let (i, j) = (parse_id(a)?, parse_id(b)?);
    Ok((i.min(j), i.max(j)))
}

fn edge_key(i: DguId, j: DguId) -> String {
    format!("{i}-{j}")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DguEntry {
    r_t: Quantity,
    l_t: Quantity,
    c_t: Quantity,
    v_dc: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    load_r: Option<Quantity>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct LineEntry {
    r: Quantity,
    l: Quantity,
}

#[derive(Debug, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    dgu: BTreeMap<String, DguEntry>,
    #[serde(default)]
    line: BTreeMap<String, LineEntry>,
}

pub fn parse_grid(text: &str) -> Result<GridGraph> {
    let f: GridFile = parse_toml(text, "grid file")?;
    let mut g = GridGraph::new();
    let mut dgus: Vec<(DguId, &DguEntry)> = f
        .dgu
        .iter()
        .map(|(k, v)| Ok((parse_id(k)?, v)))
        .collect::<Result<_>>()?;
    dgus.sort_by_key(|(k, _)| *k);
    for (id, e) in dgus {
        let load = e.load_r.as_ref().map(Quantity::value).transpose()?;
        g.add_dgu(
            id,
            DguParams::new(
                e.r_t.value()?,
                e.l_t.value()?,
                e.c_t.value()?,
                e.v_dc.value()?,
                load,
            )?,
        )?;
    }
    for (k, e) in &f.line {
        let (i, j) = parse_edge(k)?;
        g.add_line(i, j, LineParams::new(e.r.value()?, e.l.value()?)?)?;
    }
    Ok(g)
}

pub fn read_grid(path: &Path) -> Result<GridGraph> {
    parse_grid(&read(path)?)
}

pub fn grid_to_toml(g: &GridGraph) -> Result<String> {
    let f = GridFile {
        dgu: g
            .dgus()
            .map(|(id, p)| {
                (
                    id.to_string(),
                    DguEntry {
                        r_t: Quantity::Num(p.r_t),
                        l_t: Quantity::Num(p.l_t),
                        c_t: Quantity::Num(p.c_t),
                        v_dc: Quantity::Num(p.v_dc),
                        load_r: p.load_r.map(Quantity::Num),
                    },
                )
            })
            .collect(),
        line: g
            .edges()
            .map(|(i, j, l)| {
                (
                    edge_key(i, j),
                    LineEntry {
                        r: Quantity::Num(l.r),
                        l: Quantity::Num(l.l),
                    },
                )
            })
            .collect(),
    };
    to_toml(&f)
}

#[derive(Debug, Deserialize, Serialize, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
struct TfEntry {
    num: Vec<f64>,
    den: Vec<f64>,
    /// Set when low-pass factors were appended to make the design proper.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    band_limit_pole_hz: Option<f64>,
}

impl TfEntry {
    fn from_tf(tf: &RationalTf, pole: Option<f64>) -> Self {
        Self {
            num: tf.num.coeffs().to_vec(),
            den: tf.den.coeffs().to_vec(),
            band_limit_pole_hz: pole,
        }
    }

    fn to_tf(&self) -> Result<RationalTf> {
        let den = Poly::new(self.den.clone());
        if den.is_zero() {
            return Err(Error::Parse(
                "transfer function with zero denominator".into(),
            ));
        }
        Ok(RationalTf::new(Poly::new(self.num.clone()), den))
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GainsEntry {
    k: [f64; 3],
    p: [[f64; 3]; 3],
    eta: f64,
    gamma: f64,
    beta: f64,
    delta: f64,
    solver: String,
    status: String,
    structured: bool,
    time_scale: f64,
    objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prefilter: Option<TfEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compensator: Option<TfEntry>,
}

#[derive(Debug, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
struct Meta {
    tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generated_unix: Option<u64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GainsFile {
    meta: Meta,
    #[serde(default)]
    dgu: BTreeMap<String, GainsEntry>,
}

/// Controller of one DGU together with the pole of a band-limited compensator, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredController {
    pub controller: DguController,
    pub band_limit_pole_hz: Option<f64>,
}

fn meta(timestamp: bool) -> Meta {
    let generated_unix = timestamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    Meta {
        tool: format!("pnpgrid {}", env!("CARGO_PKG_VERSION")),
        generated_unix,
    }
}

pub fn gains_to_toml(set: &BTreeMap<DguId, StoredController>, timestamp: bool) -> Result<String> {
    let dgu = set
        .iter()
        .map(|(id, s)| {
            let g = &s.controller.gains;
            let mut p = [[0.0; 3]; 3];
            for (r, row) in p.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = g.p[(r, c)];
                }
            }
            let entry = GainsEntry {
                k: g.k,
                p,
                eta: g.eta,
                gamma: g.gamma,
                beta: g.beta,
                delta: g.delta,
                solver: g.meta.solver.clone(),
                status: g.meta.status.clone(),
                structured: g.meta.structured,
                time_scale: g.meta.time_scale,
                objective: g.meta.objective,
                prefilter: s
                    .controller
                    .prefilter
                    .as_ref()
                    .map(|t| TfEntry::from_tf(t, None)),
                compensator: s
                    .controller
                    .compensator
                    .as_ref()
                    .map(|t| TfEntry::from_tf(t, s.band_limit_pole_hz)),
            };
            (id.to_string(), entry)
        })
        .collect();
    to_toml(&GainsFile {
        meta: meta(timestamp),
        dgu,
    })
}

pub fn parse_gains(text: &str) -> Result<BTreeMap<DguId, StoredController>> {
    let f: GainsFile = parse_toml(text, "gains file")?;
    f.dgu
        .iter()
        .map(|(k, e)| {
            let id = parse_id(k)?;
            let p = nalgebra::DMatrix::from_fn(3, 3, |r, c| e.p[r][c]);
            let gains = ControllerGains {
                k: e.k,
                p,
                eta: e.eta,
                gamma: e.gamma,
                beta: e.beta,
                delta: e.delta,
                meta: SolverMeta {
                    solver: e.solver.clone(),
                    status: e.status.clone(),
                    structured: e.structured,
                    time_scale: e.time_scale,
                    objective: e.objective,
                },
            };
            let controller = DguController {
                gains,
                prefilter: e.prefilter.as_ref().map(TfEntry::to_tf).transpose()?,
                compensator: e.compensator.as_ref().map(TfEntry::to_tf).transpose()?,
            };
            let band_limit_pole_hz = e.compensator.as_ref().and_then(|c| c.band_limit_pole_hz);
            Ok((
                id,
                StoredController {
                    controller,
                    band_limit_pole_hz,
                },
            ))
        })
        .collect()
}

pub fn read_gains(path: &Path) -> Result<BTreeMap<DguId, StoredController>> {
    parse_gains(&read(path)?)
}

/// Plain controller set from stored controllers.
pub fn controller_set(stored: &BTreeMap<DguId, StoredController>) -> ControllerSet {
    stored
        .iter()
        .map(|(k, v)| (*k, v.controller.clone()))
        .collect()
}

/// How a scenario's controller set is obtained.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetSource {
    /// The gains file passed on the command line.
    Gains,
    /// A gains file relative to the scenario file.
    File { path: PathBuf },
    /// Synthesized for the scenario's initial topology.
    SynthesizeInitial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prefilter_hz: Option<f64>,
        #[serde(default)]
        compensator: bool,
    },
}

#[derive(Debug, Deserialize, Serialize, Clone, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum EventFile {
    Connect {
        t: f64,
        i: DguId,
        j: DguId,
    },
    Disconnect {
        t: f64,
        i: DguId,
        j: DguId,
    },
    LoadStep {
        t: f64,
        dgu: DguId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<Quantity>,
    },
    RefStep {
        t: f64,
        dgu: DguId,
        v: f64,
    },
    PlugIn {
        t: f64,
        dgu: DguId,
    },
    Unplug {
        t: f64,
        dgu: DguId,
    },
    Switch {
        t: f64,
        dgu: DguId,
        set: String,
        #[serde(default = "yes")]
        bumpless: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    duration: f64,
    #[serde(default)]
    refs: BTreeMap<String, f64>,
    #[serde(default)]
    open_lines: Vec<String>,
    #[serde(default)]
    offline: Vec<DguId>,
    #[serde(default = "default_set")]
    initial_set: String,
    #[serde(default)]
    sets: BTreeMap<String, SetSource>,
    #[serde(default, rename = "event")]
    events: Vec<EventFile>,
}

fn default_set() -> String {
    "main".into()
}

/// A scenario with the sources of its controller sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub sets: BTreeMap<String, SetSource>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let f: ScenarioFile = parse_toml(text, "scenario file")?;
    let refs = f
        .refs
        .iter()
        .map(|(k, v)| Ok((parse_id(k)?, *v)))
        .collect::<Result<_>>()?;
    let open_lines = f
        .open_lines
        .iter()
        .map(|s| parse_edge(s))
        .collect::<Result<_>>()?;
    let mut events = Vec::new();
    for e in &f.events {
        let (t, kind) = match e {
            EventFile::Connect { t, i, j } => (*t, EventKind::Connect { i: *i, j: *j }),
            EventFile::Disconnect { t, i, j } => (*t, EventKind::Disconnect { i: *i, j: *j }),
            EventFile::LoadStep { t, dgu, r } => (
                *t,
                EventKind::LoadStep {
                    dgu: *dgu,
                    r: r.as_ref().map(Quantity::value).transpose()?,
                },
            ),
            EventFile::RefStep { t, dgu, v } => (*t, EventKind::RefStep { dgu: *dgu, v: *v }),
            EventFile::PlugIn { t, dgu } => (*t, EventKind::PlugIn { dgu: *dgu }),
            EventFile::Unplug { t, dgu } => (*t, EventKind::Unplug { dgu: *dgu }),
            EventFile::Switch {
                t,
                dgu,
                set,
                bumpless,
            } => (
                *t,
                EventKind::SwitchController {
                    dgu: *dgu,
                    set: set.clone(),
                    bumpless: *bumpless,
                },
            ),
        };
        events.push(Event { t, kind });
    }
    let mut sets = f.sets;
    sets.entry(f.initial_set.clone())
        .or_insert(SetSource::Gains);
    for e in &events {
        if let EventKind::SwitchController { set, .. } = &e.kind {
            if !sets.contains_key(set) {
                return Err(invalid(format!(
                    "event refers to undeclared controller set `{set}`"
                )));
            }
        }
    }
    let scenario = Scenario {
        duration: f.duration,
        refs,
        open_lines,
        offline: f.offline.into_iter().collect(),
        initial_set: f.initial_set,
        events,
    };
    Ok(ScenarioSpec { scenario, sets })
}

pub fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    parse_scenario(&read(path)?)
}

pub fn scenario_to_toml(spec: &ScenarioSpec) -> Result<String> {
    let s = &spec.scenario;
    let events = s
        .events
        .iter()
        .map(|e| match &e.kind {
            EventKind::Connect { i, j } => EventFile::Connect {
                t: e.t,
                i: *i,
                j: *j,
            },
            EventKind::Disconnect { i, j } => EventFile::Disconnect {
                t: e.t,
                i: *i,
                j: *j,
            },
            EventKind::LoadStep { dgu, r } => EventFile::LoadStep {
                t: e.t,
                dgu: *dgu,
                r: r.map(Quantity::Num),
            },
            EventKind::RefStep { dgu, v } => EventFile::RefStep {
                t: e.t,
                dgu: *dgu,
                v: *v,
            },
            EventKind::PlugIn { dgu } => EventFile::PlugIn { t: e.t, dgu: *dgu },
            EventKind::Unplug { dgu } => EventFile::Unplug { t: e.t, dgu: *dgu },
            EventKind::SwitchController { dgu, set, bumpless } => EventFile::Switch {
                t: e.t,
                dgu: *dgu,
                set: set.clone(),
                bumpless: *bumpless,
            },
        })
        .collect();
    to_toml(&ScenarioFile {
        duration: s.duration,
        refs: s.refs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        open_lines: s.open_lines.iter().map(|&(i, j)| edge_key(i, j)).collect(),
        offline: s.offline.iter().copied().collect(),
        initial_set: s.initial_set.clone(),
        sets: spec.sets.clone(),
        events,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CertificateSummary {
    pub valid: bool,
    pub strict_lyapunov: bool,
    pub semidefinite_lyapunov_observable: bool,
    pub structure: bool,
    pub gain_bound: bool,
    pub hurwitz: bool,
    pub lyapunov_max_eigenvalue: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GlobalSummary {
    pub spectral_ok: bool,
    pub max_real_part: f64,
    pub lyapunov_max_eigenvalue: f64,
    pub term_a_max_eigenvalue: f64,
    pub term_b_max_abs: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DenialEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgu: Option<DguId>,
    pub reason: String,
}

/// Structured record of a PnP decision.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DecisionFile {
    pub request: String,
    pub target: DguId,
    pub allowed: bool,
    pub retune_set: BTreeSet<DguId>,
    pub kept: BTreeSet<DguId>,
    pub retuned: BTreeSet<DguId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub denial: Vec<DenialEntry>,
    #[serde(default)]
    pub certificate: BTreeMap<String, CertificateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GlobalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption2_worst_ratio: Option<f64>,
}

pub fn decision_record(d: &PnpDecision) -> DecisionFile {
    let (request, target) = match &d.request {
        PlugRequest::PlugIn { id, .. } => ("plug-in".to_string(), *id),
        PlugRequest::Unplug { id } => ("unplug".to_string(), *id),
    };
    DecisionFile {
        request,
        target,
        allowed: d.allowed,
        retune_set: d.retune_set.clone(),
        kept: d.kept.clone(),
        retuned: d.new_gains.keys().copied().collect(),
        denial: d
            .denials
            .iter()
            .map(|x| DenialEntry {
                dgu: x.dgu,
                reason: x.reason.clone(),
            })
            .collect(),
        certificate: d
            .certificates
            .iter()
            .map(|(k, c)| (k.to_string(), certificate_summary(c)))
            .collect(),
        global: d.global.as_ref().map(global_summary),
        assumption2_worst_ratio: d.assumption2.as_ref().map(|a| a.worst_ratio),
    }
}

pub fn decision_to_toml(d: &PnpDecision) -> Result<String> {
    to_toml(&decision_record(d))
}

pub fn parse_decision(text: &str) -> Result<DecisionFile> {
    parse_toml(text, "decision file")
}

/// Per-DGU certificates and the global certificate of a gain set.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CertifyFile {
    pub valid: bool,
    pub certificate: BTreeMap<String, CertificateSummary>,
    pub global: GlobalSummary,
    pub assumption2_passed: bool,
    pub assumption2_worst_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption2_worst_edge: Option<String>,
}

pub fn certificate_summary(c: &CertificateReport) -> CertificateSummary {
    CertificateSummary {
        valid: c.is_valid(),
        strict_lyapunov: c.lyapunov_strict.passed,
        semidefinite_lyapunov_observable: c.lyapunov_lasalle.passed,
        structure: c.structure.passed,
        gain_bound: c.gain_bound.passed,
        hurwitz: c.hurwitz.passed,
        lyapunov_max_eigenvalue: c.lyapunov_max_eigenvalue,
    }
}

pub fn global_summary(g: &GlobalCertificate) -> GlobalSummary {
    GlobalSummary {
        spectral_ok: g.spectral_ok,
        max_real_part: g.max_real_part,
        lyapunov_max_eigenvalue: g.lyapunov_max_eigenvalue,
        term_a_max_eigenvalue: g.term_a_max_eigenvalue,
        term_b_max_abs: g.term_b_max_abs,
    }
}

pub fn parse_certify(text: &str) -> Result<CertifyFile> {
    parse_toml(text, "certificate file")
}

/// Step-response metrics of one DGU between consecutive event times.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct WindowMetrics {
    pub dgu: DguId,
    pub t0: f64,
    pub t1: f64,
    pub settling_time: f64,
    pub overshoot: f64,
    pub steady_state_error: f64,
    pub peak_deviation: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct JumpEntry {
    pub t: f64,
    pub dgu: DguId,
    pub jump: f64,
    pub bumpless: bool,
}

/// Summary of a simulation run.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsFile {
    pub completed: bool,
    pub steps: usize,
    pub band: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub jump: Vec<JumpEntry>,
    #[serde(default)]
    pub window: Vec<WindowMetrics>,
}

pub fn parse_metrics(text: &str) -> Result<MetricsFile> {
    parse_toml(text, "metrics file")
}

/// Serializes any of the report types of this module.
pub fn report_to_toml<T: Serialize>(v: &T) -> Result<String> {
    to_toml(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
[dgu.1]
r_t = 0.2
l_t = "1.8 mH"
c_t = "2.2mF"
v_dc = 100
load_r = 10

[dgu.2]
r_t = "0.2 Ω"
l_t = 1.8e-3
c_t = 2.2e-3
v_dc = "100 V"

[line.2-1]
r = 0.05
l = "1.8 uH"
"#;

    #[test]
    fn grid_parses_suffixes_and_round_trips() {
        let g = parse_grid(GRID).unwrap();
        assert_eq!(g.len(), 2);
        let p = g.dgu(1).unwrap();
        assert!((p.l_t - 1.8e-3).abs() < 1e-18 && (p.c_t - 2.2e-3).abs() < 1e-18);
        assert_eq!(p.load_r, Some(10.0));
        assert_eq!(g.dgu(2).unwrap().load_r, None);
        assert!((g.line(1, 2).unwrap().l - 1.8e-6).abs() < 1e-20);
        let back = parse_grid(&grid_to_toml(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn grid_errors() {
        assert!(parse_grid("[dgu.x]\nr_t=1\nl_t=1\nc_t=1\nv_dc=1").is_err());
        assert!(parse_grid("[dgu.1]\nr_t=-1\nl_t=1\nc_t=1\nv_dc=1").is_err());
        assert!(parse_grid("[line.1-2]\nr=1\nl=1").is_err());
        assert!(parse_grid("[dgu.1]\nr_t=1\nl_t=1\nc_t=1\nv_dc=1\nbogus=2").is_err());
    }

    #[test]
    fn gains_round_trip_exactly() {
        let g = parse_grid(GRID).unwrap();
        let set = crate::synthesis::synthesize_grid(&g, &Default::default(), &Default::default());
        let stored: BTreeMap<_, _> = set
            .into_iter()
            .map(|(k, v)| {
                let controller = DguController {
                    gains: v.unwrap(),
                    prefilter: Some(crate::analysis::desired_tf_template(100.0, 3).unwrap()),
                    compensator: Some(RationalTf::new(
                        Poly::new(vec![1.0 / 3.0, 0.1]),
                        Poly::new(vec![1.0, 7.0]),
                    )),
                };
                (
                    k,
                    StoredController {
                        controller,
                        band_limit_pole_hz: Some(1e3),
                    },
                )
            })
            .collect();
        let text = gains_to_toml(&stored, false).unwrap();
        assert!(!text.contains("generated_unix"));
        assert_eq!(parse_gains(&text).unwrap(), stored);
        assert!(gains_to_toml(&stored, true)
            .unwrap()
            .contains("generated_unix"));
    }

    #[test]
    fn scenario_round_trip() {
        let text = r#"
duration = 10.0
initial_set = "isolated"
open_lines = ["2-1"]
[refs]
1 = 48.0
2 = 48.0
[sets.isolated]
source = "synthesize-initial"
prefilter_hz = 100.0
[sets.main]
source = "gains"
[[event]]
type = "connect"
t = 2.0
i = 1
j = 2
[[event]]
type = "switch"
t = 2.0
dgu = 1
set = "main"
[[event]]
type = "load_step"
t = 3.0
dgu = 1
r = "5 Ω"
"#;
        let spec = parse_scenario(text).unwrap();
        assert_eq!(spec.scenario.open_lines, BTreeSet::from([(1, 2)]));
        assert_eq!(spec.scenario.events.len(), 3);
        assert!(matches!(
            spec.scenario.events[1].kind,
            EventKind::SwitchController { bumpless: true, .. }
        ));
        assert_eq!(
            spec.scenario.events[2].kind,
            EventKind::LoadStep {
                dgu: 1,
                r: Some(5.0)
            }
        );
        let back = parse_scenario(&scenario_to_toml(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(parse_scenario(
            "duration = 1.0\n[[event]]\ntype = \"switch\"\nt = 0.5\ndgu = 1\nset = \"nope\""
        )
        .is_err());
    }

    #[test]
    fn edge_keys() {
        assert_eq!(parse_edge("3-1").unwrap(), (1, 3));
        assert!(parse_edge("3").is_err());
    }
}
