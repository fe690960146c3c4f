//! Time-domain simulation of the closed-loop microgrid with physical line dynamics.
//!
//! Each line carries one current state shared by both endpoints, so the two
//! directions are exact negatives. Between events and controller
//! commutations the closed loop is linear apart from actuator saturation, and
//! is integrated with TR-BDF2.

pub mod metrics;
pub mod ode;
pub mod realize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::analysis::{csv_err, fmt, RationalTf};
use crate::error::invalid;
use crate::grid::{assemble_physical_model, DguId, GridGraph};
use crate::synthesis::ControllerGains;

pub use metrics::{metrics, Metrics};
use ode::{Factorization, OdeSystem, Tolerances};
pub use realize::Realization;

/// Local controller with its optional reference prefilter and load-current compensator.
#[derive(Debug, Clone, PartialEq)]
pub struct DguController {
    pub gains: ControllerGains,
    pub prefilter: Option<RationalTf>,
    pub compensator: Option<RationalTf>,
}

/// Controllers for a set of DGUs.
pub type ControllerSet = BTreeMap<DguId, DguController>;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Connect {
        i: DguId,
        j: DguId,
    },
    Disconnect {
        i: DguId,
        j: DguId,
    },
    /// `None` removes the load.
    LoadStep {
        dgu: DguId,
        r: Option<f64>,
    },
    RefStep {
        dgu: DguId,
        v: f64,
    },
    /// Brings the DGU online and closes its lines to online DGUs.
    PlugIn {
        dgu: DguId,
    },
    /// Opens the DGU's lines and takes it offline; its states freeze.
    Unplug {
        dgu: DguId,
    },
    /// Switches to the controller of `set` for this DGU.
    SwitchController {
        dgu: DguId,
        set: String,
        bumpless: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

/// Scripted timeline over a grid whose file lists every DGU and line.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration: f64,
    /// Initial references; DGUs without one start at 0 V.
    pub refs: BTreeMap<DguId, f64>,
    /// Lines of the grid that start open.
    pub open_lines: BTreeSet<(DguId, DguId)>,
    /// DGUs that start offline.
    pub offline: BTreeSet<DguId>,
    /// Controller set in use at `t = 0`.
    pub initial_set: String,
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn validate(&self, g: &GridGraph) -> crate::Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(invalid("event times must be nondecreasing"));
        }
        let known = |id: &DguId| {
            if g.contains(*id) {
                Ok(())
            } else {
                Err(invalid(format!("scenario refers to unknown DGU {id}")))
            }
        };
        let line = |i: DguId, j: DguId| {
            if g.line(i, j).is_some() {
                Ok(())
            } else {
                Err(invalid(format!("scenario refers to unknown line {i}-{j}")))
            }
        };
        self.refs.keys().try_for_each(known)?;
        self.offline.iter().try_for_each(known)?;
        for &(i, j) in &self.open_lines {
            line(i, j)?;
        }
        for e in &self.events {
            if !(e.t.is_finite() && e.t >= 0.0 && e.t <= self.duration) {
                return Err(invalid(format!("event time {} outside [0, duration]", e.t)));
            }
            match &e.kind {
                EventKind::Connect { i, j } | EventKind::Disconnect { i, j } => line(*i, *j)?,
                EventKind::LoadStep { dgu, r } => {
                    known(dgu)?;
                    if r.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
                        return Err(invalid("load resistance must be positive"));
                    }
                }
                EventKind::RefStep { dgu, v } => {
                    known(dgu)?;
                    if !v.is_finite() {
                        return Err(invalid("reference must be finite"));
                    }
                }
                EventKind::PlugIn { dgu } | EventKind::Unplug { dgu } => known(dgu)?,
                EventKind::SwitchController { dgu, .. } => known(dgu)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationConfig {
    /// Clamp `u` to `[0, V_DC]`.
    pub enabled: bool,
    /// Continuous saturation longer than this emits a warning.
    pub warn_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumplessConfig {
    /// `λ` of `Γ(s) = s + λ` as a fraction of the incoming `k_i`; must be below 1.
    pub lambda_ratio: f64,
    /// Commutation is allowed once the tracker error on `u` is below this (V).
    pub commute_threshold: f64,
    /// The tracker error must stay below the threshold this long (s).
    pub hold: f64,
    /// A warning is emitted if commutation has not happened after this long (s).
    pub wait_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Step cap within `event_window` of an event or commutation.
    pub max_step: f64,
    /// Step cap elsewhere.
    pub max_step_relaxed: f64,
    pub event_window: f64,
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub record_stride: f64,
    pub saturation: SaturationConfig,
    pub bumpless: BumplessConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_step: 1e-5,
            max_step_relaxed: 1e-4,
            event_window: 0.05,
            rtol: 1e-8,
            atol: 1e-8,
            min_step: 1e-12,
            record_stride: 1e-4,
            saturation: SaturationConfig {
                enabled: true,
                warn_after: 1e-3,
            },
            bumpless: BumplessConfig {
                lambda_ratio: 0.1,
                commute_threshold: 0.01,
                hold: 0.01,
                wait_budget: 1.0,
            },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let ok = [
            self.max_step,
            self.max_step_relaxed,
            self.rtol,
            self.atol,
            self.min_step,
            self.record_stride,
            self.bumpless.lambda_ratio,
            self.bumpless.commute_threshold,
            self.bumpless.wait_budget,
        ]
        .into_iter()
        .all(pos)
            && self.event_window >= 0.0
            && self.bumpless.hold >= 0.0
            && self.bumpless.lambda_ratio < 1.0
            && self.saturation.warn_after >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(
                "simulation settings must be positive (and λ ratio below 1)",
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub t: f64,
    pub description: String,
}

/// `|u(t⁺) − u(t⁻)|` at a controller change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlJump {
    pub t: f64,
    pub dgu: DguId,
    pub jump: f64,
    pub bumpless: bool,
}

/// Sampled trajectories; per-DGU series are indexed like `dgus`, line series like `edges`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub dgus: Vec<DguId>,
    /// Every grid line `(i, j)`, `i < j`; `i_line` is the current entering `i`.
    pub edges: Vec<(DguId, DguId)>,
    pub time: Vec<f64>,
    pub v_pcc: Vec<Vec<f64>>,
    pub i_t: Vec<Vec<f64>>,
    /// Integrator state `v` (integral of the tracking error).
    pub v_int: Vec<Vec<f64>>,
    /// Applied (clamped) converter voltage.
    pub u: Vec<Vec<f64>>,
    pub i_load: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub online: Vec<Vec<bool>>,
    pub i_line: Vec<Vec<f64>>,
    pub events: Vec<TraceEvent>,
    pub jumps: Vec<ControlJump>,
    pub warnings: Vec<String>,
    pub steps: usize,
}

impl SimTrace {
    pub fn dgu_index(&self, id: DguId) -> Option<usize> {
        self.dgus.iter().position(|d| *d == id)
    }

    /// Current from `j` into `i` at sample `n`; the reverse direction is the negative.
    pub fn line_current(&self, i: DguId, j: DguId, n: usize) -> Option<f64> {
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        let e = self.edges.iter().position(|&x| x == (a, b))?;
        Some(sign * self.i_line[e][n])
    }

    /// CSV with a header row; columns are time, then per DGU `V, I_t, v, u, I_L, ref`, then line currents.
    pub fn write_csv<W: Write>(&self, w: W) -> crate::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for id in &self.dgus {
            for q in ["V", "I_t", "v", "u", "I_L", "ref"] {
                header.push(format!("{q}_{id}"));
            }
        }
        for (i, j) in &self.edges {
            header.push(format!("I_{i}_{j}"));
        }
        wr.write_record(&header).map_err(csv_err)?;
        for n in 0..self.time.len() {
            let mut row = vec![fmt(self.time[n])];
            for k in 0..self.dgus.len() {
                for s in [
                    &self.v_pcc,
                    &self.i_t,
                    &self.v_int,
                    &self.u,
                    &self.i_load,
                    &self.reference,
                ] {
                    row.push(fmt(s[k][n]));
                }
            }
            for e in &self.i_line {
                row.push(fmt(e[n]));
            }
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Abort with the trace up to the last good state.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("simulation failed at t = {t}: {message}")]
pub struct SimFailure {
    pub t: f64,
    pub message: String,
    pub last_state: Vec<f64>,
    pub trace: Box<SimTrace>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Input(#[from] crate::Error),
    #[error(transparent)]
    Failure(#[from] SimFailure),
}

impl From<SimError> for crate::Error {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Input(e) => e,
            SimError::Failure(f) => crate::Error::Numerical(f.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Key {
    V(DguId),
    It(DguId),
    Uh(DguId, u8),
    Pre(DguId, u8, usize),
    Comp(DguId, u8, usize),
    Line(DguId, DguId),
}

#[derive(Debug, Clone)]
struct Slot {
    k: [f64; 3],
    pre: Option<Realization>,
    comp: Option<Realization>,
}

impl Slot {
    fn from_controller(c: &DguController) -> crate::Result<Self> {
        let real = |tf: &Option<RationalTf>| tf.as_ref().map(Realization::from_tf).transpose();
        Ok(Self {
            k: c.gains.k,
            pre: real(&c.prefilter)?,
            comp: real(&c.compensator)?,
        })
    }
}

#[derive(Debug, Clone)]
struct Pending {
    slot: Slot,
    lambda: f64,
    requested: f64,
    hold_start: Option<f64>,
    warned: bool,
}

#[derive(Debug, Clone)]
struct DguRt {
    id: DguId,
    r_t: f64,
    l_t: f64,
    c_t: f64,
    v_dc: f64,
    online: bool,
    reference: f64,
    load_r: Option<f64>,
    active: Option<Slot>,
    pending: Option<Pending>,
    sat_since: Option<f64>,
    sat_warned: bool,
}

impl DguRt {
    fn g_load(&self) -> f64 {
        self.load_r.map_or(0.0, |r| 1.0 / r)
    }
}

/// Piecewise-linear closed loop `ẋ = A x + B_u sat(K_u x) + c`.
struct Mode {
    a: DMatrix<f64>,
    bu: DMatrix<f64>,
    ku: DMatrix<f64>,
    c: DVector<f64>,
    umax: Vec<f64>,
    saturate: bool,
    id: u64,
}

impl Mode {
    fn active_mask(&self, x: &DVector<f64>) -> Vec<bool> {
        let u = &self.ku * x;
        (0..u.len())
            .map(|k| !self.saturate || (u[k] >= 0.0 && u[k] <= self.umax[k]))
            .collect()
    }

    fn jac_id(&self, mask: &[bool]) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.id.hash(&mut h);
        mask.hash(&mut h);
        h.finish()
    }
}

impl OdeSystem for Mode {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut u = &self.ku * x;
        if self.saturate {
            for k in 0..u.len() {
                u[k] = u[k].clamp(0.0, self.umax[k]);
            }
        }
        &self.a * x + &self.bu * u + &self.c
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mask = self.active_mask(x);
        let mut ku = self.ku.clone();
        for (k, on) in mask.iter().enumerate() {
            if !on {
                ku.row_mut(k).fill(0.0);
            }
        }
        &self.a + &self.bu * ku
    }
}

struct Engine<'a> {
    g: &'a GridGraph,
    sets: &'a BTreeMap<String, ControllerSet>,
    cfg: SimConfig,
    dgus: Vec<DguRt>,
    closed: BTreeSet<(DguId, DguId)>,
    layout: Vec<Key>,
    index: HashMap<Key, usize>,
    mode_counter: u64,
}

impl<'a> Engine<'a> {
    fn new(
        g: &'a GridGraph,
        sets: &'a BTreeMap<String, ControllerSet>,
        sc: &Scenario,
        cfg: SimConfig,
    ) -> crate::Result<Self> {
        let initial = sets
            .get(&sc.initial_set)
            .ok_or_else(|| invalid(format!("unknown controller set `{}`", sc.initial_set)))?;
        let mut dgus = Vec::new();
        for (id, p) in g.dgus() {
            let online = !sc.offline.contains(&id);
            let active = match initial.get(&id) {
                Some(c) => Some(Slot::from_controller(c)?),
                None if online => return Err(invalid(format!("no gains for online DGU {id}"))),
                None => None,
            };
            dgus.push(DguRt {
                id,
                r_t: p.r_t,
                l_t: p.l_t,
                c_t: p.c_t,
                v_dc: p.v_dc,
                online,
                reference: sc.refs.get(&id).copied().unwrap_or(0.0),
                load_r: p.load_r,
                active,
                pending: None,
                sat_since: None,
                sat_warned: false,
            });
        }
        let closed = g
            .edges()
            .map(|(i, j, _)| (i, j))
            .filter(|e| !sc.open_lines.contains(e))
            .filter(|(i, j)| !sc.offline.contains(i) && !sc.offline.contains(j))
            .collect();
        let mut e = Self {
            g,
            sets,
            cfg,
            dgus,
            closed,
            layout: Vec::new(),
            index: HashMap::new(),
            mode_counter: 0,
        };
        e.relayout();
        Ok(e)
    }

    fn rt(&self, id: DguId) -> &DguRt {
        self.dgus.iter().find(|d| d.id == id).expect("known DGU")
    }

    fn rt_mut(&mut self, id: DguId) -> &mut DguRt {
        self.dgus
            .iter_mut()
            .find(|d| d.id == id)
            .expect("known DGU")
    }

    fn relayout(&mut self) {
        let mut layout = Vec::new();
        for d in &self.dgus {
            layout.push(Key::V(d.id));
            layout.push(Key::It(d.id));
            let slots = [
                (0u8, d.active.as_ref()),
                (1u8, d.pending.as_ref().map(|p| &p.slot)),
            ];
            for (s, slot) in slots {
                let Some(slot) = slot else { continue };
                layout.push(Key::Uh(d.id, s));
                let np = slot.pre.as_ref().map_or(0, Realization::order);
                let nc = slot.comp.as_ref().map_or(0, Realization::order);
                layout.extend((0..np).map(|k| Key::Pre(d.id, s, k)));
                layout.extend((0..nc).map(|k| Key::Comp(d.id, s, k)));
            }
        }
        layout.extend(self.closed.iter().map(|&(i, j)| Key::Line(i, j)));
        self.index = layout
            .iter()
            .enumerate()
            .map(|(k, key)| (*key, k))
            .collect();
        self.layout = layout;
    }

    /// Moves `x` from the previous layout into the current one; new states start at zero.
    ///
    /// `rename` maps old keys to new ones; a `None` target drops the state.
    fn remap(
        &self,
        old_layout: &[Key],
        x: &DVector<f64>,
        rename: &HashMap<Key, Option<Key>>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.len());
        for (k, key) in old_layout.iter().enumerate() {
            let target = match rename.get(key) {
                Some(t) => *t,
                None => Some(*key),
            };
            if let Some(&n) = target.as_ref().and_then(|t| self.index.get(t)) {
                out[n] = x[k];
            }
        }
        out
    }

    fn idx(&self, k: Key) -> usize {
        self.index[&k]
    }

    /// Coefficients of `u_ctrl` of a slot over the state, as a dense row.
    fn control_row(&self, d: &DguRt, s: u8, slot: &Slot) -> DVector<f64> {
        let mut row = DVector::zeros(self.layout.len());
        let iv = self.idx(Key::V(d.id));
        row[iv] += slot.k[0];
        row[self.idx(Key::It(d.id))] += slot.k[1];
        row[self.idx(Key::Uh(d.id, s))] += 1.0;
        self.add_comp_output(&mut row, d, s, slot, 1.0);
        row
    }

    /// Adds `scale · ũ` of the slot's compensator to `row`.
    fn add_comp_output(&self, row: &mut DVector<f64>, d: &DguRt, s: u8, slot: &Slot, scale: f64) {
        if let Some(r) = &slot.comp {
            for k in 0..r.order() {
                row[self.idx(Key::Comp(d.id, s, k))] += scale * r.c[k];
            }
            row[self.idx(Key::V(d.id))] += scale * r.d * d.g_load();
        }
    }

    fn build_mode(&mut self) -> Mode {
        let n = self.layout.len();
        let m = self.dgus.len();
        let mut a = DMatrix::zeros(n, n);
        let mut bu = DMatrix::zeros(n, m);
        let mut ku = DMatrix::zeros(m, n);
        let mut c = DVector::zeros(n);
        let mut umax = vec![0.0; m];
        for (mi, d) in self.dgus.iter().enumerate() {
            umax[mi] = d.v_dc;
            if !d.online {
                continue;
            }
            let Some(slot) = &d.active else { continue };
            let (iv, ii) = (self.idx(Key::V(d.id)), self.idx(Key::It(d.id)));
            let gl = d.g_load();
            a[(iv, ii)] += 1.0 / d.c_t;
            a[(iv, iv)] -= gl / d.c_t;
            a[(ii, iv)] -= 1.0 / d.l_t;
            a[(ii, ii)] -= d.r_t / d.l_t;
            bu[(ii, mi)] = 1.0 / d.l_t;
            let urow = self.control_row(d, 0, slot);
            ku.row_mut(mi).copy_from(&urow.transpose());
            self.controller_dynamics(&mut a, &mut c, d, 0, slot);
            let iu = self.idx(Key::Uh(d.id, 0));
            a[(iu, iv)] -= slot.k[2];
            if let Some(p) = &d.pending {
                let s2 = &p.slot;
                self.controller_dynamics(&mut a, &mut c, d, 1, s2);
                let iu2 = self.idx(Key::Uh(d.id, 1));
                // Block A: û' = −λû + k_i e + λ ũ_prec.
                a[(iu2, iu2)] -= p.lambda;
                a[(iu2, iv)] -= s2.k[2];
                let mut track = urow * p.lambda;
                track[iv] -= p.lambda * s2.k[0];
                track[ii] -= p.lambda * s2.k[1];
                self.add_comp_output(&mut track, d, 1, s2, -p.lambda);
                let mut r = a.row_mut(iu2);
                r += track.transpose();
            }
        }
        for &(i, j) in &self.closed {
            let l = self.g.line(i, j).expect("closed line exists");
            let ie = self.idx(Key::Line(i, j));
            let (vi, vj) = (self.idx(Key::V(i)), self.idx(Key::V(j)));
            a[(ie, ie)] -= l.r / l.l;
            a[(ie, vi)] -= 1.0 / l.l;
            a[(ie, vj)] += 1.0 / l.l;
            a[(vi, ie)] += 1.0 / self.rt(i).c_t;
            a[(vj, ie)] -= 1.0 / self.rt(j).c_t;
        }
        self.mode_counter += 1;
        Mode {
            a,
            bu,
            ku,
            c,
            umax,
            saturate: self.cfg.saturation.enabled,
            id: self.mode_counter,
        }
    }

    /// Prefilter, compensator and the reference part of the integrator row of one slot.
    fn controller_dynamics(
        &self,
        a: &mut DMatrix<f64>,
        c: &mut DVector<f64>,
        d: &DguRt,
        s: u8,
        slot: &Slot,
    ) {
        let iu = self.idx(Key::Uh(d.id, s));
        let iv = self.idx(Key::V(d.id));
        let ki = slot.k[2];
        match &slot.pre {
            Some(r) => {
                let base = if r.order() > 0 {
                    self.idx(Key::Pre(d.id, s, 0))
                } else {
                    0
                };
                for p in 0..r.order() {
                    for q in 0..r.order() {
                        a[(base + p, base + q)] += r.a[(p, q)];
                    }
                    c[base + p] += r.b[p] * d.reference;
                    a[(iu, base + p)] += ki * r.c[p];
                }
                c[iu] += ki * r.d * d.reference;
            }
            None => c[iu] += ki * d.reference,
        }
        if let Some(r) = &slot.comp {
            let gl = d.g_load();
            for p in 0..r.order() {
                let ip = self.idx(Key::Comp(d.id, s, p));
                for q in 0..r.order() {
                    a[(ip, self.idx(Key::Comp(d.id, s, q)))] += r.a[(p, q)];
                }
                a[(ip, iv)] += r.b[p] * gl;
            }
        }
    }

    fn state(&self, x: &DVector<f64>, k: Key) -> f64 {
        self.index.get(&k).map_or(0.0, |&n| x[n])
    }

    /// `u_ctrl` of the active slot.
    fn u_ctrl(&self, x: &DVector<f64>, d: &DguRt) -> f64 {
        match &d.active {
            Some(slot) if d.online => self.control_row(d, 0, slot).dot(x),
            _ => 0.0,
        }
    }

    /// `û − ũ_prec` for a pending switch.
    fn tracker_error(&self, x: &DVector<f64>, d: &DguRt) -> Option<f64> {
        let p = d.pending.as_ref()?;
        let incoming = self.control_row(d, 1, &p.slot).dot(x);
        Some(incoming - self.u_ctrl(x, d))
    }

    /// Initial shadow states for a switch requested at the current state.
    fn shadow_init(
        &self,
        x: &DVector<f64>,
        d: &DguRt,
        slot: &Slot,
    ) -> crate::Result<Vec<(Key, f64)>> {
        let mut out = Vec::new();
        let v = self.state(x, Key::V(d.id));
        let it = self.state(x, Key::It(d.id));
        if let Some(r) = &slot.pre {
            for (k, val) in r.steady_state(d.reference)?.iter().enumerate() {
                out.push((Key::Pre(d.id, 1, k), *val));
            }
        }
        let il = v * d.g_load();
        let mut comp_out = 0.0;
        if let Some(r) = &slot.comp {
            let xs = r.steady_state(il)?;
            comp_out = r.output(&xs, il);
            for (k, val) in xs.iter().enumerate() {
                out.push((Key::Comp(d.id, 1, k), *val));
            }
        }
        let u_prec = self.u_ctrl(x, d);
        out.push((
            Key::Uh(d.id, 1),
            u_prec - slot.k[0] * v - slot.k[1] * it - comp_out,
        ));
        Ok(out)
    }
}

const LAND_TOL: f64 = 1e-12;

/// Integrates the closed loop over the scenario.
///
/// `sets` maps names to controller sets; the scenario starts with
/// `initial_set` and switch events name others.
pub fn simulate(
    g: &GridGraph,
    sets: &BTreeMap<String, ControllerSet>,
    sc: &Scenario,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    sc.validate(g)?;
    let mut eng = Engine::new(g, sets, sc, *cfg)?;
    let mut trace = SimTrace {
        dgus: eng.dgus.iter().map(|d| d.id).collect(),
        edges: g.edges().map(|(i, j, _)| (i, j)).collect(),
        ..Default::default()
    };
    let nd = trace.dgus.len();
    for series in [
        &mut trace.v_pcc,
        &mut trace.i_t,
        &mut trace.v_int,
        &mut trace.u,
        &mut trace.i_load,
        &mut trace.reference,
    ] {
        *series = vec![Vec::new(); nd];
    }
    trace.online = vec![Vec::new(); nd];
    trace.i_line = vec![Vec::new(); trace.edges.len()];

    let mut x = DVector::zeros(eng.layout.len());
    let mut t = 0.0;
    let mut next_event = 0;
    let mut window_until = f64::NEG_INFINITY;
    apply_events_at(&mut eng, sc, &mut next_event, t, &mut x, &mut trace)?;
    if next_event > 0 {
        window_until = t + cfg.event_window;
    }
    let mut mode = eng.build_mode();
    let mut f = mode.rhs(&x);
    record(&eng, &mode, &x, t, &mut trace);
    let n_records = (sc.duration / cfg.record_stride).round() as usize;
    let mut rec_k = 1;
    let mut h = cfg.max_step;
    let tol = Tolerances {
        rtol: cfg.rtol,
        atol: cfg.atol,
    };
    let mut fact = Factorization::default();

    while t < sc.duration - LAND_TOL {
        let t_rec = if rec_k <= n_records {
            (rec_k as f64 * cfg.record_stride).min(sc.duration)
        } else {
            sc.duration
        };
        let t_evt = sc.events.get(next_event).map_or(f64::INFINITY, |e| e.t);
        let stop = t_rec.min(t_evt).min(sc.duration);
        let cap = if t < window_until {
            cfg.max_step
        } else {
            cfg.max_step_relaxed
        };
        let mut hh = h.min(cap);
        let landing = stop - t <= hh * (1.0 + 1e-9);
        if landing {
            hh = stop - t;
        }
        let mask = mode.active_mask(&x);
        let jid = mode.jac_id(&mask);
        let jac = mode.jacobian(&x);
        let trial = ode::step(&mode, &x, &f, hh, &jac, jid, tol, &mut fact);
        let accepted = match trial {
            Some(tr) if tr.err <= 1.0 => Some(tr),
            Some(tr) => {
                h = hh * ode::step_factor(tr.err);
                None
            }
            None => {
                h = hh * 0.25;
                None
            }
        };
        let Some(tr) = accepted else {
            if h < cfg.min_step {
                return Err(failure(t, "step size fell below the minimum", &x, trace));
            }
            continue;
        };
        if tr.x.iter().any(|v| !v.is_finite()) {
            return Err(failure(t, "non-finite state", &x, trace));
        }
        let grow = ode::step_factor(tr.err);
        h = if landing { h.max(hh * grow) } else { hh * grow };
        t = if landing { stop } else { t + hh };
        x = tr.x;
        f = tr.f;
        trace.steps += 1;

        let mut rebuild = false;
        saturation_bookkeeping(&mut eng, &mode, &x, t, &mut trace);
        if commutations(&mut eng, &mut x, t, &mut trace) {
            rebuild = true;
            window_until = t + cfg.event_window;
        }
        if t >= t_evt - LAND_TOL {
            apply_events_at(&mut eng, sc, &mut next_event, t, &mut x, &mut trace)?;
            rebuild = true;
            window_until = t + cfg.event_window;
        }
        if rebuild {
            mode = eng.build_mode();
            f = mode.rhs(&x);
            fact.invalidate();
        }
        if t >= t_rec - LAND_TOL && rec_k <= n_records {
            record(&eng, &mode, &x, t, &mut trace);
            rec_k += 1;
        }
    }
    Ok(trace)
}

fn failure(t: f64, msg: &str, x: &DVector<f64>, trace: SimTrace) -> SimError {
    SimError::Failure(SimFailure {
        t,
        message: msg.into(),
        last_state: x.iter().copied().collect(),
        trace: Box::new(trace),
    })
}

fn record(eng: &Engine, mode: &Mode, x: &DVector<f64>, t: f64, tr: &mut SimTrace) {
    tr.time.push(t);
    let u = &mode.ku * x;
    for (k, d) in eng.dgus.iter().enumerate() {
        let v = eng.state(x, Key::V(d.id));
        tr.v_pcc[k].push(v);
        tr.i_t[k].push(eng.state(x, Key::It(d.id)));
        let ki = d.active.as_ref().map_or(0.0, |s| s.k[2]);
        let uh = eng.state(x, Key::Uh(d.id, 0));
        tr.v_int[k].push(if ki != 0.0 { uh / ki } else { 0.0 });
        let uk = if d.online { u[k] } else { 0.0 };
        tr.u[k].push(if mode.saturate {
            uk.clamp(0.0, d.v_dc)
        } else {
            uk
        });
        tr.i_load[k].push(if d.online { v * d.g_load() } else { 0.0 });
        tr.reference[k].push(d.reference);
        tr.online[k].push(d.online);
    }
    for (e, &(i, j)) in tr.edges.clone().iter().enumerate() {
        tr.i_line[e].push(eng.state(x, Key::Line(i, j)));
    }
}

fn saturation_bookkeeping(
    eng: &mut Engine,
    mode: &Mode,
    x: &DVector<f64>,
    t: f64,
    tr: &mut SimTrace,
) {
    if !mode.saturate {
        return;
    }
    let u = &mode.ku * x;
    let warn_after = eng.cfg.saturation.warn_after;
    for (k, d) in eng.dgus.iter_mut().enumerate() {
        let sat = d.online && (u[k] < 0.0 || u[k] > d.v_dc);
        if !sat {
            d.sat_since = None;
            d.sat_warned = false;
            continue;
        }
        let since = *d.sat_since.get_or_insert(t);
        if t - since > warn_after && !d.sat_warned {
            d.sat_warned = true;
            tr.warnings.push(format!(
                "DGU {}: actuator saturated for more than {warn_after} s from t = {since:.6}",
                d.id
            ));
        }
    }
}

/// Commutes every pending switch whose tracker error stayed below the threshold for the hold time.
fn commutations(eng: &mut Engine, x: &mut DVector<f64>, t: f64, tr: &mut SimTrace) -> bool {
    let bc = eng.cfg.bumpless;
    let mut ready = Vec::new();
    for k in 0..eng.dgus.len() {
        let Some(err) = eng.tracker_error(x, &eng.dgus[k]) else {
            continue;
        };
        let id = eng.dgus[k].id;
        let p = eng.dgus[k].pending.as_mut().expect("pending");
        if err.abs() < bc.commute_threshold {
            let since = *p.hold_start.get_or_insert(t);
            if t - since >= bc.hold - LAND_TOL {
                ready.push((k, err.abs()));
            }
        } else {
            p.hold_start = None;
        }
        if t - p.requested > bc.wait_budget && !p.warned {
            p.warned = true;
            tr.warnings.push(format!(
                "DGU {id}: bumpless switch deferred, tracker not settled after {} s",
                bc.wait_budget
            ));
        }
    }
    if ready.is_empty() {
        return false;
    }
    let old_layout = eng.layout.clone();
    let mut rename = HashMap::new();
    for &(k, jump) in &ready {
        let d = &mut eng.dgus[k];
        let p = d.pending.take().expect("pending");
        let id = d.id;
        for key in old_layout.iter() {
            match *key {
                Key::Uh(i, 1) if i == id => {
                    rename.insert(*key, Some(Key::Uh(i, 0)));
                }
                Key::Pre(i, 1, q) if i == id => {
                    rename.insert(*key, Some(Key::Pre(i, 0, q)));
                }
                Key::Comp(i, 1, q) if i == id => {
                    rename.insert(*key, Some(Key::Comp(i, 0, q)));
                }
                Key::Uh(i, 0) | Key::Pre(i, 0, _) | Key::Comp(i, 0, _) if i == id => {
                    rename.insert(*key, None);
                }
                _ => {}
            }
        }
        d.active = Some(p.slot);
        tr.jumps.push(ControlJump {
            t,
            dgu: id,
            jump,
            bumpless: true,
        });
        tr.events.push(TraceEvent {
            t,
            description: format!("commute controller of DGU {id}"),
        });
    }
    eng.relayout();
    *x = eng.remap(&old_layout, x, &rename);
    true
}

fn apply_events_at(
    eng: &mut Engine,
    sc: &Scenario,
    next: &mut usize,
    t: f64,
    x: &mut DVector<f64>,
    tr: &mut SimTrace,
) -> Result<(), SimError> {
    let old_layout = eng.layout.clone();
    let mut inits: Vec<(Key, f64)> = Vec::new();
    let mut hard: Vec<(DguId, f64)> = Vec::new();
    while let Some(e) = sc.events.get(*next) {
        if e.t > t + LAND_TOL {
            break;
        }
        *next += 1;
        let desc = match &e.kind {
            EventKind::Connect { i, j } => {
                if !eng.rt(*i).online || !eng.rt(*j).online {
                    return Err(invalid(format!("cannot connect {i}-{j}: endpoint offline")).into());
                }
                eng.closed.insert((*i.min(j), *i.max(j)));
                format!("connect {i}-{j}")
            }
            EventKind::Disconnect { i, j } => {
                eng.closed.remove(&(*i.min(j), *i.max(j)));
                format!("disconnect {i}-{j}")
            }
            EventKind::LoadStep { dgu, r } => {
                eng.rt_mut(*dgu).load_r = *r;
                match r {
                    Some(r) => format!("load of DGU {dgu} set to {r} Ω"),
                    None => format!("load of DGU {dgu} removed"),
                }
            }
            EventKind::RefStep { dgu, v } => {
                eng.rt_mut(*dgu).reference = *v;
                format!("reference of DGU {dgu} set to {v} V")
            }
            EventKind::PlugIn { dgu } => {
                if eng.rt(*dgu).active.is_none() {
                    return Err(invalid(format!("no gains for DGU {dgu}")).into());
                }
                eng.rt_mut(*dgu).online = true;
                let online: BTreeSet<DguId> =
                    eng.dgus.iter().filter(|d| d.online).map(|d| d.id).collect();
                for j in eng.g.neighbors(*dgu) {
                    if online.contains(&j) {
                        eng.closed.insert((j.min(*dgu), j.max(*dgu)));
                    }
                }
                format!("plug in DGU {dgu}")
            }
            EventKind::Unplug { dgu } => {
                eng.closed.retain(|&(i, j)| i != *dgu && j != *dgu);
                let d = eng.rt_mut(*dgu);
                d.online = false;
                d.pending = None;
                format!("unplug DGU {dgu}")
            }
            EventKind::SwitchController { dgu, set, bumpless } => {
                let c = eng.sets.get(set).and_then(|s| s.get(dgu)).ok_or_else(|| {
                    invalid(format!("controller set `{set}` has no entry for DGU {dgu}"))
                })?;
                let slot = Slot::from_controller(c)?;
                let lambda = eng.cfg.bumpless.lambda_ratio * slot.k[2];
                if *bumpless {
                    if !(slot.k[2] > lambda && lambda > 0.0) {
                        return Err(invalid(format!(
                            "incoming k_i of DGU {dgu} must exceed λ > 0"
                        ))
                        .into());
                    }
                    let d = eng.rt(*dgu).clone();
                    inits.extend(eng.shadow_init(x, &d, &slot)?);
                    eng.rt_mut(*dgu).pending = Some(Pending {
                        slot,
                        lambda,
                        requested: t,
                        hold_start: None,
                        warned: false,
                    });
                } else {
                    let d = eng.rt(*dgu).clone();
                    let before = eng.u_ctrl(x, &d);
                    eng.rt_mut(*dgu).active = Some(slot);
                    eng.rt_mut(*dgu).pending = None;
                    hard.push((*dgu, before));
                }
                format!(
                    "switch DGU {dgu} to `{set}`{}",
                    if *bumpless { " (bumpless)" } else { "" }
                )
            }
        };
        tr.events.push(TraceEvent {
            t,
            description: desc,
        });
    }
    eng.relayout();
    let mut nx = eng.remap(&old_layout, x, &HashMap::new());
    for (k, v) in inits {
        if let Some(&n) = eng.index.get(&k) {
            nx[n] = v;
        }
    }
    *x = nx;
    for (dgu, before) in hard {
        let d = eng.rt(dgu).clone();
        let after = eng.u_ctrl(x, &d);
        tr.jumps.push(ControlJump {
            t,
            dgu,
            jump: (after - before).abs(),
            bumpless: false,
        });
    }
    Ok(())
}

/// `½ΣC_t V² + ½ΣL_t I_t² + ½ΣL_line I_line²` on the state of `assemble_physical_model`.
pub fn stored_energy(g: &GridGraph, x: &DVector<f64>) -> f64 {
    let n = g.len();
    let mut e = 0.0;
    for (k, (_, p)) in g.dgus().enumerate() {
        e += 0.5 * p.c_t * x[2 * k] * x[2 * k] + 0.5 * p.l_t * x[2 * k + 1] * x[2 * k + 1];
    }
    for (k, (_, _, l)) in g.edges().enumerate() {
        e += 0.5 * l.l * x[2 * n + k] * x[2 * n + k];
    }
    e
}

struct Passive(DMatrix<f64>);

impl OdeSystem for Passive {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }
    fn jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// Unforced, unloaded physical model from `x0`; returns `(t, x)` samples every `stride`.
pub fn simulate_passive(
    g: &GridGraph,
    x0: &DVector<f64>,
    t_end: f64,
    stride: f64,
    cfg: &SimConfig,
) -> crate::Result<Vec<(f64, DVector<f64>)>> {
    cfg.validate()?;
    let model = assemble_physical_model(g)?;
    if x0.len() != model.n_states() {
        return Err(invalid("initial state has the wrong dimension"));
    }
    let sys = Passive(model.a.clone());
    let tol = Tolerances {
        rtol: cfg.rtol,
        atol: cfg.atol,
    };
    let mut fact = Factorization::default();
    let mut out = vec![(0.0, x0.clone())];
    let mut x = x0.clone();
    let mut f = sys.rhs(&x);
    let (mut t, mut h, mut k) = (0.0, cfg.max_step, 1usize);
    while t < t_end - LAND_TOL {
        let stop = (k as f64 * stride).min(t_end);
        let mut hh = h.min(cfg.max_step_relaxed);
        let landing = stop - t <= hh * (1.0 + 1e-9);
        if landing {
            hh = stop - t;
        }
        match ode::step(&sys, &x, &f, hh, &model.a, 0, tol, &mut fact) {
            Some(tr) if tr.err <= 1.0 => {
                h = hh * ode::step_factor(tr.err);
                t = if landing { stop } else { t + hh };
                x = tr.x;
                f = tr.f;
                if landing {
                    out.push((t, x.clone()));
                    k += 1;
                }
            }
            Some(tr) => h = hh * ode::step_factor(tr.err),
            None => h = hh * 0.25,
        }
        if h < cfg.min_step {
            return Err(crate::Error::Numerical(
                "passive simulation step underflow".into(),
            ));
        }
    }
    Ok(out)
}
