//! Electrical models of DGUs, transmission lines and whole microgrids.
//!
//! Each DGU has states `[V, I_t]` (PCC voltage and filter current), input
//! `V_t` (converter output voltage) and disturbance `I_L` (load current).
//! Under the quasi-stationary line (QSL) approximation a line between DGUs
//! `i` and `j` carries `I_ij = (V_j − V_i)/R_ij`, which couples the voltage
//! equations. The integrator-augmented model adds `v̇ = z_ref − V`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::{self, RANK_TOL};

/// Identifier of a DGU inside a grid.
pub type DguId = u32;

/// Electrical constants of one DGU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DguParams {
    /// Filter resistance (Ω).
    pub r_t: f64,
    /// Filter inductance (H).
    pub l_t: f64,
    /// Filter capacitance (F).
    pub c_t: f64,
    /// Supply voltage of the converter (V).
    pub v_dc: f64,
    /// Initial load resistance at the PCC (Ω), if a load is attached.
    pub load_r: Option<f64>,
}

impl DguParams {
    pub fn new(r_t: f64, l_t: f64, c_t: f64, v_dc: f64, load_r: Option<f64>) -> Result<Self> {
        let p = Self {
            r_t,
            l_t,
            c_t,
            v_dc,
            load_r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.r_t) && ok(self.l_t) && ok(self.c_t) && ok(self.v_dc)) {
            return Err(invalid(format!(
                "DGU parameters must be positive and finite: {self:?}"
            )));
        }
        if let Some(r) = self.load_r {
            if !ok(r) {
                return Err(invalid(format!("load resistance must be positive: {r}")));
            }
        }
        Ok(())
    }
}

/// Resistance and inductance of a line, shared by both current directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParams {
    /// Line resistance (Ω).
    pub r: f64,
    /// Line inductance (H).
    pub l: f64,
}

impl LineParams {
    pub fn new(r: f64, l: f64) -> Result<Self> {
        let p = Self { r, l };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r > 0.0 && self.l.is_finite() && self.l > 0.0) {
            return Err(invalid(format!(
                "line parameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// DGUs and the lines between them.
///
/// Lines are keyed by the unordered pair `(min, max)`, so the neighbor
/// relation is symmetric by construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridGraph {
    dgus: BTreeMap<DguId, DguParams>,
    lines: BTreeMap<(DguId, DguId), LineParams>,
}

fn key(i: DguId, j: DguId) -> (DguId, DguId) {
    (i.min(j), i.max(j))
}

impl GridGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_dgu(&mut self, id: DguId, p: DguParams) -> Result<()> {
        p.validate()?;
        if self.dgus.contains_key(&id) {
            return Err(invalid(format!("DGU {id} already exists")));
        }
        self.dgus.insert(id, p);
        Ok(())
    }

    pub fn add_line(&mut self, i: DguId, j: DguId, p: LineParams) -> Result<()> {
        p.validate()?;
        if i == j {
            return Err(invalid(format!("self-loop on DGU {i}")));
        }
        for id in [i, j] {
            if !self.dgus.contains_key(&id) {
                return Err(invalid(format!("line {i}-{j} references unknown DGU {id}")));
            }
        }
        if self.lines.contains_key(&key(i, j)) {
            return Err(invalid(format!("duplicate line {i}-{j}")));
        }
        self.lines.insert(key(i, j), p);
        Ok(())
    }

    /// Removes a DGU together with every line attached to it.
    pub fn remove_dgu(&mut self, id: DguId) -> Result<DguParams> {
        let p = self
            .dgus
            .remove(&id)
            .ok_or_else(|| invalid(format!("unknown DGU {id}")))?;
        self.lines.retain(|&(a, b), _| a != id && b != id);
        Ok(p)
    }

    pub fn remove_line(&mut self, i: DguId, j: DguId) -> Result<LineParams> {
        self.lines
            .remove(&key(i, j))
            .ok_or_else(|| invalid(format!("no line {i}-{j}")))
    }

    pub fn dgu(&self, id: DguId) -> Option<&DguParams> {
        self.dgus.get(&id)
    }

    pub fn dgu_mut(&mut self, id: DguId) -> Option<&mut DguParams> {
        self.dgus.get_mut(&id)
    }

    pub fn line(&self, i: DguId, j: DguId) -> Option<&LineParams> {
        self.lines.get(&key(i, j))
    }

    /// DGU ids in ascending order.
    pub fn ids(&self) -> Vec<DguId> {
        self.dgus.keys().copied().collect()
    }

    pub fn dgus(&self) -> impl Iterator<Item = (DguId, &DguParams)> {
        self.dgus.iter().map(|(&k, v)| (k, v))
    }

    /// Edges as `(i, j, line)` with `i < j`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (DguId, DguId, &LineParams)> {
        self.lines.iter().map(|(&(a, b), l)| (a, b, l))
    }

    pub fn len(&self) -> usize {
        self.dgus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dgus.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.lines.len()
    }

    pub fn contains(&self, id: DguId) -> bool {
        self.dgus.contains_key(&id)
    }

    /// Neighbors of `id` in ascending order.
    pub fn neighbors(&self, id: DguId) -> Vec<DguId> {
        self.lines
            .keys()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Lines attached to `id`, paired with the neighbor id.
    pub fn attached_lines(&self, id: DguId) -> Vec<(DguId, LineParams)> {
        self.neighbors(id)
            .into_iter()
            .map(|j| (j, self.lines[&key(id, j)]))
            .collect()
    }

    /// Position of each DGU in ascending-id order.
    pub fn index_of(&self) -> BTreeMap<DguId, usize> {
        self.dgus
            .keys()
            .enumerate()
            .map(|(k, &id)| (id, k))
            .collect()
    }
}

/// Dense `(A, B, C, M, H)` model with labelled axes.
///
/// `ẋ = Ax + Bu + Md`, `y = Cx`, `z = Hy`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub m_dist: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub dist_labels: Vec<String>,
}

impl StateSpaceModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Checks dimensional consistency and label uniqueness.
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let checks = [
            (self.a.ncols() == n, "A must be square"),
            (self.b.nrows() == n, "B rows must match states"),
            (self.m_dist.nrows() == n, "M rows must match states"),
            (self.c.ncols() == n, "C columns must match states"),
            (
                self.h.ncols() == self.c.nrows(),
                "H columns must match outputs",
            ),
            (self.state_labels.len() == n, "one label per state"),
            (
                self.input_labels.len() == self.b.ncols(),
                "one label per input",
            ),
            (
                self.output_labels.len() == self.c.nrows(),
                "one label per output",
            ),
            (
                self.dist_labels.len() == self.m_dist.ncols(),
                "one label per disturbance",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(invalid(msg));
            }
        }
        for labels in [
            &self.state_labels,
            &self.input_labels,
            &self.output_labels,
            &self.dist_labels,
        ] {
            let mut sorted = labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != labels.len() {
                return Err(invalid("labels must be unique within each axis"));
            }
        }
        Ok(())
    }

    /// The product `H C`, mapping states to controlled variables.
    pub fn hc(&self) -> DMatrix<f64> {
        &self.h * &self.c
    }
}

/// Integrator-augmented DGU with its coupling matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDgu {
    /// Two-state local model `[V, I_t]`.
    pub base: StateSpaceModel,
    /// Three-state model `[V, I_t, v]`.
    pub aug: StateSpaceModel,
    /// `Â_ij` (3×3) for every neighbor `j`.
    pub coupling: BTreeMap<DguId, DMatrix<f64>>,
}

impl AugmentedDgu {
    /// Builds the augmented model of DGU `id` inside `g`.
    pub fn for_dgu(g: &GridGraph, id: DguId) -> Result<Self> {
        let p = g
            .dgu(id)
            .ok_or_else(|| invalid(format!("unknown DGU {id}")))?;
        let attached = g.attached_lines(id);
        let lines: Vec<LineParams> = attached.iter().map(|(_, l)| *l).collect();
        let mut aug = augment_with_integrator(&build_local_dgu(p, &lines)?)?;
        for (j, line) in attached {
            let aij = build_coupling(&line, p.c_t)?;
            aug.coupling.insert(j, pad3(&aij));
        }
        Ok(aug)
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.aug.a
    }

    pub fn b_hat(&self) -> &DMatrix<f64> {
        &self.aug.b
    }

    pub fn has_neighbors(&self) -> bool {
        !self.coupling.is_empty()
    }

    /// Filter capacitance recovered from `A_ii(1,2) = 1/C_t`.
    pub fn c_t(&self) -> f64 {
        1.0 / self.base.a[(0, 1)]
    }

    /// Filter inductance recovered from `B_i = [0; 1/L_t]`.
    pub fn l_t(&self) -> f64 {
        1.0 / self.base.b[(1, 0)]
    }

    /// Filter resistance recovered from `A_ii(2,2) = −R_t/L_t`.
    pub fn r_t(&self) -> f64 {
        -self.base.a[(1, 1)] * self.l_t()
    }
}

fn pad3(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3, 3);
    out.view_mut((0, 0), (2, 2)).copy_from(m);
    out
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Local two-state DGU model with the QSL self-coupling of its attached lines.
pub fn build_local_dgu(p: &DguParams, attached_lines: &[LineParams]) -> Result<StateSpaceModel> {
    p.validate()?;
    let mut a11 = 0.0;
    for l in attached_lines {
        l.validate()?;
        a11 -= 1.0 / (l.r * p.c_t);
    }
    let model = StateSpaceModel {
        a: linalg::from_rows(&[&[a11, 1.0 / p.c_t], &[-1.0 / p.l_t, -p.r_t / p.l_t]]),
        b: linalg::from_rows(&[&[0.0], &[1.0 / p.l_t]]),
        c: DMatrix::identity(2, 2),
        m_dist: linalg::from_rows(&[&[-1.0 / p.c_t], &[0.0]]),
        h: linalg::from_rows(&[&[1.0, 0.0]]),
        state_labels: labels(&["V", "I_t"]),
        input_labels: labels(&["V_t"]),
        output_labels: labels(&["V", "I_t"]),
        dist_labels: labels(&["I_L"]),
    };
    model.validate()?;
    Ok(model)
}

/// Coupling block `A_ij` with single entry `1/(R_ij C_ti)` at (1,1).
pub fn build_coupling(line: &LineParams, c_ti: f64) -> Result<DMatrix<f64>> {
    line.validate()?;
    if !(c_ti.is_finite() && c_ti > 0.0) {
        return Err(invalid(format!("capacitance must be positive: {c_ti}")));
    }
    let mut m = DMatrix::zeros(2, 2);
    m[(0, 0)] = 1.0 / (line.r * c_ti);
    Ok(m)
}

/// Line dynamics `İ_ij = a_ll I_ij + a_li x_i + a_lj x_j`.
pub fn build_line_subsystem(line: &LineParams) -> Result<(f64, [f64; 2], [f64; 2])> {
    line.validate()?;
    Ok((-line.r / line.l, [-1.0 / line.l, 0.0], [1.0 / line.l, 0.0]))
}

/// Adds the integrator state `v̇ = z_ref − V` to a two-state DGU model.
///
/// The exogenous input of the augmented model is `[I_L, z_ref]`.
pub fn augment_with_integrator(local: &StateSpaceModel) -> Result<AugmentedDgu> {
    local.validate()?;
    if local.n_states() != 2 || local.b.ncols() != 1 || local.m_dist.ncols() != 1 {
        return Err(invalid(
            "augmentation expects a two-state single-input DGU model",
        ));
    }
    let hc = local.hc();
    let mut a = DMatrix::zeros(3, 3);
    a.view_mut((0, 0), (2, 2)).copy_from(&local.a);
    a.view_mut((2, 0), (1, 2)).copy_from(&(-&hc));
    let mut b = DMatrix::zeros(3, 1);
    b.view_mut((0, 0), (2, 1)).copy_from(&local.b);
    let c = linalg::block_diag(&[&local.c, &DMatrix::identity(1, 1)]);
    let m_dist = linalg::block_diag(&[&local.m_dist, &DMatrix::identity(1, 1)]);
    let mut h = DMatrix::zeros(1, 3);
    h.view_mut((0, 0), (1, 2)).copy_from(&local.h);
    let aug = StateSpaceModel {
        a,
        b,
        c,
        m_dist,
        h,
        state_labels: labels(&["V", "I_t", "v"]),
        input_labels: labels(&["V_t"]),
        output_labels: labels(&["V", "I_t", "v"]),
        dist_labels: labels(&["I_L", "z_ref"]),
    };
    aug.validate()?;
    Ok(AugmentedDgu {
        base: local.clone(),
        aug,
        coupling: BTreeMap::new(),
    })
}

fn validate_grid(g: &GridGraph) -> Result<()> {
    for (_, p) in g.dgus() {
        p.validate()?;
    }
    for (_, _, l) in g.edges() {
        l.validate()?;
    }
    Ok(())
}

/// Overall QSL model with `2N` states ordered by ascending DGU id.
pub fn assemble_qsl_overall(g: &GridGraph) -> Result<StateSpaceModel> {
    validate_grid(g)?;
    let ids = g.ids();
    let n = ids.len();
    let idx = g.index_of();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, n);
    let mut m = DMatrix::zeros(2 * n, n);
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    let mut h = DMatrix::zeros(n, 2 * n);
    let mut state_labels = Vec::new();
    let mut input_labels = Vec::new();
    let mut dist_labels = Vec::new();
    let mut output_labels = Vec::new();
    for (k, &id) in ids.iter().enumerate() {
        let p = g.dgu(id).expect("id from grid");
        let lines: Vec<LineParams> = g.attached_lines(id).into_iter().map(|(_, l)| l).collect();
        let local = build_local_dgu(p, &lines)?;
        a.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&local.a);
        b.view_mut((2 * k, k), (2, 1)).copy_from(&local.b);
        m.view_mut((2 * k, k), (2, 1)).copy_from(&local.m_dist);
        c.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&local.c);
        h.view_mut((k, 2 * k), (1, 2)).copy_from(&local.h);
        for (j, line) in g.attached_lines(id) {
            let aij = build_coupling(&line, p.c_t)?;
            a.view_mut((2 * k, 2 * idx[&j]), (2, 2)).copy_from(&aij);
        }
        state_labels.push(format!("V{id}"));
        state_labels.push(format!("I_t{id}"));
        output_labels.push(format!("V{id}"));
        output_labels.push(format!("I_t{id}"));
        input_labels.push(format!("V_t{id}"));
        dist_labels.push(format!("I_L{id}"));
    }
    let model = StateSpaceModel {
        a,
        b,
        c,
        m_dist: m,
        h,
        state_labels,
        input_labels,
        output_labels,
        dist_labels,
    };
    model.validate()?;
    Ok(model)
}

/// Expanded model with line states in block-triangular form.
///
/// The first `2N` states follow the QSL overall model. Each edge then adds
/// `I_ij` and `I_ji`, driven by the DGU voltages through the line subsystem.
/// The line states do not feed back into the DGU rows, so the spectrum is
/// the union of the QSL spectrum and `−R_ij/L_ij` for each direction.
pub fn assemble_full_line_model(g: &GridGraph) -> Result<StateSpaceModel> {
    let qsl = assemble_qsl_overall(g)?;
    let n2 = qsl.n_states();
    let ne = g.edge_count();
    let nt = n2 + 2 * ne;
    let idx = g.index_of();
    let mut a = DMatrix::zeros(nt, nt);
    a.view_mut((0, 0), (n2, n2)).copy_from(&qsl.a);
    let mut state_labels = qsl.state_labels.clone();
    for (e, (i, j, line)) in g.edges().enumerate() {
        let (all, ali, alj) = build_line_subsystem(line)?;
        for (row, from, to) in [(n2 + 2 * e, i, j), (n2 + 2 * e + 1, j, i)] {
            a[(row, row)] = all;
            for q in 0..2 {
                a[(row, 2 * idx[&from] + q)] += ali[q];
                a[(row, 2 * idx[&to] + q)] += alj[q];
            }
            state_labels.push(format!("I_{from}_{to}"));
        }
    }
    let pad = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(nt, m.ncols());
        out.view_mut((0, 0), (n2, m.ncols())).copy_from(m);
        out
    };
    let mut c = DMatrix::zeros(qsl.c.nrows(), nt);
    c.view_mut((0, 0), (qsl.c.nrows(), n2)).copy_from(&qsl.c);
    let model = StateSpaceModel {
        a,
        b: pad(&qsl.b),
        c,
        m_dist: pad(&qsl.m_dist),
        h: qsl.h.clone(),
        state_labels,
        input_labels: qsl.input_labels.clone(),
        output_labels: qsl.output_labels.clone(),
        dist_labels: qsl.dist_labels.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Physical model with dynamic line currents feeding the PCC nodes.
///
/// States are `2N` DGU states followed by one current per edge `(i, j)`,
/// `i < j`, oriented as `I_ij` (entering DGU `i`); the opposite direction is
/// `I_ji = −I_ij`. Unlike the expanded model, line currents enter the
/// voltage equations, so no QSL approximation is made.
pub fn assemble_physical_model(g: &GridGraph) -> Result<StateSpaceModel> {
    validate_grid(g)?;
    let ids = g.ids();
    let n = ids.len();
    let ne = g.edge_count();
    let nt = 2 * n + ne;
    let idx = g.index_of();
    let mut a = DMatrix::zeros(nt, nt);
    let mut b = DMatrix::zeros(nt, n);
    let mut m = DMatrix::zeros(nt, n);
    let mut c = DMatrix::zeros(2 * n, nt);
    let mut h = DMatrix::zeros(n, 2 * n);
    let mut state_labels = Vec::new();
    for (k, &id) in ids.iter().enumerate() {
        let p = g.dgu(id).expect("id from grid");
        a[(2 * k, 2 * k + 1)] = 1.0 / p.c_t;
        a[(2 * k + 1, 2 * k)] = -1.0 / p.l_t;
        a[(2 * k + 1, 2 * k + 1)] = -p.r_t / p.l_t;
        b[(2 * k + 1, k)] = 1.0 / p.l_t;
        m[(2 * k, k)] = -1.0 / p.c_t;
        c[(2 * k, 2 * k)] = 1.0;
        c[(2 * k + 1, 2 * k + 1)] = 1.0;
        h[(k, 2 * k)] = 1.0;
        state_labels.push(format!("V{id}"));
        state_labels.push(format!("I_t{id}"));
    }
    for (e, (i, j, line)) in g.edges().enumerate() {
        let row = 2 * n + e;
        let (ki, kj) = (idx[&i], idx[&j]);
        a[(row, row)] = -line.r / line.l;
        a[(row, 2 * ki)] = -1.0 / line.l;
        a[(row, 2 * kj)] = 1.0 / line.l;
        a[(2 * ki, row)] = 1.0 / g.dgu(i).expect("edge endpoint").c_t;
        a[(2 * kj, row)] = -1.0 / g.dgu(j).expect("edge endpoint").c_t;
        state_labels.push(format!("I_{i}_{j}"));
    }
    let model = StateSpaceModel {
        a,
        b,
        c,
        m_dist: m,
        h,
        state_labels,
        input_labels: ids.iter().map(|i| format!("V_t{i}")).collect(),
        output_labels: ids
            .iter()
            .flat_map(|i| [format!("V{i}"), format!("I_t{i}")])
            .collect(),
        dist_labels: ids.iter().map(|i| format!("I_L{i}")).collect(),
    };
    model.validate()?;
    Ok(model)
}

/// Outcome of the invariant-zero rank test on `Γ = [[A, B],[HC, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub expected: usize,
    pub full_rank: bool,
}

/// Builds `Γ` for a QSL overall model and compares its rank with `3N`.
pub fn check_rank_gamma(qsl_overall: &StateSpaceModel) -> Result<RankReport> {
    qsl_overall.validate()?;
    let n = qsl_overall.n_states();
    let m = qsl_overall.b.ncols();
    let hc = qsl_overall.hc();
    if hc.nrows() != m {
        return Err(invalid("Γ needs as many controlled outputs as inputs"));
    }
    let mut gamma = DMatrix::zeros(n + m, n + m);
    gamma.view_mut((0, 0), (n, n)).copy_from(&qsl_overall.a);
    gamma.view_mut((0, n), (n, m)).copy_from(&qsl_overall.b);
    gamma.view_mut((n, 0), (m, n)).copy_from(&hc);
    let rank = linalg::equilibrated_rank(&gamma, RANK_TOL);
    let expected = n + m;
    Ok(RankReport {
        rank,
        expected,
        full_rank: rank == expected,
    })
}

/// Rank of the controllability matrix `[B̂, ÂB̂, Â²B̂]`.
pub fn check_local_controllability(aug: &AugmentedDgu) -> (bool, usize) {
    let a = &aug.aug.a;
    let b = &aug.aug.b;
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n * b.ncols());
    let mut blk = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * b.ncols()), (n, b.ncols()))
            .copy_from(&blk);
        blk = a * blk;
    }
    let rank = linalg::equilibrated_rank(&ctrb, RANK_TOL);
    (rank == n, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> DguParams {
        DguParams::new(0.2, 1.8e-3, 2.2e-3, 100.0, Some(10.0)).unwrap()
    }

    fn two_dgu() -> GridGraph {
        let mut g = GridGraph::new();
        g.add_dgu(1, table1()).unwrap();
        g.add_dgu(
            2,
            DguParams {
                load_r: Some(6.0),
                ..table1()
            },
        )
        .unwrap();
        g.add_line(1, 2, LineParams::new(0.05, 1.8e-6).unwrap())
            .unwrap();
        g
    }

    #[test]
    fn local_model_matches_hand_arithmetic() {
        let line = LineParams::new(0.05, 1.8e-6).unwrap();
        let m = build_local_dgu(&table1(), &[line]).unwrap();
        assert!((m.a[(0, 0)] + 1.0 / (0.05 * 2.2e-3)).abs() < 1e-9);
        assert!((m.a[(0, 1)] - 1.0 / 2.2e-3).abs() < 1e-12);
        assert!((m.a[(1, 0)] + 1.0 / 1.8e-3).abs() < 1e-12);
        assert!((m.a[(1, 1)] + 0.2 / 1.8e-3).abs() < 1e-12);
        assert_eq!(m.b[(1, 0)], 1.0 / 1.8e-3);
        assert_eq!(m.m_dist[(0, 0)], -1.0 / 2.2e-3);
    }

    #[test]
    fn isolated_dgu_has_zero_self_coupling() {
        let m = build_local_dgu(&table1(), &[]).unwrap();
        assert_eq!(m.a[(0, 0)], 0.0);
    }

    #[test]
    fn two_identical_lines_double_self_coupling() {
        let line = LineParams::new(0.05, 1.8e-6).unwrap();
        let one = build_local_dgu(&table1(), &[line]).unwrap();
        let two = build_local_dgu(&table1(), &[line, line]).unwrap();
        assert!((two.a[(0, 0)] - 2.0 * one.a[(0, 0)]).abs() < 1e-9);
    }

    #[test]
    fn coupling_entry() {
        let m = build_coupling(&LineParams::new(0.05, 1.8e-6).unwrap(), 2.2e-3).unwrap();
        assert!((m[(0, 0)] - 9090.909090909).abs() < 1e-6);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(1, 1)], 0.0);
    }

    #[test]
    fn line_subsystem_terms() {
        let (all, ali, alj) =
            build_line_subsystem(&LineParams::new(0.05, 1.8e-6).unwrap()).unwrap();
        assert!((all + 27_777.777_777_8).abs() < 1e-6);
        assert_eq!(ali[0] + alj[0], 0.0);
        assert_eq!(ali[1] + alj[1], 0.0);
    }

    #[test]
    fn augmentation_layout() {
        let aug = AugmentedDgu::for_dgu(&two_dgu(), 1).unwrap();
        let a = &aug.aug.a;
        assert_eq!([a[(2, 0)], a[(2, 1)], a[(2, 2)]], [-1.0, 0.0, 0.0]);
        assert_eq!(a.view((0, 0), (2, 2)), aug.base.a);
        assert_eq!([a[(0, 2)], a[(1, 2)]], [0.0, 0.0]);
        let c = &aug.coupling[&2];
        assert!((c[(0, 0)] - 9090.909090909).abs() < 1e-6);
        assert_eq!(c.iter().filter(|x| **x != 0.0).count(), 1);
        assert!((aug.c_t() - 2.2e-3).abs() < 1e-15);
        assert!((aug.l_t() - 1.8e-3).abs() < 1e-15);
        assert!((aug.r_t() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn graph_rejects_bad_topology() {
        let mut g = two_dgu();
        let l = LineParams::new(0.1, 1e-6).unwrap();
        assert!(g.add_line(1, 1, l).is_err());
        assert!(g.add_line(2, 1, l).is_err());
        assert!(g.add_line(1, 9, l).is_err());
        assert!(g.add_dgu(1, table1()).is_err());
        assert!(DguParams::new(-1.0, 1.0, 1.0, 1.0, None).is_err());
        assert!(LineParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn neighbor_relation_is_symmetric() {
        let g = two_dgu();
        assert_eq!(g.neighbors(1), vec![2]);
        assert_eq!(g.neighbors(2), vec![1]);
        let mut g2 = g.clone();
        g2.remove_dgu(2).unwrap();
        assert_eq!(g2.edge_count(), 0);
    }

    #[test]
    fn single_dgu_overall_equals_local() {
        let mut g = GridGraph::new();
        g.add_dgu(1, table1()).unwrap();
        let overall = assemble_qsl_overall(&g).unwrap();
        let local = build_local_dgu(&table1(), &[]).unwrap();
        assert_eq!(overall.a, local.a);
        assert_eq!(overall.b, local.b);
    }

    #[test]
    fn full_model_state_count() {
        let g = two_dgu();
        let full = assemble_full_line_model(&g).unwrap();
        assert_eq!(full.n_states(), 2 * 2 + 2);
        let phys = assemble_physical_model(&g).unwrap();
        assert_eq!(phys.n_states(), 2 * 2 + 1);
    }

    #[test]
    fn physical_model_reduces_to_qsl() {
        // Eliminating the line state with İ = 0 recovers the QSL matrix.
        let g = two_dgu();
        let phys = assemble_physical_model(&g).unwrap();
        let qsl = assemble_qsl_overall(&g).unwrap();
        let n = 4;
        let a11 = phys.a.view((0, 0), (n, n)).clone_owned();
        let a12 = phys.a.view((0, n), (n, 1)).clone_owned();
        let a21 = phys.a.view((n, 0), (1, n)).clone_owned();
        let a22 = phys.a[(n, n)];
        let reduced = a11 - a12 * a21 / a22;
        assert!((reduced - &qsl.a).abs().max() < 1e-6 * qsl.a.abs().max());
    }

    #[test]
    fn rank_and_controllability_on_table1() {
        let g = two_dgu();
        let r = check_rank_gamma(&assemble_qsl_overall(&g).unwrap()).unwrap();
        assert_eq!(r.rank, 6);
        assert!(r.full_rank);
        let (ok, rank) = check_local_controllability(&AugmentedDgu::for_dgu(&g, 1).unwrap());
        assert!(ok && rank == 3);
    }

    #[test]
    fn zeroed_input_is_uncontrollable() {
        let mut aug = AugmentedDgu::for_dgu(&two_dgu(), 1).unwrap();
        aug.aug.b.fill(0.0);
        let (ok, rank) = check_local_controllability(&aug);
        assert!(!ok && rank < 3);
    }
}
