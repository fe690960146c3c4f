//! Small semidefinite-programming front end for linear matrix inequalities.
//!
//! Decision variables are scalars. Matrix expressions are affine in them,
//! `F(x) = F₀ + Σ xₖ Fₖ`, and constraints are `F(x) ⪰ 0`, affine equalities
//! or affine scalar inequalities. Problems are handed to the Clarabel
//! interior-point solver through its scaled upper-triangle PSD cone.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

/// Matrix expression affine in the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMat {
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineMat {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn add(&self, other: &AffineMat) -> AffineMat {
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&k, m) in &other.terms {
            out.terms
                .entry(k)
                .and_modify(|x| *x += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn scale(&self, s: f64) -> AffineMat {
        AffineMat {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(&k, m)| (k, m * s)).collect(),
        }
    }

    pub fn sub(&self, other: &AffineMat) -> AffineMat {
        self.add(&other.scale(-1.0))
    }

    pub fn transpose(&self) -> AffineMat {
        AffineMat {
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|(&k, m)| (k, m.transpose()))
                .collect(),
        }
    }

    /// `L · self`.
    pub fn left_mul(&self, l: &DMatrix<f64>) -> AffineMat {
        AffineMat {
            constant: l * &self.constant,
            terms: self.terms.iter().map(|(&k, m)| (k, l * m)).collect(),
        }
    }

    /// `self · R`.
    pub fn right_mul(&self, r: &DMatrix<f64>) -> AffineMat {
        AffineMat {
            constant: &self.constant * r,
            terms: self.terms.iter().map(|(&k, m)| (k, m * r)).collect(),
        }
    }

    /// Sub-block starting at `(r, c)` with shape `(nr, nc)`.
    pub fn block(&self, r: usize, c: usize, nr: usize, nc: usize) -> AffineMat {
        AffineMat {
            constant: self.constant.view((r, c), (nr, nc)).clone_owned(),
            terms: self
                .terms
                .iter()
                .map(|(&k, m)| (k, m.view((r, c), (nr, nc)).clone_owned()))
                .collect(),
        }
    }

    /// Entry `(i, j)` as an affine scalar.
    pub fn entry(&self, i: usize, j: usize) -> AffineScalar {
        AffineScalar {
            constant: self.constant[(i, j)],
            terms: self
                .terms
                .iter()
                .filter(|(_, m)| m[(i, j)] != 0.0)
                .map(|(&k, m)| (k, m[(i, j)]))
                .collect(),
        }
    }

    /// Block matrix assembled from a grid of expressions with compatible shapes.
    pub fn bmat(grid: &[Vec<AffineMat>]) -> AffineMat {
        let rows: Vec<usize> = grid.iter().map(|row| row[0].shape().0).collect();
        let cols: Vec<usize> = grid[0].iter().map(|m| m.shape().1).collect();
        let (nr, nc) = (rows.iter().sum(), cols.iter().sum());
        let mut out = AffineMat::zeros(nr, nc);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, m) in row.iter().enumerate() {
                assert_eq!(m.shape(), (rows[bi], cols[bj]), "incompatible block shapes");
                out.constant
                    .view_mut((r0, c0), m.shape())
                    .copy_from(&m.constant);
                for (&k, t) in &m.terms {
                    let e = out.terms.entry(k).or_insert_with(|| DMatrix::zeros(nr, nc));
                    e.view_mut((r0, c0), t.shape()).copy_from(t);
                }
                c0 += cols[bj];
            }
            r0 += rows[bi];
        }
        out
    }

    /// Value at a point.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (&k, m) in &self.terms {
            out += m * x[k];
        }
        out
    }
}

/// Scalar expression affine in the decision variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineScalar {
    pub constant: f64,
    pub terms: BTreeMap<usize, f64>,
}

impl AffineScalar {
    pub fn var(k: usize) -> Self {
        Self {
            constant: 0.0,
            terms: BTreeMap::from([(k, 1.0)]),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&k, &c)| c * x[k]).sum::<f64>()
    }

    pub fn sub(&self, other: &AffineScalar) -> AffineScalar {
        let mut out = self.clone();
        out.constant -= other.constant;
        for (&k, &c) in &other.terms {
            *out.terms.entry(k).or_insert(0.0) -= c;
        }
        out
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq)]
pub enum SdpOutcome {
    Solved { x: Vec<f64>, objective: f64 },
    Infeasible { status: String },
    NumericalFailure { status: String },
}

/// Solver settings exposed to callers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    pub max_iter: u32,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_gap_rel: 1e-9,
            tol_feas: 1e-9,
        }
    }
}

/// `minimize cᵀx` subject to LMI, equality and scalar-inequality constraints.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    n_vars: usize,
    cost: Vec<f64>,
    equalities: Vec<AffineScalar>,
    nonnegatives: Vec<AffineScalar>,
    lmis: Vec<AffineMat>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a scalar variable and returns its index.
    pub fn scalar(&mut self) -> usize {
        self.n_vars += 1;
        self.cost.push(0.0);
        self.n_vars - 1
    }

    /// Symmetric `n×n` matrix of fresh variables.
    pub fn symmetric(&mut self, n: usize) -> AffineMat {
        let mut m = AffineMat::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let k = self.scalar();
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                m.terms.insert(k, e);
            }
        }
        m
    }

    /// General `r×c` matrix of fresh variables.
    pub fn matrix(&mut self, r: usize, c: usize) -> AffineMat {
        let mut m = AffineMat::zeros(r, c);
        for j in 0..c {
            for i in 0..r {
                let k = self.scalar();
                let mut e = DMatrix::zeros(r, c);
                e[(i, j)] = 1.0;
                m.terms.insert(k, e);
            }
        }
        m
    }

    pub fn set_cost(&mut self, var: usize, c: f64) {
        self.cost[var] = c;
    }

    /// `expr = 0`.
    pub fn equal_zero(&mut self, expr: AffineScalar) {
        self.equalities.push(expr);
    }

    /// `expr ≥ 0`.
    pub fn nonnegative(&mut self, expr: AffineScalar) {
        self.nonnegatives.push(expr);
    }

    /// `F ⪰ 0`; `F` is symmetrized before use.
    pub fn psd(&mut self, f: AffineMat) {
        assert_eq!(f.shape().0, f.shape().1, "LMI must be square");
        let sym = f.add(&f.transpose()).scale(0.5);
        self.lmis.push(sym);
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn solve(&self, settings: &SdpSettings) -> SdpOutcome {
        let n = self.n_vars;
        // Rows of A, stored per column for CSC assembly.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0;
        let push_scalar = |e: &AffineScalar,
                           cols: &mut Vec<Vec<(usize, f64)>>,
                           b: &mut Vec<f64>,
                           row: &mut usize| {
            // s = b − A x with s = constant + Σ c_k x_k.
            b.push(e.constant);
            for (&k, &c) in &e.terms {
                if c != 0.0 {
                    cols[k].push((*row, -c));
                }
            }
            *row += 1;
        };
        if !self.equalities.is_empty() {
            for e in &self.equalities {
                push_scalar(e, &mut cols, &mut b, &mut row);
            }
            cones.push(SupportedConeT::ZeroConeT(self.equalities.len()));
        }
        if !self.nonnegatives.is_empty() {
            for e in &self.nonnegatives {
                push_scalar(e, &mut cols, &mut b, &mut row);
            }
            cones.push(SupportedConeT::NonnegativeConeT(self.nonnegatives.len()));
        }
        for f in &self.lmis {
            let dim = f.shape().0;
            let base = row;
            let sv = svec(&f.constant);
            b.extend_from_slice(&sv);
            for (&k, m) in &f.terms {
                for (r, v) in svec(m).into_iter().enumerate() {
                    if v != 0.0 {
                        cols[k].push((base + r, -v));
                    }
                }
            }
            row += sv.len();
            cones.push(SupportedConeT::PSDTriangleConeT(dim));
        }
        let m = row;
        let mut colptr = vec![0usize];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for c in &mut cols {
            c.sort_by_key(|&(r, _)| r);
            for &(r, v) in c.iter() {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::zeros((n, n));
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_gap_rel(settings.tol_gap_rel)
            .tol_gap_abs(settings.tol_gap_rel)
            .tol_feas(settings.tol_feas)
            .build()
            .expect("valid solver settings");
        let mut solver = match DefaultSolver::new(&p, &self.cost, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return SdpOutcome::NumericalFailure {
                    status: format!("setup: {e}"),
                }
            }
        };
        solver.solve();
        let status = solver.solution.status;
        match status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SdpOutcome::Solved {
                x: solver.solution.x.clone(),
                objective: solver.solution.obj_val,
            },
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SdpOutcome::Infeasible {
                    status: format!("{status:?}"),
                }
            }
            _ => SdpOutcome::NumericalFailure {
                status: format!("{status:?}"),
            },
        }
    }
}

/// Scaled upper-triangle vectorization, column-major, off-diagonals times √2.
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out.push(if i == j {
                v
            } else {
                v * std::f64::consts::SQRT_2
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn scalar_lmi_minimum() {
        // min x s.t. [[x, 1], [1, x]] ⪰ 0 has optimum x = 1.
        let mut p = SdpProblem::new();
        let x = p.scalar();
        p.set_cost(x, 1.0);
        let mut f = AffineMat::constant(linalg::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        f.terms.insert(x, DMatrix::identity(2, 2));
        p.psd(f);
        match p.solve(&SdpSettings::default()) {
            SdpOutcome::Solved { x: sol, .. } => assert!((sol[x] - 1.0).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lyapunov_lmi_for_stable_matrix() {
        // Find P ⪰ I with AᵀP + PA ⪯ −I for a Hurwitz A, minimizing trace P.
        let a = linalg::from_rows(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        let mut p = SdpProblem::new();
        let pm = p.symmetric(2);
        p.psd(pm.sub(&AffineMat::constant(DMatrix::identity(2, 2))));
        let lyap = pm.left_mul(&a.transpose()).add(&pm.right_mul(&a));
        p.psd(
            lyap.scale(-1.0)
                .sub(&AffineMat::constant(DMatrix::identity(2, 2))),
        );
        let tr = pm.entry(0, 0);
        for (&k, &c) in &tr.terms {
            p.set_cost(k, c);
        }
        let tr2 = pm.entry(1, 1);
        for (&k, &c) in &tr2.terms {
            p.set_cost(k, c);
        }
        let SdpOutcome::Solved { x, .. } = p.solve(&SdpSettings::default()) else {
            panic!("expected a solution");
        };
        let pv = pm.eval(&x);
        let q = a.transpose() * &pv + &pv * &a;
        assert!(linalg::sym_min_eigenvalue(&pv) > 1.0 - 1e-6);
        assert!(linalg::sym_max_eigenvalue(&q) < -1.0 + 1e-6);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        // x ≥ 1 and x ≤ −1 cannot both hold.
        let mut p = SdpProblem::new();
        let x = p.scalar();
        let mut e = AffineScalar::var(x);
        e.constant = -1.0;
        p.nonnegative(e);
        let mut f = AffineScalar::var(x);
        f.terms.insert(x, -1.0);
        f.constant = -1.0;
        p.nonnegative(f);
        assert!(matches!(
            p.solve(&SdpSettings::default()),
            SdpOutcome::Infeasible { .. }
        ));
    }

    #[test]
    fn equality_constraint_is_enforced() {
        let mut p = SdpProblem::new();
        let y = p.symmetric(2);
        let mut e = y.entry(0, 0);
        e.constant -= 2.0;
        p.equal_zero(e);
        p.psd(y.clone());
        let t = y.entry(1, 1);
        for (&k, &c) in &t.terms {
            p.set_cost(k, c);
        }
        let SdpOutcome::Solved { x, .. } = p.solve(&SdpSettings::default()) else {
            panic!("expected a solution");
        };
        assert!((y.eval(&x)[(0, 0)] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn bmat_layout() {
        let a = AffineMat::constant(DMatrix::from_element(1, 1, 1.0));
        let b = AffineMat::constant(DMatrix::from_element(1, 2, 2.0));
        let c = AffineMat::constant(DMatrix::from_element(2, 1, 3.0));
        let d = AffineMat::constant(DMatrix::from_element(2, 2, 4.0));
        let m = AffineMat::bmat(&[vec![a, b], vec![c, d]]);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m.constant[(0, 2)], 2.0);
        assert_eq!(m.constant[(2, 0)], 3.0);
        assert_eq!(m.constant[(2, 2)], 4.0);
    }
}
