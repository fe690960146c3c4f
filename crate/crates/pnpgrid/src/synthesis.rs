//! Local controller synthesis through the per-DGU LMI problem and stability certificates.
//!
//! Each DGU gets a state feedback `u = K x̂` on `x̂ = [V, I_t, v]` and a
//! Lyapunov matrix `P` with `P(1,1) = η`, `P(1,2) = P(1,3) = 0`. With
//! `Y = P⁻¹` and `G = K Y` the design conditions are LMIs in `(Y, G)`.
//!
//! With the structured `P` and the integrator row `v̇ = −V`, the Lyapunov
//! expression `Q = Âclᵀ P + P Âcl` always satisfies `wᵀ Q w = 0` for
//! `w = P⁻¹ e₃`. A strictly negative `Q` therefore does not exist. The
//! solver instead imposes `Q ⪯ 0` with `Q w = 0` and strict negativity on
//! the complement. Asymptotic stability then follows from LaSalle's
//! invariance principle, because `(Q, Âcl)` is observable. Both the strict
//! and the semidefinite reading are reported by [`verify_certificate`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::invalid;
use crate::grid::{check_local_controllability, AugmentedDgu, DguId, GridGraph};
use crate::linalg::{self, RANK_TOL};
use crate::lmi::{AffineMat, AffineScalar, SdpOutcome, SdpProblem, SdpSettings};

/// Positive weights of the cost `α₁γ + α₂β + α₃δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LmiWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }
}

impl LmiWeights {
    pub fn validate(&self) -> crate::Result<()> {
        if [self.alpha1, self.alpha2, self.alpha3]
            .iter()
            .all(|a| a.is_finite() && *a > 0.0)
        {
            Ok(())
        } else {
            Err(invalid(format!("LMI weights must be positive: {self:?}")))
        }
    }
}

/// Ratio of the integrator time scale to `√(L_t C_t)` used by default.
pub const DEFAULT_TIME_SCALE_FACTOR: f64 = 1.5;

/// Tuning of a single synthesis run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    /// `P(1,1)`; `None` selects `1e−2 · min_j(R_ij C_ti) · assumption2_tol`.
    pub eta: Option<f64>,
    /// Margin of the strict inequalities, relative to the scaled model norm.
    pub feasibility_margin: f64,
    /// Threshold on `η_i / (R_ij C_ti)`.
    pub assumption2_tol: f64,
    /// Time scale `τ` of the nondimensional coordinates; `None` selects `1.5 √(L_t C_t)`.
    pub time_scale: Option<f64>,
    pub sdp: SdpSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            eta: None,
            feasibility_margin: 1e-6,
            assumption2_tol: 1e-3,
            time_scale: None,
            sdp: SdpSettings::default(),
        }
    }
}

impl SynthesisOptions {
    pub fn validate(&self) -> crate::Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.feasibility_margin) || !pos(self.assumption2_tol) {
            return Err(invalid(
                "margin and Assumption-2 tolerance must be positive",
            ));
        }
        if self.eta.is_some_and(|e| !pos(e)) || self.time_scale.is_some_and(|t| !pos(t)) {
            return Err(invalid("eta and time scale must be positive"));
        }
        Ok(())
    }

    /// `η` for a DGU.
    ///
    /// An isolated DGU has no line time constant, so its own `R_t C_t` stands in.
    pub fn eta_for(&self, aug: &AugmentedDgu) -> f64 {
        self.eta.unwrap_or_else(|| {
            let rc = aug
                .coupling
                .values()
                .map(|m| 1.0 / m[(0, 0)])
                .fold(f64::INFINITY, f64::min);
            let rc = if rc.is_finite() {
                rc
            } else {
                aug.r_t() * aug.c_t()
            };
            1e-2 * rc * self.assumption2_tol
        })
    }

    pub fn time_scale_for(&self, aug: &AugmentedDgu) -> f64 {
        self.time_scale
            .unwrap_or_else(|| DEFAULT_TIME_SCALE_FACTOR * (aug.l_t() * aug.c_t()).sqrt())
    }
}

/// Provenance of a gain set.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverMeta {
    pub solver: String,
    pub status: String,
    /// Whether `P` carries the `η`-block structure (false only for isolated DGUs).
    pub structured: bool,
    pub time_scale: f64,
    pub objective: f64,
}

/// Local gains `K = [k_v, k_c, k_i]` with their Lyapunov certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub k: [f64; 3],
    /// Symmetric 3×3 Lyapunov matrix.
    pub p: DMatrix<f64>,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub delta: f64,
    pub meta: SolverMeta,
}

impl ControllerGains {
    pub fn k_row(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 3, &self.k)
    }

    pub fn k_v(&self) -> f64 {
        self.k[0]
    }

    pub fn k_c(&self) -> f64 {
        self.k[1]
    }

    pub fn k_i(&self) -> f64 {
        self.k[2]
    }

    /// `Y = P⁻¹`.
    pub fn y(&self) -> Option<DMatrix<f64>> {
        self.p.clone().try_inverse().map(|y| linalg::symmetrize(&y))
    }

    /// `G = K Y`.
    pub fn g(&self) -> Option<DMatrix<f64>> {
        self.y().map(|y| self.k_row() * y)
    }

    /// `Â + B̂ K` for the given model.
    pub fn closed_loop(&self, aug: &AugmentedDgu) -> DMatrix<f64> {
        aug.a_hat() + aug.b_hat() * self.k_row()
    }
}

/// Why synthesis produced no gains.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("problem is infeasible ({status})")]
    Infeasible { status: String },
    #[error("solver failed numerically ({status}); retry with different margin or settings")]
    NumericalFailure { status: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl From<crate::Error> for SynthesisError {
    fn from(e: crate::Error) -> Self {
        SynthesisError::InvalidInput(e.to_string())
    }
}

impl From<SynthesisError> for crate::Error {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Infeasible { .. } => crate::Error::Infeasible(e.to_string()),
            SynthesisError::NumericalFailure { .. } => crate::Error::Numerical(e.to_string()),
            SynthesisError::InvalidInput(m) => crate::Error::InvalidInput(m),
        }
    }
}

/// Nondimensional coordinates `x = T x̃`, `t = τ t̃`.
struct Scaling {
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Scaling {
    fn new(aug: &AugmentedDgu, tau: f64) -> Self {
        let diag = [1.0, aug.c_t() / tau, tau];
        let t = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&diag));
        let t_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            3,
            diag.iter().map(|d| 1.0 / d),
        ));
        let a = &t_inv * aug.a_hat() * &t * tau;
        let b = &t_inv * aug.b_hat() * tau;
        Self { t, t_inv, a, b }
    }
}

/// Solves the LMI problem for one DGU and recovers `K = G Y⁻¹`, `P = Y⁻¹`.
///
/// The problem is posed in nondimensional coordinates with `Y(1,1)`
/// normalized to one. For a DGU with neighbors `Y(1,2) = Y(1,3) = 0`, and the
/// stability LMI is imposed as `Q ⪯ 0` with strict negativity off the
/// structurally null direction (see the module docs). The integrator
/// diagonal `Ỹ(3,3)` is capped at `Ỹ(1,1)`, which pins the integrator gain
/// to the time scale `τ`. Otherwise the cost leaves it undetermined.
#[allow(non_snake_case)]
pub fn solve_problem_O(
    aug: &AugmentedDgu,
    w: &LmiWeights,
    opts: &SynthesisOptions,
) -> Result<ControllerGains, SynthesisError> {
    w.validate()?;
    opts.validate()?;
    let (controllable, rank) = check_local_controllability(aug);
    if !controllable {
        return Err(SynthesisError::InvalidInput(format!(
            "augmented DGU is not controllable (rank {rank})"
        )));
    }
    let structured = aug.has_neighbors();
    let eta = opts.eta_for(aug);
    let tau = opts.time_scale_for(aug);
    let sc = Scaling::new(aug, tau);
    let eps = opts.feasibility_margin * linalg::norm2(&sc.a).max(1.0);

    let mut prob = SdpProblem::new();
    let y = prob.symmetric(3);
    let g = prob.matrix(1, 3);
    let gamma = prob.scalar();
    let beta = prob.scalar();
    let delta = prob.scalar();
    prob.set_cost(gamma, w.alpha1);
    prob.set_cost(beta, w.alpha2);
    prob.set_cost(delta, w.alpha3);

    let eye = |n: usize| AffineMat::constant(DMatrix::identity(n, n));
    let var = |k: usize, n: usize| {
        let mut m = AffineMat::zeros(n, n);
        m.terms.insert(k, DMatrix::identity(n, n));
        m
    };
    let shifted = |s: AffineScalar, c: f64| AffineScalar {
        constant: s.constant + c,
        ..s
    };

    prob.equal_zero(shifted(y.entry(0, 0), -1.0));
    if structured {
        prob.equal_zero(y.entry(0, 1));
        prob.equal_zero(y.entry(0, 2));
    }
    prob.psd(y.sub(&eye(3).scale(eps)));
    prob.nonnegative(shifted(AffineScalar::default().sub(&y.entry(2, 2)), 1.0));

    let ay = y.left_mul(&sc.a);
    let bg = g.left_mul(&sc.b);
    let m = ay.add(&ay.transpose()).add(&bg).add(&bg.transpose());
    if structured {
        prob.equal_zero(m.entry(0, 2));
        prob.equal_zero(m.entry(1, 2));
        let m2 = m.block(0, 0, 2, 2);
        let y2 = y.block(0, 0, 2, 3);
        let stab = AffineMat::bmat(&[
            vec![m2, y2.clone()],
            vec![y2.transpose(), var(gamma, 3).scale(-1.0)],
        ]);
        prob.psd(stab.scale(-1.0).sub(&eye(5).scale(eps)));
    } else {
        let stab = AffineMat::bmat(&[
            vec![m, y.clone()],
            vec![y.clone(), var(gamma, 3).scale(-1.0)],
        ]);
        prob.psd(stab.scale(-1.0).sub(&eye(6).scale(eps)));
    }
    let gbound = AffineMat::bmat(&[
        vec![var(beta, 3).scale(-1.0), g.transpose()],
        vec![g.clone(), eye(1).scale(-1.0)],
    ]);
    prob.psd(gbound.scale(-1.0).sub(&eye(4).scale(eps)));
    let ybound = AffineMat::bmat(&[vec![y.clone(), eye(3)], vec![eye(3), var(delta, 3)]]);
    prob.psd(ybound.sub(&eye(6).scale(eps)));

    let (x, objective, status) = match prob.solve(&opts.sdp) {
        SdpOutcome::Solved { x, objective } => (x, objective, "solved".to_string()),
        SdpOutcome::Infeasible { status } => return Err(SynthesisError::Infeasible { status }),
        SdpOutcome::NumericalFailure { status } => {
            return Err(SynthesisError::NumericalFailure { status })
        }
    };

    let mut yt = linalg::symmetrize(&y.eval(&x));
    let mut gt = g.eval(&x);
    // Snap the equality constraints to exact values: Ỹ(1,1) = 1, the zero
    // pattern, and the two closure equalities solved for Ỹ(2,3) and G̃(3).
    yt[(0, 0)] = 1.0;
    if structured {
        for (i, j) in [(0, 1), (1, 0), (0, 2), (2, 0)] {
            yt[(i, j)] = 0.0;
        }
        let y23 = -sc.a[(2, 0)] / sc.a[(0, 1)];
        yt[(1, 2)] = y23;
        yt[(2, 1)] = y23;
        gt[(0, 2)] = -sc.a[(1, 1)] * y23 / sc.b[(1, 0)];
    }
    let yt_inv = yt
        .clone()
        .try_inverse()
        .ok_or_else(|| SynthesisError::NumericalFailure {
            status: "singular Y".into(),
        })?;
    let k_scaled = &gt * &yt_inv;
    let k_row = &k_scaled * &sc.t_inv;
    let y_si = &sc.t * &yt * &sc.t / eta;
    let g_si = &gt * &sc.t / eta;
    let p = linalg::symmetrize(&(&sc.t_inv * &yt_inv * &sc.t_inv * eta));
    let (gamma_v, beta_v, delta_v) =
        tight_scalars(aug, &y_si, &g_si, structured).ok_or_else(|| {
            SynthesisError::NumericalFailure {
                status: "recovered point violates the stability LMI".into(),
            }
        })?;
    let mut p = p;
    if structured {
        p[(0, 0)] = eta;
        for (i, j) in [(0, 1), (1, 0), (0, 2), (2, 0)] {
            p[(i, j)] = 0.0;
        }
    }
    Ok(ControllerGains {
        k: [k_row[(0, 0)], k_row[(0, 1)], k_row[(0, 2)]],
        p,
        eta,
        gamma: gamma_v,
        beta: beta_v,
        delta: delta_v,
        meta: SolverMeta {
            solver: "clarabel".into(),
            status,
            structured,
            time_scale: tau,
            objective,
        },
    })
}

/// Inflation applied to the tight certificate scalars so the strict inequalities hold.
const SCALAR_INFLATION: f64 = 1.0 + 1e-6;

/// Smallest `γ, β, δ` (slightly inflated) certifying the recovered `(Y, G)` in SI units.
fn tight_scalars(
    aug: &AugmentedDgu,
    y: &DMatrix<f64>,
    g: &DMatrix<f64>,
    structured: bool,
) -> Option<(f64, f64, f64)> {
    let m = stability_expression(aug, y, g);
    let (mm, yy) = if structured {
        (
            m.view((0, 0), (2, 2)).clone_owned(),
            y.view((0, 0), (2, 3)).clone_owned(),
        )
    } else {
        (m, y.clone())
    };
    let neg = -linalg::symmetrize(&mm);
    if linalg::sym_min_eigenvalue(&neg) <= 0.0 {
        return None;
    }
    let inv = neg.try_inverse()?;
    let gamma = linalg::sym_max_eigenvalue(&(yy.transpose() * inv * &yy)) * SCALAR_INFLATION;
    let beta = g.norm_squared() * SCALAR_INFLATION;
    let delta = SCALAR_INFLATION / linalg::sym_min_eigenvalue(y);
    Some((
        gamma.max(f64::MIN_POSITIVE),
        beta.max(f64::MIN_POSITIVE),
        delta,
    ))
}

/// `Â Y + Y Âᵀ + B̂ G + Gᵀ B̂ᵀ`.
fn stability_expression(aug: &AugmentedDgu, y: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let ay = aug.a_hat() * y;
    let bg = aug.b_hat() * g;
    &ay + ay.transpose() + &bg + bg.transpose()
}

/// One pass/fail item of a certificate report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    /// Signed margin; positive when the check passes.
    pub slack: f64,
}

impl Check {
    fn new(passed: bool, slack: f64) -> Self {
        Self { passed, slack }
    }
}

/// Relative threshold for treating an eigenvalue of `Q` as zero.
pub const LYAPUNOV_ZERO_TOL: f64 = 1e-9;
/// Relative threshold for the `η`-structure of `P`.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Independent checks of a gain set against a model.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub p_positive_definite: Check,
    /// `P(1,1) = η`, `P(1,2) = P(1,3) = 0`; vacuous for an isolated DGU.
    pub structure: Check,
    pub structure_required: bool,
    /// `λ_max(Q) < 0` strictly (relative to `‖Q‖`).
    pub lyapunov_strict: Check,
    /// `Q ⪯ 0` and `(Q, Âcl)` observable.
    pub lyapunov_lasalle: Check,
    /// `‖K‖₂ < √β δ`.
    pub gain_bound: Check,
    /// Every eigenvalue of `Âcl` in the open left half-plane.
    pub hurwitz: Check,
    pub lyapunov_max_eigenvalue: f64,
}

impl CertificateReport {
    /// The literal strict-Lyapunov reading of the certificate.
    pub fn passes_strict(&self) -> bool {
        self.p_positive_definite.passed
            && self.structure.passed
            && self.lyapunov_strict.passed
            && self.gain_bound.passed
    }

    /// Strict or semidefinite-with-LaSalle Lyapunov certificate, plus the spectral check.
    pub fn is_valid(&self) -> bool {
        self.p_positive_definite.passed
            && self.structure.passed
            && (self.lyapunov_strict.passed || self.lyapunov_lasalle.passed)
            && self.gain_bound.passed
            && self.hurwitz.passed
    }
}

/// `Âclᵀ P + P Âcl`.
pub fn lyapunov_expression(aug: &AugmentedDgu, g: &ControllerGains) -> DMatrix<f64> {
    let acl = g.closed_loop(aug);
    linalg::symmetrize(&(acl.transpose() * &g.p + &g.p * &acl))
}

/// Checks a gain set without calling the solver.
pub fn verify_certificate(aug: &AugmentedDgu, g: &ControllerGains) -> CertificateReport {
    let p = linalg::symmetrize(&g.p);
    let pnorm = linalg::norm2(&p).max(f64::MIN_POSITIVE);
    let pmin = linalg::sym_min_eigenvalue(&p);
    let p_positive_definite = Check::new(pmin > 0.0, pmin / pnorm);

    let structure_required = aug.has_neighbors();
    let dev = (p[(0, 1)].abs().max(p[(0, 2)].abs()) / pnorm)
        .max((p[(0, 0)] - g.eta).abs() / g.eta.abs().max(f64::MIN_POSITIVE));
    let structure = if structure_required {
        Check::new(dev <= STRUCTURE_TOL, STRUCTURE_TOL - dev)
    } else {
        Check::new(true, STRUCTURE_TOL - dev)
    };

    let acl = g.closed_loop(aug);
    let q = lyapunov_expression(aug, g);
    let qnorm = linalg::norm2(&q).max(f64::MIN_POSITIVE);
    let qmax = linalg::sym_max_eigenvalue(&q);
    let rel = qmax / qnorm;
    let lyapunov_strict = Check::new(rel < -LYAPUNOV_ZERO_TOL, -rel - LYAPUNOV_ZERO_TOL);
    let mut obs = DMatrix::zeros(9, 3);
    let mut blk = q.clone();
    for k in 0..3 {
        obs.view_mut((3 * k, 0), (3, 3)).copy_from(&blk);
        blk = &blk * &acl;
    }
    let observable = linalg::equilibrated_rank(&obs, RANK_TOL) == 3;
    let lyapunov_lasalle = Check::new(
        rel <= LYAPUNOV_ZERO_TOL && observable,
        LYAPUNOV_ZERO_TOL - rel,
    );

    let knorm = linalg::norm2(&g.k_row());
    let bound = g.beta.max(0.0).sqrt() * g.delta;
    let gain_bound = Check::new(
        knorm < bound,
        (bound - knorm) / bound.max(f64::MIN_POSITIVE),
    );

    let max_re = linalg::eigenvalues(&acl)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let hurwitz = Check::new(max_re < 0.0, -max_re);

    CertificateReport {
        p_positive_definite,
        structure,
        structure_required,
        lyapunov_strict,
        lyapunov_lasalle,
        gain_bound,
        hurwitz,
        lyapunov_max_eigenvalue: qmax,
    }
}

/// Re-checks the design constraints for an existing gain set on a (possibly changed) model.
///
/// `(Y, G)` are recovered from `(P, K)`. The scalars `γ, β, δ` are decision
/// variables of the design problem, so the stability constraint passes when
/// some `γ > 0` satisfies it; the gain and `Y` bounds use the stored `β, δ`,
/// which do not depend on the topology. The certificate is re-verified.
#[derive(Debug, Clone, PartialEq)]
pub struct RevalidationReport {
    pub y_structure: bool,
    pub stability_lmi: bool,
    /// Least `γ` for which the stability constraint holds.
    pub gamma_min: Option<f64>,
    pub g_bound: bool,
    pub y_bound: bool,
    pub certificate: CertificateReport,
}

impl RevalidationReport {
    pub fn passed(&self) -> bool {
        self.y_structure
            && self.stability_lmi
            && self.g_bound
            && self.y_bound
            && self.certificate.is_valid()
    }
}

pub fn revalidate(aug: &AugmentedDgu, g: &ControllerGains) -> RevalidationReport {
    let certificate = verify_certificate(aug, g);
    let fail = |certificate| RevalidationReport {
        y_structure: false,
        stability_lmi: false,
        gamma_min: None,
        g_bound: false,
        y_bound: false,
        certificate,
    };
    let (Some(y), Some(gm)) = (g.y(), g.g()) else {
        return fail(certificate);
    };
    let structured = aug.has_neighbors();
    let ynorm = linalg::norm2(&y);
    let y_structure = !structured
        || (y[(0, 1)].abs().max(y[(0, 2)].abs()) <= STRUCTURE_TOL * ynorm
            && (y[(0, 0)] * g.eta - 1.0).abs() <= STRUCTURE_TOL);
    let m = stability_expression(aug, &y, &gm);
    let mnorm = linalg::norm2(&m).max(f64::MIN_POSITIVE);
    // With `Y, G` fixed the LMI holds for some `γ` exactly when the
    // constrained block of `M` is negative definite; the least such `γ` is
    // the largest eigenvalue of `Yᵀ(−M)⁻¹Y` on that block.
    let (mb, yb, closure) = if structured {
        let closure = m[(0, 2)].abs().max(m[(1, 2)].abs()) <= LYAPUNOV_ZERO_TOL * mnorm;
        (
            m.view((0, 0), (2, 2)).clone_owned(),
            y.view((0, 0), (2, 3)).clone_owned(),
            closure,
        )
    } else {
        (m.clone(), y.clone(), true)
    };
    let negative = linalg::sym_max_eigenvalue(&mb) < -LYAPUNOV_ZERO_TOL * mnorm;
    let gamma_min = if closure && negative {
        (-&mb)
            .cholesky()
            .map(|c| linalg::sym_max_eigenvalue(&(yb.transpose() * c.solve(&yb))))
    } else {
        None
    };
    let stability_lmi = gamma_min.is_some();
    let g_bound = gm.norm_squared() < g.beta;
    let y_bound = linalg::sym_min_eigenvalue(&y) > 1.0 / g.delta;
    RevalidationReport {
        y_structure,
        stability_lmi,
        gamma_min,
        g_bound,
        y_bound,
        certificate,
    }
}

/// Worst `η_i / (R_ij C_ti)` over all DGUs and neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct Assumption2Report {
    pub passed: bool,
    pub worst_ratio: f64,
    pub worst_edge: Option<(DguId, DguId)>,
}

pub fn check_assumption_2(
    g: &GridGraph,
    etas: &BTreeMap<DguId, f64>,
    tol: f64,
) -> Assumption2Report {
    let mut worst = 0.0;
    let mut worst_edge = None;
    for (i, p) in g.dgus() {
        let Some(&eta) = etas.get(&i) else { continue };
        for (j, line) in g.attached_lines(i) {
            let r = eta / (line.r * p.c_t);
            if r > worst {
                worst = r;
                worst_edge = Some((i, j));
            }
        }
    }
    Assumption2Report {
        passed: worst <= tol,
        worst_ratio: worst,
        worst_edge,
    }
}

/// Stability evidence for the interconnected QSL closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCertificate {
    /// All closed-loop eigenvalues have negative real part.
    pub spectral_ok: bool,
    pub max_real_part: f64,
    pub eigenvalues: Vec<Complex64>,
    /// `λ_max` of `Âclᵀ P + P Âcl` for `P = diag(P_i)`.
    pub lyapunov_max_eigenvalue: f64,
    /// `λ_max` of the block-diagonal part built from the local expressions.
    pub term_a_max_eigenvalue: f64,
    /// Largest absolute entry of the coupling part `Â_Cᵀ P + P Â_C`.
    pub term_b_max_abs: f64,
}

/// Closed-loop QSL matrix `Â_D + B̂ K + Â_C` in ascending-id order.
pub fn assemble_closed_loop(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
) -> crate::Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let ids = g.ids();
    let n = ids.len();
    let idx = g.index_of();
    let mut ad = DMatrix::zeros(3 * n, 3 * n);
    let mut ac = DMatrix::zeros(3 * n, 3 * n);
    let mut p = DMatrix::zeros(3 * n, 3 * n);
    for (k, &id) in ids.iter().enumerate() {
        let gi = gains
            .get(&id)
            .ok_or_else(|| invalid(format!("no gains for DGU {id}")))?;
        let aug = AugmentedDgu::for_dgu(g, id)?;
        ad.view_mut((3 * k, 3 * k), (3, 3))
            .copy_from(&gi.closed_loop(&aug));
        p.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&gi.p);
        for (j, aij) in &aug.coupling {
            ac.view_mut((3 * k, 3 * idx[j]), (3, 3)).copy_from(aij);
        }
    }
    Ok((ad, ac, p))
}

pub fn certify_global_stability(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
) -> crate::Result<GlobalCertificate> {
    let (ad, ac, p) = assemble_closed_loop(g, gains)?;
    let acl = &ad + &ac;
    let eigenvalues = linalg::eigenvalues(&acl);
    let max_real_part = eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let full = linalg::symmetrize(&(acl.transpose() * &p + &p * &acl));
    let term_a = linalg::symmetrize(&(ad.transpose() * &p + &p * &ad));
    let term_b = ac.transpose() * &p + &p * &ac;
    Ok(GlobalCertificate {
        spectral_ok: max_real_part < 0.0,
        max_real_part,
        eigenvalues,
        lyapunov_max_eigenvalue: linalg::sym_max_eigenvalue(&full),
        term_a_max_eigenvalue: linalg::sym_max_eigenvalue(&term_a),
        term_b_max_abs: linalg::max_abs(&term_b),
    })
}

/// Synthesizes gains for every DGU of a grid, in ascending-id order.
pub fn synthesize_grid(
    g: &GridGraph,
    w: &LmiWeights,
    opts: &SynthesisOptions,
) -> BTreeMap<DguId, Result<ControllerGains, SynthesisError>> {
    g.ids()
        .into_iter()
        .map(|id| {
            let r = AugmentedDgu::for_dgu(g, id)
                .map_err(SynthesisError::from)
                .and_then(|aug| solve_problem_O(&aug, w, opts));
            (id, r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DguParams, LineParams};

    fn table1_grid() -> GridGraph {
        let mut g = GridGraph::new();
        let p = DguParams::new(0.2, 1.8e-3, 2.2e-3, 100.0, Some(10.0)).unwrap();
        g.add_dgu(1, p).unwrap();
        g.add_dgu(
            2,
            DguParams {
                load_r: Some(6.0),
                ..p
            },
        )
        .unwrap();
        g.add_line(1, 2, LineParams::new(0.05, 1.8e-6).unwrap())
            .unwrap();
        g
    }

    fn solve(g: &GridGraph, id: DguId) -> (AugmentedDgu, ControllerGains) {
        let aug = AugmentedDgu::for_dgu(g, id).unwrap();
        let gains =
            solve_problem_O(&aug, &LmiWeights::default(), &SynthesisOptions::default()).unwrap();
        (aug, gains)
    }

    #[test]
    fn coupled_dgu_is_feasible_and_certified() {
        let (aug, gains) = solve(&table1_grid(), 1);
        let rep = verify_certificate(&aug, &gains);
        assert!(rep.p_positive_definite.passed);
        assert!(rep.structure.passed);
        assert!(rep.lyapunov_lasalle.passed, "{rep:?}");
        assert!(rep.gain_bound.passed);
        assert!(rep.hurwitz.passed);
        assert!(rep.is_valid());
        assert!(gains.meta.structured);
        assert!(gains.k_i() > 0.0);
    }

    #[test]
    fn structured_lyapunov_expression_has_null_direction() {
        // Along w = P⁻¹e₃ the quadratic form of Q is −2 w₁ = 0.
        let (aug, gains) = solve(&table1_grid(), 1);
        let q = lyapunov_expression(&aug, &gains);
        let w = gains.y().unwrap().column(2).clone_owned();
        let form = (w.transpose() * &q * &w)[(0, 0)];
        let scale = linalg::norm2(&q) * w.norm_squared();
        assert!(form.abs() <= 1e-9 * scale);
        assert!(!verify_certificate(&aug, &gains).lyapunov_strict.passed);
    }

    #[test]
    fn isolated_dgu_gets_strict_certificate() {
        let mut g = GridGraph::new();
        g.add_dgu(1, DguParams::new(0.2, 1.8e-3, 2.2e-3, 100.0, None).unwrap())
            .unwrap();
        let (aug, gains) = solve(&g, 1);
        let rep = verify_certificate(&aug, &gains);
        assert!(!gains.meta.structured);
        assert!(rep.lyapunov_strict.passed, "{rep:?}");
        assert!(rep.passes_strict());
        assert!(rep.is_valid());
    }

    #[test]
    fn gain_bound_holds() {
        let (_, gains) = solve(&table1_grid(), 2);
        let knorm = linalg::norm2(&gains.k_row());
        assert!(knorm < gains.beta.sqrt() * gains.delta);
    }

    #[test]
    fn absurd_margin_is_infeasible() {
        let aug = AugmentedDgu::for_dgu(&table1_grid(), 1).unwrap();
        let opts = SynthesisOptions {
            feasibility_margin: 1e12,
            ..Default::default()
        };
        let r = solve_problem_O(&aug, &LmiWeights::default(), &opts);
        assert!(matches!(r, Err(SynthesisError::Infeasible { .. })), "{r:?}");
    }

    #[test]
    fn zero_gain_fails_lyapunov_checks() {
        let (aug, mut gains) = solve(&table1_grid(), 1);
        gains.k = [0.0; 3];
        let rep = verify_certificate(&aug, &gains);
        assert!(!rep.lyapunov_strict.passed);
        assert!(!rep.lyapunov_lasalle.passed);
        assert!(!rep.hurwitz.passed);
    }

    #[test]
    fn perturbed_structure_fails() {
        let (aug, mut gains) = solve(&table1_grid(), 1);
        gains.p[(0, 1)] = 1e-3;
        gains.p[(1, 0)] = 1e-3;
        assert!(!verify_certificate(&aug, &gains).structure.passed);
    }

    #[test]
    fn assumption_2_ratios() {
        let g = table1_grid();
        let etas = BTreeMap::from([(1, 1e-9), (2, 1e-9)]);
        let r = check_assumption_2(&g, &etas, 1e-4);
        assert!(r.passed);
        assert!((r.worst_ratio - 1e-9 / (0.05 * 2.2e-3)).abs() < 1e-15);
        let eta = 0.05 * 2.2e-3 * 1e-4;
        let r = check_assumption_2(&g, &BTreeMap::from([(1, eta)]), 1e-4);
        assert!(r.worst_ratio <= 1e-4 * (1.0 + 1e-12));
        let mut iso = GridGraph::new();
        iso.add_dgu(1, *g.dgu(1).unwrap()).unwrap();
        assert!(check_assumption_2(&iso, &BTreeMap::from([(1, 1.0)]), 1e-9).passed);
    }

    #[test]
    fn global_certificate_on_table1() {
        let g = table1_grid();
        let gains: BTreeMap<_, _> = [1, 2].iter().map(|&i| (i, solve(&g, i).1)).collect();
        let cert = certify_global_stability(&g, &gains).unwrap();
        assert!(cert.spectral_ok, "{:?}", cert.max_real_part);
        let expected = gains[&1].eta / (0.05 * 2.2e-3) + gains[&2].eta / (0.05 * 2.2e-3);
        assert!((cert.term_b_max_abs - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn revalidation_accepts_own_model() {
        let (aug, gains) = solve(&table1_grid(), 1);
        let rep = revalidate(&aug, &gains);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn revalidation_rechooses_gamma_after_losing_a_neighbor() {
        let mut g = table1_grid();
        g.add_dgu(3, DguParams::new(0.2, 1.8e-3, 2.2e-3, 100.0, None).unwrap())
            .unwrap();
        g.add_line(1, 3, LineParams::new(0.05, 1.8e-6).unwrap())
            .unwrap();
        let (_, gains) = solve(&g, 1);
        g.remove_dgu(3).unwrap();
        let aug = AugmentedDgu::for_dgu(&g, 1).unwrap();
        let rep = revalidate(&aug, &gains);
        assert!(rep.passed(), "{rep:?}");
        // The least feasible γ grows as the line conductance leaves the diagonal.
        assert!(rep.gamma_min.unwrap() > gains.gamma);
    }
}
