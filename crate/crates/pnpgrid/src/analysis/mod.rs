//! Transfer functions of the controlled DGUs, prefilter and compensator design, spectra and
//! frequency responses.

mod poly;

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub use poly::{cancel_common, Poly, RationalTf, CANCEL_TOL};

use crate::error::invalid;
use crate::grid::{AugmentedDgu, DguId, GridGraph};
use crate::linalg;
use crate::synthesis::{assemble_closed_loop, ControllerGains};

/// Relative threshold on root real parts for the RHP-zero test, scaled by the largest root.
pub const RHP_TOL: f64 = 1e-9;

/// Why an exact inversion-based design is not usable.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    /// A zero that would become an unstable or marginal pole of the design.
    #[error("zero at {root} is not in the open left half-plane")]
    RhpZero { root: Complex64 },
    /// The exact design has more zeros than poles; `tf` is that design.
    #[error("design is improper by {deficit}")]
    Improper { deficit: usize, tf: RationalTf },
    #[error("plant transfer function is not stable")]
    UnstablePlant,
}

/// Coefficients of `det(sI − A)` and of `c·adj(sI − A)·b` by the Faddeev–LeVerrier recursion.
fn ss_to_tf(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> RationalTf {
    let n = a.nrows();
    let mut den = vec![1.0];
    let mut num = Vec::with_capacity(n);
    let mut m = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        num.push((c * &m * b)[(0, 0)]);
        let am = a * &m;
        let ck = -am.trace() / k as f64;
        den.push(ck);
        m = am + DMatrix::identity(n, n) * ck;
    }
    RationalTf::new(Poly::new(num), Poly::new(den))
}

fn max_real_part(a: &DMatrix<f64>) -> f64 {
    linalg::eigenvalues(a)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn closed_loop_tf(
    aug: &AugmentedDgu,
    g: &ControllerGains,
    input: DMatrix<f64>,
) -> crate::Result<RationalTf> {
    let acl = g.closed_loop(aug);
    if max_real_part(&acl) >= 0.0 {
        return Err(invalid("closed loop is not Hurwitz"));
    }
    let out = aug.aug.h.clone() * &aug.aug.c;
    Ok(ss_to_tf(&acl, &input, &out).minimal())
}

/// `F(s)` from the reference to the PCC voltage.
pub fn closed_loop_reference_tf(
    aug: &AugmentedDgu,
    g: &ControllerGains,
) -> crate::Result<RationalTf> {
    closed_loop_tf(aug, g, DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]))
}

/// `(G^d(s), G(s))` from the load current and from the additive input to the PCC voltage.
pub fn disturbance_tfs(
    aug: &AugmentedDgu,
    g: &ControllerGains,
) -> crate::Result<(RationalTf, RationalTf)> {
    let gd = closed_loop_tf(aug, g, aug.aug.m_dist.columns(0, 1).clone_owned())?;
    let gu = closed_loop_tf(aug, g, aug.b_hat().clone())?;
    Ok((gd, gu))
}

/// Butterworth low-pass with unit DC gain and −3 dB at `bandwidth_hz`.
pub fn desired_tf_template(bandwidth_hz: f64, order: usize) -> crate::Result<RationalTf> {
    if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) || order == 0 {
        return Err(invalid("template needs a positive bandwidth and order"));
    }
    let w = 2.0 * std::f64::consts::PI * bandwidth_hz;
    let n = order as f64;
    let poles: Vec<Complex64> = (1..=order)
        .map(|k| {
            let th = std::f64::consts::PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n);
            Complex64::from_polar(w, th)
        })
        .collect();
    let den = Poly::from_roots(&poles);
    Ok(RationalTf::new(Poly::constant(w.powi(order as i32)), den))
}

fn root_scale(roots: &[Complex64]) -> f64 {
    roots.iter().fold(0.0_f64, |m, r| m.max(r.norm())).max(1.0)
}

fn first_non_lhp(roots: &[Complex64]) -> Option<Complex64> {
    let tol = RHP_TOL * root_scale(roots);
    roots.iter().copied().find(|r| r.re > -tol)
}

fn check_design(tf: RationalTf) -> Result<RationalTf, Rejection> {
    if let Some(root) = first_non_lhp(&tf.poles()) {
        return Err(Rejection::RhpZero { root });
    }
    if !tf.is_proper() {
        return Err(Rejection::Improper {
            deficit: (-tf.relative_degree()) as usize,
            tf,
        });
    }
    Ok(tf)
}

/// `C̃ = F̃ / F`, rejected when `F` has a zero outside the open left half-plane or the result is improper.
pub fn design_prefilter(f: &RationalTf, f_tilde: &RationalTf) -> Result<RationalTf, Rejection> {
    if first_non_lhp(&f.poles()).is_some() {
        return Err(Rejection::UnstablePlant);
    }
    if let Some(root) = first_non_lhp(&f.minimal().zeros()) {
        return Err(Rejection::RhpZero { root });
    }
    let inv = f.inv().ok_or(Rejection::UnstablePlant)?;
    check_design(f_tilde.mul_minimal(&inv))
}

/// `N = −G⁻¹ G^d` after cancelling common factors.
///
/// Only the zeros of `G` that survive cancellation become poles of `N`,
/// so those are the ones tested for the left half-plane.
pub fn design_disturbance_compensator(
    g_d: &RationalTf,
    g_u: &RationalTf,
) -> Result<RationalTf, Rejection> {
    if g_d.is_zero() {
        return Ok(RationalTf::constant(0.0));
    }
    let inv = g_u.inv().ok_or(Rejection::UnstablePlant)?;
    check_design(g_d.mul_minimal(&inv).neg())
}

/// A design made proper by appended low-pass factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLimited {
    pub tf: RationalTf,
    /// Number of appended first-order factors.
    pub factors: usize,
    pub pole_hz: f64,
}

/// Appends `1/(1 + s/ω_f)` factors with `ω_f` at ten times `bandwidth_hz` until `tf` is proper.
pub fn band_limit(tf: &RationalTf, bandwidth_hz: f64) -> crate::Result<BandLimited> {
    if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
        return Err(invalid("bandwidth must be positive"));
    }
    let pole_hz = 10.0 * bandwidth_hz;
    let wf = 2.0 * std::f64::consts::PI * pole_hz;
    let factors = (-tf.relative_degree()).max(0) as usize;
    let lp = RationalTf::new(Poly::constant(wf), Poly::new(vec![1.0, wf]));
    let out = (0..factors).fold(tf.clone(), |acc, _| acc.mul(&lp));
    if first_non_lhp(&out.poles()).is_some() {
        return Err(invalid("band-limited design is not stable"));
    }
    Ok(BandLimited {
        tf: out,
        factors,
        pole_hz,
    })
}

/// Eigenvalue with the residual `min ‖(A − λI)v‖ / ‖A‖` over unit `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    pub value: Complex64,
    pub residual: f64,
}

pub fn spectrum(a: &DMatrix<f64>) -> crate::Result<Vec<EigenPair>> {
    if !a.is_square() {
        return Err(invalid("spectrum needs a square matrix"));
    }
    let scale = linalg::norm2(a).max(f64::MIN_POSITIVE);
    Ok(linalg::eigenvalues(a)
        .into_iter()
        .map(|value| EigenPair {
            value,
            residual: linalg::eigen_residual(a, value) / scale,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    BodeMagnitude,
    SingularValues,
}

/// Gains over a frequency grid; one row per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    pub kind: ResponseKind,
    /// Magnitude (one column) or singular values in descending order.
    pub values: Vec<Vec<f64>>,
}

/// `n` log-spaced frequencies from `f0` to `f1` inclusive.
pub fn log_grid(f0: f64, f1: f64, n: usize) -> crate::Result<Vec<f64>> {
    if !(f0 > 0.0 && f1 > f0 && n >= 2) {
        return Err(invalid(
            "frequency grid needs 0 < f0 < f1 and at least two points",
        ));
    }
    let (l0, l1) = (f0.log10(), f1.log10());
    Ok((0..n)
        .map(|k| 10f64.powf(l0 + (l1 - l0) * k as f64 / (n - 1) as f64))
        .collect())
}

/// 400 log-spaced points from 0.1 Hz to 100 kHz.
pub fn default_grid() -> Vec<f64> {
    log_grid(0.1, 1e5, 400).expect("static grid")
}

fn check_freqs(freqs: &[f64]) -> crate::Result<()> {
    let ok =
        freqs.iter().all(|f| f.is_finite() && *f > 0.0) && freqs.windows(2).all(|w| w[0] < w[1]);
    if ok && !freqs.is_empty() {
        Ok(())
    } else {
        Err(invalid(
            "frequencies must be positive and strictly increasing",
        ))
    }
}

fn jw(f: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * std::f64::consts::PI * f)
}

/// `|tf(jω)|`; a pole on the axis yields infinity.
pub fn frequency_response_tf(tf: &RationalTf, freqs: &[f64]) -> crate::Result<FrequencyResponse> {
    check_freqs(freqs)?;
    let values = freqs
        .iter()
        .map(|&f| {
            let d = tf.den.eval(jw(f));
            let v = if d.norm() == 0.0 {
                f64::INFINITY
            } else {
                (tf.num.eval(jw(f)) / d).norm()
            };
            vec![v]
        })
        .collect();
    Ok(FrequencyResponse {
        freqs_hz: freqs.to_vec(),
        kind: ResponseKind::BodeMagnitude,
        values,
    })
}

/// Singular values of `C (jωI − A)⁻¹ B + D`; a pole on the axis yields infinities.
pub fn frequency_response_ss(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    freqs: &[f64],
) -> crate::Result<FrequencyResponse> {
    check_freqs(freqs)?;
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || c.ncols() != n || d.shape() != (c.nrows(), b.ncols()) {
        return Err(invalid("inconsistent state-space dimensions"));
    }
    let cx = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let (ac, bc, cc, dc) = (cx(a), cx(b), cx(c), cx(d));
    let k = c.nrows().min(b.ncols());
    let values = freqs
        .iter()
        .map(|&f| {
            let m = DMatrix::<Complex64>::identity(n, n) * jw(f) - &ac;
            match m.lu().solve(&bc) {
                Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let g = &cc * x + &dc;
                    let mut sv: Vec<f64> = g.singular_values().iter().copied().collect();
                    sv.sort_by(|a, b| b.total_cmp(a));
                    sv
                }
                _ => vec![f64::INFINITY; k],
            }
        })
        .collect();
    Ok(FrequencyResponse {
        freqs_hz: freqs.to_vec(),
        kind: ResponseKind::SingularValues,
        values,
    })
}

/// Closed-loop QSL grid from all references to all PCC voltages, as `(A, B, C)`.
pub fn reference_model(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
) -> crate::Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (ad, ac, _) = assemble_closed_loop(g, gains)?;
    let n = g.len();
    let mut b = DMatrix::zeros(3 * n, n);
    let mut c = DMatrix::zeros(n, 3 * n);
    for k in 0..n {
        b[(3 * k + 2, k)] = 1.0;
        c[(k, 3 * k)] = 1.0;
    }
    Ok((ad + ac, b, c))
}

/// CSV with columns `re, im, residual`.
pub fn write_spectrum_csv<W: Write>(w: W, eigs: &[EigenPair]) -> crate::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["re", "im", "residual"]).map_err(csv_err)?;
    for e in eigs {
        wr.write_record([fmt(e.value.re), fmt(e.value.im), fmt(e.residual)])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV with columns `freq_hz, value` or `freq_hz, sv1, sv2, …`.
pub fn write_frequency_csv<W: Write>(w: W, fr: &FrequencyResponse) -> crate::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let width = fr.values.first().map_or(1, Vec::len);
    let mut header = vec!["freq_hz".to_string()];
    match fr.kind {
        ResponseKind::BodeMagnitude => header.push("magnitude".into()),
        ResponseKind::SingularValues => header.extend((1..=width).map(|k| format!("sv{k}"))),
    }
    wr.write_record(&header).map_err(csv_err)?;
    for (f, row) in fr.freqs_hz.iter().zip(&fr.values) {
        let rec: Vec<String> = std::iter::once(fmt(*f))
            .chain(row.iter().map(|v| fmt(*v)))
            .collect();
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Parse(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DguParams, LineParams};
    use crate::synthesis::{solve_problem_O, LmiWeights, SynthesisOptions};

    fn table1() -> (AugmentedDgu, ControllerGains) {
        let mut g = GridGraph::new();
        let p = DguParams::new(0.2, 1.8e-3, 2.2e-3, 100.0, Some(10.0)).unwrap();
        g.add_dgu(1, p).unwrap();
        g.add_dgu(2, p).unwrap();
        g.add_line(1, 2, LineParams::new(0.05, 1.8e-6).unwrap())
            .unwrap();
        let aug = AugmentedDgu::for_dgu(&g, 1).unwrap();
        let gains =
            solve_problem_O(&aug, &LmiWeights::default(), &SynthesisOptions::default()).unwrap();
        (aug, gains)
    }

    #[test]
    fn reference_tf_has_unit_dc_gain_and_matching_poles() {
        let (aug, g) = table1();
        let f = closed_loop_reference_tf(&aug, &g).unwrap();
        assert!((f.dc_gain() - 1.0).abs() < 1e-8);
        assert!(f.order() <= 3);
        let eig = linalg::eigenvalues(&g.closed_loop(&aug));
        for p in f.poles() {
            assert!(
                eig.iter().any(|e| (e - p).norm() <= 1e-6 * e.norm()),
                "{p} vs {eig:?}"
            );
        }
    }

    #[test]
    fn transfer_function_matches_resolvent() {
        let (aug, g) = table1();
        let f = closed_loop_reference_tf(&aug, &g).unwrap();
        let acl = g.closed_loop(&aug).map(|x| Complex64::new(x, 0.0));
        for s in [Complex64::new(0.0, 100.0), Complex64::new(-5.0, 2e3)] {
            let m = DMatrix::<Complex64>::identity(3, 3) * s - &acl;
            let x = m
                .lu()
                .solve(&DMatrix::from_column_slice(
                    3,
                    1,
                    &[0.0.into(), 0.0.into(), 1.0.into()],
                ))
                .unwrap();
            assert!((x[(0, 0)] - f.eval(s)).norm() <= 1e-9 * x[(0, 0)].norm());
        }
    }

    #[test]
    fn butterworth_template() {
        let f1 = desired_tf_template(100.0, 1).unwrap();
        let w = 2.0 * std::f64::consts::PI * 100.0;
        assert!(
            f1.identity_residual(&RationalTf::new(Poly::constant(w), Poly::new(vec![1.0, w])))
                < 1e-15
        );
        for order in 1..=5 {
            let f = desired_tf_template(100.0, order).unwrap();
            assert!((f.dc_gain() - 1.0).abs() < 1e-12);
            assert!((f.eval(jw(100.0)).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        }
        assert!(desired_tf_template(0.0, 1).is_err());
    }

    #[test]
    fn prefilter_identity_and_table1() {
        let (aug, g) = table1();
        let f = closed_loop_reference_tf(&aug, &g).unwrap();
        let one = design_prefilter(&f, &f).unwrap();
        assert!(one.identity_residual(&RationalTf::constant(1.0)) < 1e-9);
        let ft = desired_tf_template(100.0, f.relative_degree() as usize).unwrap();
        let c = design_prefilter(&f, &ft).unwrap();
        assert!(c.is_proper());
        assert!(c.poles().iter().all(|p| p.re < 0.0));
        assert!(c.mul(&f).identity_residual(&ft) < 1e-9);
        for fr in log_grid(1.0, 1e5, 200).unwrap() {
            assert!((c.eval(jw(fr)) * f.eval(jw(fr)) - ft.eval(jw(fr))).norm() < 1e-6);
        }
    }

    #[test]
    fn prefilter_rejects_rhp_zero() {
        let f = RationalTf::new(Poly::new(vec![-1.0, 10.0]), Poly::new(vec![1.0, 3.0, 2.0]));
        let r = design_prefilter(&f, &desired_tf_template(100.0, 1).unwrap());
        assert!(matches!(r, Err(Rejection::RhpZero { root }) if (root.re - 10.0).abs() < 1e-9));
    }

    #[test]
    fn compensator_cancels_disturbance() {
        let (aug, g) = table1();
        let (gd, gu) = disturbance_tfs(&aug, &g).unwrap();
        assert!(gd.dc_gain().abs() < 1e-12);
        let eig = linalg::eigenvalues(&g.closed_loop(&aug));
        for p in gd.poles() {
            assert!(eig.iter().any(|e| (e - p).norm() <= 1e-6 * e.norm()));
        }
        let n = match design_disturbance_compensator(&gd, &gu) {
            Err(Rejection::Improper { tf, .. }) => tf,
            other => panic!("{other:?}"),
        };
        assert!(gd.identity_residual(&gu.mul(&n).neg()) < 1e-9);
        let bl = band_limit(&n, 100.0).unwrap();
        assert!(bl.tf.is_proper());
        assert_eq!(bl.factors, 1);
    }

    #[test]
    fn compensator_trivial_cases() {
        let gu = RationalTf::new(Poly::constant(2.0), Poly::new(vec![1.0, 1.0]));
        let n = design_disturbance_compensator(&gu.neg(), &gu).unwrap();
        assert!(n.identity_residual(&RationalTf::constant(1.0)) < 1e-12);
        let zero = RationalTf::new(Poly::zero(), Poly::new(vec![1.0, 1.0]));
        assert!(design_disturbance_compensator(&zero, &gu)
            .unwrap()
            .is_zero());
        let rhp = RationalTf::new(Poly::new(vec![1.0, -5.0]), Poly::new(vec![1.0, 2.0, 1.0]));
        assert!(matches!(
            design_disturbance_compensator(&gu, &rhp),
            Err(Rejection::RhpZero { .. })
        ));
    }

    #[test]
    fn spectra_of_known_matrices() {
        let d = spectrum(&linalg::from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]])).unwrap();
        assert!((d[0].value.re + 2.0).abs() < 1e-14 && (d[1].value.re + 1.0).abs() < 1e-14);
        let r = spectrum(&linalg::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
        for e in &r {
            assert!(e.value.re.abs() < 1e-14 && (e.value.im.abs() - 1.0).abs() < 1e-14);
            assert!(e.residual < 1e-8);
        }
        assert!(spectrum(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn frequency_responses() {
        let integ = RationalTf::new(Poly::constant(1.0), Poly::s());
        let fr = frequency_response_tf(&integ, &[1.0, 10.0]).unwrap();
        let w = 2.0 * std::f64::consts::PI;
        assert!((fr.values[0][0] - 1.0 / w).abs() < 1e-14);
        assert!((fr.values[1][0] - 0.1 / w).abs() < 1e-14);
        let dmat = linalg::from_rows(&[&[3.0, 0.0], &[0.0, 4.0]]);
        let st = frequency_response_ss(
            &DMatrix::zeros(1, 1),
            &DMatrix::zeros(1, 2),
            &DMatrix::zeros(2, 1),
            &dmat,
            &[1.0, 5.0],
        )
        .unwrap();
        assert!(st
            .values
            .iter()
            .all(|v| (v[0] - 4.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12));
        let osc = linalg::from_rows(&[&[0.0, w], &[-w, 0.0]]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let on_pole = frequency_response_ss(&osc, &b, &c, &DMatrix::zeros(1, 1), &[1.0]).unwrap();
        assert!(on_pole.values[0][0].is_infinite() || on_pole.values[0][0] > 1e12);
        assert!(frequency_response_tf(&integ, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 400);
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[399] - 1e5).abs() < 1e-6);
    }

    #[test]
    fn csv_exports() {
        let mut buf = Vec::new();
        write_frequency_csv(
            &mut buf,
            &frequency_response_tf(&RationalTf::constant(2.0), &[1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("freq_hz,magnitude\n"));
        assert_eq!(s.lines().count(), 3);
    }
}
