//! TR-BDF2 for `ẋ = f(x)` with a supplied Jacobian.
//!
//! A trapezoidal stage to `t + γh` is followed by a BDF2 stage to `t + h`;
//! both solve with the same matrix `I − (γ/2) h J`. The local error is
//! estimated from the second divided difference of `f` over the three stage
//! points and filtered through the same matrix, which keeps the estimate
//! bounded on stiff components.

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// `γ = 2 − √2`, which makes the two stages share one iteration matrix.
pub const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const D: f64 = GAMMA / 2.0;
/// Leading local error constant of TR-BDF2 with this `γ`.
const ERROR_CONST: f64 = (-3.0 * GAMMA * GAMMA + 4.0 * GAMMA - 2.0) / (12.0 * (2.0 - GAMMA));

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Accepted or rejected trial step.
#[derive(Debug, Clone)]
pub struct Trial {
    pub x: DVector<f64>,
    pub f: DVector<f64>,
    /// Weighted max-norm of the error estimate; the step is acceptable when `≤ 1`.
    pub err: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

/// Caches the factorization of `I − d h J` across steps with the same `h` and Jacobian.
#[derive(Default)]
pub struct Factorization {
    key: Option<(u64, u64)>,
    lu: Option<LU<f64, Dyn, Dyn>>,
}

impl Factorization {
    /// Drops the cached factorization, e.g. after the Jacobian changes.
    pub fn invalidate(&mut self) {
        self.key = None;
        self.lu = None;
    }

    fn get(&mut self, j: &DMatrix<f64>, h: f64, jac_id: u64) -> &LU<f64, Dyn, Dyn> {
        let key = (jac_id, h.to_bits());
        if self.key != Some(key) {
            let n = j.nrows();
            let m = DMatrix::identity(n, n) - j * (D * h);
            self.lu = Some(m.lu());
            self.key = Some(key);
        }
        self.lu.as_ref().expect("factorization present")
    }
}

const NEWTON_ITERS: usize = 6;

/// One TR-BDF2 step from `x` with `f0 = f(x)`.
///
/// `jac_id` identifies `j`; callers change it whenever the Jacobian changes.
/// Returns `None` when the Newton iteration does not converge.
#[allow(clippy::too_many_arguments)]
pub fn step<S: OdeSystem>(
    sys: &S,
    x: &DVector<f64>,
    f0: &DVector<f64>,
    h: f64,
    j: &DMatrix<f64>,
    jac_id: u64,
    tol: Tolerances,
    fact: &mut Factorization,
) -> Option<Trial> {
    let lu = fact.get(j, h, jac_id);
    let weight = |a: &DVector<f64>, b: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            a.len(),
            a.iter()
                .zip(b.iter())
                .map(|(p, q)| tol.atol + tol.rtol * p.abs().max(q.abs())),
        )
    };
    let newton =
        |rhs_const: &DVector<f64>, guess: DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
            // Solves z − d h f(z) = rhs_const.
            let mut z = guess;
            for _ in 0..NEWTON_ITERS {
                let fz = sys.rhs(&z);
                let res = rhs_const - (&z - &fz * (D * h));
                let dz = lu.solve(&res)?;
                z += &dz;
                let w = weight(&z, &z);
                let size = dz
                    .iter()
                    .zip(w.iter())
                    .fold(0.0_f64, |m, (a, b)| m.max(a.abs() / b));
                if size <= 1e-3 {
                    let fz = sys.rhs(&z);
                    return Some((z, fz));
                }
            }
            None
        };
    // Trapezoidal stage to t + γh.
    let c1 = x + f0 * (D * h);
    let (xg, fg) = newton(&c1, x + f0 * (GAMMA * h))?;
    // BDF2 stage to t + h.
    let a1 = 1.0 / (GAMMA * (2.0 - GAMMA));
    let a0 = (1.0 - GAMMA) * (1.0 - GAMMA) / (GAMMA * (2.0 - GAMMA));
    let c2 = &xg * a1 - x * a0;
    let guess = x + (&xg - x) / GAMMA;
    let (xn, fnew) = newton(&c2, guess)?;
    let dd = f0 / GAMMA - &fg / (GAMMA * (1.0 - GAMMA)) + &fnew / (1.0 - GAMMA);
    let raw = dd * (2.0 * h * ERROR_CONST);
    let est = lu.solve(&raw)?;
    let w = weight(x, &xn);
    let err = est
        .iter()
        .zip(w.iter())
        .fold(0.0_f64, |m, (a, b)| m.max(a.abs() / b));
    Some(Trial {
        x: xn,
        f: fnew,
        err,
    })
}

/// Step-size factor after a trial with error `err`.
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(DMatrix<f64>);

    impl OdeSystem for Linear {
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

    fn integrate(sys: &Linear, x0: DVector<f64>, t_end: f64, tol: Tolerances) -> DVector<f64> {
        let mut fact = Factorization::default();
        let j = sys.jacobian(&x0);
        let mut x = x0;
        let mut f = sys.rhs(&x);
        let mut t = 0.0;
        let mut h: f64 = 1e-4;
        while t < t_end {
            let hh = h.min(t_end - t);
            let trial = step(sys, &x, &f, hh, &j, 0, tol, &mut fact).unwrap();
            if trial.err <= 1.0 {
                t += hh;
                x = trial.x;
                f = trial.f;
            }
            h = hh * step_factor(trial.err);
        }
        x
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let sys = Linear(DMatrix::from_element(1, 1, -2.0));
        let x = integrate(
            &sys,
            DVector::from_element(1, 1.0),
            1.0,
            Tolerances {
                rtol: 1e-8,
                atol: 1e-10,
            },
        );
        assert!((x[0] - (-2.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn stiff_oscillator_is_accurate() {
        // Fast decay mixed with a slow oscillation.
        let a = DMatrix::from_row_slice(3, 3, &[-1e5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        let sys = Linear(a);
        let x = integrate(
            &sys,
            DVector::from_column_slice(&[1.0, 1.0, 0.0]),
            2.0,
            Tolerances {
                rtol: 1e-9,
                atol: 1e-12,
            },
        );
        assert!(x[0].abs() < 1e-9);
        assert!((x[1] - 2.0f64.cos()).abs() < 1e-6);
        assert!((x[2] + 2.0f64.sin()).abs() < 1e-6);
    }

    #[test]
    fn error_shrinks_with_third_power() {
        let sys = Linear(DMatrix::from_element(1, 1, -1.0));
        let mut fact = Factorization::default();
        let j = sys.jacobian(&DVector::zeros(1));
        let x0 = DVector::from_element(1, 1.0);
        let f0 = sys.rhs(&x0);
        let tol = Tolerances {
            rtol: 0.0,
            atol: 1.0,
        };
        let e = |h: f64, fact: &mut Factorization| {
            (step(&sys, &x0, &f0, h, &j, 0, tol, fact).unwrap().x[0] - (-h).exp()).abs()
        };
        let ratio = e(0.02, &mut fact) / e(0.01, &mut fact);
        assert!((ratio - 8.0).abs() < 0.5, "{ratio}");
    }
}
