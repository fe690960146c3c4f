//! State-space realizations of proper SISO transfer functions.

use nalgebra::{DMatrix, DVector};

use crate::analysis::RationalTf;
use crate::error::invalid;

/// `ẋ = A x + B w`, `y = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl Realization {
    /// Controllable canonical form in the frequency-scaled variable `z = s/ω₀`.
    ///
    /// `ω₀ = max_k |a_k|^{1/k}` over the monic denominator keeps the states
    /// of order of the input.
    pub fn from_tf(tf: &RationalTf) -> crate::Result<Self> {
        if !tf.is_proper() {
            return Err(invalid("only proper transfer functions have a realization"));
        }
        let den = tf.den.coeffs();
        let n = den.len() - 1;
        let mut num = vec![0.0; n + 1];
        let nc = tf.num.coeffs();
        num[n + 1 - nc.len()..].copy_from_slice(nc);
        let d = num[0];
        if n == 0 {
            return Ok(Self {
                a: DMatrix::zeros(0, 0),
                b: DVector::zeros(0),
                c: DVector::zeros(0),
                d,
            });
        }
        let w0 = (1..=n)
            .map(|k| den[k].abs().powf(1.0 / k as f64))
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut a = DMatrix::zeros(n, n);
        let mut c = DVector::zeros(n);
        for k in 1..=n {
            let scale = w0.powi(k as i32);
            a[(0, k - 1)] = -den[k] / scale * w0;
            c[k - 1] = (num[k] - d * den[k]) / scale;
        }
        for k in 1..n {
            a[(k, k - 1)] = w0;
        }
        let mut b = DVector::zeros(n);
        b[0] = w0;
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// State at rest under a constant input `w`.
    pub fn steady_state(&self, w: f64) -> crate::Result<DVector<f64>> {
        if self.order() == 0 {
            return Ok(DVector::zeros(0));
        }
        self.a
            .clone()
            .lu()
            .solve(&(-&self.b * w))
            .ok_or_else(|| invalid("realization has a pole at the origin"))
    }

    pub fn output(&self, x: &DVector<f64>, w: f64) -> f64 {
        self.c.dot(x) + self.d * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{desired_tf_template, Poly};
    use num_complex::Complex64;

    fn eval(r: &Realization, s: Complex64) -> Complex64 {
        let n = r.order();
        let cx = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
        let m = DMatrix::<Complex64>::identity(n, n) * s - cx(&r.a);
        let bx = DMatrix::from_iterator(n, 1, r.b.iter().map(|x| Complex64::new(*x, 0.0)));
        let x = m.lu().solve(&bx).unwrap();
        r.c.iter()
            .zip(x.iter())
            .map(|(c, x)| x * *c)
            .sum::<Complex64>()
            + r.d
    }

    #[test]
    fn realization_matches_transfer_function() {
        let ft = desired_tf_template(100.0, 3).unwrap();
        let tf = ft.mul(&RationalTf::new(
            Poly::new(vec![2.0, 5.0, 1e4, 3e6]),
            Poly::new(vec![1.0, 40.0, 900.0, 2e4]),
        ));
        let tf = RationalTf::new(tf.num.clone(), tf.den.clone());
        let r = Realization::from_tf(&ft).unwrap();
        for f in [0.5, 50.0, 300.0, 5e3] {
            let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
            assert!((eval(&r, s) - ft.eval(s)).norm() < 1e-10);
        }
        let r2 = Realization::from_tf(&RationalTf::new(tf.den.clone(), tf.den.clone())).unwrap();
        assert!((r2.d - 1.0).abs() < 1e-15);
        let xs = r.steady_state(3.0).unwrap();
        assert!((r.output(&xs, 3.0) - 3.0).abs() < 1e-10);
        assert!((&r.a * &xs + &r.b * 3.0).norm() < 1e-9);
    }

    #[test]
    fn improper_is_rejected() {
        assert!(Realization::from_tf(&RationalTf::new(Poly::s(), Poly::constant(1.0))).is_err());
        let g = Realization::from_tf(&RationalTf::constant(2.5)).unwrap();
        assert_eq!(g.order(), 0);
        assert_eq!(g.d, 2.5);
    }
}
