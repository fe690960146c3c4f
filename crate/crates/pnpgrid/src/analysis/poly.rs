//! Real polynomials and rational functions in `s`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg;

/// Real polynomial with coefficients in descending degree.
///
/// The zero polynomial has no coefficients. Leading zeros are removed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let start = coeffs
            .iter()
            .position(|c| *c != 0.0)
            .unwrap_or(coeffs.len());
        Self {
            coeffs: coeffs[start..].to_vec(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// The monomial `s`.
    pub fn s() -> Self {
        Self::new(vec![1.0, 0.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn lead(&self) -> f64 {
        self.coeffs.first().copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    pub fn add(&self, other: &Poly) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let pad = |p: &Poly| {
            let mut v = vec![0.0; n - p.coeffs.len()];
            v.extend_from_slice(&p.coeffs);
            v
        };
        let (a, b) = (pad(self), pad(other));
        Self::new(a.iter().zip(&b).map(|(x, y)| x + y).collect())
    }

    pub fn sub(&self, other: &Poly) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    /// Long division `self = q·d + r`.
    pub fn div_rem(&self, d: &Poly) -> (Poly, Poly) {
        let dd = d.degree().expect("division by the zero polynomial");
        let Some(nd) = self.degree() else {
            return (Poly::zero(), Poly::zero());
        };
        if nd < dd {
            return (Poly::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let mut q = vec![0.0; nd - dd + 1];
        for i in 0..q.len() {
            let f = rem[i] / d.coeffs[0];
            q[i] = f;
            for (k, c) in d.coeffs.iter().enumerate() {
                rem[i + k] -= f * c;
            }
        }
        (Poly::new(q), Poly::new(rem[nd - dd + 1..].to_vec()))
    }

    /// Roots from the eigenvalues of the companion matrix of the frequency-scaled polynomial.
    pub fn roots(&self) -> Vec<Complex64> {
        let Some(n) = self.degree() else {
            return Vec::new();
        };
        if n == 0 {
            return Vec::new();
        }
        let trailing_zeros = self.coeffs.iter().rev().take_while(|c| **c == 0.0).count();
        let core = &self.coeffs[..self.coeffs.len() - trailing_zeros];
        let m = core.len() - 1;
        let mut roots = vec![Complex64::new(0.0, 0.0); trailing_zeros];
        if m > 0 {
            // s = σ z with σ chosen so the constant term of the monic z-polynomial has unit size.
            let lead = core[0];
            let sigma = (core[m] / lead).abs().powf(1.0 / m as f64);
            let mut comp = DMatrix::zeros(m, m);
            for k in 0..m {
                comp[(0, k)] = -core[k + 1] / (lead * sigma.powi(k as i32 + 1));
            }
            for k in 1..m {
                comp[(k, k - 1)] = 1.0;
            }
            roots.extend(linalg::eigenvalues(&comp).into_iter().map(|z| z * sigma));
        }
        linalg::sort_complex(&mut roots);
        roots
    }

    /// Monic real polynomial with the given roots; complex roots must come in conjugate pairs.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut c = vec![Complex64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
            for (i, v) in c.iter().enumerate() {
                next[i] += v;
                next[i + 1] -= v * r;
            }
            c = next;
        }
        Self::new(c.into_iter().map(|z| z.re).collect())
    }

    /// Divides out a root exactly, or its conjugate pair when it is complex.
    fn deflate(&self, r: Complex64) -> Poly {
        let d = if r.im == 0.0 {
            Poly::new(vec![1.0, -r.re])
        } else {
            Poly::new(vec![1.0, -2.0 * r.re, r.norm_sqr()])
        };
        self.div_rem(&d).0
    }
}

/// Divides the factors shared by `a` and `b` out of both.
pub fn cancel_common(a: &Poly, b: &Poly) -> (Poly, Poly) {
    let mut a = a.clone();
    let mut b = b.clone();
    loop {
        let za = a.roots();
        let zb = b.roots();
        let hit = za.iter().filter(|z| z.im >= 0.0).find_map(|z| {
            zb.iter()
                .filter(|p| p.im >= 0.0)
                .find(|p| (*z - **p).norm() <= CANCEL_TOL * (1.0 + z.norm()))
                .map(|p| (*z, *p))
        });
        let Some((z, p)) = hit else { return (a, b) };
        // A root with negligible imaginary part is deflated as real.
        let snap = |r: Complex64| {
            if r.im.abs() <= CANCEL_TOL * (1.0 + r.norm()) {
                Complex64::new(r.re, 0.0)
            } else {
                r
            }
        };
        a = a.deflate(snap(z));
        b = b.deflate(snap(p));
    }
}

/// Relative tolerance for treating a numerator and a denominator root as equal.
pub const CANCEL_TOL: f64 = 1e-7;

/// `num(s)/den(s)` with a monic denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTf {
    pub num: Poly,
    pub den: Poly,
}

impl RationalTf {
    /// Normalizes to a monic denominator; panics on a zero denominator.
    pub fn new(num: Poly, den: Poly) -> Self {
        assert!(!den.is_zero(), "zero denominator");
        let l = den.lead();
        Self {
            num: num.scale(1.0 / l),
            den: den.scale(1.0 / l),
        }
    }

    pub fn constant(k: f64) -> Self {
        Self::new(Poly::constant(k), Poly::constant(1.0))
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// `deg den − deg num`; negative when improper.
    pub fn relative_degree(&self) -> isize {
        let dn = self.num.degree().map_or(0, |d| d as isize);
        self.den.degree().unwrap_or(0) as isize - dn
    }

    pub fn is_proper(&self) -> bool {
        self.is_zero() || self.relative_degree() >= 0
    }

    pub fn order(&self) -> usize {
        self.den.degree().unwrap_or(0)
    }

    pub fn mul(&self, o: &RationalTf) -> Self {
        Self::new(self.num.mul(&o.num), self.den.mul(&o.den))
    }

    pub fn add(&self, o: &RationalTf) -> Self {
        if self.den == o.den {
            return Self::new(self.num.add(&o.num), self.den.clone());
        }
        Self::new(
            self.num.mul(&o.den).add(&o.num.mul(&self.den)),
            self.den.mul(&o.den),
        )
    }

    pub fn neg(&self) -> Self {
        Self {
            num: self.num.scale(-1.0),
            den: self.den.clone(),
        }
    }

    /// `1/self`; `None` for the zero function.
    pub fn inv(&self) -> Option<Self> {
        (!self.is_zero()).then(|| Self::new(self.den.clone(), self.num.clone()))
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval(s) / self.den.eval(s)
    }

    pub fn dc_gain(&self) -> f64 {
        self.eval(Complex64::new(0.0, 0.0)).re
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.den.roots()
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        self.num.roots()
    }

    /// Cancels numerator and denominator roots closer than `CANCEL_TOL·(1+|r|)`.
    ///
    /// Cancelled factors are divided out of both polynomials, so the
    /// surviving coefficients are not rebuilt from roots.
    pub fn minimal(&self) -> Self {
        if self.is_zero() {
            return Self::new(Poly::zero(), Poly::constant(1.0));
        }
        let (num, den) = cancel_common(&self.num, &self.den);
        Self::new(num, den)
    }

    /// Product with common factors cancelled across the operands before multiplying.
    ///
    /// Root finding on the low-degree factors is far better conditioned than on the product.
    pub fn mul_minimal(&self, o: &RationalTf) -> Self {
        if self.is_zero() || o.is_zero() {
            return Self::new(Poly::zero(), Poly::constant(1.0));
        }
        let (a, d) = cancel_common(&self.num, &o.den);
        let (c, b) = cancel_common(&o.num, &self.den);
        Self::new(a.mul(&c), b.mul(&d)).minimal()
    }

    /// Relative coefficient residual of `self ≡ other`, by cross multiplication.
    pub fn identity_residual(&self, other: &RationalTf) -> f64 {
        let lhs = self.num.mul(&other.den);
        let rhs = other.num.mul(&self.den);
        let scale = lhs.max_abs().max(rhs.max_abs());
        if scale == 0.0 {
            return 0.0;
        }
        lhs.sub(&rhs).max_abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn roots_of_known_polynomials() {
        let p = Poly::new(vec![1.0, -3.0, 2.0]);
        let r = p.roots();
        assert!(
            (r[0] - c(1.0, 0.0)).norm() < 1e-12 && (r[1] - c(2.0, 0.0)).norm() < 1e-12,
            "{r:?}"
        );
        let q = Poly::new(vec![1.0, 0.0, 1.0]).roots();
        assert!(q
            .iter()
            .all(|z| (z.norm() - 1.0).abs() < 1e-12 && z.re.abs() < 1e-12));
        assert_eq!(Poly::new(vec![2.0, 0.0, 0.0]).roots().len(), 2);
    }

    #[test]
    fn roots_with_wide_scale_spread() {
        let roots = [c(-10.0, 0.0), c(-3e3, 4e3), c(-3e3, -4e3)];
        let p = Poly::from_roots(&roots).scale(7.0);
        let got = p.roots();
        for r in roots {
            assert!(
                got.iter().any(|g| (g - r).norm() <= 1e-9 * r.norm()),
                "{got:?}"
            );
        }
    }

    #[test]
    fn division_recovers_factors() {
        let a = Poly::new(vec![1.0, 2.0]);
        let b = Poly::new(vec![3.0, 0.0, -1.0]);
        let (q, r) = a.mul(&b).add(&Poly::constant(5.0)).div_rem(&b);
        assert_eq!(q, a);
        assert!((r.coeffs()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn minimal_cancels_common_factor() {
        let common = Poly::from_roots(&[c(-2.0, 3.0), c(-2.0, -3.0)]);
        let tf = RationalTf::new(
            Poly::new(vec![1.0, 3.0]).mul(&common),
            Poly::new(vec![1.0, 5.0, 4.0]).mul(&common),
        );
        let m = tf.minimal();
        assert_eq!(m.order(), 2);
        assert!(
            m.identity_residual(&RationalTf::new(
                Poly::new(vec![1.0, 3.0]),
                Poly::new(vec![1.0, 5.0, 4.0])
            )) < 1e-12
        );
    }

    #[test]
    fn algebra_matches_pointwise_evaluation() {
        let f = RationalTf::new(Poly::new(vec![1.0, 3.0]), Poly::new(vec![1.0, 2.0, 5.0]));
        let g = RationalTf::new(Poly::constant(4.0), Poly::new(vec![1.0, 7.0]));
        let s = c(0.3, 1.7);
        assert!((f.mul(&g).eval(s) - f.eval(s) * g.eval(s)).norm() < 1e-12);
        assert!((f.add(&g).eval(s) - (f.eval(s) + g.eval(s))).norm() < 1e-12);
        assert!((f.inv().unwrap().eval(s) - 1.0 / f.eval(s)).norm() < 1e-12);
        assert!(f.add(&f.neg()).is_zero());
    }

    #[test]
    fn properness() {
        let improper = RationalTf::new(Poly::new(vec![1.0, 0.0]), Poly::constant(1.0));
        assert!(!improper.is_proper());
        assert_eq!(improper.relative_degree(), -1);
        assert!(RationalTf::constant(2.0).is_proper());
    }
}
