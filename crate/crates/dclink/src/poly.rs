//! Real-coefficient polynomials in the Laplace variable `s`.
//!
//! Coefficients are stored in descending powers, so `[2.0, 0.0, -1.0]`
//! is `2s^2 - 1`. Construction strips exactly-zero leading coefficients;
//! the zero polynomial is the single coefficient `[0.0]`. Tolerance-based
//! degree cleanup is deliberately opt-in ([`Polynomial::cleaned`]):
//! monic characteristic polynomials in this domain legitimately span
//! eighteen orders of magnitude, so any automatic "small relative to the
//! largest coefficient" rule would destroy their leading terms.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from descending-order coefficients.
    /// Rejects empty or non-finite input.
    pub fn new(coeffs: &[f64]) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("polynomial needs at least one coefficient"));
        }
        if let Some(c) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite coefficient {c}")));
        }
        Ok(Self::from_vec(coeffs.to_vec()))
    }

    pub(crate) fn from_vec(v: Vec<f64>) -> Self {
        let cut = v.iter().position(|c| *c != 0.0).unwrap_or(v.len());
        if cut == v.len() {
            return Self { coeffs: vec![0.0] };
        }
        Self {
            coeffs: v[cut..].to_vec(),
        }
    }

    /// Copy with leading coefficients below `rel_tol` times the largest
    /// coefficient magnitude stripped. For normalizing externally
    /// produced coefficient vectors whose top entries are cancellation
    /// residue; never applied implicitly.
    pub fn cleaned(&self, rel_tol: f64) -> Self {
        let max = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let cut = self
            .coeffs
            .iter()
            .position(|c| c.abs() > rel_tol * max)
            .unwrap_or(self.coeffs.len());
        if cut == self.coeffs.len() {
            return Self::zero();
        }
        Self {
            coeffs: self.coeffs[cut..].to_vec(),
        }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_vec(vec![c])
    }

    /// Expands `leading * prod (s - r_i)`. Complex roots must appear in
    /// conjugate pairs so the expanded coefficients are real.
    pub fn from_roots(roots: &[Complex64], leading: f64) -> Result<Self> {
        let mut c = vec![Complex64::new(leading, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
            for (i, ci) in c.iter().enumerate() {
                next[i] += ci;
                next[i + 1] -= ci * r;
            }
            c = next;
        }
        let scale = c.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let mut real = Vec::with_capacity(c.len());
        for z in &c {
            if z.im.abs() > 1e-8 * scale.max(1e-300) {
                return Err(Error::invalid(
                    "roots are not closed under conjugation; expansion is not real",
                ));
            }
            real.push(z.re);
        }
        Ok(Self::from_vec(real))
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn trailing(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_vec(self.coeffs.iter().map(|c| c * k).collect())
    }

    /// Horner evaluation at a complex point.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in &self.coeffs {
            acc = acc * s + c;
        }
        acc
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, c| acc * x + c)
    }

    /// All roots, with multiplicity, as eigenvalues of the balanced
    /// companion matrix of the monic-normalized polynomial.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        if self.degree() == 0 {
            return Err(Error::DegreeTooLow);
        }
        let n = self.degree();
        let lead = self.leading();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            // last column holds -a_{n-i} of the monic polynomial
            a[(i, n - 1)] = -self.coeffs[n - i] / lead;
        }
        balance(&mut a);
        let eig = a.complex_eigenvalues();
        Ok(eig.iter().copied().collect())
    }
}

/// Scaled residual `|p(r)| / (|leading| * max(1, |r|)^degree)`; used to
/// validate computed roots.
pub fn root_residual(p: &Polynomial, r: Complex64) -> f64 {
    let scale = p.leading().abs() * r.norm().max(1.0).powi(p.degree() as i32);
    p.eval(r).norm() / scale
}

/// Parlett-Reinsch balancing: a diagonal similarity with power-of-two
/// scales that equalizes row and column norms, improving eigenvalue
/// accuracy for companion matrices with wide coefficient ranges.
fn balance(a: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let s = c + r;
            let mut c2 = c;
            let mut r2 = r;
            while c2 < r2 / RADIX {
                f *= RADIX;
                c2 *= RADIX;
                r2 /= RADIX;
            }
            while c2 >= r2 * RADIX {
                f /= RADIX;
                c2 /= RADIX;
                r2 *= RADIX;
            }
            if (c2 + r2) < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let mut v = vec![0.0; n];
        for (i, c) in self.coeffs.iter().enumerate() {
            v[n - self.coeffs.len() + i] += c;
        }
        for (i, c) in rhs.coeffs.iter().enumerate() {
            v[n - rhs.coeffs.len() + i] += c;
        }
        Polynomial::from_vec(v)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scaled(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut v = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        Polynomial::from_vec(v)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let deg = self.degree();
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c == 0.0 && deg > 0 {
                continue;
            }
            let p = deg - i;
            if first {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
                first = false;
            } else if *c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let m = c.abs();
            match p {
                0 => write!(f, "{m}")?,
                1 => write!(f, "{m} s")?,
                _ => write!(f, "{m} s^{p}")?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}
