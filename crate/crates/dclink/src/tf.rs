//! Rational transfer functions and frequency-domain analysis.
//!
//! A [`TransferFunction`] is a ratio of real polynomials kept in canonical
//! form: the denominator leading coefficient is scaled to one. Algebra
//! (sum, product, feedback) is exact polynomial arithmetic; nothing is
//! gridded until a caller evaluates on a [`FrequencyGrid`].

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Neg};

pub const DEFAULT_MINREAL_TOL: f64 = 1e-8;

/// Relative margin used to classify denominator roots as stable: a root
/// must satisfy `Re(r) < -1e-9 * max |root|`.
pub const STABILITY_EPS_REL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTf", into = "RawTf")]
pub struct TransferFunction {
    num: Polynomial,
    den: Polynomial,
}

#[derive(Serialize, Deserialize)]
struct RawTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<RawTf> for TransferFunction {
    type Error = Error;
    fn try_from(raw: RawTf) -> Result<Self> {
        TransferFunction::new(&raw.num, &raw.den)
    }
}

impl From<TransferFunction> for RawTf {
    fn from(tf: TransferFunction) -> Self {
        RawTf {
            num: tf.num.coeffs().to_vec(),
            den: tf.den.coeffs().to_vec(),
        }
    }
}

impl TransferFunction {
    /// Builds `num/den` from descending coefficients and canonicalizes so
    /// the denominator is monic.
    pub fn new(num: &[f64], den: &[f64]) -> Result<Self> {
        let num = Polynomial::new(num)?;
        let den = Polynomial::new(den)?;
        Self::from_polys(num, den)
    }

    pub fn from_polys(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::invalid("zero denominator"));
        }
        let lead = den.leading();
        Ok(Self {
            num: num.scaled(1.0 / lead),
            den: den.scaled(1.0 / lead),
        })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            num: Polynomial::constant(c),
            den: Polynomial::constant(1.0),
        }
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn zero() -> Self {
        Self {
            num: Polynomial::zero(),
            den: Polynomial::constant(1.0),
        }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    /// Numerator degree does not exceed denominator degree.
    pub fn is_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() <= self.den.degree()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            num: self.num.scaled(k),
            den: self.den.clone(),
        }
    }

    /// Frequency response at `s = j*omega`. Errors when the point sits on
    /// a pole, detected as catastrophic cancellation: |den(jω)| below
    /// 1e-12 times the sum of its terms' magnitudes.
    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        let s = Complex64::new(0.0, omega);
        let dv = self.den.eval(s);
        let mut scale = 0.0;
        let mut power = 1.0;
        for c in self.den.coeffs().iter().rev() {
            scale += c.abs() * power;
            power *= omega.abs();
        }
        if dv.norm() <= 1e-12 * scale {
            return Err(Error::PoleAtFrequency { omega });
        }
        Ok(self.num.eval(s) / dv)
    }

    /// Gain at `s = 0`; errors when the denominator has a root there.
    pub fn dc_gain(&self) -> Result<f64> {
        self.eval(0.0).map(|v| v.re)
    }

    /// Closed loop `self / (1 + self * other)` with negative feedback.
    pub fn feedback(&self, other: &TransferFunction) -> Result<Self> {
        let num = &self.num * &other.den;
        let den = &(&self.den * &other.den) + &(&self.num * &other.num);
        if den.is_zero() {
            return Err(Error::SingularLoop);
        }
        Self::from_polys(num, den)
    }

    /// Cancels pole/zero pairs whose relative distance
    /// `|z - p| / max(|z|, |p|)` is below `tol`. Returns the input
    /// unchanged when nothing cancels. DC and high-frequency gain are
    /// preserved to within the tolerance.
    pub fn minreal(&self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol <= 1e-2) {
            return Err(Error::invalid(format!(
                "minreal tolerance {tol} outside (0, 1e-2]"
            )));
        }
        if self.num.is_zero() {
            return Ok(Self::zero());
        }
        // common powers of s show up as exactly-zero trailing
        // coefficients on both sides; cancel them in coefficient space,
        // where the factorization is exact, instead of pairing jittered
        // near-origin roots
        let trailing_zeros = |p: &Polynomial| {
            p.coeffs()
                .iter()
                .rev()
                .take_while(|c| **c == 0.0)
                .count()
                .min(p.degree())
        };
        let common_s = trailing_zeros(&self.num).min(trailing_zeros(&self.den));
        let (num, den) = if common_s > 0 {
            let shift = |p: &Polynomial| {
                Polynomial::new(&p.coeffs()[..p.coeffs().len() - common_s])
                    .expect("dropping trailing zeros keeps coefficients finite")
            };
            (shift(&self.num), shift(&self.den))
        } else {
            (self.num.clone(), self.den.clone())
        };
        if num.degree() == 0 || den.degree() == 0 {
            return Self::from_polys(num, den);
        }
        let zeros = num.roots()?;
        let mut poles = den.roots()?;
        let mut kept_zeros = Vec::with_capacity(zeros.len());
        let mut cancelled = 0usize;
        for z in zeros {
            let nearest = poles
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| (z - *a).norm().total_cmp(&(z - *b).norm()));
            match nearest {
                Some((i, p)) => {
                    let scale = z.norm().max(p.norm());
                    let dist = (z - p).norm();
                    if (scale == 0.0 && dist == 0.0) || dist < tol * scale {
                        poles.swap_remove(i);
                        cancelled += 1;
                    } else {
                        kept_zeros.push(z);
                    }
                }
                None => kept_zeros.push(z),
            }
        }
        if cancelled == 0 {
            if common_s == 0 {
                return Ok(self.clone());
            }
            return Self::from_polys(num, den);
        }
        let num = Polynomial::from_roots(&kept_zeros, num.leading())?;
        let den = Polynomial::from_roots(&poles, den.leading())?;
        Self::from_polys(num, den)
    }

    /// Denominator-root stability test with margin reporting.
    pub fn stability(&self) -> Result<Stability> {
        if self.den.degree() == 0 {
            return Ok(Stability {
                stable: true,
                margin: f64::INFINITY,
            });
        }
        let roots = self.den.roots()?;
        let max_mag = roots.iter().fold(0.0_f64, |m, r| m.max(r.norm()));
        let eps = STABILITY_EPS_REL * max_mag;
        let max_re = roots.iter().fold(f64::NEG_INFINITY, |m, r| m.max(r.re));
        Ok(Stability {
            stable: max_re < -eps,
            margin: -max_re,
        })
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.stability()?.stable)
    }

    /// Peak gain over the grid, refined by golden-section search inside
    /// the bracketing interval. The result is a lower bound on the true
    /// supremum norm (grid-based search); errors on unstable or improper
    /// systems, whose supremum norm is not attained on the axis.
    pub fn hinf_norm(&self, grid: &FrequencyGrid) -> Result<f64> {
        if !self.is_proper() {
            return Err(Error::ImproperSystem);
        }
        if !self.stability()?.stable {
            return Err(Error::UnstableSystem);
        }
        let gain = |w: f64| self.eval(w).map(|v| v.norm()).unwrap_or(f64::NEG_INFINITY);
        Ok(refine_peak(&gain, grid))
    }

    /// Magnitude (dB) and phase (degrees) over a grid. Grid points that
    /// land on a pole are flagged rather than failing the whole sweep.
    pub fn bode(&self, grid: &FrequencyGrid) -> Vec<BodePoint> {
        grid.points()
            .iter()
            .map(|&w| match self.eval(w) {
                Ok(v) => BodePoint {
                    omega: w,
                    magnitude_db: Some(20.0 * v.norm().log10()),
                    phase_deg: Some(v.arg().to_degrees()),
                },
                Err(_) => BodePoint {
                    omega: w,
                    magnitude_db: None,
                    phase_deg: None,
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Stability {
    pub stable: bool,
    /// Distance of the rightmost denominator root from the imaginary
    /// axis; positive when strictly stable, `inf` for constants.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BodePoint {
    pub omega: f64,
    pub magnitude_db: Option<f64>,
    pub phase_deg: Option<f64>,
}

/// Maximizes `f` over the grid, then refines around the best point with
/// golden-section search until the bracketing interval is below 1e-6
/// relative width. Returns the largest evaluated value.
pub(crate) fn refine_peak(f: &dyn Fn(f64) -> f64, grid: &FrequencyGrid) -> f64 {
    let pts = grid.points();
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &w) in pts.iter().enumerate() {
        let v = f(w);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut a = if best_i == 0 { 0.0 } else { pts[best_i - 1] };
    let mut b = if best_i + 1 < pts.len() {
        pts[best_i + 1]
    } else {
        pts[best_i]
    };
    if b <= a {
        return best;
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    best = best.max(f1).max(f2);
    let mut iter = 0;
    while (b - a) > 1e-6 * b.max(1e-12) && iter < 200 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
            best = best.max(f1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
            best = best.max(f2);
        }
        iter += 1;
    }
    best
}

/// Largest relative per-coefficient deviation between two canonical
/// transfer functions; infinite when the degrees disagree.
pub fn max_rel_coeff_dev(a: &TransferFunction, b: &TransferFunction) -> f64 {
    let pairs = [(a.num(), b.num()), (a.den(), b.den())];
    let mut worst = 0.0_f64;
    for (pa, pb) in pairs {
        if pa.degree() != pb.degree() {
            return f64::INFINITY;
        }
        for (x, y) in pa.coeffs().iter().zip(pb.coeffs()) {
            let scale = x.abs().max(y.abs());
            if scale > 0.0 {
                worst = worst.max((x - y).abs() / scale);
            }
        }
    }
    worst
}

impl Mul for &TransferFunction {
    type Output = TransferFunction;
    fn mul(self, rhs: &TransferFunction) -> TransferFunction {
        TransferFunction::from_polys(self.num() * rhs.num(), self.den() * rhs.den())
            .expect("product of nonzero denominators is nonzero")
    }
}

impl Add for &TransferFunction {
    type Output = TransferFunction;
    fn add(self, rhs: &TransferFunction) -> TransferFunction {
        let num = &(self.num() * rhs.den()) + &(rhs.num() * self.den());
        TransferFunction::from_polys(num, self.den() * rhs.den())
            .expect("product of nonzero denominators is nonzero")
    }
}

impl Neg for &TransferFunction {
    type Output = TransferFunction;
    fn neg(self) -> TransferFunction {
        self.scaled(-1.0)
    }
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}

/// Strictly increasing positive frequency grid in rad/s.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("frequency grid is empty"));
        }
        for w in &points {
            if !w.is_finite() || *w <= 0.0 {
                return Err(Error::invalid(format!("grid point {w} must be positive")));
            }
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn log_spaced(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min > 0.0 && max > min) {
            return Err(Error::invalid("need 0 < min < max for a log grid"));
        }
        if n < 2 {
            return Err(Error::invalid("log grid needs at least two points"));
        }
        let (la, lb) = (min.ln(), max.ln());
        let pts = (0..n)
            .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
            .collect();
        Self::new(pts)
    }

    /// 2000 log-spaced points spanning 1e-2 to 1e6 rad/s, wide enough to
    /// bracket every corner frequency used in the bundled designs.
    pub fn default_grid() -> Self {
        Self::log_spaced(1e-2, 1e6, 2000).expect("default grid parameters are valid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
