//! Controllable canonical state-space realization of a proper transfer
//! function, used to integrate controllers alongside the converter
//! states in time-domain simulation.

use crate::error::{Error, Result};
use crate::tf::TransferFunction;

/// Realization of a proper rational function in controllable canonical
/// form: the state advances as a chain of integrators whose last row is
/// the (negated, ascending) denominator tail, and the output taps the
/// states with the remainder-numerator coefficients plus a direct
/// feedthrough when numerator and denominator degrees match.
#[derive(Debug, Clone)]
pub struct CanonicalSs {
    /// Denominator tail, ascending powers: den = s^n + a[n-1] s^(n-1) + ... + a[0].
    a: Vec<f64>,
    /// Output taps, ascending powers of the strictly proper remainder.
    c: Vec<f64>,
    /// Direct feedthrough.
    d0: f64,
}

impl CanonicalSs {
    pub fn from_tf(tf: &TransferFunction) -> Result<Self> {
        if !tf.is_proper() {
            return Err(Error::ImproperSystem);
        }
        let den = tf.den().coeffs(); // monic, descending
        let num = tf.num().coeffs();
        let n = den.len() - 1;

        // split off the feedthrough so the state part is strictly proper
        let d0 = if num.len() == den.len() { num[0] } else { 0.0 };
        let mut remainder = vec![0.0; n]; // ascending powers, length n
        let skip = if num.len() == den.len() { 1 } else { 0 };
        for (i, &coeff) in num.iter().skip(skip).rev().enumerate() {
            remainder[i] = coeff - d0 * den[den.len() - 1 - i];
        }

        let mut a = vec![0.0; n];
        for (i, &coeff) in den.iter().skip(1).rev().enumerate() {
            a[i] = coeff;
        }
        Ok(Self { a, c: remainder, d0 })
    }

    /// Number of states.
    pub fn order(&self) -> usize {
        self.a.len()
    }

    pub fn feedthrough(&self) -> f64 {
        self.d0
    }

    /// Writes dx/dt for the current state and input. `x` and `dx` must
    /// both have length [`order`](Self::order).
    pub fn derivative(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let n = self.a.len();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(dx.len(), n);
        if n == 0 {
            return;
        }
        dx[..n - 1].copy_from_slice(&x[1..]);
        let mut acc = u;
        for (ai, xi) in self.a.iter().zip(x) {
            acc -= ai * xi;
        }
        dx[n - 1] = acc;
    }

    pub fn output(&self, x: &[f64], u: f64) -> f64 {
        let mut y = self.d0 * u;
        for (ci, xi) in self.c.iter().zip(x) {
            y += ci * xi;
        }
        y
    }
}
