//! Inner- and outer-loop controller construction and evaluation.
//!
//! The inner current loop places a notch over the double-line-frequency
//! ripple: the target closed loop is a first-order lag times a biquad
//! whose numerator/denominator damping ratios set the notch depth. The
//! matching controller has a closed form, verified here by polynomial
//! identity rather than by simulation.
//!
//! The outer voltage loop is scored by a stacked mixed-sensitivity cost
//! over a frequency grid, with an optional fixed-structure parameter
//! search standing in for full norm-optimal synthesis.

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::tf::{
    max_rel_coeff_dev, refine_peak, FrequencyGrid, Stability, TransferFunction,
    DEFAULT_MINREAL_TOL,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::f64::consts::PI;

/// Twice the 60 Hz line frequency, in rad/s: the ripple that rectified
/// single-phase loads inject into the DC link.
pub const DOUBLE_LINE_OMEGA: f64 = 240.0 * PI;

fn default_omega0() -> f64 {
    DOUBLE_LINE_OMEGA
}

/// Shape of the inner current loop: lag corner `omega_tilde` plus a
/// biquad notch at `omega0` whose depth is `zeta1/zeta2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InnerLoopSpec {
    pub zeta1: f64,
    pub zeta2: f64,
    pub omega_tilde: f64,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
}

impl InnerLoopSpec {
    pub fn new(zeta1: f64, zeta2: f64, omega_tilde: f64) -> Result<Self> {
        Self::with_omega0(zeta1, zeta2, omega_tilde, DOUBLE_LINE_OMEGA)
    }

    pub fn with_omega0(zeta1: f64, zeta2: f64, omega_tilde: f64, omega0: f64) -> Result<Self> {
        let spec = Self {
            zeta1,
            zeta2,
            omega_tilde,
            omega0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("zeta1", self.zeta1),
            ("zeta2", self.zeta2),
            ("omega_tilde", self.omega_tilde),
            ("omega0", self.omega0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn numerator_quad(&self) -> Polynomial {
        Polynomial::new(&[
            1.0,
            2.0 * self.zeta1 * self.omega0,
            self.omega0 * self.omega0,
        ])
        .expect("finite coefficients")
    }

    fn denominator_quad(&self) -> Polynomial {
        Polynomial::new(&[
            1.0,
            2.0 * self.zeta2 * self.omega0,
            self.omega0 * self.omega0,
        ])
        .expect("finite coefficients")
    }

    /// Target closed loop of the inner current controller:
    /// `(ω̃/(s+ω̃)) · (s²+2ζ₁ω₀s+ω₀²)/(s²+2ζ₂ω₀s+ω₀²)`. Unit DC gain.
    pub fn closed_loop(&self) -> TransferFunction {
        let num = self.numerator_quad().scaled(self.omega_tilde);
        let den = &Polynomial::new(&[1.0, self.omega_tilde]).expect("finite coefficients")
            * &self.denominator_quad();
        TransferFunction::from_polys(num, den).expect("denominator is monic cubic")
    }

    /// Current controller whose unity-feedback loop around `1/(sL)`
    /// realizes [`closed_loop`](Self::closed_loop) exactly.
    pub fn controller(&self, l: f64) -> Result<TransferFunction> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid(format!("L must be positive, got {l}")));
        }
        let k = l * self.omega_tilde;
        let num = self.numerator_quad().scaled(k);
        let den = Polynomial::new(&[
            1.0,
            2.0 * self.zeta2 * self.omega0,
            2.0 * (self.zeta2 - self.zeta1) * self.omega0 * self.omega_tilde
                + self.omega0 * self.omega0,
        ])?;
        TransferFunction::from_polys(num, den)
    }

    /// Closed-form gain of the target loop at the notch frequency:
    /// `(ζ₁/ζ₂) · ω̃/√(ω̃² + ω₀²)`.
    pub fn notch_gain(&self) -> f64 {
        (self.zeta1 / self.zeta2) * self.omega_tilde
            / (self.omega_tilde * self.omega_tilde + self.omega0 * self.omega0).sqrt()
    }
}

/// Checks that `k_c` closed around `1/(sL)` reproduces the target loop:
/// returns the max relative coefficient deviation between the two, both
/// reduced to minimal form. Errors if the realized loop is unstable.
pub fn verify_realization(
    k_c: &TransferFunction,
    l: f64,
    spec: &InnerLoopSpec,
) -> Result<f64> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::invalid(format!("L must be positive, got {l}")));
    }
    let plant = TransferFunction::new(&[1.0], &[l, 0.0])?;
    let cl = (k_c * &plant).feedback(&TransferFunction::one())?;
    if !cl.stability()?.stable {
        return Err(Error::UnstableSystem);
    }
    let realized = cl.minreal(DEFAULT_MINREAL_TOL)?;
    let target = spec.closed_loop().minreal(DEFAULT_MINREAL_TOL)?;
    Ok(max_rel_coeff_dev(&realized, &target))
}

/// Mixed-sensitivity weights: `ws` shapes the sensitivity, `wu` the
/// control effort, `wt` the complementary sensitivity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSpec {
    pub ws: TransferFunction,
    pub wu: TransferFunction,
    pub wt: TransferFunction,
}

impl WeightSpec {
    pub fn new(ws: TransferFunction, wu: TransferFunction, wt: TransferFunction) -> Result<Self> {
        let spec = Self { ws, wu, wt };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("ws", &self.ws), ("wu", &self.wu), ("wt", &self.wt)] {
            if !w.is_proper() {
                return Err(Error::invalid(format!("weight {name} must be proper")));
            }
            if !w.stability()?.stable {
                return Err(Error::invalid(format!("weight {name} must be stable")));
            }
        }
        Ok(())
    }
}

/// Voltage-loop plant as seen by the outer controller: the DC-link
/// integrator `g_v = 1/(sC)`, the link-current gain `d_prime`, and the
/// (designed) inner closed loop in series.
#[derive(Debug, Clone)]
pub struct OuterPlant {
    pub g_tilde_c: TransferFunction,
    pub d_prime: f64,
    pub g_v: TransferFunction,
}

impl OuterPlant {
    pub fn new(g_tilde_c: TransferFunction, d_prime: f64, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("C must be positive, got {c}")));
        }
        if !(d_prime.is_finite() && d_prime != 0.0) {
            return Err(Error::invalid(format!(
                "link gain must be finite and nonzero, got {d_prime}"
            )));
        }
        Ok(Self {
            g_tilde_c,
            d_prime,
            g_v: TransferFunction::new(&[1.0], &[c, 0.0])?,
        })
    }

    /// Loop transfer `g_v · d_prime · g_tilde_c · k_v`.
    pub fn loop_tf(&self, k_v: &TransferFunction) -> TransferFunction {
        let inner = (&self.g_v * &self.g_tilde_c).scaled(self.d_prime);
        &inner * k_v
    }

    /// All closed-loop maps of the voltage loop, each in minimal form.
    pub fn closed_loop_maps(&self, k_v: &TransferFunction) -> Result<ClosedLoopMaps> {
        let l = self.loop_tf(k_v);
        let one = TransferFunction::one();
        let s = one.feedback(&l)?;
        let t = l.feedback(&one)?;
        let loop_stability = s.stability()?;
        let tol = DEFAULT_MINREAL_TOL;
        Ok(ClosedLoopMaps {
            kv_s: (k_v * &s).minreal(tol)?,
            gv_s: (&self.g_v * &s).minreal(tol)?,
            inner_kv_s: (&(&self.g_tilde_c * k_v) * &s).minreal(tol)?,
            load_to_inductor: t.scaled(1.0 / self.d_prime).minreal(tol)?,
            s: s.minreal(tol)?,
            t: t.minreal(tol)?,
            loop_stability,
        })
    }
}

/// Closed-loop maps of the outer voltage loop. `s` and `t` always share
/// the same denominator before reduction, so `s + t = 1` holds at the
/// coefficient level, not merely numerically.
#[derive(Debug, Clone)]
pub struct ClosedLoopMaps {
    /// Sensitivity: setpoint (and load, scaled) to voltage error.
    pub s: TransferFunction,
    /// Complementary sensitivity: measurement noise to voltage.
    pub t: TransferFunction,
    /// Setpoint to controller output (current reference).
    pub kv_s: TransferFunction,
    /// Load-current disturbance to voltage.
    pub gv_s: TransferFunction,
    /// Setpoint to the realized inner-loop output.
    pub inner_kv_s: TransferFunction,
    /// Load-current disturbance to inductor current (t / link gain).
    pub load_to_inductor: TransferFunction,
    /// Stability of the full closed-loop characteristic polynomial,
    /// before any pole/zero reduction.
    pub loop_stability: Stability,
}

impl ClosedLoopMaps {
    pub fn stability_report(&self) -> Result<Vec<(&'static str, Stability)>> {
        let named: [(&'static str, &TransferFunction); 6] = [
            ("s", &self.s),
            ("t", &self.t),
            ("kv_s", &self.kv_s),
            ("gv_s", &self.gv_s),
            ("inner_kv_s", &self.inner_kv_s),
            ("load_to_inductor", &self.load_to_inductor),
        ];
        named
            .into_iter()
            .map(|(name, tf)| Ok((name, tf.stability()?)))
            .collect()
    }
}

/// Stacked mixed-sensitivity cost: peak over the grid of
/// `sqrt(|ws·s|² + |wu·kv_s|² + |wt·t|²)` at `s = jω`, golden-section
/// refined. Returns `+inf` when the loop cannot be formed or any map
/// entering the cost is unstable.
pub fn stacked_cost(
    k_v: &TransferFunction,
    plant: &OuterPlant,
    weights: &WeightSpec,
    grid: &FrequencyGrid,
) -> f64 {
    let maps = match plant.closed_loop_maps(k_v) {
        Ok(m) => m,
        Err(_) => return f64::INFINITY,
    };
    for map in [&maps.s, &maps.kv_s, &maps.t] {
        match map.stability() {
            Ok(st) if st.stable => {}
            _ => return f64::INFINITY,
        }
    }
    let term = |g: &TransferFunction, w: &TransferFunction, omega: f64| -> Option<f64> {
        let gv = g.eval(omega).ok()?.norm();
        let wv = w.eval(omega).ok()?.norm();
        Some((gv * wv) * (gv * wv))
    };
    let f = |omega: f64| -> f64 {
        match (
            term(&maps.s, &weights.ws, omega),
            term(&maps.kv_s, &weights.wu, omega),
            term(&maps.t, &weights.wt, omega),
        ) {
            (Some(a), Some(b), Some(c)) => (a + b + c).sqrt(),
            _ => f64::INFINITY,
        }
    };
    refine_peak(&f, grid)
}

/// The benchmark fifth-order voltage controller, expanded from its
/// factored form.
pub fn reference_kv() -> TransferFunction {
    let lin = |r: f64| Polynomial::new(&[1.0, r]).expect("finite coefficients");
    let quad = |b: f64, c: f64| Polynomial::new(&[1.0, b, c]).expect("finite coefficients");
    let num = &(&(&lin(113.9) * &lin(0.001)) * &lin(0.001)) * &quad(4.05e4, 5.65e8);
    let den = &(&lin(9.56) * &quad(0.002, 4.8e-6)) * &quad(9606.0, 8.8e7);
    TransferFunction::from_polys(num.scaled(0.256), den).expect("monic denominator")
}

/// The mixed-sensitivity weights used alongside [`reference_kv`]:
/// `ws = (0.5s+2π50)/(s+0.06π50)`, `wu = 0.9`,
/// `wt = (s+2π40)/(0.05s+2π80)`.
pub fn reference_weights() -> WeightSpec {
    let ws = TransferFunction::new(&[0.5, 100.0 * PI], &[1.0, 3.0 * PI])
        .expect("valid coefficients");
    let wu = TransferFunction::constant(0.9);
    let wt = TransferFunction::new(&[1.0, 80.0 * PI], &[0.05, 160.0 * PI])
        .expect("valid coefficients");
    WeightSpec::new(ws, wu, wt).expect("reference weights are proper and stable")
}

/// Parameterized controller structures for the fixed-structure search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerTemplate {
    /// Static gain `k`.
    Gain,
    /// `(k_p·s + k_i)/s`.
    Pi,
    /// Free numerator over a monic denominator of fixed degrees.
    Rational { num_deg: usize, den_deg: usize },
}

impl ControllerTemplate {
    pub fn param_count(&self) -> usize {
        match self {
            Self::Gain => 1,
            Self::Pi => 2,
            Self::Rational { num_deg, den_deg } => num_deg + 1 + den_deg,
        }
    }

    pub fn build(&self, params: &[f64]) -> Result<TransferFunction> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "template needs {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite template parameter"));
        }
        match self {
            Self::Gain => Ok(TransferFunction::constant(params[0])),
            Self::Pi => TransferFunction::new(&[params[0], params[1]], &[1.0, 0.0]),
            Self::Rational { num_deg, den_deg } => {
                if num_deg > den_deg {
                    return Err(Error::invalid(
                        "rational template must be proper: num_deg <= den_deg",
                    ));
                }
                let num = &params[..num_deg + 1];
                let mut den = Vec::with_capacity(den_deg + 1);
                den.push(1.0);
                den.extend_from_slice(&params[num_deg + 1..]);
                TransferFunction::new(num, &den)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub controller: TransferFunction,
    pub params: Vec<f64>,
    pub cost: f64,
    pub evaluations: usize,
}

const SYNTH_BUDGET: usize = 2000;
const STABILITY_PENALTY: f64 = 1e9;
const MALFORMED_PENALTY: f64 = 1e12;

/// Derivative-free minimization of [`stacked_cost`] over the template's
/// parameters (Nelder-Mead, fixed evaluation budget, one restart from a
/// perturbed incumbent). Deterministic for a given `init` and `seed`.
pub fn synthesize_outer(
    plant: &OuterPlant,
    weights: &WeightSpec,
    template: &ControllerTemplate,
    init: &[f64],
    grid: &FrequencyGrid,
    seed: u64,
) -> Result<SynthesisResult> {
    if init.len() != template.param_count() {
        return Err(Error::invalid(format!(
            "template needs {} parameters, got {}",
            template.param_count(),
            init.len()
        )));
    }
    if init.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("non-finite initial parameter"));
    }

    let evals = Cell::new(0usize);
    let objective = |p: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        let kv = match template.build(p) {
            Ok(k) => k,
            Err(_) => return MALFORMED_PENALTY,
        };
        let maps = match plant.closed_loop_maps(&kv) {
            Ok(m) => m,
            Err(_) => return MALFORMED_PENALTY,
        };
        if !maps.loop_stability.stable {
            // margin is -(max real part); penalize by how far into the
            // right half-plane the worst root sits
            return STABILITY_PENALTY + (-maps.loop_stability.margin).max(0.0);
        }
        let c = stacked_cost(&kv, plant, weights, grid);
        if c.is_finite() {
            c
        } else {
            STABILITY_PENALTY
        }
    };

    let mut best_x = init.to_vec();
    let mut best_f = objective(&best_x);
    let budget = SYNTH_BUDGET;

    let (x1, f1) = nelder_mead(&best_x, &objective, &evals, budget);
    if f1 < best_f {
        best_x = x1;
        best_f = f1;
    }

    if evals.get() < budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perturbed: Vec<f64> = best_x
            .iter()
            .map(|&x| {
                let u: f64 = rng.gen_range(-1.0..1.0);
                if x == 0.0 {
                    0.01 * u
                } else {
                    x * (1.0 + 0.05 * u)
                }
            })
            .collect();
        let (x2, f2) = nelder_mead(&perturbed, &objective, &evals, budget);
        if f2 < best_f {
            best_x = x2;
            best_f = f2;
        }
    }

    if best_f >= STABILITY_PENALTY {
        return Err(Error::SynthesisFailed { best_cost: best_f });
    }
    Ok(SynthesisResult {
        controller: template.build(&best_x)?,
        params: best_x,
        cost: best_f,
        evaluations: evals.get(),
    })
}

/// Standard Nelder-Mead: reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5. Stops on budget or simplex collapse.
fn nelder_mead(
    x0: &[f64],
    f: &dyn Fn(&[f64]) -> f64,
    evals: &Cell<usize>,
    budget: usize,
) -> (Vec<f64>, f64) {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    let n = x0.len();

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += 0.05 * x[i].abs() + 2.5e-4;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    while evals.get() < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_f, worst_f) = (simplex[0].1, simplex[n].1);
        let spread = (worst_f - best_f).abs();
        if spread <= 1e-12 * best_f.abs().max(1e-12) {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let at = |coef: f64, through: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(through)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = at(ALPHA, &simplex[n].0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = at(GAMMA, &simplex[n].0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else if fr < simplex[n].1 {
            // outside contraction: centroid + rho*(xr - centroid)
            let xc: Vec<f64> = centroid
                .iter()
                .zip(&xr)
                .map(|(c, r)| c + RHO * (r - c))
                .collect();
            let fc = f(&xc);
            if fc <= fr {
                simplex[n] = (xc, fc);
            } else {
                shrink(&mut simplex, SIGMA, f, evals, budget);
            }
        } else {
            let xc: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c - RHO * (c - w))
                .collect();
            let fc = f(&xc);
            if fc < simplex[n].1 {
                simplex[n] = (xc, fc);
            } else {
                shrink(&mut simplex, SIGMA, f, evals, budget);
            }
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

fn shrink(
    simplex: &mut [(Vec<f64>, f64)],
    sigma: f64,
    f: &dyn Fn(&[f64]) -> f64,
    evals: &Cell<usize>,
    budget: usize,
) {
    let best = simplex[0].0.clone();
    for entry in simplex.iter_mut().skip(1) {
        if evals.get() >= budget {
            break;
        }
        for (xi, bi) in entry.0.iter_mut().zip(&best) {
            *xi = bi + sigma * (*xi - bi);
        }
        entry.1 = f(&entry.0);
    }
}
