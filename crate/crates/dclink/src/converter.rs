//! Averaged converter models and duty-cycle maps.
//!
//! Each topology reduces, after an input transformation, to the same pair
//! of integrators: a current plant 1/(sL) driven by the virtual control ũ
//! and a voltage plant 1/(sC) driven by the net capacitor current. What
//! differs per topology is the ũ-to-duty map and the gain tying inductor
//! current to the current delivered into the DC link.

use crate::error::{Error, Result};
use crate::tf::TransferFunction;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Boost,
    Buck,
    #[serde(rename = "buckboost")]
    BuckBoost,
}

/// One converter: topology plus passives and terminal voltages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConverterParams {
    pub topology: Topology,
    /// Inductance, henries.
    pub l: f64,
    /// DC-link capacitance contributed by this converter, farads.
    pub c: f64,
    /// Source voltage, volts.
    pub v_g: f64,
    /// Desired DC-link voltage, volts.
    pub v_des: f64,
}

/// Averaged (switching-cycle mean) state of one converter.
#[derive(Debug, Clone, Copy)]
pub struct AveragedState {
    pub i_l: f64,
    pub v: f64,
}

/// Operating-point constants: steady duty `d`, its complement `d_prime`,
/// and the small-signal gain from inductor current to link current.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DutyPoint {
    pub d: f64,
    pub d_prime: f64,
    pub gain: f64,
}

/// The two integrator plants plus the link-current gain.
#[derive(Debug, Clone)]
pub struct PlantTfs {
    /// ũ to inductor current: 1/(sL).
    pub current: TransferFunction,
    /// net capacitor current to link voltage: 1/(sC).
    pub voltage: TransferFunction,
    pub link_gain: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DutyCommand {
    pub duty: f64,
    pub saturated: bool,
}

/// Denominators smaller than this (volts) make the duty map singular.
const DEGENERATE_VOLTS: f64 = 1e-6;

impl ConverterParams {
    pub fn new(topology: Topology, l: f64, c: f64, v_g: f64, v_des: f64) -> Result<Self> {
        let p = Self {
            topology,
            l,
            c,
            v_g,
            v_des,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("L", self.l),
            ("C", self.c),
            ("V_g", self.v_g),
            ("V_des", self.v_des),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        match self.topology {
            Topology::Boost if self.v_des <= self.v_g => Err(Error::InvalidTopology(format!(
                "boost steps up: V_des = {} must exceed V_g = {}",
                self.v_des, self.v_g
            ))),
            Topology::Buck if self.v_des >= self.v_g => Err(Error::InvalidTopology(format!(
                "buck steps down: V_des = {} must be below V_g = {}",
                self.v_des, self.v_g
            ))),
            Topology::BuckBoost if self.v_des == self.v_g => Err(Error::InvalidTopology(
                "buck-boost requires V_des != V_g".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Steady-state duty, complement, and link-current gain.
    pub fn nominal_duty(&self) -> Result<DutyPoint> {
        self.validate()?;
        Ok(match self.topology {
            Topology::Boost => {
                let d_prime = self.v_g / self.v_des;
                DutyPoint {
                    d: 1.0 - d_prime,
                    d_prime,
                    gain: d_prime,
                }
            }
            Topology::Buck => {
                let d = self.v_des / self.v_g;
                DutyPoint {
                    d,
                    d_prime: 1.0 - d,
                    gain: 1.0,
                }
            }
            Topology::BuckBoost => {
                let d = self.v_des / (self.v_des - self.v_g);
                let d_prime = 1.0 - d;
                DutyPoint {
                    d,
                    d_prime,
                    gain: -d_prime,
                }
            }
        })
    }

    pub fn plant_tfs(&self) -> Result<PlantTfs> {
        let duty = self.nominal_duty()?;
        Ok(PlantTfs {
            current: TransferFunction::new(&[1.0], &[self.l, 0.0])?,
            voltage: TransferFunction::new(&[1.0], &[self.c, 0.0])?,
            link_gain: duty.gain,
        })
    }

    /// Right-hand side of the averaged model: (di_L/dt, dV/dt) for a
    /// given duty (already clamped to [0,1]) and load current drawn from
    /// the link. The buck-boost output stage uses the operating-point
    /// gain −D' rather than the instantaneous duty.
    pub fn averaged_dynamics(&self, x: AveragedState, d: f64, i_load: f64) -> (f64, f64) {
        match self.topology {
            Topology::Boost => (
                (-(1.0 - d) * x.v + self.v_g) / self.l,
                ((1.0 - d) * x.i_l - i_load) / self.c,
            ),
            Topology::Buck => (
                (-x.v + d * self.v_g) / self.l,
                (x.i_l - i_load) / self.c,
            ),
            Topology::BuckBoost => {
                let d_prime = 1.0 - self.v_des / (self.v_des - self.v_g);
                (
                    (x.v + d * (self.v_g - x.v)) / self.l,
                    (-d_prime * x.i_l - i_load) / self.c,
                )
            }
        }
    }

    /// Averaged current this converter feeds into the shared link for a
    /// given duty; the capacitor term of [`averaged_dynamics`]
    /// (Self::averaged_dynamics) equals `(link_current - i_load) / C`.
    pub fn link_current(&self, x: AveragedState, d: f64) -> f64 {
        match self.topology {
            Topology::Boost => (1.0 - d) * x.i_l,
            Topology::Buck => x.i_l,
            Topology::BuckBoost => {
                let d_prime = 1.0 - self.v_des / (self.v_des - self.v_g);
                -d_prime * x.i_l
            }
        }
    }

    /// Inverts the virtual-control definition to recover a duty command,
    /// clamped to [0,1] with a saturation flag.
    pub fn duty_from_control(&self, u_tilde: f64, x: &AveragedState) -> Result<DutyCommand> {
        let raw = match self.topology {
            Topology::Boost => {
                if x.v.abs() < DEGENERATE_VOLTS {
                    return Err(Error::DegenerateState(format!(
                        "boost duty map needs |V| >= {DEGENERATE_VOLTS} V, got {}",
                        x.v
                    )));
                }
                1.0 - (self.v_g - u_tilde) / x.v
            }
            Topology::Buck => {
                if self.v_g.abs() < DEGENERATE_VOLTS {
                    return Err(Error::DegenerateState(format!(
                        "buck duty map needs |V_g| >= {DEGENERATE_VOLTS} V, got {}",
                        self.v_g
                    )));
                }
                (u_tilde + x.v) / self.v_g
            }
            Topology::BuckBoost => {
                let den = self.v_g - x.v;
                if den.abs() < DEGENERATE_VOLTS {
                    return Err(Error::DegenerateState(format!(
                        "buck-boost duty map needs |V_g - V| >= {DEGENERATE_VOLTS} V, got {den}"
                    )));
                }
                (u_tilde - x.v) / den
            }
        };
        Ok(DutyCommand {
            duty: raw.clamp(0.0, 1.0),
            saturated: !(0.0..=1.0).contains(&raw),
        })
    }

    /// Forward map from duty to the virtual control ũ; inverse of
    /// [`duty_from_control`](Self::duty_from_control) on the unclamped
    /// region.
    pub fn control_from_duty(&self, d: f64, x: &AveragedState) -> f64 {
        match self.topology {
            Topology::Boost => self.v_g - (1.0 - d) * x.v,
            Topology::Buck => d * self.v_g - x.v,
            Topology::BuckBoost => d * (self.v_g - x.v) + x.v,
        }
    }

    /// Lossless steady state carrying `i_load` into the link at V_des.
    pub fn equilibrium(&self, i_load: f64) -> Result<AveragedState> {
        let duty = self.nominal_duty()?;
        Ok(AveragedState {
            i_l: i_load / duty.gain,
            v: self.v_des,
        })
    }
}
