//! Scenario files: one JSON document describing the converters, the
//! sharing request, the controllers, and (optionally) a load profile,
//! simulation settings, and output/check configuration.

use crate::CliError;
use dclink::converter::ConverterParams;
use dclink::design::{
    reference_kv, reference_weights, synthesize_outer, ControllerTemplate, InnerLoopSpec,
    OuterPlant, SynthesisResult, WeightSpec,
};
use dclink::multi::{allocate, MultiConverterSystem, SharingSpec};
use dclink::sim::{LoadProfile, SimConfig};
use dclink::tf::FrequencyGrid;
use dclink::TransferFunction;
use serde::Deserialize;
use std::fs;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub converters: Vec<ConverterParams>,
    pub inner_base: InnerLoopSpec,
    pub sharing: SharingEntry,
    #[serde(default)]
    pub outer: OuterSpec,
    #[serde(default)]
    pub weights: Option<WeightsEntry>,
    #[serde(default)]
    pub load: Option<LoadProfile>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingEntry {
    pub alpha: Vec<f64>,
    /// Ripple fractions; defaults to `alpha` (share ripple like power).
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
}

/// Voltage-controller source: a named preset, explicit coefficients, or
/// a fixed-structure synthesis request.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OuterSpec {
    Preset(String),
    Explicit(TfEntry),
    Synthesis { synthesize: SynthesisRequest },
}

impl Default for OuterSpec {
    fn default() -> Self {
        Self::Preset("reference-kv".into())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfEntry {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TfEntry {
    pub fn build(&self, field: &str) -> Result<TransferFunction, CliError> {
        TransferFunction::new(&self.num, &self.den)
            .map_err(|e| CliError::Input(format!("{field}: {e}")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub template: ControllerTemplate,
    pub init: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsEntry {
    pub ws: TfEntry,
    pub wu: TfEntry,
    pub wt: TfEntry,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Trace file name under `--out` (default `trace.csv`).
    pub trace_csv: Option<String>,
    /// Metrics file name under `--out` (default `metrics.json`).
    pub metrics_json: Option<String>,
    /// Steady-state analysis window in seconds (default 0.5).
    pub metrics_window: Option<f64>,
    /// Transient to discard before the window may start (default 0.5 s).
    pub metrics_discard: Option<f64>,
    pub checks: Option<Checks>,
}

/// Tolerances evaluated after a run; any violation exits with code 1.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    /// Largest allowed |V_dc - V_des| in volts.
    pub max_regulation_error: Option<f64>,
    /// Relative tolerance on the measured DC shares against `alpha`.
    pub dc_share_rel_tol: Option<f64>,
    /// Relative tolerance on the measured ripple shares against `beta`.
    pub ripple_share_rel_tol: Option<f64>,
    /// Largest allowed frequency-response deviation in `verify`
    /// (default 1e-9).
    pub equivalence_tol: Option<f64>,
}

pub fn load(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

impl Scenario {
    pub fn sharing_spec(&self) -> Result<SharingSpec, CliError> {
        let beta = self
            .sharing
            .beta
            .clone()
            .unwrap_or_else(|| self.sharing.alpha.clone());
        SharingSpec::new(self.sharing.alpha.clone(), beta)
            .map_err(|e| CliError::Input(format!("sharing: {e}")))
    }

    pub fn system(&self) -> Result<MultiConverterSystem, CliError> {
        for (k, p) in self.converters.iter().enumerate() {
            p.validate()
                .map_err(|e| CliError::Input(format!("converters[{k}]: {e}")))?;
        }
        self.inner_base
            .validate()
            .map_err(|e| CliError::Input(format!("inner_base: {e}")))?;
        let sharing = self.sharing_spec()?;
        allocate(&sharing, &self.converters, &self.inner_base)
            .map_err(|e| CliError::Input(format!("allocation: {e}")))
    }

    /// Inductances the current controllers are designed for: the
    /// `sim.controller_l` override if present, else the plant values.
    pub fn design_inductances(&self, sys: &MultiConverterSystem) -> Vec<f64> {
        self.sim
            .as_ref()
            .and_then(|s| s.controller_l.clone())
            .unwrap_or_else(|| sys.converters.iter().map(|p| p.l).collect())
    }

    pub fn weight_spec(&self) -> Result<WeightSpec, CliError> {
        match &self.weights {
            None => Ok(reference_weights()),
            Some(w) => WeightSpec::new(
                w.ws.build("weights.ws")?,
                w.wu.build("weights.wu")?,
                w.wt.build("weights.wt")?,
            )
            .map_err(|e| CliError::Input(format!("weights: {e}"))),
        }
    }

    /// Resolves the `outer` section into a concrete voltage controller,
    /// running the synthesis when one is requested.
    pub fn outer_controller(
        &self,
        sys: &MultiConverterSystem,
        grid: &FrequencyGrid,
        seed_override: Option<u64>,
    ) -> Result<(TransferFunction, Option<SynthesisResult>), CliError> {
        match &self.outer {
            OuterSpec::Preset(name) if name == "reference-kv" => Ok((reference_kv(), None)),
            OuterSpec::Preset(other) => Err(CliError::Input(format!(
                "outer: unknown preset {other:?}; available presets: \"reference-kv\""
            ))),
            OuterSpec::Explicit(tf) => Ok((tf.build("outer")?, None)),
            OuterSpec::Synthesis { synthesize } => {
                let plant = self.nominal_plant(sys)?;
                let weights = self.weight_spec()?;
                let seed = seed_override.unwrap_or(synthesize.seed);
                let result = synthesize_outer(
                    &plant,
                    &weights,
                    &synthesize.template,
                    &synthesize.init,
                    grid,
                    seed,
                )?;
                Ok((result.controller.clone(), Some(result)))
            }
        }
    }

    /// The single-converter plant the whole arrangement emulates.
    pub fn nominal_plant(&self, sys: &MultiConverterSystem) -> Result<OuterPlant, CliError> {
        OuterPlant::new(
            sys.nominal.spec.closed_loop(),
            sys.nominal.d_prime,
            sys.nominal.c,
        )
        .map_err(|e| CliError::Input(format!("nominal plant: {e}")))
    }

    pub fn synthesis_request(&self) -> Result<&SynthesisRequest, CliError> {
        match &self.outer {
            OuterSpec::Synthesis { synthesize } => Ok(synthesize),
            _ => Err(CliError::Input(
                "outer: this command needs a synthesis request, e.g. \
                 {\"synthesize\": {\"template\": \"pi\", \"init\": [0.05, 0.5]}}"
                    .into(),
            )),
        }
    }
}
