//! `dclink` — design, verify, and simulate current/voltage control for
//! parallel DC-DC converters sharing a DC link.
//!
//! Every subcommand reads one scenario JSON file (see `scenario.rs`) and
//! prints an engineering-notation summary; `--out DIR` additionally
//! writes machine-readable JSON/CSV in plain SI units. Exit codes:
//! 0 success, 1 a verification or tolerance check failed, 2 bad input.

mod scenario;

use clap::{Parser, Subcommand};
use dclink::design::{stacked_cost, verify_realization, SynthesisResult};
use dclink::multi::{aggregate_inner, predicted_shares, verify_equivalence};
use dclink::sim::{simulate_closed_loop, steady_state_metrics, SteadyStateMetrics};
use dclink::tf::{FrequencyGrid, TransferFunction};
use scenario::Scenario;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Malformed scenario, file, or flag (exit 2).
    Input(String),
    /// A verification or tolerance gate failed (exit 1).
    Check(String),
}

impl From<dclink::Error> for CliError {
    fn from(e: dclink::Error) -> Self {
        use dclink::Error::*;
        match &e {
            InvalidInput(_) | DegreeTooLow | InvalidTopology(_) | InfeasibleAllocation(_)
            | ImproperSystem | InsufficientWindow(_) => CliError::Input(e.to_string()),
            PoleAtFrequency { .. } | SingularLoop | UnstableSystem | DegenerateState(_)
            | InvariantViolation(_) | SynthesisFailed { .. } | DivergentSimulation { .. } => {
                CliError::Check(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dclink",
    version,
    about = "Control design and verification for parallel DC-DC converters on a shared link"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Scenario JSON file describing converters, sharing, and controllers.
    #[arg(long, global = true, value_name = "FILE")]
    scenario: Option<PathBuf>,

    /// Directory for JSON/CSV outputs (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Lower edge of the frequency grid in rad/s.
    #[arg(long, global = true, default_value_t = 1e-2)]
    grid_min: f64,

    /// Upper edge of the frequency grid in rad/s.
    #[arg(long, global = true, default_value_t = 1e6)]
    grid_max: f64,

    /// Number of logarithmically spaced grid points.
    #[arg(long, global = true, default_value_t = 2000)]
    grid_points: usize,

    /// Override the synthesis seed from the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Design the per-converter current controllers and verify each
    /// realization against its target loop.
    DesignInner,
    /// Derive reference scalings and notch depths from the sharing
    /// fractions.
    Allocate,
    /// Check that the paralleled system matches its single-converter
    /// equivalent in the frequency domain.
    Verify,
    /// Integrate the closed loop in time and extract steady-state
    /// metrics.
    Simulate,
    /// Tabulate closed-loop frequency responses.
    Bode,
    /// Evaluate the stacked mixed-sensitivity cost of the voltage
    /// controller.
    EvalCost,
    /// Search a fixed-structure voltage controller minimizing the
    /// stacked cost.
    Synthesize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Input("missing --scenario FILE".into()))?;
    let sc = scenario::load(path)?;
    let grid = FrequencyGrid::log_spaced(cli.grid_min, cli.grid_max, cli.grid_points)
        .map_err(|e| CliError::Input(format!("frequency grid: {e}")))?;
    match cli.cmd {
        Cmd::DesignInner => cmd_design_inner(cli, &sc),
        Cmd::Allocate => cmd_allocate(cli, &sc),
        Cmd::Verify => cmd_verify(cli, &sc, &grid),
        Cmd::Simulate => cmd_simulate(cli, &sc, &grid),
        Cmd::Bode => cmd_bode(cli, &sc, &grid),
        Cmd::EvalCost => cmd_eval_cost(cli, &sc, &grid),
        Cmd::Synthesize => cmd_synthesize(cli, &sc, &grid),
    }
}

/// Engineering notation: mantissa in [1, 1000) with a power-of-three
/// exponent.
fn eng(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.4}");
    }
    let exp3 = (x.abs().log10().floor() as i32).div_euclid(3) * 3;
    let mantissa = x / 10f64.powi(exp3);
    if exp3 == 0 {
        format!("{mantissa:.4}")
    } else {
        format!("{mantissa:.4}e{exp3}")
    }
}

fn eng_slice(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| eng(*x)).collect();
    format!("[{}]", parts.join(", "))
}

fn count(n: usize, noun: &str) -> String {
    if n == 1 {
        format!("{n} {noun}")
    } else {
        format!("{n} {noun}s")
    }
}

fn out_file(cli: &Cli, name: &str) -> Result<Option<PathBuf>, CliError> {
    let Some(dir) = &cli.out else { return Ok(None) };
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(Some(dir.join(name)))
}

fn write_json<T: Serialize>(cli: &Cli, name: &str, value: &T) -> Result<(), CliError> {
    let Some(path) = out_file(cli, name)? else {
        return Ok(());
    };
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("serializing {name}: {e}")))?;
    text.push('\n');
    fs::write(&path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct InnerDesignOut {
    controllers: Vec<InnerControllerOut>,
}

#[derive(Serialize)]
struct InnerControllerOut {
    index: usize,
    zeta1: f64,
    design_inductance: f64,
    k_c: TransferFunction,
    notch_gain: f64,
    realization_residual: f64,
}

fn cmd_design_inner(cli: &Cli, sc: &Scenario) -> Result<(), CliError> {
    let sys = sc.system()?;
    let design_l = sc.design_inductances(&sys);
    if design_l.len() != sys.len() {
        return Err(CliError::Input(format!(
            "sim.controller_l has {} entries for {} converters",
            design_l.len(),
            sys.len()
        )));
    }
    let mut out = InnerDesignOut {
        controllers: Vec::new(),
    };
    println!(
        "current-controller designs ({}):",
        count(sys.len(), "converter")
    );
    for (k, spec) in sys.inner_specs.iter().enumerate() {
        let k_c = spec.controller(design_l[k])?;
        let residual = verify_realization(&k_c, design_l[k], spec)?;
        let notch = spec.notch_gain();
        println!(
            "  converter {}: zeta1 = {}, L = {} H, notch gain = {}, realization residual = {:.2e}",
            k + 1,
            eng(spec.zeta1),
            eng(design_l[k]),
            eng(notch),
            residual
        );
        if residual > 1e-9 {
            return Err(CliError::Check(format!(
                "converter {}: realization residual {residual:.3e} exceeds 1e-9",
                k + 1
            )));
        }
        out.controllers.push(InnerControllerOut {
            index: k + 1,
            zeta1: spec.zeta1,
            design_inductance: design_l[k],
            k_c,
            notch_gain: notch,
            realization_residual: residual,
        });
    }
    write_json(cli, "inner_design.json", &out)
}

#[derive(Serialize)]
struct AllocationOut {
    aggregate_link_gain: f64,
    equivalent_inductance: f64,
    link_capacitance: f64,
    gamma: Vec<f64>,
    zeta1: Vec<f64>,
    predicted_dc_shares: Vec<f64>,
    predicted_ripple_shares: Vec<f64>,
}

fn cmd_allocate(cli: &Cli, sc: &Scenario) -> Result<(), CliError> {
    let sys = sc.system()?;
    let (dc, ripple) = predicted_shares(&sys)?;
    println!("allocation over {}:", count(sys.len(), "converter"));
    println!("  aggregate link gain: {}", eng(sys.nominal.d_prime));
    println!("  equivalent inductance: {} H", eng(sys.nominal.l));
    println!("  link capacitance: {} F", eng(sys.nominal.c));
    for k in 0..sys.len() {
        println!(
            "  converter {}: gamma = {}, zeta1 = {}",
            k + 1,
            eng(sys.gamma[k]),
            eng(sys.inner_specs[k].zeta1)
        );
    }
    println!("  predicted DC shares: {}", eng_slice(&dc));
    println!("  predicted ripple shares: {}", eng_slice(&ripple));
    write_json(
        cli,
        "allocation.json",
        &AllocationOut {
            aggregate_link_gain: sys.nominal.d_prime,
            equivalent_inductance: sys.nominal.l,
            link_capacitance: sys.nominal.c,
            gamma: sys.gamma.clone(),
            zeta1: sys.inner_specs.iter().map(|s| s.zeta1).collect(),
            predicted_dc_shares: dc,
            predicted_ripple_shares: ripple,
        },
    )
}

#[derive(Serialize)]
struct VerifyOut {
    max_deviation: f64,
    per_map: Vec<(String, f64)>,
    control_effort_deviation: f64,
    multi_stable: bool,
    multi_margin: f64,
    single_stable: bool,
    single_margin: f64,
    tolerance: f64,
}

fn cmd_verify(cli: &Cli, sc: &Scenario, grid: &FrequencyGrid) -> Result<(), CliError> {
    let sys = sc.system()?;
    let (k_v, _) = sc.outer_controller(&sys, grid, cli.seed)?;
    aggregate_inner(&sys)?;
    let report = verify_equivalence(&sys, &k_v, sys.nominal.c, grid)?;
    let tol = sc
        .outputs
        .checks
        .as_ref()
        .and_then(|c| c.equivalence_tol)
        .unwrap_or(1e-9);

    println!("aggregate coefficient identity: ok");
    println!("frequency-response deviations (paralleled vs nominal):");
    for (name, dev) in &report.per_map {
        println!("  {name}: {dev:.3e}");
    }
    println!(
        "  summed control effort: {:.3e}",
        report.control_effort_deviation
    );
    println!(
        "loop stability: paralleled margin {}, nominal margin {}",
        eng(report.multi_stability.margin),
        eng(report.single_stability.margin)
    );
    write_json(
        cli,
        "verify.json",
        &VerifyOut {
            max_deviation: report.max_deviation,
            per_map: report
                .per_map
                .iter()
                .map(|(n, d)| (n.to_string(), *d))
                .collect(),
            control_effort_deviation: report.control_effort_deviation,
            multi_stable: report.multi_stability.stable,
            multi_margin: report.multi_stability.margin,
            single_stable: report.single_stability.stable,
            single_margin: report.single_stability.margin,
            tolerance: tol,
        },
    )?;

    if !report.multi_stability.stable {
        return Err(CliError::Check("paralleled closed loop is unstable".into()));
    }
    if !report.single_stability.stable {
        return Err(CliError::Check("nominal closed loop is unstable".into()));
    }
    if !(report.max_deviation <= tol) {
        return Err(CliError::Check(format!(
            "frequency-response deviation {:.3e} exceeds tolerance {tol:.1e}",
            report.max_deviation
        )));
    }
    println!("equivalence holds within {tol:.1e}");
    Ok(())
}

#[derive(Serialize)]
struct SimulateOut {
    metrics: SteadyStateMetrics,
    requested_dc_shares: Vec<f64>,
    requested_ripple_shares: Vec<f64>,
    saturation_steps: usize,
}

fn cmd_simulate(cli: &Cli, sc: &Scenario, grid: &FrequencyGrid) -> Result<(), CliError> {
    let sys = sc.system()?;
    let (k_v, _) = sc.outer_controller(&sys, grid, cli.seed)?;
    let load = sc
        .load
        .as_ref()
        .ok_or_else(|| CliError::Input("scenario is missing the `load` section".into()))?;
    let cfg = sc
        .sim
        .as_ref()
        .ok_or_else(|| CliError::Input("scenario is missing the `sim` section".into()))?;
    let trace = simulate_closed_loop(&sys, &k_v, load, cfg)?;

    let ripple_freq = load.ripple.map(|r| r.frequency).unwrap_or(120.0);
    let window = sc.outputs.metrics_window.unwrap_or(0.5);
    let discard = sc.outputs.metrics_discard.unwrap_or(0.5);
    let metrics = steady_state_metrics(&trace, ripple_freq, window, discard)?;

    let sharing = sc.sharing_spec()?;
    println!(
        "simulated {} s ({} steps, {})",
        eng(*trace.t.last().expect("non-empty trace")),
        trace.len() - 1,
        count(sys.len(), "converter")
    );
    println!(
        "  V_dc = {} V (error {} V), 120-class ripple amplitude {} V",
        eng(metrics.v_dc),
        eng(metrics.regulation_error),
        eng(metrics.v_ripple)
    );
    println!(
        "  DC shares: {} (requested {})",
        eng_slice(&metrics.shares_dc),
        eng_slice(sharing.alpha())
    );
    println!(
        "  ripple shares: {} (requested {})",
        eng_slice(&metrics.shares_ripple),
        eng_slice(sharing.beta())
    );
    println!(
        "  capacitor: mean current {} A, ripple {} A; saturated steps: {}",
        eng(metrics.i_c_dc),
        eng(metrics.i_c_ripple),
        trace.saturation_steps
    );

    if let Some(path) = out_file(cli, sc.outputs.trace_csv.as_deref().unwrap_or("trace.csv"))? {
        let file = fs::File::create(&path)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        let mut writer = std::io::BufWriter::new(file);
        trace
            .write_csv(&mut writer)
            .and_then(|()| writer.flush())
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    write_json(
        cli,
        sc.outputs
            .metrics_json
            .as_deref()
            .unwrap_or("metrics.json"),
        &SimulateOut {
            requested_dc_shares: sharing.alpha().to_vec(),
            requested_ripple_shares: sharing.beta().to_vec(),
            saturation_steps: trace.saturation_steps,
            metrics: metrics.clone(),
        },
    )?;

    let mut violations = Vec::new();
    if let Some(checks) = &sc.outputs.checks {
        if let Some(max_err) = checks.max_regulation_error {
            if metrics.regulation_error.abs() > max_err {
                violations.push(format!(
                    "regulation error {} V exceeds {max_err} V",
                    metrics.regulation_error
                ));
            }
        }
        if let Some(tol) = checks.dc_share_rel_tol {
            for k in 0..sys.len() {
                let rel = (metrics.shares_dc[k] - sharing.alpha()[k]).abs() / sharing.alpha()[k];
                if rel > tol {
                    violations.push(format!(
                        "DC share of converter {} off by {rel:.3e} (> {tol})",
                        k + 1
                    ));
                }
            }
        }
        if let Some(tol) = checks.ripple_share_rel_tol {
            for k in 0..sys.len() {
                let rel =
                    (metrics.shares_ripple[k] - sharing.beta()[k]).abs() / sharing.beta()[k];
                if rel > tol {
                    violations.push(format!(
                        "ripple share of converter {} off by {rel:.3e} (> {tol})",
                        k + 1
                    ));
                }
            }
        }
    }
    if !violations.is_empty() {
        return Err(CliError::Check(violations.join("; ")));
    }
    Ok(())
}

fn cmd_bode(cli: &Cli, sc: &Scenario, grid: &FrequencyGrid) -> Result<(), CliError> {
    let sys = sc.system()?;
    let (k_v, _) = sc.outer_controller(&sys, grid, cli.seed)?;
    let plant = sc.nominal_plant(&sys)?;
    let maps = plant.closed_loop_maps(&k_v)?;

    let tagged: [(&str, &TransferFunction); 4] = [
        ("S", &maps.s),
        ("T", &maps.t),
        ("KvS", &maps.kv_s),
        ("GvS", &maps.gv_s),
    ];
    println!(
        "closed-loop responses on [{}, {}] rad/s ({} points):",
        eng(cli.grid_min),
        eng(cli.grid_max),
        cli.grid_points
    );
    for (name, tf) in &tagged {
        match tf.hinf_norm(grid) {
            Ok(peak) => println!("  peak |{name}| = {} ({:.2} dB)", eng(peak), 20.0 * peak.log10()),
            Err(e) => println!("  peak |{name}|: {e}"),
        }
    }
    println!(
        "  loop stability margin: {}",
        eng(maps.loop_stability.margin)
    );

    if let Some(path) = out_file(cli, "bode.csv")? {
        let file = fs::File::create(&path)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        let mut w = std::io::BufWriter::new(file);
        let emit = |w: &mut dyn Write| -> std::io::Result<()> {
            writeln!(w, "map,omega,magnitude_db,phase_deg")?;
            for (name, tf) in &tagged {
                for point in tf.bode(grid) {
                    let mag = point
                        .magnitude_db
                        .map(|v| v.to_string())
                        .unwrap_or_default();
                    let ph = point.phase_deg.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(w, "{name},{},{mag},{ph}", point.omega)?;
                }
            }
            Ok(())
        };
        emit(&mut w)
            .and_then(|()| w.flush())
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct CostOut {
    cost: f64,
    grid_min: f64,
    grid_max: f64,
    grid_points: usize,
}

fn cmd_eval_cost(cli: &Cli, sc: &Scenario, grid: &FrequencyGrid) -> Result<(), CliError> {
    let sys = sc.system()?;
    let (k_v, _) = sc.outer_controller(&sys, grid, cli.seed)?;
    let plant = sc.nominal_plant(&sys)?;
    let weights = sc.weight_spec()?;
    let cost = stacked_cost(&k_v, &plant, &weights, grid);
    if !cost.is_finite() {
        return Err(CliError::Check(
            "stacked cost is unbounded: the closed loop is unstable or ill-formed".into(),
        ));
    }
    println!("stacked mixed-sensitivity cost: {cost:.12}");
    write_json(
        cli,
        "cost.json",
        &CostOut {
            cost,
            grid_min: cli.grid_min,
            grid_max: cli.grid_max,
            grid_points: cli.grid_points,
        },
    )
}

#[derive(Serialize)]
struct SynthesisOut {
    controller: TransferFunction,
    params: Vec<f64>,
    cost: f64,
    evaluations: usize,
    seed: u64,
}

fn cmd_synthesize(cli: &Cli, sc: &Scenario, grid: &FrequencyGrid) -> Result<(), CliError> {
    let sys = sc.system()?;
    let request = sc.synthesis_request()?;
    let seed = cli.seed.unwrap_or(request.seed);
    let (_, result) = sc.outer_controller(&sys, grid, cli.seed)?;
    let result: SynthesisResult = result.expect("synthesis request resolved above");
    println!(
        "synthesized controller: cost {:.9} after {} evaluations (seed {seed})",
        result.cost, result.evaluations
    );
    println!("  parameters: {}", eng_slice(&result.params));
    println!(
        "  numerator: {:?}\n  denominator: {:?}",
        result.controller.num().coeffs(),
        result.controller.den().coeffs()
    );
    write_json(
        cli,
        "synthesized.json",
        &SynthesisOut {
            controller: result.controller.clone(),
            params: result.params.clone(),
            cost: result.cost,
            evaluations: result.evaluations,
            seed,
        },
    )
}
