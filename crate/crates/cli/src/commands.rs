use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use lognorm_grid::assembly::{assemble_closed_loop, Role};
use lognorm_grid::lognorm::{self, LognormError, StabilityReport};
use lognorm_grid::scenario::{ResolvedScenario, Scenario, ScenarioError};
use lognorm_grid::simulator::{self, SimError};
use lognorm_grid::stabilizer::{self, SimulatedMonitor, StabilizerOutcome};
use lognorm_grid::topology::{MicrogridGraph, ParamRanges, TopologyError};

use crate::output::Staged;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("grid_topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("lognorm: {0}")]
    Lognorm(#[from] LognormError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("stabilizer: {0}")]
    Stabilizer(String),
    #[error("cli: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

pub struct GenerateArgs {
    pub nodes: usize,
    pub seed: u64,
    pub ranges: ParamRanges,
}

pub fn generate(args: &GenerateArgs, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if args.nodes == 0 {
        return Err(CliError::Usage("--nodes must be at least 1".into()));
    }
    let graph = MicrogridGraph::generate(args.nodes, &args.ranges, args.seed)?;
    let mut staged = Staged::new();
    staged.add("graph.json", json_bytes(&graph.to_document()));
    Ok(staged.commit(out)?)
}

pub fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ResolvedScenario, CliError> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(scenario.resolve(base)?)
}

#[derive(Debug, Serialize)]
pub struct AnalysisDocument {
    pub lines: usize,
    pub nodes: usize,
    pub roles: Vec<Role>,
    #[serde(flatten)]
    pub report: StabilityReport,
    pub stiffness_ratio: f64,
    pub transient_peak: f64,
    pub transient_peak_time: f64,
    /// Peak above 1 while every eigenvalue has negative real part.
    pub transiently_amplifying: bool,
}

fn analysis(resolved: &ResolvedScenario) -> Result<AnalysisDocument, CliError> {
    let sys = &resolved.system;
    let report = lognorm::analyze(&sys.b, &resolved.envelope_grid)?;
    let (peak, t_peak) = report
        .transient_peak()
        .map_or((f64::NAN, f64::NAN), |s| (s.exp_norm, s.t));
    Ok(AnalysisDocument {
        lines: sys.lines,
        nodes: sys.nodes,
        roles: sys.assignment.roles().to_vec(),
        stiffness_ratio: simulator::stiffness_ratio(&sys.b)?,
        transient_peak: peak,
        transient_peak_time: t_peak,
        transiently_amplifying: peak > 1.0 && report.alpha < 0.0,
        report,
    })
}

/// Writes `report.json`, `envelope.csv` and `system.json`.
pub fn analyze(
    resolved: &ResolvedScenario,
    out: &Path,
) -> Result<(AnalysisDocument, Vec<PathBuf>), CliError> {
    let doc = analysis(resolved)?;
    let mut staged = Staged::new();
    staged.add("report.json", json_bytes(&doc));
    staged.add_with("envelope.csv", |buf| doc.report.write_envelope_csv(buf))?;
    staged.add("system.json", json_bytes(&resolved.system.to_document()));
    let written = staged.commit(out)?;
    Ok((doc, written))
}

#[derive(Debug, Serialize)]
pub struct SimulationStatus {
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub samples: usize,
    pub step: f64,
    pub t_end: f64,
    pub method: String,
    pub system_hash: String,
    pub final_voltages: Vec<f64>,
}

pub fn simulate(
    resolved: &ResolvedScenario,
    out: &Path,
) -> Result<(SimulationStatus, Vec<PathBuf>), CliError> {
    let sys = &resolved.system;
    let z0 = sys.from_original(&resolved.initial_state);
    let traj = simulator::integrate_with_load_steps(
        &resolved.graph,
        sys,
        &z0,
        resolved.t_end,
        resolved.step,
        &resolved.events,
    )?;
    let status = SimulationStatus {
        diverged: traj.diverged(),
        divergence_time: traj.divergence,
        samples: traj.len(),
        step: traj.step,
        t_end: *traj.times.last().expect("initial sample"),
        method: traj.method.clone(),
        system_hash: format!("{:016x}", traj.system_hash),
        final_voltages: sys.voltages_original(traj.final_state()),
    };
    let mut staged = Staged::new();
    staged.add_with("trajectory.csv", |buf| traj.write_csv(sys, buf))?;
    staged.add("status.json", json_bytes(&status));
    let written = staged.commit(out)?;
    Ok((status, written))
}

#[derive(Debug, Serialize)]
struct FinalAssignment<'a> {
    roles: &'a [Role],
    producers: Vec<usize>,
    final_mu_nonnegative: bool,
    iterations: usize,
}

fn stage_outcome(staged: &mut Staged, outcome: &StabilizerOutcome) -> Result<(), CliError> {
    staged.add_with("decisions.csv", |buf| outcome.write_decisions_csv(buf))?;
    staged.add_with("mu_history.csv", |buf| outcome.write_mu_history_csv(buf))?;
    staged.add(
        "final_assignment.json",
        json_bytes(&FinalAssignment {
            roles: outcome.final_assignment.roles(),
            producers: outcome
                .final_assignment
                .producers()
                .iter()
                .map(|p| p.0)
                .collect(),
            final_mu_nonnegative: outcome.final_mu_nonnegative,
            iterations: outcome.iterations,
        }),
    );
    Ok(())
}

pub fn stabilize(
    resolved: &ResolvedScenario,
    out: &Path,
) -> Result<(StabilizerOutcome, Vec<PathBuf>), CliError> {
    let config = resolved
        .stabilizer
        .clone()
        .ok_or_else(|| CliError::Usage("scenario has no \"stabilizer\" section".into()))?;
    let mut monitor = SimulatedMonitor::new(
        resolved.initial_state.clone(),
        resolved.step,
        resolved.events.clone(),
    );
    let outcome = match stabilizer::run(
        &resolved.graph,
        &resolved.assignment,
        &resolved.droop,
        &config,
        &mut monitor,
    ) {
        Ok(o) => o,
        Err(failure) => {
            // flush what was decided before the failure
            let mut staged = Staged::new();
            stage_outcome(&mut staged, &failure.partial)?;
            staged.commit(out)?;
            return Err(CliError::Stabilizer(failure.to_string()));
        }
    };
    let final_sys =
        assemble_closed_loop(&resolved.graph, &outcome.final_assignment, &resolved.droop)
            .map_err(ScenarioError::from)?;
    let report = lognorm::analyze(&final_sys.b, &resolved.envelope_grid)?;
    let mut staged = Staged::new();
    stage_outcome(&mut staged, &outcome)?;
    staged.add("final_report.json", json_bytes(&report));
    let written = staged.commit(out)?;
    Ok((outcome, written))
}
