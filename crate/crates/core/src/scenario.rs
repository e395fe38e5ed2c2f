//! Scenario documents: everything a CLI run needs, in one JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{self, AssemblyError, ClosedLoopSystem, DroopConfig, RoleAssignment};
use crate::lognorm::{self, uniform_grid};
use crate::simulator::{self, LoadStep, SimError};
use crate::stabilizer::{StabilizerConfig, StabilizerError};
use crate::topology::{GraphDocument, MicrogridGraph, NodeId, ParamRanges, TopologyError};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("grid_topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("system_assembly: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("stabilizer: {0}")]
    Stabilizer(#[from] StabilizerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Inline(GraphDocument),
    /// Path relative to the scenario file.
    File(PathBuf),
    /// Preferential-attachment growth seeded by the scenario seed.
    Generate {
        nodes: usize,
        #[serde(default)]
        ranges: Option<ParamRanges>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopSpec {
    pub v_ref: f64,
    /// Gain applied to every node unless `gains` is given.
    pub gain: f64,
    #[serde(default)]
    pub gains: Option<Vec<f64>>,
    /// Load power applied to every node unless `loads` is given.
    #[serde(default)]
    pub load: f64,
    #[serde(default)]
    pub loads: Option<Vec<f64>>,
    #[serde(default)]
    pub v_ref_per_node: Option<Vec<f64>>,
    #[serde(default)]
    pub allow_positive_gain: bool,
}

impl DroopSpec {
    fn build(&self, n: usize) -> Result<DroopConfig, ScenarioError> {
        let per_node = |name: &str, v: &Option<Vec<f64>>, default: f64| match v {
            Some(v) if v.len() != n => Err(ScenarioError::Invalid(format!(
                "droop.{name} has {} entries, graph has {n} nodes",
                v.len()
            ))),
            Some(v) => Ok(v.clone()),
            None => Ok(vec![default; n]),
        };
        Ok(DroopConfig {
            v_ref: self.v_ref,
            v_ref_per_node: self.v_ref_per_node.clone(),
            gains: per_node("gains", &self.gains, self.gain)?,
            loads: per_node("loads", &self.loads, self.load)?,
            allow_positive_gain: self.allow_positive_gain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    /// Defaults to `0.1 / ‖B‖₂`.
    #[serde(default)]
    pub step: Option<f64>,
    /// `[i_p; v_g]` in original node order. Defaults to zero line current
    /// and every bus at its reference voltage.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub t_end: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub graph: GraphSource,
    pub droop: DroopSpec,
    /// Producer node indices; all other nodes are consumers.
    pub producers: Vec<usize>,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub stabilizer: Option<StabilizerConfig>,
    #[serde(default)]
    pub events: Vec<LoadStep>,
    #[serde(default)]
    pub envelope: Option<EnvelopeSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// A scenario with its graph loaded and every cross-reference checked.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub graph: MicrogridGraph,
    pub assignment: RoleAssignment,
    pub droop: DroopConfig,
    pub system: ClosedLoopSystem,
    pub step: f64,
    pub t_end: f64,
    /// `[i_p; v_g]` in original node order.
    pub initial_state: Vec<f64>,
    pub events: Vec<LoadStep>,
    pub stabilizer: Option<StabilizerConfig>,
    pub envelope_grid: Vec<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if s.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(s.version));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    fn load_graph(&self, base_dir: &Path) -> Result<MicrogridGraph, ScenarioError> {
        let graph = match &self.graph {
            GraphSource::Inline(doc) => MicrogridGraph::from_document(doc)?,
            GraphSource::File(p) => {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| ScenarioError::Io { path, source })?;
                MicrogridGraph::from_json(&text)?
            }
            GraphSource::Generate { nodes, ranges } => {
                MicrogridGraph::generate(*nodes, &ranges.unwrap_or_default(), self.seed)?
            }
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Loads the graph and checks every reference. `base_dir` anchors
    /// relative graph paths.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedScenario, ScenarioError> {
        let graph = self.load_graph(base_dir)?;
        let n = graph.node_count();
        let m = graph.edge_count();
        let producers: Vec<NodeId> = self.producers.iter().map(|&p| NodeId(p)).collect();
        let assignment = RoleAssignment::with_producers(n, &producers)?;
        let droop = self.droop.build(n)?;
        let system = assembly::assemble_closed_loop(&graph, &assignment, &droop)?;

        let sim = &self.simulation;
        let step = match sim.step {
            Some(h) => h,
            None => simulator::default_step(&system.b)?,
        };
        simulator::step_count(sim.t_end, step)?;
        let initial_state = match &sim.initial_state {
            Some(x) if x.len() != m + n => {
                return Err(ScenarioError::Invalid(format!(
                    "simulation.initial_state has {} entries, expected {}",
                    x.len(),
                    m + n
                )))
            }
            Some(x) if x.iter().any(|v| !v.is_finite()) => {
                return Err(ScenarioError::Invalid(
                    "simulation.initial_state is not finite".into(),
                ))
            }
            Some(x) => x.clone(),
            None => system.to_original(&system.default_initial_state()),
        };
        simulator::check_load_steps(&system, &self.events)?;
        if let Some(cfg) = &self.stabilizer {
            cfg.check()?;
        }
        let envelope_grid = match &self.envelope {
            Some(e) => {
                if !(e.t_end.is_finite() && e.t_end >= 0.0) || e.samples == 0 {
                    return Err(ScenarioError::Invalid(
                        "envelope needs a non-negative t_end and at least one sample".into(),
                    ));
                }
                uniform_grid(e.t_end, e.samples)
            }
            None => uniform_grid(sim.t_end, 101),
        };
        // reject matrices the analysis cannot handle before any output exists
        lognorm::log_norm(&system.b).map_err(SimError::from)?;
        Ok(ResolvedScenario {
            graph,
            assignment,
            droop,
            system,
            step,
            t_end: sim.t_end,
            initial_state,
            events: self.events.clone(),
            stabilizer: self.stabilizer.clone(),
            envelope_grid,
            seed: self.seed,
        })
    }
}
