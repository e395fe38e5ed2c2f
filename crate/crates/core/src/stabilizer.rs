//! Iterative producer/consumer role switching driven by the logarithmic
//! norm.
//!
//! Each iteration observes bus voltages, proposes role flips for nodes whose
//! deviation from the reference crosses the threshold, and accepts the first
//! flip (in ascending node order) that strictly lowers `μ[B]`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{self, AssemblyError, DroopConfig, Role, RoleAssignment};
use crate::lognorm::{self, fmt_f64, LognormError};
use crate::simulator::{self, LoadStep, SimError};
use crate::topology::{MicrogridGraph, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizerConfig {
    /// Voltage deviation that triggers a proposal, in volts.
    pub threshold: f64,
    #[serde(default)]
    pub min_producers: usize,
    pub max_iterations: usize,
    /// Simulated time between observations, in seconds.
    pub evaluation_time: f64,
}

impl StabilizerConfig {
    pub fn check(&self) -> Result<(), StabilizerError> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(StabilizerError::InvalidConfig(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(StabilizerError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.evaluation_time.is_finite() && self.evaluation_time > 0.0) {
            return Err(StabilizerError::InvalidConfig(format!(
                "evaluation_time {} must be positive",
                self.evaluation_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilizerError {
    #[error("invalid stabilizer config: {0}")]
    InvalidConfig(String),
    #[error("voltage snapshot has {got} entries, graph has {expected} nodes")]
    SnapshotSize { expected: usize, got: usize },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Lognorm(#[from] LognormError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchDecision {
    pub iteration: usize,
    pub node: usize,
    pub from: Role,
    pub to: Role,
    pub mu_before: f64,
    /// NaN when the switch was not evaluated.
    pub mu_after: f64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Nodes whose voltage deviates by more than the threshold, paired with the
/// role they should take: above `V_s + t` become producers, below `V_s - t`
/// become consumers. Nodes already in that role are dropped.
pub fn detect_candidates(
    voltages: &[f64],
    droop: &DroopConfig,
    assignment: &RoleAssignment,
    config: &StabilizerConfig,
) -> Vec<(NodeId, Role)> {
    voltages
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let dev = v - droop.reference(i);
            let proposed = if dev > config.threshold {
                Role::Producer
            } else if dev < -config.threshold {
                Role::Consumer
            } else {
                return None;
            };
            (assignment.roles()[i] != proposed).then_some((NodeId(i), proposed))
        })
        .collect()
}

/// `μ[B]` of the closed loop under `assignment`.
pub fn closed_loop_mu(
    graph: &MicrogridGraph,
    assignment: &RoleAssignment,
    droop: &DroopConfig,
) -> Result<f64, StabilizerError> {
    let sys = assembly::assemble_closed_loop(graph, assignment, droop)?;
    Ok(lognorm::log_norm(&sys.b)?)
}

/// Scores one proposed switch without touching `assignment`.
///
/// Errors while assembling or analysing the switched system are recorded in
/// the decision note and reject the switch; only a failure on the current
/// assignment is returned as an error.
pub fn evaluate_switch(
    graph: &MicrogridGraph,
    assignment: &RoleAssignment,
    droop: &DroopConfig,
    candidate: (NodeId, Role),
    config: &StabilizerConfig,
    iteration: usize,
) -> Result<SwitchDecision, StabilizerError> {
    let (node, to) = candidate;
    let from = assignment.role(node);
    let mu_before = closed_loop_mu(graph, assignment, droop)?;
    let mut decision = SwitchDecision {
        iteration,
        node: node.0,
        from,
        to,
        mu_before,
        mu_after: f64::NAN,
        accepted: false,
        note: None,
    };
    if from == to {
        decision.mu_after = mu_before;
        decision.note = Some("node already has the proposed role".into());
        return Ok(decision);
    }
    let producers_after = match to {
        Role::Producer => assignment.producer_count() + 1,
        Role::Consumer => assignment.producer_count() - 1,
    };
    if producers_after < config.min_producers {
        decision.note = Some(format!(
            "PolicyViolation: {producers_after} producers would remain, minimum is {}",
            config.min_producers
        ));
        return Ok(decision);
    }
    let switched = assignment.with_role(node, to);
    match closed_loop_mu(graph, &switched, droop) {
        Ok(mu_after) => {
            decision.mu_after = mu_after;
            decision.accepted = mu_after < mu_before;
        }
        Err(e) => decision.note = Some(format!("evaluation failed: {e}")),
    }
    Ok(decision)
}

/// Source of per-iteration bus voltages (original node order).
pub trait VoltageMonitor {
    fn observe(
        &mut self,
        graph: &MicrogridGraph,
        assignment: &RoleAssignment,
        droop: &DroopConfig,
        window: f64,
    ) -> Result<Vec<f64>, StabilizerError>;
}

/// Replays fixed snapshots in order, repeating the last one.
#[derive(Debug, Clone)]
pub struct InjectedVoltages {
    snapshots: Vec<Vec<f64>>,
    next: usize,
}

impl InjectedVoltages {
    pub fn new(snapshots: Vec<Vec<f64>>) -> Self {
        assert!(!snapshots.is_empty(), "need at least one snapshot");
        Self { snapshots, next: 0 }
    }
}

impl VoltageMonitor for InjectedVoltages {
    fn observe(
        &mut self,
        _graph: &MicrogridGraph,
        _assignment: &RoleAssignment,
        _droop: &DroopConfig,
        _window: f64,
    ) -> Result<Vec<f64>, StabilizerError> {
        let i = self.next.min(self.snapshots.len() - 1);
        self.next += 1;
        Ok(self.snapshots[i].clone())
    }
}

/// Integrates the live closed loop between observations.
///
/// The physical state `[i_p; v_g]` (original order) carries over across
/// role switches. Load steps are applied at the first grid time at or after
/// their event time and stay in force afterwards, whatever the node's role.
#[derive(Debug, Clone)]
pub struct SimulatedMonitor {
    state: Vec<f64>,
    time: f64,
    step: f64,
    loads: Option<Vec<f64>>,
    pending: Vec<LoadStep>,
}

impl SimulatedMonitor {
    /// `state` is `[i_p; v_g]` in original node order.
    pub fn new(state: Vec<f64>, step: f64, load_steps: Vec<LoadStep>) -> Self {
        let mut pending = load_steps;
        pending.sort_by(|a, b| a.time.total_cmp(&b.time));
        pending.reverse();
        Self {
            state,
            time: 0.0,
            step,
            loads: None,
            pending,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }
}

impl VoltageMonitor for SimulatedMonitor {
    fn observe(
        &mut self,
        graph: &MicrogridGraph,
        assignment: &RoleAssignment,
        droop: &DroopConfig,
        window: f64,
    ) -> Result<Vec<f64>, StabilizerError> {
        let h = self.step;
        let mut remaining = simulator::step_count(window, h)?;
        let loads = self.loads.get_or_insert_with(|| droop.loads.clone());
        while remaining > 0 {
            while let Some(ev) = self.pending.last() {
                if ev.time <= self.time + 1e-12 * h {
                    loads[ev.node] = ev.load;
                    self.pending.pop();
                } else {
                    break;
                }
            }
            let seg = match self.pending.last() {
                Some(ev) => {
                    (((ev.time - self.time) / h - 1e-12).ceil() as usize).clamp(1, remaining)
                }
                None => remaining,
            };
            let live = DroopConfig {
                loads: loads.clone(),
                ..droop.clone()
            };
            let sys = assembly::assemble_closed_loop(graph, assignment, &live)?;
            let traj =
                simulator::integrate(&sys, &sys.from_original(&self.state), seg as f64 * h, h)?;
            if let Some(t) = traj.divergence {
                return Err(SimError::InvalidArgument(format!(
                    "monitor trajectory diverged at t = {}",
                    self.time + t
                ))
                .into());
            }
            self.state = sys.to_original(traj.final_state());
            self.time += seg as f64 * h;
            remaining -= seg;
        }
        Ok(self.state[graph.edge_count()..].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuHistoryEntry {
    /// 0 for the initial assignment.
    pub iteration: usize,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizerOutcome {
    pub decisions: Vec<SwitchDecision>,
    pub final_assignment: RoleAssignment,
    /// Initial `μ` followed by `μ` after every accepted switch.
    pub mu_history: Vec<MuHistoryEntry>,
    pub iterations: usize,
    /// Set when the final `μ` is still non-negative.
    pub final_mu_nonnegative: bool,
}

impl StabilizerOutcome {
    pub fn accepted(&self) -> impl Iterator<Item = &SwitchDecision> {
        self.decisions.iter().filter(|d| d.accepted)
    }

    pub fn final_mu(&self) -> f64 {
        self.mu_history.last().map_or(f64::NAN, |e| e.mu)
    }

    /// `iteration,node,from,to,mu_before,mu_after,accepted`
    pub fn write_decisions_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,node,from,to,mu_before,mu_after,accepted")?;
        for d in &self.decisions {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                d.iteration,
                d.node,
                d.from,
                d.to,
                fmt_f64(d.mu_before),
                fmt_f64(d.mu_after),
                d.accepted
            )?;
        }
        Ok(())
    }

    /// `iteration,mu`
    pub fn write_mu_history_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,mu")?;
        for e in &self.mu_history {
            writeln!(out, "{},{}", e.iteration, fmt_f64(e.mu))?;
        }
        Ok(())
    }
}

/// A run that stopped on an error, with everything decided up to that point.
#[derive(Debug, Clone, Error)]
#[error("stabilizer stopped after {} decisions: {error}", partial.decisions.len())]
pub struct StabilizerFailure {
    pub partial: StabilizerOutcome,
    #[source]
    pub error: StabilizerError,
}

/// Runs the observe / propose / evaluate / switch loop until no proposal is
/// accepted or `max_iterations` is reached.
#[allow(clippy::result_large_err)]
pub fn run(
    graph: &MicrogridGraph,
    initial: &RoleAssignment,
    droop: &DroopConfig,
    config: &StabilizerConfig,
    monitor: &mut dyn VoltageMonitor,
) -> Result<StabilizerOutcome, StabilizerFailure> {
    let mut outcome = StabilizerOutcome {
        decisions: Vec::new(),
        final_assignment: initial.clone(),
        mu_history: Vec::new(),
        iterations: 0,
        final_mu_nonnegative: false,
    };
    let fail = |outcome: StabilizerOutcome, error: StabilizerError| StabilizerFailure {
        partial: outcome,
        error,
    };
    if let Err(e) = config.check() {
        return Err(fail(outcome, e));
    }
    let mu0 = match closed_loop_mu(graph, initial, droop) {
        Ok(mu) => mu,
        Err(e) => return Err(fail(outcome, e)),
    };
    outcome.mu_history.push(MuHistoryEntry {
        iteration: 0,
        mu: mu0,
    });

    let n = graph.node_count();
    for iteration in 1..=config.max_iterations {
        outcome.iterations = iteration;
        let current = outcome.final_assignment.clone();
        let voltages = match monitor.observe(graph, &current, droop, config.evaluation_time) {
            Ok(v) if v.len() == n => v,
            Ok(v) => {
                let e = StabilizerError::SnapshotSize {
                    expected: n,
                    got: v.len(),
                };
                return Err(fail(outcome, e));
            }
            Err(e) => return Err(fail(outcome, e)),
        };
        let candidates = detect_candidates(&voltages, droop, &current, config);
        let mut switched = false;
        for candidate in candidates {
            let decision =
                match evaluate_switch(graph, &current, droop, candidate, config, iteration) {
                    Ok(d) => d,
                    Err(e) => return Err(fail(outcome, e)),
                };
            let accepted = decision.accepted;
            if accepted {
                outcome.final_assignment = current.with_role(candidate.0, candidate.1);
                outcome.mu_history.push(MuHistoryEntry {
                    iteration,
                    mu: decision.mu_after,
                });
            }
            outcome.decisions.push(decision);
            if accepted {
                switched = true;
                break;
            }
        }
        if !switched {
            break;
        }
    }
    outcome.final_mu_nonnegative = outcome.final_mu() >= 0.0;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{LineParams, NodeParams};

    fn config() -> StabilizerConfig {
        StabilizerConfig {
            threshold: 1.0,
            min_producers: 1,
            max_iterations: 10,
            evaluation_time: 0.01,
        }
    }

    fn chain3() -> MicrogridGraph {
        let mut g = MicrogridGraph::new();
        let line = LineParams {
            resistance: 0.2,
            inductance: 5e-5,
        };
        g.add_seed_node(NodeParams { capacitance: 5e-4 }).unwrap();
        g.add_node(NodeParams { capacitance: 4e-4 }, NodeId(0), line)
            .unwrap();
        g.add_node(NodeParams { capacitance: 6e-4 }, NodeId(1), line)
            .unwrap();
        g
    }

    #[test]
    fn detection_rules() {
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer, Role::Consumer]);
        assert!(detect_candidates(&[48.0; 3], &droop, &roles, &config()).is_empty());
        assert_eq!(
            detect_candidates(&[48.0, 49.5, 48.0], &droop, &roles, &config()),
            vec![(NodeId(1), Role::Producer)]
        );
        // producer above the band already has the proposed role
        assert!(detect_candidates(&[50.0, 48.0, 48.0], &droop, &roles, &config()).is_empty());
        assert_eq!(
            detect_candidates(&[46.5, 46.5, 49.1], &droop, &roles, &config()),
            vec![(NodeId(0), Role::Consumer), (NodeId(2), Role::Producer)]
        );
    }

    #[test]
    fn same_assignment_is_not_an_improvement() {
        let g = chain3();
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer, Role::Consumer]);
        let d = evaluate_switch(
            &g,
            &roles,
            &droop,
            (NodeId(0), Role::Producer),
            &config(),
            1,
        )
        .unwrap();
        assert_eq!(d.mu_after, d.mu_before);
        assert!(!d.accepted);
    }

    #[test]
    fn last_producer_is_protected() {
        let g = chain3();
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer, Role::Consumer]);
        let d = evaluate_switch(
            &g,
            &roles,
            &droop,
            (NodeId(0), Role::Consumer),
            &config(),
            1,
        )
        .unwrap();
        assert!(!d.accepted);
        assert!(d.note.as_deref().unwrap().starts_with("PolicyViolation"));
    }

    #[test]
    fn evaluation_does_not_mutate() {
        let g = chain3();
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer, Role::Consumer]);
        let before = roles.clone();
        let d = evaluate_switch(
            &g,
            &roles,
            &droop,
            (NodeId(2), Role::Producer),
            &config(),
            1,
        )
        .unwrap();
        assert_eq!(roles, before);
        assert!(d.accepted, "{d:?}");
        assert!(d.mu_after < d.mu_before);
    }

    #[test]
    fn quiet_grid_makes_no_decisions() {
        let g = chain3();
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer, Role::Consumer]);
        let mut monitor = InjectedVoltages::new(vec![vec![48.0; 3]]);
        let out = run(&g, &roles, &droop, &config(), &mut monitor).unwrap();
        assert!(out.decisions.is_empty());
        assert_eq!(out.final_assignment, roles);
        assert_eq!(out.mu_history.len(), 1);
    }

    #[test]
    fn injected_surplus_promotes_nodes() {
        let g = chain3();
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer, Role::Consumer]);
        let mut monitor = InjectedVoltages::new(vec![vec![48.0, 49.5, 49.5]]);
        let out = run(&g, &roles, &droop, &config(), &mut monitor).unwrap();
        assert_eq!(out.final_assignment.producer_count(), 3);
        assert_eq!(out.accepted().count(), 2);
        for w in out.mu_history.windows(2) {
            assert!(w[1].mu < w[0].mu);
        }
    }

    #[test]
    fn bad_config_is_reported_with_partial_outcome() {
        let g = chain3();
        let droop = DroopConfig::uniform(3, 48.0, -5.0, 10.0);
        let roles = RoleAssignment::all(3, Role::Producer);
        let mut cfg = config();
        cfg.threshold = 0.0;
        let mut monitor = InjectedVoltages::new(vec![vec![48.0; 3]]);
        let err = run(&g, &roles, &droop, &cfg, &mut monitor).unwrap_err();
        assert!(matches!(err.error, StabilizerError::InvalidConfig(_)));
        assert!(err.partial.decisions.is_empty());
    }
}
