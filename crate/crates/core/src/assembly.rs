//! State-space assembly for the open-loop network and for the droop /
//! constant-power-load closed loop.
//!
//! State ordering is `[i_p (m lines); v_g (n buses)]`. In the closed loop
//! the bus voltages are permuted so that producers come first (stable within
//! each class); line currents are never permuted.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::topology::{MicrogridGraph, NodeId, TopologyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Producer,
    Consumer,
}

impl Role {
    pub fn flipped(self) -> Role {
        match self {
            Role::Producer => Role::Consumer,
            Role::Consumer => Role::Producer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Producer => "producer",
            Role::Consumer => "consumer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("role assignment covers {got} nodes, graph has {expected}")]
    BadAssignment { expected: usize, got: usize },
    #[error("invalid droop configuration: {0}")]
    InvalidDroop(String),
    #[error("near-zero {what} on element {index} ({value:e} vs median {median:e})")]
    SingularScaling {
        what: &'static str,
        index: usize,
        value: f64,
        median: f64,
    },
    #[error("closed-loop matrix is singular (condition estimate {condition:e})")]
    SingularB { condition: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Producer/consumer role of every node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleAssignment {
    roles: Vec<Role>,
}

impl RoleAssignment {
    pub fn new(roles: Vec<Role>) -> Self {
        Self { roles }
    }

    pub fn all(n: usize, role: Role) -> Self {
        Self {
            roles: vec![role; n],
        }
    }

    /// Marks the listed nodes as producers and everything else as consumers.
    pub fn with_producers(n: usize, producers: &[NodeId]) -> Result<Self, AssemblyError> {
        let mut roles = vec![Role::Consumer; n];
        for p in producers {
            if p.0 >= n {
                return Err(AssemblyError::Topology(TopologyError::UnknownNode(*p)));
            }
            roles[p.0] = Role::Producer;
        }
        Ok(Self { roles })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, node: NodeId) -> Role {
        self.roles[node.0]
    }

    pub fn producer_count(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::Producer).count()
    }

    pub fn producers(&self) -> Vec<NodeId> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Producer)
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Copy with `node` set to `role`.
    pub fn with_role(&self, node: NodeId, role: Role) -> Self {
        let mut roles = self.roles.clone();
        roles[node.0] = role;
        Self { roles }
    }

    /// `order[k]` is the original index of the node at permuted position
    /// `k`: producers first, then consumers, each in ascending index order.
    pub fn order(&self) -> Vec<usize> {
        let producers = (0..self.roles.len()).filter(|&i| self.roles[i] == Role::Producer);
        let consumers = (0..self.roles.len()).filter(|&i| self.roles[i] == Role::Consumer);
        producers.chain(consumers).collect()
    }

    fn check_len(&self, n: usize) -> Result<(), AssemblyError> {
        if self.roles.len() != n {
            return Err(AssemblyError::BadAssignment {
                expected: n,
                got: self.roles.len(),
            });
        }
        Ok(())
    }
}

/// Permutation matrix `P` with `(P v)[k] = v[order[k]]`.
pub fn permutation_matrix(assignment: &RoleAssignment, n: usize) -> Result<Matrix, AssemblyError> {
    assignment.check_len(n)?;
    let mut p = Matrix::zeros(n, n);
    for (k, &i) in assignment.order().iter().enumerate() {
        p[(k, i)] = 1.0;
    }
    Ok(p)
}

/// Droop gains, reference voltage and constant-power loads.
///
/// Gains and loads are stored per node: a gain is only used while the node
/// is a producer and a load only while it is a consumer, so role switches
/// need no reconfiguration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroopConfig {
    /// Reference voltage `V_s` in volts.
    pub v_ref: f64,
    /// Optional per-node reference voltages overriding `v_ref`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref_per_node: Option<Vec<f64>>,
    /// Droop gain per node in A/V. Must be negative for producers.
    pub gains: Vec<f64>,
    /// Constant load power per node in W.
    pub loads: Vec<f64>,
    /// Accept non-negative producer gains (positive feedback).
    #[serde(default)]
    pub allow_positive_gain: bool,
}

impl DroopConfig {
    pub fn uniform(n: usize, v_ref: f64, gain: f64, load: f64) -> Self {
        Self {
            v_ref,
            v_ref_per_node: None,
            gains: vec![gain; n],
            loads: vec![load; n],
            allow_positive_gain: false,
        }
    }

    pub fn reference(&self, node: usize) -> f64 {
        self.v_ref_per_node.as_ref().map_or(self.v_ref, |v| v[node])
    }

    /// Checks the config against a graph of `n` nodes under `assignment`.
    pub fn check(&self, n: usize, assignment: &RoleAssignment) -> Result<(), AssemblyError> {
        let bad = |msg: String| Err(AssemblyError::InvalidDroop(msg));
        if !(self.v_ref.is_finite() && self.v_ref > 0.0) {
            return bad(format!("reference voltage {} must be positive", self.v_ref));
        }
        if self.gains.len() != n || self.loads.len() != n {
            return bad(format!(
                "expected {n} gains and loads, got {} and {}",
                self.gains.len(),
                self.loads.len()
            ));
        }
        if let Some(v) = &self.v_ref_per_node {
            if v.len() != n {
                return bad(format!("expected {n} per-node references, got {}", v.len()));
            }
            if let Some((i, x)) = v
                .iter()
                .enumerate()
                .find(|(_, x)| !(x.is_finite() && **x > 0.0))
            {
                return bad(format!(
                    "reference voltage {x} on node {i} must be positive"
                ));
            }
        }
        for (i, role) in assignment.roles().iter().enumerate() {
            match role {
                Role::Producer => {
                    let k = self.gains[i];
                    if !k.is_finite() {
                        return bad(format!("gain on node {i} is not finite"));
                    }
                    if k >= 0.0 && !self.allow_positive_gain {
                        return bad(format!(
                            "gain {k} on producer node {i} must be negative (droop is negative feedback)"
                        ));
                    }
                }
                Role::Consumer => {
                    let p = self.loads[i];
                    if !(p.is_finite() && p >= 0.0) {
                        return bad(format!(
                            "load {p} on consumer node {i} must be non-negative"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `ẋ = A x + G f(t)` with `x = [i_p; v_g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopSystem {
    pub a: Matrix,
    pub g: Matrix,
    pub lines: usize,
    pub nodes: usize,
}

impl OpenLoopSystem {
    pub fn dim(&self) -> usize {
        self.lines + self.nodes
    }
}

/// `ż = B z + k` with `z = [i_p; P v_g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub b: Matrix,
    pub k: Vec<f64>,
    pub assignment: RoleAssignment,
    pub droop: DroopConfig,
    /// `order[k]` = original node index at permuted voltage slot `k`.
    pub order: Vec<usize>,
    pub lines: usize,
    pub nodes: usize,
}

impl ClosedLoopSystem {
    pub fn dim(&self) -> usize {
        self.lines + self.nodes
    }

    /// Permuted voltage slots of `z`, mapped back to original node order.
    pub fn voltages_original(&self, z: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes];
        for (slot, &node) in self.order.iter().enumerate() {
            v[node] = z[self.lines + slot];
        }
        v
    }

    /// State in original coordinates `[i_p; v_g]` from a permuted state.
    pub fn to_original(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z[..self.lines].to_vec();
        x.extend(self.voltages_original(z));
        x
    }

    /// Permuted state from original coordinates `[i_p; v_g]`.
    pub fn from_original(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x[..self.lines].to_vec();
        z.extend(self.order.iter().map(|&node| x[self.lines + node]));
        z
    }

    /// Default initial state: no line current, every bus at its reference.
    pub fn default_initial_state(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.lines];
        z.extend(self.order.iter().map(|&node| self.droop.reference(node)));
        z
    }

    pub fn to_document(&self) -> SystemDocument {
        let mut state_order: Vec<String> = (0..self.lines).map(|e| format!("ip_{e}")).collect();
        state_order.extend(self.order.iter().map(|node| format!("vg_{node}")));
        SystemDocument {
            lines: self.lines,
            nodes: self.nodes,
            state_order,
            permutation: self.order.clone(),
            roles: self.assignment.roles().to_vec(),
            b: MatrixDocument::from(&self.b),
            k: self.k.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDocument {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixDocument {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }
}

/// Exported closed-loop system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub lines: usize,
    pub nodes: usize,
    pub state_order: Vec<String>,
    pub permutation: Vec<usize>,
    pub roles: Vec<Role>,
    pub b: MatrixDocument,
    pub k: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_scaling(what: &'static str, values: &[f64]) -> Result<(), AssemblyError> {
    if values.is_empty() {
        return Ok(());
    }
    let med = median(values);
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 1e-12 * med) {
        return Err(AssemblyError::SingularScaling {
            what,
            index,
            value,
            median: med,
        });
    }
    Ok(())
}

fn reciprocal(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| 1.0 / v).collect()
}

/// Open-loop `A = [[-Lind⁻¹R, Lind⁻¹L], [-C⁻¹Lᵀ, 0]]`, `G = [0; C⁻¹]`.
pub fn assemble_open_loop(graph: &MicrogridGraph) -> Result<OpenLoopSystem, AssemblyError> {
    graph.validate()?;
    let m = graph.edge_count();
    let n = graph.node_count();
    let inv_ind = reciprocal(&graph.inductances());
    let inv_cap = reciprocal(&graph.capacitances());
    let res = graph.resistances();
    let l = graph.incidence();

    let mut a = Matrix::zeros(m + n, m + n);
    for e in 0..m {
        a[(e, e)] = -res[e] * inv_ind[e];
    }
    a.set_block(0, m, &l.scale_rows(&inv_ind));
    a.set_block(m, 0, &l.transpose().scale_rows(&inv_cap).scale(-1.0));

    let mut g = Matrix::zeros(m + n, n);
    g.set_block(m, 0, &Matrix::from_diag(&inv_cap));
    Ok(OpenLoopSystem {
        a,
        g,
        lines: m,
        nodes: n,
    })
}

/// Net nodal injection `f` (original node order) for the given bus
/// voltages: producers inject `K (v - V_s)`, consumers draw `P_s / V_s`.
pub fn droop_injection(assignment: &RoleAssignment, droop: &DroopConfig, v: &[f64]) -> Vec<f64> {
    assignment
        .roles()
        .iter()
        .enumerate()
        .map(|(i, role)| match role {
            Role::Producer => droop.gains[i] * (v[i] - droop.reference(i)),
            Role::Consumer => -droop.loads[i] / droop.reference(i),
        })
        .collect()
}

/// Closed-loop `ż = B z + k`.
///
/// With `L̂ = L Pᵀ`, `Ĉ = P C Pᵀ` and `K' = blockdiag(K̂, 0)`:
/// `B = [[-Lind⁻¹R, Lind⁻¹L̂], [-Ĉ⁻¹L̂ᵀ, Ĉ⁻¹K']]` and `k = [0; Ĉ⁻¹d]` where
/// `d` is `-K̂ V_s` on producers and `-P_s / V_s` on consumers.
pub fn assemble_closed_loop(
    graph: &MicrogridGraph,
    assignment: &RoleAssignment,
    droop: &DroopConfig,
) -> Result<ClosedLoopSystem, AssemblyError> {
    graph.validate()?;
    let m = graph.edge_count();
    let n = graph.node_count();
    assignment.check_len(n)?;
    droop.check(n, assignment)?;

    let caps = graph.capacitances();
    let inds = graph.inductances();
    check_scaling("capacitance", &caps)?;
    check_scaling("inductance", &inds)?;

    let order = assignment.order();
    let p = permutation_matrix(assignment, n)?;
    let l_hat = graph.incidence().matmul(&p.transpose());
    let inv_ind = reciprocal(&inds);
    let inv_cap_hat: Vec<f64> = order.iter().map(|&i| 1.0 / caps[i]).collect();
    let res = graph.resistances();

    let mut b = Matrix::zeros(m + n, m + n);
    for e in 0..m {
        b[(e, e)] = -res[e] * inv_ind[e];
    }
    b.set_block(0, m, &l_hat.scale_rows(&inv_ind));
    b.set_block(
        m,
        0,
        &l_hat.transpose().scale_rows(&inv_cap_hat).scale(-1.0),
    );

    let mut k = vec![0.0; m + n];
    for (slot, &node) in order.iter().enumerate() {
        let v_ref = droop.reference(node);
        let d = match assignment.roles()[node] {
            Role::Producer => {
                b[(m + slot, m + slot)] = droop.gains[node] * inv_cap_hat[slot];
                -droop.gains[node] * v_ref
            }
            Role::Consumer => -droop.loads[node] / v_ref,
        };
        k[m + slot] = inv_cap_hat[slot] * d;
    }

    Ok(ClosedLoopSystem {
        b,
        k,
        assignment: assignment.clone(),
        droop: droop.clone(),
        order,
        lines: m,
        nodes: n,
    })
}

/// Operating point `z*` with `B z* = -k`.
pub fn equilibrium(system: &ClosedLoopSystem) -> Result<Vec<f64>, AssemblyError> {
    let rhs: Vec<f64> = system.k.iter().map(|v| -v).collect();
    match linalg::solve(&system.b, &rhs) {
        Ok(z) => Ok(z),
        Err(LinalgError::Singular { condition }) => Err(AssemblyError::SingularB { condition }),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{LineParams, NodeParams};

    fn unit_pair() -> MicrogridGraph {
        let mut g = MicrogridGraph::new();
        g.add_seed_node(NodeParams { capacitance: 1.0 }).unwrap();
        g.add_seed_node(NodeParams { capacitance: 1.0 }).unwrap();
        g.add_edge(
            NodeId(0),
            NodeId(1),
            LineParams {
                resistance: 1.0,
                inductance: 1.0,
            },
        )
        .unwrap();
        g
    }

    #[test]
    fn open_loop_two_node() {
        let sys = assemble_open_loop(&unit_pair()).unwrap();
        let want = Matrix::from_rows(&[[-1.0, 1.0, -1.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(sys.a, want);
        assert_eq!(sys.g.block(0, 0, 1, 2), Matrix::zeros(1, 2));
        assert_eq!(sys.g.block(1, 0, 2, 2), Matrix::identity(2));
    }

    #[test]
    fn permutation_examples() {
        let all = RoleAssignment::all(4, Role::Producer);
        assert_eq!(permutation_matrix(&all, 4).unwrap(), Matrix::identity(4));

        let a = RoleAssignment::new(vec![Role::Consumer, Role::Producer, Role::Producer]);
        let p = permutation_matrix(&a, 3).unwrap();
        assert_eq!(p.matvec(&[10.0, 11.0, 12.0]), vec![11.0, 12.0, 10.0]);
        assert_eq!(p.matmul(&p.transpose()), Matrix::identity(3));

        assert_eq!(
            permutation_matrix(&a, 4),
            Err(AssemblyError::BadAssignment {
                expected: 4,
                got: 3
            })
        );
    }

    #[test]
    fn closed_loop_two_node() {
        let g = unit_pair();
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer]);
        let mut droop = DroopConfig::uniform(2, 1.0, -1.0, 0.0);
        droop.gains[1] = 0.0;
        let sys = assemble_closed_loop(&g, &roles, &droop).unwrap();
        let want = Matrix::from_rows(&[[-1.0, 1.0, -1.0], [-1.0, -1.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(sys.b, want);
        assert_eq!(sys.k, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_feedback_reduces_to_open_loop() {
        let g = unit_pair();
        let roles = RoleAssignment::all(2, Role::Consumer);
        let sys =
            assemble_closed_loop(&g, &roles, &DroopConfig::uniform(2, 48.0, -1.0, 0.0)).unwrap();
        assert_eq!(sys.b, assemble_open_loop(&g).unwrap().a);
        assert!(sys.k.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_gain_needs_override() {
        let g = unit_pair();
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer]);
        let mut droop = DroopConfig::uniform(2, 48.0, 0.5, 10.0);
        assert!(matches!(
            assemble_closed_loop(&g, &roles, &droop),
            Err(AssemblyError::InvalidDroop(_))
        ));
        droop.allow_positive_gain = true;
        assemble_closed_loop(&g, &roles, &droop).unwrap();
    }

    #[test]
    fn tiny_capacitance_is_singular_scaling() {
        let mut g = MicrogridGraph::new();
        let line = LineParams {
            resistance: 0.1,
            inductance: 1e-4,
        };
        g.add_seed_node(NodeParams { capacitance: 1e-3 }).unwrap();
        g.add_node(NodeParams { capacitance: 1e-3 }, NodeId(0), line)
            .unwrap();
        g.add_node(NodeParams { capacitance: 1e-20 }, NodeId(0), line)
            .unwrap();
        let roles = RoleAssignment::all(3, Role::Consumer);
        let err = assemble_closed_loop(&g, &roles, &DroopConfig::uniform(3, 48.0, -1.0, 1.0));
        assert!(matches!(
            err,
            Err(AssemblyError::SingularScaling {
                what: "capacitance",
                index: 2,
                ..
            })
        ));
    }

    #[test]
    fn equilibrium_two_node() {
        let g = unit_pair();
        let roles = RoleAssignment::new(vec![Role::Producer, Role::Consumer]);
        let mut droop = DroopConfig::uniform(2, 1.0, -1.0, 0.0);
        droop.loads[1] = 0.25;
        let sys = assemble_closed_loop(&g, &roles, &droop).unwrap();
        let z = equilibrium(&sys).unwrap();
        let r: Vec<f64> = sys
            .b
            .matvec(&z)
            .iter()
            .zip(&sys.k)
            .map(|(a, b)| a + b)
            .collect();
        assert!(linalg::norm2(&r) <= 1e-9 * (1.0 + linalg::norm2(&sys.k)));
        // producer current K (v - V_s) equals the current drawn through the line
        let producer_out = droop.gains[0] * (z[1] - droop.v_ref);
        assert!((producer_out - z[0]).abs() < 1e-12);
        // and the line delivers exactly the consumer draw P_s / V_s
        assert!((z[0] - 0.25).abs() < 1e-12);

        let zero = RoleAssignment::new(vec![Role::Producer, Role::Consumer]);
        let mut no_injection = DroopConfig::uniform(2, 1.0, -1.0, 0.0);
        no_injection.v_ref = 1.0;
        let mut sys0 = assemble_closed_loop(&g, &zero, &no_injection).unwrap();
        sys0.k = vec![0.0; 3];
        assert!(equilibrium(&sys0).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn all_consumer_equilibrium_is_singular() {
        let g = unit_pair();
        let roles = RoleAssignment::all(2, Role::Consumer);
        let sys =
            assemble_closed_loop(&g, &roles, &DroopConfig::uniform(2, 48.0, -1.0, 1.0)).unwrap();
        assert!(matches!(
            equilibrium(&sys),
            Err(AssemblyError::SingularB { .. })
        ));
    }

    #[test]
    fn coordinate_maps_are_inverse() {
        let g = unit_pair();
        let roles = RoleAssignment::new(vec![Role::Consumer, Role::Producer]);
        let sys =
            assemble_closed_loop(&g, &roles, &DroopConfig::uniform(2, 48.0, -1.0, 1.0)).unwrap();
        let x = vec![0.3, 47.0, 46.5];
        let z = sys.from_original(&x);
        assert_eq!(z, vec![0.3, 46.5, 47.0]);
        assert_eq!(sys.to_original(&z), x);
    }
}
