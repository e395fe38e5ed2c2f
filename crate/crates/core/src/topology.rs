//! Microgrid topology: DC buses joined by RL power lines, the oriented
//! incidence matrix, and preferential-attachment growth.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge {}", self.0)
    }
}

/// Bus parameters. The DC link capacitance sits on the diagonal of `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub capacitance: f64,
}

/// Lumped series resistance and inductance of a power line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub resistance: f64,
    pub inductance: f64,
}

/// A power line. Its incidence row has +1 at `from` and -1 at `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub line: LineParams,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("{0} does not exist")]
    UnknownNode(NodeId),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("graph is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("self-loop on {0}")]
    SelfLoop(NodeId),
    #[error("duplicate line between {0} and {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl NodeParams {
    pub fn check(&self) -> Result<(), String> {
        if positive_finite(self.capacitance) {
            Ok(())
        } else {
            Err(format!(
                "capacitance {} must be positive and finite",
                self.capacitance
            ))
        }
    }
}

impl LineParams {
    pub fn check(&self) -> Result<(), String> {
        if !positive_finite(self.resistance) {
            return Err(format!(
                "resistance {} must be positive and finite",
                self.resistance
            ));
        }
        if !positive_finite(self.inductance) {
            return Err(format!(
                "inductance {} must be positive and finite",
                self.inductance
            ));
        }
        Ok(())
    }
}

/// Uniform sampling ranges for generated grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub resistance: (f64, f64),
    pub inductance: (f64, f64),
    pub capacitance: (f64, f64),
}

impl Default for ParamRanges {
    /// Typical low-voltage DC values.
    fn default() -> Self {
        Self {
            resistance: (0.05, 0.5),
            inductance: (1e-5, 1e-4),
            capacitance: (1e-4, 1e-3),
        }
    }
}

impl ParamRanges {
    pub fn check(&self) -> Result<(), TopologyError> {
        for (name, (lo, hi)) in [
            ("resistance", self.resistance),
            ("inductance", self.inductance),
            ("capacitance", self.capacitance),
        ] {
            if !(positive_finite(lo) && positive_finite(hi) && lo <= hi) {
                return Err(TopologyError::InvalidParams(format!(
                    "{name} range [{lo}, {hi}] must be positive, finite and ordered"
                )));
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }

    pub fn sample_node<R: Rng>(&self, rng: &mut R) -> NodeParams {
        NodeParams {
            capacitance: Self::sample(rng, self.capacitance),
        }
    }

    pub fn sample_line<R: Rng>(&self, rng: &mut R) -> LineParams {
        LineParams {
            resistance: Self::sample(rng, self.resistance),
            inductance: Self::sample(rng, self.inductance),
        }
    }
}

/// Where grown nodes and lines get their electrical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthParams {
    Fixed { node: NodeParams, line: LineParams },
    Uniform(ParamRanges),
}

/// Weighted undirected graph of buses and lines with a fixed edge
/// orientation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MicrogridGraph {
    nodes: Vec<NodeParams>,
    edges: Vec<Edge>,
}

impl MicrogridGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from raw parts without checking connectivity.
    /// Endpoints, self-loops and parameter signs are still checked.
    pub fn from_parts(nodes: Vec<NodeParams>, edges: Vec<Edge>) -> Result<Self, TopologyError> {
        let mut g = Self {
            nodes,
            edges: Vec::with_capacity(edges.len()),
        };
        for (i, p) in g.nodes.iter().enumerate() {
            p.check()
                .map_err(|e| TopologyError::InvalidParams(format!("{}: {e}", NodeId(i))))?;
        }
        for e in edges {
            g.add_edge(e.from, e.to, e.line)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeParams] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeParams> {
        self.nodes.get(id.0)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(id.0)
    }

    pub fn capacitances(&self) -> Vec<f64> {
        self.nodes.iter().map(|p| p.capacitance).collect()
    }

    pub fn resistances(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.line.resistance).collect()
    }

    pub fn inductances(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.line.inductance).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.from.0] += 1;
            deg[e.to.0] += 1;
        }
        deg
    }

    fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    /// Adds an isolated node. Used to seed a graph before growth.
    pub fn add_seed_node(&mut self, params: NodeParams) -> Result<NodeId, TopologyError> {
        params.check().map_err(TopologyError::InvalidParams)?;
        self.nodes.push(params);
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Adds a line between two existing nodes; +1 goes to `from`.
    pub fn add_edge(
        &mut self,
        from: NodeId,
        to: NodeId,
        line: LineParams,
    ) -> Result<EdgeId, TopologyError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(TopologyError::UnknownNode(id));
            }
        }
        if from == to {
            return Err(TopologyError::SelfLoop(from));
        }
        if self
            .edges
            .iter()
            .any(|e| (e.from == from && e.to == to) || (e.from == to && e.to == from))
        {
            return Err(TopologyError::DuplicateEdge(from, to));
        }
        line.check().map_err(|e| {
            TopologyError::InvalidParams(format!("{}: {e}", EdgeId(self.edges.len())))
        })?;
        self.edges.push(Edge { from, to, line });
        Ok(EdgeId(self.edges.len() - 1))
    }

    /// Connects a new bus to `attach_to`. The appended incidence row has +1
    /// in the new node's column and -1 in `attach_to`'s.
    pub fn add_node(
        &mut self,
        params: NodeParams,
        attach_to: NodeId,
        line: LineParams,
    ) -> Result<NodeId, TopologyError> {
        if !self.contains(attach_to) {
            return Err(TopologyError::UnknownNode(attach_to));
        }
        params.check().map_err(TopologyError::InvalidParams)?;
        line.check().map_err(TopologyError::InvalidParams)?;
        self.nodes.push(params);
        let id = NodeId(self.nodes.len() - 1);
        self.edges.push(Edge {
            from: id,
            to: attach_to,
            line,
        });
        Ok(id)
    }

    /// Draws an existing node with probability proportional to degree + 1.
    pub fn pick_attachment<R: Rng>(&self, rng: &mut R) -> Result<NodeId, TopologyError> {
        if self.nodes.is_empty() {
            return Err(TopologyError::EmptyGraph);
        }
        let deg = self.degrees();
        let total: usize = deg.iter().map(|d| d + 1).sum();
        let mut ticket = rng.random_range(0..total);
        for (i, d) in deg.iter().enumerate() {
            if ticket <= *d {
                return Ok(NodeId(i));
            }
            ticket -= d + 1;
        }
        unreachable!("ticket exceeds total weight")
    }

    /// Grows the graph by `count` nodes, each attached by a single line to a
    /// node chosen by [`pick_attachment`](Self::pick_attachment).
    /// Deterministic for a fixed seed.
    pub fn grow_preferential(
        &mut self,
        count: usize,
        params: &GrowthParams,
        seed: u64,
    ) -> Result<Vec<NodeId>, TopologyError> {
        if self.nodes.is_empty() {
            return Err(TopologyError::EmptyGraph);
        }
        if let GrowthParams::Uniform(r) = params {
            r.check()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut added = Vec::with_capacity(count);
        for _ in 0..count {
            let target = self.pick_attachment(&mut rng)?;
            let (node, line) = match params {
                GrowthParams::Fixed { node, line } => (*node, *line),
                GrowthParams::Uniform(r) => (r.sample_node(&mut rng), r.sample_line(&mut rng)),
            };
            added.push(self.add_node(node, target, line)?);
        }
        Ok(added)
    }

    /// Builds an `n`-node grid from one seed node and `n - 1` preferential
    /// attachment steps, with parameters sampled from `ranges`.
    pub fn generate(n: usize, ranges: &ParamRanges, seed: u64) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        ranges.check()?;
        // the seed node's capacitance comes from its own stream so growth
        // is unaffected by it
        let mut seed_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut g = Self::new();
        g.add_seed_node(ranges.sample_node(&mut seed_rng))?;
        g.grow_preferential(n - 1, &GrowthParams::Uniform(*ranges), seed)?;
        Ok(g)
    }

    /// Oriented incidence matrix `L` (m x n).
    ///
    /// `L v_g` gives the line voltage drops and `Lᵀ i_p` the net current
    /// leaving each bus.
    pub fn incidence(&self) -> Matrix {
        let mut l = Matrix::zeros(self.edges.len(), self.nodes.len());
        for (k, e) in self.edges.iter().enumerate() {
            l[(k, e.from.0)] = 1.0;
            l[(k, e.to.0)] = -1.0;
        }
        l
    }

    /// Connected components as sorted node-index lists, ordered by their
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let a = find(&mut parent, e.from.0);
            let b = find(&mut parent, e.to.0);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let root = find(&mut parent, i);
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(i);
        }
        groups
    }

    /// Checks parameters, incidence invariants and connectivity.
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.nodes.is_empty() {
            return Err(TopologyError::EmptyGraph);
        }
        for (i, p) in self.nodes.iter().enumerate() {
            p.check()
                .map_err(|e| TopologyError::InvalidParams(format!("{}: {e}", NodeId(i))))?;
        }
        for (k, e) in self.edges.iter().enumerate() {
            e.line
                .check()
                .map_err(|msg| TopologyError::InvalidParams(format!("{}: {msg}", EdgeId(k))))?;
            if !self.contains(e.from) {
                return Err(TopologyError::UnknownNode(e.from));
            }
            if !self.contains(e.to) {
                return Err(TopologyError::UnknownNode(e.to));
            }
            if e.from == e.to {
                return Err(TopologyError::SelfLoop(e.from));
            }
        }
        let components = self.components();
        if components.len() > 1 {
            return Err(TopologyError::Disconnected { components });
        }
        Ok(())
    }

    /// Disjoint union; `other`'s node ids are shifted past ours.
    pub fn disjoint_union(&self, other: &MicrogridGraph) -> MicrogridGraph {
        let shift = self.nodes.len();
        let mut g = self.clone();
        g.nodes.extend_from_slice(&other.nodes);
        g.edges.extend(other.edges.iter().map(|e| Edge {
            from: NodeId(e.from.0 + shift),
            to: NodeId(e.to.0 + shift),
            line: e.line,
        }));
        g
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, p)| NodeRecord {
                    id,
                    capacitance: p.capacitance,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .enumerate()
                .map(|(id, e)| EdgeRecord {
                    id,
                    from: e.from.0,
                    to: e.to.0,
                    resistance: e.line.resistance,
                    inductance: e.line.inductance,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self, TopologyError> {
        for (pos, n) in doc.nodes.iter().enumerate() {
            if n.id != pos {
                return Err(TopologyError::Malformed(format!(
                    "node ids must be contiguous from 0; found id {} at position {pos}",
                    n.id
                )));
            }
        }
        for (pos, e) in doc.edges.iter().enumerate() {
            if e.id != pos {
                return Err(TopologyError::Malformed(format!(
                    "edge ids must be contiguous from 0; found id {} at position {pos}",
                    e.id
                )));
            }
        }
        let nodes = doc
            .nodes
            .iter()
            .map(|n| NodeParams {
                capacitance: n.capacitance,
            })
            .collect();
        let edges = doc
            .edges
            .iter()
            .map(|e| Edge {
                from: NodeId(e.from),
                to: NodeId(e.to),
                line: LineParams {
                    resistance: e.resistance,
                    inductance: e.inductance,
                },
            })
            .collect();
        Self::from_parts(nodes, edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| TopologyError::Malformed(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// On-disk graph layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub capacitance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub inductance: f64,
}
