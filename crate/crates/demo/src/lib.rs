//! Browser bindings for the interactive page in `www/`.
//!
//! Each export takes plain numbers or strings and returns a JSON document.
//! The `*_json` functions hold the logic so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use lognorm_grid::assembly::{assemble_closed_loop, DroopConfig, Role, RoleAssignment};
use lognorm_grid::linalg::Matrix;
use lognorm_grid::lognorm::{self, EnvelopeSample};
use lognorm_grid::stabilizer::{evaluate_switch, StabilizerConfig};
use lognorm_grid::topology::{MicrogridGraph, NodeId, ParamRanges};

const MAX_NODES: usize = 60;
const V_REF: f64 = 48.0;

#[derive(Serialize)]
struct EnvelopeView {
    mu: f64,
    alpha: f64,
    samples: Vec<EnvelopeSample>,
}

#[derive(Serialize)]
struct GridView {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    roles: Vec<Role>,
    mu: f64,
    alpha: f64,
    two_norm: f64,
    samples: Vec<EnvelopeSample>,
}

#[derive(Serialize)]
struct SwitchView {
    node: usize,
    from: Role,
    to: Role,
    mu_before: f64,
    mu_after: f64,
    improves: bool,
    roles: Vec<Role>,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serialisable")
}

fn parse_producers(n: usize, list: &str) -> Result<RoleAssignment, String> {
    let mut ids = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let id: usize = part
            .parse()
            .map_err(|_| format!("'{part}' is not a node index"))?;
        ids.push(NodeId(id));
    }
    RoleAssignment::with_producers(n, &ids).map_err(|e| e.to_string())
}

fn build(
    nodes: usize,
    seed: u64,
    producers: &str,
    gain: f64,
    load: f64,
) -> Result<(MicrogridGraph, RoleAssignment, DroopConfig), String> {
    if nodes == 0 || nodes > MAX_NODES {
        return Err(format!("node count must be between 1 and {MAX_NODES}"));
    }
    let graph = MicrogridGraph::generate(nodes, &ParamRanges::default(), seed)
        .map_err(|e| e.to_string())?;
    let roles = parse_producers(nodes, producers)?;
    let droop = DroopConfig::uniform(nodes, V_REF, gain, load);
    Ok((graph, roles, droop))
}

/// Envelope of `‖e^{tB}‖` for a 2×2 matrix `[[a, b], [c, d]]`.
pub fn envelope_2x2_json(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    t_end: f64,
    samples: usize,
) -> Result<String, String> {
    if !(t_end.is_finite() && t_end > 0.0) || !(2..=2000).contains(&samples) {
        return Err("need t_end > 0 and 2 to 2000 samples".into());
    }
    let m = Matrix::from_rows(&[[a, b], [c, d]]);
    let grid = lognorm::uniform_grid(t_end, samples);
    let report = lognorm::analyze(&m, &grid).map_err(|e| e.to_string())?;
    Ok(to_json(&EnvelopeView {
        mu: report.mu,
        alpha: report.alpha,
        samples: report.envelope,
    }))
}

/// Generated grid with its closed-loop stability numbers and envelope.
pub fn grid_report_json(
    nodes: usize,
    seed: u64,
    producers: &str,
    gain: f64,
    load: f64,
    t_end: f64,
) -> Result<String, String> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err("t_end must be positive".into());
    }
    let (graph, roles, droop) = build(nodes, seed, producers, gain, load)?;
    let sys = assemble_closed_loop(&graph, &roles, &droop).map_err(|e| e.to_string())?;
    let report =
        lognorm::analyze(&sys.b, &lognorm::uniform_grid(t_end, 200)).map_err(|e| e.to_string())?;
    Ok(to_json(&GridView {
        nodes,
        edges: graph.edges().iter().map(|e| (e.from.0, e.to.0)).collect(),
        roles: roles.roles().to_vec(),
        mu: report.mu,
        alpha: report.alpha,
        two_norm: report.two_norm,
        samples: report.envelope,
    }))
}

/// Effect on `μ` of flipping one node's role.
pub fn try_switch_json(
    nodes: usize,
    seed: u64,
    producers: &str,
    gain: f64,
    load: f64,
    node: usize,
) -> Result<String, String> {
    let (graph, roles, droop) = build(nodes, seed, producers, gain, load)?;
    if node >= nodes {
        return Err(format!("node {node} does not exist"));
    }
    let from = roles.role(NodeId(node));
    let config = StabilizerConfig {
        threshold: 1.0,
        min_producers: 0,
        max_iterations: 1,
        evaluation_time: 1e-4,
    };
    let decision = evaluate_switch(
        &graph,
        &roles,
        &droop,
        (NodeId(node), from.flipped()),
        &config,
        0,
    )
    .map_err(|e| e.to_string())?;
    let after = roles.with_role(NodeId(node), from.flipped());
    Ok(to_json(&SwitchView {
        node,
        from,
        to: from.flipped(),
        mu_before: decision.mu_before,
        mu_after: decision.mu_after,
        improves: decision.accepted,
        roles: after.roles().to_vec(),
    }))
}

#[wasm_bindgen]
pub fn envelope_2x2(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    t_end: f64,
    samples: usize,
) -> Result<String, JsError> {
    envelope_2x2_json(a, b, c, d, t_end, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn grid_report(
    nodes: usize,
    seed: u32,
    producers: &str,
    gain: f64,
    load: f64,
    t_end: f64,
) -> Result<String, JsError> {
    grid_report_json(nodes, seed.into(), producers, gain, load, t_end).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn try_switch(
    nodes: usize,
    seed: u32,
    producers: &str,
    gain: f64,
    load: f64,
    node: usize,
) -> Result<String, JsError> {
    try_switch_json(nodes, seed.into(), producers, gain, load, node).map_err(|e| JsError::new(&e))
}
