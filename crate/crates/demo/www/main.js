import init, { envelope_2x2, grid_report, try_switch } from "./pkg/lognorm_grid_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fmt(x) {
  return x === null || !Number.isFinite(x) ? String(x) : x.toPrecision(6);
}

function plotEnvelope(canvas, samples, logScale) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const pts = samples.filter((s) => !s.overflow);
  if (pts.length < 2) return;
  const tr = (v) => (logScale ? Math.log10(Math.max(v, 1e-300)) : v);
  const ys = pts.flatMap((s) => [s.lower_bound, s.exp_norm, s.upper_bound].map(tr));
  const lo = Math.min(...ys), hi = Math.max(...ys);
  const t0 = pts[0].t, t1 = pts[pts.length - 1].t;
  const px = (t) => 40 + ((t - t0) / (t1 - t0 || 1)) * (w - 50);
  const py = (v) => h - 20 - ((tr(v) - lo) / (hi - lo || 1)) * (h - 30);
  const line = (key, colour, dash) => {
    ctx.strokeStyle = colour;
    ctx.setLineDash(dash);
    ctx.beginPath();
    pts.forEach((s, i) => (i ? ctx.lineTo(px(s.t), py(s[key])) : ctx.moveTo(px(s.t), py(s[key]))));
    ctx.stroke();
  };
  line("upper_bound", "#c33", [6, 4]);
  line("lower_bound", "#36c", [6, 4]);
  line("exp_norm", "#111", []);
  ctx.setLineDash([]);
  ctx.fillStyle = "#333";
  ctx.fillText(logScale ? "log10 ‖e^{tB}‖" : "‖e^{tB}‖", 4, 12);
  ctx.fillText(`e^{tμ} red, e^{tα} blue, t ∈ [${fmt(t0)}, ${fmt(t1)}]`, 44, h - 4);
}

function runEnvelope() {
  try {
    const r = JSON.parse(envelope_2x2(num("m11"), num("m12"), num("m21"), num("m22"), num("mt"), 200));
    const peak = Math.max(...r.samples.map((s) => s.exp_norm));
    $("envelope-info").textContent =
      `μ = ${fmt(r.mu)}, α = ${fmt(r.alpha)}, peak ‖e^{tB}‖ = ${fmt(peak)}` +
      (r.alpha < 0 && peak > 1 ? " (transient growth despite decaying modes)" : "");
    $("envelope-info").className = "";
    plotEnvelope($("envelope-plot"), r.samples, false);
  } catch (e) {
    $("envelope-info").textContent = e.message ?? String(e);
    $("envelope-info").className = "err";
  }
}

let grid = null;

function layout(n, edges) {
  // BFS depth rows from node 0
  const adj = Array.from({ length: n }, () => []);
  edges.forEach(([a, b]) => { adj[a].push(b); adj[b].push(a); });
  const depth = Array(n).fill(-1);
  depth[0] = 0;
  const queue = [0];
  while (queue.length) {
    const u = queue.shift();
    adj[u].forEach((v) => { if (depth[v] < 0) { depth[v] = depth[u] + 1; queue.push(v); } });
  }
  const rows = {};
  depth.forEach((d, i) => (rows[d] ??= []).push(i));
  const maxDepth = Math.max(...depth);
  const pos = [];
  Object.entries(rows).forEach(([d, ids]) => {
    ids.forEach((id, k) => {
      pos[id] = [30 + ((k + 1) / (ids.length + 1)) * 380, 30 + (Number(d) / (maxDepth || 1)) * 280];
    });
  });
  return pos;
}

function drawGrid() {
  const c = $("grid-plot");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#888";
  grid.edges.forEach(([a, b]) => {
    ctx.beginPath();
    ctx.moveTo(...grid.pos[a]);
    ctx.lineTo(...grid.pos[b]);
    ctx.stroke();
  });
  grid.roles.forEach((role, i) => {
    const [x, y] = grid.pos[i];
    ctx.fillStyle = role === "Producer" ? "#2a8" : "#e94";
    ctx.beginPath();
    ctx.arc(x, y, 11, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#000";
    ctx.fillText(String(i), x - 3, y + 4);
  });
  ctx.fillText("green: producer, orange: consumer", 6, c.height - 6);
}

function producersOf(roles) {
  return roles.flatMap((r, i) => (r === "Producer" ? [i] : [])).join(",");
}

function runGrid() {
  try {
    const r = JSON.parse(grid_report(num("g-nodes"), num("g-seed"), $("g-prod").value, num("g-gain"), num("g-load"), 0.005));
    grid = { ...r, pos: layout(r.nodes, r.edges) };
    $("grid-info").textContent =
      `μ = ${fmt(r.mu)}, α = ${fmt(r.alpha)}, ‖B‖ = ${fmt(r.two_norm)}, ` +
      (r.mu < 0 ? "contractive (μ < 0)" : "not contractive (μ ≥ 0)");
    $("grid-info").className = "";
    drawGrid();
    plotEnvelope($("grid-envelope"), r.samples, true);
  } catch (e) {
    $("grid-info").textContent = e.message ?? String(e);
    $("grid-info").className = "err";
  }
}

function clickGrid(ev) {
  if (!grid) return;
  const rect = ev.target.getBoundingClientRect();
  const x = ev.clientX - rect.left, y = ev.clientY - rect.top;
  const hit = grid.pos.findIndex(([px, py]) => (px - x) ** 2 + (py - y) ** 2 < 14 ** 2);
  if (hit < 0) return;
  try {
    const s = JSON.parse(try_switch(grid.nodes, num("g-seed"), $("g-prod").value, num("g-gain"), num("g-load"), hit));
    const verdict = s.improves ? "accepted" : "rejected";
    $("switch-log").textContent =
      `node ${s.node}: ${s.from} → ${s.to}, μ ${fmt(s.mu_before)} → ${fmt(s.mu_after)} (${verdict})\n` +
      $("switch-log").textContent;
    if (s.improves) {
      $("g-prod").value = producersOf(s.roles);
      runGrid();
    }
  } catch (e) {
    $("switch-log").textContent = `error: ${e.message ?? e}\n` + $("switch-log").textContent;
  }
}

await init();
$("envelope-run").addEventListener("click", runEnvelope);
$("grid-run").addEventListener("click", runGrid);
$("grid-plot").addEventListener("click", clickGrid);
runEnvelope();
runGrid();
