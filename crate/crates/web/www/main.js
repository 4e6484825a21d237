import init, { simulate_prefix, inspect_address, sweep_etas } from "./pkg/edgy_web.js";

const LEN_COLORS = { 48: "#5b2a86", 52: "#3b6fb6", 56: "#2e9c7a", 60: "#e0a030", 64: "#d0553b" };
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value) >>> 0;

function show(el, text, isError) {
  el.textContent = text;
  el.className = isError ? "err" : "";
}

function drawGrid(view) {
  const c = $("sim-grid");
  const g = c.getContext("2d");
  const cell = c.width / 16;
  const peak = Math.max(1, ...view.grid.map((x) => x.lasthops));
  g.clearRect(0, 0, c.width, c.height);
  view.grid.forEach((x, i) => {
    const col = i % 16, row = Math.floor(i / 16);
    g.fillStyle = LEN_COLORS[x.len] || "#999";
    g.globalAlpha = x.lasthops === 0 ? 0.12 : 0.3 + 0.7 * (x.lasthops / peak);
    g.fillRect(col * cell + 1, row * cell + 1, cell - 2, cell - 2);
  });
  g.globalAlpha = 1;
}

function legend() {
  $("sim-legend").innerHTML =
    "cell = one /56, colour = delegated length, opacity = last hops found" +
    Object.entries(LEN_COLORS)
      .map(([len, c]) => `<span style="background:${c}"></span>/${len}`)
      .join("");
}

function runSim() {
  try {
    const v = JSON.parse(
      simulate_prefix($("sim-preset").value, num("sim-customers"), num("sim-seed"), num("sim-eta1"), num("sim-eta2"))
    );
    drawGrid(v);
    const rounds = v.rounds
      .map((r) => `/${r.mask}  ${String(r.probes).padStart(6)} probes  ${String(r.unique_lasthops).padStart(5)} last hops  ${r.advanced ? "advance" : "stop"}`)
      .join("\n");
    const status = v.status.mask ? `${v.status.status} at /${v.status.mask}` : v.status.status;
    show($("sim-out"), `${v.prefix}\n${rounds}\n\nstatus      ${status}\nprobes      ${v.probes}\nCPEs        ${v.cpes}\ndiscovered  ${v.discovered}`);
  } catch (e) {
    show($("sim-out"), String(e), true);
  }
}

function runInspect() {
  try {
    show($("addr-out"), JSON.stringify(JSON.parse(inspect_address($("addr").value)), null, 2));
  } catch (e) {
    show($("addr-out"), String(e), true);
  }
}

function drawSweep(rows) {
  const c = $("sw-chart");
  const g = c.getContext("2d");
  const pad = 36, w = c.width - 2 * pad, h = c.height - 2 * pad;
  g.clearRect(0, 0, c.width, c.height);
  if (rows.length === 0) return;
  const maxHops = Math.max(1, ...rows.map((r) => r.unique_lasthops));
  const maxPpl = Math.max(1, ...rows.map((r) => r.probes_per_lasthop || 0));
  const bw = w / rows.length;
  g.font = "11px sans-serif";
  rows.forEach((r, i) => {
    const bh = (r.unique_lasthops / maxHops) * h;
    g.fillStyle = "#3b6fb6";
    g.fillRect(pad + i * bw + 4, pad + h - bh, bw - 8, bh);
    g.fillStyle = "#222";
    g.fillText(String(r.eta), pad + i * bw + bw / 2 - 6, pad + h + 14);
  });
  g.strokeStyle = "#d0553b";
  g.lineWidth = 2;
  g.beginPath();
  rows.forEach((r, i) => {
    const x = pad + i * bw + bw / 2;
    const y = pad + h - ((r.probes_per_lasthop || 0) / maxPpl) * h;
    i === 0 ? g.moveTo(x, y) : g.lineTo(x, y);
  });
  g.stroke();
  g.fillStyle = "#3b6fb6";
  g.fillText("last hops", pad, pad - 8);
  g.fillStyle = "#d0553b";
  g.fillText("probes per last hop", pad + 80, pad - 8);
}

function runSweep() {
  try {
    const etas = new Uint32Array(
      $("sw-etas").value.split(",").map((s) => Number(s.trim())).filter((n) => Number.isFinite(n) && n >= 0)
    );
    const v = JSON.parse(sweep_etas(num("sw-seed"), num("sw-n"), etas));
    drawSweep(v.rows);
    const lines = v.rows.map(
      (r) => `η=${String(r.eta).padStart(4)}  ${String(r.selected_prefixes).padStart(3)} /48s  ${String(r.unique_lasthops).padStart(6)} hops  ${r.probes_per_lasthop ? r.probes_per_lasthop.toFixed(3) : "-"}`
    );
    show($("sw-out"), lines.join("\n"));
  } catch (e) {
    show($("sw-out"), String(e), true);
  }
}

await init();
legend();
$("sim-run").onclick = runSim;
$("addr-go").onclick = runInspect;
$("sw-run").onclick = runSweep;
runSim();
runInspect();
