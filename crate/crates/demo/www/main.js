import init, { reward_curve, dsic_grid, run_scenario, scenario_names } from "./pkg/remotegate_demo.js";

const $ = (id) => document.getElementById(id);

function guarded(errorId, fn) {
  return () => {
    $(errorId).textContent = "";
    try {
      fn();
    } catch (e) {
      $(errorId).textContent = String(e);
    }
  };
}

function drawCurve(points) {
  const cv = $("curve-plot");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  if (points.length === 0) return;
  const pad = 30;
  const max = Math.max(...points.map((p) => p.reward_f64), 1e-9);
  const step = (cv.width - 2 * pad) / Math.max(points.length - 1, 1);
  const y = (v) => cv.height - pad - (v / max) * (cv.height - 2 * pad);
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, cv.width - 2 * pad, cv.height - 2 * pad);
  g.strokeStyle = "#1565c0";
  g.beginPath();
  points.forEach((p, i) => (i ? g.lineTo : g.moveTo).call(g, pad + i * step, y(p.reward_f64)));
  g.stroke();
  g.fillStyle = "#222";
  points.forEach((p, i) => {
    g.fillRect(pad + i * step - 2, y(p.reward_f64) - 2, 4, 4);
    g.fillText(`r${p.round}`, pad + i * step - 6, cv.height - 10);
  });
}

function runCurve() {
  const points = JSON.parse(reward_curve($("rho").value, $("c").value, $("accs").value));
  drawCurve(points);
  const rows = points.map((p) => `<tr><td>${p.round}</td><td>${p.acc}</td><td>${p.bid}</td><td>${p.reward}</td></tr>`);
  $("curve-table").innerHTML = "<tr><th>round</th><th>acc</th><th>bid</th><th>reward</th></tr>" + rows.join("");
}

function runGrid() {
  const n = Number($("grid-n").value);
  const res = JSON.parse(dsic_grid($("rule").value, $("utility").value, n, Number($("grid-d").value)));
  $("grid-summary").textContent =
    `${res.triples} triples, server violations ${res.server_violations}, ` +
    `gateway violations ${res.gateway_violations}, welfare ratio ${res.welfare_ratio ?? "-"}`;
  const cv = $("grid-plot");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const cell = cv.width / n;
  const max = Math.max(...res.cells.map((c) => c.profitable_misreports), 1);
  res.cells.forEach((c, i) => {
    const shade = Math.round(255 * (1 - c.profitable_misreports / max));
    g.fillStyle = c.profitable_misreports ? `rgb(255, ${shade}, ${shade})` : "#e8f5e9";
    g.fillRect((i % n) * cell, Math.floor(i / n) * cell, cell - 1, cell - 1);
  });
}

function runScenario() {
  const raw = $("seed").value.trim();
  const report = JSON.parse(run_scenario($("scenario").value, raw === "" ? -1 : Number(raw)));
  $("scenario-summary").textContent =
    `outcome ${report.outcome ?? "none"}, learning rounds ${report.learning_rounds ?? "-"}, ` +
    `reward ${report.reward_paid}, fees ${report.fees_paid}, audit ${report.audit.checks.every((c) => c.passed) ? "pass" : "FAIL"}`;
  $("scenario-report").textContent = JSON.stringify(report, null, 2);
}

await init();
for (const name of JSON.parse(scenario_names())) {
  $("scenario").add(new Option(name, name));
}
$("curve-run").onclick = guarded("curve-error", runCurve);
$("grid-run").onclick = guarded("grid-error", runGrid);
$("scenario-run").onclick = guarded("scenario-error", runScenario);
$("status").textContent = "Ready.";
guarded("curve-error", runCurve)();
guarded("grid-error", runGrid)();
