// Built by `wasm-bindgen --target web --out-dir www/pkg`.
import init, { samplePosterior, draftTimeline, comparePolicies } from "./pkg/idledraft_wasm.js";

const SVG = "http://www.w3.org/2000/svg";
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function el(name, attrs, text) {
  const node = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function fail(out, e) {
  out.innerHTML = "";
  const p = document.createElement("p");
  p.className = "err";
  p.textContent = String(e);
  out.appendChild(p);
}

function drawPosterior() {
  const out = $("p-out");
  const svg = $("p-svg");
  svg.replaceChildren();
  let h;
  try {
    h = JSON.parse(samplePosterior(num("p-alpha"), num("p-beta"), num("p-draws"), 40, 1));
  } catch (e) {
    return fail(out, e);
  }
  out.textContent = `P(progressive) = ${h.progressive_share.toFixed(3)}, mean = ${h.mean.toFixed(3)}`;
  const w = Number(svg.getAttribute("width"));
  const ht = Number(svg.getAttribute("height")) - 20;
  const max = Math.max(...h.counts);
  const bw = w / h.counts.length;
  h.counts.forEach((c, i) => {
    const bh = (c / max) * (ht - 10);
    const fill = (i + 0.5) / h.counts.length > 0.5 ? "#4a7" : "#c74";
    svg.appendChild(el("rect", { x: i * bw + 1, y: ht - bh, width: bw - 2, height: bh, fill }));
  });
  svg.appendChild(el("line", { x1: w / 2, x2: w / 2, y1: 0, y2: ht, stroke: "#333", "stroke-dasharray": "4 3" }));
  svg.appendChild(el("text", { x: 2, y: ht + 15 }, "0"));
  svg.appendChild(el("text", { x: w / 2 - 8, y: ht + 15 }, "0.5"));
  svg.appendChild(el("text", { x: w - 12, y: ht + 15 }, "1"));
}

function drawTimeline() {
  const out = $("t-out");
  const svg = $("t-svg");
  svg.replaceChildren();
  let t;
  try {
    t = JSON.parse(
      draftTimeline(num("t-tool"), num("t-draft"), num("t-cap"), num("t-alpha"), num("t-beta"), 3),
    );
  } catch (e) {
    return fail(out, e);
  }
  out.textContent = `${t.complete} complete drafts, model busy ${t.busy_ms} of ${t.tool_ms} ms (ITU ${t.itu.toFixed(2)})`;
  const w = Number(svg.getAttribute("width")) - 20;
  const span = Math.max(t.tool_ms, ...t.drafts.map((d) => d.end_ms), 1);
  const x = (ms) => 10 + (ms / span) * w;
  svg.appendChild(el("rect", { x: x(0), y: 10, width: x(t.tool_ms) - x(0), height: 24, fill: "#ddd" }));
  svg.appendChild(el("text", { x: x(0) + 4, y: 27 }, "tool call"));
  for (const d of t.drafts) {
    const fill = d.outcome === "complete" ? (d.strategy === "PROG" ? "#4a7" : "#c74") : "#bbb";
    svg.appendChild(el("rect", { x: x(d.start_ms), y: 44, width: Math.max(1, x(d.end_ms) - x(d.start_ms) - 2), height: 24, fill }));
    svg.appendChild(el("text", { x: x(d.start_ms) + 4, y: 61 }, `${d.strategy} ${d.p_hat.toFixed(2)}`));
  }
  svg.appendChild(el("text", { x: 10, y: 95 }, "green: progressive, orange: recovery, grey: cut off when the tool returned"));
}

function drawComparison() {
  const out = $("c-out");
  let rows;
  try {
    rows = JSON.parse(comparePolicies($("c-tools").value, $("c-family").value, num("c-n"), num("c-seed")));
  } catch (e) {
    return fail(out, e);
  }
  const base = rows.find((r) => r.policy === "VANILLA").wall_ms;
  const table = document.createElement("table");
  table.innerHTML =
    "<tr><th>policy</th><th>success</th><th>wall s</th><th>vs vanilla</th><th>ITU</th><th>steps</th><th>idle tokens</th><th>test tokens</th></tr>";
  for (const r of rows) {
    const tr = document.createElement("tr");
    const cells = [
      r.policy,
      r.success_rate.toFixed(2),
      (r.wall_ms / 1000).toFixed(1),
      (r.wall_ms / base).toFixed(3),
      r.itu.toFixed(3),
      r.steps.toFixed(2),
      r.tokens_idle.toFixed(0),
      r.tokens_test.toFixed(0),
    ];
    for (const c of cells) {
      const td = document.createElement("td");
      td.textContent = c;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
  out.replaceChildren(table);
}

await init();
$("p-go").onclick = drawPosterior;
$("t-go").onclick = drawTimeline;
$("c-go").onclick = drawComparison;
drawPosterior();
drawTimeline();
drawComparison();
