import init, { Playground, orthogonalize } from "./pkg/dire_wasm_demo.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const EXTENT = 1.8;
const $ = (id) => document.getElementById(id);

await init();
const pg = new Playground(4, 120, 0.3, 7);
const cloud = $("cloud").getContext("2d");
const W = $("cloud").width;

for (let c = 0; c < pg.classes(); c++) {
  const o = document.createElement("option");
  o.value = c;
  o.textContent = c;
  o.style.color = COLORS[c];
  $("cls").append(o);
}

const toPx = (v) => ((v + EXTENT) / (2 * EXTENT)) * W;
const fromPx = (p) => (p / W) * 2 * EXTENT - EXTENT;

function show(text, isError = false) {
  $("report").textContent = text;
  $("report").className = isError ? "error" : "";
}

function guard(f) {
  try {
    f();
  } catch (e) {
    show(String(e.message ?? e), true);
  }
}

function drawCloud() {
  cloud.clearRect(0, 0, W, W);
  const real = pg.real_points(), rl = pg.real_labels();
  cloud.globalAlpha = 0.25;
  for (let i = 0; i < rl.length; i++) {
    cloud.fillStyle = COLORS[rl[i]];
    cloud.fillRect(toPx(real[2 * i]) - 1.5, toPx(-real[2 * i + 1]) - 1.5, 3, 3);
  }
  cloud.globalAlpha = 1;
  const syn = pg.syn_points(), sl = pg.syn_labels();
  for (let i = 0; i < sl.length; i++) {
    cloud.beginPath();
    cloud.arc(toPx(syn[2 * i]), toPx(-syn[2 * i + 1]), 5, 0, 2 * Math.PI);
    cloud.fillStyle = COLORS[sl[i]];
    cloud.fill();
    cloud.strokeStyle = "#000";
    cloud.stroke();
  }
  drawHeat();
}

function drawHeat() {
  const ctx = $("heat").getContext("2d"), H = $("heat").width;
  ctx.clearRect(0, 0, H, H);
  const n = pg.syn_labels().length;
  if (n === 0) return;
  const m = pg.cosine_matrix(), cell = H / n;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const v = m[i * n + j];
      // red for +1, blue for -1
      const r = v > 0 ? 255 : Math.round(255 * (1 + v));
      const b = v < 0 ? 255 : Math.round(255 * (1 - v));
      const g = Math.round(255 * (1 - Math.abs(v)));
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
}

$("cloud").addEventListener("click", (ev) => guard(() => {
  const rect = ev.target.getBoundingClientRect();
  pg.add_point(fromPx(ev.clientX - rect.left), -fromPx(ev.clientY - rect.top), Number($("cls").value));
  drawCloud();
}));

$("noise").onclick = () => guard(() => {
  pg.seed_noise(4, 0.4, Math.floor(Math.random() * 1e6));
  drawCloud();
  show("");
});

$("clear").onclick = () => guard(() => {
  pg.clear();
  drawCloud();
  show("");
});

$("metrics").onclick = () => guard(() => {
  const r = JSON.parse(pg.metrics(Number($("k").value)));
  show([
    `coverage   ${r.coverage.toFixed(4)}`,
    `vendi      ${r.vendi.toFixed(4)}`,
    `similarity ${r.mean_intra_class_cosine.toFixed(4)}`,
    `per class  ${r.per_class_cosine.map((v) => v.toFixed(3)).join(" ")}`,
    `k ${r.k_used}, real ${r.n_real}, synthetic ${r.n_syn}`,
  ].join("\n"));
});

$("descend").onclick = () => guard(() => {
  const losses = pg.dire_steps(50, Number($("lr").value), Number($("rc").value), Number($("re").value));
  drawCloud();
  show(`loss ${losses[0].toFixed(4)} → ${losses[losses.length - 1].toFixed(4)}`);
});

$("ortho").onclick = () => {
  try {
    const t = JSON.parse(orthogonalize(4, Number($("oseed").value), 2000, 1.0, $("nonneg").checked));
    drawTrace(t.mean_abs_cos);
    const rows = [];
    for (let i = 0; i < 4; i++) rows.push(t.points.slice(4 * i, 4 * i + 4).map((v) => v.toFixed(3).padStart(7)).join(""));
    $("ortho-out").textContent =
      `final mean |cos| ${t.mean_abs_cos[t.mean_abs_cos.length - 1].toExponential(2)}\n` +
      `Gram determinant ${t.gram_determinant.toFixed(4)}\n\n${rows.join("\n")}`;
    $("ortho-out").className = "";
  } catch (e) {
    $("ortho-out").textContent = String(e.message ?? e);
    $("ortho-out").className = "error";
  }
};

function drawTrace(trace) {
  const ctx = $("trace").getContext("2d"), w = $("trace").width, h = $("trace").height;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(0, h - 0.05 * h);
  ctx.lineTo(w, h - 0.05 * h);
  ctx.stroke();
  ctx.strokeStyle = "#1f77b4";
  ctx.beginPath();
  trace.forEach((v, i) => {
    const x = (i / (trace.length - 1)) * w, y = h - Math.min(v, 1) * h;
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
}

drawCloud();
