import init, { Simulation, conditions, strong_order } from "./pkg/spdegal_demo.js";

const presets = {
  "cbf, multiplicative noise": `command = "simulate"
seed = 1

[model]
kind = "cbf"
cutoff = 8
diffusivity = { u = 0.02 }
forchheimer = 1.0

[initial]
kind = "random"
radius = 3.0
norm = 1.0

[noise]
sigma = [0.3, 0.2, 0.2, 0.1]
gamma = [0.5, 0.0, 0.0, 0.0]

[integrator]
dt = 0.01
`,
  "mhd": `command = "simulate"

[model]
kind = "mhd"
cutoff = 8
diffusivity = { u = 0.02, b = 0.02 }

[initial]
kind = "random"
radius = 3.0
norm = 1.0

[noise]
sigma = [0.2, 0.2]
gamma = [0.0, 0.0]

[integrator]
dt = 0.01
`,
  "boussinesq, buoyant plume": `command = "simulate"

[model]
kind = "boussinesq"
cutoff = 8
diffusivity = { u = 0.02, theta = 0.02 }

[initial]
kind = "waves"
waves = [{ field = "theta", k = [1, 0], amplitude = 1.0 }, { field = "u", k = [1, 1], amplitude = 0.3, direction = [1.0, -1.0] }]

[noise]
sigma = [0.1]
gamma = [0.0]

[integrator]
dt = 0.01
`,
  "micropolar": `command = "simulate"

[model]
kind = "micropolar"
cutoff = 8
diffusivity = { u = 0.1, w = 0.1, b = 0.1 }
chi = 0.05

[initial]
kind = "random"
radius = 3.0
norm = 1.0

[integrator]
dt = 0.01
`,
};

const $ = (id) => document.getElementById(id);
const out = (s) => { $("out").textContent = s; };
let sim = null;
let running = false;

function fresh() {
  sim = new Simulation($("config").value);
  draw();
}

function draw() {
  const side = sim.side();
  const v = sim.picture();
  const peak = v.reduce((m, x) => Math.max(m, Math.abs(x)), 1e-12);
  const img = new ImageData(side, side);
  for (let i = 0; i < v.length; i++) {
    const s = v[i] / peak;
    img.data[4 * i] = 255 * Math.min(1, 1 + s);
    img.data[4 * i + 1] = 255 * (1 - Math.abs(s));
    img.data[4 * i + 2] = 255 * Math.min(1, 1 - s);
    img.data[4 * i + 3] = 255;
  }
  const tmp = new OffscreenCanvas(side, side);
  tmp.getContext("2d").putImageData(img, 0, 0);
  const ctx = $("field").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, ctx.canvas.width, ctx.canvas.height);
  $("stats").textContent =
    `t = ${sim.time().toFixed(2)}   |Φ|² = ${sim.energy().toExponential(4)}   ⟨AΦ,Φ⟩ = ${sim.enstrophy().toExponential(4)}   max|field| = ${peak.toExponential(2)}`;
}

function frame() {
  if (!running) return;
  try {
    sim.advance(2);
    draw();
    requestAnimationFrame(frame);
  } catch (e) {
    running = false;
    $("run").textContent = "Run";
    out(String(e.message ?? e));
  }
}

function plotOrder(r) {
  const ctx = $("plot").getContext("2d");
  const { width: w, height: h } = ctx.canvas;
  ctx.clearRect(0, 0, w, h);
  const pts = [];
  for (let i = 1; i < r.length; i += 2) pts.push([Math.log10(r[i]), Math.log10(r[i + 1])]);
  const xs = pts.map((p) => p[0]), ys = pts.map((p) => p[1]);
  const [x0, x1] = [Math.min(...xs) - 0.1, Math.max(...xs) + 0.1];
  const [y0, y1] = [Math.min(...ys) - 0.2, Math.max(...ys) + 0.2];
  const X = (x) => 30 + (w - 40) * (x - x0) / (x1 - x0);
  const Y = (y) => h - 20 - (h - 30) * (y - y0) / (y1 - y0);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(30, 10, w - 40, h - 30);
  ctx.fillStyle = "#000";
  ctx.fillText("log10 dt", w / 2 - 20, h - 5);
  ctx.fillText("log10 err", 32, 22);
  ctx.strokeStyle = "#c00";
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(X(x), Y(y)) : ctx.moveTo(X(x), Y(y))));
  ctx.stroke();
  pts.forEach(([x, y]) => ctx.fillRect(X(x) - 2, Y(y) - 2, 4, 4));
}

await init();
for (const name of Object.keys(presets)) $("preset").add(new Option(name, name));
$("preset").onchange = () => {
  $("config").value = presets[$("preset").value];
  running = false;
  $("run").textContent = "Run";
  try { fresh(); out(""); } catch (e) { out(e.message); }
};
$("preset").onchange();

$("run").onclick = () => {
  if (!sim) return;
  running = !running;
  $("run").textContent = running ? "Pause" : "Run";
  if (running) requestAnimationFrame(frame);
};
$("reset").onclick = () => {
  try { fresh(); out(""); } catch (e) { out(e.message); }
};
$("check").onclick = () => {
  try { out(conditions($("config").value, 100)); } catch (e) { out(e.message); }
};
$("order").onclick = () => {
  out("running 8 paths, reference 32x finer ...");
  setTimeout(() => {
    try {
      const r = strong_order($("config").value.replace(/cutoff = \d+/, "cutoff = 4"), 5, 8);
      plotOrder(r);
      const rows = [];
      for (let i = 1; i < r.length; i += 2) rows.push(`dt = ${r[i]}  error = ${r[i + 1].toExponential(3)}`);
      out(`strong order ≈ ${r[0].toFixed(3)} (cutoff 4)\n` + rows.join("\n"));
    } catch (e) { out(e.message); }
  }, 20);
};
