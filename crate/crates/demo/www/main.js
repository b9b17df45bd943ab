// Built with:
//   cargo build -p byzfed-demo --target wasm32-unknown-unknown --release
//   wasm-bindgen --target web --out-dir crates/demo/www/pkg \
//       target/wasm32-unknown-unknown/release/byzfed_demo.wasm
import init, { robust_means, ClusterDemo, misclustering_curves } from "./pkg/byzfed_demo.js";

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

// Maps data coordinates to a canvas with a fixed visible box.
function view(canvas, xmin, xmax, ymin, ymax) {
  const sx = canvas.width / (xmax - xmin);
  const sy = canvas.height / (ymax - ymin);
  return {
    x: (v) => (v - xmin) * sx,
    y: (v) => canvas.height - (v - ymin) * sy,
    inv: (px, py) => [xmin + px / sx, ymin + (canvas.height - py) / sy],
  };
}

function legend(el, entries) {
  el.innerHTML = entries
    .map(([name, color]) => `<span><i class="swatch" style="background:${color}"></i>${name}</span>`)
    .join("");
}

// ---- 1. robust means ------------------------------------------------------

const ESTIMATORS = [
  ["sample mean", "#d62728"],
  ["trimmed mean", "#2ca02c"],
  ["coordinate median", "#9467bd"],
  ["geometric median", "#ff7f0e"],
  ["iterative filter", "#1f77b4"],
];

function gaussian() {
  const u = 1 - Math.random();
  const v = Math.random();
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
}

function setupMeans() {
  const canvas = document.getElementById("means");
  const ctx = canvas.getContext("2d");
  const v = view(canvas, -10, 10, -6.25, 6.25);
  const beta = document.getElementById("beta");
  const betaVal = document.getElementById("beta-val");
  let pts = [];

  function cloud() {
    pts = [];
    for (let i = 0; i < 60; i++) pts.push(gaussian(), gaussian());
  }

  function draw() {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.fillStyle = "#888";
    for (let i = 0; i < pts.length; i += 2) {
      ctx.beginPath();
      ctx.arc(v.x(pts[i]), v.y(pts[i + 1]), 2.5, 0, 2 * Math.PI);
      ctx.fill();
    }
    let est;
    try {
      est = robust_means(new Float64Array(pts), Number(beta.value));
    } catch (e) {
      document.getElementById("status").textContent = e.message;
      return;
    }
    ESTIMATORS.forEach(([, color], j) => {
      ctx.strokeStyle = color;
      ctx.lineWidth = 2.5;
      const x = v.x(est[2 * j]);
      const y = v.y(est[2 * j + 1]);
      ctx.beginPath();
      ctx.moveTo(x - 7, y - 7);
      ctx.lineTo(x + 7, y + 7);
      ctx.moveTo(x - 7, y + 7);
      ctx.lineTo(x + 7, y - 7);
      ctx.stroke();
    });
  }

  canvas.addEventListener("click", (ev) => {
    const r = canvas.getBoundingClientRect();
    const [x, y] = v.inv(ev.clientX - r.left, ev.clientY - r.top);
    if (ev.shiftKey) {
      for (let i = 0; i < 10; i++) pts.push(x + 0.3 * gaussian(), y + 0.3 * gaussian());
    } else {
      pts.push(x, y);
    }
    draw();
  });
  beta.addEventListener("input", () => {
    betaVal.textContent = Number(beta.value).toFixed(2);
    draw();
  });
  document.getElementById("means-reset").addEventListener("click", () => {
    cloud();
    draw();
  });
  legend(document.getElementById("means-legend"), ESTIMATORS);
  cloud();
  draw();
}

// ---- 2. clustering --------------------------------------------------------

function setupClustering() {
  const canvas = document.getElementById("cluster");
  const ctx = canvas.getContext("2d");
  const v = view(canvas, -12, 30, -12, 24);
  let demo = null;
  let seed = 1;

  function reset() {
    if (demo) demo.free();
    const outliers = Math.max(0, Math.min(200, Number(document.getElementById("outliers").value) | 0));
    demo = new ClusterDemo(seed, 3, 60, outliers, 8.0);
    demo.reset(seed + 1, Number(document.getElementById("init").value));
    seed += 2;
    draw();
  }

  function draw() {
    const pts = demo.points();
    const labels = demo.labels();
    const truth = demo.true_labels();
    const trimmed = demo.trimmed();
    const centers = demo.centers();
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (let i = 0; i < labels.length; i++) {
      const x = v.x(pts[2 * i]);
      const y = v.y(pts[2 * i + 1]);
      const color = PALETTE[labels[i] % PALETTE.length];
      ctx.strokeStyle = color;
      ctx.fillStyle = color;
      ctx.lineWidth = 1.5;
      if (truth[i] < 0) {
        ctx.beginPath();
        ctx.moveTo(x - 4, y - 4);
        ctx.lineTo(x + 4, y + 4);
        ctx.moveTo(x - 4, y + 4);
        ctx.lineTo(x + 4, y - 4);
        ctx.stroke();
      } else {
        ctx.beginPath();
        ctx.arc(x, y, 3.5, 0, 2 * Math.PI);
        if (trimmed[i]) ctx.stroke();
        else ctx.fill();
      }
    }
    for (let j = 0; j < centers.length / 2; j++) {
      ctx.strokeStyle = PALETTE[j % PALETTE.length];
      ctx.lineWidth = 3;
      ctx.beginPath();
      ctx.arc(v.x(centers[2 * j]), v.y(centers[2 * j + 1]), 9, 0, 2 * Math.PI);
      ctx.stroke();
    }
    document.getElementById("cl-iter").textContent = demo.iteration();
    document.getElementById("cl-a").textContent = demo.misclustering().toFixed(3);
  }

  function step(n) {
    const variant = document.getElementById("variant").value;
    for (let i = 0; i < n; i++) demo.step(variant);
    draw();
  }

  document.getElementById("cl-reset").addEventListener("click", reset);
  document.getElementById("cl-step").addEventListener("click", () => step(1));
  document.getElementById("cl-run").addEventListener("click", () => step(10));
  reset();
}

// ---- 3. misclustering curves ---------------------------------------------

const VARIANTS = [
  ["km", "K-means", "#d62728"],
  ["kgm", "K-geomedians", "#ff7f0e"],
  ["tkm", "Trimmed K-means", "#1f77b4"],
];

function setupCurves() {
  const canvas = document.getElementById("curves");
  const ctx = canvas.getContext("2d");
  const pad = 36;

  function run() {
    const sigma = Number(document.getElementById("c-sigma").value);
    const alpha = Number(document.getElementById("c-alpha").value);
    const iters = Math.max(1, Number(document.getElementById("c-iter").value) | 0);
    const seed = Math.max(0, Number(document.getElementById("c-seed").value) | 0);
    let data;
    try {
      data = JSON.parse(misclustering_curves(seed, sigma, alpha, iters));
    } catch (e) {
      document.getElementById("status").textContent = e.message;
      return;
    }
    document.getElementById("status").textContent = "";
    const w = canvas.width - 2 * pad;
    const h = canvas.height - 2 * pad;
    const top = Math.max(0.05, ...VARIANTS.flatMap(([k]) => data[k]));
    const px = (i) => pad + (w * i) / iters;
    const py = (a) => pad + h - (h * a) / top;

    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#999";
    ctx.lineWidth = 1;
    ctx.strokeRect(pad, pad, w, h);
    ctx.fillStyle = "#444";
    ctx.fillText("0", pad - 12, pad + h + 4);
    ctx.fillText(top.toFixed(2), 2, pad + 4);
    ctx.fillText(String(iters), pad + w - 8, pad + h + 16);
    ctx.fillText("iteration", pad + w / 2 - 20, pad + h + 28);
    for (const [key, , color] of VARIANTS) {
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.beginPath();
      data[key].forEach((a, i) => (i === 0 ? ctx.moveTo(px(i), py(a)) : ctx.lineTo(px(i), py(a))));
      ctx.stroke();
    }
  }

  document.getElementById("c-run").addEventListener("click", run);
  legend(document.getElementById("curves-legend"), VARIANTS.map(([, name, color]) => [name, color]));
  run();
}

init()
  .then(() => {
    document.getElementById("status").textContent = "";
    setupMeans();
    setupClustering();
    setupCurves();
  })
  .catch((e) => {
    document.getElementById("status").textContent = `Could not load the WebAssembly module: ${e}`;
  });
