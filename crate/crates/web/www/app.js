import init, { scale_curve, qsd_curve, spectrum } from "./pkg/nojump_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function model() {
  return [$("model").value, Math.round(num("size"))];
}

function status(id, text, isError = false) {
  const el = $(id);
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

// Draws each series as a polyline (or dots) with axis ranges and end labels.
function plot(canvas, series, { frame = null, xLabel = "", yLabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 48;
  ctx.clearRect(0, 0, w, h);
  const pts = series.flatMap((s) => s.points);
  if (frame) pts.push([frame[0], frame[2]], [frame[1], frame[3]]);
  if (pts.length === 0) return;
  let [x0, x1, y0, y1] = [Infinity, -Infinity, Infinity, -Infinity];
  for (const [x, y] of pts) {
    x0 = Math.min(x0, x); x1 = Math.max(x1, x);
    y0 = Math.min(y0, y); y1 = Math.max(y1, y);
  }
  if (x1 <= x0) { x0 -= 1; x1 += 1; }
  if (y1 <= y0) { y0 -= 1; y1 += 1; }
  const sx = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);

  if (frame) {
    ctx.fillStyle = "#f3f3f3";
    ctx.fillRect(sx(frame[0]), sy(frame[3]), sx(frame[1]) - sx(frame[0]), sy(frame[2]) - sy(frame[3]));
  }
  ctx.strokeStyle = "#000";
  ctx.beginPath();
  ctx.moveTo(pad, pad); ctx.lineTo(pad, h - pad); ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#000";
  ctx.font = "11px sans-serif";
  ctx.textAlign = "left"; ctx.fillText(x0.toPrecision(4), pad, h - pad + 14);
  ctx.textAlign = "right"; ctx.fillText(x1.toPrecision(4), w - pad, h - pad + 14);
  ctx.fillText(y0.toPrecision(4), pad - 4, h - pad);
  ctx.fillText(y1.toPrecision(4), pad - 4, pad + 4);
  ctx.textAlign = "center"; ctx.fillText(xLabel, w / 2, h - 10);
  ctx.save(); ctx.translate(12, h / 2); ctx.rotate(-Math.PI / 2); ctx.fillText(yLabel, 0, 0); ctx.restore();

  for (const s of series) {
    ctx.strokeStyle = ctx.fillStyle = s.color;
    if (s.dots) {
      for (const [x, y] of s.points) {
        ctx.beginPath(); ctx.arc(sx(x), sy(y), 3, 0, 2 * Math.PI); ctx.fill();
      }
    } else {
      ctx.beginPath();
      s.points.forEach(([x, y], i) => (i ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y))));
      ctx.stroke();
    }
  }
}

function chunks(v, k) {
  const out = [];
  for (let i = 0; i + k <= v.length; i += k) out.push(Array.from(v.slice(i, i + k)));
  return out;
}

function guarded(statusId, f) {
  return () => {
    try {
      const t0 = performance.now();
      const msg = f();
      status(statusId, `${msg} (${(performance.now() - t0).toFixed(0)} ms)`);
    } catch (e) {
      status(statusId, String(e.message ?? e), true);
    }
  };
}

const runScale = guarded("scale-status", () => {
  const [m, n] = model();
  const rows = chunks(scale_curve(m, n, num("q-re"), num("q-im")), 5);
  plot($("scale-plot"), [
    { points: rows.map((r) => [r[0], r[1]]), color: "#1f4e9c" },
    { points: rows.map((r) => [r[0], r[2]]), color: "#c0392b" },
  ], { xLabel: "x", yLabel: "W (blue Re, red Im)" });
  const last = rows[rows.length - 1];
  return `W(0, ${last[0]}) = ${last[1].toPrecision(8)} + ${last[2].toPrecision(8)}i`;
});

const runQsd = guarded("qsd-status", () => {
  const [m, n] = model();
  const v = qsd_curve(m, n);
  const rows = chunks(v.subarray(1), 2);
  const chain = m === "birth_death";
  plot($("qsd-plot"), [{ points: rows, color: "#1f4e9c", dots: chain }], {
    xLabel: chain ? "state" : "x",
    yLabel: chain ? "mass" : "density",
  });
  return `decay parameter lambda0 = ${v[0].toPrecision(10)}`;
});

function showZeros(v, frame) {
  const rows = chunks(v, 3);
  plot($("spectrum-plot"), [{ points: rows.map((r) => [r[0], r[1]]), color: "#c0392b", dots: true }], {
    frame,
    xLabel: "Re q",
    yLabel: "Im q",
  });
  const list = rows.slice(0, 6).map((r) => r[0].toPrecision(7)).join(", ");
  return `${rows.length} zeros${rows.length ? ": " + list + (rows.length > 6 ? ", ..." : "") : ""}`;
}

const runSpectrum = guarded("spectrum-status", () => {
  const [m, n] = model();
  const r = ["re-min", "re-max", "im-min", "im-max"].map(num);
  return showZeros(spectrum(m, n, ...r), r);
});

const runLeading = guarded("spectrum-status", () => {
  const [m, n] = model();
  return showZeros(spectrum(m, n, 0, 0, 0, 0), null);
});

await init();
$("run-scale").onclick = runScale;
$("run-qsd").onclick = runQsd;
$("run-spectrum").onclick = runSpectrum;
$("run-leading").onclick = runLeading;
runScale();
runQsd();
runLeading();
