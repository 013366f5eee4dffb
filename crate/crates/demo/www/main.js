// Expects the wasm-bindgen output (target web) in ./pkg.
import init, { map_shape, range_doppler_map, doppler_curve, trial_summary } from "./pkg/isac_demo.js";

const $ = (id) => document.getElementById(id);

// Range bins shown; the rest of the zero-padded axis is empty at desk scale.
const RANGE_BINS = 160;

function drawMap() {
  const snr = Number($("rd-snr").value);
  const p = Number($("rd-p").value) / 100;
  $("rd-snr-v").textContent = snr;
  $("rd-p-v").textContent = Math.round(p * 100);
  const [rows, cols, rangeBin] = map_shape();
  $("rd-rmax").textContent = (RANGE_BINS * rangeBin).toFixed(0);
  const map = range_doppler_map(snr, p, BigInt($("rd-seed").value));
  const c = $("rd");
  const ctx = c.getContext("2d");
  const img = ctx.createImageData(c.width, c.height);
  for (let y = 0; y < c.height; y++) {
    // Zero velocity in the middle row.
    const r = (Math.floor((y * rows) / c.height) + rows / 2) % rows;
    for (let x = 0; x < c.width; x++) {
      const k = Math.floor((x * RANGE_BINS) / c.width);
      const t = Math.max(0, 1 + map[r * cols + k] / 40);
      const i = 4 * ((c.height - 1 - y) * c.width + x);
      img.data[i] = 255 * Math.min(1, 2 * t);
      img.data[i + 1] = 255 * Math.max(0, 2 * t - 1);
      img.data[i + 2] = 80 * (1 - t);
      img.data[i + 3] = 255;
    }
  }
  ctx.putImageData(img, 0, 0);
}

function drawDoppler() {
  const v = Number($("dp-v").value);
  $("dp-v-v").textContent = v;
  const pts = doppler_curve(v, -0.5, 0.35, 360);
  const c = $("dp");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  let max = 0;
  for (let i = 0; i < pts.length; i += 3) max = Math.max(max, Math.abs(pts[i + 1]), Math.abs(pts[i + 2]));
  const xy = (a, f) => [((a + Math.PI) / (2 * Math.PI)) * c.width, c.height / 2 - (f / max) * (c.height / 2 - 8)];
  for (const [col, dash] of [[1, []], [2, [6, 4]]]) {
    ctx.beginPath();
    ctx.setLineDash(dash);
    for (let i = 0; i < pts.length; i += 3) {
      const [x, y] = xy(pts[i], pts[i + col]);
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
  ctx.setLineDash([]);
  ctx.fillText(`±${max.toPrecision(4)} Hz`, 4, 12);
}

function runTrial() {
  const rows = JSON.parse(trial_summary(Number($("tr-snr").value), Number($("tr-k").value), BigInt($("tr-seed").value)));
  const cell = (v) => (v === null ? "" : typeof v === "number" ? v.toPrecision(3) : v);
  $("tr").innerHTML =
    "<tr><th>method</th><th>BER</th><th>range NMSE</th><th>velocity NMSE</th><th>detected</th></tr>" +
    rows.map((r) => `<tr><td>${r.method}</td><td>${cell(r.ber)}</td><td>${cell(r.nmse_range)}</td>` +
      `<td>${cell(r.nmse_velocity)}</td><td>${cell(r.detected)}</td></tr>`).join("");
}

await init();
for (const id of ["rd-snr", "rd-p", "rd-seed"]) $(id).addEventListener("input", drawMap);
$("dp-v").addEventListener("input", drawDoppler);
$("tr-run").addEventListener("click", runTrial);
drawMap();
drawDoppler();
runTrial();
