import init, { Demo } from "./pkg/levelvote_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("view");
const ctx = canvas.getContext("2d");
let demo = null;

function num(id) {
  return Number($(id).value);
}

function method() {
  return document.querySelector("input[name=method]:checked").value;
}

function generate() {
  if (demo) demo.free();
  demo = new Demo(num("size"), num("nbs"), num("nbld"), num("rmse"), num("rsd"), num("seed"));
  $("k").max = demo.stations().length / 2;
  $("k").value = $("k").max;
  run();
}

function run() {
  $("epsv").value = num("eps").toFixed(3);
  $("kv").value = num("k");
  $("qv").value = num("qstar").toFixed(1);
  const k = num("k");
  let out;
  try {
    switch (method()) {
      case "spm": out = demo.localize_spm(k); break;
      case "adaptive": out = demo.localize_adaptive(num("qstar"), k); break;
      default: out = demo.localize(num("eps"), k);
    }
  } catch (e) {
    $("stats").innerHTML = `<tr><td>error</td><td>${e.message ?? e}</td></tr>`;
    return;
  }
  draw(out, k);
  const rows = [
    ["estimate", `(${out.est_row().toFixed(2)}, ${out.est_col().toFixed(2)})`],
    ["device", `(${demo.ue_row()}, ${demo.ue_col()})`],
    ["error (m)", out.error_m().toFixed(2)],
    ["spread Q (m)", out.quality_q().toFixed(2)],
    ["set size", out.area()],
    ["max votes", `${out.vote_max()} / ${k}`],
    ["ε used", out.eps_used().toFixed(4)],
  ];
  if (out.fallback()) rows.push(["note", "intersection empty, fell back to voting"]);
  if (out.no_support()) rows.push(["note", "no cell received a vote"]);
  $("stats").innerHTML = rows.map(([a, b]) => `<tr><td>${a}</td><td>${b}</td></tr>`).join("");
  out.free();
}

function draw(out, k) {
  const n = demo.size();
  const img = new ImageData(new Uint8ClampedArray(out.pixels()), n, n);
  const off = new OffscreenCanvas(n, n);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  const s = canvas.width / n;
  const c = (i) => (i + 0.5) * s;
  const r = Math.max(4, s * 1.5);
  ctx.lineWidth = 2;
  const bs = demo.stations();
  for (let i = 0; i < bs.length / 2; i++) {
    ctx.strokeStyle = i < k ? "#ff00ff" : "#a070a0";
    ctx.beginPath();
    ctx.arc(c(bs[2 * i + 1]), c(bs[2 * i]), r, 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.strokeStyle = "#00c800";
  line(c(demo.ue_col()) - r, c(demo.ue_row()), c(demo.ue_col()) + r, c(demo.ue_row()));
  line(c(demo.ue_col()), c(demo.ue_row()) - r, c(demo.ue_col()), c(demo.ue_row()) + r);
  ctx.strokeStyle = "#e60000";
  const x = c(out.est_col()), y = c(out.est_row());
  line(x - r, y - r, x + r, y + r);
  line(x - r, y + r, x + r, y - r);
}

function line(x0, y0, x1, y1) {
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.stroke();
}

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const n = demo.size();
  const col = Math.floor(((ev.clientX - rect.left) / rect.width) * n);
  const row = Math.floor(((ev.clientY - rect.top) / rect.height) * n);
  if (demo.set_ue(row, col)) run();
});

for (const id of ["eps", "k", "qstar"]) $(id).addEventListener("input", run);
for (const el of document.querySelectorAll("input[name=method]")) el.addEventListener("change", run);
$("regen").addEventListener("click", generate);

await init();
generate();
