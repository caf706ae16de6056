import init, { Viewer } from "./pkg/splatcast_web.js";

const $ = (id) => document.getElementById(id);
let viewer;
let playing = false;

function draw() {
  const t = parseFloat($("time").value);
  const canvas = $("view");
  const ctx = canvas.getContext("2d");
  const px = viewer.render(t, parseFloat($("azimuth").value), parseFloat($("elevation").value));
  ctx.putImageData(new ImageData(new Uint8ClampedArray(px), viewer.width(), viewer.height()), 0, 0);
  const future = viewer.has_forecast() && t > viewer.boundary();
  $("time-label").textContent = t.toFixed(3) + (future ? " forecast" : "");
  $("time-label").className = future ? "future" : "";
  if (future) {
    $("status").textContent = `forecast RMS centre error ${viewer.forecast_error(t).toFixed(4)}`;
  }
}

function load() {
  viewer = new Viewer($("generator").value, 0, 64);
  $("view").width = viewer.width();
  $("view").height = viewer.height();
  $("status").textContent = `${viewer.gaussians()} Gaussians`;
  draw();
}

function tick() {
  if (!playing) return;
  const s = $("time");
  s.value = ((parseFloat(s.value) + 0.005) % 1).toString();
  draw();
  requestAnimationFrame(tick);
}

await init();
load();
$("generator").addEventListener("change", load);
for (const id of ["time", "azimuth", "elevation"]) $(id).addEventListener("input", draw);
$("colors").addEventListener("change", () => { viewer.set_cluster_colors($("colors").checked); draw(); });
$("cluster").addEventListener("click", () => {
  const k = viewer.cluster_motion(parseInt($("clusters").value, 10), 0);
  $("status").textContent = `${k} motion clusters`;
  draw();
});
$("train").addEventListener("click", () => {
  const loss = viewer.train_forecast(2000, 0);
  $("status").textContent = `forecaster trained, final step error ${loss.toExponential(2)}; times after ${viewer.boundary()} now show its rollout`;
  draw();
});
$("play").addEventListener("click", () => { playing = !playing; $("play").textContent = playing ? "pause" : "play"; tick(); });
