import init, { surrogate_curve, lif_trace, GestureDemo } from "./pkg/srnn_web.js";

const $ = (id) => document.getElementById(id);
const T = 10, CH = 4, HID = 8, IN = 16;

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#aaa";
  ctx.beginPath();
  ctx.moveTo(0, h - 20); ctx.lineTo(w, h - 20);
  ctx.moveTo(w / 2, 0); ctx.lineTo(w / 2, h);
  ctx.stroke();
}

function plot(ctx, xs, ys, xr, ymax, w, h, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = (x + xr) / (2 * xr) * w;
    const py = h - 20 - ys[i] / ymax * (h - 30);
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
}

function drawSurrogate() {
  const alpha = +$("alpha").value;
  $("alpha-v").textContent = alpha.toFixed(1);
  const n = 201, range = 2;
  const v = surrogate_curve(alpha, n, range);
  const xs = v.slice(0, n), cdf = v.slice(n, 2 * n), grad = v.slice(2 * n);
  const c = $("surrogate"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const ymax = Math.max(1, ...grad);
  plot(ctx, xs, cdf, range, ymax, c.width, c.height, "#36c");
  plot(ctx, xs, grad, range, ymax, c.width, c.height, "#c33");
  ctx.fillStyle = "#222";
  ctx.fillText(`peak ${Math.max(...grad).toFixed(3)}`, 8, 14);
}

function drawLif() {
  const current = +$("current").value, tau = +$("tau").value, vth = +$("vth").value;
  $("current-v").textContent = current.toFixed(2);
  $("tau-v").textContent = tau.toFixed(1);
  $("vth-v").textContent = vth.toFixed(2);
  const steps = 40;
  const v = lif_trace(current, tau, vth, steps);
  const us = v.slice(0, steps), spikes = v.slice(steps);
  const c = $("lif"), ctx = c.getContext("2d"), w = c.width, h = c.height;
  ctx.clearRect(0, 0, w, h);
  const ymax = Math.max(vth, ...us) * 1.15;
  const y = (u) => h - 20 - u / ymax * (h - 30);
  const x = (t) => 10 + t / (steps - 1) * (w - 20);
  ctx.setLineDash([4, 4]); ctx.strokeStyle = "#999";
  ctx.beginPath(); ctx.moveTo(0, y(vth)); ctx.lineTo(w, y(vth)); ctx.stroke();
  ctx.setLineDash([]); ctx.strokeStyle = "#36c";
  ctx.beginPath();
  us.forEach((u, t) => (t ? ctx.lineTo(x(t), y(u)) : ctx.moveTo(x(t), y(u))));
  ctx.stroke();
  ctx.fillStyle = "#c33";
  spikes.forEach((s, t) => s && ctx.fillRect(x(t) - 1, h - 16, 3, 12));
  const n = spikes.reduce((a, b) => a + b, 0);
  ctx.fillStyle = "#222";
  ctx.fillText(`${n} spikes in ${steps} steps`, 8, 14);
}

function drawImage(canvas, pixels, size, scale, color) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(size * scale, size * scale);
  for (let yy = 0; yy < size * scale; yy++) {
    for (let xx = 0; xx < size * scale; xx++) {
      const rgb = color(pixels, Math.floor(yy / scale) * size + Math.floor(xx / scale));
      const o = 4 * (yy * size * scale + xx);
      img.data.set([...rgb, 255], o);
    }
  }
  ctx.putImageData(img, 0, 0);
}

function mapGrid(container, maps, step) {
  container.replaceChildren();
  for (let ch = 0; ch < CH; ch++) {
    const off = (step * CH + ch) * HID * HID;
    const plane = maps.slice(off, off + HID * HID);
    const c = document.createElement("canvas");
    c.width = c.height = HID * 8;
    drawImage(c, plane, HID, 8, (p, i) => (p[i] ? [20, 20, 20] : [245, 245, 245]));
    container.appendChild(c);
  }
}

let demo;

function drawMaps() {
  const cls = +$("gesture").value, seed = +$("sample").value, step = +$("step").value;
  $("step-v").textContent = step;
  const frames = demo.input_frames(cls, seed);
  const plane = IN * IN, off = step * 2 * plane;
  const on = frames.slice(off, off + plane), off2 = frames.slice(off + plane, off + 2 * plane);
  drawImage($("input"), on, IN, 8, (p, i) => [on[i] ? 220 : 250, 250 - 30 * (on[i] + off2[i] > 0), off2[i] ? 220 : 250]);
  mapGrid($("maps-with"), demo.hidden_maps(cls, seed, true), step);
  mapGrid($("maps-without"), demo.hidden_maps(cls, seed, false), step);
  const [sw, sn] = demo.sparsity(cls, seed);
  $("sp-with").textContent = `(sparsity ${sw.toFixed(3)})`;
  $("sp-without").textContent = `(sparsity ${sn.toFixed(3)})`;
}

function trainEpoch() {
  const [lw, aw, ln, an] = demo.train_epoch(1e-2);
  $("train-log").textContent =
    `epoch ${demo.epochs()}: with attention loss ${lw.toFixed(3)} acc ${(100 * aw).toFixed(0)}%, ` +
    `without loss ${ln.toFixed(3)} acc ${(100 * an).toFixed(0)}%`;
  drawMaps();
}

async function main() {
  await init();
  demo = new GestureDemo(7);
  for (let k = 0; k < GestureDemo.classes(); k++) {
    $("gesture").add(new Option(GestureDemo.class_name(k), k));
  }
  ["alpha"].forEach((id) => $(id).addEventListener("input", drawSurrogate));
  ["current", "tau", "vth"].forEach((id) => $(id).addEventListener("input", drawLif));
  ["gesture", "sample", "step"].forEach((id) => $(id).addEventListener("input", drawMaps));
  $("train").addEventListener("click", trainEpoch);
  drawSurrogate();
  drawLif();
  drawMaps();
  $("status").textContent = "Ready.";
}

main().catch((e) => ($("status").textContent = `Failed: ${e}`));
