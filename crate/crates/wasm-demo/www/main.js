import init, { Demo } from "./pkg/livervis_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showOutputs() {
  for (const out of document.querySelectorAll("output")) out.value = $(out.htmlFor).value;
}

// Draws an RGBA buffer of size w x h, scaled to fill the canvas.
function blit(canvas, rgba, w, h) {
  const img = new ImageData(new Uint8ClampedArray(rgba), w, h);
  const tmp = new OffscreenCanvas(w, h);
  tmp.getContext("2d").putImageData(img, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function frameLoop(draw) {
  let pending = false;
  return () => {
    if (pending) return;
    pending = true;
    requestAnimationFrame(() => {
      pending = false;
      draw();
    });
  };
}

await init();
const demo = new Demo(64, 3n);
const side = demo.side();
$("z").max = demo.depth() - 1;
$("status").textContent = `abdomen phantom ${side}^3, sphere phantom ${demo.sphere_side()}^3`;

const R = 160;
const drawRender = frameLoop(() => {
  const t = performance.now();
  const rgba = demo.render(R, R, num("yaw"), num("pitch"), num("level"), num("width"), num("brightness"), num("clip"));
  blit($("render"), rgba, R, R);
  $("render-time").textContent = `${R}x${R} in ${(performance.now() - t).toFixed(0)} ms`;
});

const drawSlice = frameLoop(() => {
  blit($("slice"), demo.slice(num("z"), num("slevel"), num("swidth")), side, side);
});

function refine() {
  const r = demo.refine(num("wpos"), num("wbil"), num("iters"));
  const n = demo.sphere_side();
  blit($("truth"), r.truth_slice(), n, n);
  blit($("argmax"), r.argmax_slice(), n, n);
  blit($("refined"), r.refined_slice(), n, n);
  $("dice").textContent = `Dice ${r.dice_before.toFixed(3)} -> ${r.dice_after.toFixed(3)}`;
  r.free();
}

for (const id of ["yaw", "pitch", "level", "width", "brightness", "clip"]) $(id).addEventListener("input", drawRender);
for (const id of ["z", "slevel", "swidth"]) $(id).addEventListener("input", drawSlice);
for (const input of document.querySelectorAll("input")) input.addEventListener("input", showOutputs);
$("run").addEventListener("click", refine);

showOutputs();
drawRender();
drawSlice();
refine();
