// Glue generated by wasm-bindgen into ./pkg (see the README for the build).
import init, { preview, previewSize, similarityCurve, dob } from "./pkg/distaudit_web.js";

const $ = (id) => document.getElementById(id);
const SCALE = 3;

function show(canvas, rgba, n) {
  canvas.width = n;
  canvas.height = n;
  canvas.style.width = canvas.style.height = `${n * SCALE}px`;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), n, n), 0, 0);
}

function renderPreview() {
  $("preview-err").textContent = "";
  try {
    const n = previewSize();
    const bytes = preview($("spec").value, Number($("seed").value), $("gender").value,
      $("race").value, Number($("subject").value));
    const half = n * n * 4;
    show($("clean"), bytes.slice(0, half), n);
    show($("distorted"), bytes.slice(half), n);
  } catch (e) {
    $("preview-err").textContent = String(e.message ?? e);
  }
}

function renderCurve() {
  $("curve-err").textContent = "";
  $("curve-out").textContent = "computing...";
  // Let the message paint before the synchronous work starts.
  setTimeout(() => {
    try {
      const points = JSON.parse(similarityCurve($("family").value, $("axis").value,
        Number($("seed").value), Number($("subjects").value)));
      const groups = [...new Set(points.map((p) => p.subgroup))];
      const rows = new Map();
      for (const p of points) {
        if (!rows.has(p.intensity)) rows.set(p.intensity, {});
        rows.get(p.intensity)[p.subgroup] = p.mean_similarity;
      }
      let html = "<table><tr><th>intensity</th>" + groups.map((g) => `<th>${g}</th>`).join("") + "</tr>";
      for (const [intensity, by] of rows) {
        html += `<tr><td>${intensity}</td>` + groups.map((g) => `<td>${by[g].toFixed(4)}</td>`).join("") + "</tr>";
      }
      $("curve-out").innerHTML = html + "</table>";
    } catch (e) {
      $("curve-out").textContent = "";
      $("curve-err").textContent = String(e.message ?? e);
    }
  }, 0);
}

function computeDob() {
  const values = $("accs").value.split(/[,\s]+/).filter(Boolean).map(Number);
  try {
    $("dob-out").textContent = `DoB = ${dob(new Float64Array(values)).toFixed(2)}`;
  } catch (e) {
    $("dob-out").textContent = String(e.message ?? e);
  }
}

await init();
$("render").onclick = renderPreview;
$("curve").onclick = renderCurve;
$("dob").onclick = computeDob;
renderPreview();
computeDob();
