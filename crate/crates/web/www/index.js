import init, { mask_note, rouge, self_debias } from "./pkg/clinsum_web.js";

const $ = (id) => document.getElementById(id);
const esc = (s) => s.replace(/[&<>]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;" })[c]);
const numbers = (s) => s.split(/[\s,]+/).filter(Boolean).map(Number);

function showError(el, e) {
  el.innerHTML = `<p class="err">${esc(String(e))}</p>`;
}

function runMask() {
  $("p-umls-v").textContent = $("p-umls").value;
  $("p-sentence-v").textContent = $("p-sentence").value;
  const out = $("mask-out");
  try {
    const r = JSON.parse(mask_note($("note").value, $("umls").value, $("i2b2").value,
      Number($("p-umls").value), Number($("p-sentence").value), Number($("seed").value)));
    const rows = r.sentences.map((s) =>
      `<tr class="${s.kind}"><td style="text-align:left">${esc(s.text)}</td><td>${s.kind}</td>` +
      `<td>${esc(s.umls.join(", "))}</td><td>${esc(s.i2b2.join(", "))}</td></tr>`).join("");
    out.innerHTML =
      `<table><tr><th>sentence</th><th>decision</th><th>UMLS</th><th>i2b2</th></tr>${rows}</table>` +
      `<p>input</p><pre>${esc(r.input)}</pre><p>target (${r.num_masks} masks)</p><pre>${esc(r.target)}</pre>`;
  } catch (e) {
    showError(out, e);
  }
}

function runRouge() {
  const s = JSON.parse(rouge($("pred").value, $("ref").value, $("stem").checked));
  const pct = (x) => (100 * x).toFixed(2);
  const row = (name, p) => `<tr><td>${name}</td><td>${pct(p.f1)}</td><td>${pct(p.precision)}</td><td>${pct(p.recall)}</td></tr>`;
  $("rouge-out").innerHTML = `<table><tr><th></th><th>F1</th><th>P</th><th>R</th></tr>` +
    row("R-1", s.r1) + row("R-2", s.r2) + row("R-L", s.rl) + `</table>`;
}

function runDebias() {
  $("lambda-v").textContent = $("lambda").value;
  const out = $("debias-out");
  try {
    const target = numbers($("p-target").value);
    const counters = $("p-counter").value.split("\n").filter((l) => l.trim()).flatMap(numbers);
    const adjusted = self_debias(Float64Array.from(target), Float64Array.from(counters), Number($("lambda").value));
    const cells = Array.from(adjusted, (x, i) => `<tr><td>${i}</td><td>${target[i].toFixed(3)}</td><td>${x.toFixed(3)}</td></tr>`);
    out.innerHTML = `<table><tr><th>token</th><th>target</th><th>adjusted</th></tr>${cells.join("")}</table>`;
  } catch (e) {
    showError(out, e);
  }
}

await init();
for (const id of ["note", "umls", "i2b2", "p-umls", "p-sentence", "seed"]) $(id).addEventListener("input", runMask);
for (const id of ["pred", "ref", "stem"]) $(id).addEventListener("input", runRouge);
for (const id of ["p-target", "p-counter", "lambda"]) $(id).addEventListener("input", runDebias);
runMask();
runRouge();
runDebias();
