// Pure HTML renderers: same view state in, same markup out.  The browser
// shell (main.ts) only assigns innerHTML and wires the form handlers.

import { Tile, ViewState } from "./types.js";

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// Noise level 0..1000 -> blue (clean) to orange (pure noise).
export function noiseColor(level: number): string {
  const t = Math.max(0, Math.min(1, level / 1000));
  const r = Math.round(40 + 215 * t);
  const g = Math.round(90 + 70 * t);
  const b = Math.round(200 - 160 * t);
  return `rgb(${r},${g},${b})`;
}

function shade(value: number): string {
  // squash unbounded latents into 0..255 grayscale
  const v = Math.round(127.5 * (1 + Math.tanh(value)));
  return `rgb(${v},${v},${v})`;
}

export function renderTile(tile: Tile, cell = 6): string {
  const rects: string[] = [];
  for (let r = 0; r < tile.rows; r++) {
    for (let c = 0; c < tile.cols; c++) {
      const v = tile.values[r * tile.cols + c];
      rects.push(
        `<rect x="${c * cell}" y="${r * cell}" width="${cell}" height="${cell}"` +
        ` fill="${shade(v)}"/>`,
      );
    }
  }
  const w = tile.cols * cell;
  const h = tile.rows * cell;
  return (
    `<figure class="tile" data-block="${tile.index}">` +
    `<svg viewBox="0 0 ${w} ${h}" width="${w}" height="${h}">${rects.join("")}</svg>` +
    `<figcaption>block ${tile.index} · ${tile.fps.toFixed(1)} fps</figcaption>` +
    `</figure>`
  );
}

export function renderTiles(state: ViewState): string {
  return `<div class="tiles">${state.tiles.map((t) => renderTile(t)).join("")}</div>`;
}

export function renderGantt(state: ViewState, cell = 14): string {
  if (state.gantt.length === 0) {
    return `<svg class="gantt" viewBox="0 0 0 0"></svg>`;
  }
  const iterations = state.gantt.length;
  let maxBlock = 0;
  for (const row of state.gantt) {
    for (const c of row.cells) {
      maxBlock = Math.max(maxBlock, c.block);
    }
  }
  const cells: string[] = [];
  for (const row of state.gantt) {
    for (const c of row.cells) {
      cells.push(
        `<rect class="gantt-cell" data-iteration="${row.iteration}"` +
        ` data-block="${c.block}" x="${row.iteration * cell}" y="${c.block * cell}"` +
        ` width="${cell - 1}" height="${cell - 1}" fill="${noiseColor(c.noiseLevel)}">` +
        `<title>iter ${row.iteration} · block ${c.block} · t=${c.noiseLevel}</title>` +
        `</rect>`,
      );
    }
  }
  const w = iterations * cell;
  const h = (maxBlock + 1) * cell;
  return `<svg class="gantt" viewBox="0 0 ${w} ${h}" width="${w}" height="${h}">${cells.join("")}</svg>`;
}

export function renderFpsChart(state: ViewState, width = 360, height = 120): string {
  if (state.fps.length === 0) {
    return `<svg class="fps" viewBox="0 0 ${width} ${height}"></svg>`;
  }
  const maxFps = Math.max(...state.fps.map((p) => p.fps));
  const n = state.fps.length;
  const x = (i: number) => (n === 1 ? 0 : (i * (width - 20)) / (n - 1)) + 10;
  const y = (fps: number) => height - 10 - (fps / maxFps) * (height - 20);
  const points = state.fps.map((p, i) => `${x(i)},${y(p.fps)}`).join(" ");
  let dip = "";
  if (state.dipBlock !== null) {
    const i = state.fps.findIndex((p) => p.block === state.dipBlock);
    if (i >= 0) {
      dip =
        `<circle class="fps-dip" data-block="${state.dipBlock}" cx="${x(i)}"` +
        ` cy="${y(state.fps[i].fps)}" r="4" fill="crimson">` +
        `<title>dip at block ${state.dipBlock}</title></circle>`;
    }
  }
  return (
    `<svg class="fps" viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    `<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="${points}"/>${dip}</svg>`
  );
}

export function renderSwitchLog(state: ViewState): string {
  const rows = state.switches.map(
    (s) =>
      `<tr><td>${s.boundaryBlock}</td><td>${esc(s.mode)}</td>` +
      `<td class="extra-passes">${s.extraPasses}</td>` +
      `<td>${s.stall.toFixed(2)}</td><td>${esc(s.prompt)}</td></tr>`,
  );
  return (
    `<table class="switch-log"><thead><tr><th>boundary</th><th>mode</th>` +
    `<th>extra passes</th><th>stall</th><th>prompt</th></tr></thead>` +
    `<tbody>${rows.join("")}</tbody></table>`
  );
}

export function renderStatus(state: ViewState): string {
  const total = state.totalBlocks === null ? "?" : String(state.totalBlocks);
  const phase = state.done ? "done" : "streaming";
  return (
    `<p class="status">${phase} · ${state.tiles.length}/${total} blocks · ` +
    `pool ${state.poolFrames} frames · clock ${state.modeledClock.toFixed(1)}</p>`
  );
}

export function renderApp(state: ViewState): string {
  return (
    `<section id="status">${renderStatus(state)}</section>` +
    `<section id="gantt"><h2>pipeline occupancy</h2>${renderGantt(state)}</section>` +
    `<section id="fps"><h2>instantaneous FPS</h2>${renderFpsChart(state)}</section>` +
    `<section id="frames"><h2>emitted blocks</h2>${renderTiles(state)}</section>` +
    `<section id="switches"><h2>switch log</h2>${renderSwitchLog(state)}</section>`
  );
}
