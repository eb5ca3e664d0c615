// Pure event-log reducer: the view is a function of the received events.
// Events are deduplicated by seq, so a reconnect replay cannot double tiles.

import {
  BlockEvent, GanttRow, StreamEvent, SwitchEvent, Tile, ViewState,
} from "./types.js";

export function initialState(): ViewState {
  return {
    tiles: [],
    gantt: [],
    fps: [],
    dipBlock: null,
    switches: [],
    poolFrames: 0,
    modeledClock: 0,
    done: false,
    totalBlocks: null,
    seenSeq: new Set(),
  };
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

export function decodePixels(base64: string): Float32Array {
  // hand-rolled base64 so the same code runs in browsers and the test runner
  const clean = base64.replace(/=+$/, "");
  const bytes = new Uint8Array(Math.floor((clean.length * 3) / 4));
  let acc = 0;
  let bits = 0;
  let out = 0;
  for (const ch of clean) {
    acc = (acc << 6) | B64.indexOf(ch);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      bytes[out++] = (acc >> bits) & 0xff;
    }
  }
  return new Float32Array(bytes.buffer, 0, out >> 2);
}

function tileFrom(event: BlockEvent): Tile {
  const [rows, cols] = event.pixels.shape;
  return {
    index: event.index,
    fps: event.fps,
    rows,
    cols,
    values: Array.from(decodePixels(event.pixels.data)),
  };
}

function recomputeDip(state: ViewState): void {
  if (state.fps.length === 0) {
    state.dipBlock = null;
    return;
  }
  let low = state.fps[0];
  for (const point of state.fps) {
    if (point.fps < low.fps) {
      low = point;
    }
  }
  state.dipBlock = low.block;
}

export function reduce(state: ViewState, event: StreamEvent): ViewState {
  if (state.seenSeq.has(event.seq)) {
    return state; // replay after reconnect
  }
  state.seenSeq.add(event.seq);
  switch (event.type) {
    case "metrics": {
      const row: GanttRow = {
        iteration: event.iteration,
        cells: event.entries.map((e) => ({
          block: e.block,
          noiseLevel: e.noise_level,
          passIndex: e.pass_index,
        })),
      };
      state.gantt.push(row);
      state.poolFrames = event.pool_frames;
      state.modeledClock = event.modeled_clock;
      break;
    }
    case "block": {
      state.tiles.push(tileFrom(event));
      state.fps.push({ block: event.index, fps: event.fps });
      recomputeDip(state);
      break;
    }
    case "switch": {
      const sw = event as SwitchEvent;
      state.switches.push({
        boundaryBlock: sw.boundary_block,
        mode: sw.mode,
        extraPasses: sw.extra_passes,
        prompt: sw.prompt,
        stall: sw.stall_modeled,
      });
      break;
    }
    case "done": {
      state.done = true;
      state.totalBlocks = event.blocks;
      break;
    }
  }
  return state;
}

export function reduceAll(events: StreamEvent[]): ViewState {
  const state = initialState();
  for (const event of events) {
    reduce(state, event);
  }
  return state;
}

export function ganttWidths(state: ViewState): number[] {
  return state.gantt.map((row) => row.cells.length);
}
