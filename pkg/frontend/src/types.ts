// Event stream schema (one JSON object per SSE data line) and the view state
// derived from it.

export interface PassEntry {
  block: number;
  pass_index: number;
  noise_level: number;
  worker: number;
  conditioning_id: string;
  queries: number;
  visible_frames: number;
  modeled_cost: number;
}

export interface MetricsEvent {
  type: "metrics";
  seq: number;
  iteration: number;
  entries: PassEntry[];
  modeled_exec: number;
  modeled_comm: number;
  modeled_stall: number;
  modeled_clock: number;
  pool_blocks: number;
  pool_frames: number;
  phase_width: number;
}

export interface PixelPayload {
  data: string; // base64 little-endian float32
  shape: number[];
  dtype: "float32";
}

export interface BlockEvent {
  type: "block";
  seq: number;
  index: number;
  video_frames: number;
  elapsed: number;
  fps: number;
  pixels: PixelPayload;
}

export interface SwitchEvent {
  type: "switch";
  seq: number;
  iteration: number;
  boundary_block: number;
  mode: "cascade" | "recache";
  extra_passes: number;
  conditioning_id: string;
  prompt: string;
  stall_modeled: number;
}

export interface DoneEvent {
  type: "done";
  seq: number;
  blocks: number;
  iterations: number;
  total_modeled_time: number;
  total_passes: number;
}

export type StreamEvent = MetricsEvent | BlockEvent | SwitchEvent | DoneEvent;

export interface Tile {
  index: number;
  fps: number;
  rows: number;
  cols: number;
  values: number[]; // row-major decoded pixels
}

export interface GanttRow {
  iteration: number;
  cells: { block: number; noiseLevel: number; passIndex: number }[];
}

export interface SwitchRow {
  boundaryBlock: number;
  mode: string;
  extraPasses: number;
  prompt: string;
  stall: number;
}

export interface ViewState {
  tiles: Tile[];
  gantt: GanttRow[];
  fps: { block: number; fps: number }[];
  dipBlock: number | null;
  switches: SwitchRow[];
  poolFrames: number;
  modeledClock: number;
  done: boolean;
  totalBlocks: number | null;
  seenSeq: Set<number>;
}
