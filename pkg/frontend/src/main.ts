// Browser shell: one session, one socket, DOM updated only from the event
// handler.  Generation state is never touched except through the control
// endpoint.

import { SessionClient } from "./client.js";
import { renderApp } from "./render.js";
import { initialState, reduce } from "./state.js";
import { StreamEvent } from "./types.js";

const state = initialState();
let client: SessionClient;
let sessionId = "";

function repaint(): void {
  const root = document.getElementById("app");
  if (root) {
    root.innerHTML = renderApp(state);
  }
  const input = document.getElementById("prompt-input") as HTMLInputElement | null;
  const button = document.getElementById("prompt-submit") as HTMLButtonElement | null;
  if (input && button) {
    input.disabled = state.done;
    button.disabled = state.done;
  }
}

function onEvent(event: StreamEvent): void {
  reduce(state, event);
  repaint();
}

function toast(message: string): void {
  const box = document.getElementById("toast");
  if (box) {
    box.textContent = message;
    box.className = "visible";
    setTimeout(() => { box.className = ""; }, 4000);
  }
}

async function submitPrompt(): Promise<void> {
  const input = document.getElementById("prompt-input") as HTMLInputElement;
  const mode = (document.getElementById("prompt-mode") as HTMLSelectElement)
    .value as "cascade" | "recache";
  if (!input.value) {
    return;
  }
  try {
    const ack = await client.submitSwitch(sessionId, input.value, mode);
    toast(`switch queued at block ${ack.boundary_block} ` +
          `(${ack.extra_passes} extra passes)`);
    input.value = "";
  } catch (err) {
    toast(String(err));
  }
}

async function start(): Promise<void> {
  const base = (document.getElementById("service-url") as HTMLInputElement).value
    || `http://${location.hostname}:8600`;
  const prompt = (document.getElementById("start-prompt") as HTMLInputElement).value
    || "a lighthouse in a storm";
  client = new SessionClient(base);
  sessionId = await client.createSession(prompt,
    { total_frames: 39, workers: 2, pass_cost_base: 1.0 });
  client.connect(sessionId, onEvent, () => toast("stream error; reconnecting"));
  repaint();
}

window.addEventListener("load", () => {
  document.getElementById("start")?.addEventListener("click", () => {
    start().catch((err) => toast(String(err)));
  });
  document.getElementById("prompt-submit")?.addEventListener("click", () => {
    void submitPrompt();
  });
});
