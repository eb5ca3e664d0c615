// Service client: session creation, the SSE event feed, and the prompt
// control endpoint.  Events are handed to the caller in arrival order; the
// reducer's seq dedupe makes reconnect replays harmless.

import { StreamEvent, SwitchEvent } from "./types.js";

export interface SwitchAck {
  iteration: number;
  boundary_block: number;
  mode: string;
  extra_passes: number;
  conditioning_id: string;
  prompt: string;
  stall_modeled: number;
}

export class SessionClient {
  constructor(readonly baseUrl: string) {}

  async createSession(prompt: string, config: Record<string, unknown> = {},
                      paceSeconds = 0.25): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt, config, pace_seconds: paceSeconds }),
    });
    if (!resp.ok) {
      throw new Error(`create failed: ${resp.status} ${await resp.text()}`);
    }
    const doc = await resp.json();
    return doc.id;
  }

  /** Subscribe to the event stream; EventSource reconnects by itself and the
   *  server replays emitted blocks, so handlers stay idempotent by seq. */
  connect(sessionId: string, onEvent: (e: StreamEvent) => void,
          onError?: (e: Event) => void): () => void {
    const source = new EventSource(`${this.baseUrl}/sessions/${sessionId}/events`);
    source.onmessage = (message) => {
      onEvent(JSON.parse(message.data) as StreamEvent);
    };
    if (onError) {
      source.onerror = onError;
    }
    return () => source.close();
  }

  async submitSwitch(sessionId: string, prompt: string,
                     mode: "cascade" | "recache"): Promise<SwitchAck> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/prompt`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt, mode }),
    });
    if (!resp.ok) {
      throw new Error(`switch failed: ${resp.status} ${await resp.text()}`);
    }
    return (await resp.json()) as SwitchAck;
  }
}

/** The ack and the streamed switch event carry the same record shape. */
export function ackToEvent(ack: SwitchAck, seq: number): SwitchEvent {
  return { type: "switch", seq, ...ack } as SwitchEvent;
}
