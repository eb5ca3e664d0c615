import { afterEach, describe, expect, it, vi } from "vitest";

import { SessionClient, ackToEvent } from "../src/client.js";
import { initialState, reduce } from "../src/state.js";
import { StreamEvent } from "../src/types.js";

// Ack shape mirrors the service's POST /sessions/{id}/prompt response.
const CASCADE_ACK = {
  iteration: 8,
  boundary_block: 4,
  mode: "cascade",
  extra_passes: 0,
  conditioning_id: "50e4c2d516688ae5",
  prompt: "a calm meadow",
  stall_modeled: 0.0,
};

function jsonResponse(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("session client", () => {
  it("creates a session through POST /sessions", async () => {
    const fetchMock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("http://svc/sessions");
      const body = JSON.parse(String(init?.body));
      expect(body.prompt).toBe("a red cube");
      return jsonResponse({ id: "abc123" }, 201);
    });
    vi.stubGlobal("fetch", fetchMock);
    const client = new SessionClient("http://svc");
    expect(await client.createSession("a red cube")).toBe("abc123");
  });

  it("cascade-mode switch from the UI logs zero extra passes", async () => {
    const fetchMock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("http://svc/sessions/abc123/prompt");
      const body = JSON.parse(String(init?.body));
      expect(body.mode).toBe("cascade");
      return jsonResponse(CASCADE_ACK);
    });
    vi.stubGlobal("fetch", fetchMock);
    const client = new SessionClient("http://svc");
    const ack = await client.submitSwitch("abc123", "a calm meadow", "cascade");
    expect(ack.extra_passes).toBe(0);

    // the ack lands in the switch log exactly like the streamed event
    const state = initialState();
    reduce(state, ackToEvent(ack, 99));
    expect(state.switches).toHaveLength(1);
    expect(state.switches[0].extraPasses).toBe(0);
    expect(state.switches[0].mode).toBe("cascade");
  });

  it("surfaces control-endpoint failures", async () => {
    vi.stubGlobal("fetch", vi.fn(async () =>
      jsonResponse({ detail: "session already finished" }, 409)));
    const client = new SessionClient("http://svc");
    await expect(client.submitSwitch("abc123", "x", "cascade"))
      .rejects.toThrow(/409/);
  });

  it("feeds stream messages to the reducer via EventSource", () => {
    const sources: FakeEventSource[] = [];
    class FakeEventSource {
      onmessage: ((e: { data: string }) => void) | null = null;
      onerror: ((e: Event) => void) | null = null;
      closed = false;
      constructor(readonly url: string) {
        sources.push(this);
      }
      close() {
        this.closed = true;
      }
    }
    vi.stubGlobal("EventSource", FakeEventSource);

    const client = new SessionClient("http://svc");
    const state = initialState();
    const stop = client.connect("abc123", (e: StreamEvent) => reduce(state, e));
    expect(sources[0].url).toBe("http://svc/sessions/abc123/events");

    const block = {
      type: "block", seq: 0, index: 0, video_frames: 12, elapsed: 4.0,
      fps: 3.0, pixels: { data: "", shape: [0, 0], dtype: "float32" },
    };
    sources[0].onmessage!({ data: JSON.stringify(block) });
    sources[0].onmessage!({ data: JSON.stringify(block) }); // replayed
    expect(state.tiles).toHaveLength(1);

    stop();
    expect(sources[0].closed).toBe(true);
  });
});
