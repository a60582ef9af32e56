import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { CreateResponse, DreamClient, ServerError, StepResponse } from "../src/api";
import { DreamConsole } from "../src/console";
import { buildKeyMap, legend } from "../src/keymap";

type StepCall = { id: string; action: number };

class FakeClient {
  stepCalls: StepCall[] = [];
  created = 0;
  doneAt: number | null = null;
  delayMs = 0;
  private step_ = 0;

  async createSession(_source: string, _seed?: number): Promise<CreateResponse> {
    this.created += 1;
    this.step_ = 0;
    return {
      id: `session-${this.created}`,
      frame: "QUJD",
      action_space: 3,
      labels: ["left", "stay", "right"],
      value: 0.25,
      suggested_action: 2,
      step: 0,
    };
  }

  async step(id: string, action: number): Promise<StepResponse> {
    if (this.doneAt !== null && this.step_ >= this.doneAt) {
      throw new ServerError({ status: 409, error: "done", detail: "finished" });
    }
    this.stepCalls.push({ id, action });
    if (this.delayMs) {
      await new Promise((r) => setTimeout(r, this.delayMs));
    }
    this.step_ += 1;
    const done = this.doneAt !== null && this.step_ >= this.doneAt;
    return {
      frame: "REVG",
      reward: done ? 1 : 0,
      done: done ? 1 : 0,
      step: this.step_,
      suggested_action: (action + 1) % 3,
      value: 0.5,
    };
  }
}

function makeConsole(client: FakeClient, tickMs = 250): DreamConsole {
  return new DreamConsole(client as unknown as DreamClient, { seed: 1, tickMs });
}

describe("key mapping", () => {
  it("maps digits and semantic keys", () => {
    const map = buildKeyMap(["left", "stay", "right"]);
    expect(map.get("1")).toBe(0);
    expect(map.get("2")).toBe(1);
    expect(map.get("3")).toBe(2);
    expect(map.get("ArrowLeft")).toBe(0);
    expect(map.get("ArrowRight")).toBe(2);
    expect(map.get(" ")).toBe(1);
  });

  it("legend names every action", () => {
    const labels = ["left", "stay", "right"];
    const lines = legend(labels, buildKeyMap(labels));
    expect(lines).toHaveLength(3);
    expect(lines[0]).toContain("left");
    expect(lines[0]).toContain("ArrowLeft");
  });
});

describe("DreamConsole", () => {
  it("connect seeds history with the initial frame", async () => {
    const client = new FakeClient();
    const dream = makeConsole(client);
    await dream.connect();
    expect(dream.history).toHaveLength(1);
    expect(dream.history[0].reward).toBeNull();
    expect(dream.history[0].value).toBe(0.25);
    expect(dream.step).toBe(0);
    expect(dream.latestSuggestion).toBe(2);
  });

  it("unmapped keys issue no request", async () => {
    const client = new FakeClient();
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("z");
    await vi.waitFor(() => expect(client.stepCalls).toHaveLength(0));
  });

  it("mapped key posts the action and appends history", async () => {
    const client = new FakeClient();
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("ArrowRight");
    await vi.waitFor(() => expect(dream.history).toHaveLength(2));
    expect(client.stepCalls).toEqual([{ id: "session-1", action: 2 }]);
    expect(dream.history[1].reward).toBe(0);
    expect(dream.history[1].step).toBe(1);
  });

  it("keeps at most one request in flight and preserves order", async () => {
    const client = new FakeClient();
    client.delayMs = 20;
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("1");
    dream.keyDown("2");
    dream.keyDown("3");
    await vi.waitFor(() => expect(dream.history).toHaveLength(4));
    expect(client.stepCalls.map((c) => c.action)).toEqual([0, 1, 2]);
  });

  it("done response finishes the episode and blocks input", async () => {
    const client = new FakeClient();
    client.doneAt = 1;
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("1");
    await vi.waitFor(() => expect(dream.finished).toBe(true));
    expect(dream.summary()).toEqual({ steps: 1, totalReward: 1 });
    dream.keyDown("1");
    await new Promise((r) => setTimeout(r, 10));
    expect(client.stepCalls).toHaveLength(1);
  });

  it("conflict from an already-done session finishes locally", async () => {
    const client = new FakeClient();
    client.doneAt = 0; // every step call conflicts
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("1");
    await vi.waitFor(() => expect(dream.finished).toBe(true));
    expect(dream.error).toBeNull();
  });

  it("dreamAgain starts a fresh session", async () => {
    const client = new FakeClient();
    client.doneAt = 1;
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("1");
    await vi.waitFor(() => expect(dream.finished).toBe(true));
    await dream.dreamAgain();
    expect(client.created).toBe(2);
    expect(dream.finished).toBe(false);
    expect(dream.history).toHaveLength(1);
  });

  it("scrubber is a read-only view over history", async () => {
    const client = new FakeClient();
    const dream = makeConsole(client);
    await dream.connect();
    dream.keyDown("1");
    await vi.waitFor(() => expect(dream.history).toHaveLength(2));
    const before = client.stepCalls.length;
    dream.scrubTo(0);
    expect(dream.current?.step).toBe(0);
    dream.scrubTo(99);
    expect(dream.viewIndex).toBe(1);
    expect(client.stepCalls.length).toBe(before);
  });

  it("surfaces connection failures as a banner error", async () => {
    const failing = {
      createSession: async () => {
        throw new ServerError({ status: 503, error: "down", detail: "no server" });
      },
    };
    const dream = new DreamConsole(failing as unknown as DreamClient, { seed: 1 });
    await dream.connect();
    expect(dream.error).toContain("down");
  });
});

describe("agent drive", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("sends the suggested action on a paced tick", async () => {
    const client = new FakeClient();
    const dream = makeConsole(client, 250);
    await dream.connect();
    dream.toggleAgentDrive();
    expect(dream.mode).toBe("agent-drive");
    await vi.advanceTimersByTimeAsync(250);
    expect(client.stepCalls).toEqual([{ id: "session-1", action: 2 }]);
    // next tick sends the new suggestion from the last response
    await vi.advanceTimersByTimeAsync(250);
    expect(client.stepCalls[1].action).toBe(0);
  });

  it("skips ticks while a request is pending", async () => {
    const client = new FakeClient();
    client.delayMs = 600;
    const dream = makeConsole(client, 250);
    await dream.connect();
    dream.toggleAgentDrive();
    await vi.advanceTimersByTimeAsync(510); // two ticks fire, one request pending
    expect(client.stepCalls).toHaveLength(1);
  });

  it("toggling back returns control to the keyboard", async () => {
    const client = new FakeClient();
    const dream = makeConsole(client, 250);
    await dream.connect();
    dream.toggleAgentDrive();
    dream.toggleAgentDrive();
    expect(dream.mode).toBe("human");
    await vi.advanceTimersByTimeAsync(1000);
    expect(client.stepCalls).toHaveLength(0);
  });

  it("stops on episode end", async () => {
    const client = new FakeClient();
    client.doneAt = 2;
    const dream = makeConsole(client, 100);
    await dream.connect();
    dream.toggleAgentDrive();
    await vi.advanceTimersByTimeAsync(1000);
    expect(dream.finished).toBe(true);
    expect(dream.mode).toBe("human");
    expect(client.stepCalls.length).toBe(2);
  });
});
