// Scripted end-to-end run against live dream servers (started in globalSetup):
// keyboard-driven session, HUD state, done handling, agent-drive, latency.

import { describe, expect, it } from "vitest";

import { DreamClient } from "../src/api";
import { DreamConsole } from "../src/console";
import { hudText } from "../src/render";

const SERVER = process.env.DREAM_SERVER_URL!;
const DONE_SERVER = process.env.DREAM_DONE_SERVER_URL!;

const PNG_MAGIC = "iVBORw0KGgo"; // base64 of the PNG signature

function waitFor(predicate: () => boolean, timeoutMs = 10_000): Promise<void> {
  return new Promise((resolve, reject) => {
    const start = Date.now();
    const poll = () => {
      if (predicate()) {
        resolve();
      } else if (Date.now() - start > timeoutMs) {
        reject(new Error("timed out waiting for condition"));
      } else {
        setTimeout(poll, 20);
      }
    };
    poll();
  });
}

describe("dream console against a live server", () => {
  it("serves meta with the action labels", async () => {
    const meta = await new DreamClient(SERVER).meta();
    expect(meta.action_space).toBe(3);
    expect(meta.labels).toEqual(["left", "stay", "right"]);
    expect(meta.context_capacity).toBeGreaterThan(0);
  });

  it("runs ten keyed actions with HUD updates and valid frames", async () => {
    const dream = new DreamConsole(SERVER, { source: "env", seed: 7 });
    await dream.connect();
    expect(dream.error).toBeNull();
    expect(dream.history[0].frame.startsWith(PNG_MAGIC)).toBe(true);
    expect(hudText(dream)).toContain("step 0");
    expect(hudText(dream)).toContain("reward —");

    const keys = ["ArrowLeft", "ArrowRight", " ", "1", "2", "3", "ArrowLeft", "2", "3", "1"];
    for (const key of keys) {
      if (dream.finished) {
        break; // an untrained model may dream an early episode end
      }
      const before = dream.history.length;
      dream.keyDown(key);
      await waitFor(() => dream.history.length === before + 1 || dream.finished);
    }
    const steps = dream.history.length - 1;
    expect(steps).toBeGreaterThanOrEqual(1);
    for (const entry of dream.history.slice(1)) {
      expect(entry.frame.startsWith(PNG_MAGIC)).toBe(true);
      expect(typeof entry.reward).toBe("number");
      expect(typeof entry.value).toBe("number");
      expect(entry.suggested).toBeGreaterThanOrEqual(0);
      expect(entry.suggested).toBeLessThan(3);
    }
    const hud = hudText(dream);
    expect(hud).toContain(`step ${dream.history[dream.history.length - 1].step}`);
    if (!dream.finished) {
      expect(steps).toBe(10);
    }
  });

  it("handles done on an always-terminating model", async () => {
    const dream = new DreamConsole(DONE_SERVER, { source: "env", seed: 3 });
    await dream.connect();
    dream.keyDown("1");
    await waitFor(() => dream.finished);
    expect(dream.summary()).not.toBeNull();
    expect(hudText(dream)).toContain("episode over");
    const requests = dream.history.length;
    dream.keyDown("1"); // input disabled after done
    await new Promise((r) => setTimeout(r, 100));
    expect(dream.history.length).toBe(requests);

    await dream.dreamAgain();
    expect(dream.finished).toBe(false);
    expect(dream.history).toHaveLength(1);
  });

  it("agent-drive tick sends the server's suggested action", async () => {
    const dream = new DreamConsole(SERVER, { source: "env", seed: 11, tickMs: 100 });
    const client = dream.client;
    const sent: number[] = [];
    const expected: number[] = [];
    const originalStep = client.step.bind(client);
    (client as DreamClient).step = (id: string, action: number) => {
      sent.push(action);
      expected.push(dream.latestSuggestion!);
      return originalStep(id, action);
    };
    await dream.connect();
    dream.toggleAgentDrive();
    await waitFor(() => sent.length >= 3 || dream.finished);
    dream.stopAgentDrive();
    expect(sent.length).toBeGreaterThanOrEqual(1);
    expect(sent).toEqual(expected.slice(0, sent.length));
  });

  it("median round-trip under 500 ms", async () => {
    const client = new DreamClient(SERVER);
    const session = await client.createSession("env", 21);
    const times: number[] = [];
    let id = session.id;
    for (let i = 0; i < 12; i++) {
      const start = performance.now();
      try {
        await client.step(id, i % 3);
      } catch {
        id = (await client.createSession("env", 21 + i)).id; // episode ended early
        continue;
      }
      times.push(performance.now() - start);
    }
    expect(times.length).toBeGreaterThanOrEqual(5);
    times.sort((a, b) => a - b);
    const median = times[Math.floor(times.length / 2)];
    expect(median).toBeLessThan(500);
  });
});
