// Session state machine for the dream console.
//
// All world mutations go through POST /actions; the frame history is exactly
// the sequence of server responses. At most one action request is in flight,
// extra key presses queue client-side, and agent-drive ticks are skipped
// while a request is pending.

import { CreateResponse, DreamClient, ServerError, StepResponse } from "./api";
import { buildKeyMap } from "./keymap";

export type InputMode = "human" | "agent-drive";

export interface HistoryEntry {
  frame: string;          // base64 PNG as delivered by the server
  reward: number | null;  // null for the initial frame
  done: boolean;
  value: number;
  suggested: number;
  step: number;
}

export interface ConsoleOptions {
  source?: "replay" | "env";
  seed?: number;
  tickMs?: number; // agent-drive pace, default 4 requests per second
}

export class DreamConsole {
  readonly client: DreamClient;
  history: HistoryEntry[] = [];
  labels: string[] = [];
  keyMap = new Map<string, number>();
  mode: InputMode = "human";
  sessionId: string | null = null;
  finished = false;
  error: string | null = null;
  viewIndex = 0; // scrubber position into history

  private pending = false;
  private queue: number[] = [];
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly opts: Required<ConsoleOptions>;

  onUpdate: (console: DreamConsole) => void = () => {};

  constructor(client: DreamClient | string, opts: ConsoleOptions = {}) {
    this.client = typeof client === "string" ? new DreamClient(client) : client;
    this.opts = { source: opts.source ?? "env", seed: opts.seed ?? Date.now() % 2 ** 31, tickMs: opts.tickMs ?? 250 };
  }

  get step(): number {
    return this.history.length ? this.history[this.history.length - 1].step : 0;
  }

  get current(): HistoryEntry | null {
    return this.history[this.viewIndex] ?? null;
  }

  get latestSuggestion(): number | null {
    return this.history.length ? this.history[this.history.length - 1].suggested : null;
  }

  async connect(): Promise<void> {
    this.error = null;
    try {
      const res: CreateResponse = await this.client.createSession(this.opts.source, this.opts.seed);
      this.sessionId = res.id;
      this.labels = res.labels;
      this.keyMap = buildKeyMap(res.labels);
      this.history = [{
        frame: res.frame, reward: null, done: false,
        value: res.value, suggested: res.suggested_action, step: 0,
      }];
      this.finished = false;
      this.viewIndex = 0;
      this.queue = [];
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
    }
    this.onUpdate(this);
  }

  /** Start a fresh session with a new seed after an episode ends. */
  async dreamAgain(): Promise<void> {
    this.stopAgentDrive();
    this.opts.seed = (this.opts.seed + 1) % 2 ** 31;
    await this.connect();
  }

  /** Handle a key press; unmapped keys issue no request. */
  keyDown(key: string): void {
    const action = this.keyMap.get(key);
    if (action === undefined || this.finished || this.sessionId === null) {
      return;
    }
    this.enqueue(action);
  }

  enqueue(action: number): void {
    this.queue.push(action);
    void this.drain();
  }

  toggleAgentDrive(): void {
    if (this.mode === "human") {
      this.mode = "agent-drive";
      this.timer = setInterval(() => this.agentTick(), this.opts.tickMs);
    } else {
      this.stopAgentDrive();
    }
    this.onUpdate(this);
  }

  stopAgentDrive(): void {
    this.mode = "human";
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Scrub to a past frame; a read-only view that issues no requests. */
  scrubTo(index: number): void {
    this.viewIndex = Math.max(0, Math.min(index, this.history.length - 1));
    this.onUpdate(this);
  }

  private agentTick(): void {
    if (this.pending || this.finished) {
      return; // keep the 1-in-flight invariant; drop the tick rather than queue
    }
    const suggestion = this.latestSuggestion;
    if (suggestion !== null) {
      this.enqueue(suggestion);
    }
  }

  private async drain(): Promise<void> {
    if (this.pending || this.sessionId === null) {
      return;
    }
    const action = this.queue.shift();
    if (action === undefined) {
      return;
    }
    this.pending = true;
    try {
      const res: StepResponse = await this.client.step(this.sessionId, action);
      this.history.push({
        frame: res.frame, reward: res.reward, done: res.done === 1,
        value: res.value, suggested: res.suggested_action, step: res.step,
      });
      this.viewIndex = this.history.length - 1;
      if (res.done === 1) {
        this.finish();
      }
    } catch (err) {
      if (err instanceof ServerError && err.info.status === 409) {
        this.finish(); // done or capacity: episode is over either way
      } else {
        this.error = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.pending = false;
      this.onUpdate(this);
      if (this.queue.length && !this.finished) {
        void this.drain();
      }
    }
  }

  private finish(): void {
    this.finished = true;
    this.queue = [];
    this.stopAgentDrive();
  }

  /** Episode summary for the HUD once the dream has ended. */
  summary(): { steps: number; totalReward: number } | null {
    if (!this.finished) {
      return null;
    }
    const total = this.history.reduce((acc, h) => acc + (h.reward ?? 0), 0);
    return { steps: this.step, totalReward: total };
  }
}
