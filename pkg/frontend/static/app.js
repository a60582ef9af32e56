// src/api.ts
var ServerError = class extends Error {
  constructor(info) {
    super(`${info.error}: ${info.detail}`);
    this.info = info;
  }
  info;
};
async function request(url, init) {
  const res = await fetch(url, init);
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    throw new ServerError({
      status: res.status,
      error: body.error ?? "unknown",
      detail: body.detail ?? `HTTP ${res.status}`
    });
  }
  return body;
}
var DreamClient = class {
  constructor(base) {
    this.base = base;
  }
  base;
  meta() {
    return request(`${this.base}/meta`);
  }
  createSession(source, seed) {
    return request(`${this.base}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(seed === void 0 ? { source } : { source, seed })
    });
  }
  step(id, action) {
    return request(`${this.base}/sessions/${id}/actions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action })
    });
  }
  status(id) {
    return request(`${this.base}/sessions/${id}`);
  }
  deleteSession(id) {
    return fetch(`${this.base}/sessions/${id}`, { method: "DELETE" }).then(() => void 0);
  }
};

// src/keymap.ts
var LABEL_KEYS = {
  left: ["ArrowLeft", "a"],
  right: ["ArrowRight", "d"],
  up: ["ArrowUp", "w"],
  down: ["ArrowDown", "s"],
  stay: [" ", "ArrowDown"],
  noop: [" "],
  fire: ["f", "Enter"]
};
function buildKeyMap(labels) {
  const map = /* @__PURE__ */ new Map();
  labels.forEach((label, action) => {
    if (action < 10) {
      map.set(String((action + 1) % 10), action);
    }
    for (const key of LABEL_KEYS[label.toLowerCase()] ?? []) {
      if (!map.has(key)) {
        map.set(key, action);
      }
    }
  });
  return map;
}
function legend(labels, map) {
  return labels.map((label, action) => {
    const keys = [...map.entries()].filter(([, a]) => a === action).map(([k]) => prettyKey(k));
    return `${label}: ${keys.join(" / ")}`;
  });
}
function prettyKey(key) {
  return key === " " ? "Space" : key;
}

// src/console.ts
var DreamConsole = class {
  client;
  history = [];
  labels = [];
  keyMap = /* @__PURE__ */ new Map();
  mode = "human";
  sessionId = null;
  finished = false;
  error = null;
  viewIndex = 0;
  // scrubber position into history
  pending = false;
  queue = [];
  timer = null;
  opts;
  onUpdate = () => {
  };
  constructor(client, opts = {}) {
    this.client = typeof client === "string" ? new DreamClient(client) : client;
    this.opts = { source: opts.source ?? "env", seed: opts.seed ?? Date.now() % 2 ** 31, tickMs: opts.tickMs ?? 250 };
  }
  get step() {
    return this.history.length ? this.history[this.history.length - 1].step : 0;
  }
  get current() {
    return this.history[this.viewIndex] ?? null;
  }
  get latestSuggestion() {
    return this.history.length ? this.history[this.history.length - 1].suggested : null;
  }
  async connect() {
    this.error = null;
    try {
      const res = await this.client.createSession(this.opts.source, this.opts.seed);
      this.sessionId = res.id;
      this.labels = res.labels;
      this.keyMap = buildKeyMap(res.labels);
      this.history = [{
        frame: res.frame,
        reward: null,
        done: false,
        value: res.value,
        suggested: res.suggested_action,
        step: 0
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
  async dreamAgain() {
    this.stopAgentDrive();
    this.opts.seed = (this.opts.seed + 1) % 2 ** 31;
    await this.connect();
  }
  /** Handle a key press; unmapped keys issue no request. */
  keyDown(key) {
    const action = this.keyMap.get(key);
    if (action === void 0 || this.finished || this.sessionId === null) {
      return;
    }
    this.enqueue(action);
  }
  enqueue(action) {
    this.queue.push(action);
    void this.drain();
  }
  toggleAgentDrive() {
    if (this.mode === "human") {
      this.mode = "agent-drive";
      this.timer = setInterval(() => this.agentTick(), this.opts.tickMs);
    } else {
      this.stopAgentDrive();
    }
    this.onUpdate(this);
  }
  stopAgentDrive() {
    this.mode = "human";
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
  /** Scrub to a past frame; a read-only view that issues no requests. */
  scrubTo(index) {
    this.viewIndex = Math.max(0, Math.min(index, this.history.length - 1));
    this.onUpdate(this);
  }
  agentTick() {
    if (this.pending || this.finished) {
      return;
    }
    const suggestion = this.latestSuggestion;
    if (suggestion !== null) {
      this.enqueue(suggestion);
    }
  }
  async drain() {
    if (this.pending || this.sessionId === null) {
      return;
    }
    const action = this.queue.shift();
    if (action === void 0) {
      return;
    }
    this.pending = true;
    try {
      const res = await this.client.step(this.sessionId, action);
      this.history.push({
        frame: res.frame,
        reward: res.reward,
        done: res.done === 1,
        value: res.value,
        suggested: res.suggested_action,
        step: res.step
      });
      this.viewIndex = this.history.length - 1;
      if (res.done === 1) {
        this.finish();
      }
    } catch (err) {
      if (err instanceof ServerError && err.info.status === 409) {
        this.finish();
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
  finish() {
    this.finished = true;
    this.queue = [];
    this.stopAgentDrive();
  }
  /** Episode summary for the HUD once the dream has ended. */
  summary() {
    if (!this.finished) {
      return null;
    }
    const total = this.history.reduce((acc, h) => acc + (h.reward ?? 0), 0);
    return { steps: this.step, totalReward: total };
  }
};

// src/render.ts
var SCALE = 8;
function renderFrame(canvas, entry) {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const img = new Image();
  img.onload = () => {
    canvas.width = img.width * SCALE;
    canvas.height = img.height * SCALE;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  };
  img.src = `data:image/png;base64,${entry.frame}`;
}
function hudText(console) {
  const entry = console.current;
  if (!entry) {
    return "connecting...";
  }
  const reward = entry.reward === null ? "\u2014" : entry.reward.toFixed(1);
  const suggestion = console.latestSuggestion;
  const suggestionLabel = suggestion === null ? "\u2014" : console.labels[suggestion] ?? String(suggestion);
  const parts = [
    `step ${entry.step}`,
    `reward ${reward}`,
    `value ${entry.value.toFixed(3)}`,
    `agent suggests: ${suggestionLabel}`,
    `mode: ${console.mode}`
  ];
  const summary = console.summary();
  if (summary) {
    parts.push(`episode over: ${summary.steps} steps, return ${summary.totalReward.toFixed(1)} (press R to dream again)`);
  }
  return parts.join("  |  ");
}
function renderAll(surfaces2, console) {
  if (console.error) {
    surfaces2.banner.textContent = `server error: ${console.error} (press R to retry)`;
    surfaces2.banner.style.display = "block";
  } else {
    surfaces2.banner.style.display = "none";
  }
  const entry = console.current;
  if (entry) {
    renderFrame(surfaces2.canvas, entry);
  }
  surfaces2.hud.textContent = hudText(console);
  surfaces2.scrubber.max = String(Math.max(console.history.length - 1, 0));
  surfaces2.scrubber.value = String(console.viewIndex);
}

// src/main.ts
function surfaces() {
  return {
    canvas: document.getElementById("frame"),
    hud: document.getElementById("hud"),
    legendBox: document.getElementById("legend"),
    banner: document.getElementById("banner"),
    scrubber: document.getElementById("scrubber")
  };
}
function serverUrl() {
  const params = new URLSearchParams(window.location.search);
  return params.get("server") ?? window.location.origin;
}
async function boot() {
  const ui = surfaces();
  const dream = new DreamConsole(serverUrl(), { source: "env" });
  dream.onUpdate = (c) => {
    renderAll(ui, c);
    ui.legendBox.textContent = legend(c.labels, c.keyMap).join("   ") + "   |   T: agent-drive   R: dream again";
  };
  window.addEventListener("keydown", (event) => {
    if (event.key === "t" || event.key === "T") {
      dream.toggleAgentDrive();
    } else if (event.key === "r" || event.key === "R") {
      void dream.dreamAgain();
    } else {
      dream.keyDown(event.key);
    }
  });
  ui.scrubber.addEventListener("input", () => dream.scrubTo(Number(ui.scrubber.value)));
  await dream.connect();
}
void boot();
