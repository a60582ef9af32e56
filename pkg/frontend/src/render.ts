// Canvas rendering: nearest-neighbor upscale so the model's actual pixels show.

import { DreamConsole, HistoryEntry } from "./console";

export const SCALE = 8;

export interface Surfaces {
  canvas: HTMLCanvasElement;
  hud: HTMLElement;
  legendBox: HTMLElement;
  banner: HTMLElement;
  scrubber: HTMLInputElement;
}

export function renderFrame(canvas: HTMLCanvasElement, entry: HistoryEntry): void {
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

export function hudText(console: DreamConsole): string {
  const entry = console.current;
  if (!entry) {
    return "connecting...";
  }
  const reward = entry.reward === null ? "—" : entry.reward.toFixed(1);
  const suggestion = console.latestSuggestion;
  const suggestionLabel =
    suggestion === null ? "—" : console.labels[suggestion] ?? String(suggestion);
  const parts = [
    `step ${entry.step}`,
    `reward ${reward}`,
    `value ${entry.value.toFixed(3)}`,
    `agent suggests: ${suggestionLabel}`,
    `mode: ${console.mode}`,
  ];
  const summary = console.summary();
  if (summary) {
    parts.push(`episode over: ${summary.steps} steps, return ${summary.totalReward.toFixed(1)} (press R to dream again)`);
  }
  return parts.join("  |  ");
}

export function renderAll(surfaces: Surfaces, console: DreamConsole): void {
  if (console.error) {
    surfaces.banner.textContent = `server error: ${console.error} (press R to retry)`;
    surfaces.banner.style.display = "block";
  } else {
    surfaces.banner.style.display = "none";
  }
  const entry = console.current;
  if (entry) {
    renderFrame(surfaces.canvas, entry);
  }
  surfaces.hud.textContent = hudText(console);
  surfaces.scrubber.max = String(Math.max(console.history.length - 1, 0));
  surfaces.scrubber.value = String(console.viewIndex);
}
