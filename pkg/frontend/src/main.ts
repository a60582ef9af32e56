import { DreamConsole } from "./console";
import { legend } from "./keymap";
import { renderAll, Surfaces } from "./render";

function surfaces(): Surfaces {
  return {
    canvas: document.getElementById("frame") as HTMLCanvasElement,
    hud: document.getElementById("hud")!,
    legendBox: document.getElementById("legend")!,
    banner: document.getElementById("banner")!,
    scrubber: document.getElementById("scrubber") as HTMLInputElement,
  };
}

function serverUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("server") ?? window.location.origin;
}

async function boot(): Promise<void> {
  const ui = surfaces();
  const dream = new DreamConsole(serverUrl(), { source: "env" });
  dream.onUpdate = (c) => {
    renderAll(ui, c);
    ui.legendBox.textContent =
      legend(c.labels, c.keyMap).join("   ") + "   |   T: agent-drive   R: dream again";
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
