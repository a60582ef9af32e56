// Key-to-action mapping derived from the server's action labels.
//
// Digits 1..9 and 0 always map to actions 0..9; recognizable label names get
// ergonomic extras (arrow keys, space).

const LABEL_KEYS: Record<string, string[]> = {
  left: ["ArrowLeft", "a"],
  right: ["ArrowRight", "d"],
  up: ["ArrowUp", "w"],
  down: ["ArrowDown", "s"],
  stay: [" ", "ArrowDown"],
  noop: [" "],
  fire: ["f", "Enter"],
};

export function buildKeyMap(labels: string[]): Map<string, number> {
  const map = new Map<string, number>();
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

export function legend(labels: string[], map: Map<string, number>): string[] {
  return labels.map((label, action) => {
    const keys = [...map.entries()].filter(([, a]) => a === action).map(([k]) => prettyKey(k));
    return `${label}: ${keys.join(" / ")}`;
  });
}

function prettyKey(key: string): string {
  return key === " " ? "Space" : key;
}
