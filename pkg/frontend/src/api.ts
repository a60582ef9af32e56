// Typed client for the dream server's HTTP/JSON protocol.

export interface Meta {
  checkpoint: string;
  env: string;
  tokens_per_frame: number;
  vocab_size: number;
  horizon: number;
  context_capacity: number;
  action_space: number;
  labels: string[];
}

export interface CreateResponse {
  id: string;
  frame: string; // base64 PNG
  action_space: number;
  labels: string[];
  value: number;
  suggested_action: number;
  step: number;
}

export interface StepResponse {
  frame: string;
  reward: number;
  done: number;
  step: number;
  suggested_action: number;
  value: number;
}

export interface ApiError {
  status: number;
  error: string;
  detail: string;
}

export class ServerError extends Error {
  constructor(public readonly info: ApiError) {
    super(`${info.error}: ${info.detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    throw new ServerError({
      status: res.status,
      error: body.error ?? "unknown",
      detail: body.detail ?? `HTTP ${res.status}`,
    });
  }
  return body as T;
}

export class DreamClient {
  constructor(private readonly base: string) {}

  meta(): Promise<Meta> {
    return request<Meta>(`${this.base}/meta`);
  }

  createSession(source: "replay" | "env", seed?: number): Promise<CreateResponse> {
    return request<CreateResponse>(`${this.base}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(seed === undefined ? { source } : { source, seed }),
    });
  }

  step(id: string, action: number): Promise<StepResponse> {
    return request<StepResponse>(`${this.base}/sessions/${id}/actions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action }),
    });
  }

  status(id: string): Promise<{ id: string; status: string; step: number }> {
    return request(`${this.base}/sessions/${id}`);
  }

  deleteSession(id: string): Promise<void> {
    return fetch(`${this.base}/sessions/${id}`, { method: "DELETE" }).then(() => undefined);
  }
}
