/** Typed client for the workbench API. The UI holds no authoritative state:
 * every number it renders comes from one of these calls. */

import type {
  Ablation,
  AnnotateMode,
  CandidatesPayload,
  ClassesPayload,
  DensityPayload,
  EvalPayload,
  LassoPayload,
  PoolPayload,
  ProjectionPayload,
  SessionPayload,
  TrainStatus,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Numbers go through String(), which emits the shortest round-trip decimal:
 * a slider value of 0.3349 reaches the server as exactly "0.3349". */
function query(params: Record<string, number | string | undefined>): string {
  const parts: string[] = [];
  for (const [key, value] of Object.entries(params)) {
    if (value !== undefined) {
      parts.push(`${encodeURIComponent(key)}=${encodeURIComponent(String(value))}`);
    }
  }
  return parts.length ? `?${parts.join("&")}` : "";
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const kind = (body as { error?: string }).error ?? `HTTP${resp.status}`;
      const detail = (body as { detail?: string }).detail ?? resp.statusText;
      throw new ApiError(resp.status, kind, detail);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<{ status: string }> {
    return this.request("/health");
  }

  ingest(manifestPath: string, storePath?: string): Promise<Record<string, number>> {
    return this.post("/ingest", { manifest_path: manifestPath, store_path: storePath });
  }

  unknownPool(): Promise<PoolPayload> {
    return this.request("/pool/unknown");
  }

  projection(seed = 0, method = "tsne"): Promise<ProjectionPayload> {
    return this.request(`/projection${query({ seed, method })}`);
  }

  lasso(polygon: [number, number][], method = "tsne", seed = 0): Promise<LassoPayload> {
    return this.post("/lasso", { polygon, method, seed });
  }

  related(id: string, k = 100): Promise<{ ids: string[] }> {
    return this.request(`/related/${encodeURIComponent(id)}${query({ k })}`);
  }

  createSession(label: string): Promise<SessionPayload> {
    return this.post("/sessions", { label });
  }

  session(id: string): Promise<SessionPayload> {
    return this.request(`/sessions/${id}`);
  }

  selectPhrases(id: string, indices: number[]): Promise<{ phrases: string[]; selected: boolean[] }> {
    return this.post(`/sessions/${id}/phrases/select`, { indices });
  }

  candidates(id: string, ranges?: { ls: number; hs: number; lh: number; hh: number }): Promise<CandidatesPayload> {
    return this.request(`/sessions/${id}/candidates${query(ranges ?? {})}`);
  }

  density(id: string, value: "score" | "relative" = "score"): Promise<DensityPayload> {
    return this.request(`/sessions/${id}/density${query({ value })}`);
  }

  annotate(id: string, mode: AnnotateMode, ids: string[]): Promise<{ accepted: string[]; count: number }> {
    return this.post(`/sessions/${id}/annotate`, { mode, ids });
  }

  finalize(id: string, ablation?: Ablation): Promise<SessionPayload> {
    return this.post(`/sessions/${id}/finalize`, { ablation: ablation ?? null });
  }

  train(sessionIds: string[], hyperparams?: Record<string, number>, ablation?: Ablation): Promise<{ state: string }> {
    return this.post("/train", {
      session_ids: sessionIds,
      hyperparams: hyperparams ?? {},
      ablation: ablation ?? null,
    });
  }

  trainStatus(): Promise<TrainStatus> {
    return this.request("/train/status");
  }

  evaluate(t?: number): Promise<EvalPayload> {
    return this.request(`/eval${query({ t })}`);
  }

  classes(): Promise<ClassesPayload> {
    return this.request("/classes");
  }
}

/** Replay-safe mutation: on failure, re-check whether the intended effect
 * already landed (idempotent against network retries). */
export async function replaySafe<T>(
  mutate: () => Promise<T>,
  landed: () => Promise<T | null>,
): Promise<T> {
  try {
    return await mutate();
  } catch (err) {
    const settled = await landed().catch(() => null);
    if (settled !== null) {
      return settled;
    }
    throw err;
  }
}
