/** Typed client for the annotation service HTTP API. */

export interface SessionView {
  session_id: string;
  status: string;
  iteration: number;
  pending_sentences: number;
  pending_labeled: number;
  cost: { sentences: number; tokens: number };
  latest_metrics: CurvePoint | null;
  label_scheme: string[];
  error: string | null;
}

export interface CurvePoint {
  iteration: number;
  sentences: number;
  tokens: number;
  precision: number;
  recall: number;
  f1: number;
}

export interface QueryToken {
  surface: string;
  pos: string | null;
}

export interface QuerySentence {
  sentence_id: number;
  tokens: QueryToken[];
  suggested_tags: string[] | null;
  already_labeled: boolean;
}

export interface QueryBatch {
  status: string;
  batch: QuerySentence[];
}

export interface MetricsResponse {
  curve: CurvePoint[];
  cost: {
    sentences: number;
    tokens: number;
    sentence_deltas: number[];
    token_deltas: number[];
  };
}

export interface DiagnosticsPoint {
  token_index: number;
  x: number;
  y: number;
  cluster: number;
  outlier_score: number;
  in_positive_set: boolean;
}

export interface DiagnosticsResponse {
  available: boolean;
  positive_set_size?: number;
  core_size?: number;
  outlier_size?: number;
  largest_cluster?: number;
  n_clusters?: number;
  cluster_sizes?: Record<string, number>;
  points?: DiagnosticsPoint[];
}

export interface AnnotationSubmission {
  idempotency_key: string;
  annotations: { sentence_id: number; tags: string[] }[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail) detail = JSON.stringify(body.detail);
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(response.status, detail);
}

export class AnnotationApi {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  createSession(corpusId: string, options: Partial<{
    seed: number;
    m: number;
    strategy: string;
    measure: string;
    max_iterations: number;
    prefill_suggestions: boolean;
  }> = {}): Promise<SessionView> {
    return this.post<SessionView>("/sessions", { corpus_id: corpusId, ...options });
  }

  listSessions(): Promise<SessionView[]> {
    return this.get<SessionView[]>("/sessions");
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.get<SessionView>(`/sessions/${sessionId}`);
  }

  getQuery(sessionId: string): Promise<QueryBatch> {
    return this.get<QueryBatch>(`/sessions/${sessionId}/query`);
  }

  submitAnnotations(
    sessionId: string,
    submission: AnnotationSubmission,
  ): Promise<{ accepted: number; batch_complete: boolean; remaining: number; status: string }> {
    return this.post(`/sessions/${sessionId}/annotations`, submission);
  }

  getMetrics(sessionId: string): Promise<MetricsResponse> {
    return this.get<MetricsResponse>(`/sessions/${sessionId}/metrics`);
  }

  getDiagnostics(sessionId: string): Promise<DiagnosticsResponse> {
    return this.get<DiagnosticsResponse>(`/sessions/${sessionId}/diagnostics`);
  }

  /** Poll until the session leaves the "training" state. */
  async waitUntilReady(sessionId: string, timeoutMs = 120_000, intervalMs = 250): Promise<SessionView> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const view = await this.getSession(sessionId);
      if (view.status !== "training") return view;
      if (Date.now() > deadline) throw new Error("timed out waiting for retraining");
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }
}

/** Stable idempotency key for one batch submission attempt. */
export function batchIdempotencyKey(sessionId: string, iteration: number): string {
  return `${sessionId}:batch:${iteration}`;
}
