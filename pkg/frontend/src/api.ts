/**
 * Typed client for the annotation service's /api/v1 JSON contract.
 * All view state round-trips through these endpoints; the UI never
 * accumulates counts client-side.
 */

export interface SessionSummary {
  session_id: string;
  status: string;
  iteration: number;
  labeled_count: number;
  pool_remaining: number;
  latest_val_accuracy: number | null;
  stop_requested: boolean;
  class_names: string[];
  pending_count: number;
}

export interface PendingItem {
  sample_id: string;
  image_url: string;
  score: number | null;
}

export interface PendingPayload {
  status: string;
  iteration: number;
  class_names?: string[];
  items: PendingItem[];
}

export interface HistoryRow {
  iteration: number;
  val_accuracy: number;
  labeled_count: number;
  timestamp: string;
}

export interface SubmitResult {
  status: string;
  iteration: number;
  labeled_count: number;
}

export type LabelValue = 0 | 1;

export const TERMINAL_STATUSES = ["converged_stopped", "exhausted", "aborted"];

export function isTerminal(status: string): boolean {
  return TERMINAL_STATUSES.includes(status);
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public errorCode: string,
    message: string,
    public details: Record<string, unknown> = {},
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  imageUrl(item: PendingItem): string {
    return this.base + item.image_url;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, "network", `cannot reach service: ${err}`);
    }
    if (!response.ok) {
      let body: Record<string, unknown> = {};
      try {
        body = (await response.json()) as Record<string, unknown>;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(
        response.status,
        (body.error_code as string) ?? `http_${response.status}`,
        (body.message as string) ?? response.statusText,
        (body.details as Record<string, unknown>) ?? {},
      );
    }
    return (await response.json()) as T;
  }

  listSessions(): Promise<SessionSummary[]> {
    return this.request("/api/v1/sessions");
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request(`/api/v1/sessions/${sessionId}`);
  }

  getPending(sessionId: string): Promise<PendingPayload> {
    return this.request(`/api/v1/sessions/${sessionId}/pending`);
  }

  getHistory(sessionId: string): Promise<HistoryRow[]> {
    return this.request(`/api/v1/sessions/${sessionId}/history`);
  }

  submitLabels(
    sessionId: string,
    labels: Record<string, LabelValue>,
    idempotencyKey: string,
  ): Promise<SubmitResult> {
    return this.request(`/api/v1/sessions/${sessionId}/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ labels, idempotency_key: idempotencyKey }),
    });
  }

  stopSession(sessionId: string): Promise<SessionSummary> {
    return this.request(`/api/v1/sessions/${sessionId}/stop`, {
      method: "POST",
    });
  }
}
