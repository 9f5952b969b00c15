/** Thin typed client for the restoration service; every call awaits the server. */

import {
  DatePayload,
  FamilyPayload,
  HealthPayload,
  RestorePayload,
  SCHEMA_VERSION,
  SessionPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface RestoreRequest {
  text: string;
  mode?: "parallel" | "greedy";
  k?: number;
  include_undeciphered?: boolean;
}

export interface SessionCreateRequest {
  text: string;
  k?: number;
  include_undeciphered?: boolean;
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    public readonly baseUrl: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T extends { schema_version: number }>(
    path: string,
    init?: RequestInit,
  ): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    let body: unknown;
    try {
      body = await resp.json();
    } catch {
      throw new ApiError(resp.status, `non-JSON response from ${path}`);
    }
    const payload = body as { schema_version?: number; error?: string };
    if (!resp.ok) {
      throw new ApiError(resp.status, payload.error ?? `HTTP ${resp.status}`);
    }
    if (payload.schema_version !== SCHEMA_VERSION) {
      throw new ApiError(
        500,
        `unsupported schema_version ${String(payload.schema_version)}`,
      );
    }
    return body as T;
  }

  private post<T extends { schema_version: number }>(
    path: string,
    payload: unknown,
  ): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<HealthPayload> {
    return this.request<HealthPayload>("/health");
  }

  restore(req: RestoreRequest): Promise<RestorePayload> {
    return this.post<RestorePayload>("/restore", req);
  }

  createSession(req: SessionCreateRequest): Promise<SessionPayload> {
    return this.post<SessionPayload>("/sessions", req);
  }

  getSession(sessionId: string): Promise<SessionPayload> {
    return this.request<SessionPayload>(`/sessions/${sessionId}`);
  }

  accept(sessionId: string, position: number, form: string): Promise<SessionPayload> {
    return this.post<SessionPayload>(`/sessions/${sessionId}/accept`, {
      position,
      form,
    });
  }

  undo(sessionId: string): Promise<SessionPayload> {
    return this.post<SessionPayload>(`/sessions/${sessionId}/undo`, {});
  }

  family(token: string): Promise<FamilyPayload> {
    return this.request<FamilyPayload>(`/families/${encodeURIComponent(token)}`);
  }

  date(text: string): Promise<DatePayload> {
    return this.post<DatePayload>("/date", { text });
  }
}
