/** Typed client for the recommender session service (HTTP + JSON). */

export interface RankedItem {
  item_id: string;
  name: string;
  prob: number;
}

export interface HistoryEntry {
  entity_id: number;
  name: string;
  position: number;
}

export interface MessageReply {
  response_text: string;
  ranked_items: RankedItem[];
  entity_history: HistoryEntry[];
  debug: { cold_start: boolean; branch: string };
}

export interface SessionView {
  id: string;
  created: number;
  updated: number;
  utterances: { speaker: string; text: string }[];
  entity_history: HistoryEntry[];
}

export interface HealthInfo {
  status: string;
  sessions: number;
  capacity: number;
  config: {
    lambda: number;
    mu: number;
    gamma: number;
    beam: number;
    groups: number;
    length_penalty: number;
    strategy: string;
    variant: string;
  };
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class ServiceClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as T;
  }

  createSession(): Promise<{ id: string }> {
    return this.request("/api/sessions", { method: "POST" });
  }

  sendMessage(sessionId: string, text: string): Promise<MessageReply> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}/messages`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}`);
  }

  getHealth(): Promise<HealthInfo> {
    return this.request("/api/health");
  }
}
