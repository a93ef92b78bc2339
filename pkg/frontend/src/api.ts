// Typed client for the retrieval service's JSON API.

export interface Candidate {
  answer_id: string;
  text: string;
  score: number;
}

export interface QueryResponse {
  results: Candidate[];
}

export interface FeedbackResponse {
  position: number;
}

export interface HealthResponse {
  status: string;
  checkpoint_fingerprint: string;
  num_answers: number;
}

export interface ErrorEnvelope {
  error: { code: string; message: string };
}

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

async function post<T>(endpoint: string, path: string, body: unknown): Promise<T> {
  let res: Response;
  try {
    res = await fetch(endpoint + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (err) {
    throw new ApiError(0, "network", err instanceof Error ? err.message : "network failure");
  }
  let payload: unknown = null;
  try {
    payload = await res.json();
  } catch {
    // fall through: non-JSON body handled below
  }
  if (!res.ok) {
    const env = payload as Partial<ErrorEnvelope> | null;
    const code = env?.error?.code ?? "http_error";
    const message = env?.error?.message ?? `request failed with status ${res.status}`;
    throw new ApiError(res.status, code, message);
  }
  return payload as T;
}

export function queryService(
  endpoint: string,
  text: string,
  topK = 3
): Promise<QueryResponse> {
  return post<QueryResponse>(endpoint, "/api/query", { text, top_k: topK });
}

export function sendFeedback(
  endpoint: string,
  query: string,
  answerId: string,
  accepted: boolean
): Promise<FeedbackResponse> {
  return post<FeedbackResponse>(endpoint, "/api/feedback", {
    query,
    answer_id: answerId,
    accepted,
  });
}
