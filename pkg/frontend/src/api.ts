// Typed client for the gateway HTTP API. Every permission outcome shown in
// the UI is the gateway's answer; nothing here pre-judges authorization.

export interface AdapterWeight {
  adapterId: string;
  weight: number;
}

export interface ChatParams {
  model: string;
  systemPrompt: string;
  temperature: number;
  maxTokens: number;
  adapterWeights: AdapterWeight[];
}

export interface TurnMeta {
  promptTokens: number;
  completionTokens: number;
  finishReason: string;
}

export interface Turn {
  role: "user" | "assistant";
  content: string;
  meta?: TurnMeta;
}

export interface SessionSummary {
  session_id: string;
  title: string;
  created_at: number;
  updated_at: number;
  turn_count: number;
}

export interface SessionDoc {
  session_id: string;
  title: string;
  params: Record<string, unknown>;
  turns: Turn[];
  created_at: number;
  updated_at: number;
}

export interface ChatCompletion {
  id: string;
  model: string;
  choices: Array<{
    index: number;
    message: { role: string; content: string };
    finish_reason: string;
  }>;
  usage: { prompt_tokens: number; completion_tokens: number; total_tokens: number };
}

export interface KeyRecord {
  id: string;
  scope: { kind: string; subject_id: string };
  status: string;
  token_prefix: string;
  created_at: number;
  rate_limit: { capacity: number; refill_per_minute: number };
}

export interface ProjectRecord {
  id: string;
  name: string;
  owner: string;
  members: Record<string, string>;
  adapter_grants: string[];
}

export interface UsageSummary {
  key_id: string;
  request_count: number;
  prompt_tokens: number;
  completion_tokens: number;
}

export interface AgentRecord {
  agent_id: string;
  state: string;
  base_model_id: string;
  active_requests: number;
  max_concurrency: number;
}

/** Gateway error, code and message verbatim from the response body. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;

  constructor(
    baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  /** Raw entry point; bodies are pre-serialized so callers control bytes. */
  async send(method: string, path: string, rawBody?: string): Promise<unknown> {
    const init: RequestInit = {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(rawBody !== undefined ? { "Content-Type": "application/json" } : {}),
      },
      ...(rawBody !== undefined ? { body: rawBody } : {}),
    };
    const response = await this.fetchFn(this.baseUrl + path, init);
    let doc: unknown = null;
    try {
      doc = await response.json();
    } catch {
      doc = null;
    }
    if (!response.ok) {
      const err = (doc as { error?: { code?: string; message?: string } } | null)?.error;
      throw new ApiError(
        response.status,
        err?.code ?? `HTTP_${response.status}`,
        err?.message ?? `request failed with status ${response.status}`,
      );
    }
    return doc;
  }

  private request(method: string, path: string, body?: unknown): Promise<unknown> {
    return this.send(method, path, body === undefined ? undefined : JSON.stringify(body));
  }

  async listModels(): Promise<string[]> {
    const doc = (await this.request("GET", "/v1/models")) as { data: Array<{ id: string }> };
    return doc.data.map((m) => m.id);
  }

  chatRaw(rawBody: string): Promise<ChatCompletion> {
    return this.send("POST", "/v1/chat/completions", rawBody) as Promise<ChatCompletion>;
  }

  async listSessions(): Promise<SessionSummary[]> {
    const doc = (await this.request("GET", "/v1/sessions")) as { sessions: SessionSummary[] };
    return doc.sessions;
  }

  createSession(title: string, params: Record<string, unknown>): Promise<SessionDoc> {
    return this.request("POST", "/v1/sessions", { title, params }) as Promise<SessionDoc>;
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.request("GET", `/v1/sessions/${sessionId}`) as Promise<SessionDoc>;
  }

  updateSession(sessionId: string, patch: Partial<SessionDoc>): Promise<SessionDoc> {
    return this.request("PUT", `/v1/sessions/${sessionId}`, patch) as Promise<SessionDoc>;
  }

  async deleteSession(sessionId: string): Promise<void> {
    await this.request("DELETE", `/v1/sessions/${sessionId}`);
  }

  async listUsers(): Promise<Array<{ id: string; display_name: string }>> {
    const doc = (await this.request("GET", "/admin/users")) as {
      users: Array<{ id: string; display_name: string }>;
    };
    return doc.users;
  }

  async listProjects(): Promise<ProjectRecord[]> {
    const doc = (await this.request("GET", "/admin/projects")) as { projects: ProjectRecord[] };
    return doc.projects;
  }

  createProject(name: string): Promise<ProjectRecord> {
    return this.request("POST", "/admin/projects", { name }) as Promise<ProjectRecord>;
  }

  assignRole(projectId: string, target: string, role: string): Promise<ProjectRecord> {
    return this.request("POST", `/admin/projects/${projectId}/roles`, {
      target,
      role,
    }) as Promise<ProjectRecord>;
  }

  grantAdapter(projectId: string, adapterId: string): Promise<ProjectRecord> {
    return this.request("POST", `/admin/projects/${projectId}/grants`, {
      adapter_id: adapterId,
    }) as Promise<ProjectRecord>;
  }

  async listKeys(): Promise<KeyRecord[]> {
    const doc = (await this.request("GET", "/admin/keys")) as { keys: KeyRecord[] };
    return doc.keys;
  }

  createKey(
    scope: { kind: string; subject_id: string },
    rateLimit?: { capacity: number; refill_per_minute: number },
  ): Promise<{ raw_token: string; key: KeyRecord }> {
    const body: Record<string, unknown> = { scope };
    if (rateLimit) body.rate_limit = rateLimit;
    return this.request("POST", "/admin/keys", body) as Promise<{
      raw_token: string;
      key: KeyRecord;
    }>;
  }

  revokeKey(keyId: string): Promise<KeyRecord> {
    return this.request("DELETE", `/admin/keys/${keyId}`) as Promise<KeyRecord>;
  }

  keyUsage(keyId: string): Promise<UsageSummary> {
    return this.request("GET", `/admin/usage/${keyId}`) as Promise<UsageSummary>;
  }

  async listAgents(): Promise<AgentRecord[]> {
    const doc = (await this.request("GET", "/agents")) as { agents: AgentRecord[] };
    return doc.agents;
  }
}
