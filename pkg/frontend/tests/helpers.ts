// Shared fetch stubbing for tests: records every request, answers from a
// handler, never touches the network.

import type { FetchLike } from "../src/api.js";

export interface RecordedRequest {
  url: string;
  method: string;
  headers: Record<string, string>;
  body?: string;
}

export interface StubResponse {
  status?: number;
  json?: unknown;
  text?: string;
}

export function stubFetch(handler: (req: RecordedRequest) => StubResponse): {
  calls: RecordedRequest[];
  fetchFn: FetchLike;
} {
  const calls: RecordedRequest[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    const recorded: RecordedRequest = {
      url,
      method: init.method ?? "GET",
      headers: (init.headers as Record<string, string>) ?? {},
      body: typeof init.body === "string" ? init.body : undefined,
    };
    calls.push(recorded);
    const out = handler(recorded);
    const status = out.status ?? 200;
    const payload = out.text ?? JSON.stringify(out.json ?? null);
    return new Response(payload, {
      status,
      headers: { "content-type": "application/json" },
    });
  };
  return { calls, fetchFn };
}

export function completionDoc(text: string, completionTokens = 3): unknown {
  return {
    id: "chatcmpl-abc123def456",
    object: "chat.completion",
    model: "llama-7b",
    choices: [
      { index: 0, message: { role: "assistant", content: text }, finish_reason: "stop" },
    ],
    usage: { prompt_tokens: 5, completion_tokens: completionTokens, total_tokens: 5 + completionTokens },
  };
}

export function apiErrorDoc(code: string, message: string): unknown {
  return { error: { code, message } };
}
