// Side-by-side mode: exactly two requests, adapters on and off, each pane
// succeeding or failing on its own.

import { ApiClient, ApiError, ChatParams, Turn } from "./api.js";
import { comparisonBodies } from "./requests.js";

export interface PaneResult {
  ok: boolean;
  text?: string;
  completionTokens?: number;
  errorCode?: string;
  errorMessage?: string;
}

export interface ComparisonResult {
  withAdapters: PaneResult;
  withoutAdapters: PaneResult;
}

export function canCompare(params: ChatParams): boolean {
  return params.adapterWeights.length > 0;
}

async function pane(client: ApiClient, rawBody: string): Promise<PaneResult> {
  try {
    const completion = await client.chatRaw(rawBody);
    return {
      ok: true,
      text: completion.choices[0].message.content,
      completionTokens: completion.usage.completion_tokens,
    };
  } catch (err) {
    if (err instanceof ApiError) {
      return { ok: false, errorCode: err.code, errorMessage: err.message };
    }
    return { ok: false, errorCode: "NETWORK", errorMessage: String(err) };
  }
}

export async function runComparison(
  client: ApiClient,
  params: ChatParams,
  history: Turn[],
  prompt: string,
): Promise<ComparisonResult> {
  const bodies = comparisonBodies(params, history, prompt);
  const [withAdapters, withoutAdapters] = await Promise.all([
    pane(client, bodies.withAdapters),
    pane(client, bodies.withoutAdapters),
  ]);
  return { withAdapters, withoutAdapters };
}
