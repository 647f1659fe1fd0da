// Session-backed chat flow: one turn in, one turn out, history persisted
// server-side so sessions survive reloads.

import { ApiClient, ChatParams, SessionDoc, Turn } from "./api.js";
import { chatBody, weightsObject } from "./requests.js";

export const DEFAULT_PARAMS: ChatParams = {
  model: "",
  systemPrompt: "",
  temperature: 1.0,
  maxTokens: 256,
  adapterWeights: [],
};

/** Session params are stored as the wire-shaped snapshot. */
export function paramsToSnapshot(params: ChatParams): Record<string, unknown> {
  return {
    model: params.model,
    system_prompt: params.systemPrompt,
    temperature: params.temperature,
    max_tokens: params.maxTokens,
    adapter_weights: weightsObject(params.adapterWeights),
  };
}

export function paramsFromSnapshot(snapshot: Record<string, unknown>): ChatParams {
  const weights = (snapshot.adapter_weights ?? {}) as Record<string, number>;
  return {
    model: typeof snapshot.model === "string" ? snapshot.model : "",
    systemPrompt: typeof snapshot.system_prompt === "string" ? snapshot.system_prompt : "",
    temperature: typeof snapshot.temperature === "number" ? snapshot.temperature : 1.0,
    maxTokens: typeof snapshot.max_tokens === "number" ? snapshot.max_tokens : 256,
    adapterWeights: Object.entries(weights).map(([adapterId, weight]) => ({
      adapterId,
      weight,
    })),
  };
}

/**
 * Sends one user turn through the gateway and persists the grown history.
 * On failure nothing is appended; the caller shows the error and keeps the
 * prompt so turns always alternate user/assistant.
 */
export async function sendTurn(
  client: ApiClient,
  session: SessionDoc,
  params: ChatParams,
  prompt: string,
): Promise<SessionDoc> {
  const body = chatBody(params, session.turns, prompt);
  const completion = await client.chatRaw(body);
  const choice = completion.choices[0];
  const turns: Turn[] = [
    ...session.turns,
    { role: "user", content: prompt },
    {
      role: "assistant",
      content: choice.message.content,
      meta: {
        promptTokens: completion.usage.prompt_tokens,
        completionTokens: completion.usage.completion_tokens,
        finishReason: choice.finish_reason,
      },
    },
  ];
  return client.updateSession(session.session_id, {
    turns,
    params: paramsToSnapshot(params),
  });
}
