// Pure request-body construction. Comparison mode leans on one rule: the
// with-adapters body is the without-adapters body plus one trailing
// adapter_weights property, so the serialized pair is byte-identical except
// for adapter fields.

import type { ChatParams, Turn } from "./api.js";

export function weightsObject(weights: ChatParams["adapterWeights"]): Record<string, number> {
  const out: Record<string, number> = {};
  for (const { adapterId, weight } of weights) {
    out[adapterId] = weight;
  }
  return out;
}

export function buildMessages(
  params: ChatParams,
  history: Turn[],
  prompt: string,
): Array<{ role: string; content: string }> {
  const messages: Array<{ role: string; content: string }> = [];
  if (params.systemPrompt.trim() !== "") {
    messages.push({ role: "system", content: params.systemPrompt });
  }
  for (const turn of history) {
    messages.push({ role: turn.role, content: turn.content });
  }
  messages.push({ role: "user", content: prompt });
  return messages;
}

/** Chat body for one turn; adapter_weights is omitted when none are active. */
export function chatBody(params: ChatParams, history: Turn[], prompt: string): string {
  const base = baseBody(params, history, prompt);
  if (params.adapterWeights.length > 0) {
    return JSON.stringify({ ...base, adapter_weights: weightsObject(params.adapterWeights) });
  }
  return JSON.stringify(base);
}

function baseBody(params: ChatParams, history: Turn[], prompt: string): Record<string, unknown> {
  return {
    model: params.model,
    messages: buildMessages(params, history, prompt),
    temperature: params.temperature,
    max_tokens: params.maxTokens,
  };
}

export interface ComparisonBodies {
  withAdapters: string;
  withoutAdapters: string;
}

/** The two comparison requests: same prompt and parameters, adapters on/off. */
export function comparisonBodies(
  params: ChatParams,
  history: Turn[],
  prompt: string,
): ComparisonBodies {
  if (params.adapterWeights.length === 0) {
    throw new Error("comparison needs at least one active adapter");
  }
  const base = baseBody(params, history, prompt);
  return {
    withAdapters: JSON.stringify({
      ...base,
      adapter_weights: weightsObject(params.adapterWeights),
    }),
    withoutAdapters: JSON.stringify(base),
  };
}
