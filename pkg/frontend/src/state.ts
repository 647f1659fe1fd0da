// Shared mutable app state. The login token lives here in memory only; it is
// never written to storage, so no raw credential survives a reload.

import { ApiClient, ChatParams, SessionDoc } from "./api.js";
import { DEFAULT_PARAMS } from "./chat.js";

export interface AppState {
  client: ApiClient;
  models: string[];
  session: SessionDoc | null;
  params: ChatParams;
}

export function newAppState(client: ApiClient, models: string[]): AppState {
  return {
    client,
    models,
    session: null,
    params: { ...DEFAULT_PARAMS, adapterWeights: [] },
  };
}
