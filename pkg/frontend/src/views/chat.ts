// Chat tab: session list, parameter controls, transcript, composer.

import { ApiError, SessionDoc, SessionSummary } from "../api.js";
import { paramsFromSnapshot, paramsToSnapshot, sendTurn } from "../chat.js";
import { clear, el, errorBox } from "../dom.js";
import { AppState } from "../state.js";

export class ChatView {
  private root: HTMLElement | null = null;
  private sessions: SessionSummary[] = [];

  constructor(private readonly state: AppState) {}

  async mount(root: HTMLElement): Promise<void> {
    this.root = root;
    this.sessions = await this.state.client.listSessions();
    if (!this.state.session && this.sessions.length > 0) {
      await this.open(this.sessions[0].session_id);
      return;
    }
    this.render();
  }

  private async open(sessionId: string): Promise<void> {
    const session = await this.state.client.getSession(sessionId);
    this.state.session = session;
    if (Object.keys(session.params).length > 0) {
      this.state.params = paramsFromSnapshot(session.params);
    }
    this.render();
  }

  private async newSession(): Promise<void> {
    const title = `session ${new Date().toISOString().slice(0, 16)}`;
    const session = await this.state.client.createSession(
      title,
      paramsToSnapshot(this.state.params),
    );
    this.state.session = session;
    this.sessions = await this.state.client.listSessions();
    this.render();
  }

  private async removeSession(sessionId: string): Promise<void> {
    await this.state.client.deleteSession(sessionId);
    if (this.state.session?.session_id === sessionId) this.state.session = null;
    this.sessions = await this.state.client.listSessions();
    this.render();
  }

  private async send(prompt: string, errorSlot: HTMLElement): Promise<void> {
    if (!this.state.session || prompt.trim() === "") return;
    clear(errorSlot);
    try {
      this.state.session = await sendTurn(
        this.state.client,
        this.state.session,
        this.state.params,
        prompt,
      );
      this.render();
    } catch (err) {
      if (err instanceof ApiError) {
        errorSlot.append(errorBox(`${err.code}: ${err.message}`));
      } else {
        errorSlot.append(errorBox(String(err)));
      }
    }
  }

  private paramsPanel(): HTMLElement {
    const params = this.state.params;
    const weightRows = el("div", { className: "weight-rows" });
    const renderWeights = () => {
      clear(weightRows);
      params.adapterWeights.forEach((entry, index) => {
        weightRows.append(
          el(
            "div",
            { className: "weight-row" },
            el("input", {
              value: entry.adapterId,
              placeholder: "adapters/...",
              oninput: (e: Event) => {
                entry.adapterId = (e.target as HTMLInputElement).value;
              },
            }),
            el("input", {
              type: "number",
              step: "0.05",
              min: "0",
              value: String(entry.weight),
              oninput: (e: Event) => {
                entry.weight = Number((e.target as HTMLInputElement).value);
              },
            }),
            el("button", {
              textContent: "remove",
              onclick: () => {
                params.adapterWeights.splice(index, 1);
                renderWeights();
              },
            }),
          ),
        );
      });
    };
    renderWeights();

    const temperatureLabel = el("span", {}, params.temperature.toFixed(2));
    return el(
      "div",
      { className: "params-panel" },
      el("h3", {}, "Parameters"),
      el(
        "label",
        {},
        "Model",
        el("select", {
          onchange: (e: Event) => {
            params.model = (e.target as HTMLSelectElement).value;
          },
        }),
      ),
      el("label", {}, "System prompt", el("textarea", {
        value: params.systemPrompt,
        rows: 2,
        oninput: (e: Event) => {
          params.systemPrompt = (e.target as HTMLTextAreaElement).value;
        },
      })),
      el(
        "label",
        {},
        "Temperature ",
        temperatureLabel,
        el("input", {
          type: "range",
          min: "0",
          max: "2",
          step: "0.05",
          value: String(params.temperature),
          oninput: (e: Event) => {
            params.temperature = Number((e.target as HTMLInputElement).value);
            temperatureLabel.textContent = params.temperature.toFixed(2);
          },
        }),
      ),
      el("label", {}, "Max output tokens", el("input", {
        type: "number",
        min: "1",
        value: String(params.maxTokens),
        oninput: (e: Event) => {
          params.maxTokens = Number((e.target as HTMLInputElement).value);
        },
      })),
      el("h4", {}, "Adapter weights"),
      weightRows,
      el("button", {
        textContent: "add adapter",
        onclick: () => {
          params.adapterWeights.push({ adapterId: "", weight: 1.0 });
          this.render();
        },
      }),
    );
  }

  private fillModelSelect(panel: HTMLElement): void {
    const select = panel.querySelector("select");
    if (!select) return;
    for (const model of this.state.models) {
      select.append(el("option", { value: model, selected: model === this.state.params.model }, model));
    }
    if (!this.state.params.model && this.state.models.length > 0) {
      this.state.params.model = this.state.models[0];
    }
  }

  private transcript(session: SessionDoc): HTMLElement {
    const list = el("div", { className: "transcript" });
    for (const turn of session.turns) {
      const meta = turn.meta
        ? el(
            "div",
            { className: "turn-meta" },
            `${turn.meta.completionTokens} tokens, ${turn.meta.finishReason}`,
          )
        : "";
      list.append(el("div", { className: `turn turn-${turn.role}` }, turn.content, meta));
    }
    return list;
  }

  render(): void {
    if (!this.root) return;
    clear(this.root);

    const sidebar = el(
      "div",
      { className: "sidebar" },
      el("button", { textContent: "new session", onclick: () => void this.newSession() }),
      ...this.sessions.map((summary) =>
        el(
          "div",
          {
            className:
              "session-item" +
              (summary.session_id === this.state.session?.session_id ? " active" : ""),
          },
          el("a", {
            textContent: `${summary.title} (${summary.turn_count})`,
            href: "#",
            onclick: (e: Event) => {
              e.preventDefault();
              void this.open(summary.session_id);
            },
          }),
          el("button", {
            textContent: "x",
            className: "delete",
            onclick: () => void this.removeSession(summary.session_id),
          }),
        ),
      ),
    );

    const panel = this.paramsPanel();
    this.fillModelSelect(panel);

    const main = el("div", { className: "chat-main" });
    if (this.state.session) {
      const errorSlot = el("div", { className: "error-slot" });
      const promptBox = el("textarea", { rows: 3, placeholder: "prompt..." });
      main.append(
        this.transcript(this.state.session),
        errorSlot,
        promptBox,
        el("button", {
          textContent: "send",
          className: "primary",
          onclick: () => {
            const prompt = (promptBox as HTMLTextAreaElement).value;
            (promptBox as HTMLTextAreaElement).value = "";
            void this.send(prompt, errorSlot);
          },
        }),
      );
    } else {
      main.append(el("p", {}, "Create a session to start chatting."));
    }

    this.root.append(sidebar, el("div", { className: "chat-body" }, panel, main));
  }
}
