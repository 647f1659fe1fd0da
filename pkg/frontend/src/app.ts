// Entry point: login screen, then tabbed playground.

import { ApiClient, ApiError } from "./api.js";
import { clear, el, errorBox } from "./dom.js";
import { AppState, newAppState } from "./state.js";
import { AdminView } from "./views/admin.js";
import { ChatView } from "./views/chat.js";
import { ComparisonView } from "./views/comparison.js";

const TABS = ["chat", "comparison", "admin"] as const;
type Tab = (typeof TABS)[number];

function renderApp(root: HTMLElement, state: AppState): void {
  let active: Tab = "chat";
  const content = el("div", { className: "tab-content" });

  const show = (tab: Tab) => {
    active = tab;
    clear(content);
    for (const button of tabBar.querySelectorAll("button")) {
      button.classList.toggle("active", button.dataset.tab === tab);
    }
    if (tab === "chat") void new ChatView(state).mount(content);
    if (tab === "comparison") new ComparisonView(state).mount(content);
    if (tab === "admin") void new AdminView(state).mount(content);
  };

  const tabBar = el(
    "nav",
    { className: "tab-bar" },
    ...TABS.map((tab) =>
      el("button", {
        textContent: tab,
        "data-tab": tab,
        onclick: () => show(tab),
      }),
    ),
  );

  clear(root);
  root.append(el("header", {}, el("h1", {}, "Adapter Playground"), tabBar), content);
  show(active);
}

function renderLogin(root: HTMLElement): void {
  const errorSlot = el("div", { className: "error-slot" });
  const urlInput = el("input", {
    value: window.location.origin,
    placeholder: "gateway base URL",
  });
  const tokenInput = el("input", { type: "password", placeholder: "API token (lf-...)" });

  const submit = async () => {
    clear(errorSlot);
    const client = new ApiClient(
      (urlInput as HTMLInputElement).value,
      (tokenInput as HTMLInputElement).value,
    );
    try {
      const models = await client.listModels();
      renderApp(root, newAppState(client, models));
    } catch (err) {
      errorSlot.append(
        errorBox(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err)),
      );
    }
  };

  clear(root);
  root.append(
    el(
      "div",
      { className: "login" },
      el("h1", {}, "Adapter Playground"),
      el("p", {}, "Sign in with a gateway API key."),
      errorSlot,
      urlInput,
      tokenInput,
      el("button", { textContent: "sign in", className: "primary", onclick: () => void submit() }),
    ),
  );
}

const rootElement = document.getElementById("app");
if (rootElement) renderLogin(rootElement);
