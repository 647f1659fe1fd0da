// @vitest-environment jsdom

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { newAppState } from "../src/state.js";
import { AdminView, tokenBanner } from "../src/views/admin.js";
import { stubFetch } from "./helpers.js";

const RAW_TOKEN = "lf-supersecret0123456789abcdef";

const KEY = {
  id: "key-1",
  scope: { kind: "USER", subject_id: "alice" },
  status: "ACTIVE",
  token_prefix: "lf-",
  created_at: 1,
  rate_limit: { capacity: 60, refill_per_minute: 60 },
};

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

function buttonByText(root: HTMLElement, text: string): HTMLButtonElement {
  const button = [...root.querySelectorAll("button")].find((b) => b.textContent === text);
  if (!button) throw new Error(`no button ${text}`);
  return button as HTMLButtonElement;
}

async function mountAdmin(handler: Parameters<typeof stubFetch>[0]) {
  const stub = stubFetch(handler);
  const client = new ApiClient("http://gw.test", "lf-login", stub.fetchFn);
  const view = new AdminView(newAppState(client, ["llama-7b"]));
  const root = document.createElement("div");
  document.body.innerHTML = "";
  document.body.append(root);
  await view.mount(root);
  await flush();
  return { view, root, ...stub };
}

describe("key administration", () => {
  it("shows a created token exactly once and never persists it", async () => {
    const { view, root } = await mountAdmin((req) => {
      if (req.method === "POST" && req.url.endsWith("/admin/keys")) {
        return { json: { raw_token: RAW_TOKEN, key: KEY } };
      }
      return { json: { keys: [], projects: [], users: [] } };
    });

    buttonByText(root, "create key").click();
    await flush();

    // Rendered once, in the one-time banner only.
    const html = document.body.innerHTML;
    expect(html.split(RAW_TOKEN)).toHaveLength(2);
    expect(root.querySelector(".raw-token")?.textContent).toBe(RAW_TOKEN);

    // The view's own state holds the key record, never the raw token.
    expect(JSON.stringify((view as unknown as { keys: unknown }).keys)).not.toContain(
      RAW_TOKEN,
    );

    buttonByText(root, "dismiss").click();
    expect(document.body.innerHTML).not.toContain(RAW_TOKEN);

    // The key row itself survives with id and prefix only.
    expect(document.body.innerHTML).toContain("key-1");
    expect(document.body.innerHTML).toContain("lf-...");
  });

  it("flips a revoked key row without a reload", async () => {
    const { root, calls } = await mountAdmin((req) => {
      if (req.method === "DELETE") {
        return { json: { ...KEY, status: "REVOKED" } };
      }
      return { json: { keys: [KEY], projects: [], users: [] } };
    });

    const statusBefore = root.querySelector(".key-status")!.textContent;
    expect(statusBefore).toBe("ACTIVE");

    buttonByText(root, "revoke").click();
    await flush();

    expect(root.querySelector(".key-status")!.textContent).toBe("REVOKED");
    const deletes = calls.filter((c) => c.method === "DELETE");
    expect(deletes).toHaveLength(1);
    expect(deletes[0].url).toBe("http://gw.test/admin/keys/key-1");
  });

  it("surfaces admin errors verbatim", async () => {
    const { root } = await mountAdmin((req) => {
      if (req.method === "POST" && req.url.endsWith("/admin/keys")) {
        return {
          status: 403,
          json: { error: { code: "FORBIDDEN", message: "need ADMIN on project 'p1'" } },
        };
      }
      return { json: { keys: [], projects: [], users: [] } };
    });

    buttonByText(root, "create key").click();
    await flush();

    const error = root.querySelector(".error-box");
    expect(error?.textContent).toBe("FORBIDDEN: need ADMIN on project 'p1'");
  });
});

describe("tokenBanner", () => {
  it("removes itself on dismiss", () => {
    document.body.innerHTML = "";
    const banner = tokenBanner(RAW_TOKEN);
    document.body.append(banner);
    expect(document.body.textContent).toContain(RAW_TOKEN);
    buttonByText(document.body, "dismiss").click();
    expect(document.body.textContent).not.toContain(RAW_TOKEN);
  });
});
