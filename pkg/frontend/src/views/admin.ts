// Admin tab: projects, roles, grants, and API keys. Raw tokens render in a
// one-time banner and are never kept anywhere else; after dismissal only the
// key id and prefix remain.

import { ApiError, KeyRecord, ProjectRecord } from "../api.js";
import { clear, el, errorBox } from "../dom.js";
import { AppState } from "../state.js";

export function tokenBanner(rawToken: string): HTMLElement {
  const banner = el(
    "div",
    { className: "token-banner" },
    el("p", {}, "Copy this token now; it is never shown again."),
    el("code", { className: "raw-token" }, rawToken),
    el("button", {
      textContent: "copy",
      onclick: () => void navigator.clipboard?.writeText(rawToken),
    }),
    el("button", {
      textContent: "dismiss",
      onclick: () => banner.remove(),
    }),
  );
  return banner;
}

export class AdminView {
  private keys: KeyRecord[] = [];
  private projects: ProjectRecord[] = [];
  private users: Array<{ id: string; display_name: string }> = [];
  private root: HTMLElement | null = null;
  private errorSlot = el("div", { className: "error-slot" });
  private bannerSlot = el("div", { className: "banner-slot" });

  constructor(private readonly state: AppState) {}

  async mount(root: HTMLElement): Promise<void> {
    this.root = root;
    await this.reload();
  }

  private async reload(): Promise<void> {
    clear(this.errorSlot);
    try {
      [this.keys, this.projects, this.users] = await Promise.all([
        this.state.client.listKeys(),
        this.state.client.listProjects(),
        this.state.client.listUsers(),
      ]);
    } catch (err) {
      this.showError(err);
    }
    this.render();
  }

  private showError(err: unknown): void {
    clear(this.errorSlot);
    this.errorSlot.append(
      errorBox(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err)),
    );
  }

  private async createKey(kind: string, subject: string): Promise<void> {
    try {
      const created = await this.state.client.createKey({ kind, subject_id: subject });
      this.keys = [...this.keys, created.key];
      clear(this.bannerSlot);
      this.bannerSlot.append(tokenBanner(created.raw_token));
      this.render();
    } catch (err) {
      this.showError(err);
    }
  }

  private async revokeKey(row: HTMLElement, keyId: string): Promise<void> {
    try {
      const revoked = await this.state.client.revokeKey(keyId);
      this.keys = this.keys.map((k) => (k.id === keyId ? revoked : k));
      const status = row.querySelector(".key-status");
      if (status) status.textContent = revoked.status;
    } catch (err) {
      this.showError(err);
    }
  }

  private async showUsage(slot: HTMLElement, keyId: string): Promise<void> {
    try {
      const usage = await this.state.client.keyUsage(keyId);
      slot.textContent =
        `${usage.request_count} requests, ` +
        `${usage.prompt_tokens} prompt + ${usage.completion_tokens} completion tokens`;
    } catch (err) {
      this.showError(err);
    }
  }

  private keysSection(): HTMLElement {
    const rows = this.keys.map((key) => {
      const usageSlot = el("span", { className: "usage-slot" });
      const row = el(
        "div",
        { className: "key-row" },
        el("code", {}, key.id),
        el("span", {}, `${key.scope.kind}:${key.scope.subject_id}`),
        el("code", {}, key.token_prefix + "..."),
        el("span", { className: "key-status" }, key.status),
        el("button", { textContent: "usage", onclick: () => void this.showUsage(usageSlot, key.id) }),
        usageSlot,
        el("button", {
          textContent: "revoke",
          onclick: () => void this.revokeKey(row, key.id),
        }),
      );
      return row;
    });

    const kindSelect = el(
      "select",
      {},
      el("option", { value: "USER" }, "USER"),
      el("option", { value: "PROJECT" }, "PROJECT"),
    );
    const subjectInput = el("input", { placeholder: "user or project id" });
    return el(
      "section",
      {},
      el("h3", {}, "API keys"),
      this.bannerSlot,
      ...rows,
      el(
        "div",
        { className: "create-row" },
        kindSelect,
        subjectInput,
        el("button", {
          textContent: "create key",
          onclick: () =>
            void this.createKey(
              (kindSelect as HTMLSelectElement).value,
              (subjectInput as HTMLInputElement).value,
            ),
        }),
      ),
    );
  }

  private projectsSection(): HTMLElement {
    const rows = this.projects.map((project) => {
      const members = Object.entries(project.members)
        .map(([user, role]) => `${user}=${role}`)
        .join(", ");
      const targetInput = el("input", { placeholder: "user id" });
      const roleSelect = el(
        "select",
        {},
        el("option", { value: "MEMBER" }, "MEMBER"),
        el("option", { value: "ADMIN" }, "ADMIN"),
      );
      const grantInput = el("input", { placeholder: "adapters/..." });
      return el(
        "div",
        { className: "project-row" },
        el("h4", {}, `${project.name} (${project.id})`),
        el("p", {}, `members: ${members}`),
        el("p", {}, `grants: ${project.adapter_grants.join(", ") || "none"}`),
        el(
          "div",
          { className: "create-row" },
          targetInput,
          roleSelect,
          el("button", {
            textContent: "assign role",
            onclick: () =>
              void this.state.client
                .assignRole(
                  project.id,
                  (targetInput as HTMLInputElement).value,
                  (roleSelect as HTMLSelectElement).value,
                )
                .then(() => this.reload())
                .catch((err) => this.showError(err)),
          }),
          grantInput,
          el("button", {
            textContent: "grant adapter",
            onclick: () =>
              void this.state.client
                .grantAdapter(project.id, (grantInput as HTMLInputElement).value)
                .then(() => this.reload())
                .catch((err) => this.showError(err)),
          }),
        ),
      );
    });

    const nameInput = el("input", { placeholder: "project name" });
    return el(
      "section",
      {},
      el("h3", {}, "Projects"),
      ...rows,
      el(
        "div",
        { className: "create-row" },
        nameInput,
        el("button", {
          textContent: "create project",
          onclick: () =>
            void this.state.client
              .createProject((nameInput as HTMLInputElement).value)
              .then(() => this.reload())
              .catch((err) => this.showError(err)),
        }),
      ),
    );
  }

  render(): void {
    if (!this.root) return;
    clear(this.root);
    this.root.append(
      this.errorSlot,
      el(
        "section",
        {},
        el("h3", {}, "Users"),
        el("p", {}, this.users.map((u) => `${u.display_name} (${u.id})`).join(", ") || "none"),
      ),
      this.projectsSection(),
      this.keysSection(),
    );
  }
}
