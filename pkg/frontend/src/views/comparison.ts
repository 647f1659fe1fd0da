// Comparison tab: same prompt and parameters, one pane with the active
// adapters and one without, rendered side by side.

import { canCompare, PaneResult, runComparison } from "../comparison.js";
import { clear, el, errorBox } from "../dom.js";
import { AppState } from "../state.js";

function paneElement(title: string, result: PaneResult | null): HTMLElement {
  const body =
    result === null
      ? el("p", { className: "muted" }, "not run yet")
      : result.ok
        ? el("pre", { className: "pane-text" }, result.text ?? "")
        : errorBox(`${result.errorCode}: ${result.errorMessage}`);
  return el("div", { className: "pane" }, el("h3", {}, title), body);
}

export class ComparisonView {
  private left: PaneResult | null = null;
  private right: PaneResult | null = null;
  private root: HTMLElement | null = null;

  constructor(private readonly state: AppState) {}

  mount(root: HTMLElement): void {
    this.root = root;
    this.render();
  }

  private async run(prompt: string): Promise<void> {
    const history = this.state.session?.turns ?? [];
    const result = await runComparison(this.state.client, this.state.params, history, prompt);
    this.left = result.withAdapters;
    this.right = result.withoutAdapters;
    this.render();
  }

  render(): void {
    if (!this.root) return;
    clear(this.root);
    const enabled = canCompare(this.state.params);
    const promptBox = el("textarea", { rows: 3, placeholder: "shared prompt..." });
    const runButton = el("button", {
      textContent: "run comparison",
      className: "primary",
      disabled: !enabled,
      title: enabled
        ? "sends two requests: adapters on and off"
        : "activate at least one adapter in the chat tab to compare",
      onclick: () => void this.run((promptBox as HTMLTextAreaElement).value),
    });
    const weights = this.state.params.adapterWeights
      .map((w) => `${w.adapterId}=${w.weight}`)
      .join(", ");
    this.root.append(
      el(
        "div",
        { className: "comparison" },
        el("p", {}, enabled ? `active adapters: ${weights}` : "no active adapters"),
        promptBox,
        runButton,
        el(
          "div",
          { className: "panes" },
          paneElement("with adapters", this.left),
          paneElement("without adapters", this.right),
        ),
      ),
    );
  }
}
