/** Wires the views into the single-page annotation workbench. */

import { ApiClient } from "./api.js";
import { ScatterView } from "./scatter.js";
import { SessionPanel } from "./session-panel.js";
import { TrainingController } from "./training.js";
import type { Ablation } from "./types.js";
import { el } from "./dom.js";

const ABLATIONS: Ablation[] = [
  "full", "wo-PhraseSelection", "wo-LLM", "wo-Differentiation", "wo-CS",
];

export class App {
  readonly client: ApiClient;
  readonly scatter: ScatterView;
  readonly training: TrainingController;
  readonly labelInput: HTMLInputElement;
  readonly openButton: HTMLButtonElement;
  readonly ablationSelect: HTMLSelectElement;
  readonly panelHost: HTMLElement;
  readonly classList: HTMLElement;
  panels: SessionPanel[] = [];

  constructor(root: HTMLElement, baseUrl: string, client?: ApiClient) {
    this.client = client ?? new ApiClient(baseUrl);

    const left = el("section", { class: "left" });
    const right = el("section", { class: "right" });
    root.append(left, right);

    this.scatter = new ScatterView(this.client, left);
    this.classList = el("ul", { class: "class-list" });
    left.append(el("h3", { text: "Annotated Classes" }), this.classList);

    this.labelInput = el("input", { type: "text", class: "label-input",
                                    placeholder: "unknown class label" });
    this.openButton = el("button", { text: "Open Session" });
    this.openButton.addEventListener("click", () => void this.openSession());
    right.append(this.labelInput, this.openButton);
    this.panelHost = el("div", { class: "panels" });
    right.append(this.panelHost);

    this.ablationSelect = el("select", { class: "ablation" });
    for (const mode of ABLATIONS) {
      this.ablationSelect.append(el("option", { value: mode, text: mode }));
    }
    right.append(el("label", { text: "mode " }, [this.ablationSelect]));
    this.training = new TrainingController(this.client, right);
    this.training.onComplete = () => void this.refreshClasses();
    this.training.button.addEventListener("click", () => void this.startTraining());
  }

  startTraining(hyperparams?: Record<string, number>): Promise<void> {
    const ablation = this.ablationSelect.value as Ablation;
    return this.training.start(this.finalizedSessionIds(), hyperparams, ablation);
  }

  async boot(method = "tsne", seed = 0): Promise<void> {
    await this.scatter.load(method, seed);
    await this.refreshClasses();
  }

  async openSession(label?: string): Promise<SessionPanel> {
    const name = label ?? this.labelInput.value.trim();
    const host = el("div", { class: "panel" });
    this.panelHost.append(host);
    const panel = await SessionPanel.open(this.client, host, name);
    this.panels.push(panel);
    return panel;
  }

  finalizedSessionIds(): string[] {
    return this.panels
      .filter((p) => p.session.state === "finalized")
      .map((p) => p.session.session_id);
  }

  async refreshClasses(): Promise<void> {
    const payload = await this.client.classes();
    while (this.classList.firstChild) {
      this.classList.removeChild(this.classList.firstChild);
    }
    for (const entry of payload.classes) {
      this.classList.append(el("li", {
        text: `${entry.label} (episode ${entry.episode_id})`,
        "data-label": entry.label,
      }));
    }
  }
}
