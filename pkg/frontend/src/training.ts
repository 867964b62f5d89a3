/** Training launcher with progress polling and the results table. */

import { ApiClient, ApiError } from "./api.js";
import type { Ablation, EvalPayload, TrainStatus } from "./types.js";
import { clear, el } from "./dom.js";

export const POLL_INTERVAL_MS = 2000;

export class TrainingController {
  readonly button: HTMLButtonElement;
  readonly progress: HTMLElement;
  readonly message: HTMLElement;
  readonly resultsTable: HTMLTableElement;
  private timer: ReturnType<typeof setInterval> | null = null;
  running = false;
  onComplete: ((status: TrainStatus) => void) | null = null;

  constructor(private readonly client: ApiClient, readonly root: HTMLElement) {
    this.button = el("button", { class: "train", text: "Train Episode" });
    this.progress = el("div", { class: "train-progress", text: "" });
    this.message = el("div", { class: "train-message", text: "" });
    this.resultsTable = el("table", { class: "results" });
    root.append(this.button, this.progress, this.message,
                el("h3", { text: "Results" }), this.resultsTable);
  }

  async start(sessionIds: string[], hyperparams?: Record<string, number>,
              ablation?: Ablation): Promise<void> {
    if (this.running) {
      return;
    }
    this.message.textContent = "";
    try {
      await this.client.train(sessionIds, hyperparams, ablation);
    } catch (err) {
      if (err instanceof ApiError && err.kind === "ConflictError") {
        this.message.textContent = err.message; // names the duplicate label
        return;
      }
      throw err;
    }
    this.running = true;
    this.button.disabled = true;
    this.progress.textContent = "training...";
    this.timer = setInterval(() => void this.poll(), POLL_INTERVAL_MS);
  }

  async poll(): Promise<void> {
    const status = await this.client.trainStatus();
    if (status.state === "running") {
      this.progress.textContent = "training..." ;
      return;
    }
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
    this.running = false;
    this.button.disabled = false;
    if (status.state === "failed") {
      this.progress.textContent = "";
      this.message.textContent = status.error ?? "training failed";
      return;
    }
    this.progress.textContent = "done";
    if (status.eval) {
      this.renderResults(status.eval);
    }
    this.onComplete?.(status);
  }

  renderResults(payload: EvalPayload): void {
    clear(this.resultsTable);
    const head = el("tr", {}, [
      el("th", { text: "class" }), el("th", { text: "AP@0.5" })]);
    this.resultsTable.append(head);
    for (const [label, ap] of Object.entries(payload.per_class_ap)) {
      this.resultsTable.append(el("tr", { "data-class": label }, [
        el("td", { text: label }),
        el("td", { text: String(ap), class: "ap" }),
      ]));
    }
    const means: [string, number | null][] = [
      ["previously known", payload.map_previous_known],
      ["current known", payload.map_current_known],
      ["both", payload.map_both],
    ];
    for (const [name, value] of means) {
      this.resultsTable.append(el("tr", { "data-mean": name }, [
        el("td", { text: `mAP (${name})` }),
        el("td", { text: value === null ? "-" : String(value), class: "map" }),
      ]));
    }
  }
}
