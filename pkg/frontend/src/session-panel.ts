/** One annotation session: phrase checkboxes, Simple/Hard tabs with the
 * candidate grid, threshold sliders wired to live density + candidate
 * refresh, Delete/Reserve actions, and the finalize gate.
 *
 * Every count shown here is the length of a server-returned list; the
 * panel never filters or recomputes candidates locally.
 */

import { ApiClient, replaySafe } from "./api.js";
import { DensityPlot } from "./density.js";
import { ThresholdSliders } from "./sliders.js";
import type { CandidatesPayload, Ranges, SessionPayload } from "./types.js";
import { clear, el } from "./dom.js";

export type Tab = "simple" | "hard";

export class SessionPanel {
  session: SessionPayload;
  tab: Tab = "simple";
  candidates: CandidatesPayload | null = null;
  selection = new Set<string>();

  readonly phraseList: HTMLElement;
  readonly tabBar: HTMLElement;
  readonly countLabel: HTMLElement;
  readonly gridEl: HTMLElement;
  readonly actionButton: HTMLButtonElement;
  readonly finalizeButton: HTMLButtonElement;
  readonly acceptedLabel: HTMLElement;
  readonly sliders: ThresholdSliders;
  readonly density: DensityPlot;
  onFinalized: ((session: SessionPayload) => void) | null = null;

  constructor(
    private readonly client: ApiClient,
    readonly root: HTMLElement,
    session: SessionPayload,
  ) {
    this.session = session;
    root.append(el("h2", { text: `Session ${session.session_id}: ${session.label}` }));

    this.phraseList = el("ul", { class: "phrases" });
    root.append(el("h3", { text: "Feature Phrases" }), this.phraseList);

    const sliderBox = el("div", { class: "sliders" });
    this.sliders = new ThresholdSliders(sliderBox, session.ranges);
    this.sliders.onChange = (ranges) => void this.applyRanges(ranges);
    const densityBox = el("div", { class: "density" });
    this.density = new DensityPlot(densityBox);
    root.append(el("h3", { text: "Similarity Filter" }), sliderBox, densityBox);

    this.tabBar = el("div", { class: "tabs" });
    for (const tab of ["simple", "hard"] as Tab[]) {
      const button = el("button", { text: tab, "data-tab": tab });
      button.addEventListener("click", () => this.switchTab(tab));
      this.tabBar.append(button);
    }
    this.countLabel = el("span", { class: "candidate-count" });
    this.gridEl = el("div", { class: "candidate-grid" });
    this.actionButton = el("button", { class: "action" });
    this.actionButton.addEventListener("click", () => void this.applyAction());
    this.acceptedLabel = el("div", { class: "accepted" });
    this.finalizeButton = el("button", { class: "finalize", text: "Finalize" });
    this.finalizeButton.addEventListener("click", () => void this.finalize());
    root.append(el("h3", { text: "Image Selection" }), this.tabBar, this.countLabel,
                this.gridEl, this.actionButton, this.acceptedLabel,
                this.finalizeButton);

    this.renderPhrases();
    this.renderGrid();
    this.updateGates();
  }

  static async open(client: ApiClient, root: HTMLElement, label: string): Promise<SessionPanel> {
    const session = await client.createSession(label);
    const panel = new SessionPanel(client, root, session);
    await panel.refresh();
    return panel;
  }

  private renderPhrases(): void {
    clear(this.phraseList);
    this.session.phrases.forEach((phrase, i) => {
      const box = el("input", { type: "checkbox", "data-index": String(i) });
      box.checked = this.session.selected[i];
      box.addEventListener("change", () => void this.togglePhrase(i, box.checked));
      this.phraseList.append(el("li", {}, [box, ` ${phrase}`]));
    });
  }

  private phraseSync: Promise<unknown> = Promise.resolve();

  togglePhrase(index: number, checked: boolean): Promise<void> {
    // update locally first so rapid toggles accumulate, then serialize the
    // server writes in order
    this.session.selected = this.session.selected.map(
      (on, i) => (i === index ? checked : on));
    const indices = this.session.selected.flatMap((on, i) => (on ? [i] : []));
    const send = this.phraseSync.then(() => replaySafe(
      () => this.client.selectPhrases(this.session.session_id, indices),
      async () => {
        const current = await this.client.session(this.session.session_id);
        const same = current.selected.every(
          (on, i) => on === indices.includes(i));
        return same ? { phrases: current.phrases, selected: current.selected } : null;
      },
    ).then((payload) => {
      this.session.selected = payload.selected;
      this.updateGates();
    }));
    this.phraseSync = send.catch(() => undefined);
    this.updateGates();
    return send;
  }

  /** Slider/numeric edits land here after the debounce. */
  async applyRanges(ranges: Ranges): Promise<void> {
    this.candidates = await this.client.candidates(this.session.session_id, ranges);
    this.session.ranges = this.candidates.ranges;
    const density = await this.client.density(this.session.session_id);
    this.density.render(density);
    this.selection.clear();
    this.renderGrid();
  }

  async refresh(): Promise<void> {
    this.session = await this.client.session(this.session.session_id);
    this.candidates = await this.client.candidates(this.session.session_id);
    this.density.render(await this.client.density(this.session.session_id));
    this.renderPhrases();
    this.renderGrid();
    this.updateGates();
  }

  switchTab(tab: Tab): void {
    this.tab = tab;
    this.selection.clear();
    this.renderGrid();
  }

  currentCandidates(): string[] {
    if (!this.candidates) {
      return [];
    }
    return this.tab === "simple" ? this.candidates.simple : this.candidates.hard;
  }

  private renderGrid(): void {
    const ids = this.currentCandidates();
    clear(this.gridEl);
    for (const id of ids) {
      const tile = el("figure", { class: "tile", "data-id": id }, [
        el("figcaption", { text: id }),
      ]);
      if (this.selection.has(id)) {
        tile.classList.add("selected");
      }
      tile.addEventListener("click", () => {
        if (this.selection.has(id)) {
          this.selection.delete(id);
          tile.classList.remove("selected");
        } else {
          this.selection.add(id);
          tile.classList.add("selected");
        }
      });
      this.gridEl.append(tile);
    }
    this.gridEl.setAttribute("data-count", String(ids.length));
    this.countLabel.textContent = `${ids.length} candidates`;
    // Delete prunes Simple candidates; Reserve keeps chosen Hard ones
    this.actionButton.textContent = this.tab === "simple" ? "Delete" : "Reserve";
    this.renderAccepted();
  }

  private renderAccepted(): void {
    this.acceptedLabel.textContent =
      `accepted: ${this.session.accepted_simple.length} simple, ` +
      `${this.session.accepted_hard.length} hard`;
  }

  async applyAction(): Promise<void> {
    const mode = this.tab === "simple" ? "delete" : "reserve";
    const ids = [...this.selection];
    const payload = await this.client.annotate(this.session.session_id, mode, ids);
    if (mode === "delete") {
      this.session.accepted_simple = payload.accepted;
    } else {
      this.session.accepted_hard = payload.accepted;
    }
    this.selection.clear();
    this.renderGrid();
    this.updateGates();
  }

  /** Finalize stays disabled until >= 1 phrase and >= 1 accepted image. */
  finalizeEligible(): boolean {
    const anyPhrase = this.session.selected.some(Boolean);
    const anyImage = this.session.accepted_simple.length > 0
      || this.session.accepted_hard.length > 0;
    return anyPhrase && anyImage && this.session.state === "open";
  }

  updateGates(): void {
    this.finalizeButton.disabled = !this.finalizeEligible();
  }

  async finalize(): Promise<void> {
    if (!this.finalizeEligible()) {
      return;
    }
    this.session = await replaySafe(
      () => this.client.finalize(this.session.session_id),
      async () => {
        const current = await this.client.session(this.session.session_id);
        return current.state === "finalized" ? current : null;
      },
    );
    this.updateGates();
    this.onFinalized?.(this.session);
  }
}
