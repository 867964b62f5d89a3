/** Threshold sliders for the Simple and Hard candidate ranges.
 *
 * Invariants enforced in the UI: ls <= hs and lh <= hh (dragging a lower
 * bound past its upper bound drags the upper bound along). Values typed
 * into the numeric inputs are forwarded exactly as parsed, never rounded.
 * Changes are debounced before the server round-trip.
 */

import type { Ranges } from "./types.js";
import { el } from "./dom.js";

export const DEBOUNCE_MS = 150;

const KEYS: (keyof Ranges)[] = ["ls", "hs", "lh", "hh"];
const PAIRS: [keyof Ranges, keyof Ranges][] = [["ls", "hs"], ["lh", "hh"]];

export class ThresholdSliders {
  readonly inputs: Record<keyof Ranges, HTMLInputElement>;
  private values: Ranges;
  private timer: ReturnType<typeof setTimeout> | null = null;
  onChange: ((ranges: Ranges) => void) | null = null;

  constructor(readonly root: HTMLElement, initial: Ranges) {
    this.values = { ...initial };
    this.inputs = {} as Record<keyof Ranges, HTMLInputElement>;
    for (const key of KEYS) {
      const input = el("input", {
        type: "number", step: "any", name: key,
        value: String(initial[key]), class: `threshold-${key}`,
      });
      input.addEventListener("input", () => {
        if (input.value.trim() === "") {
          return; // cleared or invalid text in a number input
        }
        const parsed = Number(input.value);
        if (Number.isFinite(parsed)) {
          this.set(key, parsed);
        }
      });
      this.inputs[key] = input;
      this.root.append(el("label", { text: key }, [input]));
    }
  }

  get ranges(): Ranges {
    return { ...this.values };
  }

  /** Set one bound; the paired bound is clamped along if the order flips. */
  set(key: keyof Ranges, value: number): void {
    this.values[key] = value;
    for (const [lo, hi] of PAIRS) {
      if (this.values[lo] > this.values[hi]) {
        if (key === lo) {
          this.values[hi] = value;
        } else {
          this.values[lo] = value;
        }
      }
    }
    this.sync();
    this.schedule();
  }

  setAll(ranges: Ranges): void {
    this.values = { ...ranges };
    this.sync();
    this.schedule();
  }

  private sync(): void {
    for (const key of KEYS) {
      const text = String(this.values[key]);
      if (this.inputs[key].value !== text) {
        this.inputs[key].value = text;
      }
    }
  }

  private schedule(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      this.onChange?.(this.ranges);
    }, DEBOUNCE_MS);
  }
}
