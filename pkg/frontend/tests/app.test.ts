import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";

function makeApp() {
  const calls: { path: string; body?: any }[] = [];
  const fetchFn = async (url: string, init?: RequestInit) => {
    const path = new URL(url, "http://x").pathname;
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    calls.push({ path, body });
    const payloads: Record<string, unknown> = {
      "/train": { state: "running" },
      "/train/status": { state: "done", report: {}, eval: null, error: null },
      "/classes": { classes: [], episodes: [] },
    };
    return new Response(JSON.stringify(payloads[path] ?? {}), { status: 200 });
  };
  const client = new ApiClient("http://test", fetchFn);
  const root = document.createElement("div");
  const app = new App(root, "http://test", client);
  return { app, calls };
}

describe("App", () => {
  it("offers every ablation mode in the dropdown", () => {
    const { app } = makeApp();
    const options = [...app.ablationSelect.querySelectorAll("option")].map(
      (o) => o.value);
    expect(options).toEqual(
      ["full", "wo-PhraseSelection", "wo-LLM", "wo-Differentiation", "wo-CS"]);
  });

  it("train request carries the selected ablation flag", async () => {
    const { app, calls } = makeApp();
    app.ablationSelect.value = "wo-CS";
    await app.startTraining({ epochs: 2 });
    const train = calls.find((c) => c.path === "/train");
    expect(train?.body.ablation).toBe("wo-CS");
    expect(train?.body.hyperparams).toEqual({ epochs: 2 });
    expect(train?.body.session_ids).toEqual([]);
  });

  it("train button click starts a job with the dropdown's mode", async () => {
    const { app, calls } = makeApp();
    app.ablationSelect.value = "wo-LLM";
    app.training.button.dispatchEvent(new MouseEvent("click"));
    await new Promise((r) => setTimeout(r, 20));
    const train = calls.find((c) => c.path === "/train");
    expect(train?.body.ablation).toBe("wo-LLM");
  });
});
