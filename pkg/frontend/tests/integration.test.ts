/** Scripted end-to-end run against the real workbench service.
 *
 * Spawns the Python HTTP service on a synthetic corpus, then drives the
 * full mini open-world flow through the actual UI components (scatter +
 * lasso, session panel, sliders, training controller). Checks throughout
 * that what the DOM shows is exactly what the API returns.
 */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";
import type { SessionPanel } from "../src/session-panel.js";

const PORT = 18650 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

let workdir: string;
let server: ChildProcess | null = null;
let client: ApiClient;
let manifestPath: string;
let storePath: string;

const KNOWN = ["class00", "class01", "class02"];
const UNKNOWN = ["class03", "class04"];

function gtLabel(pid: string): string {
  return pid.split("_")[0];
}

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "owclip-ui-"));
  const script = [
    "from owclip.service.bench import make_synthetic_corpus",
    `c = make_synthetic_corpus(r"${workdir}/corpus", n_known=3, n_unknown=2,`,
    "    dim=16, train_per_class=25, eval_per_class=8, sigma=0.2, seed=0)",
    "print(c.manifest_path)",
    "print(c.store_path)",
  ].join("\n");
  const out = execFileSync("python3", ["-c", script], { encoding: "utf-8" });
  [manifestPath, storePath] = out.trim().split("\n");

  server = spawn("python3", [
    "-m", "owclip.service.cli", "--data-dir", join(workdir, "wb"),
    "serve", "--port", String(PORT),
  ], {
    env: { ...process.env, OWCLIP_T_THRESHOLD: "0.9", OWCLIP_EPOCHS: "10" },
    stdio: ["ignore", "pipe", "pipe"],
  });
  server.stderr?.on("data", () => undefined);
  await waitForHealth();

  client = new ApiClient(BASE);
  await client.ingest(manifestPath, storePath);
});

afterAll(() => {
  server?.kill("SIGTERM");
  rmSync(workdir, { recursive: true, force: true });
});

async function curateSession(app: App, label: string): Promise<SessionPanel> {
  const panel = await app.openSession(label);
  const sid = panel.session.session_id;

  // tick the first three phrase checkboxes like a user would
  const boxes = [...panel.phraseList.querySelectorAll("input")];
  for (const i of [0, 1, 2]) {
    boxes[i].checked = true;
    boxes[i].dispatchEvent(new Event("change"));
  }
  await new Promise((r) => setTimeout(r, 50));
  const serverSession = await client.session(sid);
  expect(serverSession.selected.slice(0, 3)).toEqual([true, true, true]);

  // open the filter fully, then curate by ground truth
  await panel.applyRanges({ ls: -1, hs: 1, lh: -1, hh: 1 });
  const serverCands = await client.candidates(sid);
  expect(panel.currentCandidates()).toEqual(serverCands.simple);
  expect(panel.countLabel.textContent).toBe(`${serverCands.simple.length} candidates`);
  expect(panel.gridEl.getAttribute("data-count"))
    .toBe(String(serverCands.simple.length));

  for (const pid of serverCands.simple) {
    if (gtLabel(pid) !== label) {
      panel.selection.add(pid);
    }
  }
  await panel.applyAction(); // Delete the wrong ones
  const expectKept = serverCands.simple.filter((pid) => gtLabel(pid) === label);
  expect(panel.session.accepted_simple).toEqual(expectKept);
  expect(panel.acceptedLabel.textContent)
    .toBe(`accepted: ${expectKept.length} simple, 0 hard`);

  expect(panel.finalizeButton.disabled).toBe(false);
  await panel.finalize();
  expect(panel.session.state).toBe("finalized");
  return panel;
}

describe("full mini open-world flow through the UI", () => {
  it("drives discovery, curation, training and results end to end", async () => {
    const root = document.createElement("div");
    document.body.append(root);
    const app = new App(root, BASE);
    await app.boot("pca", 0);

    // scatter shows exactly the unknown pool
    const pool = await client.unknownPool();
    const proj = await client.projection(0, "pca");
    expect(proj.points.length).toBe(pool.count);
    expect(app.scatter.status.textContent).toContain(String(pool.count));

    // lasso around one class's points: grid must equal the server's ids
    const members = proj.points.filter((p) => gtLabel(p.id) === "class00");
    const xs = members.map((p) => p.x);
    const ys = members.map((p) => p.y);
    const pad = 1e-6;
    const polygon: [number, number][] = [
      [Math.min(...xs) - pad, Math.min(...ys) - pad],
      [Math.max(...xs) + pad, Math.min(...ys) - pad],
      [Math.max(...xs) + pad, Math.max(...ys) + pad],
      [Math.min(...xs) - pad, Math.max(...ys) + pad],
    ];
    app.scatter.beginLasso();
    for (const [x, y] of polygon) {
      app.scatter.extendLasso(x, y);
    }
    const uiIds = await app.scatter.endLasso();
    const serverIds = (await client.lasso(polygon, "pca", 0)).ids;
    expect(uiIds).toEqual(serverIds);
    const tiles = [...app.scatter.grid.querySelectorAll("figure")].map(
      (f) => f.getAttribute("data-id"));
    expect(tiles).toEqual(serverIds);
    expect(serverIds).toEqual(expect.arrayContaining(members.map((p) => p.id)));

    // the case-study slider values must reach the server unrounded
    const probe = await app.openSession("probe-thresholds");
    await probe.applyRanges({ ls: 0.3349, hs: 0.3522, lh: 0.05, hh: 0.12 });
    const stored = await client.session(probe.session.session_id);
    expect(stored.ranges.ls).toBe(0.3349);
    expect(stored.ranges.hs).toBe(0.3522);
    // density markers live on the same axis the sliders set
    const density = await client.density(probe.session.session_id);
    expect(density.ranges.ls).toBe(0.3349);
    expect(density.x.length).toBe(256);

    // episode 1: the three known classes
    const panels = [];
    for (const label of KNOWN) {
      panels.push(await curateSession(app, label));
    }
    const sessionIds = app.finalizedSessionIds();
    expect(sessionIds).toEqual(panels.map((p) => p.session.session_id));

    await app.training.start(sessionIds, { temperature: 0.3 });
    expect(app.training.button.disabled).toBe(true);
    const deadline = Date.now() + 90_000;
    while (app.training.running && Date.now() < deadline) {
      await new Promise((r) => setTimeout(r, 300));
      await app.training.poll();
    }
    expect(app.training.running).toBe(false);
    expect(app.training.message.textContent).toBe("");

    // results table equals the /eval payload row for row
    const evalPayload = await client.evaluate();
    for (const [label, ap] of Object.entries(evalPayload.per_class_ap)) {
      const row = app.training.resultsTable.querySelector(
        `tr[data-class="${label}"]`);
      expect(row?.querySelector(".ap")?.textContent).toBe(String(ap));
    }
    const bothRow = app.training.resultsTable.querySelector('tr[data-mean="both"]');
    expect(bothRow?.querySelector(".map")?.textContent)
      .toBe(String(evalPayload.map_both));

    // annotated-class list mirrors /classes
    await app.refreshClasses();
    const classPayload = await client.classes();
    const shown = [...app.classList.querySelectorAll("li")].map(
      (li) => li.getAttribute("data-label"));
    expect(shown).toEqual(classPayload.classes.map((c) => c.label));
    expect(shown).toEqual(KNOWN);

    // episode 2: the remaining unknown classes, reusing the same surfaces
    const panels2 = [];
    for (const label of UNKNOWN) {
      panels2.push(await curateSession(app, label));
    }
    await app.training.start(panels2.map((p) => p.session.session_id),
                             { temperature: 0.3 });
    const deadline2 = Date.now() + 90_000;
    while (app.training.running && Date.now() < deadline2) {
      await new Promise((r) => setTimeout(r, 300));
      await app.training.poll();
    }
    expect(app.training.running).toBe(false);

    const evalAfter = await client.evaluate();
    expect(evalAfter.map_previous_known).not.toBeNull();
    expect(evalAfter.map_current_known).not.toBeNull();
    await app.refreshClasses();
    const shownAfter = [...app.classList.querySelectorAll("li")].map(
      (li) => li.getAttribute("data-label"));
    expect(shownAfter).toEqual([...KNOWN, ...UNKNOWN]);
  }, 240_000);

  it("reports conflicts inline when a label is already learned", async () => {
    const root = document.createElement("div");
    const app = new App(root, BASE);
    // class00 was learned in the previous test; reusing it must 409
    await expect(client.createSession("class00")).rejects.toMatchObject({
      kind: "ConflictError",
    });
  });
});
