/** Cluster scatter plot with a lasso overlay.
 *
 * Points render on a canvas layer (up to a few thousand); the lasso is an
 * overlay path. Point-in-polygon is never computed here: the finished
 * gesture is POSTed to the server and the returned ids are what the grid
 * shows, so the server stays the single source of truth.
 */

import type { ApiClient } from "./api.js";
import type { ProjectionPayload, ProjectionPoint } from "./types.js";
import { clear, el } from "./dom.js";

const PALETTE = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#1f77b4", "#8c564b",
];

interface Extent {
  minX: number;
  maxX: number;
  minY: number;
  maxY: number;
}

export class ScatterView {
  readonly canvas: HTMLCanvasElement;
  readonly grid: HTMLElement;
  readonly status: HTMLElement;

  private points: ProjectionPoint[] = [];
  private extent: Extent | null = null;
  private gesture: [number, number][] = [];
  private method = "tsne";
  private seed = 0;
  selectedIds: string[] = [];
  onSelect: ((ids: string[]) => void) | null = null;

  constructor(
    private readonly client: ApiClient,
    readonly root: HTMLElement,
    private readonly width = 640,
    private readonly height = 480,
  ) {
    this.canvas = el("canvas", {
      width: String(width),
      height: String(height),
      class: "scatter-canvas",
    });
    this.status = el("div", { class: "scatter-status", text: "no projection" });
    this.grid = el("div", { class: "selected-grid" });
    root.append(this.canvas, this.status, el("h3", { text: "Selected Images" }), this.grid);
  }

  async load(method = "tsne", seed = 0): Promise<ProjectionPayload> {
    const payload = await this.client.projection(seed, method);
    this.method = payload.method;
    this.seed = payload.seed;
    this.setData(payload.points);
    this.status.textContent =
      `${payload.points.length} unknown proposals, k=${payload.k} clusters ` +
      `(${payload.method}, seed ${payload.seed})`;
    return payload;
  }

  setData(points: ProjectionPoint[]): void {
    this.points = points;
    if (points.length > 0) {
      this.extent = {
        minX: Math.min(...points.map((p) => p.x)),
        maxX: Math.max(...points.map((p) => p.x)),
        minY: Math.min(...points.map((p) => p.y)),
        maxY: Math.max(...points.map((p) => p.y)),
      };
    } else {
      this.extent = null;
    }
    this.draw();
  }

  /** Data coords -> pixels (10px margin). */
  toPixel(x: number, y: number): [number, number] {
    if (!this.extent) {
      return [0, 0];
    }
    const { minX, maxX, minY, maxY } = this.extent;
    const sx = (this.width - 20) / (maxX - minX || 1);
    const sy = (this.height - 20) / (maxY - minY || 1);
    return [10 + (x - minX) * sx, 10 + (y - minY) * sy];
  }

  toData(px: number, py: number): [number, number] {
    if (!this.extent) {
      return [0, 0];
    }
    const { minX, maxX, minY, maxY } = this.extent;
    const sx = (this.width - 20) / (maxX - minX || 1);
    const sy = (this.height - 20) / (maxY - minY || 1);
    return [minX + (px - 10) / sx, minY + (py - 10) / sy];
  }

  private draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      return; // headless test environment: state still updates, no pixels
    }
    ctx.clearRect(0, 0, this.width, this.height);
    for (const p of this.points) {
      const [px, py] = this.toPixel(p.x, p.y);
      ctx.fillStyle = PALETTE[p.cluster % PALETTE.length];
      ctx.beginPath();
      ctx.arc(px, py, 3, 0, Math.PI * 2);
      ctx.fill();
    }
    if (this.gesture.length > 1) {
      ctx.strokeStyle = "#333";
      ctx.setLineDash([4, 3]);
      ctx.beginPath();
      const [sx, sy] = this.toPixel(...this.gesture[0]);
      ctx.moveTo(sx, sy);
      for (const [gx, gy] of this.gesture.slice(1)) {
        const [px, py] = this.toPixel(gx, gy);
        ctx.lineTo(px, py);
      }
      ctx.closePath();
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }

  beginLasso(): void {
    this.gesture = [];
  }

  extendLasso(dataX: number, dataY: number): void {
    this.gesture.push([dataX, dataY]);
    this.draw();
  }

  /** Finish the gesture. Fewer than 3 vertices: no request is sent. */
  async endLasso(): Promise<string[] | null> {
    const polygon = this.gesture;
    this.gesture = [];
    this.draw();
    if (polygon.length < 3) {
      return null;
    }
    const payload = await this.client.lasso(polygon, this.method, this.seed);
    this.selectedIds = payload.ids;
    this.renderGrid(payload.ids);
    this.onSelect?.(payload.ids);
    return payload.ids;
  }

  renderGrid(ids: string[]): void {
    clear(this.grid);
    for (const id of ids) {
      const tile = el("figure", { class: "tile", "data-id": id }, [
        el("figcaption", { text: id }),
      ]);
      tile.addEventListener("click", () => void this.openRelated(id));
      this.grid.append(tile);
    }
    this.grid.setAttribute("data-count", String(ids.length));
  }

  /** Click on a tile opens the related-images view for it. */
  async openRelated(id: string, k = 100): Promise<string[]> {
    const payload = await this.client.related(id, k);
    this.renderGrid(payload.ids);
    this.status.textContent = `top-${payload.ids.length} images related to ${id}`;
    return payload.ids;
  }
}
