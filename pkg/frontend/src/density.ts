/** Density plot drawn from the server's 256-point KDE curve. No client-side
 * estimation: the path is a straight transcription of the payload. */

import type { DensityPayload } from "./types.js";

export class DensityPlot {
  readonly svg: SVGSVGElement;

  constructor(readonly root: HTMLElement, private readonly width = 420,
              private readonly height = 120) {
    this.svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    this.svg.setAttribute("width", String(width));
    this.svg.setAttribute("height", String(height));
    this.svg.setAttribute("class", "density-plot");
    root.append(this.svg);
  }

  render(payload: DensityPayload): void {
    while (this.svg.firstChild) {
      this.svg.removeChild(this.svg.firstChild);
    }
    const { x, y } = payload;
    if (x.length === 0) {
      return;
    }
    const minX = x[0];
    const maxX = x[x.length - 1];
    const maxY = Math.max(...y) || 1;
    const px = (v: number) => ((v - minX) / (maxX - minX || 1)) * this.width;
    const py = (v: number) => this.height - (v / maxY) * (this.height - 10);

    const d = x.map((xv, i) => `${i === 0 ? "M" : "L"}${px(xv).toFixed(1)},${py(y[i]).toFixed(1)}`).join(" ");
    const path = document.createElementNS("http://www.w3.org/2000/svg", "path");
    path.setAttribute("d", d);
    path.setAttribute("fill", "none");
    path.setAttribute("stroke", "#4e79a7");
    path.setAttribute("data-points", String(x.length));
    this.svg.append(path);

    const markers: [string, number, string][] = [
      ["ls", payload.ranges.ls, "#59a14f"],
      ["hs", payload.ranges.hs, "#59a14f"],
      ["lh", payload.ranges.lh, "#e15759"],
      ["hh", payload.ranges.hh, "#e15759"],
    ];
    for (const [name, value, color] of markers) {
      if (value < minX || value > maxX) {
        continue;
      }
      const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
      line.setAttribute("x1", String(px(value)));
      line.setAttribute("x2", String(px(value)));
      line.setAttribute("y1", "0");
      line.setAttribute("y2", String(this.height));
      line.setAttribute("stroke", color);
      line.setAttribute("stroke-dasharray", "3,3");
      line.setAttribute("data-marker", name);
      this.svg.append(line);
    }
  }
}
