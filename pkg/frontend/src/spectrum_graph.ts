// Line graph of the spectrum under the image cursor.

import type { SpectrumData } from "./api";

export class SpectrumGraph {
  readonly canvas: HTMLCanvasElement;
  private title: HTMLElement;
  current: SpectrumData | null = null;

  constructor(container: HTMLElement, width = 480, height = 120) {
    this.title = document.createElement("div");
    this.title.className = "graph-title";
    this.title.textContent = "spectrum: none";
    this.canvas = document.createElement("canvas");
    this.canvas.width = width;
    this.canvas.height = height;
    this.canvas.className = "graph";
    container.append(this.title, this.canvas);
  }

  show(s: SpectrumData | null): void {
    this.current = s;
    this.title.textContent = s
      ? `spectrum ${s.id}${s.label ? ` (${s.label})` : ""}, ${s.x_units}`
      : "spectrum: none";
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, w, h);
    if (!s || s.counts.length === 0) return;
    let top = 0;
    for (const v of s.counts) if (v > top) top = v;
    if (top <= 0) top = 1;
    ctx.strokeStyle = "#6cf";
    ctx.beginPath();
    const n = s.counts.length;
    for (let i = 0; i < n; i++) {
      const x = ((i + 0.5) / n) * w;
      const y = h - 2 - (s.counts[i] / top) * (h - 6);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}
