// Image view: the dataset as a spectra x bins false-color raster with
// a crosshair cursor, a readout panel, and a linked spectrum graph.
//
// Layout follows the classic detector-image viewer: the image fills
// the panel, scrollbars appear only when the data outgrows it (rows
// when n_spectra > height, columns when compression is off and
// n_bins > width), and the readout and graph panels fold away to give
// the image the whole area.

import { ApiClient, ApiError, Raster, Readout, ViewportParams } from "./api";
import { paintIndexed } from "./colormap";
import { LatestWins } from "./latest_wins";
import { SpectrumGraph } from "./spectrum_graph";
import { LinkState } from "./state";

const READOUT_FIELDS: Array<[keyof Readout, string]> = [
  ["spectrum_id", "spectrum"],
  ["label", "label"],
  ["x_at_cursor", "x"],
  ["y_value", "counts"],
  ["bin_index", "bin"],
];

export class ImageView {
  readonly canvas: HTMLCanvasElement;
  readonly overlay: HTMLCanvasElement;
  readonly vscroll: HTMLDivElement;
  readonly hscroll: HTMLDivElement;
  readonly readoutEl: HTMLDivElement;
  readonly statusEl: HTMLSpanElement;
  readonly compressToggle: HTMLInputElement;
  readonly graph: SpectrumGraph;

  lastRaster: Raster | null = null;
  lastReadout: Readout | null = null;

  private run = "";
  private ds = 0;
  private nSpectra = 0;
  private nBins = 0;
  private rowOffset = 0;
  private colOffset = 0;
  private readonly width: number;
  private readonly height: number;
  private readonly rasterGate = new LatestWins();
  private readonly readoutGate = new LatestWins();
  private readonly spectrumGate = new LatestWins();
  private lastSpectrumId: number | null = null;
  private readoutCells = new Map<keyof Readout, HTMLElement>();

  constructor(
    container: HTMLElement,
    private api: ApiClient,
    private state: LinkState,
    width = 480,
    height = 320,
  ) {
    this.width = width;
    this.height = height;

    const head = document.createElement("div");
    head.className = "panel-head";
    const title = document.createElement("span");
    title.textContent = "image";
    this.compressToggle = document.createElement("input");
    this.compressToggle.type = "checkbox";
    this.compressToggle.checked = true;
    this.compressToggle.addEventListener("change", () => {
      this.colOffset = 0;
      this.hscroll.scrollLeft = 0;
      void this.refresh();
    });
    const toggleLabel = document.createElement("label");
    toggleLabel.append(this.compressToggle, "compress bins");
    const readoutBtn = document.createElement("button");
    readoutBtn.textContent = "readout";
    const graphBtn = document.createElement("button");
    graphBtn.textContent = "graph";
    this.statusEl = document.createElement("span");
    this.statusEl.className = "status";
    head.append(title, toggleLabel, readoutBtn, graphBtn, this.statusEl);

    const body = document.createElement("div");
    body.className = "image-body";
    const stack = document.createElement("div");
    stack.className = "image-stack";
    this.canvas = document.createElement("canvas");
    this.canvas.width = width;
    this.canvas.height = height;
    this.overlay = document.createElement("canvas");
    this.overlay.width = width;
    this.overlay.height = height;
    this.overlay.className = "overlay";
    stack.append(this.canvas, this.overlay);

    this.vscroll = document.createElement("div");
    this.vscroll.className = "vscroll";
    this.vscroll.style.height = `${height}px`;
    this.vscroll.appendChild(document.createElement("div"));
    this.vscroll.addEventListener("scroll", () => {
      this.rowOffset = this.clampRowOffset(Math.round(this.vscroll.scrollTop));
      void this.refresh();
    });
    body.append(stack, this.vscroll);

    this.hscroll = document.createElement("div");
    this.hscroll.className = "hscroll";
    this.hscroll.style.width = `${width}px`;
    this.hscroll.appendChild(document.createElement("div"));
    this.hscroll.addEventListener("scroll", () => {
      this.colOffset = this.clampColOffset(Math.round(this.hscroll.scrollLeft));
      void this.refresh();
    });

    this.readoutEl = document.createElement("div");
    this.readoutEl.className = "readout";
    for (const [field, caption] of READOUT_FIELDS) {
      const row = document.createElement("div");
      const name = document.createElement("span");
      name.textContent = `${caption}: `;
      const value = document.createElement("span");
      value.dataset.field = field;
      row.append(name, value);
      this.readoutEl.appendChild(row);
      this.readoutCells.set(field, value);
    }

    const graphBox = document.createElement("div");
    graphBox.className = "graph-box";
    this.graph = new SpectrumGraph(graphBox, width, 120);

    readoutBtn.addEventListener("click", () => {
      this.readoutEl.hidden = !this.readoutEl.hidden;
    });
    graphBtn.addEventListener("click", () => {
      graphBox.hidden = !graphBox.hidden;
    });

    this.overlay.addEventListener("mousemove", (ev) => {
      const box = this.overlay.getBoundingClientRect();
      this.onCursor(Math.floor(ev.clientX - box.left), Math.floor(ev.clientY - box.top));
    });
    this.overlay.addEventListener("mouseleave", () => {
      this.state.setCursor(null);
      this.drawCrosshair(null);
    });

    container.append(head, body, this.hscroll, this.readoutEl, graphBox);
  }

  private viewport(): ViewportParams {
    return {
      width: this.width,
      height: this.height,
      rowOffset: this.rowOffset,
      colOffset: this.colOffset,
      compress: this.compressToggle.checked,
    };
  }

  private clampRowOffset(v: number): number {
    return Math.max(0, Math.min(v, Math.max(0, this.nSpectra - this.height)));
  }

  private clampColOffset(v: number): number {
    return Math.max(0, Math.min(v, Math.max(0, this.nBins - this.width)));
  }

  async load(run: string, ds: number, nSpectra: number, nBins: number): Promise<void> {
    this.run = run;
    this.ds = ds;
    this.nSpectra = nSpectra;
    this.nBins = nBins;
    this.rowOffset = 0;
    this.colOffset = 0;
    this.lastSpectrumId = null;
    await this.refresh();
  }

  async refresh(): Promise<void> {
    if (!this.run) return;
    const raster = await this.rasterGate.run((signal) =>
      this.api.raster(this.run, this.ds, this.viewport(), signal),
    ).catch((err) => {
      this.showError(err);
      return null;
    });
    if (raster === null) return;
    this.lastRaster = raster;
    this.statusEl.textContent = "";
    this.paint(raster);
    this.updateScrollbars();
  }

  private paint(raster: Raster): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const img = ctx.createImageData(raster.width, raster.height);
    paintIndexed(img, raster.pixels, raster.width, raster.height);
    ctx.putImageData(img, 0, 0);
  }

  private updateScrollbars(): void {
    const needV = this.nSpectra > this.height;
    this.vscroll.style.display = needV ? "block" : "none";
    (this.vscroll.firstElementChild as HTMLElement).style.height = `${this.nSpectra}px`;

    const needH = !this.compressToggle.checked && this.nBins > this.width;
    this.hscroll.style.display = needH ? "block" : "none";
    (this.hscroll.firstElementChild as HTMLElement).style.width = `${this.nBins}px`;
  }

  private onCursor(px: number, py: number): void {
    if (px < 0 || py < 0 || px >= this.width || py >= this.height) return;
    this.state.setCursor({ px, py });
    this.drawCrosshair({ px, py });
    void this.readoutGate
      .run((signal) =>
        this.api.readout(this.run, this.ds, this.viewport(), px, py, signal),
      )
      .then((r) => {
        if (r === null) return;
        this.applyReadout(r);
      })
      .catch((err) => this.showError(err));
  }

  private applyReadout(r: Readout): void {
    this.lastReadout = r;
    this.statusEl.textContent = "";
    for (const [field, cell] of this.readoutCells) {
      cell.textContent = String(r[field]);
    }
    // drive any open slice view to the channel the server resolved
    this.state.setChannel(r.bin_index);
    if (r.spectrum_id !== this.lastSpectrumId) {
      this.lastSpectrumId = r.spectrum_id;
      void this.spectrumGate
        .run((signal) => this.api.spectrum(this.run, this.ds, r.spectrum_id, signal))
        .then((s) => {
          if (s !== null) this.graph.show(s);
        })
        .catch((err) => this.showError(err));
    }
  }

  private drawCrosshair(cursor: { px: number; py: number } | null): void {
    const ctx = this.overlay.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.width, this.height);
    if (!cursor) return;
    ctx.strokeStyle = "rgba(255,255,255,0.8)";
    ctx.beginPath();
    ctx.moveTo(cursor.px + 0.5, 0);
    ctx.lineTo(cursor.px + 0.5, this.height);
    ctx.moveTo(0, cursor.py + 0.5);
    ctx.lineTo(this.width, cursor.py + 0.5);
    ctx.stroke();
  }

  private showError(err: unknown): void {
    // a readout off the data or a server hiccup must not take the
    // panel down; it is reported inline and the next cursor move or
    // refresh clears it
    this.statusEl.textContent =
      err instanceof ApiError ? err.detail : err instanceof Error ? err.message : String(err);
  }
}
