// Time-slice view: one channel of the dataset on the detector grid,
// with forward/back stepping and the channel slaved to the image
// cursor through the shared link state.

import { ApiClient, ApiError, SliceData } from "./api";
import { heatColor } from "./colormap";
import { LatestWins } from "./latest_wins";
import { LinkState } from "./state";

export class SliceView {
  readonly canvas: HTMLCanvasElement;
  readonly statusEl: HTMLSpanElement;
  readonly channelEl: HTMLSpanElement;
  readonly backBtn: HTMLButtonElement;
  readonly fwdBtn: HTMLButtonElement;

  current: SliceData | null = null;
  channel = 0;

  private run = "";
  private ds = 0;
  private nBins = 0;
  private linkedChannel = 0;
  private gate = new LatestWins();

  constructor(
    container: HTMLElement,
    private api: ApiClient,
    state: LinkState,
    size = 240,
  ) {
    const head = document.createElement("div");
    head.className = "panel-head";
    this.backBtn = document.createElement("button");
    this.backBtn.textContent = "<";
    this.fwdBtn = document.createElement("button");
    this.fwdBtn.textContent = ">";
    this.channelEl = document.createElement("span");
    this.channelEl.textContent = "channel 0";
    this.statusEl = document.createElement("span");
    this.statusEl.className = "status";
    head.append(this.backBtn, this.channelEl, this.fwdBtn, this.statusEl);

    this.canvas = document.createElement("canvas");
    this.canvas.width = size;
    this.canvas.height = size;
    container.append(head, this.canvas);

    // stepping is clamped at both ends rather than wrapping
    this.backBtn.addEventListener("click", () => this.setChannel(this.channel - 1));
    this.fwdBtn.addEventListener("click", () => this.setChannel(this.channel + 1));

    // follow the linked channel only when it actually moves; other
    // state traffic (live sequence bumps, cursor wiggle within one
    // column) must not yank a manually stepped view back
    state.subscribe((s) => {
      const moved = s.currentChannel !== this.linkedChannel;
      this.linkedChannel = s.currentChannel;
      if (moved && s.cursor !== null) void this.setChannel(s.currentChannel);
    });
  }

  load(run: string, ds: number, nBins: number): Promise<void> {
    this.run = run;
    this.ds = ds;
    this.nBins = nBins;
    return this.setChannel(0);
  }

  async setChannel(channel: number): Promise<void> {
    if (!this.run) return;
    const clamped = Math.max(0, Math.min(channel, this.nBins - 1));
    this.channel = clamped;
    this.channelEl.textContent = `channel ${clamped}`;
    const slice = await this.gate
      .run((signal) => this.api.slice(this.run, this.ds, clamped, signal))
      .catch((err) => {
        this.statusEl.textContent =
          err instanceof ApiError ? err.detail : String(err);
        return null;
      });
    if (slice === null) return;
    this.current = slice;
    this.statusEl.textContent = "";
    this.paint(slice);
  }

  private paint(slice: SliceData): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#000";
    ctx.fillRect(0, 0, width, height);
    if (slice.nRows === 0 || slice.nCols === 0) return;
    let top = 0;
    for (const v of slice.values) if (v > top) top = v;
    if (top <= 0) top = 1;
    const cw = width / slice.nCols;
    const ch = height / slice.nRows;
    for (let r = 0; r < slice.nRows; r++) {
      for (let c = 0; c < slice.nCols; c++) {
        const v = slice.values[r * slice.nCols + c];
        ctx.fillStyle = heatColor(v / top);
        ctx.fillRect(c * cw, r * ch, Math.ceil(cw), Math.ceil(ch));
      }
    }
  }
}
