// Live acquisition panel: a websocket subscription painting deltas
// onto an accumulating counts grid.
//
// The stream protocol is snapshot-free: the grid starts at zero (the
// state at sequence 0) and every delta assigns absolute cell values,
// so a subscriber from since=0 converges to the current state after
// its first, coalesced delta. On a dropped connection the panel keeps
// its grid and resubscribes from the last applied sequence; the server
// coalesces the missed ticks into one catch-up delta.

import { ApiClient } from "./api";
import { heatColor } from "./colormap";
import { LinkState } from "./state";

const BACKOFF_MS = [500, 1000, 2000, 4000, 8000];

export function backoffDelayMs(attempt: number): number {
  return BACKOFF_MS[Math.min(attempt, BACKOFF_MS.length - 1)];
}

interface MetaMsg {
  type: "meta";
  title: string;
  x_units: string;
  n_spectra: number;
  n_bins: number;
  sequence: number;
}

interface DeltaMsg {
  type: "delta";
  sequence: number;
  spectra: number[];
  bins: number[];
  values: number[];
}

interface ErrorMsg {
  type: "error";
  message: string;
}

export class LivePanel {
  readonly canvas: HTMLCanvasElement;
  readonly statusEl: HTMLSpanElement;
  readonly titleEl: HTMLSpanElement;

  grid: Float32Array = new Float32Array(0);
  nSpectra = 0;
  nBins = 0;
  sequence = 0;
  totalCounts = 0;
  socket: WebSocket | null = null;

  private stopped = false;
  private attempt = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    container: HTMLElement,
    private api: ApiClient,
    private state: LinkState,
  ) {
    const head = document.createElement("div");
    head.className = "panel-head";
    this.titleEl = document.createElement("span");
    this.titleEl.textContent = "live";
    this.statusEl = document.createElement("span");
    this.statusEl.className = "status";
    head.append(this.titleEl, this.statusEl);
    this.canvas = document.createElement("canvas");
    this.canvas.width = 480;
    this.canvas.height = 160;
    container.append(head, this.canvas);
  }

  start(): void {
    this.stopped = false;
    this.connect(0);
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.socket?.close();
    this.socket = null;
  }

  private connect(since: number): void {
    const ws = new WebSocket(this.api.liveSocketUrl(since));
    this.socket = ws;
    ws.onmessage = (ev) => this.onMessage(JSON.parse(ev.data as string));
    ws.onclose = () => {
      if (this.stopped) return;
      const delay = backoffDelayMs(this.attempt++);
      this.statusEl.textContent = `disconnected, retrying in ${delay / 1000} s`;
      this.timer = setTimeout(() => this.connect(this.sequence), delay);
    };
  }

  private onMessage(msg: MetaMsg | DeltaMsg | ErrorMsg): void {
    if (msg.type === "meta") {
      this.attempt = 0;
      this.titleEl.textContent = `live: ${msg.title} (${msg.n_spectra} x ${msg.n_bins})`;
      if (this.grid.length !== msg.n_spectra * msg.n_bins) {
        this.nSpectra = msg.n_spectra;
        this.nBins = msg.n_bins;
        this.grid = new Float32Array(msg.n_spectra * msg.n_bins);
        this.totalCounts = 0;
        this.sequence = 0;
      }
      this.updateStatus();
    } else if (msg.type === "delta") {
      const n = msg.spectra.length;
      for (let i = 0; i < n; i++) {
        const k = msg.spectra[i] * this.nBins + msg.bins[i];
        this.totalCounts += msg.values[i] - this.grid[k];
        this.grid[k] = msg.values[i];
      }
      this.sequence = msg.sequence;
      this.state.setLiveSequence(msg.sequence);
      this.updateStatus();
      this.paint();
    } else {
      this.statusEl.textContent = msg.message;
    }
  }

  private updateStatus(): void {
    this.statusEl.textContent = `seq ${this.sequence}, total ${this.totalCounts.toFixed(0)}`;
  }

  private paint(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || this.nSpectra === 0 || this.nBins === 0) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#000";
    ctx.fillRect(0, 0, width, height);
    let top = 0;
    for (const v of this.grid) if (v > top) top = v;
    if (top <= 0) top = 1;
    const cw = width / this.nBins;
    const ch = height / this.nSpectra;
    for (let r = 0; r < this.nSpectra; r++) {
      for (let c = 0; c < this.nBins; c++) {
        const v = this.grid[r * this.nBins + c];
        if (v <= 0) continue;
        ctx.fillStyle = heatColor(v / top);
        ctx.fillRect(c * cw, r * ch, Math.ceil(cw), Math.ceil(ch));
      }
    }
  }
}
