// 3D point-cloud view of the detector layout, drag to rotate.
//
// Total mode colors each detector by its summed counts, which draws
// the physical detector arrangement; channel mode shows one time
// channel and steps through channels like the slice view.

import { ApiClient, ApiError, CloudPoint } from "./api";
import { heatColor } from "./colormap";
import { LatestWins } from "./latest_wins";
import { LinkState } from "./state";

export interface Pose {
  yaw: number;
  pitch: number;
}

// view-space rotation of one point; pure so tests can pin the
// full-turn identity without a canvas
export function rotatePoint(
  p: { x: number; y: number; z: number },
  pose: Pose,
): { sx: number; sy: number; depth: number } {
  const cy = Math.cos(pose.yaw);
  const sy = Math.sin(pose.yaw);
  const cp = Math.cos(pose.pitch);
  const sp = Math.sin(pose.pitch);
  const x1 = cy * p.x + sy * p.z;
  const z1 = -sy * p.x + cy * p.z;
  const y1 = cp * p.y - sp * z1;
  const z2 = sp * p.y + cp * z1;
  return { sx: x1, sy: y1, depth: z2 };
}

export class CloudView {
  readonly canvas: HTMLCanvasElement;
  readonly modeToggle: HTMLSelectElement;
  readonly statusEl: HTMLSpanElement;
  readonly backBtn: HTMLButtonElement;
  readonly fwdBtn: HTMLButtonElement;

  points: CloudPoint[] = [];
  /** What the points currently on screen show: the whole run summed,
   *  or a single time channel (and which one). */
  shownMode: "total" | "channel" = "total";
  shownChannel = 0;
  pose: Pose = { yaw: 0.6, pitch: 0.35 };

  private run = "";
  private ds = 0;
  private nBins = 0;
  private channel = 0;
  private linkedChannel = 0;
  private gate = new LatestWins();
  private dragging: { x: number; y: number } | null = null;

  constructor(
    container: HTMLElement,
    private api: ApiClient,
    state: LinkState,
    size = 300,
  ) {
    const head = document.createElement("div");
    head.className = "panel-head";
    this.modeToggle = document.createElement("select");
    for (const mode of ["total", "channel"]) {
      const opt = document.createElement("option");
      opt.value = mode;
      opt.textContent = mode;
      this.modeToggle.appendChild(opt);
    }
    this.backBtn = document.createElement("button");
    this.backBtn.textContent = "<";
    this.fwdBtn = document.createElement("button");
    this.fwdBtn.textContent = ">";
    this.statusEl = document.createElement("span");
    this.statusEl.className = "status";
    head.append(this.modeToggle, this.backBtn, this.fwdBtn, this.statusEl);

    this.canvas = document.createElement("canvas");
    this.canvas.width = size;
    this.canvas.height = size;
    container.append(head, this.canvas);

    this.modeToggle.addEventListener("change", () => void this.fetchPoints());
    this.backBtn.addEventListener("click", () => this.stepChannel(-1));
    this.fwdBtn.addEventListener("click", () => this.stepChannel(1));

    this.canvas.addEventListener("mousedown", (ev) => {
      this.dragging = { x: ev.clientX, y: ev.clientY };
    });
    window.addEventListener("mouseup", () => {
      this.dragging = null;
    });
    window.addEventListener("mousemove", (ev) => {
      if (!this.dragging) return;
      this.rotateBy(
        (ev.clientX - this.dragging.x) * 0.01,
        (ev.clientY - this.dragging.y) * 0.01,
      );
      this.dragging = { x: ev.clientX, y: ev.clientY };
    });

    // react to linked-channel movement only, as in the slice view
    state.subscribe((s) => {
      const moved = s.currentChannel !== this.linkedChannel;
      this.linkedChannel = s.currentChannel;
      if (moved && s.cursor !== null && this.modeToggle.value === "channel") {
        this.channel = s.currentChannel;
        void this.fetchPoints();
      }
    });
  }

  load(run: string, ds: number, nBins: number): Promise<void> {
    this.run = run;
    this.ds = ds;
    this.nBins = nBins;
    this.channel = 0;
    return this.fetchPoints();
  }

  rotateBy(dyaw: number, dpitch: number): void {
    this.pose = { yaw: this.pose.yaw + dyaw, pitch: this.pose.pitch + dpitch };
    this.paint();
  }

  private stepChannel(delta: number): void {
    this.channel = Math.max(0, Math.min(this.channel + delta, this.nBins - 1));
    if (this.modeToggle.value === "channel") void this.fetchPoints();
  }

  async fetchPoints(): Promise<void> {
    if (!this.run) return;
    const mode = this.modeToggle.value as "total" | "channel";
    const channel = this.channel;
    const pts = await this.gate
      .run((signal) => this.api.points(this.run, this.ds, mode, channel, signal))
      .catch((err) => {
        this.statusEl.textContent =
          err instanceof ApiError ? err.detail : String(err);
        return null;
      });
    if (pts === null) return;
    this.points = pts;
    this.shownMode = mode;
    this.shownChannel = channel;
    this.statusEl.textContent = "";
    this.paint();
  }

  private paint(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#000";
    ctx.fillRect(0, 0, width, height);
    if (this.points.length === 0) return;
    let radius = 0;
    let top = 0;
    for (const p of this.points) {
      radius = Math.max(radius, Math.hypot(p.x, p.y, p.z));
      top = Math.max(top, p.intensity);
    }
    if (radius <= 0) radius = 1;
    if (top <= 0) top = 1;
    const scale = (0.45 * Math.min(width, height)) / radius;
    // painter's order: far points first
    const projected = this.points
      .map((p) => ({ ...rotatePoint(p, this.pose), t: p.intensity / top }))
      .sort((a, b) => a.depth - b.depth);
    for (const p of projected) {
      ctx.fillStyle = heatColor(p.t);
      ctx.fillRect(
        width / 2 + p.sx * scale - 1.5,
        height / 2 - p.sy * scale - 1.5,
        3,
        3,
      );
    }
  }
}
