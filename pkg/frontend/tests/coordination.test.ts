// Browser-level coordination against live servers: a run file with a
// known injected peak is published by the real file/HTTP servers, the
// app is mounted in jsdom, and every displayed number is checked
// against the API responses it must mirror.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { ImageView } from "../src/image_view";
import { LivePanel } from "../src/live_panel";
import { createApp, type App } from "../src/main";
import { LinkState } from "../src/state";

const PEAK_SPECTRUM = 7;
const PEAK_BIN = 419;
const DEAD_SPECTRUM = 10;
const N_SPECTRA = 12;
const N_BINS = 600;

const FIXTURE_SCRIPT = `
import math
import sys
import numpy as np
from tofbench.dataset import (
    Attribute, DataSet, DetectorGeometry, XUnits, make_uniform_xscale, new_spectrum,
)
from tofbench.retrievers import write_runfile

xs = make_uniform_xscale(1000.0, 7000.0, ${N_BINS})
spectra = []
for i in range(${N_SPECTRA}):
    rng = np.random.default_rng(100 + i)
    counts = rng.uniform(1.0, 40.0, ${N_BINS}).astype(np.float32)
    if i == ${PEAK_SPECTRUM}:
        counts[${PEAK_BIN}] = 50000.0
    if i == ${DEAD_SPECTRUM}:
        counts[:] = 0.0
    tt = math.radians(30.0 + 8.0 * i)
    geom = DetectorGeometry(
        position=(1.5 * math.sin(tt), 0.1 * (i % 4) - 0.15, 1.5 * math.cos(tt)),
        l1_m=12.0,
    )
    spectra.append(new_spectrum(
        xs, counts,
        attrs=(Attribute("row", i // 4), Attribute("col", i % 4)),
        id=i, label=f"det {i}", geometry=geom,
    ))
ds = DataSet(title="panel", x_units=XUnits.TOF_US, spectra=tuple(spectra))
write_runfile(sys.argv[1], "uitest", 42, 123456, [ds])
`;

interface Server {
  proc: ChildProcess;
  lines: string[];
}

function spawnServer(args: string[], cwd: string): Server {
  const proc = spawn("tofbench", args, { cwd, stdio: ["ignore", "pipe", "pipe"] });
  const lines: string[] = [];
  proc.stdout!.on("data", (chunk: Buffer) => lines.push(...chunk.toString().split("\n")));
  proc.stderr!.on("data", (chunk: Buffer) => lines.push(...chunk.toString().split("\n")));
  return { proc, lines };
}

async function waitFor(
  pred: () => boolean,
  what: string,
  timeoutMs = 30_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (pred()) return;
    await new Promise((r) => setTimeout(r, 50));
  }
  throw new Error(`timed out waiting for ${what}`);
}

async function findPort(server: Server, pattern: RegExp, what: string): Promise<number> {
  let port = 0;
  await waitFor(
    () => {
      for (const line of server.lines) {
        const m = pattern.exec(line);
        if (m) {
          port = Number(m[1]);
          return true;
        }
      }
      return false;
    },
    `${what} (got: ${server.lines.join(" | ")})`,
  );
  return port;
}

function liveControl(port: number, command: "pause" | "resume"): number {
  const out = execFileSync("python3", [
    "-c",
    "import sys\n" +
      "from tofbench.dataserver import DataClient\n" +
      `with DataClient("127.0.0.1", int(sys.argv[1])) as c:\n` +
      `    print(getattr(c, sys.argv[2])().sequence)\n`,
    String(port),
    command,
  ]);
  return Number(out.toString().trim());
}

describe("browser app against real servers", () => {
  let dir: string;
  let liveServer: Server;
  let webServer: Server;
  let api: ApiClient;
  let app: App;
  let base: string;

  beforeAll(async () => {
    dir = mkdtempSync(join(tmpdir(), "tofbench-ui-"));
    execFileSync("python3", ["-c", FIXTURE_SCRIPT, join(dir, "peak.trf")]);

    liveServer = spawnServer(
      ["live", "--pattern", "peak.trf", "--tick", "0.2", "--rate", "50", "--seed", "3"],
      dir,
    );
    const livePort = await findPort(
      liveServer,
      /live server listening on [\d.]+:(\d+)/,
      "live server banner",
    );

    webServer = spawnServer(
      [
        "serve", "--root", ".", "--ui", "--http-port", "0",
        "--live", `127.0.0.1:${livePort}`,
      ],
      dir,
    );
    const httpPort = await findPort(
      webServer,
      /http api listening on [\d.]+:(\d+)/,
      "http api banner",
    );
    base = `http://127.0.0.1:${httpPort}`;

    // the socket can lag the banner by a beat
    const deadline = Date.now() + 20_000;
    for (;;) {
      try {
        const resp = await fetch(`${base}/api/runs`);
        if (resp.ok) break;
      } catch {
        // not accepting yet
      }
      if (Date.now() > deadline) throw new Error("http api never came up");
      await new Promise((r) => setTimeout(r, 100));
    }

    api = new ApiClient(base);
    const root = document.createElement("div");
    document.body.appendChild(root);
    app = await createApp(root, api);
    (globalThis as Record<string, unknown>).__livePort = livePort;
    await waitFor(() => app.image.lastRaster !== null, "initial raster");
  });

  afterAll(() => {
    app?.live.stop();
    webServer?.proc.kill("SIGTERM");
    liveServer?.proc.kill("SIGTERM");
    if (dir) rmSync(dir, { recursive: true, force: true });
  });

  function peakPixel(): { px: number; py: number } {
    const raster = app.image.lastRaster!;
    const py = raster.rowMap.findIndex((id) => id === PEAK_SPECTRUM);
    const px = raster.colMap.findIndex(([lo, hi]) => lo <= PEAK_BIN && PEAK_BIN < hi);
    expect(py).toBeGreaterThanOrEqual(0);
    expect(px).toBeGreaterThanOrEqual(0);
    return { px, py };
  }

  it("cursor over the injected peak drives the slice view to the peak channel", async () => {
    const { px, py } = peakPixel();
    app.image.overlay.dispatchEvent(
      new MouseEvent("mousemove", { clientX: px, clientY: py, bubbles: true }),
    );
    await waitFor(
      () => app.image.lastReadout?.bin_index === PEAK_BIN,
      "readout for the peak pixel",
    );
    expect(app.image.lastReadout!.spectrum_id).toBe(PEAK_SPECTRUM);

    // the channel the app landed on must be the server's answer for
    // this cursor, fetched independently here
    const oracle = await api.readout("peak.trf", 0, { width: 480, height: 320 }, px, py);
    expect(oracle.bin_index).toBe(PEAK_BIN);
    await waitFor(
      () => app.slice.current?.channel === oracle.bin_index,
      "slice view catching up to the cursor channel",
    );
    expect(app.slice.channel).toBe(oracle.bin_index);

    // and the slice pixels are the server's, bit for bit
    const direct = await api.slice("peak.trf", 0, PEAK_BIN);
    expect(Array.from(app.slice.current!.values)).toEqual(Array.from(direct.values));
    expect(app.state.get().currentChannel).toBe(PEAK_BIN);
  });

  it("readout panel text equals the server readout response", async () => {
    const { px, py } = peakPixel();
    app.image.overlay.dispatchEvent(
      new MouseEvent("mousemove", { clientX: px, clientY: py, bubbles: true }),
    );
    await waitFor(() => app.image.lastReadout !== null, "readout");
    const oracle = await api.readout("peak.trf", 0, { width: 480, height: 320 }, px, py);
    for (const field of [
      "spectrum_id",
      "label",
      "x_at_cursor",
      "y_value",
      "bin_index",
    ] as const) {
      const cell = app.image.readoutEl.querySelector(`[data-field="${field}"]`)!;
      expect(cell.textContent, field).toBe(String(oracle[field]));
    }
  });

  it("spectrum graph shows the pointed spectrum exactly as served", async () => {
    await waitFor(() => app.image.graph.current !== null, "linked spectrum");
    const shown = app.image.graph.current!;
    const direct = await api.spectrum("peak.trf", 0, shown.id);
    expect(shown.counts).toEqual(direct.counts);
    expect(shown.edges).toEqual(direct.edges);
    expect(shown.label).toBe(direct.label);
  });

  it("a dead detector renders as a black row", () => {
    const raster = app.image.lastRaster!;
    const rows = raster.rowMap
      .map((id, y) => ({ id, y }))
      .filter(({ id }) => id === DEAD_SPECTRUM);
    expect(rows.length).toBeGreaterThan(0);
    for (const { y } of rows) {
      const row = raster.pixels.slice(y * raster.width, (y + 1) * raster.width);
      expect(row.every((v) => v === 0)).toBe(true);
    }
  });

  it("slice stepping clamps at both ends", async () => {
    await app.slice.setChannel(0);
    app.slice.backBtn.click();
    await waitFor(() => app.slice.current?.channel === 0, "clamped at 0");
    expect(app.slice.channel).toBe(0);

    await app.slice.setChannel(N_BINS - 1);
    app.slice.fwdBtn.click();
    await waitFor(() => app.slice.current?.channel === N_BINS - 1, "clamped at end");
    expect(app.slice.channel).toBe(N_BINS - 1);

    await app.slice.setChannel(5);
    app.slice.fwdBtn.click();
    await waitFor(() => app.slice.current?.channel === 6, "stepped forward");
  });

  it("scrollbars appear only when the data outgrows the viewport", async () => {
    // the main view: 12 spectra in a 320-row viewport, compressed bins
    expect(app.image.vscroll.style.display).toBe("none");
    expect(app.image.hscroll.style.display).toBe("none");

    // a small viewport over the same dataset needs both once
    // compression is off
    const box = document.createElement("div");
    document.body.appendChild(box);
    const small = new ImageView(box, api, new LinkState(), 64, 8);
    await small.load("peak.trf", 0, N_SPECTRA, N_BINS);
    expect(small.vscroll.style.display).toBe("block");
    expect(small.hscroll.style.display).toBe("none");
    small.compressToggle.checked = false;
    small.compressToggle.dispatchEvent(new Event("change"));
    await waitFor(() => small.hscroll.style.display === "block", "horizontal scrollbar");
    // with compression off, each column is one bin from the offset
    expect(small.lastRaster!.colMap[0][1] - small.lastRaster!.colMap[0][0]).toBe(1);
  });

  it("cloud channel mode serves the same values as the slice", async () => {
    app.cloud.modeToggle.value = "channel";
    app.cloud.modeToggle.dispatchEvent(new Event("change"));
    // the panel starts out showing run totals, so the length alone is
    // not enough — wait until the channel-mode response has been painted
    await waitFor(
      () =>
        app.cloud.shownMode === "channel" &&
        app.cloud.shownChannel === 0 &&
        app.cloud.points.length === N_SPECTRA,
      "cloud channel points",
    );
    const slice = await api.slice("peak.trf", 0, 0);
    const fromCloud = app.cloud.points.map((p) => p.intensity).sort((a, b) => a - b);
    const fromSlice = Array.from(slice.values).sort((a, b) => a - b);
    expect(fromCloud).toEqual(fromSlice);
  });

  it("dragging rotates the cloud camera", () => {
    const before = { ...app.cloud.pose };
    app.cloud.canvas.dispatchEvent(
      new MouseEvent("mousedown", { clientX: 10, clientY: 10, bubbles: true }),
    );
    window.dispatchEvent(new MouseEvent("mousemove", { clientX: 40, clientY: 25 }));
    window.dispatchEvent(new MouseEvent("mouseup", {}));
    expect(app.cloud.pose.yaw).toBeCloseTo(before.yaw + 0.3, 9);
    expect(app.cloud.pose.pitch).toBeCloseTo(before.pitch + 0.15, 9);
  });

  it("live panel replay equals a fresh subscription after reconnect", async () => {
    const livePort = (globalThis as Record<string, unknown>).__livePort as number;
    await waitFor(
      () => app.live.sequence >= 3 && app.live.totalCounts > 0,
      "live deltas flowing",
    );

    // drop the socket mid-stream; the panel must reconnect by itself
    // and resubscribe from where it stopped
    const seqAtDrop = app.live.sequence;
    app.live.socket!.close();
    await waitFor(
      () => app.live.sequence >= seqAtDrop + 2,
      "panel catching up after reconnect",
      40_000,
    );

    const pausedAt = liveControl(livePort, "pause");
    await waitFor(() => app.live.sequence === pausedAt, "panel at the paused sequence");

    // paused simulator: the display stays put
    const seqBefore = app.live.sequence;
    await new Promise((r) => setTimeout(r, 700));
    expect(app.live.sequence).toBe(seqBefore);

    // a fresh panel catching up from zero must reproduce the exact grid
    const freshBox = document.createElement("div");
    document.body.appendChild(freshBox);
    const fresh = new LivePanel(freshBox, api, new LinkState());
    fresh.start();
    try {
      await waitFor(() => fresh.sequence === pausedAt, "fresh panel catch-up");
      expect(fresh.nSpectra).toBe(app.live.nSpectra);
      expect(fresh.nBins).toBe(app.live.nBins);
      expect(Array.from(fresh.grid)).toEqual(Array.from(app.live.grid));
      const drift = Math.abs(fresh.totalCounts - app.live.totalCounts);
      expect(drift).toBeLessThanOrEqual(1e-6 * Math.max(1, fresh.totalCounts));

      // resumed: totals only climb
      liveControl(livePort, "resume");
      const samples: number[] = [];
      for (let i = 0; i < 3; i++) {
        const seq = app.live.sequence;
        await waitFor(() => app.live.sequence > seq, "next delta");
        samples.push(app.live.totalCounts);
      }
      for (let i = 1; i < samples.length; i++) {
        expect(samples[i]).toBeGreaterThanOrEqual(samples[i - 1]);
      }
    } finally {
      fresh.stop();
    }
  });
});
