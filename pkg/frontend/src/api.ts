// Typed client for the HTTP API. Every view gets its numbers from
// these responses; nothing is derived client-side beyond rendering.

import { bytesFromB64, f32FromB64 } from "./b64";

export interface RunEntry {
  filename: string;
  instrument: string;
  run_number: number;
  start_time: number;
  n_datasets: number;
  file_size: number;
}

export interface DatasetEntry {
  index: number;
  name: string;
  kind: string;
  n_spectra: number;
  n_bins: number;
}

export interface RunDirectory {
  run: string;
  instrument: string;
  run_number: number;
  start_time: number;
  datasets: DatasetEntry[];
}

export interface ViewportParams {
  width: number;
  height: number;
  rowOffset?: number;
  colOffset?: number;
  compress?: boolean;
  scale?: "linear" | "log";
}

export interface Raster {
  width: number;
  height: number;
  pixels: Uint8Array;
  rowMap: number[];
  colMap: Array<[number, number]>;
  valueRange: [number, number];
}

export interface SpectrumData {
  id: number;
  label: string;
  group_id: number;
  x_units: string;
  y_units: string;
  edges: number[];
  counts: number[];
  errors: number[];
}

export interface SliceData {
  channel: number;
  nRows: number;
  nCols: number;
  values: Float32Array;
}

export interface CloudPoint {
  x: number;
  y: number;
  z: number;
  intensity: number;
}

export interface Readout {
  spectrum_id: number;
  label: string;
  x_at_cursor: number;
  y_value: number;
  bin_index: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

function viewportQuery(vp: ViewportParams): Record<string, string> {
  return {
    width: String(vp.width),
    height: String(vp.height),
    row_offset: String(vp.rowOffset ?? 0),
    col_offset: String(vp.colOffset ?? 0),
    compress: String(vp.compress ?? true),
    scale: vp.scale ?? "linear",
  };
}

export class ApiClient {
  constructor(private baseUrl: string) {}

  private async getJson<T>(
    path: string,
    params: Record<string, string>,
    signal?: AbortSignal,
  ): Promise<T> {
    const url = new URL(path, this.baseUrl);
    for (const [k, v] of Object.entries(params)) url.searchParams.set(k, v);
    const resp = await fetch(url, { signal });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = (await resp.json()).detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  runs(signal?: AbortSignal): Promise<RunEntry[]> {
    return this.getJson("/api/runs", {}, signal);
  }

  datasets(run: string, signal?: AbortSignal): Promise<RunDirectory> {
    return this.getJson(`/api/runs/${encodeURIComponent(run)}/datasets`, {}, signal);
  }

  async raster(
    run: string,
    ds: number,
    vp: ViewportParams,
    signal?: AbortSignal,
  ): Promise<Raster> {
    interface Wire {
      width: number;
      height: number;
      pixels: string;
      row_map: number[];
      col_map: Array<[number, number]>;
      value_range: [number, number];
    }
    const w = await this.getJson<Wire>(
      "/api/raster",
      { run, ds: String(ds), ...viewportQuery(vp) },
      signal,
    );
    return {
      width: w.width,
      height: w.height,
      pixels: bytesFromB64(w.pixels),
      rowMap: w.row_map,
      colMap: w.col_map,
      valueRange: w.value_range,
    };
  }

  spectrum(run: string, ds: number, id: number, signal?: AbortSignal): Promise<SpectrumData> {
    return this.getJson("/api/spectrum", { run, ds: String(ds), id: String(id) }, signal);
  }

  async slice(
    run: string,
    ds: number,
    channel: number,
    signal?: AbortSignal,
  ): Promise<SliceData> {
    interface Wire {
      channel: number;
      n_rows: number;
      n_cols: number;
      values: string;
    }
    const w = await this.getJson<Wire>(
      "/api/slice",
      { run, ds: String(ds), channel: String(channel) },
      signal,
    );
    return {
      channel: w.channel,
      nRows: w.n_rows,
      nCols: w.n_cols,
      values: f32FromB64(w.values),
    };
  }

  async points(
    run: string,
    ds: number,
    mode: "total" | "channel",
    channel?: number,
    signal?: AbortSignal,
  ): Promise<CloudPoint[]> {
    const params: Record<string, string> = { run, ds: String(ds), mode };
    if (mode === "channel") params.channel = String(channel ?? 0);
    interface Wire {
      mode: string;
      channel: number | null;
      points: CloudPoint[];
    }
    const w = await this.getJson<Wire>("/api/points", params, signal);
    return w.points;
  }

  readout(
    run: string,
    ds: number,
    vp: ViewportParams,
    px: number,
    py: number,
    signal?: AbortSignal,
  ): Promise<Readout> {
    return this.getJson(
      "/api/readout",
      { run, ds: String(ds), ...viewportQuery(vp), px: String(px), py: String(py) },
      signal,
    );
  }

  liveSocketUrl(since: number): string {
    const url = new URL("/api/live", this.baseUrl);
    url.protocol = url.protocol === "https:" ? "wss:" : "ws:";
    url.searchParams.set("since", String(since));
    return url.toString();
  }
}
