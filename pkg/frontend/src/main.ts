// Application shell: run and dataset pickers across the top, the four
// linked panels below. All panels share one LinkState so the image
// cursor coordinates the slice and cloud views.

import { ApiClient } from "./api";
import { CloudView } from "./cloud_view";
import { ImageView } from "./image_view";
import { LivePanel } from "./live_panel";
import { SliceView } from "./slice_view";
import { LinkState } from "./state";

export interface App {
  image: ImageView;
  slice: SliceView;
  cloud: CloudView;
  live: LivePanel;
  state: LinkState;
  selectRun(run: string): Promise<void>;
  selectDataset(index: number): Promise<void>;
}

export async function createApp(root: HTMLElement, api: ApiClient): Promise<App> {
  const state = new LinkState();

  const bar = document.createElement("div");
  bar.className = "toolbar";
  const runSelect = document.createElement("select");
  const dsSelect = document.createElement("select");
  const barStatus = document.createElement("span");
  barStatus.className = "status";
  bar.append("run:", runSelect, "dataset:", dsSelect, barStatus);

  const grid = document.createElement("div");
  grid.className = "panels";
  const imageBox = panelBox(grid, "image-panel");
  const sliceBox = panelBox(grid, "slice-panel");
  const cloudBox = panelBox(grid, "cloud-panel");
  const liveBox = panelBox(grid, "live-panel");
  root.append(bar, grid);

  const image = new ImageView(imageBox, api, state);
  const slice = new SliceView(sliceBox, api, state);
  const cloud = new CloudView(cloudBox, api, state);
  const live = new LivePanel(liveBox, api, state);

  let activeRun = "";

  async function selectDataset(index: number): Promise<void> {
    const dir = await api.datasets(activeRun);
    const entry = dir.datasets[index];
    if (!entry) return;
    state.selectDataset(activeRun, index, entry.n_bins);
    await image.load(activeRun, index, entry.n_spectra, entry.n_bins);
    // slice and cloud need per-pixel metadata some datasets lack;
    // their panels report that server-side rejection instead of dying
    await slice.load(activeRun, index, entry.n_bins);
    await cloud.load(activeRun, index, entry.n_bins);
  }

  async function selectRun(run: string): Promise<void> {
    activeRun = run;
    const dir = await api.datasets(run);
    dsSelect.innerHTML = "";
    for (const d of dir.datasets) {
      const opt = document.createElement("option");
      opt.value = String(d.index);
      opt.textContent = `${d.name} (${d.n_spectra} x ${d.n_bins})`;
      dsSelect.appendChild(opt);
    }
    await selectDataset(0);
  }

  runSelect.addEventListener("change", () => void selectRun(runSelect.value));
  dsSelect.addEventListener("change", () => void selectDataset(Number(dsSelect.value)));

  try {
    const runs = await api.runs();
    for (const r of runs) {
      const opt = document.createElement("option");
      opt.value = r.filename;
      opt.textContent = `${r.filename} (run ${r.run_number})`;
      runSelect.appendChild(opt);
    }
    if (runs.length > 0) await selectRun(runs[0].filename);
  } catch (err) {
    barStatus.textContent = err instanceof Error ? err.message : String(err);
  }

  live.start();
  return { image, slice, cloud, live, state, selectRun, selectDataset };
}

function panelBox(parent: HTMLElement, cls: string): HTMLDivElement {
  const box = document.createElement("div");
  box.className = `panel ${cls}`;
  parent.appendChild(box);
  return box;
}

// only in the browser; tests build the app against their own server
if (typeof document !== "undefined" && document.getElementById("app")) {
  const root = document.getElementById("app") as HTMLElement;
  void createApp(root, new ApiClient(window.location.origin));
}
