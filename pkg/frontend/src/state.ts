// Shared view-link state: which run/dataset the panels look at, where
// the image cursor is, and which time channel linked views show.
//
// The channel is never computed locally. The image view feeds it from
// the server readout's bin_index, so a linked slice view always lands
// on the same channel the server resolved for that cursor position.

export interface Cursor {
  px: number;
  py: number;
}

export interface ViewLink {
  activeRun: string | null;
  activeDataset: number;
  cursor: Cursor | null;
  currentChannel: number;
  nChannels: number;
  liveSequence: number;
}

type Listener = (s: ViewLink) => void;

export class LinkState {
  private state: ViewLink = {
    activeRun: null,
    activeDataset: 0,
    cursor: null,
    currentChannel: 0,
    nChannels: 0,
    liveSequence: 0,
  };
  private listeners = new Set<Listener>();

  get(): ViewLink {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private push(patch: Partial<ViewLink>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  selectDataset(run: string, ds: number, nChannels: number): void {
    this.push({
      activeRun: run,
      activeDataset: ds,
      cursor: null,
      currentChannel: Math.min(this.state.currentChannel, Math.max(0, nChannels - 1)),
      nChannels,
    });
  }

  setCursor(cursor: Cursor | null): void {
    this.push({ cursor });
  }

  // from the server readout; clamped defensively, not recomputed
  setChannel(channel: number): void {
    const hi = Math.max(0, this.state.nChannels - 1);
    this.push({ currentChannel: Math.max(0, Math.min(hi, channel)) });
  }

  stepChannel(delta: number): void {
    this.setChannel(this.state.currentChannel + delta);
  }

  setLiveSequence(sequence: number): void {
    this.push({ liveSequence: sequence });
  }
}
