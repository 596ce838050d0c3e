// At most one in-flight request per panel: starting a new request
// aborts the previous one, and a stale response that still manages to
// resolve is dropped instead of overwriting newer state.

export class LatestWins {
  private controller: AbortController | null = null;
  private epoch = 0;

  async run<T>(fn: (signal: AbortSignal) => Promise<T>): Promise<T | null> {
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    const epoch = ++this.epoch;
    try {
      const value = await fn(controller.signal);
      return epoch === this.epoch ? value : null;
    } catch (err) {
      if (controller.signal.aborted || epoch !== this.epoch) return null;
      throw err;
    }
  }

  cancel(): void {
    this.controller?.abort();
    this.controller = null;
    this.epoch++;
  }
}
