// jsdom ships no 2D canvas backend: getContext returns null and the
// views skip painting. Install a minimal recording context instead so
// paint paths execute and tests can assert drawing happened at all.

class StubContext2D {
  fillStyle = "";
  strokeStyle = "";
  calls: string[] = [];

  createImageData(width: number, height: number) {
    return { width, height, data: new Uint8ClampedArray(4 * width * height) };
  }

  putImageData() {
    this.calls.push("putImageData");
  }

  fillRect() {
    this.calls.push("fillRect");
  }

  clearRect() {
    this.calls.push("clearRect");
  }

  beginPath() {}
  moveTo() {}
  lineTo() {}
  stroke() {
    this.calls.push("stroke");
  }
}

const contexts = new WeakMap<HTMLCanvasElement, StubContext2D>();

(HTMLCanvasElement.prototype as any).getContext = function (kind: string) {
  if (kind !== "2d") return null;
  let ctx = contexts.get(this);
  if (!ctx) {
    ctx = new StubContext2D();
    contexts.set(this, ctx);
  }
  return ctx;
};
