// Heat colormap for u8 intensity indices.
//
// Index 0 must stay pure black: the server rasters dead detectors to 0
// and they should read as black rows, matching the PGM export.

const LUT = new Uint8Array(256 * 3);
for (let i = 0; i < 256; i++) {
  const t = i / 255;
  let r: number, g: number, b: number;
  if (t < 0.375) {
    r = t / 0.375;
    g = 0;
    b = 0;
  } else if (t < 0.75) {
    r = 1;
    g = (t - 0.375) / 0.375;
    b = 0;
  } else {
    r = 1;
    g = 1;
    b = (t - 0.75) / 0.25;
  }
  LUT[3 * i] = Math.round(255 * r);
  LUT[3 * i + 1] = Math.round(255 * g);
  LUT[3 * i + 2] = Math.round(255 * b);
}

export function paintIndexed(
  img: ImageData,
  indices: Uint8Array,
  width: number,
  height: number,
): void {
  const px = img.data;
  for (let i = 0; i < width * height; i++) {
    const k = 3 * indices[i];
    px[4 * i] = LUT[k];
    px[4 * i + 1] = LUT[k + 1];
    px[4 * i + 2] = LUT[k + 2];
    px[4 * i + 3] = 255;
  }
}

// CSS color for a normalized [0, 1] value, for per-cell painters.
export function heatColor(t: number): string {
  const i = Math.max(0, Math.min(255, Math.round(255 * t)));
  return `rgb(${LUT[3 * i]},${LUT[3 * i + 1]},${LUT[3 * i + 2]})`;
}
