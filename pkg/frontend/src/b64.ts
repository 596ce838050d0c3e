// Base64 payload decoding for the bulk-array API fields.

export function bytesFromB64(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

// The server serializes little-endian f32; decode explicitly rather
// than reinterpreting the buffer so the result is host-independent.
export function f32FromB64(b64: string): Float32Array {
  const bytes = bytesFromB64(b64);
  if (bytes.length % 4 !== 0) {
    throw new Error(`f32 payload length ${bytes.length} is not a multiple of 4`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.length);
  const out = new Float32Array(bytes.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = view.getFloat32(4 * i, true);
  return out;
}
