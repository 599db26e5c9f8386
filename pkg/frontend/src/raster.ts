/**
 * Client-side rasters.
 *
 * The service ships volumes and label maps as raw little-endian blobs with an
 * `X-Raster` JSON header, all in x-fastest linear order.  The client never
 * segments anything itself: its label raster is exactly the composition of the
 * RLE deltas the server streams back, one per operation.
 */

export type Dims = [number, number, number];

/** One delta run: starting linear index, length, new label. */
export type Run = [number, number, number];

export interface RasterHeader {
  dims: Dims;
  dtype: "u8" | "u16" | "u32";
  spacing: [number, number, number];
}

export function voxelCount(dims: Dims): number {
  return dims[0] * dims[1] * dims[2];
}

export function linearIndex(dims: Dims, x: number, y: number, z: number): number {
  return x + dims[0] * (y + dims[1] * z);
}

export function parseRasterHeader(text: string): RasterHeader {
  const raw = JSON.parse(text) as Partial<RasterHeader>;
  if (
    !Array.isArray(raw.dims) ||
    raw.dims.length !== 3 ||
    raw.dims.some((d) => !Number.isInteger(d) || d <= 0)
  ) {
    throw new Error(`bad raster header dims: ${text}`);
  }
  const dtype = raw.dtype;
  if (dtype !== "u8" && dtype !== "u16" && dtype !== "u32") {
    throw new Error(`bad raster header dtype: ${String(dtype)}`);
  }
  const spacing = Array.isArray(raw.spacing) && raw.spacing.length === 3
    ? (raw.spacing.map(Number) as [number, number, number])
    : ([1, 1, 1] as [number, number, number]);
  return { dims: raw.dims.map(Number) as Dims, dtype, spacing };
}

const BYTES: Record<RasterHeader["dtype"], number> = { u8: 1, u16: 2, u32: 4 };

/** Decode a raw raster body against its header (little-endian). */
export function decodeSamples(
  header: RasterHeader,
  body: ArrayBuffer,
): Uint8Array | Uint16Array | Uint32Array {
  const n = voxelCount(header.dims);
  const expected = n * BYTES[header.dtype];
  if (body.byteLength !== expected) {
    throw new Error(`raster body is ${body.byteLength} bytes, expected ${expected}`);
  }
  // Typed-array views assume platform endianness; go through a DataView so the
  // wire format stays little-endian everywhere.
  const view = new DataView(body);
  if (header.dtype === "u8") {
    return new Uint8Array(body.slice(0));
  }
  if (header.dtype === "u16") {
    const out = new Uint16Array(n);
    for (let i = 0; i < n; i++) out[i] = view.getUint16(2 * i, true);
    return out;
  }
  const out = new Uint32Array(n);
  for (let i = 0; i < n; i++) out[i] = view.getUint32(4 * i, true);
  return out;
}

/** The label raster a session edits, kept in sync by replaying server runs. */
export class LabelRaster {
  readonly dims: Dims;
  readonly labels: Uint32Array;

  constructor(dims: Dims, labels?: Uint32Array) {
    this.dims = dims;
    const n = voxelCount(dims);
    if (labels !== undefined && labels.length !== n) {
      throw new Error(`label buffer holds ${labels.length} voxels, dims need ${n}`);
    }
    this.labels = labels ?? new Uint32Array(n);
  }

  get(x: number, y: number, z: number): number {
    return this.labels[linearIndex(this.dims, x, y, z)];
  }

  /** Overwrite the runs of one server delta, in order. */
  applyRuns(runs: readonly Run[]): void {
    const n = this.labels.length;
    for (const [start, length, label] of runs) {
      if (start < 0 || length < 0 || start + length > n) {
        throw new Error(`run [${start}, ${length}] exceeds ${n} voxels`);
      }
      this.labels.fill(label, start, start + length);
    }
  }

  copy(): LabelRaster {
    return new LabelRaster(this.dims, this.labels.slice());
  }

  equals(other: LabelRaster): boolean {
    if (
      this.dims[0] !== other.dims[0] ||
      this.dims[1] !== other.dims[1] ||
      this.dims[2] !== other.dims[2]
    ) {
      return false;
    }
    const a = this.labels;
    const b = other.labels;
    for (let i = 0; i < a.length; i++) {
      if (a[i] !== b[i]) return false;
    }
    return true;
  }
}
