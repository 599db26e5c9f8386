/**
 * Plane overlays.
 *
 * The 2D view modes composite the label raster onto the clipping plane: the
 * label overlay paints each cell in its stable color, the border overlay
 * marks voxels whose in-plane neighbor belongs to a different cell.  Both
 * produce RGBA buffers ready to upload as a plane texture.
 */

import { labelColor } from "./colors.js";
import type { Axis } from "./plane.js";
import { linearIndex, type Dims, type LabelRaster } from "./raster.js";

/** Width and height of the slice perpendicular to `axis` (u fastest). */
export function sliceDims(dims: Dims, axis: Axis): [number, number] {
  if (axis === 0) return [dims[1], dims[2]];
  if (axis === 1) return [dims[0], dims[2]];
  return [dims[0], dims[1]];
}

/** Map slice coordinates (u, v) to volume coordinates on the given plane. */
export function sliceToVoxel(
  axis: Axis,
  slice: number,
  u: number,
  v: number,
): [number, number, number] {
  if (axis === 0) return [slice, u, v];
  if (axis === 1) return [u, slice, v];
  return [u, v, slice];
}

/** Copy one plane of labels out of the raster, u fastest. */
export function sliceLabels(raster: LabelRaster, axis: Axis, slice: number): Uint32Array {
  const [w, h] = sliceDims(raster.dims, axis);
  const out = new Uint32Array(w * h);
  for (let v = 0; v < h; v++) {
    for (let u = 0; u < w; u++) {
      const [x, y, z] = sliceToVoxel(axis, slice, u, v);
      out[u + w * v] = raster.labels[linearIndex(raster.dims, x, y, z)];
    }
  }
  return out;
}

/** Cell colors at the given opacity; label 0 stays fully transparent. */
export function labelOverlayRgba(slice: Uint32Array, alpha = 160): Uint8ClampedArray {
  const out = new Uint8ClampedArray(4 * slice.length);
  for (let i = 0; i < slice.length; i++) {
    const label = slice[i];
    if (label === 0) continue;
    const { r, g, b } = labelColor(label);
    const o = 4 * i;
    out[o] = r;
    out[o + 1] = g;
    out[o + 2] = b;
    out[o + 3] = alpha;
  }
  return out;
}

/** White border pixels where a 4-neighbor in the slice differs. */
export function borderOverlayRgba(
  slice: Uint32Array,
  w: number,
  h: number,
  alpha = 255,
): Uint8ClampedArray {
  if (slice.length !== w * h) {
    throw new Error(`slice holds ${slice.length} pixels, not ${w}x${h}`);
  }
  const out = new Uint8ClampedArray(4 * slice.length);
  for (let v = 0; v < h; v++) {
    for (let u = 0; u < w; u++) {
      const i = u + w * v;
      const here = slice[i];
      const edge =
        (u + 1 < w && slice[i + 1] !== here) ||
        (u > 0 && slice[i - 1] !== here) ||
        (v + 1 < h && slice[i + w] !== here) ||
        (v > 0 && slice[i - w] !== here);
      if (!edge) continue;
      const o = 4 * i;
      out[o] = 255;
      out[o + 1] = 255;
      out[o + 2] = 255;
      out[o + 3] = alpha;
    }
  }
  return out;
}
