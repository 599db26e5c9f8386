/**
 * The clipping plane.
 *
 * World coordinates equal voxel-index coordinates: the center of voxel
 * (x, y, z) sits at position (x, y, z), so the volume occupies the box
 * [-0.5, d-0.5] per axis.  The plane the user scribbles on is axis-aligned
 * and sits exactly on a slice of voxel centers; it slides along its normal
 * one slice at a time.
 */

import type { Dims } from "./raster.js";

export type Axis = 0 | 1 | 2;

export interface PlaneState {
  axis: Axis;
  slice: number;
  visible: boolean;
}

export function initialPlane(dims: Dims): PlaneState {
  return { axis: 2, slice: Math.floor(dims[2] / 2), visible: true };
}

export function planeNormal(plane: PlaneState): [number, number, number] {
  const n: [number, number, number] = [0, 0, 0];
  n[plane.axis] = 1;
  return n;
}

export function planeOrigin(plane: PlaneState): [number, number, number] {
  const o: [number, number, number] = [0, 0, 0];
  o[plane.axis] = plane.slice;
  return o;
}

/** Slide along the normal, clamped to the volume. */
export function movePlane(plane: PlaneState, delta: number, dims: Dims): PlaneState {
  const limit = dims[plane.axis] - 1;
  const slice = Math.min(limit, Math.max(0, plane.slice + delta));
  return { ...plane, slice };
}

export function setPlaneAxis(plane: PlaneState, axis: Axis, dims: Dims): PlaneState {
  const limit = dims[axis] - 1;
  return { axis, slice: Math.min(limit, Math.max(0, plane.slice)), visible: plane.visible };
}

/**
 * Snap a world-space point on the plane to the nearest voxel center.
 *
 * The plane's own coordinate is pinned to its slice; the in-plane
 * coordinates round to the nearest center and must fall inside the volume
 * (within the half-voxel skin), otherwise the point misses and returns null.
 */
export function snapToVoxel(
  dims: Dims,
  plane: PlaneState,
  point: readonly [number, number, number],
): [number, number, number] | null {
  const out: [number, number, number] = [0, 0, 0];
  for (let axis = 0; axis < 3; axis++) {
    if (axis === plane.axis) {
      out[axis] = plane.slice;
      continue;
    }
    const p = point[axis];
    if (p < -0.5 || p >= dims[axis] - 0.5) {
      return null;
    }
    out[axis] = Math.min(dims[axis] - 1, Math.round(p));
  }
  return out;
}

/**
 * Where a view ray pierces the plane, in world space; null when the ray is
 * parallel to it or points away.
 */
export function intersectRay(
  plane: PlaneState,
  rayOrigin: readonly [number, number, number],
  rayDir: readonly [number, number, number],
): [number, number, number] | null {
  const a = plane.axis;
  const denom = rayDir[a];
  if (Math.abs(denom) < 1e-12) return null;
  const t = (plane.slice - rayOrigin[a]) / denom;
  if (t < 0) return null;
  return [
    rayOrigin[0] + t * rayDir[0],
    rayOrigin[1] + t * rayDir[1],
    rayOrigin[2] + t * rayDir[2],
  ];
}
