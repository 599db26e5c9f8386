/**
 * Scribble capture.
 *
 * A stroke is a sequence of pointer events over the clipping plane.  Each
 * event unprojects to a world point, snaps to the nearest voxel center on the
 * plane, and extends the polyline unless it lands on the voxel already at its
 * tip.  The server rasterizes the polyline; the client only collects it.
 */

import type { PlaneState } from "./plane.js";
import { intersectRay, snapToVoxel } from "./plane.js";
import type { Dims } from "./raster.js";

export type Voxel = [number, number, number];

export class Stroke {
  readonly points: Voxel[] = [];

  constructor(
    private readonly dims: Dims,
    private readonly plane: PlaneState,
  ) {}

  /** Feed one pointer ray; returns the voxel appended, if any. */
  extend(
    rayOrigin: readonly [number, number, number],
    rayDir: readonly [number, number, number],
  ): Voxel | null {
    const hit = intersectRay(this.plane, rayOrigin, rayDir);
    if (hit === null) return null;
    const voxel = snapToVoxel(this.dims, this.plane, hit);
    if (voxel === null) return null;
    const tip = this.points[this.points.length - 1];
    if (tip && tip[0] === voxel[0] && tip[1] === voxel[1] && tip[2] === voxel[2]) {
      return null;
    }
    this.points.push(voxel);
    return voxel;
  }

  get empty(): boolean {
    return this.points.length === 0;
  }

  /** The polyline for an add/extend/split payload. */
  polyline(): number[][] {
    return this.points.map((p) => [p[0], p[1], p[2]]);
  }
}
