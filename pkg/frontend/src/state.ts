/**
 * Viewer state.
 *
 * Exactly one view mode and one tool are active at any time, and scribble
 * input is only accepted while the clipping plane is visible with a
 * scribble-shaped tool selected.  Everything else (camera, plane, session)
 * hangs off this object so the UI has a single source of truth.
 */

import type { Dims } from "./raster.js";
import { initialPlane, type PlaneState } from "./plane.js";

export const VIEW_MODES = [
  "raw",
  "labels-2d",
  "borders-2d",
  "border-mesh-3d",
  "label-meshes-3d",
] as const;
export type ViewMode = (typeof VIEW_MODES)[number];

export const TOOLS = [
  "add",
  "extend",
  "split",
  "remove",
  "merge",
  "undo",
  "redo",
  "erase_all",
] as const;
export type Tool = (typeof TOOLS)[number];

/** Tools whose input is a polyline drawn on the plane. */
export const SCRIBBLE_TOOLS: ReadonlySet<Tool> = new Set(["add", "extend", "split"]);

export interface ViewerState {
  mode: ViewMode;
  tool: Tool;
  plane: PlaneState;
  sessionToken: string | null;
}

export function initialState(dims: Dims): ViewerState {
  return {
    mode: "labels-2d",
    tool: "add",
    plane: initialPlane(dims),
    sessionToken: null,
  };
}

export function setMode(state: ViewerState, mode: ViewMode): ViewerState {
  if (!VIEW_MODES.includes(mode)) {
    throw new Error(`unknown view mode '${mode}'`);
  }
  return { ...state, mode };
}

export function setTool(state: ViewerState, tool: Tool): ViewerState {
  if (!TOOLS.includes(tool)) {
    throw new Error(`unknown tool '${tool}'`);
  }
  return { ...state, tool };
}

export function togglePlane(state: ViewerState): ViewerState {
  return { ...state, plane: { ...state.plane, visible: !state.plane.visible } };
}

/** Whether pointer strokes may currently become scribbles. */
export function scribbleAllowed(state: ViewerState): boolean {
  return state.plane.visible && SCRIBBLE_TOOLS.has(state.tool) && state.sessionToken !== null;
}

/** The 2D overlay modes composite rasters onto the plane. */
export function planeOverlay(state: ViewerState): "labels" | "borders" | null {
  if (state.mode === "labels-2d") return "labels";
  if (state.mode === "borders-2d") return "borders";
  return null;
}

/** The 3D modes replace plane overlays with service meshes. */
export function meshLayer(state: ViewerState): "border" | "labels" | null {
  if (state.mode === "border-mesh-3d") return "border";
  if (state.mode === "label-meshes-3d") return "labels";
  return null;
}
