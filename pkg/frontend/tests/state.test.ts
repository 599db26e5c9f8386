import { describe, expect, it } from "vitest";

import {
  TOOLS,
  VIEW_MODES,
  initialState,
  meshLayer,
  planeOverlay,
  scribbleAllowed,
  setMode,
  setTool,
  togglePlane,
  type ViewMode,
  type Tool,
} from "../src/state.js";
import type { Dims } from "../src/raster.js";

const DIMS: Dims = [8, 8, 8];

function liveState() {
  const s = initialState(DIMS);
  s.sessionToken = "tok";
  return s;
}

describe("mode and tool selection", () => {
  it("exposes the five view modes and eight tools", () => {
    expect(VIEW_MODES).toHaveLength(5);
    expect(TOOLS).toHaveLength(8);
  });

  it("keeps exactly one mode and one tool active", () => {
    let s = initialState(DIMS);
    for (const mode of VIEW_MODES) {
      s = setMode(s, mode);
      expect(s.mode).toBe(mode);
      expect(TOOLS).toContain(s.tool); // tool untouched by mode switches
    }
    for (const tool of TOOLS) {
      s = setTool(s, tool);
      expect(s.tool).toBe(tool);
      expect(s.mode).toBe(VIEW_MODES[VIEW_MODES.length - 1]);
    }
  });

  it("rejects names outside the fixed vocabulary", () => {
    expect(() => setMode(initialState(DIMS), "freehand" as ViewMode)).toThrow(/view mode/);
    expect(() => setTool(initialState(DIMS), "lasso" as Tool)).toThrow(/tool/);
  });
});

describe("scribbleAllowed", () => {
  it("requires a visible plane, a scribble tool, and a live session", () => {
    const s = liveState();
    expect(scribbleAllowed(setTool(s, "add"))).toBe(true);
    expect(scribbleAllowed(setTool(s, "extend"))).toBe(true);
    expect(scribbleAllowed(setTool(s, "split"))).toBe(true);
  });

  it("refuses when the plane is hidden", () => {
    const s = togglePlane(liveState());
    expect(s.plane.visible).toBe(false);
    expect(scribbleAllowed(s)).toBe(false);
    expect(scribbleAllowed(togglePlane(s))).toBe(true);
  });

  it("refuses for click tools and button tools", () => {
    const s = liveState();
    for (const tool of ["remove", "merge", "undo", "redo", "erase_all"] as const) {
      expect(scribbleAllowed(setTool(s, tool))).toBe(false);
    }
  });

  it("refuses without a session", () => {
    expect(scribbleAllowed(initialState(DIMS))).toBe(false);
  });
});

describe("render layer routing", () => {
  it("maps each mode to one overlay or mesh layer", () => {
    const s = initialState(DIMS);
    expect(planeOverlay(setMode(s, "raw"))).toBeNull();
    expect(meshLayer(setMode(s, "raw"))).toBeNull();
    expect(planeOverlay(setMode(s, "labels-2d"))).toBe("labels");
    expect(planeOverlay(setMode(s, "borders-2d"))).toBe("borders");
    expect(meshLayer(setMode(s, "border-mesh-3d"))).toBe("border");
    expect(meshLayer(setMode(s, "label-meshes-3d"))).toBe("labels");
    expect(planeOverlay(setMode(s, "label-meshes-3d"))).toBeNull();
  });
});
