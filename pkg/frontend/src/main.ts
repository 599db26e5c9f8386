/**
 * Browser entry point.  Everything that needs a real DOM or GPU lives here;
 * the modules it stitches together are all testable headless.
 */

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";

import { ServiceClient, ServiceError } from "./api.js";
import type { TileDescriptor, OpPayload, SessionMeshes } from "./api.js";
import { LabelRaster } from "./raster.js";
import { OpQueue } from "./opqueue.js";
import { Stroke, type Voxel } from "./scribble.js";
import {
  initialState,
  setMode,
  setTool,
  togglePlane,
  scribbleAllowed,
  planeOverlay,
  meshLayer,
  VIEW_MODES,
  TOOLS,
  SCRIBBLE_TOOLS,
  type ViewerState,
  type ViewMode,
  type Tool,
} from "./state.js";
import { movePlane, setPlaneAxis, type Axis } from "./plane.js";
import { sliceDims, sliceLabels, labelOverlayRgba, borderOverlayRgba } from "./overlay.js";
import { TileViewer } from "./viewer.js";

// point at another origin with ?service=http://host:port (the service sends
// permissive CORS headers); default is same-origin
const serviceBase = new URLSearchParams(window.location.search).get("service") ?? "";
const client = new ServiceClient(serviceBase);

interface Session {
  descriptor: TileDescriptor;
  labels: LabelRaster;
  viewer: TileViewer;
  state: ViewerState;
  /** cell -> scribble that seeded it, for the remove tool */
  scribbleOf: Map<number, number>;
  mergeFirst: number | null;
  meshes: SessionMeshes | null;
}

let session: Session | null = null;
let stroke: Stroke | null = null;
let renderer: THREE.WebGLRenderer | null = null;
let controls: OrbitControls | null = null;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const statusLine = document.getElementById("status")!;
const toolBar = document.getElementById("tools")!;
const modeBar = document.getElementById("modes")!;
const planeBar = document.getElementById("plane")!;

function say(text: string): void {
  statusLine.textContent = text;
}

function oops(err: unknown): void {
  if (err instanceof ServiceError) say(`${err.kind}: ${err.message}`);
  else say(String(err));
}

// -----------------------------------------------------------------------------
// Rendering
// -----------------------------------------------------------------------------

function refreshOverlay(): void {
  if (session === null) return;
  const { viewer, state, labels } = session;
  const kind = planeOverlay(state);
  if (kind === null || !state.plane.visible) {
    viewer.setOverlay(null);
    return;
  }
  const [w, h] = sliceDims(labels.dims, state.plane.axis);
  const slice = sliceLabels(labels, state.plane.axis, state.plane.slice);
  const rgba = kind === "labels" ? labelOverlayRgba(slice) : borderOverlayRgba(slice, w, h);
  viewer.setOverlay(rgba, w, h);
}

function refreshMeshes(): void {
  if (session === null) return;
  const layer = meshLayer(session.state);
  if (layer === null) {
    session.viewer.setMeshLayer(null, null);
    return;
  }
  if (session.meshes !== null) {
    session.viewer.setMeshLayer(session.meshes, layer);
    return;
  }
  const token = session.descriptor.session;
  client
    .sessionMeshes(token)
    .then((meshes) => {
      if (session?.descriptor.session !== token) return;
      session.meshes = meshes;
      refreshMeshes();
    })
    .catch(oops);
}

function redraw(): void {
  if (session === null || renderer === null) return;
  session.viewer.setPlane(session.state.plane);
  refreshOverlay();
  session.viewer.render(renderer);
}

function animate(): void {
  requestAnimationFrame(animate);
  controls?.update();
  if (session !== null && renderer !== null) session.viewer.render(renderer);
}

// -----------------------------------------------------------------------------
// Operations
// -----------------------------------------------------------------------------

async function processOp(payload: OpPayload): Promise<void> {
  if (session === null) return;
  const mine = session;
  const result = await client.applyOp(mine.descriptor.session, payload);
  if (session !== mine) return;
  mine.labels.applyRuns(result.runs);
  mine.meshes = null; // geometry is stale now
  if (result.label !== undefined && result.scribble !== undefined) {
    mine.scribbleOf.set(result.label, result.scribble);
  }
  refreshMeshes();
  redraw();
  if (result.noop) {
    say(`${payload.op}: no change`);
  } else {
    say(`${payload.op}: ${result.runs.length} runs, ${result.stats.reevaluated} voxels revisited`);
  }
}

const queue = new OpQueue<OpPayload, void>(processOp);

function submitOp(payload: OpPayload): void {
  queue.enqueue(payload).catch(oops);
}

async function finishTile(verdict: "done" | "skip"): Promise<void> {
  if (session === null) return;
  await client.finish(session.descriptor.session, verdict);
  session = null;
  say(`Tile ${verdict === "done" ? "submitted" : "skipped"}.`);
  await openNextTile();
}

function currentProject(): string {
  return (document.getElementById("project") as HTMLSelectElement).value;
}

function currentUser(): string {
  const field = document.getElementById("user") as HTMLInputElement;
  return field.value.trim() || "anonymous";
}

// -----------------------------------------------------------------------------
// Session lifecycle
// -----------------------------------------------------------------------------

async function openNextTile(): Promise<void> {
  const descriptor = await client.nextTile(currentProject(), currentUser());
  if (descriptor === null) {
    session = null;
    say("No tiles left in this project.");
    return;
  }
  const { dims, samples } = await client.sessionVolume(descriptor.session);
  const labels = await client.sessionLabels(descriptor.session);
  const viewer = new TileViewer(dims, samples);
  const state = initialState(dims);
  state.sessionToken = descriptor.session;
  session = {
    descriptor,
    labels,
    viewer,
    state,
    scribbleOf: new Map(),
    mergeFirst: null,
    meshes: null,
  };
  if (renderer !== null) {
    controls?.dispose();
    controls = new OrbitControls(viewer.camera, canvas);
    viewer.resize(canvas.clientWidth, canvas.clientHeight);
  }
  buildPlaneBar();
  highlightBars();
  say(
    `Tile ${descriptor.tile} (${descriptor.mode}), ` +
      `${dims.join("x")} context, core at ${descriptor.core_offset.join(",")}`,
  );
  redraw();
}

// -----------------------------------------------------------------------------
// Pointer handling
// -----------------------------------------------------------------------------

function pointerRay(ev: PointerEvent): { origin: Voxel; dir: Voxel } | null {
  if (session === null) return null;
  const rect = canvas.getBoundingClientRect();
  const x = (2 * (ev.clientX - rect.left)) / rect.width - 1;
  const y = 1 - (2 * (ev.clientY - rect.top)) / rect.height;
  const ray = session.viewer.castRay(x, y);
  return { origin: ray.origin as Voxel, dir: ray.dir as Voxel };
}

function pickedVoxel(ev: PointerEvent): Voxel | null {
  if (session === null) return null;
  const ray = pointerRay(ev);
  if (ray === null) return null;
  const probe = new Stroke(session.labels.dims, session.state.plane);
  probe.extend(ray.origin, ray.dir);
  const line = probe.polyline();
  return line.length > 0 ? (line[0] as Voxel) : null;
}

function onPointerDown(ev: PointerEvent): void {
  if (session === null) return;
  const { state, labels } = session;
  if (SCRIBBLE_TOOLS.has(state.tool)) {
    if (!scribbleAllowed(state)) return;
    stroke = new Stroke(labels.dims, state.plane);
    const ray = pointerRay(ev);
    if (ray !== null) stroke.extend(ray.origin, ray.dir);
    session.viewer.setScribblePreview(stroke.polyline() as Voxel[]);
    if (controls !== null) controls.enabled = false;
    canvas.setPointerCapture(ev.pointerId);
    return;
  }
  const voxel = pickedVoxel(ev);
  if (voxel === null) return;
  const label = labels.get(...voxel);
  if (label === 0) return;
  if (state.tool === "remove") {
    const scribble = session.scribbleOf.get(label);
    if (scribble === undefined) {
      say(`Cell ${label} has no scribble recorded in this session; draw one first.`);
      return;
    }
    submitOp({ op: "remove", scribble });
  } else if (state.tool === "merge") {
    if (session.mergeFirst === null) {
      session.mergeFirst = label;
      say(`Merge: first cell ${label}, now pick the second.`);
    } else if (session.mergeFirst !== label) {
      submitOp({ op: "merge", a: session.mergeFirst, b: label });
      session.mergeFirst = null;
    }
  }
}

function onPointerMove(ev: PointerEvent): void {
  if (stroke === null || session === null) return;
  const ray = pointerRay(ev);
  if (ray !== null) stroke.extend(ray.origin, ray.dir);
  session.viewer.setScribblePreview(stroke.polyline() as Voxel[]);
}

function onPointerUp(ev: PointerEvent): void {
  if (stroke === null || session === null) return;
  canvas.releasePointerCapture(ev.pointerId);
  if (controls !== null) controls.enabled = true;
  const polyline = stroke.polyline();
  stroke = null;
  session.viewer.setScribblePreview(null);
  if (polyline.length === 0) return;
  const tool = session.state.tool;
  if (tool === "add") {
    submitOp({ op: "add", polyline });
  } else if (tool === "extend" || tool === "split") {
    const anchor = polyline[0] as Voxel;
    const label = session.labels.get(...anchor);
    if (label === 0) {
      say(`${tool} needs to start on an existing cell.`);
      return;
    }
    submitOp({ op: tool, label, polyline });
  }
}

// -----------------------------------------------------------------------------
// Controls
// -----------------------------------------------------------------------------

function button(parent: Element, text: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = text;
  b.addEventListener("click", onClick);
  parent.appendChild(b);
  return b;
}

function highlightBars(): void {
  if (session === null) return;
  const { state } = session;
  toolBar.querySelectorAll("button").forEach((b) => {
    b.classList.toggle("active", b.dataset.tool === state.tool);
  });
  modeBar.querySelectorAll("button").forEach((b) => {
    b.classList.toggle("active", b.dataset.mode === state.mode);
  });
}

function buildPlaneBar(): void {
  planeBar.replaceChildren();
  if (session === null) return;
  const mine = session;
  (["x", "y", "z"] as const).forEach((name, axis) => {
    button(planeBar, name, () => {
      mine.state.plane = setPlaneAxis(mine.state.plane, axis as Axis, mine.viewer.dims);
      buildPlaneBar();
      redraw();
    });
  });
  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "0";
  slider.max = String(mine.viewer.dims[mine.state.plane.axis] - 1);
  slider.value = String(mine.state.plane.slice);
  slider.addEventListener("input", () => {
    mine.state.plane = movePlane(
      mine.state.plane,
      Number(slider.value) - mine.state.plane.slice,
      mine.viewer.dims,
    );
    redraw();
  });
  planeBar.appendChild(slider);
  button(planeBar, "hide/show", () => {
    mine.state = togglePlane(mine.state);
    redraw();
  });
}

function buildStaticBars(): void {
  for (const tool of TOOLS) {
    const b = button(toolBar, tool.replace("_", " "), () => {
      if (session === null) return;
      if (tool === "undo" || tool === "redo" || tool === "erase_all") {
        submitOp({ op: tool });
      } else {
        session.state = setTool(session.state, tool as Tool);
        session.mergeFirst = null;
        highlightBars();
      }
    });
    b.dataset.tool = tool;
  }
  for (const mode of VIEW_MODES) {
    const b = button(modeBar, mode, () => {
      if (session === null) return;
      session.state = setMode(session.state, mode as ViewMode);
      highlightBars();
      refreshMeshes();
      redraw();
    });
    b.dataset.mode = mode;
  }
  const actions = document.getElementById("actions")!;
  button(actions, "done", () => void finishTile("done").catch(oops));
  button(actions, "skip", () => void finishTile("skip").catch(oops));
}

async function populateProjects(): Promise<void> {
  const select = document.getElementById("project") as HTMLSelectElement;
  const projects = await client.listProjects();
  select.replaceChildren();
  for (const id of projects) {
    const option = document.createElement("option");
    option.value = id;
    option.textContent = id;
    select.appendChild(option);
  }
}

function boot(): void {
  renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
  renderer.setSize(canvas.clientWidth, canvas.clientHeight, false);
  buildStaticBars();
  canvas.addEventListener("pointerdown", onPointerDown);
  canvas.addEventListener("pointermove", onPointerMove);
  canvas.addEventListener("pointerup", onPointerUp);
  window.addEventListener("resize", () => {
    renderer?.setSize(canvas.clientWidth, canvas.clientHeight, false);
    session?.viewer.resize(canvas.clientWidth, canvas.clientHeight);
  });
  document.getElementById("next")!.addEventListener("click", () => {
    void openNextTile().catch(oops);
  });
  void populateProjects().catch(oops);
  animate();
}

boot();
