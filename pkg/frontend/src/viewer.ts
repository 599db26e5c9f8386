/**
 * Scene construction for one tile.
 *
 * The tile is a self-contained box: volume samples ray-cast inside an
 * always-visible wireframe frame, the clipping plane as a textured quad, and
 * (in the 3D modes) the mesh layer the service provides.  World space equals
 * voxel-index space; the box spans [-0.5, d-0.5] on each axis.
 *
 * Nothing here owns a WebGL context: the app passes its renderer to
 * `render`, so everything else stays constructible headless.
 */

import * as THREE from "three";

import { SCRIBBLE_COLOR, labelColor } from "./colors.js";
import type { PlaneState } from "./plane.js";
import type { SessionMeshes, MeshDict } from "./api.js";
import { sliceDims } from "./overlay.js";
import type { Dims } from "./raster.js";
import type { Voxel } from "./scribble.js";

// -----------------------------------------------------------------------------
// Volume ray casting
// -----------------------------------------------------------------------------

const VOLUME_VERT = /* glsl */ `
out vec3 vWorld;

void main() {
  vec4 world = modelMatrix * vec4(position, 1.0);
  vWorld = world.xyz;
  gl_Position = projectionMatrix * viewMatrix * world;
}
`;

const VOLUME_FRAG = /* glsl */ `
precision highp float;
precision highp sampler3D;

uniform sampler3D uVolume;
uniform vec3 uBoxMin;
uniform vec3 uBoxMax;
uniform vec3 uClipNormal;
uniform float uClipOffset;
uniform float uClipEnabled;
uniform float uSteps;

in vec3 vWorld;
out vec4 outColor;

vec2 boxSpan(vec3 origin, vec3 invDir) {
  vec3 tA = (uBoxMin - origin) * invDir;
  vec3 tB = (uBoxMax - origin) * invDir;
  vec3 tNear = min(tA, tB);
  vec3 tFar = max(tA, tB);
  return vec2(max(max(tNear.x, tNear.y), tNear.z), min(min(tFar.x, tFar.y), tFar.z));
}

void main() {
  vec3 dir = normalize(vWorld - cameraPosition);
  vec2 span = boxSpan(cameraPosition, 1.0 / dir);
  span.x = max(span.x, 0.0);
  if (span.x > span.y) discard;

  float stepLen = (span.y - span.x) / uSteps;
  float peak = 0.0;
  for (float i = 0.5; i < uSteps; i += 1.0) {
    vec3 p = cameraPosition + dir * (span.x + i * stepLen);
    if (uClipEnabled > 0.5 && dot(p, uClipNormal) > uClipOffset + 0.5) {
      continue;
    }
    vec3 tex = (p - uBoxMin) / (uBoxMax - uBoxMin);
    peak = max(peak, texture(uVolume, tex).r);
  }
  if (peak <= 0.003) discard;
  outColor = vec4(vec3(peak), peak * 0.85);
}
`;

function rescaledU16(samples: Uint16Array): Uint8Array<ArrayBuffer> {
  // display copy only; the full range stays on the server
  const data = new Uint8Array(samples.length);
  let top = 1;
  for (let i = 0; i < samples.length; i++) top = Math.max(top, samples[i]);
  for (let i = 0; i < samples.length; i++) data[i] = Math.round((255 * samples[i]) / top);
  return data;
}

export function volumeTexture(dims: Dims, samples: Uint8Array | Uint16Array): THREE.Data3DTexture {
  const data = samples instanceof Uint16Array ? rescaledU16(samples) : new Uint8Array(samples);
  const tex = new THREE.Data3DTexture(data, dims[0], dims[1], dims[2]);
  tex.format = THREE.RedFormat;
  tex.minFilter = THREE.LinearFilter;
  tex.magFilter = THREE.LinearFilter;
  tex.unpackAlignment = 1;
  tex.needsUpdate = true;
  return tex;
}

export function volumeMaterial(texture: THREE.Data3DTexture, dims: Dims): THREE.ShaderMaterial {
  return new THREE.ShaderMaterial({
    glslVersion: THREE.GLSL3,
    vertexShader: VOLUME_VERT,
    fragmentShader: VOLUME_FRAG,
    side: THREE.BackSide,
    transparent: true,
    depthWrite: false,
    uniforms: {
      uVolume: { value: texture },
      uBoxMin: { value: new THREE.Vector3(-0.5, -0.5, -0.5) },
      uBoxMax: { value: new THREE.Vector3(dims[0] - 0.5, dims[1] - 0.5, dims[2] - 0.5) },
      uClipNormal: { value: new THREE.Vector3(0, 0, 1) },
      uClipOffset: { value: dims[2] - 0.5 },
      uClipEnabled: { value: 0 },
      uSteps: { value: 2 * Math.max(dims[0], dims[1], dims[2]) },
    },
  });
}

// -----------------------------------------------------------------------------
// Static scene pieces
// -----------------------------------------------------------------------------

/** The orientation frame every tile sits in. */
export function wireframeBox(dims: Dims): THREE.LineSegments {
  const geom = new THREE.BoxGeometry(dims[0], dims[1], dims[2]);
  const edges = new THREE.EdgesGeometry(geom);
  const lines = new THREE.LineSegments(
    edges,
    new THREE.LineBasicMaterial({ color: 0x8899aa }),
  );
  lines.position.set(dims[0] / 2 - 0.5, dims[1] / 2 - 0.5, dims[2] / 2 - 0.5);
  geom.dispose();
  return lines;
}

export function boxCenter(dims: Dims): THREE.Vector3 {
  return new THREE.Vector3(dims[0] / 2 - 0.5, dims[1] / 2 - 0.5, dims[2] / 2 - 0.5);
}

/** Quad carrying the plane overlay texture, oriented per axis. */
export function planeQuad(dims: Dims, plane: PlaneState): THREE.Mesh {
  const [w, h] = sliceDims(dims, plane.axis);
  const geom = new THREE.PlaneGeometry(w, h);
  const mat = new THREE.MeshBasicMaterial({
    transparent: true,
    side: THREE.DoubleSide,
    depthWrite: false,
  });
  const quad = new THREE.Mesh(geom, mat);
  orientPlaneQuad(quad, dims, plane);
  return quad;
}

export function orientPlaneQuad(quad: THREE.Object3D, dims: Dims, plane: PlaneState): void {
  const c = boxCenter(dims);
  quad.rotation.set(0, 0, 0);
  if (plane.axis === 0) {
    quad.rotation.y = Math.PI / 2;
    quad.rotation.z = Math.PI / 2;
    quad.position.set(plane.slice, c.y, c.z);
  } else if (plane.axis === 1) {
    quad.rotation.x = Math.PI / 2;
    quad.position.set(c.x, plane.slice, c.z);
  } else {
    quad.position.set(c.x, c.y, plane.slice);
  }
}

export function overlayTexture(rgba: Uint8ClampedArray, w: number, h: number): THREE.DataTexture {
  const tex = new THREE.DataTexture(new Uint8Array(rgba), w, h);
  tex.format = THREE.RGBAFormat;
  tex.needsUpdate = true;
  return tex;
}

// -----------------------------------------------------------------------------
// Mesh layer
// -----------------------------------------------------------------------------

export function meshFromDict(dict: MeshDict, color: THREE.ColorRepresentation): THREE.Mesh {
  const geom = new THREE.BufferGeometry();
  const positions = new Float32Array(dict.vertices.length * 3);
  dict.vertices.forEach((v, i) => positions.set(v, 3 * i));
  geom.setAttribute("position", new THREE.BufferAttribute(positions, 3));
  const index = new Uint32Array(dict.triangles.length * 3);
  dict.triangles.forEach((t, i) => index.set(t, 3 * i));
  geom.setIndex(new THREE.BufferAttribute(index, 1));
  geom.computeVertexNormals();
  const mat = new THREE.MeshLambertMaterial({
    color,
    transparent: true,
    opacity: 0.85,
    side: THREE.DoubleSide,
  });
  return new THREE.Mesh(geom, mat);
}

/** Build the group for one mesh layer: all cells, or just the border wall. */
export function meshLayerGroup(meshes: SessionMeshes, layer: "border" | "labels"): THREE.Group {
  const group = new THREE.Group();
  if (layer === "border") {
    group.add(meshFromDict(meshes.border, 0xdddddd));
    return group;
  }
  for (const [label, dict] of Object.entries(meshes.labels)) {
    const { r, g, b } = labelColor(Number(label));
    group.add(meshFromDict(dict, new THREE.Color(r / 255, g / 255, b / 255)));
  }
  return group;
}

// -----------------------------------------------------------------------------
// Scribble preview
// -----------------------------------------------------------------------------

/** The uniform yellow polyline echoed while the user draws. */
export function scribbleLine(points: readonly Voxel[]): THREE.Line {
  const geom = new THREE.BufferGeometry();
  const positions = new Float32Array(points.length * 3);
  points.forEach((p, i) => positions.set(p, 3 * i));
  geom.setAttribute("position", new THREE.BufferAttribute(positions, 3));
  const { r, g, b } = SCRIBBLE_COLOR;
  return new THREE.Line(
    geom,
    new THREE.LineBasicMaterial({ color: new THREE.Color(r / 255, g / 255, b / 255) }),
  );
}

// -----------------------------------------------------------------------------
// The tile viewer
// -----------------------------------------------------------------------------

export interface RendererLike {
  render(scene: THREE.Object3D, camera: THREE.Camera): void;
}

export class TileViewer {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private readonly volumeMesh: THREE.Mesh;
  private readonly quad: THREE.Mesh;
  private meshGroup: THREE.Group | null = null;
  private preview: THREE.Line | null = null;

  constructor(
    readonly dims: Dims,
    samples: Uint8Array | Uint16Array,
  ) {
    const span = Math.max(...dims);
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.1, 40 * span);
    const c = boxCenter(dims);
    this.camera.position.set(c.x + 1.6 * span, c.y + 1.2 * span, c.z + 1.6 * span);
    this.camera.lookAt(c);

    this.scene.add(new THREE.AmbientLight(0xffffff, 0.7));
    const sun = new THREE.DirectionalLight(0xffffff, 1.2);
    sun.position.set(1, 2, 3);
    this.scene.add(sun);
    this.scene.add(wireframeBox(dims));

    const box = new THREE.BoxGeometry(dims[0], dims[1], dims[2]);
    this.volumeMesh = new THREE.Mesh(box, volumeMaterial(volumeTexture(dims, samples), dims));
    this.volumeMesh.position.copy(c);
    this.scene.add(this.volumeMesh);

    this.quad = planeQuad(dims, { axis: 2, slice: 0, visible: true });
    this.scene.add(this.quad);
  }

  private get volumeUniforms(): Record<string, THREE.IUniform> {
    return (this.volumeMesh.material as THREE.ShaderMaterial).uniforms;
  }

  setPlane(plane: PlaneState): void {
    this.quad.visible = plane.visible;
    orientPlaneQuad(this.quad, this.dims, plane);
    const u = this.volumeUniforms;
    const n = [0, 0, 0];
    n[plane.axis] = 1;
    (u.uClipNormal.value as THREE.Vector3).set(n[0], n[1], n[2]);
    u.uClipOffset.value = plane.slice;
    u.uClipEnabled.value = plane.visible ? 1 : 0;
  }

  setOverlay(rgba: Uint8ClampedArray | null, w = 0, h = 0): void {
    const mat = this.quad.material as THREE.MeshBasicMaterial;
    mat.map?.dispose();
    mat.map = rgba === null ? null : overlayTexture(rgba, w, h);
    mat.needsUpdate = true;
  }

  setMeshLayer(meshes: SessionMeshes | null, layer: "border" | "labels" | null): void {
    if (this.meshGroup !== null) {
      this.scene.remove(this.meshGroup);
      this.meshGroup = null;
    }
    if (meshes !== null && layer !== null) {
      this.meshGroup = meshLayerGroup(meshes, layer);
      this.scene.add(this.meshGroup);
    }
  }

  setScribblePreview(points: readonly Voxel[] | null): void {
    if (this.preview !== null) {
      this.scene.remove(this.preview);
      this.preview = null;
    }
    if (points !== null && points.length > 0) {
      this.preview = scribbleLine(points);
      this.scene.add(this.preview);
    }
  }

  /** World-space ray under normalized device coordinates (-1..1). */
  castRay(ndcX: number, ndcY: number): { origin: Voxel; dir: Voxel } {
    this.camera.updateMatrixWorld();
    const caster = new THREE.Raycaster();
    caster.setFromCamera(new THREE.Vector2(ndcX, ndcY), this.camera);
    const o = caster.ray.origin;
    const d = caster.ray.direction;
    return { origin: [o.x, o.y, o.z], dir: [d.x, d.y, d.z] };
  }

  resize(width: number, height: number): void {
    this.camera.aspect = width / height;
    this.camera.updateProjectionMatrix();
  }

  render(renderer: RendererLike): void {
    renderer.render(this.scene, this.camera);
  }
}
