/**
 * HTTP client for the collaboration service.
 *
 * This is the only doorway to the backend: binary rasters arrive as raw
 * bodies with the `X-Raster` header, everything else is JSON.  Errors come
 * back as `{error, message}` objects and are rethrown as ServiceError.
 */

import {
  decodeSamples,
  LabelRaster,
  parseRasterHeader,
  type Dims,
  type RasterHeader,
  type Run,
} from "./raster.js";

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    message: string,
  ) {
    super(message);
  }
}

export interface TileDescriptor {
  tile: number;
  session: string;
  mode: "scratch" | "correction";
  context_dims: Dims;
  core_dims: Dims;
  core_offset: Dims;
  core_origin: Dims;
}

export interface OpResult {
  runs: Run[];
  noop: boolean;
  stats: Record<string, number>;
  scribble?: number;
  label?: number;
}

export interface MeshDict {
  vertices: number[][];
  triangles: number[][];
}

export interface SessionMeshes {
  labels: Record<string, MeshDict>;
  border: MeshDict;
}

export type OpPayload =
  | { op: "add"; polyline: number[][] }
  | { op: "extend" | "split"; label: number; polyline: number[][] }
  | { op: "remove"; scribble: number }
  | { op: "merge"; a: number; b: number }
  | { op: "undo" | "redo" | "erase_all" };

async function failFrom(response: Response): Promise<never> {
  let kind = "ServiceError";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = (await response.json()) as { error?: string; message?: string };
    if (body.message) {
      kind = body.error ?? kind;
      message = body.message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ServiceError(response.status, kind, message);
}

export class ServiceClient {
  constructor(readonly base: string) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  private async getJson<T>(path: string): Promise<T> {
    const r = await fetch(this.url(path));
    if (!r.ok) await failFrom(r);
    return (await r.json()) as T;
  }

  private async postJson<T>(path: string, payload: unknown): Promise<T> {
    const r = await fetch(this.url(path), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!r.ok) await failFrom(r);
    return (await r.json()) as T;
  }

  private async getRaster(path: string): Promise<{ header: RasterHeader; body: ArrayBuffer }> {
    const r = await fetch(this.url(path));
    if (!r.ok) await failFrom(r);
    const headerText = r.headers.get("X-Raster");
    if (headerText === null) {
      throw new ServiceError(r.status, "ProtocolError", `no X-Raster header on ${path}`);
    }
    return { header: parseRasterHeader(headerText), body: await r.arrayBuffer() };
  }

  async listProjects(): Promise<string[]> {
    const d = await this.getJson<{ projects: string[] }>("/projects");
    return d.projects;
  }

  async projectInfo(pid: string): Promise<Record<string, unknown>> {
    return this.getJson(`/projects/${pid}`);
  }

  /** Assign the next open tile, or null when the user is done. */
  async nextTile(pid: string, user: string): Promise<TileDescriptor | null> {
    const d = await this.getJson<TileDescriptor | { tile: null }>(
      `/projects/${pid}/next-tile?user=${encodeURIComponent(user)}`,
    );
    return d.tile === null ? null : (d as TileDescriptor);
  }

  /** The session's context volume (u8 or u16 samples). */
  async sessionVolume(
    token: string,
  ): Promise<{ dims: Dims; samples: Uint8Array | Uint16Array }> {
    const { header, body } = await this.getRaster(`/sessions/${token}/volume`);
    const samples = decodeSamples(header, body);
    if (samples instanceof Uint32Array) {
      throw new ServiceError(200, "ProtocolError", "volume arrived as u32");
    }
    return { dims: header.dims, samples };
  }

  /** The server's authoritative label raster for the session. */
  async sessionLabels(token: string): Promise<LabelRaster> {
    const { header, body } = await this.getRaster(`/sessions/${token}/labels`);
    const samples = decodeSamples(header, body);
    if (!(samples instanceof Uint32Array)) {
      throw new ServiceError(200, "ProtocolError", `labels arrived as ${header.dtype}`);
    }
    return new LabelRaster(header.dims, samples);
  }

  async applyOp(token: string, payload: OpPayload): Promise<OpResult> {
    return this.postJson(`/sessions/${token}/ops`, payload);
  }

  async finish(token: string, verdict: "done" | "skip"): Promise<Record<string, unknown>> {
    return this.postJson(`/sessions/${token}/finish`, { verdict });
  }

  async sessionMeshes(token: string, smooth = 3, lam = 0.5): Promise<SessionMeshes> {
    return this.getJson(`/sessions/${token}/meshes?smooth=${smooth}&lam=${lam}`);
  }
}
