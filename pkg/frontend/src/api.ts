/**
 * Client for the annotation service. Everything except saveTracks is
 * read-only; PUT /tracks is the single mutating call and carries If-Match so
 * a concurrent writer surfaces as a conflict instead of a silent overwrite.
 */

import type { FramesDoc, Keyframe, Pose } from "./types.js";

export interface TracksPayload {
  payload: string;
  etag: string;
}

export type SaveResult =
  | { ok: true; etag: string }
  | { ok: false; conflict: true }
  | { ok: false; conflict: false; status: number; message: string };

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async sequences(): Promise<{ id: string; frames: number }[]> {
    const resp = await this.fetchImpl(this.url("/sequences"));
    if (!resp.ok) throw new Error(`sequences: HTTP ${resp.status}`);
    return (await resp.json()).sequences;
  }

  async frames(sequenceId: string): Promise<FramesDoc> {
    const resp = await this.fetchImpl(this.url(`/sequences/${sequenceId}/frames`));
    if (!resp.ok) throw new Error(`frames: HTTP ${resp.status}`);
    return await resp.json();
  }

  bevUrl(sequenceId: string, frameTime: number): string {
    return this.url(`/sequences/${sequenceId}/bev/${frameTime}`);
  }

  async loadTracks(sequenceId: string): Promise<TracksPayload> {
    const resp = await this.fetchImpl(this.url(`/sequences/${sequenceId}/tracks`));
    if (!resp.ok) throw new Error(`tracks: HTTP ${resp.status}`);
    return { payload: await resp.text(), etag: resp.headers.get("ETag") ?? "" };
  }

  async saveTracks(sequenceId: string, payload: string, etag: string | null): Promise<SaveResult> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (etag) headers["If-Match"] = etag;
    const resp = await this.fetchImpl(this.url(`/sequences/${sequenceId}/tracks`), {
      method: "PUT",
      headers,
      body: payload,
    });
    if (resp.status === 204) return { ok: true, etag: resp.headers.get("ETag") ?? "" };
    if (resp.status === 409) return { ok: false, conflict: true };
    return { ok: false, conflict: false, status: resp.status, message: await resp.text() };
  }

  async interpolate(sequenceId: string, label: number, keyframes: Keyframe[]): Promise<Pose[]> {
    const resp = await this.fetchImpl(this.url(`/sequences/${sequenceId}/interpolate`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ label, keyframes }),
    });
    if (!resp.ok) throw new Error(`interpolate: HTTP ${resp.status}`);
    return (await resp.json()).poses;
  }
}
