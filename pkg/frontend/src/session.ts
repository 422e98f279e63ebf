/**
 * Annotation session state: loaded tracks, the dirty edit set, frame cursor,
 * and the selected instance. Server state changes only when save() succeeds;
 * discarding loses exactly the unsaved edits.
 */

import type { BoxSize, Keyframe, Track, TracksDoc } from "./types.js";

const VEHICLE_BOX: BoxSize = { length: 4.0, width: 2.0 };
const HUMAN_BOX: BoxSize = { length: 0.8, width: 0.8 };

/** Wrap into (-pi, pi], mirroring the track store. */
export function normalizeYaw(yaw: number): number {
  let r = yaw % (2 * Math.PI);
  if (r < 0) r += 2 * Math.PI;
  if (r > Math.PI) r -= 2 * Math.PI;
  return r;
}

/** Yaw handle snapping: whole degrees unless free rotation is requested. */
export function snapYaw(yaw: number, free = false): number {
  if (free) return normalizeYaw(yaw);
  const deg = Math.round((yaw * 180) / Math.PI);
  return normalizeYaw((deg * Math.PI) / 180);
}

export function defaultBoxSize(labelGroup: string | undefined): BoxSize {
  if (labelGroup === "human") return { ...HUMAN_BOX };
  return { ...VEHICLE_BOX };
}

export interface DrawResult {
  accepted: boolean;
  replaced: boolean;
}

export class AnnotationSession {
  readonly sequenceId: string;
  tracks: Track[] = [];
  dirty = false;
  currentFrame = 0;
  selectedInstance: number | null = null;
  etag: string | null = null;
  boxSizes = new Map<number, BoxSize>();

  private savedPayload: string | null = null;
  /** Called before replacing an existing keyframe at the same frame time. */
  confirmReplace: (frameTime: number) => boolean = () => true;

  constructor(sequenceId: string) {
    this.sequenceId = sequenceId;
  }

  loadFromPayload(payload: string, etag: string | null): void {
    const doc = JSON.parse(payload) as TracksDoc;
    if (doc.version !== 1) throw new Error(`unsupported tracks version ${doc.version}`);
    this.tracks = doc.tracks.map((t) => ({ ...t, keyframes: [...t.keyframes] }));
    this.etag = etag;
    this.savedPayload = payload;
    this.dirty = false;
    if (this.selectedInstance !== null && !this.track(this.selectedInstance)) {
      this.selectedInstance = null;
    }
  }

  track(instanceId: number): Track | undefined {
    return this.tracks.find((t) => t.instance_id === instanceId);
  }

  createInstance(label: number): Track {
    const nextId = this.tracks.reduce((m, t) => Math.max(m, t.instance_id), 0) + 1;
    const track: Track = { instance_id: nextId, label, keyframes: [] };
    this.tracks.push(track);
    this.selectedInstance = nextId;
    this.dirty = true;
    return track;
  }

  selectInstance(instanceId: number): void {
    if (!this.track(instanceId)) throw new Error(`no instance ${instanceId}`);
    this.selectedInstance = instanceId;
  }

  /**
   * Append a keyframe for the selected instance and keep keyframes
   * time-sorted. Drawing on an already-keyframed frame replaces that
   * keyframe only after confirmReplace agrees.
   */
  drawKeyframe(frameTime: number, box: { x: number; y: number; yaw: number }): DrawResult {
    if (this.selectedInstance === null) throw new Error("no instance selected");
    const track = this.track(this.selectedInstance)!;
    const keyframe: Keyframe = {
      frame_time: frameTime,
      x: box.x,
      y: box.y,
      yaw: normalizeYaw(box.yaw),
    };
    const existing = track.keyframes.findIndex((k) => k.frame_time === frameTime);
    let replaced = false;
    if (existing >= 0) {
      if (!this.confirmReplace(frameTime)) return { accepted: false, replaced: false };
      track.keyframes[existing] = keyframe;
      replaced = true;
    } else {
      track.keyframes.push(keyframe);
    }
    track.keyframes.sort((a, b) => a.frame_time - b.frame_time);
    this.dirty = true;
    return { accepted: true, replaced };
  }

  removeKeyframe(frameTime: number): boolean {
    if (this.selectedInstance === null) return false;
    const track = this.track(this.selectedInstance)!;
    const before = track.keyframes.length;
    track.keyframes = track.keyframes.filter((k) => k.frame_time !== frameTime);
    if (track.keyframes.length !== before) {
      this.dirty = true;
      return true;
    }
    return false;
  }

  serialize(): string {
    const doc: TracksDoc = {
      version: 1,
      tracks: this.tracks.map((t) => {
        const entry: Track = {
          instance_id: t.instance_id,
          label: t.label,
          keyframes: t.keyframes.map((k) => ({
            frame_time: k.frame_time,
            x: k.x,
            y: k.y,
            yaw: k.yaw,
          })),
        };
        if (t.model !== undefined) entry.model = t.model;
        return entry;
      }),
    };
    return JSON.stringify(doc);
  }

  markSaved(etag: string): void {
    this.etag = etag;
    this.savedPayload = this.serialize();
    this.dirty = false;
  }

  /** Drop unsaved edits; the last saved state survives. */
  discard(): void {
    if (this.savedPayload !== null) {
      this.loadFromPayload(this.savedPayload, this.etag);
    } else {
      this.tracks = [];
      this.selectedInstance = null;
      this.dirty = false;
    }
  }
}
