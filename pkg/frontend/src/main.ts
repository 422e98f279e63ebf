/**
 * Bootstrap: wire the session, API client, canvas, and timeline together.
 *
 * Served next to the annotation service; `?api=` overrides the service URL.
 */

import { ApiClient } from "./api.js";
import { canvasToMeters } from "./bev.js";
import { BevCanvas } from "./canvas.js";
import { reviewPass } from "./review.js";
import type { ReviewFlag } from "./review.js";
import { AnnotationSession, defaultBoxSize, snapYaw } from "./session.js";
import { FrameCache, clampFrameIndex } from "./timeline.js";
import type { FramesDoc, Pose } from "./types.js";

const params = new URLSearchParams(location.search);
const api = new ApiClient(params.get("api") ?? `http://${location.hostname}:8734`);

const el = {
  sequence: document.getElementById("sequence") as HTMLSelectElement,
  canvas: document.getElementById("bev") as HTMLCanvasElement,
  timeline: document.getElementById("timeline") as HTMLInputElement,
  frameLabel: document.getElementById("frame-label") as HTMLSpanElement,
  addInstance: document.getElementById("add-instance") as HTMLButtonElement,
  save: document.getElementById("save") as HTMLButtonElement,
  review: document.getElementById("review") as HTMLButtonElement,
  status: document.getElementById("status") as HTMLSpanElement,
};

let session: AnnotationSession | null = null;
let framesDoc: FramesDoc | null = null;
let bev: BevCanvas | null = null;
let rasters: FrameCache<HTMLImageElement> | null = null;
let preview: Pose[] = [];
let flags: ReviewFlag[] = [];
let yaw = 0;

function status(text: string): void {
  el.status.textContent = text;
}

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

async function openSequence(id: string): Promise<void> {
  session = new AnnotationSession(id);
  session.confirmReplace = (t) => confirm(`Replace the keyframe at ${t}?`);
  framesDoc = await api.frames(id);
  rasters = new FrameCache((t) => loadImage(api.bevUrl(id, t)));
  bev = new BevCanvas(el.canvas, framesDoc.bev);
  const tracks = await api.loadTracks(id);
  session.loadFromPayload(tracks.payload, tracks.etag);
  el.timeline.max = String(Math.max(framesDoc.frames.length - 1, 0));
  el.timeline.value = "0";
  preview = [];
  flags = [];
  await render();
}

function currentFrameTime(): number {
  if (!framesDoc || framesDoc.frames.length === 0) return 0;
  const idx = clampFrameIndex(Number(el.timeline.value), framesDoc.frames.length);
  return framesDoc.frames[idx].frame_time;
}

async function refreshPreview(): Promise<void> {
  preview = [];
  if (!session || session.selectedInstance === null) return;
  const track = session.track(session.selectedInstance);
  if (!track || track.keyframes.length === 0) return;
  preview = await api.interpolate(session.sequenceId, track.label, track.keyframes);
}

async function render(): Promise<void> {
  if (!session || !framesDoc || !bev || !rasters) return;
  const frameTime = currentFrameTime();
  el.frameLabel.textContent = `${frameTime} us`;
  bev.clear();
  try {
    bev.drawRaster(await rasters.get(frameTime));
  } catch {
    status("raster unavailable");
  }
  for (const track of session.tracks) {
    const size = session.boxSizes.get(track.instance_id) ?? defaultBoxSize(undefined);
    const selected = track.instance_id === session.selectedInstance;
    for (const pose of selected ? preview : []) {
      if (pose.frame_time !== frameTime) continue;
      bev.drawBox(pose, size, { stroke: "#8fd3ff", ghost: true });
    }
    for (const k of track.keyframes) {
      if (k.frame_time !== frameTime) continue;
      const flagged = flags.some(
        (f) => f.instanceId === track.instance_id && f.frameTime === k.frame_time,
      );
      bev.drawBox({ ...k }, size, { stroke: selected ? "#ffd860" : "#9acd6a", flagged });
    }
  }
  status(session.dirty ? "unsaved edits" : "saved");
}

el.canvas.addEventListener("click", async (ev) => {
  if (!session || !framesDoc || !bev) return;
  if (session.selectedInstance === null) {
    status("add an instance first");
    return;
  }
  const rect = el.canvas.getBoundingClientRect();
  const pos = canvasToMeters(
    framesDoc.bev,
    bev.scale,
    ((ev.clientX - rect.left) / rect.width) * el.canvas.width,
    ((ev.clientY - rect.top) / rect.height) * el.canvas.height,
  );
  session.drawKeyframe(currentFrameTime(), { x: pos.x, y: pos.y, yaw: snapYaw(yaw, ev.shiftKey) });
  await refreshPreview();
  await render();
});

el.canvas.addEventListener("wheel", async (ev) => {
  // wheel turns the pending yaw; shift for free rotation, else 1 deg steps
  ev.preventDefault();
  yaw += ev.deltaY > 0 ? -Math.PI / 180 : Math.PI / 180;
  yaw = snapYaw(yaw, ev.shiftKey);
  status(`yaw ${(yaw * 180 / Math.PI).toFixed(0)} deg`);
});

el.timeline.addEventListener("input", () => void render());

el.addInstance.addEventListener("click", async () => {
  if (!session) return;
  session.createInstance(5);
  await render();
});

el.save.addEventListener("click", async () => {
  if (!session) return;
  const result = await api.saveTracks(session.sequenceId, session.serialize(), session.etag);
  if (result.ok) {
    session.markSaved(result.etag);
    status("saved");
  } else if (result.conflict) {
    status("conflict: another writer changed the tracks; reload to continue");
  } else {
    status(`save failed: ${result.message}`);
  }
});

el.review.addEventListener("click", async () => {
  if (!session) return;
  flags = await reviewPass(session, api);
  status(flags.length ? `${flags.length} frame(s) flagged` : "review clean");
  await render();
});

async function boot(): Promise<void> {
  const seqs = await api.sequences();
  el.sequence.innerHTML = seqs
    .map((s) => `<option value="${s.id}">${s.id} (${s.frames})</option>`)
    .join("");
  el.sequence.addEventListener("change", () => void openSequence(el.sequence.value));
  if (seqs.length) await openSequence(seqs[0].id);
}

void boot().catch((e) => status(String(e)));
