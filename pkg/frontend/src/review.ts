/**
 * Review pass: flag frames whose interpolated footprint covers no dynamic
 * BEV occupancy anywhere in the trail. A keyframe dropped in empty space
 * pulls the interpolated track off the trail, which shows up here; frames
 * the LiDAR happened to miss do not, because coverage is checked against
 * the whole-sequence trail rather than single-frame returns.
 */

import type { ApiClient } from "./api.js";
import { decodeTrail, footprintCoversTrail } from "./bev.js";
import { defaultBoxSize } from "./session.js";
import type { AnnotationSession } from "./session.js";

export interface ReviewFlag {
  instanceId: number;
  frameTime: number;
}

export async function reviewPass(
  session: AnnotationSession,
  api: ApiClient,
  labelGroups?: Map<number, string>,
): Promise<ReviewFlag[]> {
  const frames = await api.frames(session.sequenceId);
  const occupancy = decodeTrail(frames.trail_occupancy);
  const flags: ReviewFlag[] = [];
  for (const track of session.tracks) {
    if (track.keyframes.length === 0) continue;
    const size =
      session.boxSizes.get(track.instance_id) ??
      defaultBoxSize(labelGroups?.get(track.label));
    const poses = await api.interpolate(session.sequenceId, track.label, track.keyframes);
    for (const pose of poses) {
      if (!footprintCoversTrail(frames.bev, occupancy, pose, size)) {
        flags.push({ instanceId: track.instance_id, frameTime: pose.frame_time });
      }
    }
  }
  return flags;
}
