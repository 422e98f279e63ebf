export interface Keyframe {
  frame_time: number;
  x: number;
  y: number;
  yaw: number;
}

export interface Track {
  instance_id: number;
  label: number;
  keyframes: Keyframe[];
  /** canonical point model; opaque to the UI, preserved on save */
  model?: unknown;
}

export interface TracksDoc {
  version: number;
  tracks: Track[];
}

export interface BevGeometry {
  origin: [number, number];
  cell: number;
  width: number;
  height: number;
}

export interface FramesDoc {
  version: number;
  frames: { frame_time: number }[];
  bev: BevGeometry;
  /** base64, one byte per cell, row-major, nonzero = trail occupancy */
  trail_occupancy: string;
}

export interface Pose {
  frame_time: number;
  x: number;
  y: number;
  yaw: number;
}

/** BEV box extent in meters, per instance (display + review footprint). */
export interface BoxSize {
  length: number;
  width: number;
}
