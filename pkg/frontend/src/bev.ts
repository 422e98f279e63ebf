/**
 * Metric <-> raster mapping for the BEV grid, plus footprint coverage.
 *
 * The raster covers [origin, origin + dims*cell) with half-open cells; cell
 * (ix, iy) spans origin + [ix, ix+1)*cell along x and likewise along y, and
 * the server renders row iy of the PNG as the iy-th y-interval. Canvas
 * display flips y so +y points up on screen.
 */

import type { BevGeometry, BoxSize, Pose } from "./types.js";

export function metersToCell(g: BevGeometry, x: number, y: number): { ix: number; iy: number } {
  return {
    ix: Math.floor((x - g.origin[0]) / g.cell),
    iy: Math.floor((y - g.origin[1]) / g.cell),
  };
}

export function cellCenter(g: BevGeometry, ix: number, iy: number): { x: number; y: number } {
  return {
    x: g.origin[0] + (ix + 0.5) * g.cell,
    y: g.origin[1] + (iy + 0.5) * g.cell,
  };
}

export function inRaster(g: BevGeometry, ix: number, iy: number): boolean {
  return ix >= 0 && ix < g.width && iy >= 0 && iy < g.height;
}

/**
 * Canvas transform: `scale` CSS pixels per cell, y flipped for screen-up.
 * metersToCanvas(canvasToMeters(p)) round-trips exactly up to float error.
 */
export function canvasToMeters(
  g: BevGeometry,
  scale: number,
  px: number,
  py: number,
): { x: number; y: number } {
  return {
    x: g.origin[0] + (px / scale) * g.cell,
    y: g.origin[1] + ((g.height * scale - py) / scale) * g.cell,
  };
}

export function metersToCanvas(
  g: BevGeometry,
  scale: number,
  x: number,
  y: number,
): { px: number; py: number } {
  return {
    px: ((x - g.origin[0]) / g.cell) * scale,
    py: g.height * scale - ((y - g.origin[1]) / g.cell) * scale,
  };
}

export function decodeTrail(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function trailAt(g: BevGeometry, occupancy: Uint8Array, ix: number, iy: number): boolean {
  if (!inRaster(g, ix, iy)) return false;
  return occupancy[iy * g.width + ix] !== 0;
}

/** Does the oriented box footprint cover at least one occupied trail cell? */
export function footprintCoversTrail(
  g: BevGeometry,
  occupancy: Uint8Array,
  pose: Pose,
  size: BoxSize,
): boolean {
  const half = Math.hypot(size.length, size.width) / 2;
  const lo = metersToCell(g, pose.x - half, pose.y - half);
  const hi = metersToCell(g, pose.x + half, pose.y + half);
  const cos = Math.cos(pose.yaw);
  const sin = Math.sin(pose.yaw);
  for (let iy = lo.iy; iy <= hi.iy; iy++) {
    for (let ix = lo.ix; ix <= hi.ix; ix++) {
      if (!trailAt(g, occupancy, ix, iy)) continue;
      const c = cellCenter(g, ix, iy);
      const dx = c.x - pose.x;
      const dy = c.y - pose.y;
      const u = cos * dx + sin * dy; // along the box length
      const v = -sin * dx + cos * dy; // across the box width
      if (Math.abs(u) <= size.length / 2 && Math.abs(v) <= size.width / 2) return true;
    }
  }
  return false;
}
