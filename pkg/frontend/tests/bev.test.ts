import { describe, expect, it } from "vitest";

import {
  canvasToMeters,
  cellCenter,
  decodeTrail,
  footprintCoversTrail,
  metersToCanvas,
  metersToCell,
  trailAt,
} from "../src/bev.js";
import type { BevGeometry } from "../src/types.js";

const g: BevGeometry = { origin: [-4.0, 2.0], cell: 0.25, width: 40, height: 24 };

describe("metric/raster mapping", () => {
  it("is the exact inverse of cell-center generation", () => {
    for (let iy = 0; iy < g.height; iy++) {
      for (let ix = 0; ix < g.width; ix++) {
        const c = cellCenter(g, ix, iy);
        expect(metersToCell(g, c.x, c.y)).toEqual({ ix, iy });
      }
    }
  });

  it("maps a click at a cell center to that cell within half a cell", () => {
    const scale = 6;
    const { px, py } = metersToCanvas(g, scale, cellCenter(g, 7, 3).x, cellCenter(g, 7, 3).y);
    const back = canvasToMeters(g, scale, px, py);
    const c = cellCenter(g, 7, 3);
    expect(Math.abs(back.x - c.x)).toBeLessThan(g.cell / 2);
    expect(Math.abs(back.y - c.y)).toBeLessThan(g.cell / 2);
    expect(metersToCell(g, back.x, back.y)).toEqual({ ix: 7, iy: 3 });
  });

  it("canvas transform round-trips", () => {
    const scale = 5;
    for (const [x, y] of [
      [-3.99, 2.01],
      [0.0, 4.0],
      [5.9, 7.9],
    ]) {
      const { px, py } = metersToCanvas(g, scale, x, y);
      const back = canvasToMeters(g, scale, px, py);
      expect(back.x).toBeCloseTo(x, 9);
      expect(back.y).toBeCloseTo(y, 9);
    }
  });

  it("flips y so larger y is higher on screen (smaller py)", () => {
    const low = metersToCanvas(g, 4, 0, 2.5);
    const high = metersToCanvas(g, 4, 0, 7.5);
    expect(high.py).toBeLessThan(low.py);
  });
});

describe("trail occupancy", () => {
  const occupancy = new Uint8Array(g.width * g.height);
  occupancy[5 * g.width + 10] = 1; // cell (10, 5)

  it("decodes base64 bitmaps", () => {
    const b64 = Buffer.from(occupancy).toString("base64");
    const decoded = decodeTrail(b64);
    expect(decoded).toEqual(occupancy);
  });

  it("reads occupancy and treats out-of-raster as empty", () => {
    expect(trailAt(g, occupancy, 10, 5)).toBe(true);
    expect(trailAt(g, occupancy, 11, 5)).toBe(false);
    expect(trailAt(g, occupancy, -1, 0)).toBe(false);
    expect(trailAt(g, occupancy, 0, 999)).toBe(false);
  });

  it("footprint coverage finds the occupied cell only when overlapping", () => {
    const c = cellCenter(g, 10, 5);
    const size = { length: 1.0, width: 0.5 };
    const onTop = { frame_time: 0, x: c.x, y: c.y, yaw: 0.3 };
    expect(footprintCoversTrail(g, occupancy, onTop, size)).toBe(true);
    const elsewhere = { frame_time: 0, x: c.x + 3, y: c.y + 3, yaw: 0.3 };
    expect(footprintCoversTrail(g, occupancy, elsewhere, size)).toBe(false);
    const outside = { frame_time: 0, x: -100, y: -100, yaw: 0 };
    expect(footprintCoversTrail(g, occupancy, outside, size)).toBe(false);
  });

  it("respects box orientation", () => {
    const c = cellCenter(g, 10, 5);
    const size = { length: 2.0, width: 0.2 };
    // long thin box shifted along y only overlaps the cell when rotated to vertical
    const horizontal = { frame_time: 0, x: c.x, y: c.y + 0.6, yaw: 0 };
    const vertical = { frame_time: 0, x: c.x, y: c.y + 0.6, yaw: Math.PI / 2 };
    expect(footprintCoversTrail(g, occupancy, horizontal, size)).toBe(false);
    expect(footprintCoversTrail(g, occupancy, vertical, size)).toBe(true);
  });
});
