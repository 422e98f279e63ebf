import { describe, expect, it } from "vitest";

import { FrameCache, clampFrameIndex } from "../src/timeline.js";

describe("frame cache", () => {
  it("loads lazily and caches per frame", async () => {
    const cache = new FrameCache(async (t) => `raster-${t}`);
    expect(cache.loads).toBe(0);
    expect(await cache.get(100)).toBe("raster-100");
    expect(await cache.get(100)).toBe("raster-100");
    expect(cache.loads).toBe(1);
    await cache.get(200);
    expect(cache.loads).toBe(2);
    expect(cache.has(100)).toBe(true);
    expect(cache.has(300)).toBe(false);
  });

  it("dedupes concurrent requests for the same frame", async () => {
    let resolve!: (v: string) => void;
    const gate = new Promise<string>((r) => (resolve = r));
    const cache = new FrameCache(() => gate);
    const a = cache.get(7);
    const b = cache.get(7);
    resolve("raster");
    expect(await a).toBe("raster");
    expect(await b).toBe("raster");
    expect(cache.loads).toBe(1);
  });
});

describe("scrubber clamping", () => {
  it("clamps into the frame range", () => {
    expect(clampFrameIndex(-3, 5)).toBe(0);
    expect(clampFrameIndex(2, 5)).toBe(2);
    expect(clampFrameIndex(99, 5)).toBe(4);
    expect(clampFrameIndex(0, 0)).toBe(0);
  });
});
