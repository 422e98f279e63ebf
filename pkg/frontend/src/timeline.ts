/** Timeline scrubbing: lazy per-frame loading with an in-flight dedupe. */

export class FrameCache<T> {
  private cache = new Map<number, T>();
  private pending = new Map<number, Promise<T>>();
  loads = 0;

  constructor(private loader: (frameTime: number) => Promise<T>) {}

  async get(frameTime: number): Promise<T> {
    const hit = this.cache.get(frameTime);
    if (hit !== undefined) return hit;
    let inflight = this.pending.get(frameTime);
    if (!inflight) {
      this.loads += 1;
      inflight = this.loader(frameTime).then((value) => {
        this.cache.set(frameTime, value);
        this.pending.delete(frameTime);
        return value;
      });
      this.pending.set(frameTime, inflight);
    }
    return inflight;
  }

  has(frameTime: number): boolean {
    return this.cache.has(frameTime);
  }
}

export function clampFrameIndex(index: number, frameCount: number): number {
  if (frameCount <= 0) return 0;
  return Math.min(Math.max(index, 0), frameCount - 1);
}
