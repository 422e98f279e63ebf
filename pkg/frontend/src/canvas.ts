/**
 * Canvas rendering: the BEV raster image, keyframe boxes with a yaw handle,
 * and interpolation previews as ghost boxes. All geometry goes through the
 * exact metric<->canvas mapping in bev.ts.
 */

import { metersToCanvas } from "./bev.js";
import type { BevGeometry, BoxSize, Pose } from "./types.js";

export interface BoxStyle {
  stroke: string;
  ghost?: boolean;
  flagged?: boolean;
}

export class BevCanvas {
  readonly scale: number;

  constructor(
    private canvas: HTMLCanvasElement,
    private geometry: BevGeometry,
    scale = 6,
  ) {
    this.scale = scale;
    canvas.width = geometry.width * scale;
    canvas.height = geometry.height * scale;
  }

  private ctx(): CanvasRenderingContext2D {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("2d context unavailable");
    return ctx;
  }

  drawRaster(img: CanvasImageSource): void {
    const ctx = this.ctx();
    ctx.save();
    ctx.imageSmoothingEnabled = false;
    // raster row 0 is the minimum-y strip; flip so +y points up on screen
    ctx.translate(0, this.canvas.height);
    ctx.scale(1, -1);
    ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
    ctx.restore();
  }

  clear(): void {
    const ctx = this.ctx();
    ctx.fillStyle = "#101418";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
  }

  drawBox(pose: Pose, size: BoxSize, style: BoxStyle): void {
    const ctx = this.ctx();
    const center = metersToCanvas(this.geometry, this.scale, pose.x, pose.y);
    const sx = (size.length / this.geometry.cell) * this.scale;
    const sy = (size.width / this.geometry.cell) * this.scale;
    ctx.save();
    ctx.translate(center.px, center.py);
    ctx.rotate(-pose.yaw); // canvas y is flipped, so positive yaw turns clockwise on screen
    ctx.globalAlpha = style.ghost ? 0.35 : 1.0;
    ctx.lineWidth = style.flagged ? 3 : 1.5;
    ctx.strokeStyle = style.flagged ? "#ff4242" : style.stroke;
    ctx.strokeRect(-sx / 2, -sy / 2, sx, sy);
    // yaw handle on the front edge
    ctx.beginPath();
    ctx.moveTo(sx / 2, 0);
    ctx.lineTo(sx / 2 + 10, 0);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(sx / 2 + 10, 0, 3, 0, 2 * Math.PI);
    ctx.fillStyle = style.stroke;
    ctx.fill();
    ctx.restore();
  }
}
