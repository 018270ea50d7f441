/**
 * Editable focus-mask layer, decoupled from any drawing surface.
 *
 * The mask is a float grid on the image's own pixel grid; the canvas view
 * renders it but never owns it, so painting, undo, and export behave the
 * same under tests as in the browser. Strokes stamp a hard-edged circular
 * brush along the polyline; the pipeline itself interprets graded values,
 * so the brush carries a value instead of feathering.
 */

import { decodePng, encodePng, PngFormatError } from "./png.js";

export interface Brush {
  /** Footprint radius in image pixels. */
  radius: number;
  /** Painted intensity in [0,1]; ignored by erase, which writes 0. */
  value: number;
  mode: "paint" | "erase";
}

export interface StrokePoint {
  x: number;
  y: number;
}

export const UNDO_DEPTH = 32;

export class MaskModel {
  readonly width: number;
  readonly height: number;
  /** Row-major focus values in [0,1]. */
  values: Float32Array;
  /** Number of strokes applied since construction or the last reset. */
  strokeCount = 0;

  private undoStack: Float32Array[] = [];

  constructor(width: number, height: number) {
    if (width <= 0 || height <= 0 || !Number.isInteger(width) ||
        !Number.isInteger(height)) {
      throw new Error(`invalid mask dimensions ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.values = new Float32Array(width * height);
  }

  /** Rebuild a mask layer from a grayscale PNG (e.g. the predicted mask). */
  static fromPng(bytes: Uint8Array): MaskModel {
    const decoded = decodePng(bytes);
    if (decoded.channels !== 1) {
      throw new PngFormatError("mask PNGs must be grayscale");
    }
    const mask = new MaskModel(decoded.width, decoded.height);
    for (let i = 0; i < decoded.pixels.length; i++) {
      mask.values[i] = decoded.pixels[i] / 255;
    }
    return mask;
  }

  /**
   * Stamp the brush along a polyline. One call is one undo unit. Points may
   * lie outside the grid; out-of-bounds area is simply clipped.
   */
  paintStroke(points: readonly StrokePoint[], brush: Brush): void {
    if (points.length === 0) {
      return;
    }
    if (!(brush.radius > 0)) {
      throw new Error(`brush radius must be positive, got ${brush.radius}`);
    }
    const value = brush.mode === "erase" ? 0 : Math.min(1, Math.max(0, brush.value));
    this.pushUndo();
    this.stamp(points[0].x, points[0].y, brush.radius, value);
    for (let i = 1; i < points.length; i++) {
      const from = points[i - 1];
      const to = points[i];
      const distance = Math.hypot(to.x - from.x, to.y - from.y);
      // sub-pixel steps keep fast strokes gapless
      const steps = Math.max(1, Math.ceil(distance));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp(
          from.x + (to.x - from.x) * t,
          from.y + (to.y - from.y) * t,
          brush.radius,
          value,
        );
      }
    }
    this.strokeCount++;
  }

  /** Fill the whole layer with one value (also an undo unit). */
  fill(value: number): void {
    this.pushUndo();
    this.values.fill(Math.min(1, Math.max(0, value)));
    this.strokeCount++;
  }

  /** Restore the layer exactly as before the last stroke. */
  undo(): boolean {
    const previous = this.undoStack.pop();
    if (previous === undefined) {
      return false;
    }
    this.values = previous;
    return true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /**
   * Export as an 8-bit grayscale PNG. Quantization rounds half up, and the
   * encoder is deterministic, so a given stroke history always produces the
   * same bytes.
   */
  exportPng(): Uint8Array {
    const codes = new Uint8Array(this.values.length);
    for (let i = 0; i < this.values.length; i++) {
      codes[i] = Math.floor(this.values[i] * 255 + 0.5);
    }
    return encodePng(this.width, this.height, 1, codes);
  }

  private pushUndo(): void {
    this.undoStack.push(this.values.slice());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
  }

  private stamp(cx: number, cy: number, radius: number, value: number): void {
    const x0 = Math.max(0, Math.ceil(cx - radius));
    const x1 = Math.min(this.width - 1, Math.floor(cx + radius));
    const y0 = Math.max(0, Math.ceil(cy - radius));
    const y1 = Math.min(this.height - 1, Math.floor(cy + radius));
    const r2 = radius * radius;
    for (let y = y0; y <= y1; y++) {
      const dy = y - cy;
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        if (dx * dx + dy * dy <= r2) {
          this.values[y * this.width + x] = value;
        }
      }
    }
  }
}
