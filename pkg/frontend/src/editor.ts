/**
 * Editor state machine, independent of the DOM.
 *
 * Holds the loaded image, the editable mask layer, brush settings, the
 * background-level slider value, and the last render outcome. A submit
 * while one is already in flight is refused, and every submit — success or
 * error — returns the session to "idle", so the state machine cannot get
 * stuck.
 */

import { ApiClient, ApiError } from "./api.js";
import { decodePng, DecodedImage } from "./png.js";
import { Brush, MaskModel, StrokePoint } from "./mask.js";

export type EditorPhase = "empty" | "idle" | "busy";

export interface RenderView {
  imagePng: Uint8Array;
  maskSource: string;
}

/** Highest selectable background level; must stay below the focus
 * threshold (0.8) or the service rejects the request. */
export const MAX_BACKGROUND_LEVEL = 0.79;

export class EditorSession {
  private _phase: EditorPhase = "empty";
  private _imagePng: Uint8Array | null = null;
  private _image: DecodedImage | null = null;
  private _mask: MaskModel | null = null;
  private _backgroundLevel = 0;
  private _edited = false;
  private _result: RenderView | null = null;
  private _error: string | null = null;

  brush: Brush = { radius: 12, value: 1, mode: "paint" };

  constructor(private readonly client: ApiClient) {}

  get phase(): EditorPhase {
    return this._phase;
  }

  get image(): DecodedImage | null {
    return this._image;
  }

  get mask(): MaskModel | null {
    return this._mask;
  }

  get backgroundLevel(): number {
    return this._backgroundLevel;
  }

  get result(): RenderView | null {
    return this._result;
  }

  get error(): string | null {
    return this._error;
  }

  /** True once the user has painted, erased, or filled since loading. */
  get edited(): boolean {
    return this._edited;
  }

  /** Decode and install a new source image with a blank mask layer. */
  loadImage(png: Uint8Array): void {
    const image = decodePng(png);
    this._imagePng = png;
    this._image = image;
    this._mask = new MaskModel(image.width, image.height);
    this._edited = false;
    this._result = null;
    this._error = null;
    this._phase = "idle";
  }

  setBackgroundLevel(value: number): void {
    this._backgroundLevel = Math.min(
      MAX_BACKGROUND_LEVEL,
      Math.max(0, value),
    );
  }

  paint(points: StrokePoint[]): void {
    if (this._mask === null) {
      throw new Error("no image loaded");
    }
    this._mask.paintStroke(points, this.brush);
    this._edited = true;
  }

  fillMask(value: number): void {
    if (this._mask === null) {
      throw new Error("no image loaded");
    }
    this._mask.fill(value);
    this._edited = true;
  }

  undo(): boolean {
    return this._mask !== null && this._mask.undo();
  }

  /**
   * Render the current state through the service.
   *
   * Untouched mask → the request omits it, the service predicts one, and
   * the prediction is installed as the editable starting layer. Touched
   * mask → its exported PNG rides along. Returns true on success; on
   * refusal (already busy / nothing loaded) or failure it returns false,
   * with the failure message in `error`.
   */
  async submit(): Promise<boolean> {
    if (this._phase !== "idle" || this._imagePng === null) {
      return false;
    }
    this._phase = "busy";
    try {
      if (this._edited) {
        const out = await this.client.render(this._imagePng, {
          maskPng: this._mask!.exportPng(),
          backgroundLevel: this._backgroundLevel,
        });
        this._result = { imagePng: out.imagePng, maskSource: out.maskSource };
      } else {
        const out = await this.client.render(this._imagePng, {
          backgroundLevel: this._backgroundLevel,
          returnMask: true,
        });
        this._result = { imagePng: out.imagePng, maskSource: out.maskSource };
        if (out.maskPng !== null) {
          // predicted focus map becomes the starting layer; installing it
          // does not count as an edit, so the next submit still asks the
          // service to predict unless the user actually paints
          this._mask = MaskModel.fromPng(out.maskPng);
        }
      }
      this._error = null;
      return true;
    } catch (err) {
      this._error =
        err instanceof ApiError ? err.message : String(err);
      return false;
    } finally {
      this._phase = "idle";
    }
  }
}
