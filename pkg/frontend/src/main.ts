/**
 * DOM wiring. All editing logic lives in EditorSession / MaskModel; this
 * module only moves bytes between the page and those classes.
 */

import { ApiClient } from "./api.js";
import { EditorSession } from "./editor.js";
import { StrokePoint } from "./mask.js";
import { DecodedImage } from "./png.js";

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const fileInput = element<HTMLInputElement>("file-input");
const brushControls = element<HTMLFieldSetElement>("brush-controls");
const renderControls = element<HTMLFieldSetElement>("render-controls");
const brushMode = element<HTMLSelectElement>("brush-mode");
const brushRadius = element<HTMLInputElement>("brush-radius");
const brushRadiusValue = element<HTMLSpanElement>("brush-radius-value");
const brushValue = element<HTMLInputElement>("brush-value");
const brushValueValue = element<HTMLSpanElement>("brush-value-value");
const undoButton = element<HTMLButtonElement>("undo-button");
const fillButton = element<HTMLButtonElement>("fill-button");
const clearButton = element<HTMLButtonElement>("clear-button");
const backgroundLevel = element<HTMLInputElement>("background-level");
const backgroundLevelValue = element<HTMLSpanElement>("background-level-value");
const renderButton = element<HTMLButtonElement>("render-button");
const status = element<HTMLSpanElement>("status");
const errorBox = element<HTMLParagraphElement>("error");
const maskSource = element<HTMLSpanElement>("mask-source");
const imageCanvas = element<HTMLCanvasElement>("image-canvas");
const maskCanvas = element<HTMLCanvasElement>("mask-canvas");
const resultImage = element<HTMLImageElement>("result-image");

const session = new EditorSession(new ApiClient());
let resultUrl: string | null = null;

function drawImage(image: DecodedImage): void {
  imageCanvas.width = image.width;
  imageCanvas.height = image.height;
  maskCanvas.width = image.width;
  maskCanvas.height = image.height;
  const ctx = imageCanvas.getContext("2d")!;
  const rgba = ctx.createImageData(image.width, image.height);
  const n = image.width * image.height;
  for (let i = 0; i < n; i++) {
    const base = i * image.channels;
    rgba.data[i * 4] = image.pixels[base];
    rgba.data[i * 4 + 1] = image.pixels[image.channels === 3 ? base + 1 : base];
    rgba.data[i * 4 + 2] = image.pixels[image.channels === 3 ? base + 2 : base];
    rgba.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(rgba, 0, 0);
}

function drawOverlay(): void {
  const mask = session.mask;
  if (mask === null) {
    return;
  }
  const ctx = maskCanvas.getContext("2d")!;
  const rgba = ctx.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.values.length; i++) {
    rgba.data[i * 4] = 255;
    rgba.data[i * 4 + 1] = 40;
    rgba.data[i * 4 + 2] = 40;
    rgba.data[i * 4 + 3] = Math.round(mask.values[i] * 140);
  }
  ctx.putImageData(rgba, 0, 0);
}

function showError(message: string | null): void {
  errorBox.hidden = message === null;
  errorBox.textContent = message ?? "";
}

function syncBrush(): void {
  session.brush = {
    mode: brushMode.value === "erase" ? "erase" : "paint",
    radius: Number(brushRadius.value),
    value: Number(brushValue.value),
  };
  brushRadiusValue.textContent = brushRadius.value;
  brushValueValue.textContent = Number(brushValue.value).toFixed(2);
}

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (file === undefined) {
    return;
  }
  try {
    const bytes = new Uint8Array(await file.arrayBuffer());
    session.loadImage(bytes);
  } catch (err) {
    showError(String(err));
    return;
  }
  showError(null);
  drawImage(session.image!);
  drawOverlay();
  brushControls.disabled = false;
  renderControls.disabled = false;
  maskSource.textContent = "no render yet";
  resultImage.removeAttribute("src");
});

// --- painting -------------------------------------------------------------

let stroke: StrokePoint[] | null = null;

function canvasPoint(event: PointerEvent): StrokePoint {
  const rect = maskCanvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * maskCanvas.width,
    y: ((event.clientY - rect.top) / rect.height) * maskCanvas.height,
  };
}

maskCanvas.addEventListener("pointerdown", (event) => {
  if (session.phase === "empty") {
    return;
  }
  maskCanvas.setPointerCapture(event.pointerId);
  stroke = [canvasPoint(event)];
});

maskCanvas.addEventListener("pointermove", (event) => {
  if (stroke === null) {
    return;
  }
  stroke.push(canvasPoint(event));
  // live preview: stamp through the model would break one-drag-one-undo,
  // so preview directly and commit the whole stroke on release
  const ctx = maskCanvas.getContext("2d")!;
  const point = stroke[stroke.length - 1];
  ctx.fillStyle = session.brush.mode === "erase"
    ? "rgba(0, 0, 0, 0.4)"
    : "rgba(255, 40, 40, 0.4)";
  ctx.beginPath();
  ctx.arc(point.x, point.y, session.brush.radius, 0, 2 * Math.PI);
  ctx.fill();
});

function finishStroke(): void {
  if (stroke === null) {
    return;
  }
  session.paint(stroke);
  stroke = null;
  drawOverlay();
}

maskCanvas.addEventListener("pointerup", finishStroke);
maskCanvas.addEventListener("pointercancel", finishStroke);

// --- controls ---------------------------------------------------------------

for (const control of [brushMode, brushRadius, brushValue]) {
  control.addEventListener("input", syncBrush);
}
syncBrush();

undoButton.addEventListener("click", () => {
  session.undo();
  drawOverlay();
});

fillButton.addEventListener("click", () => {
  session.fillMask(1);
  drawOverlay();
});

clearButton.addEventListener("click", () => {
  session.fillMask(0);
  drawOverlay();
});

backgroundLevel.addEventListener("input", () => {
  session.setBackgroundLevel(Number(backgroundLevel.value));
  backgroundLevelValue.textContent =
    session.backgroundLevel.toFixed(2);
});

renderButton.addEventListener("click", async () => {
  if (session.phase !== "idle") {
    return;
  }
  renderButton.disabled = true;
  status.textContent = "rendering…";
  const seededBefore = session.edited;
  const ok = await session.submit();
  renderButton.disabled = false;
  status.textContent = "";
  if (!ok) {
    showError(session.error ?? "render failed");
    return;
  }
  showError(null);
  const view = session.result!;
  if (resultUrl !== null) {
    URL.revokeObjectURL(resultUrl);
  }
  resultUrl = URL.createObjectURL(
    new Blob([view.imagePng.slice()], { type: "image/png" }),
  );
  resultImage.src = resultUrl;
  maskSource.textContent = `mask source: ${view.maskSource}`;
  if (!seededBefore) {
    // an untouched submit installed the predicted mask as the new layer
    drawOverlay();
  }
});
