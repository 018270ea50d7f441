"""HTTP rendering service.

One checkpoint is loaded at startup and shared read-only across requests;
there is no per-request training or model switching. Render responses are
produced by the same code path as the CLI, so the two faces emit identical
bytes for identical inputs.

Error responses are JSON ``{"error": "<code>", "detail": "<message>"}``:
400 for malformed inputs (undecodable PNGs, bad form values), 413 for
oversized images, 422 for shape or configuration mismatches, 503 when no
model is loaded.
"""

from __future__ import annotations

import base64
import os
from pathlib import Path

from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from ampn.container import file_digest
from ampn.io import UnsupportedImageError, decode_png, encode_png
from ampn.render import MaskShapeError, RenderRequest, load_pipeline, render
from ampn.types import FocusMask

MAX_UPLOAD_BYTES = 64 * 1024 * 1024
MAX_PIXELS = 1 << 24  # 16.8 MP

_DEFAULT_UI_DIR = Path(__file__).resolve().parents[2] / "frontend" / "dist"


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse({"error": code, "detail": detail}, status_code=status)


def create_app(checkpoint_path: str | os.PathLike | None = None,
               static_dir: str | os.PathLike | None = None) -> FastAPI:
    """Build the service. With no checkpoint the API answers 503."""
    app = FastAPI(title="ampn render service")
    app.state.pipeline = None
    app.state.model_digest = None
    app.state.model_error = "no checkpoint configured"
    if checkpoint_path is not None:
        try:
            pipeline, _ = load_pipeline(checkpoint_path)
            app.state.pipeline = pipeline
            app.state.model_digest = file_digest(checkpoint_path)
            app.state.model_error = None
        except Exception as exc:  # degraded, reported via 503s
            app.state.model_error = str(exc)

    @app.get("/api/health")
    async def health():
        if app.state.pipeline is None:
            return _error(503, "model_not_loaded", app.state.model_error)
        return {"status": "ok", "model": app.state.model_digest}

    @app.post("/api/render")
    async def render_endpoint(image: UploadFile = File(...),
                              mask: UploadFile | None = File(None),
                              background_level: str | None = Form(None),
                              return_mask: str = Form("0")):
        if app.state.pipeline is None:
            return _error(503, "model_not_loaded", app.state.model_error)

        payload = await image.read()
        if len(payload) > MAX_UPLOAD_BYTES:
            return _error(413, "image_too_large",
                          f"payload exceeds {MAX_UPLOAD_BYTES} bytes")
        try:
            image_value = decode_png(payload)
        except UnsupportedImageError as exc:
            return _error(400, "unsupported_format", str(exc))
        except ValueError as exc:
            return _error(400, "bad_image", str(exc))
        if image_value.height * image_value.width > MAX_PIXELS:
            return _error(413, "image_too_large",
                          f"{image_value.height}x{image_value.width} exceeds "
                          f"{MAX_PIXELS} pixels")

        mask_value: FocusMask | None = None
        if mask is not None:
            mask_payload = await mask.read()
            if len(mask_payload) > MAX_UPLOAD_BYTES:
                return _error(413, "mask_too_large",
                              f"payload exceeds {MAX_UPLOAD_BYTES} bytes")
            try:
                decoded = decode_png(mask_payload)
                if decoded.channels != 1:
                    raise UnsupportedImageError("masks must be grayscale PNGs")
                mask_value = FocusMask(decoded.data)
            except UnsupportedImageError as exc:
                return _error(400, "unsupported_format", str(exc))
            except ValueError as exc:
                return _error(400, "bad_mask", str(exc))

        level = None
        if background_level is not None and background_level != "":
            try:
                level = float(background_level)
            except ValueError:
                return _error(400, "bad_background_level",
                              f"not a decimal: {background_level!r}")
            if not 0.0 <= level < 0.8:
                return _error(400, "bad_background_level",
                              "background_level must be in [0, 0.8)")
        if return_mask not in ("0", "1"):
            return _error(400, "bad_return_mask", "return_mask must be 0 or 1")

        request = RenderRequest(image=image_value, mask=mask_value,
                                background_level=level)
        try:
            result = render(app.state.pipeline, request)
        except MaskShapeError as exc:
            return _error(422, "shape_mismatch", str(exc))
        except ValueError as exc:
            return _error(422, "config_mismatch", str(exc))

        png = encode_png(result.image)
        headers = {"X-AMPN-Mask-Source": result.mask_source}
        if return_mask == "1":
            return JSONResponse({
                "image": base64.b64encode(png).decode("ascii"),
                "mask": base64.b64encode(encode_png(result.mask)).decode("ascii"),
                "mask_source": result.mask_source,
            }, headers=headers)
        return Response(content=png, media_type="image/png", headers=headers)

    ui_dir = Path(static_dir) if static_dir is not None else _DEFAULT_UI_DIR
    if ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/")
        async def index():
            return {"service": "ampn", "ui": "not built",
                    "endpoints": ["/api/health", "/api/render"]}

    return app
