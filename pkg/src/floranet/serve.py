"""HTTP inference service: load a checkpoint, classify uploads, benchmark.

Endpoints:
  POST /classify     multipart or raw image body; ?k= for top-k depth
  GET  /classes      served class names
  GET  /species/{name}  info card for one served class
  GET  /model/info   architecture name, parameter counts, input size
  GET  /bench?runs=N&warmup=M   forward-pass latency statistics
  GET  /healthz      liveness

All error responses are {"code": ..., "message": ...} JSON documents.
"""

from __future__ import annotations

import io
import json
import threading
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .arch import count_parameters
from .data import bilinear_resize
from .model import Model
from .tensor import Rng
from .train import load_checkpoint


class ServiceError(ValueError):
    def __init__(self, code: str, message: str, status: int = 400):
        self.code, self.status = code, status
        super().__init__(message)


def load_species_info() -> dict:
    with resources.files("floranet").joinpath("species.json").open("r") as f:
        return json.load(f)


def _norm(name: str) -> str:
    return name.strip().lower().replace("_", " ").replace("-", " ")


@dataclass
class ModelHandle:
    """Immutable-after-load model plus everything needed to serve it."""

    model: Model
    class_names: list[str]
    input_hw: tuple[int, int]
    arch_name: str
    species: dict

    def species_card(self, class_name: str) -> dict:
        normalized = _norm(class_name)
        for key, card in self.species.items():
            if _norm(key) == normalized:
                return dict(card)
        return {"name": class_name,
                "description": "No description available for this class."}


def load_model(checkpoint_path) -> ModelHandle:
    """Load and verify a checkpoint; refuses to serve on any mismatch."""
    loaded = load_checkpoint(checkpoint_path)
    desc = loaded.model.desc
    class_names = loaded.class_names or [f"class_{i}" for i in range(desc.num_classes)]
    if len(class_names) != desc.num_classes:
        raise ServiceError("class_count_mismatch",
                           f"checkpoint lists {len(class_names)} class names but the "
                           f"model has {desc.num_classes} outputs", status=500)
    return ModelHandle(
        model=loaded.model,
        class_names=class_names,
        input_hw=tuple(desc.input_shape[:2]),
        arch_name=desc.name,
        species=load_species_info(),
    )


def decode_image(data: bytes) -> np.ndarray:
    if not data:
        raise ServiceError("empty_body", "no image bytes in request")
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ServiceError("undecodable_image", f"cannot decode image: {exc}") from exc


def classify(handle: ModelHandle, image_bytes: bytes, k: int = 3) -> dict:
    """Preprocess, run one forward pass, return the top-k distribution.

    latency_ms times the forward pass only, not decode or preprocessing.
    """
    if not (1 <= k <= len(handle.class_names)):
        raise ServiceError("bad_k",
                           f"k must be in [1, {len(handle.class_names)}], got {k}")
    img = decode_image(image_bytes)
    img = bilinear_resize(img, handle.input_hw[0], handle.input_hw[1])
    x = img.astype(np.float32)[None, ...]
    start = time.perf_counter()
    probs = handle.model.forward(x, mode="infer")[0]
    latency_ms = (time.perf_counter() - start) * 1000.0
    order = np.argsort(-probs, kind="stable")[:k]
    return {
        "model": handle.arch_name,
        "top_k": [
            {"class_name": handle.class_names[int(i)], "probability": float(probs[i])}
            for i in order
        ],
        "latency_ms": latency_ms,
    }


def benchmark(handle: ModelHandle, runs: int = 100, warmup: int = 10) -> dict:
    """Average/percentile forward-pass time on a fixed random input."""
    if runs < 1:
        raise ServiceError("bad_runs", f"runs must be >= 1, got {runs}")
    if warmup < 0:
        raise ServiceError("bad_warmup", f"warmup must be >= 0, got {warmup}")
    h, w = handle.input_hw
    x = Rng(0).uniform(0, 1, (1, h, w, 3)).astype(np.float32)
    for _ in range(warmup):
        handle.model.forward(x, mode="infer")
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        handle.model.forward(x, mode="infer")
        times.append((time.perf_counter() - start) * 1000.0)
    times_arr = np.array(times)
    return {
        "runs": runs,
        "warmup": warmup,
        "avg_ms": float(times_arr.mean()),
        "p50_ms": float(np.percentile(times_arr, 50)),
        "p95_ms": float(np.percentile(times_arr, 95)),
        "min_ms": float(times_arr.min()),
        "max_ms": float(times_arr.max()),
    }


def create_app(handle: ModelHandle) -> FastAPI:
    """Build the FastAPI application around one loaded model."""
    app = FastAPI(title="floranet inference service")
    bench_lock = threading.Lock()

    @app.exception_handler(ServiceError)
    async def _service_error(_request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/classes")
    def classes():
        return {"classes": handle.class_names}

    @app.get("/species/{name}")
    def species(name: str):
        matches = [c for c in handle.class_names if _norm(c) == _norm(name)]
        if not matches:
            raise ServiceError("unknown_class",
                               f"{name!r} is not a served class", status=404)
        return handle.species_card(matches[0])

    @app.get("/model/info")
    def model_info():
        counts = count_parameters(handle.model.desc)
        return {
            "architecture": handle.arch_name,
            "head": handle.model.desc.head,
            "input_size": list(handle.input_hw),
            "num_classes": len(handle.class_names),
            "parameters": counts,
        }

    @app.post("/classify")
    async def classify_route(request: Request, k: int = 3):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = next((v for v in form.values() if hasattr(v, "read")), None)
            if upload is None:
                raise ServiceError("no_file", "multipart body carries no file field")
            data = await upload.read()
        else:
            data = await request.body()
        return classify(handle, data, k)

    @app.get("/bench")
    def bench(runs: int = 100, warmup: int = 10):
        with bench_lock:
            return benchmark(handle, runs, warmup)

    return app


def run_server(checkpoint_path, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    handle = load_model(checkpoint_path)
    uvicorn.run(create_app(handle), host=host, port=port, log_level="info")
