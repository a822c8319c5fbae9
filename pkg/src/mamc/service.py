"""HTTP service exposing the balance bank: protect images, preview what the
diffusion oracle would do to them, list the available levels.

Local-first and stateless: nothing from a request is retained after the
response is sent. An optional shared token (env MAMC_TOKEN) gates every
endpoint; oracle invocations go through a small semaphore so concurrent
requests cannot balloon memory.
"""

import base64
import binascii
import json
import os
import threading
from pathlib import Path

import torch

from mamc import metrics
from mamc.errors import ConfigurationError, IntegrityError
from mamc.imagecore import decode_image_bytes, encode_png
from mamc.oracle import OracleConfig, OracleWeights, diffuse
from mamc.perceptual import perceptual_distance
from mamc.protector import load_checkpoint, protect

ENV_TOKEN = "MAMC_TOKEN"
MAX_IMAGE_BYTES = 8 * 1024 * 1024
PREVIEW_SEED = 5150  # fixed so what-if comparisons are stable across slider moves
PREVIEW_STRENGTH = 5
DEFAULT_CONCURRENCY = 2


class BankState:
    """Loaded bank manifest plus lazily-loaded checkpoints (read-only)."""

    def __init__(self, bank_dir, oracle_path):
        self.bank_dir = Path(bank_dir)
        manifest_path = self.bank_dir / "bank_manifest.json"
        if not manifest_path.exists():
            raise ConfigurationError(
                f"no bank manifest at {manifest_path}; train a balance bank first"
            )
        self.manifest = json.loads(manifest_path.read_text())
        self.oracle = OracleWeights.load(oracle_path)
        self._checkpoints = {}
        self._lock = threading.Lock()

    def levels(self) -> list[dict]:
        return self.manifest.get("levels", [])

    def available_levels(self) -> list[int]:
        return [e["level"] for e in self.levels() if e.get("available")]

    def checkpoint(self, level: int):
        with self._lock:
            if level not in self._checkpoints:
                entry = next(
                    (e for e in self.levels() if e["level"] == level and e.get("available")),
                    None,
                )
                if entry is None:
                    raise KeyError(level)
                path = self.bank_dir / entry["path"]
                self._checkpoints[level] = load_checkpoint(
                    path, expected_oracle_hash=self.oracle.weights_hash
                )
            return self._checkpoints[level]


def _single_image_report(protocol: str, a: torch.Tensor, b: torch.Tensor) -> dict:
    with torch.no_grad():
        perc = float(perceptual_distance(a, b))
    return {
        "protocol": protocol,
        "psnr": metrics.psnr(a, b),
        "rmse": metrics.rmse(a, b),
        "ssim": metrics.ssim(a, b),
        "fid": None,  # distribution-level metric; undefined for one image
        "perceptual": perc,
        "sample_count": 1,
    }


def create_app(bank_dir, oracle_path, concurrency: int = DEFAULT_CONCURRENCY):
    """FastAPI application factory. The bank directory must contain
    bank_manifest.json as written by the balance-bank trainer."""
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="mamc protection service")
    state = BankState(bank_dir, oracle_path)
    gate = threading.Semaphore(concurrency)

    def check_token(request: Request) -> None:
        token = os.environ.get(ENV_TOKEN)
        if not token:
            return
        supplied = request.headers.get("authorization", "")
        if supplied != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    @app.get("/health")
    def health(request: Request):
        check_token(request)
        return {"status": "ok", "oracle": state.oracle.weights_hash[:16]}

    @app.get("/levels")
    def levels(request: Request):
        check_token(request)
        entries = state.levels()
        if not any(e.get("available") for e in entries):
            return JSONResponse(
                status_code=503,
                content={"detail": "no trained levels available; run bank training"},
            )
        return {"levels": entries}

    @app.post("/protect")
    async def protect_endpoint(request: Request):
        check_token(request)
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON")
        b64 = payload.get("image")
        if not isinstance(b64, str):
            raise HTTPException(status_code=400, detail="missing base64 'image' field")
        try:
            raw = base64.b64decode(b64, validate=True)
        except (binascii.Error, ValueError):
            raise HTTPException(status_code=400, detail="image is not valid base64")
        if len(raw) > MAX_IMAGE_BYTES:
            raise HTTPException(status_code=400, detail="image exceeds 8 MB cap")
        level = payload.get("level", 50)
        preview = bool(payload.get("preview", False))
        if level not in state.available_levels():
            raise HTTPException(status_code=404, detail=f"level {level} not in bank")
        try:
            from mamc.imagecore import original_size

            size = original_size(raw)
            img = decode_image_bytes(raw, target_size=state.oracle.resolution)
        except Exception as exc:
            raise HTTPException(status_code=400, detail=f"image does not decode: {exc}")

        ckpt = state.checkpoint(level)
        with gate:
            with torch.no_grad():
                protected = protect(img, ckpt.model)
            response = {
                "level": level,
                "original_size": list(size),
                "resolution": state.oracle.resolution,
                "protected": base64.b64encode(encode_png(protected)).decode(),
                "metrics": {"p1": _single_image_report("P1", img, protected)},
            }
            if preview:
                cfg = OracleConfig(strength=PREVIEW_STRENGTH, seed=PREVIEW_SEED)
                try:
                    with torch.no_grad():
                        m_input = diffuse(img, state.oracle, cfg)
                        m_protected = diffuse(protected, state.oracle, cfg)
                except Exception as exc:
                    raise HTTPException(status_code=502, detail=f"oracle failure: {exc}")
                response["preview_input_diffused"] = base64.b64encode(
                    encode_png(m_input)
                ).decode()
                response["preview_protected_diffused"] = base64.b64encode(
                    encode_png(m_protected)
                ).decode()
                response["metrics"]["p2"] = _single_image_report("P2", m_input, m_protected)
        return response

    return app


def serve(bank_dir, oracle_path, host: str = "127.0.0.1", port: int = 8765,
          concurrency: int = DEFAULT_CONCURRENCY) -> None:
    import uvicorn

    app = create_app(bank_dir, oracle_path, concurrency=concurrency)
    uvicorn.run(app, host=host, port=port)
