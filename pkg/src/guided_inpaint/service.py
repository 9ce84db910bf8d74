"""HTTP API for interactive runs: create, inspect, select, fetch artifacts.

Lifecycle: POST /runs schedules the stochastic phase; once the run reaches
awaiting-selection the candidate gallery is served; POST /runs/{id}/select
starts deterministic refinement; artifacts stream from the run directory.
"""

from __future__ import annotations

import base64
import binascii
import os
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from .data import DataError, MASK_KINDS, image_from_png_bytes, make_benchmark_mask, mask_from_png_bytes
from .mixture import MixtureError
from .runs import PhaseError, RunError, RunExecutor, RunStore, guidance_from_doc, schedule_from_doc
from .sampler import SamplerError
from .schedule import ScheduleError
from .toynet import TrainingError

MAX_SIDE = 4096

DEFAULT_DATA_ROOT = os.environ.get("GUIDED_INPAINT_DATA_ROOT", "./data")
DEFAULT_PORT = int(os.environ.get("GUIDED_INPAINT_PORT", "8787"))

_MIME = {
    ".png": "image/png",
    ".json": "application/json",
    ".txt": "text/plain",
    ".npy": "application/octet-stream",
    ".bin": "application/octet-stream",
    ".npz": "application/octet-stream",
}


class ScheduleSpec(BaseModel):
    T: int = 250
    beta_start: float | None = None
    beta_end: float | None = None
    stage_steps: list[int] | None = None


class LocalSpec(BaseModel):
    top: int
    left: int
    height: int
    width: int
    label: int


class GuidanceSpec(BaseModel):
    s: float = 1.0
    i_guid: int = 2
    i_inp: int = 2
    lambda_reg: float = 0.01
    lr_base: float = 0.02
    lr_decay: float = 1.012
    t_stop_comp: int = 130
    eta_ddim: float = 0.0
    candidates: int = 1
    seed: int = 0
    enable_cg: bool = True
    enable_ss: bool = True
    mode: str = "global"
    labels: list[int] = Field(default_factory=list)
    local_specs: list[LocalSpec] = Field(default_factory=list)
    stop_grad_eps: bool = False
    clamp_x0: bool | None = None


class CreateRunRequest(BaseModel):
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    guidance: GuidanceSpec = Field(default_factory=GuidanceSpec)
    backend: dict
    image_png: str                      # base64 8-bit PNG
    mask_png: str | None = None         # base64 PNG, 255 = known
    mask_kind: str | None = None        # or one of the benchmark masks
    idempotency_key: str | None = None


class SelectRequest(BaseModel):
    candidate_id: str


def _bad_request(field: str, message: str) -> HTTPException:
    return HTTPException(status_code=400, detail={"field": field, "message": message})


def _decode_b64(field: str, payload: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError):
        raise _bad_request(field, "invalid base64 payload")


def create_app(data_root: str | Path | None = None) -> FastAPI:
    store = RunStore(data_root or DEFAULT_DATA_ROOT)
    executor = RunExecutor(store)
    app = FastAPI(title="guided-inpaint service")
    app.state.store = store
    app.state.executor = executor

    @app.post("/runs", status_code=201)
    def create_run(req: CreateRunRequest):
        try:
            gt = image_from_png_bytes(_decode_b64("image_png", req.image_png))
        except DataError as exc:
            raise _bad_request("image_png", str(exc))
        if max(gt.shape[1], gt.shape[2]) > MAX_SIDE:
            raise HTTPException(status_code=413, detail="image too large")
        if req.mask_png is not None:
            mask = mask_from_png_bytes(_decode_b64("mask_png", req.mask_png))
        elif req.mask_kind is not None:
            if req.mask_kind not in MASK_KINDS:
                raise _bad_request("mask_kind", f"expected one of {MASK_KINDS}")
            try:
                mask = make_benchmark_mask(req.mask_kind, gt.shape[1], gt.shape[2])
            except DataError as exc:
                raise _bad_request("mask_kind", str(exc))
        else:
            raise _bad_request("mask_png", "provide mask_png or mask_kind")
        if mask.shape[1:] != gt.shape[1:]:
            raise _bad_request(
                "mask_png", f"mask shape {mask.shape[1:]} does not match image {gt.shape[1:]}"
            )

        config = {
            "schedule": req.schedule.model_dump(),
            "guidance": req.guidance.model_dump(),
            "backend": req.backend,
        }
        try:
            # validate the whole config up front for field-level 400s
            sched, _ = schedule_from_doc(config["schedule"])
            guidance_from_doc(config["guidance"], gt.shape).validate_against(sched)
            existing = store.lookup_key(req.idempotency_key) if req.idempotency_key else None
            state = store.create(config, gt, mask, idempotency_key=req.idempotency_key)
        except (ScheduleError, SamplerError, RunError, MixtureError, TrainingError) as exc:
            raise _bad_request("config", str(exc))
        if existing is None:
            executor.start_sampling(state.run_id)
        return {"run_id": state.run_id, "status": state.status, "config": config}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        try:
            return store.get(run_id).to_dict()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")

    @app.get("/runs/{run_id}/candidates")
    def list_candidates(run_id: str):
        try:
            state = store.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        if state.status in ("created", "sampling"):
            raise HTTPException(
                status_code=409,
                detail={"error": "phase_too_early", "status": state.status},
            )
        return {"run_id": run_id, "candidates": store.candidate_summaries(run_id)}

    @app.post("/runs/{run_id}/select")
    def select_candidate(run_id: str, req: SelectRequest):
        try:
            state = store.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        if state.status != "awaiting-selection":
            raise HTTPException(
                status_code=409,
                detail={"error": "wrong_phase", "status": state.status},
            )
        try:
            candidate_id = executor.resolve_selection(run_id, req.candidate_id)
        except (SamplerError, RunError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if candidate_id not in state.candidate_ids:
            raise HTTPException(status_code=404, detail=f"unknown candidate {candidate_id!r}")
        try:
            store.transition(run_id, "refining")
        except PhaseError:
            raise HTTPException(status_code=409, detail={"error": "wrong_phase"})
        executor.start_refinement(run_id, candidate_id)
        return {"run_id": run_id, "candidate_id": candidate_id, "status": "refining"}

    @app.get("/runs/{run_id}/artifacts/{path:path}")
    def get_artifact(run_id: str, path: str):
        try:
            store.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        try:
            target = store.artifact_path(run_id, path)
        except RunError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"no artifact {path!r}")
        return FileResponse(target, media_type=_MIME.get(target.suffix, "application/octet-stream"))

    @app.get("/healthz")
    def healthz():
        return JSONResponse({"status": "ok"})

    return app


def main() -> None:
    import uvicorn

    uvicorn.run(create_app(), host="127.0.0.1", port=DEFAULT_PORT)


if __name__ == "__main__":
    main()
