"""Run directories: persistence, execution workers, and reconstruction.

Layout per run:
    config.json                 normalized request (schedule, guidance, backend)
    gt.png, mask.png            inputs
    candidates/<id>/state.bin   x_t at the handoff timestep (npy bytes)
    candidates/<id>/preview.png clean-image preview
    candidates/<id>/meta.json   id, branch, timestep, classifier score
    selected.txt                chosen candidate id
    result.png, result_raw.npy  final output (composited) and raw state
    metrics.json                psnr/ssim, full and unknown-only
    log.txt                     phase transitions
    state.json                  RunState snapshot

A completed run is reconstructible from config.json + inputs alone; re-running
with the persisted seeds reproduces result.png bitwise.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sampler as sampler_mod
from .data import load_image, load_mask, save_image, save_mask
from .metrics import evaluate_inpainting
from .mixture import GaussianMixtureModel, MixtureClassifier, MixtureDenoiser
from .sampler import Candidate, GuidanceConfig, auto_select, validate_mask
from .schedule import NoiseSchedule, SkipSequence, build_linear_schedule, build_skip_sequence, full_sequence
from .toynet import ToyClassifier, ToyDenoiser

STATUSES = ("created", "sampling", "awaiting-selection", "refining", "done", "failed")
_ACTIVE = ("created", "sampling", "awaiting-selection", "refining")


class RunError(ValueError):
    pass


class PhaseError(RunError):
    """Operation attempted in the wrong run phase."""


@dataclass
class RunState:
    run_id: str
    status: str = "created"
    config_digest: str = ""
    candidate_ids: list[str] = field(default_factory=list)
    selected_id: str | None = None
    artifacts: list[str] = field(default_factory=list)
    created_at: float = 0.0
    updated_at: float = 0.0
    progress: dict = field(default_factory=dict)
    error: str | None = None
    idempotency_key: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "status": self.status,
            "config_digest": self.config_digest,
            "candidate_ids": self.candidate_ids,
            "selected_id": self.selected_id,
            "artifacts": self.artifacts,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "progress": self.progress,
            "error": self.error,
            "idempotency_key": self.idempotency_key,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunState":
        return cls(**{k: doc.get(k) for k in cls.__dataclass_fields__} | {
            "candidate_ids": list(doc.get("candidate_ids") or []),
            "artifacts": list(doc.get("artifacts") or []),
            "progress": dict(doc.get("progress") or {}),
        })


def config_digest(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# config documents -> runtime objects


def schedule_from_doc(doc: dict) -> tuple[NoiseSchedule, SkipSequence]:
    T = int(doc["T"])
    sched = build_linear_schedule(T, doc.get("beta_start"), doc.get("beta_end"))
    stages = doc.get("stage_steps")
    skip = build_skip_sequence(T, stages) if stages else full_sequence(T)
    return sched, skip


def rect_to_mask(rect: dict, shape: tuple[int, ...]) -> np.ndarray:
    """Rectangle spec {top,left,height,width} -> known-region mask of 1s inside."""
    mask = np.zeros(shape, dtype=np.float64)
    t, l = int(rect["top"]), int(rect["left"])
    h, w = int(rect["height"]), int(rect["width"])
    if h <= 0 or w <= 0:
        raise RunError("rectangle must have positive size")
    mask[..., t : t + h, l : l + w] = 1.0
    return mask


def guidance_from_doc(doc: dict, image_shape: tuple[int, ...]) -> GuidanceConfig:
    local = tuple(
        (rect_to_mask(spec, image_shape), int(spec["label"]))
        for spec in doc.get("local_specs", [])
    )
    return GuidanceConfig(
        s=float(doc.get("s", 1.0)),
        i_guid=int(doc.get("i_guid", 2)),
        i_inp=int(doc.get("i_inp", 2)),
        lambda_reg=float(doc.get("lambda_reg", 0.01)),
        lr_base=float(doc.get("lr_base", 0.02)),
        lr_decay=float(doc.get("lr_decay", 1.012)),
        t_stop_comp=int(doc.get("t_stop_comp", 130)),
        eta_ddim=float(doc.get("eta_ddim", 0.0)),
        candidates=int(doc.get("candidates", 1)),
        seed=int(doc.get("seed", 0)),
        enable_cg=bool(doc.get("enable_cg", True)),
        enable_ss=bool(doc.get("enable_ss", True)),
        mode=str(doc.get("mode", "global")),
        labels=tuple(int(y) for y in doc.get("labels", [])),
        local_specs=local,
        stop_grad_eps=bool(doc.get("stop_grad_eps", False)),
        clamp_x0=doc.get("clamp_x0"),
    )


def load_backends(doc: dict, sched: NoiseSchedule, base_dir: Path):
    """Instantiate (denoiser, classifier) from a backend document."""
    kind = doc.get("kind")
    if kind == "mixture":
        if "inline" in doc:
            gmm = GaussianMixtureModel.from_json(json.dumps(doc["inline"]))
        else:
            gmm = GaussianMixtureModel.load(base_dir / doc["path"])
        clf_doc = doc.get("classifier_sigmas")
        clf_gmm = (
            GaussianMixtureModel(gmm.weights, gmm.means, np.asarray(clf_doc, dtype=np.float64))
            if clf_doc
            else gmm
        )
        return MixtureDenoiser(gmm, sched), MixtureClassifier(clf_gmm)
    if kind == "toy":
        den = ToyDenoiser.load(base_dir / doc["denoiser"])
        clf = ToyClassifier.load(base_dir / doc["classifier"])
        if den.T != sched.T:
            raise RunError(f"denoiser trained for T={den.T}, run uses T={sched.T}")
        return den, clf
    raise RunError(f"unknown backend kind {kind!r}")


# ---------------------------------------------------------------------------
# store


def _write_candidate(cdir: Path, cand: Candidate) -> None:
    cdir.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.save(buf, cand.x_t)
    (cdir / "state.bin").write_bytes(buf.getvalue())
    save_image(np.clip(cand.preview_x0, -1, 1), cdir / "preview.png")
    (cdir / "meta.json").write_text(
        json.dumps(
            {
                "id": cand.id,
                "branch": cand.branch,
                "t": cand.t,
                "score": cand.score,
                "seed_entropy": list(cand.seed_entropy),
            }
        )
    )


def _read_candidate(cdir: Path) -> Candidate:
    meta = json.loads((cdir / "meta.json").read_text())
    x_t = np.load(io.BytesIO((cdir / "state.bin").read_bytes()))
    preview = load_image(cdir / "preview.png")
    return Candidate(
        id=meta["id"],
        branch=meta["branch"],
        t=meta["t"],
        x_t=x_t,
        preview_x0=preview,
        seed_entropy=tuple(meta["seed_entropy"]),
        score=meta["score"],
    )


class RunStore:
    """Owns the data root; all state mutation goes through a single lock."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._states: dict[str, RunState] = {}
        self._by_key: dict[str, str] = {}
        self._rescan()

    def _rescan(self) -> None:
        for state_file in self.runs_dir.glob("*/state.json"):
            state = RunState.from_dict(json.loads(state_file.read_text()))
            self._states[state.run_id] = state
            if state.idempotency_key:
                self._by_key[state.idempotency_key] = state.run_id

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def get(self, run_id: str) -> RunState:
        with self._lock:
            state = self._states.get(run_id)
            if state is None:
                raise KeyError(run_id)
            return RunState.from_dict(state.to_dict())  # snapshot

    def lookup_key(self, key: str) -> str | None:
        with self._lock:
            return self._by_key.get(key)

    def _persist(self, state: RunState) -> None:
        state.updated_at = time.time()
        (self.run_dir(state.run_id) / "state.json").write_text(json.dumps(state.to_dict(), indent=2))

    def _log(self, run_id: str, message: str) -> None:
        with (self.run_dir(run_id) / "log.txt").open("a") as fh:
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")

    def transition(self, run_id: str, status: str, **updates) -> RunState:
        if status not in STATUSES:
            raise RunError(f"unknown status {status!r}")
        with self._lock:
            state = self._states[run_id]
            if state.status in ("done", "failed"):
                raise PhaseError(f"run {run_id} already {state.status}")
            if status != "failed" and STATUSES.index(status) < STATUSES.index(state.status):
                raise PhaseError(f"cannot move {state.status} -> {status}")
            state.status = status
            for k, v in updates.items():
                setattr(state, k, v)
            self._persist(state)
            self._log(run_id, f"status={status}")
            return RunState.from_dict(state.to_dict())

    def set_progress(self, run_id: str, progress: dict) -> None:
        with self._lock:
            state = self._states.get(run_id)
            if state is None or state.status in ("done", "failed"):
                return
            state.progress = progress
            state.updated_at = time.time()

    def create(
        self,
        config: dict,
        gt: np.ndarray,
        mask: np.ndarray,
        idempotency_key: str | None = None,
    ) -> RunState:
        gt = np.asarray(gt, dtype=np.float64)
        mask = validate_mask(mask, gt.shape)
        # fail fast on an invalid config before any directory is written
        sched, skip = schedule_from_doc(config["schedule"])
        cfg = guidance_from_doc(config["guidance"], gt.shape)
        cfg.validate_against(sched)
        with self._lock:
            if idempotency_key and idempotency_key in self._by_key:
                existing = self._states[self._by_key[idempotency_key]]
                return RunState.from_dict(existing.to_dict())
            run_id = f"run-{len(self._states):04d}-{hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:8]}"
            if run_id in self._states:
                run_id = f"{run_id}-{int(time.time() * 1000) % 100000}"
            rdir = self.run_dir(run_id)
            rdir.mkdir(parents=True)
            (rdir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
            save_image(gt, rdir / "gt.png")
            save_mask(np.broadcast_to(mask, gt.shape), rdir / "mask.png")
            state = RunState(
                run_id=run_id,
                status="created",
                config_digest=config_digest(config),
                created_at=time.time(),
                idempotency_key=idempotency_key,
            )
            self._states[run_id] = state
            if idempotency_key:
                self._by_key[idempotency_key] = run_id
            self._persist(state)
            self._log(run_id, "created")
            return RunState.from_dict(state.to_dict())

    def write_candidates(self, run_id: str, candidates: list[Candidate]) -> None:
        base = self.run_dir(run_id) / "candidates"
        for cand in candidates:
            _write_candidate(base / cand.id, cand)

    def read_candidates(self, run_id: str) -> list[Candidate]:
        base = self.run_dir(run_id) / "candidates"
        if not base.exists():
            return []
        return [_read_candidate(d) for d in sorted(base.iterdir()) if d.is_dir()]

    def candidate_summaries(self, run_id: str) -> list[dict]:
        base = self.run_dir(run_id) / "candidates"
        out = []
        for d in sorted(base.iterdir()):
            if d.is_dir():
                meta = json.loads((d / "meta.json").read_text())
                meta["preview"] = f"candidates/{meta['id']}/preview.png"
                out.append(meta)
        out.sort(key=lambda m: (-(m["score"] if m["score"] is not None else -np.inf), m["branch"]))
        return out

    def artifact_path(self, run_id: str, rel: str) -> Path:
        rdir = self.run_dir(run_id).resolve()
        target = (rdir / rel).resolve()
        if rdir != target and rdir not in target.parents:
            raise RunError(f"artifact path {rel!r} escapes the run directory")
        if not target.is_file():
            raise FileNotFoundError(rel)
        return target


# ---------------------------------------------------------------------------
# execution


class RunExecutor:
    """Executes run phases on daemon threads; one worker owns a run at a time."""

    def __init__(self, store: RunStore):
        self.store = store
        self._threads: dict[str, threading.Thread] = {}

    def _load_run_inputs(self, run_id: str):
        rdir = self.store.run_dir(run_id)
        config = json.loads((rdir / "config.json").read_text())
        gt = load_image(rdir / "gt.png")
        mask = load_mask(rdir / "mask.png")
        sched, skip = schedule_from_doc(config["schedule"])
        cfg = guidance_from_doc(config["guidance"], gt.shape)
        den, clf = load_backends(config["backend"], sched, self.store.root)
        return config, gt, mask, sched, skip, cfg, den, clf

    def start_sampling(self, run_id: str, wait: bool = False) -> None:
        thread = threading.Thread(target=self._sample, args=(run_id,), daemon=True)
        self._threads[run_id] = thread
        thread.start()
        if wait:
            thread.join()

    def _sample(self, run_id: str) -> None:
        try:
            _, gt, mask, sched, skip, cfg, den, clf = self._load_run_inputs(run_id)
            self.store.transition(run_id, "sampling")
            taus_above = sum(
                1 for tau in skip.taus if tau > sampler_mod.handoff_timestep(skip, cfg.t_stop_comp)
            )
            total = max(taus_above * cfg.candidates, 1)
            done_counter = {"n": 0}

            def progress(branch, step, _n):
                done_counter["n"] += 1
                self.store.set_progress(
                    run_id, {"phase": "sampling", "done": done_counter["n"], "total": total}
                )

            candidates = sampler_mod.run_stochastic_phase(
                gt, mask, den, clf, cfg, sched, skip, progress=progress
            )
            self.store.write_candidates(run_id, candidates)
            self.store.transition(
                run_id, "awaiting-selection", candidate_ids=[c.id for c in candidates]
            )
        except Exception as exc:
            self.store.transition(run_id, "failed", error=str(exc))

    def start_refinement(self, run_id: str, candidate_id: str, wait: bool = False) -> None:
        thread = threading.Thread(
            target=self._refine, args=(run_id, candidate_id), daemon=True
        )
        self._threads[run_id] = thread
        thread.start()
        if wait:
            thread.join()

    def resolve_selection(self, run_id: str, candidate_id: str) -> str:
        if candidate_id != "auto":
            return candidate_id
        return auto_select(self.store.read_candidates(run_id)).id

    def _refine(self, run_id: str, candidate_id: str) -> None:
        try:
            _, gt, mask, sched, skip, cfg, den, clf = self._load_run_inputs(run_id)
            candidates = {c.id: c for c in self.store.read_candidates(run_id)}
            cand = candidates[candidate_id]
            rdir = self.store.run_dir(run_id)
            (rdir / "selected.txt").write_text(candidate_id + "\n")

            def progress(done, total):
                self.store.set_progress(
                    run_id, {"phase": "refining", "done": done, "total": total}
                )

            final, final_raw = sampler_mod.run_deterministic_refinement(
                cand, gt, mask, den, clf, cfg, sched, skip, progress=progress
            )
            save_image(np.clip(final, -1, 1), rdir / "result.png")
            np.save(rdir / "result_raw.npy", final_raw)
            report = evaluate_inpainting(np.clip(final, -1, 1), gt, mask)
            metrics = report.to_dict()
            metrics["config_digest"] = self.store.get(run_id).config_digest
            (rdir / "metrics.json").write_text(json.dumps(metrics, indent=2))
            self.store.transition(
                run_id,
                "done",
                selected_id=candidate_id,
                artifacts=["result.png", "metrics.json", "selected.txt"],
            )
        except Exception as exc:
            self.store.transition(run_id, "failed", error=str(exc))


def reproduce_result(store: RunStore, run_id: str) -> np.ndarray:
    """Re-run a completed run purely from its persisted config and inputs.

    Returns the reproduced final image (pre-quantization); the quantized PNG
    must match result.png bitwise.
    """
    rdir = store.run_dir(run_id)
    config = json.loads((rdir / "config.json").read_text())
    gt = load_image(rdir / "gt.png")
    mask = load_mask(rdir / "mask.png")
    sched, skip = schedule_from_doc(config["schedule"])
    cfg = guidance_from_doc(config["guidance"], gt.shape)
    den, clf = load_backends(config["backend"], sched, store.root)
    selected = (rdir / "selected.txt").read_text().strip()
    result = sampler_mod.run_pipeline(
        gt, mask, cfg, den, clf, sched, skip, selection=selected
    )
    return np.clip(result.final, -1, 1)
