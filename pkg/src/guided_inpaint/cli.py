"""Command-line interface mirroring the HTTP API.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .data import (
    DataError,
    MASK_KINDS,
    load_image,
    load_mask,
    make_benchmark_mask,
    make_toy_dataset,
    save_mask,
    write_dataset_manifest,
)
from .mixture import MixtureError
from .runs import RunError, RunExecutor, RunStore
from .sampler import SamplerError
from .schedule import ScheduleError
from .toynet import (
    ToyClassifierParams,
    ToyDenoiserParams,
    TrainingError,
    classifier_accuracy,
    train_toy_classifier,
    train_toy_denoiser,
)

VALIDATION_ERRORS = (
    ScheduleError,
    SamplerError,
    DataError,
    MixtureError,
    RunError,
    TrainingError,
    ValueError,
    KeyError,
)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VALIDATION_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"runtime failure: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
def main():
    """Classifier-guided diffusion inpainting."""


def _parse_stages(stages: str | None) -> list[int] | None:
    if not stages:
        return None
    return [int(s) for s in stages.split(",") if s.strip()]


def _resolve_mask(mask: str, image: np.ndarray) -> np.ndarray:
    if mask in MASK_KINDS:
        return make_benchmark_mask(mask, image.shape[1], image.shape[2])
    return load_mask(mask)


@main.command()
@click.option("--image", required=True, type=click.Path(exists=True), help="ground-truth PNG/PGM")
@click.option("--mask", required=True, help="mask PNG path or one of expand/half/square")
@click.option("--labels", default="", help="comma-separated target labels (global guidance)")
@click.option("--local", "local_specs", multiple=True,
              help="local guidance rect top,left,height,width,label (repeatable)")
@click.option("--t", "--T", "T", default=250, show_default=True, help="diffusion steps")
@click.option("--stages", default=None, help="comma-separated stage step counts for skip sampling")
@click.option("--t-stop-comp", default=130, show_default=True)
@click.option("--scale", default=1.0, show_default=True, help="guidance scale")
@click.option("--i-guid", default=2, show_default=True)
@click.option("--i-inp", default=2, show_default=True)
@click.option("--candidates", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--eta-ddim", default=0.0, show_default=True)
@click.option("--no-cg", is_flag=True, help="disable classifier guidance")
@click.option("--no-ss", is_flag=True, help="disable stochastic compositing")
@click.option("--gmm", type=click.Path(exists=True), help="mixture backend JSON")
@click.option("--denoiser", type=click.Path(exists=True), help="toy denoiser checkpoint")
@click.option("--classifier", type=click.Path(exists=True), help="toy classifier checkpoint")
@click.option("--out", required=True, type=click.Path(), help="data root for the run directory")
@click.option("--select", "selection", default="auto", show_default=True,
              help="candidate id, auto, or wait (stop at awaiting-selection)")
@handle_errors
def run(image, mask, labels, local_specs, T, stages, t_stop_comp, scale, i_guid, i_inp,
        candidates, seed, eta_ddim, no_cg, no_ss, gmm, denoiser, classifier, out, selection):
    """Execute an inpainting run end to end (or up to candidate selection)."""
    gt = load_image(image)
    mask_arr = _resolve_mask(mask, gt)
    if mask_arr.shape[1:] != gt.shape[1:]:
        raise DataError(f"mask shape {mask_arr.shape[1:]} does not match image {gt.shape[1:]}")

    if gmm:
        backend = {"kind": "mixture", "path": str(Path(gmm).resolve())}
    elif denoiser and classifier:
        backend = {
            "kind": "toy",
            "denoiser": str(Path(denoiser).resolve()),
            "classifier": str(Path(classifier).resolve()),
        }
    else:
        raise DataError("give --gmm or both --denoiser and --classifier")

    local = []
    for spec in local_specs:
        parts = [int(p) for p in spec.split(",")]
        if len(parts) != 5:
            raise DataError(f"--local wants top,left,height,width,label, got {spec!r}")
        local.append(dict(zip(("top", "left", "height", "width", "label"), parts)))

    config = {
        "schedule": {"T": T, "beta_start": None, "beta_end": None,
                     "stage_steps": _parse_stages(stages)},
        "guidance": {
            "s": scale, "i_guid": i_guid, "i_inp": i_inp, "t_stop_comp": t_stop_comp,
            "eta_ddim": eta_ddim, "candidates": candidates, "seed": seed,
            "enable_cg": not no_cg, "enable_ss": not no_ss,
            "mode": "local" if local else "global",
            "labels": [int(s) for s in labels.split(",") if s.strip()],
            "local_specs": local,
        },
        "backend": backend,
    }
    store = RunStore(out)
    executor = RunExecutor(store)
    state = store.create(config, gt, mask_arr)
    click.echo(f"run {state.run_id} created")
    executor.start_sampling(state.run_id, wait=True)
    state = store.get(state.run_id)
    if state.status == "failed":
        raise RuntimeError(state.error)
    click.echo(f"candidates: {', '.join(state.candidate_ids)}")
    if selection == "wait":
        click.echo(f"status: {state.status} (select later with the `select` command)")
        return
    candidate_id = executor.resolve_selection(state.run_id, selection)
    store.transition(state.run_id, "refining")
    executor.start_refinement(state.run_id, candidate_id, wait=True)
    state = store.get(state.run_id)
    if state.status == "failed":
        raise RuntimeError(state.error)
    metrics = json.loads((store.run_dir(state.run_id) / "metrics.json").read_text())
    click.echo(f"selected {candidate_id}; result at {store.run_dir(state.run_id) / 'result.png'}")
    click.echo(json.dumps(metrics, indent=2))


@main.command()
@click.argument("run_id")
@click.option("--data-root", required=True, type=click.Path(exists=True))
@handle_errors
def candidates(run_id, data_root):
    """List a run's candidates with classifier scores."""
    store = RunStore(data_root)
    state = store.get(run_id)
    if state.status in ("created", "sampling"):
        raise RunError(f"run {run_id} is still {state.status}")
    for meta in store.candidate_summaries(run_id):
        score = "n/a" if meta["score"] is None else f"{meta['score']:.4f}"
        click.echo(f"{meta['id']}  t={meta['t']}  branch={meta['branch']}  score={score}")


@main.command()
@click.argument("run_id")
@click.argument("candidate_id")
@click.option("--data-root", required=True, type=click.Path(exists=True))
@handle_errors
def select(run_id, candidate_id, data_root):
    """Select a candidate (or 'auto') and run deterministic refinement."""
    store = RunStore(data_root)
    executor = RunExecutor(store)
    state = store.get(run_id)
    if state.status != "awaiting-selection":
        raise RunError(f"run {run_id} is {state.status}, not awaiting-selection")
    chosen = executor.resolve_selection(run_id, candidate_id)
    if chosen not in state.candidate_ids:
        raise RunError(f"unknown candidate {chosen!r}")
    store.transition(run_id, "refining")
    executor.start_refinement(run_id, chosen, wait=True)
    state = store.get(run_id)
    if state.status == "failed":
        raise RuntimeError(state.error)
    click.echo(f"done; result at {store.run_dir(run_id) / 'result.png'}")


@main.command()
@click.argument("run_id")
@click.option("--data-root", required=True, type=click.Path(exists=True))
@handle_errors
def metrics(run_id, data_root):
    """Print the stored metrics of a completed run."""
    store = RunStore(data_root)
    store.get(run_id)
    path = store.run_dir(run_id) / "metrics.json"
    if not path.exists():
        raise RunError(f"run {run_id} has no metrics yet")
    click.echo(path.read_text())


@main.command("train-toy")
@click.option("--n", default=256, show_default=True, help="dataset size")
@click.option("--size", default=8, show_default=True, help="image side")
@click.option("--t", "--T", "T", default=250, show_default=True)
@click.option("--steps", default=3000, show_default=True, help="denoiser training steps")
@click.option("--clf-steps", default=1500, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def train_toy(n, size, T, steps, clf_steps, seed, out):
    """Train the toy shapes denoiser and classifier; write checkpoints."""
    from .schedule import build_linear_schedule

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = make_toy_dataset(n, size=size, seed=seed)
    write_dataset_manifest(out_dir / "dataset.tsv", labels, seed=seed, size=size)
    sched = build_linear_schedule(T)
    den = train_toy_denoiser(images, sched, ToyDenoiserParams(steps=steps, seed=seed))
    den.save(out_dir / "denoiser.npz")
    clf = train_toy_classifier(images, labels, ToyClassifierParams(steps=clf_steps, seed=seed + 1))
    clf.save(out_dir / "classifier.npz")
    acc = classifier_accuracy(clf, images, labels)
    final_loss = float(np.mean(den.loss_history[-max(steps // 10, 1):]))
    click.echo(f"denoiser loss (last 10%): {final_loss:.4f}")
    click.echo(f"classifier train accuracy: {acc:.3f}")
    click.echo(f"checkpoints in {out_dir}")


@main.command("make-mask")
@click.option("--kind", type=click.Choice(MASK_KINDS), required=True)
@click.option("--height", default=256, show_default=True)
@click.option("--width", default=256, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def make_mask(kind, height, width, out):
    """Write one of the benchmark masks as PNG (255 = known)."""
    save_mask(make_benchmark_mask(kind, height, width), out)
    click.echo(f"wrote {kind} mask ({height}x{width}) to {out}")


@main.command()
@click.option("--data-root", default=None, help="run storage root (env GUIDED_INPAINT_DATA_ROOT)")
@click.option("--port", default=None, type=int, help="listen port (env GUIDED_INPAINT_PORT)")
@click.option("--host", default="127.0.0.1", show_default=True)
@handle_errors
def serve(data_root, port, host):
    """Start the HTTP service."""
    import uvicorn

    from .service import DEFAULT_DATA_ROOT, DEFAULT_PORT, create_app

    app = create_app(data_root or DEFAULT_DATA_ROOT)
    uvicorn.run(app, host=host, port=port or DEFAULT_PORT)


if __name__ == "__main__":
    main()
