"""Step transforms and the hybrid stochastic/deterministic sampling pipeline.

A pipeline run has two phases. The stochastic phase walks the skip sequence
from T down to the handoff timestep (the largest skip step at or below the
compositing threshold), re-noising a known/generated composite at every
step above the threshold; each branch lands on one selectable candidate.
The deterministic phase refines one candidate to t=0 with sigma=0 and no
compositing. Both phases apply classifier guidance and the inpainting
constraint at every step.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .contracts import denoiser_input_vjp
from .schedule import NoiseSchedule, SkipSequence


class SamplerError(ValueError):
    pass


def validate_mask(mask: np.ndarray, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Masks are binary, 1 = known pixel, and broadcastable to the image."""
    m = np.asarray(mask, dtype=np.float64)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise SamplerError("mask values must be 0 or 1")
    if shape is not None:
        try:
            np.broadcast_shapes(m.shape, shape)
        except ValueError:
            raise SamplerError(f"mask shape {m.shape} not broadcastable to {shape}") from None
    return m


@dataclass(frozen=True)
class GuidanceConfig:
    """All sampler knobs; defaults follow the full-sampling configuration."""

    s: float = 1.0                    # guidance scale
    i_guid: int = 2                   # guidance descent steps per timestep
    i_inp: int = 2                    # inpainting descent steps per timestep
    lambda_reg: float = 0.01          # proximity regularizer weight
    lr_base: float = 0.02             # eta_t = lr_base * sqrt(abar_t) * lr_decay**(T-t)
    lr_decay: float = 1.012
    t_stop_comp: int = 130            # compositing stops below this timestep
    eta_ddim: float = 0.0             # DDIM stochasticity knob
    candidates: int = 1               # stochastic branch count
    seed: int = 0
    enable_cg: bool = True
    enable_ss: bool = True
    mode: str = "global"              # "global" | "local"
    labels: tuple[int, ...] = ()      # global-mode target labels
    local_specs: tuple[tuple[np.ndarray, int], ...] = ()   # (mask, label) pairs
    stop_grad_eps: bool = False       # treat eps_hat as constant in d(x0_hat)/d(x_t)
    clamp_x0: bool | None = None      # None: use the backend default

    def __post_init__(self):
        if self.s < 0:
            raise SamplerError("guidance scale must be >= 0")
        if self.i_guid < 0 or self.i_inp < 0:
            raise SamplerError("descent step counts must be >= 0")
        if not 0.0 <= self.eta_ddim <= 1.0:
            raise SamplerError("eta_ddim must lie in [0, 1]")
        if self.t_stop_comp < 0:
            raise SamplerError("t_stop_comp must be >= 0")
        if self.candidates < 1:
            raise SamplerError("candidates must be >= 1")
        if self.mode not in ("global", "local"):
            raise SamplerError(f"unknown mode {self.mode!r}")
        if self.mode == "local" and len(self.local_specs) == 0:
            raise SamplerError("local mode requires at least one (mask, label) spec")

    def validate_against(self, sched: NoiseSchedule) -> None:
        if self.t_stop_comp > sched.T:
            raise SamplerError(f"t_stop_comp {self.t_stop_comp} exceeds T={sched.T}")

    def learning_rate(self, t: int, sched: NoiseSchedule) -> float:
        return self.lr_base * np.sqrt(sched.alpha_bar_at(t)) * self.lr_decay ** (sched.T - t)


@dataclass(frozen=True)
class Candidate:
    """Branch state at the handoff timestep, exposed for selection."""

    id: str
    branch: int
    t: int
    x_t: np.ndarray
    preview_x0: np.ndarray
    seed_entropy: tuple[int, int]     # (run seed, branch index)
    score: float | None = None        # classifier log-prob of the target label


@dataclass
class RunResult:
    final: np.ndarray                 # known region pasted from gt
    final_raw: np.ndarray             # pre-composite refinement output
    candidates: list[Candidate]
    selected_id: str
    timings: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# per-step transforms


def forward_noise(x0: np.ndarray, t: int, sched: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Single-shot forward noising sqrt(abar_t) x0 + sqrt(1-abar_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise SamplerError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    abar = sched.alpha_bar_at(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def predict_x0(
    x_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule, clamp: bool = False
) -> np.ndarray:
    """Clean-image estimate (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise SamplerError(f"eps shape {eps_hat.shape} != x_t shape {x_t.shape}")
    abar = sched.alpha_bar_at(t)
    x0 = (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)
    if clamp:
        x0 = np.clip(x0, -1.0, 1.0)
    return x0


def ddim_sigma(t: int, t_prev: int, eta: float, sched: NoiseSchedule) -> float:
    """sigma_t = eta * sqrt((1-abar_prev)/(1-abar_t)) * sqrt(1 - abar_t/abar_prev)."""
    a_t = sched.alpha_bar_at(t)
    a_prev = sched.alpha_bar_at(t_prev)
    return eta * np.sqrt((1.0 - a_prev) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_prev)


def ddim_step(
    x_t: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    t_prev: int,
    sigma_t: float,
    sched: NoiseSchedule,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Non-Markovian reverse transition to t_prev (alpha_bar(0) := 1).

    Mean is sqrt(abar_prev) x0_hat plus the rescaled direction pointing from
    x0_hat to x_t; sigma_t adds fresh noise, zero makes the step deterministic.
    """
    if t_prev >= t:
        raise SamplerError(f"t_prev {t_prev} must be below t {t}")
    a_t = sched.alpha_bar_at(t)
    a_prev = sched.alpha_bar_at(t_prev)
    var_budget = 1.0 - a_prev
    if sigma_t**2 > var_budget + 1e-12:
        raise SamplerError(f"sigma_t^2 {sigma_t**2:.3e} exceeds 1 - abar_prev {var_budget:.3e}")
    if sigma_t > 0 and noise is None:
        raise SamplerError("noise required when sigma_t > 0")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    direction = (x_t - np.sqrt(a_t) * x0_hat) / np.sqrt(1.0 - a_t)
    out = np.sqrt(a_prev) * x0_hat + np.sqrt(max(var_budget - sigma_t**2, 0.0)) * direction
    if sigma_t > 0:
        out = out + sigma_t * np.asarray(noise, dtype=np.float64)
    return out


def _x0_chain_vjp(
    denoiser, x_t: np.ndarray, t: int, upstream: np.ndarray, sched: NoiseSchedule, stop_grad: bool
) -> np.ndarray:
    """Pull a gradient in x0_hat back to x_t through the prediction formula."""
    abar = sched.alpha_bar_at(t)
    eps_part = denoiser_input_vjp(denoiser, x_t, t, upstream, stop_grad=stop_grad)
    return (upstream - np.sqrt(1.0 - abar) * eps_part) / np.sqrt(abar)


def inpaint_loss_and_grad(
    x_t: np.ndarray,
    t: int,
    gt: np.ndarray,
    mask: np.ndarray,
    mu_t: np.ndarray,
    denoiser,
    sched: NoiseSchedule,
    lambda_reg: float,
    stop_grad: bool = False,
) -> tuple[float, np.ndarray]:
    """Known-region reconstruction loss with proximity regularizer, and its x_t gradient."""
    eps_hat = denoiser.predict_eps(x_t, t)
    x0_hat = predict_x0(x_t, t, eps_hat, sched)
    resid = (x0_hat - gt) * mask
    loss = float(np.sum(resid**2) + lambda_reg * np.sum((x_t - mu_t) ** 2))
    grad = _x0_chain_vjp(denoiser, x_t, t, 2.0 * resid, sched, stop_grad)
    grad = grad + 2.0 * lambda_reg * (x_t - mu_t)
    return loss, grad


def inpaint_constrain(
    x_t: np.ndarray,
    t: int,
    gt: np.ndarray,
    mask: np.ndarray,
    denoiser,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
) -> np.ndarray:
    """I_inp gradient-descent updates pulling the known region of x0_hat toward gt.

    The proximity anchor mu_t is the state on entry, re-captured at every
    timestep. Learning rate follows the decaying schedule in the config.
    """
    if cfg.i_inp == 0:
        return x_t
    x = np.asarray(x_t, dtype=np.float64)
    mu_t = x.copy()
    eta = cfg.learning_rate(t, sched)
    for _ in range(cfg.i_inp):
        _, grad = inpaint_loss_and_grad(
            x, t, gt, mask, mu_t, denoiser, sched, cfg.lambda_reg, cfg.stop_grad_eps
        )
        if not np.all(np.isfinite(grad)):
            raise SamplerError(f"non-finite inpainting gradient at t={t}")
        x = x - eta * grad
    return x


def guidance_loss_and_grad(
    x_t: np.ndarray,
    t: int,
    denoiser,
    classifier,
    labels: tuple[int, ...],
    sched: NoiseSchedule,
    region_mask: np.ndarray | None = None,
    stop_grad: bool = False,
) -> tuple[float, np.ndarray]:
    """Cross-entropy guidance loss -sum_y log p(y | x0_hat) and its x_t gradient.

    With a region mask (local guidance) the classifier sees x0_hat restricted
    to the unknown region, x0_hat * (1 - mask).
    """
    eps_hat = denoiser.predict_eps(x_t, t)
    x0_hat = predict_x0(x_t, t, eps_hat, sched)
    cls_in = x0_hat if region_mask is None else x0_hat * (1.0 - region_mask)
    loss = 0.0
    grad_x0 = np.zeros_like(x0_hat)
    for y in labels:
        lp = classifier.log_prob(cls_in, y)
        loss -= float(np.sum(lp))
        g = classifier.grad_log_prob(cls_in, y)
        grad_x0 -= g if region_mask is None else (1.0 - region_mask) * g
    return loss, _x0_chain_vjp(denoiser, x_t, t, grad_x0, sched, stop_grad)


def _reverse_variance(denoiser, x_t: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Sigma = exp(upsilon log beta_t + (1-upsilon) log tilde_beta_t), elementwise."""
    upsilon = (denoiser.predict_var_v(x_t, t) + 1.0) / 2.0
    log_beta = np.log(sched.beta_at(t))
    log_tilde = np.log(sched.tilde_beta_at(t))
    return np.exp(upsilon * log_beta + (1.0 - upsilon) * log_tilde)


def classifier_guide(
    x_t: np.ndarray,
    t: int,
    denoiser,
    classifier,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
) -> np.ndarray:
    """I_guid variance-scaled descent updates on the guidance loss.

    Global mode steers the whole x0_hat toward the target labels; local mode
    processes each (mask, label) region sequentially in list order.
    """
    if not cfg.enable_cg or cfg.s == 0.0 or cfg.i_guid == 0:
        return x_t
    if cfg.mode == "global":
        if len(cfg.labels) == 0:
            raise SamplerError("global guidance needs at least one target label")
        specs: list[tuple[np.ndarray | None, tuple[int, ...]]] = [(None, tuple(cfg.labels))]
    else:
        if len(cfg.local_specs) == 0:
            raise SamplerError("local guidance needs at least one (mask, label) spec")
        specs = [(mask, (label,)) for mask, label in cfg.local_specs]

    x = np.asarray(x_t, dtype=np.float64)
    for region_mask, labels in specs:
        for _ in range(cfg.i_guid):
            _, grad = guidance_loss_and_grad(
                x, t, denoiser, classifier, labels, sched, region_mask, cfg.stop_grad_eps
            )
            if not np.all(np.isfinite(grad)):
                raise SamplerError(f"non-finite guidance gradient at t={t}")
            sigma = _reverse_variance(denoiser, x, t, sched)
            x = x - cfg.s * sigma * grad
    return x


def composite_renoise(
    x0_hat: np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Paste the known ground truth over x0_hat and forward-noise back to t."""
    if t <= 0:
        raise SamplerError("compositing needs t > 0")
    x_comp = gt * mask + x0_hat * (1.0 - mask)
    noise = rng.standard_normal(x_comp.shape)
    return forward_noise(x_comp, t, sched, noise)


# ---------------------------------------------------------------------------
# phases


def _clamp_flag(cfg: GuidanceConfig, denoiser) -> bool:
    return denoiser.clamp_x0 if cfg.clamp_x0 is None else cfg.clamp_x0


def handoff_timestep(skip: SkipSequence, t_stop_comp: int) -> int:
    """Largest skip step at or below the threshold; the smallest step if none is."""
    below = [tau for tau in skip.taus if tau <= t_stop_comp]
    return below[-1] if below else skip.taus[0]


def _branch_rng(seed: int, branch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(branch)]))


def _run_branch(
    branch: int,
    gt: np.ndarray,
    mask: np.ndarray,
    denoiser,
    classifier,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
    skip: SkipSequence,
    progress=None,
) -> Candidate:
    rng = _branch_rng(cfg.seed, branch)
    clamp = _clamp_flag(cfg, denoiser)
    t_hand = handoff_timestep(skip, cfg.t_stop_comp)
    taus = list(skip.taus)
    x = rng.standard_normal(gt.shape)

    idx = len(taus) - 1
    while taus[idx] > t_hand:
        t = taus[idx]
        t_prev = taus[idx - 1] if idx > 0 else 0
        x = classifier_guide(x, t, denoiser, classifier, cfg, sched)
        x = inpaint_constrain(x, t, gt, mask, denoiser, sched, cfg)
        if cfg.enable_ss and t > cfg.t_stop_comp:
            x0_hat = predict_x0(x, t, denoiser.predict_eps(x, t), sched, clamp)
            x = composite_renoise(x0_hat, gt, mask, t, sched, rng)
        x0_hat = predict_x0(x, t, denoiser.predict_eps(x, t), sched, clamp)
        sigma = ddim_sigma(t, t_prev, cfg.eta_ddim, sched)
        noise = rng.standard_normal(x.shape) if sigma > 0 else None
        x = ddim_step(x, x0_hat, t, t_prev, sigma, sched, noise)
        idx -= 1
        if progress is not None:
            progress(branch, len(taus) - 1 - idx, len(taus))

    preview = predict_x0(x, t_hand, denoiser.predict_eps(x, t_hand), sched, clamp)
    score = None
    if classifier is not None and len(cfg.labels) > 0:
        score = float(np.sum(classifier.log_prob(preview, cfg.labels[0])))
    elif classifier is not None and cfg.mode == "local" and len(cfg.local_specs) > 0:
        score = float(np.sum(classifier.log_prob(preview, cfg.local_specs[0][1])))
    return Candidate(
        id=f"c{branch:03d}",
        branch=branch,
        t=t_hand,
        x_t=x,
        preview_x0=preview,
        seed_entropy=(cfg.seed, branch),
        score=score,
    )


def run_stochastic_phase(
    gt: np.ndarray,
    mask: np.ndarray,
    denoiser,
    classifier,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
    skip: SkipSequence,
    parallel: bool = False,
    progress=None,
) -> list[Candidate]:
    """Run all stochastic branches; each owns a private RNG stream derived
    from (seed, branch index), so serial and parallel execution agree bitwise."""
    cfg.validate_against(sched)
    gt = np.asarray(gt, dtype=np.float64)
    mask = validate_mask(mask, gt.shape)
    branches = range(cfg.candidates)

    def job(b: int) -> Candidate:
        try:
            return _run_branch(b, gt, mask, denoiser, classifier, cfg, sched, skip, progress)
        except Exception as exc:
            raise SamplerError(f"branch {b} failed: {exc}") from exc

    if parallel and cfg.candidates > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.candidates, 8)) as pool:
            return list(pool.map(job, branches))
    return [job(b) for b in branches]


def run_deterministic_refinement(
    candidate: Candidate,
    gt: np.ndarray,
    mask: np.ndarray,
    denoiser,
    classifier,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
    skip: SkipSequence,
    progress=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Refine one candidate to t=0 with sigma=0 and no compositing.

    Returns (final, final_raw): the final output with the known region pasted
    from gt, and the raw pre-composite state.
    """
    gt = np.asarray(gt, dtype=np.float64)
    mask = validate_mask(mask, gt.shape)
    if candidate.x_t.shape != gt.shape:
        raise SamplerError(
            f"candidate shape {candidate.x_t.shape} does not match image {gt.shape}"
        )
    if candidate.t not in skip.taus:
        raise SamplerError(f"candidate timestep {candidate.t} not on the skip sequence")
    clamp = _clamp_flag(cfg, denoiser)
    taus = list(skip.taus)
    idx = taus.index(candidate.t)
    x = np.asarray(candidate.x_t, dtype=np.float64)
    total = idx + 1
    for step, i in enumerate(range(idx, -1, -1)):
        t = taus[i]
        t_prev = taus[i - 1] if i > 0 else 0
        x = classifier_guide(x, t, denoiser, classifier, cfg, sched)
        x = inpaint_constrain(x, t, gt, mask, denoiser, sched, cfg)
        x0_hat = predict_x0(x, t, denoiser.predict_eps(x, t), sched, clamp)
        x = ddim_step(x, x0_hat, t, t_prev, 0.0, sched)
        if progress is not None:
            progress(step + 1, total)
    final = gt * mask + x * (1.0 - mask)
    return final, x


def auto_select(candidates: list[Candidate]) -> Candidate:
    """Highest classifier score for the target label; ties break by branch index."""
    if not candidates:
        raise SamplerError("empty candidate set")
    scored = [c for c in candidates if c.score is not None]
    if not scored:
        return min(candidates, key=lambda c: c.branch)
    best = max(scored, key=lambda c: (c.score, -c.branch))
    return best


def run_pipeline(
    gt: np.ndarray,
    mask: np.ndarray,
    cfg: GuidanceConfig,
    denoiser,
    classifier,
    sched: NoiseSchedule,
    skip: SkipSequence,
    selection: str = "auto",
    parallel: bool = False,
) -> RunResult:
    """Stochastic phase, candidate selection, deterministic refinement."""
    t0 = time.monotonic()
    candidates = run_stochastic_phase(
        gt, mask, denoiser, classifier, cfg, sched, skip, parallel=parallel
    )
    t1 = time.monotonic()
    if selection == "auto":
        chosen = auto_select(candidates)
    else:
        by_id = {c.id: c for c in candidates}
        if selection not in by_id:
            raise SamplerError(f"unknown candidate id {selection!r}")
        chosen = by_id[selection]
    final, final_raw = run_deterministic_refinement(
        chosen, gt, mask, denoiser, classifier, cfg, sched, skip
    )
    t2 = time.monotonic()
    return RunResult(
        final=final,
        final_raw=final_raw,
        candidates=candidates,
        selected_id=chosen.id,
        timings={"stochastic_s": t1 - t0, "refinement_s": t2 - t1},
    )


def disable_stochastic(cfg: GuidanceConfig) -> GuidanceConfig:
    """The w/o SS ablation: compositing never fires."""
    return replace(cfg, enable_ss=False)


def disable_guidance(cfg: GuidanceConfig) -> GuidanceConfig:
    """The w/o CG ablation: classifier guidance never fires."""
    return replace(cfg, enable_cg=False)
