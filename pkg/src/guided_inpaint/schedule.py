"""Noise schedules and non-uniform skip-step sequences.

Timesteps are 1-based: t runs over {1, ..., T}, with the convention
alpha_bar(0) = 1 used by the terminal sampling step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables for a T-step forward noising process.

    Arrays are length T and indexed by t-1 for timestep t. ``tilde_beta``
    holds the posterior lower-bound variances, with the t=1 boundary set
    to beta_1 (the defining ratio divides by zero there).
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    tilde_beta: np.ndarray = field(repr=False)

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def tilde_beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.tilde_beta[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside 1..{self.T}")


def default_beta_bounds(T: int) -> tuple[float, float]:
    """Scaled-linear bounds: the 1000-step convention rescaled to T steps.

    Capped below 1 so very small T (where the convention has no meaning)
    still yields a valid schedule.
    """
    scale = 1000.0 / T
    return min(1e-4 * scale, 0.999), min(0.02 * scale, 0.999)


def build_linear_schedule(
    T: int,
    beta_start: float | None = None,
    beta_end: float | None = None,
) -> NoiseSchedule:
    """Build a linear beta schedule and derived alpha/alpha_bar/tilde_beta tables."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if beta_start is None and beta_end is None:
        beta_start, beta_end = default_beta_bounds(T)
    if beta_start is None or beta_end is None:
        raise ScheduleError("give both beta bounds or neither")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ScheduleError(f"beta bounds must lie in (0,1), got ({beta_start}, {beta_end})")
    if beta_start > beta_end:
        raise ScheduleError(f"beta_start {beta_start} > beta_end {beta_end}")

    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    tilde_beta = np.empty(T, dtype=np.float64)
    tilde_beta[0] = beta[0]
    if T > 1:
        tilde_beta[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return NoiseSchedule(T=int(T), beta=beta, alpha=alpha, alpha_bar=alpha_bar, tilde_beta=tilde_beta)


@dataclass(frozen=True)
class SkipSequence:
    """Strictly increasing subsequence of {1..T} ending at T.

    Stage i contributes exactly ``stage_steps[i]`` timesteps inside the i-th
    of n near-equal contiguous blocks, block i covering
    (floor((i-1)T/n), floor(iT/n)]. stage_steps[0] governs the block nearest
    t=1.
    """

    T: int
    taus: tuple[int, ...]
    stage_steps: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.taus)


def stage_blocks(T: int, n: int) -> list[tuple[int, int]]:
    """Block boundaries (lo, hi], lo exclusive, for n near-equal stages."""
    edges = [(i * T) // n for i in range(n + 1)]
    return [(edges[i], edges[i + 1]) for i in range(n)]


def build_skip_sequence(T: int, stage_steps: list[int] | tuple[int, ...]) -> SkipSequence:
    """Place stage_steps[i] timesteps in block i via tau = lo + ceil(j*L/s), j=1..s.

    The placement always includes each block's top element, so the sequence
    ends at T by construction.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    steps = tuple(int(s) for s in stage_steps)
    if len(steps) == 0:
        raise ScheduleError("stage_steps must be non-empty")
    if any(s < 1 for s in steps):
        raise ScheduleError(f"stage steps must be >= 1, got {steps}")
    n = len(steps)
    taus: list[int] = []
    for i, ((lo, hi), s) in enumerate(zip(stage_blocks(T, n), steps)):
        L = hi - lo
        if s > L:
            raise ScheduleError(
                f"stage {i} requests {s} steps but its block ({lo},{hi}] has only {L}"
            )
        taus.extend(lo + math.ceil(j * L / s) for j in range(1, s + 1))
    return SkipSequence(T=int(T), taus=tuple(taus), stage_steps=steps)


def full_sequence(T: int) -> SkipSequence:
    """The identity sequence 1..T (a single stage of T steps)."""
    return build_skip_sequence(T, [T])
