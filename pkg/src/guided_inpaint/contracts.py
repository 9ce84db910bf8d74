"""Behavioral contracts shared by the analytic and trained backends.

Backends operate on float64 arrays shaped ``event_shape`` or, with a leading
batch axis, ``(N,) + event_shape``. Images use (C, H, W) with values in
[-1, 1]; the mixture oracle also runs on plain vectors.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np


class UnsupportedCapability(RuntimeError):
    """Backend cannot provide the requested surface (e.g. no gradients)."""


@runtime_checkable
class Denoiser(Protocol):
    event_shape: tuple[int, ...]
    clamp_x0: bool

    def predict_eps(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """Noise estimate at timestep t; output shape equals input shape."""
        ...

    def predict_var_v(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """Raw variance-head output in [-1, 1]; upsilon = (value + 1) / 2."""
        ...

    def input_vjp(self, x_t: np.ndarray, t: int, cotangent: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product of predict_eps with respect to x_t."""
        ...


@runtime_checkable
class Classifier(Protocol):
    n_classes: int
    event_shape: tuple[int, ...]

    def log_prob(self, x0: np.ndarray, y: int) -> float | np.ndarray:
        ...

    def grad_log_prob(self, x0: np.ndarray, y: int) -> np.ndarray:
        ...

    def top_k(self, x0: np.ndarray, k: int) -> list[tuple[int, float]]:
        ...


def denoiser_input_vjp(
    backend,
    x_t: np.ndarray,
    t: int,
    cotangent: np.ndarray,
    stop_grad: bool = False,
) -> np.ndarray:
    """VJP of the noise prediction, honoring the stop-gradient toggle.

    With stop_grad the noise estimate is treated as a constant in
    d(x_hat0)/d(x_t), so the eps-Jacobian contribution is exactly zero.
    """
    if x_t.shape != cotangent.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs cotangent {cotangent.shape}")
    if stop_grad:
        return np.zeros_like(x_t)
    vjp = getattr(backend, "input_vjp", None)
    if vjp is None:
        raise UnsupportedCapability(f"{type(backend).__name__} provides no input gradients")
    return vjp(x_t, t, cotangent)
