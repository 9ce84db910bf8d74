"""Labeled isotropic Gaussian mixture: the exact denoiser/classifier oracle.

Every quantity the sampler consumes from a real diffusion model has a closed
form here. Under forward noising x_t = sqrt(abar) x0 + sqrt(1-abar) eps, the
noisy marginal of component k is N(sqrt(abar) mu_k, v_k I) with
v_k = abar sigma_k^2 + 1 - abar, which gives exact posteriors, noise
predictions, and their input Jacobians (via the score Hessian).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .contracts import UnsupportedCapability
from .schedule import NoiseSchedule

_TWO_PI = 2.0 * np.pi


class MixtureError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianMixtureModel:
    """K isotropic components over event_shape; component index = class label."""

    weights: np.ndarray          # (K,), positive, sums to 1
    means: np.ndarray            # (K,) + event_shape
    sigmas: np.ndarray           # (K,), strictly positive

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.sigmas, dtype=np.float64)
        if w.ndim != 1 or m.shape[0] != w.shape[0] or s.shape != w.shape:
            raise MixtureError("weights, means, sigmas must agree on K")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise MixtureError("weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise MixtureError("sigmas must be strictly positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sigmas", s)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def event_shape(self) -> tuple[int, ...]:
        return self.means.shape[1:]

    @property
    def dim(self) -> int:
        return int(np.prod(self.event_shape))

    def flat_means(self) -> np.ndarray:
        return self.means.reshape(self.K, self.dim)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw n labeled points; returns (x (n,)+event_shape, labels (n,))."""
        labels = rng.choice(self.K, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        x = self.flat_means()[labels] + self.sigmas[labels, None] * eps
        return x.reshape((n,) + self.event_shape), labels

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "gaussian-mixture",
                "version": 1,
                "event_shape": list(self.event_shape),
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "sigmas": self.sigmas.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GaussianMixtureModel":
        doc = json.loads(text)
        if doc.get("format") != "gaussian-mixture":
            raise MixtureError("not a mixture document")
        return cls(
            weights=np.array(doc["weights"], dtype=np.float64),
            means=np.array(doc["means"], dtype=np.float64),
            sigmas=np.array(doc["sigmas"], dtype=np.float64),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "GaussianMixtureModel":
        return cls.from_json(Path(path).read_text())


def _as_batch(gmm: GaussianMixtureModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    ev = gmm.event_shape
    if x.shape == ev:
        return x.reshape(1, gmm.dim), False
    if x.shape[1:] == ev:
        return x.reshape(x.shape[0], gmm.dim), True
    raise MixtureError(f"input shape {x.shape} incompatible with event shape {ev}")


def _restore(x2d: np.ndarray, batched: bool, event_shape: tuple[int, ...]) -> np.ndarray:
    if batched:
        return x2d.reshape((x2d.shape[0],) + event_shape)
    return x2d.reshape(event_shape)


def _noisy_params(gmm: GaussianMixtureModel, abar: float) -> tuple[np.ndarray, np.ndarray]:
    """Component centers sqrt(abar)*mu (K,d) and variances v_k (K,)."""
    v = abar * gmm.sigmas**2 + (1.0 - abar)
    centers = np.sqrt(abar) * gmm.flat_means()
    return centers, v


def _log_resp(x2d: np.ndarray, centers: np.ndarray, v: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Log responsibilities (N,K) of the noisy marginal mixture."""
    d = x2d.shape[1]
    sq = ((x2d[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)  # (N,K)
    logw = np.log(weights)[None, :] - 0.5 * d * np.log(_TWO_PI * v)[None, :] - sq / (2.0 * v)[None, :]
    return logw - logsumexp(logw, axis=1, keepdims=True)


def _check_t(t: int, sched: NoiseSchedule) -> float:
    if not 1 <= t <= sched.T:
        raise MixtureError(f"timestep {t} outside 1..{sched.T}")
    return sched.alpha_bar_at(t)


def mixture_posterior_x0(
    x_t: np.ndarray, t: int, gmm: GaussianMixtureModel, sched: NoiseSchedule
) -> np.ndarray:
    """Exact E[x0 | x_t]: responsibility-weighted per-component posterior means."""
    abar = _check_t(t, sched)
    x2d, batched = _as_batch(gmm, x_t)
    centers, v = _noisy_params(gmm, abar)
    r = np.exp(_log_resp(x2d, centers, v, gmm.weights))  # (N,K)
    shrink = (np.sqrt(abar) * gmm.sigmas**2 / v)  # (K,)
    m = gmm.flat_means()[None, :, :] + shrink[None, :, None] * (x2d[:, None, :] - centers[None, :, :])
    post = np.einsum("nk,nkd->nd", r, m)
    return _restore(post, batched, gmm.event_shape)


def mixture_score(
    x_t: np.ndarray, t: int, gmm: GaussianMixtureModel, sched: NoiseSchedule
) -> np.ndarray:
    """Gradient of log p_t(x_t) under the noisy marginal mixture."""
    abar = _check_t(t, sched)
    x2d, batched = _as_batch(gmm, x_t)
    centers, v = _noisy_params(gmm, abar)
    r = np.exp(_log_resp(x2d, centers, v, gmm.weights))
    g = (centers[None, :, :] - x2d[:, None, :]) / v[None, :, None]
    return _restore(np.einsum("nk,nkd->nd", r, g), batched, gmm.event_shape)


def mixture_predict_eps(
    x_t: np.ndarray, t: int, gmm: GaussianMixtureModel, sched: NoiseSchedule
) -> np.ndarray:
    """Noise prediction consistent with the exact posterior mean."""
    abar = _check_t(t, sched)
    if 1.0 - abar <= 0.0:
        raise MixtureError(f"1 - alpha_bar vanishes at t={t}")
    x = np.asarray(x_t, dtype=np.float64)
    post = mixture_posterior_x0(x, t, gmm, sched)
    return (x - np.sqrt(abar) * post) / np.sqrt(1.0 - abar)


def mixture_eps_vjp(
    x_t: np.ndarray, t: int, cotangent: np.ndarray, gmm: GaussianMixtureModel, sched: NoiseSchedule
) -> np.ndarray:
    """Exact VJP of mixture_predict_eps in x_t.

    The eps-Jacobian is -sqrt(1-abar) times the Hessian of log p_t, and the
    Hessian-vector product has the closed form
    H u = sum_k r_k (g_k.u) g_k - (gbar.u) gbar - (sum_k r_k / v_k) u.
    """
    abar = _check_t(t, sched)
    x2d, batched = _as_batch(gmm, x_t)
    u2d, _ = _as_batch(gmm, cotangent)
    if u2d.shape != x2d.shape:
        raise MixtureError("cotangent shape must match x_t shape")
    centers, v = _noisy_params(gmm, abar)
    r = np.exp(_log_resp(x2d, centers, v, gmm.weights))            # (N,K)
    g = (centers[None, :, :] - x2d[:, None, :]) / v[None, :, None]  # (N,K,d)
    gbar = np.einsum("nk,nkd->nd", r, g)
    gu = np.einsum("nkd,nd->nk", g, u2d)
    hu = (
        np.einsum("nk,nk,nkd->nd", r, gu, g)
        - np.einsum("nd,nd->n", gbar, u2d)[:, None] * gbar
        - (r / v[None, :]).sum(axis=1)[:, None] * u2d
    )
    out = -np.sqrt(1.0 - abar) * hu
    return _restore(out, batched, gmm.event_shape)


def _clean_log_post(gmm: GaussianMixtureModel, x2d: np.ndarray) -> np.ndarray:
    """Log p(y | x0) for all components, (N,K), via Bayes on the clean mixture."""
    d = x2d.shape[1]
    s2 = gmm.sigmas**2
    sq = ((x2d[:, None, :] - gmm.flat_means()[None, :, :]) ** 2).sum(axis=2)
    logw = np.log(gmm.weights)[None, :] - 0.5 * d * np.log(_TWO_PI * s2)[None, :] - sq / (2.0 * s2)[None, :]
    return logw - logsumexp(logw, axis=1, keepdims=True)


def mixture_classifier_logprob(
    x0: np.ndarray, y: int, gmm: GaussianMixtureModel
) -> float | np.ndarray:
    """log p(y | x0) with the component index as class label."""
    if not 0 <= y < gmm.K:
        raise MixtureError(f"unknown label {y} (K={gmm.K})")
    x2d, batched = _as_batch(gmm, x0)
    lp = _clean_log_post(gmm, x2d)[:, y]
    return lp if batched else float(lp[0])


def mixture_classifier_grad(x0: np.ndarray, y: int, gmm: GaussianMixtureModel) -> np.ndarray:
    """Analytic gradient of log p(y | x0) in x0."""
    if not 0 <= y < gmm.K:
        raise MixtureError(f"unknown label {y} (K={gmm.K})")
    x2d, batched = _as_batch(gmm, x0)
    rho = np.exp(_clean_log_post(gmm, x2d))                              # (N,K)
    g0 = (gmm.flat_means()[None, :, :] - x2d[:, None, :]) / (gmm.sigmas**2)[None, :, None]
    grad = g0[:, y, :] - np.einsum("nk,nkd->nd", rho, g0)
    return _restore(grad, batched, gmm.event_shape)


class MixtureDenoiser:
    """Denoiser contract backed by the exact mixture posterior."""

    clamp_x0 = False

    def __init__(self, gmm: GaussianMixtureModel, sched: NoiseSchedule):
        self.gmm = gmm
        self.sched = sched
        self.event_shape = gmm.event_shape

    def predict_eps(self, x_t: np.ndarray, t: int) -> np.ndarray:
        return mixture_predict_eps(x_t, t, self.gmm, self.sched)

    def predict_var_v(self, x_t: np.ndarray, t: int) -> np.ndarray:
        # upsilon = 0: reverse variance pinned to the lower bound tilde_beta.
        return np.full_like(np.asarray(x_t, dtype=np.float64), -1.0)

    def input_vjp(self, x_t: np.ndarray, t: int, cotangent: np.ndarray) -> np.ndarray:
        return mixture_eps_vjp(x_t, t, cotangent, self.gmm, self.sched)


class MixtureClassifier:
    """Classifier contract backed by Bayes' rule on the clean mixture."""

    def __init__(self, gmm: GaussianMixtureModel):
        self.gmm = gmm
        self.n_classes = gmm.K
        self.event_shape = gmm.event_shape

    def log_prob(self, x0: np.ndarray, y: int) -> float | np.ndarray:
        return mixture_classifier_logprob(x0, y, self.gmm)

    def grad_log_prob(self, x0: np.ndarray, y: int) -> np.ndarray:
        return mixture_classifier_grad(x0, y, self.gmm)

    def top_k(self, x0: np.ndarray, k: int) -> list[tuple[int, float]]:
        x2d, batched = _as_batch(self.gmm, x0)
        if batched:
            raise MixtureError("top_k takes a single image")
        probs = np.exp(_clean_log_post(self.gmm, x2d))[0]
        order = np.argsort(-probs, kind="stable")[: max(1, min(k, self.n_classes))]
        return [(int(i), float(probs[i])) for i in order]


class ScoreOnlyDenoiser(MixtureDenoiser):
    """Mixture denoiser with gradients disabled; exercises the capability error."""

    def input_vjp(self, x_t, t, cotangent):
        raise UnsupportedCapability("score-only backend has no input gradients")
