"""Small trainable MLP backends for the denoiser and classifier contracts.

Everything is plain numpy with hand-written backprop: tanh hidden layers keep
the input gradients smooth enough for central-difference checks, and training
is a pure function of the seed, so checkpoints are bitwise reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToyDenoiserParams:
    hidden: tuple[int, ...] = (128, 128)
    temb_dim: int = 32
    steps: int = 4000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class ToyClassifierParams:
    hidden: tuple[int, ...] = (64,)
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


def time_features(t: np.ndarray, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of t/T at log-spaced frequencies, shape (N, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) / float(T)
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(200.0), half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class MLP:
    """Fully-connected tanh network with explicit forward/backward passes."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None):
        self.sizes = list(sizes)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        if rng is not None:
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                scale = np.sqrt(2.0 / (fan_in + fan_out))
                self.W.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
                self.b.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, activations); hidden layers are tanh, output linear."""
        acts = [x]
        h = x
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(
        self, acts: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Backprop grad_out; returns (dW list, db list, grad wrt input)."""
        dW = [np.empty(0)] * len(self.W)
        db = [np.empty(0)] * len(self.b)
        g = grad_out
        last = len(self.W) - 1
        for i in range(last, -1, -1):
            if i < last:
                g = g * (1.0 - acts[i + 1] ** 2)  # tanh'
            dW[i] = acts[i].T @ g
            db[i] = g.sum(axis=0)
            g = g @ self.W[i].T
        return dW, db, g

    def param_list(self) -> list[np.ndarray]:
        return self.W + self.b

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.param_list():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _flatten_batch(x: np.ndarray, event_shape: tuple[int, ...]) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    d = int(np.prod(event_shape))
    if x.shape == event_shape:
        return x.reshape(1, d), False
    if x.shape[1:] == event_shape:
        return x.reshape(x.shape[0], d), True
    raise ValueError(f"input shape {x.shape} incompatible with event shape {event_shape}")


class ToyDenoiser:
    """Noise-prediction MLP over flattened images plus sinusoidal time features."""

    clamp_x0 = True

    def __init__(self, mlp: MLP, event_shape: tuple[int, ...], T: int, temb_dim: int,
                 train_config: dict | None = None, loss_history: list[float] | None = None):
        self.mlp = mlp
        self.event_shape = tuple(event_shape)
        self.T = T
        self.temb_dim = temb_dim
        self.train_config = train_config or {}
        self.loss_history = loss_history or []

    @property
    def dim(self) -> int:
        return int(np.prod(self.event_shape))

    def _net_input(self, x2d: np.ndarray, t) -> np.ndarray:
        n = x2d.shape[0]
        t_arr = np.full(n, t, dtype=np.float64) if np.isscalar(t) else np.asarray(t, dtype=np.float64)
        return np.concatenate([x2d, time_features(t_arr, self.T, self.temb_dim)], axis=1)

    def predict_eps(self, x_t: np.ndarray, t: int) -> np.ndarray:
        x2d, batched = _flatten_batch(x_t, self.event_shape)
        out, _ = self.mlp.forward(self._net_input(x2d, t))
        return out.reshape(np.asarray(x_t).shape) if batched else out.reshape(self.event_shape)

    def predict_var_v(self, x_t: np.ndarray, t: int) -> np.ndarray:
        # Fixed upsilon = 0; the variance head is not learned.
        return np.full_like(np.asarray(x_t, dtype=np.float64), -1.0)

    def input_vjp(self, x_t: np.ndarray, t: int, cotangent: np.ndarray) -> np.ndarray:
        x2d, batched = _flatten_batch(x_t, self.event_shape)
        u2d, _ = _flatten_batch(cotangent, self.event_shape)
        _, acts = self.mlp.forward(self._net_input(x2d, t))
        _, _, grad_in = self.mlp.backward(acts, u2d)
        grad_x = grad_in[:, : self.dim]
        shape = np.asarray(x_t).shape
        return grad_x.reshape(shape) if batched else grad_x.reshape(self.event_shape)

    def save(self, path: str | Path) -> None:
        meta = {
            "format": "toy-denoiser",
            "version": CHECKPOINT_VERSION,
            "event_shape": list(self.event_shape),
            "T": self.T,
            "temb_dim": self.temb_dim,
            "sizes": self.mlp.sizes,
            "train_config": self.train_config,
        }
        arrays = {f"W{i}": w for i, w in enumerate(self.mlp.W)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.mlp.b)})
        arrays["loss_history"] = np.asarray(self.loss_history, dtype=np.float64)
        np.savez(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ToyDenoiser":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "toy-denoiser":
                raise TrainingError(f"{path} is not a toy-denoiser checkpoint")
            mlp = MLP(meta["sizes"])
            n_layers = len(meta["sizes"]) - 1
            mlp.W = [z[f"W{i}"] for i in range(n_layers)]
            mlp.b = [z[f"b{i}"] for i in range(n_layers)]
            return cls(
                mlp,
                tuple(meta["event_shape"]),
                meta["T"],
                meta["temb_dim"],
                meta["train_config"],
                z["loss_history"].tolist(),
            )


def train_toy_denoiser(
    dataset: np.ndarray,
    sched: NoiseSchedule,
    params: ToyDenoiserParams = ToyDenoiserParams(),
) -> ToyDenoiser:
    """Minimize E||eps - eps_theta(x_t, t)||^2 with t uniform on {1..T}.

    Returns the trained backend; the per-step per-element loss trajectory is
    kept on the model. Raises on an empty dataset or a non-finite loss.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim < 2 or data.shape[0] == 0:
        raise TrainingError("dataset must be a non-empty batch of images")
    n = data.shape[0]
    event_shape = data.shape[1:]
    d = int(np.prod(event_shape))
    flat = data.reshape(n, d)

    rng = np.random.default_rng(params.seed)
    sizes = [d + params.temb_dim, *params.hidden, d]
    mlp = MLP(sizes, rng)
    model = ToyDenoiser(mlp, event_shape, sched.T, params.temb_dim, asdict(params))
    opt = Adam(mlp.param_list(), params.lr)

    sqrt_ab = np.sqrt(sched.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bar)
    history = []
    for _ in range(params.steps):
        idx = rng.integers(0, n, size=params.batch_size)
        t = rng.integers(1, sched.T + 1, size=params.batch_size)
        eps = rng.standard_normal((params.batch_size, d))
        x_t = sqrt_ab[t - 1, None] * flat[idx] + sqrt_1mab[t - 1, None] * eps
        out, acts = mlp.forward(np.concatenate([x_t, time_features(t, sched.T, params.temb_dim)], axis=1))
        diff = out - eps
        loss = float(np.mean(diff**2))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite training loss at step {opt.step_count}: {loss}")
        history.append(loss)
        grad_out = 2.0 * diff / (params.batch_size * d)
        dW, db, _ = mlp.backward(acts, grad_out)
        opt.step(mlp.param_list(), dW + db)
    model.loss_history = history
    return model


class ToyClassifier:
    """Softmax MLP over flattened clean images."""

    def __init__(self, mlp: MLP, event_shape: tuple[int, ...], n_classes: int,
                 train_config: dict | None = None):
        self.mlp = mlp
        self.event_shape = tuple(event_shape)
        self.n_classes = n_classes
        self.train_config = train_config or {}

    @property
    def dim(self) -> int:
        return int(np.prod(self.event_shape))

    def logits(self, x0: np.ndarray) -> np.ndarray:
        x2d, batched = _flatten_batch(x0, self.event_shape)
        out, _ = self.mlp.forward(x2d)
        return out if batched else out[0]

    def log_prob(self, x0: np.ndarray, y: int) -> float | np.ndarray:
        if not 0 <= y < self.n_classes:
            raise ValueError(f"unknown label {y}")
        x2d, batched = _flatten_batch(x0, self.event_shape)
        out, _ = self.mlp.forward(x2d)
        lp = out[:, y] - logsumexp(out, axis=1)
        return lp if batched else float(lp[0])

    def grad_log_prob(self, x0: np.ndarray, y: int) -> np.ndarray:
        if not 0 <= y < self.n_classes:
            raise ValueError(f"unknown label {y}")
        x2d, batched = _flatten_batch(x0, self.event_shape)
        out, acts = self.mlp.forward(x2d)
        probs = np.exp(out - logsumexp(out, axis=1, keepdims=True))
        grad_logits = -probs
        grad_logits[:, y] += 1.0
        _, _, grad_in = self.mlp.backward(acts, grad_logits)
        shape = np.asarray(x0).shape
        return grad_in.reshape(shape) if batched else grad_in.reshape(self.event_shape)

    def top_k(self, x0: np.ndarray, k: int) -> list[tuple[int, float]]:
        x2d, batched = _flatten_batch(x0, self.event_shape)
        if batched:
            raise ValueError("top_k takes a single image")
        out, _ = self.mlp.forward(x2d)
        probs = np.exp(out[0] - logsumexp(out[0]))
        order = np.argsort(-probs, kind="stable")[: max(1, min(k, self.n_classes))]
        return [(int(i), float(probs[i])) for i in order]

    def save(self, path: str | Path) -> None:
        meta = {
            "format": "toy-classifier",
            "version": CHECKPOINT_VERSION,
            "event_shape": list(self.event_shape),
            "n_classes": self.n_classes,
            "sizes": self.mlp.sizes,
            "train_config": self.train_config,
        }
        arrays = {f"W{i}": w for i, w in enumerate(self.mlp.W)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.mlp.b)})
        np.savez(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ToyClassifier":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "toy-classifier":
                raise TrainingError(f"{path} is not a toy-classifier checkpoint")
            mlp = MLP(meta["sizes"])
            n_layers = len(meta["sizes"]) - 1
            mlp.W = [z[f"W{i}"] for i in range(n_layers)]
            mlp.b = [z[f"b{i}"] for i in range(n_layers)]
            return cls(mlp, tuple(meta["event_shape"]), meta["n_classes"], meta["train_config"])


def train_toy_classifier(
    dataset: np.ndarray,
    labels: np.ndarray,
    params: ToyClassifierParams = ToyClassifierParams(),
) -> ToyClassifier:
    """Cross-entropy training on clean images (guidance only ever sees x0_hat)."""
    data = np.asarray(dataset, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if data.ndim < 2 or data.shape[0] == 0:
        raise TrainingError("dataset must be a non-empty batch of images")
    if labels.shape != (data.shape[0],):
        raise TrainingError("labels must be one integer per image")
    classes = np.unique(labels)
    if classes.size < 2:
        raise TrainingError("classifier training needs at least 2 classes")
    n_classes = int(classes.max()) + 1
    n = data.shape[0]
    event_shape = data.shape[1:]
    d = int(np.prod(event_shape))
    flat = data.reshape(n, d)

    rng = np.random.default_rng(params.seed)
    mlp = MLP([d, *params.hidden, n_classes], rng)
    opt = Adam(mlp.param_list(), params.lr)
    for _ in range(params.steps):
        idx = rng.integers(0, n, size=params.batch_size)
        x, y = flat[idx], labels[idx]
        out, acts = mlp.forward(x)
        lse = logsumexp(out, axis=1, keepdims=True)
        loss = float(np.mean(lse[:, 0] - out[np.arange(x.shape[0]), y]))
        if not np.isfinite(loss):
            raise TrainingError("non-finite classifier loss")
        probs = np.exp(out - lse)
        grad = probs
        grad[np.arange(x.shape[0]), y] -= 1.0
        grad /= x.shape[0]
        dW, db, _ = mlp.backward(acts, grad)
        opt.step(mlp.param_list(), dW + db)
    return ToyClassifier(mlp, event_shape, n_classes, asdict(params))


def classifier_accuracy(clf: ToyClassifier, dataset: np.ndarray, labels: np.ndarray) -> float:
    logits = clf.logits(np.asarray(dataset, dtype=np.float64))
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def predict_labels(classifier, image: np.ndarray, k: int, mask: np.ndarray | None = None):
    """Top-k labels of an image, optionally restricted to the known region (image * mask)."""
    import warnings

    if k < 1:
        raise ValueError("k must be >= 1")
    if k > classifier.n_classes:
        warnings.warn(f"k={k} exceeds the label set ({classifier.n_classes}); clamping")
        k = classifier.n_classes
    x = np.asarray(image, dtype=np.float64)
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if m.max() == 0.0:
            warnings.warn("mask removes every pixel; classifying the zero image (low confidence)")
        x = x * m
    return classifier.top_k(x, k)
