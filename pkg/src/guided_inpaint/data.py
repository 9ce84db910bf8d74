"""Benchmark masks, the procedural toy dataset, and image file I/O.

Images live in memory as float64 (C, H, W) arrays with values in [-1, 1];
the 8-bit file mapping is v8 = round((v + 1) * 127.5). Masks use 1 = known,
0 = unknown, stored in files as 255/0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class DataError(ValueError):
    pass


MASK_KINDS = ("expand", "half", "square")


def make_benchmark_mask(kind: str, H: int, W: int) -> np.ndarray:
    """The three benchmark masks, generalized from the 128/256 ratio.

    expand keeps only the central H/2 x W/2 block (75% masked), half keeps
    the left half of the columns (50% masked), square masks the central
    H/2 x W/2 block (25% masked).
    """
    if H % 2 or W % 2:
        raise DataError(f"mask dimensions must be even, got {H}x{W}")
    if kind not in MASK_KINDS:
        raise DataError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    mask = np.zeros((1, H, W), dtype=np.float64)
    h0, w0 = H // 4, W // 4
    if kind == "expand":
        mask[:, h0 : h0 + H // 2, w0 : w0 + W // 2] = 1.0
    elif kind == "half":
        mask[:, :, : W // 2] = 1.0
    else:  # square
        mask[:] = 1.0
        mask[:, h0 : h0 + H // 2, w0 : w0 + W // 2] = 0.0
    return mask


def _draw_disc(img: np.ndarray, cy: float, cx: float, r: float) -> None:
    H, W = img.shape
    yy, xx = np.mgrid[0:H, 0:W]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r**2] = 1.0


def _draw_cross(img: np.ndarray, cy: int, cx: int, arm: int, thick: int) -> None:
    H, W = img.shape
    half = thick // 2
    y0, y1 = max(cy - half, 0), min(cy + half + 1, H)
    x0, x1 = max(cx - half, 0), min(cx + half + 1, W)
    img[y0:y1, max(cx - arm, 0) : min(cx + arm + 1, W)] = 1.0
    img[max(cy - arm, 0) : min(cy + arm + 1, H), x0:x1] = 1.0


def make_toy_dataset(
    n: int, size: int = 8, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded two-class grayscale shapes: filled discs (0) vs crosses (1).

    Returns (images (n, 1, size, size) in [-1, 1], labels (n,)), classes
    balanced, shape position and scale randomized within bounds.
    """
    if n < 2:
        raise DataError("dataset needs at least 2 images")
    if size < 8:
        raise DataError("size must be >= 8")
    rng = np.random.default_rng(seed)
    images = np.empty((n, 1, size, size), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % 2
        canvas = np.full((size, size), -1.0)
        lo, hi = size * 0.3, size * 0.7
        cy = rng.uniform(lo, hi)
        cx = rng.uniform(lo, hi)
        if label == 0:
            r = rng.uniform(size * 0.15, size * 0.3)
            _draw_disc(canvas, cy, cx, r)
        else:
            arm = int(rng.uniform(size * 0.18, size * 0.35))
            _draw_cross(canvas, int(round(cy)), int(round(cx)), max(arm, 1), max(size // 8, 1))
        images[i, 0] = canvas
        labels[i] = label
    return images, labels


TOY_CLASS_NAMES = ("disc", "cross")


# ---------------------------------------------------------------------------
# file I/O


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(v8: np.ndarray) -> np.ndarray:
    return v8.astype(np.float64) / 127.5 - 1.0


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Write a (C, H, W) [-1,1] image as 8-bit PNG or text PGM (by extension)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DataError(f"expected (C,H,W) with C in {{1,3}}, got {img.shape}")
    path = Path(path)
    v8 = to_uint8(img)
    if path.suffix.lower() == ".pgm":
        if img.shape[0] != 1:
            raise DataError("PGM supports grayscale only")
        h, w = v8.shape[1:]
        rows = "\n".join(" ".join(str(int(v)) for v in row) for row in v8[0])
        path.write_text(f"P2\n{w} {h}\n255\n{rows}\n")
        return
    if img.shape[0] == 1:
        Image.fromarray(v8[0], mode="L").save(path)
    else:
        Image.fromarray(np.moveaxis(v8, 0, 2), mode="RGB").save(path)


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit PNG or text PGM back into a (C, H, W) [-1,1] array."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        tokens = [tok for line in path.read_text().splitlines()
                  if not line.startswith("#") for tok in line.split()]
        if not tokens or tokens[0] != "P2":
            raise DataError(f"{path}: unsupported PGM variant (want plain P2)")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        if maxval != 255:
            raise DataError(f"{path}: unsupported bit depth (maxval {maxval})")
        v8 = np.array(tokens[4:], dtype=np.float64).reshape(h, w)
        return from_uint8(v8)[None]
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            if im.mode in ("I", "I;16", "I;16B", "F"):
                raise DataError(f"{path}: unsupported bit depth (mode {im.mode})")
            im = im.convert("RGB" if "A" in im.mode or im.mode == "P" else "L")
        arr = np.asarray(im)
    if arr.ndim == 2:
        return from_uint8(arr)[None]
    return from_uint8(np.moveaxis(arr, 2, 0))


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Mask file convention: 255 = known, 0 = unknown."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        m = m[None]
    Image.fromarray((m[0] * 255).astype(np.uint8), mode="L").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            if im.mode in ("I", "I;16", "I;16B", "F"):
                raise DataError(f"{path}: unsupported bit depth (mode {im.mode})")
            im = im.convert("L")
        arr = np.asarray(im)
    mask = (arr >= 128).astype(np.float64)
    return mask[None]


def image_to_png_bytes(img: np.ndarray) -> bytes:
    import io

    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    v8 = to_uint8(img)
    buf = io.BytesIO()
    if img.shape[0] == 1:
        Image.fromarray(v8[0], mode="L").save(buf, format="PNG")
    else:
        Image.fromarray(np.moveaxis(v8, 0, 2), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(blob: bytes) -> np.ndarray:
    import io

    with Image.open(io.BytesIO(blob)) as im:
        if im.mode not in ("L", "RGB"):
            if im.mode in ("I", "I;16", "I;16B", "F"):
                raise DataError(f"unsupported bit depth (mode {im.mode})")
            im = im.convert("L")
        arr = np.asarray(im)
    if arr.ndim == 2:
        return from_uint8(arr)[None]
    return from_uint8(np.moveaxis(arr, 2, 0))


def mask_from_png_bytes(blob: bytes) -> np.ndarray:
    import io

    with Image.open(io.BytesIO(blob)) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.float64)[None]


def dataset_checksum(images: np.ndarray, labels: np.ndarray) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(np.ascontiguousarray(images).tobytes())
    h.update(np.ascontiguousarray(labels).tobytes())
    return h.hexdigest()


def write_dataset_manifest(path: str | Path, labels: np.ndarray, seed: int, size: int) -> None:
    lines = [f"# toy shapes dataset  seed={seed}  size={size}"]
    lines += [f"{i}\t{int(y)}\t{TOY_CLASS_NAMES[int(y)]}" for i, y in enumerate(labels)]
    Path(path).write_text("\n".join(lines) + "\n")
