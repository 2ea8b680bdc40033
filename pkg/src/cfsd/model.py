"""Detector: variance-based crop, MLP feature extractor, and a d -> d/2 -> 1 scoring head."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .numcore import Tensor

CHECKPOINT_MAGIC = b"CFSD1"


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    """Shape descriptor for a detector.

    ``hidden`` lists the widths of the extractor's hidden layers; the final
    extractor layer maps to ``feature_dim``. ``extractor="identity"`` means
    no extractor weights at all and ``feature_dim`` must equal the input size.
    """

    patch: tuple[int, int] = (32, 32)
    hidden: tuple[int, ...] = (128,)
    feature_dim: int = 64
    extractor: str = "mlp"

    def __post_init__(self):
        if self.feature_dim % 2:
            raise ValueError("feature_dim must be even (head hidden width is d/2)")
        if self.extractor not in ("mlp", "identity"):
            raise ValueError(f"unknown extractor {self.extractor!r}")
        if self.extractor == "identity" and self.feature_dim != self.input_dim:
            raise ValueError("identity extractor needs feature_dim == H*W")

    @property
    def input_dim(self) -> int:
        return self.patch[0] * self.patch[1]

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        if self.extractor == "mlp":
            widths = [self.input_dim, *self.hidden, self.feature_dim]
            for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
                shapes += [(f"extractor.{i}.weight", (fi, fo)), (f"extractor.{i}.bias", (fo,))]
        d = self.feature_dim
        shapes += [
            ("head.0.weight", (d, d // 2)),
            ("head.0.bias", (d // 2,)),
            ("head.1.weight", (d // 2, 1)),
            ("head.1.bias", (1,)),
        ]
        return shapes

    def to_dict(self) -> dict:
        return {
            "patch": list(self.patch),
            "hidden": list(self.hidden),
            "feature_dim": self.feature_dim,
            "extractor": self.extractor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Architecture:
        return cls(tuple(d["patch"]), tuple(d["hidden"]), int(d["feature_dim"]), d["extractor"])


@dataclass
class DetectorParams:
    """All learnable weights, in declared layer order (extractor first, then head)."""

    arch: Architecture
    arrays: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        shapes = self.arch.layer_shapes()
        if len(shapes) != len(self.arrays):
            raise ValueError(f"expected {len(shapes)} arrays, got {len(self.arrays)}")
        for (name, shp), arr in zip(shapes, self.arrays):
            if arr.shape != shp:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shp}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite weights")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.arch.layer_shapes()]

    @property
    def n_extractor(self) -> int:
        return len(self.arrays) - 4

    def copy(self) -> DetectorParams:
        return DetectorParams(self.arch, [a.copy() for a in self.arrays])

    def equals(self, other: DetectorParams) -> bool:
        return self.arch == other.arch and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays, other.arrays)
        )


def init_params(arch: Architecture, seed: int) -> DetectorParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = []
    for name, shp in arch.layer_shapes():
        if name.endswith("bias"):
            arrays.append(np.zeros(shp))
        else:
            limit = np.sqrt(6.0 / (shp[0] + shp[1]))
            arrays.append(rng.uniform(-limit, limit, size=shp))
    return DetectorParams(arch, arrays)


def zeros_params(arch: Architecture) -> DetectorParams:
    return DetectorParams(arch, [np.zeros(s) for _, s in arch.layer_shapes()])


# --- preprocessing -----------------------------------------------------------


def select_window(raw: np.ndarray, size: tuple[int, int]) -> tuple[int, int]:
    """Top-left corner of the highest-variance ``size`` window; ties go topmost-leftmost."""
    return tuple(int(c) for c in select_windows(raw[None], size)[0])


def select_windows(raws: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Batched :func:`select_window` over an (n, H_raw, W_raw) stack."""
    n, hr, wr = raws.shape
    h, w = size
    if hr < h or wr < w:
        raise ValueError(f"raw image {hr}x{wr} smaller than patch {h}x{w}")
    # integral images of x and x^2 with a zero border
    c1 = np.zeros((n, hr + 1, wr + 1))
    c2 = np.zeros((n, hr + 1, wr + 1))
    c1[:, 1:, 1:] = raws.cumsum(1).cumsum(2)
    c2[:, 1:, 1:] = (raws * raws).cumsum(1).cumsum(2)

    def box(c):
        return c[:, h:, w:] - c[:, :-h, w:] - c[:, h:, :-w] + c[:, :-h, :-w]

    area = h * w
    mean = box(c1) / area
    var = box(c2) / area - mean * mean
    flat = var.reshape(n, -1)
    # treat rounding-level differences as ties
    best = flat.max(axis=1, keepdims=True)
    tol = 1e-9 * np.maximum(1.0, np.abs(best))
    idx = np.argmax(flat >= best - tol, axis=1)
    nw = wr - w + 1
    return np.stack([idx // nw, idx % nw], axis=1)


def preprocess_batch(raws: np.ndarray, size: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Crop, standardize, and rescale an (n, H_raw, W_raw) stack into (n, H, W) patches in [0, 1]."""
    raws = np.asarray(raws, dtype=np.float64)
    if raws.ndim != 3:
        raise ValueError("expected an (n, H, W) stack")
    h, w = size
    corners = select_windows(raws, size)
    rows = corners[:, 0][:, None] + np.arange(h)[None, :]
    cols = corners[:, 1][:, None] + np.arange(w)[None, :]
    crops = raws[np.arange(len(raws))[:, None, None], rows[:, :, None], cols[:, None, :]]
    flat = crops.reshape(len(raws), -1)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    flat_std = np.where(std > 1e-12, (flat - mean) / np.where(std > 1e-12, std, 1.0), 0.0)
    lo = flat_std.min(axis=1, keepdims=True)
    hi = flat_std.max(axis=1, keepdims=True)
    span = hi - lo
    out = np.where(span > 1e-12, (flat_std - lo) / np.where(span > 1e-12, span, 1.0), 0.5)
    return out.reshape(len(raws), h, w)


def preprocess(raw: np.ndarray, size: tuple[int, int] = (32, 32)) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("expected a single 2-D image")
    return preprocess_batch(raw[None], size)[0]


# --- forward pass ------------------------------------------------------------


def as_tensors(params: DetectorParams, requires_grad: bool = False) -> list[Tensor]:
    return [
        Tensor(a, requires_grad=requires_grad, name=n) for n, a in zip(params.names, params.arrays)
    ]


def extract_features(x: Tensor, extractor: list[Tensor]) -> Tensor:
    """Dense layers with ReLU between them; the output layer is linear."""
    h = x
    n_layers = len(extractor) // 2
    for i in range(n_layers):
        h = nc.add(nc.matmul(h, extractor[2 * i]), extractor[2 * i + 1])
        if i < n_layers - 1:
            h = nc.relu(h)
    return h


def score(z: Tensor, head: list[Tensor]) -> Tensor:
    """sigmoid(w2 . relu(W1 z + b1) + b2) for each row of z; returns shape (n,)."""
    w1, b1, w2, b2 = head
    hidden = nc.relu(nc.add(nc.matmul(z, w1), b1))
    logit = nc.add(nc.matmul(hidden, w2), b2)
    return nc.reshape(nc.sigmoid(logit), (z.shape[0],))


def forward(tensors: list[Tensor], x: Tensor) -> tuple[Tensor, Tensor]:
    """Full detector on flattened patches ``x`` (n, H*W). Returns (features, scores)."""
    z = extract_features(x, tensors[:-4])
    return z, score(z, tensors[-4:])


def flatten_patches(patches: np.ndarray) -> np.ndarray:
    return np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)


def score_patches(params: DetectorParams, patches: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Scores for preprocessed patches (n, H, W) or flat inputs (n, H*W)."""
    x = flatten_patches(patches)
    tensors = as_tensors(params)
    out = [forward(tensors, Tensor(x[i : i + chunk]))[1].data for i in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def score_features(params: DetectorParams, feats: np.ndarray) -> np.ndarray:
    """Score precomputed feature vectors; only valid with the identity extractor."""
    if params.arch.extractor != "identity":
        raise ValueError("feature-vector input requires the identity extractor")
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    return score(Tensor(feats), as_tensors(params)[-4:]).data


def detect(s: float, tau: float = 0.5) -> int:
    """Binary decision; a score equal to the threshold counts as synthetic."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return int(s >= tau)


def detect_raw(params: DetectorParams, raw: np.ndarray, tau: float = 0.5) -> tuple[int, float]:
    patch = preprocess(raw, params.arch.patch)
    s = float(score_patches(params, patch[None])[0])
    return detect(s, tau), s


# --- checkpoint container -----------------------------------------------------


def save_checkpoint(
    path: str | Path,
    params: DetectorParams,
    extra_blocks: dict[str, np.ndarray] | None = None,
    meta: dict | None = None,
) -> None:
    """Write magic, a length-prefixed JSON descriptor, then little-endian float64 blocks.

    Blocks are the parameter arrays in declared order followed by ``extra_blocks``
    (e.g. optimizer moments) in insertion order.
    """
    extra_blocks = extra_blocks or {}
    blocks = list(zip(params.names, params.arrays)) + list(extra_blocks.items())
    header = {
        "arch": params.arch.to_dict(),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
        "n_params": len(params.arrays),
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[DetectorParams, dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_checkpoint`: (params, extra blocks, meta)."""
    buf = Path(path).read_bytes()
    if buf[:5] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic at offset 0")
    if len(buf) < 9:
        raise CheckpointFormatError("truncated header length at offset 5")
    (hlen,) = struct.unpack_from("<I", buf, 5)
    try:
        header = json.loads(buf[9 : 9 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt descriptor at offset 9: {exc}") from None
    off = 9 + hlen
    arrays = []
    for name, shape in header["blocks"]:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(buf):
            raise CheckpointFormatError(f"truncated block {name!r} at offset {off}")
        arrays.append(np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).astype(np.float64))
        off += nbytes
    if off != len(buf):
        raise CheckpointFormatError(f"trailing bytes at offset {off}")
    arch = Architecture.from_dict(header["arch"])
    n = header["n_params"]
    params = DetectorParams(arch, arrays[:n])
    extra = {name: arr for (name, _), arr in zip(header["blocks"][n:], arrays[n:])}
    return params, extra, header["meta"]
