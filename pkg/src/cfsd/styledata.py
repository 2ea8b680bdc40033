"""Procedural fingerprint-like styles, dataset container, splitting and file I/O.

Each sample is an oriented sinusoidal ridge pattern over a smooth random
orientation field, degraded by blur and gaussian noise. Synthetic-analog
styles superimpose an artifact signature on top.
"""

from __future__ import annotations

import configparser
import hashlib
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

REAL, SYNTHETIC = 0, 1
ARTIFACT_TYPES = ("none", "periodic-grid", "spectral-peak", "quantization", "checker")
DATASET_MAGIC = b"CFSDAT1"


class DatasetFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (offset {offset})")
        self.offset = offset


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass(frozen=True)
class StyleSpec:
    tag: str
    label: int = REAL
    freq_band: tuple[float, float] = (0.09, 0.14)
    orient_smoothness: float = 0.7
    contrast: float = 0.7
    noise_sigma: float = 0.03
    blur: float = 0.0
    artifact: str = "none"
    artifact_amplitude: float = 0.0
    # checker / grid period in pixels, or quantization levels
    artifact_period: int = 4
    # cycles/pixel along (columns, rows) for spectral-peak
    artifact_freq: tuple[float, float] = (0.3125, 0.1875)
    seed: int = 0

    def __post_init__(self):
        if not self.tag:
            raise ValueError("style tag must be non-empty")
        if self.label not in (REAL, SYNTHETIC):
            raise ValueError("label must be 0 (real) or 1 (synthetic)")
        lo, hi = self.freq_band
        if not 0 < lo <= hi < 0.5:
            raise ValueError("ridge frequency band must lie in (0, 0.5)")
        if self.artifact not in ARTIFACT_TYPES:
            raise ValueError(f"unknown artifact type {self.artifact!r}")
        if self.artifact_amplitude < 0:
            raise ValueError("artifact amplitude must be >= 0")
        if self.label == REAL and self.artifact != "none":
            raise ValueError("real-analog styles carry no artifact")
        if self.artifact_period < 1:
            raise ValueError("artifact period must be >= 1")


@dataclass
class Sample:
    pixels: np.ndarray
    label: int
    style: str
    sample_id: str


@dataclass
class Dataset:
    """Column-oriented sample collection; ``pixels`` is (n, H, W)."""

    pixels: np.ndarray
    labels: np.ndarray
    styles: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.styles = np.asarray(self.styles, dtype=object)
        self.ids = np.asarray(self.ids, dtype=object)
        n = len(self.pixels)
        if not (len(self.labels) == len(self.styles) == len(self.ids) == n):
            raise ValueError("dataset columns disagree in length")
        if self.pixels.ndim != 3:
            raise ValueError("pixels must be (n, H, W)")

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> Dataset:
        return cls(np.zeros((0, *shape)), [], [], [])

    @classmethod
    def concat(cls, parts: list[Dataset]) -> Dataset:
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            np.concatenate([p.pixels for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.styles for p in parts]),
            np.concatenate([p.ids for p in parts]),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.pixels[i], int(self.labels[i]), self.styles[i], self.ids[i])

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[1:]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.pixels[idx], self.labels[idx], self.styles[idx], self.ids[idx])

    def head(self, n: int) -> Dataset:
        return self.subset(np.arange(min(n, len(self))))

    def style_order(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.styles:
            seen.setdefault(s, None)
        return list(seen)

    def style_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.styles:
            counts[s] = counts.get(s, 0) + 1
        return counts

    def by_style(self, tag: str) -> Dataset:
        return self.subset(np.flatnonzero(self.styles == tag))

    def where_label(self, label: int) -> Dataset:
        return self.subset(np.flatnonzero(self.labels == label))

    def same_as(self, other: Dataset) -> bool:
        return (
            self.pixels.shape == other.pixels.shape
            and self.pixels.tobytes() == other.pixels.tobytes()
            and np.array_equal(self.labels, other.labels)
            and list(self.styles) == list(other.styles)
            and list(self.ids) == list(other.ids)
        )


# --- rendering ------------------------------------------------------------------


def artifact_pattern(spec: StyleSpec, size: int, img: np.ndarray | None = None) -> np.ndarray:
    """Artifact field to add to an image, before scaling by amplitude."""
    rows, cols = np.mgrid[0:size, 0:size]
    p = spec.artifact_period
    kind = spec.artifact
    if kind == "none":
        return np.zeros((size, size))
    if kind == "checker":
        return ((rows // p + cols // p) % 2) * 2.0 - 1.0
    if kind == "periodic-grid":
        lines = ((rows % p == 0) | (cols % p == 0)).astype(float)
        return lines - lines.mean()
    if kind == "spectral-peak":
        fx, fy = spec.artifact_freq
        return np.cos(2 * np.pi * (fx * cols + fy * rows))
    # quantization: residual towards p gray levels, amplitude acts as a blend weight
    if img is None:
        raise ValueError("quantization artifact needs the underlying image")
    levels = float(p)
    return np.round(img * levels) / levels - img


def render_sample(spec: StyleSpec, seed: int, index: int, size: int = 40) -> np.ndarray:
    rng = np.random.default_rng([seed, index])
    c = (size - 1) / 2.0
    rows, cols = np.mgrid[0:size, 0:size]
    u, v = cols - c, rows - c

    f = rng.uniform(*spec.freq_band)
    theta = np.full((size, size), rng.uniform(0.0, np.pi))
    wiggle = 1.0 - spec.orient_smoothness
    for k in range(1, 4):
        a = rng.normal() / k
        pu, pv = rng.uniform(-1.0, 1.0, size=2) * k
        phi = rng.uniform(0.0, 2 * np.pi)
        theta = theta + wiggle * a * np.sin(2 * np.pi * (pu * u + pv * v) / size + phi)
    phase = rng.uniform(0.0, 2 * np.pi)
    img = 0.5 + 0.5 * spec.contrast * np.sin(
        2 * np.pi * f * (u * np.cos(theta) + v * np.sin(theta)) + phase
    )
    if spec.blur > 0:
        img = gaussian_filter(img, spec.blur, mode="reflect")
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    if spec.artifact != "none" and spec.artifact_amplitude > 0:
        img = img + spec.artifact_amplitude * artifact_pattern(spec, size, img)
    return np.clip(img, 0.0, 1.0)


def gen_style(spec: StyleSpec, n: int, seed: int, size: int = 40, start: int = 0) -> Dataset:
    """Render samples ``start .. start+n-1`` of a style; sample i depends only on (spec, seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = range(start, start + n)
    pixels = np.stack([render_sample(spec, seed, i, size) for i in idx])
    return Dataset(
        pixels,
        np.full(n, spec.label),
        [spec.tag] * n,
        [f"{spec.tag}/{seed:x}/{i}" for i in idx],
    )


def default_protocol_styles() -> list[StyleSpec]:
    """8 real-analogs, base synthetic S0, then adaptation styles S1..S5 (decreasing amplitude)."""
    reals = [
        StyleSpec("R1", freq_band=(0.08, 0.11), noise_sigma=0.02, blur=0.0, contrast=0.80),
        StyleSpec("R2", freq_band=(0.09, 0.12), noise_sigma=0.04, blur=0.5, contrast=0.70),
        StyleSpec("R3", freq_band=(0.10, 0.13), noise_sigma=0.06, blur=0.8, contrast=0.60),
        StyleSpec("R4", freq_band=(0.11, 0.14), noise_sigma=0.03, blur=1.0, contrast=0.75),
        StyleSpec("R5", freq_band=(0.08, 0.12), noise_sigma=0.08, blur=0.0, contrast=0.70, orient_smoothness=0.5),
        StyleSpec("R6", freq_band=(0.10, 0.14), noise_sigma=0.05, blur=0.6, contrast=0.65, orient_smoothness=0.9),
        StyleSpec("R7", freq_band=(0.09, 0.13), noise_sigma=0.07, blur=0.3, contrast=0.80, orient_smoothness=0.6),
        StyleSpec("R8", freq_band=(0.12, 0.15), noise_sigma=0.04, blur=0.7, contrast=0.70, orient_smoothness=0.8),
    ]
    synth = dict(label=SYNTHETIC, freq_band=(0.09, 0.14), noise_sigma=0.04, blur=0.5)
    fakes = [
        StyleSpec("S0", artifact="spectral-peak", artifact_amplitude=0.25, artifact_freq=(0.3125, 0.1875), **synth),
        StyleSpec("S1", artifact="checker", artifact_amplitude=0.50, artifact_period=1, **synth),
        StyleSpec("S2", artifact="checker", artifact_amplitude=0.40, artifact_period=2, **synth),
        StyleSpec("S3", artifact="spectral-peak", artifact_amplitude=0.30, artifact_freq=(0.125, 0.375), **synth),
        StyleSpec("S4", artifact="checker", artifact_amplitude=0.25, artifact_period=3, **synth),
        StyleSpec("S5", artifact="periodic-grid", artifact_amplitude=0.20, artifact_period=4, **synth),
    ]
    return reals + fakes


# --- splitting --------------------------------------------------------------------


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-style stratified split; both halves keep the original sample order."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    test_idx = []
    for tag in dataset.style_order():
        members = np.flatnonzero(dataset.styles == tag)
        n_test = int(round(len(members) * test_fraction))
        rng = np.random.default_rng(derive_seed(seed, tag, "split"))
        test_idx.append(members[rng.permutation(len(members))[:n_test]])
    test_mask = np.zeros(len(dataset), dtype=bool)
    if test_idx:
        test_mask[np.concatenate(test_idx)] = True
    return dataset.subset(np.flatnonzero(~test_mask)), dataset.subset(np.flatnonzero(test_mask))


# --- binary dataset files -------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def dumps(dataset: Dataset) -> bytes:
    h, w = dataset.shape
    order = dataset.style_order()
    counts = dataset.style_counts()
    header = struct.pack("<III", h, w, len(order))
    for tag in order:
        header += _pack_str(tag) + struct.pack("<I", counts[tag])
    header += struct.pack("<I", len(dataset))
    index = {tag: i for i, tag in enumerate(order)}
    body = bytearray()
    for i in range(len(dataset)):
        body += _pack_str(dataset.ids[i])
        body += struct.pack("<BH", int(dataset.labels[i]), index[dataset.styles[i]])
        body += np.ascontiguousarray(dataset.pixels[i], dtype="<f8").tobytes()
    return (
        DATASET_MAGIC
        + struct.pack("<I", len(header))
        + header
        + struct.pack("<I", zlib.crc32(header))
        + bytes(body)
        + struct.pack("<I", zlib.crc32(body))
    )


class _Reader:
    def __init__(self, buf: bytes, off: int = 0):
        self.buf, self.off = buf, off

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise DatasetFormatError(f"truncated while reading {what}", self.off)
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<H", what)
        at = self.off
        try:
            return self.take(n, what).decode()
        except UnicodeDecodeError:
            raise DatasetFormatError(f"invalid utf-8 in {what}", at) from None


def loads(buf: bytes) -> Dataset:
    if buf[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetFormatError("bad magic", 0)
    r = _Reader(buf, len(DATASET_MAGIC))
    (hlen,) = r.unpack("<I", "header length")
    hstart = r.off
    header = r.take(hlen, "header")
    (crc,) = r.unpack("<I", "header checksum")
    if zlib.crc32(header) != crc:
        raise DatasetFormatError("header checksum mismatch", hstart)
    hr = _Reader(buf, hstart)
    h, w, n_styles = hr.unpack("<III", "extents")
    tags, counts = [], []
    for _ in range(n_styles):
        tags.append(hr.string("style tag"))
        counts.append(hr.unpack("<I", "style count")[0])
    (n,) = hr.unpack("<I", "record count")
    if n != sum(counts):
        raise DatasetFormatError("record count disagrees with per-style counts", hstart)

    body_start = r.off
    pix_bytes = 8 * h * w
    ids, labels, styles = [], [], []
    pixels = np.empty((n, h, w))
    for i in range(n):
        at = r.off
        ids.append(r.string("sample id"))
        label, si = r.unpack("<BH", "record label")
        if label not in (REAL, SYNTHETIC) or si >= n_styles:
            raise DatasetFormatError(f"record {i}: bad label or style index", at)
        labels.append(label)
        styles.append(tags[si])
        pixels[i] = np.frombuffer(r.take(pix_bytes, "pixels"), dtype="<f8").reshape(h, w)
    body = buf[body_start : r.off]
    (crc,) = r.unpack("<I", "body checksum")
    if zlib.crc32(body) != crc:
        raise DatasetFormatError("record checksum mismatch", body_start)
    if r.off != len(buf):
        raise DatasetFormatError("trailing bytes", r.off)
    if len(set(ids)) != len(ids):
        raise DatasetFormatError("duplicate sample ids", body_start)
    ds = Dataset(pixels, labels, styles, ids)
    if [ds.style_counts().get(t, 0) for t in tags] != counts:
        raise DatasetFormatError("per-style counts disagree with records", hstart)
    return ds


def save(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(dumps(dataset))


def load(path: str | Path) -> Dataset:
    return loads(Path(path).read_bytes())


# --- style manifest -------------------------------------------------------------------


def write_manifest(styles: list[StyleSpec], path: str | Path) -> None:
    cp = configparser.ConfigParser()
    for spec in styles:
        cp[spec.tag] = {k: _fmt(v) for k, v in asdict(spec).items() if k != "tag"}
    with open(path, "w") as fh:
        cp.write(fh)


def read_manifest(path: str | Path) -> list[StyleSpec]:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    return [_spec_from_section(tag, cp[tag]) for tag in cp.sections()]


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _spec_from_section(tag: str, sec) -> StyleSpec:
    def pair(text: str) -> tuple[float, float]:
        return tuple(float(x) for x in text.split(","))

    return StyleSpec(
        tag=tag,
        label=sec.getint("label"),
        freq_band=pair(sec["freq_band"]),
        orient_smoothness=sec.getfloat("orient_smoothness"),
        contrast=sec.getfloat("contrast"),
        noise_sigma=sec.getfloat("noise_sigma"),
        blur=sec.getfloat("blur"),
        artifact=sec["artifact"],
        artifact_amplitude=sec.getfloat("artifact_amplitude"),
        artifact_period=sec.getint("artifact_period"),
        artifact_freq=pair(sec["artifact_freq"]),
        seed=sec.getint("seed"),
    )
