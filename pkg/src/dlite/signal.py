"""Segment containers, spectral views and patching.

A dataset pair on disk is a directory holding ``data.bin`` and
``manifest.json``::

    data.bin   b"DLSEG\\0" | u16 version | u32 N | u32 C | u32 T | N*C*T float32 LE
    manifest   {dataset_id, sample_rate_hz, n, channels, samples, subject_ids, source_notes}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DLSEG\x00"
VERSION = 1
_HEADER = struct.Struct("<HIII")
HEADER_SIZE = len(MAGIC) + _HEADER.size

DEFAULT_SAMPLE_RATE = 200.0
NUM_PATCHES = 20
NORM_EPS = 1e-8


class FormatError(ValueError):
    """Container magic or version not recognised."""


class IntegrityError(ValueError):
    """Container contents disagree with their manifest or with each other."""


@dataclass
class SegmentSet:
    segments: np.ndarray  # (N, C, T) float32
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    subject_ids: list[str] = field(default_factory=list)
    dataset_id: str = "dataset"
    source_notes: str = ""

    def __post_init__(self):
        self.segments = np.ascontiguousarray(self.segments, dtype="<f4")
        if self.segments.ndim != 3:
            raise IntegrityError(f"segments must be N x C x T, got shape {self.segments.shape}")
        if not self.sample_rate_hz > 0:
            raise IntegrityError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.subject_ids:
            self.subject_ids = ["unknown"] * len(self.segments)
        if len(self.subject_ids) != len(self.segments):
            raise IntegrityError(
                f"{len(self.subject_ids)} subject ids for {len(self.segments)} segments"
            )
        self.subject_ids = [str(s) for s in self.subject_ids]

    def __len__(self) -> int:
        return self.segments.shape[0]

    @property
    def channels(self) -> int:
        return self.segments.shape[1]

    @property
    def samples(self) -> int:
        return self.segments.shape[2]

    def subset(self, indices) -> "SegmentSet":
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IntegrityError(f"subset indices out of range for N={len(self)}")
        return SegmentSet(
            self.segments[idx],
            self.sample_rate_hz,
            [self.subject_ids[i] for i in idx],
            self.dataset_id,
            self.source_notes,
        )

    def manifest(self) -> dict:
        n, c, t = self.segments.shape
        return {
            "dataset_id": self.dataset_id,
            "sample_rate_hz": float(self.sample_rate_hz),
            "n": n,
            "channels": c,
            "samples": t,
            "subject_ids": list(self.subject_ids),
            "source_notes": self.source_notes,
        }


def save_segment_set(seg: SegmentSet, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n, c, t = seg.segments.shape
    with open(path / "data.bin", "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, n, c, t))
        fh.write(seg.segments.astype("<f4", copy=False).tobytes(order="C"))
    with open(path / "manifest.json", "w") as fh:
        json.dump(seg.manifest(), fh, indent=2)
        fh.write("\n")
    return path


def read_header(path) -> tuple[int, int, int]:
    with open(Path(path) / "data.bin", "rb") as fh:
        head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE or head[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a segment container")
    version, n, c, t = _HEADER.unpack(head[len(MAGIC) :])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    return n, c, t


def load_segment_set(path) -> SegmentSet:
    path = Path(path)
    with open(path / "manifest.json") as fh:
        man = json.load(fh)
    n, c, t = read_header(path)
    raw = (path / "data.bin").read_bytes()[HEADER_SIZE:]
    expected = n * c * t * 4
    if len(raw) != expected:
        raise IntegrityError(f"{path}: header promises {n}x{c}x{t} floats, blob holds {len(raw) // 4}")
    for key, val in (("n", n), ("channels", c), ("samples", t)):
        if int(man.get(key, -1)) != val:
            raise IntegrityError(f"{path}: manifest {key}={man.get(key)} but data.bin has {val}")
    if len(man.get("subject_ids", [])) != n:
        raise IntegrityError(f"{path}: manifest lists {len(man.get('subject_ids', []))} subjects for {n} segments")
    segments = np.frombuffer(raw, dtype="<f4").reshape(n, c, t).copy()
    return SegmentSet(
        segments,
        float(man["sample_rate_hz"]),
        list(man["subject_ids"]),
        str(man["dataset_id"]),
        str(man.get("source_notes", "")),
    )


def discover_pairs(root) -> list[Path]:
    """All container directories under ``root`` (``root`` itself if it is one), sorted."""
    root = Path(root)
    if (root / "data.bin").is_file():
        return [root]
    return sorted(p.parent for p in root.rglob("data.bin") if (p.parent / "manifest.json").is_file())


# spectral views -------------------------------------------------------------


def fft_views(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-sided magnitude and phase along the last axis (``T//2 + 1`` bins)."""
    x = np.asarray(x)
    if x.shape[-1] < 2:
        raise ValueError("fft_views needs at least 2 samples")
    if not np.isfinite(x).all():
        raise FloatingPointError("fft_views: non-finite input")
    spec = np.fft.rfft(x.astype(np.float64, copy=False), axis=-1)
    return np.abs(spec), np.arctan2(spec.imag, spec.real)


def align_length(view: np.ndarray, length: int) -> np.ndarray:
    """Linearly resample the last axis of ``view`` onto ``length`` evenly spaced points."""
    src = view.shape[-1]
    if src == length:
        return view
    pos = np.linspace(0.0, src - 1, length)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    w = pos - lo
    return view[..., lo] * (1 - w) + view[..., hi] * w


def fit_length(view: np.ndarray, num_patches: int) -> np.ndarray:
    """Truncate or zero-pad the last axis to the nearest multiple of ``num_patches``."""
    if num_patches <= 0:
        raise ValueError(f"num_patches must be positive, got {num_patches}")
    length = view.shape[-1]
    target = max(num_patches, int(round(length / num_patches)) * num_patches)
    if target == length:
        return view
    if target < length:
        return view[..., :target]
    pad = [(0, 0)] * (view.ndim - 1) + [(0, target - length)]
    return np.pad(view, pad)


def patchify(view: np.ndarray, num_patches: int) -> np.ndarray:
    """(..., L) -> (..., P, L // P) contiguous non-overlapping patches."""
    if num_patches <= 0:
        raise ValueError(f"num_patches must be positive, got {num_patches}")
    length = view.shape[-1]
    if length % num_patches:
        raise ValueError(f"length {length} not divisible by {num_patches} patches")
    return view.reshape(*view.shape[:-1], num_patches, length // num_patches)


def unpatchify(patches: np.ndarray) -> np.ndarray:
    return patches.reshape(*patches.shape[:-2], patches.shape[-2] * patches.shape[-1])


@dataclass
class MultiViewBatch:
    potential: np.ndarray  # (B, C, P, T_W)
    magnitude: np.ndarray
    phase: np.ndarray
    normalized: bool = False
    length_adjusted: bool = False  # True when T was trimmed/padded to fit the patch grid

    VIEWS = ("potential", "magnitude", "phase")

    def views(self) -> list[np.ndarray]:
        return [self.potential, self.magnitude, self.phase]

    @property
    def num_patches(self) -> int:
        return self.potential.shape[2]

    @property
    def patch_len(self) -> int:
        return self.potential.shape[3]

    def stacked(self) -> np.ndarray:
        """(B, 3, C, P, T_W) float32 in view order potential, magnitude, phase."""
        return np.stack(self.views(), axis=1).astype(np.float32)


def normalize_views(batch: MultiViewBatch) -> MultiViewBatch:
    """Z-score each view per channel per segment."""

    def z(v):
        mu = v.mean(axis=(-2, -1), keepdims=True)
        sd = v.std(axis=(-2, -1), keepdims=True)
        return (v - mu) / (sd + NORM_EPS)

    return MultiViewBatch(z(batch.potential), z(batch.magnitude), z(batch.phase), True, batch.length_adjusted)


def make_views(segments: np.ndarray, num_patches: int = NUM_PATCHES, normalize: bool = True) -> MultiViewBatch:
    """Segments (B, C, T) -> patched potential/magnitude/phase views on a shared grid."""
    x = np.asarray(segments, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    mag, pha = fft_views(x)
    t = x.shape[-1]
    pot = fit_length(x, num_patches)
    length = pot.shape[-1]
    mag = align_length(mag, length)
    pha = align_length(pha, length)
    batch = MultiViewBatch(
        patchify(pot, num_patches),
        patchify(mag, num_patches),
        patchify(pha, num_patches),
        False,
        length != t,
    )
    return normalize_views(batch) if normalize else batch
