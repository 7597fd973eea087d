"""Synthetic multi-subject segment corpora with hidden labels and injected artifacts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .rng import make_rng
from .signal import SegmentSet


@dataclass
class SynthSpec:
    n_subjects: int = 20
    segments_per_subject: int = 250
    channels: int = 4
    samples: int = 400
    sample_rate_hz: float = 200.0
    n_classes: int = 4
    components: int = 3  # sinusoids per class prototype
    freq_range: tuple[float, float] = (2.0, 40.0)
    class_weights: tuple[float, ...] | None = None  # None -> uniform
    drift: float = 0.5  # subject-level frequency shift (Hz) and gain spread
    noise: float = 0.5
    rho: float = 0.01  # artifact fraction
    artifact_amplitude: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        self.freq_range = tuple(self.freq_range)
        if self.class_weights is not None:
            self.class_weights = tuple(self.class_weights)
            if len(self.class_weights) != self.n_classes:
                raise ValueError("class_weights length must equal n_classes")

    @property
    def n(self) -> int:
        return self.n_subjects * self.segments_per_subject

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthData:
    segset: SegmentSet
    labels: np.ndarray
    outlier_flags: np.ndarray
    subjects: np.ndarray


def generate(spec: SynthSpec) -> SynthData:
    """Class prototype sinusoid mixtures + subject drift + noise, with a fraction ``rho`` of artifacts.

    Artifacts alternate between sparse high-amplitude spike trains and flat lines.
    Labels and flags are returned separately from the segment set.
    """
    rng = make_rng(spec.seed, "synth")
    k, m, c, t = spec.n_classes, spec.components, spec.channels, spec.samples
    lo, hi = spec.freq_range
    freqs = rng.uniform(lo, hi, size=(k, m))
    amps = rng.uniform(0.3, 1.5, size=(k, m, c))

    s = spec.n_subjects
    shift = rng.normal(0.0, spec.drift, size=s)
    gains = 1.0 + 0.3 * spec.drift * rng.standard_normal((s, c))

    weights = np.ones(k) if spec.class_weights is None else np.asarray(spec.class_weights, dtype=float)
    weights = weights / weights.sum()
    n = spec.n
    subjects = np.repeat(np.arange(s), spec.segments_per_subject)
    labels = rng.choice(k, size=n, p=weights)
    phases = rng.uniform(0, 2 * np.pi, size=(n, m, c))
    time = np.arange(t) / spec.sample_rate_hz

    x = np.empty((n, c, t), dtype=np.float64)
    for i in range(n):
        cls, subj = labels[i], subjects[i]
        f = freqs[cls] + shift[subj]  # (m,)
        arg = 2 * np.pi * f[:, None, None] * time[None, None, :] + phases[i][:, :, None]
        wave = (amps[cls][:, :, None] * np.sin(arg)).sum(axis=0)  # (c, t)
        x[i] = gains[subj][:, None] * wave
    x += spec.noise * rng.standard_normal(x.shape)

    flags = np.zeros(n, dtype=bool)
    n_art = int(round(spec.rho * n))
    if n_art:
        art = np.sort(rng.choice(n, size=n_art, replace=False))
        flags[art] = True
        for j, i in enumerate(art):
            if j % 2 == 0:
                seg = spec.noise * rng.standard_normal((c, t))
                spikes = rng.choice(t, size=max(1, t // 100), replace=False)
                seg[:, spikes] += spec.artifact_amplitude * rng.choice([-1.0, 1.0], size=(c, len(spikes)))
            else:
                level = spec.artifact_amplitude * rng.uniform(-1, 1, size=(c, 1))
                seg = np.repeat(level, t, axis=1)
            x[i] = seg

    segset = SegmentSet(
        x.astype(np.float32),
        spec.sample_rate_hz,
        [f"sub{j:03d}" for j in subjects],
        f"synth-{spec.seed}",
        "synthetic sinusoid-mixture corpus",
    )
    return SynthData(segset, labels, flags, subjects)


def mean_spectra(segset: SegmentSet) -> np.ndarray:
    """Channel-averaged magnitude spectrum per segment; the oracle features for separability checks."""
    mag = np.abs(np.fft.rfft(segset.segments.astype(np.float64), axis=-1))
    return mag.mean(axis=1)
