"""Outlier scoring and diversity sampling over latent matrices.

HBOS: every latent dimension gets an equal-width histogram whose heights are
scaled so the tallest bin is 1. A row's score is
``sum_i log(1 / (p_i(x_i) + alpha))``; rare rows score high.

Diversity sampling is greedy farthest-point k-center: start from the row
farthest from the centroid, then repeatedly add the row whose squared
distance to its nearest chosen center is largest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

ALPHA = 1e-6
TAU = 0.05  # percent
STRATEGIES = ("proposed", "random", "pca_ds")


def default_bins(n: int) -> int:
    return max(1, int(round(math.sqrt(n))))


def percent_count(pct: float, n: int, minimum: int = 0) -> int:
    """``round(pct% * n)`` with halves rounded up."""
    return max(minimum, int(math.floor(pct * n / 100.0 + 0.5 + 1e-9)))


@dataclass
class HistogramModel:
    edges: list[np.ndarray]  # per dimension, B_i + 1 increasing edges
    heights: list[np.ndarray]  # per dimension, B_i values in [0, 1]
    alpha: float = ALPHA
    normalization: str = "max"

    @property
    def d(self) -> int:
        return len(self.edges)

    def bin_index(self, dim: int, values: np.ndarray) -> np.ndarray:
        e = self.edges[dim]
        nb = len(e) - 1
        if nb == 1:
            return np.zeros(len(values), dtype=np.intp)
        width = (e[-1] - e[0]) / nb
        idx = np.floor((values - e[0]) / width).astype(np.intp)
        return np.clip(idx, 0, nb - 1)

    def density(self, z: np.ndarray) -> np.ndarray:
        """Per-row, per-dimension heights ``p_i(x_i)``, shape (N, d)."""
        z = np.asarray(z, dtype=np.float64)
        return np.stack([self.heights[i][self.bin_index(i, z[:, i])] for i in range(self.d)], axis=1)


def fit_histograms(z: np.ndarray, bins: int | None = None, alpha: float = ALPHA, normalization: str = "max") -> HistogramModel:
    """Equal-width histograms over each column's observed range.

    ``normalization="max"`` scales the tallest bin to 1; ``"density"`` gives a
    probability density (counts / (N * width)). Constant columns get a single
    bin of height 1.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"need an (N >= 2, d) matrix, got shape {z.shape}")
    if normalization not in ("max", "density"):
        raise ValueError(f"unknown normalization {normalization!r}")
    n = z.shape[0]
    bins = default_bins(n) if bins is None else int(bins)
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    edges, heights = [], []
    for col in z.T:
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            edges.append(np.array([lo, lo + 1.0]))
            heights.append(np.ones(1))
            continue
        e = np.linspace(lo, hi, bins + 1)
        width = (hi - lo) / bins
        idx = np.clip(np.floor((col - lo) / width).astype(np.intp), 0, bins - 1)
        counts = np.bincount(idx, minlength=bins).astype(np.float64)
        h = counts / counts.max() if normalization == "max" else counts / (n * width)
        edges.append(e)
        heights.append(h)
    return HistogramModel(edges, heights, alpha, normalization)


@dataclass
class OodScores:
    scores: np.ndarray
    ranking: np.ndarray  # descending score, ties by ascending index


def rank_descending(scores: np.ndarray) -> np.ndarray:
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def score_ood(z: np.ndarray, model: HistogramModel) -> OodScores:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.d:
        raise ValueError(f"latent width {z.shape[-1]} does not match histogram model d={model.d}")
    p = model.density(z)
    scores = np.log(1.0 / (p + model.alpha)).sum(axis=1)
    return OodScores(scores, rank_descending(scores))


def remove_outliers(scores: OodScores | np.ndarray, tau: float) -> np.ndarray:
    """Ascending indices kept after dropping the ``ceil(tau% * N)`` top scorers."""
    if not 0 <= tau < 100:
        raise ValueError(f"tau must be in [0, 100), got {tau}")
    if not isinstance(scores, OodScores):
        s = np.asarray(scores, dtype=np.float64)
        scores = OodScores(s, rank_descending(s))
    n = len(scores.scores)
    n_drop = math.ceil(round(tau * n / 100.0, 9))
    keep = np.ones(n, dtype=bool)
    keep[scores.ranking[:n_drop]] = False
    return np.flatnonzero(keep)


def _sq_dist_to(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = z - c
    return np.einsum("ij,ij->i", diff, diff)


def kcenter_select(z: np.ndarray, k: int, seed: int | None = None, init: str = "centroid") -> tuple[np.ndarray, float]:
    """Greedy farthest-point selection of ``k`` rows.

    Returns the selected row indices in greedy order and the coverage radius
    ``max_z min_c ||z - c||``. ``init="random"`` starts from a seeded random row
    instead of the row farthest from the centroid.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if init == "centroid":
        first = int(np.argmax(_sq_dist_to(z, z.mean(axis=0))))
    elif init == "random":
        first = int(make_rng(0 if seed is None else seed, "kcenter-init").integers(n))
    else:
        raise ValueError(f"unknown init {init!r}")
    chosen = [first]
    mind = _sq_dist_to(z, z[first])
    taken = np.zeros(n, dtype=bool)
    taken[first] = True
    for _ in range(1, k):
        cand = np.where(taken, -np.inf, mind)
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        taken[nxt] = True
        np.minimum(mind, _sq_dist_to(z, z[nxt]), out=mind)
    return np.asarray(chosen, dtype=np.int64), float(math.sqrt(max(float(mind.max()), 0.0)))


def coverage_radius(z: np.ndarray, centers: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    mind = np.full(len(z), np.inf)
    for c in np.asarray(centers):
        np.minimum(mind, _sq_dist_to(z, z[c]), out=mind)
    return float(math.sqrt(mind.max()))


def random_select(indices, k: int, seed: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if not 0 <= k <= len(idx):
        raise ValueError(f"k must be in [0, {len(idx)}], got {k}")
    rng = make_rng(seed, "random-select")
    return idx[rng.permutation(len(idx))[:k]]


# PCA baseline -------------------------------------------------------------------


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (d, D), rows are unit eigenvectors
    explained_variance: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def fit_pca(x: np.ndarray, d: int, chunk: int = 512) -> PCAModel:
    """Top-``d`` principal axes from a chunked covariance accumulation.

    Each eigenvector's largest-magnitude entry is made positive.
    """
    n, dim = x.shape
    if not 1 <= d <= min(n, dim):
        raise ValueError(f"d must be in [1, {min(n, dim)}], got {d}")
    total = np.zeros(dim)
    for i in range(0, n, chunk):
        total += np.asarray(x[i : i + chunk], dtype=np.float64).sum(axis=0)
    mu = total / n
    cov = np.zeros((dim, dim))
    for i in range(0, n, chunk):
        xc = np.asarray(x[i : i + chunk], dtype=np.float64) - mu
        cov += xc.T @ xc
    cov /= max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:d]
    comps = vecs[:, order].T
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d), lead])
    comps *= signs[:, None]
    return PCAModel(mu, comps, np.maximum(vals[order], 0.0))


def pca_embed(segset, d: int) -> np.ndarray:
    segs = segset.segments if hasattr(segset, "segments") else np.asarray(segset)
    flat = segs.reshape(len(segs), -1)
    d = min(d, *flat.shape)
    return fit_pca(flat, d).transform(flat)


# end-to-end ---------------------------------------------------------------------


@dataclass
class SelectionManifest:
    dataset_id: str
    n: int
    kept_after_ood: list[int]
    selected: list[int]
    tau: float
    eta: float
    seed: int
    config_hash: str
    coverage_radius: float | None
    strategy: str = "proposed"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SelectionManifest":
        return cls(**json.loads(Path(path).read_text()))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def distill_dataset(
    latents: np.ndarray,
    tau: float = TAU,
    eta: float = 5.0,
    seed: int = 0,
    dataset_id: str = "dataset",
    bins: int | None = None,
    alpha: float = ALPHA,
    normalization: str = "max",
    init: str = "centroid",
    extra_config: dict | None = None,
) -> tuple[SelectionManifest, OodScores]:
    """Score, drop the top ``tau``% outliers, then k-center select ``eta``% of the rest."""
    if not 0 < eta <= 100:
        raise ValueError(f"eta must be in (0, 100], got {eta}")
    z = np.asarray(latents, dtype=np.float64)
    n = len(z)
    model = fit_histograms(z, bins, alpha, normalization)
    scores = score_ood(z, model)
    kept = remove_outliers(scores, tau)
    k = percent_count(eta, len(kept), minimum=1)
    if k == len(kept):
        # selecting everything: keep input order, nothing is left uncovered
        selected, radius = kept.copy(), 0.0
    else:
        order, radius = kcenter_select(z[kept], k, seed=seed, init=init)
        selected = kept[order]
    cfg = {"strategy": "proposed", "tau": tau, "eta": eta, "bins": default_bins(n) if bins is None else int(bins),
           "alpha": alpha, "normalization": normalization, "init": init, **(extra_config or {})}
    manifest = SelectionManifest(
        dataset_id=dataset_id,
        n=n,
        kept_after_ood=[int(i) for i in kept],
        selected=[int(i) for i in selected],
        tau=float(tau),
        eta=float(eta),
        seed=int(seed),
        config_hash=config_hash(cfg),
        coverage_radius=float(radius),
        strategy="proposed",
    )
    return manifest, scores


def random_manifest(n: int, eta: float, seed: int, dataset_id: str = "dataset", extra_config: dict | None = None) -> SelectionManifest:
    if not 0 < eta <= 100:
        raise ValueError(f"eta must be in (0, 100], got {eta}")
    k = percent_count(eta, n, minimum=1)
    sel = np.arange(n) if k == n else random_select(np.arange(n), k, seed)
    cfg = {"strategy": "random", "eta": eta, **(extra_config or {})}
    return SelectionManifest(dataset_id, n, list(range(n)), [int(i) for i in sel], 0.0, float(eta), int(seed),
                             config_hash(cfg), None, "random")


def write_scores_csv(scores: OodScores, path) -> None:
    rank = np.empty(len(scores.scores), dtype=np.int64)
    rank[scores.ranking] = np.arange(len(scores.scores))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "score", "rank"])
        for i, (s, r) in enumerate(zip(scores.scores, rank)):
            w.writerow([i, repr(float(s)), int(r)])
