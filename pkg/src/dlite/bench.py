"""Desk-scale downstream proxy comparing selection strategies on synthetic data.

One compressor is trained on the whole unlabeled corpus. For each seed the
corpus is split into a selection pool and a clean held-out test set; every
strategy picks ``eta``% of the pool from unlabeled vectors only, and a seeded
multinomial logistic regression trained on the picked latents (with their
hidden labels) is scored on the test set.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from .compressor import CompressorConfig, encode_dataset, train
from .distill import (
    coverage_radius,
    config_hash,
    distill_dataset,
    fit_histograms,
    pca_embed,
    percent_count,
    random_select,
    remove_outliers,
    score_ood,
)
from .rng import make_rng
from .synth import SynthSpec, generate

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("strategy", "eta", "seed", "accuracy", "coverage_radius", "ood_recall", "config_hash")
ETAS = (1.0, 5.0, 10.0, 25.0)


def default_synth() -> SynthSpec:
    # 5,000 one-second segments, skewed class mix, label-relevant structure not saturated
    return SynthSpec(n_subjects=50, segments_per_subject=100, samples=200, drift=0.2, noise=1.0,
                     class_weights=(0.5, 0.3, 0.15, 0.05))


def default_compressor() -> CompressorConfig:
    # reduced depth and epochs so the whole benchmark fits a laptop CPU budget
    return CompressorConfig(enc_layers=2, dec_layers=1, heads=4, epochs=12, batch_size=64)


@dataclass
class BenchConfig:
    synth: SynthSpec = field(default_factory=default_synth)
    compressor: CompressorConfig = field(default_factory=default_compressor)
    etas: tuple[float, ...] = ETAS
    strategies: tuple[str, ...] = ("proposed", "random", "pca_ds")
    tau: float | None = None  # percent; None -> rho expressed in percent
    test_fraction: float = 0.2
    seed: int = 0

    @property
    def tau_pct(self) -> float:
        return 100.0 * self.synth.rho if self.tau is None else float(self.tau)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        d = dict(d)
        synth = SynthSpec.from_dict({**asdict(default_synth()), **d.pop("synth", {})})
        comp = CompressorConfig.from_dict({**asdict(default_compressor()), **d.pop("compressor", {})})
        for key in ("etas", "strategies"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(synth=synth, compressor=comp, **d)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def eval_outlier_recovery(scores: np.ndarray, flags: np.ndarray, tau: float) -> tuple[float, float]:
    """(precision, recall) of the flagged rows among the top ``tau``% scores."""
    flags = np.asarray(flags, dtype=bool)
    kept = remove_outliers(np.asarray(scores), tau)
    removed = np.setdiff1d(np.arange(len(flags)), kept)
    hits = int(flags[removed].sum())
    precision = hits / len(removed) if len(removed) else float("nan")
    recall = hits / int(flags.sum()) if flags.any() else float("nan")
    return precision, recall


def proxy_accuracy(z_train: np.ndarray, y_train: np.ndarray, z_test: np.ndarray, y_test: np.ndarray, seed: int) -> float:
    classes = np.unique(y_train)
    if len(classes) == 1:
        return float(np.mean(y_test == classes[0]))
    scaler = StandardScaler().fit(z_train)
    clf = LogisticRegression(max_iter=2000, random_state=seed % (2**32))
    clf.fit(scaler.transform(z_train), y_train)
    return float(clf.score(scaler.transform(z_test), y_test))


def split_pool(n: int, flags: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Pool and clean test indices (both ascending)."""
    perm = make_rng(seed, "split").permutation(n)
    n_test = int(round(test_fraction * n))
    test = np.sort(perm[:n_test])
    pool = np.sort(perm[n_test:])
    return pool, test[~flags[test]]


def run_benchmark(cfg: BenchConfig, seeds: int = 5, progress=None) -> list[dict]:
    t0 = time.time()
    data = generate(cfg.synth)
    comp = CompressorConfig.from_dict({**asdict(cfg.compressor), "seed": cfg.seed})
    model, _ = train(data.segset, comp)
    z = encode_dataset(data.segset, model).astype(np.float64)
    log.info("compressor trained and encoded in %.1fs", time.time() - t0)
    zp = pca_embed(data.segset, comp.d_latent) if "pca_ds" in cfg.strategies else None
    tau = cfg.tau_pct
    chash = cfg.hash()
    rows = []
    for s in range(seeds):
        seed = cfg.seed + s
        pool, test = split_pool(len(z), data.outlier_flags, cfg.test_fraction, seed)
        hist = fit_histograms(z[pool])
        pool_scores = score_ood(z[pool], hist).scores
        _, recall = eval_outlier_recovery(pool_scores, data.outlier_flags[pool], tau)
        kept = pool[remove_outliers(pool_scores, tau)]
        for eta in cfg.etas:
            for strategy in cfg.strategies:
                if strategy == "proposed":
                    man, _ = distill_dataset(z[pool], tau, eta, seed)
                    sel = pool[man.selected]
                    rec = recall
                elif strategy == "pca_ds":
                    man, sc = distill_dataset(zp[pool], tau, eta, seed)
                    sel = pool[man.selected]
                    rec = eval_outlier_recovery(sc.scores, data.outlier_flags[pool], tau)[1]
                elif strategy == "random":
                    k = percent_count(eta, len(pool), minimum=1)
                    sel = pool if k == len(pool) else random_select(pool, k, seed)
                    rec = float("nan")
                else:
                    raise ValueError(f"unknown strategy {strategy!r}")
                acc = proxy_accuracy(z[sel], data.labels[sel], z[test], data.labels[test], seed)
                radius = _radius_over(z, kept, sel)
                rows.append({"strategy": strategy, "eta": float(eta), "seed": seed, "accuracy": acc,
                             "coverage_radius": radius, "ood_recall": rec, "config_hash": chash})
                if progress is not None:
                    progress(rows[-1])
    log.info("benchmark finished in %.1fs", time.time() - t0)
    return rows


def _radius_over(z: np.ndarray, points: np.ndarray, centers: np.ndarray) -> float:
    """max over ``points`` of the distance to the nearest row in ``centers``."""
    zc = z[centers]
    best = np.full(len(points), np.inf)
    for c in zc:
        d = z[points] - c
        np.minimum(best, np.einsum("ij,ij->i", d, d), out=best)
    return float(np.sqrt(best.max()))


def write_results(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def summarize(rows: list[dict]) -> dict[tuple[str, float], dict[str, float]]:
    """Mean and std of accuracy and coverage radius per (strategy, eta)."""
    out = {}
    keys = sorted({(r["strategy"], r["eta"]) for r in rows})
    for key in keys:
        acc = np.array([r["accuracy"] for r in rows if (r["strategy"], r["eta"]) == key])
        rad = np.array([r["coverage_radius"] for r in rows if (r["strategy"], r["eta"]) == key])
        out[key] = {"acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
                    "radius_mean": float(rad.mean()), "radius_std": float(rad.std()), "n": len(acc)}
    return out


def load_bench_config(path) -> BenchConfig:
    with open(path) as fh:
        return BenchConfig.from_dict(json.load(fh))
