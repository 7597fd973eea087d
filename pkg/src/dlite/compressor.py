"""Multi-view self-supervised autoencoder.

Each segment is turned into three patched views (potential, FFT magnitude,
FFT phase). A small convolutional encoder per view maps every patch to one
token; positional and view embeddings are added and a pre-norm transformer
encoder mixes the ``3 * P`` tokens. The segment latent is the mean of the
encoded tokens. A shallow transformer decoder plus per-view MLP heads
reconstructs every patch.

Training minimises ``rec + beta * idc`` where ``rec`` is the summed squared
patch error (averaged over the batch) and ``idc`` penalises cosine similarity
between the pooled input tokens of one segment and the pooled encoded tokens
of every other segment in the batch.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .optim import AdamState, adam_step, clip_grad_norm, lr_schedule
from .rng import make_rng
from .signal import MultiViewBatch, SegmentSet, make_views
from .tensor import Tensor

log = logging.getLogger(__name__)

CKPT_MAGIC = b"DLCKPT"
CKPT_VERSION = 1
LOG_COLUMNS = ("epoch", "lr", "loss_total", "loss_rec", "loss_idc")
N_VIEWS = 3


class ConfigError(ValueError):
    """Configuration is inconsistent with itself or with the data."""


class TrainingError(RuntimeError):
    """Optimisation diverged (non-finite loss or activations)."""


@dataclass
class CompressorConfig:
    d_latent: int = 64
    enc_layers: int = 6
    dec_layers: int = 2
    heads: int = 8
    num_patches: int = 20
    beta: float = 1e-4
    epochs: int = 50
    base_lr: float = 1e-3
    clip_norm: float = 5.0
    decay_every: int = 10
    decay_factor: float = 0.5
    batch_size: int = 32
    seed: int = 0
    conv_channels: int = 16
    conv_kernel: int = 7
    conv_stride: int = 2
    ffn_mult: int = 4
    # fixed from the training data by ``train``; 0 means "not yet known"
    channels: int = 0
    samples: int = 0

    def __post_init__(self):
        counts = ("d_latent", "enc_layers", "dec_layers", "heads", "num_patches", "epochs",
                  "batch_size", "conv_channels", "conv_kernel", "conv_stride", "ffn_mult", "decay_every")
        for name in counts:
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_latent % self.heads:
            raise ConfigError(f"d_latent={self.d_latent} not divisible by heads={self.heads}")
        if self.beta < 0 or self.base_lr <= 0 or self.clip_norm <= 0:
            raise ConfigError("beta must be >= 0, base_lr and clip_norm > 0")

    @property
    def patch_len(self) -> int:
        return self.samples // self.num_patches

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CompressorConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _conv_out(length: int, k: int, stride: int) -> int:
    pad = k // 2
    return (length + 2 * pad - k) // stride + 1


# functional building blocks ------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    y = T.matmul(x, w)
    bias = T.reshape(b, (1,) * (y.ndim - 1) + b.shape)
    return T.add(y, T.expand(bias, y.shape))


def _affine_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    h = T.layer_norm(x, axis=-1)
    shape = (1,) * (h.ndim - 1) + g.shape
    gg = T.expand(T.reshape(g, shape), h.shape)
    bb = T.expand(T.reshape(b, shape), h.shape)
    return T.add(T.mul(h, gg), bb)


def _mlp2(x: Tensor, p: dict, prefix: str) -> Tensor:
    h = T.gelu(_linear(x, p[prefix + ".w1"], p[prefix + ".b1"]))
    return _linear(h, p[prefix + ".w2"], p[prefix + ".b2"])


def _attention(x: Tensor, p: dict, prefix: str, heads: int) -> Tensor:
    b, s, d = x.shape
    dh = d // heads

    def split(t):
        return T.transpose(T.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    q = split(_linear(x, p[prefix + ".wq"], p[prefix + ".bq"]))
    k = split(_linear(x, p[prefix + ".wk"], p[prefix + ".bk"]))
    v = split(_linear(x, p[prefix + ".wv"], p[prefix + ".bv"]))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = T.matmul(T.softmax(scores, axis=-1), v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, s, d))
    return _linear(ctx, p[prefix + ".wo"], p[prefix + ".bo"])


def _block(x: Tensor, p: dict, prefix: str, heads: int) -> Tensor:
    x = T.add(x, _attention(_affine_norm(x, p[prefix + ".ln1.g"], p[prefix + ".ln1.b"]), p, prefix + ".attn", heads))
    h = _affine_norm(x, p[prefix + ".ln2.g"], p[prefix + ".ln2.b"])
    return T.add(x, _mlp2(h, p, prefix + ".ffn"))


def idc_from_projections(a: Tensor, b: Tensor) -> Tensor:
    """``log sum_{i != j} exp(cos(a_i, b_j)) / (B (B - 1))`` for rows of ``a`` and ``b``."""
    n = a.shape[0]
    if n < 2:
        raise ValueError("inter-instance term needs a batch of at least 2")
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    sims = T.cosine_similarity(T.take(a, ii, axis=0), T.take(b, jj, axis=0), axis=-1)
    return T.scale(T.log_sum_exp(sims), 1.0 / (n * (n - 1)))


def loss_rec(recon: Tensor, target) -> Tensor:
    """Squared error summed over every patch element, averaged over the batch."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=recon.dtype))
    diff = T.sub(recon, target)
    return T.scale(T.sum(T.square(diff)), 1.0 / recon.shape[0])


# model ------------------------------------------------------------------------


class Compressor:
    """Parameters plus forward passes; all state lives in ``self.params``."""

    def __init__(self, config: CompressorConfig, dtype=np.float32, rng: np.random.Generator | None = None):
        if config.channels <= 0 or config.samples <= 0:
            raise ConfigError("config.channels and config.samples must be set before building a model")
        if config.samples % config.num_patches:
            raise ConfigError(f"samples={config.samples} not divisible by num_patches={config.num_patches}")
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._init_params(rng if rng is not None else make_rng(config.seed, "init"))

    # parameters ---------------------------------------------------------------

    def _add(self, name, shape, rng, kind="fan_in", fan_in=None):
        if kind == "ones":
            arr = np.ones(shape)
        elif kind == "zeros":
            arr = np.zeros(shape)
        else:
            bound = 0.02 if kind == "embed" else 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        self.params[name] = Tensor(arr.astype(self.dtype), requires_grad=True)

    def _add_linear(self, prefix, n_in, n_out, rng, w="w", b="b"):
        self._add(f"{prefix}.{w}", (n_in, n_out), rng, fan_in=n_in)
        self._add(f"{prefix}.{b}", (n_out,), rng, fan_in=n_in)

    def _add_block(self, prefix, rng):
        cfg = self.config
        d = cfg.d_latent
        for ln in ("ln1", "ln2"):
            self._add(f"{prefix}.{ln}.g", (d,), rng, "ones")
            self._add(f"{prefix}.{ln}.b", (d,), rng, "zeros")
        for proj in "qkvo":
            self._add_linear(f"{prefix}.attn", d, d, rng, w=f"w{proj}", b=f"b{proj}")
        self._add_linear(f"{prefix}.ffn", d, cfg.ffn_mult * d, rng, w="w1", b="b1")
        self._add_linear(f"{prefix}.ffn", cfg.ffn_mult * d, d, rng, w="w2", b="b2")

    def _init_params(self, rng):
        cfg = self.config
        d, f, k = cfg.d_latent, cfg.conv_channels, cfg.conv_kernel
        l1 = _conv_out(cfg.patch_len, k, cfg.conv_stride)
        l2 = _conv_out(l1, k, cfg.conv_stride)
        for view in MultiViewBatch.VIEWS:
            pre = f"patch.{view}"
            self._add(f"{pre}.conv1.w", (f, 1, k), rng, fan_in=k)
            self._add(f"{pre}.conv1.b", (f,), rng, fan_in=k)
            self._add(f"{pre}.conv2.w", (f, f, k), rng, fan_in=f * k)
            self._add(f"{pre}.conv2.b", (f,), rng, fan_in=f * k)
            self._add_linear(f"{pre}.proj", f * l2, d, rng)
        self._add("embed.pos", (cfg.num_patches, d), rng, "embed")
        self._add("embed.view", (N_VIEWS, d), rng, "embed")
        for i in range(cfg.enc_layers):
            self._add_block(f"enc.{i}", rng)
        self._add("enc.ln.g", (d,), rng, "ones")
        self._add("enc.ln.b", (d,), rng, "zeros")
        for i in range(cfg.dec_layers):
            self._add_block(f"dec.{i}", rng)
        out = cfg.channels * cfg.patch_len
        for view in MultiViewBatch.VIEWS:
            self._add_linear(f"head.{view}", d, d, rng, w="w1", b="b1")
            self._add_linear(f"head.{view}", d, out, rng, w="w2", b="b2")
        for g in ("g1", "g2"):
            self._add_linear(f"proj.{g}", d, d, rng, w="w1", b="b1")
            self._add_linear(f"proj.{g}", d, d, rng, w="w2", b="b2")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # forward ----------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> None:
        cfg = self.config
        want = (N_VIEWS, cfg.channels, cfg.num_patches, cfg.patch_len)
        if x.ndim != 5 or x.shape[1:] != want:
            raise T.DimensionError(f"expected views of shape (B, {', '.join(map(str, want))}), got {x.shape}")

    def encode_patches(self, views) -> Tensor:
        """(B, 3, C, P, T_W) normalised views -> (B, 3P, d) tokens with embeddings added."""
        x = views.stacked() if isinstance(views, MultiViewBatch) else np.asarray(views)
        self._check_input(x)
        x = x.astype(self.dtype, copy=False)
        cfg, p = self.config, self.params
        b, _, c, n_p, tw = x.shape
        d = cfg.d_latent
        pad = cfg.conv_kernel // 2
        per_view = []
        for v, view in enumerate(MultiViewBatch.VIEWS):
            pre = f"patch.{view}"
            h = Tensor(x[:, v].reshape(b * c * n_p, 1, tw))
            for conv in ("conv1", "conv2"):
                h = T.conv1d(h, p[f"{pre}.{conv}.w"], stride=cfg.conv_stride, pad=pad)
                bias = T.expand(T.reshape(p[f"{pre}.{conv}.b"], (1, -1, 1)), h.shape)
                h = T.gelu(T.add(h, bias))
            h = T.reshape(h, (b * c * n_p, -1))
            tok = _linear(h, p[f"{pre}.proj.w"], p[f"{pre}.proj.b"])
            per_view.append(T.mean(T.reshape(tok, (b, c, n_p, d)), axis=1))
        tokens = T.concat(per_view, axis=1)  # (B, 3P, d)
        pos = T.concat([p["embed.pos"]] * N_VIEWS, axis=0)
        vid = T.take(p["embed.view"], np.repeat(np.arange(N_VIEWS), n_p), axis=0)
        emb = T.reshape(T.add(pos, vid), (1, N_VIEWS * n_p, d))
        return T.add(tokens, T.expand(emb, tokens.shape))

    def encode(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        """Tokens (B, S, d) -> (latent (B, d), encoded tokens (B, S, d))."""
        h = tokens
        for i in range(self.config.enc_layers):
            h = _block(h, self.params, f"enc.{i}", self.config.heads)
        h = _affine_norm(h, self.params["enc.ln.g"], self.params["enc.ln.b"])
        return T.mean(h, axis=1), h

    def decode(self, encoded: Tensor) -> Tensor:
        """Encoded tokens (B, 3P, d) -> reconstruction (B, 3, C, P, T_W)."""
        cfg = self.config
        b = encoded.shape[0]
        n_p, c, tw = cfg.num_patches, cfg.channels, cfg.patch_len
        h = encoded
        for i in range(cfg.dec_layers):
            h = _block(h, self.params, f"dec.{i}", cfg.heads)
        outs = []
        for v, view in enumerate(MultiViewBatch.VIEWS):
            hv = T.take(h, np.arange(v * n_p, (v + 1) * n_p), axis=1)
            y = _mlp2(hv, self.params, f"head.{view}")  # (B, P, C*T_W)
            y = T.transpose(T.reshape(y, (b, n_p, c, tw)), (0, 2, 1, 3))
            outs.append(T.reshape(y, (b, 1, c, n_p, tw)))
        return T.concat(outs, axis=1)

    def project(self, z_pre: Tensor, z_post: Tensor) -> tuple[Tensor, Tensor]:
        return _mlp2(z_pre, self.params, "proj.g1"), _mlp2(z_post, self.params, "proj.g2")

    def losses(self, views) -> dict[str, Tensor]:
        x = views.stacked() if isinstance(views, MultiViewBatch) else np.asarray(views)
        tokens = self.encode_patches(x)
        z, encoded = self.encode(tokens)
        recon = self.decode(encoded)
        rec = loss_rec(recon, x.astype(self.dtype, copy=False))
        if x.shape[0] >= 2:
            a, b = self.project(T.mean(tokens, axis=1), z)
            idc = idc_from_projections(a, b)
        else:
            idc = Tensor(np.zeros((), dtype=self.dtype))
        total = T.add(rec, T.scale(idc, self.config.beta)) if self.config.beta else rec
        return {"total": total, "rec": rec, "idc": idc, "z": z, "recon": recon}

    def latents(self, views) -> np.ndarray:
        with T.no_grad():
            z, _ = self.encode(self.encode_patches(views))
        return z.data


# training ---------------------------------------------------------------------


def prepare_views(segset: SegmentSet | np.ndarray, num_patches: int, chunk: int = 256) -> np.ndarray:
    """Normalised, patched views for every segment as one (N, 3, C, P, T_W) float32 array."""
    segs = segset.segments if isinstance(segset, SegmentSet) else np.asarray(segset)
    parts = [make_views(segs[i : i + chunk], num_patches).stacked() for i in range(0, len(segs), chunk)]
    return np.concatenate(parts, axis=0)


def batch_slices(n: int, batch_size: int) -> list[int]:
    """Batch sizes for ``n`` items: ``ceil(n / batch_size)`` near-equal batches."""
    nb = max(1, math.ceil(n / batch_size))
    return [len(a) for a in np.array_split(np.arange(n), nb)]


def train(
    segset: SegmentSet | list[SegmentSet],
    config: CompressorConfig,
    log_path=None,
    on_epoch: Callable[[dict], None] | None = None,
    views: np.ndarray | None = None,
) -> tuple[Compressor, list[dict]]:
    """Fit a compressor on one or more segment sets; returns the model and per-epoch log rows."""
    sets = segset if isinstance(segset, (list, tuple)) else [segset]
    shapes = {(s.channels, s.samples) for s in sets}
    if len(shapes) != 1:
        raise ConfigError(f"segment sets disagree on (channels, samples): {sorted(shapes)}")
    c, t = shapes.pop()
    cfg = CompressorConfig.from_dict({**asdict(config), "channels": c, "samples": t})
    n = sum(len(s) for s in sets)
    if n < 2 or cfg.batch_size < 2 or n < cfg.batch_size:
        raise ConfigError(f"training needs N >= batch_size >= 2 (N={n}, batch_size={cfg.batch_size})")
    if views is None:
        views = np.concatenate([prepare_views(s, cfg.num_patches) for s in sets], axis=0)
    model = Compressor(cfg)
    params = model.parameters()
    state = AdamState(lr=cfg.base_lr)
    shuffle = make_rng(cfg.seed, "train")
    sizes = batch_slices(n, cfg.batch_size)
    rows = []
    for epoch in range(cfg.epochs):
        state.lr = lr_schedule(epoch, cfg.base_lr, cfg.decay_every, cfg.decay_factor)
        order = shuffle.permutation(n)
        sums = np.zeros(3)
        start = 0
        for bi, size in enumerate(sizes):
            idx = order[start : start + size]
            start += size
            model.zero_grad()
            try:
                out = model.losses(views[idx])
                loss = out["total"]
                loss.backward()
            except T.NumericError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {bi}: {exc}") from exc
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            clip_grad_norm(grads, cfg.clip_norm)
            adam_step(params, state, grads)
            sums += (loss.item(), out["rec"].item(), out["idc"].item())
        means = sums / len(sizes)
        row = {"epoch": epoch, "lr": state.lr, "loss_total": means[0], "loss_rec": means[1], "loss_idc": means[2]}
        rows.append(row)
        log.info("epoch %d lr %.6g total %.6g rec %.6g idc %.6g", epoch, state.lr, *means)
        if on_epoch is not None:
            on_epoch(row)
    if log_path is not None:
        write_training_log(rows, log_path)
    return model, rows


def write_training_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"], repr(float(r["lr"]))] + [repr(float(r[k])) for k in LOG_COLUMNS[2:]])


def evaluate_rec(model: Compressor, views: np.ndarray, batch_size: int = 64) -> float:
    """Mean per-segment reconstruction loss over ``views`` without recording gradients."""
    total = 0.0
    with T.no_grad():
        for i in range(0, len(views), batch_size):
            chunk = views[i : i + batch_size]
            _, enc = model.encode(model.encode_patches(chunk))
            total += loss_rec(model.decode(enc), chunk.astype(model.dtype)).item() * len(chunk)
    return total / len(views)


def encode_dataset(segset: SegmentSet, model: Compressor, batch_size: int = 64) -> np.ndarray:
    """Latent matrix (N, d) with row i belonging to segment i."""
    cfg = model.config
    if (segset.channels, segset.samples) != (cfg.channels, cfg.samples):
        raise ConfigError(
            f"dataset {segset.dataset_id} has (C, T)=({segset.channels}, {segset.samples}); "
            f"checkpoint expects ({cfg.channels}, {cfg.samples})"
        )
    out = np.empty((len(segset), cfg.d_latent), dtype=np.float32)
    for i in range(0, len(segset), batch_size):
        views = prepare_views(segset.segments[i : i + batch_size], cfg.num_patches)
        out[i : i + len(views)] = model.latents(views)
    return out


# checkpoints ------------------------------------------------------------------


def checkpoint_bytes(model: Compressor) -> bytes:
    buf = io.BytesIO()
    cfg = model.config.to_json().encode()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<HI", CKPT_VERSION, len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(p.data.astype("<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Compressor, path) -> str:
    """Write the checkpoint; returns its sha256."""
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Compressor:
    raw = Path(path).read_bytes()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ConfigError(f"{path}: not a compressor checkpoint")
    off = len(CKPT_MAGIC)
    version, clen = struct.unpack_from("<HI", raw, off)
    if version != CKPT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    off += 6
    cfg = CompressorConfig.from_dict(json.loads(raw[off : off + clen]))
    off += clen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    model = Compressor(cfg)
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if name not in model.params or model.params[name].shape != tuple(shape):
            raise ConfigError(f"{path}: parameter {name} {tuple(shape)} does not fit the model config")
        model.params[name].data = arr.astype(np.float32)
    if count != len(model.params):
        raise ConfigError(f"{path}: {count} parameters stored, model has {len(model.params)}")
    return model
