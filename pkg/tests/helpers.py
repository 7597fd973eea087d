"""Finite-difference oracle shared by the gradient tests."""

import numpy as np

from dlite import tensor as T
from dlite.tensor import Tensor


def numeric_grad(f, arrays, h=1e-3):
    """Central differences of scalar ``f(*arrays)`` w.r.t. each array (float64)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(*arrays)
            a[i] = old - h
            fm = f(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_op(op, *shapes, seed=0, positive=False, h=1e-3, **kwargs):
    """Gradient check of ``sum(op(*inputs) * R)`` for a fixed random weighting ``R``.

    Returns the worst relative error over all inputs.
    """
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]
    probe = op(*[Tensor(a) for a in arrays], **kwargs)
    weights = rng.standard_normal(probe.shape)

    def f(*arrs):
        out = op(*[Tensor(a) for a in arrs], **kwargs)
        return float((out.data * weights).sum())

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*ts, **kwargs)
    loss = T.sum(T.mul(out, Tensor(weights)))
    loss.backward()
    num = numeric_grad(f, arrays, h)
    return max(max_rel_err(t.grad, n) for t, n in zip(ts, num))


# op -> (callable, input shapes, kwargs) for the per-op gradient checks
OP_CASES = {
    "add": (T.add, [(3, 4), (3, 4)], {}),
    "sub": (T.sub, [(3, 4), (3, 4)], {}),
    "mul": (T.mul, [(2, 3, 4), (2, 3, 4)], {}),
    "scale": (lambda a: T.scale(a, -1.7), [(5,)], {}),
    "square": (T.square, [(4, 3)], {}),
    "gelu": (T.gelu, [(6, 5)], {}),
    "reshape": (lambda a: T.reshape(a, (6, 2)), [(3, 4)], {}),
    "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)], {}),
    "expand": (lambda a: T.expand(a, (3, 4, 5)), [(3, 1, 5)], {}),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 5)], {}),
    "take": (lambda a: T.take(a, [0, 2, 2, 1], axis=1), [(3, 4, 2)], {}),
    "sum_all": (T.sum, [(3, 4)], {}),
    "sum_axis": (lambda a: T.sum(a, axis=1), [(3, 4, 2)], {}),
    "mean_axis": (lambda a: T.mean(a, axis=0), [(5, 3)], {}),
    "mean_all": (T.mean, [(4, 4)], {}),
    "log_sum_exp": (lambda a: T.log_sum_exp(a, axis=-1), [(3, 6)], {}),
    "log_sum_exp_all": (T.log_sum_exp, [(7,)], {}),
    "matmul_shared": (T.matmul, [(2, 3, 4), (4, 5)], {}),
    "matmul_batched": (T.matmul, [(2, 3, 4, 5), (2, 3, 5, 2)], {}),
    "softmax": (lambda a: T.softmax(a, axis=-1), [(3, 5)], {}),
    "softmax_axis0": (lambda a: T.softmax(a, axis=0), [(4, 3)], {}),
    "layer_norm": (lambda a: T.layer_norm(a, axis=-1), [(3, 6)], {}),
    "cosine_similarity": (lambda a, b: T.cosine_similarity(a, b, axis=-1), [(4, 5), (4, 5)], {}),
    "mse": (T.mse, [(3, 4), (3, 4)], {}),
    "conv1d": (lambda x, w: T.conv1d(x, w, stride=2, pad=3), [(2, 3, 8), (4, 3, 7)], {}),
    "conv1d_nopad": (lambda x, w: T.conv1d(x, w, stride=1, pad=0), [(2, 2, 7), (3, 2, 3)], {}),
}
