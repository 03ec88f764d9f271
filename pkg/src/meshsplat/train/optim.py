"""Adam over engine tensors, with named per-group learning rates."""

from __future__ import annotations

import numpy as np

from .engine import Tensor

DEFAULT_LRS = {
    "attributes": 1e-3,
    "mlp": 5e-4,
    "embeddings": 1e-3,
    "blend": 1e-3,
}


class Adam:
    """Adam with decoupled per-group weight decay and optional sparse-row
    semantics.

    Groups named in ``sparse_rows`` (embedding tables indexed by frame)
    update only rows whose gradient is nonzero this step; dense Adam
    would keep pushing every row from stale momentum, multiplying each
    row's few visits several-fold.
    """

    def __init__(self, groups: dict[str, list[Tensor]], lrs: dict[str, float] | None = None,
                 weight_decay: dict[str, float] | None = None,
                 sparse_rows: tuple = ("embeddings",),
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = groups
        self.lrs = dict(DEFAULT_LRS)
        if lrs:
            self.lrs.update(lrs)
        self.weight_decay = dict(weight_decay or {})
        self.sparse_rows = set(sparse_rows)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}
        self.row_t = {}
        for name, params in groups.items():
            for i, p in enumerate(params):
                self.m[(name, i)] = np.zeros_like(p.data)
                self.v[(name, i)] = np.zeros_like(p.data)
                if name in self.sparse_rows and p.data.ndim >= 1:
                    self.row_t[(name, i)] = np.zeros(p.data.shape[0], dtype=np.int64)

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for p in params:
                p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, params in self.groups.items():
            lr = self.lrs.get(name, 1e-3)
            wd = self.weight_decay.get(name, 0.0)
            sparse = name in self.sparse_rows
            for i, p in enumerate(params):
                if p.grad is None:
                    continue
                g = p.grad.astype(p.data.dtype)
                m = self.m[(name, i)]
                v = self.v[(name, i)]
                if sparse and (name, i) in self.row_t:
                    rows = np.nonzero(np.any(g.reshape(g.shape[0], -1) != 0, axis=1))[0]
                    if rows.size == 0:
                        continue
                    rt = self.row_t[(name, i)]
                    rt[rows] += 1
                    m[rows] = b1 * m[rows] + (1.0 - b1) * g[rows]
                    v[rows] = b2 * v[rows] + (1.0 - b2) * g[rows] * g[rows]
                    cr1 = (1.0 - b1 ** rt[rows]).reshape((-1,) + (1,) * (g.ndim - 1))
                    cr2 = (1.0 - b2 ** rt[rows]).reshape((-1,) + (1,) * (g.ndim - 1))
                    upd = lr * (m[rows] / cr1) / (np.sqrt(v[rows] / cr2) + self.eps)
                    new_rows = p.data[rows] - upd
                    if wd:
                        new_rows = new_rows * (1.0 - lr * wd)
                    out = p.data.copy()
                    out[rows] = new_rows
                    p.data = out
                    continue
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                if wd:
                    p.data = p.data * (1.0 - lr * wd)
