"""Pure numpy/scipy backend for the sparse tensor-product kernels."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _scatter(prog, name: str) -> sp.csr_matrix:
    # nnz x dim one-hot matrix sending each coordinate-list entry to its target index
    cache = prog._scatter
    if name not in cache:
        idx, dim = {
            "out": (prog.idx_out, prog.dim_out),
            "in": (prog.idx_in, prog.dim_in),
            "filter": (prog.idx_filter, prog.dim_filter),
            "path": (prog.path, prog.num_weights),
        }[name]
        n = len(idx)
        cache[name] = sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, dim))
    return cache[name]


def _apply(dense: np.ndarray, scatter: sp.csr_matrix) -> np.ndarray:
    return np.asarray((scatter.T @ dense.T).T)


def tp_forward(prog, x, y, w):
    if len(prog.coef) == 0:
        return np.zeros((x.shape[0], prog.dim_out))
    contrib = w[:, prog.path] * (prog.coef * x[:, prog.idx_in] * y[:, prog.idx_filter])
    return _apply(contrib, _scatter(prog, "out"))


def tp_backward(prog, g, x, y, w):
    n = x.shape[0]
    if len(prog.coef) == 0:
        return np.zeros_like(x), np.zeros_like(y), np.zeros((n, prog.num_weights))
    gc = g[:, prog.idx_out] * prog.coef
    xi = x[:, prog.idx_in]
    yf = y[:, prog.idx_filter]
    wk = w[:, prog.path]
    gx = _apply(gc * wk * yf, _scatter(prog, "in"))
    gy = _apply(gc * wk * xi, _scatter(prog, "filter"))
    gw = _apply(gc * xi * yf, _scatter(prog, "path"))
    return gx, gy, gw
