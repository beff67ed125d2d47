"""Hot numeric kernels: all-pairs shortest paths and grid distance fields.

Both kernels have a numba-jitted implementation and a vectorized numpy
fallback.  The jitted path is used when numba imports cleanly and the
environment variable SORB_NO_NUMBA is unset/empty; the two paths are
kept exactly equivalent (same operation order per k-pass, so results
are bitwise identical) and the test suite checks that.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


USE_NUMBA = NUMBA_AVAILABLE and not os.environ.get("SORB_NO_NUMBA")


def numba_enabled() -> bool:
    """True when the jitted kernels are selected at import time."""
    return USE_NUMBA


def _floyd_warshall_numpy(dist: np.ndarray, succ: np.ndarray) -> None:
    n = dist.shape[0]
    # Row k and column k are fixed points within pass k, so the vectorized
    # pass performs the same updates as the scalar triple loop.
    for k in range(n):
        alt = dist[:, k, None] + dist[None, k, :]
        better = alt < dist
        dist[better] = alt[better]
        succ_k = np.broadcast_to(succ[:, k, None], succ.shape)
        succ[better] = succ_k[better]


@njit(cache=True)
def _floyd_warshall_numba(dist, succ):  # pragma: no cover - compiled
    n = dist.shape[0]
    for k in range(n):
        for i in range(n):
            dik = dist[i, k]
            if dik == np.inf:
                continue
            for j in range(n):
                alt = dik + dist[k, j]
                if alt < dist[i, j]:
                    dist[i, j] = alt
                    succ[i, j] = succ[i, k]


def floyd_warshall(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs shortest paths over a dense weight matrix.

    weights[i, j] is the direct edge weight (np.inf where there is no
    edge).  Returns (dist, succ) where succ[i, j] is the node that
    follows i on a shortest i->j path, or -1 when j is unreachable.
    Self-distances are forced to 0 with succ[i, i] = i.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be square, got {w.shape}")
    if np.any(w[np.isfinite(w)] < 0):
        raise ValueError("edge weights must be non-negative")
    n = w.shape[0]
    dist = w.copy()
    np.fill_diagonal(dist, 0.0)
    succ = np.full((n, n), -1, dtype=np.int32)
    jj = np.arange(n, dtype=np.int32)
    finite = np.isfinite(dist)
    succ[finite] = np.broadcast_to(jj, (n, n))[finite]
    np.fill_diagonal(succ, jj)
    if USE_NUMBA:
        _floyd_warshall_numba(dist, succ)
    else:
        _floyd_warshall_numpy(dist, succ)
    return dist, succ


def _bfs_field_numpy(walls: np.ndarray, sx: int, sy: int) -> np.ndarray:
    h, w = walls.shape
    field = np.full((h, w), -1, dtype=np.int32)
    if walls[sy, sx]:
        return field
    frontier = np.zeros((h, w), dtype=np.bool_)
    frontier[sy, sx] = True
    free = ~walls
    d = 0
    while frontier.any():
        field[frontier] = d
        nxt = np.zeros((h, w), dtype=np.bool_)
        nxt[1:, :] |= frontier[:-1, :]
        nxt[:-1, :] |= frontier[1:, :]
        nxt[:, 1:] |= frontier[:, :-1]
        nxt[:, :-1] |= frontier[:, 1:]
        frontier = nxt & free & (field < 0)
        d += 1
    return field


@njit(cache=True)
def _bfs_field_numba(walls, sx, sy):  # pragma: no cover - compiled
    h, w = walls.shape
    field = np.full((h, w), -1, dtype=np.int32)
    if walls[sy, sx]:
        return field
    qx = np.empty(h * w, dtype=np.int32)
    qy = np.empty(h * w, dtype=np.int32)
    qx[0] = sx
    qy[0] = sy
    field[sy, sx] = 0
    head = 0
    tail = 1
    while head < tail:
        x = qx[head]
        y = qy[head]
        head += 1
        d = field[y, x] + 1
        if y > 0 and not walls[y - 1, x] and field[y - 1, x] < 0:
            field[y - 1, x] = d
            qx[tail] = x
            qy[tail] = y - 1
            tail += 1
        if y < h - 1 and not walls[y + 1, x] and field[y + 1, x] < 0:
            field[y + 1, x] = d
            qx[tail] = x
            qy[tail] = y + 1
            tail += 1
        if x > 0 and not walls[y, x - 1] and field[y, x - 1] < 0:
            field[y, x - 1] = d
            qx[tail] = x - 1
            qy[tail] = y
            tail += 1
        if x < w - 1 and not walls[y, x + 1] and field[y, x + 1] < 0:
            field[y, x + 1] = d
            qx[tail] = x + 1
            qy[tail] = y
            tail += 1
    return field


def bfs_distance_field(walls: np.ndarray, sx: int, sy: int) -> np.ndarray:
    """Step counts from (sx, sy) to every free cell; -1 where unreachable."""
    walls = np.ascontiguousarray(walls, dtype=np.bool_)
    h, w = walls.shape
    if not (0 <= sx < w and 0 <= sy < h):
        raise ValueError(f"source ({sx}, {sy}) outside {w}x{h} grid")
    if USE_NUMBA:
        return _bfs_field_numba(walls, int(sx), int(sy))
    return _bfs_field_numpy(walls, int(sx), int(sy))
