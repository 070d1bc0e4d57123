"""Compiled kernels for hot search loops, with numpy fallbacks."""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a normal install here
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True, fastmath=False)
def _euclid_objective_impl(flat, dom_dist, probes, radius, m, n):
    pts = np.empty((m, n))
    for i in range(m):
        s = 0.0
        for j in range(n):
            v = flat[i * n + j]
            pts[i, j] = v
            s += v * v
        s = np.sqrt(s)
        if s > radius:
            f = radius / s
            for j in range(n):
                pts[i, j] *= f
    iso = 0.0
    for i in range(m):
        for k in range(i + 1, m):
            s = 0.0
            for j in range(n):
                d = pts[i, j] - pts[k, j]
                s += d * d
            dev = abs(np.sqrt(s) - dom_dist[i, k])
            if dev > iso:
                iso = dev
    dens = 0.0
    for p in range(probes.shape[0]):
        best = 1e300
        for i in range(m):
            s = 0.0
            for j in range(n):
                d = probes[p, j] - pts[i, j]
                s += d * d
            if s < best:
                best = s
        best = np.sqrt(best)
        if best > dens:
            dens = best
    return iso + dens


def euclid_placement_objective(
    flat: np.ndarray, dom_dist: np.ndarray, probes: np.ndarray, radius: float, m: int, n: int
) -> float:
    """iso + density objective for clamped Euclidean placements."""
    return float(
        _euclid_objective_impl(
            np.ascontiguousarray(flat, dtype=np.float64),
            np.ascontiguousarray(dom_dist, dtype=np.float64),
            np.ascontiguousarray(probes, dtype=np.float64),
            float(radius),
            m,
            n,
        )
    )


if HAVE_NUMBA:
    from numba import prange

    @njit(cache=True, parallel=True)
    def _fw_impl(d):
        n = d.shape[0]
        for k in range(n):
            dk = d[k]
            for i in prange(n):
                dik = d[i, k]
                row = d[i]
                for j in range(n):
                    alt = dik + dk[j]
                    if alt < row[j]:
                        row[j] = alt
        return d


def floyd_warshall_inplace(dist: np.ndarray) -> np.ndarray:
    """All-pairs shortest-path closure of a dense symmetric cost matrix."""
    d = np.ascontiguousarray(dist, dtype=np.float64).copy()
    if HAVE_NUMBA:
        return _fw_impl(d)
    n = d.shape[0]
    for k in range(n):
        np.minimum(d, d[:, k][:, None] + d[k, :][None, :], out=d)
    return d
