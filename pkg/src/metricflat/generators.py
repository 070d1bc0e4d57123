"""Synthetic spaces: flat gauge-ball nets, perturbed flats, the planar
four-corner Cantor set, and discrete unions of normed disks over a base
space, with the threshold-class decomposition for the latter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._fastpath import floyd_warshall_inplace
from .norms import GaugeNorm, euclidean_norm
from .spaces import Ball, FiniteMetricSpace, build_space


def _greedy_net(points: np.ndarray, norm: GaugeNorm, resolution: float, seed: int) -> np.ndarray:
    order = np.arange(len(points))
    if seed != 0:
        np.random.default_rng(seed).shuffle(order)
    chosen: list[int] = []
    mind = np.full(len(points), np.inf)
    for idx in order:
        if mind[idx] >= resolution:
            chosen.append(int(idx))
            row = norm.cross_dist(points[idx][None, :], points)[0]
            np.minimum(mind, row, out=mind)
    return points[sorted(chosen)]


def gen_flat_net(
    norm: GaugeNorm, n: int, resolution: float, seed: int = 0
) -> FiniteMetricSpace:
    """Maximal `resolution`-separated net of the unit gauge ball.

    The metric is the gauge metric and each point carries mass resolution^n.
    """
    pool = norm.ball_lattice(1.0, resolution / 2.0)
    net = _greedy_net(pool, norm, resolution, seed)
    dist = norm.cross_dist(net, net)
    np.fill_diagonal(dist, 0.0)
    dist = np.minimum(dist, dist.T)
    return FiniteMetricSpace(
        dist=dist,
        weights=np.full(len(net), resolution ** n),
        dim_hint=n,
        coords=net,
    )


def gen_perturbed_flat(
    norm: GaugeNorm,
    n: int,
    resolution: float,
    delta: float,
    seed: int = 0,
) -> tuple[FiniteMetricSpace, dict]:
    """Flat net with distances scaled by iid factors in [1-delta, 1+delta],
    repaired to a metric by shortest-path closure.

    Returns the space and a report holding the max relative repair.  The
    repaired matrix satisfies the triangle inequality exactly; coordinates
    are dropped since the perturbed metric is no longer the gauge metric.
    """
    flat = gen_flat_net(norm, n, resolution, seed)
    d = flat.dist.copy()
    m = len(d)
    if delta > 0:
        rng = np.random.default_rng(seed + 1)
        fac = rng.uniform(1 - delta, 1 + delta, size=(m, m))
        fac = np.triu(fac, 1)
        fac = fac + fac.T
        d = d * np.where(fac == 0, 1.0, fac)
        np.fill_diagonal(d, 0.0)
        repaired = floyd_warshall_inplace(d)
    else:
        repaired = d
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.abs(repaired - d) / np.where(d > 0, d, 1.0)
    report = {"max_repair_rel": float(rel.max()) if delta > 0 else 0.0}
    space = FiniteMetricSpace(
        dist=repaired, weights=flat.weights.copy(), dim_hint=n, coords=None
    )
    return space, report


def gen_cantor4(depth: int, contraction: float = 0.25) -> FiniteMetricSpace:
    """Corner points of the planar four-corner Cantor construction.

    4^depth points in the unit square with mass 4^(-depth) each and the
    Euclidean metric; at the standard contraction 1/4 this is the canonical
    1-regular purely unrectifiable set.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    pts = np.zeros((1, 2))
    for _ in range(depth):
        pts = (pts[:, None, :] * contraction + corners[None, :, :] * (1 - contraction)).reshape(-1, 2)
    return build_space(
        coords=pts, metric="euclidean", weights=4.0 ** -depth, dim_hint=1, validate=False
    )


@dataclass(frozen=True)
class DiscreteUnionSpec:
    """Union-of-disks construction data: a discrete base space with isolation
    radii, a norm per base point, and the disk sampling resolution factor."""

    base: FiniteMetricSpace
    isolation_radii: np.ndarray
    norms: list[GaugeNorm]
    disk_resolution_factor: float = 1.0 / 8.0
    seed: int = 0

    def __post_init__(self):
        r = np.asarray(self.isolation_radii, dtype=float)
        object.__setattr__(self, "isolation_radii", r)
        if len(r) != self.base.point_count or len(self.norms) != self.base.point_count:
            raise ValueError("per-point radii and norms must match the base space")
        pos = self.base.dist[self.base.dist > 0]
        min_pos = pos.min() if len(pos) else np.inf
        if np.any(r <= 0) or np.any(r > self.base.diameter):
            raise ValueError("isolation radii must lie in (0, diam]")
        if np.any(r >= min_pos):
            raise ValueError("isolation property violated: some B(y, r_y) is not a singleton")


def gen_discrete_union(spec: DiscreteUnionSpec) -> FiniteMetricSpace:
    """Disjoint union of normed-disk nets glued over the base space.

    Cross-disk distances are ||x||_y + d_base(y, z) + ||w||_z; within one disk
    the gauge metric applies.  Point tags record each point's base index.
    """
    disks = []
    tags = []
    n = spec.norms[0].dim
    for i in range(spec.base.point_count):
        r_y = float(spec.isolation_radii[i])
        res = r_y * spec.disk_resolution_factor
        pool = spec.norms[i].ball_lattice(1.0, res / r_y / 2.0) * r_y
        net = _greedy_net(pool, spec.norms[i], res, spec.seed)
        if not any((net == 0).all(axis=1)):
            net = np.vstack([np.zeros(n), net])
        disks.append(net)
        tags.extend([i] * len(net))
    tags = np.asarray(tags)
    gauges = [np.asarray(spec.norms[i].eval(disks[i])) for i in range(len(disks))]
    sizes = [len(d) for d in disks]
    total = sum(sizes)
    dist = np.zeros((total, total))
    offs = np.concatenate([[0], np.cumsum(sizes)])
    for i, di in enumerate(disks):
        si = slice(offs[i], offs[i + 1])
        dist[si, si] = spec.norms[i].cross_dist(di, di)
        for j in range(i + 1, len(disks)):
            sj = slice(offs[j], offs[j + 1])
            cross = (
                gauges[i][:, None]
                + spec.base.dist[i, j]
                + gauges[j][None, :]
            )
            dist[si, sj] = cross
            dist[sj, si] = cross.T
    np.fill_diagonal(dist, 0.0)
    # mass: each disk carries the base point's share at its own resolution
    weights = np.concatenate(
        [
            np.full(sizes[i], (spec.isolation_radii[i] * spec.disk_resolution_factor) ** n)
            for i in range(len(disks))
        ]
    )
    return FiniteMetricSpace(dist=dist, weights=weights, dim_hint=n, coords=None, point_tags=tags)


def discrete_bwgl_decomposition(
    union: FiniteMetricSpace,
    spec: DiscreteUnionSpec,
    eps: float,
    n: int | None = None,
    samples: int = 300,
    seed: int = 0,
    xi_budget: dict | None = None,
) -> dict:
    """Classify sampled unflat (point, scale) pairs of the union by the
    five threshold classes and estimate each class's Carleson mass.

    Classes split on how the scale compares with the isolation radius at the
    point's disk and at nearby base points; the class masses are Monte-Carlo
    estimates of the normalized Carleson integrals.
    """
    from .coefficients import xi_upper

    n = n or union.dim_hint
    xi_budget = xi_budget or {}
    rng = np.random.default_rng(seed)
    tags = union.point_tags
    diam = union.diameter
    pos = union.dist[union.dist > 0]
    r_min = float(pos.min())
    log_lo, log_hi = np.log(r_min), np.log(diam)

    ws = rng.integers(0, union.point_count, samples)
    rs = np.exp(rng.uniform(log_lo, log_hi, samples))
    class_names = ("A1", "A2", "A3.1", "A3.2", "A3.3")
    hits = {k: np.zeros(samples) for k in class_names}
    xi_vals = np.zeros(samples)
    for s, (w, r) in enumerate(zip(ws, rs)):
        rec = xi_upper(
            union, Ball(int(w), float(r)), n,
            max_fit_points=xi_budget.get("max_fit_points", 220),
            iters=xi_budget.get("iters", 80),
            tau=xi_budget.get("tau", 0.05),
            family=xi_budget.get("family", "all"),
        )
        xi_vals[s] = rec.xi
        if rec.xi <= 2 * eps:
            continue
        y_w = int(tags[w])
        r_yw = float(spec.isolation_radii[y_w])
        if r <= r_yw:
            hits["A1"][s] = 1.0
        elif r < r_yw / eps:
            hits["A2"][s] = 1.0
        else:
            near = np.flatnonzero(
                (spec.base.dist[y_w] > 0) & (spec.base.dist[y_w] <= r)
            )
            if len(near) == 0:
                hits["A3.1"][s] = 1.0
            elif np.any(spec.isolation_radii[near] / eps > r):
                hits["A3.2"][s] = 1.0
            else:
                hits["A3.3"][s] = 1.0
    total_w = float(union.weights.sum())
    log_range = log_hi - log_lo
    masses = {
        k: float(h.mean()) * total_w * log_range / diam ** n for k, h in hits.items()
    }
    bad_total = sum(float(h.sum()) for h in hits.values())
    return {
        "eps": eps,
        "masses": masses,
        "bad_fraction": bad_total / samples,
        "log_eps_bound": abs(np.log(eps)),
        "samples": samples,
        "xi_values": xi_vals,
        "classes_partition_ok": bool(
            (sum(h for h in hits.values()) <= 1.0 + 1e-12).all()
        ),
    }
