"""Finite metric spaces: validation, balls, separated nets, regularity diagnostics."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRIANGLE_TOL = 1e-9
EXHAUSTIVE_TRIANGLE_LIMIT = 2000
SAMPLED_TRIANGLE_COUNT = 10 ** 6


class MetricValidationError(ValueError):
    """Raised when an input distance matrix is not a metric."""


@dataclass(frozen=True)
class Ball:
    """Closed ball: all points within `radius` of the point with id `center`."""

    center: int
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")


@dataclass(frozen=True)
class Net:
    """Maximal separated net: members pairwise >= scale apart, and scale-covering."""

    scale: float
    members: tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class FiniteMetricSpace:
    """A finite metric space with per-point measure weights.

    `dist` is the full symmetric distance matrix, `weights` the mass carried by
    each point (standing in for n-dimensional Hausdorff measure at the sampling
    resolution), and `dim_hint` the target tangent dimension n used by flatness
    coefficients.  `coords` is kept when the space came from a point cloud.
    """

    dist: np.ndarray
    weights: np.ndarray
    dim_hint: int
    coords: np.ndarray | None = None
    point_tags: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        d.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "dist", d)
        object.__setattr__(self, "weights", w)
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @property
    def point_count(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.point_count > 1 else 0.0

    def eccentricity(self, i: int) -> float:
        """Largest distance from point i to any point of the space."""
        return float(self.dist[i].max())

    def ball_points(self, center: int, radius: float) -> np.ndarray:
        """Ids of all points within `radius` of `center` (closed ball)."""
        return np.flatnonzero(self.dist[center] <= radius)

    def ball_weight(self, center: int, radius: float) -> float:
        return float(self.weights[self.dist[center] <= radius].sum())

    def subspace_dist(self, ids: np.ndarray) -> np.ndarray:
        return self.dist[np.ix_(ids, ids)]


def _check_triangle(dist: np.ndarray, tol: float, rng: np.random.Generator):
    """Return the worst triple (i,k,j, violation) or None.

    Exhaustive below EXHAUSTIVE_TRIANGLE_LIMIT points, sampled triples above.
    """
    n = dist.shape[0]
    worst = None
    worst_v = tol
    if n <= EXHAUSTIVE_TRIANGLE_LIMIT:
        for k in range(n):
            slack = dist - (dist[:, k][:, None] + dist[k, :][None, :])
            v = slack.max()
            if v > worst_v:
                i, j = np.unravel_index(int(slack.argmax()), slack.shape)
                worst = (int(i), int(k), int(j), float(v))
                worst_v = v
    else:
        m = SAMPLED_TRIANGLE_COUNT
        ii = rng.integers(0, n, m)
        jj = rng.integers(0, n, m)
        kk = rng.integers(0, n, m)
        slack = dist[ii, jj] - (dist[ii, kk] + dist[kk, jj])
        v = slack.max()
        if v > worst_v:
            a = int(slack.argmax())
            worst = (int(ii[a]), int(kk[a]), int(jj[a]), float(v))
    return worst


def validate_metric(dist: np.ndarray, seed: int = 0) -> None:
    """Check symmetry, zero diagonal, nonnegativity and the triangle inequality.

    Raises MetricValidationError listing the worst offending triple.  The
    triangle tolerance is absolute at 1e-9 on the diameter-normalized matrix.
    """
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise MetricValidationError(f"distance matrix must be square, got shape {dist.shape}")
    if not np.allclose(dist, dist.T, atol=0, rtol=0):
        i, j = np.unravel_index(int(np.abs(dist - dist.T).argmax()), dist.shape)
        raise MetricValidationError(f"asymmetric at ({i},{j}): {dist[i, j]} vs {dist[j, i]}")
    if np.any(np.diag(dist) != 0):
        k = int(np.flatnonzero(np.diag(dist))[0])
        raise MetricValidationError(f"nonzero diagonal at {k}: {dist[k, k]}")
    if np.any(dist < 0):
        i, j = np.unravel_index(int(dist.argmin()), dist.shape)
        raise MetricValidationError(f"negative distance at ({i},{j}): {dist[i, j]}")
    diam = dist.max()
    tol = TRIANGLE_TOL * diam if diam > 0 else TRIANGLE_TOL
    worst = _check_triangle(dist, tol, np.random.default_rng(seed))
    if worst is not None:
        i, k, j, v = worst
        raise MetricValidationError(
            f"triangle inequality violated: d({i},{j}) > d({i},{k}) + d({k},{j}) by {v:.3g}"
        )


_METRICS = {
    "euclidean": lambda diff: np.sqrt((diff ** 2).sum(-1)),
    "linf": lambda diff: np.abs(diff).max(-1),
    "l1": lambda diff: np.abs(diff).sum(-1),
}


def metric_matrix(coords: np.ndarray, metric: str) -> np.ndarray:
    """Pairwise distance matrix for a point cloud under a named metric.

    Supported names: euclidean, linf, l1, snowflake:<alpha> (Euclidean^alpha).
    """
    coords = np.asarray(coords, dtype=float)
    alpha = None
    if metric.startswith("snowflake:"):
        alpha = float(metric.split(":", 1)[1])
        if not 0 < alpha <= 1:
            raise ValueError(f"snowflake exponent must be in (0,1], got {alpha}")
        metric = "euclidean"
    if metric not in _METRICS:
        raise ValueError(f"unknown metric {metric!r}; use euclidean, linf, l1 or snowflake:<alpha>")
    diff = coords[:, None, :] - coords[None, :, :]
    d = _METRICS[metric](diff)
    if alpha is not None:
        d = d ** alpha
    np.fill_diagonal(d, 0.0)
    return np.minimum(d, d.T)


def build_space(
    coords: np.ndarray | None = None,
    metric: str = "euclidean",
    dist: np.ndarray | None = None,
    weights: np.ndarray | float | None = None,
    dim_hint: int = 2,
    validate: bool = True,
    seed: int = 0,
) -> FiniteMetricSpace:
    """Construct a validated FiniteMetricSpace from a point cloud or a matrix.

    `weights` may be an explicit array, a scalar mass per point, or None for
    unit mass per point.  Triangle violations beyond tolerance are rejected
    with the worst triple named.
    """
    if (coords is None) == (dist is None):
        raise ValueError("provide exactly one of coords or dist")
    if coords is not None:
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        dist = metric_matrix(coords, metric)
    else:
        dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    if validate:
        validate_metric(dist, seed=seed)
    if weights is None:
        w = np.ones(n)
    elif np.isscalar(weights):
        w = np.full(n, float(weights))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"weights shape {w.shape} does not match {n} points")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive total")
    return FiniteMetricSpace(dist=dist, weights=w, dim_hint=dim_hint, coords=coords)


def _seeded_order(n: int, seed: int) -> np.ndarray:
    """Point order for greedy constructions.  Seed 0 is the natural order;
    any other seed is a reproducible shuffle."""
    if seed == 0:
        return np.arange(n)
    order = np.arange(n)
    np.random.default_rng(seed).shuffle(order)
    return order


def maximal_net(space: FiniteMetricSpace, scale: float, seed: int = 0) -> Net:
    """Greedy maximal `scale`-separated net, deterministic given (space, scale, seed)."""
    if scale <= 0:
        raise ValueError("net scale must be positive")
    order = _seeded_order(space.point_count, seed)
    members: list[int] = []
    mindist = np.full(space.point_count, np.inf)
    for idx in order:
        if mindist[idx] >= scale:
            members.append(int(idx))
            np.minimum(mindist, space.dist[idx], out=mindist)
    return Net(scale=scale, members=tuple(members), seed=seed)


def extend_net(
    space: FiniteMetricSpace, base: tuple[int, ...], scale: float, seed: int = 0
) -> Net:
    """Maximal `scale`-separated net containing `base` (assumed >= scale separated)."""
    order = _seeded_order(space.point_count, seed)
    members = list(base)
    mindist = np.full(space.point_count, np.inf)
    for b in base:
        np.minimum(mindist, space.dist[b], out=mindist)
    for idx in order:
        if mindist[idx] >= scale:
            members.append(int(idx))
            np.minimum(mindist, space.dist[idx], out=mindist)
    return Net(scale=scale, members=tuple(members), seed=seed)


def check_net(space: FiniteMetricSpace, net: Net) -> None:
    """Assert separation and maximality exactly; raises AssertionError otherwise."""
    ids = np.asarray(net.members)
    sub = space.subspace_dist(ids)
    off = sub[~np.eye(len(ids), dtype=bool)]
    if len(ids) > 1:
        assert off.min() >= net.scale, "net separation violated"
    cover = space.dist[ids].min(axis=0)
    assert cover.max() < net.scale or np.isclose(cover.max(), 0), "net not maximal"


@dataclass(frozen=True)
class AhlforsReport:
    """Two-sided regularity diagnostics: bounds on weight(B(x,r)) / r^n."""

    c_low: float
    c_high: float
    witness_low: tuple[int, float]
    witness_high: tuple[int, float]
    n: int
    sample_count: int


def ahlfors_stats(
    space: FiniteMetricSpace,
    n: int,
    scale_range: tuple[float, float],
    sample_count: int = 256,
    seed: int = 0,
) -> AhlforsReport:
    """Extremal ratios weight(B(x,r))/r^n over sampled centers and radii.

    Centers are sampled uniformly (all of them if the budget allows), radii
    log-uniformly in scale_range.  Witnesses report the extremal (x, r) pairs.
    """
    lo, hi = scale_range
    if not (0 < lo <= hi):
        raise ValueError(f"empty or invalid scale range {scale_range}")
    rng = np.random.default_rng(seed)
    npts = space.point_count
    n_radii = max(4, int(np.ceil(sample_count ** 0.5)))
    radii = np.geomspace(lo, hi, n_radii)
    n_centers = max(1, sample_count // n_radii)
    if n_centers >= npts:
        centers = np.arange(npts)
    else:
        centers = rng.choice(npts, n_centers, replace=False)
    c_low, c_high = np.inf, -np.inf
    wit_low = wit_high = (0, lo)
    for x in centers:
        row = space.dist[x]
        for r in radii:
            ratio = float(space.weights[row <= r].sum()) / r ** n
            if ratio < c_low:
                c_low, wit_low = ratio, (int(x), float(r))
            if ratio > c_high:
                c_high, wit_high = ratio, (int(x), float(r))
    return AhlforsReport(
        c_low=c_low,
        c_high=c_high,
        witness_low=wit_low,
        witness_high=wit_high,
        n=n,
        sample_count=len(centers) * len(radii),
    )


# ---------------------------------------------------------------------------
# File formats


def load_points_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Point cloud CSV with header x0,...,x{d-1}[,weight]; returns (coords, weights)."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    cols = [c.strip() for c in header]
    has_weight = cols and cols[-1] == "weight"
    dim = len(cols) - (1 if has_weight else 0)
    expected = [f"x{i}" for i in range(dim)] + (["weight"] if has_weight else [])
    if cols != expected:
        raise ValueError(f"bad header {cols}; expected {expected}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(cols):
        raise ValueError(f"row width {data.shape[1]} does not match header width {len(cols)}")
    if has_weight:
        return data[:, :-1], data[:, -1]
    return data, None


def save_points_csv(path: str | Path, coords: np.ndarray, weights: np.ndarray | None = None):
    coords = np.atleast_2d(coords)
    cols = [f"x{i}" for i in range(coords.shape[1])]
    data = coords
    if weights is not None:
        cols.append("weight")
        data = np.column_stack([coords, weights])
    header = ",".join(cols)
    np.savetxt(path, data, delimiter=",", header=header, comments="")


def load_matrix_csv(path: str | Path) -> np.ndarray:
    mat = np.loadtxt(path, delimiter=",", ndmin=2)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"matrix CSV is {mat.shape}, not square")
    return mat


def load_matrix_bin(path: str | Path) -> np.ndarray:
    """Binary distance matrix: little-endian uint64 point count, then f64 row-major."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError("binary matrix file too short for header")
    (n,) = struct.unpack("<Q", raw[:8])
    expect = 8 + 8 * n * n
    if len(raw) != expect:
        raise ValueError(f"binary matrix size mismatch: {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw[8:], dtype="<f8").reshape(n, n).copy()


def save_matrix_bin(path: str | Path, dist: np.ndarray):
    n = dist.shape[0]
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(dist, dtype="<f8").tobytes())
