"""Norms on R^n (ellipsoidal and polytopal gauges), affine maps with certified
distortion, Banach-Mazur upper bounds via enclosing ellipsoids, the metric
clamp map, and McShane-based Lipschitz extension."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAX_POLYTOPAL_GENERATORS = 64
MVEE_TOL = 1e-7


class DegenerateGaugeError(ValueError):
    """Raised when a gauge does not define a genuine norm."""


def _farthest_point_select(points: np.ndarray, count: int) -> np.ndarray:
    """Greedy farthest-point subset of the rows of `points` (Euclidean)."""
    chosen = [int(np.argmax((points ** 2).sum(1)))]
    d = np.linalg.norm(points - points[chosen[0]], axis=1)
    while len(chosen) < count:
        nxt = int(d.argmax())
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
    return points[sorted(chosen)]


@dataclass(frozen=True)
class GaugeNorm:
    """A norm given either by a positive-definite form or by a symmetric
    generator set whose convex hull is the unit ball."""

    kind: str
    dim: int
    form: np.ndarray | None = None
    generators: np.ndarray | None = None
    _facets: tuple[np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        if self.kind == "ellipsoidal":
            m = np.asarray(self.form, dtype=float)
            if m.shape != (self.dim, self.dim):
                raise ValueError("form shape mismatch")
            m = 0.5 * (m + m.T)
            eig = np.linalg.eigvalsh(m)
            if eig.min() <= 0:
                raise DegenerateGaugeError(f"ellipsoidal form not positive definite: min eig {eig.min():.3g}")
            m.setflags(write=False)
            object.__setattr__(self, "form", m)
        elif self.kind == "polytopal":
            g = np.asarray(self.generators, dtype=float)
            if g.ndim != 2 or g.shape[1] != self.dim:
                raise ValueError("generators must be (m, dim)")
            # enforce symmetry: v present => -v present
            g = np.vstack([g, -g])
            g = np.unique(np.round(g, 12), axis=0)
            if g.shape[0] > 2 * MAX_POLYTOPAL_GENERATORS:
                g = _farthest_point_select(g, 2 * MAX_POLYTOPAL_GENERATORS)
                g = np.unique(np.round(np.vstack([g, -g]), 12), axis=0)
            if np.linalg.matrix_rank(g) < self.dim:
                raise DegenerateGaugeError("polytopal generators do not span the space")
            g.setflags(write=False)
            object.__setattr__(self, "generators", g)
            object.__setattr__(self, "_facets", _hull_facets(g))
        else:
            raise ValueError(f"unknown gauge kind {self.kind!r}")

    # -- evaluation ---------------------------------------------------------

    def __call__(self, v: np.ndarray) -> np.ndarray | float:
        return self.eval(v)

    def eval(self, v: np.ndarray) -> np.ndarray | float:
        """Minkowski functional; accepts a single vector or an array of rows."""
        v = np.asarray(v, dtype=float)
        single = v.ndim == 1
        pts = np.atleast_2d(v)
        if self.kind == "ellipsoidal":
            out = np.sqrt(np.einsum("ij,jk,ik->i", pts, self.form, pts))
        else:
            a, b = self._facets
            out = (pts @ a.T / b).max(axis=1)
            out = np.maximum(out, 0.0)
        return float(out[0]) if single else out

    def dist(self, u: np.ndarray, v: np.ndarray) -> np.ndarray | float:
        return self.eval(np.asarray(u, dtype=float) - np.asarray(v, dtype=float))

    def pairwise(self, pts: np.ndarray) -> np.ndarray:
        return self.cross_dist(pts, pts)

    def cross_dist(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Gauge distance matrix between row sets a (m,) and b (k,)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if self.kind == "ellipsoidal":
            chol = np.linalg.cholesky(self.form)
            ta, tb = a @ chol, b @ chol
            sq = (ta ** 2).sum(1)[:, None] + (tb ** 2).sum(1)[None, :] - 2 * ta @ tb.T
            return np.sqrt(np.maximum(sq, 0.0))
        fa, fb = self._facets
        sa = (a @ fa.T) / fb  # (m, F)
        sb = (b @ fa.T) / fb  # (k, F)
        out = np.full((len(a), len(b)), -np.inf)
        for f in range(fa.shape[0]):
            np.maximum(out, sa[:, f][:, None] - sb[:, f][None, :], out=out)
        return np.maximum(out, 0.0)

    # -- geometry helpers ---------------------------------------------------

    def axis_extent(self) -> np.ndarray:
        """Per-coordinate extent of the unit ball: max x_i over the ball."""
        if self.kind == "ellipsoidal":
            inv = np.linalg.inv(self.form)
            return np.sqrt(np.diag(inv))
        return np.abs(self.generators).max(axis=0)

    def euclid_upper(self) -> float:
        """Smallest L with gauge(v) <= L |v| for all v."""
        if self.kind == "ellipsoidal":
            return float(np.sqrt(np.linalg.eigvalsh(self.form).max()))
        a, b = self._facets
        return float((np.linalg.norm(a, axis=1) / b).max())

    def euclid_lower(self) -> float:
        """Largest c with gauge(v) >= c |v| for all v."""
        if self.kind == "ellipsoidal":
            return float(np.sqrt(np.linalg.eigvalsh(self.form).min()))
        return 1.0 / float(np.linalg.norm(self.generators, axis=1).max())

    def ball_lattice(self, radius: float, spacing: float) -> np.ndarray:
        """Deterministic cubic-lattice sample of the gauge ball of `radius`.

        The lattice spacing is in ambient coordinates; points with gauge
        value <= radius are kept (origin always included).
        """
        ext = self.axis_extent() * radius
        axes = [np.arange(-np.floor(e / spacing), np.floor(e / spacing) + 1) * spacing for e in ext]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        keep = np.asarray(self.eval(grid)) <= radius
        pts = grid[keep]
        if not len(pts):
            pts = np.zeros((1, self.dim))
        return pts

    def covering_lattice(self, radius: float, tau: float, max_points: int = 200_000) -> np.ndarray:
        """Lattice that is a (tau*radius)-covering of the gauge ball in gauge distance."""
        h = 2.0 * tau * radius / (np.sqrt(self.dim) * self.euclid_upper())
        ext = self.axis_extent() * radius
        count = np.prod([2 * np.floor(e / h) + 1 for e in ext])
        while count > max_points:
            h *= 1.3
            count = np.prod([2 * np.floor(e / h) + 1 for e in ext])
        return self.ball_lattice(radius, h)

    def to_json(self) -> dict:
        if self.kind == "ellipsoidal":
            return {"kind": "ellipsoidal", "matrix": self.form.tolist()}
        return {"kind": "polytopal", "generators": self.generators.tolist()}

    @staticmethod
    def from_json(obj: dict | str) -> "GaugeNorm":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if obj["kind"] == "ellipsoidal":
            m = np.asarray(obj["matrix"], dtype=float)
            return GaugeNorm(kind="ellipsoidal", dim=m.shape[0], form=m)
        g = np.asarray(obj["generators"], dtype=float)
        return GaugeNorm(kind="polytopal", dim=g.shape[1], generators=g)


def _hull_facets(generators: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outer facet description (A, b) of conv(generators): ball = {x : A x <= b}."""
    dim = generators.shape[1]
    if dim == 1:
        a = np.array([[1.0], [-1.0]])
        b = np.array([np.abs(generators).max()] * 2)
        return a, b
    from scipy.spatial import ConvexHull

    hull = ConvexHull(generators)
    eq = hull.equations  # normal . x + offset <= 0
    a = eq[:, :-1]
    b = -eq[:, -1]
    if b.min() <= 0:
        raise DegenerateGaugeError("origin not interior to the generator hull")
    return a, b


# -- convenience constructors ----------------------------------------------


def euclidean_norm(dim: int) -> GaugeNorm:
    return GaugeNorm(kind="ellipsoidal", dim=dim, form=np.eye(dim))


def ellipsoidal_norm(form: np.ndarray) -> GaugeNorm:
    form = np.asarray(form, dtype=float)
    return GaugeNorm(kind="ellipsoidal", dim=form.shape[0], form=form)


def linf_norm(dim: int) -> GaugeNorm:
    corners = np.stack(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij"), axis=-1).reshape(-1, dim)
    return GaugeNorm(kind="polytopal", dim=dim, generators=corners)


def l1_norm(dim: int) -> GaugeNorm:
    return GaugeNorm(kind="polytopal", dim=dim, generators=np.eye(dim))


def polytopal_norm(generators: np.ndarray) -> GaugeNorm:
    g = np.asarray(generators, dtype=float)
    return GaugeNorm(kind="polytopal", dim=g.shape[1], generators=g)


def gauge_eval(norm: GaugeNorm, v: np.ndarray) -> float | np.ndarray:
    """Minkowski functional of v in the given gauge."""
    return norm.eval(v)


# -- affine maps ------------------------------------------------------------


@dataclass(frozen=True)
class AffineMap:
    """x -> linear @ x + offset, with certified Lipschitz bounds between gauges."""

    linear: np.ndarray
    offset: np.ndarray
    lower: float = 0.0
    upper: float = np.inf

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float)
        off = np.asarray(self.offset, dtype=float)
        lin.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)
        if self.lower > self.upper * (1 + 1e-12):
            raise ValueError("certified lower bound exceeds upper bound")
        if self.lower > self.upper:
            object.__setattr__(self, "lower", self.upper)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.linear.T + self.offset

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.linear)
        return AffineMap(
            linear=inv,
            offset=-inv @ self.offset,
            lower=0.0 if not np.isfinite(self.upper) else 1.0 / self.upper,
            upper=np.inf if self.lower == 0 else 1.0 / self.lower,
        )

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self after other: x -> self(other(x))."""
        return AffineMap(
            linear=self.linear @ other.linear,
            offset=self.linear @ other.offset + self.offset,
            lower=self.lower * other.lower,
            upper=self.upper * other.upper,
        )

    @staticmethod
    def identity(dim: int) -> "AffineMap":
        return AffineMap(linear=np.eye(dim), offset=np.zeros(dim), lower=1.0, upper=1.0)


def operator_norm(linear: np.ndarray, dom: GaugeNorm, cod: GaugeNorm) -> float:
    """Exact operator norm of a linear map between the two gauges.

    All four kind combinations reduce to closed forms: polytopal domains
    maximize over generators, ellipsoidal domains reduce per codomain facet
    (polytopal) or to a generalized eigenvalue problem (ellipsoidal).
    """
    a = np.asarray(linear, dtype=float)
    if dom.kind == "polytopal":
        imgs = dom.generators @ a.T
        return float(np.max(np.atleast_1d(cod.eval(imgs))))
    m1_inv = np.linalg.inv(dom.form)
    if cod.kind == "ellipsoidal":
        mat = a.T @ cod.form @ a
        lam = np.linalg.eigvalsh(np.linalg.solve(dom.form, mat))
        return float(np.sqrt(max(lam.max(), 0.0)))
    fac_a, fac_b = cod._facets
    vals = np.einsum("ij,jk,ik->i", fac_a @ a, m1_inv, fac_a @ a)
    return float((np.sqrt(np.maximum(vals, 0.0)) / fac_b).max())


def certify_affine(linear: np.ndarray, offset: np.ndarray, dom: GaugeNorm, cod: GaugeNorm) -> AffineMap:
    """AffineMap with exact certified bi-Lipschitz constants between the gauges."""
    up = operator_norm(linear, dom, cod)
    det = np.linalg.det(linear)
    if abs(det) < 1e-300:
        lo = 0.0
    else:
        lo = 1.0 / operator_norm(np.linalg.inv(linear), cod, dom)
    return AffineMap(linear=linear, offset=np.asarray(offset, dtype=float), lower=lo, upper=up)


# -- minimum volume enclosing ellipsoid (centered, symmetric input) ----------


def mvee_form(points: np.ndarray, tol: float = MVEE_TOL, max_iter: int = 20000) -> np.ndarray:
    """Form A of the minimum-volume origin-centered ellipsoid {x : x^T A x <= 1}
    enclosing the symmetric point set, by barycentric coordinate ascent."""
    pts = np.vstack([points, -points]).astype(float)
    m, n = pts.shape
    u = np.full(m, 1.0 / m)
    for _ in range(max_iter):
        v = pts.T @ (u[:, None] * pts)
        w = np.einsum("ij,jk,ik->i", pts, np.linalg.inv(v), pts)
        j = int(w.argmax())
        wj = w[j]
        step = (wj - n) / (n * (wj - 1.0))
        if step <= tol:
            break
        u *= 1.0 - step
        u[j] += step
    v = pts.T @ (u[:, None] * pts)
    a = np.linalg.inv(v) / n
    # rescale so containment is exact
    scale = np.einsum("ij,jk,ik->i", pts, a, pts).max()
    return a * (1.0 / scale) if scale > 1 else a


def enclosing_ellipsoid(norm: GaugeNorm) -> np.ndarray:
    """Form of the minimum-volume centered ellipsoid enclosing the unit ball."""
    if norm.kind == "ellipsoidal":
        return norm.form.copy()
    return mvee_form(norm.generators)


def _rotation_candidates(dim: int, budget: int, seed: int = 7) -> list[np.ndarray]:
    cands = [np.eye(dim)]
    if dim == 1:
        return cands
    if dim == 2:
        for t in np.linspace(0.0, np.pi / 2, budget, endpoint=False):
            c, s = np.cos(t), np.sin(t)
            cands.append(np.array([[c, -s], [s, c]]))
    else:
        rng = np.random.default_rng(seed)
        for _ in range(budget):
            q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
            q *= np.sign(np.diag(r))
            cands.append(q)
    return cands


def banach_mazur_upper(
    norm1: GaugeNorm, norm2: GaugeNorm, rotation_budget: int = 180
) -> tuple[float, AffineMap]:
    """Upper bound on the Banach-Mazur distance with a linear witness.

    Aligns the minimum-volume enclosing ellipsoids of the two unit balls and
    searches rotations of the aligned frame; the product ||T|| ||T^-1|| is at
    most n for every candidate, so the returned bound is certified <= n.
    """
    if norm1.dim != norm2.dim:
        raise ValueError("dimension mismatch")
    dim = norm1.dim
    a1 = enclosing_ellipsoid(norm1)
    a2 = enclosing_ellipsoid(norm2)
    # b_i maps the Euclidean unit ball onto ellipsoid E_i
    w1, q1 = np.linalg.eigh(a1)
    w2, q2 = np.linalg.eigh(a2)
    b1 = q1 @ np.diag(w1 ** -0.5) @ q1.T
    b2 = q2 @ np.diag(w2 ** -0.5) @ q2.T
    b1_inv = np.linalg.inv(b1)
    best = None
    for r in _rotation_candidates(dim, rotation_budget):
        lin = b2 @ r @ b1_inv
        up = operator_norm(lin, norm1, norm2)
        dn = operator_norm(np.linalg.inv(lin), norm2, norm1)
        prod = up * dn
        if best is None or prod < best[0]:
            best = (prod, lin, up, dn)
    if dim == 2:
        # golden-section polish around the best angle
        def product_at(t: float) -> float:
            c, s = np.cos(t), np.sin(t)
            lin = b2 @ np.array([[c, -s], [s, c]]) @ b1_inv
            return operator_norm(lin, norm1, norm2) * operator_norm(np.linalg.inv(lin), norm2, norm1)

        span = np.pi / 2 / max(rotation_budget, 1)
        lin0 = np.linalg.inv(b2) @ best[1] @ b1
        t_best = float(np.arctan2(lin0[1, 0], lin0[0, 0]))
        lo, hi = t_best - span, t_best + span
        phi = (np.sqrt(5) - 1) / 2
        c1, c2 = hi - phi * (hi - lo), lo + phi * (hi - lo)
        f1, f2 = product_at(c1), product_at(c2)
        for _ in range(60):
            if f1 < f2:
                hi, c2, f2 = c2, c1, f1
                c1 = hi - phi * (hi - lo)
                f1 = product_at(c1)
            else:
                lo, c1, f1 = c1, c2, f2
                c2 = lo + phi * (hi - lo)
                f2 = product_at(c2)
        t = (lo + hi) / 2
        c, s = np.cos(t), np.sin(t)
        lin = b2 @ np.array([[c, -s], [s, c]]) @ b1_inv
        up = operator_norm(lin, norm1, norm2)
        dn = operator_norm(np.linalg.inv(lin), norm2, norm1)
        if up * dn < best[0]:
            best = (up * dn, lin, up, dn)
    prod, lin, up, dn = best
    witness = AffineMap(linear=lin, offset=np.zeros(dim), lower=1.0 / dn, upper=up)
    return float(prod), witness


# -- the clamp map -----------------------------------------------------------


def clamp_to_ball(norm: GaugeNorm, z: np.ndarray, lam: float, y: np.ndarray) -> np.ndarray:
    """Radial clamp onto the gauge ball B(z, lam).

    The map is 2-Lipschitz and moves y by exactly max(0, ||y-z|| - lam).
    """
    if lam <= 0:
        raise ValueError("clamp radius must be positive")
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    z = np.asarray(z, dtype=float)
    g = np.atleast_1d(norm.eval(pts - z))
    scale = np.maximum(1.0, g / lam)
    out = z + (pts - z) / scale[:, None]
    return out[0] if single else out


# -- Lipschitz extension -----------------------------------------------------


def linf_change_of_basis(cod: GaugeNorm) -> AffineMap:
    """Linear T with ||T||_{cod -> linf} = 1 and ||T^-1|| <= n, via the
    enclosing-ellipsoid alignment."""
    target = linf_norm(cod.dim)
    _, wit = banach_mazur_upper(cod, target)
    lin = wit.linear / wit.upper  # now 1-Lipschitz into linf
    return certify_affine(lin, np.zeros(cod.dim), cod, target)


def lipschitz_extend(
    anchor_dist: np.ndarray,
    cross_dist: np.ndarray,
    values: np.ndarray,
    lip: float,
    codomain: GaugeNorm,
    tol: float = 1e-9,
) -> np.ndarray:
    """Extend an L-Lipschitz map, given on anchors, to all evaluation points.

    `anchor_dist` is the (m, m) anchor distance matrix, `cross_dist` the
    (m, N) distances from anchors to evaluation points, `values` the (m, n)
    anchor images.  Verifies the Lipschitz hypothesis (raising with the worst
    pair), then applies a coordinatewise McShane extension in an linf frame;
    the result is at worst nL-Lipschitz and reproduces the anchor values.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    m, dim = values.shape
    diffs = values[:, None, :] - values[None, :, :]
    img_d = np.asarray(codomain.eval(diffs.reshape(-1, dim))).reshape(m, m)
    slack = img_d - lip * anchor_dist
    np.fill_diagonal(slack, -np.inf)
    if slack.max() > tol * max(lip, 1.0):
        i, j = np.unravel_index(int(slack.argmax()), slack.shape)
        raise ValueError(
            f"map is not {lip}-Lipschitz on its domain: worst pair ({i},{j}) "
            f"with image/domain ratio {img_d[i, j] / max(anchor_dist[i, j], 1e-300):.4g}"
        )
    t_map = linf_change_of_basis(codomain)
    g = values @ t_map.linear.T  # (m, dim), L-Lipschitz into linf coordinatewise
    # McShane per coordinate: G_j(x) = min_i ( g_ij + L d(i, x) )
    ext = (g[:, None, :] + lip * cross_dist[:, :, None]).min(axis=0)  # (N, dim)
    t_inv = np.linalg.inv(t_map.linear)
    return ext @ t_inv.T
