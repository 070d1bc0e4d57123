"""Gromov-Hausdorff approximations between metric balls and normed balls:
fitting, defect certification, Lipschitz regularization, restriction,
composition, and affine linearization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .norms import AffineMap, GaugeNorm, certify_affine, clamp_to_ball, lipschitz_extend
from .spaces import Ball, FiniteMetricSpace

CONTAINMENT_TOL = 1e-9
DENSITY_TAU_DEFAULT = 0.02


@dataclass(frozen=True)
class GhaCertificate:
    """Measured defects of a stored map: recomputable bit-for-bit from the map.

    iso_defect is the sup over all stored domain pairs of
    |d(x,y) - ||phi(x)-phi(y)|||; density_defect is the sup over a
    deterministic (tau * radius)-covering of the codomain ball of the gauge
    distance to the image.  Both are absolute lengths at the stated scale.
    """

    iso_defect: float
    density_defect: float
    scale: float
    tau: float
    probe_count: int

    @property
    def total(self) -> float:
        return max(self.iso_defect, self.density_defect)

    @property
    def normalized(self) -> tuple[float, float]:
        return self.iso_defect / self.scale, self.density_defect / self.scale


@dataclass(frozen=True)
class GhaMap:
    """A map from a finite metric ball (or normed ball sample) into a normed ball.

    Domain points are rows; `dom_dist` stores their pairwise distances.  For
    balls living in a FiniteMetricSpace, `dom_ids` gives the source point ids;
    for normed domains, `dom_points`/`dom_norm` carry coordinates and gauge.
    """

    dom_dist: np.ndarray
    values: np.ndarray
    codomain: GaugeNorm
    cod_center: np.ndarray
    radius: float
    dom_center_index: int = 0
    dom_ids: np.ndarray | None = None
    dom_points: np.ndarray | None = field(default=None)
    dom_norm: GaugeNorm | None = None

    def __post_init__(self):
        d = np.asarray(self.dom_dist, dtype=float)
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        c = np.asarray(self.cod_center, dtype=float)
        for arr in (d, v, c):
            arr.setflags(write=False)
        object.__setattr__(self, "dom_dist", d)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "cod_center", c)
        if self.dom_ids is not None:
            ids = np.asarray(self.dom_ids)
            ids.setflags(write=False)
            object.__setattr__(self, "dom_ids", ids)
        if self.dom_points is not None:
            p = np.atleast_2d(np.asarray(self.dom_points, dtype=float))
            p.setflags(write=False)
            object.__setattr__(self, "dom_points", p)
        g = np.asarray(self.codomain.eval(v - c))
        if g.max() > self.radius * (1 + CONTAINMENT_TOL):
            raise ValueError(
                f"image escapes the codomain ball: worst gauge {g.max():.6g} > radius {self.radius:.6g}"
            )

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def image_dist(self) -> np.ndarray:
        return self.codomain.cross_dist(self.values, self.values)

    def nearest_index(self, pts: np.ndarray) -> np.ndarray:
        """Indices of the domain rows whose images are gauge-nearest to pts."""
        return self.codomain.cross_dist(np.atleast_2d(pts), self.values).argmin(axis=1)

    def lipschitz_measured(self) -> float:
        img = self.image_dist()
        dom = self.dom_dist
        mask = dom > 0
        if not mask.any():
            return 0.0
        return float((img[mask] / dom[mask]).max())


def gha_defects(gmap: GhaMap, tau: float = DENSITY_TAU_DEFAULT) -> GhaCertificate:
    """Measure the isometry and density defects of a stored map.

    The isometry defect is exact over all stored pairs; the density defect is
    measured against a deterministic (tau*r)-covering lattice of the codomain
    ball, so the true value is within tau*r of the report.
    """
    img = gmap.image_dist()
    iso = float(np.abs(gmap.dom_dist - img).max()) if gmap.size > 1 else 0.0
    probes = gmap.codomain.covering_lattice(gmap.radius, tau) + gmap.cod_center
    dens = 0.0
    chunk = 4096
    for lo in range(0, len(probes), chunk):
        block = probes[lo : lo + chunk]
        dmin = gmap.codomain.cross_dist(block, gmap.values).min(axis=1)
        dens = max(dens, float(dmin.max()))
    return GhaCertificate(
        iso_defect=iso,
        density_defect=dens,
        scale=gmap.radius,
        tau=tau,
        probe_count=len(probes),
    )


def density_at(gmap: GhaMap, probes: np.ndarray) -> np.ndarray:
    """Exact gauge distance from each probe point to the image set."""
    return gmap.codomain.cross_dist(np.atleast_2d(probes), gmap.values).min(axis=1)


def _classical_mds(dist: np.ndarray, dim: int) -> np.ndarray:
    """Classical MDS coordinates from a distance matrix (top `dim` components)."""
    m = dist.shape[0]
    h = np.eye(m) - np.ones((m, m)) / m
    b = -0.5 * h @ (dist ** 2) @ h
    evals, evecs = np.linalg.eigh(b)
    idx = np.argsort(evals)[::-1][:dim]
    lam = np.clip(evals[idx], 0.0, None)
    coords = evecs[:, idx] * np.sqrt(lam)
    if coords.shape[1] < dim:
        coords = np.pad(coords, ((0, 0), (0, dim - coords.shape[1])))
    return coords


def _gauge_subgradient(norm: GaugeNorm, v: np.ndarray) -> np.ndarray:
    """A subgradient of the gauge at v (dual vector u with <u,v> = gauge(v))."""
    g = float(norm.eval(v))
    if g <= 0:
        return np.zeros_like(v)
    if norm.kind == "ellipsoidal":
        return norm.form @ v / g
    a, b = norm._facets
    scores = (a @ v) / b
    j = int(np.argmax(scores))
    return a[j] / b[j]


def _sup_distortion_refine(
    coords: np.ndarray,
    dom_dist: np.ndarray,
    norm: GaugeNorm,
    iters: int,
    step0: float = 0.5,
) -> np.ndarray:
    """Subgradient descent on the sup distance-distortion of the embedding.

    Only the worst pair moves per iteration, so the residual matrix is
    updated incrementally (two rows per step)."""
    x = coords.copy()
    m = len(x)
    if m < 2:
        return x
    resid = norm.cross_dist(x, x) - dom_dist
    np.fill_diagonal(resid, 0.0)
    for k in range(1, iters + 1):
        w = int(np.abs(resid).argmax())
        i, j = divmod(w, m)
        r = resid[i, j]
        if abs(r) < 1e-15:
            break
        u = _gauge_subgradient(norm, x[i] - x[j])
        step = step0 / k * r / max(float(np.linalg.norm(u)) ** 2, 1e-12)
        x[i] -= 0.5 * step * u
        x[j] += 0.5 * step * u
        for idx in (i, j):
            row = norm.cross_dist(x[idx][None, :], x)[0] - dom_dist[idx]
            row[idx] = 0.0
            resid[idx, :] = row
            resid[:, idx] = row
    return x


def _placement_objective(
    coords: np.ndarray,
    dom: np.ndarray,
    norm: GaugeNorm,
    radius: float,
    probes: np.ndarray,
) -> float:
    vals = clamp_to_ball(norm, np.zeros(coords.shape[1]), radius, coords)
    img = norm.cross_dist(vals, vals)
    iso = float(np.abs(dom - img).max()) if len(vals) > 1 else 0.0
    dens = float(norm.cross_dist(probes, vals).min(axis=1).max())
    return iso + dens


def fit_gha(
    space: FiniteMetricSpace,
    ball: Ball,
    norm: GaugeNorm,
    n: int | None = None,
    iters: int = 200,
    tau: float = DENSITY_TAU_DEFAULT,
    scale_search: bool = True,
    shift_search: bool = True,
) -> tuple[GhaMap, GhaCertificate]:
    """Fit a map from a space ball into the gauge ball of the same radius.

    Classical MDS on the ball's distance submatrix initializes coordinates;
    subgradient refinement lowers the sup distortion; a scale and translation
    search then trades isometry against codomain coverage before clamping.
    The returned certificate is a measurement, not a promise.
    """
    n = n or norm.dim
    ids = space.ball_points(ball.center, ball.radius)
    dom = space.subspace_dist(ids)
    center_index = int(np.flatnonzero(ids == ball.center)[0])
    coords = _classical_mds(dom, n)
    coords = _sup_distortion_refine(coords, dom, norm, iters)
    coords = coords - coords[center_index]
    r = ball.radius
    coarse_probes = norm.covering_lattice(r, max(tau, 0.05), max_points=4000)
    if scale_search and len(ids) > 1:
        best, best_val = 1.0, np.inf
        for s in np.linspace(0.85, 1.2, 8):
            val = _placement_objective(coords * s, dom, norm, r, coarse_probes)
            if val < best_val:
                best, best_val = s, val
        coords = coords * best
    if shift_search and len(ids) > 1:
        from scipy.optimize import minimize

        def shifted(t: np.ndarray) -> float:
            return _placement_objective(coords + t, dom, norm, r, coarse_probes)

        starts = [np.zeros(n), -coords.mean(axis=0)]
        best_t, best_val = np.zeros(n), shifted(np.zeros(n))
        for t0 in starts:
            res = minimize(
                shifted, t0, method="Nelder-Mead",
                options={"maxfev": 80 * n, "xatol": 1e-3 * r, "fatol": 1e-4 * r},
            )
            if res.fun < best_val:
                best_t, best_val = res.x, res.fun
        coords = coords + best_t
    values = clamp_to_ball(norm, np.zeros(n), r, coords)
    gmap = GhaMap(
        dom_dist=dom,
        values=values,
        codomain=norm,
        cod_center=np.zeros(n),
        radius=r,
        dom_center_index=center_index,
        dom_ids=ids,
    )
    return gmap, gha_defects(gmap, tau=tau)


def regularize_gha(
    gmap: GhaMap, delta: float, n: int | None = None, tau: float = DENSITY_TAU_DEFAULT
) -> tuple[GhaMap, GhaCertificate, dict]:
    """Replace a rough map with a Lipschitz one at controlled extra defect.

    Restricts to a maximal (delta*r)-separated subset of the domain, where the
    input is automatically 2-Lipschitz, extends by the McShane construction,
    and clamps back into the codomain ball.  The output's measured Lipschitz
    constant and displacement from the input are returned and must satisfy the
    20n and 20*n*delta*r budgets.
    """
    r = gmap.radius
    n = n or gmap.dim
    cert = gha_defects(gmap, tau=tau)
    if cert.iso_defect > delta * r * (1 + 1e-9):
        raise ValueError(
            f"regularize_gha precondition: iso defect {cert.iso_defect:.4g} exceeds delta*r = {delta * r:.4g}"
        )
    sep = delta * r
    keep: list[int] = []
    mind = np.full(gmap.size, np.inf)
    order = np.concatenate([[gmap.dom_center_index], np.arange(gmap.size)])
    for idx in order:
        if mind[idx] >= sep:
            keep.append(int(idx))
            np.minimum(mind, gmap.dom_dist[idx], out=mind)
    keep_arr = np.array(keep)
    anchor_dist = gmap.dom_dist[np.ix_(keep_arr, keep_arr)]
    cross = gmap.dom_dist[keep_arr]
    ext = lipschitz_extend(
        anchor_dist, cross, gmap.values[keep_arr], 2.0, gmap.codomain, tol=1e-7
    )
    values = clamp_to_ball(gmap.codomain, gmap.cod_center, r, ext)
    out = GhaMap(
        dom_dist=gmap.dom_dist,
        values=values,
        codomain=gmap.codomain,
        cod_center=gmap.cod_center,
        radius=r,
        dom_center_index=gmap.dom_center_index,
        dom_ids=gmap.dom_ids,
        dom_points=gmap.dom_points,
        dom_norm=gmap.dom_norm,
    )
    out_cert = gha_defects(out, tau=tau)
    displacement = float(
        np.max(np.asarray(gmap.codomain.eval(values - gmap.values)))
    )
    diag = {
        "lipschitz": out.lipschitz_measured(),
        "displacement": displacement,
        "lipschitz_budget": 20.0 * n,
        "displacement_budget": 20.0 * n * delta * r,
        "net_size": len(keep),
    }
    return out, out_cert, diag


def compose_gha(
    f: GhaMap, g: GhaMap, tau: float = DENSITY_TAU_DEFAULT
) -> tuple[GhaMap, GhaCertificate, dict]:
    """Composite map g o f with a measured certificate and defect accounting.

    f's images are snapped to g's nearest domain points (snap distances
    reported); the composite's measured defects are returned alongside the
    triangle-inequality bounds built from the two input certificates.
    """
    if g.dom_points is None:
        raise ValueError("g must have a normed domain with stored points")
    if f.dim != g.dom_points.shape[1]:
        raise ValueError("codomain of f does not match domain of g")
    snap_idx = []
    snap_d = []
    gauge = g.dom_norm or f.codomain
    for v in f.values:
        d = np.asarray(gauge.eval(g.dom_points - v))
        j = int(d.argmin())
        snap_idx.append(j)
        snap_d.append(float(d[j]))
    snap_idx = np.asarray(snap_idx)
    values = g.values[snap_idx]
    out = GhaMap(
        dom_dist=f.dom_dist,
        values=values,
        codomain=g.codomain,
        cod_center=g.cod_center,
        radius=g.radius,
        dom_center_index=f.dom_center_index,
        dom_ids=f.dom_ids,
        dom_points=f.dom_points,
        dom_norm=f.dom_norm,
    )
    cert = gha_defects(out, tau=tau)
    f_cert = gha_defects(f, tau=tau)
    g_cert = gha_defects(g, tau=tau)
    delta = f_cert.total
    eps = g_cert.total
    # how well f's image covers g's domain sample: the link term in the chain
    link = 0.0
    for p in g.dom_points:
        link = max(link, float(np.min(np.asarray(gauge.eval(f.values - p)))))
    diag = {
        "snap_max": float(max(snap_d)) if snap_d else 0.0,
        "delta": delta,
        "eps": eps,
        "bound_iso": delta + eps,
        "bound_density": delta + 2 * eps,
        "link_defect": link,
    }
    return out, cert, diag


def rescale_gha(
    gmap: GhaMap,
    space: FiniteMetricSpace,
    sub_center: int,
    alpha: float,
    tau: float = DENSITY_TAU_DEFAULT,
) -> tuple[GhaMap, GhaCertificate, dict]:
    """Restrict a ball map to a sub-ball and recentre its codomain.

    Returns the clamped restriction onto B(phi(z), alpha*r) together with the
    measured certificate and the pointwise-displacement / centre-drift
    diagnostics (the 1x and 10x delta*r bounds of the calculus).
    """
    if gmap.dom_ids is None:
        raise ValueError("rescale_gha needs a space-ball domain")
    r = gmap.radius
    in_cert = gha_defects(gmap, tau=tau)
    delta = in_cert.total / r
    if not 2 * delta < alpha:
        raise ValueError(f"need 2*delta < alpha: delta={delta:.4g}, alpha={alpha}")
    sub_ids = space.ball_points(sub_center, alpha * r)
    id_to_row = {int(pid): i for i, pid in enumerate(gmap.dom_ids)}
    missing = [int(p) for p in sub_ids if int(p) not in id_to_row]
    if missing:
        raise ValueError(f"sub-ball escapes the map's domain: {len(missing)} points outside")
    rows = np.array([id_to_row[int(p)] for p in sub_ids])
    z_row = id_to_row[sub_center]
    z_img = gmap.values[z_row]
    vals = clamp_to_ball(gmap.codomain, z_img, alpha * r, gmap.values[rows])
    out = GhaMap(
        dom_dist=space.subspace_dist(sub_ids),
        values=vals,
        codomain=gmap.codomain,
        cod_center=z_img,
        radius=alpha * r,
        dom_center_index=int(np.flatnonzero(sub_ids == sub_center)[0]),
        dom_ids=sub_ids,
    )
    cert = gha_defects(out, tau=tau)
    move = float(np.max(np.asarray(gmap.codomain.eval(vals - gmap.values[rows]))))
    centre_drift = float(
        gmap.codomain.eval(gmap.values[gmap.dom_center_index] - gmap.cod_center)
    )
    diag = {
        "displacement": move,
        "displacement_budget": delta * r,
        "centre_drift": centre_drift,
        "centre_budget": 10 * delta * r,
        "defect_budget": 50 * delta * r,
    }
    return out, cert, diag


def linearize_gha(
    gmap: GhaMap,
    iters: int = 200,
    flag_threshold: float = 0.2,
) -> tuple[AffineMap, float, bool]:
    """Best-effort affine approximation of a map between normed balls.

    Least-squares regression followed by subgradient Chebyshev refinement on
    the sup deviation.  Returns the certified affine map, the measured sup
    deviation, and whether it stayed under `flag_threshold * radius`.
    """
    if gmap.dom_points is None or gmap.dom_norm is None:
        raise ValueError("linearize_gha needs a normed domain")
    x = gmap.dom_points
    y = gmap.values
    m, dim = x.shape
    xc = x - x.mean(axis=0)
    if np.linalg.matrix_rank(xc, tol=1e-10 * max(1.0, np.abs(x).max())) < dim:
        raise ValueError("rank-deficient regression: domain points do not span")
    design = np.column_stack([x, np.ones(m)])
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    a = sol[:dim].T
    b = sol[dim]
    cod = gmap.codomain
    best_a, best_b = a.copy(), b.copy()
    best_dev = float(np.max(np.asarray(cod.eval(y - (x @ a.T + b)))))
    for k in range(1, iters + 1):
        resid = y - (x @ a.T + b)
        norms = np.asarray(cod.eval(resid))
        i = int(norms.argmax())
        if norms[i] <= 0:
            break
        u = _gauge_subgradient(cod, resid[i])
        denom = 1.0 + float(x[i] @ x[i])
        step = (0.5 / k) * norms[i] / max(float(u @ u), 1e-12) / denom
        a += step * np.outer(u, x[i])
        b += step * u
        dev = float(np.max(np.asarray(cod.eval(y - (x @ a.T + b)))))
        if dev < best_dev:
            best_dev = dev
            best_a, best_b = a.copy(), b.copy()
    affine = certify_affine(best_a, best_b, gmap.dom_norm, cod)
    return affine, best_dev, best_dev <= flag_threshold * gmap.radius


def make_normed_gha(
    dom_norm: GaugeNorm,
    dom_points: np.ndarray,
    values: np.ndarray,
    codomain: GaugeNorm,
    cod_center: np.ndarray,
    radius: float,
    dom_center: np.ndarray | None = None,
) -> GhaMap:
    """GhaMap whose domain is a sample of a normed ball."""
    dom_points = np.atleast_2d(np.asarray(dom_points, dtype=float))
    diff = dom_points[:, None, :] - dom_points[None, :, :]
    dd = np.asarray(dom_norm.eval(diff.reshape(-1, dom_points.shape[1]))).reshape(
        len(dom_points), len(dom_points)
    )
    ci = 0
    if dom_center is not None:
        ci = int(np.argmin(np.asarray(dom_norm.eval(dom_points - dom_center))))
    return GhaMap(
        dom_dist=dd,
        values=values,
        codomain=codomain,
        cod_center=np.asarray(cod_center, dtype=float),
        radius=radius,
        dom_center_index=ci,
        dom_points=dom_points,
        dom_norm=dom_norm,
    )
