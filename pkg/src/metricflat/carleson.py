"""Carleson packing statistics, threshold reports for the flatness and
affine-approximation fields, and the mass-counting check."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .coefficients import CoefficientRecord, gamma_upper, xi_for_cube
from .cubes import Cube, CubeSystem
from .spaces import FiniteMetricSpace


@dataclass(frozen=True)
class PackingReport:
    """Normalized side-length mass of a cube family inside every root."""

    threshold: float
    bad_ids: tuple[int, ...]
    per_root: dict
    packing_norm: float
    per_level_bad_fraction: tuple[float, ...]
    skipped_ids: tuple[int, ...] = ()
    upper_bound_note: str = (
        "coefficients are certified upper bounds; the bad family may "
        "over-approximate the true one"
    )


def packing_norm(system: CubeSystem, family, n: int | None = None, threshold: float = 0.0) -> PackingReport:
    """Exact packing sums of `family` (cube ids) over every root cube.

    The packing norm is the max over all cubes Q0 of
    sum_{Q in family, Q subset Q0} ell(Q)^n / ell(Q0)^n.
    """
    fam = set(int(f) for f in family)
    for f in fam:
        if f not in system.cubes:
            raise KeyError(f"foreign cube id {f}")
    if n is None:
        n = 2
    mass: dict[int, float] = {}
    worst = 0.0
    per_root: dict[int, float] = {}
    for level in range(system.depth - 1, -1, -1):
        for cid in system.levels[level]:
            cube = system.cubes[cid]
            m = sum(mass.get(ch, 0.0) for ch in cube.children)
            if cid in fam:
                m += cube.side ** n
            mass[cid] = m
            norm_here = m / cube.side ** n
            worst = max(worst, norm_here)
            if level == 0:
                per_root[cid] = norm_here
    frac = []
    for level in range(system.depth):
        ids = system.levels[level]
        bad = sum(1 for c in ids if c in fam)
        frac.append(bad / len(ids) if ids else 0.0)
    return PackingReport(
        threshold=threshold,
        bad_ids=tuple(sorted(fam)),
        per_root=per_root,
        packing_norm=worst,
        per_level_bad_fraction=tuple(frac),
    )


def evaluable_cubes(
    space: FiniteMetricSpace, system: CubeSystem, dilation: float
) -> tuple[list[Cube], list[Cube]]:
    """Split cubes into coefficient-evaluable and out-of-scale-range.

    A cube is evaluable when its dilated radius does not exceed the central
    point's eccentricity: beyond that the ball saturates to the whole space
    while the codomain ball keeps growing, a finite-extent artifact outside
    the (0, diam) scale range the coefficients are defined on.
    """
    good, skipped = [], []
    for cube in system.all_cubes():
        if dilation * cube.side <= space.eccentricity(cube.center):
            good.append(cube)
        else:
            skipped.append(cube)
    return good, skipped


def compute_xi_field(
    space: FiniteMetricSpace,
    system: CubeSystem,
    dilation: float = 3.0,
    n: int | None = None,
    threads: int | None = None,
    **xi_kwargs,
) -> dict[int, CoefficientRecord]:
    """xi record for every evaluable cube at the given dilation (parallel)."""
    n = n or space.dim_hint
    good, _ = evaluable_cubes(space, system, dilation)
    recs = parallel_map(
        lambda c: xi_for_cube(space, c, dilation, n, **xi_kwargs), good, threads
    )
    return {c.id: r for c, r in zip(good, recs)}


def bwgl_report(
    space: FiniteMetricSpace,
    system: CubeSystem,
    eps_list,
    dilation: float = 3.0,
    n: int | None = None,
    records: dict[int, CoefficientRecord] | None = None,
    threads: int | None = None,
    **xi_kwargs,
) -> tuple[dict[float, PackingReport], dict[int, CoefficientRecord]]:
    """Per-threshold packing reports for the bilateral flatness field.

    The bad family at eps is every evaluable cube whose certified xi upper
    bound exceeds eps (an over-approximation of the true bad family).  Cubes
    whose dilated radius is out of scale range are reported as skipped.
    """
    n = n or space.dim_hint
    if records is None:
        records = compute_xi_field(space, system, dilation, n, threads, **xi_kwargs)
    _, skipped = evaluable_cubes(space, system, dilation)
    skipped_ids = tuple(sorted(c.id for c in skipped))
    out = {}
    for eps in eps_list:
        fam = [cid for cid, rec in records.items() if rec.xi > eps]
        rep = packing_norm(system, fam, n, threshold=eps)
        out[eps] = PackingReport(
            threshold=eps,
            bad_ids=rep.bad_ids,
            per_root=rep.per_root,
            packing_norm=rep.packing_norm,
            per_level_bad_fraction=_level_fraction(system, fam, skipped_ids),
            skipped_ids=skipped_ids,
        )
    return out, records


def _level_fraction(system: CubeSystem, fam, skipped_ids) -> tuple[float, ...]:
    """Bad fraction per level among the evaluated (non-skipped) cubes."""
    fam = set(fam)
    skipped = set(skipped_ids)
    out = []
    for level in range(system.depth):
        ids = [c for c in system.levels[level] if c not in skipped]
        bad = sum(1 for c in ids if c in fam)
        out.append(bad / len(ids) if ids else 0.0)
    return tuple(out)


def gamma_carleson_report(
    space: FiniteMetricSpace,
    system: CubeSystem,
    f_values: np.ndarray,
    cod_norm,
    lip_cap: float,
    eps_list,
    dilation: float = 3.0,
    n: int | None = None,
    threads: int | None = None,
    **xi_kwargs,
) -> tuple[dict[float, PackingReport], dict[int, CoefficientRecord]]:
    """Per-threshold packing reports for the affine-approximation field."""
    n = n or space.dim_hint
    good, skipped = evaluable_cubes(space, system, dilation)
    from .spaces import Ball

    def run(cube: Cube) -> CoefficientRecord:
        return gamma_upper(
            space,
            Ball(cube.center, dilation * cube.side),
            f_values,
            cod_norm,
            lip_cap,
            n,
            cube_id=cube.id,
            dilation=dilation,
            **xi_kwargs,
        )

    recs = parallel_map(run, good, threads)
    records = {c.id: r for c, r in zip(good, recs)}
    skipped_ids = tuple(sorted(c.id for c in skipped))
    out = {}
    for eps in eps_list:
        fam = [cid for cid, rec in records.items() if rec.gamma > eps]
        rep = packing_norm(system, fam, n, threshold=eps)
        out[eps] = PackingReport(
            threshold=eps,
            bad_ids=rep.bad_ids,
            per_root=rep.per_root,
            packing_norm=rep.packing_norm,
            per_level_bad_fraction=_level_fraction(system, fam, skipped_ids),
            skipped_ids=skipped_ids,
        )
    return out, records


def ds_counting_check(
    space: FiniteMetricSpace,
    system: CubeSystem,
    alpha: dict[int, float],
    count_cap: float,
    root: Cube,
    n: int | None = None,
) -> dict:
    """Mass of the low-count set and the weighted packing sum under a root.

    For each point x in the root, counts sum_{Q containing x, Q <= root}
    alpha(Q); reports weight({x : count <= cap}) and
    sum_{Q <= root} alpha(Q) ell(Q)^n.
    """
    n = n or space.dim_hint
    counts = np.zeros(space.point_count)
    packing = 0.0
    for cube in system.descendants(root):
        a = float(alpha.get(cube.id, 0.0))
        if a:
            counts[cube.members] += a
            packing += a * cube.side ** n
    members = root.members
    low = members[counts[members] <= count_cap]
    return {
        "low_count_weight": float(space.weights[low].sum()),
        "root_weight": float(space.weights[members].sum()),
        "packing_sum": packing,
        "normalized_packing": packing / root.side ** n,
    }


def carleson_mass_mc(
    space: FiniteMetricSpace,
    indicator,
    n: int | None = None,
    samples: int = 10_000,
    seed: int = 0,
    r_min: float | None = None,
    roots: int = 8,
) -> dict:
    """Monte-Carlo Carleson-norm estimate of a set of (point, scale) pairs.

    `indicator(point_id, r)` marks membership.  Scales are log-uniform with
    dr/r weighting; root pairs (x, R) are sampled and the max of
    mass(B(x,R) x (0,R)) / R^n is reported.
    """
    n = n or space.dim_hint
    rng = np.random.default_rng(seed)
    diam = space.diameter
    if r_min is None:
        pos = space.dist[space.dist > 0]
        r_min = float(pos.min()) if len(pos) else diam / 100
    root_centers = rng.integers(0, space.point_count, roots)
    out_norm = 0.0
    per_root = []
    total_w = space.weights.sum()
    for x0 in root_centers:
        big_r = diam
        in_ball = space.dist[x0] <= big_r
        w_ball = space.weights[in_ball]
        ids_ball = np.flatnonzero(in_ball)
        m = samples // roots
        ys = rng.choice(ids_ball, m, p=w_ball / w_ball.sum())
        log_lo, log_hi = np.log(r_min), np.log(big_r)
        rs = np.exp(rng.uniform(log_lo, log_hi, m))
        hits = np.fromiter(
            (1.0 if indicator(int(y), float(r)) else 0.0 for y, r in zip(ys, rs)),
            dtype=float,
            count=m,
        )
        # E[ 1_A dH dr/r ] over the sampling measure: weight mass x log-range
        mass = hits.mean() * float(w_ball.sum()) * (log_hi - log_lo)
        val = mass / big_r ** n
        per_root.append(val)
        out_norm = max(out_norm, val)
    return {
        "carleson_norm": out_norm,
        "per_root": per_root,
        "samples": samples,
        "r_min": r_min,
        "total_weight": float(total_w),
    }
