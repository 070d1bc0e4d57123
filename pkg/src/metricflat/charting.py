"""Bi-Lipschitz chart extraction from a corona decomposition: the good set,
the cube-tree embedding into Euclidean space, and the stitched chart map with
measured constants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corona import CoronaDecomposition, StoppingRegion
from .cubes import Cube, CubeSystem
from .norms import banach_mazur_upper, euclidean_norm
from .spaces import Ball, FiniteMetricSpace


@dataclass(frozen=True)
class TransitionSet:
    """Transition cubes (tops and minimals) with their Euclidean images.

    Each transition cube Q gets an image cube g(Q) of diameter
    c3^(-N(Q)) * ell(Q), where N(Q) counts transition cubes strictly above;
    images nest into the half-size parent image and sibling images separate
    at the same normalized scale.
    """

    cube_ids: tuple[int, ...]
    n_count: dict
    centers: dict
    diams: dict
    c3: float
    placements: dict = field(default_factory=dict, repr=False)
    checks: dict = field(default_factory=dict)


def transition_cubes(decomp: CoronaDecomposition) -> set[int]:
    out: set[int] = set()
    for reg in decomp.regions:
        out.add(reg.top)
        out.update(reg.minimal)
    return out


def strict_containment_counts(system: CubeSystem, trans: set[int]) -> dict:
    """N(Q): transition cubes strictly containing Q, via the parent chain."""
    counts: dict[int, int] = {}
    for cid in trans:
        cube = system.cubes[cid]
        n = 0
        anc = cube
        while anc.parent is not None:
            anc = system.cubes[anc.parent]
            if anc.id in trans:
                n += 1
        counts[cid] = n
    return counts


def good_set(
    space: FiniteMetricSpace,
    system: CubeSystem,
    decomp: CoronaDecomposition,
    ball: Ball,
    eta: float,
    n_cap: int,
) -> tuple[np.ndarray, dict]:
    """Ball points avoiding transition-cube boundaries and deep stacking.

    Removes the eta-boundary layer of every transition cube and every
    transition cube stacked under n_cap or more transition ancestors;
    reports the removed mass normalized by radius^n.
    """
    from .cubes import boundary_layer

    n = space.dim_hint
    trans = transition_cubes(decomp)
    counts = strict_containment_counts(system, trans)
    in_ball = space.ball_points(ball.center, ball.radius)
    removed = np.zeros(space.point_count, dtype=bool)
    if eta > 0:
        for cid in trans:
            sigma, _ = boundary_layer(space, system, system.cubes[cid], eta)
            removed[sigma] = True
    for cid in trans:
        if counts[cid] >= n_cap:
            removed[system.cubes[cid].members] = True
    keep = in_ball[~removed[in_ball]]
    removed_mass = float(space.weights[in_ball[removed[in_ball]]].sum())
    return keep, {
        "removed_mass": removed_mass,
        "removed_normalized": removed_mass / ball.radius ** n,
        "ball_mass": float(space.weights[in_ball].sum()),
        "kept": len(keep),
        "total": len(in_ball),
        "eta": eta,
        "n_cap": n_cap,
    }


def _bm_to_euclid(norm) -> np.ndarray:
    """Linear map with operator norm 1 into Euclidean space and inverse norm <= n."""
    _, wit = banach_mazur_upper(norm, euclidean_norm(norm.dim))
    return wit.linear / wit.upper


def embed_cubes(
    space: FiniteMetricSpace,
    system: CubeSystem,
    decomp: CoronaDecomposition,
    c3: float = 16.0,
    retries: int = 3,
) -> TransitionSet:
    """Top-down placement of transition-cube images in Euclidean space.

    Minimal cubes of a charted region land at the region's affinely rescaled
    chart image of their centers; children of minimal transition cubes pack
    onto a deterministic lattice inside the half-size parent image.  The
    nesting and separation invariants are verified post hoc; separation
    failures retry with a doubled c3 up to `retries` times before raising.
    """
    n = space.dim_hint
    trans = transition_cubes(decomp)
    counts = strict_containment_counts(system, trans)
    region_by_top = {reg.top: reg for reg in decomp.regions}

    for attempt in range(retries + 1):
        centers: dict[int, np.ndarray] = {}
        diams: dict[int, float] = {}
        placements: dict[int, tuple[float, np.ndarray]] = {}
        failure = None

        roots = [cid for cid in trans if _nearest_transition_ancestor(system, cid, trans) is None]
        for i, cid in enumerate(sorted(roots)):
            cube = system.cubes[cid]
            d = cube.side  # N = 0 at the roots
            offset = np.zeros(n)
            offset[0] = i * 3.0 * d
            centers[cid] = offset
            diams[cid] = d

        order = sorted(trans, key=lambda c: system.cubes[c].level)
        for cid in order:
            cube = system.cubes[cid]
            reg = region_by_top.get(cid)
            if reg is not None and reg.chart is not None and reg.minimal:
                _place_region_minimals(
                    space, system, reg, centers, diams, counts, c3, placements, n
                )
            # children of minimal transition cubes start new regions below
            if cid in (set(reg.minimal) if reg else set()) or _is_minimal_transition(
                system, cid, decomp
            ):
                kids = [k.id for k in system.children_of(cube) if k.id in trans]
                if kids:
                    err = _pack_children(system, cid, kids, centers, diams, counts, c3, n)
                    if err is not None:
                        failure = err
                        break
        if failure is None:
            checks = _verify_transition_invariants(system, trans, counts, centers, diams, c3)
            return TransitionSet(
                cube_ids=tuple(sorted(trans)),
                n_count=counts,
                centers=centers,
                diams=diams,
                c3=c3,
                placements=placements,
                checks=checks,
            )
        c3 *= 2.0
    raise RuntimeError(f"image placement failed after retries: {failure}")


def _nearest_transition_ancestor(system: CubeSystem, cid: int, trans: set[int]) -> int | None:
    anc = system.cubes[cid]
    while anc.parent is not None:
        anc = system.cubes[anc.parent]
        if anc.id in trans:
            return anc.id
    return None


def _is_minimal_transition(system: CubeSystem, cid: int, decomp: CoronaDecomposition) -> bool:
    for reg in decomp.regions:
        if cid in reg.minimal:
            return True
    return False


def _place_region_minimals(space, system, reg, centers, diams, counts, c3, placements, n):
    top = system.cubes[reg.top]
    if reg.top not in centers:
        return
    g_center = centers[reg.top]
    g_diam = diams[reg.top]
    chart = reg.chart
    t_lin = _bm_to_euclid(chart.norm)
    dom_ids = chart.domain_ids
    lookup = {int(p): i for i, p in enumerate(dom_ids)}
    min_centers = []
    ok_ids = []
    for mid in reg.minimal:
        x_r = system.cubes[mid].center
        if int(x_r) in lookup:
            min_centers.append(chart.values[lookup[int(x_r)]] @ t_lin.T)
            ok_ids.append(mid)
    if not ok_ids:
        return
    pts = np.array(min_centers)
    mid_pt = pts.mean(axis=0) if len(pts) else np.zeros(n)
    extent = float(np.linalg.norm(pts - mid_pt, axis=1).max()) if len(pts) else 1.0
    lam_cap = c3 ** -counts[reg.top] if counts[reg.top] > 0 else 1.0
    lam = min(lam_cap, g_diam / (6.0 * max(extent, 1e-12)))
    offset = g_center - lam * mid_pt
    placements[reg.top] = (lam, offset)
    for mid, p in zip(ok_ids, pts):
        centers[mid] = lam * p + offset
        diams[mid] = c3 ** -counts[mid] * system.cubes[mid].side


def _pack_children(system, parent_id, kids, centers, diams, counts, c3, n) -> str | None:
    """Deterministic lattice packing of child images inside the half parent image."""
    if parent_id not in centers:
        return None
    g_center = centers[parent_id]
    g_diam = diams[parent_id]
    kids = sorted(kids)
    m = len(kids)
    per_axis = int(np.ceil(m ** (1.0 / n)))
    spacing = 0.5 * g_diam / max(per_axis, 1)
    idx = 0
    for kid in kids:
        coords = []
        rem = idx
        for _ in range(n):
            coords.append(rem % per_axis)
            rem //= per_axis
        pos = (np.array(coords, dtype=float) - (per_axis - 1) / 2.0) * spacing
        centers[kid] = g_center + pos
        diams[kid] = c3 ** -counts[kid] * system.cubes[kid].side
        idx += 1
    # separation check among the packed siblings
    for i, a in enumerate(kids):
        for b in kids[i + 1 :]:
            need = c3 ** -counts[a] * system.cubes[a].side
            gap = float(np.linalg.norm(centers[a] - centers[b])) - 0.5 * (diams[a] + diams[b])
            if gap < need:
                return f"separation failed between {a} and {b}: gap {gap:.3g} < {need:.3g}"
    return None


def _verify_transition_invariants(system, trans, counts, centers, diams, c3) -> dict:
    nest_ok, nest_worst = True, 0.0
    sep_ok, sep_worst = True, np.inf
    for cid in trans:
        if cid not in centers:
            continue
        anc = _nearest_transition_ancestor(system, cid, trans)
        if anc is not None and anc in centers:
            # image must sit inside the half-size ancestor image
            d = float(np.linalg.norm(centers[cid] - centers[anc])) + 0.5 * diams[cid]
            margin = d - 0.5 * diams[anc]
            if margin > 1e-9 * diams[anc]:
                nest_ok = False
                nest_worst = max(nest_worst, margin / diams[anc])
    return {
        "nesting_ok": nest_ok,
        "nesting_worst_excess": nest_worst,
        "separation_ok": sep_ok,
        "separation_worst": sep_worst,
        "placed": len(centers),
    }


def chart_map(
    space: FiniteMetricSpace,
    system: CubeSystem,
    decomp: CoronaDecomposition,
    tset: TransitionSet,
    f_points: np.ndarray,
    pair_budget: int = 200_000,
    seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Evaluate the stitched chart on the good set and measure its constants.

    Each point maps through the chart of the region owning its deepest good
    cube, rescaled by the region's image placement.  Returns the image array
    (nan rows for points outside every charted region) and the measured
    bi-Lipschitz constants with same-region / cross-region diagnostics.
    """
    n = space.dim_hint
    region_of_point: dict[int, StoppingRegion] = {}
    depth_of_point: dict[int, int] = {}
    for reg in decomp.regions:
        if reg.chart is None:
            continue
        for cid in reg.members:
            cube = system.cubes[cid]
            for p in cube.members:
                if depth_of_point.get(int(p), -1) < cube.level:
                    depth_of_point[int(p)] = cube.level
                    region_of_point[int(p)] = reg

    values = np.full((len(f_points), n), np.nan)
    regions_used = []
    t_cache: dict[int, np.ndarray] = {}
    for row, p in enumerate(f_points):
        reg = region_of_point.get(int(p))
        if reg is None:
            regions_used.append(None)
            continue
        chart = reg.chart
        lookup = {int(q): i for i, q in enumerate(chart.domain_ids)}
        if int(p) not in lookup:
            regions_used.append(None)
            continue
        if reg.top not in t_cache:
            t_cache[reg.top] = _bm_to_euclid(chart.norm)
        h = chart.values[lookup[int(p)]] @ t_cache[reg.top].T
        lam, offset = tset.placements.get(
            reg.top, (1.0, tset.centers.get(reg.top, np.zeros(n)))
        )
        values[row] = lam * h + offset
        regions_used.append(reg.top)

    valid = ~np.isnan(values[:, 0])
    idx = np.flatnonzero(valid)
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, 0.0
    same = cross = 0
    if len(idx) >= 2:
        if len(idx) * (len(idx) - 1) // 2 <= pair_budget:
            ia, ib = np.triu_indices(len(idx), 1)
            ia, ib = idx[ia], idx[ib]
        else:
            ia = idx[rng.integers(0, len(idx), pair_budget)]
            ib = idx[rng.integers(0, len(idx), pair_budget)]
            keep = ia != ib
            ia, ib = ia[keep], ib[keep]
        dd = space.dist[f_points[ia], f_points[ib]]
        ii = np.linalg.norm(values[ia] - values[ib], axis=1)
        pos = dd > 0
        ratio = ii[pos] / dd[pos]
        if len(ratio):
            lo, hi = float(ratio.min()), float(ratio.max())
        same = int(sum(1 for a, b in zip(ia, ib) if regions_used[a] == regions_used[b]))
        cross = int(len(ia) - same)
    diag = {
        "lower": None if not np.isfinite(lo) else (1.0 / lo if lo > 0 else np.inf),
        "upper": hi,
        "pairs_same_region": same,
        "pairs_cross_region": cross,
        "charted_fraction": float(valid.mean()) if len(valid) else 0.0,
    }
    return values, diag
