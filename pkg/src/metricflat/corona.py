"""Corona decompositions: stopping-time regions over a cube system, the
flatness-threshold and chart-contraction constructions, two-sided chart
verification, and composition of two corona layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .carleson import PackingReport, evaluable_cubes, packing_norm
from .coefficients import CoefficientRecord, gamma_upper, xi_for_cube
from .cubes import Cube, CubeSystem
from .gha import GhaMap, fit_gha, gha_defects, regularize_gha
from .norms import GaugeNorm
from .spaces import Ball, FiniteMetricSpace


@dataclass(frozen=True)
class RegionChart:
    """Chart for a stopping-time region: point ids of the chart domain and
    their images, either in a normed space or in a metric space (for corona
    layers whose model spaces are themselves finite metric spaces)."""

    domain_ids: np.ndarray
    norm: GaugeNorm | None = None
    values: np.ndarray | None = None
    target_space: FiniteMetricSpace | None = field(default=None, repr=False)
    target_ids: np.ndarray | None = None

    def image_dist(self, rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
        if self.norm is not None:
            return self.norm.cross_dist(self.values[rows_a], self.values[rows_b])
        ids_a = self.target_ids[rows_a]
        ids_b = self.target_ids[rows_b]
        return self.target_space.dist[np.ix_(ids_a, ids_b)]

    def row_of(self, point_ids: np.ndarray) -> np.ndarray:
        lookup = {int(p): i for i, p in enumerate(self.domain_ids)}
        return np.array([lookup[int(p)] for p in point_ids])


@dataclass(frozen=True)
class StoppingRegion:
    top: int
    members: frozenset
    minimal: tuple[int, ...]
    chart: RegionChart | None = None

    @property
    def singleton(self) -> bool:
        return len(self.members) == 1 and self.chart is None


@dataclass(frozen=True)
class CoronaDecomposition:
    good_ids: frozenset
    bad_ids: frozenset
    regions: tuple[StoppingRegion, ...]
    params: dict
    packing_bad: PackingReport
    packing_tops: PackingReport
    records: dict = field(default_factory=dict, repr=False)

    def region_of(self, cube_id: int) -> StoppingRegion | None:
        for reg in self.regions:
            if cube_id in reg.members:
                return reg
        return None


def check_region(system: CubeSystem, region: StoppingRegion) -> None:
    """Assert the three stopping-time conditions exactly."""
    top = system.cubes[region.top]
    assert region.top in region.members
    for cid in region.members:
        cube = system.cubes[cid]
        # top containment via ancestor chain
        anc = cube
        chain = {cube.id}
        while anc.parent is not None and anc.id != top.id:
            anc = system.cubes[anc.parent]
            chain.add(anc.id)
        assert anc.id == top.id, "member not below the top cube"
        # ancestor closure: everything on the chain up to the top is a member
        assert chain <= set(region.members) | {top.id}, "ancestor closure violated"
        # sibling closure
        if cube.id != top.id:
            for sib in system.siblings_of(cube):
                assert sib.id in region.members, "sibling closure violated"
    for cid in region.minimal:
        cube = system.cubes[cid]
        assert cid in region.members
        assert all(ch not in region.members for ch in cube.children)


def check_decomposition(system: CubeSystem, decomp: CoronaDecomposition) -> None:
    seen: set[int] = set()
    for reg in decomp.regions:
        check_region(system, reg)
        assert not (seen & reg.members), "regions overlap"
        seen |= reg.members
    assert seen == set(decomp.good_ids), "regions do not partition the good family"
    every = {c.id for c in system.all_cubes()}
    assert set(decomp.good_ids) | set(decomp.bad_ids) == every
    assert not (set(decomp.good_ids) & set(decomp.bad_ids))


def _grow_region(system: CubeSystem, top: Cube, is_good) -> tuple[frozenset, tuple[int, ...]]:
    """Grow a stopping region from `top`: a cube joins when its parent is a
    member and every sibling is good."""
    members = {top.id}
    frontier = [top]
    minimal = []
    while frontier:
        cube = frontier.pop()
        children = system.children_of(cube)
        if children and all(is_good(ch.id) for ch in children):
            for ch in children:
                members.add(ch.id)
                frontier.append(ch)
        else:
            minimal.append(cube.id)
    return frozenset(members), tuple(sorted(minimal))


def _maximal_good_under(system: CubeSystem, roots: list[Cube], is_good) -> list[Cube]:
    """Maximal good cubes at or below the given cubes."""
    out = []
    stack = list(roots)
    while stack:
        cube = stack.pop()
        if is_good(cube.id):
            out.append(cube)
        else:
            stack.extend(system.children_of(cube))
    return out


def region_chart(
    space: FiniteMetricSpace,
    system: CubeSystem,
    top: Cube,
    n: int,
    chart_dilation: float = 3.0,
    delta_reg: float | None = None,
    record: CoefficientRecord | None = None,
    **xi_kwargs,
) -> RegionChart:
    """Lipschitz-regularized chart on the dilated top ball.

    The chart is the region's flatness witness pushed through the Lipschitz
    regularization, so its upper Lipschitz bound is controlled by 20n.
    """
    if record is None:
        record = xi_for_cube(space, top, chart_dilation, n, **xi_kwargs)
    gmap = record.witness_map
    cert = record.certificate
    delta = delta_reg if delta_reg is not None else max(
        cert.iso_defect / gmap.radius, 0.02
    )
    reg, _, _ = regularize_gha(gmap, delta, n)
    return RegionChart(domain_ids=gmap.dom_ids, norm=record.witness_norm, values=reg.values)


def build_corona_flatness(
    space: FiniteMetricSpace,
    system: CubeSystem,
    delta: float,
    dilation: float = 4.0,
    n: int | None = None,
    chart_dilation: float = 3.0,
    records: dict[int, CoefficientRecord] | None = None,
    threads: int | None = None,
    with_charts: bool = True,
    **xi_kwargs,
) -> CoronaDecomposition:
    """Corona decomposition by thresholding the flatness field at delta.

    Good cubes have certified xi at the stated dilation at most delta (cubes
    whose dilated ball is out of scale range count as good and are flagged);
    regions grow under sibling closure and restart below minimal cubes.
    """
    n = n or space.dim_hint
    if records is None:
        good_cubes, skipped = evaluable_cubes(space, system, dilation)
        recs = parallel_map(
            lambda c: xi_for_cube(space, c, dilation, n, **xi_kwargs), good_cubes, threads
        )
        records = {c.id: r for c, r in zip(good_cubes, recs)}
        skipped_ids = {c.id for c in skipped}
    else:
        skipped_ids = {
            c.id for c in system.all_cubes() if c.id not in records
        }

    def is_good(cid: int) -> bool:
        if cid in skipped_ids:
            return True
        return records[cid].xi <= delta

    all_ids = {c.id for c in system.all_cubes()}
    bad = frozenset(cid for cid in all_ids if not is_good(cid))
    regions: list[StoppingRegion] = []
    tops = _maximal_good_under(system, [system.root], is_good)
    while tops:
        next_tops: list[Cube] = []
        for top in tops:
            members, minimal = _grow_region(system, top, is_good)
            chart = None
            if with_charts and len(space.ball_points(top.center, chart_dilation * top.side)) > n:
                chart = region_chart(
                    space, system, top, n, chart_dilation,
                    record=records.get(top.id), **xi_kwargs,
                )
            regions.append(
                StoppingRegion(top=top.id, members=members, minimal=minimal, chart=chart)
            )
            for mid in minimal:
                kids = system.children_of(system.cubes[mid])
                next_tops.extend(_maximal_good_under(system, kids, is_good))
        tops = next_tops
    top_ids = [r.top for r in regions]
    good = frozenset(all_ids - bad)
    return CoronaDecomposition(
        good_ids=good,
        bad_ids=bad,
        regions=tuple(regions),
        params={
            "kind": "flatness",
            "delta": delta,
            "dilation": dilation,
            "chart_dilation": chart_dilation,
            "skipped_as_good": tuple(sorted(skipped_ids)),
        },
        packing_bad=packing_norm(system, bad, n),
        packing_tops=packing_norm(system, top_ids, n),
        records=records,
    )


def _contraction_stop(
    space: FiniteMetricSpace,
    system: CubeSystem,
    chart: RegionChart,
    cube: Cube,
    theta: float,
    lam: float,
    dilation: float = 3.0,
) -> tuple[bool, tuple | None]:
    """True when the chart contracts a theta-separated pair in the dilated cube ball."""
    if not np.isfinite(lam):
        return False, None
    ids = space.ball_points(cube.center, dilation * cube.side)
    ids = ids[np.isin(ids, chart.domain_ids)]
    if len(ids) < 2:
        return False, None
    rows = chart.row_of(ids)
    dom = space.subspace_dist(ids)
    img = chart.image_dist(rows, rows)
    sep = dom >= theta * cube.side
    squish = img * lam < dom
    hit = sep & squish
    if hit.any():
        i, j = np.unravel_index(int(np.argmax(hit)), hit.shape)
        return True, (int(ids[i]), int(ids[j]), float(dom[i, j]), float(img[i, j]))
    return False, None


def build_corona_contraction(
    space: FiniteMetricSpace,
    system: CubeSystem,
    theta: float,
    lam: float,
    lip_cap: float,
    eps: float,
    restart_rounds: int = 8,
    dilation: float = 3.0,
    n: int | None = None,
    threads: int | None = None,
    gamma_budget: dict | None = None,
) -> CoronaDecomposition:
    """Corona decomposition by chart-contraction and affine-approximation stopping.

    Each region top carries a regularized chart; a cube stops when some
    sibling's dilated ball holds a theta-separated pair contracted below
    d/Lambda by the chart, or when the affine-approximation coefficient of
    the chart data exceeds eps.  Minimal cubes split into the
    affine-failure class (children restart inside the same top for up to
    `restart_rounds` rounds) and the contraction class (children restart
    with fresh tops).  Infinite Lambda disables contraction stopping.
    """
    n = n or space.dim_hint
    gamma_budget = gamma_budget or {}
    all_ids = {c.id for c in system.all_cubes()}
    good_cubes, skipped = evaluable_cubes(space, system, dilation)
    recs = parallel_map(
        lambda c: xi_for_cube(space, c, dilation, n, **gamma_budget), good_cubes, threads
    )
    records = {c.id: r for c, r in zip(good_cubes, recs)}
    skipped_ids = {c.id for c in skipped}

    def is_flat(cid: int) -> bool:
        return cid in skipped_ids or records[cid].xi <= eps

    bad = frozenset(cid for cid in all_ids if not is_flat(cid))
    regions: list[StoppingRegion] = []
    small_image_report: dict[int, dict] = {}

    def gamma_ok(chart: RegionChart, cube: Cube) -> bool:
        """gamma of the (rescaled) chart data over the dilated cube ball."""
        ids = space.ball_points(cube.center, dilation * cube.side)
        ids = ids[np.isin(ids, chart.domain_ids)]
        if len(ids) <= n + 1:
            return True
        rows = chart.row_of(ids)
        vals = chart.values[rows] / (20.0 * n)  # 1-Lipschitz normalization
        try:
            rec = gamma_upper(
                space,
                Ball(cube.center, dilation * cube.side),
                vals,
                chart.norm,
                lip_cap,
                n,
                verify_lipschitz=False,
                max_fit_points=gamma_budget.get("max_fit_points", 280),
                iters=gamma_budget.get("iters", 120),
                tau=gamma_budget.get("tau", 0.05),
            )
        except Exception:
            return False
        return rec.gamma <= eps

    def build_region(top: Cube, chart: RegionChart) -> tuple[StoppingRegion, list[Cube], list[Cube]]:
        """Grow one region under the three stopping rules; returns the region
        plus (affine-failure minimals, contraction minimals)."""
        members = {top.id}
        frontier = [top]
        minimal: list[int] = []
        min1: list[Cube] = []
        min2: list[Cube] = []
        gamma_cache: dict[int, bool] = {}

        def g_ok(c: Cube) -> bool:
            if c.id not in gamma_cache:
                gamma_cache[c.id] = is_flat(c.id) and gamma_ok(chart, c)
            return gamma_cache[c.id]

        while frontier:
            cube = frontier.pop()
            children = system.children_of(cube)
            if not children:
                minimal.append(cube.id)
                continue
            ok = True
            affine_fail = False
            for ch in children:
                if not g_ok(ch):
                    ok = False
                    affine_fail = True
                    break
                stopped, _ = _contraction_stop(space, system, chart, ch, theta, lam, dilation)
                if stopped:
                    ok = False
                    break
            if ok:
                for ch in children:
                    members.add(ch.id)
                    frontier.append(ch)
            else:
                minimal.append(cube.id)
                (min1 if affine_fail else min2).append(cube)
        region = StoppingRegion(
            top=top.id, members=frozenset(members), minimal=tuple(sorted(minimal)), chart=chart
        )
        return region, min1, min2

    def chart_for(top: Cube) -> RegionChart | None:
        if len(space.ball_points(top.center, dilation * top.side)) <= n + 1:
            return None
        return region_chart(
            space, system, top, n, dilation,
            record=records.get(top.id),
            max_fit_points=gamma_budget.get("max_fit_points", 280),
            iters=gamma_budget.get("iters", 120),
        )

    global_tops = _maximal_good_under(system, [system.root], is_flat)
    while global_tops:
        future_tops: list[Cube] = []
        for q_top in global_tops:
            chart = chart_for(q_top)
            if chart is None:
                regions.append(
                    StoppingRegion(top=q_top.id, members=frozenset({q_top.id}),
                                   minimal=(q_top.id,), chart=None)
                )
                for ch in system.children_of(q_top):
                    future_tops.extend(_maximal_good_under(system, [ch], is_flat))
                continue
            # the restart ladder inside this top: affine-failure minimals
            # restart with the same logic on their children, bounded rounds
            ladder_tops = [q_top]
            min2_all: list[Cube] = []
            for _ in range(restart_rounds):
                next_ladder: list[Cube] = []
                for rtop in ladder_tops:
                    region, min1, min2 = build_region(rtop, chart)
                    regions.append(region)
                    min2_all.extend(min2)
                    for t in min1:
                        kids = system.children_of(t)
                        next_ladder.extend(_maximal_good_under(system, kids, is_flat))
                ladder_tops = next_ladder
                if not ladder_tops:
                    break
            # leftover ladder tops after the round cap restart globally
            future_tops.extend(ladder_tops)
            # children of contraction minimals restart globally with new tops
            for t in min2_all:
                kids = system.children_of(t)
                future_tops.extend(_maximal_good_under(system, kids, is_flat))
            if min2_all:
                small_image_report[q_top.id] = _small_image_diagnostic(
                    space, chart, min2_all, q_top, n, lam, eps
                )
        global_tops = future_tops
    covered = set()
    for reg in regions:
        covered |= reg.members
    good = frozenset(covered)
    bad = frozenset(all_ids - covered)
    top_ids = [r.top for r in regions]
    return CoronaDecomposition(
        good_ids=good,
        bad_ids=bad,
        regions=tuple(regions),
        params={
            "kind": "contraction",
            "theta": theta,
            "lambda": lam,
            "lip_cap": lip_cap,
            "eps": eps,
            "dilation": dilation,
            "restart_rounds": restart_rounds,
            "small_image": small_image_report,
        },
        packing_bad=packing_norm(system, bad, n),
        packing_tops=packing_norm(system, top_ids, n),
        records=records,
    )


def _small_image_diagnostic(
    space: FiniteMetricSpace,
    chart: RegionChart,
    min2: list[Cube],
    top: Cube,
    n: int,
    lam: float,
    eps: float,
) -> dict:
    """Covering-number estimate of the chart image mass of contraction-stopped cubes."""
    ids = []
    for c in min2:
        ids.extend(int(p) for p in c.members if p in set(int(q) for q in chart.domain_ids))
    if not ids:
        return {"image_mass": 0.0, "budget": (eps + 1.0 / lam) * top.side ** n}
    rows = chart.row_of(np.array(sorted(set(ids))))
    pts = chart.values[rows]
    h = max(top.side / 64.0, 1e-12)
    taken: list[np.ndarray] = []
    for p in pts:
        if all(float(chart.norm.eval(p - q)) >= h for q in taken):
            taken.append(p)
    mass = len(taken) * h ** n
    return {
        "image_mass": mass,
        "budget": (eps + 1.0 / lam) * top.side ** n,
        "cover_scale": h,
    }


def verify_cd(
    space: FiniteMetricSpace,
    system: CubeSystem,
    decomp: CoronaDecomposition,
    theta: float,
    lam1: float,
    lam2: float,
    dilation: float = 3.0,
    pair_budget: int = 10_000,
    seed: int = 0,
) -> dict:
    """Check the two-sided chart bound on separated pairs in every region.

    Pairs x, y in the dilated cube ball with d(x, y) >= theta * ell(Q) must
    satisfy d/lam1 <= chart distance <= lam2 * d.  Exhaustive below 200 ball
    points, seeded sampling above.  Failures are results, not errors.
    """
    rng = np.random.default_rng(seed)
    worst_low, worst_high = np.inf, 0.0
    worst_pairs = {"low": None, "high": None}
    checked = 0
    for reg in decomp.regions:
        if reg.chart is None:
            continue
        chart = reg.chart
        dom_set = set(int(p) for p in chart.domain_ids)
        for cid in reg.members:
            cube = system.cubes[cid]
            ids = space.ball_points(cube.center, dilation * cube.side)
            ids = np.array([p for p in ids if int(p) in dom_set])
            if len(ids) < 2:
                continue
            rows = chart.row_of(ids)
            if len(ids) <= 200:
                dom = space.subspace_dist(ids)
                img = chart.image_dist(rows, rows)
                iu = np.triu_indices(len(ids), 1)
                dd, ii = dom[iu], img[iu]
            else:
                k = pair_budget
                ia = rng.integers(0, len(ids), k)
                ib = rng.integers(0, len(ids), k)
                keep = ia != ib
                ia, ib = ia[keep], ib[keep]
                dd = space.dist[ids[ia], ids[ib]]
                ii = np.array(
                    [chart.image_dist(rows[a : a + 1], rows[b : b + 1])[0, 0] for a, b in zip(ia, ib)]
                )
            sep = dd >= theta * cube.side
            if not sep.any():
                continue
            dd, ii = dd[sep], ii[sep]
            checked += len(dd)
            ratio = ii / dd
            lo_i = int(ratio.argmin())
            hi_i = int(ratio.argmax())
            if ratio[lo_i] < worst_low:
                worst_low = float(ratio[lo_i])
                worst_pairs["low"] = {"cube": cid, "ratio": float(ratio[lo_i])}
            if ratio[hi_i] > worst_high:
                worst_high = float(ratio[hi_i])
                worst_pairs["high"] = {"cube": cid, "ratio": float(ratio[hi_i])}
    ok = (
        checked == 0
        or (worst_low >= 1.0 / lam1 - 1e-12 and worst_high <= lam2 + 1e-12)
    )
    return {
        "pass": bool(ok),
        "worst_low_ratio": None if checked == 0 else worst_low,
        "worst_high_ratio": None if checked == 0 else worst_high,
        "lam1": lam1,
        "lam2": lam2,
        "pairs_checked": checked,
        "worst_pairs": worst_pairs,
    }


# ---------------------------------------------------------------------------
# Corona-of-corona composition


def _a_close(diam_a: float, dist_ab: float, diam_b: float, a_const: float) -> bool:
    if diam_a <= 0 or diam_b <= 0:
        return False
    return (
        diam_a / a_const <= diam_b <= diam_a * a_const
        and dist_ab <= a_const * (diam_a + diam_b)
    )


def _cube_diam(space: FiniteMetricSpace, members: np.ndarray) -> float:
    if len(members) < 2:
        return 0.0
    return float(space.subspace_dist(members).max())


def compose_corona(
    space: FiniteMetricSpace,
    system: CubeSystem,
    outer: CoronaDecomposition,
    inner_systems: dict[int, CubeSystem],
    inner_decomps: dict[int, CoronaDecomposition],
    a_const: float = 4.0,
    n: int | None = None,
    pair_budget: int = 4000,
    seed: int = 0,
) -> tuple[CoronaDecomposition, dict]:
    """Compose an outer decomposition (charts into metric model spaces) with
    per-model decompositions by norms into a single decomposition by norms.

    Bad families propagate through closeness of cubes across the two layers;
    refined regions stay inside outer regions and inherit the composite chart
    x -> inner_chart(outer_chart(x)).  The composite two-sided bound is
    verified on sampled pairs with the product constants.
    """
    n = n or space.dim_hint
    all_ids = {c.id for c in system.all_cubes()}
    region_by_top = {reg.top: reg for reg in outer.regions}

    # inner bad sets: cubes close to inner-bad or inner-tops or cross-region pairs
    inner_b1: dict[int, set[int]] = {}
    for top_id, ins in inner_systems.items():
        ind = inner_decomps[top_id]
        y_space = region_by_top[top_id].chart.target_space
        marked: set[int] = set()
        cubes = ins.all_cubes()
        diams = {c.id: _cube_diam(y_space, c.members) for c in cubes}
        centers = {c.id: c.center for c in cubes}
        special = set(ind.bad_ids) | {r.top for r in ind.regions}
        reg_of = {}
        for r in ind.regions:
            for cid in r.members:
                reg_of[cid] = r.top
        for c in cubes:
            for s in cubes:
                if c.id == s.id:
                    continue
                d_cs = float(y_space.dist[centers[c.id], centers[s.id]])
                if not _a_close(diams[c.id], d_cs, diams[s.id], a_const):
                    continue
                if s.id in special:
                    marked.add(c.id)
                elif reg_of.get(c.id) is not None and reg_of.get(s.id) is not None \
                        and reg_of[c.id] != reg_of[s.id]:
                    marked.add(c.id)
        inner_b1[top_id] = marked

    # outer bad set B1(X)
    outer_bad: set[int] = set()
    cube_diams = {c.id: _cube_diam(space, c.members) for c in system.all_cubes()}
    tops = {r.top for r in outer.regions}
    for c in system.all_cubes():
        if c.id in outer.bad_ids:
            outer_bad.add(c.id)
            continue
        for s in system.all_cubes():
            if s.id == c.id:
                continue
            d_cs = float(space.dist[c.center, s.center])
            if _a_close(cube_diams[c.id], d_cs, cube_diams[s.id], a_const) and (
                s.id in outer.bad_ids or s.id in tops
            ):
                outer_bad.add(c.id)
                break
    # condition (3): image close to an inner bad cube
    for reg in outer.regions:
        if reg.chart is None or reg.top not in inner_systems:
            continue
        ins = inner_systems[reg.top]
        y_space = reg.chart.target_space
        bad_inner = inner_b1[reg.top]
        dom_set = set(int(p) for p in reg.chart.domain_ids)
        for cid in reg.members:
            if cid in outer_bad:
                continue
            cube = system.cubes[cid]
            pts = np.array([p for p in cube.members if int(p) in dom_set])
            if not len(pts):
                continue
            rows = reg.chart.row_of(pts)
            img_ids = reg.chart.target_ids[rows]
            img_diam = _cube_diam(y_space, img_ids) if len(img_ids) > 1 else 0.0
            for bid in bad_inner:
                bc = ins.cubes[bid]
                d_ib = float(y_space.dist[np.ix_(img_ids, bc.members)].min()) if len(bc.members) else np.inf
                if _a_close(max(img_diam, 1e-12), d_ib, max(_cube_diam(y_space, bc.members), 1e-12), a_const):
                    outer_bad.add(cid)
                    break

    def is_good(cid: int) -> bool:
        return cid not in outer_bad

    old_region_of = {}
    for reg in outer.regions:
        for cid in reg.members:
            old_region_of[cid] = reg.top

    regions: list[StoppingRegion] = []
    tops_list = _maximal_good_under(system, [system.root], is_good)
    while tops_list:
        nxt: list[Cube] = []
        for top in tops_list:
            home = old_region_of.get(top.id)

            def grows(cid: int) -> bool:
                return is_good(cid) and old_region_of.get(cid) == home

            members, minimal = _grow_region(system, top, grows)
            outer_reg = region_by_top.get(home)
            chart = None
            if outer_reg is not None and outer_reg.chart is not None and home in inner_decomps:
                chart = _composite_chart(
                    outer_reg.chart, inner_systems[home], inner_decomps[home], members, system
                )
            regions.append(StoppingRegion(top=top.id, members=members, minimal=minimal, chart=chart))
            for mid in minimal:
                kids = system.children_of(system.cubes[mid])
                nxt.extend(_maximal_good_under(system, kids, is_good))
        tops_list = nxt

    covered = set()
    for reg in regions:
        covered |= reg.members
    good = frozenset(covered)
    bad = frozenset(all_ids - covered)
    composed = CoronaDecomposition(
        good_ids=good,
        bad_ids=bad,
        regions=tuple(regions),
        params={
            "kind": "composed",
            "a_const": a_const,
            "outer": outer.params,
        },
        packing_bad=packing_norm(system, bad, n),
        packing_tops=packing_norm(system, [r.top for r in regions], n),
    )
    diag = {
        "outer_tops": len(outer.regions),
        "composed_tops": len(regions),
        "bad_growth": len(bad) - len(outer.bad_ids),
    }
    return composed, diag


def _composite_chart(
    outer_chart: RegionChart,
    inner_system: CubeSystem,
    inner_decomp: CoronaDecomposition,
    member_ids: frozenset,
    system: CubeSystem,
) -> RegionChart | None:
    """Chart x -> inner(outer(x)) using the inner region that best covers the
    outer image; points escaping the inner chart's domain are dropped and the
    clipped fraction recorded by the caller via the domain size."""
    # pick the inner region by majority vote of outer-image membership
    votes: dict[int, int] = {}
    img_ids = outer_chart.target_ids
    for reg in inner_decomp.regions:
        if reg.chart is None:
            continue
        dom = set(int(p) for p in reg.chart.domain_ids)
        votes[reg.top] = sum(1 for p in img_ids if int(p) in dom)
    if not votes:
        return None
    best_top = max(sorted(votes), key=lambda k: votes[k])
    inner_reg = next(r for r in inner_decomp.regions if r.top == best_top)
    inner_chart = inner_reg.chart
    dom_inner = {int(p): i for i, p in enumerate(inner_chart.domain_ids)}
    keep_rows = [
        i for i, p in enumerate(outer_chart.target_ids) if int(p) in dom_inner
    ]
    if not keep_rows:
        return None
    keep_rows = np.array(keep_rows)
    inner_rows = np.array([dom_inner[int(outer_chart.target_ids[i])] for i in keep_rows])
    return RegionChart(
        domain_ids=outer_chart.domain_ids[keep_rows],
        norm=inner_chart.norm,
        values=inner_chart.values[inner_rows],
    )
