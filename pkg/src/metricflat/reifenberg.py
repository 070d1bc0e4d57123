"""Finite-depth multiscale parametrization engine.

A tree of balls with per-node tangent norms and two-way ball maps feeds an
atlas of affine chart transitions; per-level semi-metrics on a tangent sample
refine through chart footprints, close into a chain metric, and the forward
and backward maps between the tangent sample and the space are assembled from
exact-inverse chart tables.  Every hypothesis and output bound is measured
and reported rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._fastpath import floyd_warshall_inplace
from ._parallel import parallel_map
from .coefficients import xi_upper
from .gha import GhaMap, gha_defects, linearize_gha, make_normed_gha, regularize_gha
from .norms import AffineMap, GaugeNorm, operator_norm
from .spaces import Ball, FiniteMetricSpace, extend_net

DEFAULT_RATIO = 10.0
DEFAULT_GHA_DILATION = 4.0
DEFAULT_FOOTPRINT = 3.0


@dataclass(frozen=True)
class BallTreeNode:
    level: int
    index: int
    center: int
    radius: float
    norm: GaugeNorm = field(repr=False)
    beta: GhaMap = field(repr=False)  # space ball -> tangent coords, beta(center) = 0
    alpha_coords: np.ndarray = field(repr=False)  # stored tangent coords
    alpha_points: np.ndarray = field(repr=False)  # their space point ids
    parent: int | None  # index into the previous level
    flags: dict = field(default_factory=dict)

    def alpha(self, u: np.ndarray) -> tuple[int, float]:
        """Nearest stored chart coordinate; returns (space point id, snap distance)."""
        d = np.asarray(self.norm.eval(self.alpha_coords - u))
        j = int(d.argmin())
        return int(self.alpha_points[j]), float(d[j])

    def beta_of(self, point_id: int) -> np.ndarray | None:
        rows = np.flatnonzero(self.beta.dom_ids == point_id)
        if not len(rows):
            return None
        return self.beta.values[rows[0]]


@dataclass(frozen=True)
class BallTree:
    space: FiniteMetricSpace = field(repr=False)
    root_center: int
    top_scale: float
    ratio: float
    gha_dilation: float
    footprint: float
    delta: float
    levels: tuple[tuple[BallTreeNode, ...], ...]
    audit: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def radius(self, level: int) -> float:
        return self.top_scale * self.ratio ** -level

    @property
    def root(self) -> BallTreeNode:
        return self.levels[0][0]


@dataclass(frozen=True)
class TransitionAtlas:
    same_level: dict = field(repr=False)  # (level, i, j) -> AffineMap R^n_j -> R^n_i
    cross_level: dict = field(repr=False)  # (level, j) -> AffineMap to the parent chart
    sup_devs: dict = field(default_factory=dict)
    cocycle_table: tuple = ()
    dropped_pairs: tuple = ()

    def same(self, level: int, i: int, j: int) -> AffineMap | None:
        if i == j:
            return None
        got = self.same_level.get((level, i, j))
        if got is not None:
            return got
        rev = self.same_level.get((level, j, i))
        return rev.inverse() if rev is not None else None


@dataclass(frozen=True)
class ChainMetric:
    sample: np.ndarray = field(repr=False)
    phi_levels: tuple = field(repr=False)  # per-level (m, m) tables
    phi_final: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    traces: tuple = field(repr=False)  # per level: (chart_idx (m,), coords (m, n))
    cauchy_report: dict = field(default_factory=dict)
    pert_ratio: float = 1.0


@dataclass(frozen=True)
class ChartMaps:
    g_points: np.ndarray  # space point id per sample row
    g_levels: np.ndarray  # deepest resident level per sample row
    g_increments: dict  # level -> max d(g_l, g_{l+1})
    gbar_coords: np.ndarray  # tangent coords per evaluation point
    gbar_levels: np.ndarray
    eval_ids: np.ndarray
    stop_scale: float
    cut_level: int


# ---------------------------------------------------------------------------
# Tree construction


def _recentre_beta(gmap: GhaMap, center_row: int) -> GhaMap:
    from .norms import clamp_to_ball

    shift = gmap.values[center_row]
    vals = clamp_to_ball(gmap.codomain, gmap.cod_center, gmap.radius, gmap.values - shift)
    return GhaMap(
        dom_dist=gmap.dom_dist,
        values=vals,
        codomain=gmap.codomain,
        cod_center=gmap.cod_center,
        radius=gmap.radius,
        dom_center_index=gmap.dom_center_index,
        dom_ids=gmap.dom_ids,
    )


def build_ball_tree(
    space: FiniteMetricSpace,
    root_center: int,
    depth: int,
    delta: float,
    n: int | None = None,
    top_scale: float | None = None,
    ratio: float = DEFAULT_RATIO,
    gha_dilation: float = DEFAULT_GHA_DILATION,
    footprint: float = DEFAULT_FOOTPRINT,
    seed: int = 0,
    fit_budget: dict | None = None,
    threads: int | None = None,
) -> BallTree:
    """Nested nets of the root ball with per-node norms and two-way ball maps.

    Each node's norm comes from the flatness witness of its dilated ball; the
    backward map is the regularized, recentred witness and the forward map is
    its exact inverse table (so backward-then-forward round trips vanish on
    the fitted correspondence).  Hypothesis defects beyond delta * r raise
    audit flags but never stop the build.
    """
    n = n or space.dim_hint
    fit_budget = fit_budget or {}
    if top_scale is None:
        top_scale = space.eccentricity(root_center)
    ball_ids = space.ball_points(root_center, top_scale)
    if not len(ball_ids):
        raise ValueError("empty root ball")

    nets: list[np.ndarray] = [np.array([root_center])]
    sub = FiniteMetricSpace(
        dist=space.dist, weights=space.weights, dim_hint=n, coords=space.coords
    )
    in_ball = np.zeros(space.point_count, dtype=bool)
    in_ball[ball_ids] = True
    for lev in range(1, depth + 1):
        scale = top_scale * ratio ** -lev
        base = tuple(int(c) for c in nets[-1])
        members = list(base)
        mind = np.full(space.point_count, np.inf)
        for b in base:
            np.minimum(mind, space.dist[b], out=mind)
        order = np.arange(space.point_count)
        if seed != 0:
            np.random.default_rng(seed + lev).shuffle(order)
        for idx in order:
            if in_ball[idx] and mind[idx] >= scale:
                members.append(int(idx))
                np.minimum(mind, space.dist[idx], out=mind)
        nets.append(np.asarray(members))

    levels: list[tuple[BallTreeNode, ...]] = []
    audit = {"flagged_nodes": [], "thm13_ok": True}

    def build_node(args) -> BallTreeNode:
        lev, j, center = args
        r = top_scale * ratio ** -lev
        ball = Ball(int(center), gha_dilation * r)
        rec = xi_upper(
            space, ball, n,
            max_fit_points=fit_budget.get("max_fit_points", 420),
            iters=fit_budget.get("iters", 120),
            tau=fit_budget.get("tau", 0.05),
            family=fit_budget.get("family", "all"),
        )
        gmap = rec.witness_map
        cert = rec.certificate
        reg_delta = max(cert.iso_defect / gmap.radius, 0.02)
        try:
            reg, reg_cert, _ = regularize_gha(gmap, reg_delta, n, tau=fit_budget.get("tau", 0.05))
        except ValueError:
            reg, reg_cert = gmap, cert
        beta = _recentre_beta(reg, reg.dom_center_index)
        beta_cert = gha_defects(beta, tau=fit_budget.get("tau", 0.05))
        flags = {
            "iso_ok": beta_cert.iso_defect <= delta * r,
            "density_ok": beta_cert.density_defect <= delta * r,
            "iso_defect": beta_cert.iso_defect,
            "density_defect": beta_cert.density_defect,
            "xi": rec.xi,
        }
        return BallTreeNode(
            level=lev,
            index=j,
            center=int(center),
            radius=r,
            norm=rec.witness_norm,
            beta=beta,
            alpha_coords=beta.values,
            alpha_points=np.asarray(beta.dom_ids),
            parent=None,
            flags=flags,
        )

    for lev in range(depth + 1):
        args = [(lev, j, c) for j, c in enumerate(nets[lev])]
        nodes = parallel_map(build_node, args, threads)
        # parent links: nearest previous-level center, checked against 2x radius
        if lev > 0:
            prev_centers = nets[lev - 1]
            fixed = []
            for node in nodes:
                d = space.dist[node.center, prev_centers]
                pi = int(d.argmin())
                if d[pi] > 2.0 * top_scale * ratio ** -(lev - 1):
                    audit["thm13_ok"] = False
                fixed.append(
                    BallTreeNode(
                        level=node.level, index=node.index, center=node.center,
                        radius=node.radius, norm=node.norm, beta=node.beta,
                        alpha_coords=node.alpha_coords, alpha_points=node.alpha_points,
                        parent=pi, flags=node.flags,
                    )
                )
            nodes = fixed
        for node in nodes:
            if not (node.flags["iso_ok"] and node.flags["density_ok"]):
                audit["flagged_nodes"].append((lev, node.index))
        levels.append(tuple(nodes))
    return BallTree(
        space=space,
        root_center=root_center,
        top_scale=top_scale,
        ratio=ratio,
        gha_dilation=gha_dilation,
        footprint=footprint,
        delta=delta,
        levels=tuple(levels),
        audit=audit,
    )


# ---------------------------------------------------------------------------
# Transition atlas


def _composite_transition(
    space: FiniteMetricSpace,
    node_from: BallTreeNode,
    node_to: BallTreeNode,
    flag_threshold: float = 0.2,
) -> tuple[AffineMap | None, float]:
    """Affine map approximating beta_to o alpha_from where their balls overlap."""
    # domain sample: stored coords of node_from whose space points lie in
    # node_to's fitted ball
    to_ids = set(int(p) for p in node_to.beta.dom_ids)
    keep = [i for i, p in enumerate(node_from.alpha_points) if int(p) in to_ids]
    if len(keep) < node_from.norm.dim + 1:
        return None, np.inf
    keep = np.asarray(keep)
    dom_pts = node_from.alpha_coords[keep]
    lookup = {int(p): i for i, p in enumerate(node_to.beta.dom_ids)}
    rows = np.array([lookup[int(node_from.alpha_points[i])] for i in keep])
    values = node_to.beta.values[rows]
    radius = max(float(np.asarray(node_from.norm.eval(dom_pts)).max()), node_from.radius)
    gmap = make_normed_gha(
        node_from.norm, dom_pts, values, node_to.norm,
        np.zeros(node_from.norm.dim), radius + node_to.beta.radius,
        dom_center=np.zeros(node_from.norm.dim),
    )
    try:
        affine, dev, ok = linearize_gha(gmap, iters=120, flag_threshold=flag_threshold)
    except (ValueError, np.linalg.LinAlgError):
        return None, np.inf
    if abs(np.linalg.det(affine.linear)) < 1e-12:
        return None, dev
    if not ok and dev > flag_threshold * max(node_from.radius, node_to.radius):
        return None, dev
    return affine, dev


def fit_transitions(
    tree: BallTree,
    pair_dilation: float | None = None,
    cocycle_cap: int = 200,
    seed: int = 0,
    threads: int | None = None,
) -> TransitionAtlas:
    """Fit same-level and cross-level affine transitions with defect records.

    Same-level pairs are those whose footprint balls intersect; non-
    linearizable composites are dropped with a warning entry.  Cross-level
    maps link every node to its parent chart.  Cocycle defects are measured
    over (capped, seeded) triples per level; the reverse maps are stored as
    exact inverses.
    """
    space = tree.space
    fp = pair_dilation if pair_dilation is not None else tree.footprint
    same: dict = {}
    cross: dict = {}
    sup_devs: dict = {}
    dropped = []

    for lev in range(tree.depth + 1):
        nodes = tree.levels[lev]
        centers = np.array([nd.center for nd in nodes])
        r = tree.radius(lev)
        pair_args = []
        for a in range(len(nodes)):
            for b in range(a + 1, len(nodes)):
                if space.dist[centers[a], centers[b]] <= 2 * fp * r:
                    pair_args.append((a, b))

        def fit_pair(ab):
            a, b = ab
            # T_{a,b}: chart b coords -> chart a coords
            aff, dev = _composite_transition(space, nodes[b], nodes[a])
            return ab, aff, dev

        for (a, b), aff, dev in parallel_map(fit_pair, pair_args, threads):
            if aff is None:
                dropped.append((lev, a, b, dev))
            else:
                same[(lev, a, b)] = aff
                sup_devs[("T", lev, a, b)] = dev
        if lev > 0:
            def fit_cross(j):
                node = tree.levels[lev][j]
                parent = tree.levels[lev - 1][node.parent]
                aff, dev = _composite_transition(space, node, parent)
                return j, aff, dev

            for j, aff, dev in parallel_map(fit_cross, range(len(nodes)), threads):
                if aff is None:
                    dropped.append((lev, "cross", j, dev))
                else:
                    cross[(lev, j)] = aff
                    sup_devs[("K", lev, j)] = dev

    atlas = TransitionAtlas(
        same_level=same, cross_level=cross, sup_devs=sup_devs, dropped_pairs=tuple(dropped)
    )
    table = _cocycle_defects(tree, atlas, cocycle_cap, seed)
    return TransitionAtlas(
        same_level=same,
        cross_level=cross,
        sup_devs=sup_devs,
        cocycle_table=table,
        dropped_pairs=tuple(dropped),
    )


def _cocycle_defects(tree: BallTree, atlas: TransitionAtlas, cap: int, seed: int) -> tuple:
    rng = np.random.default_rng(seed)
    table = []
    for lev in range(tree.depth + 1):
        keys = [k for k in atlas.same_level if k[0] == lev]
        idx_pairs = set((k[1], k[2]) for k in keys) | set((k[2], k[1]) for k in keys)
        nodes = sorted(set(i for p in idx_pairs for i in p))
        triples = []
        for i in nodes:
            for j in nodes:
                for k in nodes:
                    if i < j < k and (i, j) in idx_pairs and (j, k) in idx_pairs and (i, k) in idx_pairs:
                        triples.append((i, j, k))
        if len(triples) > cap:
            sel = rng.choice(len(triples), cap, replace=False)
            triples = [triples[int(s)] for s in sel]
        r = tree.radius(lev)
        for (i, j, k) in triples:
            t_ij = atlas.same(lev, i, j)
            t_jk = atlas.same(lev, j, k)
            t_ki = atlas.same(lev, k, i)
            if t_ij is None or t_jk is None or t_ki is None:
                continue
            comp = t_ki.compose(t_ij.compose(t_jk))
            norm_k = tree.levels[lev][k].norm
            lin_dev = operator_norm(comp.linear - np.eye(comp.dim), norm_k, norm_k)
            defect = lin_dev * tree.footprint * r + float(norm_k.eval(comp.offset))
            table.append((lev, i, j, k, float(defect), bool(defect > 0.2 * r)))
    return tuple(table)


# ---------------------------------------------------------------------------
# Footprint recursion and the chain metric


def _trace_samples(
    tree: BallTree, atlas: TransitionAtlas, sample: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-level resident chart and chart coordinates for every sample point.

    Level 0 coordinates are the points themselves in the root chart; a point
    enters a level-(l+1) chart when its transported coordinates land inside
    the footprint ball, the candidate with the smallest gauge norm winning.
    """
    m, n = sample.shape
    traces = [(np.zeros(m, dtype=int), sample.copy())]
    for lev in range(1, tree.depth + 1):
        prev_idx, prev_coords = traces[-1]
        nodes = tree.levels[lev]
        r = tree.radius(lev)
        fp = tree.footprint
        chart_idx = np.full(m, -1, dtype=int)
        coords = np.full((m, n), np.nan)
        # candidate charts per parent chart index
        kids_of: dict[int, list[int]] = {}
        for j, node in enumerate(nodes):
            kids_of.setdefault(node.parent, []).append(j)
        for s in range(m):
            i_prev = int(prev_idx[s])
            if i_prev < 0:
                continue
            u_prev = prev_coords[s]
            best = None
            # candidates: children of the previous chart and of its atlas neighbours
            cand_parents = [i_prev] + [
                k[2] if k[1] == i_prev else k[1]
                for k in atlas.same_level
                if k[0] == lev - 1 and i_prev in (k[1], k[2])
            ]
            seen = set()
            for pi in cand_parents:
                if pi in seen:
                    continue
                seen.add(pi)
                if pi == i_prev:
                    u_pi = u_prev
                else:
                    t_map = atlas.same(lev - 1, pi, i_prev)
                    if t_map is None:
                        continue
                    u_pi = t_map(u_prev[None, :])[0]
                for j in kids_of.get(pi, []):
                    k_map = atlas.cross_level.get((lev, j))
                    if k_map is None:
                        continue
                    u_j = k_map.inverse()(u_pi[None, :])[0]
                    gval = float(nodes[j].norm.eval(u_j))
                    if gval <= fp * r and (best is None or gval < best[0]):
                        best = (gval, j, u_j)
            if best is not None:
                chart_idx[s] = best[1]
                coords[s] = best[2]
        traces.append((chart_idx, coords))
    return traces


def phi_recursion(
    tree: BallTree,
    atlas: TransitionAtlas,
    sample: np.ndarray,
) -> ChainMetric:
    """Per-level semi-metrics on the sample via chart-footprint refinement.

    phi_0 is the root gauge distance; each finer level replaces the distance
    of pairs sharing a resident chart with the chart gauge distance.  The
    per-level increment is checked against the stability budget and the chain
    metric is the shortest-path closure of the final table.
    """
    m = len(sample)
    traces = _trace_samples(tree, atlas, sample)
    root_norm = tree.root.norm
    phi0 = root_norm.cross_dist(sample, sample)
    np.fill_diagonal(phi0, 0.0)
    phis = [phi0]
    cauchy = {}
    for lev in range(1, tree.depth + 1):
        chart_idx, coords = traces[lev]
        prev = phis[-1]
        cur = prev.copy()
        nodes = tree.levels[lev]
        max_ratio = 0.0
        for j in np.unique(chart_idx):
            if j < 0:
                continue
            rows = np.flatnonzero(chart_idx == j)
            if len(rows) < 2:
                continue
            local = nodes[int(j)].norm.cross_dist(coords[rows], coords[rows])
            cur[np.ix_(rows, rows)] = local
            old = prev[np.ix_(rows, rows)]
            denom = np.minimum(old, tree.radius(lev - 1))
            mask = denom > 0
            if mask.any():
                max_ratio = max(
                    max_ratio, float((np.abs(local - old)[mask] / denom[mask]).max())
                )
        np.fill_diagonal(cur, 0.0)
        cur = np.minimum(cur, cur.T)
        phis.append(cur)
        cauchy[lev] = max_ratio
    phi_final = phis[-1]
    rho = chain_metric(phi_final)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rho > 0, phi_final / rho, 1.0)
    return ChainMetric(
        sample=sample,
        phi_levels=tuple(phis),
        phi_final=phi_final,
        rho=rho,
        traces=tuple(traces),
        cauchy_report=cauchy,
        pert_ratio=float(ratio.max()),
    )


def chain_metric(phi: np.ndarray) -> np.ndarray:
    """Shortest-path closure of a symmetric nonneg table: the largest metric
    below phi."""
    rho = floyd_warshall_inplace(phi)
    rho = np.minimum(rho, rho.T)
    np.fill_diagonal(rho, 0.0)
    return rho


# ---------------------------------------------------------------------------
# Forward and backward maps


def build_maps(
    tree: BallTree,
    chain: ChainMetric,
    eval_ids: np.ndarray,
    stop_scale: float | None = None,
) -> ChartMaps:
    """Forward map on the sample and backward map on the evaluation points.

    g sends a sample point through its deepest resident chart's inverse
    table; g-bar reads the deepest covering node's coordinates and pulls them
    back to the root chart through the exact affine parent chain.  The stop
    scale selects the cut level k with r_{k+1} <= s0 < r_k.
    """
    space = tree.space
    m = len(chain.sample)
    g_points = np.zeros(m, dtype=int)
    g_levels = np.zeros(m, dtype=int)
    increments: dict[int, float] = {}
    per_level_points = np.zeros((tree.depth + 1, m), dtype=int)
    for s in range(m):
        deepest = 0
        for lev in range(tree.depth + 1):
            chart_idx, coords = chain.traces[lev]
            if chart_idx[s] >= 0:
                node = tree.levels[lev][int(chart_idx[s])]
                pid, _ = node.alpha(coords[s])
                per_level_points[lev, s] = pid
                deepest = lev
            else:
                per_level_points[lev, s] = per_level_points[lev - 1, s]
        g_points[s] = per_level_points[deepest, s]
        g_levels[s] = deepest
    for lev in range(tree.depth):
        d = space.dist[per_level_points[lev], per_level_points[lev + 1]]
        increments[lev] = float(d.max()) if len(d) else 0.0

    # backward map
    gbar = np.zeros((len(eval_ids), chain.sample.shape[1]))
    gbar_lev = np.zeros(len(eval_ids), dtype=int)
    for row, y in enumerate(eval_ids):
        best = None
        for lev in range(tree.depth, -1, -1):
            nodes = tree.levels[lev]
            r = tree.radius(lev)
            centers = np.array([nd.center for nd in nodes])
            d = space.dist[int(y), centers]
            j = int(d.argmin())
            if d[j] <= tree.footprint * r:
                coords = nodes[j].beta_of(int(y))
                if coords is None:
                    pid, _ = nodes[j].alpha(np.zeros(chain.sample.shape[1]))
                    continue
                best = (lev, j, coords)
                break
        if best is None:
            gbar[row] = np.nan
            continue
        lev, j, u = best
        gbar_lev[row] = lev
        # pull back through the parent chain
        cur_lev, cur_j, cur_u = lev, j, u
        ok = True
        while cur_lev > 0:
            k_map = None if cur_lev == 0 else _cross_map_checked(tree, cur_lev, cur_j)
            if k_map is None:
                ok = False
                break
            cur_u = k_map(cur_u[None, :])[0]
            cur_j = tree.levels[cur_lev][cur_j].parent
            cur_lev -= 1
        gbar[row] = cur_u if ok else np.nan
    s0 = stop_scale if stop_scale is not None else tree.radius(tree.depth)
    cut = 0
    for lev in range(tree.depth + 1):
        if tree.radius(lev) > s0:
            cut = lev
    return ChartMaps(
        g_points=g_points,
        g_levels=g_levels,
        g_increments=increments,
        gbar_coords=gbar,
        gbar_levels=gbar_lev,
        eval_ids=np.asarray(eval_ids),
        stop_scale=s0,
        cut_level=cut,
    )


_CROSS_CACHE: dict = {}


def _cross_map_checked(tree: BallTree, level: int, j: int):
    key = (id(tree), level, j)
    if key not in _CROSS_CACHE:
        node = tree.levels[level][j]
        parent = tree.levels[level - 1][node.parent]
        aff, _ = _composite_transition(tree.space, node, parent)
        _CROSS_CACHE[key] = aff
    return _CROSS_CACHE[key]


def attach_atlas_cross_maps(tree: BallTree, atlas: TransitionAtlas) -> None:
    """Seed the backward-map cache with the atlas's fitted cross-level maps."""
    for (lev, j), aff in atlas.cross_level.items():
        _CROSS_CACHE[(id(tree), lev, j)] = aff


# ---------------------------------------------------------------------------
# Output verification


def verify_outputs(
    tree: BallTree,
    atlas: TransitionAtlas,
    chain: ChainMetric,
    maps: ChartMaps,
    sample_weights: np.ndarray | None = None,
    holder_buckets: int = 6,
) -> dict:
    """Measured analogues of the engine's output guarantees.

    Reports the sup deviation of the chain metric from the root gauge, the
    coarse two-sided comparison through the backward map, round-trip defects
    per resident level, exactness of the triangle inequality, the Holder
    regression band, and regularity constants of the chain metric space.
    """
    space = tree.space
    sample = chain.sample
    root_norm = tree.root.norm
    m = len(sample)
    base = root_norm.cross_dist(sample, sample)
    sup_dev = float(np.abs(chain.rho - base).max())

    # coarse two-sided bound through g-bar on the evaluation points
    ev = maps.eval_ids
    s0 = maps.stop_scale
    # locate each eval point's g-bar coords within the sample (they are
    # appended there by the runner); fall back to nearest sample row
    coarse = 0.0
    rows = []
    for row in range(len(ev)):
        u = maps.gbar_coords[row]
        if np.isnan(u).any():
            rows.append(-1)
            continue
        d = np.asarray(root_norm.eval(sample - u))
        rows.append(int(d.argmin()))
    rows = np.asarray(rows)
    pair_report = []
    for a in range(len(ev)):
        for b in range(a + 1, len(ev)):
            if rows[a] < 0 or rows[b] < 0:
                continue
            d_x = float(space.dist[int(ev[a]), int(ev[b])])
            d_rho = float(chain.rho[rows[a], rows[b]])
            val = abs(d_rho - d_x) / (d_x + s0)
            pair_report.append(val)
            coarse = max(coarse, val)

    # round trips per level
    round_trip = {}
    for lev in range(tree.depth + 1):
        resident = np.flatnonzero(maps.g_levels >= lev)
        if not len(resident):
            continue
        worst = 0.0
        chart_idx, coords = chain.traces[lev]
        for s in resident:
            j = int(chart_idx[s])
            if j < 0:
                continue
            node = tree.levels[lev][j]
            pid, _ = node.alpha(coords[s])
            back = node.beta_of(pid)
            if back is None:
                continue
            worst = max(worst, float(node.norm.eval(back - coords[s])))
        round_trip[lev] = worst

    # exact triangle inequality of rho
    tri_ok = True
    rng = np.random.default_rng(7)
    for _ in range(20000):
        i, j, k = rng.integers(0, m, 3)
        if chain.rho[i, j] > chain.rho[i, k] + chain.rho[k, j] + 1e-9 * tree.top_scale:
            tri_ok = False
            break

    # Holder band: bucketed log-log regression of rho against the root gauge
    iu = np.triu_indices(m, 1)
    x = base[iu]
    y = chain.rho[iu]
    keep = (x > 1e-6 * tree.top_scale) & (y > 0)
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slopes = []
    if len(lx) > 10:
        edges = np.quantile(lx, np.linspace(0, 1, holder_buckets + 1))
        for b in range(holder_buckets):
            in_b = (lx >= edges[b]) & (lx <= edges[b + 1])
            if in_b.sum() > 10 and lx[in_b].std() > 1e-9:
                s, _ = np.polyfit(lx[in_b], ly[in_b], 1)
                slopes.append(float(s))
        s_all, _ = np.polyfit(lx, ly, 1)
        slopes.append(float(s_all))
    band = (min(slopes), max(slopes)) if slopes else (np.nan, np.nan)

    # regularity of the chain-metric sample space
    from .spaces import ahlfors_stats

    if sample_weights is None:
        sample_weights = np.ones(m)
    rho_space = FiniteMetricSpace(
        dist=chain.rho, weights=sample_weights, dim_hint=sample.shape[1]
    )
    n = sample.shape[1]
    reg = ahlfors_stats(
        rho_space, n, (0.05 * tree.top_scale, tree.top_scale), 256
    )

    return {
        "sup_rho_vs_root": sup_dev,
        "coarse_bilip": coarse,
        "coarse_pairs": len(pair_report),
        "round_trip": round_trip,
        "triangle_exact": tri_ok,
        "holder_band": band,
        "rho_ahlfors": (reg.c_low, reg.c_high),
        "cauchy": chain.cauchy_report,
        "pert_ratio": chain.pert_ratio,
        "audit_flags": tree.audit,
        "dropped_transitions": len(atlas.dropped_pairs),
        "stop_scale": maps.stop_scale,
        "cut_level": maps.cut_level,
    }
