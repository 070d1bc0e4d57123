"""Christ-David style dyadic cube systems on a finite metric space.

Levels are built from nested maximal separated nets; the cube side is
ell(Q) = rho^k * s0 / (1 - rho), the tight bound on how far a point's
assignment chain can drift from its level-k center, so the containment
Q <= B(x_Q, ell(Q)) holds exactly. The inner constant is measured per cube
rather than assumed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .spaces import Ball, FiniteMetricSpace, extend_net


@dataclass(frozen=True)
class Cube:
    id: int
    level: int
    center: int
    side: float
    members: np.ndarray
    parent: int | None
    children: tuple[int, ...]
    c_meas: float

    def __post_init__(self):
        m = np.asarray(self.members)
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    def ball(self, dilation: float = 1.0) -> Ball:
        return Ball(center=self.center, radius=dilation * self.side)


@dataclass(frozen=True)
class CubeSystem:
    rho: float
    base_scale: float
    levels: tuple[tuple[int, ...], ...]  # cube ids per level, coarse to fine
    cubes: dict[int, Cube] = field(repr=False)
    seed: int = 0
    truncated: bool = False

    @property
    def side_factor(self) -> float:
        return 1.0 / (1.0 - self.rho)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level_side(self, level: int) -> float:
        return self.side_factor * self.rho ** level * self.base_scale

    def level_cubes(self, level: int) -> list[Cube]:
        return [self.cubes[i] for i in self.levels[level]]

    def all_cubes(self) -> list[Cube]:
        return [self.cubes[i] for layer in self.levels for i in layer]

    @property
    def root(self) -> Cube:
        return self.cubes[self.levels[0][0]]

    def parent_of(self, cube: Cube) -> Cube | None:
        return None if cube.parent is None else self.cubes[cube.parent]

    def children_of(self, cube: Cube) -> list[Cube]:
        return [self.cubes[c] for c in cube.children]

    def siblings_of(self, cube: Cube) -> list[Cube]:
        """All cubes sharing the cube's parent, the cube itself included."""
        if cube.parent is None:
            return [cube]
        return self.children_of(self.cubes[cube.parent])

    def descendants(self, cube: Cube) -> list[Cube]:
        out = [cube]
        stack = list(cube.children)
        while stack:
            c = self.cubes[stack.pop()]
            out.append(c)
            stack.extend(c.children)
        return out

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "base_scale": self.base_scale,
            "seed": self.seed,
            "truncated": self.truncated,
            "levels": [
                [
                    {
                        "id": c.id,
                        "center": int(c.center),
                        "side": c.side,
                        "members": [int(m) for m in c.members],
                        "parent": c.parent,
                    }
                    for c in (self.cubes[i] for i in layer)
                ]
                for layer in self.levels
            ],
        }


def _nearest_center(space: FiniteMetricSpace, centers: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index into `centers` of the nearest center per point; ties prefer the
    smaller point id (centers are sorted ascending before argmin)."""
    order = np.argsort(centers)
    sorted_centers = centers[order]
    d = space.dist[np.ix_(sorted_centers, points)]
    return order[d.argmin(axis=0)]


def build_cubes(
    space: FiniteMetricSpace,
    rho: float = 0.5,
    levels: int = 5,
    seed: int = 0,
) -> CubeSystem:
    """Build a nested cube system from nested maximal nets.

    The coarsest level is a single root whose center minimizes eccentricity.
    Finer levels use maximal (rho^k * s0)-separated nets extending the coarser
    net; every finer center is assigned to its nearest coarser center and
    point membership follows the chains.  Deterministic given (space, rho,
    seed).  If the requested depth exceeds the space's resolution the system
    is truncated and flagged.
    """
    if not 0 < rho <= 0.5:
        raise ValueError("rho must lie in (0, 1/2]")
    n_pts = space.point_count
    ecc = space.dist.max(axis=1)
    root_center = int(ecc.argmin())
    s0 = float(space.diameter) if n_pts > 1 else 1.0
    kappa = 1.0 / (1.0 - rho)

    nets: list[np.ndarray] = [np.array([root_center])]
    truncated = False
    for k in range(1, levels):
        scale = rho ** k * s0
        net = extend_net(space, tuple(int(c) for c in nets[-1]), scale, seed)
        members = np.asarray(net.members)
        if len(members) == len(nets[-1]) and len(members) == n_pts:
            truncated = True
            break
        nets.append(members)
        if len(members) == n_pts:
            if k < levels - 1:
                truncated = True
            break

    depth = len(nets)
    # parent of each center at level k+1 among level-k centers
    parent_idx: list[np.ndarray] = []
    for k in range(depth - 1):
        parent_idx.append(_nearest_center(space, nets[k], nets[k + 1]))
    # assign every point to its nearest finest-level center, then chain up
    finest = _nearest_center(space, nets[-1], np.arange(n_pts))
    level_assign = [None] * depth
    level_assign[depth - 1] = finest
    for k in range(depth - 2, -1, -1):
        level_assign[k] = parent_idx[k][level_assign[k + 1]]

    cubes: dict[int, Cube] = {}
    levels_ids: list[tuple[int, ...]] = []
    next_id = 0
    id_grid: list[list[int]] = []
    for k in range(depth):
        ids_here = []
        for _ in range(len(nets[k])):
            ids_here.append(next_id)
            next_id += 1
        id_grid.append(ids_here)
        levels_ids.append(tuple(ids_here))

    children_map: dict[int, list[int]] = {i: [] for i in range(next_id)}
    for k in range(depth - 1):
        for ci, pi in enumerate(parent_idx[k]):
            children_map[id_grid[k][pi]].append(id_grid[k + 1][ci])

    for k in range(depth):
        side = kappa * rho ** k * s0
        assign = level_assign[k]
        for ci, center in enumerate(nets[k]):
            members = np.flatnonzero(assign == ci)
            non_members = np.flatnonzero(assign != ci)
            if len(non_members):
                c_meas = float(space.dist[center, non_members].min()) / side
            else:
                c_meas = 1.0
            parent = id_grid[k - 1][parent_idx[k - 1][ci]] if k > 0 else None
            cid = id_grid[k][ci]
            cubes[cid] = Cube(
                id=cid,
                level=k,
                center=int(center),
                side=side,
                members=members,
                parent=parent,
                children=tuple(children_map[cid]),
                c_meas=c_meas,
            )
    return CubeSystem(
        rho=rho,
        base_scale=s0,
        levels=tuple(levels_ids),
        cubes=cubes,
        seed=seed,
        truncated=truncated,
    )


def boundary_layer(
    space: FiniteMetricSpace, system: CubeSystem, cube: Cube, eta: float
) -> tuple[np.ndarray, float]:
    """Members within eta * (level net scale) of the cube's complement.

    Returns the point ids and the normalized boundary mass
    weight(sigma(Q)) / ell(Q)^n.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    outside = np.setdiff1d(np.arange(space.point_count), cube.members, assume_unique=False)
    if not len(outside):
        return np.array([], dtype=int), 0.0
    scale = eta * system.rho ** cube.level * system.base_scale
    d_out = space.dist[np.ix_(cube.members, outside)].min(axis=1)
    sigma = cube.members[d_out <= scale]
    mass = float(space.weights[sigma].sum()) / cube.side ** space.dim_hint
    return sigma, mass


def relations(system: CubeSystem, cube: Cube) -> dict:
    return {
        "parent": system.parent_of(cube),
        "children": system.children_of(cube),
        "siblings": system.siblings_of(cube),
    }


def check_system(space: FiniteMetricSpace, system: CubeSystem) -> None:
    """Assert partition, nesting, and containment invariants exactly."""
    n = space.point_count
    for k in range(system.depth):
        seen = np.concatenate([c.members for c in system.level_cubes(k)]) if system.levels[k] else []
        assert len(seen) == n and len(np.unique(seen)) == n, f"level {k} does not partition"
    for cube in system.all_cubes():
        if cube.children:
            child_members = np.sort(np.concatenate([system.cubes[c].members for c in cube.children]))
            assert np.array_equal(child_members, np.sort(cube.members)), "child members do not partition parent"
        if len(cube.members):
            assert space.dist[cube.center, cube.members].max() <= cube.side * (1 + 1e-12), "containment violated"
        assert cube.c_meas > 0, "inner constant not positive"


def system_to_json(system: CubeSystem, path=None) -> str:
    text = json.dumps(system.to_json(), indent=1, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
