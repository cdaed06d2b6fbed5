"""Fully symmetric preliminary grids and their affine interrogation images.

A preliminary grid lives in standardized coordinates and is a union of
orbits: all points reachable from a generator (a multiset of positive
magnitudes) by coordinate placement and sign changes. The interrogation grid
is the rowwise affine image T s + mode.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .integrand import GaussianApprox

__all__ = [
    "Orbit",
    "PreliminaryGrid",
    "InterrogationGrid",
    "expand_orbit",
    "cross2d_grid",
    "ckf_grid",
    "gh2_grid",
    "custom_grid",
    "to_interrogation",
    "grid_to_json",
    "grid_from_json",
]

# univariate Gauss-Hermite node magnitudes (weight exp(-x^2/2)) for the
# nested 1/2/3-point rules used by the order-2 sparse construction:
# H2(x) = x^2 - 1 has roots +-1, H3(x) = x^3 - 3x has nonzero roots +-sqrt(3)
GH_LEVEL2_NODE = 1.0
GH_LEVEL3_NODE = math.sqrt(3.0)


@dataclass(frozen=True)
class Orbit:
    """One fully symmetric orbit: a generator and its expanded points."""

    generator: tuple[float, ...]
    points: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def radius(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.generator))))


def expand_orbit(generator, d: int) -> Orbit:
    """All distinct sign/placement images of ``generator`` in d dimensions.

    The generator is a multiset of positive magnitudes of length <= d; points
    are returned in lexicographic order.
    """
    gen = tuple(sorted(float(g) for g in generator))
    if len(gen) > d:
        raise ValueError(f"generator of length {len(gen)} does not fit in d={d}")
    if any(g <= 0 for g in gen):
        raise ValueError("generator magnitudes must be positive (origin is its own orbit)")

    # group equal magnitudes so that swapping equal entries does not double-count
    groups: list[tuple[float, int]] = []
    for g in gen:
        if groups and groups[-1][0] == g:
            groups[-1] = (g, groups[-1][1] + 1)
        else:
            groups.append((g, 1))

    points: list[np.ndarray] = []

    def place(group_idx: int, free: tuple[int, ...], base: np.ndarray):
        if group_idx == len(groups):
            points.append(base)
            return
        mag, count = groups[group_idx]
        for idxs in itertools.combinations(free, count):
            remaining = tuple(i for i in free if i not in idxs)
            for signs in itertools.product((-1.0, 1.0), repeat=count):
                vec = base.copy()
                for i, s in zip(idxs, signs):
                    vec[i] = s * mag
                place(group_idx + 1, remaining, vec)

    place(0, tuple(range(d)), np.zeros(d))
    pts = np.array(points)
    pts = pts[np.lexsort(pts.T[::-1])]
    return Orbit(generator=gen, points=pts)


def _origin_orbit(d: int) -> Orbit:
    return Orbit(generator=(), points=np.zeros((1, d)))


@dataclass(frozen=True)
class PreliminaryGrid:
    """A union of fully symmetric orbits in standardized coordinates."""

    dim: int
    orbits: tuple[Orbit, ...]
    family: str
    scale: float = 1.0
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.concatenate([o.points for o in self.orbits], axis=0)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def orbit_slices(self) -> list[slice]:
        """Row slices of ``points`` belonging to each orbit, in order."""
        out, start = [], 0
        for o in self.orbits:
            out.append(slice(start, start + o.size))
            start += o.size
        return out


def _sorted_orbits(orbits) -> tuple[Orbit, ...]:
    return tuple(sorted(orbits, key=lambda o: o.generator))


def cross2d_grid() -> PreliminaryGrid:
    """The 13-point 2-D cross: the origin plus +-m e_i for m in {1, 2, 3}."""
    orbits = [_origin_orbit(2)] + [expand_orbit((m,), 2) for m in (1.0, 2.0, 3.0)]
    return PreliminaryGrid(dim=2, orbits=tuple(orbits), family="cross2d")


def ckf_grid(d: int) -> PreliminaryGrid:
    """The 2d+1 point grid: origin plus +-sqrt(d) e_i.

    The radius sqrt(d) places the axis points in the shell where a
    d-dimensional Gaussian carries most of its mass.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    orbits = (_origin_orbit(d), expand_orbit((math.sqrt(d),), d))
    return PreliminaryGrid(dim=d, orbits=orbits, family="ckf")


def gh2_grid(d: int, scale: float = 3.6) -> PreliminaryGrid:
    """Order-2 sparse Gauss-Hermite grid, origin removed, scaled by ``scale``.

    Three orbits with generators (a), (b), (a, a), where a and b are the new
    node magnitudes of the nested univariate Gauss-Hermite rules (a = 1,
    b = sqrt(3)); total size 4d + 4 C(d, 2).
    """
    if d < 2:
        raise ValueError("d must be >= 2 for the order-2 sparse grid")
    if scale <= 0:
        raise ValueError("scale must be positive")
    a = scale * GH_LEVEL2_NODE
    b = scale * GH_LEVEL3_NODE
    orbits = _sorted_orbits(
        [expand_orbit((a,), d), expand_orbit((b,), d), expand_orbit((a, a), d)]
    )
    return PreliminaryGrid(dim=d, orbits=orbits, family="gh2", scale=scale)


def custom_grid(d: int, generators, include_origin: bool = True) -> PreliminaryGrid:
    """Grid from explicit generators (family 'custom').

    Cross-style grids with multiple magnitudes per axis behave poorly when
    generalized beyond low dimensions; a warning is emitted for that shape.
    """
    axis_gens = [g for g in generators if len(g) == 1]
    if d > 2 and len(axis_gens) > 1:
        warnings.warn(
            "multiple magnitudes per axis generalize poorly to high dimensions",
            stacklevel=2,
        )
    orbits = list(_sorted_orbits([expand_orbit(tuple(g), d) for g in generators]))
    if include_origin:
        orbits = [_origin_orbit(d)] + orbits
    return PreliminaryGrid(dim=d, orbits=tuple(orbits), family="custom")


@dataclass(frozen=True)
class InterrogationGrid:
    """Preliminary grid mapped into the integrand's original coordinates."""

    points: np.ndarray
    source: PreliminaryGrid
    approx: GaussianApprox


def to_interrogation(grid: PreliminaryGrid, approx: GaussianApprox) -> InterrogationGrid:
    """Apply s -> T s + mode rowwise, preserving orbit ordering."""
    if grid.dim != approx.dim:
        raise DimensionMismatch(f"grid dim {grid.dim} != approx dim {approx.dim}")
    pts = grid.points @ approx.transform.T + approx.mode
    return InterrogationGrid(points=pts, source=grid, approx=approx)


# ---------------------------------------------------------------------------
# serialization: points are regenerated deterministically on load
# ---------------------------------------------------------------------------

_BUILDERS = {
    "cross2d": lambda dim, scale, gens: cross2d_grid(),
    "ckf": lambda dim, scale, gens: ckf_grid(dim),
    "gh2": lambda dim, scale, gens: gh2_grid(dim, scale),
}


def grid_to_json(grid: PreliminaryGrid) -> str:
    doc = {
        "dim": grid.dim,
        "family": grid.family,
        "scale": grid.scale,
        "orbits": [{"generator": list(o.generator), "size": o.size} for o in grid.orbits],
    }
    return json.dumps(doc)


def grid_from_json(doc: str | dict) -> PreliminaryGrid:
    if isinstance(doc, str):
        doc = json.loads(doc)
    family = doc["family"]
    if family in _BUILDERS:
        grid = _BUILDERS[family](doc["dim"], doc.get("scale", 1.0), None)
    else:
        gens = [tuple(o["generator"]) for o in doc["orbits"] if o["generator"]]
        include_origin = any(not o["generator"] for o in doc["orbits"])
        grid = custom_grid(doc["dim"], gens, include_origin=include_origin)
    expected = [(tuple(o["generator"]), o["size"]) for o in doc["orbits"]]
    actual = [(o.generator, o.size) for o in grid.orbits]
    if sorted(expected) != sorted(actual):
        raise ValueError("regenerated grid does not match serialized orbit table")
    return grid
