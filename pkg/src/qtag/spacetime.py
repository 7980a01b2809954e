"""Minkowski-space geometry: stations, tag, light-speed delays and multilateration.

Coordinates and the signal speed may be given as ints, floats, decimal
strings or :class:`fractions.Fraction`.  Timing-critical code goes through
:func:`exact_delay`, which works in rational arithmetic; the float helpers are
for geometry solves and reporting only.
"""

from __future__ import annotations

import functools
import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

# Fixed-point grid for delays whose exact value is irrational.
TIME_QUANTUM = Fraction(1, 10**12)
# Absolute sphere-intersection tolerance, distance units.
TAU_GEO = 1e-9
# |det| / longest_edge**n below this counts as a flat simplex.
_DEGENERACY = 1e-9
# Barycentric slack so that vertices and faces count as inside.
_HULL_SLACK = 1e-12


def exact(value) -> Fraction:
    """Convert a coordinate, time or speed to an exact rational.

    Floats go through their shortest repr, so ``0.1`` becomes ``1/10``.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, numbers.Integral):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, numbers.Real):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        return Fraction(repr(value))
    raise TypeError(f"cannot interpret {value!r} as a real number")


def exact_point(p) -> tuple[Fraction, ...]:
    return tuple(exact(v) for v in p)


def _is_finite(value) -> bool:
    try:
        exact(value)
    except (TypeError, ValueError, ZeroDivisionError):
        return False
    return True


@dataclass(frozen=True)
class SpacetimeEvent:
    """A point in spacetime: time ``t`` and spatial position ``x``."""

    t: object
    x: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        if not _is_finite(self.t) or not all(_is_finite(v) for v in self.x):
            raise ValueError(f"spacetime event must be finite, got t={self.t!r} x={self.x!r}")

    @cached_property
    def exact_t(self) -> Fraction:
        return exact(self.t)

    @cached_property
    def exact_x(self) -> tuple[Fraction, ...]:
        return exact_point(self.x)


@dataclass(frozen=True)
class Geometry:
    """Station layout, tag location and signal speed.

    ``tag`` is where the tag physically sits.  ``claimed_tag`` is the location
    Alice wants to authenticate; it defaults to ``tag``.  ``tag_extent`` is
    only meaningful in one dimension and is used for validation alone: all
    protocol logic treats the tag as a point.
    """

    dimension: int
    stations: tuple
    tag: tuple
    c: object = 1
    tag_extent: tuple | None = None
    claimed_tag: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(tuple(s) for s in self.stations))
        object.__setattr__(self, "tag", tuple(self.tag))
        if self.tag_extent is not None:
            object.__setattr__(self, "tag_extent", tuple(self.tag_extent))
        if self.claimed_tag is not None:
            object.__setattr__(self, "claimed_tag", tuple(self.claimed_tag))
        problems = self.problems()
        if problems:
            raise ConfigurationError(problems)

    def problems(self) -> list[tuple[str, str]]:
        """Every violated geometry rule, as ``(field, message)`` pairs."""
        out = []
        n = self.dimension
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            return [("dimension", f"must be a positive integer, got {n!r}")]
        if not _is_finite(self.c) or exact(self.c) <= 0:
            out.append(("c", f"signal speed must be finite and > 0, got {self.c!r}"))
        points = [(f"stations[{i}]", s) for i, s in enumerate(self.stations)]
        points.append(("tag", self.tag))
        if self.claimed_tag is not None:
            points.append(("claimed_tag", self.claimed_tag))
        bad_shape = False
        for path, p in points:
            if len(p) != n:
                out.append((path, f"expected {n} coordinates, got {len(p)}"))
                bad_shape = True
            elif not all(_is_finite(v) for v in p):
                out.append((path, "coordinates must be finite numbers"))
                bad_shape = True
        if bad_shape:
            return out

        if n == 1:
            if len(self.stations) != 2:
                out.append(("stations", "one-dimensional tagging needs exactly two stations"))
                return out
            a0, a1 = exact(self.stations[0][0]), exact(self.stations[1][0])
            t = exact(self.claimed[0])
            if not a0 < a1:
                out.append(("stations", f"need a_0 < a_1, got a_0={a0} a_1={a1}"))
            elif not a0 < t < a1:
                out.append(("tag", f"need a_0 < t_plus < a_1, got t_plus={t}"))
            if self.tag_extent is not None:
                if len(self.tag_extent) != 2 or not all(_is_finite(v) for v in self.tag_extent):
                    out.append(("tag_extent", "must be two finite numbers [t_0, t_1]"))
                else:
                    t0, t1 = (exact(v) for v in self.tag_extent)
                    if not a0 < t0 <= t <= t1 < a1:
                        out.append(("tag_extent", "need a_0 < t_0 <= t_plus <= t_1 < a_1"))
        else:
            if self.tag_extent is not None:
                out.append(("tag_extent", "only supported in one dimension"))
            if len(self.stations) != n + 1:
                out.append(("stations", f"{n}-dimensional multilateration needs {n + 1} stations"))
            elif is_degenerate(self.stations):
                what = "coplanar" if n == 3 else "collinear"
                out.append(("stations", f"stations are {what}; they must span a non-degenerate simplex"))
        return out

    @property
    def claimed(self) -> tuple:
        return self.claimed_tag if self.claimed_tag is not None else self.tag

    @cached_property
    def exact_c(self) -> Fraction:
        return exact(self.c)

    @cached_property
    def exact_stations(self) -> tuple[tuple[Fraction, ...], ...]:
        return tuple(exact_point(s) for s in self.stations)

    @cached_property
    def exact_tag(self) -> tuple[Fraction, ...]:
        return exact_point(self.tag)

    @cached_property
    def exact_claimed(self) -> tuple[Fraction, ...]:
        return exact_point(self.claimed)


def _check_dims(p, q, n=None):
    if len(p) != len(q) or (n is not None and len(p) != n):
        raise ConfigurationError(f"dimension mismatch: {len(p)} vs {len(q)}" + (f" (geometry n={n})" if n else ""))


def _speed(geom_or_c) -> Fraction:
    if isinstance(geom_or_c, Geometry):
        return geom_or_c.exact_c
    return exact(geom_or_c)


def propagation_delay(p: Sequence, q: Sequence, geom) -> float:
    """Light-speed travel time from ``p`` to ``q`` (float)."""
    _check_dims(p, q, geom.dimension if isinstance(geom, Geometry) else None)
    return math.dist(_floats(p), _floats(q)) / float(_speed(geom))


def _ceil_sqrt_ratio(num: int, den: int) -> int:
    """Smallest m >= 0 with m*m*den >= num (num >= 0, den > 0)."""
    m = math.isqrt(num // den)
    while m * m * den < num:
        m += 1
    return m


def _exact_sqrt(value: Fraction) -> Fraction | None:
    num, den = value.numerator, value.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return None


def exact_delay(p: Sequence, q: Sequence, c=1) -> Fraction:
    """Travel time from ``p`` to ``q`` as an exact rational.

    When the Euclidean distance is irrational the delay is rounded *up* to the
    :data:`TIME_QUANTUM` grid, so a quantised signal never beats light.
    """
    _check_dims(p, q)
    return _exact_delay(tuple(exact(v) for v in p), tuple(exact(v) for v in q), _speed(c))


@functools.lru_cache(maxsize=65536)
def _exact_delay(p, q, speed) -> Fraction:
    sq = sum((a - b) ** 2 for a, b in zip(p, q))
    if sq == 0:
        return Fraction(0)
    root = _exact_sqrt(sq)
    if root is not None:
        return root / speed
    scaled = sq / (speed * speed * TIME_QUANTUM * TIME_QUANTUM)
    return _ceil_sqrt_ratio(scaled.numerator, scaled.denominator) * TIME_QUANTUM


def causally_accessible(origin: SpacetimeEvent, query: SpacetimeEvent, geom) -> bool:
    """True iff a light-speed signal from ``origin`` can reach ``query``.

    Evaluated exactly (squared distances, no rounding).
    """
    _check_dims(origin.x, query.x)
    dt = query.exact_t - origin.exact_t
    if dt < 0:
        return False
    c = _speed(geom)
    sq = sum((a - b) ** 2 for a, b in zip(origin.exact_x, query.exact_x))
    return (dt * c) ** 2 >= sq


def light_cone_deficit(origin: SpacetimeEvent, query: SpacetimeEvent, geom) -> float:
    """How much later ``query`` would need to be to lie in ``origin``'s future cone.

    Non-positive when accessible.
    """
    return float(origin.exact_t - query.exact_t) + propagation_delay(origin.x, query.x, geom)


def _floats(p) -> list[float]:
    # "13/2" strings are accepted like numbers
    return [float(exact(c)) if isinstance(c, str) else float(c) for c in p]


def _simplex_matrix(vertices) -> np.ndarray:
    v = np.asarray([_floats(p) for p in vertices], dtype=float)
    return (v[:-1] - v[-1]).T


def is_degenerate(vertices) -> bool:
    """True when ``n+1`` vertices in n dimensions span (almost) zero volume."""
    v = np.asarray([_floats(p) for p in vertices], dtype=float)
    n = v.shape[1]
    if v.shape[0] != n + 1:
        return True
    edges = [np.linalg.norm(v[i] - v[j]) for i in range(n + 1) for j in range(i)]
    longest = max(edges)
    if longest == 0:
        return True
    return abs(np.linalg.det(_simplex_matrix(v))) / longest**n < _DEGENERACY


def barycentric(p, vertices) -> np.ndarray:
    """Barycentric coordinates of ``p`` with respect to an n-simplex."""
    if is_degenerate(vertices):
        raise ConfigurationError("degenerate simplex: vertices do not span full dimension")
    v = np.asarray([_floats(q) for q in vertices], dtype=float)
    lam = np.linalg.solve(_simplex_matrix(v), np.asarray(_floats(p)) - v[-1])
    return np.append(lam, 1.0 - lam.sum())


def in_simplex(p, vertices) -> bool:
    """Closed-hull membership: boundary points count as inside."""
    lam = barycentric(p, vertices)
    return bool(np.all(lam >= -_HULL_SLACK) and np.all(lam <= 1 + _HULL_SLACK))


def in_tetrahedron(p, vertices) -> bool:
    if len(vertices) != 4 or any(len(v) != 3 for v in vertices) or len(p) != 3:
        raise ConfigurationError("in_tetrahedron needs a 3D point and four 3D vertices")
    return in_simplex(p, vertices)


@dataclass(frozen=True)
class Multilateration:
    """Result of intersecting distance spheres.

    ``position`` is the candidate point solving the pairwise-differenced
    sphere equations; ``residuals[i]`` is ``|position - s_i| - d_i``.  When
    ``consistent`` is false this object is the inconsistency report.
    """

    position: tuple
    residuals: tuple
    consistent: bool
    tolerance: float = field(default=TAU_GEO)

    @property
    def max_residual(self) -> float:
        return max(abs(r) for r in self.residuals)


def multilaterate(stations, distances, tolerance: float = TAU_GEO) -> Multilateration:
    """Locate the point at the given distances from n+1 stations in n dimensions."""
    s = np.asarray([_floats(p) for p in stations], dtype=float)
    d = np.asarray(_floats(distances), dtype=float)
    n = s.shape[1]
    if s.shape[0] != n + 1 or d.shape != (n + 1,):
        raise ConfigurationError(f"need {n + 1} stations and distances in {n} dimensions")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ConfigurationError("distances must be finite and non-negative")
    if is_degenerate(s):
        raise ConfigurationError("stations are coplanar (degenerate); multilateration is ill-posed")
    center = s.mean(axis=0)
    sc = s - center
    a = 2.0 * (sc[1:] - sc[0])
    b = (sc[1:] ** 2).sum(axis=1) - (sc[0] ** 2).sum() - d[1:] ** 2 + d[0] ** 2
    p = np.linalg.solve(a, b)
    p += np.linalg.solve(a, b - a @ p)
    pos = p + center
    res = np.linalg.norm(pos - s, axis=1) - d
    return Multilateration(
        position=tuple(float(x) for x in pos),
        residuals=tuple(float(r) for r in res),
        consistent=bool(np.max(np.abs(res)) <= tolerance),
        tolerance=tolerance,
    )
