"""Finite metric spaces and the gap/diameter calculus on sets of ordered pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    Asymmetry,
    CoordinateMismatch,
    EmptyPairSet,
    EmptySet,
    NegativeDistance,
    NonzeroDiagonal,
    NotSquare,
    TriangleViolation,
    ZeroOffDiagonal,
)

TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """A validated finite metric space.

    Build instances with :func:`validate_metric` or :meth:`from_points`; the
    constructor itself does not check the axioms.
    """

    dist: np.ndarray
    labels: tuple[str, ...] | None = None
    coords: np.ndarray | None = None
    p: float | None = None

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n else 0.0

    @property
    def min_separation(self) -> float:
        if self.n < 2:
            return 0.0
        off = self.dist[~np.eye(self.n, dtype=bool)]
        return float(off.min())

    @property
    def has_coords(self) -> bool:
        return self.coords is not None

    @classmethod
    def from_points(cls, points, p: float = 2.0, labels: Sequence[str] | None = None,
                    tol: float = TOL) -> "FiniteMetricSpace":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if p < 1:
            raise ValueError(f"exponent p must be >= 1, got {p}")
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.linalg.norm(diff, ord=p, axis=2) if pts.shape[1] else np.zeros((len(pts),) * 2)
        return validate_metric(dist, labels=labels, coords=pts, p=p, tol=tol)

    def subspace(self, idx: Sequence[int]) -> "FiniteMetricSpace":
        idx = np.asarray(idx, dtype=int)
        return FiniteMetricSpace(
            dist=_frozen(self.dist[np.ix_(idx, idx)]),
            labels=None if self.labels is None else tuple(self.labels[i] for i in idx),
            coords=None if self.coords is None else _frozen(self.coords[idx]),
            p=self.p,
        )

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i)


def validate_metric(matrix, labels: Sequence[str] | None = None, coords=None,
                    p: float | None = None, tol: float = TOL) -> FiniteMetricSpace:
    """Check the metric axioms and return a frozen :class:`FiniteMetricSpace`.

    Raises the :class:`~c0embed.errors.MetricAxiomError` subclass of the first
    violated axiom, carrying the witnessing indices.
    """
    d = np.array(matrix, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise NotSquare(f"distance matrix must be square, got shape {d.shape}")
    n = d.shape[0]
    if not np.all(np.isfinite(d)):
        i, j = np.argwhere(~np.isfinite(d))[0]
        raise NegativeDistance(f"non-finite distance at ({i},{j})", (int(i), int(j)))

    diag = np.flatnonzero(np.diag(d) != 0)
    if diag.size:
        i = int(diag[0])
        raise NonzeroDiagonal(f"dist[{i}][{i}] = {d[i, i]!r}, expected 0", (i,))

    neg = np.argwhere(d < 0)
    if neg.size:
        i, j = map(int, neg[0])
        raise NegativeDistance(f"dist[{i}][{j}] = {d[i, j]!r} < 0", (i, j))

    asym = np.argwhere(d != d.T)
    if asym.size:
        i, j = map(int, asym[0])
        raise Asymmetry(f"dist[{i}][{j}] = {d[i, j]!r} != dist[{j}][{i}] = {d[j, i]!r}", (i, j))

    zero = np.argwhere((d == 0) & ~np.eye(n, dtype=bool))
    if zero.size:
        i, j = map(int, zero[0])
        raise ZeroOffDiagonal(f"points {i} and {j} coincide (distance 0)", (i, j))

    # bound[i, k] = min_j d[i, j] + d[j, k]
    for i in range(n):
        via = (d[i][:, None] + d).min(axis=0)
        bad = np.flatnonzero(d[i] > via + tol)
        if bad.size:
            k = int(bad[0])
            j = int(np.argmin(d[i] + d[:, k]))
            raise TriangleViolation(
                f"triangle inequality fails at ({i},{k}): {d[i, k]!r} > "
                f"{d[i, j]!r} + {d[j, k]!r} via {j}",
                (i, j, k),
            )

    pts = None
    if coords is not None:
        pts = np.atleast_2d(np.asarray(coords, dtype=float))
        if pts.shape[0] != n:
            raise CoordinateMismatch(f"{pts.shape[0]} coordinate rows for {n} points")
        if p is None or p < 1:
            raise CoordinateMismatch(f"coordinate-backed space needs p >= 1, got {p}")
        if n and pts.shape[1]:
            diff = pts[:, None, :] - pts[None, :, :]
            ref = np.linalg.norm(diff, ord=p, axis=2)
            bad = np.argwhere(np.abs(ref - d) > tol)
            if bad.size:
                i, j = map(int, bad[0])
                raise CoordinateMismatch(
                    f"dist[{i}][{j}] = {d[i, j]!r} but the {p}-norm of the coordinate "
                    f"difference is {ref[i, j]!r}", (i, j))
        pts = _frozen(pts)

    if labels is not None:
        labels = tuple(str(s) for s in labels)
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} points")

    return FiniteMetricSpace(dist=_frozen(d), labels=labels, coords=pts,
                             p=None if pts is None else float(p))


def merge_duplicates(matrix, tol: float = 0.0) -> tuple[np.ndarray, list[int]]:
    """Collapse points at distance <= ``tol`` onto their first representative.

    Returns the reduced matrix and, for every input point, the index of its
    representative in the reduced matrix.
    """
    d = np.asarray(matrix, dtype=float)
    keep: list[int] = []
    mapping: list[int] = []
    for i in range(d.shape[0]):
        for slot, r in enumerate(keep):
            if d[i, r] <= tol:
                mapping.append(slot)
                break
        else:
            mapping.append(len(keep))
            keep.append(i)
    return d[np.ix_(keep, keep)].copy(), mapping


class PairSet:
    """An immutable set of ordered pairs ``(x, y)`` with ``x != y``.

    Stored as two parallel index arrays in lexicographic order.
    """

    __slots__ = ("xs", "ys")

    def __init__(self, pairs: Iterable[tuple[int, int]] | None = None, *, xs=None, ys=None):
        if pairs is not None:
            arr = np.array(list(pairs), dtype=np.int64).reshape(-1, 2)
            xs, ys = arr[:, 0], arr[:, 1]
        xs = np.asarray(xs if xs is not None else [], dtype=np.int64).ravel()
        ys = np.asarray(ys if ys is not None else [], dtype=np.int64).ravel()
        if xs.shape != ys.shape:
            raise ValueError("xs and ys must have equal length")
        if np.any(xs == ys):
            k = int(np.flatnonzero(xs == ys)[0])
            raise ValueError(f"pair ({xs[k]},{ys[k]}) lies on the diagonal")
        if np.any(xs < 0) or np.any(ys < 0):
            raise ValueError("negative point index")
        if xs.size:
            order = np.lexsort((ys, xs))
            xs, ys = xs[order], ys[order]
            keep = np.ones(xs.size, dtype=bool)
            keep[1:] = (xs[1:] != xs[:-1]) | (ys[1:] != ys[:-1])
            xs, ys = xs[keep], ys[keep]
        self.xs = _frozen(xs)
        self.ys = _frozen(ys)

    @classmethod
    def _sorted(cls, xs: np.ndarray, ys: np.ndarray) -> "PairSet":
        # caller guarantees lexicographic order, uniqueness, no diagonal pairs
        obj = cls.__new__(cls)
        obj.xs = _frozen(np.asarray(xs, dtype=np.int64))
        obj.ys = _frozen(np.asarray(ys, dtype=np.int64))
        return obj

    @classmethod
    def all_pairs(cls, n: int) -> "PairSet":
        xs, ys = np.nonzero(~np.eye(n, dtype=bool))
        return cls._sorted(xs, ys)

    @classmethod
    def product(cls, U: Iterable[int], V: Iterable[int]) -> "PairSet":
        U = np.unique(np.asarray(list(U), dtype=np.int64))
        V = np.unique(np.asarray(list(V), dtype=np.int64))
        xs = np.repeat(U, V.size)
        ys = np.tile(V, U.size)
        keep = xs != ys
        return cls._sorted(xs[keep], ys[keep])

    def __len__(self) -> int:
        return int(self.xs.size)

    def __bool__(self) -> bool:
        return self.xs.size > 0

    def __iter__(self):
        return zip(self.xs.tolist(), self.ys.tolist())

    def __contains__(self, pair) -> bool:
        x, y = pair
        lo = np.searchsorted(self.xs, x, side="left")
        hi = np.searchsorted(self.xs, x, side="right")
        return bool(np.any(self.ys[lo:hi] == y))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairSet):
            return NotImplemented
        return np.array_equal(self.xs, other.xs) and np.array_equal(self.ys, other.ys)

    def __hash__(self):
        return hash((self.xs.tobytes(), self.ys.tobytes()))

    def __repr__(self) -> str:
        body = ", ".join(f"({x},{y})" for x, y in list(self)[:6])
        more = ", ..." if len(self) > 6 else ""
        return f"PairSet({{{body}{more}}})"

    def keys(self, n: int) -> np.ndarray:
        """Flat indices ``x * n + y``; sorted because pairs are."""
        return self.xs * n + self.ys

    def take(self, idx) -> "PairSet":
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        return PairSet._sorted(self.xs[idx], self.ys[idx])

    def mask(self, m: np.ndarray) -> "PairSet":
        return PairSet._sorted(self.xs[m], self.ys[m])

    def to_list(self) -> list[list[int]]:
        return [[x, y] for x, y in self]

    def _setop(self, other: "PairSet", op) -> "PairSet":
        n = int(max(self.xs.max(initial=-1), self.ys.max(initial=-1),
                    other.xs.max(initial=-1), other.ys.max(initial=-1))) + 1
        k = op(self.keys(n), other.keys(n))
        return PairSet._sorted(k // n, k % n)

    def __or__(self, other):
        return self._setop(other, np.union1d)

    def __and__(self, other):
        return self._setop(other, np.intersect1d)

    def __sub__(self, other):
        return self._setop(other, np.setdiff1d)

    def issubset(self, other: "PairSet") -> bool:
        return len(self - other) == 0


@dataclass(frozen=True)
class Rectangle:
    U: tuple[int, ...]
    V: tuple[int, ...]

    def __contains__(self, pair) -> bool:
        x, y = pair
        return x in self.U and y in self.V


@dataclass(frozen=True)
class Ball:
    """A closed ball ``{x : d(x, center) <= radius}``."""

    center: int
    radius: float
    closed: bool = field(default=True, init=False)

    def members(self, space: FiniteMetricSpace) -> np.ndarray:
        return np.flatnonzero(space.dist[self.center] <= self.radius)

    def contains(self, space: FiniteMetricSpace, idx) -> np.ndarray:
        return space.dist[self.center, np.asarray(idx)] <= self.radius


def _require(E: PairSet) -> None:
    if not len(E):
        raise EmptyPairSet("pair set is empty")


def gap(space: FiniteMetricSpace, E: PairSet) -> float:
    """Smallest distance over the pairs of ``E``."""
    _require(E)
    return float(space.dist[E.xs, E.ys].min())


def diameter_of_pairs(space: FiniteMetricSpace, E: PairSet) -> float:
    """Largest distance over the pairs of ``E``."""
    _require(E)
    return float(space.dist[E.xs, E.ys].max())


def rectangle(E: PairSet) -> Rectangle:
    _require(E)
    return Rectangle(tuple(np.unique(E.xs).tolist()), tuple(np.unique(E.ys).tolist()))


def set_gap(space: FiniteMetricSpace, U, V) -> float:
    """``min d(u, v)`` over ``U x V``; with ``U = {x}`` this is ``d(x, V)``."""
    U = np.asarray(list(U) if not isinstance(U, np.ndarray) else U, dtype=np.int64)
    V = np.asarray(list(V) if not isinstance(V, np.ndarray) else V, dtype=np.int64)
    if U.size == 0 or V.size == 0:
        raise EmptySet("set_gap needs two non-empty point sets")
    return float(space.dist[np.ix_(U, V)].min())


def dist_to_set(space: FiniteMetricSpace, F) -> np.ndarray:
    """Vector of ``d(x, F)`` for every point ``x``."""
    F = np.asarray(F, dtype=np.int64)
    if F.size == 0:
        raise EmptySet("distance to an empty set")
    return space.dist[:, F].min(axis=1)


def rectangle_gap(space: FiniteMetricSpace, E: PairSet) -> float:
    """Gap of the smallest rectangle containing ``E``."""
    _require(E)
    return set_gap(space, np.unique(E.xs), np.unique(E.ys))
