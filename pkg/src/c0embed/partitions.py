"""Finite partitions of pair sets witnessing property pi(lambda).

Every provider takes a pair set ``E`` sitting inside a product of two closed
balls and splits it into pieces ``E_n`` with ``diam(E_n) < lam * gap(pi(E_n))``,
where ``pi(E_n)`` is the smallest rectangle containing the piece.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BallContainmentViolated,
    CoverHypothesisViolated,
    EmptyPairSet,
    GapHypothesisViolated,
    LipschitzHypothesisViolated,
    LowerBoundHypothesisViolated,
    NoFeasibleEpsilon,
    NonDecreasingEpsSeq,
    ProviderHypothesisViolated,
    SeedTooSmall,
    TerminationGuardExceeded,
    TooLarge,
)
from .metric import TOL, Ball, FiniteMetricSpace, PairSet

ANNULI_STEP = 0.9


@dataclass(frozen=True, eq=False)
class Piece:
    pairs: PairSet
    U: np.ndarray
    V: np.ndarray
    gap: float
    diam: float
    rect_gap: float
    side_bound: float | None = None

    @property
    def constant(self) -> float:
        """The value a coordinate built for this piece separates U from V by."""
        if self.side_bound is None:
            return self.rect_gap
        return min(self.rect_gap, self.side_bound)

    def to_json(self, lam: float) -> dict:
        return {
            "pairs": self.pairs.to_list(),
            "gap": self.gap,
            "diam": self.diam,
            "U": self.U.tolist(),
            "V": self.V.tolist(),
            "margin": lam * self.rect_gap - self.diam,
        }


def make_piece(space: FiniteMetricSpace, pairs: PairSet, side_bound: float | None = None) -> Piece:
    if not len(pairs):
        raise EmptyPairSet("a piece must be non-empty")
    d = space.dist[pairs.xs, pairs.ys]
    U = np.unique(pairs.xs)
    V = np.unique(pairs.ys)
    return Piece(pairs, U, V, float(d.min()), float(d.max()),
                 float(space.dist[np.ix_(U, V)].min()), side_bound)


@dataclass(frozen=True, eq=False)
class Partition:
    parent: PairSet
    pieces: tuple[Piece, ...]

    def __len__(self) -> int:
        return len(self.pieces)

    def __iter__(self):
        return iter(self.pieces)


@dataclass(frozen=True, eq=False)
class PiWitness:
    lam: float
    partition: Partition

    @property
    def margins(self) -> tuple[float, ...]:
        return tuple(self.lam * p.rect_gap - p.diam for p in self.partition)

    @property
    def valid(self) -> bool:
        return all(m > 0 for m in self.margins)

    def to_json(self) -> dict:
        return {"lambda": self.lam, "pieces": [p.to_json(self.lam) for p in self.partition]}


def _split(labels: np.ndarray) -> list[np.ndarray]:
    """Group positions by label; groups ordered by first occurrence."""
    if labels.size == 0:
        return []
    _, first, inv = np.unique(labels, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    g = rank[inv]
    order = np.argsort(g, kind="stable")
    cuts = np.flatnonzero(np.diff(g[order])) + 1
    return np.split(order, cuts)


def _witness(space: FiniteMetricSpace, E: PairSet, groups: list[np.ndarray], lam: float) -> PiWitness:
    pieces = tuple(make_piece(space, E.take(g)) for g in groups)
    return PiWitness(lam, Partition(E, pieces))


def _check_balls(space: FiniteMetricSpace, E: PairSet, b1: Ball, b2: Ball) -> None:
    if not len(E):
        raise EmptyPairSet("pair set is empty")
    out1 = ~b1.contains(space, E.xs)
    out2 = ~b2.contains(space, E.ys)
    if out1.any() or out2.any():
        k = int(np.flatnonzero(out1 | out2)[0])
        raise BallContainmentViolated(
            f"pair ({E.xs[k]},{E.ys[k]}) is not inside B1 x B2",
            witness=(int(E.xs[k]), int(E.ys[k])))


# -- providers --------------------------------------------------------------

Provider = Callable[[FiniteMetricSpace, PairSet, Ball, Ball, float], list]
PROVIDERS: dict[str, Provider] = {}
PROVIDER_LAMBDA: dict[str, Callable[[FiniteMetricSpace], float | None]] = {}


def register_provider(name: str, lam_for: Callable[[FiniteMetricSpace], float | None]):
    """Register a pi(lambda) strategy.

    ``lam_for(space)`` returns the only lambda the strategy certifies, or
    ``None`` when it works for every lambda > 1.
    """
    def deco(fn):
        PROVIDERS[name] = fn
        PROVIDER_LAMBDA[name] = lam_for
        return fn
    return deco


def annuli_labels(d: np.ndarray, start: float, step: float) -> np.ndarray:
    """Annulus index of each distance for breakpoints ``start + k * step``."""
    return np.floor((d - start) / step).astype(np.int64)


@register_provider("annuli", lambda space: 2.0)
def _annuli_groups(space, E, b1, b2, lam=2.0):
    d = space.dist[E.xs, E.ys]
    delta = float(d.min())
    eps = delta - 2.0 * (b1.radius + b2.radius)
    if not eps > 0:
        raise GapHypothesisViolated(
            f"gap {delta!r} <= 2 (r1 + r2) = {2.0 * (b1.radius + b2.radius)!r}",
            witness={"gap": delta, "r1": b1.radius, "r2": b2.radius})
    return _split(annuli_labels(d, delta, ANNULI_STEP * eps))


def annuli_partition(space: FiniteMetricSpace, E: PairSet, B1: Ball, B2: Ball) -> PiWitness:
    """Slice ``E`` into distance annuli narrower than ``gap(E) - 2 (r1 + r2)``.

    Works in every metric space and certifies lambda = 2.
    """
    _check_balls(space, E, B1, B2)
    return _witness(space, E, _annuli_groups(space, E, B1, B2), 2.0)


def fine_threshold(delta: float, lam: float) -> float:
    return delta * (lam - 1.0) / (lam + 2.0)


def d1_clusters(space: FiniteMetricSpace, E: PairSet, radius: float) -> np.ndarray:
    """Greedy clustering of pairs under ``d1((x,y),(x',y')) = d(x,x') + d(y,y')``.

    Every pair lies within ``radius`` of its cluster's first pair, so clusters
    have d1-diameter at most ``2 * radius``.
    """
    D = space.dist
    labels = np.full(len(E), -1, dtype=np.int64)
    free = np.arange(len(E))
    c = 0
    while free.size:
        h = free[0]
        d1 = D[E.xs[h], E.xs[free]] + D[E.ys[h], E.ys[free]]
        hit = d1 <= radius
        hit[0] = True
        labels[free[hit]] = c
        free = free[~hit]
        c += 1
    return labels


@register_provider("fine", lambda space: None)
def _fine_groups(space, E, b1, b2, lam):
    if not lam > 1:
        raise ValueError(f"fine partition needs lambda > 1, got {lam}")
    delta = float(space.dist[E.xs, E.ys].min())
    c = fine_threshold(delta, lam)
    return _split(d1_clusters(space, E, c / 2.0))


def fine_partition(space: FiniteMetricSpace, E: PairSet, lam: float) -> PiWitness:
    """Cut ``E`` into pieces of d1-diameter at most ``gap(E)(lam-1)/(lam+2)``.

    Valid for any lambda > 1 on a finite space; no ball hypothesis needed.
    """
    if not len(E):
        raise EmptyPairSet("pair set is empty")
    return _witness(space, E, _fine_groups(space, E, None, None, lam), lam)


def range_cells(values: np.ndarray, cell: float) -> np.ndarray:
    """Integer grid cell (row vector) of each point's image."""
    if values.shape[1] == 0:
        return np.zeros((values.shape[0], 1), dtype=np.int64)
    return np.floor(values / cell).astype(np.int64)


def range_groups(P: np.ndarray, E: PairSet, eps: float, ord: float = np.inf) -> list[np.ndarray]:
    """Group the pairs of ``E`` by the grid cells of ``P(x)`` and ``P(y)``.

    Cells are half-open cubes whose ``ord``-norm diameter is below ``eps / 4``.
    """
    m = max(P.shape[1], 1)
    spread = m ** (1.0 / ord) if ord != np.inf else 1.0
    cell = 0.999 * eps / (4.0 * spread)
    _, cid = np.unique(range_cells(P, cell), axis=0, return_inverse=True)
    cid = cid.ravel()
    return _split(np.stack([cid[E.xs], cid[E.ys]], axis=1))


def refine_by_range(space: FiniteMetricSpace, E: PairSet, P, lam: float, eps: float,
                    ord: float = np.inf, require_lower_bound: bool = True) -> Partition:
    """Partition ``E`` by grid cells of the image of a map ``P`` into R^m.

    ``P`` is an ``(n, m)`` array (row ``x`` is ``P(x)``) measured in the
    ``ord``-norm.  Cells have norm-diameter below ``eps / 4``; pieces are the
    non-empty sets ``(P^-1(cell_j) x P^-1(cell_k)) & E``.  With the lower-bound
    hypothesis ``d(x,y) <= |P(x) - P(y)|`` on ``E`` every piece then satisfies
    ``diam < lam * gap(pi(piece)) + eps``.
    """
    if not len(E):
        raise EmptyPairSet("pair set is empty")
    if not eps > 0:
        raise ValueError("eps must be positive")
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    D = space.dist
    img = np.linalg.norm(P[:, None, :] - P[None, :, :], ord=ord, axis=2) if P.shape[1] else np.zeros_like(D)
    off = ~np.eye(space.n, dtype=bool)
    ratio = np.where(off, img / np.where(off, D, 1.0), 0.0)
    if ratio.max(initial=0.0) > lam + TOL:
        i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
        raise LipschitzHypothesisViolated(
            f"|P({i}) - P({j})| / d = {ratio[i, j]!r} > lambda = {lam!r}", witness=(int(i), int(j)))
    if require_lower_bound:
        short = D[E.xs, E.ys] > img[E.xs, E.ys] + TOL
        if short.any():
            k = int(np.flatnonzero(short)[0])
            raise LowerBoundHypothesisViolated(
                f"d({E.xs[k]},{E.ys[k]}) exceeds |P(x) - P(y)|", witness=(int(E.xs[k]), int(E.ys[k])))

    pieces = tuple(make_piece(space, E.take(g)) for g in range_groups(P, E, eps, ord))
    part = Partition(E, pieces)
    if require_lower_bound:
        for p in part:
            if not p.diam < lam * p.rect_gap + eps:
                raise ProviderHypothesisViolated("range refinement produced an oversized piece",
                                                 witness=p.pairs.to_list())
    return part


def truncation_index(coords: np.ndarray, a1: int, a2: int, p: float, eps: float) -> int:
    """Smallest ``i0`` such that the tail ``coords[:, i0:]`` separates a1, a2 by < eps."""
    diff = np.abs(coords[a1] - coords[a2])
    dim = diff.size
    for i0 in range(dim + 1):
        tail = diff[i0:]
        if (np.linalg.norm(tail, ord=p) if tail.size else 0.0) < eps:
            return i0
    return dim


def _halve_until(ok: Callable[[float], bool], hi: float, steps: int = 200) -> float | None:
    eps = hi
    for _ in range(steps):
        if ok(eps):
            return eps
        eps /= 2.0
    return None


def lp_epsilon(delta: float, diam: float, rsum: float, p: float) -> float:
    """Largest tried eps meeting both constraints of the l^p refinement."""
    alpha = delta ** p - 2.0 * rsum ** p

    def c1(e):
        return (rsum + e) ** p < delta ** p / 2.0 - alpha / 4.0

    def c2(e):
        return 2.0 * (diam + e) ** p - alpha / 2.0 < 2.0 * diam ** p

    eps = _halve_until(lambda e: c1(e) and c2(e), rsum if rsum > 0 else delta)
    if eps is None:
        e = rsum if rsum > 0 else delta
        raise NoFeasibleEpsilon(
            "no eps satisfies the l^p refinement constraints",
            witness={"c1_residual": (rsum + e) ** p - (delta ** p / 2.0 - alpha / 4.0),
                     "c2_residual": 2.0 * (diam + e) ** p - alpha / 2.0 - 2.0 * diam ** p})
    return eps


def _lp_groups_generic(space, E, b1, b2, lam, threshold, eps_fn):
    if space.coords is None or space.p is None:
        raise ValueError("l^p partitions need a coordinate-backed space")
    p = space.p
    d = space.dist[E.xs, E.ys]
    delta, diam = float(d.min()), float(d.max())
    alpha = delta ** p - threshold(b1.radius, b2.radius)
    if not alpha > 0:
        raise GapHypothesisViolated(
            f"gap^p - threshold = {alpha!r} <= 0", witness={"gap": delta, "r1": b1.radius, "r2": b2.radius})
    eps = eps_fn(delta, diam, b1.radius, b2.radius, p)
    i0 = truncation_index(space.coords, b1.center, b2.center, p, eps)
    return range_groups(space.coords[:, :i0], E, eps, ord=p)


@register_provider("lp", lambda space: 2.0 ** (1.0 / space.p) if space.p else None)
def _lp_groups(space, E, b1, b2, lam):
    return _lp_groups_generic(
        space, E, b1, b2, lam,
        threshold=lambda r1, r2: 2.0 * (r1 + r2) ** space.p,
        eps_fn=lambda delta, diam, r1, r2, p: lp_epsilon(delta, diam, r1 + r2, p))


def lp_partition(space: FiniteMetricSpace, E: PairSet, B1: Ball, B2: Ball) -> PiWitness:
    """Truncate coordinates until the centres' tail is below eps, then refine by range.

    Certifies lambda = 2 ** (1/p) for an l^p-backed space.
    """
    _check_balls(space, E, B1, B2)
    lam = 2.0 ** (1.0 / space.p) if space.p else math.nan
    return _witness(space, E, _lp_groups(space, E, B1, B2, lam), lam)


# -- A-sets and the block decomposition -------------------------------------


def sigma(dx: np.ndarray, dy: np.ndarray, eps: float, lam: float, form: str = "sum") -> np.ndarray:
    """Membership threshold: a pair is in A(F, eps) iff ``sigma <= d(x, y)``."""
    if form == "sum":
        return lam * (dx + dy + eps)
    return lam * (np.maximum(dx, dy) + eps)


@dataclass(frozen=True, eq=False)
class ASet:
    F: tuple[int, ...]
    beta: float
    lam: float
    pairs: PairSet
    form: str = "sum"


def a_set(space: FiniteMetricSpace, F: Iterable[int], beta: float, lam: float,
          form: str = "sum") -> ASet:
    """Pairs with ``lam * (d(x,F) + d(y,F) + beta) <= d(x,y)``."""
    F = tuple(sorted(set(int(a) for a in F)))
    if not F:
        raise ValueError("F must be non-empty")
    if not beta > 0:
        raise ValueError("beta must be positive")
    dF = space.dist[:, list(F)].min(axis=1)
    E = PairSet.all_pairs(space.n)
    inside = sigma(dF[E.xs], dF[E.ys], beta, lam, form) <= space.dist[E.xs, E.ys]
    return ASet(F, beta, lam, E.mask(inside), form)


def _check_eps(prev: float | None, eps: float) -> None:
    if not eps > 0:
        raise NonDecreasingEpsSeq(f"eps values must be positive, got {eps!r}")
    if prev is not None and not eps < prev:
        raise NonDecreasingEpsSeq(f"eps sequence not strictly decreasing: {prev!r} then {eps!r}")


@dataclass(frozen=True, eq=False)
class BlockAssignment:
    """``block[x, y]`` is the unique k with sigma_{k+1} <= d(x, y) < sigma_k (1-based)."""

    block: np.ndarray
    eps: tuple[float, ...]
    order: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.eps)


def assign_blocks(space: FiniteMetricSpace, order: Sequence[int], eps_seq: Iterable[float],
                  lam: float, form: str = "sum", guard: int | None = None) -> BlockAssignment:
    n = space.n
    D = space.dist
    order = tuple(int(a) for a in order)
    if sorted(order) != list(range(n)):
        raise ValueError("dense order must enumerate every point exactly once")
    block = np.full((n, n), -1, dtype=np.int64)
    eps_used: list[float] = []
    if n < 2:
        return BlockAssignment(block, tuple(eps_used), order)
    E = PairSet.all_pairs(n)
    d = D[E.xs, E.ys]
    it = iter(eps_seq)
    dF = D[:, order[0]].copy()
    prev = None

    def next_eps():
        nonlocal prev
        try:
            e = float(next(it))
        except StopIteration:
            raise ValueError("eps sequence exhausted before every pair was assigned") from None
        _check_eps(prev, e)
        prev = e
        eps_used.append(e)
        return e

    e = next_eps()
    s = sigma(dF[E.xs], dF[E.ys], e, lam, form)
    if np.any(s <= d):
        k = int(np.flatnonzero(s <= d)[0])
        raise SeedTooSmall(f"pair ({E.xs[k]},{E.ys[k]}) already lies in A(F_1, eps_1)",
                           witness=(int(E.xs[k]), int(E.ys[k])))
    label = np.zeros(len(E), dtype=np.int64)
    free = np.ones(len(E), dtype=bool)
    k = 1
    while free.any():
        if guard is not None and k > guard:
            raise TerminationGuardExceeded(f"block count exceeded the guard {guard}")
        if k < n:
            dF = np.minimum(dF, D[:, order[k]])
        e = next_eps()
        s = sigma(dF[E.xs], dF[E.ys], e, lam, form)
        hit = free & (s <= d)
        label[hit] = k
        free &= ~hit
        k += 1
    block[E.xs, E.ys] = label
    return BlockAssignment(block, tuple(eps_used), order)


def delta_blocks(space: FiniteMetricSpace, dense_order: Sequence[int], eps_seq: Iterable[float],
                 lam: float, form: str = "sum") -> list[PairSet]:
    """The sets ``A(F_{k+1}, eps_{k+1}) minus A(F_k, eps_k)`` for k = 1 .. K-1.

    Stops at the first K for which ``A(F_K, eps_K)`` holds every pair.
    """
    ba = assign_blocks(space, dense_order, eps_seq, lam, form)
    E = PairSet.all_pairs(space.n)
    lab = ba.block[E.xs, E.ys]
    return [E.mask(lab == k) for k in range(1, ba.K)]


# -- the block partition ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Partition of ``A(G, alpha) minus A(F, beta)`` with per-piece constants."""

    F: tuple[int, ...]
    G: tuple[int, ...]
    alpha: float
    beta: float
    lam: float
    form: str
    partition: Partition
    clusters: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def pieces(self) -> tuple[Piece, ...]:
        return self.partition.pieces

    def __len__(self):
        return len(self.partition)

    def bound_margins(self) -> list[float]:
        return [self.lam * p.constant - p.diam for p in self.partition]


def shortcut_applies(dcenters: float, rsum: float, lam: float) -> bool:
    """Whole-set piece is already valid when the centres are this far apart."""
    return dcenters > (lam + 1.0) / (lam - 1.0) * rsum


MERGE_SLACK = 1e-6


def _group_ids(labels: np.ndarray) -> np.ndarray:
    """Integer id per row of ``labels``, numbered by first occurrence."""
    # band indices at tiny scales can be huge floats; pack only while every span is exact
    spans = [float(c.max()) - float(c.min()) + 1.0 for c in labels.T] if labels.shape[0] else []
    if max(spans, default=0.0) < 2.0 ** 52 and math.prod(spans) < 2.0 ** 62:
        key = np.zeros(labels.shape[0], dtype=np.int64)
        for col, span in zip(labels.T, spans):
            key = key * int(span) + (col - col.min()).astype(np.int64)
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
    else:
        _, first, inv = np.unique(labels, axis=0, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.ravel()]


def _runs(ids: np.ndarray):
    """Stable sort order of ``ids`` plus the start and end of each run."""
    order = np.argsort(ids, kind="stable")
    if ids.size == 0:
        return order, order, order
    starts = np.flatnonzero(np.r_[True, np.diff(ids[order]) != 0])
    ends = np.r_[starts[1:], ids.size]
    return order, starts, ends


def _side_bound(fu, fv, beta, form: str):
    if form == "sum":
        return fu + fv + 2.0 * beta
    return np.maximum(fu, fv) + 2.0 * beta


def merge_atoms(D: np.ndarray, fx: np.ndarray, fy: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                atom: np.ndarray, blk: np.ndarray, beta: np.ndarray, lam: float, form: str,
                slack: float = MERGE_SLACK) -> np.ndarray:
    """Greedily fuse pieces of the same block while ``diam < lam * constant`` survives.

    ``fx``/``fy`` are ``d(x, F)`` and ``d(y, F)`` per pair for the pair's own
    block and ``beta`` is indexed by block.  Within a block pieces are visited
    by decreasing diameter and joined to the first open group that keeps the
    bound with relative slack ``slack``.  Returns a group id per pair.
    """
    n = D.shape[0]
    d = D[xs, ys]
    order, starts, ends = _runs(atom)
    A = starts.size
    head = order[starts]
    RU = np.minimum.reduceat(D[xs[order]], starts, axis=0)
    RV = np.minimum.reduceat(D[ys[order]], starts, axis=0)
    fU = np.minimum.reduceat(fx[order], starts)
    fV = np.minimum.reduceat(fy[order], starts)
    diam = np.maximum.reduceat(d[order], starts)
    rank = np.empty(A, dtype=np.int64)
    rank[atom[head]] = np.arange(A)
    rgap = np.minimum.reduceat(RU[rank[atom[order]], ys[order]], starts)
    ablk = blk[head]
    abeta = beta[ablk]
    single = (ends - starts) == 1
    Us = [int(xs[h]) if one else np.unique(xs[order[s:e]])
          for h, one, s, e in zip(head, single, starts, ends)]
    Vs = [int(ys[h]) if one else np.unique(ys[order[s:e]])
          for h, one, s, e in zip(head, single, starts, ends)]

    gRU = np.empty((A, n))
    gRV = np.empty((A, n))
    ggap = np.empty(A)
    gdiam = np.empty(A)
    gfU = np.empty(A)
    gfV = np.empty(A)
    owner = np.empty(A, dtype=np.int64)
    M = base = 0
    cur = None
    keep = 1.0 - slack
    for a in np.lexsort((-diam, ablk)):
        if ablk[a] != cur:
            cur, base = ablk[a], M
        bt = abeta[a]
        if M > base:
            if single[a]:
                cross = np.minimum(gRU[base:M, Vs[a]], gRV[base:M, Us[a]])
            else:
                cross = np.minimum(gRU[base:M, Vs[a]].min(axis=1), gRV[base:M, Us[a]].min(axis=1))
            g = np.minimum(np.minimum(ggap[base:M], rgap[a]), cross)
            dm = np.maximum(gdiam[base:M], diam[a])
            fu = np.minimum(gfU[base:M], fU[a])
            fv = np.minimum(gfV[base:M], fV[a])
            i = int((dm < keep * lam * np.minimum(g, _side_bound(fu, fv, bt, form))).argmax())
            if dm[i] < keep * lam * min(g[i], _side_bound(fu[i], fv[i], bt, form)):
                m = base + i
                np.minimum(gRU[m], RU[a], out=gRU[m])
                np.minimum(gRV[m], RV[a], out=gRV[m])
                ggap[m], gdiam[m], gfU[m], gfV[m] = g[i], dm[i], fu[i], fv[i]
                owner[a] = m
                continue
        gRU[M], gRV[M] = RU[a], RV[a]
        ggap[M], gdiam[M], gfU[M], gfV[M] = rgap[a], diam[a], fU[a], fV[a]
        owner[a] = M
        M += 1
    out = np.empty_like(atom)
    out[order] = owner[np.repeat(np.arange(A), ends - starts)]
    return out


@dataclass(frozen=True, eq=False)
class BlockPieces:
    """Flat description of the partition of several blocks at once.

    Pair ``i`` is ``(xs[i], ys[i])`` in block ``blk[i]`` and piece ``piece[i]``;
    pieces are numbered block by block, then by their smallest pair.
    ``cluster_of[b, x]`` is the support cluster of point x in block b (-1 off
    the support).
    """

    xs: np.ndarray
    ys: np.ndarray
    blk: np.ndarray
    piece: np.ndarray
    cluster_of: np.ndarray


def partition_blocks(space: FiniteMetricSpace, xs: np.ndarray, ys: np.ndarray, blk: np.ndarray,
                     dF: np.ndarray, dG: np.ndarray, nearG: np.ndarray, alpha: np.ndarray,
                     beta: np.ndarray, lam: float, provider: str | Provider, form: str = "sum",
                     merge: bool = False) -> BlockPieces:
    """Split the pairs of every block into pieces with ``diam < lam * constant``.

    Row ``b`` of ``dF``/``dG`` holds ``d(., F_b)``/``d(., G_b)`` and ``nearG[b]``
    a nearest point of ``G_b``; ``alpha[b] < beta[b]`` are the block's scales.
    The support of each block is clustered by nearest point of G, by
    ``d(., G)`` in bands of ``alpha / 4`` and by ``d(., F)`` in bands of
    ``alpha / 5``; each cluster lies in a ball around its G-point of radius
    ``d(cluster, G) + alpha / 4``.  Pairs joining the same two clusters are
    one piece when the centres are far apart and otherwise go to the provider.
    """
    D = space.dist
    n = space.n
    prov = PROVIDERS[provider] if isinstance(provider, str) else provider
    nb = dF.shape[0]
    empty = np.zeros(0, dtype=np.int64)
    if xs.size == 0:
        return BlockPieces(empty, empty, empty, empty, np.full((nb, n), -1, dtype=np.int64))

    # support clusters, keyed by (block, point)
    sup = np.unique(np.r_[blk * n + xs, blk * n + ys])
    sb, sx = sup // n, sup % n
    bins = np.stack([sb, nearG[sb, sx],
                     np.floor(dG[sb, sx] / (alpha[sb] / 4.0)),
                     np.floor(dF[sb, sx] / (alpha[sb] / 5.0))], axis=1)
    cl = _group_ids(bins)
    ncl = int(cl.max()) + 1
    centre = np.zeros(ncl, dtype=np.int64)
    centre[cl] = nearG[sb, sx]
    cblk = np.zeros(ncl, dtype=np.int64)
    cblk[cl] = sb
    gapG = np.full(ncl, np.inf)
    np.minimum.at(gapG, cl, dG[sb, sx])
    radius = gapG + alpha[cblk] / 4.0
    if np.any(D[sx, centre[cl]] > radius[cl]):
        raise ProviderHypothesisViolated("cluster escapes its ball")
    cluster_of = np.full((nb, n), -1, dtype=np.int64)
    cluster_of[sb, sx] = cl

    # cluster pairs: gap hypothesis and the far-centres shortcut
    cx, cy = cluster_of[blk, xs], cluster_of[blk, ys]
    dd = D[xs, ys]
    gid = _group_ids(np.stack([cx, cy], axis=1))
    order, starts, ends = _runs(gid)
    j, k = cx[order[starts]], cy[order[starts]]
    if form == "sum":
        r1, r2 = radius[j], radius[k]
        need = lam * (r1 + r2)
    else:
        r1 = r2 = np.maximum(radius[j], radius[k])
        need = lam * r1
    ggap = np.minimum.reduceat(dd[order], starts)
    bad = np.flatnonzero(~(ggap > need))
    if bad.size:
        g = int(bad[0])
        raise ProviderHypothesisViolated(
            f"cluster pair ({j[g]},{k[g]}) has gap {ggap[g]!r} <= {need[g]!r}",
            witness={"clusters": (int(j[g]), int(k[g])), "gap": float(ggap[g]), "needed": float(need[g])})
    whole = (ends - starts == 1) | ((lam + 1.0) / (lam - 1.0) * (r1 + r2) < D[centre[j], centre[k]])
    sub = np.zeros(xs.size, dtype=np.int64)
    for g in np.flatnonzero(~whole):
        idx = order[starts[g]:ends[g]]
        parts = prov(space, PairSet._sorted(xs[idx], ys[idx]), Ball(int(centre[j[g]]), float(r1[g])),
                     Ball(int(centre[k[g]]), float(r2[g])), lam)
        for si, sidx in enumerate(parts):
            sub[idx[sidx]] = si
    atom = _group_ids(np.stack([gid, sub], axis=1))
    if merge:
        atom = merge_atoms(D, dF[blk, xs], dF[blk, ys], xs, ys, atom, blk, beta, lam, form)

    # renumber pieces by (block, smallest pair)
    aorder, astarts, _ = _runs(atom)
    first = np.minimum.reduceat(aorder, astarts)
    lead = np.empty(astarts.size, dtype=np.int64)
    lead[atom[aorder[astarts]]] = first
    rank = np.empty(astarts.size, dtype=np.int64)
    rank[np.lexsort((ys[lead], xs[lead], blk[lead]))] = np.arange(astarts.size)
    return BlockPieces(xs, ys, blk, rank[atom], cluster_of)


def _block_tables(space: FiniteMetricSpace, F: Sequence[int], G: Sequence[int]):
    D = space.dist
    Ga = np.asarray(G, dtype=np.int64)
    prof = D[:, Ga]
    return D[:, list(F)].min(axis=1), prof.min(axis=1), Ga[prof.argmin(axis=1)]


def materialize_pieces(space: FiniteMetricSpace, bp: BlockPieces, dF: np.ndarray, beta: np.ndarray,
                       form: str) -> list[Piece]:
    """Piece objects in piece order, with the block's side bound attached."""
    D = space.dist
    pieces: list[Piece] = []
    porder, pstarts, pends = _runs(bp.piece)
    for s, e in zip(pstarts, pends):
        idx = np.sort(porder[s:e])
        b = int(bp.blk[idx[0]])
        P = PairSet._sorted(bp.xs[idx], bp.ys[idx])
        if e - s == 1:
            U, V = P.xs, P.ys
        else:
            U, V = np.unique(P.xs), np.unique(P.ys)
        side = float(_side_bound(dF[b, U].min(), dF[b, V].min(), beta[b], form))
        dp = D[P.xs, P.ys]
        pieces.append(Piece(P, U, V, float(dp.min()), float(dp.max()),
                            float(D[np.ix_(U, V)].min()), side))
    return pieces


def block_partition(space: FiniteMetricSpace, F: Sequence[int], G: Sequence[int], alpha: float,
                    beta: float, lam: float, provider: str | Provider, form: str = "sum",
                    *, upper_only: bool = False, merge: bool = False) -> BlockPartition:
    """Partition ``A(G, alpha) minus A(F, beta)`` (``form="sum"``) or its
    max-form analogue into pieces with ``diam < lam * constant``.

    ``upper_only`` keeps only pairs with ``x < y``; ``merge`` fuses pieces
    greedily while the bound still holds.
    """
    D = space.dist
    F = tuple(int(a) for a in F)
    G = tuple(int(a) for a in G)
    if not set(F) <= set(G) or not F:
        raise ValueError("need non-empty F contained in G")
    if not 0 < alpha < beta:
        raise ValueError(f"need 0 < alpha < beta, got {alpha!r}, {beta!r}")
    dF, dG, near = _block_tables(space, F, G)
    E = PairSet.all_pairs(space.n)
    if upper_only:
        E = E.mask(E.xs < E.ys)
    d = D[E.xs, E.ys]
    inside = (sigma(dG[E.xs], dG[E.ys], alpha, lam, form) <= d) & ~(sigma(dF[E.xs], dF[E.ys], beta, lam, form) <= d)
    delta = E.mask(inside)
    betas = np.array([beta])
    bp = partition_blocks(space, delta.xs, delta.ys, np.zeros(len(delta), dtype=np.int64),
                          dF[None], dG[None], near[None], np.array([alpha]), betas, lam,
                          provider, form, merge)
    pieces = materialize_pieces(space, bp, dF[None], betas, form)
    row = bp.cluster_of[0]
    B = np.flatnonzero(row >= 0)
    corder, cstarts, cends = _runs(row[B])
    members = tuple(tuple(B[corder[a:b]].tolist()) for a, b in zip(cstarts, cends))
    return BlockPartition(F, G, alpha, beta, lam, form, Partition(delta, tuple(pieces)), members)


def lemma46_partition(space: FiniteMetricSpace, F: Sequence[int], G: Sequence[int], alpha: float,
                      beta: float, lam: float, provider: str | Provider = "annuli") -> BlockPartition:
    """Partition of ``A(G, alpha) minus A(F, beta)`` whose pieces satisfy
    ``diam < lam * min(gap(U, V), d(U, F) + d(V, F) + 2 beta)``.
    """
    return block_partition(space, F, G, alpha, beta, lam, provider, form="sum")


# -- brute-force oracle -----------------------------------------------------


def min_partition_size(space: FiniteMetricSpace, E: PairSet, lam: float,
                       max_size: int | None = None) -> int | None:
    """Smallest N admitting an N-piece partition with every ``diam < lam * gap(pi)``.

    Exhaustive over set partitions in restricted-growth order; ``None`` when
    no partition with at most ``max_size`` pieces works.
    """
    m = len(E)
    if m == 0:
        raise EmptyPairSet("pair set is empty")
    if m > 8:
        raise TooLarge(f"|E| = {m} exceeds the enumeration bound 8")
    D = space.dist
    pairs = list(E)
    cap = m if max_size is None else min(max_size, m)
    best = [None]
    blocks: list[list[int]] = []

    def valid(block: list[int]) -> bool:
        xs = {pairs[i][0] for i in block}
        ys = {pairs[i][1] for i in block}
        diam = max(D[pairs[i]] for i in block)
        rect = min(D[u, v] for u in xs for v in ys)
        return diam < lam * rect

    def dfs(i: int) -> None:
        if i == m:
            if best[0] is None or len(blocks) < best[0]:
                best[0] = len(blocks)
            return
        for b in blocks:
            b.append(i)
            if valid(b):
                dfs(i + 1)
            b.pop()
        limit = cap if best[0] is None else min(cap, best[0] - 1)
        if len(blocks) < limit:
            blocks.append([i])
            if valid(blocks[-1]):
                dfs(i + 1)
            blocks.pop()

    dfs(0)
    return best[0]


# -- property Pi(lambda) to pi(lambda) --------------------------------------


def disjoint_products(products: Sequence[tuple[Iterable[int], Iterable[int]]]) -> list[tuple[frozenset, frozenset]]:
    """Rewrite a union of products ``U x V`` as a union of disjoint products.

    Every output product sits inside one input product.
    """
    out: list[tuple[frozenset, frozenset]] = []
    for U, V in products:
        todo = [(frozenset(U), frozenset(V))]
        for Up, Vp in out:
            nxt = []
            for Uq, Vq in todo:
                a = (Uq - Up, Vq)
                b = (Uq & Up, Vq - Vp)
                nxt.extend(r for r in (a, b) if r[0] and r[1])
            todo = nxt
        out.extend(todo)
    return out


class SingletonCover:
    """Cover by the products ``{x} x {y}``; certifies ``nu = lam * mu``."""

    name = "singleton"

    def nu(self, lam: float, mu: float) -> float:
        return lam * mu

    def __call__(self, space, pairs: PairSet, b1: Ball, b2: Ball, lam: float):
        return [((x,), (y,)) for x, y in pairs]


class AnnuliCover:
    """Rectangles of an annuli partition; certifies ``nu = lam (mu - 1)``.

    Needs ``mu > 2`` (for the annuli gap) and ``mu > lam / (lam - 1)``.
    """

    name = "annuli"

    def nu(self, lam: float, mu: float) -> float:
        if not (mu > 2.0 and mu > lam / (lam - 1.0)):
            raise CoverHypothesisViolated(f"annuli cover needs mu > max(2, lam/(lam-1)), got {mu!r}")
        return lam * (mu - 1.0)

    def __call__(self, space, pairs: PairSet, b1: Ball, b2: Ball, lam: float):
        groups = _annuli_groups(space, pairs, b1, b2)
        out = []
        for g in groups:
            sub = pairs.take(g)
            out.append((tuple(np.unique(sub.xs).tolist()), tuple(np.unique(sub.ys).tolist())))
        return out


def scale_ladder(ratio_total: float, step: float) -> list[float]:
    """``1 = a_1 < ... < a_K = ratio_total`` with consecutive ratios below ``step``."""
    if ratio_total <= 1.0:
        return [1.0, ratio_total] if ratio_total == 1.0 else [1.0]
    steps = int(math.floor(math.log(ratio_total) / math.log(step))) + 1
    a = [ratio_total ** (i / steps) for i in range(steps + 1)]
    a[-1] = ratio_total
    return a


def pi_from_Pi(space: FiniteMetricSpace, E: PairSet, B1: Ball, B2: Ball, lam: float, mu: float,
               cover=None) -> PiWitness:
    """Turn a product-cover strategy (property Pi) into a pi(lambda) partition of ``E``."""
    cover = cover or SingletonCover()
    _check_balls(space, E, B1, B2)
    if not mu > lam:
        raise ValueError("need mu > lambda")
    D = space.dist
    R = B1.radius + B2.radius
    if not R > 0:
        raise ValueError("balls need positive radii")
    if not space.dist[E.xs, E.ys].min() > mu * R:
        raise GapHypothesisViolated(f"gap(E) <= mu (r1 + r2) = {mu * R!r}")
    nu = cover.nu(lam, mu)
    if not nu > mu:
        raise CoverHypothesisViolated(f"cover gives nu = {nu!r} <= mu = {mu!r}")

    in1 = B1.members(space)
    in2 = B2.members(space)
    Emu = PairSet.product(in1, in2)
    Emu = Emu.mask(D[Emu.xs, Emu.ys] > mu * R)
    dmu = D[Emu.xs, Emu.ys]
    top = float(dmu.max())
    a = scale_ladder(top / (mu * R), nu / mu)
    Ekeys = set(E.keys(space.n).tolist())
    pieces: list[PairSet] = []
    for k in range(len(a) - 1):
        lo = a[k] * mu * R
        hi = top if k == len(a) - 2 else a[k + 1] * mu * R
        Ek = Emu.mask((dmu > lo) & (dmu <= hi))
        if not len(Ek):
            continue
        bk1, bk2 = Ball(B1.center, a[k] * B1.radius), Ball(B2.center, a[k] * B2.radius)
        prods = cover(space, Ek, bk1, bk2, lam)
        need = nu * a[k] * R
        for U, V in prods:
            g = float(D[np.ix_(list(U), list(V))].min())
            if lam * g < need:
                raise CoverHypothesisViolated(f"product gap {g!r} too small at scale {k + 1}",
                                              witness={"U": list(U), "V": list(V)})
        covered = set()
        for U, V in prods:
            covered |= {x * space.n + y for x in U for y in V}
        missing = set(Ek.keys(space.n).tolist()) - covered
        if missing:
            key = min(missing)
            raise CoverHypothesisViolated("products do not cover E_k",
                                          witness=(key // space.n, key % space.n))
        for U, V in disjoint_products(prods):
            keys = sorted({x * space.n + y for x in U for y in V} & Ekeys
                          & set(Ek.keys(space.n).tolist()))
            if keys:
                ks = np.array(keys)
                pieces.append(PairSet._sorted(ks // space.n, ks % space.n))
    pieces.sort(key=lambda p: (int(p.xs[0]), int(p.ys[0])))
    w = PiWitness(lam, Partition(E, tuple(make_piece(space, p) for p in pieces)))
    if not w.valid:
        raise CoverHypothesisViolated("converted partition has a non-positive margin")
    return w


def audit_witness(space: FiniteMetricSpace, w: PiWitness | Partition, lam: float | None = None) -> list[float]:
    """Recompute every margin ``lam * gap(pi(E_n)) - diam(E_n)`` from the raw pairs."""
    part = w.partition if isinstance(w, PiWitness) else w
    lam = w.lam if lam is None else lam
    out = []
    for piece in part:
        P = piece.pairs
        d = space.dist[P.xs, P.ys]
        rect = space.dist[np.ix_(np.unique(P.xs), np.unique(P.ys))].min()
        out.append(float(lam * rect - d.max()))
    return out
