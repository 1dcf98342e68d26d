"""Coordinate-wise embeddings into the sup-norm sequence space, and their audits."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InvariantFailed, NotGood, ScaleInfeasible
from .metric import TOL, FiniteMetricSpace, PairSet
from .partitions import PROVIDER_LAMBDA, _runs, assign_blocks, partition_blocks, sigma

STRICT_ETA = 1e-6


@dataclass(frozen=True, eq=False)
class CoordinateFunction:
    """One real coordinate ``f`` together with how it was made.

    ``values`` are unscaled; the embedding uses ``scale * values``.
    ``constant`` is the separation ``|f(x) - f(y)|`` on ``U x V``.
    """

    values: np.ndarray
    U: tuple[int, ...]
    V: tuple[int, ...]
    F: tuple[int, ...]
    constant: float
    eps: float
    block: int = 0
    pairs: PairSet | None = None
    scale: float = 1.0
    lipschitz_bound: float = 1.0
    swapped: bool = False


@dataclass(frozen=True)
class CoordinateMeta:
    block: int
    c: float
    scale: float
    U: tuple[int, ...]
    V: tuple[int, ...]
    eps: float = 0.0
    swapped: bool = False

    def to_json(self) -> dict:
        out = {"block": self.block, "c": self.c, "scale": self.scale,
               "U": list(self.U), "V": list(self.V), "eps": self.eps}
        if self.swapped:
            out["swapped"] = True
        return out


@dataclass(frozen=True, eq=False)
class Embedding:
    """A finite family of coordinates; row ``i`` of ``matrix`` is coordinate ``i``.

    ``witness[x, y]`` names a coordinate achieving ``d(x, y)`` for the pair,
    ``order``/``eps`` describe the block schedule used to build it and drive
    the decay check (``|coordinate in block >= k| <= decay * lam * eps_k`` on F_k).
    """

    lam: float
    n: int
    matrix: np.ndarray
    meta: tuple[CoordinateMeta, ...]
    witness: np.ndarray | None = None
    order: tuple[int, ...] = ()
    eps: tuple[float, ...] = ()
    cone: bool = False
    decay: float = 1.0
    kind: str = "good"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def coordinates(self) -> tuple[CoordinateFunction, ...]:
        """Unscaled view of every coordinate; the piece is read off the witness table."""
        out = []
        w = self.witness
        for i, m in enumerate(self.meta):
            pairs = None
            if w is not None:
                xs, ys = np.nonzero(np.triu(w == i, 1))
                pairs = PairSet._sorted(xs, ys)
            k = m.block
            F = tuple(self.order[:min(k, self.n)]) if self.order and k > 0 else ()
            out.append(CoordinateFunction(self.matrix[i] / m.scale, m.U, m.V, F, m.c, m.eps, k, pairs,
                                          m.scale, 1.0, m.swapped))
        return tuple(out)

    @property
    def scales(self) -> np.ndarray:
        return np.array([m.scale for m in self.meta], dtype=float)

    def decay_table(self) -> np.ndarray:
        """``T[x, k-1] = max |coordinate(x)|`` over coordinates in blocks >= k."""
        K = len(self.eps)
        T = np.zeros((self.n, max(K, 1)))
        if not self.meta:
            return T
        blocks = np.array([m.block for m in self.meta])
        A = np.abs(self.matrix)
        for k in range(K, 0, -1):
            rows = blocks == k
            cur = A[rows].max(axis=0) if rows.any() else np.zeros(self.n)
            T[:, k - 1] = cur if k == K else np.maximum(cur, T[:, k])
        return T


# -- coordinates -------------------------------------------------------------


def _bump(D: np.ndarray, U, V, dF: np.ndarray, eps: float):
    dU = D[:, U].min(axis=1)
    dV = D[:, V].min(axis=1)
    gUV = float(dU[V].min())
    gUF = float(dF[U].min())
    gVF = float(dF[V].min())
    c = min(gUV, gUF + gVF + 2.0 * eps)
    t = min(c, gUF + eps)
    s = t - c
    if not (-gVF - eps - TOL <= s <= 0.0 <= t <= gUF + eps + TOL):
        raise InvariantFailed("no admissible (s, t) for the bump coordinate",
                              witness={"s": s, "t": t, "c": c})
    f = np.minimum(np.minimum(dU + t, dV + s), dF + eps)
    return f, c, t, s


def bump_values(dist_rows: np.ndarray, U_cols, V_cols, F_cols, t: float, s: float, eps: float) -> np.ndarray:
    """Evaluate ``min(d(x,U) + t, d(x,V) + s, d(x,F) + eps)`` on arbitrary rows.

    ``dist_rows[i, j]`` is the distance from evaluation point ``i`` to point
    ``j`` of the space the sets index into.
    """
    return np.minimum(np.minimum(dist_rows[:, U_cols].min(axis=1) + t,
                                 dist_rows[:, V_cols].min(axis=1) + s),
                      dist_rows[:, F_cols].min(axis=1) + eps)


def bump_coordinate(space: FiniteMetricSpace, U, V, F, eps: float) -> CoordinateFunction:
    """1-Lipschitz ``f`` with ``|f| <= eps`` on F and
    ``f(x) - f(y) = min(gap(U,V), gap(U,F) + gap(V,F) + 2 eps)`` on ``U x V``.
    """
    U, V, F = (np.unique(np.asarray(list(S), dtype=np.int64)) for S in (U, V, F))
    if not (U.size and V.size and F.size):
        raise ValueError("U, V and F must be non-empty")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    D = space.dist
    dF = D[:, F].min(axis=1)
    f, c, _, _ = _bump(D, U, V, dF, eps)
    return CoordinateFunction(f, tuple(U.tolist()), tuple(V.tolist()), tuple(F.tolist()), c, eps)


# -- schedule ------------------------------------------------------------------


@dataclass(frozen=True)
class BuildConfig:
    """``eps_ratio=None`` picks the decay ratio from the space (see ``eps_ratio_for``).

    Only pairs ``x < y`` are partitioned, since a coordinate separating
    ``(x, y)`` separates ``(y, x)`` equally; ``merge`` fuses pieces of a block
    while the scale bound survives, which cuts the coordinate count.
    """

    order: str = "farthest-first"
    eps_ratio: float | None = None
    eps1: float | None = None
    merge: bool = True


def dense_order(space: FiniteMetricSpace, mode: str = "farthest-first") -> list[int]:
    n = space.n
    if mode == "input":
        return list(range(n))
    if mode != "farthest-first":
        raise ValueError(f"unknown order {mode!r}")
    if n == 0:
        return []
    order = [0]
    dmin = space.dist[0].copy()
    for _ in range(n - 1):
        nxt = int(np.argmax(dmin))
        order.append(nxt)
        dmin = np.minimum(dmin, space.dist[nxt])
    return order


def eps_ratio_for(space: FiniteMetricSpace, lam: float, eps1: float) -> float:
    """Decay ratio that brings eps down to about ``minsep / lam`` after n steps.

    Clamped to [1/2, 0.99]; slower decay keeps every block's eps far above
    rounding noise relative to the distances.
    """
    n = space.n
    if n < 3:
        return 0.5
    target = space.min_separation / (lam * eps1)
    r = target ** (1.0 / (n - 1)) if target > 0 else 0.5
    return float(min(max(r, 0.5), 0.99))


def block_guard(space: FiniteMetricSpace, lam: float, eps1: float, ratio: float) -> int:
    n = space.n
    ms = space.min_separation
    return n + int(math.ceil(math.log(max(lam * eps1 * n / ms, 1.0)) / math.log(1.0 / ratio))) + 4


def _eps_stream(eps1: float, ratio: float):
    e = eps1
    while True:
        yield e
        e *= ratio


# -- builder -------------------------------------------------------------------


def resolve_provider(space: FiniteMetricSpace, lam: float, provider: str, cone: bool = False) -> str:
    if provider != "auto":
        return provider
    p = space.p if space.has_coords else None
    if cone:
        if math.isclose(lam, 3.0, rel_tol=1e-12):
            return "cone-annuli"
        if p is not None and math.isclose(lam, (1 + 2 ** p) ** (1 / p), rel_tol=1e-12):
            return "cone-lp"
        return "fine"
    if math.isclose(lam, 2.0, rel_tol=1e-12):
        return "annuli"
    if p is not None and math.isclose(lam, 2 ** (1 / p), rel_tol=1e-12):
        return "lp"
    return "fine"


def _check_lambda(space: FiniteMetricSpace, lam: float, provider: str, hi: float) -> None:
    if not 1.0 < lam <= hi:
        raise ValueError(f"lambda must lie in (1, {hi:g}], got {lam!r}")
    want = PROVIDER_LAMBDA[provider](space)
    if want is not None and not math.isclose(lam, want, rel_tol=1e-12):
        raise ValueError(f"provider {provider!r} certifies lambda = {want!r}, not {lam!r}")


def _prefix_tables(D: np.ndarray, order: Sequence[int]):
    """Row i: distance to ``{order[0..i]}`` and a nearest point of that prefix."""
    order = np.asarray(order, dtype=np.int64)
    rows = D[order]
    pm = np.minimum.accumulate(rows, axis=0)
    near = np.empty(rows.shape, dtype=np.int64)
    near[0] = order[0]
    for i in range(1, len(order)):
        near[i] = np.where(rows[i] < pm[i - 1], order[i], near[i - 1])
    return pm, near


def _piece_sets(keys_p: np.ndarray, pts: np.ndarray, n: int):
    """Unique (piece, point) memberships sorted by piece, with run starts."""
    u = np.unique(keys_p * n + pts)
    p, x = u // n, u % n
    starts = np.flatnonzero(np.r_[True, np.diff(p) != 0])
    return p, x, starts


def _assemble(space: FiniteMetricSpace, lam: float, provider: str, config: BuildConfig, *,
              form: str, eps1: float, coord_eps_factor: float, cone: bool) -> Embedding:
    n = space.n
    D = space.dist
    if n < 2:
        return Embedding(lam, n, np.zeros((0, n)), (), np.full((n, n), -1), tuple(range(n)), (),
                         cone=cone, decay=coord_eps_factor)
    order = dense_order(space, config.order)
    ratio = config.eps_ratio if config.eps_ratio is not None else eps_ratio_for(space, lam, eps1)
    if not 0 < ratio < 1:
        raise ValueError("eps decay ratio must lie in (0, 1)")
    guard = block_guard(space, lam, eps1, ratio)
    ba = assign_blocks(space, order, _eps_stream(eps1, ratio), lam, form, guard=guard)
    eps = np.array(ba.eps)
    nb = ba.K - 1

    # per block b (block number k = b + 1): F = first k points, G = first k + 1
    pm, near = _prefix_tables(D, order)
    kk = np.arange(1, nb + 1)
    dF = pm[np.minimum(kk, n) - 1]
    dG = pm[np.minimum(kk + 1, n) - 1]
    nearG = near[np.minimum(kk + 1, n) - 1]
    alpha, beta = eps[1:], eps[:-1]

    xs, ys = np.nonzero(np.triu(np.ones((n, n), dtype=bool), 1))
    blk = ba.block[xs, ys] - 1
    d = D[xs, ys]
    inside = ((sigma(dG[blk, xs], dG[blk, ys], alpha[blk], lam, form) <= d)
              & ~(sigma(dF[blk, xs], dF[blk, ys], beta[blk], lam, form) <= d))
    if blk.min() < 0 or not inside.all():
        raise InvariantFailed("block assignment disagrees with the block membership formula")
    bp = partition_blocks(space, xs, ys, blk, dF, dG, nearG, alpha, beta, lam, provider, form,
                          merge=config.merge)

    # one coordinate per piece, all evaluated at once
    piece = bp.piece
    P = int(piece.max()) + 1
    pU, xU, sU = _piece_sets(piece, xs, n)
    pV, yV, sV = _piece_sets(piece, ys, n)
    porder, pstarts, _ = _runs(piece)
    pb = blk[porder[pstarts]]
    diam = np.maximum.reduceat(d[porder], pstarts)
    RU = np.minimum.reduceat(D[xU], sU, axis=0)
    RV = np.minimum.reduceat(D[yV], sV, axis=0)
    gUF = np.minimum.reduceat(dF[pb[pU], xU], sU)
    gVF = np.minimum.reduceat(dF[pb[pV], yV], sV)
    gUV = np.minimum.reduceat(RU[pV, yV], sV)
    e = coord_eps_factor * beta[pb]
    if not cone:
        c = np.minimum(gUV, gUF + gVF + 2.0 * e)
        t = np.minimum(c, gUF + e)
        sh = t - c
        if np.any(sh < -gVF - e - TOL) or np.any(t > gUF + e + TOL):
            raise InvariantFailed("no admissible (s, t) for a bump coordinate")
        f = np.minimum(np.minimum(RU + t[:, None], RV + sh[:, None]), dF[pb] + e[:, None])
        swapped = np.zeros(P, dtype=bool)
    else:
        swapped = gVF > gUF
        c = np.minimum(gUV, np.maximum(gUF, gVF) + e)
        f = np.maximum(c[:, None] - np.where(swapped[:, None], RV, RU), 0.0)
    infeasible = np.flatnonzero(~((c > 0) & (diam < lam * c)))
    if infeasible.size:
        i = int(infeasible[0])
        raise ScaleInfeasible(f"piece {i}: diam {diam[i]!r} >= lambda * c = {lam * c[i]!r}",
                              witness=i)
    got = np.abs(f[piece, xs] - f[piece, ys])
    off = np.abs(got - c[piece]) > 1e-9 * np.maximum(c[piece], 1.0)
    if off.any():
        i = int(np.flatnonzero(off)[0])
        raise InvariantFailed(f"coordinate {piece[i]} separates ({xs[i]},{ys[i]}) by {got[i]!r}, "
                              f"not by its constant {c[piece[i]]!r}")
    scale = (diam / c + lam) / 2.0
    matrix = scale[:, None] * f

    witness = np.full((n, n), -1, dtype=np.int64)
    witness[xs, ys] = piece
    witness[ys, xs] = piece
    Us = np.split(xU, sU[1:])
    Vs = np.split(yV, sV[1:])
    meta = tuple(CoordinateMeta(int(pb[i]) + 1, float(c[i]), float(scale[i]), tuple(Us[i].tolist()),
                                tuple(Vs[i].tolist()), float(e[i]), bool(swapped[i]))
                 for i in range(P))
    return Embedding(lam, n, matrix, meta, witness, tuple(order), ba.eps,
                     cone=cone, decay=coord_eps_factor)


def build_good_embedding(space: FiniteMetricSpace, lam: float = 2.0, provider: str = "auto",
                         config: BuildConfig | None = None) -> Embedding:
    """Strict and good lam-embedding of a finite space.

    Each block of pairs is partitioned, each piece ``E_n`` gets a bump
    coordinate separating its rectangle by ``c_n`` and scaled by
    ``lam_n = (diam(E_n) / c_n + lam) / 2``.
    """
    config = config or BuildConfig()
    provider = resolve_provider(space, lam, provider)
    _check_lambda(space, lam, provider, 2.0)
    eps1 = config.eps1 if config.eps1 is not None else (space.diameter / lam if space.n > 1 else 1.0)
    return _assemble(space, lam, provider, config, form="sum", eps1=eps1, coord_eps_factor=1.0,
                     cone=False)


# -- strictification -----------------------------------------------------------


def strict_factor(lam: float, lam_n: float, eta: float = STRICT_ETA) -> float:
    """A factor in (1, 2) with ``factor * lam_n < lam``."""
    a = min(2.0, lam / lam_n) * (1.0 - eta)
    if 1.0 < a < 2.0 and a * lam_n < lam:
        return a
    return 1.0 + (min(2.0, lam / lam_n) - 1.0) / 2.0


def strictify(emb: Embedding) -> Embedding:
    """Rescale every coordinate by a factor in (1, 2) keeping its bound below lam."""
    scales = emb.scales
    bad = np.flatnonzero(scales >= emb.lam)
    if bad.size:
        i = int(bad[0])
        raise NotGood(f"coordinate {i} has Lipschitz bound {scales[i]!r} >= lambda {emb.lam!r}",
                      witness=i)
    factors = np.array([strict_factor(emb.lam, s) for s in scales])
    matrix = emb.matrix * factors[:, None] if emb.dim else emb.matrix.copy()
    meta = tuple(replace(m, scale=m.scale * a) for m, a in zip(emb.meta, factors))
    return replace(emb, matrix=matrix, meta=meta, kind="strict", decay=emb.decay * 2.0)


# -- baseline --------------------------------------------------------------------


def kuratowski_baseline(space: FiniteMetricSpace) -> Embedding:
    """Coordinate ``i`` is ``x -> d(x, a_i)``: an isometry into the sup norm."""
    n = space.n
    witness = np.tile(np.arange(n), (n, 1))
    np.fill_diagonal(witness, -1)
    meta = tuple(CoordinateMeta(0, 0.0, 1.0, (i,), (i,)) for i in range(n))
    return Embedding(1.0, n, space.dist.copy(), meta, witness, kind="baseline")


# -- audit -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Certificate:
    mode: str
    lam: float
    n_coords: int
    min_lower_margin: float
    min_upper_margin: float
    max_coord_lip: float
    lip_margin: float
    max_ratio: float
    min_ratio: float
    witness: np.ndarray
    ok: bool = True

    @property
    def distortion(self) -> float:
        return self.max_ratio / self.min_ratio if self.min_ratio > 0 else math.inf

    def summary(self) -> dict:
        return {"verdict": "pass", "mode": self.mode, "lambda": self.lam, "coords": self.n_coords,
                "min_lower_margin": self.min_lower_margin, "min_upper_margin": self.min_upper_margin,
                "max_coord_lip": self.max_coord_lip, "distortion": self.distortion}


@dataclass(frozen=True)
class Violation:
    mode: str
    kind: str
    pair: tuple[int, int] | None = None
    coordinate: int | None = None
    value: float | None = None
    bound: float | None = None
    ok: bool = False

    def summary(self) -> dict:
        return {"verdict": "violation", "mode": self.mode, "kind": self.kind,
                "pair": None if self.pair is None else list(self.pair),
                "coordinate": self.coordinate, "value": self.value, "bound": self.bound}


def pair_stats(matrix: np.ndarray, D: np.ndarray, chunk: int = 256):
    """Sup-norm of coordinate differences per pair and each coordinate's Lipschitz ratio."""
    m, n = matrix.shape
    sup = np.zeros((n, n))
    lip = np.zeros(m)
    off = ~np.eye(n, dtype=bool)
    inv = np.where(off, 1.0 / np.where(off, D, 1.0), 0.0)
    for s in range(0, m, chunk):
        M = matrix[s:s + chunk]
        diff = M[:, :, None] - M[:, None, :]
        np.abs(diff, out=diff)
        np.maximum(sup, diff.max(axis=0), out=sup)
        np.multiply(diff, inv, out=diff)
        lip[s:s + chunk] = diff.reshape(len(M), -1).max(axis=1)
    return sup, lip


def pair_argmax(matrix: np.ndarray) -> np.ndarray:
    """Index of a coordinate attaining the sup-norm difference, per pair."""
    m, n = matrix.shape
    best = np.zeros((n, n))
    arg = np.zeros((n, n), dtype=np.int64)
    for i, row in enumerate(matrix):
        diff = np.abs(row[:, None] - row[None, :])
        upd = diff > best
        arg[upd] = i
        best[upd] = diff[upd]
    return arg


def _best_coordinate(M: np.ndarray, x: int, y: int) -> int:
    return int(np.argmax(np.abs(M[:, x] - M[:, y])))


def _first(mask: np.ndarray):
    i, j = np.argwhere(mask)[0]
    return int(i), int(j)


def audit_embedding(space: FiniteMetricSpace, emb: Embedding, lam: float | None = None,
                    mode: str = "good") -> Certificate | Violation:
    """Exhaustive pairwise check of a finite embedding.

    ``plain``: ``d <= |f(x)-f(y)| <= lam d``; ``strict``: both strict;
    ``good``: lower bound, witnesses, every coordinate Lipschitz below lam and
    the decay table.  Lower bounds are checked exactly, non-strict upper
    bounds up to ``TOL``.
    """
    if mode not in ("plain", "good", "strict"):
        raise ValueError(f"unknown audit mode {mode!r}")
    lam = emb.lam if lam is None else lam
    n = space.n
    D = space.dist
    if emb.n != n or emb.matrix.shape[1] != n:
        return Violation(mode, "shape", value=float(emb.matrix.shape[1]), bound=float(n))
    M = emb.matrix
    if M.shape[0] == 0:
        if n > 1:
            return Violation(mode, "lower", pair=(0, 1), value=0.0, bound=float(D[0, 1]))
        return Certificate(mode, lam, 0, math.inf, math.inf, 0.0, lam, 1.0, 1.0, np.full((n, n), -1))
    sup, lip = pair_stats(M, D)
    off = ~np.eye(n, dtype=bool)
    lower = np.where(off, sup - D, math.inf)
    upper = np.where(off, lam * D - sup, math.inf)

    low_bad = lower <= 0 if mode == "strict" else lower < 0
    if low_bad.any():
        x, y = _first(low_bad)
        return Violation(mode, "lower", (x, y), _best_coordinate(M, x, y), float(sup[x, y]), float(D[x, y]))

    if mode == "strict":
        up_bad = upper <= 0
    elif mode == "plain":
        up_bad = upper < -TOL
    else:
        up_bad = np.zeros_like(off)
    if up_bad.any():
        x, y = _first(up_bad)
        return Violation(mode, "upper", (x, y), _best_coordinate(M, x, y), float(sup[x, y]),
                         float(lam * D[x, y]))

    witness = None
    if mode == "good":
        if emb.witness is not None:
            w = emb.witness
            if np.any(w[off] < 0) or np.any(w[off] >= M.shape[0]):
                x, y = _first(off & ((w < 0) | (w >= M.shape[0])))
                return Violation(mode, "witness", (x, y), int(w[x, y]))
            xs, ys = np.nonzero(off)
            got = np.abs(M[w[xs, ys], xs] - M[w[xs, ys], ys])
            short = got < D[xs, ys]
            if short.any():
                k = int(np.flatnonzero(short)[0])
                return Violation(mode, "witness", (int(xs[k]), int(ys[k])), int(w[xs[k], ys[k]]),
                                 float(got[k]), float(D[xs[k], ys[k]]))
            witness = w
        bad = np.flatnonzero(lip >= lam)
        if bad.size:
            i = int(bad[0])
            return Violation(mode, "lipschitz", coordinate=i, value=float(lip[i]), bound=lam)
        if emb.eps and emb.order and emb.meta:
            T = emb.decay_table()
            pos = np.empty(n, dtype=np.int64)
            pos[list(emb.order)] = np.arange(n)
            for k in range(1, len(emb.eps) + 1):
                inF = pos < k
                cap = emb.decay * lam * emb.eps[k - 1] + TOL
                over = inF & (T[:, k - 1] > cap)
                if over.any():
                    x = int(np.flatnonzero(over)[0])
                    return Violation(mode, "decay", pair=(x, x), coordinate=k,
                                     value=float(T[x, k - 1]), bound=cap)

    if witness is None:
        witness = pair_argmax(M)
        np.fill_diagonal(witness, -1)
    ratio = sup[off] / D[off] if n > 1 else np.array([1.0])
    return Certificate(
        mode=mode, lam=lam, n_coords=int(M.shape[0]),
        min_lower_margin=float(lower[off].min()) if n > 1 else math.inf,
        min_upper_margin=float(upper[off].min()) if n > 1 else math.inf,
        max_coord_lip=float(lip.max()), lip_margin=float(lam - lip.max()),
        max_ratio=float(ratio.max()), min_ratio=float(ratio.min()), witness=witness)
