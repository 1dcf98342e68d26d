"""Embeddings with nonnegative coordinates, and a certificate that some spaces admit no 2-embedding of that kind."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .embedding import (
    BuildConfig,
    CoordinateFunction,
    Embedding,
    _assemble,
    _check_lambda,
    dense_order,
    resolve_provider,
)
from .errors import (
    GapHypothesisViolated,
    InvariantFailed,
    NoFeasibleEpsilon,
    SeedTooSmall,
    ShapeMismatch,
)
from .metric import TOL, Ball, FiniteMetricSpace, PairSet
from .partitions import (
    ANNULI_STEP,
    BlockPartition,
    PiWitness,
    Provider,
    _check_balls,
    _halve_until,
    _lp_groups_generic,
    _split,
    _witness,
    a_set,
    annuli_labels,
    block_partition,
    delta_blocks,
    register_provider,
)

# -- control functions ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlFunction:
    """Nonnegative ``phi`` with ``|phi(x) - phi(y)| <= d(x, y) <= theta * max(phi(x), phi(y))``."""

    phi: np.ndarray
    theta: float
    anchor: int

    def violations(self, space: FiniteMetricSpace) -> list[tuple[int, int]]:
        D = space.dist
        lip = np.abs(self.phi[:, None] - self.phi[None, :]) > D + TOL
        dom = D > self.theta * np.maximum(self.phi[:, None], self.phi[None, :]) + TOL
        bad = np.argwhere(lip | dom | (self.phi[:, None] < 0))
        return [(int(i), int(j)) for i, j in bad]


def control_function(space: FiniteMetricSpace, lam: float, anchor: int = 0) -> ControlFunction:
    """``d(x, a) + diam`` with theta = 1 when lam <= 2, otherwise ``d(x, a)`` with theta = 2."""
    if not lam > 1:
        raise ValueError(f"lambda must exceed 1, got {lam!r}")
    if space.n == 0:
        return ControlFunction(np.zeros(0), 1.0, anchor)
    d = np.array(space.dist[anchor], dtype=float)
    cf = ControlFunction(d + space.diameter, 1.0, anchor) if lam <= 2 else ControlFunction(d, 2.0, anchor)
    bad = cf.violations(space)
    if bad:
        raise InvariantFailed(f"control function fails at pair {bad[0]}", witness=bad[0])
    return cf


# -- A+ sets and blocks ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class APlusSet:
    G: tuple[int, ...]
    alpha: float
    lam: float
    pairs: PairSet


def a_plus_set(space: FiniteMetricSpace, G: Iterable[int], alpha: float, lam: float) -> APlusSet:
    """Pairs with ``d(x, y) >= lam * (max(d(x, G), d(y, G)) + alpha)``."""
    s = a_set(space, G, alpha, lam, form="max")
    return APlusSet(s.F, alpha, lam, s.pairs)


def cone_delta_blocks(space: FiniteMetricSpace, order: Sequence[int], eps_seq: Iterable[float],
                      lam: float, phi: ControlFunction) -> list[PairSet]:
    it = iter(eps_seq)
    first = float(next(it))
    a1 = int(order[0])
    if not first > phi.phi[a1]:
        raise SeedTooSmall(f"eps_1 = {first!r} must exceed phi(a_1) = {phi.phi[a1]!r}", witness=a1)

    def chained():
        yield first
        yield from it
    return delta_blocks(space, order, chained(), lam, form="max")


# -- coordinates ---------------------------------------------------------------


def _cone(D: np.ndarray, U, V, dF: np.ndarray, eps: float):
    gUF = float(dF[U].min())
    gVF = float(dF[V].min())
    swapped = gVF > gUF
    if swapped:
        U, V, gUF, gVF = V, U, gVF, gUF
    dU = D[:, U].min(axis=1)
    gUV = float(dU[V].min())
    t = min(gUV, gUF + eps)
    return np.maximum(t - dU, 0.0), t, swapped


def cone_coordinate(space: FiniteMetricSpace, U, V, F, eps: float) -> CoordinateFunction:
    """Nonnegative 1-Lipschitz ``f = max(t - d(x, U), 0)`` with ``f <= eps`` on F.

    ``|f(x) - f(y)| = min(gap(U, V), max(gap(U, F), gap(V, F)) + eps)`` on ``U x V``.
    When ``gap(V, F) > gap(U, F)`` the roles of U and V are exchanged, so the
    difference is positive on ``V x U`` instead; ``swapped`` records this.
    """
    U, V, F = (np.unique(np.asarray(list(S), dtype=np.int64)) for S in (U, V, F))
    if not (U.size and V.size and F.size):
        raise ValueError("U, V and F must be non-empty")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    D = space.dist
    f, c, swapped = _cone(D, U, V, D[:, F].min(axis=1), eps)
    return CoordinateFunction(f, tuple(U.tolist()), tuple(V.tolist()), tuple(F.tolist()), c, eps,
                              swapped=swapped)


# -- pi+ providers -------------------------------------------------------------


def _same_radius(b1: Ball, b2: Ball) -> float:
    return max(b1.radius, b2.radius)


@register_provider("cone-annuli", lambda space: 3.0)
def _cone_annuli_groups(space, E, b1, b2, lam=3.0):
    r = _same_radius(b1, b2)
    d = space.dist[E.xs, E.ys]
    delta = float(d.min())
    eps = delta - 3.0 * r
    if not eps > 0:
        raise GapHypothesisViolated(f"gap {delta!r} <= 3 r = {3.0 * r!r}",
                                    witness={"gap": delta, "r": r})
    return _split(annuli_labels(d, delta, ANNULI_STEP * eps))


def cone_annuli_partition(space: FiniteMetricSpace, E: PairSet, B1: Ball, B2: Ball) -> PiWitness:
    """Distance annuli narrower than ``gap(E) - 3 r``; certifies lambda = 3 for equal radii r."""
    r = _same_radius(B1, B2)
    B1, B2 = Ball(B1.center, r), Ball(B2.center, r)
    _check_balls(space, E, B1, B2)
    return _witness(space, E, _cone_annuli_groups(space, E, B1, B2), 3.0)


def cone_lp_lambda(p: float) -> float:
    return (1.0 + 2.0 ** p) ** (1.0 / p)


def cone_lp_epsilon(delta: float, diam: float, r: float, p: float) -> float:
    alpha = delta ** p - (1.0 + 2.0 ** p) * r ** p
    share = 2.0 ** p / (1.0 + 2.0 ** p)

    def ok(e):
        return ((2.0 * r + e) ** p < share * delta ** p - alpha / 2.0
                and (diam + e) ** p - alpha / 2.0 < diam ** p)

    hi = r if r > 0 else delta
    eps = _halve_until(ok, hi)
    if eps is None:
        raise NoFeasibleEpsilon("no eps satisfies the cone l^p refinement constraints",
                                witness={"gap": delta, "diam": diam, "r": r})
    return eps


@register_provider("cone-lp", lambda space: cone_lp_lambda(space.p) if space.p else None)
def _cone_lp_groups(space, E, b1, b2, lam):
    r = _same_radius(b1, b2)
    b1, b2 = Ball(b1.center, r), Ball(b2.center, r)
    return _lp_groups_generic(
        space, E, b1, b2, lam,
        threshold=lambda r1, r2: (1.0 + 2.0 ** space.p) * max(r1, r2) ** space.p,
        eps_fn=lambda delta, diam, r1, r2, p: cone_lp_epsilon(delta, diam, max(r1, r2), p))


def cone_lp_partition(space: FiniteMetricSpace, E: PairSet, B1: Ball, B2: Ball) -> PiWitness:
    """Truncate and refine by range; certifies lambda = (1 + 2^p)^(1/p) for equal radii."""
    r = _same_radius(B1, B2)
    B1, B2 = Ball(B1.center, r), Ball(B2.center, r)
    _check_balls(space, E, B1, B2)
    lam = cone_lp_lambda(space.p)
    return _witness(space, E, _cone_lp_groups(space, E, B1, B2, lam), lam)


def lemma615_partition(space: FiniteMetricSpace, F: Sequence[int], G: Sequence[int], alpha: float,
                       beta: float, lam: float, provider: str | Provider = "cone-annuli") -> BlockPartition:
    """Partition of ``A+(G, alpha) minus A+(F, beta)`` whose pieces satisfy
    ``diam < lam * min(gap(U, V), max(d(U, F), d(V, F)) + 2 beta)``.
    """
    return block_partition(space, F, G, alpha, beta, lam, provider, form="max")


# -- assembly ------------------------------------------------------------------


def cone_seed(phi: ControlFunction, a1: int) -> float:
    return float(phi.phi[a1]) * (1.0 + 1e-3) + 1e-9


def build_cone_embedding(space: FiniteMetricSpace, lam: float = 3.0, provider: str = "auto",
                         config: BuildConfig | None = None) -> Embedding:
    """Strict lam-embedding whose coordinates are all nonnegative.

    The control function is anchored at the second point of the dense order
    (the point farthest from the first), which keeps eps_1 on the scale of
    the diameter.  Coordinates use ``2 * eps_k`` so that each one separates
    its piece by exactly the partition's constant.
    """
    config = config or BuildConfig()
    provider = resolve_provider(space, lam, provider, cone=True)
    _check_lambda(space, lam, provider, 3.0)
    order = dense_order(space, config.order)
    if space.n < 2:
        eps1 = 1.0
    else:
        phi = control_function(space, lam, anchor=order[1])
        eps1 = config.eps1 if config.eps1 is not None else cone_seed(phi, order[0])
        if not eps1 > phi.phi[order[0]]:
            raise SeedTooSmall(f"eps_1 = {eps1!r} must exceed phi(a_1) = {phi.phi[order[0]]!r}",
                               witness=order[0])

    emb = _assemble(space, lam, provider, config, form="max", eps1=eps1, coord_eps_factor=2.0,
                    cone=True)
    if emb.dim and emb.matrix.min() < 0:
        raise InvariantFailed("cone coordinate took a negative value")
    return emb


# -- the counterexample ----------------------------------------------------------


def counterexample_space(p_max: int) -> FiniteMetricSpace:
    """``{0, e0} + {p e_k, e0 + p e_k : 1 <= k <= p <= p_max}`` with the l1 metric."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    dim = p_max + 1
    pts = [np.zeros(dim), np.eye(dim)[0]]
    labels = ["0", "e0"]
    for p in range(1, p_max + 1):
        for k in range(1, p + 1):
            v = np.zeros(dim)
            v[k] = p
            pts.append(v)
            pts.append(v + np.eye(dim)[0])
            labels += [f"{p}e{k}", f"e0+{p}e{k}"]
    return FiniteMetricSpace.from_points(np.array(pts), p=1.0, labels=labels)


def counterexample_index(p_max: int, p: int, k: int, shifted: bool = False) -> int:
    """Row of ``p e_k`` (or ``e0 + p e_k``) in :func:`counterexample_space`."""
    if not 1 <= k <= p <= p_max:
        raise ValueError("need 1 <= k <= p <= p_max")
    return 2 + 2 * (p * (p - 1) // 2 + (k - 1)) + int(shifted)


@dataclass(frozen=True)
class Verdict:
    """Outcome of checking a claimed 2-embedding with nonnegative coordinates.

    ``verdict`` is ``DirectViolation``, ``PigeonholeContradiction`` or
    ``Inconclusive``; there is no accepting outcome.
    """

    verdict: str
    witness: dict = field(default_factory=dict)
    C: float | None = None
    n0: int | None = None
    p: int | None = None
    required_p_max: int | None = None

    def to_json(self) -> dict:
        out = {"verdict": self.verdict, "witness": self.witness, "C": self.C, "n0": self.n0, "p": self.p}
        if self.required_p_max is not None:
            out["required_p_max"] = self.required_p_max
        return out


def _direct_violation(space: FiniteMetricSpace, table: np.ndarray, lam: float = 2.0) -> dict | None:
    D = space.dist
    sup = np.zeros_like(D)
    for row in table:
        sup = np.maximum(sup, np.abs(row[:, None] - row[None, :]))
    off = ~np.eye(space.n, dtype=bool)
    low = off & (sup < D)
    high = off & (sup > lam * D)
    for kind, mask in (("lower", low), ("upper", high)):
        if mask.any():
            x, y = (int(v) for v in np.argwhere(mask)[0])
            return {"kind": kind, "pair": [space.label(x), space.label(y)], "indices": [x, y],
                    "value": float(sup[x, y]), "distance": float(D[x, y])}
    return None


def pigeonhole_audit(space: FiniteMetricSpace, table, p_max: int | None = None,
                     n0_hint: int | None = None) -> Verdict:
    """Look for the failure that every 2-embedding of the counterexample must exhibit.

    ``table[n, x]`` is coordinate ``n`` (0-based, so coordinate ``n`` of the
    argument is ``f_{n+1}``) at point ``x`` of ``counterexample_space(p_max)``.
    When a large enough ``p`` is available, the pigeonhole argument on the
    indicator profiles ``1[0 <= f_n(p e_k) <= C + 1]`` names a colliding pair
    ``k != l`` and the first inequality of the chain it breaks.  Otherwise the
    table is checked pair by pair.
    """
    T = np.atleast_2d(np.asarray(table, dtype=float))
    if p_max is None:
        p_max = int(round((math.sqrt(max(4 * space.n - 7, 1)) - 1) / 2))
    if space.n != 2 + p_max * (p_max + 1) or T.shape[1] != space.n:
        raise ShapeMismatch(f"table of shape {T.shape} does not fit a counterexample space "
                            f"with {space.n} points and p_max = {p_max}")
    if T.size and T.min() < 0:
        raise ValueError("coordinate values must be nonnegative")
    m = T.shape[0]
    f0, fe0 = T[:, 0], T[:, 1]
    C = float(max(f0.max(initial=0.0), fe0.max(initial=0.0)))
    big = np.flatnonzero((f0 >= 1) | (fe0 >= 1))
    n0 = max(1, int(big[-1]) + 1 if big.size else 1)
    if n0_hint is not None:
        if n0_hint < n0:
            raise ValueError(f"n0_hint {n0_hint} is below the smallest valid n0 = {n0}")
        n0 = n0_hint
    bound = max(C / 2.0 + 1.0, 2.0 ** n0)
    need = int(math.floor(bound)) + 1
    if need > p_max:
        hit = _direct_violation(space, T)
        if hit is not None:
            return Verdict("DirectViolation", hit, C, n0, None)
        return Verdict("Inconclusive", {"reason": f"p_max = {p_max} is below the required {need}"},
                       C, n0, None, required_p_max=need)
    p = need
    idx = [counterexample_index(p_max, p, k) for k in range(1, p + 1)]
    head = T[:min(n0, m)]
    prof = (head[:, idx] >= 0) & (head[:, idx] <= C + 1)
    seen: dict[bytes, int] = {}
    k = l = -1
    for j in range(p):
        key = prof[:, j].tobytes()
        if key in seen:
            k, l = seen[key] + 1, j + 1
            break
        seen[key] = j
    if k < 0:
        raise InvariantFailed("no collision among more profiles than possible values")
    return Verdict("PigeonholeContradiction", _chain(space, T, p_max, p, k, l, C, n0), C, n0, p)


def _chain(space, T, p_max, p, k, l, C, n0) -> dict:
    """Walk the inequalities that together forbid ``phi(k) == phi(l)``; report the first that fails."""
    D = space.dist
    pk = counterexample_index(p_max, p, k)
    pl = counterexample_index(p_max, p, l)
    qk = counterexample_index(p_max, p, k, shifted=True)
    base = {"collision": [k, l], "profile": [int(v) for v in
                                           ((T[:n0, pk] >= 0) & (T[:n0, pk] <= C + 1))]}

    def fail(step, x, y, n, value, bound):
        return {**base, "step": step, "pair": [space.label(x), space.label(y)], "indices": [x, y],
                "coordinate": None if n is None else int(n) + 1, "value": float(value), "bound": float(bound)}

    diff = np.abs(T[:, qk] - T[:, pl])
    n = int(np.argmax(diff))
    if not diff[n] >= 2 * p + 1:
        return fail("lower bound |f(e0 + p e_k) - f(p e_l)| >= 2p + 1", qk, pl, n, diff[n], D[qk, pl])
    if n >= n0:
        for x, anchor in ((pk, 0), (qk, 1)):
            if T[n, x] >= 2 * p + 1:
                return fail("tail estimate f_n < 2p + 1 beyond n0 (upper bound)", x, anchor, n,
                            abs(T[n, x] - T[n, anchor]), 2 * D[x, anchor])
        raise InvariantFailed("tail coordinate separates without a large value")
    step = abs(T[n, qk] - T[n, pk])
    if not step <= 2:
        return fail("|f_n(e0 + p e_k) - f_n(p e_k)| <= 2 (upper bound)", qk, pk, n, step, 2 * D[qk, pk])
    for x in (pk, pl):
        if not abs(T[n, x] - T[n, 0]) <= 2 * D[x, 0]:
            return fail("f_n(p e_k) <= 2p + C (upper bound against 0)", x, 0, n,
                        abs(T[n, x] - T[n, 0]), 2 * D[x, 0])
    raise InvariantFailed("indicator profiles collide although every inequality of the chain holds")
