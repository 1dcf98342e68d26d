"""Assertion helpers shared by the test modules."""

import numpy as np

import oracles
from c0embed.metric import Ball, FiniteMetricSpace, PairSet
from c0embed.partitions import audit_witness


def two_clusters(a, b, p=2.0):
    s = FiniteMetricSpace.from_points(np.vstack([a, b]), p=p)
    na = len(a)
    E = PairSet.product(range(na), range(na, s.n))
    r1 = float(s.dist[0, :na].max())
    r2 = float(s.dist[na, na:].max())
    return s, E, Ball(0, r1), Ball(na, r2)


def assert_partition_of(part, E):
    seen = [pair for piece in part for pair in piece.pairs]
    assert len(seen) == len(set(seen)) == len(E)
    assert set(seen) == set(E)


def assert_witness_valid(space, w):
    D = space.dist.tolist()
    for piece in w.partition:
        assert oracles.piece_ok(D, list(piece.pairs), w.lam)
    assert all(m > 0 for m in audit_witness(space, w))


def assert_double_bound(space, bp, form):
    D = space.dist.tolist()
    F = list(bp.F)
    assert_partition_of(bp.partition, bp.partition.parent)
    for piece in bp.pieces:
        P = list(piece.pairs)
        U, V = oracles.rect(P)
        diam = oracles.pair_diam(D, P)
        gUF, gVF = oracles.set_gap(D, U, F), oracles.set_gap(D, V, F)
        side = gUF + gVF if form == "sum" else max(gUF, gVF)
        assert diam < bp.lam * oracles.set_gap(D, U, V)
        assert diam < bp.lam * (side + 2 * bp.beta)
