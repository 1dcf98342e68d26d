import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import dyadic_l1_spaces, point_spaces
from helpers import assert_double_bound, assert_partition_of, assert_witness_valid, two_clusters
from c0embed import gallery
from c0embed.cone import (a_plus_set, build_cone_embedding, cone_annuli_partition, cone_coordinate,
                          cone_delta_blocks, cone_lp_lambda, cone_lp_partition, control_function,
                          counterexample_index, counterexample_space, lemma615_partition, pigeonhole_audit)
from c0embed.embedding import audit_embedding, dense_order, kuratowski_baseline
from c0embed.errors import GapHypothesisViolated, SeedTooSmall, ShapeMismatch
from c0embed.metric import Ball, PairSet, validate_metric


# -- control functions ------------------------------------------------------------------------


def test_control_two_points_large_lambda():
    s = validate_metric([[0, 1], [1, 0]])
    cf = control_function(s, 3.0, anchor=0)
    assert cf.phi.tolist() == [0.0, 1.0] and cf.theta == 2.0


def test_control_single_point():
    cf = control_function(validate_metric([[0]]), 1.5)
    assert cf.phi.tolist() == [0.0] and cf.theta == 1.0


@given(point_spaces(), st.sampled_from([1.2, 2.0, 2.5, 3.0]), st.data())
def test_control_invariants(s, lam, data):
    a = data.draw(st.integers(0, s.n - 1))
    cf = control_function(s, lam, a)
    assert cf.theta < lam
    D = s.dist.tolist()
    phi = cf.phi.tolist()
    for x, y in oracles.all_pairs(s.n):
        assert abs(phi[x] - phi[y]) <= D[x][y] + 1e-12
        assert D[x][y] <= cf.theta * max(phi[x], phi[y]) + 1e-12
    assert min(phi) >= 0


# -- cone coordinate -----------------------------------------------------------------------------


def test_cone_line_example(line056):
    f = cone_coordinate(line056, [1], [0], [2], 0.0)
    assert f.swapped
    assert f.constant == 5.0
    assert f.values.tolist() == [5.0, 0.0, 0.0]


@st.composite
def cone_inputs(draw, spaces=dyadic_l1_spaces()):
    s = draw(spaces)
    idx = st.lists(st.integers(0, s.n - 1), min_size=1, max_size=s.n, unique=True)
    return s, draw(idx), draw(idx), draw(idx), draw(st.integers(0, 64)) / 32.0


def check_cone(s, U, V, F, eps, tol=0.0):
    f = cone_coordinate(s, U, V, F, eps)
    D = s.dist.tolist()
    vals, c = oracles.cone(D, U, V, F, eps)
    assert np.allclose(f.values, vals, rtol=0, atol=tol) and abs(f.constant - c) <= tol
    assert min(f.values) >= 0
    for x in U:
        for y in V:
            assert abs(abs(f.values[x] - f.values[y]) - c) <= tol
    for x in F:
        assert f.values[x] <= eps + tol
    for x, y in oracles.all_pairs(s.n):
        assert abs(f.values[x] - f.values[y]) <= D[x][y] + tol


@given(cone_inputs())
def test_cone_conclusions_exact_on_dyadic_grid(data):
    check_cone(*data)


@given(cone_inputs(point_spaces()))
def test_cone_conclusions_general(data):
    check_cone(*data, tol=1e-12)


# -- providers ---------------------------------------------------------------------------------


def test_cone_annuli_single_pair(path3):
    w = cone_annuli_partition(path3, PairSet([(0, 2)]), Ball(0, 0.0), Ball(2, 0.0))
    assert len(w.partition) == 1 and w.valid and w.lam == 3.0


def test_cone_annuli_six_point_l1():
    a = np.array([[0.0, 0.0], [0.25, 0.0], [0.0, 0.25]])
    b = np.array([[3.0, 0.0], [3.25, 0.0], [3.0, -0.25]])
    s, E, _, _ = two_clusters(a, b, p=1.0)
    w = cone_annuli_partition(s, E, Ball(0, 0.25), Ball(3, 0.25))
    assert_partition_of(w.partition, E)
    assert_witness_valid(s, w)
    # gap 2.5, eps = 2.5 - 3 * 0.25 = 1.75, annulus width 0.9 * 1.75 = 1.575 covers every distance in [2.5, 3.5]
    assert len(w.partition) == math.ceil((3.5 - 2.5) / (0.9 * 1.75))


def test_cone_annuli_gap(path3):
    with pytest.raises(GapHypothesisViolated):
        cone_annuli_partition(path3, PairSet([(0, 2)]), Ball(0, 1.0), Ball(2, 1.0))


def test_cone_lp_lambda_values():
    assert cone_lp_lambda(1.0) == 3.0
    assert cone_lp_lambda(2.0) == pytest.approx(2.2360680, abs=1e-7)


def test_cone_lp_eight_points_l2():
    rng = np.random.default_rng(8)
    a = np.round(rng.uniform(-0.3, 0.3, (4, 3)), 6)
    b = np.round(rng.uniform(-0.3, 0.3, (4, 3)) + [5, 1, 0], 6)
    s, E, b1, b2 = two_clusters(a, b)
    r = max(b1.radius, b2.radius)
    w = cone_lp_partition(s, E, Ball(0, r), Ball(4, r))
    assert w.lam == pytest.approx(5 ** 0.5)
    assert_partition_of(w.partition, E)
    D = s.dist.tolist()
    for piece in w.partition:
        P = list(piece.pairs)
        assert oracles.pair_diam(D, P) ** 2 < 5 * oracles.rect_gap(D, P) ** 2


# -- A+ sets and blocks --------------------------------------------------------------------------


@given(point_spaces(), st.floats(0.01, 2.0), st.floats(1.01, 3.0), st.data())
def test_a_plus_membership(s, alpha, lam, data):
    G = data.draw(st.lists(st.integers(0, s.n - 1), min_size=1, unique=True))
    D = s.dist.tolist()
    A = a_plus_set(s, G, alpha, lam)
    for x, y in oracles.all_pairs(s.n):
        inside = D[x][y] >= lam * (max(oracles.dist_to(D, x, G), oracles.dist_to(D, y, G)) + alpha)
        assert ((x, y) in A.pairs) == inside


@given(point_spaces(n_max=8), st.sampled_from([1.5, 2.5, 3.0]))
def test_cone_blocks_exact_partition(s, lam):
    order = dense_order(s)
    phi = control_function(s, lam, order[1])
    e1 = phi.phi[order[0]] * 1.001 + 1e-9
    eps = [e1 * 0.5 ** i for i in range(100)]
    blocks = cone_delta_blocks(s, order, eps, lam, phi)
    ref = oracles.block_index(s.dist.tolist(), order, eps[:len(blocks) + 1], lam, form="max")
    got = {pair: k for k, b in enumerate(blocks, start=1) for pair in b}
    assert sum(len(b) for b in blocks) == len(got) == s.n * (s.n - 1)
    assert got == ref


def test_cone_blocks_seed_too_small(path3):
    phi = control_function(path3, 3.0, 2)
    with pytest.raises(SeedTooSmall):
        cone_delta_blocks(path3, [0, 2, 1], [phi.phi[0], 0.1], 3.0, phi)


def test_lemma615_unfolds_when_F_equals_G(path3):
    lam, a, b = 3.0, 0.02, 0.2
    bp = lemma615_partition(path3, [0], [0], a, b, lam, "fine")
    D = path3.dist.tolist()
    expect = {(x, y) for x, y in oracles.all_pairs(3)
              if lam * (max(D[x][0], D[y][0]) + a) <= D[x][y] < lam * (max(D[x][0], D[y][0]) + b)}
    assert set(bp.partition.parent) == expect


def test_lemma615_graph_metric_double_bound():
    g = gallery.generate(gallery.SpaceSpec("graph_metric", n=12, seed=3))
    o = dense_order(g)
    for k in (4, 8, 16):
        a = g.diameter / k
        bp = lemma615_partition(g, [o[0]], [o[0], o[1]], a, 2 * a, 3.0, "cone-annuli")
        assert len(bp.partition.parent) > 0
        assert_double_bound(g, bp, "max")


@given(point_spaces(n_min=3, n_max=9), st.data())
def test_lemma615_property(s, data):
    o = dense_order(s)
    k = data.draw(st.integers(1, s.n - 1))
    a = s.diameter * data.draw(st.sampled_from([0.02, 0.05, 0.1]))
    bp = lemma615_partition(s, o[:k], o[:k + 1], a, 2 * a, 3.0, "cone-annuli")
    assert_double_bound(s, bp, "max")


# -- assembly ------------------------------------------------------------------------------------


def check_cone_embedding(s, e, lam):
    assert e.cone and (e.dim == 0 or e.matrix.min() >= 0)
    cert = audit_embedding(s, e, lam, mode="strict")
    assert cert.ok, cert
    assert audit_embedding(s, e, lam, mode="good").ok
    M = e.matrix
    norms = np.abs(M).max(axis=0) if e.dim else np.zeros(s.n)
    for x, y in oracles.all_pairs(s.n):
        diff = np.abs(M[:, x] - M[:, y]).max() if e.dim else 0.0
        assert diff <= max(norms[x], norms[y])
    return cert


@given(point_spaces(n_max=10), st.sampled_from([3.0, 2.5, 1.2]))
def test_cone_build_round_trip(s, lam):
    e = build_cone_embedding(s, lam)
    cert = check_cone_embedding(s, e, lam)
    assert cert.distortion < lam


def test_cone_l1_sample_below_three():
    s = gallery.generate(gallery.SpaceSpec("lp_sample", n=20, p=1.0, dim=4, seed=6))
    assert check_cone_embedding(s, build_cone_embedding(s, 3.0), 3.0).distortion < 3.0


def test_cone_l2_sample_below_sqrt5():
    s = gallery.generate(gallery.SpaceSpec("lp_sample", n=20, p=2.0, dim=3, seed=6))
    lam = 5 ** 0.5
    e = build_cone_embedding(s, lam, "cone-lp")
    assert check_cone_embedding(s, e, lam).distortion < lam


# -- the counterexample --------------------------------------------------------------------------


def test_counterexample_smallest():
    s = counterexample_space(1)
    assert s.n == 4 and s.labels == ("0", "e0", "1e1", "e0+1e1")
    assert s.dist[2, 3] == 1.0


@pytest.mark.parametrize("p_max", [1, 2, 3, 4, 5])
def test_counterexample_shape(p_max):
    s = counterexample_space(p_max)
    assert s.n == 2 + p_max * (p_max + 1)
    assert np.array_equal(s.dist, np.round(s.dist))
    for p in range(2, p_max + 1):
        for k in range(1, p + 1):
            for l in range(1, p + 1):
                if k != l:
                    q = counterexample_index(p_max, p, k, shifted=True)
                    assert s.dist[q, counterexample_index(p_max, p, l)] == 2 * p + 1
    for i, lab in enumerate(s.labels):
        assert oracles.lp_dist(s.coords[i], np.zeros(p_max + 1), 1) == s.dist[0, i]
        assert lab == s.label(i)


def test_pigeonhole_on_the_cone_embedding():
    s = counterexample_space(4)
    e = build_cone_embedding(s, 3.0)
    v = pigeonhole_audit(s, e.matrix, 4)
    assert v.verdict == "DirectViolation"
    x, y = v.witness["indices"]
    diff = np.abs(e.matrix[:, x] - e.matrix[:, y]).max()
    assert not (s.dist[x, y] <= diff <= 2 * s.dist[x, y])


def synthetic_table(s):
    """f_1 = the l1 norm, f_2 = 0: C = 1 and n0 = 1, so p = 3 > 2^n0 forces a collision."""
    return np.vstack([np.abs(s.coords).sum(axis=1), np.zeros(s.n)])


def test_pigeonhole_on_a_synthetic_table():
    s = counterexample_space(4)
    v = pigeonhole_audit(s, synthetic_table(s), 4)
    assert v.verdict == "PigeonholeContradiction"
    assert (v.C, v.n0, v.p) == (1.0, 1, 3)
    assert v.p > max(v.C / 2 + 1, 2 ** v.n0)
    k, l = v.witness["collision"]
    assert k != l
    x, y = v.witness["indices"]
    T = synthetic_table(s)
    diff = np.abs(T[:, x] - T[:, y]).max()
    assert not (s.dist[x, y] <= diff <= 2 * s.dist[x, y])


def test_pigeonhole_never_accepts_the_baseline():
    s = counterexample_space(4)
    v = pigeonhole_audit(s, kuratowski_baseline(s).matrix, 4)
    assert v.verdict in ("DirectViolation", "PigeonholeContradiction", "Inconclusive")
    assert v.verdict == "Inconclusive" and v.required_p_max > 4


def test_pigeonhole_shape_checks():
    s = counterexample_space(2)
    with pytest.raises(ShapeMismatch):
        pigeonhole_audit(s, np.zeros((2, s.n + 1)), 2)
    with pytest.raises(ValueError):
        pigeonhole_audit(s, -np.ones((1, s.n)), 2)


@given(st.integers(0, 2), st.integers(1, 3))
def test_pigeonhole_no_accept_state(extra, scale):
    s = counterexample_space(4)
    T = np.vstack([scale * synthetic_table(s), np.zeros((extra, s.n))])
    v = pigeonhole_audit(s, T, 4)
    assert v.verdict != "valid"
