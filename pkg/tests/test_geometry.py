import math

import numpy as np
import pytest

import oracles
from welwl.geometry import (
    EuclideanMotion,
    PermutationMap,
    PointCloud,
    PosVel,
    QuantizationError,
    apply_motion,
    centralize,
    compose,
    encode_positions,
    encode_posvel,
    quantize_tensor,
    random_motion,
    random_permutation,
)
from welwl.harness.generators import gen_equivalent_pair, gen_random_posvel


def test_centralize_examples():
    assert np.array_equal(centralize(PointCloud([[0, 0, 0], [2, 0, 0]])), [[-1, 0, 0], [1, 0, 0]])
    assert np.array_equal(centralize(PointCloud([[3.0, -1.0, 2.0]])), [[0, 0, 0]])
    c = PointCloud([[-1, 0, 0], [1, 0, 0]])
    assert np.array_equal(centralize(c), c.x)


def test_centralize_idempotent_and_translation_equivariant(rng):
    x = rng.standard_normal((7, 3))
    t = rng.standard_normal(3)
    c = centralize(PointCloud(x))
    assert np.max(np.abs(centralize(PointCloud(c)) - c)) <= 1e-12
    assert np.max(np.abs(centralize(PointCloud(x + t)) - c)) <= 1e-12


def test_encode_positions_examples(rng):
    e = encode_positions(PointCloud([[0, 0, 0], [3, 4, 0]]))
    assert e.shape == (2, 2, 1) and e[0, 1, 0] == 5.0 and e[1, 0, 0] == 5.0
    assert encode_positions(PointCloud([[1, 2, 3], [1, 2, 3]]))[0, 1, 0] == 0.0
    x = rng.standard_normal((5, 3))
    got = encode_positions(PointCloud(x))[:, :, 0]
    ref = np.array([[oracles.dist(a, b) for b in x.tolist()] for a in x.tolist()])
    assert np.max(np.abs(got - ref)) <= 1e-14


def test_encode_posvel_zero_velocity(rng):
    x = centralize(PointCloud(rng.standard_normal((4, 3))))
    e, speed = encode_posvel(PosVel(x, np.zeros((4, 3))))
    r = np.linalg.norm(x, axis=1)
    i, j = 0, 2
    assert np.allclose(e[i, j], [np.linalg.norm(x[i] - x[j]), r[i], r[i], r[j], r[j], 0.0], atol=1e-15)
    assert np.all(speed == 0) and np.all(e[np.arange(4), np.arange(4)] == 0)


def test_encode_posvel_two_point_example():
    e, speed = encode_posvel(PosVel([[1, 0, 0], [-1, 0, 0]], [[0, 1, 0], [0, 1, 0]]))
    s = math.sqrt(2)
    assert np.allclose(e[0, 1], [2, s, s, s, s, 0], rtol=0, atol=1e-15)
    assert np.allclose(speed, [1, 1]) and e[0, 0, 0] == 1.0


def test_encode_posvel_matches_loop_oracle(rng):
    xv = gen_random_posvel(rng, 6)
    e, _ = encode_posvel(xv)
    ref = np.array(oracles.encode_posvel(xv.x.tolist(), xv.v.tolist()))
    assert np.max(np.abs(e - ref)) <= 1e-14


def test_encode_posvel_channel_symmetry(rng):
    e, _ = encode_posvel(gen_random_posvel(rng, 5))
    et = e.transpose(1, 0, 2)
    # (i, j) -> (j, i) fixes channels 0 and 5 and swaps 1<->4, 2<->3
    assert np.array_equal(e[..., 0], et[..., 0]) and np.array_equal(e[..., 5], et[..., 5])
    off = ~np.eye(5, dtype=bool)
    assert np.array_equal(e[..., 1][off], et[..., 4][off])
    assert np.array_equal(e[..., 2][off], et[..., 3][off])


def test_encodings_motion_invariant_and_permutation_conjugated(rng):
    for s in range(20):
        xv = gen_random_posvel(rng, 7)
        m, tau = random_motion(rng), random_permutation(rng, 7)
        e, sp = encode_posvel(xv)
        e2, sp2 = encode_posvel(apply_motion(m, PermutationMap.identity(7), xv))
        assert np.max(np.abs(e - e2)) <= 1e-10 and np.max(np.abs(sp - sp2)) <= 1e-10
        e3, _ = encode_posvel(apply_motion(EuclideanMotion.identity(), tau, xv))
        assert np.max(np.abs(tau.apply_to_tensor(e) - e3)) <= 1e-14
        ep = encode_positions(apply_motion(m, tau, PointCloud(xv.x)))
        assert np.max(np.abs(tau.apply_to_tensor(encode_positions(PointCloud(xv.x))) - ep)) <= 1e-10


def test_apply_motion_identity_and_translation(rng):
    xv = gen_random_posvel(rng, 4)
    same = apply_motion(EuclideanMotion.identity(), PermutationMap.identity(4), xv)
    assert np.array_equal(same.x, xv.x) and np.array_equal(same.v, xv.v)
    t = np.array([1.0, -2.0, 0.5])
    moved = apply_motion(EuclideanMotion(np.eye(3), t), PermutationMap.identity(4), xv)
    assert np.array_equal(moved.v, xv.v)
    assert np.allclose(moved.x, xv.x + t, rtol=0, atol=1e-15)


def test_compose_matches_sequential_application(rng):
    for _ in range(20):
        xv = gen_random_posvel(rng, 5)
        g1 = (random_motion(rng), random_permutation(rng, 5))
        g2 = (random_motion(rng), random_permutation(rng, 5))
        seq = apply_motion(*g2, apply_motion(*g1, xv))
        one = apply_motion(*compose(g2, g1), xv)
        assert np.max(np.abs(seq.x - one.x)) <= 1e-12 and np.max(np.abs(seq.v - one.v)) <= 1e-12


def test_random_motion_orthogonal_and_deterministic():
    dets = set()
    for s in range(1000):
        m = random_motion(s)
        assert np.linalg.norm(m.R.T @ m.R - np.eye(3)) <= 1e-12
        d = np.linalg.det(m.R)
        assert abs(abs(d) - 1) <= 1e-12
        dets.add(round(d))
    assert dets == {-1, 1}
    a, b = random_motion(42), random_motion(42)
    assert np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)
    assert np.array_equal(random_permutation(7, 9).perm, random_permutation(7, 9).perm)


def test_validation_errors():
    with pytest.raises(ValueError):
        EuclideanMotion(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
    with pytest.raises(ValueError):
        PermutationMap([0, 0, 1])
    with pytest.raises(ValueError):
        PosVel(np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])
    single = PosVel([[1.0, 2.0, 3.0]], [[0.0, 0.0, 0.0]])
    assert np.array_equal(centralize(single), [[0, 0, 0]])


def test_posvel_dict_round_trip(rng):
    xv = gen_random_posvel(rng, 3)
    back = PosVel.from_dict(xv.to_dict())
    assert np.array_equal(back.x, xv.x) and np.array_equal(back.v, xv.v)
    no_v = PosVel.from_dict({"n": 2, "X": [[0, 0, 0], [1, 1, 1]]})
    assert np.array_equal(no_v.v, np.zeros((2, 3)))


# -- quantization ---------------------------------------------------------------

def test_quantize_examples():
    g = quantize_tensor(np.full((1, 1, 1), 5.0), 1e-9)
    assert int(np.frombuffer(g.feature(0, 0), dtype="<i8")[0]) == 5_000_000_000
    e = np.arange(8.0).reshape(2, 2, 2) * 1e-9
    a = quantize_tensor(e)
    b = quantize_tensor(np.rint(e / 1e-9) * 1e-9)
    assert a.pair_features == b.pair_features
    with pytest.raises(QuantizationError):
        quantize_tensor(np.full((1, 1, 1), 1e12), 1e-9)


def test_quantize_commutes_with_permutation(rng):
    e, _ = encode_posvel(gen_random_posvel(rng, 5))
    tau = random_permutation(rng, 5)
    assert quantize_tensor(tau.apply_to_tensor(e)).pair_features == \
        quantize_tensor(e).permuted(tau.perm).pair_features


def test_equivalent_clouds_quantize_to_same_multiset(rng):
    """Motion drift stays far below half a grid step, so quantized encodings agree
    unless an entry sits within that drift of a rounding boundary (rare)."""
    grid, drift_bound = 1e-9, 1e-13
    worst, near_boundary = 0.0, 0
    for s in range(200):
        a, b = gen_equivalent_pair(rng, 8)
        ea, eb = encode_posvel(a)[0], encode_posvel(b)[0]
        inv = np.argsort(np.asarray(_perm_between(a, b)))
        drift = np.max(np.abs(ea - eb[np.ix_(inv, inv)]))
        worst = max(worst, drift)
        margin = np.min(np.abs(ea / grid - np.floor(ea / grid) - 0.5)) * grid
        if margin <= drift:
            near_boundary += 1
            continue
        qa, qb = quantize_tensor(ea, grid), quantize_tensor(eb, grid)
        assert sorted(qa.pair_features) == sorted(qb.pair_features)
    assert worst < drift_bound < grid / 2
    assert near_boundary <= 2


def _perm_between(a, b):
    # b.v[i] = R a.v[perm[i]]; recover perm from speeds (distinct with probability one)
    sa, sb = np.linalg.norm(a.v, axis=1), np.linalg.norm(b.v, axis=1)
    return [int(np.argmin(np.abs(sa - s))) for s in sb]
