import copy
import dataclasses

import numpy as np
import pytest

import oracles
from welwl import ppgn
from welwl.geometry import (EuclideanMotion, PermutationMap, PosVel, apply_motion,
                            random_motion, random_permutation)
from welwl.harness.generators import gen_cycle_pair, gen_random_posvel
from welwl.tensor_core import ActivationKind, DenseLayer, ShapeError
from welwl.welnet import (
    MLP,
    PoolingParams,
    WeLConvParams,
    WeLNetParams,
    equivariant_pool,
    finite_diff_check,
    init_mlp,
    init_pooling,
    init_welnet,
    ppgn_pair_features,
    welconv,
    welnet_forward,
)

ACT = ActivationKind("scaled_softplus")


def zero_net(d_in, d_out=1):
    # scaled_softplus(0) = 0, so zero weights and bias give an identically-zero head
    return MLP((DenseLayer(np.zeros((d_out, d_in)), np.zeros(d_out), ACT),))


def random_conv(rng, hidden=3, edge=1, cw=4, msg=5, shallow=False):
    e = init_mlp(rng, 2 * hidden + edge + cw, msg, ACT, 6, shallow)
    heads = [init_mlp(rng, msg, 1, ACT, 6, shallow) for _ in range(6)]
    h = init_mlp(rng, hidden + msg, hidden, ACT, 6, shallow)
    return WeLConvParams(e, *heads, h)


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b))


# -- pooling ---------------------------------------------------------------------------

def test_pool_single_point_zero_velocity():
    p = init_pooling(0, 3)
    xv = PosVel([[0.5, -1.0, 2.0]], [[0.0, 0.0, 0.0]])
    out = equivariant_pool(xv, np.ones((1, 1, 3)), p)
    assert np.array_equal(out.x, xv.x) and np.array_equal(out.v, np.zeros((1, 3)))


def test_pool_zero_heads(rng):
    p = PoolingParams(tuple(zero_net(4) for _ in range(6)))
    xv = gen_random_posvel(rng, 5)
    out = equivariant_pool(xv, rng.standard_normal((5, 5, 4)), p)
    assert np.array_equal(out.x, xv.x)
    assert np.array_equal(out.v, np.zeros((5, 3)))


def test_pool_matches_scalar_loop_oracle(rng):
    for trial in range(20):
        n = int(rng.integers(1, 6))
        p = init_pooling(rng, 4, hidden=5, shallow=bool(trial % 2))
        xv = gen_random_posvel(rng, n)
        c = rng.standard_normal((n, n, 4))
        out = equivariant_pool(xv, c, p)
        xo, vo = oracles.equivariant_pool(xv.x.tolist(), xv.v.tolist(), c.tolist(), p)
        assert rel(out.x, xo) <= 1e-12 and rel(out.v, vo) <= 1e-12


def test_pool_exact_equivariance(rng):
    """Given motion-invariant features, outputs transform like the inputs."""
    p = init_pooling(1, 3)
    inner = ppgn.init_params(2, 6, 3, 2, "tanh", fan_in=True)
    for trial in range(20):
        xv = gen_random_posvel(rng, 5)
        m, tau = random_motion(rng), random_permutation(rng, 5)
        out = equivariant_pool(xv, ppgn_pair_features(xv, inner), p)
        moved = apply_motion(m, tau, xv)
        out_g = equivariant_pool(moved, ppgn_pair_features(moved, inner), p)
        expect = apply_motion(m, tau, out)
        assert np.max(np.abs(out_g.x - expect.x)) <= 1e-10
        assert np.max(np.abs(out_g.v - expect.v)) <= 1e-10
        shifted = apply_motion(EuclideanMotion(np.eye(3), m.t), PermutationMap.identity(5), xv)
        out_t = equivariant_pool(shifted, ppgn_pair_features(shifted, inner), p)
        assert np.max(np.abs(out_t.v - out.v)) <= 1e-10


def test_pool_shape_errors(rng):
    p = init_pooling(0, 3)
    xv = gen_random_posvel(rng, 4)
    with pytest.raises(ShapeError):
        equivariant_pool(xv, np.zeros((3, 3, 3)), p)
    with pytest.raises(ShapeError):
        equivariant_pool(xv, np.zeros((4, 4, 2)), p)
    with pytest.raises(ValueError):
        PoolingParams(tuple(zero_net(3) for _ in range(5)))


# -- WeLConv ---------------------------------------------------------------------------

def test_welconv_matches_scalar_loop_oracle(rng):
    for trial in range(20):
        n = int(rng.integers(1, 5))
        p = random_conv(rng, shallow=bool(trial % 2))
        xv = gen_random_posvel(rng, n)
        h = rng.standard_normal((n, 3))
        E = rng.standard_normal((n, n, 1))
        c = rng.standard_normal((n, n, 4))
        ho, out = welconv(h, E, c, xv, p)
        rh, rx, rv = oracles.welconv(h.tolist(), E.tolist(), c.tolist(), xv.x.tolist(), xv.v.tolist(), p)
        assert rel(ho, rh) <= 1e-12 and rel(out.x, rx) <= 1e-12 and rel(out.v, rv) <= 1e-12


def test_welconv_permutation_conjugation(rng):
    n = 5
    p = random_conv(rng)
    xv = gen_random_posvel(rng, n)
    h, E, c = rng.standard_normal((n, 3)), rng.standard_normal((n, n, 1)), rng.standard_normal((n, n, 4))
    tau = random_permutation(rng, n)
    P = tau.perm
    ho, out = welconv(h, E, c, xv, p)
    ho2, out2 = welconv(h[P], E[np.ix_(P, P)], c[np.ix_(P, P)],
                        apply_motion(EuclideanMotion.identity(), tau, xv), p)
    assert np.max(np.abs(ho2 - ho[P])) <= 1e-12
    assert np.max(np.abs(out2.x - out.x[P])) <= 1e-12 and np.max(np.abs(out2.v - out.v[P])) <= 1e-12


def test_welconv_zero_coefficients(rng):
    base = random_conv(rng)
    p = dataclasses.replace(base, **{k: zero_net(5) for k in
                                     ("phi_x", "phi_v", "phi_n", "hat_phi_x", "hat_phi_v", "hat_phi_n")})
    n = 4
    xv = gen_random_posvel(rng, n)
    h, E, c = rng.standard_normal((n, 3)), rng.standard_normal((n, n, 1)), rng.standard_normal((n, n, 4))
    ho, out = welconv(h, E, c, xv, p)
    assert np.array_equal(out.x, xv.x) and np.array_equal(out.v, np.zeros((n, 3)))
    hi = np.broadcast_to(h[:, None], (n, n, 3))
    hj = np.broadcast_to(h[None], (n, n, 3))
    m = p.phi_e(np.concatenate([hi, hj, E, c], -1)).sum(1)
    assert np.allclose(ho, p.phi_h(np.concatenate([h, m], -1)), rtol=1e-15, atol=0)


def test_welconv_width_checks(rng):
    p = random_conv(rng)
    xv = gen_random_posvel(rng, 3)
    with pytest.raises(ShapeError):
        welconv(np.zeros((3, 2)), np.zeros((3, 3, 1)), np.zeros((3, 3, 4)), xv, p)
    with pytest.raises(ShapeError):
        welconv(np.zeros((3, 3)), np.zeros((3, 3, 2)), np.zeros((3, 3, 4)), xv, p)
    with pytest.raises(ShapeError):
        dataclasses.replace(p, phi_x=zero_net(4))


# -- full stack -----------------------------------------------------------------------

def test_zero_layers_is_identity(rng):
    net = init_welnet(0, L=0, hidden=8, wl_width=4)
    xv = gen_random_posvel(rng, 4)
    out, h = welnet_forward(xv, np.ones((4, 1)), np.ones((4, 4)), net)
    assert np.array_equal(out.x, xv.x) and np.array_equal(out.v, xv.v)
    assert h.shape == (4, 8)


def test_default_shapes_instantiate():
    net = init_welnet(0)
    assert net.L == 4 and net.shared_ppgn.T == 2
    assert net.node_embed.d_out == 128 and net.shared_ppgn.feature_width == 32
    xv = gen_random_posvel(1, 5)
    q = np.array([1.0, -1, 1, -1, 1])
    out, h = welnet_forward(xv, q[:, None], np.outer(q, q), net)
    assert np.all(np.isfinite(out.x)) and np.all(np.isfinite(out.v)) and h.shape == (5, 128)


@pytest.mark.parametrize("recompute", [True, False])
def test_end_to_end_equivariance(recompute, rng):
    net = dataclasses.replace(init_welnet(3, hidden=16, wl_width=8, shallow=not recompute),
                              recompute_wl=recompute)
    worst = 0.0
    for trial in range(50):
        n = 6
        xv = gen_random_posvel(rng, n)
        q = rng.choice([-1.0, 1.0], n)
        m, tau = random_motion(rng), random_permutation(rng, n)
        out, _ = welnet_forward(xv, q[:, None], np.outer(q, q), net)
        qp = q[tau.perm]
        out_g, _ = welnet_forward(apply_motion(m, tau, xv), qp[:, None], np.outer(qp, qp), net)
        expect = apply_motion(m, tau, out)
        worst = max(worst, rel(out_g.x, expect.x), rel(out_g.v, expect.v))
    assert worst <= 1e-8


def test_recompute_flag_changes_output(rng):
    net = init_welnet(4, hidden=8, wl_width=4)
    xv = gen_random_posvel(rng, 4)
    a, _ = welnet_forward(xv, np.ones((4, 1)), np.ones((4, 4)), net)
    b, _ = welnet_forward(xv, np.ones((4, 1)), np.ones((4, 4)), dataclasses.replace(net, recompute_wl=False))
    assert not np.array_equal(a.x, b.x)


def test_position_identity_is_bit_exact_with_zero_heads(rng):
    net = init_welnet(5, hidden=8, wl_width=4, L=2)
    convs = tuple(dataclasses.replace(c, **{k: zero_net(c.message_width) for k in
                                            ("phi_x", "phi_v", "phi_n")}) for c in net.conv_layers)
    net = dataclasses.replace(net, conv_layers=convs)
    xv = gen_random_posvel(rng, 5)
    out, _ = welnet_forward(xv, np.ones((5, 1)), np.ones((5, 5)), net)
    assert np.array_equal(out.x, xv.x)


def test_shared_ppgn_value_semantics(rng):
    net = init_welnet(6, hidden=8, wl_width=4, L=2)
    xv = gen_random_posvel(rng, 4)
    before, _ = welnet_forward(xv, np.ones((4, 1)), np.ones((4, 4)), net)
    other = dataclasses.replace(net, shared_ppgn=net.shared_ppgn.with_flat(np.zeros(net.shared_ppgn.n_params)))
    clone = copy.deepcopy(net)
    clone.shared_ppgn.layers[0].phi1.weight[...] = 0.0
    after, _ = welnet_forward(xv, np.ones((4, 1)), np.ones((4, 4)), net)
    changed, _ = welnet_forward(xv, np.ones((4, 1)), np.ones((4, 4)), clone)
    assert np.array_equal(before.x, after.x)
    assert not np.array_equal(changed.x, before.x)
    assert other.shared_ppgn is not net.shared_ppgn
    # every convolution reads the one shared parameter set
    assert all(c.phi_e.d_in == 2 * 8 + 1 + net.shared_ppgn.feature_width for c in net.conv_layers)
    with pytest.raises(ValueError):
        net.shared_ppgn.layers[0].phi1.weight[0, 0] = 1.0


def test_welnet_json_round_trip(rng):
    net = init_welnet(7, hidden=8, wl_width=4, L=2, recompute_wl=False)
    back = WeLNetParams.from_json(net.to_json())
    assert back.recompute_wl is False and back.config == net.config
    xv = gen_random_posvel(rng, 3)
    a, ha = welnet_forward(xv, np.ones((3, 1)), np.ones((3, 3)), net)
    b, hb = welnet_forward(xv, np.ones((3, 1)), np.ones((3, 3)), back)
    assert np.array_equal(a.x, b.x) and np.array_equal(ha, hb)


def test_forward_input_checks(rng):
    net = init_welnet(0, hidden=8, wl_width=4, L=1)
    xv = gen_random_posvel(rng, 4)
    with pytest.raises(ShapeError):
        welnet_forward(xv, np.ones((4, 1)), np.ones((3, 3)), net)


# -- finite differences --------------------------------------------------------------------

def test_finite_diff_quadratic_ratio_four():
    r = finite_diff_check(lambda p: p[0] ** 2, [1.0], [0], h=1e-2)
    assert r.ratio[0] == pytest.approx(4.0, abs=1e-6)
    assert r.slope_h[0] == pytest.approx(2.0, abs=1e-10)


def test_finite_diff_detects_kink():
    r = finite_diff_check(lambda p: abs(p[0]), [0.0], [0], h=1e-3)
    assert abs(r.ratio[0] - 4.0) > 1.0


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: p[0], [0.0], [0], h=0.0)


def test_separation_gap_is_smooth_in_a_weight():
    ga, gb = gen_cycle_pair(3)
    params = ppgn.init_params(1, 2, 1, 2, "softplus")
    theta = params.flat()
    fn = lambda th: ppgn.separation_gap(ga.tensor, gb.tensor, params.with_flat(th))
    r = finite_diff_check(fn, theta, [0], h=1e-2)
    assert 3.5 <= r.ratio[0] <= 4.5


def test_finite_diff_flat_function_is_nan():
    r = finite_diff_check(lambda p: 1.0, [0.0], [0], h=1e-3)
    assert np.isnan(r.ratio[0])
