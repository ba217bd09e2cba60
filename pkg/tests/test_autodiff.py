import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sortlet_vmc import ad
from sortlet_vmc.ad import Dual, GradientTape
from sortlet_vmc.ad.fd import grad_central, hessian_diag_central

W = np.array([[0.3, -0.7], [0.9, 0.2], [-0.4, 0.6]])


def seed_flat(x):
    n = len(x)
    return Dual(x, np.eye(n), np.zeros((n, n)))


def smooth(x):
    """Composite touching most smooth ops; x is a 6-vector in any engine."""
    a = ad.reshape(x, (2, 3))
    b = ad.tanh(a)
    c = ad.einsum("ij,jk->ik", b + 0.1, W)
    gram = ad.einsum("ij,kj->ik", b, b)
    d = ad.exp(c * 0.3) / (ad.square(c) + 1.5)
    e = d + 1.0 / (gram + 3.0)
    s = ad.symsum(ad.reshape(e, (4,)), axis=0)
    q = ad.sqrt(ad.square(x[0]) + 1.0) + ad.log1p(ad.square(s)) + x[2] ** 3 * 0.01
    parts = ad.stack([q, s * 0.5, ad.softplus(x[1])], axis=0)
    return ad.sum(ad.log(ad.absolute(parts) + 2.0), axis=0)


def smooth_np(z):
    return float(ad.detach(smooth(np.asarray(z, dtype=np.float64))))


vectors = hnp.arrays(np.float64, (6,), elements=st.floats(-2.0, 2.0, width=32))


@settings(max_examples=150, deadline=None)
@given(vectors)
def test_forward_gradient_matches_fd(x):
    d = smooth(seed_flat(x))
    fd = grad_central(smooth_np, x, h=1e-5)
    np.testing.assert_allclose(d.tan, fd, rtol=2e-5, atol=2e-6)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_forward_curvature_matches_fd(x):
    d = smooth(seed_flat(x))
    fd = hessian_diag_central(smooth_np, x, h=1e-4)
    np.testing.assert_allclose(d.curv, fd, rtol=1e-3, atol=1e-4)


@settings(max_examples=150, deadline=None)
@given(vectors)
def test_reverse_gradient_matches_fd(x):
    tape = GradientTape()
    p = tape.leaf(x)
    out = smooth(p)
    g = tape.gradient(out, p)
    fd = grad_central(smooth_np, x, h=1e-5)
    np.testing.assert_allclose(g, fd, rtol=2e-5, atol=2e-6)


def test_forward_and_reverse_agree_closely():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=6)
        d = smooth(seed_flat(x))
        tape = GradientTape()
        p = tape.leaf(x)
        g = tape.gradient(smooth(p), p)
        np.testing.assert_allclose(d.tan, g, rtol=1e-12, atol=1e-14)


def test_kinked_ops_match_fd_away_from_kinks():
    x = np.array([0.7, -1.3, 0.4, 1.9, -0.6, 0.2])
    mask = np.array([True, False, False, True, False, True])

    def f(z):
        w = ad.where(mask, 0.25, ad.square(z))
        m = ad.maximum(w, z * 0.1)
        return ad.sum(ad.minimum(m, 5.0) * np.arange(1.0, 7.0), axis=0)

    d = f(seed_flat(x))
    fd = grad_central(lambda z: float(ad.detach(f(z))), x)
    np.testing.assert_allclose(d.tan, fd, rtol=1e-6, atol=1e-9)
    tape = GradientTape()
    p = tape.leaf(x)
    g = tape.gradient(f(p), p)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_where_severs_poisoned_branches():
    x = np.array([-1.0, 2.0, -3.0])
    mask = x < 0

    def f(z):
        return ad.sum(ad.log(ad.where(mask, 1.0, z)), axis=0)

    d = f(seed_flat(x))
    assert np.isfinite(d.val)
    assert np.all(np.isfinite(d.tan)) and np.all(np.isfinite(d.curv))
    np.testing.assert_allclose(d.tan, [0.0, 0.5, 0.0])

    tape = GradientTape()
    p = tape.leaf(x)
    g = tape.gradient(f(p), p)
    np.testing.assert_allclose(g, [0.0, 0.5, 0.0])


def test_exp_of_huge_negative_underflows_cleanly():
    x = seed_flat(np.array([-1e300, 0.0]))
    e = ad.exp(x)
    assert e.val[0] == 0.0
    assert np.all(e.tan[0] == 0.0) and np.all(e.curv[0] == 0.0)


def test_symsum_is_permutation_invariant_bitwise():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(5, 7))
    perm = rng.permutation(7)
    assert np.array_equal(ad.symsum(x, axis=1), ad.symsum(x[:, perm], axis=1))

    tan = rng.normal(size=(5, 7, 3))
    curv = rng.normal(size=(5, 7, 3))
    a = ad.symsum(Dual(x, tan, curv), axis=1)
    b = ad.symsum(Dual(x[:, perm], tan[:, perm], curv[:, perm]), axis=1)
    assert np.array_equal(a.val, b.val)
    assert np.array_equal(a.tan, b.tan)
    assert np.array_equal(a.curv, b.curv)

    tape = GradientTape()
    p = tape.leaf(x)
    v1 = ad.symsum(p, axis=1)
    v2 = ad.symsum(p[:, perm], axis=1)
    assert np.array_equal(v1.val, v2.val)


def test_plain_sum_is_not_permutation_invariant_here():
    # the motivating counterexample: reassociation moves the rounding
    rng = np.random.default_rng(11)
    found = False
    for _ in range(200):
        x = rng.normal(size=64) * rng.lognormal(0, 4, size=64)
        perm = rng.permutation(64)
        if np.sum(x) != np.sum(x[perm]):
            found = True
            break
    assert found


def test_take_along_reverse_scatter_with_repeats():
    x = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    idx = np.array([[0, 0, 2], [1, 1, 1]])
    w = np.array([[1.0, 10.0, 100.0], [2.0, 20.0, 200.0]])

    def f(z):
        return ad.sum(ad.take_along(z, idx, axis=1) * w, axis=(0, 1))

    tape = GradientTape()
    p = tape.leaf(x)
    g = tape.gradient(f(p), p)
    np.testing.assert_allclose(g, [[11.0, 0.0, 100.0], [0.0, 222.0, 0.0]])

    d = f(seed_flat(x.ravel()).__class__(x, np.eye(6).reshape(2, 3, 6),
                                         np.zeros((2, 3, 6))))
    np.testing.assert_allclose(d.tan, g.ravel())


def test_weighted_seed_equals_weighted_sum_of_gradients():
    rng = np.random.default_rng(7)
    x = rng.normal(size=4)
    w = rng.normal(size=3)

    def batch(p):
        return ad.stack([ad.tanh(p[0] * p[1]), ad.exp(p[2] * 0.1) * p[0],
                         ad.sqrt(ad.square(p[3]) + 1.0)], axis=0)

    tape = GradientTape()
    p = tape.leaf(x)
    out = batch(p)
    g_w = tape.gradient(out, p, seed=w)

    expected = np.zeros(4)
    for i in range(3):
        tape_i = GradientTape()
        pi = tape_i.leaf(x)
        seed = np.zeros(3)
        seed[i] = 1.0
        expected += w[i] * tape_i.gradient(batch(pi), pi, seed=seed)
    np.testing.assert_allclose(g_w, expected, rtol=1e-12, atol=1e-15)


def test_gradient_replay_is_bitwise():
    rng = np.random.default_rng(9)
    x = rng.normal(size=6)
    tape = GradientTape()
    p = tape.leaf(x)
    out = smooth(p)
    g1 = tape.gradient(out, p)
    g2 = tape.gradient(out, p)
    assert np.array_equal(g1, g2)


def test_seed_positions_gradient_and_laplacian():
    rng = np.random.default_rng(2)
    r = rng.normal(size=(4, 3, 3))  # 4 walkers, 3 electrons
    rd = ad.seed_positions(r)
    f = ad.sum(ad.square(rd), axis=(1, 2))  # sum |r_i|^2 per walker
    np.testing.assert_allclose(ad.gradient(f), 2.0 * r.reshape(4, 9))
    np.testing.assert_allclose(ad.laplacian(f), np.full(4, 2.0 * 9))


def test_einsum_rejects_bad_specs():
    x = np.ones((2, 3))
    with pytest.raises(ValueError):
        ad.einsum("ij,jk->ij", seed_flat(np.ones(3)), x)  # k lost
    with pytest.raises(ValueError):
        ad.einsum("iit,tj->ij", x, x)
    with pytest.raises(ValueError):
        ad.einsum("ii,ij->ij", x, x)


def test_mixing_engines_raises():
    tape = GradientTape()
    p = tape.leaf(np.ones(3))
    d = seed_flat(np.ones(3))
    with pytest.raises(TypeError):
        ad.einsum("i,i->i", d, p)
    with pytest.raises(TypeError):
        d * p


def test_amax_and_detach():
    d = seed_flat(np.array([1.0, 5.0, 2.0]))
    m = ad.amax(d, axis=0)
    assert isinstance(m, np.ndarray) or np.isscalar(m)
    assert float(m) == 5.0
    assert np.array_equal(ad.detach(d), d.val)
