import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dssl.errors import ConfigError, UsageError
from dssl.losses import (
    LossConfig,
    alignment,
    info_nce,
    orthogonal_loss,
    sample_vmf,
    shared_codes,
    step1_loss,
    step2_loss,
    step2_terms,
)
from dssl.numerics import Mlp, backward, finite_diff_check
from dssl.numerics import autodiff as ad
from dssl.rng import stream


def unit_rows(rng, b, d):
    z = rng.normal(size=(b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def val(node):
    return float(node.value[0, 0])


def nce_oracle(za, zb, tau):
    """Straight-line symmetric InfoNCE with explicit loops."""
    b = za.shape[0]
    total = 0.0
    for i in range(b):
        row = [za[i] @ zb[k] / tau for k in range(b)]
        col = [za[k] @ zb[i] / tau for k in range(b)]
        total += np.log(np.sum(np.exp(row))) - row[i]
        total += np.log(np.sum(np.exp(col))) - col[i]
    return total / (2 * b)


class TestInfoNce:
    def test_single_row_is_zero(self):
        z = np.array([[0.6, 0.8]])
        assert val(info_nce(z, z, 0.5)) == 0.0

    @pytest.mark.parametrize("b", [2, 5, 64])
    def test_collapse_gives_log_b(self, b):
        z = np.tile([[0.6, 0.8]], (b, 1))
        assert abs(val(info_nce(z, z, 0.3)) - np.log(b)) < 1e-12

    def test_hand_case(self):
        z = np.eye(2)
        assert abs(val(info_nce(z, z, 1.0)) - np.log1p(np.exp(-1.0))) < 1e-12
        assert abs(val(info_nce(z, z, 1.0)) - 0.31326) < 1e-5

    def test_matches_loop_oracle(self):
        rng = stream(0, "t")
        za, zb = unit_rows(rng, 6, 4), unit_rows(rng, 6, 4)
        assert abs(val(info_nce(za, zb, 0.7)) - nce_oracle(za, zb, 0.7)) < 1e-12

    def test_empty_batch(self):
        with pytest.raises(UsageError):
            info_nce(np.zeros((0, 3)), np.zeros((0, 3)), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), b=st.integers(1, 12))
    def test_non_negative_and_permutation_invariant(self, seed, b):
        rng = np.random.default_rng(seed)
        za, zb = unit_rows(rng, b, 3), unit_rows(rng, b, 3)
        v = val(info_nce(za, zb, 0.5))
        assert v >= -1e-12
        perm = rng.permutation(b)
        assert abs(val(info_nce(za[perm], zb[perm], 0.5)) - v) < 1e-12


class TestAlignment:
    def test_identities(self):
        rng = stream(1, "t")
        mu = unit_rows(rng, 5, 3)
        assert abs(val(alignment(mu, mu)) - 1.0) < 1e-12
        assert abs(val(alignment(mu, -mu)) + 1.0) < 1e-12
        assert val(alignment(np.eye(2), np.eye(2)[::-1])) == 0.0

    def test_rotation_invariance(self):
        rng = stream(2, "t")
        m1, m2 = unit_rows(rng, 7, 4), unit_rows(rng, 7, 4)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        assert abs(val(alignment(m1 @ q, m2 @ q)) - val(alignment(m1, m2))) < 1e-12


class TestOrthogonal:
    def test_identical_single_columns(self):
        z = np.array([[1.0], [2.0], [-0.5]])
        assert abs(val(orthogonal_loss(z, z)) - 1.0) < 1e-12

    def test_orthogonal_columns(self):
        zs = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        zc = np.array([[0.0], [1.0], [-1.0]])
        assert val(orthogonal_loss(zs, zc)) == 0.0

    def test_batch_of_one(self):
        with pytest.raises(UsageError):
            orthogonal_loss(np.ones((1, 2)), np.ones((1, 2)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_bounded_and_scale_invariant(self, seed):
        rng = np.random.default_rng(seed)
        zs, zc = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
        v = val(orthogonal_loss(zs, zc))
        assert 0.0 <= v <= np.sqrt(12) + 1e-12
        scales = rng.uniform(0.1, 10.0, size=(1, 3))
        assert abs(val(orthogonal_loss(zs * scales, zc)) - v) < 1e-10


def encoders(seed, d_in=(5, 4), d_out=3, hidden=6):
    rng = stream(seed, "enc")
    return (Mlp([d_in[0], hidden, d_out], rng, "a"), Mlp([d_in[1], hidden, d_out], rng, "b"))


class TestStep1Loss:
    def test_beta_zero_is_plain_info_nce(self):
        e1, e2 = encoders(0)
        rng = stream(0, "x")
        x1, x2 = rng.normal(size=(8, 5)), rng.normal(size=(8, 4))
        got = val(step1_loss(x1, x2, e1, e2, LossConfig(tau=0.5)))
        want = val(info_nce(shared_codes(e1, x1), shared_codes(e2, x2), 0.5))
        assert got == want

    def test_collapsed_encoders(self):
        e1 = Mlp.from_arrays([np.zeros((5, 3))], [np.array([1.0, 2.0, 2.0])])
        e2 = Mlp.from_arrays([np.zeros((4, 3))], [np.array([1.0, 2.0, 2.0])])
        rng = stream(1, "x")
        v = val(step1_loss(rng.normal(size=(8, 5)), rng.normal(size=(8, 4)), e1, e2,
                           LossConfig(beta=0.7)))
        assert abs(v - (np.log(8) - 0.7)) < 1e-12

    def test_compositional_oracle(self):
        e1, e2 = encoders(3)
        rng = stream(3, "x")
        x1, x2 = rng.normal(size=(8, 5)), rng.normal(size=(8, 4))
        z1 = ad.l2_normalize_rows(e1.forward(x1)).value
        z2 = ad.l2_normalize_rows(e2.forward(x2)).value
        want = nce_oracle(z1, z2, 0.5) - np.mean(np.sum(z1 * z2, axis=1))
        got = val(step1_loss(x1, x2, e1, e2, LossConfig(tau=0.5, beta=1.0)))
        assert abs(got - want) < 1e-12

    def test_vmf_needs_rng(self):
        e1, e2 = encoders(0)
        with pytest.raises(UsageError):
            step1_loss(np.ones((2, 5)), np.ones((2, 4)), e1, e2, LossConfig(vmf_sampling=True))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            LossConfig(tau=0.0)


class TestVmf:
    def test_unit_norm_and_concentration(self):
        rng = stream(0, "vmf")
        mu = ad.constant(np.tile(np.eye(4)[:1], (2000, 1)))
        loose = sample_vmf(mu, 1.0, rng).value
        tight = sample_vmf(mu, 500.0, rng).value
        assert np.allclose(np.linalg.norm(tight, axis=1), 1.0, atol=1e-9)
        assert tight[:, 0].mean() > 0.99 > loose[:, 0].mean()

    def test_gradient_flows_to_mu(self):
        w = ad.parameter(stream(1, "w").normal(size=(3, 3)))
        z = sample_vmf(ad.l2_normalize_rows(w), 10.0, stream(1, "vmf"))
        (g,) = backward(ad.sum_(z), [w])
        assert np.abs(g).sum() > 0


def step2_setup(seed, b):
    rng = stream(seed, "s2")
    enc_c = encoders(seed, d_out=3)
    enc_s = (Mlp([8, 6, 2], rng, "s1"), Mlp([7, 6, 2], rng, "s2"))
    va = (rng.normal(size=(b, 5)), rng.normal(size=(b, 4)))
    vb = (va[0] + 0.1 * rng.normal(size=(b, 5)), va[1] + 0.1 * rng.normal(size=(b, 4)))
    return enc_c, enc_s, va, vb


class TestStep2Loss:
    def test_single_row_identical_views(self):
        enc_c, enc_s, va, _ = step2_setup(0, 1)
        assert val(step2_loss(va, va, enc_c, enc_s, LossConfig(lam=0.0))) == 0.0

    def test_shared_encoders_get_no_gradient(self):
        enc_c, enc_s, va, vb = step2_setup(1, 8)
        shared = enc_c[0].parameters() + enc_c[1].parameters()
        grads = backward(step2_loss(va, vb, enc_c, enc_s, LossConfig(lam=1.0)), shared)
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)

    def test_large_lambda_orthogonality_dominates(self):
        enc_c, enc_s, va, vb = step2_setup(2, 8)
        lam = 1e3
        params = enc_s[0].parameters() + enc_s[1].parameters()
        zs, zc = [], []
        for x in (va, vb):
            c = [ad.detach(shared_codes(enc_c[i], x[i])) for i in (0, 1)]
            zs.append([enc_s[i].forward(ad.hstack([ad.constant(x[i]), c[i]])) for i in (0, 1)])
            zc.append(c)
        nce, orth = step2_terms(zs, zc, 0.5)
        g_nce = np.sqrt(sum(np.sum(g ** 2) for g in backward(nce, params)))
        g_orth = lam * np.sqrt(sum(np.sum(g ** 2) for g in backward(orth, params)))
        assert g_orth > 10 * g_nce

    @pytest.mark.parametrize("b", [2, 8])
    def test_finite_differences(self, b):
        enc_c, enc_s, va, vb = step2_setup(3, b)
        params = enc_s[0].parameters() + enc_s[1].parameters()
        err = finite_diff_check(lambda: step2_loss(va, vb, enc_c, enc_s, LossConfig(lam=0.3)),
                                params)
        assert err < 1e-4
