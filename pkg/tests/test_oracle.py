import json

import numpy as np
import pytest

from dssl.errors import ConfigError, UsageError
from dssl.oracle import (
    DiscreteJoint,
    Encoder,
    ceb_optimize,
    conditional_of_block_encoder,
    deterministic_forward_joint,
    hull_gap,
    ib_curve,
    info_coords,
    joint_info_terms,
    mni_check,
    mutual_info,
    or_gate_joint,
    random_full_support_joint,
    upper_hull,
    verify_prop4,
)


def enumerate_mi(p):
    """Loop-by-loop mutual information, independent of the vectorized one."""
    total = 0.0
    px, py = p.sum(axis=1), p.sum(axis=0)
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                total += p[i, j] * np.log(p[i, j] / (px[i] * py[j]))
    return total


class TestJoint:
    def test_zero_rows_and_columns_dropped(self):
        j = DiscreteJoint(np.array([[0.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.5]]))
        assert j.shape == (2, 2)
        assert j.row_ids.tolist() == [0, 2]

    @pytest.mark.parametrize("p", [[[0.5, 0.6]], [[-0.1, 1.1]], [[np.nan, 1.0]]])
    def test_invalid(self, p):
        with pytest.raises(ConfigError):
            DiscreteJoint(np.array(p))

    def test_encoder_rows_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            Encoder(np.array([[0.5, 0.4]]))


class TestMutualInfo:
    def test_independent(self):
        assert mutual_info(np.full((2, 2), 0.25)) == 0.0

    def test_identity(self):
        assert abs(mutual_info(np.eye(2) / 2) - np.log(2)) < 1e-15

    def test_or_gate(self):
        p = or_gate_joint().p
        assert np.allclose(p, [[1 / 8, 1 / 8], [1 / 8, 5 / 8]])
        assert abs(mutual_info(p) - enumerate_mi(p)) < 1e-15
        assert abs(mutual_info(p) - 0.0511) < 1e-4

    def test_matches_enumeration(self):
        p = random_full_support_joint((5, 3), seed=9).p
        assert abs(mutual_info(p) - enumerate_mi(p)) < 1e-14


class TestInfoCoords:
    def test_invariants_for_random_encoders(self):
        joint = random_full_support_joint((4, 4), seed=1)
        rng = np.random.default_rng(0)
        for _ in range(20):
            c = info_coords(joint, Encoder(rng.dirichlet(np.ones(3), size=4)))
            assert -1e-12 <= c.i_zx2 <= min(c.i_zx1, c.i_x1x2) + 1e-9
            assert abs(c.i_zx1_given_x2 - (c.i_zx1 - c.i_zx2)) < 1e-9
            assert c.delta_c >= -1e-9

    def test_relabeling_z(self):
        joint = random_full_support_joint((3, 4), seed=4)
        q = np.random.default_rng(1).dirichlet(np.ones(4), size=3)
        a = info_coords(joint, Encoder(q)).as_dict()
        b = info_coords(joint, Encoder(q[:, [2, 0, 3, 1]])).as_dict()
        for k in a:
            if a[k] is not None:
                assert abs(a[k] - b[k]) < 1e-12

    def test_row_mismatch(self):
        with pytest.raises(UsageError):
            info_coords(or_gate_joint(), Encoder(np.ones((3, 1))))


class TestCeb:
    @pytest.mark.parametrize("beta", [0.5, 1.0, 5.0])
    def test_reaches_mni_on_deterministic_joint(self, beta):
        joint = deterministic_forward_joint()
        res = ceb_optimize(joint, beta, restarts=20)
        c = res.coords
        assert abs(c.i_zx1 - c.i_x1x2) < 1e-3
        assert abs(c.i_zx2 - c.i_x1x2) < 1e-3
        assert res.monotone

    def test_large_beta_collapses(self):
        res = ceb_optimize(random_full_support_joint(), 1e3, restarts=5)
        assert res.coords.i_zx1 < 1e-2

    def test_z_size_one_is_constant(self):
        c = ceb_optimize(random_full_support_joint(), 1.0, z_size=1, restarts=2).coords
        assert abs(c.i_zx1) < 1e-12 and abs(c.i_zx2) < 1e-12

    def test_markov_identity_on_result(self):
        c = ceb_optimize(random_full_support_joint(), 0.3, restarts=5).coords
        assert abs(c.i_zx1_given_x2 - (c.i_zx1 - c.i_zx2)) < 1e-9

    def test_unpacks_as_pair(self):
        enc, coords = ceb_optimize(or_gate_joint(), 1.0, restarts=2)
        assert enc.q.shape[0] == 2 and coords.beta == 1.0

    def test_beta_must_be_positive(self):
        with pytest.raises(ConfigError):
            ceb_optimize(or_gate_joint(), 0.0)


@pytest.fixture(scope="module")
def curve():
    return ib_curve(random_full_support_joint(), np.logspace(-2, 1, 6), restarts=10)


class TestIbCurve:
    def test_data_processing_bounds(self, curve):
        for c in curve.points:
            assert c.i_zx2 <= c.i_zx1 + 1e-9 and c.i_zx2 <= c.i_x1x2 + 1e-9

    def test_monotone_in_beta(self, curve):
        x1 = [c.i_zx1 for c in curve.points]
        x2 = [c.i_zx2 for c in curve.points]
        assert all(b <= a + 1e-6 for a, b in zip(x1, x1[1:]))
        assert all(b <= a + 1e-6 for a, b in zip(x2, x2[1:]))

    def test_hull_is_concave(self, curve):
        s = curve.hull_slopes
        assert all(b <= a + 1e-6 for a, b in zip(s, s[1:]))

    def test_sorted_points(self, curve):
        xs = [c.i_zx1 for c in curve.sorted_points]
        assert xs == sorted(xs)

    def test_grid_must_ascend(self):
        with pytest.raises(UsageError):
            ib_curve(or_gate_joint(), [1.0, 0.5])

    def test_hull_helpers(self):
        hull = upper_hull([(0, 0), (1, 1), (2, 1.2), (1, 0.5)])
        assert hull == [(0.0, 0.0), (1.0, 1.0), (2.0, 1.2)]
        assert abs(hull_gap((1.0, 0.5), hull) - 0.5) < 1e-15


def two_block_joint():
    a = np.outer([1.0, 2.0], [3.0, 1.0])
    b = np.outer([1.0, 1.0], [1.0, 4.0])
    p = np.zeros((4, 4))
    p[:2, :2] = a
    p[2:, 2:] = b
    return DiscreteJoint.normalized(p)


class TestMni:
    def test_identity_forward(self):
        assert mni_check(DiscreteJoint(np.eye(2) / 2)).tag == "AttainableDeterministicForward"

    def test_backward(self):
        p = np.array([[0.2, 0.3, 0.0], [0.0, 0.0, 0.5]])
        assert mni_check(DiscreteJoint(p)).tag == "AttainableDeterministicBackward"

    def test_or_gate_unattainable(self):
        v = mni_check(or_gate_joint())
        assert v.tag == "UnattainableFullSupport" and v.attainable is False
        assert json.loads(v.to_json())["tag"] == v.tag

    def test_two_block_independence_reaches_mni(self):
        joint = two_block_joint()
        assert mni_check(joint).tag == "AttainableSubdomainIndependence"
        c = info_coords(joint, conditional_of_block_encoder(joint))
        assert abs(c.i_zx1 - c.i_x1x2) < 1e-12 and abs(c.i_zx2 - c.i_x1x2) < 1e-12

    def test_unknown(self):
        p = np.array([[0.2, 0.1, 0.0], [0.1, 0.2, 0.1], [0.0, 0.1, 0.2]])
        assert mni_check(DiscreteJoint.normalized(p)).tag == "Unknown"

    def test_permutation_stable(self):
        rng = np.random.default_rng(0)
        for joint in (two_block_joint(), or_gate_joint(), deterministic_forward_joint()):
            p = joint.p
            perm = p[rng.permutation(p.shape[0])][:, rng.permutation(p.shape[1])]
            assert mni_check(DiscreteJoint(perm)).tag == mni_check(joint).tag


class TestProp4:
    def test_full_support_bounds(self):
        rep = verify_prop4(random_full_support_joint((3, 3), seed=5), 1.0, n_encoders=30,
                           restarts=5)
        assert rep.holds()
        assert abs(rep.constant_gap - rep.delta_c) < 1e-9

    def test_deterministic_gap_vanishes(self):
        rep = verify_prop4(deterministic_forward_joint(6, 3), 1.0, n_encoders=20, restarts=5)
        assert max(abs(g) for g in rep.gaps) < 1e-6

    def test_joint_terms_constant_encoder(self):
        joint = or_gate_joint()
        lhs, rhs = joint_info_terms(joint, np.ones((2, 1)), np.eye(2))
        assert abs(lhs - mutual_info(joint)) < 1e-15 and abs(rhs - mutual_info(joint)) < 1e-15

    def test_alphabet_limit(self):
        with pytest.raises(UsageError):
            verify_prop4(deterministic_forward_joint(8, 4), 1.0)
