import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scanalign.geometry import (
    DegenerateQuaternionError,
    RelativeTransform,
    quaternion_from_matrix,
    rotation_jacobian_wrt_quaternion,
    rotation_matrix_from_quaternion,
    rotated_dot_gradient_wrt_quaternion,
)


def finite_difference_rotation_jacobian(q, p, h=1e-6):
    """Central-difference d(R(q/|q|) p)/dq, the independent oracle."""
    q = np.asarray(q, dtype=float)
    jac = np.zeros((3, 4))
    for j in range(4):
        dq = np.zeros(4)
        dq[j] = h
        plus = rotation_matrix_from_quaternion(q + dq) @ p
        minus = rotation_matrix_from_quaternion(q - dq) @ p
        jac[:, j] = (plus - minus) / (2.0 * h)
    return jac


def random_quaternion(rng):
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-3:
        q = rng.normal(size=4)
    return q


unit_components = st.floats(-1.0, 1.0, allow_nan=False)


class TestNormalize:
    def test_scaled_identity(self):
        t = RelativeTransform(q=np.array([2.0, 0, 0, 0]), t=np.array([1.0, 2.0, 3.0]))
        n = t.normalized()
        np.testing.assert_allclose(n.q, [1, 0, 0, 0])
        np.testing.assert_allclose(n.t, [1, 2, 3])

    def test_zero_quaternion_rejected(self):
        with pytest.raises(DegenerateQuaternionError):
            RelativeTransform(q=np.zeros(4), t=np.zeros(3))

    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
    def test_unit_norm_property(self, qlist):
        q = np.array(qlist)
        if np.linalg.norm(q) < 1e-6:
            return
        t = RelativeTransform(q=q, t=np.zeros(3)).normalized()
        assert abs(np.linalg.norm(t.q) - 1.0) < 1e-12


class TestApply:
    def test_identity(self):
        t = RelativeTransform.identity()
        np.testing.assert_allclose(t.apply(np.array([4.0, 5.0, 6.0])), [4, 5, 6])

    def test_yaw_90(self):
        t = RelativeTransform(q=np.array([np.sqrt(2) / 2, 0, 0, np.sqrt(2) / 2]), t=np.zeros(3))
        np.testing.assert_allclose(t.apply(np.array([1.0, 0, 0])), [0, 1, 0], atol=1e-12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
            p = rng.normal(size=3) * 10
            np.testing.assert_allclose(t.apply(t.inverse().apply(p)), p, atol=1e-9)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        t = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
        pts = rng.normal(size=(5, 3))
        batched = t.apply(pts)
        for i in range(5):
            np.testing.assert_allclose(batched[i], t.apply(pts[i]))

    def test_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        t = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
        a, b = rng.normal(size=3), rng.normal(size=3)
        d_before = np.linalg.norm(a - b)
        d_after = np.linalg.norm(t.apply(a) - t.apply(b))
        assert abs(d_before - d_after) < 1e-9


class TestRotateOnly:
    def test_identity(self):
        t = RelativeTransform.identity()
        np.testing.assert_allclose(t.rotate_only(np.array([0.0, 0, 1])), [0, 0, 1])

    def test_yaw_90(self):
        t = RelativeTransform(
            q=np.array([np.sqrt(2) / 2, 0, 0, np.sqrt(2) / 2]), t=np.array([5.0, 5, 5])
        )
        np.testing.assert_allclose(t.rotate_only(np.array([1.0, 0, 0])), [0, 1, 0], atol=1e-12)

    @given(
        st.lists(st.floats(-5, 5), min_size=4, max_size=4),
        st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    )
    @settings(max_examples=50)
    def test_norm_preserved(self, qlist, nlist):
        q, n = np.array(qlist), np.array(nlist)
        if np.linalg.norm(q) < 1e-6:
            return
        t = RelativeTransform(q=q, t=np.zeros(3)).normalized()
        assert abs(np.linalg.norm(t.rotate_only(n)) - np.linalg.norm(n)) < 1e-12


class TestCompose:
    def test_identity_neutral(self):
        rng = np.random.default_rng(5)
        b = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
        c = RelativeTransform.identity().compose(b)
        np.testing.assert_allclose(c.as_matrix(), b.as_matrix(), atol=1e-12)

    def test_inverse_gives_identity(self):
        rng = np.random.default_rng(6)
        t = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
        np.testing.assert_allclose(t.compose(t.inverse()).as_matrix(), np.eye(4), atol=1e-9)

    def test_translation_additivity(self):
        a = RelativeTransform(q=np.array([1.0, 0, 0, 0]), t=np.array([0.0, 0, 1]))
        b = RelativeTransform(q=np.array([1.0, 0, 0, 0]), t=np.array([0.0, 0, 2]))
        np.testing.assert_allclose(a.compose(b).t, [0, 0, 3])

    def test_associativity(self):
        rng = np.random.default_rng(9)
        ts = [
            RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
            for _ in range(3)
        ]
        left = ts[0].compose(ts[1]).compose(ts[2])
        right = ts[0].compose(ts[1].compose(ts[2]))
        np.testing.assert_allclose(left.as_matrix(), right.as_matrix(), atol=1e-9)

    def test_matches_matrix_product(self):
        rng = np.random.default_rng(10)
        a = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
        b = RelativeTransform(q=random_quaternion(rng), t=rng.normal(size=3)).normalized()
        np.testing.assert_allclose(
            a.compose(b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12
        )


class TestRotationMatrix:
    def test_orthonormal_det_one(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            rot = rotation_matrix_from_quaternion(random_quaternion(rng))
            np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-9)
            assert abs(np.linalg.det(rot) - 1.0) < 1e-9

    def test_matrix_quaternion_round_trip(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            q = random_quaternion(rng)
            q = q / np.linalg.norm(q)
            rot = rotation_matrix_from_quaternion(q)
            q_back = quaternion_from_matrix(rot)
            # q and -q encode the same rotation
            np.testing.assert_allclose(
                rotation_matrix_from_quaternion(q_back), rot, atol=1e-12
            )


class TestRotationJacobian:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        worst = 0.0
        for _ in range(1000):
            q = random_quaternion(rng)
            p = rng.normal(size=3) * 5
            analytic = rotation_jacobian_wrt_quaternion(q, p)
            numeric = finite_difference_rotation_jacobian(q, p)
            scale = max(np.abs(numeric).max(), 1e-6)
            worst = max(worst, np.abs(analytic - numeric).max() / scale)
        assert worst < 1e-4

    def test_w_column_zero_at_identity(self):
        jac = rotation_jacobian_wrt_quaternion(np.array([1.0, 0, 0, 0]), np.array([1.0, 2, 3]))
        np.testing.assert_allclose(jac[:, 0], 0.0, atol=1e-15)

    def test_scale_invariance_along_q(self):
        # Scaling q leaves R(q/|q|) p unchanged, so the directional
        # derivative of the rotated point along q must vanish.
        rng = np.random.default_rng(22)
        q = random_quaternion(rng)
        p = rng.normal(size=3)
        jac = rotation_jacobian_wrt_quaternion(q, p)
        np.testing.assert_allclose(jac @ q, np.zeros(3), atol=1e-12)
        p1 = rotation_matrix_from_quaternion(q) @ p
        p2 = rotation_matrix_from_quaternion(2.0 * q) @ p
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_degenerate_quaternion_raises(self):
        with pytest.raises(DegenerateQuaternionError):
            rotation_jacobian_wrt_quaternion(np.zeros(4), np.array([1.0, 0, 0]))

    def test_contracted_gradient_matches_jacobian_rows(self):
        rng = np.random.default_rng(23)
        q = random_quaternion(rng)
        pts = rng.normal(size=(8, 3))
        cof = rng.normal(size=(8, 3))
        expected = np.zeros(4)
        for p, c in zip(pts, cof):
            expected += c @ rotation_jacobian_wrt_quaternion(q, p)
        got = rotated_dot_gradient_wrt_quaternion(q, pts, cof)
        np.testing.assert_allclose(got, expected, atol=1e-10)
