"""Quaternion + translation rigid transforms and their derivatives.

Quaternions are stored in (w, x, y, z) order throughout the package. A
transform may carry an unnormalized quaternion (as emitted by a predictor);
every rotation application normalizes internally, and analytic gradients are
taken with respect to the raw quaternion, chaining through the normalization
q_bar = q / |q|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_FLOOR = 1e-12


class DegenerateQuaternionError(ValueError):
    """Quaternion norm is too close to zero to define a rotation."""


def _as_vector(x, size: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries: {v}")
    return v


@dataclass(frozen=True)
class RelativeTransform:
    """Rigid transform parameterized as quaternion (w,x,y,z) plus translation.

    The quaternion need not be unit length; ``normalized()`` divides it out.
    A zero quaternion is rejected at construction.
    """

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = _as_vector(self.q, 4, "q")
        t = _as_vector(self.t, 3, "t")
        if np.linalg.norm(q) < QUAT_NORM_FLOOR:
            raise DegenerateQuaternionError(
                f"quaternion norm {np.linalg.norm(q):.3e} below {QUAT_NORM_FLOOR:.0e}"
            )
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RelativeTransform":
        return cls(q=np.array([1.0, 0.0, 0.0, 0.0]), t=np.zeros(3))

    @classmethod
    def from_rotation_matrix(cls, rotation: np.ndarray, translation) -> "RelativeTransform":
        return cls(q=quaternion_from_matrix(rotation), t=np.asarray(translation, dtype=float))

    def normalized(self) -> "RelativeTransform":
        """Return the same transform with a unit quaternion."""
        return RelativeTransform(q=self.q / np.linalg.norm(self.q), t=self.t)

    def rotation_matrix(self) -> np.ndarray:
        return rotation_matrix_from_quaternion(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate and translate one point (3,) or a stack of points (n, 3)."""
        rotation = self.rotation_matrix()
        p = np.asarray(points, dtype=float)
        return p @ rotation.T + self.t

    def rotate_only(self, vectors: np.ndarray) -> np.ndarray:
        """Apply only the rotational part; norms are preserved."""
        rotation = self.rotation_matrix()
        return np.asarray(vectors, dtype=float) @ rotation.T

    def compose(self, other: "RelativeTransform") -> "RelativeTransform":
        """Return self * other under homogeneous-matrix semantics."""
        qa = self.q / np.linalg.norm(self.q)
        qb = other.q / np.linalg.norm(other.q)
        return RelativeTransform(
            q=quaternion_multiply(qa, qb),
            t=self.apply(other.t),
        )

    def inverse(self) -> "RelativeTransform":
        q = self.q / np.linalg.norm(self.q)
        q_conj = np.array([q[0], -q[1], -q[2], -q[3]])
        rotation = rotation_matrix_from_quaternion(q)
        return RelativeTransform(q=q_conj, t=-rotation.T @ self.t)

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.t
        return m

    def as_parameters(self) -> np.ndarray:
        """Flat (7,) parameter vector [qw, qx, qy, qz, tx, ty, tz]."""
        return np.concatenate([self.q, self.t])

    @classmethod
    def from_parameters(cls, params: np.ndarray) -> "RelativeTransform":
        params = np.asarray(params, dtype=float)
        return cls(q=params[:4], t=params[4:7])


def normalize(transform: RelativeTransform) -> RelativeTransform:
    return transform.normalized()


def apply(transform: RelativeTransform, points: np.ndarray) -> np.ndarray:
    return transform.apply(points)


def rotate_only(transform: RelativeTransform, vectors: np.ndarray) -> np.ndarray:
    return transform.rotate_only(vectors)


def compose(a: RelativeTransform, b: RelativeTransform) -> RelativeTransform:
    return a.compose(b)


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w,x,y,z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def rotation_matrix_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of q/|q|, with q in (w,x,y,z) order."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if norm < QUAT_NORM_FLOOR:
        raise DegenerateQuaternionError(f"quaternion norm {norm:.3e} is degenerate")
    w, x, y, z = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_from_matrix(rotation: np.ndarray) -> np.ndarray:
    """Unit (w,x,y,z) quaternion of an orthonormal rotation matrix.

    Shepperd's method: branch on the largest of the four squared components
    for numerical stability. Returned quaternion has w >= 0.
    """
    m = np.asarray(rotation, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {m.shape}")
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    candidates = np.array([trace, m[0, 0], m[1, 1], m[2, 2]])
    case = int(np.argmax(candidates))
    if case == 0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif case == 1:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif case == 2:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def rotation_jacobian_wrt_quaternion(q: np.ndarray, point: np.ndarray) -> np.ndarray:
    """d(R(q/|q|) p)/dq as a 3x4 matrix, q in (w,x,y,z) order.

    The derivative chains the unit-sphere projection d(q/|q|)/dq =
    (I - u u^T)/|q| with the rotation derivative at the unit quaternion u,
    so the column space is tangent to the sphere: the directional derivative
    along q itself is exactly zero.
    """
    q = _as_vector(q, 4, "q")
    p = _as_vector(point, 3, "point")
    norm = np.linalg.norm(q)
    if norm < QUAT_NORM_FLOOR:
        raise DegenerateQuaternionError(f"quaternion norm {norm:.3e} is degenerate")
    u = q / norm
    w, v = u[0], u[1:]

    jac_unit = np.empty((3, 4))
    jac_unit[:, 0] = 2.0 * (w * p + np.cross(v, p))
    # d(R(u) p)/dv = 2 [ (v.p) I + v p^T - p v^T - w [p]_x ]
    jac_unit[:, 1:] = 2.0 * (
        np.dot(v, p) * np.eye(3)
        + np.outer(v, p)
        - np.outer(p, v)
        - w * _skew(p)
    )
    projector = (np.eye(4) - np.outer(u, u)) / norm
    return jac_unit @ projector


def rotated_dot_gradient_wrt_quaternion(
    q: np.ndarray, points: np.ndarray, cofactors: np.ndarray
) -> np.ndarray:
    """Gradient of sum_b c_b . (R(q/|q|) p_b) with respect to raw q.

    Vectorized form of contracting ``rotation_jacobian_wrt_quaternion`` rows
    with per-point cofactors; used by the loss gradient over many pairs.
    """
    q = _as_vector(q, 4, "q")
    norm = np.linalg.norm(q)
    if norm < QUAT_NORM_FLOOR:
        raise DegenerateQuaternionError(f"quaternion norm {norm:.3e} is degenerate")
    u = q / norm
    w, v = u[0], u[1:]
    p = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.atleast_2d(np.asarray(cofactors, dtype=float))

    grad_unit = np.empty(4)
    grad_unit[0] = 2.0 * (w * np.einsum("bi,bi->", c, p) + np.einsum("bi,bi->", c, np.cross(v, p)))
    v_dot_p = p @ v
    c_dot_v = c @ v
    c_dot_p = np.einsum("bi,bi->b", c, p)
    grad_unit[1:] = 2.0 * (
        v_dot_p @ c
        + c_dot_v @ p
        - c_dot_p.sum() * v
        - w * np.cross(c, p).sum(axis=0)
    )
    return (grad_unit - np.dot(grad_unit, u) * u) / norm


def _skew(p: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -p[2], p[1]],
            [p[2], 0.0, -p[0]],
            [-p[1], p[0], 0.0],
        ]
    )
