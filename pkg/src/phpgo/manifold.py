"""SE(3) group operations, exponential/logarithm maps and error Jacobians.

Conventions
-----------
* Quaternions are stored ``(w, x, y, z)`` and kept in the ``w >= 0`` hemisphere.
* A twist is a 6-vector ``[rho, theta]``: translational coordinates first,
  then the axis-angle rotation vector.
* Perturbations are right-multiplicative, ``x <- x * exp(delta)``.

The module has two layers. The array layer (``hat``, ``so3_exp``,
``se3_log``, ``right_jacobian_inv``, ...) works on stacks of shape
``(..., 3)`` / ``(..., 3, 3)`` and is what the optimizer uses. The value layer
(:class:`Pose`, :func:`compose`, :func:`exp`, :func:`log`, ...) wraps single
poses for graph bookkeeping.
"""

from __future__ import annotations

import math
import numpy as np

from .errors import AngleAtPi

# Angles closer than this to pi are rejected by the strict log map.
PI_MARGIN = 1e-6

_TINY = 1e-4
_SMALL = 0.1


# --------------------------------------------------------------------------
# array layer
# --------------------------------------------------------------------------

def hat(v):
    """Skew-symmetric matrix of a stack of 3-vectors."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _series(theta, threshold, direct, coeffs):
    """Evaluate ``direct(theta)`` away from zero, a power series in theta**2 near it."""
    theta = np.asarray(theta, dtype=float)
    small = theta < threshold
    safe = np.where(small, 1.0, theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        far = direct(safe)
    th2 = theta * theta
    near = np.zeros_like(theta)
    for c in reversed(coeffs):
        near = near * th2 + c
    return np.where(small, near, far)


def _sinc(theta):
    return _series(theta, _TINY, lambda t: np.sin(t) / t, (1.0, -1 / 6, 1 / 120))


def _one_minus_cos_over_sq(theta):
    return _series(theta, _TINY, lambda t: 2.0 * np.sin(0.5 * t) ** 2 / (t * t),
                   (0.5, -1 / 24, 1 / 720))


def _t_minus_sin_over_cube(theta):
    return _series(theta, _SMALL, lambda t: (t - np.sin(t)) / t**3,
                   (1 / 6, -1 / 120, 1 / 5040, -1 / 362880))


def _jl_inv_coeff(theta):
    # (1 - (t/2) cot(t/2)) / t^2
    return _series(theta, _SMALL,
                   lambda t: (1.0 - 0.5 * t * np.cos(0.5 * t) / np.sin(0.5 * t)) / (t * t),
                   (1 / 12, 1 / 720, 1 / 30240, 1 / 1209600))


def _q_coeff2(theta):
    return _series(theta, _SMALL, lambda t: (t * t + 2.0 * np.cos(t) - 2.0) / (2.0 * t**4),
                   (1 / 24, -1 / 720, 1 / 40320, -1 / 3628800))


def _q_coeff3(theta):
    return _series(theta, _SMALL,
                   lambda t: (2.0 * t - 3.0 * np.sin(t) + t * np.cos(t)) / (2.0 * t**5),
                   (1 / 120, -1 / 2520, 1 / 120960, -1 / 5702400))


def so3_exp(phi):
    """Rodrigues formula for a stack of rotation vectors."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = hat(phi)
    a = _sinc(theta)[..., None, None]
    b = _one_minus_cos_over_sq(theta)[..., None, None]
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = hat(phi)
    b = _one_minus_cos_over_sq(theta)[..., None, None]
    c = _t_minus_sin_over_cube(theta)[..., None, None]
    return np.eye(3) + b * K + c * (K @ K)


def so3_left_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = hat(phi)
    d = _jl_inv_coeff(theta)[..., None, None]
    return np.eye(3) - 0.5 * K + d * (K @ K)


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_normalize(q):
    """Unit-normalize and move to the ``w >= 0`` hemisphere."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R):
    """Shepperd's method; picks the best-conditioned branch per matrix."""
    R = np.asarray(R, dtype=float)
    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    cand = np.stack([tr, m00, m11, m22], axis=-1)
    branch = np.argmax(cand, axis=-1)

    q = np.empty(R.shape[:-2] + (4,))
    r = np.sqrt(np.maximum(1.0 + 2.0 * np.max(cand, axis=-1) - tr, 0.0))
    s = 0.5 / np.where(r == 0.0, 1.0, r)

    w0 = 0.5 * r
    q0 = np.stack([w0, (R[..., 2, 1] - R[..., 1, 2]) * s,
                   (R[..., 0, 2] - R[..., 2, 0]) * s, (R[..., 1, 0] - R[..., 0, 1]) * s], -1)
    q1 = np.stack([(R[..., 2, 1] - R[..., 1, 2]) * s, w0,
                   (R[..., 0, 1] + R[..., 1, 0]) * s, (R[..., 0, 2] + R[..., 2, 0]) * s], -1)
    q2 = np.stack([(R[..., 0, 2] - R[..., 2, 0]) * s, (R[..., 0, 1] + R[..., 1, 0]) * s,
                   w0, (R[..., 1, 2] + R[..., 2, 1]) * s], -1)
    q3 = np.stack([(R[..., 1, 0] - R[..., 0, 1]) * s, (R[..., 0, 2] + R[..., 2, 0]) * s,
                   (R[..., 1, 2] + R[..., 2, 1]) * s, w0], -1)
    b = branch[..., None]
    q = np.where(b == 0, q0, np.where(b == 1, q1, np.where(b == 2, q2, q3)))
    return quat_normalize(q)


def quat_from_rotvec(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    half = _series(theta, _TINY, lambda t: np.sin(0.5 * t) / t, (0.5, -1 / 48, 1 / 3840))
    q = np.concatenate([np.cos(0.5 * theta)[..., None], half[..., None] * phi], axis=-1)
    return quat_normalize(q)


def quat_angle(q):
    """Rotation angle in [0, pi] of unit quaternions."""
    q = np.asarray(q, dtype=float)
    s = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(s, np.abs(q[..., 0]))


def quat_to_rotvec(q, strict=False):
    q = quat_normalize(q)
    w = q[..., 0]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(s, w)
    if strict and np.any(theta >= math.pi - PI_MARGIN):
        raise AngleAtPi(f"rotation angle {float(np.max(theta)):.9f} is within {PI_MARGIN} of pi")
    # theta / s, with a series in (s/w) where s is tiny
    ratio = s / np.where(w == 0.0, 1.0, w)
    small = (s < _TINY) & (w > 0.5)
    safe_s = np.where(s == 0.0, 1.0, s)
    r2 = ratio * ratio
    factor = np.where(small, (2.0 / np.where(w == 0.0, 1.0, w)) * (1.0 - r2 / 3.0 + r2 * r2 / 5.0),
                      theta / safe_s)
    return factor[..., None] * v


def so3_log(R, strict=False):
    return quat_to_rotvec(matrix_to_quat(R), strict=strict)


def se3_exp(xi):
    """Twist stack ``(..., 6)`` to ``(R, t)`` stacks."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    R = so3_exp(phi)
    t = np.einsum("...ij,...j->...i", so3_left_jacobian(phi), rho)
    return R, t


def se3_log_quat(q, t, strict=False):
    phi = quat_to_rotvec(q, strict=strict)
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(phi), np.asarray(t, float))
    return np.concatenate([rho, phi], axis=-1)


def se3_log(R, t, strict=False):
    return se3_log_quat(matrix_to_quat(R), t, strict=strict)


def _q_left(rho, phi):
    theta = np.linalg.norm(phi, axis=-1)
    P = hat(phi)
    Rh = hat(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    PP = P @ P
    c1 = _t_minus_sin_over_cube(theta)[..., None, None]
    c2 = _q_coeff2(theta)[..., None, None]
    c3 = _q_coeff3(theta)[..., None, None]
    return (0.5 * Rh
            + c1 * (PR + RP + PRP)
            + c2 * (PP @ Rh + RP @ P - 3.0 * PRP)
            + c3 * (PRP @ P + PP @ RP))


def left_jacobian(xi):
    """SE(3) left Jacobian ``[[J, Q], [0, J]]`` of a twist stack."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    J = so3_left_jacobian(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., :3, 3:] = _q_left(rho, phi)
    return out


def right_jacobian_inv(xi):
    """Inverse SE(3) right Jacobian: ``log(exp(xi) exp(d)) ~ xi + Jr^-1(xi) d``."""
    xi = -np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    Ji = so3_left_jacobian_inv(phi)
    Q = _q_left(rho, phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ji
    out[..., 3:, 3:] = Ji
    out[..., :3, 3:] = -Ji @ Q @ Ji
    return out


def adjoint(R, t):
    """Adjoint of ``(R, t)`` acting on ``[rho, theta]`` twists."""
    R = np.asarray(R, dtype=float)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = hat(t) @ R
    return out


def relative_errors(Ri, ti, Rj, tj, Rz, tz, jacobians=False, strict=True):
    """Edge residuals ``log(Z^-1 Xi^-1 Xj)`` for stacks of edges.

    With ``jacobians=True`` also returns the 6x6 blocks with respect to
    right perturbations of ``Xi`` and ``Xj``.
    """
    RiT = np.swapaxes(Ri, -1, -2)
    Rij = RiT @ Rj
    tij = np.einsum("...ij,...j->...i", RiT, tj - ti)
    RzT = np.swapaxes(Rz, -1, -2)
    Re = RzT @ Rij
    te = np.einsum("...ij,...j->...i", RzT, tij - tz)
    e = se3_log(Re, te, strict=strict)
    if not jacobians:
        return e
    Jj = right_jacobian_inv(e)
    # Ad of (Xi^-1 Xj)^-1 = (Rij^T, -Rij^T tij)
    RijT = np.swapaxes(Rij, -1, -2)
    Ad = adjoint(RijT, -np.einsum("...ij,...j->...i", RijT, tij))
    Ji = -Jj @ Ad
    return e, Ji, Jj


# --------------------------------------------------------------------------
# value layer
# --------------------------------------------------------------------------

def _canonical(w, x, y, z):
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("zero quaternion")
    w, x, y, z = w / n, x / n, y / n, z / n
    if w < 0.0 or (w == 0.0 and (x, y, z) < (0.0, 0.0, 0.0)):
        w, x, y, z = -w, -x, -y, -z
    return w, x, y, z


class Pose:
    """Rigid transform: unit quaternion ``(w, x, y, z)`` plus translation in meters.

    Instances are immutable. ``==`` is exact (bitwise) comparison of the
    canonical components; use :meth:`allclose` for tolerant checks.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=(1.0, 0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
        w, x, y, z = (float(c) for c in rotation)
        tx, ty, tz = (float(c) for c in translation)
        object.__setattr__(self, "rotation", _canonical(w, x, y, z))
        object.__setattr__(self, "translation", (tx, ty, tz))

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    def __reduce__(self):
        return (Pose._raw, (self.rotation, self.translation))

    @classmethod
    def _raw(cls, rotation, translation):
        # caller guarantees a canonical unit quaternion
        p = object.__new__(cls)
        object.__setattr__(p, "rotation", rotation)
        object.__setattr__(p, "translation", translation)
        return p

    @classmethod
    def identity(cls):
        return cls._raw((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(quat_from_rotvec(rotvec), translation)

    @property
    def q(self):
        return np.array(self.rotation)

    @property
    def t(self):
        return np.array(self.translation)

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation_matrix()
        T[:3, 3] = self.translation
        return T

    @property
    def angle(self):
        w, x, y, z = self.rotation
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))

    def rotate(self, v):
        w, x, y, z = self.rotation
        vx, vy, vz = v
        # t = 2 q_vec x v ; v' = v + w t + q_vec x t
        cx = 2.0 * (y * vz - z * vy)
        cy = 2.0 * (z * vx - x * vz)
        cz = 2.0 * (x * vy - y * vx)
        return (vx + w * cx + (y * cz - z * cy),
                vy + w * cy + (z * cx - x * cz),
                vz + w * cz + (x * cy - y * cx))

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return inverse(self)

    def allclose(self, other, atol=1e-9):
        """Component-wise closeness, insensitive to the quaternion sign."""
        a = np.array(self.rotation)
        b = np.array(other.rotation)
        rot = min(np.max(np.abs(a - b)), np.max(np.abs(a + b)))
        tr = np.max(np.abs(np.subtract(self.translation, other.translation)))
        return bool(rot <= atol and tr <= atol)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return self.rotation == other.rotation and self.translation == other.translation

    __hash__ = None

    def __repr__(self):
        return f"Pose(rotation={self.rotation}, translation={self.translation})"


def compose(a: Pose, b: Pose) -> Pose:
    aw, ax, ay, az = a.rotation
    bw, bx, by, bz = b.rotation
    q = _canonical(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
    rx, ry, rz = a.rotate(b.translation)
    tx, ty, tz = a.translation
    return Pose._raw(q, (tx + rx, ty + ry, tz + rz))


def inverse(p: Pose) -> Pose:
    w, x, y, z = p.rotation
    conj = Pose._raw(_canonical(w, -x, -y, -z), (0.0, 0.0, 0.0))
    rx, ry, rz = conj.rotate(p.translation)
    return Pose._raw(conj.rotation, (-rx, -ry, -rz))


def between(a: Pose, b: Pose) -> Pose:
    """``a^-1 * b``."""
    return compose(inverse(a), b)


def exp(v) -> Pose:
    """SE(3) exponential of a twist ``[rho, theta]``."""
    v = np.asarray(v, dtype=float)
    q = quat_from_rotvec(v[3:])
    t = so3_left_jacobian(v[3:]) @ v[:3]
    return Pose(q, t)


def log(p: Pose, strict=True) -> np.ndarray:
    """SE(3) logarithm; raises :class:`AngleAtPi` near the branch cut unless ``strict=False``."""
    return se3_log_quat(np.array(p.rotation), np.array(p.translation), strict=strict)


def error_jacobians(xi: Pose, xj: Pose, zij: Pose):
    """Jacobians of ``log(zij^-1 xi^-1 xj)`` w.r.t. right perturbations of ``xi`` and ``xj``."""
    mats = [(x.rotation_matrix(), np.array(x.translation)) for x in (xi, xj, zij)]
    (Ri, ti), (Rj, tj), (Rz, tz) = mats
    _, Ji, Jj = relative_errors(Ri[None], ti[None], Rj[None], tj[None], Rz[None], tz[None],
                                jacobians=True)
    return Ji[0], Jj[0]
