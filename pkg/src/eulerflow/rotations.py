"""
Rotation algebra for the (omega, phi, kappa) Euler-angle parameterisation.

Elementary rotations about X, Y and Z (photogrammetric convention, sine in
the upper triangle of the X and Z factors):

    R_omega = | 1    0     0   |   R_phi = | cp  0  -sp |   R_kappa = |  ck  sk  0 |
              | 0   co    so   |           |  0  1   0  |             | -sk  ck  0 |
              | 0  -so    co   |           | sp  0   cp |             |   0   0  1 |

and the full rotation is R = R_kappa @ R_phi @ R_omega.

All functions are vectorised: Euler angles have shape (..., 3) and rotation
matrices (..., 3, 3).
"""

import numpy as np

from .exceptions import InvalidRotation

TWO_PI = 2.0 * np.pi

# |cos(phi)| below this is treated as gimbal lock when inverting.
GIMBAL_TOL = 1e-7
# Matrices with |R[2, 0]| above this are also routed to the gimbal branch.
GIMBAL_SIN_TOL = 1.0 - 1e-12

OMEGA, PHI, KAPPA = 0, 1, 2
ANGLE_NAMES = ("omega", "phi", "kappa")


def wrap_angle(theta):
    """Reduce angles to [0, 2*pi)."""
    theta = np.mod(theta, TWO_PI)
    # np.mod returns 2*pi for tiny negative inputs
    return np.where(theta >= TWO_PI, 0.0, theta)


def circular_distance(a, b):
    """Shortest arc length between angles, in [0, pi]."""
    d = np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))
    return np.minimum(d, TWO_PI - d)


def rot_omega(omega):
    c, s = np.cos(omega), np.sin(omega)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([
        np.stack([o, z, z], -1),
        np.stack([z, c, s], -1),
        np.stack([z, -s, c], -1),
    ], -2)


def rot_phi(phi):
    c, s = np.cos(phi), np.sin(phi)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([
        np.stack([c, z, -s], -1),
        np.stack([z, o, z], -1),
        np.stack([s, z, c], -1),
    ], -2)


def rot_kappa(kappa):
    c, s = np.cos(kappa), np.sin(kappa)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([
        np.stack([c, s, z], -1),
        np.stack([-s, c, z], -1),
        np.stack([z, z, o], -1),
    ], -2)


def euler_to_rotmat(euler):
    """
    Map Euler angles (..., 3) to rotation matrices (..., 3, 3).

    Uses the closed form of R_kappa @ R_phi @ R_omega; any real angles are
    accepted.
    """
    euler = np.asarray(euler, dtype=float)
    co, so = np.cos(euler[..., 0]), np.sin(euler[..., 0])
    cp, sp = np.cos(euler[..., 1]), np.sin(euler[..., 1])
    ck, sk = np.cos(euler[..., 2]), np.sin(euler[..., 2])
    R = np.empty(euler.shape[:-1] + (3, 3))
    R[..., 0, 0] = ck * cp
    R[..., 0, 1] = ck * sp * so + sk * co
    R[..., 0, 2] = -ck * sp * co + sk * so
    R[..., 1, 0] = -sk * cp
    R[..., 1, 1] = -sk * sp * so + ck * co
    R[..., 1, 2] = sk * sp * co + ck * so
    R[..., 2, 0] = sp
    R[..., 2, 1] = -cp * so
    R[..., 2, 2] = cp * co
    return R


def orthonormality_error(R):
    """Frobenius norm of R^T R - I and |det R - 1|, elementwise over the batch."""
    R = np.asarray(R, dtype=float)
    eye = np.eye(3)
    ortho = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - eye, axis=(-2, -1))
    det = np.abs(np.linalg.det(R) - 1.0)
    return ortho, det


def is_rotation(R, tol=1e-9):
    ortho, det = orthonormality_error(R)
    return (ortho < tol) & (det < tol)


def check_rotation(R, tol=1e-6):
    """Return R as a float array, raising InvalidRotation if any entry is not in SO(3)."""
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotation(f"expected (..., 3, 3) matrices, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidRotation("rotation matrix has non-finite entries")
    ortho, det = orthonormality_error(R)
    if np.any(ortho > tol) or np.any(det > tol):
        worst = float(max(np.max(ortho), np.max(det)))
        raise InvalidRotation(f"matrix violates SO(3) constraints (error {worst:.3g} > {tol:g})")
    return R


def rotmat_to_euler(R, check=True):
    """
    Invert euler_to_rotmat, returning angles in [0, 2*pi).

    The returned phi always satisfies cos(phi) >= 0. At gimbal lock
    (|cos phi| < GIMBAL_TOL) kappa is set to exactly 0 and the remaining
    degree of freedom goes to omega.
    """
    R = check_rotation(R) if check else np.asarray(R, dtype=float)
    sp = np.clip(R[..., 2, 0], -1.0, 1.0)
    cp = np.hypot(R[..., 2, 1], R[..., 2, 2])
    phi = np.arctan2(sp, cp)

    gimbal = (cp < GIMBAL_TOL) | (np.abs(sp) > GIMBAL_SIN_TOL)
    omega = np.where(gimbal,
                     np.arctan2(R[..., 1, 2], R[..., 1, 1]),
                     np.arctan2(-R[..., 2, 1], R[..., 2, 2]))
    kappa = np.where(gimbal, 0.0, np.arctan2(-R[..., 1, 0], R[..., 0, 0]))
    return wrap_angle(np.stack([omega, phi, kappa], axis=-1))


def other_preimage(euler):
    """The second Euler triple mapping to the same rotation: (w + pi, pi - p, k + pi)."""
    euler = np.asarray(euler, dtype=float)
    return wrap_angle(np.stack([euler[..., 0] + np.pi,
                                np.pi - euler[..., 1],
                                euler[..., 2] + np.pi], axis=-1))


def log_haar_volume_factor(euler):
    """
    log of d(Haar probability) / d(omega dphi dkappa) for one sheet of the cover.

    The Euler map covers SO(3) twice, and the normalised Haar measure pulls
    back to |cos phi| / (16 pi^2) on the torus, i.e. |cos phi| / (8 pi^2) per
    sheet.
    """
    cp = np.abs(np.cos(np.asarray(euler, dtype=float)[..., 1]))
    return np.log(np.maximum(cp, 1e-300)) - np.log(8.0 * np.pi ** 2)


def quat_to_rotmat(q):
    """Unit quaternions (..., 4) as (w, x, y, z) to rotation matrices."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
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


def random_quaternion(rng, n=None):
    size = (4,) if n is None else (n, 4)
    q = rng.standard_normal(size)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def haar_sample(rng, n=None):
    """Uniform (Haar) random rotations: one (3, 3) matrix, or (n, 3, 3) if n is given."""
    return quat_to_rotmat(random_quaternion(rng, n))


def _angle_from(cos_theta, half_chord):
    # arcsin of the half chord is accurate near 0 where arccos is not
    small = 2.0 * np.arcsin(np.clip(half_chord, 0.0, 1.0))
    return np.where(cos_theta > 0.0, small, np.arccos(np.clip(cos_theta, -1.0, 1.0)))


def rotation_angle(R):
    """Angle of rotation in [0, pi]."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    chord = np.linalg.norm(R - np.eye(3), axis=(-2, -1))
    return _angle_from((tr - 1.0) / 2.0, chord / (2.0 * np.sqrt(2.0)))


def geodesic_distance(a, b):
    """arccos((tr(a^T b) - 1) / 2), the angle of the relative rotation, in [0, pi]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    tr = np.einsum("...ij,...ij->...", a, b)
    chord = np.linalg.norm(a - b, axis=(-2, -1))
    return _angle_from((tr - 1.0) / 2.0, chord / (2.0 * np.sqrt(2.0)))


def hat(v):
    v = np.asarray(v, dtype=float)
    z = np.zeros_like(v[..., 0])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def so3_exp(rotvec):
    """Rodrigues' formula: rotation vectors (..., 3) to matrices (..., 3, 3)."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rotvec, axis=-1)[..., None, None]
    K = hat(rotvec)
    small = theta < 1e-8
    t = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(t)) / t ** 2)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R):
    """Inverse of so3_exp for rotation angles below pi."""
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    v = np.stack([R[..., 2, 1] - R[..., 1, 2],
                  R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], -1)
    s = np.sin(theta)
    scale = np.where(theta < 1e-8, 0.5, theta / (2.0 * np.where(s == 0, 1.0, s)))
    return v * scale[..., None]


def axis_angle_to_rotmat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    return so3_exp(axis * np.asarray(angle, dtype=float)[..., None])


def chordal_mean(R):
    """Projection of the arithmetic mean matrix back onto SO(3)."""
    M = np.asarray(R, dtype=float).mean(axis=0)
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt
