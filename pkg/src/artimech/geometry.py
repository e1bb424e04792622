"""Rigid-body helpers on 4x4 homogeneous transforms and the 6D rotation encoding."""

import numpy as np


def make_pose(rotation=None, position=None):
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    if position is not None:
        T[:3, 3] = position
    return T


def invert(T):
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def axis_angle(axis, angle):
    """Rodrigues rotation matrix for a unit ``axis`` and ``angle`` in radians."""
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def rotation_about(axis, anchor, angle):
    """Homogeneous transform rotating by ``angle`` about the line (anchor, axis)."""
    R = axis_angle(axis, angle)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = anchor - R @ anchor
    return T


def translation(vector):
    T = np.eye(4)
    T[:3, 3] = vector
    return T


def log_rotation(R):
    """Rotation vector (axis * angle) of ``R``; angle in [0, pi]."""
    cos = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        return 0.5 * w
    if np.pi - angle < 1e-5:
        # near pi the antisymmetric part vanishes; recover the axis from the symmetric part
        M = 0.5 * (R + np.eye(3))
        i = int(np.argmax(np.diag(M)))
        axis = M[:, i] / np.sqrt(max(M[i, i], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return axis * angle
    return w * (angle / (2.0 * np.sin(angle)))


def exp_rotation(w):
    angle = np.linalg.norm(w)
    if angle < 1e-15:
        return np.eye(3)
    return axis_angle(w / angle, angle)


def interpolate(T0, T1, u):
    """Pose at fraction ``u`` along the straight-line/geodesic path from T0 to T1."""
    R0 = T0[:3, :3]
    dR = T1[:3, :3] @ R0.T
    out = np.eye(4)
    out[:3, :3] = exp_rotation(u * log_rotation(dR)) @ R0
    out[:3, 3] = (1.0 - u) * T0[:3, 3] + u * T1[:3, 3]
    return out


def rot6d_encode(R):
    """First two columns of ``R`` stacked into a 6-vector."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_decode(x):
    """Gram-Schmidt a 6-vector (or batch of them) back to a rotation matrix.

    Raises ValueError when the two columns are (nearly) parallel.
    """
    x = np.asarray(x, dtype=float)
    a, b = x[..., :3], x[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < 1e-9):
        raise ValueError("degenerate 6D rotation: first column has zero norm")
    c0 = a / na
    b = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(nb < 1e-9):
        raise ValueError("degenerate 6D rotation: columns are parallel")
    c1 = b / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def pose_to_vector(T, gripper_open):
    """10-vector [position | 6D rotation | gripper] used for actions."""
    return np.concatenate([T[:3, 3], rot6d_encode(T[:3, :3]), [float(gripper_open)]])


def vector_to_pose(v):
    v = np.asarray(v, dtype=float)
    return make_pose(rot6d_decode(v[3:9]), v[:3])
