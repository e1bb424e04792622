"""Partial observations, synthetic point clouds, farthest point sampling, normalization.

Observation vector layout (``P`` = max parts, ``J`` = max joints)::

    [0:3]            end-effector position
    [3:9]            end-effector rotation, 6D
    [9]              gripper open flag
    [10:10+P]        grasped-part one-hot
    [.. +J]          visible joint values, zero padded
    [.. +3P]         world handle positions per part, zero padded
    [.. +9]          category one-hot

The vector is a function of visible geometry only.  Hidden mechanism payload never
enters it.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .articulation import handle_pose, part_pose
from .mechanisms import CATEGORIES

LAYOUT_VERSION = 1
P_MAX = 4
J_MAX = 6
STD_FLOOR = 1e-6


def obs_dim(p_max=P_MAX, j_max=J_MAX):
    return 10 + p_max + j_max + 3 * p_max + len(CATEGORIES)


def layout(p_max=P_MAX, j_max=J_MAX):
    """Name -> slice table for the observation vector."""
    out, i = {}, 0
    for name, n in [("ee_pos", 3), ("ee_rot6d", 6), ("gripper_open", 1), ("grasped", p_max),
                    ("joints", j_max), ("handles", 3 * p_max), ("category", len(CATEGORIES))]:
        out[name] = slice(i, i + n)
        i += n
    return out


def observe(instance, grasp, p_max=P_MAX, j_max=J_MAX):
    L = layout(p_max, j_max)
    o = np.zeros(obs_dim(p_max, j_max))
    ee = instance.home_pose if grasp is None or grasp.grasp_pose is None else grasp.grasp_pose
    o[L["ee_pos"]] = ee[:3, 3]
    o[L["ee_rot6d"]] = geo.rot6d_encode(ee[:3, :3])
    o[L["gripper_open"]] = 1.0 if grasp is None or grasp.gripper_open else 0.0
    if grasp is not None and grasp.attached:
        o[L["grasped"].start + grasp.part_id] = 1.0
    q = instance.joint_values
    o[L["joints"].start:L["joints"].start + len(q)] = q
    h0 = L["handles"].start
    for p in instance.parts:
        o[h0 + 3 * p.id:h0 + 3 * p.id + 3] = handle_pose(instance, p.id, q)[:3, 3]
    o[L["category"].start + CATEGORIES.index(instance.category)] = 1.0
    return o


# --------------------------------------------------------------------------- point clouds

@dataclass
class PointCloud:
    points: np.ndarray
    part_ids: np.ndarray = None


_FACE_AXES = ((0, 1, 2), (1, 2, 0), (2, 0, 1))  # (normal, u, v)


def _box_faces(extents):
    """Six faces as (normal axis, sign, area)."""
    faces = []
    for n, u, v in _FACE_AXES:
        area = extents[u] * extents[v]
        faces.append((n, u, v, +1, area))
        faces.append((n, u, v, -1, area))
    return faces


def sample_box_surface(extents, n, rng):
    """``n`` points uniform over a centered box surface; also returns face index per point."""
    faces = _box_faces(extents)
    areas = np.array([f[4] for f in faces])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.random((n, 2)) - 0.5
    pts = np.zeros((n, 3))
    for k, (a, u, v, sgn, _) in enumerate(faces):
        m = face == k
        pts[m, a] = sgn * extents[a] / 2
        pts[m, u] = uv[m, 0] * extents[u]
        pts[m, v] = uv[m, 1] * extents[v]
    return pts, face


def sample_points(instance, n, seed):
    """Area-weighted uniform samples over all part box surfaces, posed by joint values."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = np.array([sum(f[4] for f in _box_faces(p.box_extents)) for p in instance.parts])
    owner = rng.choice(len(instance.parts), size=n, p=areas / areas.sum())
    points = np.zeros((n, 3))
    for p in instance.parts:
        m = owner == p.id
        local, _ = sample_box_surface(p.box_extents, int(m.sum()), rng)
        T = part_pose(instance, p.id)
        points[m] = local @ T[:3, :3].T + T[:3, 3]
    return PointCloud(points=points, part_ids=owner)


def fps(points, m, start_index=0):
    """Greedy farthest point sampling; ties go to the lowest index."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={n}")
    chosen = [int(start_index)]
    d = np.sum((points - points[start_index]) ** 2, axis=1)
    d[start_index] = -1.0
    for _ in range(m - 1):
        i = int(np.argmax(d))  # argmax returns the first maximum
        chosen.append(i)
        d = np.minimum(d, np.sum((points - points[i]) ** 2, axis=1))
        d[chosen] = -1.0
    return np.array(chosen)


# --------------------------------------------------------------------------- normalization

@dataclass
class Stats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_data(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), STD_FLOOR))


def normalize(x, stats):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != stats.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {stats.mean.shape[-1]}")
    return (x - stats.mean) / stats.std


def denormalize(z, stats):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != stats.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {z.shape[-1]} vs {stats.mean.shape[-1]}")
    return z * stats.std + stats.mean
