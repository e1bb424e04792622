"""Execution of absolute end-effector goal actions on an instance.

Both the rule-based expert and learned policies act through ``execute``: an action
is a goal pose plus a gripper command.  Closing the gripper near an ungrasped
part's handle (re)grasps it; otherwise an attached part is driven toward the goal
along a straight-line/geodesic path of small ``step_to`` increments, stopping at
the first blocked increment.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .articulation import grasp, handle_pose, release, step_to
from .perception import observe

SNAP_RADIUS = 0.02
PREGRASP_OFFSET = 0.05
ROT_INCREMENT = 0.1    # rad per micro-step
POS_INCREMENT = 0.02   # m per micro-step


@dataclass
class Execution:
    kind: str                     # "grasp" | "move" | "free" | "release"
    part_id: int
    desired: np.ndarray
    applied: np.ndarray
    blocked_joints: np.ndarray
    micro: list = field(default_factory=list)   # (obs, pose 10-vector) per micro-step

    @property
    def blocked(self):
        return bool(self.blocked_joints.any())


def nearest_handle(instance, position, exclude=-1):
    """Closest part handle within the snap radius, or None."""
    best, best_d = None, SNAP_RADIUS
    for p in instance.parts:
        if p.id == exclude:
            continue
        d = np.linalg.norm(handle_pose(instance, p.id)[:3, 3] - position)
        if d < best_d:
            best, best_d = p.id, d
    return best


def _record(micro, instance, state, pose, gripper_open, record):
    if record:
        micro.append((observe(instance, state), geo.pose_to_vector(pose, gripper_open)))


def execute(instance, state, target, gripper_open, record=False):
    """Apply one goal action; returns ``(new_grasp_state, Execution)``."""
    n = len(instance.joints)
    zeros = np.zeros(n)
    micro = []
    current = state.part_id if state.attached else -1

    if gripper_open:
        new = release(state) if state.attached else state
        new.grasp_pose = target.copy()
        new.gripper_open = True
        _record(micro, instance, new, target, True, record)
        return new, Execution("release", -1, zeros, zeros.copy(), np.zeros(n, bool), micro)

    part = nearest_handle(instance, target[:3, 3], exclude=current)
    if part is not None:
        hp = handle_pose(instance, part)
        approach = instance.base_pose[:3, :3] @ instance.parts[part].approach
        pre = hp.copy()
        pre[:3, 3] = hp[:3, 3] - PREGRASP_OFFSET * approach
        free = release(state) if state.attached else state
        free.grasp_pose = pre
        _record(micro, instance, free, pre, True, record)
        new = grasp(instance, part)
        _record(micro, instance, new, new.grasp_pose, False, record)
        return new, Execution("grasp", part, zeros, zeros.copy(), np.zeros(n, bool), micro)

    if not state.attached:
        new = type(state)(attached=False, part_id=-1, grasp_pose=target.copy(), gripper_open=False)
        _record(micro, instance, new, target, False, record)
        return new, Execution("free", -1, zeros, zeros.copy(), np.zeros(n, bool), micro)

    start = state.grasp_pose.copy()
    dR = geo.log_rotation(target[:3, :3] @ start[:3, :3].T)
    steps = int(np.ceil(max(np.linalg.norm(dR) / ROT_INCREMENT,
                            np.linalg.norm(target[:3, 3] - start[:3, 3]) / POS_INCREMENT, 1.0)))
    desired, applied = zeros.copy(), zeros.copy()
    blocked = np.zeros(n, bool)
    for k in range(1, steps + 1):
        waypoint = geo.interpolate(start, target, k / steps)
        _record(micro, instance, state, waypoint, False, record)
        res = step_to(instance, state, waypoint)
        desired += res.per_joint_desired
        applied += res.per_joint_applied
        if res.blocked.any():
            blocked = res.blocked
            break
    return state, Execution("move", state.part_id, desired, applied, blocked, micro)
