"""Procedural articulated objects with quasi-static joint-projection kinematics.

Objects are built from box-primitive parts attached to a fixed body.  A part moves
through one or two joints (optionally on top of its parent part's motion).  Joint
axes and anchors are expressed in the object frame at rest; the motion of a part
is the product of its ancestors' joint motions and its own.

Lengths are meters, angles radians.  Poses are 4x4 homogeneous transforms.
"""

import copy
import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import geometry as geo
from .mechanisms import (
    CATEGORIES, HiddenPriors, PushRotate, apply_mechanism, mechanism_from_dict,
    mechanism_to_dict, random_rng, sample_hidden,
)

# Table-1 instance counts per category
INSTANCE_COUNTS = {
    "Bottle": 32, "Pen": 36, "CoffeeMaker": 18, "Window": 30, "Door": 57,
    "Lamp": 25, "Microwave": 37, "Safe": 36, "PressureCooker": 6,
}

SUCCESS_FRACTION = 0.85
EPS_BLOCK = 1e-6
DELTA_MIN = 1e-3

KEY_TRAVEL = 1.5        # revolute key / lamp knob nominal half-range
TWIST_TRAVEL = 2.0      # rotate&slide revolute nominal upper limit
BUTTON_TRAVEL = 0.025   # push-button / lamp press nominal depth

OBJECT_ORIGIN = np.array([0.6, 0.0, 0.0])
HOME_POSITION = np.array([0.3, 0.0, 0.35])


@dataclass
class GenConfig:
    """Randomization ranges for instance generation (all [lo, hi])."""

    scale_range: tuple = (0.9, 1.1)
    position_jitter: float = 0.02
    open_limit_range: tuple = (1.3, 1.5)     # door / window / safe / microwave hinge
    lift_limit_range: tuple = (0.05, 0.06)   # rotate&slide prismatic travel
    priors: HiddenPriors = field(default_factory=HiddenPriors)

    def validate(self):
        for name in ("scale_range", "open_limit_range", "lift_limit_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo > hi ({lo} > {hi})")
        if self.position_jitter < 0:
            raise ValueError("position_jitter must be non-negative")
        self.priors.validate()
        return self

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["priors"] = {f.name: getattr(self.priors, f.name) for f in fields(self.priors)}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        pri = d.pop("priors", {})
        pri = {k: tuple(v) if isinstance(v, list) else v for k, v in pri.items()}
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(priors=HiddenPriors(**pri), **d)


@dataclass
class JointSpec:
    kind: str                  # "revolute" | "prismatic"
    axis: np.ndarray
    anchor: np.ndarray
    nominal_limits: tuple
    value: float = 0.0
    effective_limits: tuple = None

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.axis = self.axis / np.linalg.norm(self.axis)
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.nominal_limits = (float(self.nominal_limits[0]), float(self.nominal_limits[1]))
        if self.effective_limits is None:
            self.effective_limits = self.nominal_limits


@dataclass
class Part:
    id: int
    name: str
    joints: list
    handle_point: np.ndarray     # grasp location in the part frame
    box_extents: np.ndarray      # full box side lengths
    rest_pose: np.ndarray        # part frame in the object frame at rest
    approach: np.ndarray         # unit pre-grasp approach direction (object frame)
    parent: int = None


@dataclass
class GraspState:
    attached: bool = False
    part_id: int = -1
    grasp_pose: np.ndarray = None
    gripper_open: bool = True


@dataclass
class StepResult:
    achieved_pose: np.ndarray
    per_joint_applied: np.ndarray
    per_joint_desired: np.ndarray
    blocked: np.ndarray
    success_after: bool


@dataclass
class ObjectInstance:
    category: str
    seed: int
    parts: list
    joints: list
    base_pose: np.ndarray
    mechanism: object
    goal_joint: int
    home_pose: np.ndarray = None

    def copy(self):
        return copy.deepcopy(self)

    @property
    def joint_values(self):
        return np.array([j.value for j in self.joints])

    @property
    def nominal_limits(self):
        return [j.nominal_limits for j in self.joints]

    def refresh_limits(self):
        """Run the mechanism once on the current joint values."""
        self.mechanism, overrides = apply_mechanism(self.mechanism, self.joint_values, self.nominal_limits)
        for i, j in enumerate(self.joints):
            j.effective_limits = tuple(overrides.get(i, j.nominal_limits))


# --------------------------------------------------------------------------- templates

def _part(pid, name, joints, rest_pos, handle, extents, approach, parent=None):
    return Part(id=pid, name=name, joints=list(joints), handle_point=np.asarray(handle, float),
                box_extents=np.asarray(extents, float), rest_pose=geo.translation(rest_pos),
                approach=np.asarray(approach, float) / np.linalg.norm(approach), parent=parent)


def _rotate_slide(category, s, rng, cfg):
    lift = rng.uniform(*cfg.lift_limit_range)
    if category == "CoffeeMaker":
        c = np.array([-0.05, 0.0, 0.18 * s])
        handle, extents, slide = [-0.08 * s, 0.0, 0.0], [0.16 * s, 0.06 * s, 0.03], [0, 0, -1.0]
        name = "portafilter"
        approach = [-1.0, 0, 0]
    elif category == "Pen":
        c = np.array([0.0, 0.0, 0.14 * s])
        handle, extents, slide, name = [0, 0, 0], [0.015, 0.015, 0.04 * s], [0, 0, 1.0], "cap"
        approach = [0, 0, 1.0]
    elif category == "PressureCooker":
        c = np.array([0.0, 0.0, 0.22 * s])
        handle, extents, slide, name = [0, 0, 0.03], [0.26 * s, 0.26 * s, 0.03], [0, 0, 1.0], "lid"
        approach = [0, 0, 1.0]
    else:
        c = np.array([0.0, 0.0, 0.22 * s])
        handle, extents, slide, name = [0, 0, 0], [0.035 * s, 0.035 * s, 0.025], [0, 0, 1.0], "cap"
        approach = [0, 0, 1.0]
    joints = [
        JointSpec("revolute", [0, 0, 1.0], c, (0.0, TWIST_TRAVEL)),
        JointSpec("prismatic", slide, c, (0.0, lift)),
    ]
    parts = [_part(0, name, [0, 1], c, handle, extents, approach)]
    return parts, joints, 1


def _hinged_door(category, s, rng, cfg):
    """Hinged panel plus a key part; returns parts, joints, goal joint."""
    hi = rng.uniform(*cfg.open_limit_range)
    if category in ("Window", "Door"):
        w = (0.40 if category == "Window" else 0.50) * s
        h = (0.35 if category == "Window" else 0.60) * s
        zc = 0.25 if category == "Window" else h / 2
        front = -0.02
        panel_c = np.array([front, 0.0, zc])
        joints = [
            JointSpec("revolute", [0, 0, 1.0], [front, -w / 2, zc], (0.0, hi)),
            JointSpec("revolute", [1.0, 0, 0], [front - 0.03, w / 2 - 0.06, zc], (-KEY_TRAVEL, KEY_TRAVEL)),
        ]
        parts = [
            # panel's own grasp point sits on its lower edge, clear of the handle part
            _part(0, "sash" if category == "Window" else "door", [0], panel_c,
                  [-0.01, w / 2 - 0.03, -h / 2 + 0.03], [0.02, w, h], [-1.0, 0, 0]),
            _part(1, "handle", [1], [front - 0.03, w / 2 - 0.06, zc], [0, 0, 0],
                  [0.03, 0.02, 0.10], [-1.0, 0, 0], parent=0),
        ]
        return parts, joints, 0
    # Safe / Microwave: door panel and a key on the fixed body beside it
    w = (0.30 if category == "Safe" else 0.34) * s
    h = (0.30 if category == "Safe" else 0.22) * s
    d = 0.30 * s
    front = -d / 2
    zc = h / 2
    joints = [JointSpec("revolute", [0, 0, 1.0], [front, -w / 2, zc], (0.0, hi))]
    parts = [_part(0, "door", [0], [front, 0.0, zc], [-0.03, w / 2 - 0.04, 0.0], [0.02, w, h], [-1.0, 0, 0])]
    if category == "Safe":
        kpos = [front - 0.02, w / 2 + 0.06, zc + 0.04]
        joints.append(JointSpec("revolute", [1.0, 0, 0], kpos, (-KEY_TRAVEL, KEY_TRAVEL)))
        parts.append(_part(1, "knob", [1], kpos, [0, 0, 0], [0.02, 0.04, 0.04], [-1.0, 0, 0]))
    else:
        kpos = [front - 0.01, w / 2 + 0.06, zc - 0.03]
        joints.append(JointSpec("prismatic", [1.0, 0, 0], kpos, (0.0, BUTTON_TRAVEL)))
        parts.append(_part(1, "button", [1], kpos, [0, 0, 0], [0.02, 0.03, 0.02], [-1.0, 0, 0]))
    return parts, joints, 0


def _lamp(s, rng, cfg):
    c = np.array([0.0, 0.0, 0.30 * s])
    joints = [
        JointSpec("revolute", [0, 0, 1.0], c, (-KEY_TRAVEL, KEY_TRAVEL)),
        JointSpec("prismatic", [0, 0, -1.0], c, (0.0, BUTTON_TRAVEL)),
    ]
    parts = [_part(0, "knob", [0, 1], c, [0, 0, 0], [0.03, 0.03, 0.02], [0, 0, 1.0])]
    return parts, joints, 1


def build_instance(category, seed, gen_cfg=None):
    """Deterministically generate an instance of ``category`` from ``seed``."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    cfg = (gen_cfg or GenConfig()).validate()
    rng = random_rng(CATEGORIES.index(category), seed, 0)
    s = rng.uniform(*cfg.scale_range)
    offset = rng.uniform(-cfg.position_jitter, cfg.position_jitter, size=2)
    if category in ("Bottle", "Pen", "CoffeeMaker", "PressureCooker"):
        parts, joints, goal = _rotate_slide(category, s, rng, cfg)
    elif category == "Lamp":
        parts, joints, goal = _lamp(s, rng, cfg)
    else:
        parts, joints, goal = _hinged_door(category, s, rng, cfg)
    hidden = sample_hidden(category, random_rng(CATEGORIES.index(category), seed, 1), cfg.priors)
    base = geo.translation(OBJECT_ORIGIN + np.array([offset[0], offset[1], 0.0]))
    inst = ObjectInstance(category=category, seed=int(seed), parts=parts, joints=joints,
                          base_pose=base, mechanism=hidden, goal_joint=goal,
                          home_pose=geo.translation(HOME_POSITION))
    inst.refresh_limits()
    return inst


def redraw_hidden(instance, rng, priors=None):
    """Reset joints to rest and replace the hidden payload with a fresh draw."""
    for j in instance.joints:
        j.value = 0.0
    instance.mechanism = sample_hidden(instance.category, rng, priors)
    instance.refresh_limits()
    return instance


# --------------------------------------------------------------------------- kinematics

def _joint_motion(joint, q):
    if joint.kind == "revolute":
        return geo.rotation_about(joint.axis, joint.anchor, q)
    return geo.translation(joint.axis * q)


def chain_joints(instance, part_id):
    """Joint indices moving ``part_id``, root-most first."""
    chain = []
    p = instance.parts[part_id]
    while p is not None:
        chain = list(p.joints) + chain
        p = instance.parts[p.parent] if p.parent is not None else None
    return chain


def _motion(instance, part_id, q):
    G = np.eye(4)
    for j in chain_joints(instance, part_id):
        G = G @ _joint_motion(instance.joints[j], q[j])
    return G


def part_pose(instance, part_id, joint_values=None):
    """World pose of the part frame under the current (or given) joint values."""
    if not 0 <= part_id < len(instance.parts):
        raise KeyError(f"unknown part {part_id}")
    q = instance.joint_values if joint_values is None else joint_values
    return instance.base_pose @ _motion(instance, part_id, q) @ instance.parts[part_id].rest_pose


def handle_pose(instance, part_id, joint_values=None):
    T = part_pose(instance, part_id, joint_values)
    return T @ geo.translation(instance.parts[part_id].handle_point)


def joint_frames(instance, part_id, q):
    """World (axis, anchor) for every joint in the chain of ``part_id``."""
    out = []
    pre = instance.base_pose.copy()
    for j in chain_joints(instance, part_id):
        js = instance.joints[j]
        out.append((j, pre[:3, :3] @ js.axis, pre[:3, :3] @ js.anchor + pre[:3, 3]))
        pre = pre @ _joint_motion(js, q[j])
    return out


def grasp(instance, part_id, state=None):
    if not 0 <= part_id < len(instance.parts):
        raise KeyError(f"unknown part {part_id}")
    if state is not None and state.attached:
        raise RuntimeError(f"already attached to part {state.part_id}")
    return GraspState(attached=True, part_id=part_id,
                      grasp_pose=handle_pose(instance, part_id), gripper_open=False)


def release(state):
    return GraspState(attached=False, part_id=-1, grasp_pose=state.grasp_pose.copy(), gripper_open=True)


def desired_displacements(instance, part_id, current, target):
    """Screw-project the rigid motion current->target onto the chain joints."""
    q = instance.joint_values
    desired = np.zeros(len(instance.joints))
    frames = joint_frames(instance, part_id, q)
    r = geo.log_rotation(target[:3, :3] @ current[:3, :3].T)
    has_prismatic = False
    for j, axis, _ in frames:
        if instance.joints[j].kind == "revolute":
            desired[j] = r @ axis
        else:
            has_prismatic = True
    if has_prismatic:
        q_rot = q + desired
        t = target[:3, 3] - handle_pose(instance, part_id, q_rot)[:3, 3]
        for j, axis, _ in joint_frames(instance, part_id, q_rot):
            if instance.joints[j].kind == "prismatic":
                desired[j] = t @ axis
    return desired


def step_to(instance, state, target_pose):
    """Move the grasped part toward ``target_pose``; mutates instance and state."""
    if not state.attached:
        raise RuntimeError("step_to requires an attached grasp")
    target_pose = np.asarray(target_pose, dtype=float)
    if not np.all(np.isfinite(target_pose)):
        raise ValueError("non-finite target pose")
    desired = desired_displacements(instance, state.part_id, state.grasp_pose, target_pose)
    applied = np.zeros_like(desired)
    for j in np.flatnonzero(desired):
        js = instance.joints[j]
        lo, hi = js.effective_limits
        new = min(max(js.value + desired[j], lo), hi)
        applied[j] = new - js.value
        js.value = new
    instance.refresh_limits()
    state.grasp_pose = handle_pose(instance, state.part_id)
    blocked = (np.abs(desired) > DELTA_MIN) & (np.abs(desired) - np.abs(applied) > EPS_BLOCK)
    return StepResult(achieved_pose=state.grasp_pose.copy(), per_joint_applied=applied,
                      per_joint_desired=desired, blocked=blocked, success_after=is_success(instance))


def is_success(instance):
    if isinstance(instance.mechanism, PushRotate):
        return instance.mechanism.latch_on
    g = instance.joints[instance.goal_joint]
    return g.value >= SUCCESS_FRACTION * g.nominal_limits[1]


# --------------------------------------------------------------------------- serialization

def _arr(a):
    return [float(x) for x in np.asarray(a).ravel()]


def instance_to_dict(inst):
    return {
        "v": 1,
        "category": inst.category,
        "seed": inst.seed,
        "base_pose": _arr(inst.base_pose),
        "home_pose": _arr(inst.home_pose),
        "goal_joint": inst.goal_joint,
        "parts": [{
            "id": p.id, "name": p.name, "joints": list(p.joints), "parent": p.parent,
            "handle_point": _arr(p.handle_point), "box_extents": _arr(p.box_extents),
            "rest_pose": _arr(p.rest_pose), "approach": _arr(p.approach),
        } for p in inst.parts],
        "joints": [{
            "kind": j.kind, "axis": _arr(j.axis), "anchor": _arr(j.anchor),
            "nominal_limits": list(j.nominal_limits), "value": j.value,
            "effective_limits": list(j.effective_limits),
        } for j in inst.joints],
        "mechanism": mechanism_to_dict(inst.mechanism),
    }


def instance_from_dict(d):
    if d.get("v") != 1:
        raise ValueError(f"unsupported instance schema version {d.get('v')!r}")
    parts = [Part(id=p["id"], name=p["name"], joints=list(p["joints"]), parent=p["parent"],
                  handle_point=np.array(p["handle_point"]), box_extents=np.array(p["box_extents"]),
                  rest_pose=np.array(p["rest_pose"]).reshape(4, 4), approach=np.array(p["approach"]))
             for p in d["parts"]]
    joints = [JointSpec(kind=j["kind"], axis=j["axis"], anchor=j["anchor"],
                        nominal_limits=tuple(j["nominal_limits"]), value=j["value"],
                        effective_limits=tuple(j["effective_limits"]))
              for j in d["joints"]]
    return ObjectInstance(category=d["category"], seed=d["seed"], parts=parts, joints=joints,
                          base_pose=np.array(d["base_pose"]).reshape(4, 4),
                          mechanism=mechanism_from_dict(d["mechanism"]), goal_joint=d["goal_joint"],
                          home_pose=np.array(d["home_pose"]).reshape(4, 4))


def dump_instances(instances, path):
    with open(path, "w") as f:
        json.dump([instance_to_dict(i) for i in instances], f, indent=1, sort_keys=True)
        f.write("\n")


def load_instances(path):
    with open(path) as f:
        return [instance_from_dict(d) for d in json.load(f)]
