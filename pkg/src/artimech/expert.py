"""Rule-based adaptive experts, sparsified demonstrations and dataset I/O.

The adaptive expert only sees visible geometry plus the blocked/not-blocked
feedback of its own previous macro goals.  With ``trials=k`` every failed probe
is repeated until it has failed ``k`` times in a row before the expert adapts.
``trials=0`` is the static expert: it reads the hidden mechanism directly and
never probes.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .articulation import (
    BUTTON_TRAVEL, DELTA_MIN, INSTANCE_COUNTS, KEY_TRAVEL, TWIST_TRAVEL, GenConfig, GraspState,
    build_instance, handle_pose, is_success, redraw_hidden,
)
from .control import execute
from .mechanisms import (
    CATEGORIES, LAMP_MODES, LOCK_CATEGORIES, ROTATE_SLIDE_CATEGORIES, random_rng,
)
from .perception import Stats, observe

PULL_PROBE = 0.3       # rad, door opening tried before committing
LIFT_PROBE = 0.02      # m
ROTATE_INCREMENT = 0.25
KEY_FULL_TURN = 1.3    # exceeds the largest hidden unlock angle
STEP_BUDGET = 60


@dataclass
class MacroGoal:
    part_id: int
    pose: np.ndarray
    gripper_open: bool
    label: str            # debug only; never serialized into training data
    probe: bool = False   # an exploratory action that may fail
    mode: str = ""        # lamp mode / rotation sign, for the decision procedure

    def action(self):
        return geo.pose_to_vector(self.pose, self.gripper_open)


@dataclass
class Feedback:
    goal: MacroGoal
    desired: np.ndarray
    applied: np.ndarray
    blocked_joints: np.ndarray

    @property
    def blocked(self):
        return bool(self.blocked_joints.any())


@dataclass
class Demonstration:
    category: str
    seed: int
    keyframes: list                  # [(obs, action)]
    outcome: bool
    trials: int
    demo_index: int = 0
    labels: list = field(default_factory=list)     # debug: macro label per keyframe
    blocked: list = field(default_factory=list)    # debug: probe failed per keyframe
    hidden: object = None                          # debug: hidden state at start


@dataclass
class DemoDataset:
    demos: list
    obs_stats: Stats
    act_stats: Stats
    config: dict


class ExpertError(RuntimeError):
    pass


# --------------------------------------------------------------------------- goal builders

def _pose_with(view, part_id, deltas=None, values=None):
    q = view.joint_values.copy()
    for j, d in (deltas or {}).items():
        q[j] += d
    for j, v in (values or {}).items():
        q[j] = v
    return handle_pose(view, part_id, q)


def _grasp_goal(view, grasp_state, part_id):
    regrasp = grasp_state is not None and grasp_state.attached and grasp_state.part_id != part_id
    return MacroGoal(part_id, handle_pose(view, part_id), False, "regrasp" if regrasp else "grasp")


def _move(view, part_id, label, probe=False, mode="", deltas=None, values=None):
    return MacroGoal(part_id, _pose_with(view, part_id, deltas, values), False, label, probe, mode)


def _check_feedback(history):
    for fb in history:
        idle = np.abs(fb.desired) <= DELTA_MIN
        if np.any(fb.blocked_joints & idle):
            raise ExpertError(f"blocked on a joint that was never commanded ({fb.goal.label})")


def _trailing_failures(history):
    """How many times the last goal failed in a row (same label, part and mode)."""
    if not history or not history[-1].blocked:
        return 0
    last = history[-1].goal
    n = 0
    for fb in reversed(history):
        g = fb.goal
        if not fb.blocked or (g.label, g.part_id, g.mode) != (last.label, last.part_id, last.mode):
            break
        n += 1
    return n


def _succeeded(history, label, mode=None):
    return any(not fb.blocked and fb.goal.label == label and (mode is None or fb.goal.mode == mode)
               for fb in history)


# --------------------------------------------------------------------------- adaptive procedures

def _rotate_slide(view, gs, history, rng):
    last = history[-1].goal if history else None
    lift = 1
    if last is None:
        return _grasp_goal(view, gs, 0)
    if last.label == "grasp":
        return _move(view, 0, "lift", probe=True, deltas={lift: LIFT_PROBE})
    if last.label == "lift":
        if history[-1].blocked:
            return _move(view, 0, "rotate", deltas={0: ROTATE_INCREMENT})
        return _move(view, 0, "lift", values={lift: view.joints[lift].nominal_limits[1]})
    # previous action was a rotation: keep rotating or try lifting
    at_end = view.joints[0].value + ROTATE_INCREMENT > TWIST_TRAVEL
    if not at_end and rng.random() < 0.5:
        return _move(view, 0, "rotate", deltas={0: ROTATE_INCREMENT})
    return _move(view, 0, "lift", probe=True, deltas={lift: LIFT_PROBE})


def _direction(history, label, rng):
    """Sign for a key rotation: a known-good one, the untried one, or a coin flip."""
    for fb in history:
        if fb.goal.label == label and not fb.blocked:
            return fb.goal.mode
    tried = {fb.goal.mode for fb in history if fb.goal.label == label and fb.blocked}
    untried = [m for m in ("+", "-") if m not in tried]
    if len(untried) == 1:
        return untried[0]
    return "+" if rng.random() < 0.5 else "-"


def _window_door(view, gs, history, rng):
    last = history[-1].goal if history else None
    hi = view.joints[0].nominal_limits[1]
    if last is None:
        return _grasp_goal(view, gs, 1)
    if last.label == "grasp":
        return _move(view, 1, "pull", probe=True, deltas={0: PULL_PROBE})
    if last.label == "pull":
        if history[-1].blocked:
            d = _direction(history, "rotate", rng)
            return _rotate_key(view, d)
        return _move(view, 1, "pull", values={0: hi})
    # last was a rotation of the handle
    if history[-1].blocked:
        return _rotate_key(view, _direction(history, "rotate", rng))
    if abs(view.joints[1].value) + ROTATE_INCREMENT <= KEY_TRAVEL and rng.random() < 0.5:
        return _rotate_key(view, last.mode)
    return _move(view, 1, "pull", probe=True, deltas={0: PULL_PROBE})


def _rotate_key(view, mode):
    s = 1.0 if mode == "+" else -1.0
    return _move(view, 1, "rotate", mode=mode, deltas={1: s * ROTATE_INCREMENT})


def _switch_contact(view, gs, history, rng):
    category = view.category
    last = history[-1].goal if history else None
    hi = view.joints[0].nominal_limits[1]
    key_label = "push" if category == "Microwave" else "rotate"
    if last is None:
        return _grasp_goal(view, gs, 0)
    if last.label in ("grasp", "regrasp") and last.part_id == 0:
        if _succeeded(history, key_label):
            return _move(view, 0, "pull", values={0: hi})
        return _move(view, 0, "pull", probe=True, deltas={0: PULL_PROBE})
    if last.label == "pull":
        if history[-1].blocked:
            return _grasp_goal(view, gs, 1)
        return _move(view, 0, "pull", values={0: hi})
    if last.label in ("grasp", "regrasp") or (last.label == key_label and history[-1].blocked):
        if category == "Microwave":
            return _move(view, 1, "push", values={1: BUTTON_TRAVEL})
        d = _direction(history, "rotate", rng)
        return _move(view, 1, "rotate", mode=d, values={1: KEY_FULL_TURN if d == "+" else -KEY_FULL_TURN})
    # key actuated successfully
    return _grasp_goal(view, gs, 0)


def _lamp_goal(view, mode):
    if mode == "push":
        return _move(view, 0, "push", probe=True, mode=mode, values={1: BUTTON_TRAVEL})
    s = 1.0 if mode == "rotate_ccw" else -1.0
    return _move(view, 0, "rotate", probe=True, mode=mode, values={0: s * KEY_FULL_TURN})


def _lamp(view, gs, history, rng):
    if not history:
        return _grasp_goal(view, gs, 0)
    failed = {fb.goal.mode for fb in history if fb.blocked}
    options = [m for m in LAMP_MODES if m not in failed]
    if not options:
        raise ExpertError("every lamp mode failed")
    return _lamp_goal(view, options[int(rng.integers(len(options)))])


# --------------------------------------------------------------------------- static procedures

def _static_goal(view, gs, hidden):
    cat = view.category
    q = view.joint_values
    attached = gs.part_id if gs is not None and gs.attached else -1
    if cat in ROTATE_SLIDE_CATEGORIES:
        if attached != 0:
            return _grasp_goal(view, gs, 0)
        if q[0] < hidden.release_angle:
            return _move(view, 0, "rotate", deltas={0: ROTATE_INCREMENT})
        if q[1] == 0.0:
            return _move(view, 0, "lift", deltas={1: LIFT_PROBE})
        return _move(view, 0, "lift", values={1: view.joints[1].nominal_limits[1]})
    if cat == "Lamp":
        if attached != 0:
            return _grasp_goal(view, gs, 0)
        return replace(_lamp_goal(view, hidden.mode), probe=False)
    hi = view.joints[0].nominal_limits[1]
    if cat in LOCK_CATEGORIES:
        if attached != 1:
            return _grasp_goal(view, gs, 1)
        if hidden.locked:
            return _rotate_key(view, "+" if hidden.direction > 0 else "-")
        if q[0] == 0.0:
            return _move(view, 1, "pull", deltas={0: PULL_PROBE})
        return _move(view, 1, "pull", values={0: hi})
    # Safe / Microwave
    if hidden.locked:
        if attached != 1:
            return _grasp_goal(view, gs, 1)
        if cat == "Microwave":
            return _move(view, 1, "push", values={1: BUTTON_TRAVEL})
        d = "+" if hidden.direction > 0 else "-"
        return _move(view, 1, "rotate", mode=d, values={1: hidden.direction * KEY_FULL_TURN})
    if attached != 0:
        return _grasp_goal(view, gs, 0)
    if q[0] == 0.0 and q[1] == 0.0:
        return _move(view, 0, "pull", deltas={0: PULL_PROBE})
    return _move(view, 0, "pull", values={0: hi})


_PROCEDURES = {"Window": _window_door, "Door": _window_door, "Safe": _switch_contact,
               "Microwave": _switch_contact, "Lamp": _lamp}


def expert_next_goal(category, visible_state, feedback_history, grasp_state=None,
                     trials=1, rng=None, hidden=None):
    """Next macro goal of the expert.

    ``visible_state`` is an instance whose mechanism must not be consulted; the
    static expert (``trials == 0``) receives the live mechanism as ``hidden``.
    """
    _check_feedback(feedback_history)
    if trials == 0:
        if hidden is None:
            raise ValueError("the static expert needs the hidden state")
        return _static_goal(visible_state, grasp_state, hidden)
    if 0 < _trailing_failures(feedback_history) < trials:
        g = feedback_history[-1].goal
        return replace(g, pose=g.pose.copy())
    rng = rng if rng is not None else np.random.default_rng(0)
    proc = _rotate_slide if category in ROTATE_SLIDE_CATEGORIES else _PROCEDURES[category]
    return proc(visible_state, grasp_state, feedback_history, rng)


def visible_view(instance):
    """Shallow view of ``instance`` with the hidden payload removed."""
    return replace(instance, mechanism=None)


# --------------------------------------------------------------------------- rollout

@dataclass
class DenseStep:
    obs: np.ndarray
    pose: np.ndarray   # 10-vector: position, 6D rotation, gripper-open flag
    tag: str           # "grasp" | "goal" | "probe" | "interp"
    label: str = ""


def rollout_expert(instance, trials=1, rng=None, budget=STEP_BUDGET, dense=False):
    """Run the expert on ``instance`` (mutated) and return a Demonstration.

    With ``dense=True`` the dense trajectory is returned alongside.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    start_hidden = instance.mechanism
    gs = None
    history, trajectory = [], []
    for _ in range(budget):
        if is_success(instance):
            break
        obs = observe(instance, gs)
        goal = expert_next_goal(instance.category, visible_view(instance), history, gs, trials, rng,
                                hidden=instance.mechanism if trials == 0 else None)
        state = gs if gs is not None else _home_state(instance)
        gs, ex = execute(instance, state, goal.pose, goal.gripper_open, record=True)
        fb = Feedback(goal, ex.desired, ex.applied, ex.blocked_joints)
        history.append(fb)
        tag = "grasp" if goal.label in ("grasp", "regrasp") else ("probe" if fb.blocked else "goal")
        trajectory.append(DenseStep(obs, goal.action(), tag, goal.label))
        trajectory.extend(DenseStep(o, p, "interp") for o, p in ex.micro)
    keyframes = sparsify(trajectory)
    demo = Demonstration(
        category=instance.category, seed=instance.seed,
        keyframes=[(s.obs, s.pose) for s in keyframes], outcome=is_success(instance), trials=trials,
        labels=[s.label for s in keyframes], blocked=[s.tag == "probe" for s in keyframes],
        hidden=start_hidden,
    )
    return (demo, trajectory) if dense else demo


def _home_state(instance):
    return GraspState(attached=False, part_id=-1, grasp_pose=instance.home_pose.copy(), gripper_open=True)


def sparsify(dense_trajectory):
    """Keep grasp, macro-goal and blocked-probe entries; drop interpolated ones."""
    if not dense_trajectory:
        raise ValueError("empty trajectory")
    return [s for s in dense_trajectory if s.tag != "interp"]


# --------------------------------------------------------------------------- datasets

def home_action(first_obs):
    """Action-history padding before the first keyframe: hold the start pose, gripper as observed."""
    return np.asarray(first_obs[:10], dtype=float).copy()


def dataset_stats(demos):
    obs = np.array([o for d in demos for o, _ in d.keyframes])
    acts = np.array([a for d in demos for _, a in d.keyframes] + [home_action(d.keyframes[0][0]) for d in demos])
    return Stats.from_data(obs), Stats.from_data(acts)


def training_instances(categories, counts=None, gen_cfg=None):
    """Instances with training seeds ``0..count-1`` per category."""
    out = []
    for cat in categories:
        if counts is None:
            n = INSTANCE_COUNTS[cat]
        elif isinstance(counts, dict):
            n = counts.get(cat, INSTANCE_COUNTS[cat])
        else:
            n = int(counts)
        out.extend(build_instance(cat, s, gen_cfg) for s in range(n))
    return out


def collect_dataset(categories=None, per_object=20, trials=1, seed=0, gen_cfg=None,
                    instances=None, counts=None):
    """Expert demonstrations, ``per_object`` per instance, hidden state redrawn per demo."""
    if per_object < 1:
        raise ValueError("per_object must be >= 1")
    if trials < 0:
        raise ValueError("trials must be >= 0")
    cfg = gen_cfg or GenConfig()
    if instances is None:
        instances = training_instances(categories or CATEGORIES, counts, cfg)
    demos = []
    for base in instances:
        cidx = CATEGORIES.index(base.category)
        for d in range(per_object):
            inst = base.copy()
            redraw_hidden(inst, random_rng(seed, cidx, base.seed, d, 1), cfg.priors)
            demo = rollout_expert(inst, trials=trials, rng=random_rng(seed, cidx, base.seed, d, 2))
            demo.demo_index = d
            if not demo.outcome:
                raise ExpertError(
                    f"expert failed: {base.category} seed={base.seed} demo={d} trials={trials} "
                    f"hidden={demo.hidden} labels={demo.labels}")
            demos.append(demo)
    obs_stats, act_stats = dataset_stats(demos)
    return DemoDataset(demos, obs_stats, act_stats,
                       {"trials": trials, "per_object": per_object, "seed": seed})


def _floats(a):
    return [float(x) for x in np.asarray(a).ravel()]


def dump_dataset(dataset, path, stats_path=None):
    with open(path, "w") as f:
        for d in dataset.demos:
            rec = {"cat": d.category, "seed": d.seed, "demo": d.demo_index,
                   "kf": [{"obs": _floats(o), "act": _floats(a)} for o, a in d.keyframes],
                   "ok": bool(d.outcome), "trials": d.trials}
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    stats_path = stats_path or stats_sidecar(path)
    with open(stats_path, "w") as f:
        json.dump(stats_to_dict(dataset.obs_stats, dataset.act_stats), f, sort_keys=True)
        f.write("\n")


def stats_sidecar(path):
    return str(path) + ".stats.json"


def stats_to_dict(obs_stats, act_stats):
    return {"obs_mean": _floats(obs_stats.mean), "obs_std": _floats(obs_stats.std),
            "act_mean": _floats(act_stats.mean), "act_std": _floats(act_stats.std), "v": 1}


def stats_from_dict(d):
    if d.get("v") != 1:
        raise ValueError("unsupported stats version")
    return (Stats(np.array(d["obs_mean"]), np.array(d["obs_std"])),
            Stats(np.array(d["act_mean"]), np.array(d["act_std"])))


def load_dataset(path, stats_path=None):
    demos = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            r = json.loads(line)
            kf = [(np.array(k["obs"]), np.array(k["act"])) for k in r["kf"]]
            demos.append(Demonstration(r["cat"], r["seed"], kf, r["ok"], r["trials"], r.get("demo", 0)))
    try:
        with open(stats_path or stats_sidecar(path)) as f:
            obs_stats, act_stats = stats_from_dict(json.load(f))
    except FileNotFoundError:
        obs_stats, act_stats = dataset_stats(demos)
    trials = demos[0].trials if demos else 0
    return DemoDataset(demos, obs_stats, act_stats, {"trials": trials})


def probe_count(demo):
    return sum(demo.blocked)
