import json

import numpy as np
import pytest

from artimech import geometry as geo
from artimech.articulation import (
    INSTANCE_COUNTS, GenConfig, build_instance, dump_instances, grasp, handle_pose, instance_from_dict,
    instance_to_dict, is_success, load_instances, part_pose, step_to,
)
from artimech.mechanisms import CATEGORIES, RotateSlide
from conftest import quat_to_matrix


def rodrigues(axis, angle):
    """Oracle rotation built from a quaternion, independent of the package helpers."""
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    return quat_to_matrix(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))


def set_locked(inst, locked):
    inst.mechanism = type(inst.mechanism)(**{**inst.mechanism.__dict__, "locked": locked})
    inst.refresh_limits()
    return inst


def test_safe_template_and_lock_limit():
    inst = build_instance("Safe", 7)
    names = [p.name for p in inst.parts]
    assert names == ["door", "knob"]
    door = inst.joints[inst.goal_joint]
    if inst.mechanism.locked:
        assert door.effective_limits == (0.0, 0.0)
    else:
        assert door.effective_limits == door.nominal_limits
    assert all(j.value == 0.0 for j in inst.joints)


def test_table_counts_total():
    assert sum(INSTANCE_COUNTS.values()) == 277
    insts = [build_instance(c, s) for c, n in INSTANCE_COUNTS.items() for s in range(n)]
    assert len(insts) == 277


def test_same_seed_is_bit_identical():
    a = json.dumps(instance_to_dict(build_instance("Bottle", 11)), sort_keys=True)
    b = json.dumps(instance_to_dict(build_instance("Bottle", 11)), sort_keys=True)
    assert a == b
    c = json.dumps(instance_to_dict(build_instance("Bottle", 12)), sort_keys=True)
    assert a != c


def test_bad_inputs():
    with pytest.raises(ValueError):
        build_instance("Teapot", 0)
    with pytest.raises(ValueError):
        build_instance("Safe", 0, GenConfig(open_limit_range=(1.5, 1.3)))


def test_parts_have_one_or_two_joints():
    for cat in CATEGORIES:
        inst = build_instance(cat, 0)
        for p in inst.parts:
            kinds = sorted(inst.joints[j].kind for j in p.joints)
            assert kinds in (["prismatic"], ["revolute"], ["prismatic", "revolute"])
        for j in inst.joints:
            assert abs(np.linalg.norm(j.axis) - 1) < 1e-9


def test_grasp_at_rest_is_static_offset():
    inst = build_instance("Safe", 3)
    gs = grasp(inst, 0)
    p = inst.parts[0]
    expected = inst.base_pose @ p.rest_pose @ geo.translation(p.handle_point)
    assert np.allclose(gs.grasp_pose, expected, atol=1e-12)
    assert gs.attached and not gs.gripper_open


def test_grasp_after_cap_rotation():
    inst = build_instance("Bottle", 2)
    inst.joints[0].value = 0.4
    gs = grasp(inst, 0)
    rest = handle_pose(inst, 0, np.zeros(2))
    R = rodrigues(inst.joints[0].axis, 0.4)
    assert np.allclose(gs.grasp_pose[:3, :3], R @ rest[:3, :3], atol=1e-12)


def test_grasp_errors():
    inst = build_instance("Safe", 0)
    with pytest.raises(KeyError):
        grasp(inst, 99)
    gs = grasp(inst, 0)
    with pytest.raises(RuntimeError):
        grasp(inst, 1, gs)


def test_part_pose_revolute_and_prismatic_oracles():
    inst = build_instance("Microwave", 4)
    door, button = inst.parts
    j0, j1 = inst.joints
    theta, d = 0.7, 0.012
    q = np.array([theta, d])
    hinge = geo.make_pose(rodrigues(j0.axis, theta), j0.anchor - rodrigues(j0.axis, theta) @ j0.anchor)
    assert np.allclose(part_pose(inst, 0, q), inst.base_pose @ hinge @ door.rest_pose, atol=1e-12)
    assert np.allclose(part_pose(inst, 1, q), inst.base_pose @ geo.translation(d * j1.axis) @ button.rest_pose)
    assert np.allclose(part_pose(inst, 0, np.zeros(2)), inst.base_pose @ door.rest_pose)
    with pytest.raises(KeyError):
        part_pose(inst, 5)


def _pull(inst, gs, amount, joint=0, part=0):
    q = inst.joint_values
    q[joint] += amount
    return step_to(inst, gs, handle_pose(inst, part, q))


def test_locked_safe_refuses_pull():
    inst = set_locked(build_instance("Safe", 1), True)
    res = _pull(inst, grasp(inst, 0), 0.3)
    assert res.per_joint_applied[0] == 0.0 and res.blocked[0]


def test_unlocked_safe_pulls():
    inst = set_locked(build_instance("Safe", 1), False)
    res = _pull(inst, grasp(inst, 0), 0.3)
    assert res.per_joint_applied[0] == pytest.approx(0.3, abs=1e-9)
    assert not res.blocked.any()


def test_bottle_rotate_then_lift():
    inst = build_instance("Bottle", 0)
    inst.mechanism = RotateSlide(0.5, 0, 1)
    inst.refresh_limits()
    gs = grasp(inst, 0)
    blocked = _pull(inst, gs, 0.05, joint=1)
    assert blocked.per_joint_applied[1] == 0.0 and blocked.blocked[1]
    _pull(inst, gs, 0.6, joint=0)
    res = _pull(inst, gs, 0.05, joint=1)
    assert res.per_joint_applied[1] == pytest.approx(0.05, abs=1e-9)


def test_success_predicate():
    safe = build_instance("Safe", 0)
    assert not is_success(safe)
    mw = build_instance("Microwave", 0)
    mw.joints[0].value = 0.9 * mw.joints[0].nominal_limits[1]
    assert is_success(mw)


def test_step_errors():
    inst = build_instance("Safe", 0)
    gs = grasp(inst, 0)
    bad = gs.grasp_pose.copy()
    bad[0, 3] = np.nan
    with pytest.raises(ValueError):
        step_to(inst, gs, bad)
    gs.attached = False
    with pytest.raises(RuntimeError):
        step_to(inst, gs, gs.grasp_pose)


def _fuzz(cat, seed, n, rng):
    """Random grasps and random pose targets; yields (instance, grasp, StepResult)."""
    inst = build_instance(cat, seed)
    gs = grasp(inst, 0)
    for _ in range(n):
        if rng.random() < 0.1:
            gs = grasp(inst, int(rng.integers(len(inst.parts))))
        q = inst.joint_values
        for j in range(len(q)):
            lo, hi = inst.joints[j].nominal_limits
            q[j] = np.clip(q[j] + rng.normal(0, 0.3 * (hi - lo)), lo - 0.1, hi + 0.1)
        target = handle_pose(inst, gs.part_id, q)
        target[:3, 3] += rng.normal(0, 0.01, 3)   # off-axis noise must be discarded
        yield inst, gs, step_to(inst, gs, target)


@pytest.mark.parametrize("cat", CATEGORIES)
def test_step_invariants_fuzz(cat):
    rng = np.random.default_rng(100 + CATEGORIES.index(cat))
    for inst, gs, res in _fuzz(cat, 0, 10_000, rng):
        for j, js in enumerate(inst.joints):
            lo, hi = js.effective_limits
            assert lo <= js.value <= hi
            assert lo <= hi
            if res.blocked[j]:
                assert min(abs(js.value - lo), abs(js.value - hi)) < 1e-9
        assert np.all(np.abs(res.per_joint_applied) <= np.abs(res.per_joint_desired) + 1e-12)
        assert np.abs(res.achieved_pose - handle_pose(inst, gs.part_id)).max() < 1e-9
        assert np.allclose(gs.grasp_pose, res.achieved_pose, atol=1e-6)


def test_step_sequences_are_deterministic():
    def run():
        return [(r.per_joint_applied.tobytes(), r.blocked.tobytes(), r.achieved_pose.tobytes())
                for _, _, r in _fuzz("Door", 5, 300, np.random.default_rng(0))]
    assert run() == run()


def test_serialization_roundtrip(tmp_path):
    insts = [build_instance(c, 1) for c in CATEGORIES]
    d = instance_to_dict(insts[0])
    assert d["v"] == 1 and d["mechanism"]["hidden"] is True
    path = tmp_path / "o.json"
    dump_instances(insts, path)
    back = load_instances(path)
    for a, b in zip(insts, back):
        assert instance_to_dict(a) == instance_to_dict(b)
    with pytest.raises(ValueError):
        instance_from_dict({**d, "v": 2})


def test_gen_config_roundtrip():
    cfg = GenConfig()
    assert GenConfig.from_dict(cfg.to_dict()) == cfg
