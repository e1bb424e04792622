# Hidden mechanisms: same-looking objects, different rules.
#
# Two safes built from the same seed look identical, but one may be locked.
# The lock only shows up when you try to open the door.

import numpy as np

from artimech.articulation import build_instance, grasp, handle_pose, is_success, step_to
from artimech.mechanisms import HiddenPriors, sample_hidden, random_rng

safe = build_instance("Safe", 3)
print(safe.category, "parts:", [p.name for p in safe.parts])
print("hidden state:", safe.mechanism)

# Force the lock on and try pulling the door straight open.
locked = safe.copy()
locked.mechanism = type(safe.mechanism)(**{**safe.mechanism.__dict__, "locked": True})
locked.refresh_limits()

q = locked.joint_values
q[0] = locked.joints[0].nominal_limits[1]
res = step_to(locked, grasp(locked, 0), handle_pose(locked, 0, q))
print("pull on locked door -> blocked:", res.blocked.tolist(), "door angle:", round(locked.joint_values[0], 3))

# Turn the knob past the threshold, then pull again.
h = locked.mechanism
q = locked.joint_values
q[h.key_joint] = h.direction * min(h.unlock_threshold + 0.05, 1.5)
step_to(locked, grasp(locked, 1), handle_pose(locked, 1, q))
print("after knob turn, still locked?", locked.mechanism.locked)

q = locked.joint_values
q[0] = locked.joints[0].nominal_limits[1]
step_to(locked, grasp(locked, 0), handle_pose(locked, 0, q))
print("door angle:", round(locked.joint_values[0], 3), "success:", is_success(locked))

# How often is the lock on?  Sample the prior a few thousand times.
draws = [sample_hidden("Safe", random_rng(0, i), HiddenPriors()).locked for i in range(4000)]
print("fraction locked:", np.mean(draws))
