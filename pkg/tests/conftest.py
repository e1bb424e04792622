import numpy as np
import pytest


def quat_to_matrix(q):
    """Independent rotation oracle: unit quaternion (w, x, y, z) to matrix."""
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rotations(n, seed=0):
    rng = np.random.default_rng(seed)
    return [quat_to_matrix(rng.normal(size=4)) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def precondition_holds(category, hidden0, q):
    """Oracle for the unlocking rule, written from the mechanism description.

    ``hidden0`` is the hidden state at episode start, ``q`` the joint values.
    """
    if category in ("Window", "Door", "Safe", "Microwave"):
        return (not hidden0.locked) or hidden0.direction * q[hidden0.key_joint] >= hidden0.unlock_threshold
    if category == "Lamp":
        if hidden0.mode == "push":
            return q[1] >= hidden0.press_depth
        sign = 1 if hidden0.mode == "rotate_ccw" else -1
        return sign * q[0] >= hidden0.turn_angle
    return q[0] >= hidden0.release_angle
