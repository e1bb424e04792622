"""Hidden internal mechanisms coupling joint values to effective joint limits.

Each mechanism is a small immutable state machine.  ``apply_mechanism`` reads the
current joint values and returns the updated hidden state together with the
effective limits for every joint the mechanism governs.  Nothing in here is ever
exposed through an observation.
"""

from dataclasses import asdict, dataclass, replace

import numpy as np

CATEGORIES = (
    "Bottle", "Pen", "CoffeeMaker", "Window", "Door",
    "Lamp", "Microwave", "Safe", "PressureCooker",
)

ROTATE_SLIDE_CATEGORIES = ("Bottle", "Pen", "CoffeeMaker", "PressureCooker")
LOCK_CATEGORIES = ("Window", "Door")
SWITCH_CONTACT_CATEGORIES = ("Safe", "Microwave")

# which adaptive mechanisms each category exercises
MECHANISM_TAXONOMY = {
    "Bottle": ("Rotate&Slide",),
    "Pen": ("Rotate&Slide",),
    "CoffeeMaker": ("Rotate&Slide",),
    "PressureCooker": ("Rotate&Slide",),
    "Window": ("Lock", "RandomRotationDirection"),
    "Door": ("Lock", "RandomRotationDirection"),
    "Lamp": ("Push/Rotate",),
    "Safe": ("Lock", "RandomRotationDirection", "SwitchContact"),
    "Microwave": ("Lock", "SwitchContact"),
}

LAMP_MODES = ("push", "rotate_cw", "rotate_ccw")


@dataclass(frozen=True)
class HiddenPriors:
    p_lock: float = 0.5
    angle_range: tuple = (0.3, 1.2)
    press_range: tuple = (0.005, 0.02)

    def validate(self):
        if not 0.0 <= self.p_lock <= 1.0:
            raise ValueError(f"p_lock must lie in [0, 1], got {self.p_lock}")
        for name in ("angle_range", "press_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo > hi ({lo} > {hi})")
        return self


@dataclass(frozen=True)
class Lock:
    locked: bool
    key_joint: int
    unlock_threshold: float
    direction: int
    goal_joint: int

    variant = "Lock"


@dataclass(frozen=True)
class LockSwitchContact(Lock):
    key_part: int = 1
    goal_part: int = 0

    variant = "LockSwitchContact"


@dataclass(frozen=True)
class RotateSlide:
    release_angle: float
    rev_joint: int
    pris_joint: int
    # thread release latches once reached so a lifted part never violates its limit
    released: bool = False

    variant = "RotateSlide"


@dataclass(frozen=True)
class PushRotate:
    mode: str
    press_depth: float
    turn_angle: float
    rev_joint: int
    pris_joint: int
    latch_on: bool = False

    variant = "PushRotate"


_VARIANTS = {cls.variant: cls for cls in (Lock, LockSwitchContact, RotateSlide, PushRotate)}


def mechanism_to_dict(state):
    d = asdict(state)
    d["variant"] = state.variant
    d["hidden"] = True
    return d


def mechanism_from_dict(d):
    d = dict(d)
    cls = _VARIANTS[d.pop("variant")]
    d.pop("hidden", None)
    return cls(**d)


def sample_hidden(category, rng, priors=None):
    """Draw the hidden mechanism payload for ``category`` from ``rng``.

    Joint indices follow the fixed per-category templates in ``articulation``.
    """
    priors = (priors or HiddenPriors()).validate()
    a_lo, a_hi = priors.angle_range
    if category in ROTATE_SLIDE_CATEGORIES:
        return RotateSlide(release_angle=float(rng.uniform(a_lo, a_hi)), rev_joint=0, pris_joint=1)
    if category in LOCK_CATEGORIES:
        locked = bool(rng.random() < priors.p_lock)
        direction = 1 if rng.random() < 0.5 else -1
        theta = float(rng.uniform(a_lo, a_hi))
        return Lock(locked=locked, key_joint=1, unlock_threshold=theta, direction=direction, goal_joint=0)
    if category == "Safe":
        locked = bool(rng.random() < priors.p_lock)
        direction = 1 if rng.random() < 0.5 else -1
        theta = float(rng.uniform(a_lo, a_hi))
        return LockSwitchContact(locked=locked, key_joint=1, unlock_threshold=theta,
                                 direction=direction, goal_joint=0, key_part=1, goal_part=0)
    if category == "Microwave":
        locked = bool(rng.random() < priors.p_lock)
        depth = float(rng.uniform(*priors.press_range))
        return LockSwitchContact(locked=locked, key_joint=1, unlock_threshold=depth,
                                 direction=1, goal_joint=0, key_part=1, goal_part=0)
    if category == "Lamp":
        mode = LAMP_MODES[int(rng.integers(3))]
        depth = float(rng.uniform(*priors.press_range))
        theta = float(rng.uniform(a_lo, a_hi))
        return PushRotate(mode=mode, press_depth=depth, turn_angle=theta, rev_joint=0, pris_joint=1)
    raise ValueError(f"unknown category {category!r}")


def _directional(limits, direction):
    lo, hi = limits
    if direction > 0:
        return (max(lo, 0.0), hi)
    return (lo, min(hi, 0.0))


def apply_mechanism(state, joint_values, nominal_limits):
    """Advance the hidden state and compute effective-limit overrides.

    Returns ``(new_state, overrides)`` where ``overrides`` maps joint index to a
    non-empty ``(lo, hi)`` interval.  Joints not in ``overrides`` use their
    nominal limits.
    """
    q = joint_values
    if isinstance(state, Lock):
        locked = state.locked
        if locked and bool(state.direction * q[state.key_joint] >= state.unlock_threshold):
            locked = False
        if locked != state.locked:
            state = replace(state, locked=locked)
        overrides = {
            state.key_joint: _directional(nominal_limits[state.key_joint], state.direction),
            state.goal_joint: (0.0, 0.0) if locked else tuple(nominal_limits[state.goal_joint]),
        }
        return state, overrides

    if isinstance(state, RotateSlide):
        released = bool(state.released or q[state.rev_joint] >= state.release_angle)
        if released != state.released:
            state = replace(state, released=released)
        pris = tuple(nominal_limits[state.pris_joint]) if released else (0.0, 0.0)
        return state, {state.pris_joint: pris}

    if isinstance(state, PushRotate):
        if state.mode == "push":
            overrides = {state.rev_joint: (0.0, 0.0),
                         state.pris_joint: tuple(nominal_limits[state.pris_joint])}
            crossed = bool(q[state.pris_joint] >= state.press_depth)
        else:
            d = 1 if state.mode == "rotate_ccw" else -1
            overrides = {state.rev_joint: _directional(nominal_limits[state.rev_joint], d),
                         state.pris_joint: (0.0, 0.0)}
            crossed = bool(d * q[state.rev_joint] >= state.turn_angle)
        if crossed and not state.latch_on:
            state = replace(state, latch_on=True)
        return state, overrides

    raise TypeError(f"not a mechanism state: {state!r}")


def unfavorable(state):
    """Whether the hidden state forces at least one failed probe on an adaptive expert."""
    if isinstance(state, Lock):
        return state.locked
    return True


def hidden_flags(state):
    """(locked, latch_on) pair used for monotonicity checks; None where not applicable."""
    locked = state.locked if isinstance(state, Lock) else None
    if isinstance(state, RotateSlide):
        locked = not state.released
    latch = state.latch_on if isinstance(state, PushRotate) else None
    return locked, latch


def random_rng(*keys):
    """Generator seeded by a tuple of integers (category index, seed, ...)."""
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
