"""Closed-loop receding-horizon rollouts, success-rate evaluation, trials ablation.

Each prediction window yields ``T_p`` absolute goal actions; the first ``T_a``
are executed, unless one of them is refused by the object (blocked), in which
case the rest of the window is dropped and the policy re-plans from the new
history.  Episodes are stepped in lockstep so learned policies can sample all
active episodes in one batch; every episode owns its random stream.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .articulation import INSTANCE_COUNTS, GenConfig, GraspState, build_instance, is_success
from .control import execute
from .diffusion.policy import DivergenceError, sample_trajectory, train
from .expert import Feedback, collect_dataset, expert_next_goal, visible_view
from .mechanisms import CATEGORIES, random_rng, unfavorable
from .perception import observe, sample_points, fps

EVAL_SEED_BASE = 1_000_000   # evaluation instance seeds never overlap training seeds
GROUP_STRIDE = 100_000
WINDOW_BUDGET = 40


@dataclass
class TraceStep:
    obs: np.ndarray
    action: np.ndarray
    achieved: np.ndarray
    blocked: np.ndarray


@dataclass
class EpisodeResult:
    category: str
    seed: int
    success: bool
    windows: int
    trace: list
    unfavorable: bool
    diagnostic: str = ""


@dataclass
class Episode:
    instance: object
    rng: np.random.Generator
    grasp: GraspState
    obs_hist: list
    act_hist: list
    unfavorable: bool
    trace: list = field(default_factory=list)
    windows: int = 0
    done: bool = False
    diagnostic: str = ""
    memory: dict = field(default_factory=dict)

    def histories(self, T_o):
        obs = self.obs_hist[-T_o:]
        obs = [obs[0]] * (T_o - len(obs)) + obs
        acts = [self.obs_hist[0][:10]] + self.act_hist   # home action first
        acts = acts[-T_o:]
        acts = [acts[0]] * (T_o - len(acts)) + acts
        return np.array(obs), np.array(acts)


def start_episode(instance, rng):
    gs = GraspState(attached=False, part_id=-1, grasp_pose=instance.home_pose.copy(), gripper_open=True)
    return Episode(instance, rng, gs, [observe(instance, gs)], [], unfavorable(instance.mechanism))


# --------------------------------------------------------------------------- policies

class ExpertPolicy:
    """The rule-based expert driven through the same action interface."""

    def __init__(self, trials=1, T_p=4, T_a=2):
        self.trials, self.T_p, self.T_a = trials, T_p, T_a

    def propose(self, episodes):
        out = []
        for e in episodes:
            hist = e.memory.setdefault("feedback", [])
            hidden = e.instance.mechanism if self.trials == 0 else None
            goal = expert_next_goal(e.instance.category, visible_view(e.instance), hist, e.grasp,
                                    self.trials, e.rng, hidden)
            e.memory["goal"] = goal
            out.append(np.tile(goal.action(), (self.T_p, 1)))
        return out

    def feedback(self, episode, j, action, ex):
        if j == 0:
            episode.memory["feedback"].append(
                Feedback(episode.memory["goal"], ex.desired, ex.applied, ex.blocked_joints))


class RandomPolicy:
    """Uniform goal poses in a box around the object, random orientation and gripper."""

    def __init__(self, T_p=4, T_a=2, extent=(0.3, 0.35, 0.6)):
        self.T_p, self.T_a = T_p, T_a
        self.extent = np.asarray(extent, float)

    def propose(self, episodes):
        out = []
        for e in episodes:
            rows = []
            for _ in range(self.T_p):
                c = e.instance.base_pose[:3, 3]
                pos = c + e.rng.uniform(-1, 1, 3) * self.extent * np.array([1, 1, 0.5]) \
                    + np.array([0, 0, 0.5 * self.extent[2]])
                axis = e.rng.normal(size=3)
                R = geo.axis_angle(axis / np.linalg.norm(axis), e.rng.uniform(0, np.pi))
                rows.append(np.concatenate([pos, geo.rot6d_encode(R), [float(e.rng.random() < 0.5)]]))
            out.append(np.array(rows))
        return out

    def feedback(self, episode, j, action, ex):
        pass


class DiffusionPolicy:
    def __init__(self, model, n_points=None):
        self.model = model
        self.T_p, self.T_a = model.cfg.T_p, model.cfg.T_a
        self.n_points = n_points or model.cfg.n_points

    def _clouds(self, episodes):
        if not self.model.cfg.pc_features:
            return None
        out = []
        for e in episodes:
            pc = sample_points(e.instance, 2 * self.n_points, int(e.rng.integers(2 ** 32))).points
            out.append(pc[fps(pc, self.n_points)])
        return np.array(out)

    def propose(self, episodes):
        T_o = self.model.cfg.T_o
        hists = [e.histories(T_o) for e in episodes]
        O = np.array([h[0] for h in hists])
        H = np.array([h[1] for h in hists])
        pc = self._clouds(episodes)
        try:
            return list(sample_trajectory(self.model, O, H, [e.rng for e in episodes], pc))
        except (DivergenceError, ValueError):
            pass
        out = []   # isolate the failing episode(s)
        for i, e in enumerate(episodes):
            try:
                out.append(sample_trajectory(self.model, O[i:i + 1], H[i:i + 1], [e.rng],
                                             None if pc is None else pc[i:i + 1])[0])
            except (DivergenceError, ValueError) as err:
                out.append(err)
        return out

    def feedback(self, episode, j, action, ex):
        pass


# --------------------------------------------------------------------------- rollouts

def _fail(e, msg):
    e.done = True
    e.diagnostic = msg


def _run_window(policy, e, window):
    e.windows += 1
    if isinstance(window, Exception):
        return _fail(e, f"sampling failed: {window}")
    for j in range(policy.T_a):
        a = np.asarray(window[j], dtype=float)
        if not np.all(np.isfinite(a)):
            return _fail(e, "non-finite action")
        try:
            target = geo.vector_to_pose(a)
        except ValueError as err:
            return _fail(e, f"invalid rotation: {err}")
        e.grasp, ex = execute(e.instance, e.grasp, target, bool(a[9] > 0.5))
        e.act_hist.append(a)
        e.trace.append(TraceStep(e.obs_hist[-1], a, e.grasp.grasp_pose.copy(), ex.blocked_joints.copy()))
        policy.feedback(e, j, a, ex)
        e.obs_hist.append(observe(e.instance, e.grasp))
        if is_success(e.instance):
            e.done = True
            return
        if ex.blocked:
            return


def run_episodes(policy, episodes, budget=WINDOW_BUDGET):
    for _ in range(budget):
        active = [e for e in episodes if not e.done]
        if not active:
            break
        for e, w in zip(active, policy.propose(active)):
            _run_window(policy, e, w)
    results = []
    for e in episodes:
        diag = e.diagnostic or ("" if is_success(e.instance) else "window budget exhausted")
        results.append(EpisodeResult(e.instance.category, e.instance.seed, is_success(e.instance),
                                     e.windows, e.trace, e.unfavorable, diag))
    return results


def rollout_policy(policy, instance, rng, budget=WINDOW_BUDGET):
    """Single closed-loop episode on ``instance`` (mutated)."""
    return run_episodes(policy, [start_episode(instance, rng)], budget)[0]


# --------------------------------------------------------------------------- evaluation

@dataclass
class SuccessReport:
    rows: list            # dicts: category, episodes, success_rate, std, groups
    results: list         # every EpisodeResult, sorted by (category, seed)
    config: dict

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "episodes", "groups", "success_rate", "std",
                    "unfavorable_episodes", "unfavorable_success_rate"])
        for r in self.rows:
            w.writerow([r["category"], r["episodes"], r["groups"], f"{r['success_rate']:.6f}",
                        f"{r['std']:.6f}", r["unfavorable_episodes"], f"{r['unfavorable_success_rate']:.6f}"])
        return buf.getvalue()

    def rate(self, category=None, unfavorable_only=False):
        sel = [r for r in self.results if (category is None or r.category == category)
               and (r.unfavorable or not unfavorable_only)]
        return float(np.mean([r.success for r in sel])) if sel else float("nan")


def eval_seed(group, index):
    return EVAL_SEED_BASE + group * GROUP_STRIDE + index


def evaluate(policy, categories, episodes_per_category, seeds=1, gen_cfg=None, budget=WINDOW_BUDGET,
             seed=0):
    """Success rates on fresh evaluation instances.

    Episodes of a category are split round-robin over ``seeds`` groups; the
    reported std is across group means.
    """
    if episodes_per_category < 1 or seeds < 1:
        raise ValueError("need episodes >= 1 and seeds >= 1")
    cfg = gen_cfg or GenConfig()
    rows, results = [], []
    for cat in categories:
        cidx = CATEGORIES.index(cat)
        eps, groups = [], []
        for n in range(episodes_per_category):
            g = n % seeds
            s = eval_seed(g, n // seeds)
            eps.append(start_episode(build_instance(cat, s, cfg), random_rng(seed, cidx, s, 7)))
            groups.append(g)
        res = run_episodes(policy, eps, budget)
        groups = np.array(groups)
        ok = np.array([r.success for r in res], dtype=float)
        means = np.array([ok[groups == g].mean() for g in range(seeds) if np.any(groups == g)])
        unf = np.array([r.unfavorable for r in res])
        rows.append({"category": cat, "episodes": len(res), "groups": len(means),
                     "success_rate": float(ok.mean()),
                     "std": float(means.std(ddof=1)) if len(means) >= 2 else 0.0,
                     "unfavorable_episodes": int(unf.sum()),
                     "unfavorable_success_rate": float(ok[unf].mean()) if unf.any() else float("nan")})
        results.extend(res)
    return SuccessReport(rows, results, {"episodes": episodes_per_category, "seeds": seeds,
                                         "budget": budget, "seed": seed})


def ablate_trials(trials_list, category, policy_cfg, gen_cfg=None, per_object=20, instances=None,
                  episodes=100, seeds=1, seed=0, log=None):
    """collect -> train -> evaluate per trials value on shared evaluation seeds."""
    if not trials_list:
        raise ValueError("trials_list must be non-empty")
    gen_cfg = gen_cfg or GenConfig()
    count = instances or INSTANCE_COUNTS[category]
    table = []
    for trials in trials_list:
        ds = collect_dataset([category], per_object=per_object, trials=trials, seed=seed,
                             gen_cfg=gen_cfg, counts=count)
        model = train(ds, policy_cfg)
        rep = evaluate(DiffusionPolicy(model), [category], episodes, seeds, gen_cfg, seed=seed)
        row = dict(rep.rows[0])
        row["trials"] = trials
        row["final_loss"] = model.losses[-1] if model.losses else float("nan")
        table.append(row)
        if log is not None:
            log(row)
    return table


def ablation_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "trials", "episodes", "success_rate", "std",
                "unfavorable_episodes", "unfavorable_success_rate"])
    for r in table:
        w.writerow([r["category"], r["trials"], r["episodes"], f"{r['success_rate']:.6f}", f"{r['std']:.6f}",
                    r["unfavorable_episodes"], f"{r['unfavorable_success_rate']:.6f}"])
    return buf.getvalue()
