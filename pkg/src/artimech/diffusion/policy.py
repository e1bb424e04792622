"""Noise-prediction training, reverse sampling and model files for action windows.

Windows are built from keyframe demonstrations: at keyframe ``t`` the condition is
the last ``T_o`` observations (ending at ``t``) and the ``T_o`` actions commanded
before ``t``; the target is the next ``T_p`` actions.  Short histories are edge
padded, the action history with the home action (the start pose).
"""

import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import geometry as geo
from ..perception import Stats, denormalize, normalize
from .net import DenoiserNet
from .schedule import NoiseSchedule, make_schedule

ACTION_DIM = 10
COND_CLIP = 5.0
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MODEL_VERSION = 1


class DivergenceError(RuntimeError):
    pass


@dataclass
class PolicyConfig:
    T_o: int = 4
    T_p: int = 4
    T_a: int = 2
    K: int = 100
    action_dim: int = ACTION_DIM
    hidden: tuple = (256, 256)
    lr: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 64
    epochs: int = 500
    ema_decay: float = 0.995
    seed: int = 0
    pc_features: int = 0        # >0 enables the point-cloud encoder
    n_points: int = 4096        # FPS target size for the point-cloud variant
    skip: bool = True           # add sqrt(1 - alpha_bar_k) * A^k to the network output

    def validate(self):
        if not 1 <= self.T_a <= self.T_p:
            raise ValueError("need 1 <= T_a <= T_p")
        if self.K < 1 or self.T_o < 1:
            raise ValueError("need K >= 1 and T_o >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("bad batch_size / epochs")
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown policy config keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d).validate()


@dataclass
class Batch:
    """Aligned rows in normalized space; ``pc`` is an optional (B, N, 3) cloud."""

    A0: np.ndarray
    O: np.ndarray
    H: np.ndarray
    pc: np.ndarray = None

    def __len__(self):
        return len(self.A0)

    def rows(self, idx):
        return Batch(self.A0[idx], self.O[idx], self.H[idx], None if self.pc is None else self.pc[idx])

    @property
    def cond(self):
        return np.concatenate([self.O, self.H], axis=1)


@dataclass
class Windows:
    batch: Batch
    obs_stats: Stats
    act_stats: Stats
    categories: list = field(default_factory=list)


@dataclass
class TrainedModel:
    net: DenoiserNet
    cfg: PolicyConfig
    schedule: NoiseSchedule
    obs_stats: Stats
    act_stats: Stats
    losses: list = field(default_factory=list)

    @property
    def obs_dim(self):
        return len(self.obs_stats.mean)


# --------------------------------------------------------------------------- windows

def condition(obs_hist, act_hist, obs_stats, act_stats):
    """Flattened, normalized, clipped condition rows from (B, T_o, .) histories."""
    o = np.clip(normalize(obs_hist, obs_stats), -COND_CLIP, COND_CLIP)
    h = np.clip(normalize(act_hist, act_stats), -COND_CLIP, COND_CLIP)
    return o.reshape(len(o), -1), h.reshape(len(h), -1)


def build_windows(dataset, cfg, point_clouds=None):
    """Training rows for every keyframe of every demo.

    ``point_clouds``, if given, is a list (per demo) of (n_kf, N, 3) arrays.
    """
    if not dataset.demos:
        raise ValueError("empty dataset")
    O, H, A, cats, P = [], [], [], [], []
    for d_i, demo in enumerate(dataset.demos):
        obs = np.array([o for o, _ in demo.keyframes])
        acts = np.array([a for _, a in demo.keyframes])
        n = len(obs)
        padded = np.vstack([obs[0, :ACTION_DIM][None], acts])   # index 0 is the home action
        t = np.arange(n)[:, None]
        oi = np.clip(t + np.arange(-cfg.T_o + 1, 1), 0, n - 1)
        hi = np.clip(t + np.arange(-cfg.T_o, 0) + 1, 0, n)
        ai = np.clip(t + np.arange(cfg.T_p), 0, n - 1)
        O.append(obs[oi])
        H.append(padded[hi])
        A.append(acts[ai])
        cats.extend([demo.category] * n)
        if point_clouds is not None:
            P.append(point_clouds[d_i])
    O, H, A = np.concatenate(O), np.concatenate(H), np.concatenate(A)
    o, h = condition(O, H, dataset.obs_stats, dataset.act_stats)
    a0 = normalize(A, dataset.act_stats).reshape(len(A), -1)
    pc = np.concatenate(P) if point_clouds is not None else None
    return Windows(Batch(a0, o, h, pc), dataset.obs_stats, dataset.act_stats, cats)


# --------------------------------------------------------------------------- diffusion primitives

def q_sample(a0, k, eps, schedule):
    a0, eps = np.asarray(a0, float), np.asarray(eps, float)
    if a0.shape != eps.shape:
        raise ValueError(f"shape mismatch {a0.shape} vs {eps.shape}")
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > schedule.K):
        raise ValueError("k out of range")
    ab = schedule.alpha_bars[k - 1]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (a0.ndim - ab.ndim))
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def _normal(rng, shape):
    """Standard normals; a list of generators draws one row each."""
    if isinstance(rng, (list, tuple)):
        return np.stack([r.standard_normal(shape[1:]) for r in rng])
    return rng.standard_normal(shape)


def _eps(net, A_k, k, cond, pc):
    ks = np.full(len(A_k), k)
    if isinstance(net, DenoiserNet):
        return net.predict(A_k, ks, cond, pc)
    return net(A_k, ks, cond)


def denoise_step(net, A_k, O_t, A_hist, k, schedule, rng, pc=None):
    """One reverse step: alpha_k * (A_k - gamma_k * eps) + sigma_k * z."""
    if not 1 <= k <= schedule.K:
        raise ValueError("k out of range")
    A_k = np.atleast_2d(np.asarray(A_k, float))
    cond = np.concatenate([np.atleast_2d(O_t), np.atleast_2d(A_hist)], axis=1)
    alpha, gamma, sigma = schedule.coefficients(k)
    out = alpha * (A_k - gamma * _eps(net, A_k, k, cond, pc))
    if sigma > 0:
        out = out + sigma * _normal(rng, A_k.shape)
    return out


def sample_normalized(net, O_t, A_hist, schedule, rng, pc=None, width=None):
    """Full reverse chain in normalized space; returns (B, width)."""
    O_t, A_hist = np.atleast_2d(O_t), np.atleast_2d(A_hist)
    width = width or net.in_dim
    A = _normal(rng, (len(O_t), width))
    for k in range(schedule.K, 0, -1):
        A = denoise_step(net, A, O_t, A_hist, k, schedule, rng, pc)
        if not np.all(np.isfinite(A)):
            raise DivergenceError(f"non-finite sample at step k={k}")
    return A


def project_rotations(actions):
    """Snap the 6D rotation slots of (..., 10) actions onto valid rotations."""
    out = np.array(actions, dtype=float)
    flat = out.reshape(-1, ACTION_DIM)
    R = geo.rot6d_decode(flat[:, 3:9])
    flat[:, 3:9] = geo.rot6d_encode(R)
    return out


def sample_trajectory(model, obs_hist, act_hist, rng, pc=None):
    """Sample action windows from raw (B, T_o, .) histories; returns (B, T_p, 10)."""
    obs_hist, act_hist = np.asarray(obs_hist, float), np.asarray(act_hist, float)
    if obs_hist.ndim == 2:
        obs_hist, act_hist = obs_hist[None], act_hist[None]
    o, h = condition(obs_hist, act_hist, model.obs_stats, model.act_stats)
    A = sample_normalized(model.net, o, h, model.schedule, rng, pc)
    A = denormalize(A.reshape(len(A), model.cfg.T_p, ACTION_DIM), model.act_stats)
    return project_rotations(A)


# --------------------------------------------------------------------------- training

def loss_fixed(net, batch, k, eps, schedule, params=None):
    """Noise-prediction loss and gradient for given timesteps and noise."""
    p = net.params if params is None else params
    x = q_sample(batch.A0, k, eps, schedule)
    B = len(batch)

    def dout(out):
        diff = out - eps
        return float(np.sum(diff * diff) / B), 2.0 * diff / B

    return net.forward_backward(p, x, k, batch.cond, batch.pc, dout)


def loss_and_grad(net, batch, schedule, rng, params=None):
    k = rng.integers(1, schedule.K + 1, size=len(batch))
    eps = rng.standard_normal(batch.A0.shape)
    return loss_fixed(net, batch, k, eps, schedule, params)


def make_net(cfg, cond_dim, activation="silu"):
    skip = np.sqrt(1.0 - make_schedule(cfg.K).alpha_bars) if cfg.skip else None
    return DenoiserNet(cfg.T_p * cfg.action_dim, cond_dim, cfg.hidden, cfg.pc_features,
                       activation=activation, seed=cfg.seed, skip=skip)


def fit(windows, cfg, log=None, net=None):
    """Adam + L2 weight decay + EMA over shuffled minibatches; returns TrainedModel."""
    cfg.validate()
    batch = windows.batch
    schedule = make_schedule(cfg.K)
    if net is None:
        net = make_net(cfg, batch.cond.shape[1])
    rng = np.random.default_rng([cfg.seed, 1])
    m = np.zeros_like(net.params)
    v = np.zeros_like(net.params)
    b1, b2 = ADAM_BETAS
    step = 0
    losses = []
    n = len(batch)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            rows = batch.rows(perm[s:s + cfg.batch_size])
            loss, g = loss_and_grad(net, rows, schedule, rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}")
            g = g + cfg.weight_decay * net.params
            step += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            net.params -= cfg.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
            net.ema = cfg.ema_decay * net.ema + (1 - cfg.ema_decay) * net.params
            total += loss * len(rows)
        losses.append(total / n)
        if log is not None:
            log(epoch, losses[-1])
    return TrainedModel(net, cfg, schedule, windows.obs_stats, windows.act_stats, losses)


def train(dataset, cfg, log=None, point_clouds=None):
    return fit(build_windows(dataset, cfg, point_clouds), cfg, log)


def grad_check(net, batch, schedule=None, rng=None, n_params=200, h=1e-5, grad_fn=None):
    """Max relative error of the analytic gradient vs central differences.

    ``grad_fn(params, k, eps)`` replaces the analytic gradient (negative controls).
    """
    schedule = schedule or make_schedule(10)
    rng = rng if rng is not None else np.random.default_rng(0)
    k = rng.integers(1, schedule.K + 1, size=len(batch))
    eps = rng.standard_normal(batch.A0.shape)
    p = net.params.copy()
    if grad_fn is None:
        g = loss_fixed(net, batch, k, eps, schedule, p)[1]
    else:
        g = grad_fn(p, k, eps)
    idx = rng.choice(len(p), size=min(n_params, len(p)), replace=False)
    worst = 0.0
    for i in idx:
        q = p.copy()
        q[i] += h
        up = loss_fixed(net, batch, k, eps, schedule, q)[0]
        q[i] -= 2 * h
        dn = loss_fixed(net, batch, k, eps, schedule, q)[0]
        fd = (up - dn) / (2 * h)
        err = abs(g[i] - fd) / max(abs(g[i]), 1e-8)
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------- model files

def _stats_dict(s):
    return {"mean": [float(x) for x in s.mean], "std": [float(x) for x in s.std]}


def save_model(model, path):
    """uint64 LE header length, JSON header, raw params then EMA params (float64 LE)."""
    header = {
        "v": MODEL_VERSION,
        "net": model.net.header(),
        "cfg": model.cfg.to_dict(),
        "schedule": model.schedule.to_dict(),
        "obs_stats": _stats_dict(model.obs_stats),
        "act_stats": _stats_dict(model.act_stats),
        "n_params": int(model.net.size),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(np.asarray(model.net.params, dtype="<f8").tobytes())
        f.write(np.asarray(model.net.ema, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as f:
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n))
        if header.get("v") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {header.get('v')!r}")
        raw = np.frombuffer(f.read(), dtype="<f8")
    size = header["n_params"]
    if len(raw) != 2 * size:
        raise ValueError("truncated model file")
    cfg = PolicyConfig.from_dict(header["cfg"])
    h = header["net"]
    schedule = make_schedule(cfg.K)
    skip = np.sqrt(1.0 - schedule.alpha_bars) if h["skip"] else None
    net = DenoiserNet(h["in_dim"], h["cond_dim"], h["hidden"], h["pc_features"], h["activation"],
                      seed=cfg.seed, skip=skip)
    net.params = raw[:size].astype(float)
    net.ema = raw[size:].astype(float)
    stats = [Stats(np.array(header[k]["mean"]), np.array(header[k]["std"])) for k in ("obs_stats", "act_stats")]
    return TrainedModel(net, cfg, schedule, stats[0], stats[1])
