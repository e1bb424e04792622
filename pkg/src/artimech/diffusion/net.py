"""Feedforward noise-prediction network with hand-written backprop.

All parameters live in one flat float64 vector so the optimizer, the EMA shadow,
gradient checks and serialization can treat them uniformly.
"""

import numpy as np

EMBED_DIM = 32


def timestep_embedding(k, dim=EMBED_DIM):
    k = np.atleast_1d(np.asarray(k, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _silu(h):
    s = 0.5 * (1.0 + np.tanh(0.5 * h))
    return h * s, s


class MLP:
    """Dense layers; SiLU between layers, linear output.

    ``activation="identity"`` gives a purely linear map (used for exact gradient
    checks).
    """

    def __init__(self, sizes, activation="silu"):
        self.sizes = list(sizes)
        self.activation = activation
        self.layout = []
        off = 0
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.layout.append((f"W{i}", (a, b), off))
            off += a * b
            self.layout.append((f"b{i}", (b,), off))
            off += b
        self.size = off

    def views(self, p):
        return {name: p[o:o + int(np.prod(shape))].reshape(shape) for name, shape, o in self.layout}

    def init(self, rng):
        p = np.zeros(self.size)
        v = self.views(p)
        for i, (a, _) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            v[f"W{i}"][...] = rng.normal(0.0, 1.0 / np.sqrt(a), size=v[f"W{i}"].shape)
        return p

    def forward(self, p, x):
        v = self.views(p)
        n = len(self.sizes) - 1
        cache = [x]
        h = x
        for i in range(n):
            z = h @ v[f"W{i}"] + v[f"b{i}"]
            if i < n - 1 and self.activation == "silu":
                h, s = _silu(z)
                cache.append((z, s, h))
            elif i < n - 1:
                h = z
                cache.append((z, None, h))
            else:
                h = z
        return h, cache

    def backward(self, p, cache, dy):
        """Gradient w.r.t. parameters and input given upstream ``dy``."""
        v = self.views(p)
        g = np.zeros_like(p)
        gv = self.views(g)
        n = len(self.sizes) - 1
        d = dy
        for i in reversed(range(n)):
            h_in = cache[i] if i == 0 else cache[i][2]
            gv[f"W{i}"][...] = h_in.T @ d
            gv[f"b{i}"][...] = d.sum(axis=0)
            d = d @ v[f"W{i}"].T
            if i > 0:
                z, s, _ = cache[i]
                if s is not None:
                    d = d * (s + z * s * (1.0 - s))
        return g, d


class DenoiserNet:
    """eps_theta(noisy window, k, condition[, point cloud]).

    Parameters: optional point encoder (per-point linear map + max pool) followed
    by the MLP trunk.  ``params`` are the trained weights, ``ema`` the shadow
    used at inference.
    """

    def __init__(self, in_dim, cond_dim, hidden=(256, 256), pc_features=0, activation="silu", seed=0,
                 skip=None):
        self.in_dim = in_dim
        # optional parameter-free term skip[k-1] * x added to the output
        self.skip = None if skip is None else np.asarray(skip, dtype=float)
        self.cond_dim = cond_dim
        self.hidden = tuple(hidden)
        self.pc_features = pc_features
        self.activation = activation
        self.trunk = MLP([in_dim + EMBED_DIM + cond_dim + pc_features, *self.hidden, in_dim], activation)
        self.n_pc = 4 * pc_features if pc_features else 0   # 3x F weights + F bias
        rng = np.random.default_rng(seed)
        enc = rng.normal(0.0, 1.0, size=self.n_pc) if pc_features else np.zeros(0)
        if pc_features:
            enc[3 * pc_features:] = 0.0
        self.params = np.concatenate([self.trunk.init(rng), enc])
        self.ema = self.params.copy()

    @property
    def size(self):
        return len(self.params)

    def _split(self, p):
        return p[:self.trunk.size], p[self.trunk.size:]

    def _encode(self, pe, pc):
        F = self.pc_features
        W, b = pe[:3 * F].reshape(3, F), pe[3 * F:]
        feat = pc @ W + b                 # (B, N, F)
        idx = feat.argmax(axis=1)         # (B, F)
        pooled = np.take_along_axis(feat, idx[:, None, :], axis=1)[:, 0, :]
        return pooled, idx

    def _inputs(self, pe, x, k, cond, pc):
        parts = [x, timestep_embedding(k), cond]
        idx = None
        if self.pc_features:
            if pc is None:
                raise ValueError("this net expects a point cloud")
            pooled, idx = self._encode(pe, pc)
            parts.append(pooled)
        return np.concatenate(parts, axis=1), idx

    def predict(self, x, k, cond, pc=None, params=None):
        p = self.ema if params is None else params
        pt, pe = self._split(p)
        z, _ = self._inputs(pe, x, k, cond, pc)
        return self.trunk.forward(pt, z)[0] + self._skip(x, k)

    def _skip(self, x, k):
        if self.skip is None:
            return 0.0
        return self.skip[np.asarray(k) - 1][:, None] * x

    def forward_backward(self, p, x, k, cond, pc, dout_fn):
        """Forward pass, then backprop ``dout_fn(out) -> (loss, d_out)``."""
        pt, pe = self._split(p)
        z, idx = self._inputs(pe, x, k, cond, pc)
        out, cache = self.trunk.forward(pt, z)
        loss, dout = dout_fn(out + self._skip(x, k))
        gt, dz = self.trunk.backward(pt, cache, dout)
        ge = np.zeros_like(pe)
        if self.pc_features:
            F = self.pc_features
            dpool = dz[:, -F:]
            chosen = pc[np.arange(len(pc))[:, None], idx]   # winning point per feature, (B, F, 3)
            ge[:3 * F] = np.einsum("bfc,bf->cf", chosen, dpool).ravel()
            ge[3 * F:] = dpool.sum(axis=0)
        return loss, np.concatenate([gt, ge])

    def header(self):
        return {"in_dim": self.in_dim, "cond_dim": self.cond_dim, "hidden": list(self.hidden),
                "pc_features": self.pc_features, "activation": self.activation,
                "skip": self.skip is not None,
                "shapes": [[name, list(shape)] for name, shape, _ in self.trunk.layout]
                + ([["pc_W", [3, self.pc_features]], ["pc_b", [self.pc_features]]] if self.pc_features else [])}
