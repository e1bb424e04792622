# Adaptive expert demonstrations.
#
# The expert never peeks at the lock.  It probes, watches the feedback and
# recovers.  With trials=0 it is allowed to read the hidden state instead.

import numpy as np

from artimech.articulation import build_instance
from artimech.expert import collect_dataset, probe_count, rollout_expert, sparsify

mw = build_instance("Microwave", 5)
mw.mechanism = type(mw.mechanism)(**{**mw.mechanism.__dict__, "locked": True})
mw.refresh_limits()

for trials in (0, 1, 3):
    demo = rollout_expert(mw.copy(), trials=trials, rng=np.random.default_rng(0))
    steps = [f"{l}{'(x)' if b else ''}" for l, b in zip(demo.labels, demo.blocked)]
    print(f"trials={trials}: {' -> '.join(steps)}   success={demo.outcome}")

# Dense trajectories interpolate between goals; keyframes keep only the goals.
demo, dense = rollout_expert(mw.copy(), trials=1, rng=np.random.default_rng(0), dense=True)
print(len(dense), "dense steps ->", len(sparsify(dense)), "keyframes")

# A small dataset: every demo redraws the hidden state.
ds = collect_dataset(["Microwave", "Lamp"], per_object=5, trials=1, seed=0, counts=4)
print(len(ds.demos), "demos, success", np.mean([d.outcome for d in ds.demos]))
print("failed probes per demo:", [probe_count(d) for d in ds.demos[:10]])
