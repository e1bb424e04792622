# Closed-loop evaluation on microwaves.
#
# Train a small policy on adaptive demos, then let it act on unseen microwaves.
# A blocked door should send it to the button.

import numpy as np

from artimech.diffusion import PolicyConfig, train
from artimech.expert import collect_dataset
from artimech.harness import DiffusionPolicy, ExpertPolicy, RandomPolicy, evaluate

ds = collect_dataset(["Microwave"], per_object=20, trials=1, seed=0)
print(len(ds.demos), "demos")

model = train(ds, PolicyConfig(epochs=100, lr=1e-3))
print("loss:", round(model.losses[0], 3), "->", round(model.losses[-1], 3))

for name, policy in [("expert", ExpertPolicy()), ("random", RandomPolicy()), ("diffusion", DiffusionPolicy(model))]:
    rep = evaluate(policy, ["Microwave"], 40, seeds=2)
    r = rep.rows[0]
    print(f"{name:10s} success {r['success_rate']:.2f}  locked-only {r['unfavorable_success_rate']:.2f}")

# One locked episode in detail.
locked = sorted((r for r in rep.results if r.unfavorable), key=lambda r: not r.success)
if locked:
    ep = locked[0]
    print("locked episode, success:", ep.success, "windows used:", ep.windows,
          "blocked steps:", sum(t.blocked.any() for t in ep.trace))
