# A diffusion sampler keeps both answers.
#
# Half the training windows sit at +1, half at -1.  A regressor would average
# them to 0; the denoiser samples one mode or the other.

import numpy as np

from artimech.diffusion import PolicyConfig, fit, grad_check, make_schedule
from artimech.diffusion.policy import make_net, sample_normalized
from artimech.diffusion.toy import assign_modes, two_mode_windows

s = make_schedule(100)
print("alpha_bar at k=1, 50, 100:", s.alpha_bars[[0, 49, 99]].round(4))

# Hand-written backprop agrees with finite differences.
windows, centers, spread = two_mode_windows(1024, seed=0)
net = make_net(PolicyConfig(), cond_dim=8)
print("gradient check:", grad_check(net, windows.batch.rows(np.arange(16))))

model = fit(windows, PolicyConfig(epochs=60, lr=1e-3), log=lambda e, l: e % 20 == 0 and print(f"epoch {e}: {l:.3f}"))
S = sample_normalized(model.net, np.zeros((300, 4)), np.zeros((300, 4)), model.schedule, np.random.default_rng(1))
mode, dist = assign_modes(S, centers, spread)
print("share of mode +1:", round(1 - mode.mean(), 3))
print("within 3 spreads of a center:", (dist <= 3).mean())
print("plain average of the data would be:", windows.batch.A0.mean(axis=0)[:3].round(3), "...")
