"""What the per-class step search does with a good, a useless and a harmful stage.

Two classes, a handful of points.  The step for each class is searched in
[0, 10]; a stage that points the right way gets pushed to a large step, a
stage that points the wrong way is switched off.
"""
import numpy as np

from gbnn.boosting import line_search, nll
from gbnn.data import onehot

y = onehot([0, 0, 1, 1, 0], 2)
f = np.zeros((5, 2))
noise = np.random.default_rng(0).normal(scale=0.2, size=(5, 2))

cases = {
    "helpful": (y - 0.5) + noise,
    "zero": np.zeros((5, 2)),
    "harmful": -(y - 0.5),
    "noisy": np.random.default_rng(1).normal(size=(5, 2)),
}
for name, s in cases.items():
    rho = line_search(f, s, y)
    print(f"{name:8s} rho = {np.round(rho, 4)}   NLL {nll(np.ones(2), f, s, y):7.4f}"
          f" at rho=1 -> {nll(rho, f, s, y):7.4f}")
