"""GB-CNN on 8x8 digit images: conv blocks below, boosted dense layers above.

The conv stack keeps training in every stage while earlier dense layers
are frozen.  Tiny filters keep this to about a minute on one core.
"""
import numpy as np
from sklearn.datasets import load_digits

from gbnn import BoostConfig, Dataset, TrainConfig, boost_fit
from gbnn.data import IMAGE, holdout_split, onehot

d = load_digits()
# 8x8 images with pixel counts 0..16, rescaled here to [0, 1]
images = (d.images / 16.0)[..., None]
ds = Dataset(images, onehot(d.target, 10), [str(i) for i in range(10)], IMAGE)
tr, te = holdout_split(len(ds), 0.2, seed=0)

cfg = BoostConfig(iterations=3, hidden_width=20, nu=0.1,
                  conv_filters=(8, 16), conv_dropouts=(0.1, 0.2),
                  train=TrainConfig(epochs=30, batch_size=64, lr=0.003, seed=0))
ens, log = boost_fit(ds.subset(tr), cfg, rng=np.random.default_rng(0), valid=ds.subset(te))

for rec in log.iterations:
    print(f"iteration {rec['iteration']}: train CE {rec['train_ce']:.3f}", end="")
    print(f", test acc {rec['test_acc']:.4f}" if rec["iteration"] else "")

first, last = ens.stages[0], ens.stages[-1]
print("conv layers trainable in last stage:",
      all(layer.trainable for layer in last.layers if layer.kind == "conv2d"))
print("conv weights moved after stage 1:",
      not np.array_equal(first.layers[0].params["W"], last.layers[0].params["W"]))
