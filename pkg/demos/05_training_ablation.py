# %% [markdown]
# # Does the edge-aware loss help a tiny model?
#
# A small residual network is trained twice on synthetic glyphs: once with
# plain L1 and once with L1 plus the two edge-aware terms. Both runs share
# the seed, data order and architecture. This is a few minutes on a laptop
# CPU; drop ``STEPS`` for a quicker look.

# %%
import numpy as np
import torch

from textsr.datapipe import glyph_dataset
from textsr.losses import LossWeights
from textsr.trainer import ToySRConfig, TrainConfig, build_toy_model, fixture_scores, train

STEPS = 300
torch.set_num_threads(1)
train_pairs = glyph_dataset(64, 2, hr_size=64, seed=1)
test_pairs = glyph_dataset(16, 2, hr_size=64, seed=2)

# %%
results = {}
for name, weights in [("L1", LossWeights(0.0, 0.0)), ("L1+EA", LossWeights(1.0, 5e-4))]:
    model = build_toy_model(ToySRConfig(seed=0, use_edge_input=True))
    model, history = train(model, train_pairs, TrainConfig(max_steps=STEPS, epochs=1000, seed=0, weights=weights))
    results[name] = fixture_scores(model, test_pairs)
    print(name, "final train L1", round(np.mean([h["l1"] for h in history[-20:]]), 4))

# %%
keys = ["psnr", "ssim", "lpips", "edge_l1"]
print(f"{'':8}" + "".join(f"{k:>10}" for k in keys))
for name, s in results.items():
    print(f"{name:8}" + "".join(f"{s[k]:10.4f}" for k in keys))
