# %% [markdown]
# # A small dataset and an evaluation run
#
# We write a synthetic paired dataset to disk, then score the bicubic
# baseline and the ground-truth oracle with the evaluation protocol. The
# template recognizer returns the transcript of the nearest known line crop,
# which makes it a handy stand-in when no trained recognizer is around.

# %%
from pathlib import Path

import numpy as np

from textsr.datapipe import synth_degrade, synthetic_region
from textsr.dataset import load_manifest, manifest_statistics, write_dataset
from textsr.protocol import BicubicAdapter, GroundTruthAdapter, ProtocolConfig, TemplateRecognizer, evaluate
from textsr.report import format_table

out = Path(__file__).with_name("_out") / "toy_dataset"
rng = np.random.default_rng(7)
items = []
for i in range(6):
    hr, lines = synthetic_region(64, 160, rng, n_lines=2)
    items.append((f"r{i:02d}", synth_degrade(hr, 2, blur_sigma=1.0, noise_sigma=0.01, seed=i), lines))
manifest = load_manifest(write_dataset(items, out))
print(manifest_statistics(manifest))

# %%
cfg = ProtocolConfig()
rec = TemplateRecognizer(manifest)
bicubic = evaluate(manifest, BicubicAdapter(2), rec, cfg, jobs=2, name="bicubic")
oracle = evaluate(manifest, GroundTruthAdapter(manifest), rec, cfg, name="ground truth")
print(format_table([bicubic, oracle]))

# %% [markdown]
# Per-line rows keep the language and transcript, so breakdowns are a
# filter away.

# %%
worst = min(bicubic.per_line, key=lambda r: r.psnr)
print(worst)
