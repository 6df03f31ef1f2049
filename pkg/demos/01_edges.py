# %% [markdown]
# # Edge maps of text
#
# The edge map is the binary Canny contour of an image. The network gets it
# as a fourth input channel, and the training loss compares it against the
# ground-truth edges. Here we draw a small text region and look at its edges
# under different thresholds.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from textsr.datapipe import synthetic_region
from textsr.edge import CannyParams, canny, canny_stages, render_edges

out = Path(__file__).with_name("_out")
out.mkdir(exist_ok=True)

img, lines = synthetic_region(64, 160, np.random.default_rng(3), n_lines=2)
print(img.shape, [line.transcript for line in lines])

# %% [markdown]
# Thresholds are fractions of the per-image peak gradient, so scaling the
# brightness leaves the map unchanged.

# %%
e = canny(img)
print("edge pixels:", int(e.sum()))
print("same map at half brightness:", np.array_equal(e, canny(0.5 * img)))

# %% [markdown]
# The intermediate stages are useful when tuning. Lowering the low threshold
# lets more weak pixels join strong ones through hysteresis.

# %%
st = canny_stages(img)
fig, axes = plt.subplots(1, 4, figsize=(14, 2.4))
axes[0].imshow(img)
axes[1].imshow(st.magnitude, cmap="magma")
axes[2].imshow(render_edges(canny(img, CannyParams(low_threshold=0.05)), inverted=True), cmap="gray")
axes[3].imshow(render_edges(e, inverted=True), cmap="gray")
for ax, t in zip(axes, ["input", "gradient magnitude", "low 0.05", "default"]):
    ax.set_title(t)
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "edges.png")
print("wrote", out / "edges.png")
