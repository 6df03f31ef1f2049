# %% [markdown]
# # Fidelity and recognition metrics
#
# Fidelity is scored with PSNR, SSIM and LPIPS on text-line crops. Readability
# is scored with word accuracy and normalized edit distance (NED) between
# the recognizer output and the transcript.

# %%
import numpy as np

from textsr.imageops import bicubic_downsample, bicubic_upsample
from textsr.metrics import IdentityBackend, RandomConvBackend, edit_distance, lpips, ned, psnr, ssim, word_accuracy
from textsr.datapipe import synthetic_region

hr, _ = synthetic_region(64, 128, np.random.default_rng(0))
up = np.clip(bicubic_upsample(bicubic_downsample(hr, 2), 2), 0, 1)

# %%
print(f"PSNR  {psnr(up, hr):.2f} dB")
print(f"SSIM  {ssim(up, hr):.4f}")
print(f"LPIPS {lpips(up, hr, RandomConvBackend()):.4f}  (random-conv test backend)")
print(f"LPIPS {lpips(up, hr, IdentityBackend()):.4f}  (identity backend, plain MSE)")

# %% [markdown]
# Identical images give an infinite PSNR. Reports keep that as a sentinel
# rather than a large finite number.

# %%
print(psnr(hr, hr))

# %% [markdown]
# Edit distance counts insertions, deletions and substitutions of Unicode
# code points, so a Chinese character counts once.

# %%
for p, g in [("kitten", "sitting"), ("", ""), ("中文", "中国"), ("EXIT", "exit")]:
    print(f"{p!r:10} {g!r:10} ED={edit_distance(p, g)}  NED={ned(p, g):.3f}")

print("ACC:", word_accuracy([("Exit", "EXIT"), ("open", "opem"), ("中文", "中文")]))
