# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Chaotic augmentation of texture images
#
# Each pixel intensity is pushed through k iterations of a chaotic map.  A
# training pair is one standard view and one chaos-then-standard view of the
# same image.

# %%
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from chaostex.data import SynthSpec, gen_synthetic_textures
from chaostex.dynamics import ChaoticMapSpec
from chaostex.imaging import AugmentConfig, chaotic_augment, image_rng, make_view_pair

OUT = Path("runs/notebooks")
OUT.mkdir(parents=True, exist_ok=True)
corpus = gen_synthetic_textures(SynthSpec())
print(len(corpus), "images,", corpus.n_classes, "classes:", corpus.class_names)

# %% [markdown]
# ## The synthetic corpus
#
# Gratings, checkerboards and power-law noise, with random contrast,
# brightness, gamma and pixel noise on every sample.

# %%
fig, axes = plt.subplots(corpus.n_classes, 6, figsize=(8, 7))
for c in range(corpus.n_classes):
    idx = np.flatnonzero(corpus.labels == c)[:6]
    for ax, i in zip(axes[c], idx):
        ax.imshow(corpus.images[i][:, :, 0], cmap="gray", vmin=0, vmax=1)
        ax.axis("off")
    axes[c, 0].set_title(corpus.class_names[c], fontsize=8, loc="left")
fig.savefig(OUT / "corpus.png", dpi=120)

# %% [markdown]
# ## One image under increasing k

# %%
img = corpus.images[0]
ks = [0, 1, 2, 3, 5, 8]
fig, axes = plt.subplots(3, len(ks), figsize=(9, 5))
for row, name in enumerate(("logistic", "tent", "sine")):
    spec = ChaoticMapSpec(name)
    for ax, k in zip(axes[row], ks):
        ax.imshow(chaotic_augment(img, spec, k)[:, :, 0], cmap="gray", vmin=0, vmax=1)
        ax.set_xticks([])
        ax.set_yticks([])
        if row == 0:
            ax.set_title(f"k={k}")
    axes[row, 0].set_ylabel(name)
fig.savefig(OUT / "augment_k.png", dpi=120)

# %% [markdown]
# ## View pairs
#
# The pair for image i in epoch e is drawn from its own seeded stream, so it
# is reproducible regardless of batch order.

# %%
cfg = AugmentConfig(map=ChaoticMapSpec("sine"))
fig, axes = plt.subplots(2, 5, figsize=(8, 3.2))
for col, i in enumerate(range(0, 200, 40)):
    pair = make_view_pair(corpus.images[i], image_rng(7, i, 2, 0), cfg)
    axes[0, col].imshow(pair.view_i[:, :, 0], cmap="gray", vmin=0, vmax=1)
    axes[1, col].imshow(pair.view_j[:, :, 0], cmap="gray", vmin=0, vmax=1)
    axes[1, col].set_title(f"k={pair.k}", fontsize=8)
for ax in axes.ravel():
    ax.axis("off")
fig.savefig(OUT / "view_pairs.png", dpi=120)
