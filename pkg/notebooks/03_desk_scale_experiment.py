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
# # Desk-scale experiment
#
# Contrastive pretraining with sine-map views, then two read-outs: a linear
# probe on frozen features and the two-branch SE ensemble under 4-fold
# cross-validation.  Takes about a minute on a laptop CPU.

# %%
from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from chaostex.data import SynthSpec, gen_synthetic_textures
from chaostex.evaluation import ablate_maps, linear_probe
from chaostex.training import FinetuneConfig, PretrainConfig, finetune, init_chaos_encoder, pretrain

OUT = Path("runs/notebooks")
OUT.mkdir(parents=True, exist_ok=True)
JOBS = min(4, os.cpu_count() or 1)
corpus = gen_synthetic_textures(SynthSpec())
pcfg = PretrainConfig()
print(pcfg)

# %% [markdown]
# ## Pretraining

# %%
run = pretrain(corpus, pcfg)
fig, ax = plt.subplots(figsize=(5, 3))
ax.plot(np.arange(1, pcfg.epochs + 1), run.epoch_losses, marker="o")
ax.axhline(np.log(2 * pcfg.batch_size - 1), color="k", ls=":", label="uniform similarity")
ax.set_xlabel("epoch")
ax.set_ylabel("NT-Xent")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "pretrain_loss.png", dpi=120)

# %% [markdown]
# ## Linear probe: random init vs pretrained

# %%
probe = dict(folds=4, seed=pcfg.seed, crop_size=pcfg.crop_size)
rand = linear_probe(init_chaos_encoder(corpus.channels, pcfg), corpus, **probe)
pre = linear_probe(run.encoder, corpus, **probe)
print(f"random     {rand.mean:.4f} +/- {rand.std:.4f}")
print(f"pretrained {pre.mean:.4f} +/- {pre.std:.4f}   gain {100 * (pre.mean - rand.mean):+.1f} points")

# %% [markdown]
# ## SE ensemble and its single-branch ablations

# %%
fcfg = FinetuneConfig(seed=pcfg.seed)
results = {br: finetune(corpus, run.encoder, fcfg, branches=br, jobs=JOBS) for br in ("both", "sup", "chaos")}
for br, res in results.items():
    s = res.summary()
    print(f"{br:6s} accuracy {s['mean_accuracy']:.4f} +/- {s['std_accuracy']:.4f}  macro F1 {s['mean_macro_f1']:.4f}")

# %%
cm = sum(f.confusion for f in results["both"].folds)
fig, ax = plt.subplots(figsize=(4, 4))
ax.imshow(cm / cm.sum(axis=1, keepdims=True), cmap="Blues", vmin=0, vmax=1)
ax.set_xticks(range(corpus.n_classes), corpus.class_names, rotation=45)
ax.set_yticks(range(corpus.n_classes), corpus.class_names)
ax.set_xlabel("predicted")
ax.set_ylabel("true")
fig.tight_layout()
fig.savefig(OUT / "confusion.png", dpi=120)

# %% [markdown]
# ## Map ablation
#
# The ranking between maps moves with the seed at this scale, so it is a
# reading, not a result.

# %%
grid = ablate_maps(corpus, pcfg)
for r in grid.rows:
    print(f"{r.epochs:3d} {r.map:9s} {r.accuracy:.4f}  F1 {r.macro_f1:.4f}")
print("random-init", f"{grid.baseline.mean:.4f}")
for line in grid.ordering():
    print(line)
