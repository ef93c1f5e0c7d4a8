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
# # Chaotic maps on the unit interval
#
# The three maps used for augmentation, their Lyapunov exponents and their
# long-run orbit histograms.

# %%
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from chaostex.dynamics import ChaoticMapSpec, invariant_density, iterate, lyapunov_estimate

OUT = Path("runs/notebooks")
OUT.mkdir(parents=True, exist_ok=True)
MAPS = [ChaoticMapSpec(k) for k in ("logistic", "tent", "sine")]

# %% [markdown]
# ## One step of each map

# %%
x = np.linspace(0.0, 1.0, 501)
fig, ax = plt.subplots(figsize=(5, 4))
for spec in MAPS:
    ax.plot(x, iterate(spec, x, 1), label=f"{spec.kind.value} ({spec.param:g})")
ax.plot(x, x, "k:", lw=0.8)
ax.set_xlabel("x")
ax.set_ylabel("f(x)")
ax.legend()
fig.savefig(OUT / "maps.png", dpi=120)

# %% [markdown]
# ## Lyapunov exponents
#
# Positive values mean nearby orbits separate exponentially.  The tent map
# at slope 2 and the logistic map at r = 4 both sit at ln 2.

# %%
for spec in MAPS + [ChaoticMapSpec("logistic", 4.0)]:
    lam = lyapunov_estimate(spec, 0.123, 200_000)
    print(f"{spec.kind.value:9s} {spec.param:<5g} lambda = {lam:.6f}   (ln 2 = {math.log(2):.6f})")

# %% [markdown]
# ## Invariant densities
#
# The tent orbit fills the interval evenly; the logistic orbit piles up near
# 0 and 1, which is what pushes augmented pixels towards black and white.

# %%
bins = 40
fig, axes = plt.subplots(1, 3, figsize=(11, 3), sharey=True)
for ax, spec in zip(axes, MAPS):
    d = invariant_density(spec, 0.123, 500_000, bins)
    ax.bar((np.arange(bins) + 0.5) / bins, d * bins, width=1.0 / bins)
    ax.set_title(spec.kind.value)
    ax.set_xlabel("x")
axes[0].set_ylabel("density")
fig.tight_layout()
fig.savefig(OUT / "densities.png", dpi=120)

# %% [markdown]
# ## Sensitivity to initial conditions

# %%
a, b = 0.3, 0.3 + 1e-10
for spec in MAPS:
    gaps = [abs(float(iterate(spec, a, k)) - float(iterate(spec, b, k))) for k in (0, 10, 20, 30, 40)]
    print(spec.kind.value, " ".join(f"{g:.1e}" for g in gaps))
