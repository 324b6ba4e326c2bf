"""Tumor-burden trajectory shapes and their between-patient spread.

The longitudinal signal everything else hangs off is the biexponential
f(t) = exp(-Ks t) + exp(Kg t) - 2: Ks pulls the burden down early, Kg
grows it back.  This script draws the mean curves for a few (Ks, Kg)
settings and overlays a fan of lognormal patient-level draws around one
of them, marking the landmark week where the surrogate is read.

Run from the repository root:  python3 demos/01_trajectory_shapes.py
Writes demos/out/trajectory_shapes.svg
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from surrsim.scenario import T_STAR_WEEKS, derive_stream
from surrsim.trajectory import TrajectoryParams, biexp_value, sample_params_batch

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

t = np.linspace(0.0, 60.0, 400)
fig, (ax_mean, ax_fan) = plt.subplots(1, 2, figsize=(9.5, 4.0), sharey=True)

# Left panel: how the mean curve responds to shrink and growth rates.
for ks, kg in [(0.02, 0.01), (0.05, 0.01), (0.02, 0.02), (0.06, 0.005)]:
    ax_mean.plot(t, biexp_value(TrajectoryParams(ks, kg), t),
                 label=f"Ks={ks}, Kg={kg}")
ax_mean.axvline(T_STAR_WEEKS, color="grey", ls=":", lw=1)
ax_mean.set_title("mean trajectories")
ax_mean.set_xlabel("weeks")
ax_mean.set_ylabel("relative tumor burden change")
ax_mean.legend(fontsize=8)

# Right panel: one setting, many patients.  The rates are lognormal, so a
# median-anchored cloud is asymmetric: fast regrowers peel upward early.
stream = derive_stream(42, 0, 0)
n = 40
ks_draw, kg_draw = sample_params_batch(
    stream, np.full(n, 0.03), np.full(n, 0.01), 0.8, 0.6, n
)
for ks_i, kg_i in zip(ks_draw, kg_draw):
    ax_fan.plot(t, biexp_value(TrajectoryParams(ks_i, kg_i), t),
                color="tab:blue", alpha=0.25, lw=0.8)
ax_fan.plot(t, biexp_value(TrajectoryParams(0.03, 0.01), t),
            color="black", lw=2, label="median patient")
ax_fan.axvline(T_STAR_WEEKS, color="grey", ls=":", lw=1)
ax_fan.annotate("landmark $t^*$", (T_STAR_WEEKS, ax_fan.get_ylim()[1] * 0.9),
                fontsize=8, color="grey")
ax_fan.set_title("40 patients, Ks=0.03 Kg=0.01")
ax_fan.set_xlabel("weeks")
ax_fan.set_ylim(-0.6, 1.5)
ax_fan.legend(fontsize=8)

fig.tight_layout()
fig.savefig(OUT / "trajectory_shapes.svg")
print(f"wrote {OUT / 'trajectory_shapes.svg'}")
