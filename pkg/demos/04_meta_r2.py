"""Trial-level R2 versus patient-level C on the same simulated landscape.

The question the whole study design targets: if a surrogate ranks
patients well inside trials, does it also predict treatment effects
across trials?  This script runs a small full pipeline (the same code
path as the CLI), then scatters each meta-analysis R2 against the C
index of its held-out discovery trial, split by link strength.  At
alpha=0 both collapse; with a real link the two measures decouple far
more than intuition suggests.

Run from the repository root:  python3 demos/04_meta_r2.py
Writes demos/out/meta_demo/* and demos/out/meta_r2.svg
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

from surrsim.pipeline import run_all
from surrsim.scenario import Profile, ScenarioSpec

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
RUN = OUT / "meta_demo"

spec = ScenarioSpec(
    name="meta-demo",
    ks_active=(0.03, 0.05), ks_control=0.02,
    kg_active=(0.01,), kg_control=0.01,
    alpha_grid=(0.0, 2.0),
    beta1_grid=(0.0, -0.3, -0.6),
).with_profile(Profile("demo", n_per_arm=40, n_replicates=25, n_pairs=20))

for line in run_all(RUN, spec, Profile("demo", 40, 25, 20), seed=42, threads=1):
    print(line)

pairs = pd.read_csv(RUN / "pairs_fixed_dups3.csv")

fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0), sharex=True, sharey=True)
for ax, alpha in zip(axes, (0.0, 2.0)):
    sub = pairs[pairs.alpha == alpha]
    for beta1, color in [(0.0, "tab:grey"), (-0.3, "tab:blue"),
                         (-0.6, "tab:red")]:
        grp = sub[sub.beta1_or_mixed == beta1]
        ax.scatter(grp.c_index, grp.r2, s=14, color=color, alpha=0.7,
                   label=f"beta1={beta1}")
    ax.set_title(f"alpha = {alpha}")
    ax.set_xlabel("discovery-trial C index")
axes[0].set_ylabel("6-study meta-analysis $R^2$")
axes[0].legend(fontsize=8, title="leaked arm effect")

fig.tight_layout()
fig.savefig(OUT / "meta_r2.svg")
print(f"wrote {OUT / 'meta_r2.svg'}")
