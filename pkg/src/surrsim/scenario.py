"""Scenario configuration: simulation presets, cell grids, profiles, RNG streams.

A scenario fixes the biology (tumor kinetic parameter grids) and the trial
design knobs (arm size, horizon, censoring targets).  A *cell* is one point
of the scenario's (active-mean, alpha, beta1) grid; every simulated trial
belongs to exactly one cell.

All times are in weeks.  Month-denominated design inputs are converted with
the fixed factor MONTH_IN_WEEKS, declared here and echoed into every run
manifest so downstream consumers never have to guess the convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

# One month is defined as 4.3482 weeks everywhere in this package.
MONTH_IN_WEEKS = 4.3482

# Landmark for the surrogate measurement: two months.
T_STAR_WEEKS = 2.0 * MONTH_IN_WEEKS

# Administrative horizon: ten years (120 months).
MAX_DURATION_WEEKS = 120.0 * MONTH_IN_WEEKS

_ANCHORS = ("median", "mean")


@dataclass(frozen=True)
class Profile:
    """Run-size profile: how much Monte Carlo to spend."""

    name: str
    n_per_arm: int
    n_replicates: int
    n_pairs: int


PROFILES = {
    "desk": Profile("desk", n_per_arm=100, n_replicates=100, n_pairs=50),
    "paper": Profile("paper", n_per_arm=200, n_replicates=300, n_pairs=100),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete description of one simulation scenario.

    ks_active / kg_active hold the grid of active-arm mean kinetic rates.
    Exactly one of the two varies per scenario: a shrinkage scenario varies
    ks_active and pins kg_active to the single control value, a growth
    scenario does the reverse.  Rates are per-week.  omega_ks / omega_kg are
    the log-scale variances of the patient-level lognormal rate draws.
    """

    name: str
    ks_active: tuple[float, ...]
    ks_control: float
    kg_active: tuple[float, ...]
    kg_control: float
    alpha_grid: tuple[float, ...] = (0.0, 0.5, 2.0, 4.0, 6.0)
    beta1_grid: tuple[float, ...] = (0.0, -0.3, -0.6)
    gamma: float = 1.0
    omega_ks: float = 0.8
    omega_kg: float = 0.6
    sigma_err: float = 0.09
    n_per_arm: int = 200
    n_replicates: int = 300
    t_star: float = T_STAR_WEEKS
    max_duration: float = MAX_DURATION_WEEKS
    target_event_fraction: float = 0.75
    max_early_event_fraction: float = 0.25
    early_event_target: float = 0.10
    lognormal_anchor: str = "median"
    beta0_override: float | None = None

    def __post_init__(self):
        def bad(fieldname, why):
            return ValueError(
                f"scenario {self.name!r}: invalid {fieldname}: {why}"
            )

        object.__setattr__(self, "ks_active", tuple(float(v) for v in self.ks_active))
        object.__setattr__(self, "kg_active", tuple(float(v) for v in self.kg_active))
        object.__setattr__(self, "alpha_grid", tuple(float(v) for v in self.alpha_grid))
        object.__setattr__(self, "beta1_grid", tuple(float(v) for v in self.beta1_grid))

        for fieldname in ("ks_active", "kg_active"):
            vals = getattr(self, fieldname)
            if not vals:
                raise bad(fieldname, "empty grid")
            if any(v <= 0 for v in vals):
                raise bad(fieldname, "rates must be positive")
        if self.ks_control <= 0:
            raise bad("ks_control", "must be positive")
        if self.kg_control <= 0:
            raise bad("kg_control", "must be positive")
        if any(a < 0 for a in self.alpha_grid):
            raise bad("alpha_grid", "alpha must be nonnegative")
        if self.gamma <= 0:
            raise bad("gamma", "must be positive")
        if self.omega_ks < 0 or self.omega_kg < 0:
            raise bad("omega_ks/omega_kg", "spread must be nonnegative")
        if self.sigma_err < 0:
            raise bad("sigma_err", "must be nonnegative")
        if self.n_per_arm < 2:
            raise bad("n_per_arm", "need at least two patients per arm")
        if self.n_replicates < 1:
            raise bad("n_replicates", "need at least one replicate")
        if not 0 < self.t_star < self.max_duration:
            raise bad("t_star", "must lie inside (0, max_duration)")
        if not 0 < self.target_event_fraction <= 1:
            raise bad("target_event_fraction", "must lie in (0, 1]")
        if not 0 < self.max_early_event_fraction <= 1:
            raise bad("max_early_event_fraction", "must lie in (0, 1]")
        if not 0 < self.early_event_target < self.max_early_event_fraction:
            raise bad(
                "early_event_target",
                "must lie in (0, max_early_event_fraction)",
            )
        if self.lognormal_anchor not in _ANCHORS:
            raise bad("lognormal_anchor", f"must be one of {_ANCHORS}")

        # Exactly one family of rates varies across the active grid.
        ks_varies = len(set(self.ks_active)) > 1
        kg_varies = len(set(self.kg_active)) > 1
        if ks_varies and kg_varies:
            raise bad("ks_active/kg_active", "only one rate family may vary")
        if ks_varies and (len(self.kg_active) != 1 or self.kg_active[0] != self.kg_control):
            raise bad("kg_active", "must be the single control value when ks varies")
        if kg_varies and (len(self.ks_active) != 1 or self.ks_active[0] != self.ks_control):
            raise bad("ks_active", "must be the single control value when kg varies")

    @property
    def kind(self) -> str:
        """'ks' when the shrinkage rate varies across cells, else 'kg'."""
        if len(set(self.kg_active)) > 1:
            return "kg"
        return "ks"

    @property
    def active_mean_grid(self) -> tuple[float, ...]:
        return self.ks_active if self.kind == "ks" else self.kg_active

    def with_profile(self, profile: Profile) -> "ScenarioSpec":
        return replace(
            self, n_per_arm=profile.n_per_arm, n_replicates=profile.n_replicates
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ks_active", "kg_active", "alpha_grid", "beta1_grid"):
            d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class Cell:
    """One (active-mean, alpha, beta1) grid point of a scenario."""

    scenario: str
    index: int
    ks_mean_active: float
    kg_mean_active: float
    ks_mean_control: float
    kg_mean_control: float
    alpha: float
    beta1: float


def expand_cells(spec: ScenarioSpec) -> list[Cell]:
    """Enumerate the scenario's cells in a fixed, documented order.

    Order is active-mean (outer), then alpha, then beta1 (inner), with the
    running index stored on each cell.  Cell indices seed the per-trial RNG
    streams, so this order is part of the reproducibility contract.
    """
    cells = []
    index = 0
    for mean in spec.active_mean_grid:
        if spec.kind == "ks":
            ks_mean, kg_mean = mean, spec.kg_active[0]
        else:
            ks_mean, kg_mean = spec.ks_active[0], mean
        for alpha in spec.alpha_grid:
            for beta1 in spec.beta1_grid:
                cells.append(
                    Cell(
                        scenario=spec.name,
                        index=index,
                        ks_mean_active=ks_mean,
                        kg_mean_active=kg_mean,
                        ks_mean_control=spec.ks_control,
                        kg_mean_control=spec.kg_control,
                        alpha=alpha,
                        beta1=beta1,
                    )
                )
                index += 1
    return cells


# Named presets.  Rates are per-week means of the kinetic parameters; the
# active grid sweeps treatment strength from none (control value) upward.
PRESETS = {
    "Ks1": ScenarioSpec(
        name="Ks1",
        ks_active=(0.02, 0.03, 0.04, 0.05, 0.06),
        ks_control=0.02,
        kg_active=(0.01,),
        kg_control=0.01,
    ),
    "Ks1-low": ScenarioSpec(
        name="Ks1-low",
        ks_active=(0.02, 0.025, 0.03, 0.035, 0.04),
        ks_control=0.02,
        kg_active=(0.01,),
        kg_control=0.01,
    ),
    "Ks1-high": ScenarioSpec(
        name="Ks1-high",
        ks_active=(0.04, 0.045, 0.05, 0.055, 0.06),
        ks_control=0.04,
        kg_active=(0.01,),
        kg_control=0.01,
    ),
    "Ks2": ScenarioSpec(
        name="Ks2",
        ks_active=(0.02, 0.03, 0.04, 0.05, 0.06),
        ks_control=0.02,
        kg_active=(0.03,),
        kg_control=0.03,
    ),
    "Kg1": ScenarioSpec(
        name="Kg1",
        ks_active=(0.02,),
        ks_control=0.02,
        kg_active=(0.015, 0.012, 0.008, 0.0045, 0.001),
        kg_control=0.015,
    ),
    "Kg2": ScenarioSpec(
        name="Kg2",
        ks_active=(0.05,),
        ks_control=0.05,
        kg_active=(0.03, 0.025, 0.02, 0.01, 0.005),
        kg_control=0.03,
    ),
}

_SPEC_FIELDS = {f for f in ScenarioSpec.__dataclass_fields__}
_REQUIRED_FIELDS = {"name", "ks_active", "ks_control", "kg_active", "kg_control"}


def scenario_from_dict(raw: dict) -> ScenarioSpec:
    if not isinstance(raw, dict):
        raise ValueError("scenario entry must be a JSON object")
    name = raw.get("name", "<unnamed>")
    unknown = set(raw) - _SPEC_FIELDS
    if unknown:
        raise ValueError(
            f"scenario {name!r}: unknown fields {sorted(unknown)}"
        )
    missing = _REQUIRED_FIELDS - set(raw)
    if missing:
        raise ValueError(
            f"scenario {name!r}: missing required fields {sorted(missing)}"
        )
    return ScenarioSpec(**raw)


def load_scenarios(text: str) -> list[ScenarioSpec]:
    """Parse a JSON scenario config: one object or {"scenarios": [...]}.

    Raises ValueError naming the offending scenario and field on any
    validation failure.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"scenario config is not valid JSON: {exc}") from exc
    if isinstance(raw, dict) and "scenarios" in raw:
        entries = raw["scenarios"]
        if not isinstance(entries, list):
            raise ValueError('"scenarios" must be a list')
    elif isinstance(raw, dict):
        entries = [raw]
    else:
        raise ValueError("scenario config must be a JSON object")
    return [scenario_from_dict(entry) for entry in entries]


def get_scenario(name_or_path: str) -> ScenarioSpec:
    """Resolve a preset name, or a path to a JSON file with one scenario."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    try:
        with open(name_or_path) as fh:
            text = fh.read()
    except OSError:
        raise KeyError(
            f"unknown scenario {name_or_path!r}; presets are "
            f"{sorted(PRESETS)} and no such file exists"
        ) from None
    specs = load_scenarios(text)
    if len(specs) != 1:
        raise ValueError(
            f"{name_or_path}: expected exactly one scenario, got {len(specs)}"
        )
    return specs[0]


# Purpose tags keep the RNG streams of distinct pipeline stages disjoint
# even when they share a (seed, cell, replicate) triple.
_PURPOSES = {"simulate": 0, "calibrate": 1, "pairs": 2}


def derive_stream(
    master_seed: int,
    cell_index: int,
    replicate: int,
    purpose: str = "simulate",
) -> np.random.Generator:
    """Deterministic, collision-resistant RNG stream for one work unit.

    Built on hash-based sub-seeding, so nearby (seed, cell, replicate)
    triples yield statistically independent streams.  Pure: equal inputs
    give generators with identical output sequences.
    """
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    seq = np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=(_PURPOSES[purpose], int(cell_index), int(replicate)),
    )
    return np.random.Generator(np.random.PCG64(seq))
