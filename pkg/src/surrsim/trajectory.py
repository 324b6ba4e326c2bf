"""Latent tumor-burden trajectories and the landmark surrogate measurement.

The trajectory is a bi-exponential in time, normalized to start at zero:

    f(t) = exp(-ks * t) + exp(kg * t) - 2

ks is the shrinkage rate of the treatment-sensitive disease fraction and kg
the regrowth rate of the resistant fraction, both per-week and both
strictly positive.  Patient heterogeneity comes from lognormal draws of
(ks, kg) around the arm means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrajectoryParams:
    """Per-patient kinetic rates, both per-week and positive."""

    ks: float
    kg: float

    def __post_init__(self):
        if not (self.ks > 0 and math.isfinite(self.ks)):
            raise ValueError(f"ks must be positive and finite, got {self.ks}")
        if not (self.kg > 0 and math.isfinite(self.kg)):
            raise ValueError(f"kg must be positive and finite, got {self.kg}")


def biexp_value(params: TrajectoryParams, t):
    """Evaluate f(t) = exp(-ks t) + exp(kg t) - 2 at scalar or array t.

    Requires t >= 0.  Overflow for absurd kg * t is allowed to surface as
    inf rather than being masked.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("trajectory time must be nonnegative")
    out = np.exp(-params.ks * t) + np.exp(params.kg * t) - 2.0
    if out.ndim == 0:
        return float(out)
    return out


def _lognormal_mu(mean: float, omega: float, anchor: str) -> float:
    # Anchor the lognormal at the configured location: "median" places the
    # distribution's median at the table value, "mean" its expectation.
    # omega is the variance of log K, so the mean anchor shifts by omega/2.
    if anchor == "median":
        return math.log(mean)
    if anchor == "mean":
        return math.log(mean) - 0.5 * omega
    raise ValueError(f"unknown lognormal anchor {anchor!r}")


def sample_params(
    stream: np.random.Generator,
    mean_ks: float,
    mean_kg: float,
    omega_ks: float,
    omega_kg: float,
    anchor: str = "median",
) -> TrajectoryParams:
    """Draw one patient's (ks, kg) from independent lognormals.

    omega_ks and omega_kg are the variances of log(ks) and log(kg).
    Consumes exactly two normal variates from the stream, ks first.
    """
    ks = math.exp(
        _lognormal_mu(mean_ks, omega_ks, anchor)
        + math.sqrt(omega_ks) * stream.standard_normal()
    )
    kg = math.exp(
        _lognormal_mu(mean_kg, omega_kg, anchor)
        + math.sqrt(omega_kg) * stream.standard_normal()
    )
    return TrajectoryParams(ks=ks, kg=kg)


def sample_params_batch(
    stream: np.random.Generator,
    mean_ks,
    mean_kg,
    omega_ks: float,
    omega_kg: float,
    n: int,
    anchor: str = "median",
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized draw of n patients' rates; all ks first, then all kg.

    mean_ks / mean_kg may be scalars or length-n arrays (per-arm means).
    """
    mu_ks = np.log(np.broadcast_to(np.asarray(mean_ks, dtype=float), (n,)))
    mu_kg = np.log(np.broadcast_to(np.asarray(mean_kg, dtype=float), (n,)))
    if anchor == "mean":
        mu_ks = mu_ks - 0.5 * omega_ks
        mu_kg = mu_kg - 0.5 * omega_kg
    elif anchor != "median":
        raise ValueError(f"unknown lognormal anchor {anchor!r}")
    ks = np.exp(mu_ks + math.sqrt(omega_ks) * stream.standard_normal(n))
    kg = np.exp(mu_kg + math.sqrt(omega_kg) * stream.standard_normal(n))
    return ks, kg


@dataclass(frozen=True)
class SurrogateMeasurement:
    """Landmark reading of the trajectory: latent value and noisy observation."""

    true_value: float
    observed: float


def measure_surrogate(
    params: TrajectoryParams,
    t_star: float,
    sigma_err: float,
    stream: np.random.Generator,
) -> SurrogateMeasurement:
    """Observe y = f(t*) + e with e ~ Normal(0, sigma_err^2).

    Consumes exactly one normal variate.
    """
    if t_star <= 0:
        raise ValueError("landmark time must be positive")
    true_value = biexp_value(params, t_star)
    observed = true_value + sigma_err * stream.standard_normal()
    return SurrogateMeasurement(true_value=true_value, observed=observed)
