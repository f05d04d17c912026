"""Seeded synthetic series: a fixed per-period pattern plus noise.

Each sensor gets its own smooth latent pattern indexed by periodic step;
every observed value is that pattern value plus a Gaussian perturbation.
The perturbation is i.i.d. by default, or an AR(1) process when
``noise_correlation`` is set, which mimics external disturbances that
persist across neighboring steps.  With ``noise_scale=0`` the series is
exactly periodic, which makes several engine behaviors provable rather
than statistical.
"""

from __future__ import annotations

from datetime import datetime

import numpy as np

from .dataset import RawSeries


def periodic_pattern(
    steps_per_period: int,
    n_sensors: int,
    amplitude: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Smooth two-harmonic pattern of shape (steps_per_period, n_sensors)."""
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_sensors)
    weight = rng.uniform(0.2, 0.5, size=n_sensors)
    grid = np.arange(steps_per_period)[:, None] / steps_per_period
    base = 0.6 + 0.3 * np.sin(2.0 * np.pi * grid + phase)
    ripple = weight * np.sin(4.0 * np.pi * grid + 2.0 * phase)
    return amplitude * (base + ripple)


def periodic_series(
    n_steps: int,
    n_sensors: int = 1,
    steps_per_period: int = 24,
    amplitude: float = 100.0,
    noise_scale: float = 0.0,
    noise_correlation: float = 0.0,
    seed: int = 0,
    step_interval_minutes: float = 60.0,
    start_timestamp: datetime | str | None = None,
) -> RawSeries:
    """Generate a RawSeries following the pattern-plus-perturbation model.

    ``noise_scale`` is the stationary standard deviation of the
    perturbation.  ``noise_correlation`` is the lag-1 autocorrelation:
    0 gives i.i.d. noise, values in (0, 1) give an AR(1) disturbance
    with the same stationary spread.
    """
    if not 0.0 <= noise_correlation < 1.0:
        raise ValueError("noise_correlation must lie in [0, 1)")
    if isinstance(start_timestamp, str):
        start_timestamp = datetime.fromisoformat(start_timestamp)
    rng = np.random.default_rng(seed)
    pattern = periodic_pattern(steps_per_period, n_sensors, amplitude, rng)
    reps = int(np.ceil(n_steps / steps_per_period))
    values = np.tile(pattern, (reps, 1))[:n_steps].astype(np.float64)
    if noise_scale > 0.0 and noise_correlation > 0.0:
        rho = noise_correlation
        innovation = noise_scale * np.sqrt(1.0 - rho * rho)
        dif = np.empty_like(values)
        dif[0] = rng.normal(0.0, noise_scale, size=n_sensors)
        for i in range(1, n_steps):
            dif[i] = rho * dif[i - 1] + rng.normal(0.0, innovation, size=n_sensors)
        values = values + dif
    elif noise_scale > 0.0:
        values = values + rng.normal(0.0, noise_scale, size=values.shape)
    values.setflags(write=False)
    return RawSeries(
        values=values,
        steps_per_period=steps_per_period,
        step_interval_minutes=step_interval_minutes,
        start_timestamp=start_timestamp,
    )
