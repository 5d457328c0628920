"""Forward corruption process: linear noise schedule and step embeddings.

Only the cumulative signal fractions are materialized; per-step transition
noise is never needed because both training and single-pass inference draw
the corrupted vector in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed cumulative schedule for t = 1..T.

    ``one_minus`` is the primary array: the noise fraction ramps linearly
    from scale*alpha_min up to scale, and keeping it (rather than deriving
    it back from alpha_bar) preserves the exact endpoint values that would
    otherwise cancel away near 1.
    """

    num_steps: int
    scale: float
    alpha_min: float
    one_minus: np.ndarray = field(repr=False)

    @property
    def alpha_bar(self) -> np.ndarray:
        return 1.0 - self.one_minus

    def one_minus_alpha_bar(self, t: int) -> float:
        self._check(t)
        return float(self.one_minus[t - 1])

    def signal_std(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) for step t."""
        self._check(t)
        om = self.one_minus[t - 1]
        return float(np.sqrt(1.0 - om)), float(np.sqrt(om))

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise IndexError(f"step {t} outside 1..{self.num_steps}")


def build_schedule(num_steps: int, scale: float = 0.1, alpha_min: float = 0.0001) -> NoiseSchedule:
    """Linear schedule: 1 - alpha_bar_t ramps from scale*alpha_min to scale.

    The ramp is evaluated as alpha_min*(1-f) + f with f = (t-1)/(T-1) so
    both endpoints are exact in floating point.
    """
    if num_steps < 1:
        raise ConfigError(f"num_steps must be >= 1, got {num_steps}")
    if not 0.0 < scale <= 1.0:
        raise ConfigError(f"scale must be in (0, 1], got {scale}")
    if not 0.0 < alpha_min < 1.0:
        raise ConfigError(f"alpha_min must be in (0, 1), got {alpha_min}")
    if num_steps == 1:
        frac = np.zeros(1)
    else:
        frac = np.arange(num_steps, dtype=np.float64) / (num_steps - 1)
    one_minus = scale * (alpha_min * (1.0 - frac) + frac)
    return NoiseSchedule(
        num_steps=num_steps,
        scale=scale,
        alpha_min=alpha_min,
        one_minus=one_minus,
    )


def q_sample(
    x_in: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the step-t corruption of a behavior vector (fresh noise per call)."""
    sig, std = schedule.signal_std(t)
    x = np.asarray(x_in, dtype=np.float64)
    return sig * x + std * rng.standard_normal(x.shape)


def q_sample_batch(
    x_in: np.ndarray,
    t: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Row-wise corruption of a batch, each row at its own step."""
    t = np.asarray(t)
    if t.min() < 1 or t.max() > schedule.num_steps:
        raise IndexError(f"steps outside 1..{schedule.num_steps}")
    om = schedule.one_minus[t - 1][:, None]
    noise = rng.standard_normal(x_in.shape)
    return np.sqrt(1.0 - om) * x_in + np.sqrt(om) * noise


def step_embedding(t: int, d_forward: int) -> np.ndarray:
    """Sinusoidal embedding of an integer step.

    Even slots carry sin(t / 10000^(2j/d)), odd slots the matching cos.
    t = 0 is allowed: it encodes "no added corruption" when only the
    learned per-user embedding should speak.
    """
    if d_forward % 2 != 0 or d_forward < 2:
        raise ConfigError(f"d_forward must be a positive even number, got {d_forward}")
    if t < 0:
        raise ConfigError(f"step must be >= 0, got {t}")
    j = np.arange(d_forward // 2, dtype=np.float64)
    angles = t / np.power(10000.0, 2.0 * j / d_forward)
    out = np.empty(d_forward, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def step_embedding_batch(t: np.ndarray, d_forward: int) -> np.ndarray:
    """Stacked sinusoidal embeddings for a vector of steps."""
    if d_forward % 2 != 0 or d_forward < 2:
        raise ConfigError(f"d_forward must be a positive even number, got {d_forward}")
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    j = np.arange(d_forward // 2, dtype=np.float64)
    angles = t / np.power(10000.0, 2.0 * j / d_forward)[None, :]
    out = np.empty((t.shape[0], d_forward), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out
