"""Reproducible sampling of predictor points and simulation of SDE targets.

All randomness flows through :class:`RngStream`, a counter-based generator
keyed by (seed, stream id): identical keys give bit-identical sequences and
distinct stream ids give independent streams, so the whole data pipeline is a
pure function of (seed, stream, sizes). Standard normals are produced by
Box-Muller on the raw uniform output. Training, evaluation and initialization
use fixed, distinct stream ids and only ever move forward, which is what makes
the "first epoch never finishes" data regime reproducible: no batch ever
reuses generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problems import (
    ProblemSpec,
    diffusion_apply,
    drift,
    gamma_bounds,
    payoff,
)

Array = np.ndarray

_MASK64 = (1 << 64) - 1

# Fixed stream ids; one seed fans out into independent streams per purpose.
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_THEORY = 3


class DomainError(ValueError):
    """A coordinate lies outside its problem box."""


class NoExactSamplerError(ValueError):
    """The problem's SDE has no closed-form terminal sampler."""


class RngStream:
    """Counter-based random stream addressed by (seed, stream id).

    ``draws`` counts raw uniform doubles consumed, which lets callers assert
    that consecutive batches consume disjoint counter ranges.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.draws = 0

    def random(self, size) -> Array:
        """Uniform doubles in [0, 1)."""
        u = self._gen.random(size)
        self.draws += int(np.prod(size, dtype=int)) if not np.isscalar(size) else int(size)
        return u

    def uniform(self, low, high, size) -> Array:
        """Uniform on [low, high); bounds may be per-column vectors."""
        u = self.random(size)
        return np.asarray(low) + (np.asarray(high) - np.asarray(low)) * u

    def standard_normal(self, size) -> Array:
        """Standard normals via Box-Muller on the uniform output."""
        if np.isscalar(size):
            size = (int(size),)
        n = int(np.prod(size, dtype=int))
        if n == 0:
            return np.empty(size)
        m = (n + 1) // 2
        u1 = self.random(m)
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 in (0, 1], log is finite
        ang = (2.0 * math.pi) * u2
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return z.reshape(size)


@dataclass
class LambdaBatch:
    """A batch of predictor points (gamma, x, t) plus the flattened inputs.

    ``flat`` rows are the standardized network inputs; it is ``None`` for
    internal batches that never reach a network.
    """

    gamma: Array   # (B, n_gamma)
    x: Array       # (B, d)
    t: Array       # (B,)
    flat: Optional[Array]  # (B, dim_in)

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass
class TargetBatch:
    """Simulated regression targets y_i = phi_{gamma_i}(s_i)."""

    y: Array  # (B,)


def input_bounds(spec: ProblemSpec) -> tuple[Array, Array]:
    """(low, high) vectors over the full flattened input (gamma, x, t)."""
    glo, ghi = gamma_bounds(spec)
    lo = np.concatenate([glo, np.full(spec.d, spec.x_low), [0.0]])
    hi = np.concatenate([ghi, np.full(spec.d, spec.x_high), [spec.horizon]])
    return lo, hi


def standardize_slopes(spec: ProblemSpec) -> Array:
    """d(flat)/d(raw) per coordinate: sqrt(12) / box width."""
    lo, hi = input_bounds(spec)
    return math.sqrt(12.0) / (hi - lo)


def flatten_batch(spec: ProblemSpec, gamma: Array, x: Array, t: Array,
                  check: bool = True) -> Array:
    """Standardize raw coordinates to exact zero mean and unit variance.

    Each kept coordinate u ~ U[a, b] maps to (u - (a+b)/2) / ((b-a)/sqrt(12));
    zero-width coordinates were already dropped by the problem definition.
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    raw = np.concatenate([gamma, x, t[:, None]], axis=1)
    lo, hi = input_bounds(spec)
    if raw.shape[1] != lo.shape[0]:
        raise DomainError(f"expected {lo.shape[0]} coordinates, got {raw.shape[1]}")
    if check and (np.any(raw < lo) or np.any(raw > hi)):
        bad = np.argwhere((raw < lo) | (raw > hi))[0]
        raise DomainError(
            f"coordinate {bad[1]} of row {bad[0]} outside its box "
            f"[{lo[bad[1]]}, {hi[bad[1]]}]: {raw[tuple(bad)]}")
    mid = 0.5 * (lo + hi)
    return (raw - mid) * (math.sqrt(12.0) / (hi - lo))


def flatten_input(spec: ProblemSpec, gamma: Array, x: Array, t: float) -> Array:
    """Flatten and standardize a single point to the network input vector."""
    return flatten_batch(spec, np.asarray(gamma)[None, :],
                         np.atleast_1d(x)[None, :], np.asarray([t]))[0]


def sample_lambda(spec: ProblemSpec, rng: RngStream, batch_size: int,
                  with_flat: bool = True) -> LambdaBatch:
    """Draw i.i.d. uniform predictor points over the problem's product box."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    glo, ghi = gamma_bounds(spec)
    gamma = rng.uniform(glo, ghi, (batch_size, spec.gamma_dim))
    x = rng.uniform(spec.x_low, spec.x_high, (batch_size, spec.d))
    t = rng.uniform(0.0, spec.horizon, (batch_size,))
    flat = flatten_batch(spec, gamma, x, t, check=False) if with_flat else None
    return LambdaBatch(gamma=gamma, x=x, t=t, flat=flat)


def simulate_exact(spec: ProblemSpec, batch: LambdaBatch, rng: RngStream) -> Array:
    """Closed-form terminal states for the problems whose SDE solves exactly.

    Geometric Brownian motion for black_scholes, driftless Brownian motion
    with constant diffusion for the heat problems.
    """
    if not spec.has_exact_sde:
        raise NoExactSamplerError(f"{spec.name} has no exact terminal sampler")
    t = batch.t
    if spec.name == "black_scholes":
        sig = batch.gamma[:, 0]
        n = rng.standard_normal((len(batch),))
        return batch.x * np.exp(-0.5 * t * sig * sig + np.sqrt(t) * sig * n)[:, None]
    n = rng.standard_normal((len(batch), spec.d))
    scaled = diffusion_apply(spec, batch.gamma, batch.x, n)
    return batch.x + np.sqrt(t)[:, None] * scaled


def euler_maruyama(spec: ProblemSpec, batch: LambdaBatch, steps: int,
                   rng: RngStream) -> Array:
    """Explicit scheme S <- S + mu(S) t/M + sigma(S) dB over M equidistant steps.

    Brownian increments are independent per step and per sample, with
    variance t_i / M for sample i.
    """
    if steps < 1:
        raise ValueError("euler_maruyama needs at least one step")
    dt = batch.t / steps
    sqdt = np.sqrt(dt)[:, None]
    s = batch.x.copy()
    has_drift = spec.name == "basket_put"
    for _ in range(steps):
        db = sqdt * rng.standard_normal(s.shape)
        incr = diffusion_apply(spec, batch.gamma, s, db)
        if has_drift:
            incr = incr + drift(spec, batch.gamma, s) * dt[:, None]
        s = s + incr
    return s


def simulate_terminal(spec: ProblemSpec, batch: LambdaBatch, rng: RngStream,
                      em_steps: int = 0) -> Array:
    """Exact sampler when available (em_steps = 0), else Euler-Maruyama."""
    if em_steps > 0 or not spec.has_exact_sde:
        return euler_maruyama(spec, batch, em_steps if em_steps > 0 else 25, rng)
    return simulate_exact(spec, batch, rng)


def make_targets(spec: ProblemSpec, batch: LambdaBatch, terminal: Array) -> TargetBatch:
    """y_i = phi_{gamma_i}(s_i) for the simulated terminal states."""
    if terminal.shape[0] != len(batch):
        raise ValueError("terminal states misaligned with batch rows")
    return TargetBatch(y=payoff(spec, batch.gamma, terminal))


def mc_reference(spec: ProblemSpec, gamma: Array, x: Array, t: float,
                 m: int, em_steps: int, rng: RngStream,
                 chunk: int = 1 << 15) -> tuple[float, float]:
    """Monte Carlo estimate of the solution at one point: (mean, std error).

    Averages phi_gamma over m simulated terminal states, using the exact
    sampler when the problem has one and Euler-Maruyama with ``em_steps``
    otherwise. Simulation runs in chunks to bound memory.
    """
    if m < 2:
        raise ValueError("mc_reference needs at least two samples")
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    # accumulate around the first sample so a deterministic payoff (t = 0)
    # yields an exact mean and an exactly zero standard error
    shift = None
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < m:
        c = min(chunk, m - done)
        tile = LambdaBatch(
            gamma=np.broadcast_to(gamma, (c, gamma.shape[0])).copy(),
            x=np.broadcast_to(x, (c, x.shape[0])).copy(),
            t=np.full(c, float(t)),
            flat=None,
        )
        if spec.has_exact_sde:
            s = simulate_exact(spec, tile, rng)
        else:
            s = euler_maruyama(spec, tile, em_steps, rng)
        y = payoff(spec, tile.gamma, s)
        if shift is None:
            shift = float(y[0])
        y_c = y - shift
        total += float(y_c.sum())
        total_sq += float(y_c @ y_c)
        done += c
    mean_c = total / m
    var = max(0.0, (total_sq - m * mean_c * mean_c) / (m - 1))
    return shift + mean_c, math.sqrt(var / m)


def write_samples_csv(path, spec: ProblemSpec, batch: LambdaBatch, y: Array) -> None:
    """Debug dump of a batch as CSV with header gamma...,x...,t,y."""
    cols = [f"gamma_{i}" for i in range(spec.gamma_dim)]
    cols += [f"x_{i}" for i in range(spec.d)]
    cols += ["t", "y"]
    data = np.column_stack([batch.gamma, batch.x, batch.t, np.asarray(y)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
