"""The four benchmark parametric Kolmogorov PDE families.

Each problem couples an initial condition phi_gamma with affine-linear
coefficient maps

    sigma_gamma(x) = [g_{s,1} x | ... | g_{s,d} x] + g_{s,d+1},
    mu_gamma(x)    = g_{m,1} x + g_{m,2},

over a compact parameter box. Parameter components whose domain is a single
point (width zero) are fixed inside the problem definition and excluded from
the free parameter vector, which is what the network actually sees; the
resulting input dimensions are 4 (black_scholes), 53 (basket_put),
111 (heat_paraboloid) and 152 (heat_gaussian).

The free parameter vector ``gamma`` is flat, ordered block by block
(sigma blocks row-major, then mu, then the payoff parameter). Batched
operations take ``gamma`` of shape (B, n_gamma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

Array = np.ndarray

PROBLEM_NAMES = ("black_scholes", "basket_put", "heat_paraboloid", "heat_gaussian")


class UnknownProblemError(ValueError):
    """Problem name is not one of the four benchmarks."""


class NoClosedFormError(ValueError):
    """The problem has no analytic solution map (use the MC reference)."""


class GreeksBoundaryError(ValueError):
    """Greeks requested at t = 0 where theta is singular."""


@dataclass(frozen=True)
class ParamBlock:
    """One free block of the parameter vector with its uniform box bounds."""

    name: str
    shape: tuple[int, ...]
    low: float
    high: float

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int)) if self.shape else 1


@dataclass(frozen=True)
class ProblemSpec:
    """Domains, dimensions and capability flags of one benchmark family."""

    name: str
    d: int
    blocks: tuple[ParamBlock, ...]
    x_low: float
    x_high: float
    horizon: float
    has_exact_sde: bool
    has_closed_form: bool
    additive_noise: bool
    zero_parts: tuple[str, ...]  # coefficient parts pinned to zero-width domains

    @property
    def gamma_dim(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def dim_in(self) -> int:
        return self.gamma_dim + self.d + 1

    def block_slice(self, name: str) -> slice:
        off = 0
        for b in self.blocks:
            if b.name == name:
                return slice(off, off + b.size)
            off += b.size
        raise KeyError(name)

    def split_gamma(self, gamma: Array) -> dict[str, Array]:
        """View a (B, n_gamma) batch as per-block arrays of shape (B, *shape)."""
        gamma = np.asarray(gamma, dtype=np.float64)
        batched = gamma.ndim == 2
        if not batched:
            gamma = gamma[None, :]
        out = {}
        off = 0
        for b in self.blocks:
            part = gamma[:, off:off + b.size].reshape((gamma.shape[0],) + b.shape)
            out[b.name] = part
            off += b.size
        return out


def build_problem(name: str) -> ProblemSpec:
    """Return the spec of one of the four named problems."""
    if name == "black_scholes":
        return ProblemSpec(
            name=name, d=1,
            blocks=(ParamBlock("sigma", (), 0.1, 0.6),
                    ParamBlock("strike", (), 10.0, 12.0)),
            x_low=9.0, x_high=10.0, horizon=1.0,
            has_exact_sde=True, has_closed_form=True, additive_noise=False,
            zero_parts=("sigma_const", "mu_lin", "mu_const"),
        )
    if name == "basket_put":
        return ProblemSpec(
            name=name, d=3,
            blocks=(ParamBlock("sigma_lin", (3, 3, 3), 0.1, 0.6),
                    ParamBlock("sigma_const", (3, 3), 0.1, 0.6),
                    ParamBlock("mu_lin", (3, 3), 0.1, 0.6),
                    ParamBlock("mu_const", (3,), 0.1, 0.6),
                    ParamBlock("strike", (), 10.0, 12.0)),
            x_low=9.0, x_high=10.0, horizon=1.0,
            has_exact_sde=False, has_closed_form=False, additive_noise=False,
            zero_parts=(),
        )
    if name == "heat_paraboloid":
        return ProblemSpec(
            name=name, d=10,
            blocks=(ParamBlock("sigma_const", (10, 10), 0.0, 1.0),),
            x_low=0.5, x_high=1.5, horizon=1.0,
            has_exact_sde=True, has_closed_form=True, additive_noise=True,
            zero_parts=("sigma_lin", "mu_lin", "mu_const"),
        )
    if name == "heat_gaussian":
        return ProblemSpec(
            name=name, d=150,
            blocks=(ParamBlock("sigma_scale", (), 0.0, 0.1),),
            x_low=-0.1, x_high=0.1, horizon=1.0,
            has_exact_sde=True, has_closed_form=True, additive_noise=True,
            zero_parts=("sigma_lin", "mu_lin", "mu_const"),
        )
    raise UnknownProblemError(f"unknown problem {name!r}; expected one of {PROBLEM_NAMES}")


def heat_paraboloid_dim(d: int) -> ProblemSpec:
    """The paraboloid heat family at an arbitrary spatial dimension.

    Used by the dimension sweep; ``d = 10`` coincides with the named
    heat_paraboloid benchmark.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return ProblemSpec(
        name="heat_paraboloid", d=d,
        blocks=(ParamBlock("sigma_const", (d, d), 0.0, 1.0),),
        x_low=0.5, x_high=1.5, horizon=1.0,
        has_exact_sde=True, has_closed_form=True, additive_noise=True,
        zero_parts=("sigma_lin", "mu_lin", "mu_const"),
    )


def gamma_bounds(spec: ProblemSpec) -> tuple[Array, Array]:
    """Per-coordinate (low, high) vectors of the flat free parameter vector."""
    lows = np.concatenate([np.full(b.size, b.low) for b in spec.blocks])
    highs = np.concatenate([np.full(b.size, b.high) for b in spec.blocks])
    return lows, highs


def _as_batch(gamma, x, t):
    gamma = np.asarray(gamma, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if gamma.ndim == 1:
        gamma, x, t = gamma[None, :], x[None, :], t.reshape(1)
    return gamma, x, t


def payoff(spec: ProblemSpec, gamma: Array, s: Array) -> Array:
    """phi_gamma evaluated on a batch of states, shape (B,)."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=np.float64))
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if spec.name == "black_scholes":
        strike = gamma[:, spec.block_slice("strike")][:, 0]
        return np.maximum(strike - s[:, 0], 0.0)
    if spec.name == "basket_put":
        strike = gamma[:, spec.block_slice("strike")][:, 0]
        return np.maximum(strike - s.mean(axis=1), 0.0)
    if spec.name == "heat_paraboloid":
        return np.einsum("ij,ij->i", s, s)
    if spec.name == "heat_gaussian":
        return np.exp(-np.einsum("ij,ij->i", s, s))
    raise UnknownProblemError(spec.name)


def initial_condition(spec: ProblemSpec, gamma: Array, x: Array) -> float:
    """phi_gamma(x) at a single point."""
    g, xx, _ = _as_batch(gamma, np.atleast_1d(x), 0.0)
    return float(payoff(spec, g, xx)[0])


def drift(spec: ProblemSpec, gamma: Array, s: Array) -> Array:
    """mu_gamma(s) on a batch, shape (B, d)."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if spec.name == "basket_put":
        parts = spec.split_gamma(gamma)
        return np.einsum("brc,bc->br", parts["mu_lin"], s) + parts["mu_const"]
    return np.zeros_like(s)


def diffusion_apply(spec: ProblemSpec, gamma: Array, s: Array, db: Array) -> Array:
    """sigma_gamma(s) @ db on a batch without materializing d x d matrices."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    db = np.atleast_2d(np.asarray(db, dtype=np.float64))
    parts = spec.split_gamma(gamma)
    if spec.name == "black_scholes":
        return parts["sigma"][:, None] * s * db
    if spec.name == "basket_put":
        lin = np.einsum("birc,bc,bi->br", parts["sigma_lin"], s, db)
        return lin + np.einsum("brc,bc->br", parts["sigma_const"], db)
    if spec.name == "heat_paraboloid":
        return np.einsum("brc,bc->br", parts["sigma_const"], db)
    if spec.name == "heat_gaussian":
        return parts["sigma_scale"][:, None] * db
    raise UnknownProblemError(spec.name)


def coefficients(spec: ProblemSpec, gamma: Array, x: Array) -> tuple[Array, Array]:
    """(mu, sigma) at a single point: the affine maps evaluated at x."""
    gamma = np.asarray(gamma, dtype=np.float64)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    mu = drift(spec, gamma, x[None, :])[0]
    eye = np.eye(spec.d)
    cols = [diffusion_apply(spec, gamma[None, :], x[None, :], eye[i][None, :])[0]
            for i in range(spec.d)]
    sigma = np.stack(cols, axis=1)
    return mu, sigma


def solution_batch(spec: ProblemSpec, gamma: Array, x: Array, t: Array) -> Array:
    """Closed-form solution map on a batch; basket_put has none."""
    if not spec.has_closed_form:
        raise NoClosedFormError(f"{spec.name} has no closed-form solution; use the MC reference")
    gamma = np.atleast_2d(np.asarray(gamma, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if spec.name == "black_scholes":
        sig = gamma[:, spec.block_slice("sigma")][:, 0]
        strike = gamma[:, spec.block_slice("strike")][:, 0]
        return _bs_value(sig, strike, x[:, 0], t)
    if spec.name == "heat_paraboloid":
        parts = spec.split_gamma(gamma)
        g = parts["sigma_const"].reshape(gamma.shape[0], -1)
        tr = np.einsum("ij,ij->i", g, g)  # Trace(g g*) = sum of squared entries
        return np.einsum("ij,ij->i", x, x) + t * tr
    if spec.name == "heat_gaussian":
        gs = gamma[:, 0]
        c = 1.0 + 2.0 * t * gs * gs
        r2 = np.einsum("ij,ij->i", x, x)
        return np.exp(-r2 / c) / np.power(c, spec.d / 2.0)
    raise UnknownProblemError(spec.name)


def analytic_solution(spec: ProblemSpec, gamma: Array, x: Array, t: float) -> float:
    """Closed-form solution at a single point; t = 0 returns the payoff."""
    g, xx, tt = _as_batch(gamma, np.atleast_1d(x), t)
    return float(solution_batch(spec, g, xx, tt)[0])


def std_normal_cdf(z: Array) -> Array:
    """Psi(z) = (1 + erf(z / sqrt 2)) / 2."""
    return 0.5 * (1.0 + erf(np.asarray(z) / math.sqrt(2.0)))


def std_normal_pdf(z: Array) -> Array:
    """Psi'(z), the standard normal density."""
    z = np.asarray(z)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _bs_h(sig, strike, x, t):
    return -(np.log(x / strike) + 0.5 * t * sig * sig) / (np.sqrt(t) * sig)


def _bs_value(sig: Array, strike: Array, x: Array, t: Array) -> Array:
    """Put value K Psi(h + sqrt(t) sig) - x Psi(h); payoff on the t = 0 slice."""
    sig, strike, x, t = np.atleast_1d(*np.broadcast_arrays(sig, strike, x, t))
    out = np.maximum(strike - x, 0.0).astype(np.float64)
    live = t > 0
    if np.any(live):
        sl, kl, xl, tl = sig[live], strike[live], x[live], t[live]
        h = _bs_h(sl, kl, xl, tl)
        out[live] = kl * std_normal_cdf(h + np.sqrt(tl) * sl) - xl * std_normal_cdf(h)
    return out


@dataclass
class Greeks:
    """Sensitivities of the put price: Delta = du/dx, Vega = du/dsigma, Theta = -du/dt."""

    delta: float
    vega: float
    theta: float


def analytic_greeks_bs(sigma: float, strike: float, x: float, t: float,
                       fd_step: float = 1e-5) -> Greeks:
    """Greeks of the Black-Scholes put.

    Vega comes from the explicit formula x sqrt(t) Psi'(-h); delta and theta
    are fourth-order central differences of the closed form, which makes them
    an independent oracle for derivative checks.
    """
    if t <= 0:
        raise GreeksBoundaryError(
            "theta is singular at t = 0; delta there is the payoff slope")
    vega = float(x * math.sqrt(t) * std_normal_pdf(-_bs_h(sigma, strike, x, t)))

    def value(xx, tt):
        return float(_bs_value(np.asarray(sigma), np.asarray(strike),
                               np.asarray(xx), np.asarray(tt))[0])

    hx = fd_step * max(1.0, abs(x))
    delta = (-value(x + 2 * hx, t) + 8 * value(x + hx, t)
             - 8 * value(x - hx, t) + value(x - 2 * hx, t)) / (12.0 * hx)
    ht = min(fd_step * max(1.0, t), t / 4.0)
    dudt = (-value(x, t + 2 * ht) + 8 * value(x, t + ht)
            - 8 * value(x, t - ht) + value(x, t - 2 * ht)) / (12.0 * ht)
    return Greeks(delta=float(delta), vega=vega, theta=float(-dudt))
