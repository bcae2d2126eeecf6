"""Executable desk-scale checks of the identities behind the method.

Three families of checks:

* the regression identity E[phi_Gamma(S_lambda) | lambda] = u(lambda),
  verified by a Monte Carlo z-score against the closed form;
* the strong Euler-Maruyama rate error ~ 1/sqrt(M), measured on coupled
  Brownian paths (shared increments) and fitted on log-log axes — for
  additive noise the scheme telescopes and is exact up to float rounding;
* the constructive ReLU approximants from the approximation proofs: the
  dyadic sawtooth net for x^2 on [0,1] and its composition (via the
  polarization identity xy = ((x+y)^2 - x^2 - y^2)/2) into a net for the
  paraboloid solution map |x|^2 + t Tr(g g*).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import LambdaBatch, RngStream, mc_reference
from .problems import ProblemSpec, analytic_solution, diffusion_apply, drift, payoff

Array = np.ndarray


@dataclass
class RegressionCheck:
    """Monte Carlo vs closed form at one predictor point."""

    mc_mean: float
    std_err: float
    analytic: float
    z_score: float


def regression_identity_check(spec: ProblemSpec, gamma: Array, x: Array, t: float,
                              m: int, rng: RngStream,
                              em_steps: int = 25) -> RegressionCheck:
    """z-score of the MC payoff mean against the analytic solution."""
    if not spec.has_closed_form:
        raise ValueError(f"{spec.name} has no closed form to check against")
    if m < 100:
        raise ValueError("use at least 100 samples for the identity check")
    mean, err = mc_reference(spec, gamma, x, t, m, em_steps, rng)
    ref = analytic_solution(spec, gamma, x, float(t))
    diff = abs(mean - ref)
    if diff == 0.0:
        z = 0.0
    elif err == 0.0:
        z = math.inf
    else:
        z = diff / err
    return RegressionCheck(mc_mean=mean, std_err=err, analytic=ref, z_score=z)


@dataclass
class RateFit:
    """Strong-error grid over step counts plus the fitted log-log slope."""

    grid: list[tuple[int, float]]
    slope: Optional[float]
    intercept: Optional[float]
    exact_scheme: bool


def em_rate_check(spec: ProblemSpec, gamma: Array, x: Array, t: float,
                  m_grid, paths: int, rng: RngStream) -> RateFit:
    """Coupled strong error of Euler-Maruyama against the exact terminal state.

    For every M, the scheme and the exact solution consume the same Brownian
    increments; the error is the mean Euclidean distance of the terminal
    states. Problems with constant diffusion and zero drift telescope to the
    exact solution, in which case the fit is flagged exact and no slope is
    reported.
    """
    if not spec.has_exact_sde:
        raise ValueError(f"{spec.name} has no exact sampler to couple against")
    m_grid = [int(m) for m in m_grid]
    if len(m_grid) < 4 or any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise ValueError("need at least 4 strictly increasing step counts")
    if paths < 1000:
        raise ValueError("use at least 1000 coupled paths")
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    gam = np.broadcast_to(gamma, (paths, gamma.size)).copy()
    errors = []
    for m in m_grid:
        dt = t / m
        s = np.broadcast_to(x, (paths, x.size)).copy()
        b_sum = np.zeros_like(s)
        for _ in range(m):
            db = math.sqrt(dt) * rng.standard_normal(s.shape)
            incr = diffusion_apply(spec, gam, s, db)
            if spec.name == "basket_put":
                incr = incr + drift(spec, gam, s) * dt
            s = s + incr
            b_sum = b_sum + db
        exact = _exact_from_brownian(spec, gam, x, t, b_sum)
        err = float(np.sqrt(((s - exact) ** 2).sum(axis=1)).mean())
        errors.append(err)
    grid = list(zip(m_grid, errors))
    if spec.additive_noise:
        return RateFit(grid=grid, slope=None, intercept=None, exact_scheme=True)
    logs = np.log(np.asarray(m_grid, dtype=np.float64))
    loge = np.log(np.asarray(errors))
    slope, intercept = np.polyfit(logs, loge, 1)
    return RateFit(grid=grid, slope=float(slope), intercept=float(intercept),
                   exact_scheme=False)


def _exact_from_brownian(spec: ProblemSpec, gam: Array, x: Array, t: float,
                         b_total: Array) -> Array:
    """Exact terminal state as a function of the terminal Brownian value."""
    if spec.name == "black_scholes":
        sig = gam[:, 0]
        return x[None, :] * np.exp(-0.5 * t * sig * sig + sig * b_total[:, 0])[:, None]
    # heat problems: constant diffusion applied to the terminal increment
    return x[None, :] + diffusion_apply(spec, gam, np.broadcast_to(x, b_total.shape), b_total)


class ExplicitReluNet:
    """A plain layer list (W, b) with ReLU between layers, built by hand."""

    def __init__(self, layers: list[tuple[Array, Array]], input_dim: int,
                 description: str = ""):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in layers]
        self.input_dim = input_dim
        self.description = description
        for (w1, b1), (w2, _) in zip(self.layers, self.layers[1:]):
            if w1.shape[1] != w2.shape[0]:
                raise ValueError("consecutive layer widths incompatible")

    def __call__(self, x) -> Array:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 0:
            h = h.reshape(1, 1)
        elif h.ndim == 1:
            # a vector is a batch of scalars for 1-input nets, else one point
            h = h[:, None] if self.input_dim == 1 else h[None, :]
        if h.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {h.shape[1]}")
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i != last:
                h = np.maximum(h, 0.0)
        return h[:, 0] if h.shape[1] == 1 else h

    def count_params(self) -> int:
        """Structural parameters: nonzero weights plus nonzero biases.

        Parallel blocks are stored as dense block-diagonal matrices, so the
        zeros are padding, not parameters of the construction.
        """
        return int(sum(np.count_nonzero(w) + np.count_nonzero(b)
                       for w, b in self.layers))

    @property
    def depth(self) -> int:
        return len(self.layers)


# Tent map g(u) = 2 relu(u) - 4 relu(u - 1/2) + 2 relu(u - 1) on [0, 1].
_TENT = np.array([2.0, -4.0, 2.0])


def build_sq_relu_net(levels: int) -> ExplicitReluNet:
    """ReLU net computing x - sum_s g_s(x)/4^s, the dyadic approximant of x^2.

    g_s is the s-fold composition of the tent map, so the net is exact at all
    dyadic points k/2^levels and the sup error on [0,1] is 4^-(levels+1),
    contracting by a factor 4 per added level.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    layers = []
    # layer 1: x -> (x, x - 1/2, x - 1)
    layers.append((np.array([[1.0, 1.0, 1.0]]), np.array([0.0, -0.5, -1.0])))
    if levels == 1:
        w = np.array([[1.0 - _TENT[0] / 4.0], [-_TENT[1] / 4.0], [-_TENT[2] / 4.0]])
        layers.append((w, np.zeros(1)))
        return ExplicitReluNet(layers, 1, "sq approximant, 1 level")
    # layer 2: carry f1 = x - g1/4 next to the tent state of g1
    w = np.zeros((3, 4))
    w[:, 0] = _TENT
    w[:, 1] = _TENT
    w[:, 2] = _TENT
    w[:, 3] = -_TENT / 4.0
    w[0, 3] += 1.0  # relu(x) = x carries the input
    layers.append((w, np.array([0.0, -0.5, -1.0, 0.0])))
    for s in range(2, levels):
        w = np.zeros((4, 4))
        w[:3, 0] = _TENT
        w[:3, 1] = _TENT
        w[:3, 2] = _TENT
        w[:3, 3] = -_TENT / (4.0 ** s)
        w[3, 3] = 1.0
        layers.append((w, np.array([0.0, -0.5, -1.0, 0.0])))
    w = np.zeros((4, 1))
    w[:3, 0] = -_TENT / (4.0 ** levels)
    w[3, 0] = 1.0
    layers.append((w, np.zeros(1)))
    return ExplicitReluNet(layers, 1, f"sq approximant, {levels} levels")


class _LayerPlan:
    """Helper that assembles sparse affine layers from named channels."""

    def __init__(self, in_names: list):
        self.names = list(in_names)
        self.index = {n: i for i, n in enumerate(self.names)}
        self.layers: list[tuple[Array, Array]] = []
        self._pending: list[tuple[object, dict, float]] = []

    def emit(self, name, combo: dict, bias: float = 0.0) -> None:
        """Define an output channel as an affine combo of current channels."""
        self._pending.append((name, combo, bias))

    def close_layer(self) -> None:
        w = np.zeros((len(self.names), len(self._pending)))
        b = np.zeros(len(self._pending))
        new_names = []
        for j, (name, combo, bias) in enumerate(self._pending):
            for src, coef in combo.items():
                w[self.index[src], j] += coef
            b[j] = bias
            new_names.append(name)
        self.layers.append((w, b))
        self.names = new_names
        self.index = {n: i for i, n in enumerate(new_names)}
        self._pending = []


def _tent_channels(plan: _LayerPlan, key, src_combo: dict, bias: float = 0.0) -> None:
    """Emit the three shifted copies feeding one tent-map application."""
    plan.emit((key, "a"), src_combo, bias)
    plan.emit((key, "b"), src_combo, bias - 0.5)
    plan.emit((key, "c"), src_combo, bias - 1.0)


def _tent_combo(key) -> dict:
    return {(key, "a"): _TENT[0], (key, "b"): _TENT[1], (key, "c"): _TENT[2]}


def _chain_step(plan: _LayerPlan, key, s: int) -> None:
    """Advance one sq chain by a level: new tent state plus the f carry."""
    combo = _tent_combo(key)
    carry = {(key, "f"): 1.0} if s >= 2 else {(key, "a"): 1.0}
    _tent_channels(plan, key, combo)
    f_combo = dict(carry)
    for src, coef in combo.items():
        f_combo[src] = f_combo.get(src, 0.0) - coef / (4.0 ** s)
    plan.emit((key, "f"), f_combo)


def _chain_value(key, levels: int, has_carry: bool) -> dict:
    """Linear combo reading the chain's value off its final hidden channels."""
    combo = {src: -coef / (4.0 ** levels) for src, coef in _tent_combo(key).items()}
    if has_carry:
        combo[(key, "f")] = combo.get((key, "f"), 0.0) + 1.0
    else:
        combo[(key, "a")] = combo.get((key, "a"), 0.0) + 1.0
    return combo


def build_paraboloid_relu_net(d: int, levels: int,
                              x_bounds: tuple[float, float] = (0.5, 1.5),
                              ) -> ExplicitReluNet:
    """ReLU net approximating |x|^2 + t Tr(g g*) on the paraboloid domain.

    Inputs are ordered (g row-major, x, t) with g entries in [0, 1], x in the
    given box, t in [0, 1]. Squares come from sq chains; the products
    t * sq(g_ij) come from the polarization identity, implemented as
    2 sq((t + s)/2) - sq(t)/2 - sq(s)/2 with a second bank of chains.
    """
    if d < 1 or levels < 1:
        raise ValueError("d and levels must be >= 1")
    a, b = x_bounds
    width = b - a
    n_in = d * d + d + 1
    g_keys = [("g", i) for i in range(d * d)]
    x_keys = [("x", i) for i in range(d)]

    plan = _LayerPlan([("in", i) for i in range(n_in)])
    # hidden layer 1: start all stage-A chains, plus the carries we need later
    for i, key in enumerate(g_keys):
        _tent_channels(plan, key, {("in", i): 1.0})
    _tent_channels(plan, ("t",), {("in", n_in - 1): 1.0})
    for i, key in enumerate(x_keys):
        # u_i = (x_i - a) / width maps the box onto [0, 1]
        _tent_channels(plan, key, {("in", d * d + i): 1.0 / width}, bias=-a / width)
        plan.emit((key, "carry"), {("in", d * d + i): 1.0 / width}, -a / width)
    plan.emit(("t", "carry"), {("in", n_in - 1): 1.0})
    plan.close_layer()

    for s in range(2, levels + 1):
        for key in g_keys + [("t",)] + x_keys:
            _chain_step(plan, key, s - 1)
        for key in x_keys:
            plan.emit((key, "carry"), {(key, "carry"): 1.0})
        plan.emit(("t", "carry"), {("t", "carry"): 1.0})
        plan.close_layer()

    has_carry = levels >= 2
    # bridge layer: start stage-B chains on v = (t + sq(g))/2 and on sq(g),
    # and collapse each finished x chain into a nonnegative carried value
    for key in g_keys:
        s_combo = _chain_value(key, levels, has_carry)
        v_combo = {("t", "carry"): 0.5}
        for src, coef in s_combo.items():
            v_combo[src] = v_combo.get(src, 0.0) + 0.5 * coef
        _tent_channels(plan, ("v",) + key, v_combo)
        _tent_channels(plan, ("s",) + key, s_combo)
    t_value = _chain_value(("t",), levels, has_carry)
    plan.emit(("sqt", "carry"), t_value)
    for key in x_keys:
        # x_i^2 = a^2 + 2 a width u_i + width^2 sq(u_i), all terms nonnegative
        combo = {(key, "carry"): 2.0 * a * width}
        for src, coef in _chain_value(key, levels, has_carry).items():
            combo[src] = combo.get(src, 0.0) + width * width * coef
        plan.emit((key, "xsq"), combo, bias=a * a)
    plan.close_layer()

    for s in range(2, levels + 1):
        for key in g_keys:
            _chain_step(plan, ("v",) + key, s - 1)
            _chain_step(plan, ("s",) + key, s - 1)
        plan.emit(("sqt", "carry"), {("sqt", "carry"): 1.0})
        for key in x_keys:
            plan.emit((key, "xsq"), {(key, "xsq"): 1.0})
        plan.close_layer()

    # output: sum x_i^2 + sum_ij [2 sq(v_ij) - sq(t)/2 - sq(s_ij)/2]
    out = {("sqt", "carry"): -0.5 * d * d}
    for key in x_keys:
        out[(key, "xsq")] = out.get((key, "xsq"), 0.0) + 1.0
    for key in g_keys:
        for src, coef in _chain_value(("v",) + key, levels, has_carry).items():
            out[src] = out.get(src, 0.0) + 2.0 * coef
        for src, coef in _chain_value(("s",) + key, levels, has_carry).items():
            out[src] = out.get(src, 0.0) - 0.5 * coef
    plan.emit("out", out)
    plan.close_layer()
    return ExplicitReluNet(plan.layers, n_in,
                           f"paraboloid approximant, d={d}, {levels} levels")
