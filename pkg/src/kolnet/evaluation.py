"""Relative-L1 evaluation, Greeks, calibration and uncertainty estimates.

Predictors are plain callables mapping a :class:`~kolnet.data.LambdaBatch` to
a vector of values, so the same machinery evaluates trained networks, the
closed-form solution map (as an oracle), or any shifted/perturbed variant a
test wants to construct. The evaluation metric is

    mean over fresh points of |Phi - u| / (1 + |u|),

with the reference u taken from the closed form when one exists and from the
pointwise Monte Carlo estimator otherwise. Evaluation points always come from
a stream that is independent of training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernel
from .data import (
    LambdaBatch,
    RngStream,
    flatten_batch,
    mc_reference,
    sample_lambda,
    standardize_slopes,
)
from .problems import ProblemSpec, gamma_bounds, solution_batch

Array = np.ndarray
Predictor = Callable[[LambdaBatch], Array]


def net_predictor(net, spec: ProblemSpec) -> Predictor:
    """Evaluate a network in eval mode on the batch's flattened inputs."""

    def predict(batch: LambdaBatch) -> Array:
        return net.forward(batch.flat, mode="eval").reshape(-1)

    return predict


def solution_predictor(spec: ProblemSpec) -> Predictor:
    """The closed-form solution map as an oracle predictor."""

    def predict(batch: LambdaBatch) -> Array:
        return solution_batch(spec, batch.gamma, batch.x, batch.t)

    return predict


@dataclass
class EvalReport:
    """Outcome of one relative-L1 evaluation."""

    l1_error: float
    n_samples: int
    batch_errors: list[float]
    reference_mode: str  # "analytic" or "monte-carlo"


def reference_values(spec: ProblemSpec, batch: LambdaBatch, rng: RngStream,
                     mc_samples: int = 1 << 20, mc_steps: int = 25) -> Array:
    """Reference solution per point: closed form, else pointwise Monte Carlo."""
    if spec.has_closed_form:
        return solution_batch(spec, batch.gamma, batch.x, batch.t)
    return np.array([
        mc_reference(spec, batch.gamma[i], batch.x[i], batch.t[i],
                     mc_samples, mc_steps, rng)[0]
        for i in range(len(batch))
    ])


def l1_relative_error(predict: Predictor, spec: ProblemSpec, n_batches: int,
                      batch_size: int, rng: RngStream,
                      mc_samples: int = 1 << 20, mc_steps: int = 25) -> EvalReport:
    """Mean of |Phi - u| / (1 + |u|) over fresh i.i.d. evaluation points."""
    if batch_size < 2:
        raise ValueError("evaluation batch_size must be >= 2")
    errors = []
    batch_means = []
    for _ in range(n_batches):
        batch = sample_lambda(spec, rng, batch_size)
        values = np.asarray(predict(batch), dtype=np.float64).reshape(-1)
        ref = reference_values(spec, batch, rng, mc_samples, mc_steps)
        err = np.abs(values - ref) / (1.0 + np.abs(ref))
        errors.append(err)
        batch_means.append(float(err.mean()))
    all_err = np.concatenate(errors)
    return EvalReport(
        l1_error=float(all_err.mean()),
        n_samples=int(all_err.size),
        batch_errors=batch_means,
        reference_mode="analytic" if spec.has_closed_form else "monte-carlo",
    )


@dataclass
class GreeksReport:
    """Network sensitivities at one point, in raw (un-standardized) coordinates.

    ``delta`` is du/dx (a scalar for one-dimensional problems, else a vector),
    ``vega`` the derivative w.r.t. the free diffusion parameters in their
    natural shape, ``theta`` is -du/dt. ``gamma_grads`` holds the derivative
    for every free parameter block; ``dropped`` lists coefficient parts whose
    domain is a single point, reported as zero by convention.
    """

    delta: Array | float
    vega: Array | float
    theta: float
    gamma_grads: dict[str, Array]
    dropped: tuple[str, ...]


def network_greeks(net, spec: ProblemSpec, gamma: Array, x: Array, t: float) -> GreeksReport:
    """Reverse-mode derivatives of the network w.r.t. the raw inputs.

    The network consumes standardized inputs, so the tape gradient is chained
    through the affine standardization slope of each coordinate.
    """
    flat = flatten_batch(spec, np.asarray(gamma)[None, :],
                         np.atleast_1d(x)[None, :], np.asarray([float(t)]))
    out, _, x_leaf = net.forward_tape(flat, mode="eval", record_input=True)
    grads = kernel.backprop(out)
    raw_grad = grads[x_leaf.node][0] * standardize_slopes(spec)
    return _split_greeks(spec, raw_grad)


def _split_greeks(spec: ProblemSpec, raw_grad: Array) -> GreeksReport:
    n_gamma = spec.gamma_dim
    gamma_grads = {}
    for block in spec.blocks:
        sl = spec.block_slice(block.name)
        part = raw_grad[sl.start:sl.stop].reshape(block.shape) if block.shape \
            else float(raw_grad[sl.start])
        gamma_grads[block.name] = part
    delta = raw_grad[n_gamma:n_gamma + spec.d]
    sigma_blocks = [b.name for b in spec.blocks if b.name.startswith("sigma")]
    vega = gamma_grads[sigma_blocks[0]] if sigma_blocks else 0.0
    return GreeksReport(
        delta=float(delta[0]) if spec.d == 1 else delta,
        vega=vega,
        theta=float(-raw_grad[-1]),
        gamma_grads=gamma_grads,
        dropped=spec.zero_parts,
    )


class OracleCalibrationModel:
    """Closed-form solution map with finite-difference parameter gradients."""

    def __init__(self, spec: ProblemSpec, fd_step: float = 1e-6):
        self.spec = spec
        self.fd_step = fd_step

    def _values(self, gamma: Array, xs: Array, ts: Array) -> Array:
        tiled = np.broadcast_to(gamma, (xs.shape[0], gamma.shape[0]))
        return solution_batch(self.spec, tiled, xs, ts)

    def loss_and_gamma_grad(self, gamma, xs, ts, observed):
        resid = self._values(gamma, xs, ts) - observed
        loss = float(resid @ resid) / xs.shape[0]
        grad = np.zeros_like(gamma)
        for j in range(gamma.size):
            bump = gamma.copy()
            bump[j] += self.fd_step
            up = self._values(bump, xs, ts)
            bump[j] = gamma[j] - self.fd_step
            down = self._values(bump, xs, ts)
            dv = (up - down) / (2.0 * self.fd_step)
            grad[j] = 2.0 * float(resid @ dv) / xs.shape[0]
        return loss, grad


class NetworkCalibrationModel:
    """Trained network with tape gradients w.r.t. the parameter coordinates."""

    def __init__(self, net, spec: ProblemSpec):
        self.net = net
        self.spec = spec
        self._slopes = standardize_slopes(spec)

    def loss_and_gamma_grad(self, gamma, xs, ts, observed):
        m = xs.shape[0]
        tiled = np.broadcast_to(gamma, (m, gamma.shape[0]))
        flat = flatten_batch(self.spec, tiled, xs, ts)
        out, _, x_leaf = self.net.forward_tape(flat, mode="eval", record_input=True)
        loss = kernel.mean(kernel.square(kernel.sub(out, kernel.constant(observed[:, None]))))
        grads = kernel.backprop(loss)
        flat_grad = grads[x_leaf.node]  # (m, dim_in) adjoints of the loss
        n_gamma = self.spec.gamma_dim
        grad = (flat_grad[:, :n_gamma] * self._slopes[:n_gamma]).sum(axis=0)
        return loss.item(), grad


def calibrate(model, dataset: Sequence, spec: ProblemSpec, steps: int = 2000,
              lr: float = 0.05, gamma0: Optional[Array] = None) -> Array:
    """Fit the PDE parameters to observations by projected gradient descent.

    ``dataset`` is a sequence of ((x, t), u_observed) pairs; ``model`` must
    expose ``loss_and_gamma_grad(gamma, xs, ts, observed)``. The iterate is
    clipped back onto the parameter box after every step and the best iterate
    seen (by residual loss) is returned.
    """
    if len(dataset) == 0:
        raise ValueError("calibration needs a non-empty dataset")
    xs = np.array([np.atleast_1d(p[0][0]) for p in dataset], dtype=np.float64)
    ts = np.array([p[0][1] for p in dataset], dtype=np.float64)
    observed = np.array([p[1] for p in dataset], dtype=np.float64)
    lo, hi = gamma_bounds(spec)
    gamma = 0.5 * (lo + hi) if gamma0 is None else np.asarray(gamma0, dtype=np.float64).copy()
    gamma = np.clip(gamma, lo, hi)
    best = gamma.copy()
    best_loss = np.inf
    for _ in range(steps):
        loss, grad = model.loss_and_gamma_grad(gamma, xs, ts, observed)
        if loss < best_loss:
            best_loss = loss
            best = gamma.copy()
        gamma = np.clip(gamma - lr * grad, lo, hi)
    loss, _ = model.loss_and_gamma_grad(gamma, xs, ts, observed)
    if loss < best_loss:
        best = gamma.copy()
    return best


def uncertainty_variance(predict: Predictor, spec: ProblemSpec, xi: Array,
                         x: Array, t: float) -> float:
    """Unbiased sample variance of predictions across parameter draws xi_i."""
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    m = xi.shape[0]
    if m < 2:
        raise ValueError("uncertainty_variance needs at least two parameter draws")
    xs = np.broadcast_to(np.atleast_1d(x), (m, spec.d)).copy()
    ts = np.full(m, float(t))
    batch = LambdaBatch(gamma=xi, x=xs, t=ts,
                        flat=flatten_batch(spec, xi, xs, ts))
    values = np.asarray(predict(batch), dtype=np.float64).reshape(-1)
    return float(np.var(values, ddof=1))
