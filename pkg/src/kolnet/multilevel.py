"""The multilevel residual network and its feed-forward ablation baseline.

The network output is a sum of per-level sub-networks; level l is a chain of
2^l blocks of the form ``affine -> norm -> relu -> affine`` sharing one entry
map per level. With the residual constant chi = 1, block i >= 2 of level l
(for the interior levels 1..L-2) adds the cached intermediate output 2i-2 of
level l+1 to its input before normalization, so deeper levels feed residuals
into shallower ones and the shortest input-to-output path stays two affine
maps long regardless of depth.

Entry and interior maps are linear without bias; each level's exit map is
affine with a bias. Normalization sites carry scale/shift parameters (and
running statistics for batch norm); the "none" variant has no normalization
parameters at all. Parameters live in a name-keyed dict in canonical order,
which fixes the initialization draw order and the checkpoint layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernel
from .data import RngStream
from .kernel import RunningStats, Tensor

Array = np.ndarray

NORM_KINDS = ("batch", "layer", "none")

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class MultilevelConfig:
    """Architecture hyperparameters: input width p, levels L, amplifier q."""

    p: int
    L: int
    q: int
    chi: int = 1
    norm: str = "batch"

    def __post_init__(self):
        if self.p < 1 or self.L < 1 or self.q < 1:
            raise ValueError("p, L and q must all be >= 1")
        if self.chi not in (0, 1):
            raise ValueError("chi must be 0 or 1")
        if self.norm not in NORM_KINDS:
            raise ValueError(f"norm must be one of {NORM_KINDS}")

    @property
    def width(self) -> int:
        return self.p * self.q


class MultilevelNet:
    """Parameter container plus forward evaluation.

    ``level_depths`` lists the number of blocks per level: (1, 2, ..., 2^(L-1))
    for the multilevel net, (2^L,) for the feed-forward baseline (the highest
    level of an (L+1)-level net with chi = 0).
    """

    def __init__(self, config: MultilevelConfig, arch: str = "multilevel"):
        if arch not in ("multilevel", "feedforward"):
            raise ValueError(f"unknown arch {arch!r}")
        self.config = config
        self.arch = arch
        if arch == "multilevel":
            self.level_depths = tuple(2 ** l for l in range(config.L))
        else:
            self.level_depths = (2 ** config.L,)
        self.params: dict[str, Array] = {}
        self.running: dict[str, Array] = {}
        self._allocate()

    def _allocate(self) -> None:
        p, w = self.config.p, self.config.width
        for l, depth in enumerate(self.level_depths):
            self.params[f"A{l}_0"] = np.zeros((p, w))
            for i in range(1, depth):
                self.params[f"A{l}_{i}"] = np.zeros((w, w))
            self.params[f"A{l}_{depth}_w"] = np.zeros((w, 1))
            self.params[f"A{l}_{depth}_b"] = np.zeros(1)
            if self.config.norm != "none":
                for i in range(1, depth + 1):
                    self.params[f"norm{l}_{i}_scale"] = np.ones(w)
                    self.params[f"norm{l}_{i}_shift"] = np.zeros(w)
                    if self.config.norm == "batch":
                        self.running[f"norm{l}_{i}_mean"] = np.zeros(w)
                        self.running[f"norm{l}_{i}_var"] = np.ones(w)

    def stats(self, l: int, i: int) -> RunningStats:
        return RunningStats(mean=self.running[f"norm{l}_{i}_mean"],
                            var=self.running[f"norm{l}_{i}_var"])

    def _apply_norm(self, h: Tensor, l: int, i: int, params: dict[str, Tensor],
                    mode: str) -> Tensor:
        norm = self.config.norm
        if norm == "none":
            return h
        sc = params[f"norm{l}_{i}_scale"]
        sh = params[f"norm{l}_{i}_shift"]
        if norm == "batch":
            return kernel.batch_norm(h, sc, sh, self.stats(l, i), mode=mode)
        return kernel.layer_norm(h, sc, sh)

    def _run(self, x: Tensor, params: dict[str, Tensor], mode: str) -> Tensor:
        n_levels = len(self.level_depths)
        chi = self.config.chi if self.arch == "multilevel" else 0
        # level l consumes residuals from level l+1 when 1 <= l <= n-2
        cache: dict[tuple[int, int], Tensor] = {}
        out: Optional[Tensor] = None
        for l in range(n_levels - 1, -1, -1):
            depth = self.level_depths[l]
            consumes = chi == 1 and 1 <= l <= n_levels - 2
            produces = chi == 1 and 2 <= l <= n_levels - 1
            cur = kernel.matmul(x, params[f"A{l}_0"])
            for i in range(1, depth + 1):
                if consumes and i >= 2:
                    cur = kernel.add(cur, cache[(l + 1, 2 * i - 2)])
                act = kernel.relu(self._apply_norm(cur, l, i, params, mode))
                if i < depth:
                    cur = kernel.matmul(act, params[f"A{l}_{i}"])
                    # level l-1 block j reads intermediate 2j-2, j in 2..depth_{l-1}
                    if produces and i % 2 == 0 and i <= 2 * self.level_depths[l - 1] - 2:
                        cache[(l, i)] = cur
                else:
                    cur = kernel.add(kernel.matmul(act, params[f"A{l}_{depth}_w"]),
                                     params[f"A{l}_{depth}_b"])
            out = cur if out is None else kernel.add(out, cur)
        return out

    def forward(self, x: Array, mode: str = "eval") -> Array:
        """Plain evaluation, shape (batch, p) -> (batch, 1); no tape."""
        self._check_input(x)
        params = {k: Tensor(v) for k, v in self.params.items()}
        return self._run(Tensor(x), params, mode).array

    def forward_tape(self, x: Array, mode: str = "eval", record_input: bool = False):
        """Recorded evaluation.

        Returns (output tensor, parameter leaves by name, input leaf or None);
        feed the output into a loss and :func:`kolnet.kernel.backprop`.
        """
        self._check_input(x)
        leaves = {k: kernel.leaf(v) for k, v in self.params.items()}
        x_t = kernel.leaf(x) if record_input else Tensor(x)
        out = self._run(x_t, leaves, mode)
        return out, leaves, (x_t if record_input else None)

    def _check_input(self, x: Array) -> None:
        if x.ndim != 2 or x.shape[1] != self.config.p:
            raise kernel.ShapeError(
                f"expected input of shape (batch, {self.config.p}), got {x.shape}")

    def flat_params(self) -> Array:
        return np.concatenate([v.reshape(-1) for v in self.params.values()])

    def set_flat_params(self, theta: Array) -> None:
        off = 0
        for v in self.params.values():
            v[...] = theta[off:off + v.size].reshape(v.shape)
            off += v.size
        if off != theta.size:
            raise kernel.ShapeError(f"expected {off} parameters, got {theta.size}")


def count_params(net: MultilevelNet) -> int:
    """Trainable scalars; running statistics are not trainable."""
    return sum(v.size for v in net.params.values())


def init_params(net: MultilevelNet, rng: RngStream) -> None:
    """Uniform weight init on [-1/sqrt(d_in), 1/sqrt(d_in)] per map.

    Norm scales are 1, norm shifts 0, exit biases 0, running statistics reset
    to mean 0 / variance 1. Draws happen in canonical parameter order.
    """
    for name, arr in net.params.items():
        if name.startswith("A"):
            if name.endswith("_b"):
                arr[...] = 0.0
            else:
                xi = 1.0 / np.sqrt(arr.shape[0])
                arr[...] = rng.uniform(-xi, xi, arr.shape)
        elif "scale" in name:
            arr[...] = 1.0
        else:
            arr[...] = 0.0
    for name, arr in net.running.items():
        arr[...] = 1.0 if name.endswith("_var") else 0.0


def build_multilevel(config: MultilevelConfig, rng: RngStream) -> MultilevelNet:
    """Allocate and initialize the multilevel network."""
    net = MultilevelNet(config, arch="multilevel")
    init_params(net, rng)
    return net


def build_feedforward(config: MultilevelConfig, rng: RngStream) -> MultilevelNet:
    """The ablation baseline: one chain of 2^L blocks, no residuals.

    This is the highest level of the multilevel net with L+1 levels and
    chi = 0, sharing entry/exit maps and norm sites with the chain.
    """
    net = MultilevelNet(config, arch="feedforward")
    init_params(net, rng)
    return net


def save_checkpoint(net: MultilevelNet, meta: dict, path) -> None:
    """Write a JSON checkpoint: metadata plus parameters in canonical order.

    Floats are serialized via shortest round-trip decimal repr, so reloading
    reproduces eval-mode outputs bit for bit.
    """
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch": net.arch,
        "config": {"p": net.config.p, "L": net.config.L, "q": net.config.q,
                   "chi": net.config.chi, "norm": net.config.norm},
        "problem": meta.get("problem"),
        "step": meta.get("step"),
        "seed": meta.get("seed"),
        "param_count": count_params(net),
        "params": {k: v.tolist() for k, v in net.params.items()},
        "running_stats": {k: v.tolist() for k, v in net.running.items()},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[MultilevelNet, dict]:
    """Rebuild a network from a checkpoint; verifies version, shapes and count."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        cfg = MultilevelConfig(**doc["config"])
        net = MultilevelNet(cfg, arch=doc.get("arch", "multilevel"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc
    saved = doc.get("params", {})
    if set(saved) != set(net.params):
        missing = set(net.params) - set(saved)
        extra = set(saved) - set(net.params)
        raise CheckpointError(f"parameter names mismatch: missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)}")
    for name, arr in net.params.items():
        value = np.asarray(saved[name], dtype=np.float64)
        if value.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: "
                                  f"{value.shape} vs expected {arr.shape}")
        arr[...] = value
    for name, arr in net.running.items():
        if name not in doc.get("running_stats", {}):
            raise CheckpointError(f"missing running statistic {name}")
        value = np.asarray(doc["running_stats"][name], dtype=np.float64)
        if value.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        arr[...] = value
    if doc.get("param_count") != count_params(net):
        raise CheckpointError(
            f"parameter count field {doc.get('param_count')} does not match "
            f"actual {count_params(net)}")
    meta = {"problem": doc.get("problem"), "step": doc.get("step"), "seed": doc.get("seed")}
    return net, meta
