"""Shapley-value attribution over groups of input positions.

The value of a coalition ``S`` is the mean model output over the background
set with the positions of every group in ``S`` replaced by the instance's
values. Positions outside every group keep the instance's values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .features import BLOCK_FEATURES, EncoderSpec
from .nn import ModelParams, forward

EXACT_MAX_GROUPS = 10

GROUP_NAMES = {
    "tx_mode": "carrier_tx_mode",
    "num_trx": "num_trx",
    "freq_mhz": "carrier_frequency",
    "bw_mhz": "carrier_bandwidth",
    "pmax_w": "max_tx_power",
    "load": "dl_prb_load",
    "dcs": "carrier_shutdown",
    "dchs": "channel_shutdown",
    "dss": "symbol_shutdown",
    "ddd": "deep_dormancy",
}


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    indices: tuple[int, ...]


@dataclass
class Attribution:
    names: list[str]
    phi: np.ndarray
    base_value: float
    value: float
    exact: bool

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.phi.tolist()))

    @property
    def efficiency_residual(self) -> float:
        return abs(float(self.phi.sum()) + self.base_value - self.value)


def default_groups(encoder: EncoderSpec) -> list[FeatureGroup]:
    """AAU-type one-hot plus one group per carrier feature, pooled over slots."""
    groups = [FeatureGroup("aau_type", tuple(range(encoder.n_types)))]
    for feat in BLOCK_FEATURES:
        groups.append(FeatureGroup(GROUP_NAMES[feat], tuple(encoder.feature_indices(feat))))
    return groups


def _model_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, ModelParams):
        return lambda X: np.asarray(forward(model, X).mu_w)
    return lambda X: np.asarray(model(X), dtype=np.float64).ravel()


def _check_groups(groups: Sequence[FeatureGroup], width: int) -> None:
    seen: set[int] = set()
    for g in groups:
        if not g.indices:
            raise ValueError(f"group {g.name!r} is empty")
        for i in g.indices:
            if not 0 <= i < width:
                raise ValueError(f"group {g.name!r} index {i} out of range")
            if i in seen:
                raise ValueError(f"index {i} belongs to more than one group")
            seen.add(i)


class _CoalitionValue:
    """Memoized coalition value function v(mask)."""

    def __init__(self, f, instance, background, groups):
        self.f = f
        self.x = np.asarray(instance, dtype=np.float64)
        self.bg = np.array(background, dtype=np.float64, ndmin=2)
        covered = np.zeros(self.x.size, dtype=bool)
        for g in groups:
            covered[list(g.indices)] = True
        self.bg[:, ~covered] = self.x[~covered]
        self.cols = [np.array(g.indices) for g in groups]
        self.cache: dict[int, float] = {}

    def __call__(self, mask: int) -> float:
        if mask not in self.cache:
            self.fill([mask])
        return self.cache[mask]

    def fill(self, masks) -> None:
        masks = [m for m in dict.fromkeys(masks) if m not in self.cache]
        if not masks:
            return
        nb = len(self.bg)
        Z = np.tile(self.bg, (len(masks), 1))
        for j, m in enumerate(masks):
            block = Z[j * nb:(j + 1) * nb]
            for g, cols in enumerate(self.cols):
                if m >> g & 1:
                    block[:, cols] = self.x[cols]
        out = self.f(Z).reshape(len(masks), nb).mean(axis=1)
        self.cache.update(zip(masks, out.tolist()))


def _exact(v: _CoalitionValue, n: int) -> np.ndarray:
    v.fill(range(1 << n))
    weights = [math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n) for k in range(n)]
    phi = np.zeros(n)
    for i in range(n):
        bit = 1 << i
        for mask in range(1 << n):
            if mask & bit:
                continue
            phi[i] += weights[bin(mask).count("1")] * (v(mask | bit) - v(mask))
    return phi


def _monte_carlo(v: _CoalitionValue, n: int, n_permutations: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(n) for _ in range(n_permutations)]
    masks = []
    for p in perms:
        m = 0
        for j in p:
            m |= 1 << int(j)
            masks.append(m)
    v.fill([0] + masks)
    phi = np.zeros(n)
    for p in perms:
        m, prev = 0, v(0)
        for j in p:
            m |= 1 << int(j)
            cur = v(m)
            phi[j] += cur - prev
            prev = cur
    return phi / n_permutations


def shapley(model, instance, background, groups: Sequence[FeatureGroup],
            n_permutations: int = 1000, seed: int = 0,
            exact: bool | None = None) -> Attribution:
    """Group Shapley values of ``model`` at ``instance``.

    ``model`` is a :class:`ModelParams` (explained through its mean output in
    watts) or any callable mapping a matrix of inputs to one output per row.
    Exact enumeration is used when ``exact`` is true, or automatically when
    there are at most ten groups; otherwise permutations are sampled.
    """
    instance = np.asarray(instance, dtype=np.float64)
    background = np.array(background, dtype=np.float64, ndmin=2)
    if len(background) == 0:
        raise ValueError("background set is empty")
    _check_groups(groups, instance.size)
    f = _model_fn(model)
    v = _CoalitionValue(f, instance, background, groups)
    n = len(groups)
    use_exact = n <= EXACT_MAX_GROUPS if exact is None else exact
    phi = _exact(v, n) if use_exact else _monte_carlo(v, n, n_permutations, seed)
    value = float(f(instance[None, :])[0])
    return Attribution([g.name for g in groups], phi, v(0), value, use_exact)


def global_importance(model, X, background, groups: Sequence[FeatureGroup], n_rows: int = 50,
                      n_permutations: int = 200, seed: int = 0) -> dict[str, float]:
    """Mean |phi| per group over a seeded subsample of the rows of ``X``."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(X), size=min(n_rows, len(X)), replace=False)
    acc = np.zeros(len(groups))
    for k, r in enumerate(sorted(rows)):
        att = shapley(model, X[r], background, groups, n_permutations=n_permutations,
                      seed=seed + 1 + k)
        acc += np.abs(att.phi)
    return dict(zip([g.name for g in groups], (acc / len(rows)).tolist()))


def permutation_importance(model, X, y, groups: Sequence[FeatureGroup], metric, seed: int = 0,
                           n_repeats: int = 1) -> dict[str, float]:
    """Increase of ``metric(preds, y)`` after shuffling each group's columns across rows."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    f = _model_fn(model)
    base = metric(f(X), y)
    rng = np.random.default_rng(seed)
    out = {}
    for g in groups:
        cols = list(g.indices)
        deltas = []
        for _ in range(n_repeats):
            Xp = X.copy()
            Xp[:, cols] = X[rng.permutation(len(X))][:, cols]
            deltas.append(metric(f(Xp), y) - base)
        out[g.name] = float(np.mean(deltas))
    return out


def rank(importance: dict[str, float]) -> list[str]:
    return sorted(importance, key=lambda k: (-importance[k], k))


def write_attribution_csv(path, attribution: Attribution | None,
                          importance: dict[str, float] | None = None) -> None:
    """Columns ``group, phi, mean_abs_phi``; either part may be missing."""
    names = attribution.names if attribution is not None else list(importance)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "phi", "mean_abs_phi"])
        for k, name in enumerate(names):
            phi = format(float(attribution.phi[k]), ".17g") if attribution is not None else ""
            imp = format(importance[name], ".17g") if importance is not None else ""
            w.writerow([name, phi, imp])


def write_instance_csv(path, attribution: Attribution, instance,
                       groups: Sequence[FeatureGroup]) -> None:
    """Per-instance export: ``group, phi, feature_value`` (mean encoded value of the group)."""
    x = np.asarray(instance, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "phi", "feature_value"])
        for g, phi in zip(groups, attribution.phi):
            w.writerow([g.name, format(float(phi), ".17g"),
                        format(float(np.mean(x[list(g.indices)])), ".17g")])
