"""Fixed-length input encoding: one-hot AAU type followed by ten values per
carrier slot, zero-padded up to ``c_max`` slots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, NormStats, SampleRecord, compute_norm_stats

# Order of the ten values inside one carrier block.
BLOCK_FEATURES = ("tx_mode", "num_trx", "freq_mhz", "bw_mhz", "pmax_w",
                  "load", "dcs", "dchs", "dss", "ddd")
BLOCK_WIDTH = len(BLOCK_FEATURES)


class EncodingError(ValueError):
    pass


def input_width(n_types: int, c_max: int) -> int:
    return n_types + BLOCK_WIDTH * c_max


@dataclass(frozen=True)
class EncoderSpec:
    type_registry: tuple[str, ...]
    tx_mode_registry: tuple[str, ...]
    c_max: int
    norm: NormStats

    @property
    def n_types(self) -> int:
        return len(self.type_registry)

    @property
    def n_inputs(self) -> int:
        return input_width(self.n_types, self.c_max)

    def tx_code(self, mode: str) -> float:
        # strictly positive so a present block never looks like padding
        try:
            k = self.tx_mode_registry.index(mode)
        except ValueError:
            raise EncodingError(f"unknown tx_mode {mode!r}") from None
        return (k + 1) / len(self.tx_mode_registry)

    def block_slice(self, slot: int) -> slice:
        start = self.n_types + BLOCK_WIDTH * slot
        return slice(start, start + BLOCK_WIDTH)

    def feature_indices(self, feature: str) -> list[int]:
        """Input positions of one block feature across all slots."""
        j = BLOCK_FEATURES.index(feature)
        return [self.n_types + BLOCK_WIDTH * k + j for k in range(self.c_max)]

    def to_dict(self) -> dict:
        return {"type_registry": list(self.type_registry),
                "tx_mode_registry": list(self.tx_mode_registry),
                "c_max": self.c_max, "norm": self.norm.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(tuple(d["type_registry"]), tuple(d["tx_mode_registry"]), int(d["c_max"]),
                   NormStats.from_dict(d["norm"]))


def fit_encoder(train: Dataset, c_max: int, type_registry=None) -> EncoderSpec:
    """Registries are sorted lexicographically; stats come from ``train`` only."""
    if len(train) == 0:
        raise ValueError("cannot fit an encoder on an empty set")
    types = sorted(set(train.type_id.astype(str).tolist()))
    if type_registry is not None:
        missing = set(types) - set(type_registry)
        if missing:
            raise EncodingError(f"types {sorted(missing)} absent from the given registry")
        types = sorted(type_registry)
    modes = sorted(set(train.tx_mode[train.present].astype(str).tolist()))
    return EncoderSpec(tuple(types), tuple(modes), c_max, compute_norm_stats(train))


def _carrier_key(c) -> tuple:
    return (c.freq_mhz, -c.pmax_w, c.bw_mhz, c.tx_mode, c.load, c.dcs, c.dchs, c.dss, c.ddd)


def canonical_carriers(record: SampleRecord) -> list:
    """Carriers ordered by frequency (which fixes the band), then descending
    maximum power, then the remaining attributes as tie-breakers."""
    return sorted(record.carriers, key=_carrier_key)


def encode(record: SampleRecord, spec: EncoderSpec, canonical: bool = True) -> np.ndarray:
    try:
        type_pos = spec.type_registry.index(record.type_id)
    except ValueError:
        raise EncodingError(f"unknown type_id {record.type_id!r}") from None
    if record.n_carriers > spec.c_max:
        raise EncodingError(f"record has {record.n_carriers} carriers, encoder supports {spec.c_max}")
    x = np.zeros(spec.n_inputs)
    x[type_pos] = 1.0
    norm = spec.norm
    carriers = canonical_carriers(record) if canonical else record.carriers
    for k, c in enumerate(carriers):
        block = x[spec.block_slice(k)]
        block[0] = spec.tx_code(c.tx_mode)
        block[1] = norm.scale("num_trx", record.num_trx)
        for j, name in enumerate(BLOCK_FEATURES[2:], start=2):
            block[j] = norm.scale(name, getattr(c, name))
    return x


def encode_batch(ds: Dataset, spec: EncoderSpec) -> np.ndarray:
    """Vectorized :func:`encode` over every row of ``ds``."""
    n = len(ds)
    x = np.zeros((n, spec.n_inputs))
    if n == 0:
        return x
    errors = []
    type_index = {t: i for i, t in enumerate(spec.type_registry)}
    type_pos = np.array([type_index.get(t, -1) for t in ds.type_id.astype(str)])
    for i in np.flatnonzero(type_pos < 0):
        errors.append(f"row {i}: unknown type_id {ds.type_id[i]!r}")
    n_car = ds.n_carriers
    for i in np.flatnonzero(n_car > spec.c_max):
        errors.append(f"row {i}: {n_car[i]} carriers, encoder supports {spec.c_max}")
    mode_index = {m: (k + 1) / len(spec.tx_mode_registry)
                  for k, m in enumerate(spec.tx_mode_registry)}
    tx = np.zeros(ds.tx_mode.shape)
    for (i, k) in zip(*np.nonzero(ds.present)):
        code = mode_index.get(ds.tx_mode[i, k])
        if code is None:
            errors.append(f"row {i}: unknown tx_mode {ds.tx_mode[i, k]!r}")
        else:
            tx[i, k] = code
    if errors:
        raise EncodingError("; ".join(errors[:20]) + (" ..." if len(errors) > 20 else ""))

    present = ds.present
    # canonical slot order; lexsort's last key is primary, absent slots last
    keys = [ds.ddd, ds.dss, ds.dchs, ds.dcs, ds.load, tx, ds.bw_mhz, -ds.pmax_w, ds.freq_mhz,
            ~present]
    order = np.lexsort(np.stack(keys), axis=-1)
    def reorder(a):
        return np.take_along_axis(a, order, axis=1)

    present = reorder(present)
    c = min(spec.c_max, ds.c_max)
    norm = spec.norm
    blocks = np.zeros((n, spec.c_max, BLOCK_WIDTH))
    blocks[:, :c, 0] = reorder(tx)[:, :c]
    blocks[:, :c, 1] = norm.scale("num_trx", ds.num_trx.astype(np.float64))[:, None]
    for j, name in enumerate(BLOCK_FEATURES[2:], start=2):
        blocks[:, :c, j] = norm.scale(name, reorder(getattr(ds, name))[:, :c])
    blocks[:, :c, :] *= present[:, :c, None]
    x[np.arange(n), type_pos] = 1.0
    x[:, spec.n_types:] = blocks.reshape(n, -1)
    return x
